// Acceptance run: one PASS/FAIL line per criterion. Exits 0 once every
// criterion has been evaluated; pass --strict to exit 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dualvd/gradcheck_suite.hpp"
#include "dualvd/synth_data.hpp"
#include "dualvd/training.hpp"
#include "metrics_oracle.hpp"

using namespace dualvd;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDataSeed = 1;
constexpr int kEpochs = 60;

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  verdicts.push_back({id, name, pass, detail});
  std::printf("criterion %d %-22s %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// ---------------------------------------------------------------------------

void gradient_fidelity() {
  const double t0 = cpu_seconds();
  auto results = run_gradcheck_suite(1e-5, 42);
  const double secs = cpu_seconds() - t0;
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.report.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  report(1, "gradient-fidelity", failed.empty() && secs < 60.0,
         fmt("%zu cases, max rel error %.2e, %.1f s CPU%s", results.size(), worst, secs,
             failed.empty() ? "" : (" failed:" + failed).c_str()));
}

// ---------------------------------------------------------------------------

struct NormStats {
  double worst_sum = 0.0;
  double worst_shift = 0.0;
  std::size_t gate_violations = 0;
  std::size_t rank_violations = 0;
  std::size_t distributions = 0;
  std::size_t gates = 0;
};

void check_distribution(const std::vector<double>& v, std::size_t width, NormStats& s) {
  if (v.empty()) return;
  for (std::size_t b = 0; b < v.size(); b += width) {
    double sum = 0.0;
    for (std::size_t i = b; i < b + width; ++i) {
      if (v[i] < 0.0) s.worst_sum = std::max(s.worst_sum, 1.0);
      sum += v[i];
    }
    s.worst_sum = std::max(s.worst_sum, std::abs(sum - 1.0));
    ++s.distributions;
  }
}

void check_gates(const std::vector<double>& g, NormStats& s) {
  for (double x : g) {
    ++s.gates;
    if (!(x > 0.0 && x < 1.0)) ++s.gate_violations;
  }
}

void normalisation_suite() {
  NormStats s;
  std::size_t forwards = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(hash_combine(hash_string("normalisation", 0), seed));
    auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
    MicroSetup m;
    ModelConfig& c = m.model;
    c.vocab_size = pick(4, 30);
    c.d_word = pick(1, 6);
    c.second_source = rng() % 2;
    c.d_obj = pick(1, 10);
    c.d_rel = pick(1, 6);
    c.d_hid = pick(1, 10);
    c.d_att = pick(1, 10);
    c.d_fuse = pick(1, 8);
    c.max_len = pick(2, 8);
    c.history_len = pick(1, 24);
    m.objects = pick(1, 6);
    m.captions = pick(1, 4);
    m.candidates = pick(2, 12);
    m.rounds = pick(1, 3);
    const Dialogue d = random_dialogue(m, rng());
    const double spread = 0.1 + 2.9 * unit_uniform(rng());

    for (Variant v : {Variant::DualVD, kAllVariants[seed % kAllVariants.size()]}) {
      ParamStore store = init_model(c, v, rng());
      for (auto& [name, t] : store.entries())
        for (double& x : store.at(name).values()) x += spread * (unit_uniform(rng()) - 0.5);
      Tape tape(false);
      Params p(tape, store);
      DialogueOutput out = forward(p, c, d, v);
      ++forwards;
      for (std::size_t r = 0; r < out.rounds.size(); ++r) {
        const auto& ro = out.rounds[r];
        const GateTrace& t = ro.trace;
        check_distribution(t.alpha, t.alpha.size(), s);
        check_distribution(t.beta, m.objects, s);
        check_distribution(t.gamma, t.gamma.size(), s);
        check_distribution(t.delta, t.delta.size(), s);
        check_distribution(ro.scores.probs, ro.scores.probs.size(), s);
        check_gates(t.question_gate, s);
        check_gates(t.object_gates, s);
        check_gates(t.caption_gate, s);
        check_gates(t.fusion_gate, s);

        // Shift invariance of the decoder softmax.
        Tensor shifted = ro.logits.value();
        const double shift = 100.0 * (unit_uniform(rng()) - 0.5);
        for (double& x : shifted.values()) x += shift;
        Tape t2(false);
        Var sp = softmax_rows(t2.constant(shifted));
        for (std::size_t a = 0; a < ro.scores.probs.size(); ++a)
          s.worst_shift = std::max(s.worst_shift, std::abs(sp.value()[a] - ro.scores.probs[a]));

        // Ranking under a strictly increasing map of the logits.
        std::vector<double> warped = ro.logits.value().values();
        for (double& x : warped) x = x * x * x + 2.0 * x + std::exp(0.1 * x);
        if (rank_candidates(warped) != ro.scores.ranks) ++s.rank_violations;
      }
    }
  }
  const bool pass = s.worst_sum <= 1e-10 && s.worst_shift <= 1e-12 && s.gate_violations == 0 && s.rank_violations == 0;
  report(2, "normalisation", pass,
         fmt("1000 configs, %zu forwards, %zu distributions (worst |sum-1| %.1e), %zu gate entries (%zu outside (0,1)), "
             "shift worst %.1e, rank violations %zu",
             forwards, s.distributions, s.worst_sum, s.gates, s.gate_violations, s.worst_shift, s.rank_violations));
}

// ---------------------------------------------------------------------------

void metric_oracle() {
  auto recs = oracle::random_records(200, 10, 2024);
  auto m = compute_metrics(recs);
  auto b = oracle::brute_force(recs);
  const double worst = std::max({std::abs(m.mrr - b.mrr), std::abs(m.recall.at(1) - b.r1), std::abs(m.recall.at(5) - b.r5),
                                 std::abs(m.recall.at(10) - b.r10), std::abs(m.mean_rank - b.mean),
                                 std::abs(*m.ndcg - b.ndcg)});
  // Uniform random rankings over 1000 questions.
  std::mt19937_64 rng(7);
  std::vector<EvalRecord> uniform;
  for (int q = 0; q < 1000; ++q) {
    EvalRecord r;
    r.ranks.resize(10);
    std::iota(r.ranks.begin(), r.ranks.end(), std::size_t{1});
    std::shuffle(r.ranks.begin(), r.ranks.end(), rng);
    r.relevance.assign(10, 0.0);
    r.relevance[0] = 1.0;
    r.rank_of_gt = r.ranks[0];
    uniform.push_back(std::move(r));
  }
  const double mrr = compute_metrics(uniform).mrr;
  report(3, "metric-oracle", worst <= 1e-12 && mrr >= 0.25 && mrr <= 0.35,
         fmt("200 records, worst deviation %.1e; random-ranking MRR %.4f over 1000 questions", worst, mrr));
}

// ---------------------------------------------------------------------------

struct TrainedVariant {
  TrainResult result;
  double cpu = 0.0;
};

TrainedVariant train_variant(const RunConfig& base, Variant v, const DatasetBundle& data) {
  RunConfig rc = base;
  rc.variant = v;
  const double t0 = cpu_seconds();
  TrainedVariant tv{train_model(rc, data), 0.0};
  tv.cpu = cpu_seconds() - t0;
  const auto& last = tv.result.log.back();
  std::printf("  trained %-7s %d epochs, %.0f s CPU, final loss %.4f, train R@1 %.3f, val R@1 %.3f\n",
              std::string(variant_name(v)).c_str(), static_cast<int>(tv.result.log.size()), tv.cpu, last.train_loss,
              last.train_r1, last.val_r1);
  std::fflush(stdout);
  return tv;
}

void training_criteria(const DatasetBundle& data, const RunConfig& rc) {
  TrainedVariant dual = train_variant(rc, Variant::DualVD, data);
  const auto& log = dual.result.log;

  // 4: overfit check.
  int reached = -1;
  for (const auto& e : log)
    if (e.train_r1 >= 0.95) {
      reached = e.epoch;
      break;
    }
  bool decreasing = log.size() >= 5;
  for (std::size_t e = 1; e < 5 && e < log.size(); ++e) decreasing = decreasing && log[e].train_loss < log[e - 1].train_loss;
  std::string losses;
  for (std::size_t e = 0; e < 5 && e < log.size(); ++e) losses += fmt("%s%.4f", e ? " > " : "", log[e].train_loss);
  report(4, "overfit", reached >= 0 && dual.cpu < 300.0 && decreasing,
         fmt("train R@1 >= 0.95 first at epoch %d of %d, %.0f s CPU, first losses %s", reached, kEpochs, dual.cpu,
             losses.c_str()));

  // 5: ablation ordering on train-set R@1.
  const double dual_r1 = log.back().train_r1;
  std::string detail = fmt("DualVD %.3f", dual_r1);
  double best_single = 0.0;
  for (Variant v : {Variant::GlCap, Variant::LoCap, Variant::ObjRep}) {
    const double r1 = train_variant(rc, v, data).result.log.back().train_r1;
    best_single = std::max(best_single, r1);
    detail += fmt(", %s %.3f", std::string(variant_name(v)).c_str(), r1);
  }
  report(5, "ablation-ordering", dual_r1 >= best_single, detail);

  // 6: gate diagnostic on the training questions of the trained model.
  const Evaluation ev = evaluate(dual.result.params, dual.result.model, data.train, Variant::DualVD);
  const Evaluation ev_val = evaluate(dual.result.params, dual.result.model, data.val, Variant::DualVD);
  auto mean = [](const Evaluation& e, Modality m) {
    auto it = e.gate_by_modality.find(m);
    return it == e.gate_by_modality.end() ? 0.0 : it->second.mean();
  };
  const double sem = mean(ev, Modality::Semantic), vis = mean(ev, Modality::Visual);
  report(6, "gate-diagnostic", sem - vis >= 0.05,
         fmt("train: semantic-only %.4f, visual-only %.4f, gap %+.4f (val gap %+.4f, val R@1 %.3f)", sem, vis, sem - vis,
             mean(ev_val, Modality::Semantic) - mean(ev_val, Modality::Visual), ev_val.metrics.recall.at(1)));
}

// ---------------------------------------------------------------------------

void schedule_conformance() {
  LrSchedule s;  // eta_max 1e-3, eta_min 3.4e-4, 2 warm-up epochs, 16 total
  const int t_cos = s.total_epochs - s.warmup_epochs;
  const double e0 = std::abs(lr_at(0, s) - 2e-4);
  const double e1 = std::abs(lr_at(s.warmup_epochs, s) - s.eta_max);
  const double e2 = std::abs(lr_at(s.warmup_epochs + t_cos / 2, s) - 0.5 * (s.eta_max + s.eta_min));
  const double e3 = std::abs(annealed_lr(t_cos, s) - s.eta_min);
  const double worst = std::max({e0, e1, e2, e3});
  report(7, "schedule", worst <= 1e-12,
         fmt("epoch0 %.3g, warm-up end %.3g, midpoint %.3g, limit %.3g (worst error %.1e)", lr_at(0, s),
             lr_at(s.warmup_epochs, s), lr_at(s.warmup_epochs + t_cos / 2, s), annealed_lr(t_cos, s), worst));
}

// ---------------------------------------------------------------------------

void determinism(const fs::path& root, const RunConfig& base) {
  std::vector<std::string> mismatched;
  std::vector<fs::path> dirs = {root / "det_a", root / "det_b"};
  for (const auto& dir : dirs) {
    RunConfig rc = base;
    rc.epochs = 3;
    rc.out = (dir / "run").string();
    TrainResult tr = run_training(rc);
    Evaluation ev = evaluate(tr.params, tr.model, load_bundle(rc.dataset, tr.model.max_len).val, rc.variant);
    write_evaluation((dir / "eval").string(), ev);
    nlohmann::json cfg = nlohmann::json::parse(read_text((dir / "run" / "config.json").string()));
    cfg.erase("out");
    write_text((dir / "config_without_out.json").string(), cfg.dump(2));
  }
  const std::vector<std::string> files = {"run/checkpoint.dvd",     "run/train_log.csv",
                                          "eval/metrics.json",      "eval/predictions.jsonl",
                                          "eval/gate_traces.jsonl", "config_without_out.json"};
  for (const auto& f : files)
    if (read_text((dirs[0] / f).string()) != read_text((dirs[1] / f).string())) mismatched.push_back(f);
  std::string detail = fmt("%zu artifacts compared byte-for-byte", files.size());
  for (const auto& f : mismatched) detail += ", differs: " + f;
  report(8, "determinism", mismatched.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const fs::path root = fs::temp_directory_path() / ("dualvd_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "data");

  // The acceptance config: desk generator and model presets, 64 training
  // dialogues, DualVD, fixed epoch budget shared by every variant.
  const GeneratorConfig gen = GeneratorConfig::desk();
  SynthDataset sd = generate_dataset(gen, kDataSeed);
  write_dataset((root / "data" / "train.jsonl").string(), sd.train);
  write_dataset((root / "data" / "val.jsonl").string(), sd.val);
  write_text((root / "data" / "vocab.json").string(), sd.vocab.to_json().dump(2) + "\n");
  const DatasetBundle data{sd.vocab, sd.train, sd.val};
  RunConfig rc;
  rc.dataset = (root / "data").string();
  rc.preset = "desk";
  rc.epochs = kEpochs;
  std::printf("acceptance config: %zu train / %zu val dialogues, %zu rounds, %zu candidates, %d epochs, seed %llu\n",
              gen.train_dialogues, gen.val_dialogues, gen.rounds, gen.candidates, kEpochs,
              static_cast<unsigned long long>(rc.seed));

  try {
    gradient_fidelity();
    normalisation_suite();
    metric_oracle();
    training_criteria(data, rc);
    schedule_conformance();
    determinism(root, rc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    fs::remove_all(root);
    return 2;
  }
  fs::remove_all(root);

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int passed = 0;
  for (const auto& v : verdicts) passed += v.pass;
  std::printf("summary: %d of %zu criteria pass\n", passed, verdicts.size());
  for (const auto& v : verdicts) std::printf("  %d %s\n", v.id, v.pass ? "PASS" : "FAIL");
  return strict && passed != static_cast<int>(verdicts.size()) ? 1 : 0;
}
