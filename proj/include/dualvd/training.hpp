#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dualvd/dialogue.hpp"
#include "dualvd/fusion_decoder.hpp"
#include "dualvd/metrics.hpp"
#include "dualvd/optim.hpp"
#include "dualvd/params.hpp"
#include "dualvd/reports.hpp"

namespace dualvd {

// Everything a run depends on besides the dataset itself.
struct RunConfig {
  std::string dataset = "data";  // directory holding train.jsonl, val.jsonl, vocab.json
  Variant variant = Variant::DualVD;
  std::string preset = "desk";
  int epochs = 300;
  std::size_t batch_size = 8;
  LrSchedule schedule;  // total_epochs follows `epochs`
  std::uint64_t seed = 0;
  std::string out = "runs/dualvd";
  std::optional<double> dropout;  // overrides the preset when set
  double stop_at_train_r1 = 0.0;  // stop once clean train R@1 reaches this; 0 disables
  nlohmann::json model_overrides = nlohmann::json::object();

  LrSchedule effective_schedule() const {
    LrSchedule s = schedule;
    s.total_epochs = epochs;
    return s;
  }
};

inline ModelConfig preset_model(const std::string& preset) {
  if (preset == "desk") return ModelConfig::desk();
  if (preset == "paper") return ModelConfig::paper_scale();
  throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
}

inline ModelConfig resolve_model(const RunConfig& rc, std::size_t vocab_size) {
  ModelConfig c = preset_model(rc.preset);
  c.vocab_size = vocab_size;
  if (rc.dropout) c.dropout = *rc.dropout;
  const auto& o = rc.model_overrides;
  c.d_word = o.value("d_word", c.d_word);
  c.second_source = o.value("second_source", c.second_source);
  c.d_obj = o.value("d_obj", c.d_obj);
  c.d_rel = o.value("d_rel", c.d_rel);
  c.d_hid = o.value("d_hid", c.d_hid);
  c.d_att = o.value("d_att", c.d_att);
  c.d_fuse = o.value("d_fuse", c.d_fuse);
  c.max_len = o.value("max_len", c.max_len);
  c.history_len = o.value("history_len", c.history_len);
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  return c;
}

inline nlohmann::json run_config_json(const RunConfig& rc) {
  nlohmann::json j = {{"dataset", rc.dataset},
                      {"variant", variant_name(rc.variant)},
                      {"preset", rc.preset},
                      {"epochs", rc.epochs},
                      {"batch_size", rc.batch_size},
                      {"schedule",
                       {{"eta_max", rc.schedule.eta_max},
                        {"eta_min", rc.schedule.eta_min},
                        {"warmup_epochs", rc.schedule.warmup_epochs},
                        {"warmup_factor", rc.schedule.warmup_factor}}},
                      {"seed", rc.seed},
                      {"out", rc.out},
                      {"stop_at_train_r1", rc.stop_at_train_r1},
                      {"model", rc.model_overrides}};
  j["dropout"] = rc.dropout ? nlohmann::json(*rc.dropout) : nlohmann::json(nullptr);
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    RunConfig rc;
    rc.dataset = j.value("dataset", rc.dataset);
    if (j.contains("variant")) rc.variant = parse_variant(j.at("variant").get<std::string>());
    rc.preset = j.value("preset", rc.preset);
    rc.epochs = j.value("epochs", rc.epochs);
    rc.batch_size = j.value("batch_size", rc.batch_size);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      rc.schedule.eta_max = s.value("eta_max", rc.schedule.eta_max);
      rc.schedule.eta_min = s.value("eta_min", rc.schedule.eta_min);
      rc.schedule.warmup_epochs = s.value("warmup_epochs", rc.schedule.warmup_epochs);
      rc.schedule.warmup_factor = s.value("warmup_factor", rc.schedule.warmup_factor);
    }
    rc.seed = j.value("seed", rc.seed);
    rc.out = j.value("out", rc.out);
    if (j.contains("dropout") && !j.at("dropout").is_null()) rc.dropout = j.at("dropout").get<double>();
    rc.stop_at_train_r1 = j.value("stop_at_train_r1", rc.stop_at_train_r1);
    if (j.contains("model")) rc.model_overrides = j.at("model");
    if (rc.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (rc.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (rc.schedule.eta_min <= 0.0 || rc.schedule.eta_max < rc.schedule.eta_min)
      throw ConfigError("schedule needs 0 < eta_min <= eta_max");
    return rc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset directories

struct DatasetBundle {
  Vocabulary vocab;
  Dataset train;
  Dataset val;
};

inline Vocabulary load_vocabulary(const std::string& path) {
  try {
    return Vocabulary::from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cannot parse vocabulary " + path + ": " + e.what());
  }
}

inline DatasetBundle load_bundle(const std::string& dir, std::size_t max_len) {
  namespace fs = std::filesystem;
  DatasetBundle b{load_vocabulary((fs::path(dir) / "vocab.json").string()), {}, {}};
  b.train = read_dataset((fs::path(dir) / "train.jsonl").string(), max_len);
  b.val = read_dataset((fs::path(dir) / "val.jsonl").string(), max_len);
  return b;
}

inline const Dataset& split_of(const DatasetBundle& b, const std::string& split) {
  if (split == "train") return b.train;
  if (split == "val") return b.val;
  throw ConfigError("unknown split '" + split + "' (expected train or val)");
}

// ---------------------------------------------------------------------------
// Worker pool helpers. Results are stored by index, so the outcome does not
// depend on how work is distributed.

inline std::size_t worker_count() {
  if (const char* env = std::getenv("DUALVD_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void accumulate(ParamStore& into, const ParamStore& g, double scale) {
  for (const auto& [name, t] : g.entries()) {
    if (!into.contains(name)) {
      Tensor z(t.shape());
      into.set(name, std::move(z));
    }
    Tensor& dst = into.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += scale * t[i];
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  bool oracle_scores = false;  // replace model probabilities by a one-hot on the ground truth
  bool mask_visual = false;
  bool mask_semantic = false;
};

struct ModalityGate {
  double semantic_sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? semantic_sum / static_cast<double>(count) : 0.0; }
};

struct Evaluation {
  std::vector<EvalRecord> records;
  std::vector<std::string> predictions;  // JSON Lines
  std::vector<std::string> traces;       // JSON Lines
  std::vector<std::string> inspect;      // CSV rows
  std::map<Modality, ModalityGate> gate_by_modality;
  MetricsReport metrics;
};

inline Evaluation evaluate(const ParamStore& store, const ModelConfig& c, const Dataset& ds, Variant v,
                           const EvalOptions& opt = {}) {
  if (ds.dialogues.empty()) throw DomainError("evaluate: empty dataset");
  std::vector<DialogueOutput> outputs(ds.dialogues.size());
  std::vector<std::unique_ptr<Tape>> tapes(ds.dialogues.size());
  parallel_for(ds.dialogues.size(), worker_count(), [&](std::size_t i) {
    tapes[i] = std::make_unique<Tape>(false);
    Params p(*tapes[i], store);
    ForwardOptions fo;
    fo.mask_visual = opt.mask_visual;
    fo.mask_semantic = opt.mask_semantic;
    outputs[i] = forward(p, c, ds.dialogues[i], v, fo);
  });

  Evaluation ev;
  for (std::size_t i = 0; i < ds.dialogues.size(); ++i) {
    const Dialogue& d = ds.dialogues[i];
    for (std::size_t r = 0; r < d.rounds.size(); ++r) {
      AnswerScores s = outputs[i].rounds[r].scores;
      if (opt.oracle_scores) {
        s.probs.assign(s.probs.size(), 0.0);
        s.probs[d.rounds[r].gt_index] = 1.0;
        s.ranks = rank_candidates(s.probs);
      }
      const GateTrace& t = outputs[i].rounds[r].trace;
      ev.records.push_back({s.ranks[d.rounds[r].gt_index], d.rounds[r].relevance, s.ranks});
      ev.predictions.push_back(prediction_json(d, r, s).dump());
      ev.traces.push_back(trace_json(d, r, t).dump());
      ev.inspect.push_back(inspect_row(d, r, t));
      if (t.ratio) {
        auto& g = ev.gate_by_modality[d.rounds[r].modality];
        g.semantic_sum += t.ratio->semantic;
        g.count += 1;
      }
    }
  }
  ev.metrics = compute_metrics(ev.records);
  return ev;
}

inline nlohmann::json evaluation_json(const Evaluation& ev) {
  nlohmann::json j = metrics_json(ev.metrics);
  if (!ev.gate_by_modality.empty()) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& [m, s] : ev.gate_by_modality)
      g[std::string(modality_name(m))] = {{"mean_semantic_fraction", s.mean()}, {"count", s.count}};
    j["gate"] = g;
  }
  return j;
}

inline void write_evaluation(const std::string& dir, const Evaluation& ev) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto join = [](const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
  };
  write_text((fs::path(dir) / "metrics.json").string(), evaluation_json(ev).dump(2) + "\n");
  write_text((fs::path(dir) / "predictions.jsonl").string(), join(ev.predictions));
  write_text((fs::path(dir) / "gate_traces.jsonl").string(), join(ev.traces));
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean per-question loss over the epoch
  double train_r1 = 0.0;    // clean pass after the epoch's updates
  double val_mrr = 0.0;
  double val_r1 = 0.0;
};

inline const char* kTrainLogHeader = "epoch,lr,train_loss,train_r1,val_mrr,val_r1";

inline std::string train_log_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_double(e.lr) + "," + format_double(e.train_loss) + "," +
         format_double(e.train_r1) + "," + format_double(e.val_mrr) + "," + format_double(e.val_r1);
}

struct TrainResult {
  ModelConfig model;
  ParamStore params;
  std::vector<EpochLog> log;
};

struct TrainCallbacks {
  std::function<void(const EpochLog&, const ParamStore&)> on_epoch;
};

// Mean cross-entropy per question, Adam under lr_at, dialogues shuffled per
// epoch from the run seed. Per-dialogue gradients are summed in dialogue order.
inline TrainResult train_model(const RunConfig& rc, const DatasetBundle& data, const TrainCallbacks& cb = {}) {
  TrainResult res;
  res.model = resolve_model(rc, data.vocab.size());
  const ModelConfig& c = res.model;
  res.params = init_model(c, rc.variant, hash_string("init", rc.seed));
  for (const Dialogue* d : {&data.train.dialogues.front(), &data.val.dialogues.front()})
    detail::check_dims(c, *d);

  const LrSchedule sched = rc.effective_schedule();
  OptimizerState opt;
  const std::size_t n = data.train.dialogues.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t workers = worker_count();

  for (int epoch = 0; epoch < rc.epochs; ++epoch) {
    const double lr = lr_at(epoch, sched);
    std::mt19937_64 rng(hash_combine(hash_string("shuffle", rc.seed), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t questions = 0;

    for (std::size_t b = 0; b < n; b += rc.batch_size) {
      const std::size_t e = std::min(n, b + rc.batch_size);
      std::vector<ParamStore> grads(e - b);
      std::vector<double> losses(e - b);
      parallel_for(e - b, workers, [&](std::size_t i) {
        const std::size_t idx = order[b + i];
        Tape tape;
        Params p(tape, res.params);
        ForwardOptions fo;
        fo.training = true;
        fo.dropout_seed = hash_combine(hash_combine(hash_string("dropout", rc.seed), static_cast<std::uint64_t>(epoch)), idx);
        DialogueOutput out = forward(p, c, data.train.dialogues[idx], rc.variant, fo);
        losses[i] = out.total_loss.value()[0];
        if (!std::isfinite(losses[i])) return;
        tape.backward(out.total_loss);
        grads[i] = p.gradients();
      });
      std::size_t batch_questions = 0;
      for (std::size_t i = 0; i < e - b; ++i) {
        const Dialogue& d = data.train.dialogues[order[b + i]];
        if (!std::isfinite(losses[i]))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on dialogue " + d.id);
        batch_questions += d.rounds.size();
        loss_sum += losses[i];
      }
      questions += batch_questions;
      ParamStore total;
      for (const auto& g : grads) accumulate(total, g, 1.0 / static_cast<double>(batch_questions));
      adam_step(res.params, total, opt, lr);
      for (const auto& [name, t] : res.params.entries())
        if (!t.all_finite()) throw NumericError("parameter " + name + " became non-finite at epoch " + std::to_string(epoch));
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(questions);
    row.train_r1 = evaluate(res.params, c, data.train, rc.variant).metrics.recall.at(1);
    const MetricsReport vm = evaluate(res.params, c, data.val, rc.variant).metrics;
    row.val_mrr = vm.mrr;
    row.val_r1 = vm.recall.at(1);
    res.log.push_back(row);
    if (cb.on_epoch) cb.on_epoch(row, res.params);
    if (rc.stop_at_train_r1 > 0.0 && row.train_r1 >= rc.stop_at_train_r1) break;
  }
  return res;
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_word", c.d_word}, {"second_source", c.second_source},
          {"d_obj", c.d_obj},           {"d_rel", c.d_rel},   {"d_hid", c.d_hid},
          {"d_att", c.d_att},           {"d_fuse", c.d_fuse}, {"max_len", c.max_len},
          {"history_len", c.history_len}, {"dropout", c.dropout}};
}

// Writes config.json, checkpoint.dvd (refreshed after every epoch) and train_log.csv.
inline TrainResult run_training(const RunConfig& rc) {
  namespace fs = std::filesystem;
  const ModelConfig probe = resolve_model(rc, 2);
  DatasetBundle data = load_bundle(rc.dataset, probe.max_len);
  fs::create_directories(rc.out);
  const std::string ckpt = (fs::path(rc.out) / "checkpoint.dvd").string();
  const std::string log_path = (fs::path(rc.out) / "train_log.csv").string();

  nlohmann::json cfg = run_config_json(rc);
  cfg["resolved_model"] = model_config_json(resolve_model(rc, data.vocab.size()));
  write_text((fs::path(rc.out) / "config.json").string(), cfg.dump(2) + "\n");

  std::string log = std::string(kTrainLogHeader) + "\n";
  save_checkpoint(ckpt, init_model(resolve_model(rc, data.vocab.size()), rc.variant, hash_string("init", rc.seed)));
  write_text(log_path, log);
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochLog& row, const ParamStore& params) {
    save_checkpoint(ckpt, params);
    log += train_log_row(row) + "\n";
    write_text(log_path, log);
  };
  return train_model(rc, data, cb);
}

// ---------------------------------------------------------------------------
// Ablation: one training run per variant with the shared seed.

struct AblationRow {
  Variant variant;
  MetricsReport metrics;
  Evaluation evaluation;
};

inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                             const std::string& split, bool write_runs = true) {
  if (variants.empty()) throw ConfigError("ablate: no variants requested");
  namespace fs = std::filesystem;
  std::vector<AblationRow> rows;
  DatasetBundle data = load_bundle(base.dataset, resolve_model(base, 2).max_len);
  for (Variant v : variants) {
    RunConfig rc = base;
    rc.variant = v;
    rc.out = (fs::path(base.out) / std::string(variant_name(v))).string();
    TrainResult tr = write_runs ? run_training(rc) : train_model(rc, data);
    Evaluation ev = evaluate(tr.params, tr.model, split_of(data, split), v);
    if (write_runs) write_evaluation((fs::path(rc.out) / ("eval_" + split)).string(), ev);
    rows.push_back({v, ev.metrics, std::move(ev)});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string s = std::string(kAblationHeader) + "\n";
  for (const auto& r : rows) s += ablation_row(variant_name(r.variant), r.metrics) + "\n";
  return s;
}

}  // namespace dualvd
