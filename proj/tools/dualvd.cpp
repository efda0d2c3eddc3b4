#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dualvd/gradcheck_suite.hpp"
#include "dualvd/synth_data.hpp"
#include "dualvd/training.hpp"

namespace fs = std::filesystem;
using namespace dualvd;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInputError = 2;
constexpr int kNumericError = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string preset;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--variant", f.variant, "model variant override");
  cmd->add_option("--preset", f.preset, "dimension preset (desk | paper)")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--out", f.out, "output location");
}

RunConfig load_run(const CommonFlags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) rc.seed = *f.seed;
  if (!f.variant.empty()) rc.variant = parse_variant(f.variant);
  if (!f.preset.empty()) rc.preset = f.preset;
  return rc;
}

int cmd_generate(const CommonFlags& f) {
  GeneratorConfig gc = f.preset == "paper" ? GeneratorConfig::paper_scale() : GeneratorConfig::desk();
  if (!f.config.empty()) {
    try {
      from_json(nlohmann::json::parse(read_text(f.config)), gc);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse generator config " + f.config + ": " + e.what());
    }
  }
  const std::uint64_t seed = f.seed.value_or(0);
  const std::string out = f.out.empty() ? "data" : f.out;
  SynthDataset ds = generate_dataset(gc, seed);
  fs::create_directories(out);
  write_dataset((fs::path(out) / "train.jsonl").string(), ds.train);
  write_dataset((fs::path(out) / "val.jsonl").string(), ds.val);
  write_text((fs::path(out) / "vocab.json").string(), ds.vocab.to_json().dump(2) + "\n");
  nlohmann::json meta = gc;
  meta["seed"] = seed;
  write_text((fs::path(out) / "generator.json").string(), meta.dump(2) + "\n");
  std::cout << "wrote " << ds.train.question_count() << " train and " << ds.val.question_count()
            << " val questions to " << out << "\n";
  return kOk;
}

int cmd_train(const CommonFlags& f, const std::string& dataset, std::optional<int> epochs) {
  RunConfig rc = load_run(f);
  if (!f.out.empty()) rc.out = f.out;
  if (!dataset.empty()) rc.dataset = dataset;
  if (epochs) rc.epochs = *epochs;
  TrainResult tr = run_training(rc);
  if (!tr.log.empty()) {
    const EpochLog& last = tr.log.back();
    std::cout << "epoch " << last.epoch << ": train loss " << format_double(last.train_loss) << ", train R@1 "
              << format_double(last.train_r1) << ", val MRR " << format_double(last.val_mrr) << "\n";
  }
  std::cout << "checkpoint: " << (fs::path(rc.out) / "checkpoint.dvd").string() << "\n";
  return kOk;
}

struct LoadedModel {
  RunConfig run;
  ModelConfig model;
  ParamStore params;
  DatasetBundle data;
};

LoadedModel load_model(const CommonFlags& f, const std::string& checkpoint) {
  LoadedModel m;
  m.run = load_run(f);
  m.data = load_bundle(m.run.dataset, resolve_model(m.run, 2).max_len);
  m.model = resolve_model(m.run, m.data.vocab.size());
  const std::string path = checkpoint.empty() ? (fs::path(m.run.out) / "checkpoint.dvd").string() : checkpoint;
  m.params = load_checkpoint(path);
  for (const auto& spec : model_param_specs(m.model, m.run.variant)) {
    if (!m.params.contains(spec.name))
      throw DimensionError("checkpoint " + path + " lacks parameter " + spec.name);
    if (m.params.at(spec.name).shape() != spec.shape)
      throw DimensionError("checkpoint parameter " + spec.name + " has shape " +
                           shape_str(m.params.at(spec.name).shape()) + ", model expects " + shape_str(spec.shape));
  }
  return m;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& split, bool oracle) {
  LoadedModel m = load_model(f, checkpoint);
  EvalOptions opt;
  opt.oracle_scores = oracle;
  Evaluation ev = evaluate(m.params, m.model, split_of(m.data, split), m.run.variant, opt);
  const std::string out = f.out.empty() ? (fs::path(m.run.out) / ("eval_" + split)).string() : f.out;
  write_evaluation(out, ev);
  std::cout << evaluation_json(ev).dump(2) << "\n";
  return kOk;
}

int cmd_ablate(const CommonFlags& f, const std::string& variants_csv, const std::string& split) {
  RunConfig rc = load_run(f);
  if (!f.out.empty()) rc.out = f.out;
  std::vector<Variant> variants;
  std::stringstream ss(variants_csv);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) variants.push_back(parse_variant(item));
  auto rows = run_ablation(rc, variants, split);
  const std::string csv = ablation_csv(rows);
  fs::create_directories(rc.out);
  write_text((fs::path(rc.out) / "ablation.csv").string(), csv);
  std::cout << csv;
  return kOk;
}

int cmd_gradcheck(const CommonFlags& f, bool corrupt) {
  testing::corrupt_sigmoid_backward = corrupt;
  const double tol = 1e-5;
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(tol, f.seed.value_or(42))) {
    std::printf("%-28s max_rel_error=%.3e entries=%zu %s\n", r.name.c_str(), r.report.max_rel_error,
                r.report.entries_checked, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      ok = false;
      for (const auto& [param, err] : r.report.per_param)
        if (err > tol) std::printf("  offending parameter %s: %.3e\n", param.c_str(), err);
    }
  }
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? kOk : kCheckFailed;
}

int cmd_inspect(const CommonFlags& f, const std::string& checkpoint, const std::string& split) {
  LoadedModel m = load_model(f, checkpoint);
  Evaluation ev = evaluate(m.params, m.model, split_of(m.data, split), m.run.variant);
  std::string csv = std::string(kInspectHeader) + "\n";
  for (const auto& row : ev.inspect) csv += row + "\n";
  if (f.out.empty()) {
    std::cout << csv;
  } else {
    if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
    write_text(f.out, csv);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-encoding visual dialogue toolkit"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, ablate_f, grad_f, inspect_f;
  std::string dataset, checkpoint, split = "val", variants = "DualVD";
  std::optional<int> epochs;
  bool oracle = false, corrupt = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset directory");
  add_common(gen, gen_f);
  auto* train = app.add_subcommand("train", "train one variant");
  add_common(train, train_f);
  train->add_option("--dataset", dataset, "dataset directory override");
  train->add_option("--epochs", epochs, "epoch count override");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_f);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: <run out>/checkpoint.dvd)");
  eval->add_option("--split", split, "train | val");
  eval->add_flag("--oracle-scores", oracle, "force one-hot ground-truth probabilities");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate several variants");
  add_common(ablate, ablate_f);
  ablate->add_option("--variants", variants, "comma-separated variant list");
  ablate->add_option("--split", split, "train | val");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operation");
  add_common(grad, grad_f);
  grad->add_flag("--corrupt-backward", corrupt, "perturb the sigmoid backward rule (negative control)");
  auto* inspect = app.add_subcommand("inspect-gates", "per-question gate summary as CSV");
  add_common(inspect, inspect_f);
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file (default: <run out>/checkpoint.dvd)");
  inspect->add_option("--split", split, "train | val");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*gen) return cmd_generate(gen_f);
    if (*train) return cmd_train(train_f, dataset, epochs);
    if (*eval) return cmd_eval(eval_f, checkpoint, split, oracle);
    if (*ablate) return cmd_ablate(ablate_f, variants, split);
    if (*grad) return cmd_gradcheck(grad_f, corrupt);
    if (*inspect) return cmd_inspect(inspect_f, checkpoint, split);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const EvaluationError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
