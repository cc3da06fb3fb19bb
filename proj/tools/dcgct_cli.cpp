#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dcgct/checkpoint.hpp"
#include "dcgct/config.hpp"
#include "dcgct/dataset.hpp"
#include "dcgct/metrics.hpp"
#include "dcgct/model.hpp"
#include "dcgct/skeleton.hpp"
#include "dcgct/training.hpp"
#include "dcgct/verify.hpp"
#include "dcgct/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Written before any side effect and rewritten with the end time on exit.
class RunManifest {
 public:
  RunManifest(std::string command, std::optional<fs::path> path) : path_(std::move(path)) {
    doc_ = {{"command", std::move(command)},
            {"version", dcgct::kVersion},
            {"started_at", utc_now()},
            {"config", json::object()},
            {"outputs", json::object()}};
  }

  json& doc() { return doc_; }

  void write() const {
    if (!path_) {
      std::cerr << doc_.dump() << '\n';
      return;
    }
    if (path_->has_parent_path()) fs::create_directories(path_->parent_path());
    std::ofstream out(*path_);
    if (!out) throw UsageError("cannot write manifest " + path_->string());
    out << doc_.dump(2) << '\n';
  }

  void finish(int exit_code) {
    doc_["finished_at"] = utc_now();
    doc_["exit_code"] = exit_code;
    write();
  }

 private:
  std::optional<fs::path> path_;
  json doc_;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("missing required flag " + flag);
}

dcgct::data::Dataset load_data(const fs::path& path, const dcgct::graph::SkeletonTopology& topo) {
  auto ds = dcgct::data::load_dataset(path, topo);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << path.string() << ": " << w << '\n';
  return ds;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, val, out, topology = "h36m17", weights;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs, batch_size;
};

int cmd_train(const TrainArgs& a) {
  require(a.data, "--data");
  require(a.out, "--out");
  const json file = a.config.empty() ? json::object() : read_json_file(a.config);
  if (!file.is_object()) throw UsageError("--config must hold a JSON object");
  for (const auto& [key, _] : file.items()) {
    if (key != "model" && key != "train" && key != "topology") throw UsageError("unknown config section '" + key + "'");
  }
  const std::string topo_name = file.contains("topology") ? file.at("topology").get<std::string>() : a.topology;
  const auto topo = dcgct::graph::build_topology(topo_name);
  const auto train_set = load_data(a.data, topo);
  std::optional<dcgct::data::Dataset> val_set;
  if (!a.val.empty()) val_set = load_data(a.val, topo);
  if (train_set.empty()) throw UsageError("training data " + a.data + " holds no samples");

  dcgct::ModelConfig base = train_set.frames > 1 ? dcgct::ModelConfig::video(train_set.frames)
                                                 : dcgct::ModelConfig::paper();
  base.joints = topo.joint_count();
  json model_json = dcgct::to_json(base);
  if (file.contains("model")) model_json.update(file.at("model"));
  const auto model_cfg = dcgct::model_config_from_json(model_json);
  model_cfg.validate();

  dcgct::train::TrainConfig train_cfg = dcgct::train::TrainConfig::defaults_for(model_cfg);
  if (file.contains("train")) train_cfg = dcgct::train::train_config_from_json(file.at("train"), train_cfg);
  train_cfg.seed = a.seed;
  if (a.epochs) train_cfg.epochs = *a.epochs;
  if (a.batch_size) train_cfg.batch_size = *a.batch_size;
  if (!a.weights.empty()) train_cfg.joint_weights = dcgct::train::load_joint_weights(a.weights);
  train_cfg.validate(model_cfg.joints);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  RunManifest manifest("train", out_dir / "manifest.json");
  manifest.doc()["seed"] = a.seed;
  manifest.doc()["config"] = {{"model", dcgct::to_json(model_cfg)},
                              {"train", dcgct::train::to_json(train_cfg)},
                              {"topology", topo_name},
                              {"data", a.data},
                              {"val", a.val}};
  manifest.doc()["outputs"] = {{"best_checkpoint", (out_dir / "best.ckpt").string()},
                               {"last_checkpoint", (out_dir / "last.ckpt").string()},
                               {"log", (out_dir / "log.jsonl").string()}};
  manifest.write();

  dcgct::model::Model<float> model(model_cfg, topo, a.seed);
  std::ofstream log(out_dir / "log.jsonl");
  if (!log) throw UsageError("cannot write " + (out_dir / "log.jsonl").string());
  dcgct::train::TrainHooks hooks;
  hooks.best_checkpoint = out_dir / "best.ckpt";
  hooks.last_checkpoint = out_dir / "last.ckpt";
  hooks.on_epoch = [&](const dcgct::train::EpochRecord& r) {
    log << dcgct::train::to_json(r).dump() << '\n' << std::flush;
    std::cout << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.train_loss << "  val_mpjpe_mm "
              << r.val_mpjpe_mm << '\n';
  };
  int code = kExitOk;
  try {
    const auto report = dcgct::train::train(model, train_set, val_set ? &*val_set : nullptr, train_cfg, hooks);
    manifest.doc()["result"] = {{"best_val_mpjpe_mm", report.best_val_mpjpe_mm}, {"best_epoch", report.best_epoch}};
    std::cout << "best val_mpjpe_mm " << report.best_val_mpjpe_mm << " at epoch " << report.best_epoch << '\n';
  } catch (const dcgct::train::NumericalAbort& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kExitNumerical;
  } catch (const dcgct::ad::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = kExitNumerical;
  }
  manifest.finish(code);
  return code;
}

// ---- eval / predict ----

struct EvalArgs {
  std::string ckpt, data, protocol = "all", report, pred_file, topology = "h36m17";
  bool identity_debug = false;
};

dcgct::metrics::Protocol parse_protocol(const std::string& p) {
  if (p == "1") return dcgct::metrics::Protocol::mpjpe;
  if (p == "2") return dcgct::metrics::Protocol::p_mpjpe;
  if (p == "all") return dcgct::metrics::Protocol::all;
  throw UsageError("--protocol must be 1, 2 or all");
}

std::vector<double> read_predictions(const fs::path& path, std::size_t samples, std::size_t joints) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open prediction file " + path.string());
  std::vector<double> values;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(text);
      const auto pts = rec.at("pred3d_mm").get<std::vector<std::vector<double>>>();
      if (pts.size() != joints) throw UsageError("line " + std::to_string(line) + ": expected " + std::to_string(joints) + " joints");
      for (const auto& p : pts) {
        if (p.size() != 3) throw UsageError("line " + std::to_string(line) + ": pred3d_mm points must have 3 coordinates");
        values.insert(values.end(), p.begin(), p.end());
      }
    } catch (const json::exception& e) {
      throw UsageError(path.string() + " line " + std::to_string(line) + ": " + e.what());
    }
  }
  if (values.size() != samples * joints * 3) {
    throw UsageError("prediction file holds " + std::to_string(values.size() / (joints * 3)) + " records, dataset has " +
                     std::to_string(samples));
  }
  return values;
}

int cmd_eval(const EvalArgs& a) {
  require(a.data, "--data");
  if (a.ckpt.empty() && a.pred_file.empty() && !a.identity_debug) {
    throw UsageError("missing required flag --ckpt (or --pred-file / --identity-debug)");
  }
  const auto protocol = parse_protocol(a.protocol);
  std::optional<dcgct::train::Checkpoint> ckpt;
  if (!a.ckpt.empty()) ckpt = dcgct::train::read_checkpoint(a.ckpt);
  const auto topo = ckpt ? ckpt->topology : dcgct::graph::build_topology(a.topology);

  std::optional<fs::path> manifest_path;
  if (!a.report.empty()) manifest_path = a.report + ".manifest.json";
  RunManifest manifest("eval", manifest_path);
  manifest.doc()["config"] = {{"ckpt", a.ckpt},         {"data", a.data},           {"protocol", a.protocol},
                              {"pred_file", a.pred_file}, {"identity_debug", a.identity_debug}};
  if (ckpt) manifest.doc()["config"]["model"] = dcgct::to_json(ckpt->config);
  if (!a.report.empty()) {
    manifest.doc()["outputs"] = {{"report", a.report}, {"table", a.report + ".txt"}};
  }
  manifest.write();

  const auto ds = load_data(a.data, topo);
  if (ckpt && ckpt->config.joints != ds.joints) {
    throw UsageError("checkpoint expects " + std::to_string(ckpt->config.joints) + " joints, data has " +
                     std::to_string(ds.joints));
  }
  std::vector<double> gt;
  std::vector<std::string> actions;
  for (const auto& s : ds.samples) {
    gt.insert(gt.end(), s.target3d_mm.begin(), s.target3d_mm.end());
    actions.push_back(s.action);
  }
  std::vector<double> pred;
  if (a.identity_debug) {
    pred = gt;
  } else if (!a.pred_file.empty()) {
    pred = read_predictions(a.pred_file, ds.size(), ds.joints);
  } else {
    const auto model = dcgct::train::load_model(*ckpt);
    const auto p = dcgct::train::predict(model, ds);
    pred.assign(p.begin(), p.end());
  }
  const auto report = dcgct::metrics::evaluate(dcgct::metrics::PoseSet(ds.size(), ds.joints, pred),
                                               dcgct::metrics::PoseSet(ds.size(), ds.joints, gt), actions, protocol);
  const std::string table = dcgct::metrics::format_action_table(report);
  std::cout << table;
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    if (!out) throw UsageError("cannot write report " + a.report);
    out << dcgct::metrics::to_json(report).dump(2) << '\n';
    std::ofstream txt(a.report + ".txt");
    txt << table;
  }
  manifest.doc()["result"] = dcgct::metrics::to_json(report);
  manifest.doc()["result"].erase("per_action");
  manifest.finish(kExitOk);
  return kExitOk;
}

struct PredictArgs {
  std::string ckpt, data, out;
};

int cmd_predict(const PredictArgs& a) {
  require(a.ckpt, "--ckpt");
  require(a.data, "--data");
  require(a.out, "--out");
  const auto ckpt = dcgct::train::read_checkpoint(a.ckpt);
  RunManifest manifest("predict", fs::path(a.out + ".manifest.json"));
  manifest.doc()["config"] = {{"ckpt", a.ckpt}, {"data", a.data}, {"model", dcgct::to_json(ckpt.config)}};
  manifest.doc()["outputs"] = {{"predictions", a.out}};
  manifest.write();

  const auto ds = load_data(a.data, ckpt.topology);
  if (ds.frames != ckpt.config.frames) {
    throw UsageError("arity mismatch: checkpoint expects " + std::to_string(ckpt.config.frames) +
                     " frame(s), data has " + std::to_string(ds.frames));
  }
  const auto model = dcgct::train::load_model(ckpt);
  const auto pred = dcgct::train::predict(model, ds);
  std::ofstream out(a.out);
  if (!out) throw UsageError("cannot write " + a.out);
  const std::size_t per = ds.joints * 3;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    json rec = dcgct::data::sample_to_json(ds.samples[i], ds.joints, ds.frames);
    rec.erase("target3d_mm");
    json pts = json::array();
    for (std::size_t j = 0; j < ds.joints; ++j) {
      pts.push_back({pred[i * per + j * 3], pred[i * per + j * 3 + 1], pred[i * per + j * 3 + 2]});
    }
    rec["pred3d_mm"] = pts;
    out << rec.dump() << '\n';
  }
  manifest.finish(kExitOk);
  return kExitOk;
}

// ---- verify ----

struct VerifyArgs {
  std::string suite = "all", manifest;
  std::uint64_t seed = 0;
  bool corrupt_adjoint = false;
};

int cmd_verify(const VerifyArgs& a) {
  if (a.suite != "grads" && a.suite != "invariants" && a.suite != "all") {
    throw UsageError("--suite must be grads, invariants or all");
  }
  RunManifest manifest("verify", a.manifest.empty() ? std::nullopt : std::optional<fs::path>(a.manifest));
  manifest.doc()["seed"] = a.seed;
  manifest.doc()["config"] = {{"suite", a.suite}, {"corrupt_adjoint", a.corrupt_adjoint}};
  manifest.write();

  dcgct::ad::set_corrupt_adjoint(a.corrupt_adjoint);
  std::vector<dcgct::verify::CheckResult> results;
  if (a.suite != "invariants") {
    auto g = dcgct::verify::gradient_suite(a.seed);
    results.insert(results.end(), g.begin(), g.end());
  }
  if (a.suite != "grads") {
    auto inv = dcgct::verify::invariant_suite(a.seed);
    results.insert(results.end(), inv.begin(), inv.end());
  }
  dcgct::ad::set_corrupt_adjoint(false);
  std::cout << dcgct::verify::format_results(results);
  double worst_primitive = 0.0;
  for (const auto& r : results) {
    if (r.suite == "grads" && r.threshold == dcgct::verify::kPrimitiveTolerance) {
      worst_primitive = std::max(worst_primitive, r.value);
    }
  }
  const bool ok = dcgct::verify::all_passed(results);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  if (a.suite != "invariants") std::cout << "worst primitive gradient rel-err: " << worst_primitive << '\n';
  std::cout << (ok ? "all " + std::to_string(results.size()) + " checks passed"
                   : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed")
            << '\n';
  manifest.doc()["result"] = {{"checks", results.size()}, {"failed", failed}};
  const int code = ok ? kExitOk : kExitNumerical;
  manifest.finish(code);
  return code;
}

// ---- report ----

struct Preset {
  std::string name;
  dcgct::ModelConfig config;
  double params_m;  // 0 when the table gives no figure
  double flops_m;
};

std::vector<Preset> paper_presets() {
  using dcgct::ModelConfig;
  using dcgct::Variant;
  auto layers = [](std::size_t m) {
    ModelConfig c = ModelConfig::paper();
    c.layers = m;
    return c;
  };
  auto variant = [](Variant v) {
    ModelConfig c = ModelConfig::paper();
    c.variant = v;
    return c;
  };
  return {
      {"M=3 C=160 1:4 (single frame)", ModelConfig::paper(), 2.07, 0.0},
      {"M=1", layers(1), 0.66, 0.0},
      {"M=2", layers(2), 1.38, 0.0},
      {"M=4", layers(4), 2.76, 0.0},
      {"GCM-only chain", variant(Variant::gcm_only), 0.93, 0.0},
      {"LCM-only chain", variant(Variant::lcm_only), 2.25, 0.0},
      {"T=9", ModelConfig::video(9), 2.28, 77.0},
      {"T=27", ModelConfig::video(27), 2.32, 78.0},
      {"T=81 M=4", ModelConfig::video(81), 3.11, 82.0},
      {"T=243 M=4", ModelConfig::video(243), 3.44, 93.0},
  };
}

struct ReportArgs {
  std::string what = "params", config, manifest;
};

int cmd_report(const ReportArgs& a) {
  if (a.what != "params" && a.what != "flops") throw UsageError("--what must be params or flops");
  const bool params = a.what == "params";
  std::vector<Preset> rows;
  for (auto& p : paper_presets()) {
    if ((params ? p.params_m : p.flops_m) > 0.0) rows.push_back(p);
  }
  if (!a.config.empty()) {
    const json file = read_json_file(a.config);
    json model_json = dcgct::to_json(dcgct::ModelConfig::paper());
    model_json.update(file.contains("model") ? file.at("model") : file);
    auto cfg = dcgct::model_config_from_json(model_json);
    cfg.validate();
    rows.push_back({a.config, cfg, 0.0, 0.0});
  }
  RunManifest manifest("report", a.manifest.empty() ? std::nullopt : std::optional<fs::path>(a.manifest));
  manifest.doc()["config"] = {{"what", a.what}, {"config", a.config}};
  manifest.write();

  const double tolerance = params ? 0.10 : 0.20;
  std::ostringstream os;
  os << std::left << std::setw(32) << "config" << std::right << std::setw(16) << (params ? "target (M)" : "target (MFLOPs)")
     << std::setw(16) << "measured" << std::setw(10) << "delta" << "  status\n";
  json table = json::array();
  std::size_t failures = 0;
  for (const auto& r : rows) {
    const double measured = params ? static_cast<double>(dcgct::model::count_params(r.config)) / 1e6
                                   : static_cast<double>(dcgct::model::count_flops(r.config)) / 1e6;
    const double target = params ? r.params_m : r.flops_m;
    os << std::left << std::setw(32) << r.name << std::right << std::fixed << std::setprecision(2) << std::setw(16);
    json row = {{"config", r.name}, {"measured", measured}};
    if (target > 0.0) {
      const double delta = (measured - target) / target;
      const bool ok = std::abs(delta) <= tolerance;
      failures += ok ? 0 : 1;
      os << target << std::setw(16) << measured << std::setw(9) << std::showpos << delta * 100.0 << std::noshowpos
         << "%  " << (ok ? "PASS" : "FAIL") << '\n';
      row["target"] = target;
      row["relative_delta"] = delta;
      row["passed"] = ok;
    } else {
      os << "-" << std::setw(16) << measured << std::setw(10) << "-" << "  -\n";
    }
    table.push_back(row);
  }
  std::cout << os.str() << "tolerance +-" << static_cast<int>(tolerance * 100) << "%, " << failures
            << " row(s) outside tolerance\n";
  manifest.doc()["result"] = table;
  manifest.finish(kExitOk);
  return kExitOk;
}

// ---- generate ----

struct GenerateArgs {
  std::size_t count = 64, frames = 1;
  double noise_mm = 0.0;
  std::uint64_t seed = 0;
  std::string out, topology = "h36m17";
};

int cmd_generate(const GenerateArgs& a) {
  require(a.out, "--out");
  if (a.count == 0) throw UsageError("--count must be positive");
  if (a.frames == 0 || a.frames % 2 == 0) throw UsageError("--frames must be odd and positive");
  if (!(a.noise_mm >= 0.0)) throw UsageError("--noise-mm must be non-negative");
  RunManifest manifest("generate", fs::path(a.out + ".manifest.json"));
  manifest.doc()["seed"] = a.seed;
  manifest.doc()["config"] = {
      {"count", a.count}, {"frames", a.frames}, {"noise_mm", a.noise_mm}, {"topology", a.topology}};
  manifest.doc()["outputs"] = {{"dataset", a.out}};
  manifest.write();
  const auto topo = dcgct::graph::build_topology(a.topology);
  const auto ds = dcgct::data::synth_generate(topo, {a.count, a.frames, a.noise_mm, a.seed});
  dcgct::data::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.size() << " samples to " << a.out << '\n';
  manifest.finish(kExitOk);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DC-GCT 2D-to-3D pose lifting toolkit"};
  app.set_version_flag("--version", dcgct::kVersion);
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints, log and manifest");
  train->add_option("--config", train_args.config, "JSON file with optional model/train/topology sections");
  train->add_option("--data", train_args.data, "Training dataset (line-delimited JSON)");
  train->add_option("--val", train_args.val, "Validation dataset (defaults to the training set)");
  train->add_option("--out", train_args.out, "Output directory");
  train->add_option("--seed", train_args.seed, "Seed for initialization, shuffling and augmentation");
  train->add_option("--topology", train_args.topology, "Skeleton preset or topology JSON path");
  train->add_option("--joint-weights", train_args.weights, "JSON file with per-joint loss weights");
  train->add_option("--epochs", train_args.epochs, "Override the number of epochs");
  train->add_option("--batch-size", train_args.batch_size, "Override the batch size");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or prediction file");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint file");
  eval->add_option("--data", eval_args.data, "Evaluation dataset");
  eval->add_option("--protocol", eval_args.protocol, "1 (MPJPE), 2 (P-MPJPE) or all");
  eval->add_option("--report", eval_args.report, "Write the JSON report here (table goes to <report>.txt)");
  eval->add_option("--pred-file", eval_args.pred_file, "Evaluate predictions written by `predict`");
  eval->add_option("--topology", eval_args.topology, "Skeleton preset when no checkpoint is given");
  eval->add_flag("--identity-debug", eval_args.identity_debug, "Use the targets as predictions");

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Run gradient and invariant self-checks in 64-bit precision");
  verify->add_option("--suite", verify_args.suite, "grads, invariants or all");
  verify->add_option("--seed", verify_args.seed, "Seed for the random test inputs");
  verify->add_option("--manifest", verify_args.manifest, "Manifest path (default: one JSON line on stderr)");
  verify->add_flag("--corrupt-adjoint", verify_args.corrupt_adjoint, "Debug: perturb the matmul adjoint");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Parameter or FLOPs accounting against the published model sizes");
  report->add_option("--what", report_args.what, "params or flops");
  report->add_option("--config", report_args.config, "Extra model config JSON to include");
  report->add_option("--manifest", report_args.manifest, "Manifest path (default: one JSON line on stderr)");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Write predicted 3D poses as line-delimited JSON");
  predict->add_option("--ckpt", predict_args.ckpt, "Checkpoint file");
  predict->add_option("--data", predict_args.data, "Input dataset");
  predict->add_option("--out", predict_args.out, "Output file");

  GenerateArgs gen_args;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic dataset");
  generate->add_option("--count", gen_args.count, "Number of samples");
  generate->add_option("--frames", gen_args.frames, "Frames per sample (odd)");
  generate->add_option("--noise-mm", gen_args.noise_mm, "2D noise, expressed in millimeters at the subject");
  generate->add_option("--seed", gen_args.seed, "Random seed");
  generate->add_option("--out", gen_args.out, "Output file");
  generate->add_option("--topology", gen_args.topology, "Skeleton preset or topology JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (verify->parsed()) return cmd_verify(verify_args);
    if (report->parsed()) return cmd_report(report_args);
    if (predict->parsed()) return cmd_predict(predict_args);
    if (generate->parsed()) return cmd_generate(gen_args);
  } catch (const dcgct::train::NumericalAbort& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const dcgct::ad::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
