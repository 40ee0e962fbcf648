#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sne/ablation.hpp"
#include "sne/evaluation.hpp"
#include "sne/io.hpp"
#include "sne/synthetic.hpp"
#include "sne/training.hpp"

#ifndef SNE_VERSION
#define SNE_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sne;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("SNE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring SNE_THREADS='" << env << "'\n";
  }
  return 1;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path normals_sibling(const fs::path& xyz) { return fs::path(xyz).replace_extension(".normals"); }

// Flags bound to JSON pointers into a command's config. Only flags given on
// the command line override a replayed config.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(flag, *value, help);
    entries_.push_back({opt, json::json_pointer(pointer), [value] { return json(*value); }});
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app_->add_flag(flag, *value, help);
    entries_.push_back({opt, json::json_pointer(pointer), [value] { return json(*value); }});
    return opt;
  }

  json given() const {
    json out = json::object();
    for (const auto& e : entries_)
      if (e.option->count() > 0) out[e.pointer] = e.value();
    return out;
  }

 private:
  struct Entry {
    CLI::Option* option;
    json::json_pointer pointer;
    std::function<json()> value;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

struct Common {
  std::string config_path;
  std::string manifest_path;
  std::size_t threads = default_threads();

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "replay a run manifest (or plain config JSON)");
    app->add_option("--manifest", manifest_path, "where to write the run manifest");
    app->add_option("--threads", threads, "worker threads (default: SNE_THREADS or 1)")->check(CLI::PositiveNumber);
  }
};

void merge(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json replayed_config(const std::string& command, const std::string& path) {
  const json j = read_json(path);
  if (j.contains("command") && j["command"] != command)
    throw UsageError(path + " records a '" + j["command"].get<std::string>() + "' run, not '" + command + "'");
  return j.contains("config") ? j["config"] : j;
}

class Manifest {
 public:
  Manifest(std::string command, json config, json outputs, std::size_t threads, fs::path path)
      : path_(std::move(path)) {
    data_ = {{"command", std::move(command)},
             {"version", SNE_VERSION},
             {"seed", config.value("seed", json(nullptr))},
             {"config", std::move(config)},
             {"outputs", std::move(outputs)},
             {"threads", threads},
             {"started_at", utc_now()},
             {"status", "running"}};
    save();
  }

  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;

  ~Manifest() {
    if (finished_) return;
    try {
      data_["status"] = "failed";
      save();
    } catch (...) {
    }
  }

  void finish() {
    data_["finished_at"] = utc_now();
    data_["status"] = "ok";
    save();
    finished_ = true;
  }

 private:
  void save() const { write_text(path_, data_.dump(2) + "\n"); }
  json data_;
  fs::path path_;
  bool finished_ = false;
};

fs::path manifest_for(const Common& common, const fs::path& primary_output) {
  return common.manifest_path.empty() ? fs::path(primary_output.string() + ".manifest.json")
                                      : fs::path(common.manifest_path);
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    flags->add<std::string>("--shape", "/shape/kind", "plane, sphere, cylinder, saddle, torus");
    flags->add<std::size_t>("--n", "/shape/sample_count", "number of points");
    flags->add<std::uint64_t>("--seed", "/seed", "random seed");
    flags->add<double>("--radius", "/shape/radius", "sphere/cylinder radius, torus major radius");
    flags->add<double>("--minor-radius", "/shape/minor_radius", "torus tube radius");
    flags->add<double>("--height", "/shape/height", "cylinder height");
    flags->add<double>("--extent", "/shape/extent", "plane/saddle half-width");
    flags->add<double>("--curvature", "/shape/curvature", "saddle z = c*x*y");
    flags->add<double>("--noise", "/corruption/noise_sigma_fraction", "noise sigma as a fraction of the bbox diagonal");
    flags->add<std::string>("--density", "/corruption/density_mode", "none, stripes, gradient");
    flags->add<std::size_t>("--patch-size", "/patch_size", "minimum patch size the thinned cloud must support");
    flags->add<std::string>("--out", "/out", "output prefix; writes PREFIX.xyz and PREFIX.normals");
  }

  int run() {
    json cfg = {{"seed", 0}, {"shape", to_json(SyntheticShape{})}, {"corruption", to_json(CorruptionSpec{})},
                {"patch_size", 128}, {"out", ""}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("synth", common.config_path));
    merge(cfg, flags->given());
    std::string out = cfg["out"];
    if (out.empty()) throw UsageError("synth needs --out");
    if (fs::path(out).extension() == ".xyz") out = fs::path(out).replace_extension().string();
    cfg["out"] = out;
    const std::uint64_t seed = cfg["seed"];
    cfg["shape"]["seed"] = seed;
    cfg["corruption"]["seed"] = derive_seed(seed, 0xc0);
    const SyntheticShape shape = synthetic_shape_from_json(cfg["shape"]);
    const CorruptionSpec corruption = corruption_from_json(cfg["corruption"]);
    cfg["shape"] = to_json(shape);
    cfg["corruption"] = to_json(corruption);

    const fs::path xyz = out + ".xyz", normals = out + ".normals";
    Manifest manifest("synth", cfg, {{"points", xyz.string()}, {"normals", normals.string()}}, common.threads,
                      manifest_for(common, xyz));
    const PointCloud cloud = apply_corruption(generate_synthetic_shape(shape), corruption, cfg["patch_size"]);
    if (xyz.has_parent_path()) fs::create_directories(xyz.parent_path());
    save_points(xyz.string(), cloud.points);
    save_normals(normals.string(), *cloud.normals);
    manifest.finish();
    std::cerr << "wrote " << cloud.size() << " points to " << xyz.string() << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// train

json default_train_data() {
  return {{"files", json::array()},
          {"shapes", {"plane", "sphere", "cylinder", "saddle", "torus"}},
          {"shape_points", 20000},
          {"noise_levels", {0.0, 0.00125, 0.006, 0.012}}};
}

void attach_train_flags(Flags& f, const std::string& root) {
  f.add<std::string>("--preset", "/preset", "desk or paper");
  f.add<std::uint64_t>("--seed", "/seed", "random seed");
  f.add<double>("--lr", root + "/lr", "initial learning rate");
  f.add<std::size_t>("--batch", root + "/batch_size", "patches per batch");
  f.add<std::size_t>("--epochs", root + "/epochs", "epochs");
  f.add<std::size_t>("--patches", root + "/patches_per_epoch", "patches per epoch");
  f.add<std::size_t>("--k", root + "/patch_size", "patch size");
  f.add<double>("--lr-decay", root + "/lr_decay", "per-epoch learning-rate factor");
  f.add<std::size_t>("--checkpoint-every", root + "/checkpoint_every", "checkpoint cadence in epochs (0: end only)");
  f.add<std::string>("--variant", root + "/model/variant", "full, no_transformer, no_gc, local_attention, csa");
  f.add<std::size_t>("--blocks", root + "/model/num_blocks", "graph-conv + attention blocks");
  f.add<std::size_t>("--dim", root + "/model/feature_dim", "feature width");
  f.add<std::size_t>("--heads", root + "/model/num_heads", "attention heads");
  f.add<std::size_t>("--ffn", root + "/model/ffn_dim", "feed-forward width");
  f.add<std::size_t>("--graph-k", root + "/model/graph_k", "graph-conv neighbors");
  f.add<std::size_t>("--local-k", root + "/model/local_attention_k", "local attention neighbors");
  f.add<std::string>("--graph-features", root + "/model/graph_features", "comma list of xyz,delta_xyz,f,delta_f");
}

void attach_data_flags(Flags& f, const std::string& root) {
  f.add<std::vector<std::string>>("--data", root + "/files", "training cloud .xyz (with .normals beside it)");
  f.add<std::vector<std::string>>("--shapes", root + "/shapes", "synthetic training shapes")->delimiter(',');
  f.add<std::size_t>("--shape-points", root + "/shape_points", "points per synthetic shape");
  f.add<std::vector<double>>("--noise-levels", root + "/noise_levels", "noise fractions mixed equally")
      ->delimiter(',');
}

/// Resolves preset and seed into a complete training block.
json resolve_train_block(json& cfg, const std::string& key) {
  const TrainConfig base = preset(cfg.value("preset", std::string("desk")));
  json block = to_json(base);
  if (cfg.contains(key)) merge(block, cfg[key]);
  block["seed"] = cfg["seed"];
  cfg[key] = to_json(train_config_from_json(block));
  return cfg[key];
}

std::vector<PointCloud> load_training_data(const json& data, std::uint64_t seed) {
  std::vector<PointCloud> clean;
  for (const auto& f : data["files"]) {
    const std::string path = f;
    PointCloud c = load_point_cloud(path, normals_sibling(path).string());
    c.validate();
    clean.push_back(std::move(c));
  }
  if (clean.empty()) {
    const auto& shapes = data["shapes"];
    if (shapes.empty()) throw UsageError("no training data: give --data files or --shapes");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      SyntheticShape s;
      s.kind = parse_shape_kind(shapes[i]);
      s.sample_count = data["shape_points"];
      s.seed = derive_seed(seed, 0x5a, i);
      clean.push_back(generate_synthetic_shape(s));
    }
  }
  return corrupt_training_clouds(clean, data["noise_levels"].get<std::vector<double>>(), derive_seed(seed, 0x40));
}

TrainState run_training(const TrainConfig& tc, const TrainingSet& data, const fs::path& checkpoint,
                        const std::optional<TrainState>& resume, std::size_t threads) {
  TrainOptions opt;
  opt.threads = threads;
  opt.checkpoint_path = checkpoint;
  opt.resume = resume;
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_epoch = [&](const EpochRecord& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "epoch " << r.epoch + 1 << "/" << tc.epochs << "  loss " << r.mean_loss << "  lr " << r.lr << "  ("
              << s << " s)\n";
  };
  return train(tc, data, opt);
}

struct TrainCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    attach_train_flags(*flags, "/train");
    attach_data_flags(*flags, "/data");
    flags->add<std::string>("--out", "/out", "checkpoint path (config goes to PATH.json)");
    flags->add<std::string>("--loss-csv", "/loss_csv", "loss history CSV (default: OUT.loss.csv)");
    flags->add<std::string>("--resume", "/resume", "continue from a training checkpoint");
  }

  int run() {
    json cfg = {{"preset", "desk"}, {"seed", 0}, {"data", default_train_data()},
                {"out", "model.bin"}, {"loss_csv", ""}, {"resume", ""}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("train", common.config_path));
    merge(cfg, flags->given());
    const TrainConfig tc = train_config_from_json(resolve_train_block(cfg, "train"));
    const fs::path out = cfg["out"].get<std::string>();
    const fs::path loss_csv =
        cfg["loss_csv"] == "" ? fs::path(out.string() + ".loss.csv") : fs::path(cfg["loss_csv"].get<std::string>());

    std::optional<TrainState> resume;
    if (cfg["resume"] != "") resume = load_train_checkpoint(cfg["resume"].get<std::string>());
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    Manifest manifest("train", cfg,
                      {{"checkpoint", out.string()}, {"config", sidecar_path(out).string()},
                       {"loss_csv", loss_csv.string()}},
                      common.threads, manifest_for(common, out));
    const TrainingSet data(load_training_data(cfg["data"], tc.seed));
    const TrainState state = run_training(tc, data, out, resume, common.threads);
    write_loss_csv(loss_csv, state.history);
    manifest.finish();
    return 0;
  }
};

// ---------------------------------------------------------------------------
// estimate

struct LoadedEstimator {
  NormalEstimator estimator;
  std::size_t k = 0;
};

/// k == 0 picks the method default (model: its training patch size).
LoadedEstimator make_estimator(const std::string& method, std::size_t k, int order, const std::string& checkpoint) {
  if (method == "model") {
    if (checkpoint.empty()) throw UsageError("--method model needs --checkpoint");
    const json side = read_sidecar(checkpoint);
    auto loaded = load_model(checkpoint);
    if (k == 0) k = side.contains("train") ? side["train"].value("patch_size", std::size_t{128}) : 128;
    auto weights = std::make_shared<const ad::ParameterSet>(std::move(loaded.weights));
    return {model_estimator(weights, loaded.config, k), k};
  }
  if (!checkpoint.empty()) throw UsageError("--checkpoint is only valid with --method model");
  if (k == 0) k = 16;
  if (method == "pca") return {pca_estimator(k), k};
  if (method == "jet") {
    if (order < 1 || order > 4) throw UsageError("--order must be 1..4");
    return {jet_estimator(k, order), k};
  }
  throw UsageError("unknown method '" + method + "' (expected pca, jet, model)");
}

struct EstimateCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    flags->add<std::string>("--input", "/input", "point cloud (.xyz)");
    flags->add<std::string>("--method", "/method", "pca, jet, model");
    flags->add<std::size_t>("--k", "/k", "patch size (default: 16, or the model's training patch size)");
    flags->add<int>("--order", "/order", "jet order");
    flags->add<std::string>("--checkpoint", "/checkpoint", "model checkpoint (method model only)");
    flags->add<std::string>("--out", "/out", "output .normals path");
  }

  int run() {
    json cfg = {{"input", ""}, {"method", "pca"}, {"k", 0}, {"order", kDefaultJetOrder}, {"checkpoint", ""},
                {"out", ""}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("estimate", common.config_path));
    merge(cfg, flags->given());
    if (cfg["input"] == "") throw UsageError("estimate needs --input");
    if (cfg["out"] == "") throw UsageError("estimate needs --out");
    const LoadedEstimator est =
        make_estimator(cfg["method"], cfg["k"], cfg["order"], cfg["checkpoint"].get<std::string>());
    cfg["k"] = est.k;
    if (cfg["method"] != "jet") cfg.erase("order");
    const fs::path out = cfg["out"].get<std::string>();
    Manifest manifest("estimate", cfg, {{"normals", out.string()}}, common.threads, manifest_for(common, out));
    const PointCloud cloud = load_point_cloud(cfg["input"]);
    cloud.validate();
    const auto normals = estimate_all_normals(cloud, est.estimator, common.threads);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_normals(out.string(), normals);
    manifest.finish();
    return 0;
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    flags->add<std::string>("--predicted", "/predicted", "predicted .normals");
    flags->add<std::string>("--cloud", "/cloud", "point cloud (.xyz)");
    flags->add<std::string>("--gt", "/ground_truth", "ground-truth .normals (default: beside the cloud)");
    flags->add<std::string>("--report", "/report", "report JSON path");
    flags->add<std::string>("--heatmap", "/heatmap", "optional PLY error heatmap");
    flags->add<std::string>("--method", "/method", "label stored in the report");
    flags->add<std::string>("--corruption", "/corruption", "label stored in the report");
  }

  int run() {
    json cfg = {{"predicted", ""}, {"cloud", ""}, {"ground_truth", ""}, {"report", ""}, {"heatmap", ""},
                {"method", "unknown"}, {"corruption", "unknown"}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("evaluate", common.config_path));
    merge(cfg, flags->given());
    for (const char* key : {"predicted", "cloud", "report"})
      if (cfg[key] == "") throw UsageError(std::string("evaluate needs --") + key);
    if (cfg["ground_truth"] == "") cfg["ground_truth"] = normals_sibling(cfg["cloud"].get<std::string>()).string();
    const fs::path report_path = cfg["report"].get<std::string>();
    json outputs = {{"report", report_path.string()}};
    if (cfg["heatmap"] != "") outputs["heatmap"] = cfg["heatmap"];
    Manifest manifest("evaluate", cfg, outputs, common.threads, manifest_for(common, report_path));

    const PointCloud cloud = load_point_cloud(cfg["cloud"], cfg["ground_truth"].get<std::string>());
    const auto predicted = read_normals_file(cfg["predicted"]);
    if (predicted.size() != cloud.size())
      throw DataError(cfg["predicted"].get<std::string>() + " has " + std::to_string(predicted.size()) +
                      " normals but the cloud has " + std::to_string(cloud.size()) + " points");
    std::vector<std::size_t> indices(cloud.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    EvalReport r = report_from_predictions(cloud.name, cfg["method"], indices, predicted, *cloud.normals);
    r.corruption = cfg["corruption"];
    write_text(report_path, to_json(r, false).dump(2) + "\n");
    if (cfg["heatmap"] != "") export_error_heatmap(cloud.points, r.per_point_errors, cfg["heatmap"].get<std::string>());
    manifest.finish();
    std::cout << "rmse_degrees " << r.rmse_degrees << "\n";
    return 0;
  }

  static std::vector<Vec3> read_normals_file(const std::string& path) {
    auto n = load_point_cloud(path).points;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (!(norm(n[i]) > 0.0)) throw DataError(path + ":" + std::to_string(i + 1) + ": zero-length normal");
      n[i] = normalized(n[i]);
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// ablate

struct AblateCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    attach_train_flags(*flags, "/train");
    attach_data_flags(*flags, "/train_data");
    flags->add<std::string>("--checkpoint-dir", "/checkpoint_dir", "holds VARIANT.bin for every column");
    flags->add_flag("--train-all", "/train_all", "train every variant into --checkpoint-dir first");
    flags->add<std::vector<std::string>>("--test-shapes", "/test/shapes", "held-out evaluation shapes")
        ->delimiter(',');
    flags->add<std::size_t>("--test-points", "/test/points", "points per evaluation shape");
    flags->add<std::vector<double>>("--test-noise", "/test/noise_levels", "noise rows")->delimiter(',');
    flags->add<std::vector<std::string>>("--test-density", "/test/density_modes", "density rows")->delimiter(',');
    flags->add<std::size_t>("--stride", "/test/stride", "evaluate every n-th point");
    flags->add<std::string>("--out", "/out", "text table path");
    flags->add<std::string>("--csv", "/csv", "CSV table path (default: OUT.csv)");
  }

  int run() {
    json cfg = {{"preset", "desk"},
                {"seed", 0},
                {"train_data", default_train_data()},
                {"checkpoint_dir", "ablation"},
                {"train_all", false},
                {"test",
                 {{"shapes", {"torus", "cylinder"}},
                  {"points", 10000},
                  {"noise_levels", {0.0, 0.00125, 0.006, 0.012}},
                  {"density_modes", {"stripes", "gradient"}},
                  {"stride", 10}}},
                {"out", "ablation.txt"},
                {"csv", ""}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("ablate", common.config_path));
    merge(cfg, flags->given());
    const TrainConfig base = train_config_from_json(resolve_train_block(cfg, "train"));
    const std::string table_path = cfg["out"];
    const std::string csv_path = cfg["csv"] == "" ? table_path + ".csv" : cfg["csv"].get<std::string>();
    const fs::path dir = cfg["checkpoint_dir"].get<std::string>();
    const bool train_all = cfg["train_all"];
    const std::uint64_t seed = cfg["seed"];

    json outputs = {{"table", table_path}, {"csv", csv_path}};
    if (train_all)
      for (const auto& [label, v] : ablation_variants()) outputs["checkpoints"][label] = (dir / (label + ".bin")).string();
    Manifest manifest("ablate", cfg, outputs, common.threads, manifest_for(common, table_path));

    if (train_all) {
      fs::create_directories(dir);
      const TrainingSet data(load_training_data(cfg["train_data"], seed));
      for (const auto& [label, v] : ablation_variants()) {
        TrainConfig tc = base;
        tc.model.variant = v;
        std::cerr << "training " << label << "\n";
        const TrainState s = run_training(tc, data, dir / (label + ".bin"), std::nullopt, common.threads);
        write_loss_csv(dir / (label + ".loss.csv"), s.history);
      }
    }

    std::vector<NormalEstimator> columns;
    std::size_t max_k = 1;
    for (const auto& [label, v] : ablation_variants()) {
      const fs::path ckpt = dir / (label + ".bin");
      if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string() + " (use --train-all)");
      LoadedEstimator e = make_estimator("model", 0, 0, ckpt.string());
      e.estimator.method = label;
      max_k = std::max(max_k, e.k);
      columns.push_back(std::move(e.estimator));
    }

    const json& test = cfg["test"];
    std::vector<PointCloud> clean;
    for (std::size_t i = 0; i < test["shapes"].size(); ++i) {
      SyntheticShape s;
      s.kind = parse_shape_kind(test["shapes"][i]);
      s.sample_count = test["points"];
      s.seed = derive_seed(seed, 0x7e57, i);
      clean.push_back(generate_synthetic_shape(s));
    }
    std::vector<DensityMode> modes;
    for (const auto& m : test["density_modes"]) modes.push_back(parse_density_mode(m));
    AblationOptions ao;
    ao.stride = test["stride"];
    ao.threads = common.threads;
    ao.seed = derive_seed(seed, 0xab1a);
    ao.min_patch_size = max_k;
    const AblationTable table =
        run_ablation(clean, ablation_rows(test["noise_levels"].get<std::vector<double>>(), modes), columns, ao);
    write_text(table_path, table.to_text());
    write_text(csv_path, table.to_csv());
    std::cout << table.to_text();
    manifest.finish();
    return 0;
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchCmd {
  Common common;
  std::unique_ptr<Flags> flags;

  void attach(CLI::App* app) {
    common.attach(app);
    flags = std::make_unique<Flags>(app);
    flags->add<std::vector<std::string>>("--method", "/methods", "pca, jet, model (comma list)")->delimiter(',');
    flags->add<std::string>("--input", "/input", "point cloud (.xyz); default: a synthetic shape");
    flags->add<std::string>("--shape", "/shape", "synthetic shape when no --input");
    flags->add<std::size_t>("--n", "/points", "synthetic shape size");
    flags->add<std::uint64_t>("--seed", "/seed", "synthetic shape seed");
    flags->add<std::size_t>("--k", "/k", "patch size (0: method default)");
    flags->add<int>("--order", "/order", "jet order");
    flags->add<std::string>("--checkpoint", "/checkpoint", "model checkpoint");
    flags->add<std::size_t>("--repetitions", "/repetitions", "timed runs (>= 3)");
    flags->add<std::size_t>("--stride", "/stride", "time every n-th point");
    flags->add<std::string>("--out", "/out", "CSV path (default: stdout)");
  }

  int run() {
    json cfg = {{"methods", {"pca"}}, {"input", ""}, {"shape", "sphere"}, {"points", 10000}, {"seed", 0},
                {"k", 0}, {"order", kDefaultJetOrder}, {"checkpoint", ""}, {"repetitions", 3}, {"stride", 1},
                {"out", ""}};
    if (!common.config_path.empty()) merge(cfg, replayed_config("bench", common.config_path));
    merge(cfg, flags->given());
    if (cfg["repetitions"].get<std::size_t>() < 3) throw UsageError("--repetitions must be at least 3");
    const std::string out = cfg["out"];
    Manifest* manifest = nullptr;
    std::optional<Manifest> m;
    if (!out.empty() || !common.manifest_path.empty()) {
      m.emplace("bench", cfg, json{{"csv", out}}, common.threads,
                manifest_for(common, out.empty() ? fs::path("bench") : fs::path(out)));
      manifest = &*m;
    }

    PointCloud cloud;
    if (cfg["input"] != "") {
      cloud = load_point_cloud(cfg["input"]);
    } else {
      SyntheticShape s;
      s.kind = parse_shape_kind(cfg["shape"]);
      s.sample_count = cfg["points"];
      s.seed = cfg["seed"];
      cloud = generate_synthetic_shape(s);
    }
    cloud.validate();

    std::ostringstream csv;
    csv << "# one untimed warm-up run per method precedes the timed repetitions\n"
        << "method,k,points,repetitions,median_seconds,spread_seconds,points_per_second,warmup_seconds\n";
    for (const auto& method : cfg["methods"]) {
      const std::string name = method;
      const LoadedEstimator est =
          make_estimator(name, cfg["k"], cfg["order"], name == "model" ? cfg["checkpoint"].get<std::string>() : "");
      const BenchmarkStats s =
          benchmark_estimator(est.estimator, cloud, cfg["repetitions"], cfg["stride"], common.threads);
      csv << name << ',' << est.k << ',' << s.points << ',' << s.run_seconds.size() << ','
          << detail::format_double(s.median_seconds) << ',' << detail::format_double(s.spread_seconds) << ','
          << detail::format_double(s.points_per_second) << ',' << detail::format_double(s.warmup_seconds) << '\n';
    }
    if (out.empty())
      std::cout << csv.str();
    else
      write_text(out, csv.str());
    if (manifest) manifest->finish();
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud surface normal estimation"};
  app.set_version_flag("--version", SNE_VERSION);
  app.require_subcommand(1);

  SynthCmd synth;
  TrainCmd train_cmd;
  EstimateCmd estimate;
  EvaluateCmd evaluate;
  AblateCmd ablate;
  BenchCmd bench;
  synth.attach(app.add_subcommand("synth", "sample a synthetic surface with exact normals"));
  train_cmd.attach(app.add_subcommand("train", "train a normal-estimation model"));
  estimate.attach(app.add_subcommand("estimate", "estimate normals for a point cloud"));
  evaluate.attach(app.add_subcommand("evaluate", "score predicted normals against ground truth"));
  ablate.attach(app.add_subcommand("ablate", "RMSE table of model variants under corruptions"));
  bench.attach(app.add_subcommand("bench", "time normal estimation"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") return synth.run();
    if (cmd == "train") return train_cmd.run();
    if (cmd == "estimate") return estimate.run();
    if (cmd == "evaluate") return evaluate.run();
    if (cmd == "ablate") return ablate.run();
    if (cmd == "bench") return bench.run();
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: bad configuration value: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
