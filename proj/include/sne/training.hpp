#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sne/ad/checkpoint.hpp"
#include "sne/ad/params.hpp"
#include "sne/knn.hpp"
#include "sne/model.hpp"
#include "sne/patch.hpp"
#include "sne/random.hpp"
#include "sne/synthetic.hpp"

namespace sne {

struct TrainConfig {
  double lr = 2e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t patches_per_epoch = 2048;
  std::size_t patch_size = 128;
  double lr_decay = 0.995;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = only at the end
  ModelConfig model;

  void validate() const {
    model.validate();
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("lr must be finite and non-negative");
    if (batch_size == 0 || epochs == 0 || patches_per_epoch == 0)
      throw InvalidArgument("batch_size, epochs, and patches_per_epoch must be positive");
    if (patch_size < model.graph_k) throw InvalidArgument("patch_size must be at least graph_k");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("lr_decay must lie in (0, 1]");
  }

  std::size_t batches_per_epoch() const { return (patches_per_epoch + batch_size - 1) / batch_size; }
  double learning_rate(std::size_t epoch) const { return lr * std::pow(lr_decay, static_cast<double>(epoch)); }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline TrainConfig desk_preset() { return TrainConfig{}; }

inline TrainConfig paper_preset() {
  TrainConfig c;
  c.epochs = 250;
  c.patches_per_epoch = 100000;
  c.patch_size = 700;
  return c;
}

inline TrainConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper)");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"patches_per_epoch", c.patches_per_epoch},
          {"patch_size", c.patch_size},
          {"lr_decay", c.lr_decay},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patches_per_epoch = j.value("patches_per_epoch", c.patches_per_epoch);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data

/// Clouds with normals plus their search indices; patches are drawn uniformly
/// over the union of all points.
class TrainingSet {
 public:
  explicit TrainingSet(std::vector<PointCloud> clouds) : clouds_(std::move(clouds)) {
    if (clouds_.empty()) throw InvalidArgument("training set is empty");
    for (const PointCloud& c : clouds_) {
      if (!c.has_normals()) throw InvalidArgument("training cloud '" + c.name + "' has no normals");
      c.validate();
      offsets_.push_back(total_);
      total_ += c.size();
      indices_.emplace_back(c);
    }
  }

  std::size_t total_points() const { return total_; }
  const std::vector<PointCloud>& clouds() const { return clouds_; }
  const KnnIndex& index(std::size_t cloud) const { return indices_[cloud]; }
  std::size_t smallest_cloud() const {
    std::size_t n = clouds_.front().size();
    for (const PointCloud& c : clouds_) n = std::min(n, c.size());
    return n;
  }

  /// (cloud, point) of a global point number.
  std::pair<std::size_t, std::size_t> locate(std::size_t global) const {
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global);
    const std::size_t cloud = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {cloud, global - offsets_[cloud]};
  }

 private:
  std::vector<PointCloud> clouds_;
  std::vector<KnnIndex> indices_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// Every clean cloud at every noise level, with noise seeds derived from `seed`.
inline std::vector<PointCloud> corrupt_training_clouds(const std::vector<PointCloud>& clean,
                                                       const std::vector<double>& noise_levels, std::uint64_t seed) {
  if (noise_levels.empty()) throw InvalidArgument("no noise levels given");
  std::vector<PointCloud> out;
  for (std::size_t s = 0; s < clean.size(); ++s) {
    for (std::size_t n = 0; n < noise_levels.size(); ++n) {
      CorruptionSpec spec;
      spec.noise_sigma_fraction = noise_levels[n];
      spec.seed = derive_seed(seed, s, n);
      PointCloud c = add_gaussian_noise(clean[s], spec);
      c.name = clean[s].name + "@" + spec.label();
      out.push_back(std::move(c));
    }
  }
  return out;
}

inline std::vector<PointCloud> build_training_clouds(const std::vector<SyntheticShape>& shapes,
                                                     const std::vector<double>& noise_levels, std::uint64_t seed) {
  std::vector<PointCloud> clean;
  for (const SyntheticShape& s : shapes) clean.push_back(generate_synthetic_shape(s));
  return corrupt_training_clouds(clean, noise_levels, seed);
}

struct TrainingSample {
  NormalizedPatch patch;
  std::vector<Vec3> gt_normals;  // in the patch frame
};

inline TrainingSample make_training_sample(const PointCloud& cloud, const KnnIndex& index, std::size_t point,
                                           std::size_t patch_size) {
  const Patch p = extract_patch(cloud, index, point, patch_size);
  TrainingSample s;
  s.patch = normalize_patch(p);
  s.gt_normals.reserve(p.size());
  for (const Vec3& n : *p.gt_normals) s.gt_normals.push_back(s.patch.transform.rotate(n));
  return s;
}

inline std::vector<TrainingSample> sample_training_batch(const TrainingSet& data, std::size_t batch_size,
                                                         std::size_t patch_size, Rng& rng) {
  if (data.smallest_cloud() < patch_size)
    throw InvalidArgument("training cloud of " + std::to_string(data.smallest_cloud()) +
                          " points is smaller than the patch size " + std::to_string(patch_size));
  std::vector<TrainingSample> batch;
  batch.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto [cloud, point] = data.locate(rng.index(data.total_points()));
    batch.push_back(make_training_sample(data.clouds()[cloud], data.index(cloud), point, patch_size));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// State and checkpoints

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  ad::ParameterSet weights;
  ad::AdamState adam;
  std::size_t next_epoch = 0;
  std::vector<EpochRecord> history;
};

namespace training_detail {
inline const std::string kAdamM = "adam.m/";
inline const std::string kAdamV = "adam.v/";
inline bool is_bookkeeping(const std::string& name) {
  return name.starts_with(kAdamM) || name.starts_with(kAdamV) || name.starts_with("train.");
}
}  // namespace training_detail

/// Weights, optimizer moments, and progress in one named-array container.
inline ad::ParameterSet pack_train_state(const TrainState& s) {
  using namespace training_detail;
  ad::ParameterSet out = s.weights;
  for (std::size_t i = 0; i < s.weights.size(); ++i) {
    out.add(kAdamM + s.weights[i].name, ad::Array(s.weights[i].value.shape, s.adam.first_moment[i]));
    out.add(kAdamV + s.weights[i].name, ad::Array(s.weights[i].value.shape, s.adam.second_moment[i]));
  }
  out.add("train.adam_step", ad::Array({1}, std::vector<double>{static_cast<double>(s.adam.step)}));
  out.add("train.next_epoch", ad::Array({1}, std::vector<double>{static_cast<double>(s.next_epoch)}));
  ad::Array hist({s.history.size(), 3});
  for (std::size_t e = 0; e < s.history.size(); ++e) {
    hist(e, 0) = static_cast<double>(s.history[e].epoch);
    hist(e, 1) = s.history[e].mean_loss;
    hist(e, 2) = s.history[e].lr;
  }
  out.add("train.history", std::move(hist));
  return out;
}

/// Model weights only (drops optimizer and progress entries).
inline ad::ParameterSet model_weights(const ad::ParameterSet& packed) {
  ad::ParameterSet w;
  for (const auto& p : packed)
    if (!training_detail::is_bookkeeping(p.name)) w.add(p.name, p.value);
  return w;
}

inline TrainState unpack_train_state(const ad::ParameterSet& packed) {
  using namespace training_detail;
  TrainState s;
  s.weights = model_weights(packed);
  s.adam = ad::AdamState::zeros_like(s.weights);
  const bool has_adam = packed.contains("train.adam_step");
  if (has_adam) {
    for (std::size_t i = 0; i < s.weights.size(); ++i) {
      s.adam.first_moment[i] = packed.at(kAdamM + s.weights[i].name).value.data;
      s.adam.second_moment[i] = packed.at(kAdamV + s.weights[i].name).value.data;
      if (s.adam.first_moment[i].size() != s.weights[i].value.size() ||
          s.adam.second_moment[i].size() != s.weights[i].value.size())
        throw DataError("optimizer state for '" + s.weights[i].name + "' has the wrong size");
    }
    s.adam.step = static_cast<std::int64_t>(packed.at("train.adam_step").value.data.at(0));
    s.next_epoch = static_cast<std::size_t>(packed.at("train.next_epoch").value.data.at(0));
    const ad::Array& hist = packed.at("train.history").value;
    for (std::size_t e = 0; e < hist.rows() && hist.size() > 0; ++e)
      s.history.push_back({static_cast<std::size_t>(hist(e, 0)), hist(e, 1), hist(e, 2)});
  }
  return s;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

/// Writes `path` (binary container) and `path.json` (configuration).
inline void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state,
                                  const TrainConfig& config) {
  ad::save_checkpoint(path, pack_train_state(state));
  std::ofstream side(sidecar_path(path));
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
  side << nlohmann::json{{"model", to_json(config.model)}, {"train", to_json(config)}}.dump(2) << "\n";
  if (!side) throw IoError("failed writing " + sidecar_path(path).string());
}

struct LoadedModel {
  ModelConfig config;
  ad::ParameterSet weights;
};

inline nlohmann::json read_sidecar(const std::filesystem::path& checkpoint) {
  std::ifstream in(sidecar_path(checkpoint));
  if (!in) throw IoError("missing model config " + sidecar_path(checkpoint).string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar_path(checkpoint).string() + ": " + e.what());
  }
}

/// Checks that `weights` has exactly the names and shapes `config` implies.
inline void check_weights_match(const ad::ParameterSet& weights, const ModelConfig& config) {
  const ad::ParameterSet expected = init_weights(config, 0);
  if (expected.size() != weights.size())
    throw DataError("checkpoint has " + std::to_string(weights.size()) + " model arrays, config implies " +
                    std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected[i].name != weights[i].name || expected[i].value.shape != weights[i].value.shape)
      throw DataError("checkpoint array '" + weights[i].name + "' does not match the model config");
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel m;
  m.config = model_config_from_json(read_sidecar(path).at("model"));
  m.weights = model_weights(ad::load_checkpoint(path));
  check_weights_match(m.weights, m.config);
  return m;
}

inline TrainState load_train_checkpoint(const std::filesystem::path& path) {
  return unpack_train_state(ad::load_checkpoint(path));
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,lr\n";
  char buf[64];
  for (const EpochRecord& r : history) {
    out << r.epoch << ',';
    out.write(buf, std::to_chars(buf, buf + sizeof buf, r.mean_loss).ptr - buf);
    out << ',';
    out.write(buf, std::to_chars(buf, buf + sizeof buf, r.lr).ptr - buf);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Loop

class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct TrainOptions {
  std::size_t threads = 1;
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const EpochRecord&)> on_epoch;
  std::optional<TrainState> resume;
  std::size_t max_epochs_this_run = 0;  // 0 = run to config.epochs
};

struct PatchGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

inline PatchGradient patch_gradient(const ad::ParameterSet& weights, const ModelConfig& config,
                                    const TrainingSample& sample) {
  const ModelInput input = prepare_input(sample.patch, config);
  ad::Array gt({sample.gt_normals.size(), 3});
  for (std::size_t i = 0; i < sample.gt_normals.size(); ++i)
    for (std::size_t d = 0; d < 3; ++d) gt(i, d) = sample.gt_normals[i][d];
  ad::Tape tape;
  ad::BoundParameters bound(tape, weights);
  const ad::Tensor loss = sin_loss(forward(tape, bound, config, input), tape.constant(gt));
  tape.backward(loss);
  return {loss.item(), bound.gradients()};
}

/// Per-patch gradients, computed by `threads` workers over a fixed strided
/// assignment and reduced in patch order, so results do not depend on the
/// thread count.
inline std::vector<PatchGradient> batch_gradients(const ad::ParameterSet& weights, const ModelConfig& config,
                                                  const std::vector<TrainingSample>& batch, std::size_t threads) {
  std::vector<PatchGradient> out(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < batch.size(); i += stride) {
      try {
        out[i] = patch_gradient(weights, config, batch[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, batch.size());
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline std::string parameter_norms(const ad::ParameterSet& w) {
  std::ostringstream s;
  for (const auto& p : w) {
    double sq = 0.0;
    for (double v : p.value.data) sq += v * v;
    s << "\n  " << p.name << " |w| = " << std::sqrt(sq);
  }
  return s.str();
}

/// Adam over `config.epochs` epochs of `batches_per_epoch` batches. Batch b of
/// epoch e draws its patches from a generator seeded by (seed, e, b), so a run
/// resumed at an epoch boundary replays an unbroken run exactly.
inline TrainState train(const TrainConfig& config, const TrainingSet& data, TrainOptions options = {}) {
  config.validate();
  TrainState state;
  if (options.resume) {
    state = std::move(*options.resume);
    check_weights_match(state.weights, config.model);
  } else {
    state.weights = init_weights(config.model, derive_seed(config.seed, 0x1417));
    state.adam = ad::AdamState::zeros_like(state.weights);
  }
  const std::size_t n_batches = config.batches_per_epoch();
  std::size_t epochs_run = 0;
  while (state.next_epoch < config.epochs) {
    if (options.max_epochs_this_run && epochs_run == options.max_epochs_this_run) break;
    const std::size_t epoch = state.next_epoch;
    const double lr = config.learning_rate(epoch);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t size = std::min(config.batch_size, config.patches_per_epoch - b * config.batch_size);
      Rng rng(derive_seed(config.seed, epoch + 1, b));
      const auto batch = sample_training_batch(data, size, config.patch_size, rng);
      std::vector<PatchGradient> per_patch;
      try {
        per_patch = batch_gradients(state.weights, config.model, batch, options.threads);
      } catch (const NumericalError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b) + ": " + e.what() + parameter_norms(state.weights));
      }
      std::vector<std::vector<double>> grads = std::move(per_patch.front().grads);
      double batch_loss = per_patch.front().loss;
      for (std::size_t i = 1; i < per_patch.size(); ++i) {
        batch_loss += per_patch[i].loss;
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += per_patch[i].grads[p][j];
      }
      const double inv = 1.0 / static_cast<double>(per_patch.size());
      for (auto& g : grads)
        for (double& v : g) v *= inv;
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                               parameter_norms(state.weights));
      ad::adam_step(state.weights, grads, state.adam, {.lr = lr});
      loss_sum += batch_loss;
      loss_count += per_patch.size();
    }
    const EpochRecord record{epoch, loss_sum / static_cast<double>(loss_count), lr};
    state.history.push_back(record);
    state.next_epoch = epoch + 1;
    ++epochs_run;
    if (options.on_epoch) options.on_epoch(record);
    const bool periodic = config.checkpoint_every && state.next_epoch % config.checkpoint_every == 0;
    if (options.checkpoint_path && (periodic || state.next_epoch == config.epochs))
      save_train_checkpoint(*options.checkpoint_path, state, config);
  }
  return state;
}

}  // namespace sne
