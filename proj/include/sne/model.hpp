#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sne/ad/ops.hpp"
#include "sne/ad/params.hpp"
#include "sne/ad/tape.hpp"
#include "sne/error.hpp"
#include "sne/geometry.hpp"
#include "sne/patch.hpp"
#include "sne/random.hpp"

namespace sne {

enum class Variant { full, no_transformer, no_graph_conv, local_attention, csa };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_transformer: return "no_transformer";
    case Variant::no_graph_conv: return "no_graph_conv";
    case Variant::local_attention: return "local_attention";
    case Variant::csa: return "csa";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_transformer") return Variant::no_transformer;
  if (s == "no_graph_conv" || s == "no_gc") return Variant::no_graph_conv;
  if (s == "local_attention") return Variant::local_attention;
  if (s == "csa") return Variant::csa;
  throw InvalidArgument("unknown model variant '" + s + "'");
}

/// Which blocks enter the graph-convolution edge input
/// [x_j - x_c, x_c, x_j, f_j, f_j - f_c].
struct GraphFeatures {
  bool xyz = true;        // x_c and x_j
  bool delta_xyz = true;  // x_j - x_c
  bool f = true;          // f_j
  bool delta_f = true;    // f_j - f_c

  std::size_t width(std::size_t feature_dim) const {
    return (delta_xyz ? 3 : 0) + (xyz ? 6 : 0) + (f ? feature_dim : 0) + (delta_f ? feature_dim : 0);
  }
  bool any() const { return xyz || delta_xyz || f || delta_f; }
  friend bool operator==(const GraphFeatures&, const GraphFeatures&) = default;

  std::string to_string() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += ",";
      s += name;
    };
    add(xyz, "xyz");
    add(delta_xyz, "delta_xyz");
    add(f, "f");
    add(delta_f, "delta_f");
    return s;
  }

  static GraphFeatures parse(const std::string& spec) {
    GraphFeatures g{false, false, false, false};
    std::size_t start = 0;
    while (start <= spec.size()) {
      const std::size_t end = std::min(spec.find(',', start), spec.size());
      const std::string item = spec.substr(start, end - start);
      if (item == "xyz") g.xyz = true;
      else if (item == "delta_xyz") g.delta_xyz = true;
      else if (item == "f") g.f = true;
      else if (item == "delta_f") g.delta_f = true;
      else throw InvalidArgument("unknown graph feature '" + item + "'");
      start = end + 1;
    }
    if (!g.any()) throw InvalidArgument("graph feature set is empty");
    return g;
  }
};

struct ModelConfig {
  std::size_t num_blocks = 3;
  std::size_t feature_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t graph_k = 16;
  Variant variant = Variant::full;
  std::size_t local_attention_k = 16;
  GraphFeatures graph_features;

  void validate() const {
    if (num_blocks == 0) throw InvalidArgument("num_blocks must be positive");
    if (feature_dim == 0 || num_heads == 0 || feature_dim % num_heads != 0)
      throw InvalidArgument("feature_dim must be a positive multiple of num_heads");
    if (ffn_dim == 0) throw InvalidArgument("ffn_dim must be positive");
    if (graph_k < 2) throw InvalidArgument("graph_k must be at least 2");
    if (local_attention_k < 2) throw InvalidArgument("local_attention_k must be at least 2");
    if (!graph_features.any()) throw InvalidArgument("graph feature set is empty");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_blocks", c.num_blocks},       {"feature_dim", c.feature_dim},
          {"num_heads", c.num_heads},         {"ffn_dim", c.ffn_dim},
          {"graph_k", c.graph_k},             {"variant", to_string(c.variant)},
          {"local_attention_k", c.local_attention_k},
          {"graph_features", c.graph_features.to_string()}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.graph_k = j.value("graph_k", c.graph_k);
  c.variant = parse_variant(j.value("variant", to_string(c.variant)));
  c.local_attention_k = j.value("local_attention_k", c.local_attention_k);
  c.graph_features = GraphFeatures::parse(j.value("graph_features", c.graph_features.to_string()));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace model_detail {

inline void add_linear(ad::ParameterSet& params, Rng& rng, const std::string& name, std::size_t in,
                       std::size_t out, bool bias = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ad::Array w({in, out});
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  params.add(name + ".w", std::move(w));
  if (!bias) return;
  ad::Array b({1, out});
  for (double& v : b.data) v = rng.uniform(-bound, bound);
  params.add(name + ".b", std::move(b));
}

inline void add_layer_norm(ad::ParameterSet& params, const std::string& name, std::size_t f) {
  params.add(name + ".gamma", ad::Array({1, f}, 1.0));
  params.add(name + ".beta", ad::Array({1, f}, 0.0));
}

inline std::string block_prefix(std::size_t b) { return "block" + std::to_string(b); }

}  // namespace model_detail

/// Every learnable array of the network, with names and shapes fixed by the
/// config. Weights use U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norms start
/// at the identity.
inline ad::ParameterSet init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  using namespace model_detail;
  Rng rng(derive_seed(seed, 0x5e11));
  ad::ParameterSet p;
  const std::size_t f = config.feature_dim;
  add_linear(p, rng, "embed", 3, f);
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    const std::string pre = block_prefix(b);
    if (config.variant == Variant::no_graph_conv) {
      add_linear(p, rng, pre + ".point.l1", 3 + f, f);
      add_linear(p, rng, pre + ".point.l2", f, f);
    } else {
      add_linear(p, rng, pre + ".gc.l1", config.graph_features.width(f), f);
      add_linear(p, rng, pre + ".gc.l2", f, f);
    }
    switch (config.variant) {
      case Variant::full:
      case Variant::no_graph_conv:
      case Variant::local_attention:
        add_linear(p, rng, pre + ".attn.q", f, f);
        add_linear(p, rng, pre + ".attn.k", f, f, /*bias=*/false);  // softmax is invariant to a key bias
        add_linear(p, rng, pre + ".attn.v", f, f);
        add_linear(p, rng, pre + ".attn.o", f, f);
        add_layer_norm(p, pre + ".ln1", f);
        add_linear(p, rng, pre + ".ffn.l1", f, config.ffn_dim);
        add_linear(p, rng, pre + ".ffn.l2", config.ffn_dim, f);
        add_layer_norm(p, pre + ".ln2", f);
        break;
      case Variant::csa:
        add_linear(p, rng, pre + ".csa.psi1", f, f);
        add_linear(p, rng, pre + ".csa.psi2", f, f);
        add_linear(p, rng, pre + ".csa.phi1", 2 * f, f);
        add_linear(p, rng, pre + ".csa.phi2", f, f);
        break;
      case Variant::no_transformer:
        break;
    }
  }
  add_linear(p, rng, "head.l1", f, f);
  add_linear(p, rng, "head.l2", f, 3);
  return p;
}

// ---------------------------------------------------------------------------
// Patch-level graph structure

/// Static neighbor lists of a patch: `neighbors[c * g + s]` is the s-th
/// nearest point to c (s = 0 is c itself), ties broken by lower index.
struct PatchGraph {
  std::size_t points = 0;
  std::size_t per_point = 0;
  std::shared_ptr<const std::vector<std::uint32_t>> neighbors;
  std::shared_ptr<const std::vector<std::uint32_t>> centers;  // c repeated g times
};

inline PatchGraph build_patch_graph(std::span<const Vec3> positions, std::size_t g) {
  const std::size_t k = positions.size();
  if (g == 0) throw InvalidArgument("graph neighbor count must be positive");
  if (g > k)
    throw InvalidArgument("graph neighbor count " + std::to_string(g) + " exceeds patch size " +
                          std::to_string(k));
  auto nbr = std::make_shared<std::vector<std::uint32_t>>(k * g);
  auto ctr = std::make_shared<std::vector<std::uint32_t>>(k * g);
  std::vector<std::pair<double, std::uint32_t>> cand(k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < k; ++j)
      cand[j] = {j == c ? -1.0 : squared_distance(positions[c], positions[j]), static_cast<std::uint32_t>(j)};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(g), cand.end());
    for (std::size_t s = 0; s < g; ++s) {
      (*nbr)[c * g + s] = cand[s].second;
      (*ctr)[c * g + s] = static_cast<std::uint32_t>(c);
    }
  }
  return {k, g, std::move(nbr), std::move(ctr)};
}

/// Attention mask [k x k] admitting the m nearest neighbors of each query.
inline std::shared_ptr<const std::vector<std::uint8_t>> local_attention_mask(const PatchGraph& graph) {
  const std::size_t k = graph.points, m = graph.per_point;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(k * k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t s = 0; s < m; ++s) (*mask)[i * k + (*graph.neighbors)[i * m + s]] = 1;
  return mask;
}

/// Everything forward() needs about one normalized patch.
struct ModelInput {
  ad::Array positions;  // [k x 3]
  PatchGraph graph;
  std::shared_ptr<const std::vector<std::uint8_t>> attention_mask;  // local_attention only
};

inline ModelInput prepare_input(std::span<const Vec3> positions, const ModelConfig& config) {
  const std::size_t k = positions.size();
  if (k < config.graph_k)
    throw InvalidArgument("patch of " + std::to_string(k) + " points is smaller than graph_k " +
                          std::to_string(config.graph_k));
  ModelInput in;
  in.positions = ad::Array({k, 3});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t d = 0; d < 3; ++d) in.positions(i, d) = positions[i][d];
  in.graph = build_patch_graph(positions, config.graph_k);
  if (config.variant == Variant::local_attention)
    in.attention_mask = local_attention_mask(build_patch_graph(positions, std::min(config.local_attention_k, k)));
  return in;
}

inline ModelInput prepare_input(const NormalizedPatch& patch, const ModelConfig& config) {
  return prepare_input(std::span<const Vec3>(patch.positions), config);
}

// ---------------------------------------------------------------------------
// Layers

namespace layers {

using ad::Tensor;

inline Tensor linear(const Tensor& x, const ad::BoundParameters& w, const std::string& name) {
  return ad::add_row(ad::matmul(x, w[name + ".w"]), w[name + ".b"]);
}

/// Enhanced graph convolution: for each center c,
///   f'_c = max_j  MLP([x_j - x_c, x_c, x_j, f_j, f_j - f_c])
/// over the graph neighbors j of c, with the edge input restricted to
/// `features`. The first MLP layer is linear in the edge input, so it is
/// evaluated per point and gathered per edge instead of per edge.
inline Tensor enhanced_graph_conv(const Tensor& positions, const Tensor& feats, const PatchGraph& graph,
                                  const ad::BoundParameters& w, const std::string& name,
                                  const GraphFeatures& features) {
  const std::size_t k = positions.rows(), fdim = feats.cols();
  if (feats.rows() != k || graph.points != k)
    throw InvalidArgument("enhanced_graph_conv: positions, features, and graph disagree on point count");
  for (std::uint32_t j : *graph.neighbors)
    if (j >= k) throw InvalidArgument("enhanced_graph_conv: neighbor index out of range");
  const Tensor& w1 = w[name + ".l1.w"];
  if (w1.rows() != features.width(fdim))
    throw InvalidArgument("enhanced_graph_conv: weight rows do not match the edge feature width");

  // Row blocks of the first layer, in edge-input order.
  std::size_t row = 0;
  auto block = [&](bool on, std::size_t width) -> Tensor {
    if (!on) return {};
    Tensor t = ad::slice_rows(w1, row, width);
    row += width;
    return t;
  };
  const Tensor w_dxyz = block(features.delta_xyz, 3);
  const Tensor w_xc = block(features.xyz, 3);
  const Tensor w_xj = block(features.xyz, 3);
  const Tensor w_fj = block(features.f, fdim);
  const Tensor w_df = block(features.delta_f, fdim);

  std::vector<Tensor> neighbor_terms, center_terms;
  if (features.delta_xyz) {
    const Tensor projected = ad::matmul(positions, w_dxyz);
    neighbor_terms.push_back(projected);
    center_terms.push_back(ad::scale(projected, -1.0));
  }
  if (features.xyz) {
    center_terms.push_back(ad::matmul(positions, w_xc));
    neighbor_terms.push_back(ad::matmul(positions, w_xj));
  }
  if (features.f) neighbor_terms.push_back(ad::matmul(feats, w_fj));
  if (features.delta_f) {
    const Tensor projected = ad::matmul(feats, w_df);
    neighbor_terms.push_back(projected);
    center_terms.push_back(ad::scale(projected, -1.0));
  }
  auto total = [](const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return acc;
  };

  Tensor pre = ad::gather_rows(total(neighbor_terms), graph.neighbors);
  if (!center_terms.empty()) pre = ad::add(pre, ad::gather_rows(total(center_terms), graph.centers));
  const Tensor hidden = ad::relu(ad::add_row(pre, w[name + ".l1.b"]));
  const Tensor edges = linear(hidden, w, name + ".l2");
  return ad::reduce_max(edges, graph.per_point);
}

/// Per-point replacement for the graph convolution (GC ablation):
/// MLP([x_c, f_c]).
inline Tensor pointwise_block(const Tensor& positions, const Tensor& feats, const ad::BoundParameters& w,
                              const std::string& name) {
  const Tensor hidden = ad::relu(linear(ad::concat({positions, feats}), w, name + ".l1"));
  return linear(hidden, w, name + ".l2");
}

/// Post-norm encoder layer: multi-head scaled dot-product self-attention,
/// residual + layer norm, two-layer feed-forward, residual + layer norm.
/// With a mask, each query attends only to its admitted keys.
inline Tensor transformer_encoder_layer(const Tensor& x, const ad::BoundParameters& w, const std::string& name,
                                        std::size_t num_heads,
                                        std::shared_ptr<const std::vector<std::uint8_t>> mask = nullptr,
                                        std::vector<Tensor>* attention_out = nullptr) {
  const std::size_t f = x.cols();
  if (num_heads == 0 || f % num_heads != 0)
    throw InvalidArgument("transformer_encoder_layer: feature width not divisible by head count");
  const std::size_t dh = f / num_heads;
  const Tensor q = linear(x, w, name + ".attn.q");
  const Tensor k = ad::matmul(x, w[name + ".attn.k.w"]);
  const Tensor v = linear(x, w, name + ".attn.v");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < num_heads; ++h) {
    const Tensor qh = ad::slice_cols(q, h * dh, dh);
    const Tensor kh = ad::slice_cols(k, h * dh, dh);
    const Tensor vh = ad::slice_cols(v, h * dh, dh);
    const Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
    const Tensor attn = ad::softmax_rows(scores, mask);
    if (attention_out) attention_out->push_back(attn);
    heads.push_back(ad::matmul(attn, vh));
  }
  const Tensor attended = linear(heads.size() == 1 ? heads.front() : ad::concat(heads), w, name + ".attn.o");
  const Tensor x1 = ad::layer_norm(ad::add(x, attended), w[name + ".ln1.gamma"], w[name + ".ln1.beta"]);
  const Tensor ff = linear(ad::relu(linear(x1, w, name + ".ffn.l1")), w, name + ".ffn.l2");
  return ad::layer_norm(ad::add(x1, ff), w[name + ".ln2.gamma"], w[name + ".ln2.beta"]);
}

/// Encoder layer whose attention is restricted to each point's nearest
/// neighbors in `graph` (self included).
inline Tensor local_attention_layer(const Tensor& x, const PatchGraph& graph, const ad::BoundParameters& w,
                                    const std::string& name, std::size_t num_heads,
                                    std::vector<Tensor>* attention_out = nullptr) {
  if (graph.points != x.rows()) throw InvalidArgument("local_attention_layer: graph size mismatch");
  for (std::uint32_t j : *graph.neighbors)
    if (j >= x.rows()) throw InvalidArgument("local_attention_layer: neighbor index out of range");
  return transformer_encoder_layer(x, w, name, num_heads, local_attention_mask(graph), attention_out);
}

/// Cascaded scale aggregation:
///   f_small' = phi([psi(MaxPool over the large-scale features), f_small])
/// `large_ids` and `small_ids` name the points behind each feature row; the
/// small-scale set must be contained in the large-scale set.
inline Tensor csa_layer(const Tensor& large, const Tensor& small, std::span<const std::size_t> large_ids,
                        std::span<const std::size_t> small_ids, const ad::BoundParameters& w,
                        const std::string& name) {
  if (large_ids.size() != large.rows() || small_ids.size() != small.rows())
    throw InvalidArgument("csa_layer: id lists do not match feature rows");
  std::vector<std::size_t> sorted(large_ids.begin(), large_ids.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t id : small_ids)
    if (!std::binary_search(sorted.begin(), sorted.end(), id))
      throw InvalidArgument("csa_layer: small-scale point " + std::to_string(id) +
                            " is not in the large-scale set");
  const Tensor pooled = ad::max_rows(large);
  const Tensor summary = linear(ad::relu(linear(pooled, w, name + ".psi1")), w, name + ".psi2");
  auto broadcast = std::make_shared<std::vector<std::uint32_t>>(small.rows(), 0);
  const Tensor fused = ad::concat({ad::gather_rows(summary, broadcast), small});
  return linear(ad::relu(linear(fused, w, name + ".phi1")), w, name + ".phi2");
}

}  // namespace layers

/// Per-point unit normals [k x 3] in the patch frame.
inline ad::Tensor forward(ad::Tape& tape, const ad::BoundParameters& w, const ModelConfig& config,
                          const ModelInput& input) {
  using ad::Tensor;
  const std::size_t k = input.positions.rows();
  if (input.graph.points != k) throw InvalidArgument("forward: graph does not match positions");
  const Tensor positions = tape.constant(input.positions);
  Tensor feats = ad::relu(layers::linear(positions, w, "embed"));

  std::vector<std::size_t> ids;
  if (config.variant == Variant::csa) {
    ids.resize(k);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    const std::string pre = model_detail::block_prefix(b);
    if (config.variant == Variant::no_graph_conv)
      feats = layers::pointwise_block(positions, feats, w, pre + ".point");
    else
      feats = layers::enhanced_graph_conv(positions, feats, input.graph, w, pre + ".gc", config.graph_features);

    switch (config.variant) {
      case Variant::full:
      case Variant::no_graph_conv:
        feats = layers::transformer_encoder_layer(feats, w, pre, config.num_heads);
        break;
      case Variant::local_attention:
        feats = layers::transformer_encoder_layer(feats, w, pre, config.num_heads, input.attention_mask);
        break;
      case Variant::csa:
        feats = layers::csa_layer(feats, feats, ids, ids, w, pre + ".csa");
        break;
      case Variant::no_transformer:
        break;
    }
  }
  const Tensor hidden = ad::relu(layers::linear(feats, w, "head.l1"));
  return ad::normalize_rows(layers::linear(hidden, w, "head.l2"));
}

/// Mean over rows of |n_hat x n|, the sine of the angle between the rows.
inline ad::Tensor sin_loss(const ad::Tensor& predicted, const ad::Tensor& ground_truth) {
  if (predicted.cols() != 3 || ground_truth.cols() != 3 || predicted.rows() != ground_truth.rows())
    throw InvalidArgument("sin_loss: expected two [k x 3] tensors");
  return ad::mean(ad::row_norms(ad::cross_rows(predicted, ground_truth)));
}

/// Convenience inference: normals of every patch point in the patch frame.
inline std::vector<Vec3> predict_patch(const ad::ParameterSet& weights, const ModelConfig& config,
                                       const ModelInput& input) {
  ad::Tape tape;
  ad::BoundParameters bound(tape, weights, /*track_gradients=*/false);
  const ad::Tensor out = forward(tape, bound, config, input);
  std::vector<Vec3> normals(out.rows());
  for (std::size_t i = 0; i < normals.size(); ++i)
    normals[i] = {out.values()[3 * i], out.values()[3 * i + 1], out.values()[3 * i + 2]};
  return normals;
}

}  // namespace sne
