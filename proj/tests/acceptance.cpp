#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "model_check.hpp"
#include "sne/ad/gradcheck.hpp"
#include "sne/ad/ops.hpp"
#include "sne/classical.hpp"
#include "sne/evaluation.hpp"
#include "sne/knn.hpp"
#include "sne/synthetic.hpp"
#include "sne/training.hpp"
#include "test_util.hpp"

using namespace sne;
using namespace sne::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

// ------------------------------------------------------------------ 1

ad::Array random_array(ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  ad::Array a(std::move(shape));
  Rng rng(seed);
  for (double& v : a.data) v = scale * rng.normal();
  return a;
}

ad::Array off_kinks(ad::Array a, double margin = 1e-2) {
  for (double& v : a.data)
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return a;
}

ad::Tensor weighted_sum(const ad::Tensor& x, std::uint64_t seed = 99) {
  return ad::sum(ad::mul(x, x.tape().constant(random_array(x.shape(), seed))));
}

using ad::BoundParameters;
using ad::Tape;
using ad::Tensor;

struct OpCase {
  std::string name;
  std::vector<std::pair<std::string, ad::Array>> inputs;
  std::function<Tensor(const BoundParameters&)> f;
};

std::vector<OpCase> op_cases() {
  auto idx = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{2, 0, 0, 3, 1});
  auto mask = std::make_shared<const std::vector<std::uint8_t>>(
      std::vector<std::uint8_t>{1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1});
  ad::Array b = random_array({1, 4}, 8);
  return {
      {"matmul", {{"a", random_array({4, 3}, 1)}, {"b", random_array({3, 5}, 2)}},
       [](auto& p) { return weighted_sum(ad::matmul(p["a"], p["b"])); }},
      {"transpose", {{"a", random_array({4, 3}, 3)}}, [](auto& p) { return weighted_sum(ad::transpose(p["a"])); }},
      {"add", {{"a", random_array({3, 4}, 4)}, {"b", random_array({3, 4}, 5)}},
       [](auto& p) { return weighted_sum(ad::add(p["a"], p["b"])); }},
      {"sub", {{"a", random_array({3, 4}, 4)}, {"b", random_array({3, 4}, 5)}},
       [](auto& p) { return weighted_sum(ad::sub(p["a"], p["b"])); }},
      {"mul", {{"a", random_array({3, 4}, 6)}, {"b", random_array({3, 4}, 7)}},
       [](auto& p) { return weighted_sum(ad::mul(p["a"], p["b"])); }},
      {"scale", {{"a", random_array({3, 4}, 6)}}, [](auto& p) { return weighted_sum(ad::scale(p["a"], -1.7)); }},
      {"relu", {{"a", off_kinks(random_array({5, 4}, 9))}}, [](auto& p) { return weighted_sum(ad::relu(p["a"])); }},
      {"add_row", {{"x", random_array({5, 4}, 10)}, {"b", b}},
       [](auto& p) { return weighted_sum(ad::add_row(p["x"], p["b"])); }},
      {"concat", {{"a", random_array({4, 2}, 11)}, {"b", random_array({4, 3}, 12)}},
       [](auto& p) { return weighted_sum(ad::concat({p["a"], p["b"], p["a"]})); }},
      {"slice_cols", {{"a", random_array({4, 6}, 13)}},
       [](auto& p) { return weighted_sum(ad::slice_cols(p["a"], 2, 3)); }},
      {"slice_rows", {{"a", random_array({6, 4}, 14)}},
       [](auto& p) { return weighted_sum(ad::slice_rows(p["a"], 1, 4)); }},
      {"gather_rows", {{"a", random_array({4, 3}, 15)}},
       [idx](auto& p) { return weighted_sum(ad::gather_rows(p["a"], idx)); }},
      {"reduce_max", {{"a", random_array({12, 3}, 16)}},
       [](auto& p) { return weighted_sum(ad::reduce_max(p["a"], 4)); }},
      {"max_rows", {{"a", random_array({7, 3}, 17)}}, [](auto& p) { return weighted_sum(ad::max_rows(p["a"])); }},
      {"softmax_rows", {{"a", random_array({4, 5}, 18)}},
       [](auto& p) { return weighted_sum(ad::softmax_rows(p["a"])); }},
      {"softmax_rows_masked", {{"a", random_array({4, 4}, 19)}},
       [mask](auto& p) { return weighted_sum(ad::softmax_rows(p["a"], mask)); }},
      {"layer_norm",
       {{"x", random_array({5, 6}, 20)}, {"g", random_array({1, 6}, 21)}, {"b", random_array({1, 6}, 22)}},
       [](auto& p) { return weighted_sum(ad::layer_norm(p["x"], p["g"], p["b"])); }},
      {"sum", {{"a", random_array({3, 4}, 23)}}, [](auto& p) { return ad::sum(ad::mul(p["a"], p["a"])); }},
      {"mean", {{"a", random_array({3, 4}, 24)}}, [](auto& p) { return ad::mean(ad::mul(p["a"], p["a"])); }},
      {"cross_rows", {{"a", random_array({5, 3}, 25)}, {"b", random_array({5, 3}, 26)}},
       [](auto& p) { return weighted_sum(ad::cross_rows(p["a"], p["b"])); }},
      {"row_norms", {{"a", random_array({5, 3}, 27)}}, [](auto& p) { return weighted_sum(ad::row_norms(p["a"])); }},
      {"normalize_rows", {{"a", random_array({5, 3}, 28)}},
       [](auto& p) { return weighted_sum(ad::normalize_rows(p["a"])); }},
  };
}

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  for (const auto& c : op_cases()) {
    ad::ParameterSet params;
    for (const auto& [n, a] : c.inputs) params.add(n, a);
    const auto r = ad::finite_difference_check([&](Tape&, const BoundParameters& p) { return c.f(p); }, params);
    worst_op = std::max(worst_op, r.max_relative_error);
    o.check(r.max_relative_error < 1e-4, c.name + fmt(" rel err %.3g", r.max_relative_error));
  }
  o.note(fmt("%zu ops, worst %.2e", op_cases().size(), worst_op));
  for (Variant v : {Variant::full, Variant::no_transformer, Variant::no_graph_conv, Variant::local_attention,
                    Variant::csa}) {
    const auto r = model_gradient_check(v, 1);
    o.check(r.max_relative_error < 1e-4,
            "model " + to_string(v) + fmt(" rel err %.3g at ", r.max_relative_error) + r.worst_parameter);
    o.note("model " + to_string(v) + fmt(" %.2e", r.max_relative_error));
  }
  const double s = seconds_since(t0);
  o.check(s < 120.0, fmt("runtime %.1f s", s));
  o.note(fmt("%.1f s", s));
  return o;
}

// ------------------------------------------------------------------ 2

Outcome criterion_exact_surfaces() {
  Outcome o;
  SyntheticShape plane;
  plane.kind = ShapeKind::plane;
  plane.sample_count = 5000;
  plane.seed = 3;
  const PointCloud cloud = generate_synthetic_shape(plane);
  const double pca = evaluate_cloud(cloud, pca_estimator(16), {}).rmse_degrees;
  o.check(pca < 1e-6, fmt("plane PCA RMSE %.3g deg", pca));
  o.note(fmt("plane PCA RMSE %.2e deg", pca));

  // h = 0.1 + 0.4u - 0.25v + 0.3u^2 + 0.1uv - 0.2v^2
  const double expect[6] = {0.1, 0.4, -0.25, 0.3, 0.1, -0.2};
  Rng rng(5);
  NormalizedPatch np;
  for (int i = 0; i < 60; ++i) {
    const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
    np.positions.push_back(
        {u, v, expect[0] + expect[1] * u + expect[2] * v + expect[3] * u * u + expect[4] * u * v + expect[5] * v * v});
  }
  const JetCoefficients jet = fit_jet(np, 2);
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(jet.coeffs[i] - expect[i]));
  o.check(worst < 1e-8, fmt("jet coefficient error %.3g", worst));
  const Vec3 truth = normalized(Vec3{-0.4, 0.25, 1.0});
  const double err = angular_error(jet_normal(jet), truth);
  o.check(err < 1e-10, fmt("jet normal error %.3g rad", err));
  o.note(fmt("jet coeff err %.2e, normal err %.2e rad", worst, err));
  return o;
}

// ------------------------------------------------------- 3, 4, 5 (shared)

struct Comparison {
  std::vector<std::pair<Variant, TrainState>> models;
  std::vector<double> train_seconds;
  std::vector<PointCloud> test_clean;
};

TrainConfig acceptance_config(Variant v) {
  TrainConfig c;
  c.model.num_blocks = 2;
  c.model.feature_dim = 32;
  c.model.num_heads = 4;
  c.model.ffn_dim = 64;
  c.model.graph_k = 8;
  c.model.local_attention_k = 8;
  c.model.variant = v;
  c.patch_size = 32;
  c.batch_size = 16;
  c.patches_per_epoch = 2048;
  c.epochs = 20;
  c.lr = 3e-3;
  c.lr_decay = 0.95;
  c.seed = 1;
  return c;
}

const std::size_t kThreads = [] {
  const char* e = std::getenv("SNE_THREADS");
  return e ? std::max<std::size_t>(1, std::stoul(e)) : 8;
}();

Comparison train_comparison() {
  Comparison cmp;
  std::vector<SyntheticShape> shapes;
  for (auto kind : {ShapeKind::sphere, ShapeKind::plane, ShapeKind::saddle}) {
    SyntheticShape s;
    s.kind = kind;
    s.sample_count = 5000;
    s.seed = 11;
    shapes.push_back(s);
  }
  const TrainingSet data(build_training_clouds(shapes, {0.0, 0.003, 0.006}, 2));
  for (Variant v : {Variant::full, Variant::no_transformer, Variant::no_graph_conv}) {
    TrainOptions opts;
    opts.threads = kThreads;
    opts.on_epoch = [&](const EpochRecord& r) {
      std::fprintf(stderr, "  %s epoch %zu loss %.5f\n", to_string(v).c_str(), r.epoch, r.mean_loss);
    };
    const auto t0 = Clock::now();
    cmp.models.emplace_back(v, train(acceptance_config(v), data, opts));
    cmp.train_seconds.push_back(seconds_since(t0));
  }
  for (auto kind : {ShapeKind::torus, ShapeKind::cylinder}) {
    SyntheticShape t;
    t.kind = kind;
    t.sample_count = 10000;
    t.seed = 99;
    cmp.test_clean.push_back(generate_synthetic_shape(t));
  }
  return cmp;
}

struct Scores {
  double full = 0, no_transformer = 0, no_gc = 0, pca = 0;
  double torus_full = 0;
};

Scores score(const Comparison& cmp, double noise) {
  const std::size_t k = acceptance_config(Variant::full).patch_size;
  std::vector<NormalEstimator> est;
  for (const auto& [v, s] : cmp.models)
    est.push_back(model_estimator(std::make_shared<const ad::ParameterSet>(s.weights), acceptance_config(v).model, k,
                                  to_string(v)));
  est.push_back(pca_estimator(k));
  std::vector<std::vector<EvalReport>> reports(est.size());
  for (std::size_t c = 0; c < cmp.test_clean.size(); ++c) {
    CorruptionSpec spec;
    spec.noise_sigma_fraction = noise;
    spec.seed = derive_seed(4, c);
    const PointCloud cloud = add_gaussian_noise(cmp.test_clean[c], spec);
    EvalOptions eo;
    eo.stride = 20;
    eo.threads = kThreads;
    for (std::size_t e = 0; e < est.size(); ++e) reports[e].push_back(evaluate_cloud(cloud, est[e], eo));
  }
  for (std::size_t e = 0; e < est.size(); ++e) {
    std::fprintf(stderr, "  noise %.4f %-16s", noise, est[e].method.c_str());
    for (const auto& r : reports[e]) std::fprintf(stderr, " %s %.4f", r.cloud.c_str(), r.rmse_degrees);
    std::fprintf(stderr, " mean %.4f\n", mean_rmse_degrees(reports[e]));
  }
  Scores s;
  s.full = mean_rmse_degrees(reports[0]);
  s.no_transformer = mean_rmse_degrees(reports[1]);
  s.no_gc = mean_rmse_degrees(reports[2]);
  s.pca = mean_rmse_degrees(reports[3]);
  s.torus_full = reports[0][0].rmse_degrees;
  return s;
}

Outcome criterion_sphere(const Comparison& cmp, const Scores& clean) {
  Outcome o;
  SyntheticShape sphere;
  sphere.sample_count = 10000;
  sphere.seed = 7;
  EvalOptions eo;
  eo.threads = kThreads;
  const double pca = evaluate_cloud(generate_synthetic_shape(sphere), pca_estimator(16), eo).rmse_degrees;
  o.check(pca < 2.0, fmt("sphere PCA %.3f deg", pca));
  o.check(clean.torus_full < 5.0, fmt("torus full model %.3f deg", clean.torus_full));
  o.check(cmp.train_seconds[0] < 1800.0, fmt("training %.0f s", cmp.train_seconds[0]));
  o.note(fmt("sphere PCA %.3f deg, torus full model %.3f deg, training %.0f s", pca, clean.torus_full,
             cmp.train_seconds[0]));
  return o;
}

Outcome criterion_noise_ordering(const Scores& s) {
  Outcome o;
  o.check(s.full < s.pca, fmt("full %.4f vs pca %.4f", s.full, s.pca));
  o.check(s.full < s.no_transformer, fmt("full %.4f vs no_transformer %.4f", s.full, s.no_transformer));
  o.note(fmt("full %.4f, pca %.4f, no_transformer %.4f deg", s.full, s.pca, s.no_transformer));
  return o;
}

Outcome criterion_zero_noise_ablation(const Scores& s) {
  Outcome o;
  o.check(s.full < s.no_transformer, fmt("full %.4f vs no_transformer %.4f", s.full, s.no_transformer));
  o.check(s.full < s.no_gc, fmt("full %.4f vs no_gc %.4f", s.full, s.no_gc));
  o.note(fmt("full %.4f, no_transformer %.4f, no_gc %.4f deg", s.full, s.no_transformer, s.no_gc));
  return o;
}

// ------------------------------------------------------------------ 6

Outcome criterion_metric_oracle() {
  Outcome o;
  Rng rng(2024);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 1000; ++i) {
    a.push_back(random_unit(rng));
    // mix of wide and near-parallel pairs
    b.push_back(i % 3 == 0 ? normalized(a.back() + 0.01 * random_unit(rng)) : random_unit(rng));
  }
  std::vector<long double> errs;
  long double sq = 0;
  for (int i = 0; i < 1000; ++i) {
    long double c = std::fabs((long double)a[i].x * b[i].x + (long double)a[i].y * b[i].y +
                              (long double)a[i].z * b[i].z);
    c = std::min<long double>(c, 1.0L);
    errs.push_back(std::acos(c) * 180.0L / std::numbers::pi_v<long double>);
    sq += errs.back() * errs.back();
  }
  const double oracle = static_cast<double>(std::sqrt(sq / 1000));
  const double got = rmse(a, b);
  o.check(std::abs(got - oracle) < 1e-12, fmt("rmse %.15g vs oracle %.15g", got, oracle));

  const auto alphas = default_pgp_alphas();
  const auto curve = pgp_curve(a, b, alphas);
  double worst = 0.0;
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    std::size_t below = 0;
    for (long double e : errs) below += e < alphas[j];
    worst = std::max(worst, std::abs(curve[j] - below / 1000.0));
  }
  o.check(worst < 1e-12, fmt("pgp deviation %.3g", worst));

  bool monotone = true;
  std::vector<double> fine;
  for (int i = 0; i <= 900; ++i) fine.push_back(i * 0.1);
  for (const auto& c : {curve, pgp_curve(a, b, fine), pgp_curve(b, a)})
    for (std::size_t j = 1; j < c.size(); ++j) monotone = monotone && c[j] >= c[j - 1];
  o.check(monotone, "pgp monotonicity");
  o.note(fmt("rmse diff %.1e, pgp diff %.1e, monotone", std::abs(got - oracle), worst));
  return o;
}

// ------------------------------------------------------------------ 7

double sin_loss_of(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  Tape tape;
  ad::Array x({a.size(), 3}), y({b.size(), 3});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      x(i, d) = a[i][d];
      y(i, d) = b[i][d];
    }
  return sin_loss(tape.constant(x), tape.constant(y)).item();
}

std::vector<Vec3> negated(std::vector<Vec3> v) {
  for (Vec3& x : v) x = -1.0 * x;
  return v;
}

Outcome criterion_invariances() {
  Outcome o;
  Rng rng(80);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(random_unit(rng));
    b.push_back(random_unit(rng));
  }
  const double base = sin_loss_of(a, b);
  o.check(sin_loss_of(negated(a), b) == base && sin_loss_of(a, negated(b)) == base &&
              sin_loss_of(negated(a), negated(b)) == base,
          "sin_loss sign flips");

  bool angular = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = angular_error(a[i], b[i]);
    angular = angular && angular_error(-1.0 * a[i], b[i]) == e && angular_error(a[i], -1.0 * b[i]) == e &&
              angular_error(b[i], a[i]) == e && e >= 0.0 && e <= std::numbers::pi / 2 &&
              angular_error(a[i], a[i]) == 0.0 && angular_error(a[i], -1.0 * a[i]) == 0.0;
  }
  o.check(angular, "angular_error identities");

  double worst_perm = 0.0;
  for (Variant v : {Variant::full, Variant::no_transformer, Variant::no_graph_conv, Variant::local_attention}) {
    ModelConfig c = gradcheck_config(v);
    const auto w = init_weights(c, 70);
    const auto pts = random_points(24, 71);
    std::vector<std::size_t> perm(24);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(72));
    std::vector<Vec3> permuted;
    for (std::size_t i : perm) permuted.push_back(pts[i]);
    const auto pa = predict_patch(w, c, prepare_input(pts, c));
    const auto pb = predict_patch(w, c, prepare_input(permuted, c));
    for (std::size_t i = 0; i < 24; ++i) worst_perm = std::max(worst_perm, norm(pb[i] - pa[perm[i]]));
  }
  o.check(worst_perm < 1e-9, fmt("permutation equivariance %.3g", worst_perm));

  const ModelConfig lc = gradcheck_config(Variant::full);
  const auto lw = init_weights(lc, 22);
  const auto lpts = random_points(9, 23);
  const ad::Array x = random_array({9, lc.feature_dim}, 24);
  Tape tape;
  BoundParameters bw(tape, lw, false);
  const Tensor global = layers::transformer_encoder_layer(tape.constant(x), bw, "block0", lc.num_heads);
  const Tensor local =
      layers::local_attention_layer(tape.constant(x), build_patch_graph(lpts, 9), bw, "block0", lc.num_heads);
  double local_diff = 0.0;
  for (std::size_t i = 0; i < global.values().size(); ++i)
    local_diff = std::max(local_diff, std::abs(global.values()[i] - local.values()[i]));
  o.check(local_diff < 1e-12, fmt("local m=k vs global %.3g", local_diff));

  std::vector<Vec3> flipped = b;
  for (std::size_t i = 0; i < flipped.size(); i += 2) flipped[i] = -1.0 * flipped[i];
  o.check(unoriented_errors(a, b) == unoriented_errors(a, flipped) && rmse(a, b) == rmse(a, flipped) &&
              pgp_curve(a, b) == pgp_curve(a, flipped),
          "gt sign flip scoring");
  o.note(fmt("permutation %.1e, local vs global %.1e, sign flips exact", worst_perm, local_diff));
  return o;
}

// ------------------------------------------------------------------ 8

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SNE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::size_t> brute_force(const std::vector<Vec3>& pts, Vec3 q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dx = pts[i].x - q.x, dy = pts[i].y - q.y, dz = pts[i].z - q.z;
    all.push_back({dx * dx + dy * dy + dz * dz, i});
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, pts.size()); ++i) out.push_back(all[i].second);
  return out;
}

Outcome criterion_determinism() {
  Outcome o;
  const auto dir = scratch_dir("acceptance_replay");
  const auto d = [&](const std::string& f) { return (dir / f).string(); };
  const auto same = [&](const std::string& x, const std::string& y, const std::string& what) {
    const std::string a = slurp(d(x)), b = slurp(d(y));
    o.check(!a.empty() && a == b, what);
  };
  const std::string tiny =
      "--blocks 1 --dim 8 --heads 2 --ffn 16 --graph-k 4 --local-k 4 --k 16 --batch 4 --patches 16 --epochs 2 "
      "--lr 1e-3 --shapes sphere,saddle --shape-points 400 --noise-levels 0,0.006 ";

  o.check(run_cli("synth --shape torus --n 2000 --seed 11 --noise 0.006 --out " + d("a")) == 0, "synth");
  o.check(run_cli("synth --config " + d("a.xyz.manifest.json") + " --out " + d("b")) == 0, "synth replay");
  same("a.xyz", "b.xyz", "synth points");
  same("a.normals", "b.normals", "synth normals");

  o.check(run_cli("train " + tiny + "--out " + d("m1.bin")) == 0, "train");
  o.check(run_cli("train --config " + d("m1.bin.manifest.json") + " --out " + d("m2.bin")) == 0, "train replay");
  same("m1.bin", "m2.bin", "checkpoint");
  same("m1.bin.loss.csv", "m2.bin.loss.csv", "loss csv");

  o.check(run_cli("estimate --input " + d("a.xyz") + " --method model --checkpoint " + d("m1.bin") + " --out " +
                  d("e1.normals")) == 0,
          "estimate");
  o.check(run_cli("estimate --config " + d("e1.normals.manifest.json") + " --out " + d("e2.normals")) == 0,
          "estimate replay");
  same("e1.normals", "e2.normals", "estimated normals");

  o.check(run_cli("evaluate --predicted " + d("e1.normals") + " --cloud " + d("a.xyz") + " --report " +
                  d("r1.json")) == 0,
          "evaluate");
  o.check(run_cli("evaluate --config " + d("r1.json.manifest.json") + " --report " + d("r2.json")) == 0,
          "evaluate replay");
  same("r1.json", "r2.json", "report");

  Rng rng(77);
  std::size_t mismatches = 0;
  for (int cloud = 0; cloud < 20; ++cloud) {
    const std::size_t n = 1 + rng.index(3000);
    const auto pts = random_points(n, 500 + cloud, -2.0, 2.0);
    const KnnIndex idx(pts);
    for (int q = 0; q < 50; ++q) {
      const Vec3 query{rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5)};
      const std::size_t k = 1 + rng.index(64);
      mismatches += idx.query(query, k) != brute_force(pts, query, k);
    }
  }
  o.check(mismatches == 0, fmt("%zu kNN mismatches", mismatches));
  o.note("synth/train/estimate/evaluate replays identical, 1000 kNN queries match");
  return o;
}

// ------------------------------------------------------------------ 9

Outcome criterion_overfit() {
  Outcome o;
  const ModelConfig mc;
  SyntheticShape s;
  s.kind = ShapeKind::saddle;
  s.sample_count = 2000;
  s.seed = 2;
  const PointCloud c = generate_synthetic_shape(s);
  const KnnIndex idx(c);
  const TrainingSample sample = make_training_sample(c, idx, 0, 128);
  ad::ParameterSet w = init_weights(mc, 3);
  ad::AdamState adam = ad::AdamState::zeros_like(w);
  double start = 0.0, loss = 0.0;
  int step = 0;
  for (; step <= 500; ++step) {
    const PatchGradient g = patch_gradient(w, mc, sample);
    loss = g.loss;
    if (step == 0) start = loss;
    if (loss < 1e-2 || step == 500) break;
    ad::adam_step(w, g.grads, adam, {.lr = 1e-3});
  }
  o.check(loss < 1e-2, fmt("loss %.4g after %d steps", loss, step));
  o.note(fmt("loss %.4f -> %.4f after %d Adam steps (k=128, F=%zu, %zu blocks)", start, loss, step,
             mc.feature_dim, mc.num_blocks));
  return o;
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> quick{
      {"1 gradient correctness", criterion_gradients},
      {"2 exact-surface oracles", criterion_exact_surfaces},
      {"6 metric oracle", criterion_metric_oracle},
      {"7 invariances", criterion_invariances},
      {"8 determinism", criterion_determinism},
      {"9 single-patch overfit", criterion_overfit},
  };
  std::vector<std::pair<std::string, Outcome>> results;
  const auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };
  for (const auto& [name, f] : quick) {
    std::fprintf(stderr, "running %s\n", name.c_str());
    results.emplace_back(name, guarded(f));
  }

  std::fprintf(stderr, "training comparison models (%zu threads)\n", kThreads);
  Outcome o3, o4, o5;
  try {
    const Comparison cmp = train_comparison();
    const Scores clean = score(cmp, 0.0);
    const Scores noisy = score(cmp, 0.006);
    o3 = guarded([&] { return criterion_sphere(cmp, clean); });
    o4 = criterion_noise_ordering(noisy);
    o5 = criterion_zero_noise_ablation(clean);
  } catch (const std::exception& e) {
    o3 = o4 = o5 = Outcome{false, std::string("exception: ") + e.what()};
  }
  results.emplace_back("3 sphere and torus sanity", o3);
  results.emplace_back("4 noise-robustness ordering", o4);
  results.emplace_back("5 zero-noise ablation ordering", o5);
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  int failed = 0;
  for (const auto& [name, o] : results) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << "criterion " << name << ": " << o.detail << '\n';
    failed += !o.pass;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}
