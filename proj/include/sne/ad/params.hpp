#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sne/ad/tape.hpp"
#include "sne/error.hpp"

namespace sne::ad {

struct Parameter {
  std::string name;
  Array value;
};

/// Named parameter arrays in a fixed insertion order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Array value) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    index_.emplace(name, items_.size());
    items_.push_back({std::move(name), std::move(value)});
    return items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) { return items_[position(name)]; }
  const Parameter& at(const std::string& name) const { return items_[position(name)]; }

  std::size_t position(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  Parameter& operator[](std::size_t i) { return items_[i]; }
  const Parameter& operator[](std::size_t i) const { return items_[i]; }

  /// True if every name, shape, and value matches bit for bit.
  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].value.shape != b[i].value.shape ||
          a[i].value.data != b[i].value.data)
        return false;
    return true;
  }

 private:
  std::vector<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-parameter first/second moment accumulators.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long long step = 0;

  static AdamState zeros_like(const ParameterSet& params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.value.size(), 0.0);
      s.second_moment.emplace_back(p.value.size(), 0.0);
    }
    return s;
  }
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. `grads[i]` pairs with `params[i]`.
inline void adam_step(ParameterSet& params, const std::vector<std::vector<double>>& grads,
                      AdamState& state, const AdamOptions& opt) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw InvalidArgument("adam_step: parameter, gradient, and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].size() != params[i].value.size() || state.first_moment[i].size() != grads[i].size() ||
        state.second_moment[i].size() != grads[i].size())
      throw InvalidArgument("adam_step: shape mismatch for '" + params[i].name + "'");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.data;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

/// Parameters bound as tracked leaves on one tape, in ParameterSet order.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool track_gradients = true) : params_(&params) {
    leaves_.reserve(params.size());
    for (const auto& p : params)
      leaves_.push_back(track_gradients ? tape.variable(p.value) : tape.constant(p.value));
  }

  const Tensor& operator[](const std::string& name) const { return leaves_[params_->position(name)]; }
  const Tensor& operator[](std::size_t i) const { return leaves_[i]; }
  std::size_t size() const { return leaves_.size(); }

  /// Copies of the leaf gradients after a backward sweep (zeros when a
  /// parameter did not influence the loss).
  std::vector<std::vector<double>> gradients() const {
    std::vector<std::vector<double>> out;
    out.reserve(leaves_.size());
    for (const Tensor& t : leaves_) {
      if (t.grad().size() == t.size())
        out.push_back(t.grad());
      else
        out.emplace_back(t.size(), 0.0);
    }
    return out;
  }

 private:
  const ParameterSet* params_;
  std::vector<Tensor> leaves_;
};

}  // namespace sne::ad
