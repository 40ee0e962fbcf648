#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sne/ad/params.hpp"
#include "sne/ad/tape.hpp"

namespace sne::ad {

/// Builds a scalar loss on `tape` from parameters bound as leaves.
using LossBuilder = std::function<Tensor(Tape&, const BoundParameters&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients against central differences
/// (f(p+h) - f(p-h)) / 2h on every scalar parameter. The relative error of a
/// coordinate is |a - n| / max(|a|, |n|, floor), floor 1e-8 by default.
///
/// Non-smooth points (relu kinks, max ties) make the comparison meaningless;
/// callers nudge inputs away from them.
inline GradCheckResult finite_difference_check(const LossBuilder& f, ParameterSet params, double h = 1e-5,
                                               double floor = 1e-8) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    BoundParameters bound(tape, params);
    Tensor loss = f(tape, bound);
    tape.backward(loss);
    analytic = bound.gradients();
  }
  auto evaluate = [&] {
    Tape tape;
    BoundParameters bound(tape, params);
    return f(tape, bound).item();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& values = params[p].value.data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > result.max_relative_error) {
        result = {err, params[p].name, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace sne::ad
