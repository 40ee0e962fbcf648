#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "sne/evaluation.hpp"
#include "sne/synthetic.hpp"

namespace sne {

/// Column label and model variant of each ablation column.
inline const std::vector<std::pair<std::string, Variant>>& ablation_variants() {
  static const std::vector<std::pair<std::string, Variant>> v{{"full", Variant::full},
                                                               {"no_transformer", Variant::no_transformer},
                                                               {"no_gc", Variant::no_graph_conv},
                                                               {"local_attention", Variant::local_attention}};
  return v;
}

struct AblationRow {
  std::string label;
  CorruptionSpec corruption;
};

inline std::string percent_label(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", fraction * 100.0);
  return buf;
}

/// One row per noise level, then one per density mode (noise-free).
inline std::vector<AblationRow> ablation_rows(const std::vector<double>& noise_levels,
                                              const std::vector<DensityMode>& density_modes) {
  std::vector<AblationRow> rows;
  for (double n : noise_levels) {
    AblationRow r{"noise " + percent_label(n), {}};
    r.corruption.noise_sigma_fraction = n;
    rows.push_back(r);
  }
  for (DensityMode m : density_modes) {
    AblationRow r{to_string(m), {}};
    r.corruption.density_mode = m;
    rows.push_back(r);
  }
  return rows;
}

struct AblationCell {
  double mean_rmse = 0.0;    // average of per-cloud RMSE
  double pooled_rmse = 0.0;  // all points together
};

struct AblationTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<AblationCell>> cells;  // [row][column]

  /// Fixed-width text; values are mean per-cloud RMSE in degrees.
  std::string to_text() const {
    std::ostringstream s;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-16s", "RMSE (deg)");
    s << buf;
    for (const auto& c : columns) {
      std::snprintf(buf, sizeof buf, " %16s", c.c_str());
      s << buf;
    }
    s << '\n';
    std::vector<double> sums(columns.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::snprintf(buf, sizeof buf, "%-16s", rows[r].c_str());
      s << buf;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        std::snprintf(buf, sizeof buf, " %16.2f", cells[r][c].mean_rmse);
        s << buf;
        sums[c] += cells[r][c].mean_rmse;
      }
      s << '\n';
    }
    if (!rows.empty()) {
      std::snprintf(buf, sizeof buf, "%-16s", "average");
      s << buf;
      for (double v : sums) {
        std::snprintf(buf, sizeof buf, " %16.2f", v / static_cast<double>(rows.size()));
        s << buf;
      }
      s << '\n';
    }
    return s.str();
  }

  std::string to_csv() const {
    std::ostringstream s;
    s << "row,column,mean_rmse_degrees,pooled_rmse_degrees\n";
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < columns.size(); ++c)
        s << rows[r] << ',' << columns[c] << ',' << detail::format_double(cells[r][c].mean_rmse) << ','
          << detail::format_double(cells[r][c].pooled_rmse) << '\n';
    return s.str();
  }
};

struct AblationOptions {
  std::size_t stride = 1;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  std::size_t min_patch_size = 1;  // guard for density thinning
};

/// Corrupts every clean test cloud per row (seeded by row and cloud) and
/// scores every estimator on the result.
inline AblationTable run_ablation(const std::vector<PointCloud>& clean, const std::vector<AblationRow>& rows,
                                  const std::vector<NormalEstimator>& estimators, const AblationOptions& options) {
  AblationTable t;
  for (const auto& e : estimators) t.columns.push_back(e.method);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    t.rows.push_back(rows[r].label);
    std::vector<std::vector<EvalReport>> per_column(estimators.size());
    for (std::size_t c = 0; c < clean.size(); ++c) {
      CorruptionSpec spec = rows[r].corruption;
      spec.seed = derive_seed(options.seed, r, c);
      const PointCloud cloud = apply_corruption(clean[c], spec, options.min_patch_size);
      EvalOptions eo;
      eo.stride = options.stride;
      eo.threads = options.threads;
      eo.corruption = spec.label();
      for (std::size_t e = 0; e < estimators.size(); ++e)
        per_column[e].push_back(evaluate_cloud(cloud, estimators[e], eo));
    }
    std::vector<AblationCell> row;
    for (const auto& reports : per_column) row.push_back({mean_rmse_degrees(reports), pooled_rmse_degrees(reports)});
    t.cells.push_back(std::move(row));
  }
  return t;
}

}  // namespace sne
