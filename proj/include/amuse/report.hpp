// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/experiments.hpp"

namespace amuse {

/// Fixed-precision text for CSV cells; NaN (unmeasured) becomes an empty cell.
inline std::string fmt(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader =
    "step,train_loss,eval_loss,rdom_update,rdom_grad,rdom_momentum,rdom_orth,update_norm,cos_prev,beta,omega,lr";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << fmt(r.train_loss) << ',' << fmt(r.eval_loss) << ',' << fmt(r.rdom_update) << ','
       << fmt(r.rdom_grad) << ',' << fmt(r.rdom_momentum) << ',' << fmt(r.rdom_orth) << ',' << fmt(r.update_norm)
       << ',' << fmt(r.cos_prev) << ',' << fmt(r.beta) << ',' << fmt(r.omega) << ',' << fmt(r.lr) << '\n';
  }
}

inline constexpr const char* kAlphaHeader = "step,alpha,rdom_grad,grad_norm,loss";

inline void write_alpha_csv(std::ostream& os, const std::vector<AlphaRow>& rows) {
  os << kAlphaHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << fmt(r.alpha) << ',' << fmt(r.rdom_grad) << ',' << fmt(r.grad_norm) << ',' << fmt(r.loss)
       << '\n';
  }
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  write_metrics_csv(os, rows);
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// "{experiment}-{optimizer}-{seed}" + suffix
inline std::string run_file_name(const std::string& experiment, const std::string& optimizer, std::uint64_t seed,
                                 const std::string& suffix) {
  return experiment + "-" + optimizer + "-" + std::to_string(seed) + suffix;
}

}  // namespace amuse
