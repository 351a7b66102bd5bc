// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/autodiff.hpp"
#include "datadream/rng.hpp"
#include "datadream/types.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace datadream::testing {

// Rebuilds the loss graph from current parameter values; must return a 1x1
// variable. Used both for the analytic pass and for finite differences.
using LossBuilder = std::function<ag::Variable<double>()>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string worst_param;
};

// Central finite differences against one reverse pass, in double precision.
inline GradCheckResult check_gradients(const LossBuilder& build,
                                       std::vector<ag::Variable<double>> params,
                                       const std::vector<std::string>& names, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  auto loss = build();
  ag::backward(loss);

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (Index i = 0; i < p.rows(); ++i) {
      for (Index j = 0; j < p.cols(); ++j) {
        const double orig = p.value()(i, j);
        p.value()(i, j) = orig + h;
        double fp, fm;
        {
          ag::NoGradGuard ng;
          fp = build().value()(0, 0);
          p.value()(i, j) = orig - h;
          fm = build().value()(0, 0);
        }
        p.value()(i, j) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = p.has_grad() ? p.grad()(i, j) : 0.0;
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        const double rel = std::abs(numeric - analytic) / denom;
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst_analytic = analytic;
          res.worst_numeric = numeric;
          res.worst_param = names.size() > pi ? names[pi] : std::to_string(pi);
        }
      }
    }
  }
  return res;
}

// Scratch directory unique to a test, cleaned on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("datadream_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace datadream::testing
