#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskdepth/common.hpp"

namespace maskdepth {

/// One property check. `measured` is the worst observed error (or violation
/// count) and `threshold` the bound it was held to.
struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct MaskingSuiteOptions {
  int oracle_configs = 100;
  int partitions = 10000;
  std::uint64_t seed = 7;
};

/// Subset-independence oracle (fp32 and fp64), K=1 neutrality, partition invariants.
std::vector<CheckResult> verify_masking(const MaskingSuiteOptions& options = {});

/// Central finite differences at fp64 for every loss and a tiny end-to-end
/// model, plus the stop-gradient contract.
std::vector<CheckResult> verify_gradcheck(std::uint64_t seed = 11);

/// Vectorized metrics against the per-pixel loop and analytic cases.
std::vector<CheckResult> verify_metrics(std::uint64_t seed = 13);

/// Relative error ||a - n|| / max(||a||, ||n||, floor).
double relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric, double floor = 1e-7);

/// Central difference of `f` w.r.t. each entry of `x` (perturbed in place and restored).
Matrix<double> numeric_gradient(const std::function<double()>& f, Matrix<double>& x, double h = 1e-6);

}  // namespace maskdepth
