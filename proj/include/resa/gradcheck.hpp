#pragma once

// Central finite-difference checks of the analytic backward passes (64-bit).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resa/random.hpp"
#include "resa/tensor.hpp"

namespace resa {

struct GradcheckOptions {
  double step = 1e-6;
  int max_coords = 256;  // per tensor; larger tensors are sampled
};

struct GradcheckResult {
  std::string name;
  double rel_error = 0.0;  // |numeric - analytic| / max(|numeric|, |analytic|) in the 2-norm
  double tolerance = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates whose step straddles a kink (non-smooth point)
  bool passed() const { return rel_error < tolerance && skipped * 10 <= checked + skipped; }
};

struct GradTarget {
  Tensor<double>* value;
  const Tensor<double>* analytic;
};

/// f must read the current contents of every target tensor. Coordinates
/// whose step-h and step-h/2 central differences disagree, or whose forward
/// and backward one-sided slopes disagree (a ReLU or max kink inside the
/// step or on the point itself), are skipped and counted.
GradcheckResult check_gradient(const std::string& name, const std::function<double()>& f,
                               const std::vector<GradTarget>& targets, double tolerance, Rng& rng,
                               const GradcheckOptions& opt = {});

/// Scopes: "tensor", "resa", "busd", "model"; "all" runs every scope.
std::vector<GradcheckResult> run_gradcheck_scope(const std::string& scope, std::uint64_t seed,
                                                 const GradcheckOptions& opt = {});

}  // namespace resa
