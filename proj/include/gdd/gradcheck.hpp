#pragma once
// Central-difference gradient verification: the one oracle the autodiff
// engine is judged against everywhere.
#include <functional>
#include <vector>

#include "gdd/tensor.hpp"

namespace gdd {

using ScalarFn = std::function<TensorPtr(const std::vector<TensorPtr>&)>;

// Runs f once under a fresh tape for analytic gradients, then perturbs every
// coordinate of every requires_grad input by +/-h and compares
// (f(x+h) - f(x-h)) / 2h against the tape's adjoint. Returns the worst
// relative error, denominator max(|analytic|, |numeric|, 1e-8).
//
// f must be deterministic (re-seed any rng it uses per call) and must return
// a scalar. Must be called with no tape active: the probing forwards are
// meant to be pure evaluations.
double check_gradients(const ScalarFn& f, const std::vector<TensorPtr>& inputs, double h = 1e-5);

}  // namespace gdd
