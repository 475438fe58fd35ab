#ifndef VQCPC_GRADCHECK_HPP
#define VQCPC_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "vqcpc/autodiff.hpp"
#include "vqcpc/nn.hpp"
#include "vqcpc/tensor.hpp"

namespace vqcpc {

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). Throws if any
/// evaluation is non-finite. Meant to run in double precision.
template <typename S>
Tensor<S> finite_difference_gradient(const std::function<S(const Tensor<S>&)>& f,
                                     const Tensor<S>& x, S eps);

template <typename S>
struct GradcheckReport {
  bool pass = true;
  S max_rel_err = 0;      // worst relative error over all checked coordinates
  S max_abs_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  S worst_tape = 0, worst_fd = 0;
  std::size_t coordinates = 0;

  std::string to_string() const;
};

/// Compares the tape gradient of f against central differences of the same
/// forward map with every stop-gradient argument and recorded discrete
/// choice (nearest-centroid assignments, dropout masks) held at their
/// base-point values. A coordinate passes when the relative error is below
/// rel_tol, with an absolute fallback of 1e-8 near zero.
template <typename S>
GradcheckReport<S> gradcheck(const std::function<Var<S>(const Var<S>&)>& f,
                             const Tensor<S>& x, S rel_tol, S eps = S(1e-5));

/// Same contract over a set of named parameters; loss_builder must read the
/// parameter Vars by reference and be deterministic.
template <typename S>
GradcheckReport<S> gradcheck_params(const std::function<Var<S>()>& loss_builder,
                                    const std::vector<NamedParam<S>>& params,
                                    S rel_tol, S eps = S(1e-5));

}  // namespace vqcpc

#endif
