#include "vqcpc/gradcheck.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vqcpc {

template <typename S>
Tensor<S> finite_difference_gradient(const std::function<S(const Tensor<S>&)>& f,
                                     const Tensor<S>& x, S eps) {
  if (eps <= 0) throw std::invalid_argument("finite_difference_gradient: eps <= 0");
  Tensor<S> g(x.shape());
  Tensor<S> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S saved = probe[i];
    probe[i] = saved + eps;
    const S fp = f(probe);
    probe[i] = saved - eps;
    const S fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_difference_gradient: non-finite evaluation");
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

template <typename S>
std::string GradcheckReport<S>::to_string() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " over " << coordinates
     << " coordinates; max rel err " << max_rel_err << ", max abs err " << max_abs_err;
  if (!pass)
    os << "; worst: " << worst_param << "[" << worst_index << "] tape=" << worst_tape
       << " fd=" << worst_fd;
  return os.str();
}

template <typename S>
GradcheckReport<S> gradcheck_params(const std::function<Var<S>()>& loss_builder,
                                    const std::vector<NamedParam<S>>& params,
                                    S rel_tol, S eps) {
  // Base pass: record stop-gradient values / discrete choices, take the
  // tape gradient.
  FreezeLog<S> log(FreezeLog<S>::Mode::record);
  std::vector<Tensor<S>> tape_grads;
  {
    FreezeScope<S> scope(log);
    Var<S> loss = loss_builder();
    if (loss.value().size() != 1)
      throw std::invalid_argument("gradcheck: loss must be scalar");
    for (const auto& p : params) p.var.node()->grad = Tensor<S>();
    backward(loss);
    for (const auto& p : params) {
      const Tensor<S>& g = p.var.grad();
      tape_grads.push_back(g.size() == p.var.value().size() ? g
                                                            : Tensor<S>(p.var.value().shape()));
    }
  }

  log.set_mode(FreezeLog<S>::Mode::replay);
  auto eval_frozen = [&]() -> S {
    log.rewind();
    FreezeScope<S> scope(log);
    Var<S> loss = loss_builder();
    const S v = loss.value()[0];
    if (!std::isfinite(v)) throw std::runtime_error("gradcheck: non-finite evaluation");
    return v;
  };

  GradcheckReport<S> report;
  const S abs_fallback = S(1e-8);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    // The builder reads this parameter by reference, so in-place
    // perturbation is visible to the replayed forwards.
    Tensor<S>& w = const_cast<Var<S>&>(params[pi].var).mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const S saved = w[i];
      w[i] = saved + eps;
      const S fp = eval_frozen();
      w[i] = saved - eps;
      const S fm = eval_frozen();
      w[i] = saved;
      const S fd = (fp - fm) / (2 * eps);
      const S tape = tape_grads[pi][i];
      const S abs_err = std::abs(tape - fd);
      const S denom = std::max(std::abs(tape), std::abs(fd));
      const S rel = denom > 0 ? abs_err / denom : S(0);
      ++report.coordinates;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      const bool ok = abs_err <= abs_fallback || rel < rel_tol;
      if (rel > report.max_rel_err && abs_err > abs_fallback) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
        report.worst_index = i;
        report.worst_tape = tape;
        report.worst_fd = fd;
      }
      if (!ok) report.pass = false;
    }
  }
  return report;
}

template <typename S>
GradcheckReport<S> gradcheck(const std::function<Var<S>(const Var<S>&)>& f,
                             const Tensor<S>& x, S rel_tol, S eps) {
  Var<S> xv = Var<S>::leaf(x, true);
  std::vector<NamedParam<S>> params = {{"x", xv}};
  return gradcheck_params<S>([&]() { return f(xv); }, params, rel_tol, eps);
}

#define VQCPC_GC_INSTANTIATE(S)                                                       \
  template Tensor<S> finite_difference_gradient<S>(                                   \
      const std::function<S(const Tensor<S>&)>&, const Tensor<S>&, S);                \
  template struct GradcheckReport<S>;                                                 \
  template GradcheckReport<S> gradcheck<S>(const std::function<Var<S>(const Var<S>&)>&, \
                                           const Tensor<S>&, S, S);                   \
  template GradcheckReport<S> gradcheck_params<S>(const std::function<Var<S>()>&,     \
                                                  const std::vector<NamedParam<S>>&,  \
                                                  S, S);

VQCPC_GC_INSTANTIATE(float)
VQCPC_GC_INSTANTIATE(double)

#undef VQCPC_GC_INSTANTIATE

}  // namespace vqcpc
