#ifndef VQCPC_AUTODIFF_HPP
#define VQCPC_AUTODIFF_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vqcpc/rng.hpp"
#include "vqcpc/tensor.hpp"

namespace vqcpc {

/// Reverse-mode tape built define-by-run: every operation appends a node
/// holding its forward value, its parents, and the adjoint rule that
/// accumulates into the parents' gradients. backward() replays the recorded
/// graph in reverse topological order.
template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<S>(value.shape());
  }
  void accumulate(const Tensor<S>& g) {
    ensure_grad();
    const S* src = g.data();
    S* dst = grad.data();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
  }
};

template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<S> value, bool requires_grad) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Tensor<S>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() {
    if (!node_) return;
    node_->grad = Tensor<S>();
  }
  const std::shared_ptr<Node<S>>& node() const { return node_; }

  S scalar() const { return node_->value[0]; }

 private:
  std::shared_ptr<Node<S>> node_;
};

/// Runs the recorded adjoint rules backward from a scalar root. Gradients
/// accumulate in every reachable node that requires them.
template <typename S>
void backward(const Var<S>& root);

// ---------------------------------------------------------------------------
// Stop-gradient freezing support for finite differences.
//
// The straight-through estimator gives some operations a surrogate gradient:
// the tape differentiates the forward map with every stop-gradient argument
// (and every argmin choice) treated as a constant. To let central
// differences check that surrogate, gradcheck evaluates the perturbed
// forwards in "replay" mode, where stop_gradient and recorded discrete
// choices return the values captured at the base point.
// ---------------------------------------------------------------------------
template <typename S>
class FreezeLog {
 public:
  enum class Mode { record, replay };

  static FreezeLog*& active();

  explicit FreezeLog(Mode m) : mode_(m) {}

  void rewind() { value_cursor_ = choice_cursor_ = 0; }
  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

  Tensor<S> freeze_value(const Tensor<S>& fresh);
  std::vector<int> freeze_choice(const std::vector<int>& fresh);

 private:
  Mode mode_;
  std::vector<Tensor<S>> values_;
  std::vector<std::vector<int>> choices_;
  std::size_t value_cursor_ = 0;
  std::size_t choice_cursor_ = 0;
};

/// RAII activation of a freeze log on this thread.
template <typename S>
class FreezeScope {
 public:
  explicit FreezeScope(FreezeLog<S>& log) : prev_(FreezeLog<S>::active()) {
    FreezeLog<S>::active() = &log;
  }
  ~FreezeScope() { FreezeLog<S>::active() = prev_; }

 private:
  FreezeLog<S>* prev_;
};

// ---------------------------------------------------------------------------
// Operations. Unless noted, shapes must match exactly and the result lives
// on the tape with adjoint rules for every differentiable argument.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> constant(Tensor<S> value);

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> neg(const Var<S>& a);
template <typename S>
Var<S> scalar_mul(const Var<S>& a, S c);
template <typename S>
Var<S> scalar_add(const Var<S>& a, S c);

/// a: [..., H] plus bias [H], broadcast over leading dims.
template <typename S>
Var<S> add_bias(const Var<S>& a, const Var<S>& bias);

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// [B,M,K] x [B,K,N] -> [B,M,N]
template <typename S>
Var<S> matmul_batched(const Var<S>& a, const Var<S>& b);

template <typename S>
Var<S> transpose2(const Var<S>& a);
/// rank-3 permutation, perm is a permutation of {0,1,2}
template <typename S>
Var<S> permute3(const Var<S>& a, const std::array<int, 3>& perm);

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<std::size_t> shape);

/// [R, C_i] blocks side by side -> [R, sum C_i]
template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts);
template <typename S>
Var<S> slice_cols(const Var<S>& a, std::size_t begin, std::size_t len);

/// table: [V, E], indices in [0, V) -> [N, E]
template <typename S>
Var<S> gather_rows(const Var<S>& table, const std::vector<int>& indices);

/// out[i] = src.flat[index_map[i]]; index_map entries of -1 produce 0 and
/// route no gradient. The map must be valid for src's flat size.
template <typename S>
Var<S> gather_flat(const Var<S>& src, std::shared_ptr<const std::vector<long>> index_map,
                   std::vector<std::size_t> out_shape);

template <typename S>
Var<S> sigmoid(const Var<S>& a);
template <typename S>
Var<S> tanh_(const Var<S>& a);
template <typename S>
Var<S> relu(const Var<S>& a);
template <typename S>
Var<S> exp_(const Var<S>& a);
template <typename S>
Var<S> log_(const Var<S>& a);

template <typename S>
Var<S> sum_all(const Var<S>& a);
template <typename S>
Var<S> mean_all(const Var<S>& a);

/// logits: [..., T, C]; mask (if non-null): row-major T x C, 1 = attend.
/// Softmax over the last dim with masked entries excluded; a fully masked
/// row yields all zeros.
template <typename S>
Var<S> masked_softmax(const Var<S>& logits, std::shared_ptr<const std::vector<std::uint8_t>> mask);

/// logits: [B, V]; targets: length B, entries in [0, V) or -1 to skip the
/// row. Mean negative log-likelihood over the kept rows.
template <typename S>
Var<S> cross_entropy_logits(const Var<S>& logits, std::shared_ptr<const std::vector<int>> targets);

/// Soft-target cross entropy: mean over rows of -sum_j p[j] log softmax(x)[j].
template <typename S>
Var<S> cross_entropy_soft(const Var<S>& logits, Tensor<S> target_probs);

/// Forward identity; adjoint contribution through this edge is exactly zero.
/// Under an active FreezeLog the output is recorded (record) or replayed
/// from the base point (replay).
template <typename S>
Var<S> stop_gradient(const Var<S>& a);

/// Inverted dropout. Identity when training == false or rate == 0.
template <typename S>
Var<S> dropout(const Var<S>& a, double rate, Rng& rng, bool training);

/// x: [R, C] normalized per row; gamma, beta: [C].
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));

/// One-step global toggle: when on, every op validates its output for
/// non-finite values and throws. Off by default; training loops check the
/// loss each step instead.
void set_finite_checks(bool on);
bool finite_checks_on();

template <typename S>
void check_finite(const Tensor<S>& t, const char* where);

}  // namespace vqcpc

#endif
