#ifndef VQCPC_QUANTIZER_HPP
#define VQCPC_QUANTIZER_HPP

#include <cstdint>
#include <vector>

#include "vqcpc/autodiff.hpp"
#include "vqcpc/tensor.hpp"

namespace vqcpc {

/// Nearest-centroid assignment. distance is the squared Euclidean distance
/// to the selected centroid.
template <typename S>
struct Assignment {
  int index = 0;
  std::vector<S> centroid;
  S distance = 0;
};

/// Trainable codebook: C centroids in a d_z-dimensional space plus the
/// commitment coefficient. The centroid matrix is a [C, d_z] leaf on the
/// tape so the quantization loss can move it.
template <typename S>
struct Codebook {
  Var<S> centroids;  // [C, d_z]
  S beta = S(0.25);

  Codebook() = default;
  Codebook(Var<S> c, S b) : centroids(std::move(c)), beta(b) {
    if (centroids.value().rank() != 2 || centroids.value().dim(0) < 2)
      throw std::invalid_argument("Codebook: need a [C >= 2, d_z] centroid matrix");
  }

  std::size_t size() const { return centroids.value().dim(0); }
  std::size_t dim() const { return centroids.value().dim(1); }
};

/// argmin over centroids of the squared Euclidean distance; ties broken by
/// the lowest index.
template <typename S>
Assignment<S> quantize(const std::vector<S>& x, const Codebook<S>& book);

/// Batch assignment for x: [B, d_z]. Participates in the freeze log so that
/// finite differences hold the assignments at their base values.
template <typename S>
std::vector<int> quantize_batch(const Tensor<S>& x, const Tensor<S>& centroids);

/// Eq.-6 straight-through output: the forward value is bit-equal to the
/// assigned centroid; the adjoint w.r.t. x is the identity and no gradient
/// reaches the centroids through this edge.
template <typename S>
Var<S> straight_through(const Var<S>& x, const Var<S>& centroids);

/// Mean over the batch of d(sg[x], c(x)) + beta * d(x, sg[c(x)]) with d the
/// squared Euclidean distance. assignments must come from quantize_batch on
/// the same rows.
template <typename S>
Var<S> vq_loss(const Var<S>& x, const Var<S>& centroids, S beta,
               const std::vector<int>& assignments);

template <typename S>
Var<S> vq_loss(const Var<S>& x, const Codebook<S>& book);

struct UsageStats {
  std::vector<std::size_t> counts;
  double perplexity = 0;  // exp(entropy) of the empirical code distribution
};

UsageStats usage_stats(const std::vector<int>& assignments, std::size_t codebook_size);

/// Centroids drawn without replacement from the sample rows, seeded.
template <typename S>
Tensor<S> init_codebook(const Tensor<S>& samples, std::size_t codebook_size,
                        std::uint64_t seed);

}  // namespace vqcpc

#endif
