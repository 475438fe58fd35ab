#include "vqcpc/quantizer.hpp"

#include <cmath>
#include <stdexcept>

#include "vqcpc/rng.hpp"

namespace vqcpc {

namespace {

template <typename S>
int nearest_centroid(const S* x, const Tensor<S>& centroids, S* dist_out) {
  const std::size_t c = centroids.dim(0), d = centroids.dim(1);
  int best = 0;
  S best_d = 0;
  for (std::size_t k = 0; k < c; ++k) {
    S acc = 0;
    const S* row = centroids.data() + k * d;
    for (std::size_t j = 0; j < d; ++j) {
      const S diff = x[j] - row[j];
      acc += diff * diff;
    }
    if (k == 0 || acc < best_d) {
      best_d = acc;
      best = static_cast<int>(k);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace

template <typename S>
Assignment<S> quantize(const std::vector<S>& x, const Codebook<S>& book) {
  const Tensor<S>& c = book.centroids.value();
  if (x.size() != c.dim(1))
    throw std::invalid_argument("quantize: input dimension " + std::to_string(x.size()) +
                                " != centroid dimension " + std::to_string(c.dim(1)));
  Assignment<S> a;
  a.index = nearest_centroid(x.data(), c, &a.distance);
  a.centroid.assign(c.data() + a.index * c.dim(1), c.data() + (a.index + 1) * c.dim(1));
  return a;
}

template <typename S>
std::vector<int> quantize_batch(const Tensor<S>& x, const Tensor<S>& centroids) {
  if (x.rank() != 2 || centroids.rank() != 2 || x.dim(1) != centroids.dim(1))
    throw std::invalid_argument("quantize_batch: dimension mismatch");
  std::vector<int> idx(x.dim(0));
  for (std::size_t i = 0; i < x.dim(0); ++i)
    idx[i] = nearest_centroid(x.data() + i * x.dim(1), centroids, static_cast<S*>(nullptr));
  if (auto* log = FreezeLog<S>::active()) idx = log->freeze_choice(idx);
  return idx;
}

template <typename S>
Var<S> straight_through(const Var<S>& x, const Var<S>& centroids) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& cv = centroids.value();
  const std::vector<int> idx = quantize_batch(xv, cv);
  const std::size_t b = xv.dim(0), d = xv.dim(1);
  Tensor<S> out({b, d});

  auto* log = FreezeLog<S>::active();
  if (log && log->mode() == FreezeLog<S>::Mode::replay) {
    // Central-difference evaluation: the quantization offset sg[c(x) - x]
    // is held at its base value, so the output moves one-for-one with x.
    Tensor<S> offset({b, d});
    offset = log->freeze_value(offset);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + offset[i];
  } else {
    for (std::size_t i = 0; i < b; ++i)
      std::copy(cv.data() + idx[i] * d, cv.data() + (idx[i] + 1) * d, out.data() + i * d);
    if (log) {
      Tensor<S> offset({b, d});
      for (std::size_t i = 0; i < out.size(); ++i) offset[i] = out[i] - xv[i];
      log->freeze_value(offset);
    }
  }

  auto n = std::make_shared<Node<S>>();
  n->value = std::move(out);
  n->parents = {x.node()};
  n->requires_grad = x.requires_grad();
  if (n->requires_grad)
    n->backprop = [](Node<S>& self) { self.parents[0]->accumulate(self.grad); };
  return Var<S>(n);
}

template <typename S>
Var<S> vq_loss(const Var<S>& x, const Var<S>& centroids, S beta,
               const std::vector<int>& assignments) {
  if (x.value().rank() != 2 || x.value().dim(0) == 0)
    throw std::invalid_argument("vq_loss: empty batch");
  if (assignments.size() != x.value().dim(0))
    throw std::invalid_argument("vq_loss: assignment count mismatch");
  const S inv_b = S(1) / static_cast<S>(x.value().dim(0));
  Var<S> picked = gather_rows(centroids, assignments);
  Var<S> d1 = sub(stop_gradient(x), picked);
  Var<S> codebook_term = scalar_mul(sum_all(mul(d1, d1)), inv_b);
  Var<S> d2 = sub(x, stop_gradient(picked));
  Var<S> commit_term = scalar_mul(sum_all(mul(d2, d2)), beta * inv_b);
  return add(codebook_term, commit_term);
}

template <typename S>
Var<S> vq_loss(const Var<S>& x, const Codebook<S>& book) {
  const std::vector<int> idx = quantize_batch(x.value(), book.centroids.value());
  return vq_loss(x, book.centroids, book.beta, idx);
}

UsageStats usage_stats(const std::vector<int>& assignments, std::size_t codebook_size) {
  if (assignments.empty()) throw std::invalid_argument("usage_stats: empty input");
  UsageStats s;
  s.counts.assign(codebook_size, 0);
  for (int a : assignments) {
    if (a < 0 || static_cast<std::size_t>(a) >= codebook_size)
      throw std::out_of_range("usage_stats: code out of range");
    ++s.counts[a];
  }
  const double total = static_cast<double>(assignments.size());
  double entropy = 0;
  for (std::size_t c = 0; c < codebook_size; ++c) {
    if (s.counts[c] == 0) continue;
    const double p = static_cast<double>(s.counts[c]) / total;
    entropy -= p * std::log(p);
  }
  s.perplexity = std::exp(entropy);
  return s;
}

template <typename S>
Tensor<S> init_codebook(const Tensor<S>& samples, std::size_t codebook_size,
                        std::uint64_t seed) {
  if (samples.rank() != 2 || samples.dim(0) < codebook_size)
    throw std::invalid_argument("init_codebook: need at least " +
                                std::to_string(codebook_size) + " samples");
  Rng rng(seed);
  const auto rows = rng.sample_without_replacement(samples.dim(0), codebook_size);
  const std::size_t d = samples.dim(1);
  Tensor<S> out({codebook_size, d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(samples.data() + rows[i] * d, samples.data() + (rows[i] + 1) * d,
              out.data() + i * d);
  return out;
}

#define VQCPC_Q_INSTANTIATE(S)                                                        \
  template struct Assignment<S>;                                                      \
  template struct Codebook<S>;                                                        \
  template Assignment<S> quantize<S>(const std::vector<S>&, const Codebook<S>&);      \
  template std::vector<int> quantize_batch<S>(const Tensor<S>&, const Tensor<S>&);    \
  template Var<S> straight_through<S>(const Var<S>&, const Var<S>&);                  \
  template Var<S> vq_loss<S>(const Var<S>&, const Var<S>&, S, const std::vector<int>&); \
  template Var<S> vq_loss<S>(const Var<S>&, const Codebook<S>&);                      \
  template Tensor<S> init_codebook<S>(const Tensor<S>&, std::size_t, std::uint64_t);

VQCPC_Q_INSTANTIATE(float)
VQCPC_Q_INSTANTIATE(double)

#undef VQCPC_Q_INSTANTIATE

}  // namespace vqcpc
