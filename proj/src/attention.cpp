#include "vqcpc/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace vqcpc {

AttentionMask build_mask(MaskKind kind, std::size_t n) {
  if (n == 0) throw std::invalid_argument("build_mask: n must be >= 1");
  auto allow = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) {
      bool a = false;
      switch (kind) {
        case MaskKind::causal: a = k <= q; break;
        case MaskKind::anticausal: a = k >= q; break;
        case MaskKind::diagonal_cross: a = k == q; break;
        case MaskKind::full: a = true; break;
      }
      (*allow)[q * n + k] = a ? 1 : 0;
    }
  AttentionMask m;
  m.kind = kind;
  m.size = n;
  m.allow = std::move(allow);
  return m;
}

std::size_t relative_table_rows(MaskKind kind, std::size_t max_len) {
  switch (kind) {
    case MaskKind::causal:
    case MaskKind::anticausal:
      return max_len;
    case MaskKind::full:
      return 2 * max_len - 1;
    case MaskKind::diagonal_cross:
      return 1;
  }
  return max_len;
}

namespace {

struct RelWindow {
  long first_row;   // first table row used
  long cols;        // number of displacement columns
  long delta_lo;    // displacement of column 0
};

RelWindow rel_window(MaskKind kind, std::size_t t, std::size_t table_rows) {
  const long tt = static_cast<long>(t);
  const long rr = static_cast<long>(table_rows);
  switch (kind) {
    case MaskKind::causal:
      if (rr < tt) throw std::invalid_argument("relative table too small for sequence");
      return {rr - tt, tt, -(tt - 1)};
    case MaskKind::anticausal:
      if (rr < tt) throw std::invalid_argument("relative table too small for sequence");
      return {0, tt, 0};
    case MaskKind::full: {
      if (rr % 2 == 0 || rr < 2 * tt - 1)
        throw std::invalid_argument("full-attention relative table must be odd and large enough");
      const long mid = rr / 2;
      return {mid - (tt - 1), 2 * tt - 1, -(tt - 1)};
    }
    case MaskKind::diagonal_cross:
      return {0, 1, 0};
  }
  return {0, 0, 0};
}

}  // namespace

template <typename S>
Var<S> relative_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                          const Var<S>& rel_table, const AttentionMask& mask,
                          std::size_t heads) {
  if (q.value().rank() != 3 || !q.value().same_shape(k.value()) ||
      !q.value().same_shape(v.value()))
    throw std::invalid_argument("relative_attention: q/k/v must share a [G, T, dh] shape");
  const std::size_t g = q.value().dim(0), t = q.value().dim(1), dh = q.value().dim(2);
  if (g % heads != 0)
    throw std::invalid_argument("relative_attention: leading dim not divisible by heads");
  if (rel_table.value().rank() != 3 || rel_table.value().dim(0) != heads ||
      rel_table.value().dim(2) != dh)
    throw std::invalid_argument("relative_attention: table must be [heads, R, dh]");
  if (mask.size != t)
    throw std::invalid_argument("relative_attention: mask size != sequence length");

  Var<S> content = matmul_batched(q, permute3(k, {0, 2, 1}));  // [G, T, T]

  const std::size_t table_rows = rel_table.value().dim(1);
  const RelWindow win = rel_window(mask.kind, t, table_rows);

  // Per-group slice of the displacement table: [G, cols, dh].
  auto slice_map = std::make_shared<std::vector<long>>(g * win.cols * dh);
  {
    std::size_t i = 0;
    for (std::size_t gi = 0; gi < g; ++gi) {
      const std::size_t h = gi % heads;
      for (long c = 0; c < win.cols; ++c) {
        const long row = win.first_row + c;
        const long base = (static_cast<long>(h) * static_cast<long>(table_rows) + row) *
                          static_cast<long>(dh);
        for (std::size_t j = 0; j < dh; ++j) (*slice_map)[i++] = base + static_cast<long>(j);
      }
    }
  }
  Var<S> er = gather_flat(rel_table, slice_map,
                          {g, static_cast<std::size_t>(win.cols), dh});
  Var<S> srel_raw = matmul_batched(q, permute3(er, {0, 2, 1}));  // [G, T, cols]

  // Skew: route column (k - q) of each query row into logit position (q, k).
  auto skew_map = std::make_shared<std::vector<long>>(g * t * t);
  {
    std::size_t i = 0;
    for (std::size_t gi = 0; gi < g; ++gi)
      for (std::size_t qq = 0; qq < t; ++qq)
        for (std::size_t kk = 0; kk < t; ++kk) {
          const long delta = static_cast<long>(kk) - static_cast<long>(qq);
          const long col = delta - win.delta_lo;
          (*skew_map)[i++] =
              (col < 0 || col >= win.cols)
                  ? -1
                  : (static_cast<long>(gi) * static_cast<long>(t) + static_cast<long>(qq)) *
                            win.cols +
                        col;
        }
  }
  Var<S> srel = gather_flat(srel_raw, skew_map, {g, t, t});

  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Var<S> logits = scalar_mul(add(content, srel), scale);
  Var<S> probs = masked_softmax(logits, mask.allow);
  return matmul_batched(probs, v);
}

template <typename S>
Var<S> split_heads(const Var<S>& x, std::size_t batch, std::size_t t, std::size_t heads,
                   std::size_t head_dim) {
  if (x.value().rank() != 2 || x.value().dim(0) != batch * t ||
      x.value().dim(1) != heads * head_dim)
    throw std::invalid_argument("split_heads: bad shape");
  auto map = std::make_shared<std::vector<long>>(batch * heads * t * head_dim);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t tt = 0; tt < t; ++tt)
        for (std::size_t j = 0; j < head_dim; ++j)
          (*map)[i++] = static_cast<long>((b * t + tt) * heads * head_dim + h * head_dim + j);
  return gather_flat(x, map, {batch * heads, t, head_dim});
}

template <typename S>
Var<S> merge_heads(const Var<S>& x, std::size_t batch, std::size_t t, std::size_t heads,
                   std::size_t head_dim) {
  if (x.value().rank() != 3 || x.value().dim(0) != batch * heads ||
      x.value().dim(1) != t || x.value().dim(2) != head_dim)
    throw std::invalid_argument("merge_heads: bad shape");
  auto map = std::make_shared<std::vector<long>>(batch * t * heads * head_dim);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < head_dim; ++j)
          (*map)[i++] = static_cast<long>(((b * heads + h) * t + tt) * head_dim + j);
  return gather_flat(x, map, {batch * t, heads * head_dim});
}

#define VQCPC_ATT_INSTANTIATE(S)                                                     \
  template Var<S> relative_attention<S>(const Var<S>&, const Var<S>&, const Var<S>&, \
                                        const Var<S>&, const AttentionMask&,         \
                                        std::size_t);                                \
  template Var<S> split_heads<S>(const Var<S>&, std::size_t, std::size_t,            \
                                 std::size_t, std::size_t);                          \
  template Var<S> merge_heads<S>(const Var<S>&, std::size_t, std::size_t,            \
                                 std::size_t, std::size_t);

VQCPC_ATT_INSTANTIATE(float)
VQCPC_ATT_INSTANTIATE(double)

#undef VQCPC_ATT_INSTANTIATE

}  // namespace vqcpc
