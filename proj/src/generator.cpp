#include "vqcpc/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vqcpc {

std::vector<double> nucleus_filter(const std::vector<double>& probs, double top_p) {
  if (top_p <= 0.0 || top_p > 1.0)
    throw std::invalid_argument("nucleus_filter: top_p must lie in (0, 1]");
  double sum = 0;
  for (double p : probs) {
    if (p < 0) throw std::invalid_argument("nucleus_filter: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("nucleus_filter: input does not sum to 1");

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });

  std::vector<double> out(probs.size(), 0.0);
  double kept = 0;
  for (std::size_t ix : order) {
    if (probs[ix] <= 0) break;
    out[ix] = probs[ix];
    kept += probs[ix];
    if (kept >= top_p) break;
  }
  if (kept <= 0) throw std::invalid_argument("nucleus_filter: empty support");
  for (double& p : out) p /= kept;
  return out;
}

std::vector<double> temper(const std::vector<double>& logits, double temperature) {
  if (temperature <= 0) throw std::invalid_argument("temper: temperature must be positive");
  std::vector<double> out(logits.size());
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

namespace {

template <typename S>
StructuredSequence sample_stream(const Decoder<S>& dec, const Var<S>& memory,
                                 std::size_t codes_len, const SamplingConfig& sampling,
                                 const std::vector<int>& banned_tokens) {
  const DecoderConfig& cfg = dec.config();
  const std::size_t total = codes_len * cfg.subseq_tokens;
  Rng rng(sampling.seed);
  std::vector<int> stream(4, cfg.start_token);
  stream.reserve(4 + total);
  for (std::size_t step = 0; step < total; ++step) {
    Var<S> logits = dec.token_logits({stream}, memory, codes_len, nullptr, false);
    const std::size_t rows = logits.value().dim(0);
    const std::size_t v = logits.value().dim(1);
    std::vector<double> row(v);
    for (std::size_t j = 0; j < v; ++j)
      row[j] = static_cast<double>(logits.value().at2(rows - 1, j));
    for (int b : banned_tokens)
      if (b >= 0 && static_cast<std::size_t>(b) < v) row[b] = -1e30;
    std::vector<double> probs = nucleus_filter(temper(row, sampling.temperature),
                                               sampling.top_p);
    double u = rng.next_double();
    int pick = -1;
    for (std::size_t j = 0; j < v; ++j) {
      u -= probs[j];
      if (u < 0) {
        pick = static_cast<int>(j);
        break;
      }
    }
    if (pick < 0) {  // numeric tail: take the last positive entry
      for (std::size_t j = v; j-- > 0;)
        if (probs[j] > 0) {
          pick = static_cast<int>(j);
          break;
        }
    }
    stream.push_back(pick);
  }
  StructuredSequence out;
  out.subseq_tokens = cfg.subseq_tokens;
  out.tokens.assign(stream.begin() + 4, stream.end());
  return out;
}

}  // namespace

template <typename S>
StructuredSequence generate(const Decoder<S>& dec, const std::vector<int>& codes,
                            const SamplingConfig& sampling,
                            const std::vector<int>& banned_tokens) {
  Var<S> memory = dec.encode_codes({codes}, nullptr, false);
  return sample_stream(dec, memory, codes.size(), sampling, banned_tokens);
}

template <typename S>
StructuredSequence generate_continuous(const Decoder<S>& dec, const Tensor<S>& latents,
                                       const SamplingConfig& sampling,
                                       const std::vector<int>& banned_tokens) {
  if (latents.rank() != 2) throw std::invalid_argument("generate_continuous: latents must be [L, d]");
  const std::size_t len = latents.dim(0);
  Var<S> memory = dec.encode_continuous(latents, 1, len, nullptr, false);
  return sample_stream(dec, memory, len, sampling, banned_tokens);
}

template <typename S>
StructuredSequence vary(const CpcEncoder<S>& enc, const Decoder<S>& dec,
                        const StructuredSequence& tmpl, const SamplingConfig& sampling,
                        const std::vector<int>& banned_tokens) {
  if (tmpl.subseq_tokens != dec.config().subseq_tokens)
    throw std::invalid_argument("vary: template subsequence length does not match the decoder");
  const std::vector<int> codes = encode_piece(enc, tmpl);
  return generate(dec, codes, sampling, banned_tokens);
}

#define VQCPC_GEN_INSTANTIATE(S)                                                        \
  template StructuredSequence generate<S>(const Decoder<S>&, const std::vector<int>&,   \
                                          const SamplingConfig&, const std::vector<int>&); \
  template StructuredSequence generate_continuous<S>(const Decoder<S>&, const Tensor<S>&, \
                                                     const SamplingConfig&,             \
                                                     const std::vector<int>&);          \
  template StructuredSequence vary<S>(const CpcEncoder<S>&, const Decoder<S>&,          \
                                      const StructuredSequence&, const SamplingConfig&, \
                                      const std::vector<int>&);

VQCPC_GEN_INSTANTIATE(float)
VQCPC_GEN_INSTANTIATE(double)

#undef VQCPC_GEN_INSTANTIATE

}  // namespace vqcpc
