#ifndef VQCPC_GENERATOR_HPP
#define VQCPC_GENERATOR_HPP

#include <cstdint>
#include <vector>

#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/decoder.hpp"

namespace vqcpc {

struct SamplingConfig {
  double top_p = 0.8;
  double temperature = 0.95;
  std::uint64_t seed = 0;
};

/// Keeps the smallest prefix of the descending-sorted probabilities whose
/// cumulative mass reaches top_p (ties broken toward lower token index),
/// zeroes the rest and renormalizes. Input must sum to 1 within 1e-6.
std::vector<double> nucleus_filter(const std::vector<double>& probs, double top_p);

/// softmax(logits / temperature)
std::vector<double> temper(const std::vector<double>& logits, double temperature);

/// Autoregressive sampling of a full piece conditioned on its codes: the
/// code memory is computed once, each step tempers the next-token logits,
/// applies the nucleus filter and draws from the result. banned tokens
/// (padding/start/mask) never appear in the output.
template <typename S>
StructuredSequence generate(const Decoder<S>& dec, const std::vector<int>& codes,
                            const SamplingConfig& sampling,
                            const std::vector<int>& banned_tokens);

/// Bottleneck-ablation variant conditioned on continuous latents [L, d].
template <typename S>
StructuredSequence generate_continuous(const Decoder<S>& dec, const Tensor<S>& latents,
                                       const SamplingConfig& sampling,
                                       const std::vector<int>& banned_tokens);

/// Variation of a template: encode every subsequence, then resample a new
/// sequence from the codes. Output shape equals the template's.
template <typename S>
StructuredSequence vary(const CpcEncoder<S>& enc, const Decoder<S>& dec,
                        const StructuredSequence& tmpl, const SamplingConfig& sampling,
                        const std::vector<int>& banned_tokens);

}  // namespace vqcpc

#endif
