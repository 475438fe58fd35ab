#ifndef VQCPC_DECODER_HPP
#define VQCPC_DECODER_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/corpus.hpp"
#include "vqcpc/transformer.hpp"

namespace vqcpc {

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t num_codes = 16;         // C
  std::size_t subseq_tokens = 16;     // l
  std::size_t sequence_tokens = 384;  // maximum piece length in tokens

  int start_token = 1;  // index of START in the corpus vocabulary

  std::size_t token_embedding_dim = 32;
  std::size_t code_embedding_dim = 32;  // fresh embedding; centroid geometry discarded
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  std::size_t heads = 8;
  std::size_t head_dim = 64;
  std::size_t feedforward_dim = 1028;
  std::size_t positional_dim = 8;  // per factor (beat subdivision / voice)
  double dropout = 0.1;
  double learning_rate = 1e-4;

  // run-scale knobs
  std::size_t epochs = 30;
  std::size_t pieces_per_step = 4;

  // quantization-bottleneck ablation: condition on continuous vectors
  bool continuous_codes = false;
  std::size_t continuous_dim = 3;

  std::size_t max_codes() const { return sequence_tokens / subseq_tokens; }
  std::size_t max_stream() const { return sequence_tokens + kNumVoices; }
};

/// Seq2seq attention decoder:
///   - anticausal relative self-attention over fresh code embeddings, so
///     memory[i] is a function of codes c_{>=i} only;
///   - causal relative self-attention over the token stream, seeded with one
///     start token per voice and carrying factorized positional embeddings;
///   - diagonal cross-attention applied after the causal stack: the position
///     predicting token (i, j) reads memory[i] and nothing else, keeping the
///     conditional dependency structure exact.
template <typename S>
class Decoder {
 public:
  Decoder(DecoderConfig cfg, std::uint64_t seed);

  const DecoderConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  /// codes: batch of B code sequences of equal length L -> memory [B*L, width].
  Var<S> encode_codes(const std::vector<std::vector<int>>& codes, Rng* rng,
                      bool training) const;

  /// Continuous-conditioning variant: zc is [B*L, continuous_dim].
  Var<S> encode_continuous(const Tensor<S>& zc, std::size_t batch, std::size_t len,
                           Rng* rng, bool training) const;

  /// inputs: B streams of equal length Tq (start block + tokens). Returns
  /// next-token logits [B*Tq, vocab]; row (b, q) predicts stream position
  /// q + 1 of batch element b.
  Var<S> token_logits(const std::vector<std::vector<int>>& inputs, const Var<S>& memory,
                      std::size_t codes_len, Rng* rng, bool training) const;

  std::vector<Tensor<S>> snapshot() const;
  void restore(const std::vector<Tensor<S>>& snap);

  /// Stream position helpers (start block occupies positions 0..3).
  static int voice_of(std::size_t stream_pos) { return static_cast<int>(stream_pos % 4); }
  static int subdivision_of(std::size_t stream_pos) {
    return static_cast<int>(((stream_pos + 12) / 4) % 4);
  }
  /// Memory row read by the query at stream position q (which predicts
  /// stream position q + 1).
  std::size_t memory_index(std::size_t q, std::size_t codes_len) const;

 private:
  DecoderConfig cfg_;
  ParamSet<S> params_;
  Embedding<S> token_emb_;
  Embedding<S> code_emb_;     // used unless continuous_codes
  Linear<S> continuous_in_;   // used when continuous_codes
  Var<S> sub_table_, voice_table_;
  Linear<S> input_proj_;
  Linear<S> code_proj_;
  TransformerStack<S> code_stack_;
  TransformerStack<S> token_stack_;
  Linear<S> cross_value_;
  LayerNorm<S> fuse_ln_;
  Linear<S> fuse_ff1_, fuse_ff2_;
  LayerNorm<S> out_ln_;
  Linear<S> head_;
};

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean per-token negative log-likelihood of the pieces under Eq.-9 teacher
/// forcing. Pieces in one call share a length; padding targets are excluded.
template <typename S>
Var<S> decoder_nll(const Decoder<S>& dec, const std::vector<const StructuredSequence*>& pieces,
                   const std::vector<std::vector<int>>& codes, int pad_index, Rng* rng,
                   bool training);

/// Continuous-conditioning variant for the bottleneck ablation.
template <typename S>
Var<S> decoder_nll_continuous(const Decoder<S>& dec,
                              const std::vector<const StructuredSequence*>& pieces,
                              const std::vector<Tensor<S>>& zc, int pad_index, Rng* rng,
                              bool training);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Per-piece conditioning, aligned with a SubseqTable: discrete codes, or
/// continuous latents for the ablation.
template <typename S>
struct Conditioning {
  std::vector<std::vector<int>> codes;
  std::vector<Tensor<S>> continuous;
  bool is_continuous() const { return !continuous.empty(); }
};

/// Codes (or continuous latents) for every piece of a table under a frozen
/// encoder.
template <typename S>
Conditioning<S> make_conditioning(const CpcEncoder<S>& enc, const SubseqTable& table,
                                  bool continuous);

struct DecoderMetricsRow {
  std::size_t epoch = 0;
  double train_nll = 0;
  double valid_nll = 0;
};

template <typename S>
struct DecoderTrainResult {
  std::unique_ptr<Decoder<S>> model;
  std::unique_ptr<Adam<S>> optimizer;
  std::vector<DecoderMetricsRow> metrics;
  bool diverged = false;
};

/// Stage-two training against a frozen encoder's codes. Deterministic given
/// seeds; non-finite loss restores the last epoch and sets `diverged`.
template <typename S>
DecoderTrainResult<S> train_decoder(const SubseqTable& train_table,
                                    const Conditioning<S>& train_cond,
                                    const SubseqTable& valid_table,
                                    const Conditioning<S>& valid_cond, int pad_index,
                                    const DecoderConfig& cfg, std::uint64_t seed);

/// Held-out mean NLL in evaluation mode.
template <typename S>
double evaluate_nll(const Decoder<S>& dec, const SubseqTable& table,
                    const Conditioning<S>& cond, int pad_index);

}  // namespace vqcpc

#endif
