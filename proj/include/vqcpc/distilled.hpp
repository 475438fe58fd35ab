#ifndef VQCPC_DISTILLED_HPP
#define VQCPC_DISTILLED_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/decoder.hpp"
#include "vqcpc/quantizer.hpp"
#include "vqcpc/transformer.hpp"

namespace vqcpc {

// ---------------------------------------------------------------------------
// masked-self-prediction teacher
// ---------------------------------------------------------------------------

struct TeacherConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 8;
  std::size_t mask_span_tokens = 128;  // 8 beats
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t ff_dim = 256;
  std::size_t positional_dim = 8;
  std::size_t max_tokens = 384;
  double dropout = 0.1;
  double learning_rate = 1e-4;

  std::size_t epochs = 10;
  std::size_t centers_per_piece = 4;
  std::size_t pieces_per_step = 4;

  std::size_t width() const { return heads * head_dim; }
};

/// Replaces the span centred on `center` with the mask token and returns
/// the original central token as the prediction target.
struct MaskedSpan {
  std::vector<int> tokens;
  int target = 0;
  std::size_t begin = 0, end = 0;  // [begin, end)
};
MaskedSpan mask_span(const std::vector<int>& tokens, std::size_t center, std::size_t span,
                     int mask_token);

template <typename S>
class Teacher {
 public:
  Teacher(TeacherConfig cfg, std::uint64_t seed);

  const TeacherConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }

  /// Central-token logits for a batch of equal-length masked streams.
  Var<S> predict_logits(const std::vector<std::vector<int>>& masked_tokens,
                        const std::vector<std::size_t>& centers, Rng* rng,
                        bool training) const;

  /// Teacher's predictive distribution for the token at `center` of a piece
  /// (evaluation mode, span from the config).
  Tensor<S> predict_distribution(const std::vector<int>& tokens, std::size_t center,
                                 int mask_token) const;

  std::vector<Tensor<S>> snapshot() const;
  void restore(const std::vector<Tensor<S>>& snap);

 private:
  TeacherConfig cfg_;
  ParamSet<S> params_;
  Embedding<S> token_emb_;
  Var<S> sub_table_, voice_table_;
  Linear<S> input_proj_;
  TransformerStack<S> stack_;
  Linear<S> head_;
};

struct TeacherMetricsRow {
  std::size_t epoch = 0;
  double ce_loss = 0;
};

template <typename S>
struct TeacherTrainResult {
  std::unique_ptr<Teacher<S>> model;
  std::vector<TeacherMetricsRow> metrics;
  bool diverged = false;
};

template <typename S>
TeacherTrainResult<S> train_teacher(const Corpus& corpus, const TeacherConfig& cfg,
                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// distilled VQ-VAE encoder
// ---------------------------------------------------------------------------

struct DistilledEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t subseq_tokens = 16;  // = total downscale factor 4 x 4
  std::size_t stack_layers = 4;    // per stage
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t ff_dim = 256;
  std::size_t positional_dim = 8;
  std::size_t max_tokens = 384;
  std::size_t z_dim = 3;
  std::size_t codebook_size = 16;
  double commitment_beta = 0.25;
  double dropout = 0.1;
  double learning_rate = 1e-4;

  std::size_t epochs = 10;
  std::size_t positions_per_piece = 16;
  std::size_t pieces_per_step = 4;

  std::size_t width() const { return heads * head_dim; }
};

/// Two bidirectional relative-attention stages interleaved with stride-4
/// convolutions (one code per 16 tokens), a VQ bottleneck, and an auxiliary
/// decoder mirroring the encoder with stride-4 transposed convolutions.
template <typename S>
class DistilledEncoder {
 public:
  DistilledEncoder(DistilledEncoderConfig cfg, std::uint64_t seed);

  const DistilledEncoderConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }
  Codebook<S> codebook() const {
    return Codebook<S>(centroids_, S(cfg_.commitment_beta));
  }

  /// Pre-quantization latents for a batch of equal-length pieces:
  /// [B * (T/16), z_dim].
  Var<S> encode_latents(const std::vector<const StructuredSequence*>& pieces, Rng* rng,
                        bool training) const;

  /// Auxiliary decoder: token logits [B*T, vocab] from the straight-through
  /// latents.
  Var<S> reconstruct_logits(const Var<S>& z, std::size_t batch, std::size_t codes_len,
                            Rng* rng, bool training) const;

  void init_codebook_from(const SubseqTable& table, std::uint64_t seed);

  std::vector<Tensor<S>> snapshot() const;
  void restore(const std::vector<Tensor<S>>& snap);

 private:
  DistilledEncoderConfig cfg_;
  ParamSet<S> params_;
  Embedding<S> token_emb_;
  Var<S> sub_table_, voice_table_;
  Linear<S> input_proj_;
  TransformerStack<S> stage_a_, stage_b_;
  Linear<S> down1_, down2_;  // kernel-4 stride-4 convolutions
  Linear<S> z_head_;
  Var<S> centroids_;
  Linear<S> z_in_;
  TransformerStack<S> dec_stage_b_, dec_stage_a_;
  Linear<S> up1_, up2_;  // transposed counterparts
  Linear<S> recon_head_;
};

/// One code per subsequence; interface parity with the VQ-CPC encoder.
template <typename S>
std::vector<int> distilled_encode_piece(const DistilledEncoder<S>& enc,
                                        const StructuredSequence& piece);

template <typename S>
Conditioning<S> make_distilled_conditioning(const DistilledEncoder<S>& enc,
                                            const SubseqTable& table);

struct DistilledMetricsRow {
  std::size_t epoch = 0;
  double distill_loss = 0;
  double vq_loss = 0;
  double perplexity = 0;
};

template <typename S>
struct DistilledTrainResult {
  std::unique_ptr<DistilledEncoder<S>> model;
  std::unique_ptr<Adam<S>> optimizer;
  std::vector<DistilledMetricsRow> metrics;
  bool diverged = false;
};

/// Stage-two of the baseline: cross-entropy against the frozen teacher's
/// soft predictions plus the VQ loss.
template <typename S>
DistilledTrainResult<S> train_distilled_encoder(const Corpus& corpus,
                                                const Teacher<S>& teacher,
                                                const DistilledEncoderConfig& cfg,
                                                std::uint64_t seed);

}  // namespace vqcpc

#endif
