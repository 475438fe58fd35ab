#ifndef VQCPC_CPC_ENCODER_HPP
#define VQCPC_CPC_ENCODER_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vqcpc/corpus.hpp"
#include "vqcpc/nn.hpp"
#include "vqcpc/quantizer.hpp"

namespace vqcpc {

struct EncoderConfig {
  std::size_t vocab_size = 0;   // filled from the corpus
  std::size_t subseq_tokens = 16;

  std::size_t token_embedding_dim = 32;
  std::size_t recurrent_hidden = 512;
  std::size_t recurrent_layers = 2;  // bidirectional
  std::size_t z_dim = 3;
  std::size_t projection_hidden = 512;
  std::size_t projection_layers = 2;
  std::size_t projected_dim = 32;  // dimension of z~q and of the bilinear form
  std::size_t context_hidden = 512;
  std::size_t context_layers = 2;  // unidirectional
  std::size_t codebook_size = 16;
  double commitment_beta = 0.25;
  std::size_t future_steps = 6;   // K
  std::size_t candidate_set = 16; // N = 1 positive + N-1 negatives
  double dropout = 0.1;
  double learning_rate = 1e-4;

  // run-scale knobs
  std::size_t epochs = 40;
  std::size_t pieces_per_step = 4;
  std::size_t anchors_per_piece = 0;  // 0 = all anchors
  bool use_quantizer = true;          // false: continuous z, no VQ loss
  // Contrastive warm-up before the one-time codebook initialization from
  // encoder outputs; keeps the initial centroids on the settled z cloud.
  std::size_t codebook_init_epochs = 0;
};

/// Tokenized view of a corpus: every piece interleaved, padded to a
/// multiple of l, and split into subsequences.
struct SubseqTable {
  std::size_t subseq_tokens = 0;
  std::vector<StructuredSequence> pieces;
  std::vector<std::pair<int, int>> flat;  // (piece, position) per subsequence

  static SubseqTable from_corpus(const Corpus& corpus, std::size_t l);
  std::size_t piece_len(int piece) const { return pieces[piece].num_subsequences(); }
  std::size_t total() const { return flat.size(); }
};

class NegativeSampler {
 public:
  enum class Mode { uniform, same_sequence };

  NegativeSampler(Mode mode, std::uint64_t seed) : mode_(mode), rng_(seed) {}

  Mode mode() const { return mode_; }

  /// Draws `count` negatives for the anchor whose positive sits at
  /// (piece, positive_pos). Uniform mode draws over every subsequence in
  /// the table; same-sequence mode draws over the anchor piece's other
  /// positions. The positive slot itself is never returned.
  std::vector<std::pair<int, int>> draw(const SubseqTable& table, int piece,
                                        int positive_pos, std::size_t count,
                                        std::size_t min_piece_len);

 private:
  Mode mode_;
  Rng rng_;
};

/// Sampling plan for one InfoNCE step: which subsequences to embed, the
/// context window of each anchor, and the candidate sets per future offset.
/// Kept separate from the loss graph so gradient checks can rebuild the
/// same loss with frozen negatives.
struct NcePlan {
  std::vector<std::pair<int, int>> slots;     // batch rows to embed
  std::vector<std::vector<long>> windows;     // per anchor: K slot rows (-1 = pad)
  struct FutureGroup {
    std::vector<long> anchors;      // rows into the context batch
    std::vector<long> candidates;   // anchors.size() * m slot rows; column 0 = positive
    std::size_t m = 0;
  };
  std::vector<FutureGroup> per_k;  // index 0 holds k = 1
  std::size_t total_terms = 0;
};

template <typename S>
class CpcEncoder {
 public:
  CpcEncoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }
  Codebook<S> codebook() const {
    return Codebook<S>(centroids_, S(cfg_.commitment_beta));
  }
  Var<S> centroids() const { return centroids_; }

  /// Seeds the codebook with encoder outputs of `count >= C` subsequences.
  void init_codebook_from(const SubseqTable& table, std::uint64_t seed);

  /// rows: B pointers to l tokens each -> z: [B, z_dim].
  Var<S> embed_rows(const std::vector<const int*>& rows, Rng* rng, bool training) const;

  /// z -> z~ (straight-through + MLP); continuous passthrough + MLP when the
  /// quantizer is ablated or bypassed (warm-up).
  Var<S> project(const Var<S>& z, Rng* rng, bool training,
                 bool bypass_quantizer = false) const;

  /// window_slots: per anchor, exactly K row indices into ztil (-1 pads with
  /// zeros). Returns the projected context [A, projected_dim].
  Var<S> context_batch(const Var<S>& ztil, const std::vector<std::vector<long>>& window_slots,
                       Rng* rng, bool training) const;

  /// Bilinear scorer matrix W_k (k in [1, K]).
  Var<S> scorer(std::size_t k) const;

  std::vector<Tensor<S>> snapshot() const;
  void restore(const std::vector<Tensor<S>>& snap);

 private:
  EncoderConfig cfg_;
  ParamSet<S> params_;
  Embedding<S> token_emb_;
  Gru<S> subseq_gru_;
  Linear<S> z_head_;
  Var<S> centroids_;
  Mlp<S> projection_;
  Gru<S> context_gru_;
  Linear<S> h_head_;
  std::vector<Var<S>> scorers_;
};

// ---------------------------------------------------------------------------
// spec operations
// ---------------------------------------------------------------------------

/// z_i = E_cpc(x_i), evaluation mode.
template <typename S>
Tensor<S> embed_subsequence(const CpcEncoder<S>& enc, const std::vector<int>& tokens);

/// E(x_i) = nearest centroid of E_cpc(x_i).
template <typename S>
Assignment<S> encode(const CpcEncoder<S>& enc, const std::vector<int>& tokens);

/// Codes for every subsequence of a piece, evaluation mode.
template <typename S>
std::vector<int> encode_piece(const CpcEncoder<S>& enc, const StructuredSequence& piece);

/// h_i from a window of up to K projected quantized vectors ending at i
/// (left-padded with zeros when shorter).
template <typename S>
Tensor<S> build_context(const CpcEncoder<S>& enc, const Tensor<S>& window);

/// f_k(x_j, h_i) = exp(z~_j^T W_k h_i), k in [1, K].
template <typename S>
S score(const CpcEncoder<S>& enc, const Tensor<S>& ztil, const Tensor<S>& h, std::size_t k);

template <typename S>
struct NceLossParts {
  Var<S> total;        // nce + vq
  Var<S> nce;
  Var<S> vq;           // undefined when the quantizer is ablated
  std::size_t terms = 0;
};

NcePlan build_nce_plan(const SubseqTable& table, const std::vector<int>& piece_ids,
                       NegativeSampler& sampler, std::size_t future_steps,
                       std::size_t candidate_set, std::size_t anchors_per_piece,
                       Rng* anchor_rng);

template <typename S>
NceLossParts<S> info_nce_from_plan(const CpcEncoder<S>& enc, const SubseqTable& table,
                                   const NcePlan& plan, Rng* rng, bool training,
                                   bool bypass_quantizer = false);

/// Convenience wrapper: plan + loss in one call.
template <typename S>
NceLossParts<S> info_nce_loss(const CpcEncoder<S>& enc, const SubseqTable& table,
                              const std::vector<int>& piece_ids, NegativeSampler& sampler,
                              Rng* rng, bool training);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct EncoderMetricsRow {
  std::size_t epoch = 0;
  double nce_loss = 0;
  double vq_loss = 0;
  double perplexity = 0;
};

template <typename S>
struct EncoderTrainResult {
  std::unique_ptr<CpcEncoder<S>> model;
  std::unique_ptr<Adam<S>> optimizer;
  std::vector<EncoderMetricsRow> metrics;
  bool diverged = false;
};

/// Two-stage training, stage one: minimizes InfoNCE + VQ loss with Adam.
/// Deterministic given (corpus, config, mode, seed). On a non-finite loss
/// the last epoch's weights are restored and `diverged` is set.
template <typename S>
EncoderTrainResult<S> train_encoder(const Corpus& corpus, const EncoderConfig& cfg,
                                    NegativeSampler::Mode mode, std::uint64_t seed);

}  // namespace vqcpc

#endif
