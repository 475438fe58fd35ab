#include "vqcpc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace vqcpc {

namespace {

template <typename S>
Rng& dummy_rng() {
  thread_local Rng r(0);
  return r;
}

}  // namespace

template <typename S>
Decoder<S>::Decoder(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size == 0) throw std::invalid_argument("Decoder: vocab_size not set");
  if (cfg_.sequence_tokens % cfg_.subseq_tokens != 0)
    throw std::invalid_argument("Decoder: sequence_tokens must be divisible by l");
  Rng rng(seed);
  const std::size_t width = cfg_.heads * cfg_.head_dim;
  token_emb_ = Embedding<S>(params_, "token_emb", cfg_.vocab_size,
                            cfg_.token_embedding_dim, rng);
  if (cfg_.continuous_codes)
    continuous_in_ = Linear<S>(params_, "continuous_in", cfg_.continuous_dim,
                               cfg_.code_embedding_dim, rng);
  else
    code_emb_ = Embedding<S>(params_, "code_emb", cfg_.num_codes,
                             cfg_.code_embedding_dim, rng);
  sub_table_ = params_.add("pos_subdivision",
                           init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  voice_table_ = params_.add("pos_voice",
                             init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  input_proj_ = Linear<S>(params_, "input_proj",
                          cfg_.token_embedding_dim + 2 * cfg_.positional_dim, width, rng);
  code_proj_ = Linear<S>(params_, "code_proj", cfg_.code_embedding_dim, width, rng);

  TransformerStackConfig enc_cfg;
  enc_cfg.width = width;
  enc_cfg.heads = cfg_.heads;
  enc_cfg.head_dim = cfg_.head_dim;
  enc_cfg.ff_dim = cfg_.feedforward_dim;
  enc_cfg.layers = cfg_.encoder_layers;
  enc_cfg.max_len = cfg_.max_codes();
  enc_cfg.kind = MaskKind::anticausal;
  enc_cfg.dropout = cfg_.dropout;
  code_stack_ = TransformerStack<S>(params_, "code_stack", enc_cfg, rng);

  TransformerStackConfig dec_cfg = enc_cfg;
  dec_cfg.layers = cfg_.decoder_layers;
  dec_cfg.max_len = cfg_.max_stream();
  dec_cfg.kind = MaskKind::causal;
  token_stack_ = TransformerStack<S>(params_, "token_stack", dec_cfg, rng);

  cross_value_ = Linear<S>(params_, "cross_value", width, width, rng);
  fuse_ln_ = LayerNorm<S>(params_, "fuse_ln", width);
  fuse_ff1_ = Linear<S>(params_, "fuse_ff1", width, cfg_.feedforward_dim, rng);
  fuse_ff2_ = Linear<S>(params_, "fuse_ff2", cfg_.feedforward_dim, width, rng);
  out_ln_ = LayerNorm<S>(params_, "out_ln", width);
  // Zero head: the untrained decoder emits uniform logits, so the initial
  // NLL is exactly ln V.
  head_ = Linear<S>();
  head_.w = params_.add("head.w", Tensor<S>({width, cfg_.vocab_size}));
  head_.b = params_.add("head.b", Tensor<S>({cfg_.vocab_size}));
}

template <typename S>
std::size_t Decoder<S>::memory_index(std::size_t q, std::size_t codes_len) const {
  if (q + 1 < 4) return 0;  // start-block targets; excluded from the loss
  const std::size_t piece_pos = q + 1 - 4;
  const std::size_t idx = piece_pos / cfg_.subseq_tokens;
  return std::min(idx, codes_len - 1);
}

template <typename S>
Var<S> Decoder<S>::encode_codes(const std::vector<std::vector<int>>& codes, Rng* rng,
                                bool training) const {
  if (cfg_.continuous_codes)
    throw std::invalid_argument("encode_codes: model is configured for continuous conditioning");
  if (codes.empty()) throw std::invalid_argument("encode_codes: empty batch");
  const std::size_t b = codes.size(), len = codes[0].size();
  if (len == 0 || len > cfg_.max_codes())
    throw std::invalid_argument("encode_codes: code sequence length out of range");
  std::vector<int> flat;
  flat.reserve(b * len);
  for (const auto& row : codes) {
    if (row.size() != len)
      throw std::invalid_argument("encode_codes: ragged code batch");
    for (int c : row) {
      if (c < 0 || static_cast<std::size_t>(c) >= cfg_.num_codes)
        throw std::out_of_range("encode_codes: code index " + std::to_string(c) +
                                " outside [0, " + std::to_string(cfg_.num_codes) + ")");
      flat.push_back(c);
    }
  }
  Rng& r = rng ? *rng : dummy_rng<S>();
  Var<S> x = code_proj_(code_emb_(flat));
  AttentionMask mask = build_mask(MaskKind::anticausal, len);
  return code_stack_.forward(x, b, len, mask, r, training);
}

template <typename S>
Var<S> Decoder<S>::encode_continuous(const Tensor<S>& zc, std::size_t batch,
                                     std::size_t len, Rng* rng, bool training) const {
  if (!cfg_.continuous_codes)
    throw std::invalid_argument("encode_continuous: model expects discrete codes");
  if (zc.rank() != 2 || zc.dim(0) != batch * len || zc.dim(1) != cfg_.continuous_dim)
    throw std::invalid_argument("encode_continuous: bad latent shape");
  Rng& r = rng ? *rng : dummy_rng<S>();
  Var<S> x = code_proj_(continuous_in_(constant(zc)));
  AttentionMask mask = build_mask(MaskKind::anticausal, len);
  return code_stack_.forward(x, batch, len, mask, r, training);
}

template <typename S>
Var<S> Decoder<S>::token_logits(const std::vector<std::vector<int>>& inputs,
                                const Var<S>& memory, std::size_t codes_len, Rng* rng,
                                bool training) const {
  if (inputs.empty()) throw std::invalid_argument("token_logits: empty batch");
  const std::size_t b = inputs.size(), tq = inputs[0].size();
  if (tq == 0 || tq > cfg_.max_stream() - 1)
    throw std::invalid_argument("token_logits: prefix longer than the configured length");
  Rng& r = rng ? *rng : dummy_rng<S>();

  std::vector<int> flat, sub_ix, voice_ix;
  flat.reserve(b * tq);
  for (const auto& row : inputs) {
    if (row.size() != tq) throw std::invalid_argument("token_logits: ragged batch");
    for (std::size_t q = 0; q < tq; ++q) {
      flat.push_back(row[q]);
      sub_ix.push_back(subdivision_of(q));
      voice_ix.push_back(voice_of(q));
    }
  }
  Var<S> emb = concat_cols<S>({token_emb_(flat), gather_rows(sub_table_, sub_ix),
                               gather_rows(voice_table_, voice_ix)});
  Var<S> x = input_proj_(emb);
  AttentionMask mask = build_mask(MaskKind::causal, tq);
  x = token_stack_.forward(x, b, tq, mask, r, training);

  // Diagonal cross-attention: one memory row per query, softmax over a
  // single key collapses to its value projection.
  std::vector<int> mem_ix;
  mem_ix.reserve(b * tq);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t q = 0; q < tq; ++q)
      mem_ix.push_back(static_cast<int>(bi * codes_len + memory_index(q, codes_len)));
  Var<S> fused = add(x, dropout(cross_value_(gather_rows(memory, mem_ix)),
                                cfg_.dropout, r, training));
  Var<S> ff = fuse_ff2_(relu(fuse_ff1_(fuse_ln_(fused))));
  fused = add(fused, dropout(ff, cfg_.dropout, r, training));
  return head_(out_ln_(fused));
}

template <typename S>
std::vector<Tensor<S>> Decoder<S>::snapshot() const {
  std::vector<Tensor<S>> snap;
  for (const auto& p : params_.items()) snap.push_back(p.var.value());
  return snap;
}

template <typename S>
void Decoder<S>::restore(const std::vector<Tensor<S>>& snap) {
  if (snap.size() != params_.items().size())
    throw std::invalid_argument("Decoder::restore: snapshot size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i)
    params_.items()[i].var.mutable_value() = snap[i];
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

namespace {

template <typename S>
Var<S> nll_impl(const Decoder<S>& dec, const std::vector<const StructuredSequence*>& pieces,
                const std::vector<std::vector<int>>* codes, const std::vector<Tensor<S>>* zc,
                int pad_index, Rng* rng, bool training) {
  if (pieces.empty()) throw std::invalid_argument("decoder_nll: empty batch");
  const DecoderConfig& cfg = dec.config();
  const std::size_t l = cfg.subseq_tokens;
  const std::size_t len = pieces[0]->num_subsequences();
  const std::size_t t = len * l;
  std::vector<std::vector<int>> inputs;
  auto targets = std::make_shared<std::vector<int>>();

  for (std::size_t bi = 0; bi < pieces.size(); ++bi) {
    const StructuredSequence& piece = *pieces[bi];
    if (piece.subseq_tokens != l || piece.num_subsequences() != len)
      throw std::invalid_argument("decoder_nll: pieces in one batch must share a shape");
    if (codes && (*codes)[bi].size() != len)
      throw std::invalid_argument("decoder_nll: misaligned code/piece lengths");
    std::vector<int> stream(4 + t);
    for (int s = 0; s < 4; ++s) stream[s] = cfg.start_token;
    std::copy(piece.tokens.begin(), piece.tokens.end(), stream.begin() + 4);
    inputs.emplace_back(stream.begin(), stream.end() - 1);
    for (std::size_t q = 0; q + 1 < stream.size(); ++q) {
      const int tgt = stream[q + 1];
      const bool counted = q + 1 >= 4 && tgt != pad_index;
      targets->push_back(counted ? tgt : -1);
    }
  }

  Var<S> memory;
  if (codes) {
    memory = dec.encode_codes(*codes, rng, training);
  } else {
    Tensor<S> flat({pieces.size() * len, cfg.continuous_dim});
    for (std::size_t bi = 0; bi < pieces.size(); ++bi) {
      const Tensor<S>& z = (*zc)[bi];
      if (z.rank() != 2 || z.dim(0) != len || z.dim(1) != cfg.continuous_dim)
        throw std::invalid_argument("decoder_nll: misaligned continuous conditioning");
      std::copy(z.data(), z.data() + z.size(), flat.data() + bi * len * cfg.continuous_dim);
    }
    memory = dec.encode_continuous(flat, pieces.size(), len, rng, training);
  }
  Var<S> logits = dec.token_logits(inputs, memory, len, rng, training);
  return cross_entropy_logits(logits, targets);
}

}  // namespace

template <typename S>
Var<S> decoder_nll(const Decoder<S>& dec, const std::vector<const StructuredSequence*>& pieces,
                   const std::vector<std::vector<int>>& codes, int pad_index, Rng* rng,
                   bool training) {
  return nll_impl<S>(dec, pieces, &codes, nullptr, pad_index, rng, training);
}

template <typename S>
Var<S> decoder_nll_continuous(const Decoder<S>& dec,
                              const std::vector<const StructuredSequence*>& pieces,
                              const std::vector<Tensor<S>>& zc, int pad_index, Rng* rng,
                              bool training) {
  return nll_impl<S>(dec, pieces, nullptr, &zc, pad_index, rng, training);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

template <typename S>
Conditioning<S> make_conditioning(const CpcEncoder<S>& enc, const SubseqTable& table,
                                  bool continuous) {
  Conditioning<S> cond;
  for (const auto& piece : table.pieces) {
    if (continuous) {
      std::vector<const int*> rows;
      for (std::size_t i = 0; i < piece.num_subsequences(); ++i) rows.push_back(piece.row(i));
      Var<S> z = enc.embed_rows(rows, nullptr, false);
      cond.continuous.push_back(z.value());
    } else {
      cond.codes.push_back(encode_piece(enc, piece));
    }
  }
  return cond;
}

namespace {

template <typename S>
double batch_nll(const Decoder<S>& dec, const SubseqTable& table,
                 const Conditioning<S>& cond, const std::vector<int>& ids, int pad_index,
                 Rng* rng, bool training, Var<S>* out_var) {
  std::vector<const StructuredSequence*> pieces;
  std::vector<std::vector<int>> codes;
  std::vector<Tensor<S>> zc;
  for (int id : ids) {
    pieces.push_back(&table.pieces[id]);
    if (cond.is_continuous())
      zc.push_back(cond.continuous[id]);
    else
      codes.push_back(cond.codes[id]);
  }
  Var<S> loss = cond.is_continuous()
                    ? decoder_nll_continuous(dec, pieces, zc, pad_index, rng, training)
                    : decoder_nll(dec, pieces, codes, pad_index, rng, training);
  if (out_var) *out_var = loss;
  return static_cast<double>(loss.value()[0]);
}

/// Group piece ids by token count so one batch shares a shape.
std::vector<std::vector<int>> bucket_by_length(const SubseqTable& table,
                                               const std::vector<int>& ids,
                                               std::size_t group_size) {
  std::map<std::size_t, std::vector<int>> buckets;
  for (int id : ids) buckets[table.pieces[id].num_subsequences()].push_back(id);
  std::vector<std::vector<int>> groups;
  for (auto& [len, members] : buckets)
    for (std::size_t at = 0; at < members.size(); at += group_size)
      groups.emplace_back(members.begin() + at,
                          members.begin() + std::min(at + group_size, members.size()));
  return groups;
}

}  // namespace

template <typename S>
double evaluate_nll(const Decoder<S>& dec, const SubseqTable& table,
                    const Conditioning<S>& cond, int pad_index) {
  if (table.pieces.empty()) throw std::invalid_argument("evaluate_nll: empty table");
  std::vector<int> ids(table.pieces.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  double sum = 0;
  std::size_t n = 0;
  for (const auto& group : bucket_by_length(table, ids, 8)) {
    sum += batch_nll<S>(dec, table, cond, group, pad_index, nullptr, false, nullptr) *
           group.size();
    n += group.size();
  }
  return sum / static_cast<double>(n);
}

template <typename S>
DecoderTrainResult<S> train_decoder(const SubseqTable& train_table,
                                    const Conditioning<S>& train_cond,
                                    const SubseqTable& valid_table,
                                    const Conditioning<S>& valid_cond, int pad_index,
                                    const DecoderConfig& cfg, std::uint64_t seed) {
  DecoderTrainResult<S> result;
  result.model = std::make_unique<Decoder<S>>(cfg, seed);
  Decoder<S>& model = *result.model;
  result.optimizer =
      std::make_unique<Adam<S>>(model.params().vars(), static_cast<S>(cfg.learning_rate));
  Adam<S>& opt = *result.optimizer;
  Rng shuffle_rng(seed + 3);
  Rng train_rng(seed + 4);

  std::vector<int> ids(train_table.pieces.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);

  std::vector<Tensor<S>> last_good = model.snapshot();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(ids);
    double nll_sum = 0;
    std::size_t steps = 0;
    for (const auto& group : bucket_by_length(train_table, ids, cfg.pieces_per_step)) {
      Var<S> loss;
      const double v = batch_nll<S>(model, train_table, train_cond, group, pad_index,
                                    &train_rng, true, &loss);
      if (!std::isfinite(v)) {
        model.restore(last_good);
        result.diverged = true;
        return result;
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      nll_sum += v;
      ++steps;
    }
    DecoderMetricsRow row;
    row.epoch = epoch;
    row.train_nll = nll_sum / std::max<std::size_t>(steps, 1);
    row.valid_nll = valid_table.pieces.empty()
                        ? 0.0
                        : evaluate_nll(model, valid_table, valid_cond, pad_index);
    result.metrics.push_back(row);
    last_good = model.snapshot();
  }
  return result;
}

#define VQCPC_DEC_INSTANTIATE(S)                                                       \
  template class Decoder<S>;                                                           \
  template Var<S> decoder_nll<S>(const Decoder<S>&,                                    \
                                 const std::vector<const StructuredSequence*>&,        \
                                 const std::vector<std::vector<int>>&, int, Rng*, bool); \
  template Var<S> decoder_nll_continuous<S>(const Decoder<S>&,                         \
                                            const std::vector<const StructuredSequence*>&, \
                                            const std::vector<Tensor<S>>&, int, Rng*,  \
                                            bool);                                     \
  template Conditioning<S> make_conditioning<S>(const CpcEncoder<S>&, const SubseqTable&, \
                                                bool);                                 \
  template double evaluate_nll<S>(const Decoder<S>&, const SubseqTable&,               \
                                  const Conditioning<S>&, int);                        \
  template DecoderTrainResult<S> train_decoder<S>(const SubseqTable&, const Conditioning<S>&, \
                                                  const SubseqTable&, const Conditioning<S>&, \
                                                  int, const DecoderConfig&, std::uint64_t);

VQCPC_DEC_INSTANTIATE(float)
VQCPC_DEC_INSTANTIATE(double)

#undef VQCPC_DEC_INSTANTIATE

}  // namespace vqcpc
