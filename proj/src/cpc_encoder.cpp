#include "vqcpc/cpc_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace vqcpc {

namespace {

template <typename S>
Rng& dummy_rng() {
  thread_local Rng r(0);
  return r;
}

std::vector<int> to_int(const std::vector<long>& v) {
  std::vector<int> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<int>(v[i]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SubseqTable
// ---------------------------------------------------------------------------

SubseqTable SubseqTable::from_corpus(const Corpus& corpus, std::size_t l) {
  SubseqTable t;
  t.subseq_tokens = l;
  const int pad = corpus.vocab.size() ? corpus.vocab.pad_index() : 0;
  for (std::size_t p = 0; p < corpus.pieces.size(); ++p) {
    auto flat = pad_to_multiple(interleave(corpus.pieces[p]), l, pad);
    StructuredSequence seq = split_subsequences(flat, l);
    for (std::size_t i = 0; i < seq.num_subsequences(); ++i)
      t.flat.emplace_back(static_cast<int>(p), static_cast<int>(i));
    t.pieces.push_back(std::move(seq));
  }
  return t;
}

// ---------------------------------------------------------------------------
// NegativeSampler
// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> NegativeSampler::draw(const SubseqTable& table,
                                                       int piece, int positive_pos,
                                                       std::size_t count,
                                                       std::size_t min_piece_len) {
  std::vector<std::pair<int, int>> out;
  out.reserve(count);
  if (mode_ == Mode::same_sequence) {
    const std::size_t len = table.piece_len(piece);
    if (len < min_piece_len)
      throw std::invalid_argument(
          "NegativeSampler: piece of " + std::to_string(len) +
          " subsequences is too short for same-sequence candidates (need " +
          std::to_string(min_piece_len) + ")");
    while (out.size() < count) {
      const int pos = static_cast<int>(rng_.next_below(len));
      if (pos == positive_pos) continue;
      out.emplace_back(piece, pos);
    }
    return out;
  }
  if (table.total() < 2)
    throw std::invalid_argument("NegativeSampler: corpus has fewer than 2 subsequences");
  while (out.size() < count) {
    const auto& ref = table.flat[rng_.next_below(table.total())];
    if (ref.first == piece && ref.second == positive_pos) continue;
    out.push_back(ref);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CpcEncoder
// ---------------------------------------------------------------------------

template <typename S>
CpcEncoder<S>::CpcEncoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size == 0) throw std::invalid_argument("CpcEncoder: vocab_size not set");
  if (cfg_.future_steps < 1) throw std::invalid_argument("CpcEncoder: K must be >= 1");
  Rng rng(seed);
  token_emb_ = Embedding<S>(params_, "embed", cfg_.vocab_size, cfg_.token_embedding_dim, rng);
  subseq_gru_ = Gru<S>(params_, "e_cpc", cfg_.token_embedding_dim, cfg_.recurrent_hidden,
                       cfg_.recurrent_layers, /*bidirectional=*/true, rng);
  z_head_ = Linear<S>(params_, "z_head", 2 * cfg_.recurrent_hidden, cfg_.z_dim, rng);
  centroids_ = params_.add("quantizer.centroids",
                           init_normal<S>({cfg_.codebook_size, cfg_.z_dim}, 0.1, rng));
  std::vector<std::size_t> hidden(cfg_.projection_layers > 0 ? cfg_.projection_layers - 1 : 0,
                                  cfg_.projection_hidden);
  projection_ = Mlp<S>(params_, "project", cfg_.z_dim, hidden, cfg_.projected_dim, rng);
  context_gru_ = Gru<S>(params_, "f_h", cfg_.projected_dim, cfg_.context_hidden,
                        cfg_.context_layers, /*bidirectional=*/false, rng);
  h_head_ = Linear<S>(params_, "h_head", cfg_.context_hidden, cfg_.projected_dim, rng);
  // Zero-initialized scorers: every candidate scores 1, so the initial NCE
  // loss is exactly ln N.
  for (std::size_t k = 0; k < cfg_.future_steps; ++k)
    scorers_.push_back(params_.add("score.w" + std::to_string(k),
                                   Tensor<S>({cfg_.projected_dim, cfg_.projected_dim})));
}

template <typename S>
void CpcEncoder<S>::init_codebook_from(const SubseqTable& table, std::uint64_t seed) {
  const std::size_t c = cfg_.codebook_size;
  if (table.total() < c)
    throw std::invalid_argument("init_codebook_from: need at least " + std::to_string(c) +
                                " subsequences");
  Rng rng(seed);
  // Embed a sample of the corpus, then keep a spread pool: greedy
  // farthest-point selection over the encoder outputs so every region of
  // the settled z cloud contributes a seed centroid.
  const std::size_t pool_size = std::min(table.total(), std::max<std::size_t>(32 * c, 256));
  auto picks = rng.sample_without_replacement(table.total(), pool_size);
  std::vector<const int*> rows;
  for (auto ix : picks) {
    const auto& ref = table.flat[ix];
    rows.push_back(table.pieces[ref.first].row(ref.second));
  }
  Var<S> z = embed_rows(rows, nullptr, false);
  const Tensor<S>& zv = z.value();
  const std::size_t d = cfg_.z_dim;
  std::vector<std::size_t> chosen = {rng.next_below(pool_size)};
  std::vector<S> best_d(pool_size, std::numeric_limits<S>::max());
  while (chosen.size() < c) {
    const S* last = zv.data() + chosen.back() * d;
    std::size_t far = 0;
    S far_d = -1;
    for (std::size_t i = 0; i < pool_size; ++i) {
      S acc = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const S diff = zv.data()[i * d + j] - last[j];
        acc += diff * diff;
      }
      best_d[i] = std::min(best_d[i], acc);
      if (best_d[i] > far_d) {
        far_d = best_d[i];
        far = i;
      }
    }
    chosen.push_back(far);
  }
  Tensor<S> pool({c, d});
  for (std::size_t i = 0; i < c; ++i)
    std::copy(zv.data() + chosen[i] * d, zv.data() + (chosen[i] + 1) * d,
              pool.data() + i * d);
  centroids_.mutable_value() = init_codebook(pool, c, seed ^ 0x9e3779b9u);
}

template <typename S>
Var<S> CpcEncoder<S>::embed_rows(const std::vector<const int*>& rows, Rng* rng,
                                 bool training) const {
  if (rows.empty()) throw std::invalid_argument("embed_rows: empty batch");
  Rng& r = rng ? *rng : dummy_rng<S>();
  const std::size_t l = cfg_.subseq_tokens;
  std::vector<Var<S>> steps(l);
  std::vector<int> ixs(rows.size());
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const int tok = rows[b][t];
      if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.vocab_size)
        throw std::out_of_range("embed_rows: token index " + std::to_string(tok) +
                                " outside vocabulary");
      ixs[b] = tok;
    }
    steps[t] = dropout(token_emb_(ixs), cfg_.dropout, r, training);
  }
  auto out = subseq_gru_.run(steps, cfg_.dropout, r, training);
  Var<S> finals = concat_cols<S>({out.final_forward, out.final_backward});
  return z_head_(finals);
}

template <typename S>
Var<S> CpcEncoder<S>::project(const Var<S>& z, Rng* rng, bool training,
                              bool bypass_quantizer) const {
  (void)rng;
  (void)training;
  const bool quantize_now = cfg_.use_quantizer && !bypass_quantizer;
  Var<S> zq = quantize_now ? straight_through(z, centroids_) : z;
  return projection_(zq);
}

template <typename S>
Var<S> CpcEncoder<S>::context_batch(const Var<S>& ztil,
                                    const std::vector<std::vector<long>>& window_slots,
                                    Rng* rng, bool training) const {
  if (window_slots.empty()) throw std::invalid_argument("context_batch: empty window");
  Rng& r = rng ? *rng : dummy_rng<S>();
  const std::size_t a = window_slots.size();
  const std::size_t k = cfg_.future_steps;
  const std::size_t d = cfg_.projected_dim;
  std::vector<Var<S>> steps(k);
  for (std::size_t t = 0; t < k; ++t) {
    auto map = std::make_shared<std::vector<long>>(a * d);
    for (std::size_t ai = 0; ai < a; ++ai) {
      if (window_slots[ai].size() != k)
        throw std::invalid_argument("context_batch: window must have K entries");
      const long slot = window_slots[ai][t];
      for (std::size_t j = 0; j < d; ++j)
        (*map)[ai * d + j] = slot < 0 ? -1 : slot * static_cast<long>(d) + static_cast<long>(j);
    }
    steps[t] = gather_flat(ztil, map, {a, d});
  }
  auto out = context_gru_.run(steps, cfg_.dropout, r, training);
  return h_head_(out.final_forward);
}

template <typename S>
Var<S> CpcEncoder<S>::scorer(std::size_t k) const {
  if (k < 1 || k > scorers_.size())
    throw std::out_of_range("scorer: k must be in [1, K]");
  return scorers_[k - 1];
}

template <typename S>
std::vector<Tensor<S>> CpcEncoder<S>::snapshot() const {
  std::vector<Tensor<S>> snap;
  for (const auto& p : params_.items()) snap.push_back(p.var.value());
  return snap;
}

template <typename S>
void CpcEncoder<S>::restore(const std::vector<Tensor<S>>& snap) {
  if (snap.size() != params_.items().size())
    throw std::invalid_argument("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i)
    params_.items()[i].var.mutable_value() = snap[i];
}

// ---------------------------------------------------------------------------
// spec operations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> embed_subsequence(const CpcEncoder<S>& enc, const std::vector<int>& tokens) {
  if (tokens.size() != enc.config().subseq_tokens)
    throw std::invalid_argument("embed_subsequence: expected " +
                                std::to_string(enc.config().subseq_tokens) + " tokens");
  std::vector<const int*> rows = {tokens.data()};
  Var<S> z = enc.embed_rows(rows, nullptr, false);
  Tensor<S> out({enc.config().z_dim});
  std::copy(z.value().data(), z.value().data() + out.size(), out.data());
  return out;
}

template <typename S>
Assignment<S> encode(const CpcEncoder<S>& enc, const std::vector<int>& tokens) {
  Tensor<S> z = embed_subsequence(enc, tokens);
  std::vector<S> zv(z.data(), z.data() + z.size());
  return quantize(zv, enc.codebook());
}

template <typename S>
std::vector<int> encode_piece(const CpcEncoder<S>& enc, const StructuredSequence& piece) {
  if (piece.subseq_tokens != enc.config().subseq_tokens)
    throw std::invalid_argument("encode_piece: subsequence length mismatch");
  std::vector<const int*> rows;
  for (std::size_t i = 0; i < piece.num_subsequences(); ++i) rows.push_back(piece.row(i));
  Var<S> z = enc.embed_rows(rows, nullptr, false);
  return quantize_batch(z.value(), enc.centroids().value());
}

template <typename S>
Tensor<S> build_context(const CpcEncoder<S>& enc, const Tensor<S>& window) {
  const std::size_t k = enc.config().future_steps;
  const std::size_t d = enc.config().projected_dim;
  if (window.rank() != 2 || window.dim(1) != d || window.dim(0) == 0 || window.dim(0) > k)
    throw std::invalid_argument("build_context: window must be [1..K, projected_dim]");
  // Left-pad to K with zero vectors, then feed the causal aggregator.
  Tensor<S> padded({k, d});
  const std::size_t w = window.dim(0);
  std::copy(window.data(), window.data() + window.size(),
            padded.data() + (k - w) * d);
  Var<S> ztil = constant(std::move(padded));
  std::vector<std::vector<long>> slots(1);
  for (std::size_t t = 0; t < k; ++t) slots[0].push_back(static_cast<long>(t));
  Var<S> h = enc.context_batch(ztil, slots, nullptr, false);
  Tensor<S> out({d});
  std::copy(h.value().data(), h.value().data() + d, out.data());
  return out;
}

template <typename S>
S score(const CpcEncoder<S>& enc, const Tensor<S>& ztil, const Tensor<S>& h, std::size_t k) {
  const std::size_t d = enc.config().projected_dim;
  if (ztil.size() != d || h.size() != d)
    throw std::invalid_argument("score: vectors must have the projected dimension");
  const Tensor<S>& w = enc.scorer(k).value();
  S acc = 0;
  for (std::size_t i = 0; i < d; ++i) {
    S wh = 0;
    for (std::size_t j = 0; j < d; ++j) wh += w.at2(i, j) * h[j];
    acc += ztil[i] * wh;
  }
  return std::exp(acc);
}

// ---------------------------------------------------------------------------
// InfoNCE plan / loss
// ---------------------------------------------------------------------------

NcePlan build_nce_plan(const SubseqTable& table, const std::vector<int>& piece_ids,
                       NegativeSampler& sampler, std::size_t future_steps,
                       std::size_t candidate_set, std::size_t anchors_per_piece,
                       Rng* anchor_rng) {
  if (candidate_set < 2)
    throw std::invalid_argument("build_nce_plan: need at least one negative");
  NcePlan plan;
  plan.per_k.resize(future_steps);
  std::unordered_map<long, long> slot_of;
  auto slot = [&](int piece, int pos) -> long {
    const long key = (static_cast<long>(piece) << 24) | pos;
    auto it = slot_of.find(key);
    if (it != slot_of.end()) return it->second;
    const long s = static_cast<long>(plan.slots.size());
    slot_of.emplace(key, s);
    plan.slots.emplace_back(piece, pos);
    return s;
  };

  const std::size_t k_max = future_steps;
  for (int piece : piece_ids) {
    const std::size_t len = table.piece_len(piece);
    if (len < 2) continue;  // no future chunk available
    std::vector<int> anchor_pos;
    for (std::size_t i = 0; i + 1 < len; ++i) anchor_pos.push_back(static_cast<int>(i));
    if (anchors_per_piece > 0 && anchors_per_piece < anchor_pos.size()) {
      if (!anchor_rng) throw std::invalid_argument("build_nce_plan: anchor subsampling needs an rng");
      std::vector<int> chosen;
      for (auto ix : anchor_rng->sample_without_replacement(anchor_pos.size(), anchors_per_piece))
        chosen.push_back(anchor_pos[ix]);
      std::sort(chosen.begin(), chosen.end());
      anchor_pos = std::move(chosen);
    }
    for (int i : anchor_pos) {
      const long anchor_row = static_cast<long>(plan.windows.size());
      std::vector<long> window(k_max);
      for (std::size_t t = 0; t < k_max; ++t) {
        const long pos = static_cast<long>(i) - static_cast<long>(k_max) + 1 + static_cast<long>(t);
        window[t] = pos < 0 ? -1 : slot(piece, static_cast<int>(pos));
      }
      plan.windows.push_back(std::move(window));
      for (std::size_t k = 1; k <= k_max; ++k) {
        const std::size_t future = static_cast<std::size_t>(i) + k;
        if (future >= len) break;
        auto& group = plan.per_k[k - 1];
        group.m = candidate_set;
        group.anchors.push_back(anchor_row);
        group.candidates.push_back(slot(piece, static_cast<int>(future)));
        for (const auto& neg : sampler.draw(table, piece, static_cast<int>(future),
                                            candidate_set - 1, candidate_set))
          group.candidates.push_back(slot(neg.first, neg.second));
        ++plan.total_terms;
      }
    }
  }
  if (plan.total_terms == 0)
    throw std::invalid_argument("build_nce_plan: no anchor has a future chunk");
  return plan;
}

template <typename S>
NceLossParts<S> info_nce_from_plan(const CpcEncoder<S>& enc, const SubseqTable& table,
                                   const NcePlan& plan, Rng* rng, bool training,
                                   bool bypass_quantizer) {
  const EncoderConfig& cfg = enc.config();
  std::vector<const int*> rows;
  rows.reserve(plan.slots.size());
  for (const auto& ref : plan.slots)
    rows.push_back(table.pieces[ref.first].row(ref.second));

  NceLossParts<S> parts;
  Var<S> z = enc.embed_rows(rows, rng, training);
  Var<S> ztil = enc.project(z, rng, training, bypass_quantizer);
  Var<S> h = enc.context_batch(ztil, plan.windows, rng, training);

  const S inv_terms = S(1) / static_cast<S>(plan.total_terms);
  Var<S> nce;
  for (std::size_t k = 1; k <= cfg.future_steps; ++k) {
    const auto& group = plan.per_k[k - 1];
    if (group.anchors.empty()) continue;
    const std::size_t a = group.anchors.size();
    Var<S> cand = gather_rows(ztil, to_int(group.candidates));
    cand = reshape(cand, {a, group.m, cfg.projected_dim});
    Var<S> hk = gather_rows(h, to_int(group.anchors));
    Var<S> u = reshape(matmul(hk, transpose2(enc.scorer(k))), {a, cfg.projected_dim, 1});
    Var<S> logits = reshape(matmul_batched(cand, u), {a, group.m});
    auto targets = std::make_shared<std::vector<int>>(a, 0);
    Var<S> ce = cross_entropy_logits(logits, targets);
    Var<S> weighted = scalar_mul(ce, static_cast<S>(a) * inv_terms);
    nce = nce.defined() ? add(nce, weighted) : weighted;
  }
  parts.nce = nce;
  parts.terms = plan.total_terms;
  if (cfg.use_quantizer && !bypass_quantizer) {
    parts.vq = vq_loss(z, enc.codebook());
    parts.total = add(parts.nce, parts.vq);
  } else {
    parts.total = parts.nce;
  }
  return parts;
}

template <typename S>
NceLossParts<S> info_nce_loss(const CpcEncoder<S>& enc, const SubseqTable& table,
                              const std::vector<int>& piece_ids, NegativeSampler& sampler,
                              Rng* rng, bool training) {
  NcePlan plan = build_nce_plan(table, piece_ids, sampler, enc.config().future_steps,
                                enc.config().candidate_set, enc.config().anchors_per_piece,
                                rng);
  return info_nce_from_plan(enc, table, plan, rng, training);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

template <typename S>
double corpus_perplexity(const CpcEncoder<S>& enc, const SubseqTable& table) {
  std::vector<int> codes;
  codes.reserve(table.total());
  for (const auto& piece : table.pieces) {
    auto piece_codes = encode_piece(enc, piece);
    codes.insert(codes.end(), piece_codes.begin(), piece_codes.end());
  }
  return usage_stats(codes, enc.config().codebook_size).perplexity;
}

}  // namespace

namespace {

// Pitch tokens start on a line through embedding space ordered by semitone,
// so a transposition acts as a translation the recurrent encoder can learn
// to factor out. Non-pitch tokens keep their generic initialization.
template <typename S>
void seed_ordinal_pitch_embeddings(CpcEncoder<S>& model, const Vocabulary& vocab,
                                   std::uint64_t seed) {
  int lo = 0, hi = -1;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (auto p = vocab.pitch_of(static_cast<int>(i))) {
      if (hi < lo) lo = hi = *p;
      lo = std::min(lo, *p);
      hi = std::max(hi, *p);
    }
  if (hi <= lo) return;
  Rng rng(seed ^ 0x5eedULL);
  Tensor<S>& table = model.params().find("embed.table").mutable_value();
  const std::size_t dim = table.dim(1);
  std::vector<S> slope(dim);
  for (auto& s : slope) s = static_cast<S>(rng.next_normal() * 1.2 / std::sqrt(double(dim)));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto p = vocab.pitch_of(static_cast<int>(i));
    if (!p) continue;
    const double t = 2.0 * (*p - lo) / double(hi - lo) - 1.0;
    for (std::size_t j = 0; j < dim; ++j)
      table.at2(i, j) = static_cast<S>(slope[j] * t + rng.next_normal() * 0.05);
  }
}

}  // namespace

template <typename S>
EncoderTrainResult<S> train_encoder(const Corpus& corpus, const EncoderConfig& cfg_in,
                                    NegativeSampler::Mode mode, std::uint64_t seed) {
  EncoderConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab.size();
  SubseqTable table = SubseqTable::from_corpus(corpus, cfg.subseq_tokens);

  EncoderTrainResult<S> result;
  result.model = std::make_unique<CpcEncoder<S>>(cfg, seed);
  CpcEncoder<S>& model = *result.model;
  seed_ordinal_pitch_embeddings(model, corpus.vocab, seed);
  const std::size_t warmup = cfg.use_quantizer ? cfg.codebook_init_epochs : 0;
  if (cfg.use_quantizer && warmup == 0) model.init_codebook_from(table, seed + 1);

  result.optimizer =
      std::make_unique<Adam<S>>(model.params().vars(), static_cast<S>(cfg.learning_rate));
  Adam<S>& opt = *result.optimizer;
  NegativeSampler sampler(mode, seed + 2);
  Rng shuffle_rng(seed + 3);
  Rng train_rng(seed + 4);

  std::vector<int> piece_ids(table.pieces.size());
  for (std::size_t i = 0; i < piece_ids.size(); ++i) piece_ids[i] = static_cast<int>(i);

  std::vector<Tensor<S>> last_good = model.snapshot();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warming = epoch < warmup;
    if (cfg.use_quantizer && warmup > 0 && epoch == warmup)
      model.init_codebook_from(table, seed + 1);
    shuffle_rng.shuffle(piece_ids);
    double nce_sum = 0, vq_sum = 0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < piece_ids.size(); at += cfg.pieces_per_step) {
      std::vector<int> group(piece_ids.begin() + at,
                             piece_ids.begin() +
                                 std::min(at + cfg.pieces_per_step, piece_ids.size()));
      NcePlan plan = build_nce_plan(table, group, sampler, cfg.future_steps,
                                    cfg.candidate_set, cfg.anchors_per_piece, &train_rng);
      NceLossParts<S> parts =
          info_nce_from_plan(model, table, plan, &train_rng, true, warming);
      const double loss_v = static_cast<double>(parts.total.value()[0]);
      if (!std::isfinite(loss_v)) {
        model.restore(last_good);
        result.diverged = true;
        return result;
      }
      opt.zero_grad();
      backward(parts.total);
      opt.step();
      nce_sum += static_cast<double>(parts.nce.value()[0]);
      if (parts.vq.defined()) vq_sum += static_cast<double>(parts.vq.value()[0]);
      ++steps;
    }
    EncoderMetricsRow row;
    row.epoch = epoch;
    row.nce_loss = nce_sum / std::max<std::size_t>(steps, 1);
    row.vq_loss = vq_sum / std::max<std::size_t>(steps, 1);
    row.perplexity = cfg.use_quantizer && !warming ? corpus_perplexity(model, table) : 0.0;
    result.metrics.push_back(row);
    last_good = model.snapshot();
  }
  return result;
}

// ---------------------------------------------------------------------------
// explicit instantiation
// ---------------------------------------------------------------------------

#define VQCPC_ENC_INSTANTIATE(S)                                                        \
  template class CpcEncoder<S>;                                                         \
  template Tensor<S> embed_subsequence<S>(const CpcEncoder<S>&, const std::vector<int>&); \
  template Assignment<S> encode<S>(const CpcEncoder<S>&, const std::vector<int>&);      \
  template std::vector<int> encode_piece<S>(const CpcEncoder<S>&, const StructuredSequence&); \
  template Tensor<S> build_context<S>(const CpcEncoder<S>&, const Tensor<S>&);          \
  template S score<S>(const CpcEncoder<S>&, const Tensor<S>&, const Tensor<S>&, std::size_t); \
  template NceLossParts<S> info_nce_from_plan<S>(const CpcEncoder<S>&, const SubseqTable&, \
                                                 const NcePlan&, Rng*, bool, bool);     \
  template NceLossParts<S> info_nce_loss<S>(const CpcEncoder<S>&, const SubseqTable&,   \
                                            const std::vector<int>&, NegativeSampler&,  \
                                            Rng*, bool);                                \
  template EncoderTrainResult<S> train_encoder<S>(const Corpus&, const EncoderConfig&,  \
                                                  NegativeSampler::Mode, std::uint64_t);

VQCPC_ENC_INSTANTIATE(float)
VQCPC_ENC_INSTANTIATE(double)

#undef VQCPC_ENC_INSTANTIATE

}  // namespace vqcpc
