#include "vqcpc/distilled.hpp"

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

std::vector<std::vector<int>> bucket_ids(const SubseqTable& table,
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

// ---------------------------------------------------------------------------
// mask_span
// ---------------------------------------------------------------------------

MaskedSpan mask_span(const std::vector<int>& tokens, std::size_t center, std::size_t span,
                     int mask_token) {
  if (span == 0 || center >= tokens.size())
    throw std::invalid_argument("mask_span: bad center/span");
  const std::size_t begin = center < span / 2 ? 0 : center - span / 2;
  if (center < span / 2 || begin + span > tokens.size())
    throw std::invalid_argument("mask_span: span of " + std::to_string(span) +
                                " centred at " + std::to_string(center) +
                                " exceeds the sequence bounds");
  MaskedSpan out;
  out.tokens = tokens;
  out.begin = begin;
  out.end = begin + span;
  out.target = tokens[center];
  for (std::size_t i = out.begin; i < out.end; ++i) out.tokens[i] = mask_token;
  return out;
}

// ---------------------------------------------------------------------------
// Teacher
// ---------------------------------------------------------------------------

template <typename S>
Teacher<S>::Teacher(TeacherConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.vocab_size == 0) throw std::invalid_argument("Teacher: vocab_size not set");
  if (cfg_.mask_span_tokens % 16 != 0)
    throw std::invalid_argument("Teacher: mask span must be a multiple of 16 tokens");
  Rng rng(seed);
  const std::size_t w = cfg_.width();
  token_emb_ = Embedding<S>(params_, "token_emb", cfg_.vocab_size, 32, rng);
  sub_table_ = params_.add("pos_subdivision", init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  voice_table_ = params_.add("pos_voice", init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  input_proj_ = Linear<S>(params_, "input_proj", 32 + 2 * cfg_.positional_dim, w, rng);
  TransformerStackConfig sc;
  sc.width = w;
  sc.heads = cfg_.heads;
  sc.head_dim = cfg_.head_dim;
  sc.ff_dim = cfg_.ff_dim;
  sc.layers = cfg_.layers;
  sc.max_len = cfg_.max_tokens;
  sc.kind = MaskKind::full;
  sc.dropout = cfg_.dropout;
  stack_ = TransformerStack<S>(params_, "stack", sc, rng);
  head_ = Linear<S>();
  head_.w = params_.add("head.w", Tensor<S>({w, cfg_.vocab_size}));
  head_.b = params_.add("head.b", Tensor<S>({cfg_.vocab_size}));
}

template <typename S>
Var<S> Teacher<S>::predict_logits(const std::vector<std::vector<int>>& masked_tokens,
                                  const std::vector<std::size_t>& centers, Rng* rng,
                                  bool training) const {
  if (masked_tokens.empty() || masked_tokens.size() != centers.size())
    throw std::invalid_argument("Teacher::predict_logits: bad batch");
  Rng& r = rng ? *rng : dummy_rng<S>();
  const std::size_t b = masked_tokens.size(), t = masked_tokens[0].size();
  std::vector<int> flat, sub_ix, voice_ix;
  for (const auto& row : masked_tokens) {
    if (row.size() != t) throw std::invalid_argument("Teacher::predict_logits: ragged batch");
    for (std::size_t j = 0; j < t; ++j) {
      flat.push_back(row[j]);
      sub_ix.push_back(static_cast<int>((j / 4) % 4));
      voice_ix.push_back(static_cast<int>(j % 4));
    }
  }
  Var<S> emb = concat_cols<S>({token_emb_(flat), gather_rows(sub_table_, sub_ix),
                               gather_rows(voice_table_, voice_ix)});
  Var<S> x = stack_.forward(input_proj_(emb), b, t, build_mask(MaskKind::full, t), r, training);
  std::vector<int> rows;
  for (std::size_t bi = 0; bi < b; ++bi)
    rows.push_back(static_cast<int>(bi * t + centers[bi]));
  return head_(gather_rows(x, rows));
}

template <typename S>
Tensor<S> Teacher<S>::predict_distribution(const std::vector<int>& tokens,
                                           std::size_t center, int mask_token) const {
  MaskedSpan m = mask_span(tokens, center, cfg_.mask_span_tokens, mask_token);
  Var<S> logits = predict_logits({m.tokens}, {center}, nullptr, false);
  const std::size_t v = logits.value().dim(1);
  Tensor<S> probs({v});
  S mx = logits.value()[0];
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits.value()[j]);
  S z = 0;
  for (std::size_t j = 0; j < v; ++j) {
    probs[j] = std::exp(logits.value()[j] - mx);
    z += probs[j];
  }
  for (std::size_t j = 0; j < v; ++j) probs[j] /= z;
  return probs;
}

template <typename S>
std::vector<Tensor<S>> Teacher<S>::snapshot() const {
  std::vector<Tensor<S>> snap;
  for (const auto& p : params_.items()) snap.push_back(p.var.value());
  return snap;
}

template <typename S>
void Teacher<S>::restore(const std::vector<Tensor<S>>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i)
    params_.items()[i].var.mutable_value() = snap[i];
}

template <typename S>
TeacherTrainResult<S> train_teacher(const Corpus& corpus, const TeacherConfig& cfg_in,
                                    std::uint64_t seed) {
  TeacherConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab.size();
  const int mask_token = corpus.vocab.mask_index();
  const int pad = corpus.vocab.pad_index();
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);

  TeacherTrainResult<S> result;
  result.model = std::make_unique<Teacher<S>>(cfg, seed);
  Teacher<S>& model = *result.model;
  Adam<S> opt(model.params().vars(), static_cast<S>(cfg.learning_rate));
  Rng shuffle_rng(seed + 3);
  Rng train_rng(seed + 4);
  Rng center_rng(seed + 5);

  std::vector<int> ids;
  for (std::size_t i = 0; i < table.pieces.size(); ++i) {
    const std::size_t t = table.pieces[i].tokens.size();
    if (t >= cfg.mask_span_tokens) ids.push_back(static_cast<int>(i));
  }
  if (ids.empty())
    throw std::invalid_argument("train_teacher: no piece is long enough for the mask span");

  std::vector<Tensor<S>> last_good = model.snapshot();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(ids);
    double ce_sum = 0;
    std::size_t steps = 0;
    for (const auto& group : bucket_ids(table, ids, cfg.pieces_per_step)) {
      std::vector<std::vector<int>> masked;
      std::vector<std::size_t> centers;
      auto targets = std::make_shared<std::vector<int>>();
      for (int id : group) {
        const auto& tokens = table.pieces[id].tokens;
        const std::size_t span = cfg.mask_span_tokens;
        const std::size_t lo = span / 2;
        const std::size_t hi = tokens.size() - span + span / 2;
        for (std::size_t c = 0; c < cfg.centers_per_piece; ++c) {
          std::size_t center = lo + center_rng.next_below(hi - lo + 1);
          if (tokens[center] == pad) continue;
          MaskedSpan m = mask_span(tokens, center, span, mask_token);
          masked.push_back(std::move(m.tokens));
          centers.push_back(center);
          targets->push_back(m.target);
        }
      }
      if (masked.empty()) continue;
      Var<S> logits = model.predict_logits(masked, centers, &train_rng, true);
      Var<S> loss = cross_entropy_logits(logits, targets);
      const double v = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(v)) {
        model.restore(last_good);
        result.diverged = true;
        return result;
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      ce_sum += v;
      ++steps;
    }
    result.metrics.push_back({epoch, ce_sum / std::max<std::size_t>(steps, 1)});
    last_good = model.snapshot();
  }
  return result;
}

// ---------------------------------------------------------------------------
// DistilledEncoder
// ---------------------------------------------------------------------------

template <typename S>
DistilledEncoder<S>::DistilledEncoder(DistilledEncoderConfig cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg_.vocab_size == 0) throw std::invalid_argument("DistilledEncoder: vocab_size not set");
  if (cfg_.subseq_tokens != 16)
    throw std::invalid_argument("DistilledEncoder: the two stride-4 stages fix l = 16");
  Rng rng(seed);
  const std::size_t w = cfg_.width();
  token_emb_ = Embedding<S>(params_, "token_emb", cfg_.vocab_size, 32, rng);
  sub_table_ = params_.add("pos_subdivision", init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  voice_table_ = params_.add("pos_voice", init_normal<S>({4, cfg_.positional_dim}, 0.5, rng));
  input_proj_ = Linear<S>(params_, "input_proj", 32 + 2 * cfg_.positional_dim, w, rng);

  TransformerStackConfig sc;
  sc.width = w;
  sc.heads = cfg_.heads;
  sc.head_dim = cfg_.head_dim;
  sc.ff_dim = cfg_.ff_dim;
  sc.layers = cfg_.stack_layers;
  sc.max_len = cfg_.max_tokens;
  sc.kind = MaskKind::full;
  sc.dropout = cfg_.dropout;
  stage_a_ = TransformerStack<S>(params_, "stage_a", sc, rng);
  down1_ = Linear<S>(params_, "down1", 4 * w, w, rng);
  TransformerStackConfig sb = sc;
  sb.max_len = cfg_.max_tokens / 4;
  stage_b_ = TransformerStack<S>(params_, "stage_b", sb, rng);
  down2_ = Linear<S>(params_, "down2", 4 * w, w, rng);
  z_head_ = Linear<S>(params_, "z_head", w, cfg_.z_dim, rng);
  centroids_ = params_.add("quantizer.centroids",
                           init_normal<S>({cfg_.codebook_size, cfg_.z_dim}, 0.1, rng));

  z_in_ = Linear<S>(params_, "z_in", cfg_.z_dim, w, rng);
  up2_ = Linear<S>(params_, "up2", w, 4 * w, rng);
  dec_stage_b_ = TransformerStack<S>(params_, "dec_stage_b", sb, rng);
  up1_ = Linear<S>(params_, "up1", w, 4 * w, rng);
  dec_stage_a_ = TransformerStack<S>(params_, "dec_stage_a", sc, rng);
  recon_head_ = Linear<S>();
  recon_head_.w = params_.add("recon_head.w", Tensor<S>({w, cfg_.vocab_size}));
  recon_head_.b = params_.add("recon_head.b", Tensor<S>({cfg_.vocab_size}));
}

template <typename S>
Var<S> DistilledEncoder<S>::encode_latents(
    const std::vector<const StructuredSequence*>& pieces, Rng* rng, bool training) const {
  if (pieces.empty()) throw std::invalid_argument("encode_latents: empty batch");
  Rng& r = rng ? *rng : dummy_rng<S>();
  const std::size_t b = pieces.size();
  const std::size_t t = pieces[0]->tokens.size();
  if (t % 16 != 0) throw std::invalid_argument("encode_latents: token count not a multiple of 16");
  std::vector<int> flat, sub_ix, voice_ix;
  for (const auto* piece : pieces) {
    if (piece->tokens.size() != t)
      throw std::invalid_argument("encode_latents: pieces in one batch must share a length");
    for (std::size_t j = 0; j < t; ++j) {
      flat.push_back(piece->tokens[j]);
      sub_ix.push_back(static_cast<int>((j / 4) % 4));
      voice_ix.push_back(static_cast<int>(j % 4));
    }
  }
  Var<S> emb = concat_cols<S>({token_emb_(flat), gather_rows(sub_table_, sub_ix),
                               gather_rows(voice_table_, voice_ix)});
  const std::size_t w = cfg_.width();
  Var<S> x = stage_a_.forward(input_proj_(emb), b, t, build_mask(MaskKind::full, t), r, training);
  x = down1_(reshape(x, {b * t / 4, 4 * w}));
  x = stage_b_.forward(x, b, t / 4, build_mask(MaskKind::full, t / 4), r, training);
  x = down2_(reshape(x, {b * t / 16, 4 * w}));
  return z_head_(x);
}

template <typename S>
Var<S> DistilledEncoder<S>::reconstruct_logits(const Var<S>& z, std::size_t batch,
                                               std::size_t codes_len, Rng* rng,
                                               bool training) const {
  Rng& r = rng ? *rng : dummy_rng<S>();
  const std::size_t w = cfg_.width();
  Var<S> x = z_in_(z);
  x = reshape(up2_(x), {batch * codes_len * 4, w});
  x = dec_stage_b_.forward(x, batch, codes_len * 4, build_mask(MaskKind::full, codes_len * 4),
                           r, training);
  x = reshape(up1_(x), {batch * codes_len * 16, w});
  x = dec_stage_a_.forward(x, batch, codes_len * 16,
                           build_mask(MaskKind::full, codes_len * 16), r, training);
  return recon_head_(x);
}

template <typename S>
void DistilledEncoder<S>::init_codebook_from(const SubseqTable& table, std::uint64_t seed) {
  const std::size_t c = cfg_.codebook_size;
  if (table.total() < c)
    throw std::invalid_argument("init_codebook_from: not enough subsequences");
  std::vector<Tensor<S>> rows;
  Tensor<S> pool({table.total(), cfg_.z_dim});
  std::size_t at = 0;
  for (const auto& piece : table.pieces) {
    Var<S> z = encode_latents({&piece}, nullptr, false);
    std::copy(z.value().data(), z.value().data() + z.value().size(), pool.data() + at);
    at += z.value().size();
    if (at >= 4 * c * cfg_.z_dim && at >= c * cfg_.z_dim) break;
  }
  Tensor<S> trimmed({at / cfg_.z_dim, cfg_.z_dim});
  std::copy(pool.data(), pool.data() + at, trimmed.data());
  centroids_.mutable_value() = init_codebook(trimmed, c, seed);
}

template <typename S>
std::vector<Tensor<S>> DistilledEncoder<S>::snapshot() const {
  std::vector<Tensor<S>> snap;
  for (const auto& p : params_.items()) snap.push_back(p.var.value());
  return snap;
}

template <typename S>
void DistilledEncoder<S>::restore(const std::vector<Tensor<S>>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i)
    params_.items()[i].var.mutable_value() = snap[i];
}

template <typename S>
std::vector<int> distilled_encode_piece(const DistilledEncoder<S>& enc,
                                        const StructuredSequence& piece) {
  Var<S> z = enc.encode_latents({&piece}, nullptr, false);
  return quantize_batch(z.value(), enc.codebook().centroids.value());
}

template <typename S>
Conditioning<S> make_distilled_conditioning(const DistilledEncoder<S>& enc,
                                            const SubseqTable& table) {
  Conditioning<S> cond;
  for (const auto& piece : table.pieces) cond.codes.push_back(distilled_encode_piece(enc, piece));
  return cond;
}

template <typename S>
DistilledTrainResult<S> train_distilled_encoder(const Corpus& corpus,
                                                const Teacher<S>& teacher,
                                                const DistilledEncoderConfig& cfg_in,
                                                std::uint64_t seed) {
  DistilledEncoderConfig cfg = cfg_in;
  if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab.size();
  const int mask_token = corpus.vocab.mask_index();
  SubseqTable table = SubseqTable::from_corpus(corpus, cfg.subseq_tokens);

  DistilledTrainResult<S> result;
  result.model = std::make_unique<DistilledEncoder<S>>(cfg, seed);
  DistilledEncoder<S>& model = *result.model;
  model.init_codebook_from(table, seed + 1);

  result.optimizer =
      std::make_unique<Adam<S>>(model.params().vars(), static_cast<S>(cfg.learning_rate));
  Adam<S>& opt = *result.optimizer;
  Rng shuffle_rng(seed + 3);
  Rng train_rng(seed + 4);
  Rng pos_rng(seed + 5);

  // Teacher targets need the whole span inside the piece.
  const std::size_t span = teacher.config().mask_span_tokens;
  std::vector<int> ids;
  for (std::size_t i = 0; i < table.pieces.size(); ++i)
    if (table.pieces[i].tokens.size() >= span) ids.push_back(static_cast<int>(i));
  if (ids.empty())
    throw std::invalid_argument("train_distilled_encoder: pieces shorter than the teacher span");

  std::vector<Tensor<S>> last_good = model.snapshot();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(ids);
    double dl_sum = 0, vq_sum = 0;
    std::size_t steps = 0;
    for (const auto& group : bucket_ids(table, ids, cfg.pieces_per_step)) {
      std::vector<const StructuredSequence*> pieces;
      for (int id : group) pieces.push_back(&table.pieces[id]);
      const std::size_t t = pieces[0]->tokens.size();
      const std::size_t codes_len = t / 16;

      Var<S> z = model.encode_latents(pieces, &train_rng, true);
      Var<S> zq = straight_through(z, model.codebook().centroids);
      Var<S> logits = model.reconstruct_logits(zq, pieces.size(), codes_len, &train_rng, true);

      const std::size_t lo = span / 2, hi = t - span + span / 2;
      std::vector<int> rows;
      std::vector<Tensor<S>> target_rows;
      for (std::size_t bi = 0; bi < pieces.size(); ++bi)
        for (std::size_t c = 0; c < cfg.positions_per_piece; ++c) {
          const std::size_t pos = lo + pos_rng.next_below(hi - lo + 1);
          rows.push_back(static_cast<int>(bi * t + pos));
          target_rows.push_back(teacher.predict_distribution(pieces[bi]->tokens, pos, mask_token));
        }
      Tensor<S> targets({rows.size(), cfg.vocab_size});
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(target_rows[i].data(), target_rows[i].data() + cfg.vocab_size,
                  targets.data() + i * cfg.vocab_size);
      Var<S> distill = cross_entropy_soft(gather_rows(logits, rows), std::move(targets));
      Var<S> vq = vq_loss(z, model.codebook());
      Var<S> loss = add(distill, vq);
      const double v = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(v)) {
        model.restore(last_good);
        result.diverged = true;
        return result;
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      dl_sum += static_cast<double>(distill.value()[0]);
      vq_sum += static_cast<double>(vq.value()[0]);
      ++steps;
    }
    std::vector<int> codes;
    for (const auto& piece : table.pieces) {
      auto pc = distilled_encode_piece(model, piece);
      codes.insert(codes.end(), pc.begin(), pc.end());
    }
    DistilledMetricsRow row;
    row.epoch = epoch;
    row.distill_loss = dl_sum / std::max<std::size_t>(steps, 1);
    row.vq_loss = vq_sum / std::max<std::size_t>(steps, 1);
    row.perplexity = usage_stats(codes, cfg.codebook_size).perplexity;
    result.metrics.push_back(row);
    last_good = model.snapshot();
  }
  return result;
}

#define VQCPC_DST_INSTANTIATE(S)                                                        \
  template class Teacher<S>;                                                            \
  template TeacherTrainResult<S> train_teacher<S>(const Corpus&, const TeacherConfig&,  \
                                                  std::uint64_t);                       \
  template class DistilledEncoder<S>;                                                   \
  template std::vector<int> distilled_encode_piece<S>(const DistilledEncoder<S>&,       \
                                                      const StructuredSequence&);       \
  template Conditioning<S> make_distilled_conditioning<S>(const DistilledEncoder<S>&,   \
                                                          const SubseqTable&);          \
  template DistilledTrainResult<S> train_distilled_encoder<S>(                          \
      const Corpus&, const Teacher<S>&, const DistilledEncoderConfig&, std::uint64_t);

VQCPC_DST_INSTANTIATE(float)
VQCPC_DST_INSTANTIATE(double)

#undef VQCPC_DST_INSTANTIATE

}  // namespace vqcpc
