#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/gradcheck.hpp"

using namespace vqcpc;

namespace {

EncoderConfig toy_config(std::size_t vocab, std::size_t l = 8) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.subseq_tokens = l;
  cfg.token_embedding_dim = 6;
  cfg.recurrent_hidden = 8;
  cfg.recurrent_layers = 2;
  cfg.z_dim = 3;
  cfg.projection_hidden = 8;
  cfg.projection_layers = 2;
  cfg.projected_dim = 8;
  cfg.context_hidden = 8;
  cfg.context_layers = 2;
  cfg.codebook_size = 4;
  cfg.future_steps = 3;
  cfg.candidate_set = 4;
  cfg.dropout = 0.0;
  return cfg;
}

Corpus toy_corpus(std::size_t pieces, std::size_t beats, std::uint64_t seed) {
  return synthesize_corpus(4, pieces, beats, seed);
}

}  // namespace

TEST_CASE("default config carries the published encoder settings") {
  EncoderConfig cfg;
  CHECK(cfg.token_embedding_dim == 32);
  CHECK(cfg.recurrent_hidden == 512);
  CHECK(cfg.recurrent_layers == 2);
  CHECK(cfg.z_dim == 3);
  CHECK(cfg.projection_hidden == 512);
  CHECK(cfg.projection_layers == 2);
  CHECK(cfg.projected_dim == 32);
  CHECK(cfg.context_hidden == 512);
  CHECK(cfg.context_layers == 2);
  CHECK(cfg.codebook_size == 16);
  CHECK(cfg.commitment_beta == 0.25);
  CHECK(cfg.future_steps == 6);
  CHECK(cfg.dropout == 0.1);
  CHECK(cfg.learning_rate == 1e-4);
}

TEST_CASE("embed_subsequence emits a z_dim vector, deterministically") {
  EncoderConfig cfg = toy_config(12, 16);
  CpcEncoder<float> enc(cfg, 1);
  std::vector<int> tokens(16);
  for (std::size_t i = 0; i < 16; ++i) tokens[i] = static_cast<int>(i % 12);
  Tensor<float> z1 = embed_subsequence(enc, tokens);
  Tensor<float> z2 = embed_subsequence(enc, tokens);
  CHECK(z1.shape() == std::vector<std::size_t>{3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(z1[i] == z2[i]);
  CHECK_THROWS_AS(embed_subsequence(enc, std::vector<int>(5, 0)), std::invalid_argument);
  CHECK_THROWS_AS(embed_subsequence(enc, std::vector<int>(16, 99)), std::out_of_range);
}

TEST_CASE("default-size encoder emits 3-dimensional latents") {
  EncoderConfig cfg;  // published sizes
  cfg.vocab_size = 40;
  CpcEncoder<float> enc(cfg, 2);
  std::vector<int> tokens(16, 7);
  CHECK(embed_subsequence(enc, tokens).shape() == std::vector<std::size_t>{3});
  // context vector is the 512-wide hidden state projected to d = 32
  Tensor<float> window({1, 32});
  CHECK(build_context(enc, window).shape() == std::vector<std::size_t>{32});
}

TEST_CASE("encode composes embedding and quantization") {
  Corpus corpus = toy_corpus(4, 4, 5);
  EncoderConfig cfg = toy_config(corpus.vocab.size(), 16);
  CpcEncoder<float> enc(cfg, 3);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  enc.init_codebook_from(table, 7);
  for (int piece = 0; piece < 2; ++piece) {
    const auto codes = encode_piece(enc, table.pieces[piece]);
    CHECK(codes.size() == table.pieces[piece].num_subsequences());
    for (std::size_t i = 0; i < codes.size(); ++i) {
      CHECK(codes[i] >= 0);
      CHECK(codes[i] < static_cast<int>(cfg.codebook_size));
      Assignment<float> a = encode(enc, table.pieces[piece].row_vec(i));
      CHECK(a.index == codes[i]);
      // brute-force nearest-centroid cross-check
      Tensor<float> z = embed_subsequence(enc, table.pieces[piece].row_vec(i));
      int best = 0;
      float best_d = 1e30f;
      const Tensor<float>& c = enc.centroids().value();
      for (std::size_t k = 0; k < cfg.codebook_size; ++k) {
        float d = 0;
        for (std::size_t j = 0; j < 3; ++j) {
          const float diff = z[j] - c.at2(k, j);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      CHECK(a.index == best);
    }
  }
}

TEST_CASE("build_context pads short windows with zeros on the left") {
  EncoderConfig cfg = toy_config(10);
  CpcEncoder<float> enc(cfg, 9);
  Rng rng(4);
  Tensor<float> window({3, cfg.projected_dim});
  for (std::size_t i = 0; i < window.size(); ++i)
    window[i] = static_cast<float>(rng.next_normal());
  Tensor<float> h = build_context(enc, window);
  CHECK(h.shape() == std::vector<std::size_t>{cfg.projected_dim});

  // a window shorter than K equals the zero-left-padded full window
  Tensor<float> shorter({2, cfg.projected_dim});
  for (std::size_t i = 0; i < shorter.size(); ++i)
    shorter[i] = window[cfg.projected_dim + i];
  Tensor<float> manual({3, cfg.projected_dim});
  for (std::size_t i = 0; i < shorter.size(); ++i)
    manual[cfg.projected_dim + i] = shorter[i];
  Tensor<float> h_short = build_context(enc, shorter);
  Tensor<float> h_manual = build_context(enc, manual);
  for (std::size_t i = 0; i < h.size(); ++i)
    CHECK(h_short[i] == doctest::Approx(h_manual[i]));
  CHECK_THROWS_AS(build_context(enc, Tensor<float>({4, cfg.projected_dim})),
                  std::invalid_argument);
}

TEST_CASE("h_i ignores positions after i (anticipation-free context)") {
  Corpus corpus = toy_corpus(2, 8, 6);
  EncoderConfig cfg = toy_config(corpus.vocab.size(), 16);
  CpcEncoder<float> enc(cfg, 11);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  enc.init_codebook_from(table, 1);

  std::vector<const int*> rows;
  for (std::size_t i = 0; i < table.pieces[0].num_subsequences(); ++i)
    rows.push_back(table.pieces[0].row(i));
  Var<float> z = enc.embed_rows(rows, nullptr, false);
  Var<float> ztil = enc.project(z, nullptr, false);

  // context for anchor i = 3: window positions 1..3
  std::vector<std::vector<long>> slots = {{1, 2, 3}};
  Var<float> h = enc.context_batch(ztil, slots, nullptr, false);

  // perturb z~ at position 4 (future) -> h unchanged, exactly
  Tensor<float> perturbed = ztil.value();
  for (std::size_t j = 0; j < cfg.projected_dim; ++j) perturbed.at2(4, j) += 10.0f;
  Var<float> h2 = enc.context_batch(Var<float>::leaf(perturbed, false), slots, nullptr, false);
  for (std::size_t j = 0; j < cfg.projected_dim; ++j)
    CHECK(h.value()[j] == h2.value()[j]);

  // perturbing inside the window does change h
  Tensor<float> inside = ztil.value();
  for (std::size_t j = 0; j < cfg.projected_dim; ++j) inside.at2(2, j) += 10.0f;
  Var<float> h3 = enc.context_batch(Var<float>::leaf(inside, false), slots, nullptr, false);
  bool any_diff = false;
  for (std::size_t j = 0; j < cfg.projected_dim; ++j)
    if (h.value()[j] != h3.value()[j]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("score: zero matrix gives 1, identity matches hand value, exponent scales") {
  EncoderConfig cfg = toy_config(10);
  CpcEncoder<float> enc(cfg, 13);
  const std::size_t d = cfg.projected_dim;
  Tensor<float> ztil({d}), h({d});
  ztil[0] = 1.0f;
  h[0] = 2.0f;
  // scorers are zero-initialized
  CHECK(score(enc, ztil, h, 1) == doctest::Approx(1.0));
  CHECK(score(enc, ztil, h, cfg.future_steps) == doctest::Approx(1.0));
  CHECK_THROWS_AS(score(enc, ztil, h, 0), std::out_of_range);
  CHECK_THROWS_AS(score(enc, ztil, h, cfg.future_steps + 1), std::out_of_range);

  // set W_1 = identity
  Tensor<float>& w = enc.scorer(1).mutable_value();
  for (std::size_t i = 0; i < d; ++i) w.at2(i, i) = 1.0f;
  CHECK(score(enc, ztil, h, 1) == doctest::Approx(std::exp(2.0)).epsilon(1e-5));

  // score(a z, h) = score(z, h)^a
  Tensor<float> z3 = ztil;
  for (std::size_t i = 0; i < d; ++i) z3[i] *= 3.0f;
  CHECK(score(enc, z3, h, 1) ==
        doctest::Approx(std::pow(score(enc, ztil, h, 1), 3.0f)).epsilon(1e-4));
}

TEST_CASE("info_nce_loss equals ln N exactly under zero scorers") {
  Corpus corpus = toy_corpus(3, 8, 21);
  for (std::size_t n : {2u, 4u, 16u}) {
    EncoderConfig cfg = toy_config(corpus.vocab.size(), 16);
    cfg.candidate_set = n;
    CpcEncoder<float> enc(cfg, 17);
    SubseqTable table = SubseqTable::from_corpus(corpus, 16);
    enc.init_codebook_from(table, 2);
    NegativeSampler sampler(NegativeSampler::Mode::uniform, 5);
    auto parts = info_nce_loss(enc, table, {0, 1, 2}, sampler, nullptr, false);
    CHECK(parts.nce.value()[0] ==
          doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-6));
  }
}

TEST_CASE("info_nce softmax value on a hand-built candidate set") {
  // N = 4, positive logit 2, negatives 0 -> -ln(e^2 / (e^2 + 3))
  const double want = -std::log(std::exp(2.0) / (std::exp(2.0) + 3.0));
  CHECK(want == doctest::Approx(0.3407529).epsilon(1e-5));
  auto logits = Var<double>::leaf(Tensor<double>({1, 4}, {2, 0, 0, 0}), false);
  auto targets = std::make_shared<std::vector<int>>(std::vector<int>{0});
  Var<double> ce = cross_entropy_logits(logits, targets);
  CHECK(ce.value()[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("same-sequence sampler draws from the anchor piece only") {
  Corpus corpus = toy_corpus(6, 8, 23);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  NegativeSampler sampler(NegativeSampler::Mode::same_sequence, 3);
  const int piece = 2, positive = 5;
  for (int trial = 0; trial < 20; ++trial) {
    auto negs = sampler.draw(table, piece, positive, 7, 8);
    CHECK(negs.size() == 7);
    for (const auto& [p, pos] : negs) {
      CHECK(p == piece);
      CHECK(pos != positive);
      CHECK(pos >= 0);
      CHECK(pos < 8);
    }
  }
  // piece too short for the requested candidate-set size
  CHECK_THROWS_AS(sampler.draw(table, piece, positive, 7, 100), std::invalid_argument);
}

TEST_CASE("uniform sampler covers the corpus but never the positive slot") {
  Corpus corpus = toy_corpus(4, 4, 29);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  NegativeSampler sampler(NegativeSampler::Mode::uniform, 7);
  std::set<int> pieces_seen;
  for (int trial = 0; trial < 200; ++trial)
    for (const auto& [p, pos] : sampler.draw(table, 0, 1, 3, 4)) {
      CHECK(!(p == 0 && pos == 1));
      pieces_seen.insert(p);
    }
  CHECK(pieces_seen.size() == 4);

  // seeded determinism
  NegativeSampler s1(NegativeSampler::Mode::uniform, 99);
  NegativeSampler s2(NegativeSampler::Mode::uniform, 99);
  for (int trial = 0; trial < 10; ++trial)
    CHECK(s1.draw(table, 0, 1, 5, 4) == s2.draw(table, 0, 1, 5, 4));
}

TEST_CASE("uniform sampling over a single-piece corpus degenerates to same-sequence") {
  Corpus corpus = toy_corpus(1, 8, 31);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  NegativeSampler sampler(NegativeSampler::Mode::uniform, 1);
  for (const auto& [p, pos] : sampler.draw(table, 0, 3, 20, 4)) CHECK(p == 0);
}

TEST_CASE("anchors lacking a future chunk are rejected") {
  Corpus corpus = toy_corpus(1, 1, 37);  // a single 1-beat piece: no future
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  NegativeSampler sampler(NegativeSampler::Mode::uniform, 1);
  CHECK_THROWS_AS(build_nce_plan(table, {0}, sampler, 3, 4, 0, nullptr),
                  std::invalid_argument);
}

TEST_CASE("InfoNCE + VQ loss through the full encoder passes gradcheck") {
  // toy configuration: small V, l = 8, C = 4, widths <= 16
  Corpus corpus = toy_corpus(2, 6, 41);
  EncoderConfig cfg = toy_config(corpus.vocab.size(), 8);
  SubseqTable table = SubseqTable::from_corpus(corpus, 8);
  CpcEncoder<double> enc(cfg, 19);
  enc.init_codebook_from(table, 3);
  NegativeSampler sampler(NegativeSampler::Mode::same_sequence, 11);
  Rng anchor_rng(1);
  NcePlan plan = build_nce_plan(table, {0}, sampler, cfg.future_steps, cfg.candidate_set, 2,
                                &anchor_rng);
  auto builder = [&]() {
    return info_nce_from_plan(enc, table, plan, nullptr, false).total;
  };
  auto report = gradcheck_params<double>(builder, enc.params().items(), 1e-3, 1e-5);
  INFO(report.to_string());
  CHECK(report.pass);
}

TEST_CASE("training descends and stays deterministic on a tiny corpus") {
  Corpus corpus = toy_corpus(6, 8, 43);
  EncoderConfig cfg = toy_config(corpus.vocab.size(), 16);
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  cfg.pieces_per_step = 2;
  auto r1 = train_encoder<float>(corpus, cfg, NegativeSampler::Mode::same_sequence, 7);
  auto r2 = train_encoder<float>(corpus, cfg, NegativeSampler::Mode::same_sequence, 7);
  REQUIRE(!r1.diverged);
  REQUIRE(r1.metrics.size() == 2);
  // identical seeds give identical weights
  auto s1 = r1.model->snapshot();
  auto s2 = r2.model->snapshot();
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i)
    for (std::size_t j = 0; j < s1[i].size(); ++j) CHECK(s1[i][j] == s2[i][j]);
  // loss after an epoch of training is no worse than the ln N start
  CHECK(r1.metrics.back().nce_loss <=
        std::log(static_cast<double>(cfg.candidate_set)) + 1e-6);
}
