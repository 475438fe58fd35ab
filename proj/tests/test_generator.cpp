#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vqcpc/generator.hpp"

using namespace vqcpc;

namespace {

DecoderConfig toy_decoder_config(std::size_t vocab, std::size_t l, std::size_t seq_tokens) {
  DecoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.num_codes = 4;
  cfg.subseq_tokens = l;
  cfg.sequence_tokens = seq_tokens;
  cfg.start_token = 1;
  cfg.token_embedding_dim = 8;
  cfg.code_embedding_dim = 8;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 6;
  cfg.feedforward_dim = 16;
  cfg.positional_dim = 4;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("nucleus filter hand value") {
  auto out = nucleus_filter({0.5, 0.3, 0.15, 0.05}, 0.8);
  CHECK(out[0] == doctest::Approx(0.625));
  CHECK(out[1] == doctest::Approx(0.375));
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.0);
}

TEST_CASE("nucleus filter with p = 1 keeps the distribution") {
  std::vector<double> probs = {0.4, 0.1, 0.25, 0.25};
  auto out = nucleus_filter(probs, 1.0);
  for (std::size_t i = 0; i < probs.size(); ++i)
    CHECK(out[i] == doctest::Approx(probs[i]).epsilon(1e-12));
}

TEST_CASE("nucleus filter leaves one-hot inputs alone") {
  for (double p : {0.1, 0.5, 1.0}) {
    auto out = nucleus_filter({0.0, 1.0, 0.0}, p);
    CHECK(out[1] == doctest::Approx(1.0));
    CHECK(out[0] == 0.0);
    CHECK(out[2] == 0.0);
  }
}

TEST_CASE("nucleus filter breaks probability ties toward lower indices") {
  auto out = nucleus_filter({0.25, 0.25, 0.25, 0.25}, 0.5);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.0);
}

TEST_CASE("nucleus filter validates its input") {
  CHECK_THROWS_AS(nucleus_filter({0.5, 0.4}, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(nucleus_filter({0.5, 0.5}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(nucleus_filter({0.5, 0.5}, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(nucleus_filter({0.7, -0.2, 0.5}, 0.8), std::invalid_argument);
}

TEST_CASE("nucleus output is a distribution over a subset of the support") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> probs(8);
    double z = 0;
    for (auto& p : probs) {
      p = rng.next_double() < 0.3 ? 0.0 : rng.next_double();
      z += p;
    }
    if (z == 0) continue;
    for (auto& p : probs) p /= z;
    const double top_p = 0.05 + 0.95 * rng.next_double();
    auto out = nucleus_filter(probs, top_p);
    double sum = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      CHECK(out[i] >= 0.0);
      if (probs[i] == 0.0) CHECK(out[i] == 0.0);
      sum += out[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("temper hand values") {
  auto half = temper({1.0, 0.0}, 0.5);
  const double e2 = std::exp(2.0);
  CHECK(half[0] == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-9));
  CHECK(half[1] == doctest::Approx(1 / (e2 + 1)).epsilon(1e-9));

  auto plain = temper({0.3, -0.2, 1.1}, 1.0);
  double z = std::exp(0.3) + std::exp(-0.2) + std::exp(1.1);
  CHECK(plain[0] == doctest::Approx(std::exp(0.3) / z).epsilon(1e-9));

  auto uniform = temper({2.0, 2.0, 2.0, 2.0}, 0.123);
  for (double p : uniform) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(temper({1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("sampling defaults follow the published values") {
  SamplingConfig cfg;
  CHECK(cfg.top_p == 0.8);
  CHECK(cfg.temperature == 0.95);
}

TEST_CASE("generate: shape, determinism, banned tokens") {
  const std::size_t l = 8, len = 3, vocab = 10;
  DecoderConfig cfg = toy_decoder_config(vocab, l, l * len);
  Decoder<float> dec(cfg, 3);
  // nudge the head so logits are not uniform
  Rng wiggle(5);
  for (auto& p : dec.params().items())
    if (p.name == "head.w")
      for (std::size_t i = 0; i < p.var.value().size(); ++i)
        p.var.mutable_value()[i] = static_cast<float>(wiggle.next_normal() * 0.3);

  std::vector<int> codes = {0, 2, 3};
  SamplingConfig sampling;
  sampling.seed = 42;
  const std::vector<int> banned = {0, 1};  // PAD, START
  StructuredSequence a = generate(dec, codes, sampling, banned);
  CHECK(a.subseq_tokens == l);
  CHECK(a.num_subsequences() == len);
  CHECK(a.tokens.size() == l * len);
  for (int t : a.tokens) {
    CHECK(t != 0);
    CHECK(t != 1);
  }
  StructuredSequence b = generate(dec, codes, sampling, banned);
  CHECK(a.tokens == b.tokens);
  SamplingConfig other = sampling;
  other.seed = 43;
  StructuredSequence c = generate(dec, codes, other, banned);
  CHECK(c.tokens.size() == a.tokens.size());

  CHECK_THROWS_AS(generate(dec, {0, 9, 1}, sampling, banned), std::out_of_range);
}

TEST_CASE("published sequence length: 24 codes of 16 tokens give 384") {
  DecoderConfig cfg;
  cfg.vocab_size = 12;
  cfg.num_codes = 16;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.feedforward_dim = 8;
  cfg.token_embedding_dim = 4;
  cfg.code_embedding_dim = 4;
  cfg.positional_dim = 2;
  Decoder<float> dec(cfg, 7);
  std::vector<int> codes(24, 5);
  SamplingConfig sampling;
  sampling.seed = 1;
  StructuredSequence out = generate(dec, codes, sampling, {0, 1});
  CHECK(out.tokens.size() == 384);
}

TEST_CASE("vary preserves the template shape and composes encode with generate") {
  Corpus corpus = synthesize_corpus(4, 4, 2, 9);
  EncoderConfig ecfg;
  ecfg.vocab_size = corpus.vocab.size();
  ecfg.subseq_tokens = 16;
  ecfg.token_embedding_dim = 6;
  ecfg.recurrent_hidden = 8;
  ecfg.projection_hidden = 8;
  ecfg.projected_dim = 8;
  ecfg.context_hidden = 8;
  ecfg.codebook_size = 4;
  ecfg.future_steps = 2;
  ecfg.dropout = 0.0;
  CpcEncoder<float> enc(ecfg, 11);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  enc.init_codebook_from(table, 13);

  DecoderConfig dcfg = toy_decoder_config(corpus.vocab.size(), 16, 32);
  dcfg.start_token = corpus.vocab.start_index();
  Decoder<float> dec(dcfg, 15);

  const StructuredSequence& tmpl = table.pieces[0];
  SamplingConfig sampling;
  sampling.seed = 99;
  std::vector<int> banned = {corpus.vocab.pad_index(), corpus.vocab.start_index(),
                             corpus.vocab.mask_index()};
  StructuredSequence variation = vary(enc, dec, tmpl, sampling, banned);
  CHECK(variation.subseq_tokens == tmpl.subseq_tokens);
  CHECK(variation.num_subsequences() == tmpl.num_subsequences());

  // vary = generate(encode(template))
  StructuredSequence direct = generate(dec, encode_piece(enc, tmpl), sampling, banned);
  CHECK(direct.tokens == variation.tokens);
}
