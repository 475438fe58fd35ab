#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vqcpc/distilled.hpp"

using namespace vqcpc;

namespace {

TeacherConfig toy_teacher(std::size_t vocab, std::size_t span = 32,
                          std::size_t max_tokens = 128) {
  TeacherConfig cfg;
  cfg.vocab_size = vocab;
  cfg.layers = 1;
  cfg.mask_span_tokens = span;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.ff_dim = 16;
  cfg.positional_dim = 4;
  cfg.max_tokens = max_tokens;
  cfg.dropout = 0.0;
  return cfg;
}

DistilledEncoderConfig toy_distilled(std::size_t vocab, std::size_t max_tokens = 128) {
  DistilledEncoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.stack_layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.ff_dim = 16;
  cfg.positional_dim = 4;
  cfg.max_tokens = max_tokens;
  cfg.codebook_size = 4;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("published teacher defaults") {
  TeacherConfig cfg;
  CHECK(cfg.layers == 8);
  CHECK(cfg.mask_span_tokens == 128);
  DistilledEncoderConfig dcfg;
  CHECK(dcfg.stack_layers == 4);
  CHECK(dcfg.subseq_tokens == 16);  // 4 x 4 downscale
  CHECK(dcfg.codebook_size == 16);
}

TEST_CASE("mask_span: the published example") {
  std::vector<int> tokens(384);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % 7) + 10;
  MaskedSpan m = mask_span(tokens, 192, 128, 3);
  CHECK(m.begin == 128);
  CHECK(m.end == 256);
  CHECK(m.target == tokens[192]);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i >= 128 && i < 256)
      CHECK(m.tokens[i] == 3);
    else
      CHECK(m.tokens[i] == tokens[i]);
  }
}

TEST_CASE("mask_span: degenerate single-token span") {
  std::vector<int> tokens = {5, 6, 7, 8};
  MaskedSpan m = mask_span(tokens, 2, 1, 0);
  CHECK(m.begin == 2);
  CHECK(m.end == 3);
  CHECK(m.target == 7);
  CHECK(m.tokens == std::vector<int>{5, 6, 0, 8});
}

TEST_CASE("mask_span bounds checking") {
  std::vector<int> tokens(64, 1);
  CHECK_THROWS_AS(mask_span(tokens, 2, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(mask_span(tokens, 60, 32, 0), std::invalid_argument);
  CHECK_NOTHROW(mask_span(tokens, 32, 32, 0));
}

TEST_CASE("teacher initial loss is exactly ln V and training reduces it") {
  Corpus corpus = synthesize_corpus(4, 12, 4, 3);  // 64-token pieces
  TeacherConfig cfg = toy_teacher(corpus.vocab.size(), 32, 64);
  cfg.epochs = 1;
  cfg.learning_rate = 3e-3;

  // zero-initialized head: the very first batch must score ln V
  Teacher<float> probe(cfg, 5);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  MaskedSpan m = mask_span(table.pieces[0].tokens, 20, 32, corpus.vocab.mask_index());
  Var<float> logits = probe.predict_logits({m.tokens}, {20}, nullptr, false);
  auto targets = std::make_shared<std::vector<int>>(std::vector<int>{m.target});
  Var<float> loss = cross_entropy_logits(logits, targets);
  CHECK(loss.value()[0] ==
        doctest::Approx(std::log(static_cast<float>(corpus.vocab.size()))).epsilon(1e-6));

  cfg.epochs = 4;
  auto r1 = train_teacher<float>(corpus, cfg, 7);
  REQUIRE(!r1.diverged);
  CHECK(r1.metrics.front().ce_loss <= std::log(corpus.vocab.size()) + 1e-4);
  CHECK(r1.metrics.back().ce_loss < r1.metrics.front().ce_loss);

  // determinism
  auto r2 = train_teacher<float>(corpus, cfg, 7);
  auto s1 = r1.model->snapshot();
  auto s2 = r2.model->snapshot();
  for (std::size_t i = 0; i < s1.size(); ++i)
    for (std::size_t j = 0; j < s1[i].size(); ++j) CHECK(s1[i][j] == s2[i][j]);
}

TEST_CASE("teacher distribution is a proper distribution") {
  Corpus corpus = synthesize_corpus(4, 4, 4, 11);
  TeacherConfig cfg = toy_teacher(corpus.vocab.size(), 32, 64);
  Teacher<float> teacher(cfg, 13);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  Tensor<float> p = teacher.predict_distribution(table.pieces[0].tokens, 30,
                                                 corpus.vocab.mask_index());
  CHECK(p.size() == corpus.vocab.size());
  float sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] >= 0);
    sum += p[i];
  }
  CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("distilled encoder emits one code per 16 tokens, indices below C") {
  Corpus corpus = synthesize_corpus(4, 6, 4, 17);  // 64 tokens per piece
  DistilledEncoderConfig cfg = toy_distilled(corpus.vocab.size(), 64);
  DistilledEncoder<float> enc(cfg, 19);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  enc.init_codebook_from(table, 21);
  for (const auto& piece : table.pieces) {
    const auto codes = distilled_encode_piece(enc, piece);
    CHECK(codes.size() == piece.tokens.size() / 16);
    for (int c : codes) {
      CHECK(c >= 0);
      CHECK(c < static_cast<int>(cfg.codebook_size));
    }
  }
}

TEST_CASE("distilled training runs, stays deterministic, uses several codes") {
  Corpus corpus = synthesize_corpus(4, 10, 4, 23);
  TeacherConfig tcfg = toy_teacher(corpus.vocab.size(), 32, 64);
  tcfg.epochs = 2;
  auto teacher = train_teacher<float>(corpus, tcfg, 29);
  REQUIRE(!teacher.diverged);

  DistilledEncoderConfig dcfg = toy_distilled(corpus.vocab.size(), 64);
  dcfg.epochs = 2;
  dcfg.positions_per_piece = 4;
  auto r1 = train_distilled_encoder<float>(corpus, *teacher.model, dcfg, 31);
  REQUIRE(!r1.diverged);
  CHECK(r1.metrics.back().perplexity > 1.0);

  auto r2 = train_distilled_encoder<float>(corpus, *teacher.model, dcfg, 31);
  auto s1 = r1.model->snapshot();
  auto s2 = r2.model->snapshot();
  for (std::size_t i = 0; i < s1.size(); ++i)
    for (std::size_t j = 0; j < s1[i].size(); ++j) CHECK(s1[i][j] == s2[i][j]);
}

TEST_CASE("distilled codes are decoder-conditioning compatible") {
  Corpus corpus = synthesize_corpus(4, 4, 4, 37);
  DistilledEncoderConfig cfg = toy_distilled(corpus.vocab.size(), 64);
  DistilledEncoder<float> enc(cfg, 41);
  SubseqTable table = SubseqTable::from_corpus(corpus, 16);
  enc.init_codebook_from(table, 43);
  Conditioning<float> cond = make_distilled_conditioning(enc, table);
  REQUIRE(cond.codes.size() == table.pieces.size());

  DecoderConfig dcfg;
  dcfg.vocab_size = corpus.vocab.size();
  dcfg.num_codes = cfg.codebook_size;
  dcfg.subseq_tokens = 16;
  dcfg.sequence_tokens = 64;
  dcfg.start_token = corpus.vocab.start_index();
  dcfg.encoder_layers = 1;
  dcfg.decoder_layers = 1;
  dcfg.heads = 2;
  dcfg.head_dim = 4;
  dcfg.feedforward_dim = 8;
  dcfg.token_embedding_dim = 4;
  dcfg.code_embedding_dim = 4;
  dcfg.positional_dim = 2;
  dcfg.dropout = 0.0;
  Decoder<float> dec(dcfg, 47);
  Var<float> nll = decoder_nll(dec, {&table.pieces[0]}, {cond.codes[0]},
                               corpus.vocab.pad_index(), nullptr, false);
  CHECK(std::isfinite(nll.value()[0]));
}
