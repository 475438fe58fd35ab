// Command-line driver: corpus preparation, synthetic corpora, two-stage
// training, encoding, variation generation and cluster inspection.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "vqcpc/analysis.hpp"
#include "vqcpc/checkpoint.hpp"
#include "vqcpc/config_file.hpp"
#include "vqcpc/corpus.hpp"
#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/decoder.hpp"
#include "vqcpc/distilled.hpp"
#include "vqcpc/generator.hpp"

namespace fs = std::filesystem;
using namespace vqcpc;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

std::uint64_t default_seed(std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VQCPC_SEED")) return std::stoull(env);
  return 0;
}

void append_run_config(const fs::path& dir, const std::string& command,
                       const FlatConfig& resolved) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run_config.txt", std::ios::app);
  out << "# command: " << command << "\n" << flat_config_to_text(resolved) << "\n";
}

void write_meta(const fs::path& dir, std::size_t subseq_tokens) {
  FlatConfig meta;
  config_set(meta, "subseq_tokens", std::to_string(subseq_tokens));
  save_flat_config(meta, (dir / "meta.txt").string());
}

std::size_t read_meta_subseq_tokens(const fs::path& dir, std::size_t fallback) {
  const fs::path p = dir / "meta.txt";
  if (!fs::exists(p)) return fallback;
  return config_get_size(load_flat_config(p.string()), "subseq_tokens", fallback);
}

void save_ranges(const fs::path& path, const VoiceRanges& r) {
  std::ofstream out(path);
  for (int v = 0; v < kNumVoices; ++v) {
    if (r.per_voice[v].empty())
      out << "v" << v + 1 << " empty\n";
    else
      out << "v" << v + 1 << " " << r.per_voice[v].min_pitch << " "
          << r.per_voice[v].max_pitch << "\n";
  }
}

std::optional<VoiceRanges> load_ranges(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  VoiceRanges r;
  std::string tag, a;
  for (int v = 0; v < kNumVoices; ++v) {
    if (!(in >> tag >> a)) return std::nullopt;
    if (a == "empty") continue;
    r.per_voice[v].min_pitch = std::stoi(a);
    int hi;
    in >> hi;
    r.per_voice[v].max_pitch = hi;
  }
  return r;
}

Corpus load_split(const fs::path& dir, const std::string& name, bool required) {
  const fs::path p = dir / (name + ".txt");
  if (!fs::exists(p)) {
    if (required)
      throw std::runtime_error("corpus directory " + dir.string() + " lacks " + name + ".txt");
    Corpus empty;
    return empty;
  }
  return load_corpus(p.string());
}

Corpus load_main_corpus(const fs::path& dir) {
  if (fs::exists(dir / "train.txt")) return load_split(dir, "train", true);
  if (fs::exists(dir / "corpus.txt")) return load_split(dir, "corpus", true);
  throw std::runtime_error("no train.txt or corpus.txt under " + dir.string());
}

void write_metrics_tsv(const fs::path& path, const std::string& header,
                       const std::vector<std::string>& rows) {
  std::ofstream out(path);
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
}

std::vector<int> banned_tokens_of(const Vocabulary& vocab) {
  std::vector<int> banned = {vocab.pad_index()};
  if (vocab.has(Vocabulary::kStart)) banned.push_back(vocab.start_index());
  if (vocab.has(Vocabulary::kMask)) banned.push_back(vocab.mask_index());
  return banned;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& in, const std::string& out_dir, std::size_t subseq_tokens,
                bool augment, std::uint64_t seed) {
  Corpus corpus = load_corpus(in);
  CorpusSplits splits = split_corpus(corpus, seed);
  const VoiceRanges ranges = compute_voice_ranges(splits.train);
  std::size_t train_before = splits.train.pieces.size();
  if (augment) splits.train = augment_with_transpositions(splits.train, ranges);

  fs::create_directories(out_dir);
  save_corpus(splits.train, (fs::path(out_dir) / "train.txt").string());
  save_corpus(splits.valid, (fs::path(out_dir) / "valid.txt").string());
  save_corpus(splits.test, (fs::path(out_dir) / "test.txt").string());
  save_ranges(fs::path(out_dir) / "ranges.txt", ranges);
  write_meta(out_dir, subseq_tokens);

  FlatConfig resolved;
  config_set(resolved, "in", in);
  config_set(resolved, "subseq_tokens", std::to_string(subseq_tokens));
  config_set(resolved, "augment_transpose", augment ? "on" : "off");
  config_set(resolved, "seed", std::to_string(seed));
  config_set(resolved, "train_pieces_before_augment", std::to_string(train_before));
  config_set(resolved, "train_pieces", std::to_string(splits.train.pieces.size()));
  config_set(resolved, "valid_pieces", std::to_string(splits.valid.pieces.size()));
  config_set(resolved, "test_pieces", std::to_string(splits.test.pieces.size()));
  append_run_config(out_dir, "prepare", resolved);
  std::cout << "prepared " << splits.train.pieces.size() << "/" << splits.valid.pieces.size()
            << "/" << splits.test.pieces.size() << " train/valid/test pieces\n";
  return 0;
}

int cmd_synth(std::size_t families, std::size_t pieces, std::size_t length_beats,
              std::uint64_t seed, const std::string& out_dir) {
  SynthesisParams params;
  params.families = families;
  params.pieces = pieces;
  params.length_beats = length_beats;
  params.seed = seed;
  Corpus corpus = synthesize_corpus(params);
  fs::create_directories(out_dir);
  save_corpus(corpus, (fs::path(out_dir) / "corpus.txt").string());
  FlatConfig resolved;
  config_set(resolved, "families", std::to_string(families));
  config_set(resolved, "pieces", std::to_string(pieces));
  config_set(resolved, "length_beats", std::to_string(length_beats));
  config_set(resolved, "seed", std::to_string(seed));
  append_run_config(out_dir, "synth", resolved);
  std::cout << "synthesized " << pieces << " pieces over " << families << " families\n";
  return 0;
}

int cmd_train_encoder(const std::string& corpus_dir, const std::string& config_path,
                      const std::string& negatives, const std::string& out,
                      std::uint64_t seed, const std::string& mode,
                      std::optional<std::size_t> epochs_flag) {
  Corpus train = load_main_corpus(corpus_dir);
  FlatConfig file_cfg = config_path.empty() ? FlatConfig{} : load_flat_config(config_path);
  const fs::path out_dir = fs::path(out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out).parent_path();
  fs::create_directories(out_dir);

  if (mode == "distilled") {
    TeacherConfig tcfg = teacher_config_from_flat(file_cfg, TeacherConfig{});
    DistilledEncoderConfig dcfg = distilled_config_from_flat(file_cfg, DistilledEncoderConfig{});
    if (epochs_flag) dcfg.epochs = *epochs_flag;
    auto teacher = train_teacher<float>(train, tcfg, seed);
    if (teacher.diverged) {
      std::cerr << "teacher training diverged\n";
      return kExitDivergence;
    }
    auto result = train_distilled_encoder<float>(train, *teacher.model, dcfg, seed + 100);
    if (result.diverged) {
      std::cerr << "distilled encoder training diverged\n";
      return kExitDivergence;
    }
    save_distilled_checkpoint(*result.model, train.vocab, seed,
                              result.metrics.empty() ? 0 : result.metrics.back().epoch, out,
                              result.optimizer.get());
    std::vector<std::string> rows;
    for (const auto& m : teacher.metrics) {
      std::ostringstream os;
      os << "teacher\t" << m.epoch << "\t" << m.ce_loss << "\t\t";
      rows.push_back(os.str());
    }
    for (const auto& m : result.metrics) {
      std::ostringstream os;
      os << "distilled\t" << m.epoch << "\t" << m.distill_loss << "\t" << m.vq_loss << "\t"
         << m.perplexity;
      rows.push_back(os.str());
    }
    write_metrics_tsv(out_dir / "metrics.tsv", "stage\tepoch\tloss\tvq_loss\tperplexity", rows);
    FlatConfig resolved = teacher_config_to_flat(tcfg);
    for (auto& [k, v] : distilled_config_to_flat(dcfg)) config_set(resolved, k, v);
    config_set(resolved, "seed", std::to_string(seed));
    config_set(resolved, "negatives", "(distilled baseline: none)");
    append_run_config(out_dir, "train-encoder --mode distilled", resolved);
    std::cout << "wrote " << out << "\n";
    return 0;
  }

  EncoderConfig cfg = encoder_config_from_flat(file_cfg, EncoderConfig{});
  cfg.subseq_tokens = read_meta_subseq_tokens(corpus_dir, cfg.subseq_tokens);
  if (epochs_flag) cfg.epochs = *epochs_flag;
  const auto smode = negatives == "same-seq" ? NegativeSampler::Mode::same_sequence
                                             : NegativeSampler::Mode::uniform;
  auto result = train_encoder<float>(train, cfg, smode, seed);
  if (result.diverged) {
    std::cerr << "encoder training diverged; last good weights kept in memory only\n";
    return kExitDivergence;
  }
  save_encoder_checkpoint(*result.model, train.vocab, seed,
                          result.metrics.empty() ? 0 : result.metrics.back().epoch, out,
                          result.optimizer.get());
  std::vector<std::string> rows;
  for (const auto& m : result.metrics) {
    std::ostringstream os;
    os << m.epoch << "\t" << m.nce_loss << "\t" << m.vq_loss << "\t" << m.perplexity;
    rows.push_back(os.str());
  }
  write_metrics_tsv(out_dir / "metrics.tsv", "epoch\tnce_loss\tvq_loss\tperplexity", rows);
  FlatConfig resolved = encoder_config_to_flat(result.model->config());
  config_set(resolved, "seed", std::to_string(seed));
  config_set(resolved, "negatives", negatives);
  append_run_config(out_dir, "train-encoder", resolved);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train_decoder(const std::string& corpus_dir, const std::string& encoder_path,
                      const std::string& config_path, const std::string& out,
                      std::uint64_t seed, std::optional<std::size_t> epochs_flag) {
  Corpus train = load_main_corpus(corpus_dir);
  Corpus valid = load_split(corpus_dir, "valid", false);
  LoadedEncoder enc = load_encoder_checkpoint(encoder_path);

  FlatConfig file_cfg = config_path.empty() ? FlatConfig{} : load_flat_config(config_path);
  DecoderConfig cfg = decoder_config_from_flat(file_cfg, DecoderConfig{});
  if (epochs_flag) cfg.epochs = *epochs_flag;
  cfg.vocab_size = train.vocab.size();
  cfg.num_codes = enc.codebook_size();
  cfg.start_token = train.vocab.start_index();

  const std::size_t l = read_meta_subseq_tokens(corpus_dir, cfg.subseq_tokens);
  if (enc.subseq_tokens() != l)
    throw std::invalid_argument("encoder checkpoint was trained with l = " +
                                std::to_string(enc.subseq_tokens()) +
                                " but the corpus uses l = " + std::to_string(l));
  cfg.subseq_tokens = l;

  SubseqTable train_table = SubseqTable::from_corpus(train, l);
  SubseqTable valid_table = SubseqTable::from_corpus(valid, l);
  std::size_t max_tokens = 0;
  for (const auto& p : train_table.pieces) max_tokens = std::max(max_tokens, p.tokens.size());
  for (const auto& p : valid_table.pieces) max_tokens = std::max(max_tokens, p.tokens.size());
  if (cfg.sequence_tokens < max_tokens) cfg.sequence_tokens = max_tokens;

  Conditioning<float> train_cond, valid_cond;
  for (const auto& piece : train_table.pieces) train_cond.codes.push_back(enc.codes_for(piece));
  for (const auto& piece : valid_table.pieces) valid_cond.codes.push_back(enc.codes_for(piece));

  auto result = train_decoder<float>(train_table, train_cond, valid_table, valid_cond,
                                     train.vocab.pad_index(), cfg, seed);
  if (result.diverged) {
    std::cerr << "decoder training diverged\n";
    return kExitDivergence;
  }
  const fs::path out_dir = fs::path(out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out).parent_path();
  fs::create_directories(out_dir);
  save_decoder_checkpoint(*result.model, train.vocab, file_hash_hex(encoder_path), seed,
                          result.metrics.empty() ? 0 : result.metrics.back().epoch, out,
                          result.optimizer.get());
  std::vector<std::string> rows;
  for (const auto& m : result.metrics) {
    std::ostringstream os;
    os << m.epoch << "\t" << m.train_nll << "\t" << m.valid_nll;
    rows.push_back(os.str());
  }
  write_metrics_tsv(out_dir / "metrics.tsv", "epoch\ttrain_nll\tvalid_nll", rows);
  FlatConfig resolved = decoder_config_to_flat(result.model->config());
  config_set(resolved, "seed", std::to_string(seed));
  config_set(resolved, "encoder", encoder_path);
  append_run_config(out_dir, "train-decoder", resolved);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_encode(const std::string& encoder_path, const std::string& in,
               const std::string& out) {
  LoadedEncoder enc = load_encoder_checkpoint(encoder_path);
  Corpus corpus = load_corpus(in);
  SubseqTable table = SubseqTable::from_corpus(corpus, enc.subseq_tokens());
  std::ostringstream os;
  for (const auto& piece : table.pieces) {
    const auto codes = enc.codes_for(piece);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (i) os << " ";
      os << codes[i];
    }
    os << "\n";
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(out);
    f << os.str();
  }
  return 0;
}

int cmd_vary(const std::string& encoder_path, const std::string& decoder_path,
             const std::string& in, std::size_t piece_index, double top_p,
             double temperature, std::uint64_t seed, const std::string& out) {
  LoadedEncoder enc = load_encoder_checkpoint(encoder_path);
  LoadedDecoder dec = load_decoder_checkpoint(decoder_path);
  if (!enc.vqcpc && !enc.distilled)
    throw std::invalid_argument("vary: unusable encoder checkpoint");
  if (!dec.encoder_hash.empty() && dec.encoder_hash != file_hash_hex(encoder_path))
    std::cerr << "warning: decoder was trained against a different encoder checkpoint\n";

  Corpus corpus = load_corpus(in);
  if (piece_index >= corpus.pieces.size())
    throw std::invalid_argument("vary: piece index out of range");
  SubseqTable table = SubseqTable::from_corpus(corpus, enc.subseq_tokens());
  const StructuredSequence& tmpl = table.pieces[piece_index];

  const std::vector<int> codes = enc.codes_for(tmpl);
  SamplingConfig sampling{top_p, temperature, seed};
  StructuredSequence variation =
      generate(*dec.model, codes, sampling, banned_tokens_of(dec.vocab));

  Corpus out_corpus;
  out_corpus.vocab = corpus.vocab;
  out_corpus.pieces.push_back(deinterleave(variation.tokens));
  save_corpus(out_corpus, out);
  std::ofstream codes_file(out + ".codes");
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i) codes_file << " ";
    codes_file << codes[i];
  }
  codes_file << "\n";
  std::cout << "wrote " << out << " (+ .codes)\n";
  return 0;
}

int cmd_clusters(const std::string& encoder_path, const std::string& corpus_dir,
                 const std::string& out_dir) {
  LoadedEncoder enc = load_encoder_checkpoint(encoder_path);
  Corpus corpus = load_main_corpus(corpus_dir);
  SubseqTable table = SubseqTable::from_corpus(corpus, enc.subseq_tokens());
  PieceCodesFn fn = [&](const StructuredSequence& p) { return enc.codes_for(p); };

  ClusterDump dump = cluster_dump(table, fn, enc.codebook_size());
  write_cluster_dump(dump, table, corpus.vocab, out_dir);

  std::vector<std::string> rows;
  UsageStats stats = code_histogram(table, fn, enc.codebook_size());
  for (std::size_t c = 0; c < stats.counts.size(); ++c)
    rows.push_back("count_code_" + std::to_string(c) + "\t" + std::to_string(stats.counts[c]));
  rows.push_back("perplexity\t" + std::to_string(stats.perplexity));
  if (corpus.has_labels())
    rows.push_back("purity\t" +
                   std::to_string(cluster_purity(table, corpus.labels, fn, enc.codebook_size())));
  if (enc.vqcpc) {
    if (auto ranges = load_ranges(fs::path(corpus_dir) / "ranges.txt"))
      rows.push_back("transposition_consistency\t" +
                     std::to_string(transposition_consistency(corpus, *enc.vqcpc, *ranges)));
  }
  write_metrics_tsv(fs::path(out_dir) / "metrics.tsv", "key\tvalue", rows);
  std::cout << "wrote clusters to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vector-quantized contrastive predictive coding for structured sequences"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_flag;
  std::string in, out, corpus_dir, config_path, encoder_path, decoder_path;
  std::size_t subseq_tokens = 16;
  std::string augment = "on";
  std::size_t families = 16, pieces = 200, length_beats = 8, piece_index = 0;
  std::string negatives = "uniform", mode = "vqcpc";
  std::optional<std::size_t> epochs_flag;
  double top_p = 0.8, temperature = 0.95;

  auto* prepare = app.add_subcommand("prepare", "tokenize, split and augment a corpus file");
  prepare->add_option("--in", in)->required();
  prepare->add_option("--out", out)->required();
  prepare->add_option("--subseq-tokens", subseq_tokens)->check(CLI::IsMember({16, 32}));
  prepare->add_option("--augment-transpose", augment)->check(CLI::IsMember({"on", "off"}));
  prepare->add_option("--seed", seed_flag);

  auto* synth = app.add_subcommand("synth", "emit a synthetic pattern-family corpus");
  synth->add_option("--families", families);
  synth->add_option("--pieces", pieces);
  synth->add_option("--length-beats", length_beats);
  synth->add_option("--seed", seed_flag);
  synth->add_option("--out", out)->required();

  auto* tenc = app.add_subcommand("train-encoder", "stage one: self-supervised encoder");
  tenc->add_option("--corpus", corpus_dir)->required();
  tenc->add_option("--config", config_path);
  tenc->add_option("--negatives", negatives)->check(CLI::IsMember({"uniform", "same-seq"}));
  tenc->add_option("--mode", mode)->check(CLI::IsMember({"vqcpc", "distilled"}));
  tenc->add_option("--out", out)->required();
  tenc->add_option("--seed", seed_flag);
  tenc->add_option("--epochs", epochs_flag);

  auto* tdec = app.add_subcommand("train-decoder", "stage two: code-conditioned decoder");
  tdec->add_option("--corpus", corpus_dir)->required();
  tdec->add_option("--encoder", encoder_path)->required();
  tdec->add_option("--config", config_path);
  tdec->add_option("--out", out)->required();
  tdec->add_option("--seed", seed_flag);
  tdec->add_option("--epochs", epochs_flag);

  auto* enc_cmd = app.add_subcommand("encode", "emit code lines for a corpus file");
  enc_cmd->add_option("--encoder", encoder_path)->required();
  enc_cmd->add_option("--in", in)->required();
  enc_cmd->add_option("--out", out);

  auto* vary_cmd = app.add_subcommand("vary", "generate a variation of a template piece");
  vary_cmd->add_option("--encoder", encoder_path)->required();
  vary_cmd->add_option("--decoder", decoder_path)->required();
  vary_cmd->add_option("--in", in)->required();
  vary_cmd->add_option("--piece-index", piece_index);
  vary_cmd->add_option("--top-p", top_p);
  vary_cmd->add_option("--temperature", temperature);
  vary_cmd->add_option("--seed", seed_flag);
  vary_cmd->add_option("--out", out)->required();

  auto* clusters_cmd = app.add_subcommand("clusters", "dump per-code subsequence clusters");
  clusters_cmd->add_option("--encoder", encoder_path)->required();
  clusters_cmd->add_option("--corpus", corpus_dir)->required();
  clusters_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const std::uint64_t seed = default_seed(seed_flag);
    if (prepare->parsed())
      return cmd_prepare(in, out, subseq_tokens, augment == "on", seed);
    if (synth->parsed()) return cmd_synth(families, pieces, length_beats, seed, out);
    if (tenc->parsed())
      return cmd_train_encoder(corpus_dir, config_path, negatives, out, seed, mode, epochs_flag);
    if (tdec->parsed())
      return cmd_train_decoder(corpus_dir, encoder_path, config_path, out, seed, epochs_flag);
    if (enc_cmd->parsed()) return cmd_encode(encoder_path, in, out);
    if (vary_cmd->parsed())
      return cmd_vary(encoder_path, decoder_path, in, piece_index, top_p, temperature, seed, out);
    if (clusters_cmd->parsed()) return cmd_clusters(encoder_path, corpus_dir, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
