#include "vqcpc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "vqcpc/rng.hpp"

namespace vqcpc {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (!symbols_.empty() && symbols_[0] != kPad)
    throw std::invalid_argument("Vocabulary: the padding token must sit at index 0");
  std::unordered_map<std::string, int> seen;
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (!seen.emplace(symbols_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("Vocabulary: duplicate symbol '" + symbols_[i] + "'");
}

Vocabulary Vocabulary::with_pitch_range(int lo, int hi) {
  std::vector<std::string> syms = {kPad, kStart, kHold, kRest, kMask};
  for (int p = lo; p <= hi; ++p) syms.push_back(std::to_string(p));
  return Vocabulary(std::move(syms));
}

int Vocabulary::index_of(const std::string& symbol) const {
  auto ix = find(symbol);
  if (!ix) throw std::out_of_range("Vocabulary: unknown token '" + symbol + "'");
  return *ix;
}

std::optional<int> Vocabulary::find(const std::string& symbol) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i)
    if (symbols_[i] == symbol) return static_cast<int>(i);
  return std::nullopt;
}

int Vocabulary::require(const char* symbol) const {
  auto ix = find(symbol);
  if (!ix)
    throw std::out_of_range(std::string("Vocabulary: required token '") + symbol +
                            "' is not present");
  return *ix;
}

std::optional<int> Vocabulary::pitch_of(int index) const {
  const std::string& s = symbols_.at(index);
  if (s.empty()) return std::nullopt;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
  return std::stoi(s);
}

std::optional<int> Vocabulary::index_of_pitch(int semitone) const {
  return find(std::to_string(semitone));
}

// ---------------------------------------------------------------------------
// pieces
// ---------------------------------------------------------------------------

void VoicedPiece::validate() const {
  for (int v = 1; v < kNumVoices; ++v)
    if (voices[v].size() != voices[0].size())
      throw std::invalid_argument("VoicedPiece: voices of unequal length");
}

std::size_t Corpus::total_subsequences(std::size_t subseq_tokens) const {
  std::size_t n = 0;
  for (const auto& p : pieces)
    n += (p.steps() * kNumVoices + subseq_tokens - 1) / subseq_tokens;
  return n;
}

std::vector<int> interleave(const VoicedPiece& piece) {
  piece.validate();
  const std::size_t t_steps = piece.steps();
  std::vector<int> flat(t_steps * kNumVoices);
  for (std::size_t t = 0; t < t_steps; ++t)
    for (int v = 0; v < kNumVoices; ++v) flat[t * kNumVoices + v] = piece.voices[v][t];
  return flat;
}

VoicedPiece deinterleave(const std::vector<int>& flat) {
  if (flat.size() % kNumVoices != 0)
    throw std::invalid_argument("deinterleave: length not a multiple of 4");
  VoicedPiece p;
  const std::size_t t_steps = flat.size() / kNumVoices;
  for (int v = 0; v < kNumVoices; ++v) p.voices[v].resize(t_steps);
  for (std::size_t t = 0; t < t_steps; ++t)
    for (int v = 0; v < kNumVoices; ++v) p.voices[v][t] = flat[t * kNumVoices + v];
  return p;
}

StructuredSequence split_subsequences(const std::vector<int>& flat, std::size_t l) {
  if (l == 0 || l % kNumVoices != 0)
    throw std::invalid_argument("split_subsequences: l must be a positive multiple of 4");
  if (flat.size() % l != 0)
    throw std::invalid_argument(
        "split_subsequences: length " + std::to_string(flat.size()) +
        " not divisible by l = " + std::to_string(l) + "; pad with the padding token first");
  StructuredSequence s;
  s.subseq_tokens = l;
  s.tokens = flat;
  return s;
}

std::vector<int> pad_to_multiple(std::vector<int> flat, std::size_t l, int pad_index) {
  while (flat.size() % l != 0) flat.push_back(pad_index);
  return flat;
}

// ---------------------------------------------------------------------------
// transposition
// ---------------------------------------------------------------------------

namespace {

struct PieceBounds {
  std::array<VoiceRanges::Range, kNumVoices> per_voice;
  bool any_pitch = false;
};

PieceBounds piece_pitch_bounds(const VoicedPiece& piece, const Vocabulary& vocab) {
  PieceBounds b;
  for (int v = 0; v < kNumVoices; ++v) {
    for (int tok : piece.voices[v]) {
      auto p = vocab.pitch_of(tok);
      if (!p) continue;
      b.any_pitch = true;
      if (b.per_voice[v].empty()) {
        b.per_voice[v].min_pitch = b.per_voice[v].max_pitch = *p;
      } else {
        b.per_voice[v].min_pitch = std::min(b.per_voice[v].min_pitch, *p);
        b.per_voice[v].max_pitch = std::max(b.per_voice[v].max_pitch, *p);
      }
    }
  }
  return b;
}

}  // namespace

std::vector<int> admissible_shifts(const VoicedPiece& piece, const VoiceRanges& ranges,
                                   const Vocabulary& vocab) {
  const PieceBounds bounds = piece_pitch_bounds(piece, vocab);
  if (!bounds.any_pitch) return {0};
  int lo = -1000, hi = 1000;
  for (int v = 0; v < kNumVoices; ++v) {
    if (bounds.per_voice[v].empty()) continue;
    if (ranges.per_voice[v].empty()) return {0};
    lo = std::max(lo, ranges.per_voice[v].min_pitch - bounds.per_voice[v].min_pitch);
    hi = std::min(hi, ranges.per_voice[v].max_pitch - bounds.per_voice[v].max_pitch);
  }
  std::vector<int> shifts;
  for (int s = lo; s <= hi; ++s) {
    bool ok = true;
    for (int v = 0; v < kNumVoices && ok; ++v)
      for (int tok : piece.voices[v]) {
        auto p = vocab.pitch_of(tok);
        if (p && !vocab.index_of_pitch(*p + s)) {
          ok = false;
          break;
        }
      }
    if (ok) shifts.push_back(s);
  }
  if (std::find(shifts.begin(), shifts.end(), 0) == shifts.end()) shifts.push_back(0);
  std::sort(shifts.begin(), shifts.end());
  return shifts;
}

VoicedPiece transpose_piece(const VoicedPiece& piece, int shift, const Vocabulary& vocab) {
  VoicedPiece out = piece;
  if (shift == 0) return out;
  for (int v = 0; v < kNumVoices; ++v)
    for (auto& tok : out.voices[v]) {
      auto p = vocab.pitch_of(tok);
      if (!p) continue;
      auto ix = vocab.index_of_pitch(*p + shift);
      if (!ix)
        throw std::out_of_range("transpose_piece: pitch " + std::to_string(*p + shift) +
                                " not in vocabulary");
      tok = *ix;
    }
  return out;
}

std::vector<VoicedPiece> transposition_augment(const VoicedPiece& piece,
                                               const VoiceRanges& ranges,
                                               const Vocabulary& vocab) {
  std::vector<VoicedPiece> out;
  for (int s : admissible_shifts(piece, ranges, vocab))
    out.push_back(transpose_piece(piece, s, vocab));
  return out;
}

VoiceRanges compute_voice_ranges(const Corpus& corpus) {
  VoiceRanges r;
  for (const auto& piece : corpus.pieces) {
    const PieceBounds b = piece_pitch_bounds(piece, corpus.vocab);
    for (int v = 0; v < kNumVoices; ++v) {
      if (b.per_voice[v].empty()) continue;
      if (r.per_voice[v].empty()) {
        r.per_voice[v] = b.per_voice[v];
      } else {
        r.per_voice[v].min_pitch = std::min(r.per_voice[v].min_pitch, b.per_voice[v].min_pitch);
        r.per_voice[v].max_pitch = std::max(r.per_voice[v].max_pitch, b.per_voice[v].max_pitch);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

std::vector<double> FamilyChain::stationary(std::size_t families) const {
  // Power iteration; analytically uniform since the chain is doubly
  // stochastic, but computed rather than asserted.
  std::vector<double> pi(families, 1.0 / static_cast<double>(families));
  std::vector<double> next(families);
  for (int iter = 0; iter < 500; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t f = 0; f < families; ++f)
      for (std::size_t j = 0; j < offsets.size(); ++j)
        next[(f + offsets[j]) % families] += pi[f] * probs[j];
    pi.swap(next);
  }
  return pi;
}

int FamilyChain::step(int family, std::size_t families, double u) const {
  double acc = 0;
  for (std::size_t j = 0; j < offsets.size(); ++j) {
    acc += probs[j];
    if (u < acc || j + 1 == offsets.size())
      return static_cast<int>((family + offsets[j]) % families);
  }
  return family;
}

namespace {

// One beat of one family: 4 ticks x 4 voices, each cell either a hold or a
// pitch degree. Tick 0 is always pitched so a subsequence states its family
// immediately. Families occupy different sub-ranges of the degree space so
// pieces keep transposition slack against the corpus-wide voice ranges.
struct BeatPattern {
  std::array<std::array<int, kNumVoices>, kTicksPerBeat> degree;  // -1 = hold
  int lo = 0, hi = 0;                                             // degree bounds
  bool operator==(const BeatPattern& o) const { return degree == o.degree; }
};

constexpr int kDegreeRange = 8;
constexpr std::array<int, kNumVoices> kVoiceBase = {72, 66, 60, 54};

BeatPattern random_pattern(Rng& rng) {
  BeatPattern p;
  p.lo = rng.next_int(0, 2);
  p.hi = p.lo + 4 + rng.next_int(0, kDegreeRange - 5 - p.lo);
  for (int t = 0; t < kTicksPerBeat; ++t)
    for (int v = 0; v < kNumVoices; ++v) {
      if (t > 0 && rng.next_double() < 0.25)
        p.degree[t][v] = -1;
      else
        p.degree[t][v] = rng.next_int(p.lo, p.hi);
    }
  return p;
}

}  // namespace

Corpus synthesize_corpus(const SynthesisParams& params) {
  if (params.families == 0 || params.pieces == 0 || params.length_beats == 0)
    throw std::invalid_argument("synthesize_corpus: zero-sized request");
  Rng rng(params.seed);

  std::vector<BeatPattern> patterns;
  patterns.reserve(params.families);
  for (std::size_t f = 0; f < params.families; ++f) {
    BeatPattern p = random_pattern(rng);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const bool clash =
          std::find(patterns.begin(), patterns.end(), p) != patterns.end();
      if (!clash) break;
      p = random_pattern(rng);
    }
    patterns.push_back(p);
  }

  const int pitch_lo = *std::min_element(kVoiceBase.begin(), kVoiceBase.end());
  const int pitch_hi = *std::max_element(kVoiceBase.begin(), kVoiceBase.end()) +
                       (kDegreeRange - 1) + static_cast<int>(params.registers) - 1;

  Corpus corpus;
  corpus.vocab = Vocabulary::with_pitch_range(pitch_lo, pitch_hi);
  const int hold = corpus.vocab.hold_index();

  FamilyChain chain;
  for (std::size_t n = 0; n < params.pieces; ++n) {
    const int reg = rng.next_int(0, static_cast<int>(params.registers) - 1);
    std::vector<int> fams(params.length_beats);
    fams[0] = rng.next_int(0, static_cast<int>(params.families) - 1);
    for (std::size_t b = 1; b < params.length_beats; ++b)
      fams[b] = chain.step(fams[b - 1], params.families, rng.next_double());

    VoicedPiece piece;
    for (int v = 0; v < kNumVoices; ++v)
      piece.voices[v].resize(params.length_beats * kTicksPerBeat);
    for (std::size_t b = 0; b < params.length_beats; ++b) {
      const BeatPattern& pat = patterns[fams[b]];
      for (int t = 0; t < kTicksPerBeat; ++t)
        for (int v = 0; v < kNumVoices; ++v) {
          const std::size_t step = b * kTicksPerBeat + t;
          int deg = pat.degree[t][v];
          if (deg < 0) {
            piece.voices[v][step] = hold;
            continue;
          }
          if (rng.next_double() < params.token_noise) {
            deg += rng.next_double() < 0.5 ? -1 : 1;
            deg = std::clamp(deg, pat.lo, pat.hi);
          }
          piece.voices[v][step] =
              corpus.vocab.index_of_pitch(kVoiceBase[v] + deg + reg).value();
        }
    }
    corpus.pieces.push_back(std::move(piece));
    corpus.labels.push_back(std::move(fams));
  }
  return corpus;
}

Corpus synthesize_corpus(std::size_t families, std::size_t pieces,
                         std::size_t length_beats, std::uint64_t seed) {
  SynthesisParams p;
  p.families = families;
  p.pieces = pieces;
  p.length_beats = length_beats;
  p.seed = seed;
  return synthesize_corpus(p);
}

// ---------------------------------------------------------------------------
// file format
// ---------------------------------------------------------------------------

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus: cannot open " + path);
  out << "#version 1\n";
  out << "#ticks_per_beat " << corpus.ticks_per_beat << "\n";
  out << "#vocab";
  for (const auto& s : corpus.vocab.symbols()) out << " " << s;
  out << "\n";
  for (const auto& piece : corpus.pieces) {
    for (int v = 0; v < kNumVoices; ++v) {
      if (v) out << " | ";
      for (std::size_t t = 0; t < piece.voices[v].size(); ++t) {
        if (t) out << " ";
        out << corpus.vocab.symbol(piece.voices[v][t]);
      }
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_corpus: write failed for " + path);
  if (corpus.has_labels()) {
    std::ofstream lab(path + ".labels");
    if (!lab) throw std::runtime_error("save_corpus: cannot open " + path + ".labels");
    for (const auto& row : corpus.labels) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) lab << " ";
        lab << row[i];
      }
      lab << "\n";
    }
  }
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
  Corpus corpus;
  corpus.vocab = Vocabulary();
  std::string line;
  std::size_t line_no = 0;
  bool saw_version = false, saw_vocab = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line[0] == '#') {
      auto fields = split_ws(line);
      if (fields[0] == "#version") {
        if (fields.size() != 2 || fields[1] != "1")
          throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                   ": version mismatch (expected 1)");
        saw_version = true;
      } else if (fields[0] == "#ticks_per_beat") {
        if (fields.size() != 2)
          throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                   ": malformed #ticks_per_beat");
        corpus.ticks_per_beat = std::stoi(fields[1]);
      } else if (fields[0] == "#vocab") {
        corpus.vocab = Vocabulary({fields.begin() + 1, fields.end()});
        saw_vocab = true;
      }
      continue;
    }
    if (!saw_version || !saw_vocab)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": piece data before #version/#vocab header");
    VoicedPiece piece;
    std::size_t voice = 0;
    std::string segment;
    std::istringstream ls(line);
    std::vector<std::string> segments;
    while (std::getline(ls, segment, '|')) segments.push_back(segment);
    if (segments.size() != kNumVoices)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 4 voices, got " +
                               std::to_string(segments.size()));
    for (const auto& seg : segments) {
      for (const auto& tok : split_ws(seg)) {
        auto ix = corpus.vocab.find(tok);
        if (!ix)
          throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                   ": unknown token '" + tok + "'");
        piece.voices[voice].push_back(*ix);
      }
      ++voice;
    }
    for (int v = 1; v < kNumVoices; ++v)
      if (piece.voices[v].size() != piece.voices[0].size())
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": voices of unequal length");
    corpus.pieces.push_back(std::move(piece));
  }

  std::ifstream lab(path + ".labels");
  if (lab) {
    std::vector<std::vector<int>> labels;
    while (std::getline(lab, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::vector<int> row;
      for (const auto& tok : split_ws(line)) row.push_back(std::stoi(tok));
      labels.push_back(std::move(row));
    }
    if (labels.size() != corpus.pieces.size())
      throw std::runtime_error(path + ".labels: " + std::to_string(labels.size()) +
                               " label rows for " + std::to_string(corpus.pieces.size()) +
                               " pieces");
    corpus.labels = std::move(labels);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// splits / augmentation
// ---------------------------------------------------------------------------

CorpusSplits split_corpus(const Corpus& corpus, std::uint64_t seed) {
  std::vector<std::size_t> order(corpus.pieces.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n = order.size();
  const std::size_t n_valid = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_valid - n_test;
  CorpusSplits s;
  for (Corpus* c : {&s.train, &s.valid, &s.test}) {
    c->vocab = corpus.vocab;
    c->ticks_per_beat = corpus.ticks_per_beat;
  }
  auto emit = [&](Corpus& dst, std::size_t idx) {
    dst.pieces.push_back(corpus.pieces[order[idx]]);
    if (corpus.has_labels()) dst.labels.push_back(corpus.labels[order[idx]]);
  };
  for (std::size_t i = 0; i < n_train; ++i) emit(s.train, i);
  for (std::size_t i = n_train; i < n_train + n_valid; ++i) emit(s.valid, i);
  for (std::size_t i = n_train + n_valid; i < n; ++i) emit(s.test, i);
  return s;
}

Corpus augment_with_transpositions(const Corpus& corpus, const VoiceRanges& ranges) {
  Corpus out;
  out.vocab = corpus.vocab;
  out.ticks_per_beat = corpus.ticks_per_beat;
  for (std::size_t i = 0; i < corpus.pieces.size(); ++i) {
    for (int s : admissible_shifts(corpus.pieces[i], ranges, corpus.vocab)) {
      out.pieces.push_back(transpose_piece(corpus.pieces[i], s, corpus.vocab));
      if (corpus.has_labels()) out.labels.push_back(corpus.labels[i]);
    }
  }
  return out;
}

}  // namespace vqcpc
