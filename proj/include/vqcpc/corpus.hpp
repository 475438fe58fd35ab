#ifndef VQCPC_CORPUS_HPP
#define VQCPC_CORPUS_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vqcpc {

inline constexpr int kNumVoices = 4;
inline constexpr int kTicksPerBeat = 4;

/// Ordered token inventory. The padding token is always first; the other
/// special tokens are present when the corpus needs them. Pitch tokens are
/// plain integers (semitone values) rendered in decimal.
class Vocabulary {
 public:
  static constexpr const char* kPad = "PAD";
  static constexpr const char* kStart = "START";
  static constexpr const char* kHold = "__";
  static constexpr const char* kRest = "R";
  static constexpr const char* kMask = "MASK";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols);

  /// PAD, START, __, R, MASK followed by pitch tokens lo..hi inclusive.
  static Vocabulary with_pitch_range(int lo, int hi);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(int index) const { return symbols_.at(index); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  int index_of(const std::string& symbol) const;          // throws if absent
  std::optional<int> find(const std::string& symbol) const;

  int pad_index() const { return 0; }
  int start_index() const { return require(kStart); }
  int hold_index() const { return require(kHold); }
  int rest_index() const { return require(kRest); }
  int mask_index() const { return require(kMask); }
  bool has(const std::string& symbol) const { return find(symbol).has_value(); }

  /// Semitone value of a pitch token, nullopt for special tokens.
  std::optional<int> pitch_of(int index) const;
  std::optional<int> index_of_pitch(int semitone) const;

 private:
  int require(const char* symbol) const;
  std::vector<std::string> symbols_;
};

/// Four voices of equal length at 4 ticks per beat.
struct VoicedPiece {
  std::array<std::vector<int>, kNumVoices> voices;

  std::size_t steps() const { return voices[0].size(); }
  void validate() const;
};

/// L x l matrix of vocabulary indices, stored row-major; flattening
/// row-major reproduces the interleaved stream.
struct StructuredSequence {
  std::size_t subseq_tokens = 0;  // l, multiple of 4
  std::vector<int> tokens;        // L * l entries

  std::size_t num_subsequences() const {
    return subseq_tokens == 0 ? 0 : tokens.size() / subseq_tokens;
  }
  const int* row(std::size_t i) const { return tokens.data() + i * subseq_tokens; }
  std::vector<int> row_vec(std::size_t i) const {
    return {row(i), row(i) + subseq_tokens};
  }
};

struct VoiceRanges {
  struct Range {
    int min_pitch = 0;
    int max_pitch = -1;  // empty when max < min
    bool empty() const { return max_pitch < min_pitch; }
  };
  std::array<Range, kNumVoices> per_voice;
};

struct Corpus {
  Vocabulary vocab;
  int ticks_per_beat = kTicksPerBeat;
  std::vector<VoicedPiece> pieces;
  /// Per piece, per subsequence: hidden family label (synthetic corpora only).
  std::vector<std::vector<int>> labels;

  bool has_labels() const { return !labels.empty(); }
  std::size_t total_subsequences(std::size_t subseq_tokens) const;
};

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// output[4 t + v] = voices[v][t]
std::vector<int> interleave(const VoicedPiece& piece);
VoicedPiece deinterleave(const std::vector<int>& flat);

/// Requires l | flat.size(); callers pad with the padding token first.
StructuredSequence split_subsequences(const std::vector<int>& flat, std::size_t l);

std::vector<int> pad_to_multiple(std::vector<int> flat, std::size_t l, int pad_index);

/// Every integer shift keeping all pitches inside the per-voice ranges and
/// inside the vocabulary; 0 is always included. Ascending order.
std::vector<int> admissible_shifts(const VoicedPiece& piece, const VoiceRanges& ranges,
                                   const Vocabulary& vocab);

/// Shift pitch tokens by s semitones; hold/rest/special tokens unchanged.
VoicedPiece transpose_piece(const VoicedPiece& piece, int shift, const Vocabulary& vocab);

std::vector<VoicedPiece> transposition_augment(const VoicedPiece& piece,
                                               const VoiceRanges& ranges,
                                               const Vocabulary& vocab);

/// Per-voice min/max pitch observed across all pieces.
VoiceRanges compute_voice_ranges(const Corpus& corpus);

// ---------------------------------------------------------------------------
// synthetic pattern-family corpus
// ---------------------------------------------------------------------------

/// Transition structure of the family chain: from f, step by one of these
/// offsets (mod families) with the matching probability. Doubly stochastic,
/// so the stationary distribution is uniform.
struct FamilyChain {
  std::vector<int> offsets{1, 2, 3, 5};
  std::vector<double> probs{0.4, 0.3, 0.2, 0.1};

  std::vector<double> stationary(std::size_t families) const;
  int step(int family, std::size_t families, double u) const;
};

struct SynthesisParams {
  std::size_t families = 16;
  std::size_t pieces = 200;
  std::size_t length_beats = 8;
  std::uint64_t seed = 0;
  std::size_t registers = 1;      // per-piece global pitch offset, 1-semitone steps
  double token_noise = 0.02;      // per-token degree jitter probability
};

Corpus synthesize_corpus(const SynthesisParams& params);
Corpus synthesize_corpus(std::size_t families, std::size_t pieces,
                         std::size_t length_beats, std::uint64_t seed);

// ---------------------------------------------------------------------------
// file format
// ---------------------------------------------------------------------------

/// Writes the corpus text format; a parallel <path>.labels file is written
/// when the corpus carries labels.
void save_corpus(const Corpus& corpus, const std::string& path);
/// Reads the corpus text format; <path>.labels is loaded when present.
Corpus load_corpus(const std::string& path);

// ---------------------------------------------------------------------------
// dataset splits / augmentation
// ---------------------------------------------------------------------------

struct CorpusSplits {
  Corpus train, valid, test;
};

/// 80/10/10 split by piece under a seeded shuffle.
CorpusSplits split_corpus(const Corpus& corpus, std::uint64_t seed);

/// Replaces each piece by all its admissible transpositions (labels copied).
Corpus augment_with_transpositions(const Corpus& corpus, const VoiceRanges& ranges);

}  // namespace vqcpc

#endif
