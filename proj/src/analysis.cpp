#include "vqcpc/analysis.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace vqcpc {

ClusterDump cluster_dump(const SubseqTable& table, const PieceCodesFn& encode_fn,
                         std::size_t codebook_size) {
  ClusterDump dump;
  dump.clusters.resize(codebook_size);
  for (std::size_t p = 0; p < table.pieces.size(); ++p) {
    const auto codes = encode_fn(table.pieces[p]);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i] < 0 || static_cast<std::size_t>(codes[i]) >= codebook_size)
        throw std::out_of_range("cluster_dump: code out of range");
      dump.clusters[codes[i]].push_back({static_cast<int>(p), static_cast<int>(i)});
      ++dump.total;
    }
  }
  return dump;
}

void write_cluster_dump(const ClusterDump& dump, const SubseqTable& table,
                        const Vocabulary& vocab, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "clusters");
  for (std::size_t c = 0; c < dump.clusters.size(); ++c) {
    std::ofstream out(fs::path(out_dir) / "clusters" / (std::to_string(c) + ".txt"));
    for (const auto& e : dump.clusters[c]) {
      out << "# piece " << e.piece << " position " << e.position << "\n";
      const int* row = table.pieces[e.piece].row(e.position);
      for (std::size_t j = 0; j < table.subseq_tokens; ++j) {
        if (j) out << " ";
        out << vocab.symbol(row[j]);
      }
      out << "\n";
    }
  }
}

UsageStats code_histogram(const SubseqTable& table, const PieceCodesFn& encode_fn,
                          std::size_t codebook_size) {
  if (table.pieces.empty()) throw std::invalid_argument("code_histogram: empty corpus");
  std::vector<int> codes;
  codes.reserve(table.total());
  for (const auto& piece : table.pieces) {
    const auto pc = encode_fn(piece);
    codes.insert(codes.end(), pc.begin(), pc.end());
  }
  return usage_stats(codes, codebook_size);
}

double cluster_purity(const SubseqTable& table, const std::vector<std::vector<int>>& labels,
                      const PieceCodesFn& encode_fn, std::size_t codebook_size) {
  if (labels.size() != table.pieces.size())
    throw std::invalid_argument("cluster_purity: corpus carries no aligned labels");
  std::vector<std::map<int, std::size_t>> by_code(codebook_size);
  std::size_t total = 0;
  for (std::size_t p = 0; p < table.pieces.size(); ++p) {
    const auto codes = encode_fn(table.pieces[p]);
    if (codes.size() != labels[p].size())
      throw std::invalid_argument("cluster_purity: label row does not match subsequence count");
    for (std::size_t i = 0; i < codes.size(); ++i) {
      ++by_code[codes[i]][labels[p][i]];
      ++total;
    }
  }
  std::size_t majority = 0;
  for (const auto& counts : by_code) {
    std::size_t best = 0;
    for (const auto& [fam, n] : counts) best = std::max(best, n);
    majority += best;
  }
  return total == 0 ? 0.0 : static_cast<double>(majority) / static_cast<double>(total);
}

template <typename S>
double transposition_consistency(const Corpus& corpus, const CpcEncoder<S>& enc,
                                 const VoiceRanges& ranges) {
  const std::size_t l = enc.config().subseq_tokens;
  std::size_t agree = 0, pairs = 0;
  for (const auto& piece : corpus.pieces) {
    const auto flat = pad_to_multiple(interleave(piece), l, corpus.vocab.pad_index());
    const StructuredSequence base = split_subsequences(flat, l);
    const std::vector<int> base_codes = encode_piece(enc, base);
    for (int s : admissible_shifts(piece, ranges, corpus.vocab)) {
      const VoicedPiece shifted = transpose_piece(piece, s, corpus.vocab);
      const auto sflat = pad_to_multiple(interleave(shifted), l, corpus.vocab.pad_index());
      const std::vector<int> codes = encode_piece(enc, split_subsequences(sflat, l));
      for (std::size_t i = 0; i < codes.size(); ++i) {
        ++pairs;
        if (codes[i] == base_codes[i]) ++agree;
      }
    }
  }
  return pairs == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(pairs);
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("adjusted_rand_index: assignments must align");
  std::unordered_map<long, double> joint;
  std::unordered_map<int, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[(static_cast<long>(a[i]) << 32) | static_cast<unsigned>(b[i])];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  auto choose2 = [](double n) { return n * (n - 1) / 2.0; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, n] : joint) sum_joint += choose2(n);
  for (auto& [k, n] : ca) sum_a += choose2(n);
  for (auto& [k, n] : cb) sum_b += choose2(n);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = (sum_a + sum_b) / 2.0;
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

template double transposition_consistency<float>(const Corpus&, const CpcEncoder<float>&,
                                                 const VoiceRanges&);
template double transposition_consistency<double>(const Corpus&, const CpcEncoder<double>&,
                                                  const VoiceRanges&);

}  // namespace vqcpc
