#ifndef VQCPC_ANALYSIS_HPP
#define VQCPC_ANALYSIS_HPP

#include <string>
#include <vector>

#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/quantizer.hpp"

namespace vqcpc {

/// Per-subsequence code assignments for a whole corpus, with provenance.
struct ClusterDump {
  struct Entry {
    int piece = 0;
    int position = 0;
  };
  std::vector<std::vector<Entry>> clusters;  // one bucket per code
  std::size_t total = 0;
};

/// Codes for every subsequence of a table (any encode function with the
/// piece -> codes interface plugs in here).
using PieceCodesFn = std::function<std::vector<int>(const StructuredSequence&)>;

ClusterDump cluster_dump(const SubseqTable& table, const PieceCodesFn& encode_fn,
                         std::size_t codebook_size);

/// cluster text files `clusters/<code>.txt` in corpus token format plus a
/// flat metrics.tsv.
void write_cluster_dump(const ClusterDump& dump, const SubseqTable& table,
                        const Vocabulary& vocab, const std::string& out_dir);

UsageStats code_histogram(const SubseqTable& table, const PieceCodesFn& encode_fn,
                          std::size_t codebook_size);

/// (sum over codes of the majority-family count) / total subsequences.
double cluster_purity(const SubseqTable& table, const std::vector<std::vector<int>>& labels,
                      const PieceCodesFn& encode_fn, std::size_t codebook_size);

/// Fraction of (subsequence, admissible shift) pairs with
/// encode(shift(x)) == encode(x). Reported, not asserted.
template <typename S>
double transposition_consistency(const Corpus& corpus, const CpcEncoder<S>& enc,
                                 const VoiceRanges& ranges);

/// Adjusted Rand index between two code assignments of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace vqcpc

#endif
