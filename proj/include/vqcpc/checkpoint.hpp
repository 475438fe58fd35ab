#ifndef VQCPC_CHECKPOINT_HPP
#define VQCPC_CHECKPOINT_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vqcpc/config_file.hpp"
#include "vqcpc/cpc_encoder.hpp"
#include "vqcpc/decoder.hpp"
#include "vqcpc/distilled.hpp"
#include "vqcpc/nn.hpp"

namespace vqcpc {

inline constexpr const char* kEncoderMagic = "VQCPC-ENC v1";
inline constexpr const char* kDecoderMagic = "VQCPC-DEC v1";
inline constexpr const char* kDistilledMagic = "VQCPC-DST v1";

/// Binary container: magic line, string metadata, named tensors (32- or
/// 64-bit floats). Codebook centroids are stored as 64-bit floats.
struct Checkpoint {
  std::string magic;
  FlatConfig meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors32;
  std::vector<std::pair<std::string, Tensor<double>>> tensors64;

  const Tensor<float>& tensor32(const std::string& name) const;
  const Tensor<double>& tensor64(const std::string& name) const;
  bool has32(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a 64 over the file bytes, hex-encoded.
std::string file_hash_hex(const std::string& path);

// ---------------------------------------------------------------------------
// config <-> flat text (the CLI config files use the same keys)
// ---------------------------------------------------------------------------

FlatConfig encoder_config_to_flat(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_flat(const FlatConfig& flat, const EncoderConfig& base);

FlatConfig decoder_config_to_flat(const DecoderConfig& cfg);
DecoderConfig decoder_config_from_flat(const FlatConfig& flat, const DecoderConfig& base);

FlatConfig teacher_config_to_flat(const TeacherConfig& cfg);
TeacherConfig teacher_config_from_flat(const FlatConfig& flat, const TeacherConfig& base);

FlatConfig distilled_config_to_flat(const DistilledEncoderConfig& cfg);
DistilledEncoderConfig distilled_config_from_flat(const FlatConfig& flat,
                                                  const DistilledEncoderConfig& base);

// ---------------------------------------------------------------------------
// model containers
// ---------------------------------------------------------------------------

void save_encoder_checkpoint(const CpcEncoder<float>& model, const Vocabulary& vocab,
                             std::uint64_t seed, std::size_t epoch, const std::string& path,
                             const Adam<float>* opt = nullptr);

void save_distilled_checkpoint(const DistilledEncoder<float>& model, const Vocabulary& vocab,
                               std::uint64_t seed, std::size_t epoch, const std::string& path,
                               const Adam<float>* opt = nullptr);

void save_decoder_checkpoint(const Decoder<float>& model, const Vocabulary& vocab,
                             const std::string& encoder_hash, std::uint64_t seed,
                             std::size_t epoch, const std::string& path,
                             const Adam<float>* opt = nullptr);

/// Either encoder flavour behind the shared encode interface.
struct LoadedEncoder {
  std::unique_ptr<CpcEncoder<float>> vqcpc;
  std::unique_ptr<DistilledEncoder<float>> distilled;
  Vocabulary vocab;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;

  std::size_t subseq_tokens() const;
  std::size_t codebook_size() const;
  std::vector<int> codes_for(const StructuredSequence& piece) const;
};

LoadedEncoder load_encoder_checkpoint(const std::string& path);

struct LoadedDecoder {
  std::unique_ptr<Decoder<float>> model;
  Vocabulary vocab;
  std::string encoder_hash;
  std::uint64_t seed = 0;
};

LoadedDecoder load_decoder_checkpoint(const std::string& path);

}  // namespace vqcpc

#endif
