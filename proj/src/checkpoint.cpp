#include "vqcpc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vqcpc {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::string read_str(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

template <typename S>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<S>& t,
                  std::uint8_t dtype) {
  write_str(os, name);
  os.put(static_cast<char>(dtype));
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(S)));
}

template <typename S>
Tensor<S> read_tensor_body(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
  Tensor<S> t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(S)));
  return t;
}

}  // namespace

const Tensor<float>& Checkpoint::tensor32(const std::string& name) const {
  for (const auto& [n, t] : tensors32)
    if (n == name) return t;
  throw std::out_of_range("checkpoint: missing tensor " + name);
}

const Tensor<double>& Checkpoint::tensor64(const std::string& name) const {
  for (const auto& [n, t] : tensors64)
    if (n == name) return t;
  throw std::out_of_range("checkpoint: missing tensor " + name);
}

bool Checkpoint::has32(const std::string& name) const {
  for (const auto& [n, t] : tensors32)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os << ckpt.magic << "\n";
  write_u64(os, ckpt.meta.size());
  for (const auto& [k, v] : ckpt.meta) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u64(os, ckpt.tensors32.size() + ckpt.tensors64.size());
  for (const auto& [name, t] : ckpt.tensors32) write_tensor(os, name, t, 0);
  for (const auto& [name, t] : ckpt.tensors64) write_tensor(os, name, t, 1);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  Checkpoint ckpt;
  std::getline(is, ckpt.magic);
  if (ckpt.magic != kEncoderMagic && ckpt.magic != kDecoderMagic &&
      ckpt.magic != kDistilledMagic)
    throw std::runtime_error("load_checkpoint: unrecognized container '" + ckpt.magic + "'");
  const std::uint64_t meta_n = read_u64(is);
  for (std::uint64_t i = 0; i < meta_n; ++i) {
    std::string k = read_str(is);
    std::string v = read_str(is);
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint64_t tensor_n = read_u64(is);
  for (std::uint64_t i = 0; i < tensor_n; ++i) {
    std::string name = read_str(is);
    const int dtype = is.get();
    if (dtype == 0)
      ckpt.tensors32.emplace_back(std::move(name), read_tensor_body<float>(is));
    else if (dtype == 1)
      ckpt.tensors64.emplace_back(std::move(name), read_tensor_body<double>(is));
    else
      throw std::runtime_error("load_checkpoint: unknown dtype tag");
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ckpt;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("file_hash_hex: cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// config mappers
// ---------------------------------------------------------------------------

FlatConfig encoder_config_to_flat(const EncoderConfig& c) {
  FlatConfig f;
  config_set(f, "subseq_tokens", std::to_string(c.subseq_tokens));
  config_set(f, "token_embedding_dim", std::to_string(c.token_embedding_dim));
  config_set(f, "recurrent_hidden", std::to_string(c.recurrent_hidden));
  config_set(f, "recurrent_layers", std::to_string(c.recurrent_layers));
  config_set(f, "z_dim", std::to_string(c.z_dim));
  config_set(f, "projection_hidden", std::to_string(c.projection_hidden));
  config_set(f, "projection_layers", std::to_string(c.projection_layers));
  config_set(f, "projected_dim", std::to_string(c.projected_dim));
  config_set(f, "context_hidden", std::to_string(c.context_hidden));
  config_set(f, "context_layers", std::to_string(c.context_layers));
  config_set(f, "codebook_size", std::to_string(c.codebook_size));
  config_set(f, "commitment_beta", std::to_string(c.commitment_beta));
  config_set(f, "future_steps", std::to_string(c.future_steps));
  config_set(f, "candidate_set", std::to_string(c.candidate_set));
  config_set(f, "dropout", std::to_string(c.dropout));
  config_set(f, "learning_rate", std::to_string(c.learning_rate));
  config_set(f, "epochs", std::to_string(c.epochs));
  config_set(f, "pieces_per_step", std::to_string(c.pieces_per_step));
  config_set(f, "anchors_per_piece", std::to_string(c.anchors_per_piece));
  config_set(f, "use_quantizer", c.use_quantizer ? "true" : "false");
  config_set(f, "codebook_init_epochs", std::to_string(c.codebook_init_epochs));
  return f;
}

EncoderConfig encoder_config_from_flat(const FlatConfig& f, const EncoderConfig& base) {
  EncoderConfig c = base;
  c.subseq_tokens = config_get_size(f, "subseq_tokens", c.subseq_tokens);
  c.token_embedding_dim = config_get_size(f, "token_embedding_dim", c.token_embedding_dim);
  c.recurrent_hidden = config_get_size(f, "recurrent_hidden", c.recurrent_hidden);
  c.recurrent_layers = config_get_size(f, "recurrent_layers", c.recurrent_layers);
  c.z_dim = config_get_size(f, "z_dim", c.z_dim);
  c.projection_hidden = config_get_size(f, "projection_hidden", c.projection_hidden);
  c.projection_layers = config_get_size(f, "projection_layers", c.projection_layers);
  c.projected_dim = config_get_size(f, "projected_dim", c.projected_dim);
  c.context_hidden = config_get_size(f, "context_hidden", c.context_hidden);
  c.context_layers = config_get_size(f, "context_layers", c.context_layers);
  c.codebook_size = config_get_size(f, "codebook_size", c.codebook_size);
  c.commitment_beta = config_get_double(f, "commitment_beta", c.commitment_beta);
  c.future_steps = config_get_size(f, "future_steps", c.future_steps);
  c.candidate_set = config_get_size(f, "candidate_set", c.candidate_set);
  c.dropout = config_get_double(f, "dropout", c.dropout);
  c.learning_rate = config_get_double(f, "learning_rate", c.learning_rate);
  c.epochs = config_get_size(f, "epochs", c.epochs);
  c.pieces_per_step = config_get_size(f, "pieces_per_step", c.pieces_per_step);
  c.anchors_per_piece = config_get_size(f, "anchors_per_piece", c.anchors_per_piece);
  c.use_quantizer = config_get_bool(f, "use_quantizer", c.use_quantizer);
  c.codebook_init_epochs = config_get_size(f, "codebook_init_epochs", c.codebook_init_epochs);
  return c;
}

FlatConfig decoder_config_to_flat(const DecoderConfig& c) {
  FlatConfig f;
  config_set(f, "subseq_tokens", std::to_string(c.subseq_tokens));
  config_set(f, "sequence_tokens", std::to_string(c.sequence_tokens));
  config_set(f, "num_codes", std::to_string(c.num_codes));
  config_set(f, "start_token", std::to_string(c.start_token));
  config_set(f, "token_embedding_dim", std::to_string(c.token_embedding_dim));
  config_set(f, "code_embedding_dim", std::to_string(c.code_embedding_dim));
  config_set(f, "encoder_layers", std::to_string(c.encoder_layers));
  config_set(f, "decoder_layers", std::to_string(c.decoder_layers));
  config_set(f, "heads", std::to_string(c.heads));
  config_set(f, "head_dim", std::to_string(c.head_dim));
  config_set(f, "feedforward_dim", std::to_string(c.feedforward_dim));
  config_set(f, "positional_dim", std::to_string(c.positional_dim));
  config_set(f, "dropout", std::to_string(c.dropout));
  config_set(f, "learning_rate", std::to_string(c.learning_rate));
  config_set(f, "epochs", std::to_string(c.epochs));
  config_set(f, "pieces_per_step", std::to_string(c.pieces_per_step));
  config_set(f, "continuous_codes", c.continuous_codes ? "true" : "false");
  config_set(f, "continuous_dim", std::to_string(c.continuous_dim));
  return f;
}

DecoderConfig decoder_config_from_flat(const FlatConfig& f, const DecoderConfig& base) {
  DecoderConfig c = base;
  c.subseq_tokens = config_get_size(f, "subseq_tokens", c.subseq_tokens);
  c.sequence_tokens = config_get_size(f, "sequence_tokens", c.sequence_tokens);
  c.num_codes = config_get_size(f, "num_codes", c.num_codes);
  c.start_token = static_cast<int>(config_get_size(f, "start_token", c.start_token));
  c.token_embedding_dim = config_get_size(f, "token_embedding_dim", c.token_embedding_dim);
  c.code_embedding_dim = config_get_size(f, "code_embedding_dim", c.code_embedding_dim);
  c.encoder_layers = config_get_size(f, "encoder_layers", c.encoder_layers);
  c.decoder_layers = config_get_size(f, "decoder_layers", c.decoder_layers);
  c.heads = config_get_size(f, "heads", c.heads);
  c.head_dim = config_get_size(f, "head_dim", c.head_dim);
  c.feedforward_dim = config_get_size(f, "feedforward_dim", c.feedforward_dim);
  c.positional_dim = config_get_size(f, "positional_dim", c.positional_dim);
  c.dropout = config_get_double(f, "dropout", c.dropout);
  c.learning_rate = config_get_double(f, "learning_rate", c.learning_rate);
  c.epochs = config_get_size(f, "epochs", c.epochs);
  c.pieces_per_step = config_get_size(f, "pieces_per_step", c.pieces_per_step);
  c.continuous_codes = config_get_bool(f, "continuous_codes", c.continuous_codes);
  c.continuous_dim = config_get_size(f, "continuous_dim", c.continuous_dim);
  return c;
}

FlatConfig teacher_config_to_flat(const TeacherConfig& c) {
  FlatConfig f;
  config_set(f, "teacher.layers", std::to_string(c.layers));
  config_set(f, "teacher.mask_span_tokens", std::to_string(c.mask_span_tokens));
  config_set(f, "teacher.heads", std::to_string(c.heads));
  config_set(f, "teacher.head_dim", std::to_string(c.head_dim));
  config_set(f, "teacher.ff_dim", std::to_string(c.ff_dim));
  config_set(f, "teacher.positional_dim", std::to_string(c.positional_dim));
  config_set(f, "teacher.max_tokens", std::to_string(c.max_tokens));
  config_set(f, "teacher.dropout", std::to_string(c.dropout));
  config_set(f, "teacher.learning_rate", std::to_string(c.learning_rate));
  config_set(f, "teacher.epochs", std::to_string(c.epochs));
  config_set(f, "teacher.centers_per_piece", std::to_string(c.centers_per_piece));
  config_set(f, "teacher.pieces_per_step", std::to_string(c.pieces_per_step));
  return f;
}

TeacherConfig teacher_config_from_flat(const FlatConfig& f, const TeacherConfig& base) {
  TeacherConfig c = base;
  c.layers = config_get_size(f, "teacher.layers", c.layers);
  c.mask_span_tokens = config_get_size(f, "teacher.mask_span_tokens", c.mask_span_tokens);
  c.heads = config_get_size(f, "teacher.heads", c.heads);
  c.head_dim = config_get_size(f, "teacher.head_dim", c.head_dim);
  c.ff_dim = config_get_size(f, "teacher.ff_dim", c.ff_dim);
  c.positional_dim = config_get_size(f, "teacher.positional_dim", c.positional_dim);
  c.max_tokens = config_get_size(f, "teacher.max_tokens", c.max_tokens);
  c.dropout = config_get_double(f, "teacher.dropout", c.dropout);
  c.learning_rate = config_get_double(f, "teacher.learning_rate", c.learning_rate);
  c.epochs = config_get_size(f, "teacher.epochs", c.epochs);
  c.centers_per_piece = config_get_size(f, "teacher.centers_per_piece", c.centers_per_piece);
  c.pieces_per_step = config_get_size(f, "teacher.pieces_per_step", c.pieces_per_step);
  return c;
}

FlatConfig distilled_config_to_flat(const DistilledEncoderConfig& c) {
  FlatConfig f;
  config_set(f, "distilled.subseq_tokens", std::to_string(c.subseq_tokens));
  config_set(f, "distilled.stack_layers", std::to_string(c.stack_layers));
  config_set(f, "distilled.heads", std::to_string(c.heads));
  config_set(f, "distilled.head_dim", std::to_string(c.head_dim));
  config_set(f, "distilled.ff_dim", std::to_string(c.ff_dim));
  config_set(f, "distilled.positional_dim", std::to_string(c.positional_dim));
  config_set(f, "distilled.max_tokens", std::to_string(c.max_tokens));
  config_set(f, "distilled.z_dim", std::to_string(c.z_dim));
  config_set(f, "distilled.codebook_size", std::to_string(c.codebook_size));
  config_set(f, "distilled.commitment_beta", std::to_string(c.commitment_beta));
  config_set(f, "distilled.dropout", std::to_string(c.dropout));
  config_set(f, "distilled.learning_rate", std::to_string(c.learning_rate));
  config_set(f, "distilled.epochs", std::to_string(c.epochs));
  config_set(f, "distilled.positions_per_piece", std::to_string(c.positions_per_piece));
  config_set(f, "distilled.pieces_per_step", std::to_string(c.pieces_per_step));
  return f;
}

DistilledEncoderConfig distilled_config_from_flat(const FlatConfig& f,
                                                  const DistilledEncoderConfig& base) {
  DistilledEncoderConfig c = base;
  c.subseq_tokens = config_get_size(f, "distilled.subseq_tokens", c.subseq_tokens);
  c.stack_layers = config_get_size(f, "distilled.stack_layers", c.stack_layers);
  c.heads = config_get_size(f, "distilled.heads", c.heads);
  c.head_dim = config_get_size(f, "distilled.head_dim", c.head_dim);
  c.ff_dim = config_get_size(f, "distilled.ff_dim", c.ff_dim);
  c.positional_dim = config_get_size(f, "distilled.positional_dim", c.positional_dim);
  c.max_tokens = config_get_size(f, "distilled.max_tokens", c.max_tokens);
  c.z_dim = config_get_size(f, "distilled.z_dim", c.z_dim);
  c.codebook_size = config_get_size(f, "distilled.codebook_size", c.codebook_size);
  c.commitment_beta = config_get_double(f, "distilled.commitment_beta", c.commitment_beta);
  c.dropout = config_get_double(f, "distilled.dropout", c.dropout);
  c.learning_rate = config_get_double(f, "distilled.learning_rate", c.learning_rate);
  c.epochs = config_get_size(f, "distilled.epochs", c.epochs);
  c.positions_per_piece = config_get_size(f, "distilled.positions_per_piece",
                                          c.positions_per_piece);
  c.pieces_per_step = config_get_size(f, "distilled.pieces_per_step", c.pieces_per_step);
  return c;
}

// ---------------------------------------------------------------------------
// model containers
// ---------------------------------------------------------------------------

namespace {

std::string join_symbols(const Vocabulary& vocab) {
  std::string s;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i) s += ' ';
    s += vocab.symbol(static_cast<int>(i));
  }
  return s;
}

Vocabulary split_symbols(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> syms;
  std::string tok;
  while (is >> tok) syms.push_back(tok);
  return Vocabulary(std::move(syms));
}

template <typename Model>
void append_params(Checkpoint& ckpt, const Model& model, const std::string& skip) {
  for (const auto& p : model.params().items()) {
    if (p.name == skip) continue;
    ckpt.tensors32.emplace_back(p.name, p.var.value());
  }
}

template <typename Model>
void restore_params(Model& model, const Checkpoint& ckpt, const std::string& skip) {
  for (auto& p : model.params().items()) {
    if (p.name == skip) continue;
    const Tensor<float>& t = ckpt.tensor32(p.name);
    if (!t.same_shape(p.var.value()))
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    p.var.mutable_value() = t;
  }
}


template <typename Model>
void append_adam(Checkpoint& ckpt, const Model& model, const Adam<float>* opt) {
  if (!opt) return;
  config_set(ckpt.meta, "adam.step", std::to_string(opt->step_count()));
  const auto& items = model.params().items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ckpt.tensors32.emplace_back("adam.m." + items[i].name, opt->first_moments()[i]);
    ckpt.tensors32.emplace_back("adam.v." + items[i].name, opt->second_moments()[i]);
  }
}

Tensor<double> widen(const Tensor<float>& t) {
  Tensor<double> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]);
  return out;
}

Tensor<float> narrow(const Tensor<double>& t) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

}  // namespace

void save_encoder_checkpoint(const CpcEncoder<float>& model, const Vocabulary& vocab,
                             std::uint64_t seed, std::size_t epoch, const std::string& path,
                             const Adam<float>* opt) {
  Checkpoint ckpt;
  ckpt.magic = kEncoderMagic;
  ckpt.meta = encoder_config_to_flat(model.config());
  config_set(ckpt.meta, "vocab", join_symbols(vocab));
  config_set(ckpt.meta, "vocab_size", std::to_string(model.config().vocab_size));
  config_set(ckpt.meta, "seed", std::to_string(seed));
  config_set(ckpt.meta, "epoch", std::to_string(epoch));
  // Codebook record: {C, d_z, beta, 64-bit centroids}.
  config_set(ckpt.meta, "codebook.C", std::to_string(model.config().codebook_size));
  config_set(ckpt.meta, "codebook.d_z", std::to_string(model.config().z_dim));
  config_set(ckpt.meta, "codebook.beta", std::to_string(model.config().commitment_beta));
  ckpt.tensors64.emplace_back("quantizer.centroids", widen(model.centroids().value()));
  append_params(ckpt, model, "quantizer.centroids");
  append_adam(ckpt, model, opt);
  save_checkpoint(ckpt, path);
}

void save_distilled_checkpoint(const DistilledEncoder<float>& model, const Vocabulary& vocab,
                               std::uint64_t seed, std::size_t epoch, const std::string& path,
                               const Adam<float>* opt) {
  Checkpoint ckpt;
  ckpt.magic = kDistilledMagic;
  ckpt.meta = distilled_config_to_flat(model.config());
  config_set(ckpt.meta, "vocab", join_symbols(vocab));
  config_set(ckpt.meta, "vocab_size", std::to_string(model.config().vocab_size));
  config_set(ckpt.meta, "seed", std::to_string(seed));
  config_set(ckpt.meta, "epoch", std::to_string(epoch));
  config_set(ckpt.meta, "codebook.C", std::to_string(model.config().codebook_size));
  config_set(ckpt.meta, "codebook.d_z", std::to_string(model.config().z_dim));
  config_set(ckpt.meta, "codebook.beta", std::to_string(model.config().commitment_beta));
  ckpt.tensors64.emplace_back("quantizer.centroids",
                              widen(model.codebook().centroids.value()));
  append_params(ckpt, model, "quantizer.centroids");
  append_adam(ckpt, model, opt);
  save_checkpoint(ckpt, path);
}

void save_decoder_checkpoint(const Decoder<float>& model, const Vocabulary& vocab,
                             const std::string& encoder_hash, std::uint64_t seed,
                             std::size_t epoch, const std::string& path,
                             const Adam<float>* opt) {
  Checkpoint ckpt;
  ckpt.magic = kDecoderMagic;
  ckpt.meta = decoder_config_to_flat(model.config());
  config_set(ckpt.meta, "vocab", join_symbols(vocab));
  config_set(ckpt.meta, "vocab_size", std::to_string(model.config().vocab_size));
  config_set(ckpt.meta, "seed", std::to_string(seed));
  config_set(ckpt.meta, "epoch", std::to_string(epoch));
  config_set(ckpt.meta, "encoder_hash", encoder_hash);
  append_params(ckpt, model, "");
  append_adam(ckpt, model, opt);
  save_checkpoint(ckpt, path);
}

std::size_t LoadedEncoder::subseq_tokens() const {
  return vqcpc ? vqcpc->config().subseq_tokens : distilled->config().subseq_tokens;
}

std::size_t LoadedEncoder::codebook_size() const {
  return vqcpc ? vqcpc->config().codebook_size : distilled->config().codebook_size;
}

std::vector<int> LoadedEncoder::codes_for(const StructuredSequence& piece) const {
  return vqcpc ? encode_piece(*vqcpc, piece) : distilled_encode_piece(*distilled, piece);
}

LoadedEncoder load_encoder_checkpoint(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  LoadedEncoder out;
  auto vocab_str = config_get(ckpt.meta, "vocab");
  if (!vocab_str) throw std::runtime_error("encoder checkpoint: missing vocabulary");
  out.vocab = split_symbols(*vocab_str);
  out.seed = config_get_u64(ckpt.meta, "seed", 0);
  out.epoch = config_get_size(ckpt.meta, "epoch", 0);
  if (ckpt.magic == kEncoderMagic) {
    EncoderConfig cfg = encoder_config_from_flat(ckpt.meta, EncoderConfig{});
    cfg.vocab_size = config_get_size(ckpt.meta, "vocab_size", out.vocab.size());
    out.vqcpc = std::make_unique<CpcEncoder<float>>(cfg, out.seed);
    restore_params(*out.vqcpc, ckpt, "quantizer.centroids");
    out.vqcpc->centroids().mutable_value() = narrow(ckpt.tensor64("quantizer.centroids"));
  } else if (ckpt.magic == kDistilledMagic) {
    DistilledEncoderConfig cfg = distilled_config_from_flat(ckpt.meta, DistilledEncoderConfig{});
    cfg.vocab_size = config_get_size(ckpt.meta, "vocab_size", out.vocab.size());
    out.distilled = std::make_unique<DistilledEncoder<float>>(cfg, out.seed);
    restore_params(*out.distilled, ckpt, "quantizer.centroids");
    out.distilled->codebook().centroids.mutable_value() =
        narrow(ckpt.tensor64("quantizer.centroids"));
  } else {
    throw std::runtime_error("load_encoder_checkpoint: " + path + " is not an encoder container");
  }
  return out;
}

LoadedDecoder load_decoder_checkpoint(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.magic != kDecoderMagic)
    throw std::runtime_error("load_decoder_checkpoint: " + path + " is not a decoder container");
  LoadedDecoder out;
  auto vocab_str = config_get(ckpt.meta, "vocab");
  if (!vocab_str) throw std::runtime_error("decoder checkpoint: missing vocabulary");
  out.vocab = split_symbols(*vocab_str);
  out.seed = config_get_u64(ckpt.meta, "seed", 0);
  out.encoder_hash = config_get(ckpt.meta, "encoder_hash").value_or("");
  DecoderConfig cfg = decoder_config_from_flat(ckpt.meta, DecoderConfig{});
  cfg.vocab_size = config_get_size(ckpt.meta, "vocab_size", out.vocab.size());
  out.model = std::make_unique<Decoder<float>>(cfg, out.seed);
  restore_params(*out.model, ckpt, "");
  return out;
}

}  // namespace vqcpc
