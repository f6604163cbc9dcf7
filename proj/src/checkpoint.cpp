#include "miml/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "miml/errors.hpp"

namespace miml {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint file truncated");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  auto n = read_pod<std::uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("checkpoint file truncated");
  return s;
}

void write_config(std::ostream& out, const ModelConfig& c) {
  write_pod<std::int32_t>(out, c.dim);
  write_pod<std::int32_t>(out, c.layers);
  write_pod<std::int32_t>(out, c.heads);
  write_pod<std::int32_t>(out, c.ff_dim);
  write_pod<std::int32_t>(out, c.vocab_size);
  write_pod<std::int32_t>(out, c.window_size);
  write_pod<double>(out, c.dropout);
  write_pod<double>(out, c.lambda_train);
  write_pod<double>(out, c.lambda_eval);
  write_pod<std::int32_t>(out, static_cast<std::int32_t>(c.mode));
  write_pod<std::int32_t>(out, static_cast<std::int32_t>(c.head_mode));
  write_pod<std::uint64_t>(out, c.edge_counts.size());
  for (int e : c.edge_counts) write_pod<std::int32_t>(out, e);
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  c.dim = read_pod<std::int32_t>(in);
  c.layers = read_pod<std::int32_t>(in);
  c.heads = read_pod<std::int32_t>(in);
  c.ff_dim = read_pod<std::int32_t>(in);
  c.vocab_size = read_pod<std::int32_t>(in);
  c.window_size = read_pod<std::int32_t>(in);
  c.dropout = read_pod<double>(in);
  c.lambda_train = read_pod<double>(in);
  c.lambda_eval = read_pod<double>(in);
  c.mode = static_cast<ModelConfig::Mode>(read_pod<std::int32_t>(in));
  c.head_mode = static_cast<ModelConfig::HeadMode>(read_pod<std::int32_t>(in));
  auto n = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) c.edge_counts.push_back(read_pod<std::int32_t>(in));
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_config(out, ckpt.config);
  write_pod<std::uint64_t>(out, ckpt.vocab_hash);
  auto tensors = ckpt.params.tensors();
  write_pod<std::uint64_t>(out, tensors.size());
  for (const auto& tv : tensors) {
    write_string(out, tv.name);
    write_pod<std::int64_t>(out, tv.tensor->rows());
    write_pod<std::int64_t>(out, tv.tensor->cols());
    out.write(reinterpret_cast<const char*>(tv.tensor->data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(tv.tensor->size())));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " (reader supports " + std::to_string(kVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config = read_config(in);
  ckpt.vocab_hash = read_pod<std::uint64_t>(in);
  // Rebuild parameter shapes from the config, then overwrite the values.
  ckpt.params = init_params(ckpt.config, 0);
  auto tensors = ckpt.params.tensors();
  auto count = read_pod<std::uint64_t>(in);
  if (count != tensors.size()) throw DataError("checkpoint tensor count mismatch");
  for (auto& tv : tensors) {
    std::string name = read_string(in);
    auto rows = read_pod<std::int64_t>(in);
    auto cols = read_pod<std::int64_t>(in);
    if (name != tv.name || rows != tv.tensor->rows() || cols != tv.tensor->cols()) {
      throw DataError("checkpoint tensor mismatch at " + tv.name);
    }
    in.read(reinterpret_cast<char*>(tv.tensor->data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(tv.tensor->size())));
    if (!in) throw DataError("checkpoint file truncated");
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_vocab_hash) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.vocab_hash != expected_vocab_hash) {
    throw DataError("checkpoint was built with a different vocabulary");
  }
  return ckpt;
}

}  // namespace miml
