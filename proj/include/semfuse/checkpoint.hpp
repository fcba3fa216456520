#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/parameters.hpp"

// Checkpoint archive, all integers little-endian:
//
//   "SEMFUSE1"                       8-byte magic
//   u32 metadata_length, bytes       UTF-8 text (serialized run config plus [checkpoint] section)
//   u32 tensor_count
//   per tensor:
//     u32 name_length, bytes
//     u32 rank, rank x u32 dims
//     prod(dims) x f32 values
namespace semfuse {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'F', 'U', 'S', 'E', '1'};

struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (std::memcmp(r.take(8), kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.metadata = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint tensor " + name + " has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    double bytes_needed = sizeof(float);
    for (auto& d : shape) bytes_needed *= (d = r.u32());
    if (bytes_needed > static_cast<double>(r.remaining())) throw IoError("checkpoint truncated");
    Tensor<float> t(shape);
    std::memcpy(t.data(), r.take(t.size() * sizeof(float)), t.size() * sizeof(float));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write checkpoint " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

/// FNV-1a 64-bit digest.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void export_parameters(const ParameterSet<T>& params, Checkpoint& ckpt) {
  for (const auto& p : params.items()) ckpt.tensors.emplace_back(p.name, p.var.value().template cast<float>());
}

/// Copies every parameter of `params` from the checkpoint; names and shapes must match.
template <typename T>
void import_parameters(ParameterSet<T>& params, const Checkpoint& ckpt) {
  for (auto& p : params.items()) {
    const Tensor<float>* t = ckpt.find(p.name);
    if (!t) throw IoError("checkpoint lacks parameter " + p.name);
    if (t->shape() != p.var.value().shape())
      throw ShapeMismatch("checkpoint parameter " + p.name + " has shape " + shape_string(t->shape()) + ", expected " +
                          shape_string(p.var.value().shape()));
    p.var.mutable_value() = t->template cast<T>();
  }
}

}  // namespace semfuse
