#pragma once

// Model container, all integers little-endian:
//
//   magic        8 bytes  "WINNETM\0"
//   version      u32      kModelFormatVersion
//   config_len   u32      followed by config_len bytes of "key=value\n" lines (sorted by key)
//   count        u32      number of tensor records
//   directory    count x { name_len u32, name bytes, rank u32, dims u64[rank],
//                          offset u64 (from the start of the payload area), bytes u64 }
//   payload      float32 values, row-major, concatenated in directory order
//
// Loading rebuilds the architecture from the config block and then fills
// every tensor from its named record; nothing is returned unless every record
// is present, correctly shaped and complete.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "winnet/winnet.hpp"

namespace winnet {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[8] = {'W', 'I', 'N', 'N', 'E', 'T', 'M', '\0'};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof v; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& b, std::size_t start = 0) : buf_(b), pos_(start) {}
  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_)
      throw ModelFormatError(ModelFormatError::Kind::Truncated, "model file truncated at byte " + std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le() {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof b);
    U v = 0;
    for (std::size_t i = 0; i < sizeof b; ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_;
};

struct TensorRecord {
  Shape dims;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

}  // namespace detail

template <typename T>
std::vector<char> serialize_model(const WinnetModel<T>& m) {
  detail::ByteWriter w;
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.le<std::uint32_t>(kModelFormatVersion);
  std::string cfg;
  for (const auto& [k, v] : m.config.to_map()) cfg += k + "=" + v + "\n";
  w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  const auto tensors = named_tensors(m);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint64_t>(static_cast<std::uint64_t>(d));
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * 4;
    w.le<std::uint64_t>(offset);
    w.le<std::uint64_t>(nbytes);
    offset += nbytes;
  }
  for (const auto& [name, t] : tensors)
    for (auto v : t.vec()) w.f32(static_cast<float>(v));
  return w.data();
}

template <typename T>
WinnetModel<T> deserialize_model(const std::vector<char>& buf) {
  using Kind = ModelFormatError::Kind;
  detail::ByteReader r(buf);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw ModelFormatError(Kind::Version, "not a model file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kModelFormatVersion)
    throw ModelFormatError(Kind::Version, "unsupported model format version " + std::to_string(version) +
                                              " (expected " + std::to_string(kModelFormatVersion) + ")");
  const auto cfg_len = r.le<std::uint32_t>();
  std::string cfg(cfg_len, '\0');
  r.bytes(cfg.data(), cfg_len);
  std::map<std::string, std::string> kv;
  std::istringstream lines(cfg);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ModelFormatError(Kind::Config, "malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  WinnetModel<T> m;
  try {
    auto c = WinnetConfig::from_map(kv);
    m = make_model<T>(c);
  } catch (const ArgumentError& e) {
    throw ModelFormatError(Kind::Config, std::string("invalid config block: ") + e.what());
  }

  const auto count = r.le<std::uint32_t>();
  std::map<std::string, detail::TensorRecord> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.le<std::uint32_t>();
    if (nlen > buf.size()) throw ModelFormatError(Kind::Truncated, "model file truncated in directory");
    std::string name(nlen, '\0');
    r.bytes(name.data(), nlen);
    detail::TensorRecord rec;
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw ModelFormatError(Kind::Shape, "tensor '" + name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) rec.dims.push_back(static_cast<std::int64_t>(r.le<std::uint64_t>()));
    rec.offset = r.le<std::uint64_t>();
    rec.bytes = r.le<std::uint64_t>();
    dir[name] = rec;
  }
  const std::size_t payload = r.pos();
  for (auto& [name, t] : named_tensors(m)) {
    auto it = dir.find(name);
    if (it == dir.end()) throw ModelFormatError(Kind::MissingTensor, "model file has no record for tensor '" + name + "'");
    const auto& rec = it->second;
    if (rec.dims != t.shape())
      throw ModelFormatError(Kind::Shape, "tensor '" + name + "' has shape " + shape_str(rec.dims) + ", expected " +
                                              shape_str(t.shape()));
    if (rec.bytes != static_cast<std::uint64_t>(t.numel()) * 4)
      throw ModelFormatError(Kind::Shape, "tensor '" + name + "' payload size does not match its shape");
    if (rec.offset > buf.size() || payload + rec.offset + rec.bytes > buf.size())
      throw ModelFormatError(Kind::Truncated, "payload of tensor '" + name + "' is truncated");
    detail::ByteReader pr(buf, payload + rec.offset);
    for (auto& v : t.vec()) v = static_cast<T>(std::bit_cast<float>(pr.le<std::uint32_t>()));
  }
  return m;
}

template <typename T>
void save_model(const WinnetModel<T>& m, const std::string& path) {
  const auto bytes = serialize_model(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ModelFormatError(ModelFormatError::Kind::Io, "cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ModelFormatError(ModelFormatError::Kind::Io, "write failed for '" + path + "'");
}

template <typename T>
WinnetModel<T> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelFormatError(ModelFormatError::Kind::Io, "cannot open model file '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model<T>(buf);
}

}  // namespace winnet
