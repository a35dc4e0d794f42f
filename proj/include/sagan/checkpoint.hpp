// ============================================================================
// checkpoint.hpp - flat binary container for named tensors.
//
// Layout (all integers little-endian):
//   magic   "SGCKPT\0\0"        8 bytes
//   version u32                 currently 1
//   count   u64                 number of records
//   then per record:
//     name_len u32, name bytes (no terminator)
//     ndim     u32, dims u64 each
//     data     f64 each, row-major
// The byte layout is also documented in README.md so other tooling can read
// these files without this header.
// ============================================================================

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sagan/common.hpp"
#include "sagan/tensor.hpp"

namespace sagan {

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'C', 'K',
                                             'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

template <class T>
inline void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if (!host_is_little_endian()) std::reverse(raw, raw + sizeof(T));
  out.append(reinterpret_cast<const char*>(raw), sizeof(T));
}

template <class T>
inline T read_le(const std::string& in, std::size_t& pos, const char* what) {
  require<IoError>(pos + sizeof(T) <= in.size(),
                   std::string("checkpoint: truncated while reading ") + what);
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, in.data() + pos, sizeof(T));
  if (!host_is_little_endian()) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace detail

// Ordered name -> tensor map as written to / read from disk.
using CheckpointContents = std::map<std::string, Tensor>;

inline std::string serialize_checkpoint(const CheckpointContents& contents) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_le<std::uint32_t>(out, kCheckpointVersion);
  detail::append_le<std::uint64_t>(out, contents.size());
  for (const auto& [name, tensor] : contents) {
    require<IoError>(!name.empty(), "checkpoint: empty tensor name");
    detail::append_le<std::uint32_t>(out,
                                     static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::append_le<std::uint32_t>(
        out, static_cast<std::uint32_t>(tensor.shape().size()));
    for (std::size_t d : tensor.shape())
      detail::append_le<std::uint64_t>(out, d);
    for (double v : tensor.data()) detail::append_le<double>(out, v);
  }
  return out;
}

inline CheckpointContents deserialize_checkpoint(const std::string& bytes) {
  require<IoError>(bytes.size() >= sizeof(kCheckpointMagic),
                   "checkpoint: file shorter than magic header");
  require<IoError>(
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
      "checkpoint: bad magic, not a checkpoint file");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::read_le<std::uint32_t>(bytes, pos, "version");
  require<IoError>(version == kCheckpointVersion,
                   "checkpoint: unsupported version " + std::to_string(version) +
                       " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto count = detail::read_le<std::uint64_t>(bytes, pos, "record count");
  CheckpointContents contents;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len =
        detail::read_le<std::uint32_t>(bytes, pos, "name length");
    require<IoError>(pos + name_len <= bytes.size(),
                     "checkpoint: truncated while reading name");
    std::string name(bytes.data() + pos, name_len);
    pos += name_len;
    const auto ndim = detail::read_le<std::uint32_t>(bytes, pos, "rank");
    Shape shape(ndim);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(
          detail::read_le<std::uint64_t>(bytes, pos, "dimension"));
      require<IoError>(d > 0, "checkpoint: record '" + name +
                                  "' has a zero dimension");
    }
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = detail::read_le<double>(bytes, pos, "data");
    require<IoError>(!contents.count(name),
                     "checkpoint: duplicate record '" + name + "'");
    contents.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  require<IoError>(pos == bytes.size(),
                   "checkpoint: " + std::to_string(bytes.size() - pos) +
                       " trailing bytes after last record");
  return contents;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const CheckpointContents& contents) {
  atomic_write_file(path, serialize_checkpoint(contents));
}

inline CheckpointContents load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

// Flattens a ParamSet (parameters and buffers, plus the step counter) under
// a prefix, e.g. "classifier/conv0/weight".
inline void checkpoint_insert(CheckpointContents& contents,
                              const std::string& prefix,
                              const ParamSet& params) {
  for (const auto& name : params.names()) {
    const std::string key = prefix + "/" + name;
    require<IoError>(!contents.count(key),
                     "checkpoint: duplicate record '" + key + "'");
    contents.emplace(key, params.at(name).detach());
  }
  contents.emplace(prefix + "/__steps",
                   Tensor::scalar(static_cast<double>(params.step_count())));
}

// Restores values into an already-built ParamSet with matching structure.
inline void checkpoint_extract(const CheckpointContents& contents,
                               const std::string& prefix, ParamSet& params) {
  for (const auto& name : params.names()) {
    const std::string key = prefix + "/" + name;
    auto it = contents.find(key);
    require<IoError>(it != contents.end(),
                     "checkpoint: missing record '" + key + "'");
    Tensor& dst = params.at(name);
    require<IoError>(it->second.shape() == dst.shape(),
                     "checkpoint: record '" + key + "' has shape " +
                         shape_str(it->second.shape()) + " but model expects " +
                         shape_str(dst.shape()));
    dst.data() = it->second.data();
  }
}

}  // namespace sagan
