#include "uae/evf.hpp"

#include "bytes.hpp"
#include "uae/error.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace uae {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 36;

struct Header {
  std::uint8_t kind = 0;
  std::uint8_t dtype = 0;
  VolumeGeometry geometry;
  std::uint32_t channels = 1;
  bool normalized = false;
};

void write_header(ByteWriter& w, const Header& h) {
  for (char c : {'E', 'V', 'F', '1'}) w.u8(static_cast<std::uint8_t>(c));
  w.u8(h.kind);
  w.u8(h.dtype);
  w.u16(0);
  for (int d : h.geometry.dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(h.channels);
  for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(h.geometry.spacing(a)));
  for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(h.geometry.origin(a)));
  w.u8(h.normalized ? 1 : 0);
  for (int i = 0; i < 7; ++i) w.u8(0);
}

template <typename T>
void write_payload(std::vector<std::uint8_t>& out, const std::vector<T>& data) {
  const std::size_t start = out.size();
  out.resize(start + data.size() * sizeof(T));
  std::uint8_t* p = out.data() + start;
  for (const T& v : data) {
    if constexpr (sizeof(T) == 4) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) *p++ = static_cast<std::uint8_t>(bits >> (8 * i));
    } else {
      const auto bits = static_cast<std::uint16_t>(v);
      for (int i = 0; i < 2; ++i) *p++ = static_cast<std::uint8_t>(bits >> (8 * i));
    }
  }
}

template <typename T>
void read_payload(std::span<const std::uint8_t> bytes, std::vector<T>& data) {
  const std::uint8_t* p = bytes.data();
  for (auto& v : data) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(*p++) << (8 * i);
      v = std::bit_cast<T>(bits);
    } else {
      std::uint16_t bits = 0;
      for (int i = 0; i < 2; ++i) bits = static_cast<std::uint16_t>(bits | (*p++ << (8 * i)));
      v = static_cast<T>(bits);
    }
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_evf(const AnyVolume& vol) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        Header h;
        h.geometry = v.geometry;
        h.channels = static_cast<std::uint32_t>(v.channels);
        if constexpr (std::is_same_v<V, ScalarVolume>) {
          h.kind = 1;
          h.dtype = 1;
        } else if constexpr (std::is_same_v<V, LabelVolume>) {
          h.kind = 2;
          h.dtype = 2;
        } else {
          h.kind = 3;
          h.dtype = 1;
          h.normalized = v.normalized;
        }
        if (v.data.size() != v.geometry.voxel_count() * static_cast<std::size_t>(v.channels)) {
          throw Error(ErrorCode::DimensionMismatch, "volume payload does not match its geometry");
        }
        out.reserve(kEvfHeaderSize + v.data.size() * sizeof(v.data[0]) + 4);
        write_header(w, h);
        write_payload(out, v.data);
        const auto crc = crc32(std::span<const std::uint8_t>(out).subspan(kEvfHeaderSize));
        w.u32(crc);
      },
      vol);
  return out;
}

AnyVolume decode_evf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "EVF data shorter than its magic");
  if (bytes[0] != 'E' || bytes[1] != 'V' || bytes[2] != 'F') {
    throw Error(ErrorCode::BadMagic, "not an EVF file");
  }
  if (bytes[3] != '1') throw Error(ErrorCode::UnsupportedVersion, "unknown EVF version");

  ByteReader r(bytes, "EVF");
  r.skip(4);
  Header h;
  h.kind = r.u8();
  h.dtype = r.u8();
  const std::uint16_t reserved = r.u16();
  std::uint32_t dims[3];
  for (auto& d : dims) d = r.u32();
  h.channels = r.u32();
  float sp[3], org[3];
  for (auto& s : sp) s = r.f32();
  for (auto& o : org) o = r.f32();
  const std::uint8_t norm = r.u8();
  bool padding_zero = true;
  for (int i = 0; i < 7; ++i) padding_zero = padding_zero && r.u8() == 0;

  const bool kind_ok = (h.kind == 1 && h.dtype == 1) || (h.kind == 2 && h.dtype == 2) ||
                       (h.kind == 3 && h.dtype == 1);
  if (!kind_ok || reserved != 0 || norm > 1 || !padding_zero) {
    throw Error(ErrorCode::UnsupportedVersion, "unsupported EVF kind/dtype combination");
  }
  if (h.kind != 3 && h.channels != 1) {
    throw Error(ErrorCode::UnsupportedVersion, "scalar and label volumes have one channel");
  }

  std::uint64_t count = 1;
  for (std::uint32_t d : {dims[0], dims[1], dims[2], h.channels}) {
    if (d == 0 || d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
      throw Error(ErrorCode::DimensionOverflow, "EVF dimension out of range");
    }
    count *= d;
    if (count > kMaxPayloadBytes) throw Error(ErrorCode::DimensionOverflow, "EVF payload too large");
  }
  const std::uint64_t elem = h.dtype == 1 ? 4 : 2;
  const std::uint64_t payload = count * elem;
  if (payload > kMaxPayloadBytes) throw Error(ErrorCode::DimensionOverflow, "EVF payload too large");
  if (bytes.size() < kEvfHeaderSize + payload + 4) {
    throw Error(ErrorCode::TruncatedFile, "EVF payload truncated");
  }

  for (int a = 0; a < 3; ++a) {
    h.geometry.dims[static_cast<std::size_t>(a)] = static_cast<int>(dims[a]);
    h.geometry.spacing(a) = sp[a];
    h.geometry.origin(a) = org[a];
  }
  h.normalized = norm == 1;

  const auto body = bytes.subspan(kEvfHeaderSize, static_cast<std::size_t>(payload));
  ByteReader tail(bytes.subspan(kEvfHeaderSize + static_cast<std::size_t>(payload)), "EVF");
  const std::uint32_t stored = tail.u32();
  if (bytes.size() != kEvfHeaderSize + payload + 4) {
    throw Error(ErrorCode::UnsupportedVersion, "trailing bytes after EVF payload");
  }
  if (crc32(body) != stored) throw Error(ErrorCode::ChecksumMismatch, "EVF payload CRC mismatch");

  const int channels = static_cast<int>(h.channels);
  switch (h.kind) {
    case 1: {
      ScalarVolume v;
      v.geometry = h.geometry;
      v.data.resize(static_cast<std::size_t>(count));
      read_payload(body, v.data);
      return v;
    }
    case 2: {
      LabelVolume v;
      v.geometry = h.geometry;
      v.data.resize(static_cast<std::size_t>(count));
      read_payload(body, v.data);
      return v;
    }
    default: {
      EmbeddingVolume v;
      v.geometry = h.geometry;
      v.channels = channels;
      v.normalized = h.normalized;
      v.data.resize(static_cast<std::size_t>(count));
      read_payload(body, v.data);
      return v;
    }
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::IoError, "failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

void write_volume(const AnyVolume& vol, const std::filesystem::path& path) {
  write_file_bytes(path, encode_evf(vol));
}

AnyVolume read_volume(const std::filesystem::path& path) { return decode_evf(read_file_bytes(path)); }

namespace {

using detail::ByteReader;
using detail::ByteWriter;
template <typename V>
V read_as(const std::filesystem::path& path, const char* what) {
  auto any = read_volume(path);
  if (auto* v = std::get_if<V>(&any)) return std::move(*v);
  throw Error(ErrorCode::DimensionMismatch, path.string() + " is not a " + what + " volume");
}
}  // namespace

ScalarVolume read_scalar_volume(const std::filesystem::path& path) {
  return read_as<ScalarVolume>(path, "scalar");
}
LabelVolume read_label_volume(const std::filesystem::path& path) {
  return read_as<LabelVolume>(path, "label");
}
EmbeddingVolume read_embedding_volume(const std::filesystem::path& path) {
  return read_as<EmbeddingVolume>(path, "embedding");
}

}  // namespace uae
