// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container:
//
//   offset  size  field
//   0       8     magic "PAFTCKP1"
//   8       8     header length H, unsigned little-endian
//   16      H     UTF-8 JSON header, keys sorted, no whitespace
//   16+H    P     payload: float64 little-endian, tensors back to back in name order
//
// The header maps each tensor name to {"data_offsets":[begin,end],"shape":[...]}
// (offsets in bytes, relative to the payload start) and carries string
// metadata under "__metadata__". See docs/checkpoint_format.md.

#include <algorithm>
#include <array>
#include <cmath>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "paft/error.hpp"
#include "paft/param_set.hpp"

namespace paft {

inline constexpr std::array<char, 8> kCheckpointMagic = {'P', 'A', 'F', 'T', 'C', 'K', 'P', '1'};
inline constexpr std::uint64_t kCheckpointPrelude = 16;

/// Header-only view of a checkpoint, as printed by `inspect`.
struct CheckpointHeader {
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
  };
  std::vector<Entry> entries;  // name order
  ParamSet::Metadata metadata;
  std::uint64_t header_length = 0;
  std::uint64_t payload_length = 0;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string header_json(const ParamSet& p) {
  nlohmann::json header = nlohmann::json::object();
  if (!p.metadata().empty()) {
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [k, v] : p.metadata()) meta[k] = v;
    header[std::string(kMetadataKey)] = std::move(meta);
  }
  std::uint64_t offset = 0;
  for (const auto& [name, t] : p) {
    const std::uint64_t bytes = 8 * static_cast<std::uint64_t>(t.size());
    header[name] = {{"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  // nlohmann::json objects are std::map backed, so dump() emits sorted keys.
  return header.dump();
}

/// Parses and validates the JSON header. `bytes` holds at least the prelude
/// and header; `size` is the full file size.
inline CheckpointHeader parse_header(std::string_view bytes, std::uint64_t size) {
  if (size < kCheckpointPrelude) {
    throw FormatError("file shorter than the 16-byte prelude", size);
  }
  if (bytes.size() < kCheckpointPrelude) throw FormatError("prelude not available", bytes.size());
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw FormatError("bad magic", 0);
  }
  CheckpointHeader out;
  out.header_length = get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
  if (out.header_length > size - kCheckpointPrelude) {
    throw FormatError("header length " + std::to_string(out.header_length) +
                          " exceeds the remaining file size " +
                          std::to_string(size - kCheckpointPrelude),
                      8);
  }
  const std::string_view text = bytes.substr(kCheckpointPrelude, out.header_length);

  // Duplicate keys would be silently merged by the DOM parser, so top-level
  // keys are collected through the parse callback first.
  std::set<std::string, std::less<>> seen;
  std::string duplicate;
  auto callback = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
    if (depth == 1 && event == nlohmann::json::parse_event_t::key && duplicate.empty()) {
      const auto& key = parsed.get_ref<const std::string&>();
      if (!seen.insert(key).second) duplicate = key;
    }
    return true;
  };
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text.begin(), text.end(), callback);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(),
                      kCheckpointPrelude + (e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!duplicate.empty()) throw FormatError("duplicate tensor name", FormatError::npos, duplicate);
  if (!header.is_object()) throw FormatError("header is not a JSON object", kCheckpointPrelude);

  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string& name = it.key();
    const auto& value = it.value();
    if (name == kMetadataKey) {
      if (!value.is_object()) throw FormatError("metadata is not an object", FormatError::npos, name);
      for (auto m = value.begin(); m != value.end(); ++m) {
        if (!m.value().is_string()) {
          throw FormatError("metadata value '" + m.key() + "' is not a string", FormatError::npos,
                            name);
        }
        out.metadata[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    if (!is_valid_param_name(name)) throw FormatError("invalid tensor name", FormatError::npos, name);
    if (!value.is_object() || !value.contains("shape") || !value.contains("data_offsets") ||
        value.size() != 2) {
      throw FormatError("entry must hold exactly 'shape' and 'data_offsets'", FormatError::npos,
                        name);
    }
    const auto& shape = value["shape"];
    const auto& offs = value["data_offsets"];
    if (!shape.is_array() || !offs.is_array() || offs.size() != 2) {
      throw FormatError("malformed shape or data_offsets", FormatError::npos, name);
    }
    CheckpointHeader::Entry e;
    e.name = name;
    for (const auto& d : shape) {
      if (!d.is_number_unsigned()) throw FormatError("non-integer extent", FormatError::npos, name);
      e.shape.push_back(d.get<std::size_t>());
    }
    if (!offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
      throw FormatError("non-integer data offset", FormatError::npos, name);
    }
    e.begin = offs[0].get<std::uint64_t>();
    e.end = offs[1].get<std::uint64_t>();
    out.entries.push_back(std::move(e));
  }

  // Canonical layout: contiguous, in name order, sizes matching shapes.
  std::uint64_t expected = 0;
  for (const auto& e : out.entries) {
    const std::uint64_t bytes = 8 * static_cast<std::uint64_t>(element_count(e.shape));
    if (e.begin != expected || e.end < e.begin || e.end - e.begin != bytes) {
      throw FormatError("data_offsets [" + std::to_string(e.begin) + "," + std::to_string(e.end) +
                            "] inconsistent with shape " + shape_to_string(e.shape) +
                            " (expected begin " + std::to_string(expected) + ")",
                        FormatError::npos, e.name);
    }
    expected = e.end;
  }
  out.payload_length = expected;
  const std::uint64_t payload_start = kCheckpointPrelude + out.header_length;
  const std::uint64_t available = size - payload_start;
  if (available < out.payload_length) {
    throw FormatError("payload truncated: header declares " + std::to_string(out.payload_length) +
                          " bytes, file holds " + std::to_string(available),
                      size);
  }
  if (available > out.payload_length) {
    throw FormatError("trailing bytes after payload", payload_start + out.payload_length);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed for '" + path.string() + "'");
  return bytes;
}

}  // namespace detail

/// Canonical byte encoding of `p`; a pure function of its content.
inline std::string serialize_checkpoint(const ParamSet& p) {
  const std::string header = detail::header_json(p);
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u64_le(out, header.size());
  out += header;
  out.reserve(out.size() + 8 * p.element_count());
  for (const auto& [_, t] : p) {
    for (double v : t.values()) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline ParamSet deserialize_checkpoint(std::string_view bytes) {
  const CheckpointHeader header = detail::parse_header(bytes, bytes.size());
  const std::uint64_t payload_start = kCheckpointPrelude + header.header_length;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  ParamSet out;
  for (const auto& e : header.entries) {
    const std::size_t n = element_count(e.shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t at = payload_start + e.begin + 8 * i;
      data[i] = std::bit_cast<double>(detail::get_u64_le(raw + at));
      if (!std::isfinite(data[i])) throw FormatError("non-finite value", at, e.name);
    }
    out.insert(e.name, Tensor(e.shape, std::move(data)));
  }
  out.metadata() = header.metadata;
  return out;
}

/// Writes to a sibling temporary file and renames it into place, so a failed
/// save never leaves a partial checkpoint behind.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorCode::kIoError, "write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot move checkpoint into '" + path.string() + "'");
  }
}

inline void save_checkpoint(const ParamSet& p, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(p));
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

/// Validates the prelude and header without decoding tensor values.
inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for reading");
  std::error_code ec;
  const std::uint64_t size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot stat '" + path.string() + "'");
  std::string bytes(static_cast<std::size_t>(std::min(size, kCheckpointPrelude)), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (size >= kCheckpointPrelude) {
    const std::uint64_t header_length =
        detail::get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
    if (header_length <= size - kCheckpointPrelude) {
      bytes.resize(kCheckpointPrelude + header_length);
      in.read(bytes.data() + kCheckpointPrelude, static_cast<std::streamsize>(header_length));
    }
  }
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed for '" + path.string() + "'");
  return detail::parse_header(bytes, size);
}

}  // namespace paft
