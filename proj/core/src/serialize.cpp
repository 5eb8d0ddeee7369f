// SPDX-License-Identifier: Apache-2.0
#include "ppa/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ppa {

namespace {

constexpr std::string_view kMagic = "PPA-TENSORS 1";

void append_le(std::string& blob, float value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Shape parse_shape(const std::string& token) {
  Shape shape;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const int d = std::stoi(part, &used);
      if (used != part.size() || d <= 0) throw std::invalid_argument(part);
      shape.push_back(d);
    } catch (const std::exception&) {
      throw TensorFormatError("bad shape '" + token + "' in tensor manifest");
    }
  }
  if (shape.empty()) throw TensorFormatError("empty shape in tensor manifest");
  return shape;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
  for (char c : bytes) {
    state ^= static_cast<unsigned char>(c);
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) s[i] = kDigits[value & 0xf];
  return s;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for hashing");
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return to_hex(fnv1a64(contents));
}

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::string blob;
  std::ostringstream manifest;
  manifest << kMagic << '\n';
  manifest << "count " << tensors.size() << '\n';
  std::ostringstream entries;
  for (const NamedTensor& nt : tensors) {
    if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos) {
      throw TensorFormatError("tensor name '" + nt.name + "' is empty or contains whitespace");
    }
    entries << "tensor " << nt.name << ' ' << shape_token(nt.tensor.shape()) << ' ' << blob.size() << '\n';
    blob.reserve(blob.size() + nt.tensor.size() * 4);
    for (float v : nt.tensor.data()) append_le(blob, v);
  }
  manifest << "blob_bytes " << blob.size() << '\n';
  manifest << "blob_fnv1a " << to_hex(fnv1a64(blob)) << '\n';
  manifest << entries.str() << "end\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFormatError("cannot open " + path.string() + " for writing");
  const std::string header = manifest.str();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw TensorFormatError("write failed for " + path.string());
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorFormatError("cannot open " + path.string());
  const std::string where = path.string();

  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw TensorFormatError(where + ": missing '" + std::string(kMagic) + "' header");

  auto expect_keyed = [&](const char* key) -> std::string {
    if (!std::getline(in, line)) throw TensorFormatError(where + ": truncated manifest before '" + key + "'");
    std::istringstream ls(line);
    std::string k, v;
    ls >> k >> v;
    if (k != key || v.empty()) throw TensorFormatError(where + ": expected '" + key + "', got '" + line + "'");
    return v;
  };
  std::size_t count = 0, blob_bytes = 0;
  try {
    count = std::stoull(expect_keyed("count"));
    blob_bytes = std::stoull(expect_keyed("blob_bytes"));
  } catch (const std::logic_error&) {
    throw TensorFormatError(where + ": malformed count or blob size");
  }
  const std::string checksum = expect_keyed("blob_fnv1a");

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw TensorFormatError(where + ": manifest lists fewer tensors than its count");
    std::istringstream ls(line);
    std::string tag, name, shape, offset;
    ls >> tag >> name >> shape >> offset;
    if (tag != "tensor" || offset.empty()) throw TensorFormatError(where + ": malformed entry '" + line + "'");
    std::size_t off = 0;
    try {
      off = std::stoull(offset);
    } catch (const std::logic_error&) {
      throw TensorFormatError(where + ": bad offset in '" + line + "'");
    }
    entries.push_back({name, parse_shape(shape), off});
  }
  if (!std::getline(in, line) || line != "end") throw TensorFormatError(where + ": manifest not terminated by 'end'");

  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != blob_bytes) {
    throw TensorFormatError(where + ": blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                            std::to_string(blob_bytes));
  }
  if (to_hex(fnv1a64(blob)) != checksum) throw TensorFormatError(where + ": blob checksum mismatch");

  std::vector<NamedTensor> result;
  result.reserve(entries.size());
  std::size_t expected_offset = 0;
  for (const Entry& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    if (e.offset != expected_offset || e.offset + n * 4 > blob.size()) {
      throw TensorFormatError(where + ": tensor '" + e.name + "' offset/size inconsistent with blob");
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = read_le(blob.data() + e.offset + i * 4);
    result.push_back({e.name, Tensor(e.shape, std::move(data))});
    expected_offset = e.offset + n * 4;
  }
  if (expected_offset != blob.size()) throw TensorFormatError(where + ": trailing bytes after last tensor");
  return result;
}

}  // namespace ppa
