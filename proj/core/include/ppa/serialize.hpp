// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ppa/tensor.hpp"

namespace ppa {

/// Raised for unreadable, truncated or inconsistent tensor files.
class TensorFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Tensor file layout: a text manifest followed by a raw blob.
//
//   PPA-TENSORS 1
//   count <n>
//   blob_bytes <bytes>
//   blob_fnv1a <16 hex digits>
//   tensor <name> <d0>x<d1>... <byte offset>
//   ...
//   end
//   <blob: little-endian float32 values, tensors back to back>
//
// Names may not contain whitespace. Reading validates the whole file before
// returning anything.

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
/// FNV-1a of a file's contents as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);
std::string to_hex(std::uint64_t value);

}  // namespace ppa
