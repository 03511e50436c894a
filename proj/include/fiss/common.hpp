// Copyright 2026 The fiss authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FISS_COMMON_HPP
#define FISS_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fiss {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Error taxonomy. Every module throws one of these so the CLI can map error
// classes to distinct exit codes.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration (schema violations, bad hyperparameters).
struct config_error : error {
  explicit config_error(const std::string& msg) : error(msg) {}
};

// Array shape or alignment mismatch between operands.
struct shape_error : error {
  explicit shape_error(const std::string& msg) : error(msg) {}
};

// Signal too short / metadata inconsistent with the chosen framing.
struct framing_error : error {
  explicit framing_error(const std::string& msg) : error(msg) {}
};

// Filesystem / OS level failures.
struct io_error : error {
  explicit io_error(const std::string& msg) : error(msg) {}
};

// A file exists but its content does not parse as the expected format.
struct format_error : error {
  explicit format_error(const std::string& msg) : error(msg) {}
};
struct bad_magic_error : format_error {
  explicit bad_magic_error(const std::string& msg) : format_error(msg) {}
};
struct truncated_error : format_error {
  explicit truncated_error(const std::string& msg) : format_error(msg) {}
};
struct dimension_error : format_error {
  explicit dimension_error(const std::string& msg) : format_error(msg) {}
};

// NaN/Inf reached a tensor or a gradient; training must halt.
struct numeric_error : error {
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Checkpoint was produced under a different configuration than requested.
struct checkpoint_mismatch_error : error {
  explicit checkpoint_mismatch_error(const std::string& msg) : error(msg) {}
};

// Method requires side features but none were supplied.
struct missing_features_error : error {
  explicit missing_features_error(const std::string& msg) : error(msg) {}
};

// ---------------------------------------------------------------------------
// Seed mixing. Every consumer derives its own stream from (seed, stream id)
// so adding a consumer never shifts another one's draws.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(seed, stream));
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for config hashes and the dataset split manifest.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Little-endian binary stream helpers for the SFV1 / FCK1 containers.
// The in-memory layout on every supported target is little-endian already;
// the helpers keep the byte order explicit at the file boundary.
// ---------------------------------------------------------------------------

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw truncated_error(std::string("truncated payload while reading ") + what);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  const auto n = read_le<std::uint32_t>(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw truncated_error(std::string("truncated payload while reading ") + what);
  }
  return s;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(n);
  if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (!f) throw io_error("failed to read file: " + path);
  return bytes;
}

inline std::uint64_t hash_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

// The four separation targets, in the fixed order used everywhere.
inline const std::vector<std::string>& stem_names() {
  static const std::vector<std::string> names = {"vocals", "drums", "bass", "other"};
  return names;
}

constexpr int kNumSources = 4;

}  // namespace fiss

#endif  // FISS_COMMON_HPP
