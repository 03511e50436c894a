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

#ifndef FISS_AUDIO_HPP
#define FISS_AUDIO_HPP

#include "fiss/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

namespace fiss {

constexpr int kSampleRate = 44100;

// Multichannel audio held as [channels x n_samples], 44.1 kHz unless stated.
struct AudioClip {
  Mat samples;  // rows = channels (1 or 2)
  int sample_rate = kSampleRate;

  int channels() const { return static_cast<int>(samples.rows()); }
  long n_samples() const { return static_cast<long>(samples.cols()); }
  double duration_s() const { return static_cast<double>(n_samples()) / sample_rate; }

  void validate() const {
    if (channels() != 1 && channels() != 2)
      throw shape_error("AudioClip: channels must be 1 or 2, got " + std::to_string(channels()));
    if (n_samples() <= 0) throw shape_error("AudioClip: empty signal");
    if (!samples.allFinite()) throw numeric_error("AudioClip: non-finite sample");
  }

  Vec mono() const {
    if (channels() == 1) return samples.row(0).transpose();
    return samples.colwise().mean().transpose();
  }

  AudioClip slice(long start, long count) const {
    AudioClip out;
    out.sample_rate = sample_rate;
    out.samples = samples.middleCols(start, count);
    return out;
  }
};

// ---------------------------------------------------------------------------
// WAV ingestion: RIFF/WAVE with PCM16 or IEEE float32 payloads, mono or
// stereo, 44.1 kHz. Other encodings and rates are rejected; v1 does not
// resample.
// ---------------------------------------------------------------------------

namespace wav_detail {

struct ChunkHeader {
  char id[4];
  std::uint32_t size;
};

inline ChunkHeader read_chunk_header(std::istream& is) {
  ChunkHeader h{};
  is.read(h.id, 4);
  if (is.gcount() != 4) throw truncated_error("truncated WAV chunk header");
  h.size = read_le<std::uint32_t>(is, "WAV chunk size");
  return h;
}

}  // namespace wav_detail

inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open WAV file: " + path);

  char riff[4], wave[4];
  f.read(riff, 4);
  if (f.gcount() != 4 || std::memcmp(riff, "RIFF", 4) != 0)
    throw bad_magic_error("not a RIFF file: " + path);
  read_le<std::uint32_t>(f, "RIFF size");
  f.read(wave, 4);
  if (f.gcount() != 4 || std::memcmp(wave, "WAVE", 4) != 0)
    throw bad_magic_error("not a WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<unsigned char> data;
  bool have_data = false;

  while (f && !have_data) {
    wav_detail::ChunkHeader h{};
    try {
      h = wav_detail::read_chunk_header(f);
    } catch (const truncated_error&) {
      break;
    }
    if (std::memcmp(h.id, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(f, "fmt format");
      channels = read_le<std::uint16_t>(f, "fmt channels");
      rate = read_le<std::uint32_t>(f, "fmt rate");
      read_le<std::uint32_t>(f, "fmt byte rate");
      read_le<std::uint16_t>(f, "fmt block align");
      bits = read_le<std::uint16_t>(f, "fmt bits");
      if (h.size > 16) f.seekg(h.size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(h.id, "data", 4) == 0) {
      data.resize(h.size);
      f.read(reinterpret_cast<char*>(data.data()), h.size);
      if (f.gcount() != static_cast<std::streamsize>(h.size))
        throw truncated_error("truncated WAV data chunk: " + path);
      have_data = true;
    } else {
      // skip unknown chunk (word aligned)
      f.seekg(h.size + (h.size & 1u), std::ios::cur);
    }
  }

  if (!have_fmt || !have_data) throw format_error("missing fmt/data chunk: " + path);
  if (channels != 1 && channels != 2)
    throw format_error("unsupported channel count " + std::to_string(channels) + ": " + path);
  if (rate != kSampleRate)
    throw format_error("unsupported sample rate " + std::to_string(rate) +
                       " (expected 44100, no resampling in v1): " + path);

  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32)
    throw format_error("unsupported WAV encoding (need PCM16 or float32): " + path);

  const std::size_t bytes_per = pcm16 ? 2 : 4;
  const std::size_t frames = data.size() / (bytes_per * channels);
  if (frames == 0) throw format_error("WAV file holds no samples: " + path);

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(channels, static_cast<long>(frames));
  const unsigned char* p = data.data();
  for (std::size_t n = 0; n < frames; ++n) {
    for (int c = 0; c < channels; ++c) {
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        p += 2;
        clip.samples(c, static_cast<long>(n)) = static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        p += 4;
        clip.samples(c, static_cast<long>(n)) = static_cast<double>(v);
      }
    }
  }
  clip.validate();
  return clip;
}

// Writes IEEE float32 WAV. Float keeps synthetic stems and their sum
// consistent to round-off, which the dataset invariants rely on.
inline void write_wav(const std::string& path, const AudioClip& clip) {
  clip.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot create WAV file: " + path);

  const int ch = clip.channels();
  const long n = clip.n_samples();
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(n) * ch * 4;

  f.write("RIFF", 4);
  write_le<std::uint32_t>(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_le<std::uint32_t>(f, 16);
  write_le<std::uint16_t>(f, 3);  // IEEE float
  write_le<std::uint16_t>(f, static_cast<std::uint16_t>(ch));
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(clip.sample_rate));
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(clip.sample_rate) * ch * 4);
  write_le<std::uint16_t>(f, static_cast<std::uint16_t>(ch * 4));
  write_le<std::uint16_t>(f, 32);
  f.write("data", 4);
  write_le<std::uint32_t>(f, data_bytes);
  for (long i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) write_le<float>(f, static_cast<float>(clip.samples(c, i)));
  if (!f) throw io_error("failed to write WAV file: " + path);
}

}  // namespace fiss

#endif  // FISS_AUDIO_HPP
