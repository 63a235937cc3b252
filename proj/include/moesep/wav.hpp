// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "moesep/common.hpp"
#include "moesep/dsp.hpp"

namespace moesep::wav {

namespace detail {

inline uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

inline uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a mono 16-bit PCM RIFF file. Multi-channel and non-PCM input is
// rejected with a categorized error.
inline dsp::Waveform read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("bad-wav", "cannot open wav file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error("bad-wav", "not a RIFF/WAVE file: " + path);
  }

  size_t pos = 12;
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  bool have_fmt = false;
  const uint8_t* data_ptr = nullptr;
  uint32_t data_len = 0;

  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    const uint32_t chunk_len = detail::read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) break;
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      const uint16_t format = detail::read_u16(body);
      channels = detail::read_u16(body + 2);
      sample_rate = static_cast<int>(detail::read_u32(body + 4));
      bits = detail::read_u16(body + 14);
      if (format != 1) throw Error("bad-wav", "only PCM wav supported: " + path);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_ptr == nullptr) {
    throw Error("bad-wav", "missing fmt or data chunk: " + path);
  }
  if (channels != 1) {
    throw Error("bad-wav", "expected mono wav, got " + std::to_string(channels) +
                               " channels: " + path);
  }
  if (bits != 16) {
    throw Error("bad-wav", "expected 16-bit PCM, got " + std::to_string(bits) +
                               " bits: " + path);
  }

  dsp::Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = data_len / 2;
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const int16_t s =
        static_cast<int16_t>(detail::read_u16(data_ptr + 2 * i));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

inline void write(const std::string& path, const dsp::Waveform& w) {
  std::vector<uint8_t> out;
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_len = n * 2;

  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_len);

  for (double s : w.samples) {
    double v = std::round(s * 32768.0);
    v = std::clamp(v, -32768.0, 32767.0);
    detail::put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io-error", "cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("io-error", "short write: " + path);
}

}  // namespace moesep::wav
