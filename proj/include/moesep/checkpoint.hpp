// Copyright 2026 moesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "moesep/common.hpp"
#include "moesep/nn.hpp"

namespace moesep::checkpoint {

// Versioned binary container:
//   magic "MOESEPCK" | version u32 | param count u32
//   per parameter: name_len u32 | name | rank u32 | dims i64[rank] | f32[numel]
// All integers and floats little-endian. Parameters are written in name
// order, so save/load/save roundtrips are bit-exact.
inline constexpr char kMagic[8] = {'M', 'O', 'E', 'S', 'E', 'P', 'C', 'K'};
inline constexpr uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i64(std::string& out, int64_t v) {
  const uint64_t u = static_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  uint32_t u = 0;
  std::memcpy(&u, &v, 4);
  put_u32(out, u);
}

struct Reader {
  const uint8_t* p;
  size_t remaining;

  void need(size_t n) const {
    if (remaining < n) throw Error("bad-checkpoint", "truncated checkpoint file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  int64_t i64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return static_cast<int64_t>(v);
  }
  float f32() {
    const uint32_t u = u32();
    float v = 0;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

}  // namespace detail

template <class S>
void save(const nn::ParameterStore<S>& store, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  detail::put_u32(out, kVersion);
  detail::put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& [name, p] : store) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<uint32_t>(p.value.rank()));
    for (int i = 0; i < p.value.rank(); ++i) detail::put_i64(out, p.value.dim(i));
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      detail::put_f32(out, static_cast<float>(p.value[i]));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io-error", "cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("io-error", "short checkpoint write: " + path);
}

// Loads values into an existing store; the parameter sets and shapes must
// agree exactly.
template <class S>
void load(nn::ParameterStore<S>& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint-not-found", "cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  detail::Reader r{bytes.data(), bytes.size()};

  r.need(sizeof(kMagic));
  if (std::memcmp(r.p, kMagic, sizeof(kMagic)) != 0) {
    throw Error("bad-checkpoint", "bad magic in checkpoint: " + path);
  }
  r.p += sizeof(kMagic);
  r.remaining -= sizeof(kMagic);

  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error("bad-checkpoint",
                "unsupported checkpoint version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  if (count != store.size()) {
    throw Error("bad-checkpoint", "parameter count mismatch: file has " +
                                      std::to_string(count) + ", model has " +
                                      std::to_string(store.size()));
  }
  for (uint32_t idx = 0; idx < count; ++idx) {
    const uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      dims[i] = r.i64();
      numel *= dims[i];
    }
    nn::Param<S>* param = store.find(name);
    if (param == nullptr) {
      throw Error("bad-checkpoint", "unknown parameter in checkpoint: " + name);
    }
    if (param->value.shape() != dims) {
      throw Error("bad-checkpoint", "shape mismatch for parameter: " + name);
    }
    for (int64_t i = 0; i < numel; ++i) param->value[i] = static_cast<S>(r.f32());
  }
}

}  // namespace moesep::checkpoint
