// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints and their binary file format.
//
// All integers and reals are little-endian; reals are IEEE-754 binary64.
//
//   magic        8 bytes  "ABCKPT\0\1"
//   config       9 x i32  vocab d_model n_layers n_heads ff_mult max_len
//                         max_position n_roles speaker_dim
//                u64      config seed
//   stage        i32
//   step         i64      optimizer steps taken within the stage
//   seed         u64      training seed
//   rng          u32 length + bytes (textual engine state)
//   log          u32 count, each: i32 stage, i64 step, f64 loss, f64 heldout, f64 lr
//   slices       u32 count, each: u16 name length + name, u64 rows, u64 cols,
//                rows*cols f64 values
//   moments      u64 length n, then n f64 (first moment), n f64 (second moment)
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "audiobook/error.hpp"
#include "audiobook/model.hpp"

namespace audiobook {

struct TrainLogEntry {
  int stage = 0;
  std::int64_t step = 0;
  double loss = 0.0;     // mean training batch loss (NaN when not measured)
  double heldout = 0.0;  // held-out masked loss (NaN when not measured)
  double lr = 0.0;
  bool operator==(const TrainLogEntry& o) const {
    auto same = [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); };
    return stage == o.stage && step == o.step && same(loss, o.loss) && same(heldout, o.heldout) && same(lr, o.lr);
  }
};

struct ModelCheckpoint {
  ModelConfig config;
  ParamVector params;
  ParamVector m, v;  // optimizer moments
  int stage = 0;             // 0 = freshly initialized
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::vector<TrainLogEntry> log;

  Model model() const { return Model(config, params); }
  bool operator==(const ModelCheckpoint&) const = default;
};

inline ModelCheckpoint init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelCheckpoint c;
  c.config = cfg;
  c.params = init_parameters(cfg);
  if (c.params.size() != param_count(cfg)) throw Error("parameter layout disagrees with the closed-form count");
  c.m.assign(c.params.size(), 0.0);
  c.v.assign(c.params.size(), 0.0);
  c.seed = cfg.seed;
  return c;
}

namespace detail {

inline constexpr std::array<char, 8> kCkptMagic{'A', 'B', 'C', 'K', 'P', 'T', '\0', '\1'};

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  void u(std::uint64_t x, int bytes) {
    for (int i = 0; i < bytes; ++i) os_.put(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t x) { u(static_cast<std::uint32_t>(x), 4); }
  void i64(std::int64_t x) { u(static_cast<std::uint64_t>(x), 8); }
  void f64(double x) { u(std::bit_cast<std::uint64_t>(x), 8); }
  void bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& is) : is_(is) {}
  std::uint64_t u(int bytes) {
    std::uint64_t x = 0;
    for (int i = 0; i < bytes; ++i) {
      const int c = is_.get();
      if (c == EOF) throw ParseError("checkpoint truncated");
      x |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return x;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(u(4))); }
  std::int64_t i64() { return static_cast<std::int64_t>(u(8)); }
  double f64() { return std::bit_cast<double>(u(8)); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    if (n > 0 && !is_.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("checkpoint truncated");
    return s;
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void write_checkpoint(const ModelCheckpoint& c, std::ostream& os) {
  const ParamLayout L = param_layout(c.config);
  if (c.params.size() != L.total) throw ValidationError("checkpoint parameters do not match config");
  detail::LeWriter w(os);
  os.write(detail::kCkptMagic.data(), 8);
  const ModelConfig& k = c.config;
  for (int x : {k.vocab, k.d_model, k.n_layers, k.n_heads, k.ff_mult, k.max_len, k.max_position, k.n_roles,
                k.speaker_dim})
    w.i32(x);
  w.u(k.seed, 8);
  w.i32(c.stage);
  w.i64(c.step);
  w.u(c.seed, 8);
  w.u(c.rng_state.size(), 4);
  w.bytes(c.rng_state);
  w.u(c.log.size(), 4);
  for (const auto& e : c.log) {
    w.i32(e.stage);
    w.i64(e.step);
    w.f64(e.loss);
    w.f64(e.heldout);
    w.f64(e.lr);
  }
  w.u(L.slices.size(), 4);
  for (const auto& s : L.slices) {
    w.u(s.name.size(), 2);
    w.bytes(s.name);
    w.u(s.rows, 8);
    w.u(s.cols, 8);
    for (std::size_t i = 0; i < s.size(); ++i) w.f64(c.params[s.offset + i]);
  }
  const bool has_moments = c.m.size() == c.params.size() && c.v.size() == c.params.size();
  w.u(has_moments ? c.params.size() : 0, 8);
  if (has_moments) {
    for (double x : c.m) w.f64(x);
    for (double x : c.v) w.f64(x);
  }
  if (!os) throw IoError("checkpoint write failed");
}

inline ModelCheckpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), 8) || magic != detail::kCkptMagic) throw ParseError("not a checkpoint file");
  detail::LeReader r(is);
  ModelCheckpoint c;
  ModelConfig& k = c.config;
  for (int* x : {&k.vocab, &k.d_model, &k.n_layers, &k.n_heads, &k.ff_mult, &k.max_len, &k.max_position, &k.n_roles,
                 &k.speaker_dim})
    *x = r.i32();
  k.seed = r.u(8);
  k.validate();
  c.stage = r.i32();
  if (c.stage < 0 || c.stage > 3) throw ParseError("checkpoint stage out of range");
  c.step = r.i64();
  c.seed = r.u(8);
  c.rng_state = r.bytes(r.u(4));
  const std::uint64_t nlog = r.u(4);
  for (std::uint64_t i = 0; i < nlog; ++i) {
    TrainLogEntry e;
    e.stage = r.i32();
    e.step = r.i64();
    e.loss = r.f64();
    e.heldout = r.f64();
    e.lr = r.f64();
    c.log.push_back(e);
  }
  const ParamLayout L = param_layout(k);
  if (r.u(4) != L.slices.size()) throw ParseError("checkpoint slice count does not match config");
  c.params.assign(L.total, 0.0);
  for (const auto& s : L.slices) {
    const std::string name = r.bytes(r.u(2));
    const std::uint64_t rows = r.u(8), cols = r.u(8);
    if (name != s.name || rows != s.rows || cols != s.cols)
      throw ParseError("checkpoint slice '" + name + "' does not match layout '" + s.name + "'");
    for (std::size_t i = 0; i < s.size(); ++i) c.params[s.offset + i] = r.f64();
  }
  const std::uint64_t n = r.u(8);
  if (n != 0 && n != L.total) throw ParseError("checkpoint moment length mismatch");
  c.m.assign(L.total, 0.0);
  c.v.assign(L.total, 0.0);
  for (std::uint64_t i = 0; i < n; ++i) c.m[i] = r.f64();
  for (std::uint64_t i = 0; i < n; ++i) c.v[i] = r.f64();
  return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(c, os);
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace audiobook
