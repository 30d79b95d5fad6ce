// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/mlp.hpp"
#include "amuse/optim.hpp"
#include "amuse/spectral.hpp"

// Container layout (all integers and floats little-endian):
//   "AMSK" | u32 version | u32 layer count
//   per layer: u64 rows | u64 cols | f64 weight[rows*cols] | u64 1 | u64 cols_b | f64 bias[cols_b]
//   sections: u32 tag | u64 byte length | payload, terminated by tag 0
//     1 model meta   u32 activation | u32 n | u32 group[n] (0 muon, 1 auxiliary)
//     2 optimizer    u64 t | f64 sum_lr2 | f64 c_current | f64 c_t0 | f64 beta | 4 x matrix list (z, x, m, v)
//     3 eigenbasis   u64 k | u64 dim | f64 values[k] | f64 residuals[k] | f64 vectors[k*dim]

namespace amuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  MlpModel model;
  std::optional<OptimizerState> optimizer;
  std::optional<EigenBasis> basis;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* s, std::size_t n) { buf_.insert(buf_.end(), s, s + n); }
  void matrix(const DenseMatrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double v : m.values()) f64(v);
  }
  void matrices(const std::vector<DenseMatrix>& ms) {
    u32(static_cast<std::uint32_t>(ms.size()));
    for (const auto& m : ms) matrix(m);
  }
  void append(const ByteWriter& o) { buf_.insert(buf_.end(), o.buf_.begin(), o.buf_.end()); }
  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<char>& bytes() const noexcept { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& buf, std::string name) : buf_(buf), name_(std::move(name)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  void expect(const char* s, std::size_t n) {
    need(n);
    if (std::memcmp(buf_.data() + pos_, s, n) != 0)
      throw FormatError(FormatError::Kind::bad_magic, name_ + ": not an AMSK checkpoint");
    pos_ += n;
  }
  DenseMatrix matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (r == 0 || c == 0) throw FormatError(FormatError::Kind::truncated, name_ + ": zero-sized matrix");
    need(r * c * 8);
    std::vector<double> data(r * c);
    for (auto& v : data) v = f64();
    return DenseMatrix(r, c, std::move(data));
  }
  std::vector<DenseMatrix> matrices() {
    const std::uint32_t n = u32();
    std::vector<DenseMatrix> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(matrix());
    return out;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(FormatError::Kind::truncated, name_ + ": truncated checkpoint");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{buf_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<unsigned char>& buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline void write_section(ByteWriter& out, std::uint32_t tag, const ByteWriter& payload) {
  out.u32(tag);
  out.u64(payload.size());
  out.append(payload);
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const MlpModel& model, const OptimizerState* opt = nullptr,
                                           const EigenBasis* basis = nullptr) {
  detail::ByteWriter w;
  w.raw("AMSK", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.layer_count()));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    w.matrix(model.weight(l));
    w.matrix(model.bias(l));
  }
  {
    detail::ByteWriter s;
    s.u32(model.activation() == Activation::tanh ? 0 : 1);
    s.u32(static_cast<std::uint32_t>(model.params().count()));
    for (const auto& p : model.params()) s.u32(p.group == ParamGroup::muon ? 0 : 1);
    detail::write_section(w, 1, s);
  }
  if (opt) {
    detail::ByteWriter s;
    s.u64(opt->t);
    s.f64(opt->sum_lr2);
    s.f64(opt->c_current);
    s.f64(opt->c_t0);
    s.f64(opt->beta);
    s.matrices(opt->z);
    s.matrices(opt->x);
    s.matrices(opt->m);
    s.matrices(opt->v);
    detail::write_section(w, 2, s);
  }
  if (basis) {
    detail::ByteWriter s;
    s.u64(basis->k());
    s.u64(basis->dim());
    for (double v : basis->eigenvalues) s.f64(v);
    for (std::size_t i = 0; i < basis->k(); ++i) s.f64(i < basis->residuals.size() ? basis->residuals[i] : 0.0);
    for (const auto& u : basis->eigenvectors)
      for (double v : u) s.f64(v);
    detail::write_section(w, 3, s);
  }
  w.u32(0);
  return w.bytes();
}

/// Without a meta section, hidden weights default to the Muon group.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& name = "checkpoint") {
  detail::ByteReader r(bytes, name);
  r.expect("AMSK", 4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::version, name + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t layers = r.u32();
  if (layers == 0) throw FormatError(FormatError::Kind::truncated, name + ": no layers");
  ParamSet params;
  for (std::uint32_t l = 0; l < layers; ++l) {
    DenseMatrix w = r.matrix();
    DenseMatrix b = r.matrix();
    const bool edge = (l == 0 || l + 1 == layers);
    params.add("layer" + std::to_string(l) + ".weight", std::move(w), edge ? ParamGroup::auxiliary : ParamGroup::muon);
    params.add("layer" + std::to_string(l) + ".bias", std::move(b), ParamGroup::auxiliary);
  }
  Activation act = Activation::tanh;
  Checkpoint ck;
  for (;;) {
    const std::uint32_t tag = r.u32();
    if (tag == 0) break;
    const std::uint64_t len = r.u64();
    const std::size_t start = r.pos();
    if (tag == 1) {
      act = r.u32() == 0 ? Activation::tanh : Activation::relu;
      const std::uint32_t n = r.u32();
      if (n != params.count()) throw FormatError(FormatError::Kind::count_mismatch, name + ": group count mismatch");
      for (std::uint32_t i = 0; i < n; ++i) params[i].group = r.u32() == 0 ? ParamGroup::muon : ParamGroup::auxiliary;
    } else if (tag == 2) {
      OptimizerState s;
      s.t = r.u64();
      s.sum_lr2 = r.f64();
      s.c_current = r.f64();
      s.c_t0 = r.f64();
      s.beta = r.f64();
      s.z = r.matrices();
      s.x = r.matrices();
      s.m = r.matrices();
      s.v = r.matrices();
      ck.optimizer = std::move(s);
    } else if (tag == 3) {
      EigenBasis b;
      const std::uint64_t k = r.u64(), dim = r.u64();
      for (std::uint64_t i = 0; i < k; ++i) b.eigenvalues.push_back(r.f64());
      for (std::uint64_t i = 0; i < k; ++i) b.residuals.push_back(r.f64());
      for (std::uint64_t i = 0; i < k; ++i) {
        FlatVector u(dim);
        for (auto& v : u) v = r.f64();
        b.eigenvectors.push_back(std::move(u));
      }
      ck.basis = std::move(b);
    } else {
      r.skip(len);  // unknown section from a newer writer
    }
    if (r.pos() - start != len) throw FormatError(FormatError::Kind::truncated, name + ": section length mismatch");
  }
  ck.model = MlpModel(std::move(params), act);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const MlpModel& model,
                            const OptimizerState* opt = nullptr, const EigenBasis* basis = nullptr) {
  const auto bytes = encode_checkpoint(model, opt, basis);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace amuse
