#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cuedseq/core/errors.hpp"
#include "cuedseq/core/rng.hpp"
#include "cuedseq/core/tensor.hpp"

namespace cuedseq {

/// Named trainable tensors, ordered lexicographically by name.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers `t` under `name` and marks it trainable. Returns the handle.
  Tensor& add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    auto [it, inserted] = params_.insert_or_assign(name, std::move(t));
    (void)inserted;
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  Map::const_iterator begin() const noexcept { return params_.begin(); }
  Map::const_iterator end() const noexcept { return params_.end(); }
  Map::iterator begin() noexcept { return params_.begin(); }
  Map::iterator end() noexcept { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& [_, t] : params_) t.set_requires_grad(on);
  }

  /// Handles (shared storage) for every parameter whose name starts with `prefix`.
  ParamSet subset(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [name, t] : params_)
      if (name.rfind(prefix, 0) == 0) out.params_.emplace(name, t);
    return out;
  }

  /// Adds handles from `other`; names must not collide.
  void merge(const ParamSet& other) {
    for (const auto& [name, t] : other.params_) {
      if (!params_.emplace(name, t).second) throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
  }

  /// Deep copy; the result shares nothing with this set.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone());
    return out;
  }

  /// Copies values from `src` into the tensors of the same name. Every
  /// parameter of this set must exist in `src` with the same shape.
  void assign_from(const ParamSet& src) {
    for (auto& [name, t] : params_) {
      if (!src.contains(name)) throw std::invalid_argument("checkpoint lacks parameter '" + name + "'");
      const auto& s = src.at(name);
      if (s.shape() != t.shape()) {
        throw std::invalid_argument("parameter '" + name + "' has shape " + shape_str(s.shape()) +
                                    " in checkpoint, expected " + shape_str(t.shape()));
      }
      std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
    }
  }

 private:
  Map params_;
};

/// Bitwise equality of names, shapes and values.
inline bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    if (std::memcmp(ia->second.data().data(), ib->second.data().data(), ia->second.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Initializers

/// Gaussian with std sqrt(2 / fan_in).
inline Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(v), shape);
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Tensor uniform_fan_in(const Shape& shape, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor(std::move(v), shape);
}

// ---------------------------------------------------------------------------
// CSW1 checkpoint format
//
//   "CSW1"
//   repeated, in lexicographic name order:
//     u32 name length, UTF-8 name bytes, u32 rank, u32 dims[rank],
//     f64 values[numel]
//   all integers and floats little-endian.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(source_, "truncated: needed " + std::to_string(n) + " more bytes at offset " +
                                    std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(path, "read failed");
  return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

}  // namespace detail

inline std::string encode_checkpoint(const ParamSet& params) {
  std::string out = "CSW1";
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) detail::put_f64(out, v);
  }
  return out;
}

inline ParamSet decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (r.take(4) != "CSW1") throw ParseError(source, "bad magic, expected CSW1");
  ParamSet out;
  while (!r.done()) {
    const auto len = r.u32();
    std::string name(r.take(len));
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw ParseError(source, "parameter '" + name + "' has a zero dimension");
    }
    std::vector<double> values(shape_numel(shape));
    if (r.remaining() / 8 < values.size()) throw ParseError(source, "truncated values for '" + name + "'");
    for (auto& v : values) v = r.f64();
    out.add(name, Tensor(std::move(values), std::move(shape)));
  }
  return out;
}

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
  detail::write_file_bytes(path, encode_checkpoint(params));
}

inline ParamSet load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file_bytes(path), path);
}

}  // namespace cuedseq
