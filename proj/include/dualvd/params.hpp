#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dualvd/autodiff.hpp"
#include "dualvd/tensor.hpp"

namespace dualvd {

// ---------------------------------------------------------------------------
// Seeded hashing. Parameter initialisation is a pure function of (seed, name)
// so that variants sharing a parameter name start from identical values.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ splitmix64(v));
}

inline std::uint64_t hash_string(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return hash_combine(seed, h);
}

// 53 random bits mapped to [0, 1).
inline double unit_uniform(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1p-53;
}

// ---------------------------------------------------------------------------

class ParamStore {
 public:
  void set(const std::string& name, Tensor value) { entries_.insert_or_assign(name, std::move(value)); }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::map<std::string, Tensor> entries_;
};

enum class InitKind { Xavier, Zero, HashedEmbedding };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::Xavier;
};

// Uniform ±√(6/(fan_in+fan_out)) for weights, zeros for biases, and
// hashed ±√(3/d) rows (pad row 0 zero) for embedding tables.
inline Tensor init_param(const ParamSpec& spec, std::uint64_t seed) {
  Tensor t(spec.shape);
  switch (spec.init) {
    case InitKind::Zero:
      break;
    case InitKind::Xavier: {
      const double fan_out = static_cast<double>(t.rows());
      const double fan_in = static_cast<double>(t.cols());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::mt19937_64 rng(hash_string(spec.name, seed));
      for (double& v : t.values()) v = bound * (2.0 * unit_uniform(rng()) - 1.0);
      break;
    }
    case InitKind::HashedEmbedding: {
      const std::size_t d = t.cols();
      const double bound = std::sqrt(3.0 / static_cast<double>(d));
      const std::uint64_t table = hash_string(spec.name, seed);
      for (std::size_t tok = 1; tok < t.rows(); ++tok) {
        const std::uint64_t row = hash_combine(table, tok);
        for (std::size_t c = 0; c < d; ++c)
          t(tok, c) = bound * (2.0 * unit_uniform(hash_combine(row, c)) - 1.0);
      }
      break;
    }
  }
  return t;
}

inline ParamStore init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamStore store;
  for (const auto& s : specs) {
    if (store.contains(s.name)) throw ConfigError("duplicate parameter '" + s.name + "'");
    store.set(s.name, init_param(s, seed));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Tape binding. Each named parameter becomes one leaf per tape; repeated
// lookups return the same leaf so gradients accumulate in one place.

class Params {
 public:
  Params(Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_->variable(store_->at(name));
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() const { return *tape_; }
  const ParamStore& store() const { return *store_; }
  const std::map<std::string, Var>& bound() const { return bound_; }

  // Gradients of every bound parameter; zeros where backward never reached.
  ParamStore gradients() const {
    ParamStore g;
    for (const auto& [name, v] : bound_) {
      Tensor t(v.value().shape());
      auto src = v.grad();
      if (!src.empty()) std::copy(src.begin(), src.end(), t.values().begin());
      g.set(name, std::move(t));
    }
    return g;
  }

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::map<std::string, Var> bound_;
};

// ---------------------------------------------------------------------------
// Checkpoint file: "DVD1", u32 count, then per entry u16 name length, name,
// u8 rank, u32 dims, float64 payload. All integers and floats little-endian.

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore& store) {
  os.write("DVD1", 4);
  detail::put_le(os, store.size(), 4);
  for (const auto& [name, t] : store.entries()) {
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    detail::put_le(os, name.size(), 2);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le(os, t.rank(), 1);
    for (std::size_t d : t.shape()) detail::put_le(os, d, 4);
    for (double v : t.values()) detail::put_le(os, std::bit_cast<std::uint64_t>(v), 8);
  }
}

inline ParamStore read_checkpoint(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "DVD1") throw FormatError("not a DVD1 checkpoint");
  ParamStore store;
  const auto count = detail::get_le(is, 4);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = detail::get_le(is, 2);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    if (!is) throw FormatError("checkpoint truncated in name");
    const auto rank = detail::get_le(is, 1);
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(detail::get_le(is, 4));
    std::vector<double> data;
    for (std::size_t i = 0, n = shape_size(shape); i < n; ++i)
      data.push_back(std::bit_cast<double>(detail::get_le(is, 8)));
    try {
      store.set(name, Tensor(std::move(shape), std::move(data)));
    } catch (const DimensionError& e) {
      throw FormatError(std::string("checkpoint entry ") + name + ": " + e.what());
    }
  }
  return store;
}

inline std::string checkpoint_bytes(const ParamStore& store) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, store);
  return os.str();
}

inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, store);
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace dualvd
