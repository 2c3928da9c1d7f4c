#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sthoi/autograd.hpp"

namespace sthoi {

/// A trainable tensor: value and grad live in the graph leaf, momentum alongside.
struct Parameter {
  std::string name;
  ag::Var var;
  Tensor momentum_buf;

  Parameter(std::string n, Tensor value)
      : name(std::move(n)), momentum_buf(Tensor::zeros(value.shape())) {
    var = ag::leaf(std::move(value));
  }

  const Tensor& value() const { return var.value(); }
  Tensor& value() { return var.mutable_value(); }

  /// Gradient, or zeros when nothing has been accumulated yet.
  Tensor grad() const {
    return var.grad().empty() ? Tensor::zeros(var.shape()) : var.grad();
  }
  void zero_grad() { var.zero_grad(); }
};

/// Kaiming-uniform initialisation with fan-in scaling: U(-b, b), b = sqrt(6 / fan_in).
/// Biases start at zero.
inline Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

struct TrainConfig {
  double base_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-7;
  int epochs = 20;
  std::vector<int> decay_epochs = {10, 15};
  double decay_factor = 0.1;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  bool augment = true;

  void validate() const {
    if (!(base_lr > 0.0)) throw InputError("train config: base_lr must be positive");
    if (momentum < 0.0 || !(momentum < 1.0)) throw InputError("train config: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw InputError("train config: weight_decay must be non-negative");
    if (!(decay_factor > 0.0)) throw InputError("train config: decay_factor must be positive");
    if (epochs < 1) throw InputError("train config: epochs must be >= 1");
    if (batch_size == 0) throw InputError("train config: batch_size must be >= 1");
    for (int e : decay_epochs) {
      if (e < 1) throw InputError(detail::concat("train config: decay epoch ", e, " must be >= 1"));
    }
  }
};

/// Step-decay schedule; `epoch` is 1-based.
inline double learning_rate(const TrainConfig& cfg, int epoch) {
  const auto drops = std::count_if(cfg.decay_epochs.begin(), cfg.decay_epochs.end(),
                                   [epoch](int e) { return epoch >= e; });
  return cfg.base_lr * std::pow(cfg.decay_factor, static_cast<double>(drops));
}

/// SGD with momentum and coupled L2: v <- m*v + g + wd*w ; w <- w - lr*v.
inline void sgd_step(std::vector<Parameter*>& params, const TrainConfig& cfg, int epoch) {
  const double lr = learning_rate(cfg, epoch);
  for (Parameter* p : params) {
    Tensor& w = p->value();
    const Tensor& g = p->var.grad();
    Tensor& v = p->momentum_buf;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      v[i] = cfg.momentum * v[i] + gi + cfg.weight_decay * w[i];
      w[i] -= lr * v[i];
    }
    w.require_finite("sgd_step");
  }
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the reverse-mode gradient of `op` at `input` with central differences.
/// Non-scalar outputs are reduced by a fixed pseudo-random projection.
/// Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult grad_check(const std::function<ag::Var(const ag::Var&)>& op,
                                  const Tensor& input, double eps = 1e-6,
                                  std::uint64_t projection_seed = 7) {
  auto x = ag::leaf(input);
  auto out = op(x);
  Tensor projection(out.shape());
  {
    std::mt19937_64 rng(projection_seed);
    std::uniform_real_distribution<double> d(0.5, 1.5);
    for (auto& v : projection.data()) v = d(rng);
  }
  ag::backward(ag::weighted_sum(out, projection));
  const Tensor analytic = x.grad().empty() ? Tensor::zeros(input.shape()) : x.grad();
  auto evaluate = [&](const Tensor& probe) {
    return ag::weighted_sum(op(ag::constant(probe)), projection).value()[0];
  };

  GradCheckResult res;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = evaluate(probe);
    probe[i] = orig - eps;
    const double fm = evaluate(probe);
    probe[i] = orig;
    const double num = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
    if (rel > res.max_rel_error || i == 0) {
      res = {std::max(rel, res.max_rel_error), i, a, num};
    }
  }
  return res;
}

// Checkpoint container: "STHOI", u32 version, u32 count, then per parameter
// u32 name length, name bytes, u32 rank, u64 dims, little-endian f64 values.
namespace checkpoint {

inline constexpr char kMagic[5] = {'S', 'T', 'H', 'O', 'I'};
inline constexpr std::uint32_t kVersion = 1;

namespace io {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace io

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::vector<unsigned char> encode(const NamedTensors& tensors) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  io::put_le<std::uint32_t>(out, kVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_le<std::uint64_t>(out, d);
    for (double v : t.data()) io::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline NamedTensors decode(const std::vector<unsigned char>& in) {
  if (in.size() < 5 || !std::equal(std::begin(kMagic), std::end(kMagic), in.begin())) {
    throw FormatError("checkpoint: bad magic");
  }
  std::size_t pos = 5;
  const auto version = io::get_le<std::uint32_t>(in, pos);
  if (version != kVersion) throw FormatError(detail::concat("checkpoint: unsupported version ", version));
  const auto count = io::get_le<std::uint32_t>(in, pos);
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = io::get_le<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw FormatError("checkpoint: truncated name");
    std::string name(in.begin() + static_cast<long>(pos), in.begin() + static_cast<long>(pos + len));
    pos += len;
    const auto rank = io::get_le<std::uint32_t>(in, pos);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(io::get_le<std::uint64_t>(in, pos));
    const std::size_t n = shape_numel(shape);
    if (pos + 8 * n > in.size()) throw FormatError("checkpoint: truncated data for " + name);
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(io::get_le<std::uint64_t>(in, pos));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (pos != in.size()) throw FormatError("checkpoint: trailing bytes");
  return out;
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("write failed: " + path);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for reading: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline void save(const std::string& path, const std::vector<Parameter*>& params) {
  NamedTensors named;
  for (const auto* p : params) named.emplace_back(p->name, p->value());
  write_file(path, encode(named));
}

inline void load(const std::string& path, std::vector<Parameter*>& params) {
  auto named = decode(read_file(path));
  std::map<std::string, Tensor> by_name(named.begin(), named.end());
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing parameter " + p->name);
    if (it->second.shape() != p->value().shape()) {
      throw FormatError("checkpoint: shape mismatch for " + p->name + ": " +
                        shape_str(it->second.shape()) + " vs " + shape_str(p->value().shape()));
    }
    p->value() = it->second;
  }
}

}  // namespace checkpoint
}  // namespace sthoi
