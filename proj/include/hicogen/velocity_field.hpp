#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/linalg.hpp"
#include "hicogen/rng.hpp"

namespace hicogen {

enum class Activation { Tanh, SiLU };

inline const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "silu") return Activation::SiLU;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// Fully connected network mapping concat(z, t, condition) to a velocity of
/// the same dimension as z.
struct FieldArchitecture {
  std::size_t state_dim = 2;
  std::size_t cond_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::Tanh;

  std::size_t input_dim() const { return state_dim + 1 + cond_dim; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim()};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(state_dim);
    return w;
  }

  std::size_t parameter_count() const {
    const auto w = widths();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) n += w[l + 1] * w[l] + w[l + 1];
    return n;
  }

  bool operator==(const FieldArchitecture&) const = default;
};

class VelocityField {
 public:
  /// Per-evaluation activations kept for the backward pass.
  struct Tape {
    std::vector<Vec> inputs;  // input to each layer
    std::vector<Vec> pre;     // pre-activation of each hidden layer
  };

  VelocityField(FieldArchitecture arch, Vec params) : arch_(std::move(arch)), params_(std::move(params)) {
    if (arch_.state_dim == 0) throw std::invalid_argument("VelocityField: state_dim must be >= 1");
    if (params_.size() != arch_.parameter_count()) {
      throw std::invalid_argument("VelocityField: expected " +
                                  std::to_string(arch_.parameter_count()) + " parameters, got " +
                                  std::to_string(params_.size()));
    }
    build_offsets();
  }

  /// Scaled-normal weights, zero biases.
  static VelocityField initialized(const FieldArchitecture& arch, std::uint64_t seed) {
    Rng rng(seed);
    const auto w = arch.widths();
    Vec params;
    params.reserve(arch.parameter_count());
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      const bool last = l + 2 == w.size();
      const double scale = (last ? 0.5 : 1.0) / std::sqrt(static_cast<double>(w[l]));
      for (std::size_t i = 0; i < w[l + 1] * w[l]; ++i) params.push_back(scale * rng.normal());
      for (std::size_t i = 0; i < w[l + 1]; ++i) params.push_back(0.0);
    }
    return VelocityField(arch, std::move(params));
  }

  const FieldArchitecture& architecture() const { return arch_; }
  const Vec& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  void set_parameters(Vec params) {
    if (params.size() != params_.size()) {
      throw std::invalid_argument("VelocityField::set_parameters: size mismatch");
    }
    params_ = std::move(params);
  }

  VelocityField with_parameters(Vec params) const { return VelocityField(arch_, std::move(params)); }

  Vec operator()(std::span<const double> z, double t, std::span<const double> cond) const {
    Tape tape;
    return forward(z, t, cond, tape);
  }

  Vec forward(std::span<const double> z, double t, std::span<const double> cond, Tape& tape) const {
    if (z.size() != arch_.state_dim) throw std::invalid_argument("VelocityField: state dimension mismatch");
    if (cond.size() != arch_.cond_dim) {
      throw std::invalid_argument("VelocityField: condition dimension mismatch (expected " +
                                  std::to_string(arch_.cond_dim) + ", got " +
                                  std::to_string(cond.size()) + ")");
    }
    const std::size_t layers = offsets_.size();
    tape.inputs.resize(layers);
    tape.pre.resize(layers - 1);

    Vec& x0 = tape.inputs[0];
    x0.assign(z.begin(), z.end());
    x0.push_back(t);
    x0.insert(x0.end(), cond.begin(), cond.end());

    Vec out;
    for (std::size_t l = 0; l < layers; ++l) {
      const Layer& L = offsets_[l];
      const double* W = params_.data() + L.weight;
      const double* b = params_.data() + L.bias;
      const Vec& in = tape.inputs[l];
      Vec y(L.out);
      for (std::size_t r = 0; r < L.out; ++r) {
        double acc = b[r];
        const double* row = W + r * L.in;
        for (std::size_t c = 0; c < L.in; ++c) acc += row[c] * in[c];
        y[r] = acc;
      }
      if (l + 1 == layers) {
        out = std::move(y);
      } else {
        tape.pre[l] = y;
        Vec& next = tape.inputs[l + 1];
        next.resize(L.out);
        for (std::size_t r = 0; r < L.out; ++r) next[r] = activate(y[r]);
      }
    }
    return out;
  }

  /// Accumulates d(grad_out . output)/d(params) into grad_params.
  void backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad_params) const {
    if (grad_out.size() != arch_.state_dim) throw std::invalid_argument("backward: grad_out dimension mismatch");
    if (grad_params.size() != params_.size()) throw std::invalid_argument("backward: grad_params size mismatch");
    Vec delta(grad_out.begin(), grad_out.end());
    for (std::size_t l = offsets_.size(); l-- > 0;) {
      const Layer& L = offsets_[l];
      const double* W = params_.data() + L.weight;
      double* gW = grad_params.data() + L.weight;
      double* gb = grad_params.data() + L.bias;
      const Vec& in = tape.inputs[l];
      for (std::size_t r = 0; r < L.out; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        gb[r] += d;
        double* grow = gW + r * L.in;
        for (std::size_t c = 0; c < L.in; ++c) grow[c] += d * in[c];
      }
      if (l == 0) break;
      Vec prev(L.in, 0.0);
      for (std::size_t r = 0; r < L.out; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        const double* row = W + r * L.in;
        for (std::size_t c = 0; c < L.in; ++c) prev[c] += row[c] * d;
      }
      const Vec& pre = tape.pre[l - 1];
      for (std::size_t c = 0; c < L.in; ++c) prev[c] *= activate_derivative(pre[c]);
      delta = std::move(prev);
    }
  }

 private:
  struct Layer {
    std::size_t in, out, weight, bias;
  };

  void build_offsets() {
    const auto w = arch_.widths();
    std::size_t off = 0;
    offsets_.clear();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      Layer L{w[l], w[l + 1], off, off + w[l + 1] * w[l]};
      off = L.bias + L.out;
      offsets_.push_back(L);
    }
  }

  double activate(double x) const {
    if (arch_.activation == Activation::Tanh) return std::tanh(x);
    return x / (1.0 + std::exp(-x));
  }

  double activate_derivative(double x) const {
    if (arch_.activation == Activation::Tanh) {
      const double a = std::tanh(x);
      return 1.0 - a * a;
    }
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
  }

  FieldArchitecture arch_;
  Vec params_;
  std::vector<Layer> offsets_;
};

// Checkpoint container, version 1. Line oriented text:
//
//   hicogen-velocity-field 1
//   state_dim <n>
//   cond_dim <n>
//   activation <tanh|silu>
//   hidden <count> <w1> ... <wk>
//   parameters <count>
//   <one C99 hex-float per line, layer by layer: weights row-major, then biases>
//   end
//
// Hex floats make the round trip bit-exact.
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const VelocityField& field) {
  const auto& a = field.architecture();
  os << "hicogen-velocity-field " << kCheckpointVersion << '\n';
  os << "state_dim " << a.state_dim << '\n';
  os << "cond_dim " << a.cond_dim << '\n';
  os << "activation " << to_string(a.activation) << '\n';
  os << "hidden " << a.hidden.size();
  for (auto h : a.hidden) os << ' ' << h;
  os << '\n';
  os << "parameters " << field.parameter_count() << '\n';
  char buf[64];
  for (double p : field.parameters()) {
    std::snprintf(buf, sizeof buf, "%a", p);
    os << buf << '\n';
  }
  os << "end\n";
}

inline VelocityField read_checkpoint(std::istream& is) {
  auto fail = [](const std::string& what) -> std::runtime_error {
    return std::runtime_error("read_checkpoint: " + what);
  };
  std::string key;
  int version = 0;
  if (!(is >> key >> version) || key != "hicogen-velocity-field") throw fail("bad magic");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  FieldArchitecture a;
  std::string act;
  std::size_t nh = 0;
  if (!(is >> key >> a.state_dim) || key != "state_dim") throw fail("missing state_dim");
  if (!(is >> key >> a.cond_dim) || key != "cond_dim") throw fail("missing cond_dim");
  if (!(is >> key >> act) || key != "activation") throw fail("missing activation");
  a.activation = activation_from_string(act);
  if (!(is >> key >> nh) || key != "hidden") throw fail("missing hidden");
  a.hidden.resize(nh);
  for (auto& h : a.hidden) {
    if (!(is >> h)) throw fail("truncated hidden widths");
  }
  std::size_t count = 0;
  if (!(is >> key >> count) || key != "parameters") throw fail("missing parameters");
  if (count != a.parameter_count()) throw fail("parameter count does not match architecture");
  Vec params(count);
  std::string tok;
  for (auto& p : params) {
    if (!(is >> tok)) throw fail("truncated parameters");
    char* end = nullptr;
    p = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw fail("bad number '" + tok + "'");
  }
  if (!(is >> key) || key != "end") throw fail("missing end marker");
  return VelocityField(a, std::move(params));
}

inline void save_checkpoint(const std::string& path, const VelocityField& field) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_checkpoint(os, field);
}

inline VelocityField load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace hicogen
