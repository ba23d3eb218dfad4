#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nnpass/ops.hpp"
#include "nnpass/passport_layer.hpp"
#include "nnpass/rng.hpp"

namespace nnpass {

enum class ArchId { MiniNet, MiniResNet };

inline std::string arch_name(ArchId a) { return a == ArchId::MiniNet ? "mininet" : "miniresnet"; }
inline ArchId arch_from_name(const std::string& s) {
  if (s == "mininet") return ArchId::MiniNet;
  if (s == "miniresnet") return ArchId::MiniResNet;
  throw ConfigError("unknown architecture '" + s + "'");
}

struct ConvLayer {
  Tensor w;  // [Cout,Cin,kh,kw]
  int stride = 1;
  int padding = 1;
};

struct DenseLayer {
  Tensor w;  // [K,D]
  Tensor b;  // [K]
};

// Straight-line program interpreted by forward(); lets both architectures
// share one executor.
enum class OpCode { Conv, Affine, Relu, Save, AddSaved, ProjAddSaved, Gap, Dense };

struct ProgStep {
  OpCode op;
  int a = -1;  // conv/affine index or slot
  int b = -1;  // slot for ProjAddSaved
};

struct Model {
  ArchId arch = ArchId::MiniNet;
  int num_classes = 10;
  int in_channels = 1, in_h = 16, in_w = 16;
  std::vector<ConvLayer> convs;
  std::vector<AffineLayer> affines;
  DenseLayer head;
  std::vector<ProgStep> program;
  int total_layers = 0;  // conv + dense count

  int num_passport_layers() const { return static_cast<int>(affines.size()); }

  bool passported() const {
    for (const auto& a : affines)
      if (a.kind != AffineKind::BN) return true;
    return false;
  }
};

inline Model make_model(ArchId arch, AffineKind kind, int num_classes, int in_channels, int in_h,
                        int in_w, bool normalize_input) {
  Model m;
  m.arch = arch;
  m.num_classes = num_classes;
  m.in_channels = in_channels;
  m.in_h = in_h;
  m.in_w = in_w;
  auto conv = [&](int cin, int cout, int k, int stride, int pad) {
    ConvLayer c;
    c.w = Tensor({cout, cin, k, k});
    c.w.set_requires_grad(true);
    c.stride = stride;
    c.padding = pad;
    m.convs.push_back(std::move(c));
    return static_cast<int>(m.convs.size()) - 1;
  };
  auto aff = [&](int conv_index, int cout) {
    AffineLayer a;
    a.kind = kind;
    a.conv_index = conv_index;
    a.normalize_input = normalize_input;
    if (!derives_gamma(kind)) {
      a.gamma = Tensor({cout}, std::vector<float>(static_cast<size_t>(cout), 1.0f));
      a.gamma.set_requires_grad(true);
    }
    if (!derives_beta(kind)) {
      a.beta = Tensor({cout}, std::vector<float>(static_cast<size_t>(cout), 0.0f));
      a.beta.set_requires_grad(true);
    }
    a.running_mean.assign(static_cast<size_t>(cout), 0.0f);
    a.running_var.assign(static_cast<size_t>(cout), 1.0f);
    m.affines.push_back(std::move(a));
    return static_cast<int>(m.affines.size()) - 1;
  };
  auto P = [&](OpCode op, int a = -1, int b = -1) { m.program.push_back({op, a, b}); };

  if (arch == ArchId::MiniNet) {
    int c0 = conv(in_channels, 16, 3, 1, 1);
    aff(c0, 16);
    int c1 = conv(16, 32, 3, 2, 1);
    aff(c1, 32);
    P(OpCode::Conv, 0);
    P(OpCode::Affine, 0);
    P(OpCode::Relu);
    P(OpCode::Conv, 1);
    P(OpCode::Affine, 1);
    P(OpCode::Relu);
    P(OpCode::Gap);
    P(OpCode::Dense);
    m.head.w = Tensor({num_classes, 32});
    m.total_layers = 3;
  } else {
    int c0 = conv(in_channels, 16, 3, 1, 1);
    aff(c0, 16);
    int c1 = conv(16, 16, 3, 1, 1);
    aff(c1, 16);
    int c2 = conv(16, 16, 3, 1, 1);
    aff(c2, 16);
    int c3 = conv(16, 32, 3, 2, 1);
    aff(c3, 32);
    int c4 = conv(32, 32, 3, 1, 1);
    aff(c4, 32);
    int c5 = conv(16, 32, 1, 2, 0);  // skip projection, left unpassported
    (void)c0;
    (void)c1;
    (void)c2;
    (void)c3;
    (void)c4;
    P(OpCode::Conv, 0);
    P(OpCode::Affine, 0);
    P(OpCode::Relu);
    P(OpCode::Save, 0);
    P(OpCode::Conv, 1);
    P(OpCode::Affine, 1);
    P(OpCode::Relu);
    P(OpCode::Conv, 2);
    P(OpCode::Affine, 2);
    P(OpCode::AddSaved, 0);
    P(OpCode::Relu);
    P(OpCode::Save, 0);
    P(OpCode::Conv, 3);
    P(OpCode::Affine, 3);
    P(OpCode::Relu);
    P(OpCode::Conv, 4);
    P(OpCode::Affine, 4);
    P(OpCode::ProjAddSaved, c5, 0);
    P(OpCode::Relu);
    P(OpCode::Gap);
    P(OpCode::Dense);
    m.head.w = Tensor({num_classes, 32});
    m.total_layers = 7;
  }
  m.head.w.set_requires_grad(true);
  m.head.b = Tensor({num_classes}, std::vector<float>(static_cast<size_t>(num_classes), 0.0f));
  m.head.b.set_requires_grad(true);
  return m;
}

enum class InitMode { FromScratch, FromPretrained };

// He fan-in initialization for conv and dense kernels; affine params keep
// their 1/0 construction values.
inline void init_weights(Model& m, uint64_t seed) {
  RngStream rng(seed, "init");
  for (size_t i = 0; i < m.convs.size(); ++i) {
    auto& w = m.convs[i].w;
    const int fan_in = w.dim(1) * w.dim(2) * w.dim(3);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<float>(rng.normal() * sd);
  }
  const int fan_in = m.head.w.dim(1);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : m.head.w.data()) v = static_cast<float>(rng.normal() * sd);
}

// Exhaustive, disjoint split of the model's parameters. Derived entries name
// the hidden params that exist only as functions of (W_p, passport).
struct ParamPartition {
  std::vector<std::pair<std::string, Tensor>> trainable;
  std::vector<std::string> derived;
};

inline ParamPartition partition_parameters(Model& m) {
  ParamPartition part;
  for (size_t i = 0; i < m.convs.size(); ++i)
    part.trainable.push_back({"conv" + std::to_string(i) + ".w", m.convs[i].w});
  for (size_t i = 0; i < m.affines.size(); ++i) {
    auto& a = m.affines[i];
    if (a.conv_index < 0 || a.conv_index >= static_cast<int>(m.convs.size()))
      throw PassportError("affine layer " + std::to_string(i) + " is not bound to a convolution");
    const std::string base = "aff" + std::to_string(i) + ".";
    if (a.hijacked) {
      part.trainable.push_back({base + "free_gamma", a.free_gamma});
      part.trainable.push_back({base + "free_beta", a.free_beta});
      continue;
    }
    if (derives_gamma(a.kind))
      part.derived.push_back(base + "gamma");
    else
      part.trainable.push_back({base + "gamma", a.gamma});
    if (derives_beta(a.kind))
      part.derived.push_back(base + "beta");
    else
      part.trainable.push_back({base + "beta", a.beta});
  }
  part.trainable.push_back({"head.w", m.head.w});
  part.trainable.push_back({"head.b", m.head.b});
  return part;
}

inline HiddenParams derive_hidden_params(const Model& m, const AffineLayer& a,
                                         const PassportSet* passport) {
  HiddenParams h;
  const ConvLayer& conv = m.convs[static_cast<size_t>(a.conv_index)];
  if (a.hijacked) {
    h.gamma = a.free_gamma;
    h.beta = a.free_beta;
    return h;
  }
  if (derives_gamma(a.kind)) {
    if (!passport) throw PassportError("gamma is passport-derived but no passport was supplied");
    const auto& e = passport->entry_for_layer(a.conv_index);
    if (!e.p_gamma.defined()) throw PassportError("passport entry lacks the gamma component");
    h.gamma = passport_function(conv.w, e.p_gamma, conv.stride, conv.padding);
  } else {
    h.gamma = a.gamma;
  }
  if (derives_beta(a.kind)) {
    if (!passport) throw PassportError("beta is passport-derived but no passport was supplied");
    const auto& e = passport->entry_for_layer(a.conv_index);
    if (!e.p_beta.defined()) throw PassportError("passport entry lacks the beta component");
    h.beta = passport_function(conv.w, e.p_beta, conv.stride, conv.padding);
  } else {
    h.beta = a.beta;
  }
  return h;
}

struct ForwardOptions {
  bool training = false;              // batch statistics + running-stat updates
  const PassportSet* passport = nullptr;
  std::vector<Tensor>* conv_input_taps = nullptr;  // filled with each conv's input
};

inline Tensor forward(Model& m, const Tensor& x, const ForwardOptions& opt) {
  if (x.rank() != 4 || x.dim(1) != m.in_channels)
    throw ShapeError("model expects input [N," + std::to_string(m.in_channels) + ",H,W], got " +
                     shape_str(x.shape()));
  if (opt.conv_input_taps) opt.conv_input_taps->assign(m.convs.size(), Tensor());
  Tensor cur = x;
  std::map<int, Tensor> slots;
  for (const auto& step : m.program) {
    switch (step.op) {
      case OpCode::Conv: {
        auto& c = m.convs[static_cast<size_t>(step.a)];
        if (opt.conv_input_taps) (*opt.conv_input_taps)[static_cast<size_t>(step.a)] = cur;
        cur = conv2d(cur, c.w, c.stride, c.padding);
        break;
      }
      case OpCode::Affine: {
        auto& a = m.affines[static_cast<size_t>(step.a)];
        HiddenParams h = derive_hidden_params(m, a, opt.passport);
        if (!a.normalize_input) {
          cur = channel_affine(cur, h.gamma, h.beta);
          break;
        }
        const int C = cur.dim(1);
        if (opt.training) {
          Tensor mean = channel_mean(cur);
          Tensor centered = sub(cur, channel_broadcast(mean, cur.dim(0), cur.dim(2), cur.dim(3)));
          Tensor var = channel_mean(mul(centered, centered));
          for (int c = 0; c < C; ++c) {
            a.running_mean[static_cast<size_t>(c)] =
                kBnMomentum * a.running_mean[static_cast<size_t>(c)] +
                (1.0f - kBnMomentum) * mean.data()[static_cast<size_t>(c)];
            a.running_var[static_cast<size_t>(c)] =
                kBnMomentum * a.running_var[static_cast<size_t>(c)] +
                (1.0f - kBnMomentum) * var.data()[static_cast<size_t>(c)];
          }
          Tensor inv = rsqrt_eps(var, kBnEps);
          Tensor normalized = mul(centered, channel_broadcast(inv, cur.dim(0), cur.dim(2), cur.dim(3)));
          cur = channel_affine(normalized, h.gamma, h.beta);
        } else {
          std::vector<float> scale(static_cast<size_t>(C)), shift(static_cast<size_t>(C));
          for (int c = 0; c < C; ++c) {
            const float inv =
                1.0f / std::sqrt(a.running_var[static_cast<size_t>(c)] + kBnEps);
            scale[static_cast<size_t>(c)] = h.gamma.data()[static_cast<size_t>(c)] * inv;
            shift[static_cast<size_t>(c)] =
                h.beta.data()[static_cast<size_t>(c)] -
                h.gamma.data()[static_cast<size_t>(c)] * a.running_mean[static_cast<size_t>(c)] * inv;
          }
          cur = channel_affine(cur, Tensor({C}, std::move(scale)), Tensor({C}, std::move(shift)));
        }
        break;
      }
      case OpCode::Relu:
        cur = relu(cur);
        break;
      case OpCode::Save:
        slots[step.a] = cur;
        break;
      case OpCode::AddSaved:
        cur = add(cur, slots.at(step.a));
        break;
      case OpCode::ProjAddSaved: {
        auto& c = m.convs[static_cast<size_t>(step.a)];
        if (opt.conv_input_taps) (*opt.conv_input_taps)[static_cast<size_t>(step.a)] = slots.at(step.b);
        cur = add(cur, conv2d(slots.at(step.b), c.w, c.stride, c.padding));
        break;
      }
      case OpCode::Gap:
        cur = global_avg_pool(cur);
        break;
      case OpCode::Dense:
        cur = dense_affine(cur, m.head.w, m.head.b);
        break;
    }
  }
  return cur;
}

// Indices of conv layers that feed an affine layer, in program order. These
// are the passport layers; the skip projection has no affine and none.
inline std::vector<int> passported_conv_indices(const Model& m) {
  std::vector<int> idx;
  for (const auto& a : m.affines) idx.push_back(a.conv_index);
  return idx;
}

// Deep copy: fresh tensors, shared nothing. Attacks operate on clones so the
// protected original stays untouched.
inline Model clone_model(const Model& src) {
  Model m = src;
  auto fresh = [](Tensor& t) {
    if (!t.defined()) return;
    const bool rg = t.requires_grad();
    t = Tensor(t.shape(), t.data());
    t.set_requires_grad(rg);
  };
  for (auto& c : m.convs) fresh(c.w);
  for (auto& a : m.affines) {
    fresh(a.gamma);
    fresh(a.beta);
    fresh(a.free_gamma);
    fresh(a.free_beta);
  }
  fresh(m.head.w);
  fresh(m.head.b);
  return m;
}

}  // namespace nnpass
