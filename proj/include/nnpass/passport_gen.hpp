#pragma once

#include <array>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nnpass/model.hpp"
#include "nnpass/rng.hpp"

namespace nnpass {

using BigInt = boost::multiprecision::cpp_int;

// Input shape seen by each affine-bound convolution, found by symbolic
// execution of the model program.
inline std::vector<Shape> passport_input_shapes(const Model& m) {
  std::vector<Shape> conv_inputs(m.convs.size());
  int C = m.in_channels, H = m.in_h, W = m.in_w;
  std::vector<std::array<int, 3>> slots(8, {0, 0, 0});
  for (const auto& step : m.program) {
    switch (step.op) {
      case OpCode::Conv: {
        const auto& c = m.convs[static_cast<size_t>(step.a)];
        conv_inputs[static_cast<size_t>(step.a)] = {1, C, H, W};
        C = c.w.dim(0);
        H = (H + 2 * c.padding - c.w.dim(2)) / c.stride + 1;
        W = (W + 2 * c.padding - c.w.dim(3)) / c.stride + 1;
        break;
      }
      case OpCode::Save:
        slots[static_cast<size_t>(step.a)] = {C, H, W};
        break;
      case OpCode::ProjAddSaved: {
        const auto& s = slots[static_cast<size_t>(step.b)];
        conv_inputs[static_cast<size_t>(step.a)] = {1, s[0], s[1], s[2]};
        break;
      }
      default:
        break;
    }
  }
  std::vector<Shape> out;
  for (const auto& a : m.affines) out.push_back(conv_inputs[static_cast<size_t>(a.conv_index)]);
  return out;
}

inline void validate_passport_binding(const Model& m, const PassportSet& set) {
  const auto shapes = passport_input_shapes(m);
  for (size_t i = 0; i < m.affines.size(); ++i) {
    const int conv_index = m.affines[i].conv_index;
    const PassportEntry* found = nullptr;
    for (const auto& e : set.entries)
      if (e.layer_index == conv_index) found = &e;
    if (!found) throw PassportError("passport has no entry for layer " + std::to_string(conv_index));
    for (const Tensor* t : {&found->p_gamma, &found->p_beta}) {
      if (!t->defined()) continue;
      if (t->shape() != shapes[i])
        throw PassportError("passport entry for layer " + std::to_string(conv_index) +
                            " has shape " + shape_str(t->shape()) + ", expected " +
                            shape_str(shapes[i]));
    }
  }
}

inline PassportSet gen_random_pattern(const Model& m, uint64_t seed) {
  if (m.affines.empty()) throw PassportError("model has no passport layers");
  PassportSet set;
  set.type = PassportType::RandomPattern;
  set.seed = seed;
  set.num_passport_layers = m.num_passport_layers();
  set.total_layers = m.total_layers;
  RngStream rng(seed, "passport-pattern");
  const auto shapes = passport_input_shapes(m);
  for (size_t i = 0; i < m.affines.size(); ++i) {
    PassportEntry e;
    e.layer_index = m.affines[i].conv_index;
    for (Tensor* t : {&e.p_gamma, &e.p_beta}) {
      *t = Tensor(shapes[i]);
      for (auto& v : t->data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    set.entries.push_back(std::move(e));
  }
  return set;
}

// Feature maps of one image at every passported layer of the reference
// model: element 0 is the raw image, deeper entries are what arrives at that
// conv's input.
inline std::vector<Tensor> collect_feature_maps(Model& reference, const Tensor& image) {
  NoGradGuard ng;
  std::vector<Tensor> taps;
  ForwardOptions opt;
  opt.training = false;
  opt.conv_input_taps = &taps;
  forward(reference, image, opt);
  std::vector<Tensor> out;
  for (const auto& a : reference.affines) out.push_back(taps[static_cast<size_t>(a.conv_index)]);
  return out;
}

// Builds the passport implied by one per-layer choice tuple over the image
// pool. The beta component pairs each choice with the cyclically next pool
// image so both components exist and stay distinct whenever the pool allows.
inline PassportSet feature_passport_from_choices(Model& reference, const std::vector<Tensor>& pool,
                                                 const std::vector<int>& choices) {
  const int N = static_cast<int>(pool.size());
  if (N < 1) throw PassportError("empty passport image pool");
  const int L = reference.num_passport_layers();
  if (static_cast<int>(choices.size()) != L)
    throw PassportError("need one pool choice per passport layer");
  std::vector<std::vector<Tensor>> maps;
  for (const auto& img : pool) maps.push_back(collect_feature_maps(reference, img));
  PassportSet set;
  set.num_images = N;
  set.num_passport_layers = L;
  set.total_layers = reference.total_layers;
  set.layer_choices = choices;
  for (int i = 0; i < N; ++i) {
    set.source_image_ids.push_back(i);
    set.source_pool.push_back(pool[static_cast<size_t>(i)]);
  }
  for (int l = 0; l < L; ++l) {
    const int pick = choices[static_cast<size_t>(l)];
    if (pick < 0 || pick >= N) throw PassportError("pool choice out of range");
    PassportEntry e;
    e.layer_index = reference.affines[static_cast<size_t>(l)].conv_index;
    e.p_gamma = maps[static_cast<size_t>(pick)][static_cast<size_t>(l)];
    e.p_beta = maps[static_cast<size_t>((pick + 1) % N)][static_cast<size_t>(l)];
    set.entries.push_back(std::move(e));
  }
  return set;
}

enum class FeatureMode { Fixed, Random };

// kind decides how many images Fixed mode consumes: variants with one derived
// component take one image, V3 takes two (gamma from the first, beta from the
// second).
inline PassportSet gen_feature_map_passport(Model& reference, const std::vector<Tensor>& images,
                                            FeatureMode mode, uint64_t seed, AffineKind kind) {
  if (reference.affines.empty()) throw PassportError("reference model has no passport layers");
  const int L = reference.num_passport_layers();
  if (mode == FeatureMode::Fixed) {
    const size_t required = kind == AffineKind::V3 ? 2 : 1;
    if (images.size() != required)
      throw PassportError("fixed-image passports for this variant need exactly " +
                          std::to_string(required) + " image(s), got " + std::to_string(images.size()));
    std::vector<std::vector<Tensor>> maps;
    for (const auto& img : images) maps.push_back(collect_feature_maps(reference, img));
    PassportSet set;
    set.type = PassportType::FixedImage;
    set.seed = seed;
    set.num_images = static_cast<int>(images.size());
    set.num_passport_layers = L;
    set.total_layers = reference.total_layers;
    for (size_t i = 0; i < images.size(); ++i) {
      set.source_image_ids.push_back(static_cast<int>(i));
      set.source_pool.push_back(images[i]);
    }
    const size_t beta_src = images.size() > 1 ? 1 : 0;
    for (int l = 0; l < L; ++l) {
      PassportEntry e;
      e.layer_index = reference.affines[static_cast<size_t>(l)].conv_index;
      e.p_gamma = maps[0][static_cast<size_t>(l)];
      e.p_beta = maps[beta_src][static_cast<size_t>(l)];
      set.entries.push_back(std::move(e));
    }
    return set;
  }
  if (images.empty()) throw PassportError("random-image passports need a nonempty image pool");
  RngStream rng(seed, "passport-image-choice");
  std::vector<int> choices;
  for (int l = 0; l < L; ++l)
    choices.push_back(static_cast<int>(rng.uniform_int(images.size())));
  PassportSet set = feature_passport_from_choices(reference, images, choices);
  set.type = PassportType::RandomImage;
  set.seed = seed;
  return set;
}

inline BigInt guess_space_size(int N, int L) {
  if (N < 1 || L < 1) throw RangeError("guess space needs N >= 1 and L >= 1");
  BigInt r = 1;
  for (int i = 0; i < L; ++i) r *= N;
  return r;
}

// Adds uniform noise on [-1,1] to round(c * numel) positions of every
// passport tensor, chosen without replacement; c=0 is the identity.
inline PassportSet perturb_passport(const PassportSet& base, double c, uint64_t noise_seed) {
  if (!(c >= 0.0 && c <= 1.0)) throw RangeError("corruption fraction must lie in [0,1]");
  PassportSet out = base;
  for (size_t i = 0; i < out.entries.size(); ++i) {
    auto& e = out.entries[i];
    const std::string layer_tag = std::to_string(e.layer_index);
    struct Component {
      Tensor* t;
      const char* tag;
    };
    for (auto [t, tag] : {Component{&e.p_gamma, "gamma"}, Component{&e.p_beta, "beta"}}) {
      if (!t->defined()) continue;
      Tensor fresh(t->shape(), t->data());
      const int count = static_cast<int>(fresh.numel());
      const int k = static_cast<int>(std::lround(c * count));
      RngStream rng(noise_seed, "perturb-l" + layer_tag + "-" + tag);
      const auto sites = rng.sample_without_replacement(count, k);
      for (int s : sites)
        fresh.data()[static_cast<size_t>(s)] += static_cast<float>(rng.uniform(-1.0, 1.0));
      *t = std::move(fresh);
    }
  }
  return out;
}

inline bool passports_equal(const PassportSet& a, const PassportSet& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (ea.layer_index != eb.layer_index) return false;
    for (auto [ta, tb] : {std::pair{&ea.p_gamma, &eb.p_gamma}, std::pair{&ea.p_beta, &eb.p_beta}}) {
      if (ta->defined() != tb->defined()) return false;
      if (!ta->defined()) continue;
      if (ta->shape() != tb->shape() || ta->data() != tb->data()) return false;
    }
  }
  return true;
}

}  // namespace nnpass
