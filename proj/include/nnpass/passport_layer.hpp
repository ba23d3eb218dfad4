#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nnpass/ops.hpp"
#include "nnpass/tensor.hpp"

namespace nnpass {

using Tensor = TensorT<float>;

// Affine layers come in a plain batch-norm flavor (for unprotected baselines)
// and the three passport flavors. V1 derives the scale from the passport and
// trains the shift; V2 is the mirror image; V3 derives both.
enum class AffineKind { BN, V1, V2, V3 };

inline bool derives_gamma(AffineKind k) { return k == AffineKind::V1 || k == AffineKind::V3; }
inline bool derives_beta(AffineKind k) { return k == AffineKind::V2 || k == AffineKind::V3; }

inline std::string affine_kind_name(AffineKind k) {
  switch (k) {
    case AffineKind::BN: return "bn";
    case AffineKind::V1: return "v1";
    case AffineKind::V2: return "v2";
    case AffineKind::V3: return "v3";
  }
  return "?";
}

inline AffineKind affine_kind_from_name(const std::string& s) {
  if (s == "bn" || s == "none") return AffineKind::BN;
  if (s == "v1") return AffineKind::V1;
  if (s == "v2") return AffineKind::V2;
  if (s == "v3") return AffineKind::V3;
  throw ConfigError("unknown passport kind '" + s + "'");
}

// One scalar per output channel: the channel-wise average of the passport
// convolved with the layer's own kernel. Differentiable w.r.t. the kernel, so
// training shapes the weights around the secret.
template <typename T>
TensorT<T> passport_function(const TensorT<T>& conv_weight, const TensorT<T>& passport,
                             int stride, int padding) {
  if (passport.rank() != 4 || passport.dim(0) != 1)
    throw ShapeError("passport must be a single rank-4 tensor, got " + shape_str(passport.shape()));
  TensorT<T> y = conv2d(passport, conv_weight, stride, padding);
  TensorT<T> pooled = global_avg_pool(y);
  return reshape(pooled, {conv_weight.dim(0)});
}

// The per-layer secrets. Both components are always materialized; a variant
// consumes the ones its kind derives from.
struct PassportEntry {
  int layer_index = 0;
  Tensor p_gamma;
  Tensor p_beta;
};

enum class PassportType { RandomPattern, FixedImage, RandomImage };

inline std::string passport_type_name(PassportType t) {
  switch (t) {
    case PassportType::RandomPattern: return "random_pattern";
    case PassportType::FixedImage: return "fixed_image";
    case PassportType::RandomImage: return "random_image";
  }
  return "?";
}

inline PassportType passport_type_from_name(const std::string& s) {
  if (s == "random_pattern") return PassportType::RandomPattern;
  if (s == "fixed_image") return PassportType::FixedImage;
  if (s == "random_image") return PassportType::RandomImage;
  throw ConfigError("unknown passport type '" + s + "'");
}

struct PassportSet {
  std::vector<PassportEntry> entries;
  PassportType type = PassportType::RandomPattern;
  uint64_t seed = 0;
  int num_images = 0;                 // N of the random-image scheme, 0 when not applicable
  int num_passport_layers = 0;        // L
  int total_layers = 0;               // K
  std::vector<int> layer_choices;     // random-image mode: chosen pool index per layer
  std::vector<int> source_image_ids;
  std::vector<Tensor> source_pool;    // pool images, raw input shape
  uint64_t reference_hash = 0;        // checkpoint hash of the feature-extraction model

  const PassportEntry& entry_for_layer(int layer_index) const {
    for (const auto& e : entries)
      if (e.layer_index == layer_index) return e;
    throw PassportError("no passport entry for layer " + std::to_string(layer_index));
  }
};

// Convolution followed by the passporting/normalization affine. The conv
// weight is public; gamma/beta exist only for the components the kind trains.
struct AffineLayer {
  AffineKind kind = AffineKind::BN;
  int conv_index = 0;
  bool normalize_input = true;
  Tensor gamma;  // defined iff !derives_gamma(kind)
  Tensor beta;   // defined iff !derives_beta(kind)
  std::vector<float> running_mean;
  std::vector<float> running_var;

  // Reverse-engineering attacks swap the derived params for free variables.
  bool hijacked = false;
  Tensor free_gamma;
  Tensor free_beta;
};

struct HiddenParams {
  Tensor gamma;
  Tensor beta;
};

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.9f;

}  // namespace nnpass
