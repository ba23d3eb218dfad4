#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "nnpass/errors.hpp"
#include "nnpass/rng.hpp"
#include "nnpass/tensor.hpp"

namespace nnpass {

struct Dataset {
  int n = 0, channels = 1, height = 0, width = 0;
  std::vector<float> images;  // n × channels × height × width
  std::vector<int> labels;
  int num_classes = 0;

  size_t image_numel() const {
    return static_cast<size_t>(channels) * height * width;
  }
  const float* image(int i) const { return images.data() + static_cast<size_t>(i) * image_numel(); }

  uint64_t content_hash() const {
    uint64_t h = fnv1a(images.data(), images.size() * sizeof(float));
    for (int y : labels) {
      const uint32_t v = static_cast<uint32_t>(y);
      h = fnv1a(&v, sizeof(v), h);
    }
    const uint32_t dims[4] = {static_cast<uint32_t>(n), static_cast<uint32_t>(channels),
                              static_cast<uint32_t>(height), static_cast<uint32_t>(width)};
    return fnv1a(dims, sizeof(dims), h);
  }
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  uint64_t split_hash = 0;

  void finish() {
    const uint64_t pair[2] = {train.content_hash(), test.content_hash()};
    split_hash = fnv1a(pair, sizeof(pair));
  }
};

// Six stripe/patch pattern families; class k uses family k mod 6 with
// thickness/size growing every 6 classes. Kept easy enough that a small
// unprotected net separates them cleanly, with noise and jitter so it is not
// literally memorizable from one pixel.
inline void render_pattern(int cls, int h, int w, RngStream& rng, float* out) {
  const int family = cls % 6;
  const int variant = cls / 6;
  const float amp = static_cast<float>(rng.uniform(0.7, 1.0));
  const int period = 4 + 2 * variant;
  const int thick = 1 + variant;
  const int phase = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(period)));
  const int cell = 2 + 2 * variant;
  const int side = 6 + 2 * variant;
  const int px = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(std::max(1, w - side))));
  const int py = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(std::max(1, h - side))));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      bool fg = false;
      switch (family) {
        case 0: fg = (r + phase) % period < thick; break;
        case 1: fg = (c + phase) % period < thick; break;
        case 2: fg = (r + c + phase) % period < thick; break;
        case 3: fg = (r - c + phase + 4 * period) % period < thick; break;
        case 4: fg = ((r + phase) / cell + c / cell) % 2 == 0; break;
        case 5: fg = r >= py && r < py + side && c >= px && c < px + side; break;
      }
      const float noise = static_cast<float>(rng.uniform(0.0, 0.12));
      out[r * w + c] = (fg ? amp : 0.0f) + noise;
    }
}

struct SyntheticSpec {
  int classes = 10;
  int per_class = 200;
  int image_size = 16;
  uint64_t seed = 7;
  double test_fraction = 0.2;
};

inline SplitDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1) throw DataError("synthetic dataset needs at least one class");
  if (spec.per_class < 1) throw DataError("synthetic dataset needs at least one sample per class");
  if (spec.test_fraction <= 0.0 || spec.test_fraction >= 1.0)
    throw DataError("test fraction must lie strictly between 0 and 1");
  const int h = spec.image_size, w = spec.image_size;
  int test_per_class = 1;
  if (spec.per_class > 1) {
    test_per_class = static_cast<int>(spec.per_class * spec.test_fraction + 0.5);
    test_per_class = std::clamp(test_per_class, 1, spec.per_class - 1);
  }

  SplitDataset out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->channels = 1;
    d->height = h;
    d->width = w;
    d->num_classes = spec.classes;
  }
  RngStream rng(spec.seed, "synthetic-dataset");
  std::vector<float> buf(static_cast<size_t>(h) * w);
  for (int cls = 0; cls < spec.classes; ++cls) {
    for (int i = 0; i < spec.per_class; ++i) {
      render_pattern(cls, h, w, rng, buf.data());
      const bool is_test = spec.per_class == 1 || i >= spec.per_class - test_per_class;
      Dataset& d = is_test ? out.test : out.train;
      d.images.insert(d.images.end(), buf.begin(), buf.end());
      d.labels.push_back(cls);
      ++d.n;
      if (spec.per_class == 1) {
        out.train.images.insert(out.train.images.end(), buf.begin(), buf.end());
        out.train.labels.push_back(cls);
        ++out.train.n;
      }
    }
  }
  out.finish();
  return out;
}

// IDX encoding as used by the classic digit corpora: big-endian magic
// 0x00000803 for unsigned-byte rank-3 image stacks, 0x00000801 for labels.
inline uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated IDX header");
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void write_be32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline Dataset load_idx_pair(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw DataError("cannot open IDX image file " + images_path);
  if (read_be32(fi) != 0x00000803u) throw FormatError("bad IDX image magic in " + images_path);
  const uint32_t n = read_be32(fi), h = read_be32(fi), w = read_be32(fi);
  Dataset d;
  d.n = static_cast<int>(n);
  d.channels = 1;
  d.height = static_cast<int>(h);
  d.width = static_cast<int>(w);
  std::vector<unsigned char> raw(static_cast<size_t>(n) * h * w);
  fi.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!fi) throw FormatError("truncated IDX image payload in " + images_path);
  d.images.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) d.images[i] = static_cast<float>(raw[i]) / 255.0f;

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw DataError("cannot open IDX label file " + labels_path);
  if (read_be32(fl) != 0x00000801u) throw FormatError("bad IDX label magic in " + labels_path);
  const uint32_t nl = read_be32(fl);
  if (nl != n) throw FormatError("IDX image/label counts disagree");
  std::vector<unsigned char> lab(nl);
  fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
  if (!fl) throw FormatError("truncated IDX label payload in " + labels_path);
  d.labels.assign(lab.begin(), lab.end());
  int maxc = 0;
  for (int y : d.labels) maxc = std::max(maxc, y);
  d.num_classes = maxc + 1;
  return d;
}

inline void save_idx_pair(const Dataset& d, const std::string& images_path,
                          const std::string& labels_path) {
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw DataError("cannot write IDX image file " + images_path);
  write_be32(fi, 0x00000803u);
  write_be32(fi, static_cast<uint32_t>(d.n));
  write_be32(fi, static_cast<uint32_t>(d.height));
  write_be32(fi, static_cast<uint32_t>(d.width));
  for (float v : d.images) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    const unsigned char b = static_cast<unsigned char>(clamped * 255.0f + 0.5f);
    fi.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw DataError("cannot write IDX label file " + labels_path);
  write_be32(fl, 0x00000801u);
  write_be32(fl, static_cast<uint32_t>(d.n));
  for (int y : d.labels) {
    const unsigned char b = static_cast<unsigned char>(y);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// Binary PPM (P6), converted to grayscale and nearest-neighbor resized; the
// entry point for user-supplied passport source images.
inline TensorT<float> load_ppm_gray(const std::string& path, int out_h, int out_w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("unsupported image format in " + path + " (want binary PPM)");
  auto next_int = [&in, &path]() {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
      else in.get();
      c = in.peek();
    }
    int v;
    if (!(in >> v)) throw FormatError("bad PPM header in " + path);
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError("bad PPM header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("truncated PPM payload in " + path);
  std::vector<float> out(static_cast<size_t>(out_h) * out_w);
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      const int sr = std::min(h - 1, r * h / out_h);
      const int sc = std::min(w - 1, c * w / out_w);
      const size_t o = (static_cast<size_t>(sr) * w + sc) * 3;
      const float gray = (raw[o] + raw[o + 1] + raw[o + 2]) / (3.0f * static_cast<float>(maxval));
      out[static_cast<size_t>(r) * out_w + c] = gray;
    }
  return TensorT<float>({1, 1, out_h, out_w}, std::move(out));
}

}  // namespace nnpass
