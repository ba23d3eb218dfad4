#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nnpass/attack.hpp"
#include "nnpass/io.hpp"
#include "nnpass/model.hpp"
#include "nnpass/train.hpp"
#include "nnpass/verify.hpp"

namespace nnpass {

// Tensor container file: magic "NNPP", format version, then named entries of
// little-endian 32-bit floats. All multi-byte integers little-endian.
constexpr uint32_t kContainerVersion = 1;

struct Container {
  std::vector<std::pair<std::string, Tensor>> entries;

  void add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : entries)
      if (n == name) throw FormatError("duplicate container entry '" + name + "'");
    entries.push_back({name, std::move(t)});
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }

  Tensor get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("container is missing entry '" + name + "'");
    return *t;
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  uint32_t u32() {
    if (pos + 4 > buf.size()) throw FormatError("truncated container");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]);
    pos += 4;
    return v;
  }

  std::string bytes(size_t n) {
    if (pos + n > buf.size()) throw FormatError("truncated container");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize_container(const Container& c) {
  std::string out;
  out += "NNPP";
  detail::put_u32(out, kContainerVersion);
  detail::put_u32(out, static_cast<uint32_t>(c.entries.size()));
  for (const auto& [name, t] : c.entries) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, 0);  // dtype 0: 32-bit IEEE-754 little-endian
    detail::put_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t i = 0; i < t.rank(); ++i)
      detail::put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (float v : t.data()) detail::put_u32(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

inline Container parse_container(const std::string& bytes) {
  detail::Reader r{bytes};
  if (r.bytes(4) != "NNPP") throw FormatError("bad container magic");
  const uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version));
  const uint32_t count = r.u32();
  Container c;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const uint32_t dtype = r.u32();
    if (dtype != 0) throw FormatError("unsupported dtype code " + std::to_string(dtype));
    const uint32_t rank = r.u32();
    Shape shape;
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t e = r.u32();
      if (e == 0) throw FormatError("zero extent in entry '" + name + "'");
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    std::vector<float> data(numel);
    for (size_t j = 0; j < numel; ++j) data[j] = std::bit_cast<float>(r.u32());
    c.add(name, Tensor(shape, std::move(data)));
  }
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after last entry");
  return c;
}

// Metadata rides along as tiny tensors: small integers exactly representable
// in a float, 64-bit values split into four 16-bit lanes.
inline Tensor meta_scalar(double v) { return Tensor({1}, {static_cast<float>(v)}); }

inline Tensor meta_u64(uint64_t v) {
  std::vector<float> lanes(4);
  for (int i = 0; i < 4; ++i) lanes[static_cast<size_t>(i)] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return Tensor({4}, std::move(lanes));
}

inline uint64_t meta_read_u64(const Tensor& t) {
  if (t.numel() != 4) throw FormatError("malformed 64-bit metadata entry");
  uint64_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 16) | (static_cast<uint64_t>(t.data()[static_cast<size_t>(i)]) & 0xffff);
  return v;
}

inline Tensor meta_ints(const std::vector<int>& v) {
  std::vector<float> data(v.size());
  for (size_t i = 0; i < v.size(); ++i) data[i] = static_cast<float>(v[i]);
  return Tensor({static_cast<int>(v.size())}, std::move(data));
}

inline std::vector<int> meta_read_ints(const Tensor& t) {
  std::vector<int> v(t.numel());
  for (size_t i = 0; i < t.numel(); ++i) v[i] = static_cast<int>(t.data()[i]);
  return v;
}

inline int meta_read_int(const Tensor& t) {
  if (t.numel() != 1) throw FormatError("malformed scalar metadata entry");
  return static_cast<int>(t.data()[0]);
}

// Checkpoints carry the public parameters and batch statistics only; any
// passport-derived gamma/beta is reconstructed at load time from a passport,
// never stored. A model mid reverse-engineering saves as a plain BN model
// whose gamma/beta are the attacker's free values.
inline Container checkpoint_container(const Model& m) {
  Container c;
  AffineKind kind = m.affines.empty() ? AffineKind::BN : m.affines[0].kind;
  bool hijacked = false;
  for (const auto& a : m.affines)
    if (a.hijacked) hijacked = true;
  if (hijacked) kind = AffineKind::BN;
  c.add("meta.arch", meta_scalar(m.arch == ArchId::MiniNet ? 0 : 1));
  c.add("meta.num_classes", meta_scalar(m.num_classes));
  c.add("meta.input", meta_ints({m.in_channels, m.in_h, m.in_w}));
  c.add("meta.kind", meta_scalar(static_cast<int>(kind)));
  c.add("meta.normalize", meta_scalar(m.affines.empty() || m.affines[0].normalize_input ? 1 : 0));
  for (size_t i = 0; i < m.convs.size(); ++i)
    c.add("conv" + std::to_string(i) + ".w", Tensor(m.convs[i].w.shape(), m.convs[i].w.data()));
  for (size_t i = 0; i < m.affines.size(); ++i) {
    const auto& a = m.affines[i];
    const std::string base = "aff" + std::to_string(i) + ".";
    const Tensor& g = a.hijacked ? a.free_gamma : a.gamma;
    const Tensor& b = a.hijacked ? a.free_beta : a.beta;
    if (a.hijacked || !derives_gamma(kind)) c.add(base + "gamma", Tensor(g.shape(), g.data()));
    if (a.hijacked || !derives_beta(kind)) c.add(base + "beta", Tensor(b.shape(), b.data()));
    c.add(base + "running_mean", Tensor({static_cast<int>(a.running_mean.size())}, a.running_mean));
    c.add(base + "running_var", Tensor({static_cast<int>(a.running_var.size())}, a.running_var));
  }
  c.add("head.w", Tensor(m.head.w.shape(), m.head.w.data()));
  c.add("head.b", Tensor(m.head.b.shape(), m.head.b.data()));
  return c;
}

inline void load_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw ShapeError("checkpoint entry '" + name + "' has shape " + shape_str(src.shape()) +
                     ", model expects " + shape_str(dst.shape()));
  dst.data() = src.data();
}

inline Model model_from_container(const Container& c) {
  const int arch_code = meta_read_int(c.get("meta.arch"));
  if (arch_code != 0 && arch_code != 1) throw FormatError("unknown architecture code in checkpoint");
  const ArchId arch = arch_code == 0 ? ArchId::MiniNet : ArchId::MiniResNet;
  const int kind_code = meta_read_int(c.get("meta.kind"));
  if (kind_code < 0 || kind_code > 3) throw FormatError("unknown passport kind code in checkpoint");
  const auto input = meta_read_ints(c.get("meta.input"));
  if (input.size() != 3) throw FormatError("malformed input-shape metadata");
  Model m = make_model(arch, static_cast<AffineKind>(kind_code),
                       meta_read_int(c.get("meta.num_classes")), input[0], input[1], input[2],
                       meta_read_int(c.get("meta.normalize")) != 0);
  for (size_t i = 0; i < m.convs.size(); ++i) {
    const std::string name = "conv" + std::to_string(i) + ".w";
    load_into(m.convs[i].w, c.get(name), name);
  }
  for (size_t i = 0; i < m.affines.size(); ++i) {
    auto& a = m.affines[i];
    const std::string base = "aff" + std::to_string(i) + ".";
    if (!derives_gamma(a.kind)) load_into(a.gamma, c.get(base + "gamma"), base + "gamma");
    else if (c.has(base + "gamma"))
      throw FormatError("checkpoint stores a derived scale for layer " + std::to_string(i));
    if (!derives_beta(a.kind)) load_into(a.beta, c.get(base + "beta"), base + "beta");
    else if (c.has(base + "beta"))
      throw FormatError("checkpoint stores a derived shift for layer " + std::to_string(i));
    const Tensor rm = c.get(base + "running_mean");
    const Tensor rv = c.get(base + "running_var");
    if (rm.numel() != a.running_mean.size() || rv.numel() != a.running_var.size())
      throw ShapeError("checkpoint batch statistics do not fit layer " + std::to_string(i));
    a.running_mean = rm.data();
    a.running_var = rv.data();
  }
  load_into(m.head.w, c.get("head.w"), "head.w");
  load_into(m.head.b, c.get("head.b"), "head.b");
  return m;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  atomic_write_file(path, serialize_container(checkpoint_container(m)));
}

inline Model load_checkpoint(const std::string& path) {
  return model_from_container(parse_container(read_file(path)));
}

inline Container passport_container(const PassportSet& set) {
  Container c;
  c.add("meta.type", meta_scalar(static_cast<int>(set.type)));
  c.add("meta.seed", meta_u64(set.seed));
  c.add("meta.num_images", meta_scalar(set.num_images));
  c.add("meta.L", meta_scalar(set.num_passport_layers));
  c.add("meta.K", meta_scalar(set.total_layers));
  c.add("meta.reference_hash", meta_u64(set.reference_hash));
  if (!set.layer_choices.empty()) c.add("meta.layer_choices", meta_ints(set.layer_choices));
  if (!set.source_image_ids.empty()) c.add("meta.source_image_ids", meta_ints(set.source_image_ids));
  for (size_t j = 0; j < set.entries.size(); ++j) {
    const auto& e = set.entries[j];
    const std::string base = "p" + std::to_string(j) + ".";
    c.add(base + "layer", meta_scalar(e.layer_index));
    if (e.p_gamma.defined()) c.add(base + "gamma", Tensor(e.p_gamma.shape(), e.p_gamma.data()));
    if (e.p_beta.defined()) c.add(base + "beta", Tensor(e.p_beta.shape(), e.p_beta.data()));
  }
  for (size_t i = 0; i < set.source_pool.size(); ++i)
    c.add("pool" + std::to_string(i),
          Tensor(set.source_pool[i].shape(), set.source_pool[i].data()));
  return c;
}

inline PassportSet passport_from_container(const Container& c) {
  PassportSet set;
  const int type_code = meta_read_int(c.get("meta.type"));
  if (type_code < 0 || type_code > 2) throw FormatError("unknown passport type code");
  set.type = static_cast<PassportType>(type_code);
  set.seed = meta_read_u64(c.get("meta.seed"));
  set.num_images = meta_read_int(c.get("meta.num_images"));
  set.num_passport_layers = meta_read_int(c.get("meta.L"));
  set.total_layers = meta_read_int(c.get("meta.K"));
  set.reference_hash = meta_read_u64(c.get("meta.reference_hash"));
  if (c.has("meta.layer_choices")) set.layer_choices = meta_read_ints(c.get("meta.layer_choices"));
  if (c.has("meta.source_image_ids"))
    set.source_image_ids = meta_read_ints(c.get("meta.source_image_ids"));
  for (size_t j = 0;; ++j) {
    const std::string base = "p" + std::to_string(j) + ".";
    if (!c.has(base + "layer")) break;
    PassportEntry e;
    e.layer_index = meta_read_int(c.get(base + "layer"));
    if (c.has(base + "gamma")) e.p_gamma = c.get(base + "gamma");
    if (c.has(base + "beta")) e.p_beta = c.get(base + "beta");
    set.entries.push_back(std::move(e));
  }
  if (static_cast<int>(set.entries.size()) != set.num_passport_layers)
    throw FormatError("passport entry count disagrees with its metadata");
  for (size_t i = 0;; ++i) {
    const std::string name = "pool" + std::to_string(i);
    if (!c.has(name)) break;
    set.source_pool.push_back(c.get(name));
  }
  return set;
}

inline void save_passport(const PassportSet& set, const std::string& path) {
  atomic_write_file(path, serialize_container(passport_container(set)));
}

inline PassportSet load_passport(const std::string& path) {
  return passport_from_container(parse_container(read_file(path)));
}

inline std::string hex_u64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline uint64_t parse_hex_u64(const std::string& s) {
  if (s.size() != 16) throw FormatError("malformed 64-bit hex value '" + s + "'");
  uint64_t v = 0;
  for (char ch : s) {
    v <<= 4;
    if (ch >= '0' && ch <= '9') v |= static_cast<uint64_t>(ch - '0');
    else if (ch >= 'a' && ch <= 'f') v |= static_cast<uint64_t>(ch - 'a' + 10);
    else throw FormatError("malformed 64-bit hex value '" + s + "'");
  }
  return v;
}

// Evidence record: everything a later ownership dispute needs, committed at
// protection time.
struct EvidenceRecord {
  uint64_t test_set_hash = 0;
  uint64_t checkpoint_hash = 0;
  uint64_t passport_hash = 0;
  std::string kind;  // v1/v2/v3
  double recorded_mp = 0.0;
  bool has_baseline = false;
  double a_o = 0.0;
  VerdictThresholds thresholds;
  SignatureCurve curve;
};

inline std::string evidence_to_json(const EvidenceRecord& ev) {
  nlohmann::ordered_json j;
  j["test_set_hash"] = hex_u64(ev.test_set_hash);
  j["checkpoint_hash"] = hex_u64(ev.checkpoint_hash);
  j["passport_hash"] = hex_u64(ev.passport_hash);
  j["kind"] = ev.kind;
  j["recorded_mp"] = ev.recorded_mp;
  if (ev.has_baseline) j["a_o"] = ev.a_o;
  j["thresholds"] = {{"tau_d", ev.thresholds.tau_d},
                     {"tau_s", ev.thresholds.tau_s},
                     {"epsilon_match", ev.thresholds.epsilon_match}};
  nlohmann::ordered_json curve;
  curve["noise_master_seed"] = hex_u64(ev.curve.noise_master_seed);
  curve["seeds_per_point"] = ev.curve.seeds_per_point;
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (size_t i = 0; i < ev.curve.c_grid.size(); ++i)
    points.push_back({{"c", ev.curve.c_grid[i]},
                      {"mean", ev.curve.mean[i]},
                      {"std", ev.curve.stddev[i]}});
  curve["points"] = points;
  j["curve"] = curve;
  return j.dump(2) + "\n";
}

inline EvidenceRecord evidence_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evidence JSON: ") + e.what());
  }
  try {
    EvidenceRecord ev;
    ev.test_set_hash = parse_hex_u64(j.at("test_set_hash").get<std::string>());
    ev.checkpoint_hash = parse_hex_u64(j.at("checkpoint_hash").get<std::string>());
    ev.passport_hash = parse_hex_u64(j.at("passport_hash").get<std::string>());
    ev.kind = j.at("kind").get<std::string>();
    ev.recorded_mp = j.at("recorded_mp").get<double>();
    if (j.contains("a_o")) {
      ev.has_baseline = true;
      ev.a_o = j.at("a_o").get<double>();
    }
    ev.thresholds.tau_d = j.at("thresholds").at("tau_d").get<double>();
    ev.thresholds.tau_s = j.at("thresholds").at("tau_s").get<double>();
    ev.thresholds.epsilon_match = j.at("thresholds").at("epsilon_match").get<double>();
    ev.curve.noise_master_seed = parse_hex_u64(j.at("curve").at("noise_master_seed").get<std::string>());
    ev.curve.seeds_per_point = j.at("curve").at("seeds_per_point").get<int>();
    for (const auto& p : j.at("curve").at("points")) {
      ev.curve.c_grid.push_back(p.at("c").get<double>());
      ev.curve.mean.push_back(p.at("mean").get<double>());
      ev.curve.stddev.push_back(p.at("std").get<double>());
    }
    return ev;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("evidence JSON is missing fields: ") + e.what());
  }
}

inline std::string telemetry_to_csv(const TelemetryLog& log) {
  std::ostringstream out;
  out << "epoch,layer,update_magnitude,gamma_mean,beta_mean,test_acc\n";
  out.precision(10);
  for (const auto& r : log.rows)
    out << r.epoch << "," << r.layer << "," << r.update_magnitude << "," << r.gamma_mean << ","
        << r.beta_mean << "," << r.test_acc << "\n";
  return out.str();
}

inline std::string attack_report_to_csv(const AttackReport& report) {
  std::ostringstream out;
  out << "trial_id,accuracy\n";
  out.precision(10);
  for (size_t i = 0; i < report.trial_accuracies.size(); ++i)
    out << i << "," << report.trial_accuracies[i] << "\n";
  return out.str();
}

inline std::string attack_report_to_json(const AttackReport& report) {
  nlohmann::ordered_json j;
  j["attack"] = report.attack;
  j["trials"] = report.trial_accuracies.size();
  j["mean"] = report.mean;
  j["std"] = report.stddev;
  j["a_p"] = report.valid_accuracy;
  j["s"] = report.valid_accuracy - report.mean;
  return j.dump(2) + "\n";
}

}  // namespace nnpass
