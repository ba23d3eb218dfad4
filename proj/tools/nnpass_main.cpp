// nnpass: train passport-protected CNNs, attack them, and settle ownership
// disputes from the recorded evidence. Every subcommand is reproducible from
// (config, seed); all artifacts land in one output directory per run.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nnpass/nnpass.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  int64_t seed = -1;  // negative: keep the config's seed
  bool baseline = false;
  int trials = 0;         // 0: keep the config's trial count
  int budget_epochs = -1;  // negative: keep the config's budget
  bool quiet = false;
  std::string report_dir;
};

void say(const CliOptions& o, const std::string& line) {
  if (!o.quiet) std::cout << line << "\n";
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_mean_std(const std::vector<double>& v) {
  return fmt2(nnpass::mean_of(v)) + " (" + fmt2(nnpass::sample_std(v)) + ")";
}

// Holds .lock inside the run directory so two invocations cannot interleave
// writes to the same artifact set.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw nnpass::Error("output directory '" + dir +
                          "' is in use by another process (delete " + path_ + " if stale)");
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

json merged_config(const CliOptions& o) {
  json doc = o.config_path.empty() ? json::object() : nnpass::load_config_json(o.config_path);
  for (const auto& ov : o.overrides) nnpass::apply_override(doc, ov);
  if (o.seed >= 0) doc["seed"] = static_cast<uint64_t>(o.seed);
  if (o.trials > 0) doc["attack"]["trials"] = o.trials;
  if (o.budget_epochs >= 0) doc["attack"]["budget_epochs"] = std::max(1, o.budget_epochs);
  return doc;
}

void write_manifest(const std::string& dir, std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  ordered_json files = ordered_json::object();
  for (const auto& n : names) files[n] = nnpass::hex_u64(nnpass::file_hash(dir + "/" + n));
  ordered_json j;
  j["files"] = files;
  nnpass::atomic_write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

nnpass::Tensor image_tensor(const nnpass::Dataset& ds, int i) {
  std::vector<float> px(ds.image(i), ds.image(i) + ds.image_numel());
  return nnpass::Tensor({1, ds.channels, ds.height, ds.width}, std::move(px));
}

// Copies weights, head, and batch statistics from a donor checkpoint into a
// freshly built model; affine components the target trains are taken from the
// donor when the donor stores them.
void warm_start(nnpass::Model& dst, const nnpass::Model& src) {
  if (dst.arch != src.arch || dst.convs.size() != src.convs.size())
    throw nnpass::ConfigError("pretrained checkpoint does not match the configured architecture");
  for (size_t i = 0; i < dst.convs.size(); ++i) {
    if (dst.convs[i].w.shape() != src.convs[i].w.shape())
      throw nnpass::ConfigError("pretrained checkpoint does not match the configured architecture");
    dst.convs[i].w.data() = src.convs[i].w.data();
  }
  if (dst.head.w.shape() != src.head.w.shape())
    throw nnpass::ConfigError("pretrained checkpoint has a different class count");
  dst.head.w.data() = src.head.w.data();
  dst.head.b.data() = src.head.b.data();
  for (size_t i = 0; i < dst.affines.size(); ++i) {
    auto& a = dst.affines[i];
    const auto& s = src.affines[i];
    a.running_mean = s.running_mean;
    a.running_var = s.running_var;
    if (!nnpass::derives_gamma(a.kind) && s.gamma.defined()) a.gamma.data() = s.gamma.data();
    if (!nnpass::derives_beta(a.kind) && s.beta.defined()) a.beta.data() = s.beta.data();
  }
}

struct TrainedReference {
  nnpass::Model model;
  double accuracy = 0.0;
  bool loaded_from_file = false;
};

// The unprotected twin doubles as the feature extractor for image-derived
// passports and as the A_o baseline, so one training covers both uses.
TrainedReference obtain_reference(const nnpass::ExperimentConfig& cfg,
                                  const nnpass::SplitDataset& data, const nnpass::SeedTree& seeds,
                                  const CliOptions& o) {
  TrainedReference ref;
  const auto& tr = data.train;
  if (!cfg.passport.reference_path.empty()) {
    ref.model = nnpass::load_checkpoint(cfg.passport.reference_path);
    if (ref.model.passported())
      throw nnpass::ConfigError("reference checkpoint must be an unprotected model");
    ref.loaded_from_file = true;
  } else {
    say(o, "training unprotected reference model");
    ref.model = nnpass::make_model(cfg.model.arch, nnpass::AffineKind::BN, tr.num_classes,
                                   tr.channels, tr.height, tr.width, cfg.model.normalize_input);
    nnpass::init_weights(ref.model, seeds.derive("reference-init"));
    nnpass::TrainConfig rc = cfg.train.train;
    rc.seed = seeds.derive("reference-train");
    rc.telemetry = false;
    nnpass::train(ref.model, data, rc, nullptr);
  }
  ref.accuracy = nnpass::evaluate_accuracy(ref.model, data.test, nullptr);
  return ref;
}

std::vector<nnpass::Tensor> draw_passport_pool(const nnpass::Dataset& train, int num_images,
                                               const nnpass::SeedTree& seeds) {
  if (num_images > train.n)
    throw nnpass::ConfigError("passport.num_images exceeds the training set size");
  nnpass::RngStream rng(seeds.derive("pool"), "pool-pick");
  std::vector<nnpass::Tensor> pool;
  for (int i : rng.sample_without_replacement(train.n, num_images))
    pool.push_back(image_tensor(train, i));
  return pool;
}

nnpass::PassportSet build_passport(const nnpass::ExperimentConfig& cfg, nnpass::Model& model,
                                   TrainedReference* ref, const nnpass::SplitDataset& data,
                                   const nnpass::SeedTree& seeds) {
  const uint64_t pseed = seeds.derive("passport");
  switch (cfg.passport.type) {
    case nnpass::PassportType::RandomPattern:
      return nnpass::gen_random_pattern(model, pseed);
    case nnpass::PassportType::FixedImage: {
      const size_t need = cfg.passport.kind == nnpass::AffineKind::V3 ? 2 : 1;
      if (cfg.passport.image_paths.size() != need)
        throw nnpass::ConfigError("fixed-image passports for this variant need exactly " +
                                  std::to_string(need) + " entry(ies) in 'passport.image_paths'");
      std::vector<nnpass::Tensor> imgs;
      for (const auto& p : cfg.passport.image_paths)
        imgs.push_back(nnpass::load_ppm_gray(p, data.train.height, data.train.width));
      return nnpass::gen_feature_map_passport(ref->model, imgs, nnpass::FeatureMode::Fixed, pseed,
                                              cfg.passport.kind);
    }
    case nnpass::PassportType::RandomImage: {
      const auto pool = draw_passport_pool(data.train, cfg.passport.num_images, seeds);
      return nnpass::gen_feature_map_passport(ref->model, pool, nnpass::FeatureMode::Random, pseed,
                                              cfg.passport.kind);
    }
  }
  throw nnpass::ConfigError("unhandled passport type");
}

int cmd_train(const CliOptions& o) {
  const json doc = merged_config(o);
  const nnpass::ExperimentConfig cfg = nnpass::parse_experiment_config(doc);
  fs::create_directories(o.out_dir);
  DirLock lock(o.out_dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    nnpass::atomic_write_file(o.out_dir + "/" + name, bytes);
    written.push_back(name);
  };
  put("config.json", doc.dump(2) + "\n");

  const nnpass::SplitDataset data = nnpass::load_task(cfg.task);
  const auto& tr = data.train;
  say(o, "task: " + std::to_string(tr.num_classes) + " classes, " + std::to_string(tr.n) +
             " train / " + std::to_string(data.test.n) + " test samples");
  nnpass::SeedTree seeds(cfg.seed);

  const bool is_protected = cfg.passport.kind != nnpass::AffineKind::BN;
  const bool needs_reference =
      is_protected && cfg.passport.type != nnpass::PassportType::RandomPattern;

  TrainedReference ref;
  bool have_reference = false;
  if (needs_reference || o.baseline) {
    ref = obtain_reference(cfg, data, seeds, o);
    have_reference = true;
  }

  nnpass::Model model =
      nnpass::make_model(cfg.model.arch, cfg.passport.kind, tr.num_classes, tr.channels, tr.height,
                         tr.width, cfg.model.normalize_input);
  if (cfg.train.init == "pretrained")
    warm_start(model, nnpass::load_checkpoint(cfg.train.pretrained_path));
  else
    nnpass::init_weights(model, seeds.derive("init"));

  nnpass::PassportSet passport;
  if (is_protected) {
    passport = build_passport(cfg, model, have_reference ? &ref : nullptr, data, seeds);
    if (needs_reference) {
      const std::string bytes =
          nnpass::serialize_container(nnpass::checkpoint_container(ref.model));
      passport.reference_hash = nnpass::fnv1a(bytes.data(), bytes.size());
      put("reference.nnpp", bytes);
    } else if (have_reference) {
      put("reference.nnpp", nnpass::serialize_container(nnpass::checkpoint_container(ref.model)));
    }
    put("passport.nnpp", nnpass::serialize_container(nnpass::passport_container(passport)));
  } else if (have_reference) {
    put("reference.nnpp", nnpass::serialize_container(nnpass::checkpoint_container(ref.model)));
  }

  say(o, "training " + nnpass::arch_name(cfg.model.arch) + " (" +
             nnpass::affine_kind_name(cfg.passport.kind) + ") for " +
             std::to_string(cfg.train.train.epochs) + " epochs");
  nnpass::TrainConfig tc = cfg.train.train;
  tc.seed = seeds.derive("train");
  const nnpass::TrainResult res =
      nnpass::train(model, data, tc, is_protected ? &passport : nullptr);
  const double a_p = res.final_accuracy;

  const std::string ckpt_bytes = nnpass::serialize_container(nnpass::checkpoint_container(model));
  put("checkpoint.nnpp", ckpt_bytes);
  if (tc.telemetry) put("telemetry.csv", nnpass::telemetry_to_csv(res.telemetry));

  ordered_json metrics;
  metrics["arch"] = nnpass::arch_name(cfg.model.arch);
  metrics["kind"] = nnpass::affine_kind_name(cfg.passport.kind);
  if (is_protected) metrics["passport_type"] = nnpass::passport_type_name(cfg.passport.type);
  metrics["seed"] = cfg.seed;
  metrics["num_classes"] = tr.num_classes;
  metrics["chance"] = 100.0 / tr.num_classes;
  metrics["a_p"] = a_p;
  if (o.baseline) {
    metrics["a_o"] = ref.accuracy;
    metrics["i"] = nnpass::compute_inconsistency(ref.accuracy, a_p);
  }
  put("metrics.json", metrics.dump(2) + "\n");

  if (is_protected) {
    say(o, "recording signature curve");
    nnpass::EvidenceRecord ev;
    ev.curve = nnpass::signature_curve(model, passport, data.test, cfg.verify.curve_grid,
                                       cfg.verify.noise_seeds, seeds.derive("curve-noise"));
    ev.test_set_hash = data.test.content_hash();
    ev.checkpoint_hash = nnpass::fnv1a(ckpt_bytes.data(), ckpt_bytes.size());
    ev.passport_hash = nnpass::file_hash(o.out_dir + "/passport.nnpp");
    ev.kind = nnpass::affine_kind_name(cfg.passport.kind);
    ev.recorded_mp = a_p;
    ev.has_baseline = o.baseline;
    ev.a_o = ref.accuracy;
    ev.thresholds = cfg.verify.thresholds;
    put("evidence.json", nnpass::evidence_to_json(ev));
  }
  write_manifest(o.out_dir, written);

  std::string line = "A_p = " + fmt2(a_p);
  if (o.baseline)
    line += "  A_o = " + fmt2(ref.accuracy) + "  I = " + fmt2(ref.accuracy - a_p);
  std::cout << line << "\n";
  return 0;
}

int cmd_attack(const CliOptions& o) {
  const json doc = merged_config(o);
  const nnpass::ExperimentConfig cfg = nnpass::parse_experiment_config(doc);
  if (cfg.attack.target_dir.empty())
    throw nnpass::ConfigError("attacks need 'attack.target_dir' pointing at a completed run");
  const std::string& tdir = cfg.attack.target_dir;

  const nnpass::ExperimentConfig tcfg =
      nnpass::parse_experiment_config(nnpass::load_config_json(tdir + "/config.json"));
  const nnpass::SplitDataset data = nnpass::load_task(tcfg.task);
  const std::string ckpt_path = tdir + "/checkpoint.nnpp";
  const uint64_t ckpt_hash_before = nnpass::file_hash(ckpt_path);
  nnpass::Model model = nnpass::load_checkpoint(ckpt_path);
  nnpass::PassportSet passport = nnpass::load_passport(tdir + "/passport.nnpp");

  nnpass::Model reference;
  bool have_reference = false;
  if (fs::exists(tdir + "/reference.nnpp")) {
    reference = nnpass::load_checkpoint(tdir + "/reference.nnpp");
    have_reference = true;
  }

  fs::create_directories(o.out_dir);
  DirLock lock(o.out_dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    nnpass::atomic_write_file(o.out_dir + "/" + name, bytes);
    written.push_back(name);
  };
  put("config.json", doc.dump(2) + "\n");

  nnpass::SeedTree seeds(cfg.seed);
  nnpass::AttackConfig ac = cfg.attack.attack;
  ac.seed = seeds.derive("attack");
  say(o, nnpass::attack_kind_name(ac.kind) + " attack on " + tdir);

  nnpass::AttackReport rep;
  if (ac.kind == nnpass::AttackKind::RevEng) {
    nnpass::Model clone = nnpass::clone_model(model);
    rep = nnpass::reverse_engineer_hidden(clone, data, ac);
    rep.valid_accuracy = nnpass::evaluate_accuracy(model, data.test, &passport);
    put("recovered.nnpp", nnpass::serialize_container(nnpass::checkpoint_container(clone)));
  } else {
    std::vector<nnpass::Tensor> attacker_pool;
    if (ac.kind == nnpass::AttackKind::FakeT2)
      for (int i = 0; i < data.test.n; ++i) attacker_pool.push_back(image_tensor(data.test, i));
    rep = nnpass::fake_passport_attack(model, data.test, passport,
                                       have_reference ? &reference : nullptr, attacker_pool, ac);
  }

  if (nnpass::file_hash(ckpt_path) != ckpt_hash_before)
    throw nnpass::AttackError("target checkpoint changed while under attack");

  const nnpass::AffineKind variant =
      model.affines.empty() ? nnpass::AffineKind::BN : model.affines[0].kind;
  ordered_json aj = ordered_json::parse(nnpass::attack_report_to_json(rep));
  aj["variant"] = nnpass::affine_kind_name(variant);
  put("attack_report.json", aj.dump(2) + "\n");
  put("attack_report.csv", nnpass::attack_report_to_csv(rep));

  double a_o = rep.valid_accuracy;
  const std::string tmetrics = tdir + "/metrics.json";
  if (fs::exists(tmetrics)) {
    const json tm = json::parse(nnpass::read_file(tmetrics), nullptr, false);
    if (!tm.is_discarded() && tm.contains("a_o")) a_o = tm["a_o"].get<double>();
  }
  nnpass::export_histogram(rep.trial_accuracies, 2.0, o.out_dir + "/histogram.csv", a_o,
                           rep.valid_accuracy);
  written.push_back("histogram.csv");
  write_manifest(o.out_dir, written);

  std::cout << "A_p = " << fmt2(rep.valid_accuracy) << "  attack mean = " << fmt2(rep.mean)
            << " (" << fmt2(rep.stddev) << ")  S = " << fmt2(rep.valid_accuracy - rep.mean)
            << "\n";
  return 0;
}

int cmd_verify(const CliOptions& o) {
  const json doc = merged_config(o);
  const nnpass::ExperimentConfig cfg = nnpass::parse_experiment_config(doc);
  if (cfg.verify.evidence_dir.empty())
    throw nnpass::ConfigError("verification needs 'verify.evidence_dir'");
  const std::string& edir = cfg.verify.evidence_dir;

  const nnpass::EvidenceRecord ev =
      nnpass::evidence_from_json(nnpass::read_file(edir + "/evidence.json"));
  const nnpass::ExperimentConfig ecfg =
      nnpass::parse_experiment_config(nnpass::load_config_json(edir + "/config.json"));
  const nnpass::SplitDataset data = nnpass::load_task(ecfg.task);
  if (data.test.content_hash() != ev.test_set_hash)
    throw nnpass::VerificationError("evidence test-set hash does not match the recorded task");

  const std::string suspect_path =
      cfg.verify.suspect_path.empty() ? edir + "/checkpoint.nnpp" : cfg.verify.suspect_path;
  const std::string passport_path =
      cfg.verify.passport_path.empty() ? edir + "/passport.nnpp" : cfg.verify.passport_path;
  nnpass::Model suspect = nnpass::load_checkpoint(suspect_path);
  const nnpass::PassportSet claimed = nnpass::load_passport(passport_path);
  nnpass::restore_passport_functions(suspect, nnpass::affine_kind_from_name(ev.kind));
  nnpass::validate_passport_binding(suspect, claimed);

  say(o, "measuring suspect model against recorded evidence");
  const nnpass::VerificationEvidence out =
      nnpass::verify_ownership(suspect, claimed, ev.recorded_mp, ev.curve, data.test,
                               ev.thresholds);

  fs::create_directories(o.out_dir);
  DirLock lock(o.out_dir);
  ordered_json vj;
  vj["positive"] = out.positive;
  vj["suspect"] = suspect_path;
  vj["passport"] = passport_path;
  vj["evidence_dir"] = edir;
  vj["recorded_mp"] = out.recorded_valid;
  vj["measured_valid"] = out.measured_valid;
  vj["valid_match"] = out.valid_match;
  vj["curve_checked"] = out.curve_checked;
  if (out.curve_checked) {
    vj["measured_curve"] = out.measured_curve;
    vj["worst_curve_gap"] = out.worst_curve_gap;
    vj["curve_match"] = out.curve_match;
  }
  nnpass::atomic_write_file(o.out_dir + "/verdict.json", vj.dump(2) + "\n");
  write_manifest(o.out_dir, {"verdict.json"});

  std::cout << "verification " << (out.positive ? "POSITIVE" : "NEGATIVE") << ": measured "
            << fmt2(out.measured_valid) << " vs recorded " << fmt2(out.recorded_valid);
  if (out.curve_checked)
    std::cout << ", worst curve gap " << fmt2(out.worst_curve_gap);
  std::cout << "\n";
  return out.positive ? 0 : 1;
}

struct RunRow {
  std::string dir;
  std::string kind;
  double a_p = 0.0;
  bool has_i = false;
  double i = 0.0;
};

struct AttackRow {
  std::string dir;
  std::string variant;
  std::string attack;
  double s = 0.0;
};

int cmd_report(const CliOptions& o) {
  const std::string dir = o.report_dir;
  if (!fs::is_directory(dir)) throw nnpass::ConfigError("'" + dir + "' is not a directory");

  std::vector<std::string> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path().filename().string());
  std::sort(subdirs.begin(), subdirs.end());

  std::vector<RunRow> runs;
  std::vector<AttackRow> attacks;
  std::vector<std::string> incomplete;
  for (const auto& name : subdirs) {
    const std::string sub = dir + "/" + name;
    const bool has_cfg = fs::exists(sub + "/config.json");
    if (fs::exists(sub + "/attack_report.json")) {
      const json a = json::parse(nnpass::read_file(sub + "/attack_report.json"), nullptr, false);
      if (a.is_discarded() || !a.contains("variant") || !a.contains("attack") ||
          !a.contains("s")) {
        incomplete.push_back(name + " (malformed attack_report.json)");
        continue;
      }
      attacks.push_back({name, a["variant"].get<std::string>(), a["attack"].get<std::string>(),
                         a["s"].get<double>()});
    } else if (fs::exists(sub + "/metrics.json")) {
      const json m = json::parse(nnpass::read_file(sub + "/metrics.json"), nullptr, false);
      if (m.is_discarded() || !m.contains("kind") || !m.contains("a_p")) {
        incomplete.push_back(name + " (malformed metrics.json)");
        continue;
      }
      RunRow r;
      r.dir = name;
      r.kind = m["kind"].get<std::string>();
      r.a_p = m["a_p"].get<double>();
      if (m.contains("i")) {
        r.has_i = true;
        r.i = m["i"].get<double>();
      }
      runs.push_back(r);
    } else if (has_cfg) {
      incomplete.push_back(name + " (no metrics or attack report)");
    }
  }

  std::ostringstream out;
  if (runs.empty() && attacks.empty()) {
    std::cerr << "no completed runs under '" << dir << "'\n";
    return 1;
  }

  const std::vector<std::string> kinds = {"none", "v1", "v2", "v3"};
  out << "Test accuracy and performance inconsistency\n";
  out << "variant  runs  A_p mean (std)  I mean (std)\n";
  for (const auto& k : kinds) {
    std::vector<double> accs, incs;
    for (const auto& r : runs) {
      if (r.kind != k) continue;
      accs.push_back(r.a_p);
      if (r.has_i) incs.push_back(r.i);
    }
    if (accs.empty()) continue;
    out << k << "  " << accs.size() << "  " << fmt_mean_std(accs) << "  "
        << (incs.empty() ? std::string("-") : fmt_mean_std(incs)) << "\n";
  }

  if (!attacks.empty()) {
    out << "\nProtection strength S = A_p - A_t, mean (std)\n";
    out << "variant  t1  t2  t3  reveng\n";
    for (const auto& k : kinds) {
      bool any = false;
      std::map<std::string, std::vector<double>> cells;
      for (const auto& a : attacks)
        if (a.variant == k) {
          cells[a.attack].push_back(a.s);
          any = true;
        }
      if (!any) continue;
      out << k;
      for (const auto& atk : {"t1", "t2", "t3", "reveng"}) {
        auto it = cells.find(atk);
        out << "  " << (it == cells.end() ? std::string("-") : fmt_mean_std(it->second));
      }
      out << "\n";
    }
  }

  if (!incomplete.empty()) {
    out << "\nIncomplete runs:\n";
    for (const auto& n : incomplete) out << "  " << n << "\n";
  }

  const std::string text = out.str();
  nnpass::atomic_write_file(dir + "/summary.txt", text);
  std::cout << text;
  return incomplete.empty() ? 0 : 1;
}

int cmd_gen_passport(const CliOptions& o) {
  const json doc = merged_config(o);
  const nnpass::ExperimentConfig cfg = nnpass::parse_experiment_config(doc);
  if (cfg.passport.kind == nnpass::AffineKind::BN)
    throw nnpass::ConfigError("passport generation needs a passport variant, not 'none'");

  const nnpass::SplitDataset data = nnpass::load_task(cfg.task);
  const auto& tr = data.train;
  nnpass::SeedTree seeds(cfg.seed);
  nnpass::Model shape_model =
      nnpass::make_model(cfg.model.arch, cfg.passport.kind, tr.num_classes, tr.channels, tr.height,
                         tr.width, cfg.model.normalize_input);

  nnpass::PassportSet passport;
  if (cfg.passport.type == nnpass::PassportType::RandomPattern) {
    passport = nnpass::gen_random_pattern(shape_model, seeds.derive("passport"));
  } else {
    if (cfg.passport.reference_path.empty())
      throw nnpass::ConfigError("image-derived passports need 'passport.reference_path'");
    TrainedReference ref = obtain_reference(cfg, data, seeds, o);
    passport = build_passport(cfg, shape_model, &ref, data, seeds);
    passport.reference_hash = nnpass::file_hash(cfg.passport.reference_path);
  }

  fs::create_directories(o.out_dir);
  DirLock lock(o.out_dir);
  nnpass::save_passport(passport, o.out_dir + "/passport.nnpp");
  write_manifest(o.out_dir, {"passport.nnpp"});
  std::cout << "wrote " << o.out_dir << "/passport.nnpp (" << passport.entries.size()
            << " layer entries)\n";
  return 0;
}

int cmd_dataset_gen(const CliOptions& o) {
  const json doc = merged_config(o);
  const nnpass::ExperimentConfig cfg = nnpass::parse_experiment_config(doc);
  const nnpass::SplitDataset data = nnpass::load_task(cfg.task);
  fs::create_directories(o.out_dir);
  DirLock lock(o.out_dir);
  nnpass::save_idx_pair(data.train, o.out_dir + "/train-images.idx3",
                        o.out_dir + "/train-labels.idx1");
  nnpass::save_idx_pair(data.test, o.out_dir + "/test-images.idx3",
                        o.out_dir + "/test-labels.idx1");
  ordered_json j;
  j["classes"] = data.train.num_classes;
  j["train_n"] = data.train.n;
  j["test_n"] = data.test.n;
  j["height"] = data.train.height;
  j["width"] = data.train.width;
  j["train_hash"] = nnpass::hex_u64(data.train.content_hash());
  j["test_hash"] = nnpass::hex_u64(data.test.content_hash());
  nnpass::atomic_write_file(o.out_dir + "/dataset.json", j.dump(2) + "\n");
  write_manifest(o.out_dir, {"train-images.idx3", "train-labels.idx1", "test-images.idx3",
                             "test-labels.idx1", "dataset.json"});
  std::cout << "wrote " << data.train.n << " train / " << data.test.n << " test samples to "
            << o.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"passport-protected CNN training, attack, and ownership verification"};
  app.require_subcommand(1);
  CliOptions o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "experiment config JSON file");
    c->add_option("--seed", o.seed, "override the experiment seed")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--out", o.out_dir, "output directory (default: run)");
    c->add_option("--override", o.overrides, "config override as section.key=value (repeatable)")
        ->type_size(1)
        ->allow_extra_args(false);
    c->add_flag("--quiet", o.quiet, "suppress progress lines");
  };

  CLI::App* t = app.add_subcommand("train", "train a model and record protection evidence");
  add_common(t);
  t->add_flag("--baseline", o.baseline,
              "also train an unprotected twin and record its accuracy as A_o");

  CLI::App* a = app.add_subcommand("attack", "run a fake-passport or reverse-engineering attack");
  add_common(a);
  a->add_option("--trials", o.trials, "number of fake-passport trials")
      ->check(CLI::PositiveNumber);
  a->add_option("--budget-epochs", o.budget_epochs, "reverse-engineering training budget")
      ->check(CLI::NonNegativeNumber);

  CLI::App* v = app.add_subcommand("verify", "check a suspect model against recorded evidence");
  add_common(v);

  CLI::App* r = app.add_subcommand("report", "summarize completed runs into tables");
  r->add_option("dir", o.report_dir, "directory holding run subdirectories")->required();
  r->add_flag("--quiet", o.quiet, "suppress progress lines");

  CLI::App* g = app.add_subcommand("gen-passport", "generate a passport file without training");
  add_common(g);

  CLI::App* d = app.add_subcommand("dataset-gen", "write the configured dataset as IDX files");
  add_common(d);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (t->parsed()) return cmd_train(o);
    if (a->parsed()) return cmd_attack(o);
    if (v->parsed()) return cmd_verify(o);
    if (r->parsed()) return cmd_report(o);
    if (g->parsed()) return cmd_gen_passport(o);
    if (d->parsed()) return cmd_dataset_gen(o);
  } catch (const nnpass::NumericsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nnpass::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
