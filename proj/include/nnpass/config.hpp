#pragma once

#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "nnpass/attack.hpp"
#include "nnpass/dataset.hpp"
#include "nnpass/model.hpp"
#include "nnpass/train.hpp"
#include "nnpass/verify.hpp"

namespace nnpass {

struct TaskConfig {
  std::string kind = "synthetic";
  SyntheticSpec synthetic;
  std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
  ArchId arch = ArchId::MiniNet;
  bool normalize_input = true;
};

struct PassportConfig {
  AffineKind kind = AffineKind::V3;
  PassportType type = PassportType::RandomImage;
  int num_images = 4;
  std::vector<std::string> image_paths;
  std::string reference_path;  // optional pre-trained feature extractor
};

struct TrainSection {
  TrainConfig train;
  std::string init = "scratch";
  std::string pretrained_path;
};

struct AttackSection {
  AttackConfig attack;
  std::string target_dir;
};

struct VerifySection {
  VerdictThresholds thresholds;
  std::vector<double> curve_grid = default_curve_grid();
  int noise_seeds = 20;
  std::string suspect_path, passport_path, evidence_dir;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  TaskConfig task;
  ModelConfig model;
  PassportConfig passport;
  TrainSection train;
  AttackSection attack;
  VerifySection verify;
};

namespace cfg_detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where,
                           const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + where + it.key() + "'");
}

inline const json* maybe(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double want_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("'" + where + "' must be a number");
  return v.get<double>();
}

inline int want_int(const json& v, const std::string& where, int lo) {
  if (!v.is_number_integer()) throw ConfigError("'" + where + "' must be an integer");
  const int i = v.get<int>();
  if (i < lo) throw ConfigError("'" + where + "' must be >= " + std::to_string(lo));
  return i;
}

inline uint64_t want_seed(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError("'" + where + "' must be a nonnegative integer");
  if (v.is_number_integer() && v.get<int64_t>() < 0)
    throw ConfigError("'" + where + "' must be a nonnegative integer");
  return v.get<uint64_t>();
}

inline bool want_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError("'" + where + "' must be true or false");
  return v.get<bool>();
}

inline std::string want_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError("'" + where + "' must be a string");
  return v.get<std::string>();
}

}  // namespace cfg_detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using namespace cfg_detail;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown(j, "", {"seed", "task", "model", "passport", "train", "attack", "verify"});
  ExperimentConfig cfg;
  if (auto* v = maybe(j, "seed")) cfg.seed = want_seed(*v, "seed");

  if (auto* t = maybe(j, "task")) {
    if (!t->is_object()) throw ConfigError("'task' must be an object");
    reject_unknown(*t, "task.",
                   {"kind", "classes", "per_class", "image_size", "seed", "test_fraction",
                    "train_images", "train_labels", "test_images", "test_labels"});
    if (auto* v = maybe(*t, "kind")) {
      cfg.task.kind = want_string(*v, "task.kind");
      if (cfg.task.kind != "synthetic" && cfg.task.kind != "idx")
        throw ConfigError("'task.kind' must be 'synthetic' or 'idx'");
    }
    if (auto* v = maybe(*t, "classes")) cfg.task.synthetic.classes = want_int(*v, "task.classes", 1);
    if (auto* v = maybe(*t, "per_class")) cfg.task.synthetic.per_class = want_int(*v, "task.per_class", 1);
    if (auto* v = maybe(*t, "image_size")) {
      cfg.task.synthetic.image_size = want_int(*v, "task.image_size", 8);
      if (cfg.task.synthetic.image_size % 2 != 0)
        throw ConfigError("'task.image_size' must be even (strided layers halve it)");
    }
    if (auto* v = maybe(*t, "seed")) cfg.task.synthetic.seed = want_seed(*v, "task.seed");
    if (auto* v = maybe(*t, "test_fraction")) {
      cfg.task.synthetic.test_fraction = want_number(*v, "task.test_fraction");
      if (cfg.task.synthetic.test_fraction <= 0.0 || cfg.task.synthetic.test_fraction >= 1.0)
        throw ConfigError("'task.test_fraction' must lie strictly between 0 and 1");
    }
    if (auto* v = maybe(*t, "train_images")) cfg.task.train_images = want_string(*v, "task.train_images");
    if (auto* v = maybe(*t, "train_labels")) cfg.task.train_labels = want_string(*v, "task.train_labels");
    if (auto* v = maybe(*t, "test_images")) cfg.task.test_images = want_string(*v, "task.test_images");
    if (auto* v = maybe(*t, "test_labels")) cfg.task.test_labels = want_string(*v, "task.test_labels");
    if (cfg.task.kind == "idx" &&
        (cfg.task.train_images.empty() || cfg.task.train_labels.empty() ||
         cfg.task.test_images.empty() || cfg.task.test_labels.empty()))
      throw ConfigError("IDX tasks need train/test image and label paths");
  }

  if (auto* mo = maybe(j, "model")) {
    if (!mo->is_object()) throw ConfigError("'model' must be an object");
    reject_unknown(*mo, "model.", {"arch", "normalize_input"});
    if (auto* v = maybe(*mo, "arch")) cfg.model.arch = arch_from_name(want_string(*v, "model.arch"));
    if (auto* v = maybe(*mo, "normalize_input"))
      cfg.model.normalize_input = want_bool(*v, "model.normalize_input");
  }

  if (auto* p = maybe(j, "passport")) {
    if (!p->is_object()) throw ConfigError("'passport' must be an object");
    reject_unknown(*p, "passport.", {"kind", "type", "num_images", "image_paths", "reference_path"});
    if (auto* v = maybe(*p, "kind")) cfg.passport.kind = affine_kind_from_name(want_string(*v, "passport.kind"));
    if (auto* v = maybe(*p, "type")) cfg.passport.type = passport_type_from_name(want_string(*v, "passport.type"));
    if (auto* v = maybe(*p, "num_images")) cfg.passport.num_images = want_int(*v, "passport.num_images", 1);
    if (auto* v = maybe(*p, "reference_path")) cfg.passport.reference_path = want_string(*v, "passport.reference_path");
    if (auto* v = maybe(*p, "image_paths")) {
      if (!v->is_array()) throw ConfigError("'passport.image_paths' must be an array of strings");
      for (const auto& e : *v) cfg.passport.image_paths.push_back(want_string(e, "passport.image_paths[]"));
    }
    if (cfg.passport.kind == AffineKind::V3 && cfg.passport.type == PassportType::FixedImage &&
        !cfg.passport.image_paths.empty() && cfg.passport.image_paths.size() != 2)
      throw ConfigError("fixed-image passports for v3 need exactly two images");
  }

  if (auto* tr = maybe(j, "train")) {
    if (!tr->is_object()) throw ConfigError("'train' must be an object");
    reject_unknown(*tr, "train.",
                   {"epochs", "batch_size", "lr", "momentum", "weight_decay", "schedule",
                    "step_size", "step_gamma", "telemetry", "init", "pretrained_path"});
    auto& tc = cfg.train.train;
    if (auto* v = maybe(*tr, "epochs")) tc.epochs = want_int(*v, "train.epochs", 1);
    if (auto* v = maybe(*tr, "batch_size")) tc.batch_size = want_int(*v, "train.batch_size", 1);
    if (auto* v = maybe(*tr, "lr")) {
      tc.opt.lr = want_number(*v, "train.lr");
      if (tc.opt.lr <= 0.0) throw ConfigError("'train.lr' must be positive");
    }
    if (auto* v = maybe(*tr, "momentum")) {
      tc.opt.momentum = want_number(*v, "train.momentum");
      if (tc.opt.momentum < 0.0 || tc.opt.momentum >= 1.0)
        throw ConfigError("'train.momentum' must lie in [0,1)");
    }
    if (auto* v = maybe(*tr, "weight_decay")) {
      tc.opt.weight_decay = want_number(*v, "train.weight_decay");
      if (tc.opt.weight_decay < 0.0) throw ConfigError("'train.weight_decay' must be nonnegative");
    }
    if (auto* v = maybe(*tr, "schedule")) tc.opt.schedule = schedule_from_name(want_string(*v, "train.schedule"));
    if (auto* v = maybe(*tr, "step_size")) tc.opt.step_size = want_int(*v, "train.step_size", 1);
    if (auto* v = maybe(*tr, "step_gamma")) {
      tc.opt.step_gamma = want_number(*v, "train.step_gamma");
      if (tc.opt.step_gamma <= 0.0) throw ConfigError("'train.step_gamma' must be positive");
    }
    if (auto* v = maybe(*tr, "telemetry")) tc.telemetry = want_bool(*v, "train.telemetry");
    if (auto* v = maybe(*tr, "init")) {
      cfg.train.init = want_string(*v, "train.init");
      if (cfg.train.init != "scratch" && cfg.train.init != "pretrained")
        throw ConfigError("'train.init' must be 'scratch' or 'pretrained'");
    }
    if (auto* v = maybe(*tr, "pretrained_path")) cfg.train.pretrained_path = want_string(*v, "train.pretrained_path");
    if (cfg.train.init == "pretrained" && cfg.train.pretrained_path.empty())
      throw ConfigError("pretrained initialization needs 'train.pretrained_path'");
  }

  if (auto* at = maybe(j, "attack")) {
    if (!at->is_object()) throw ConfigError("'attack' must be an object");
    reject_unknown(*at, "attack.", {"kind", "trials", "budget_epochs", "lr", "batch_size", "target_dir"});
    auto& ac = cfg.attack.attack;
    if (auto* v = maybe(*at, "kind")) ac.kind = attack_kind_from_name(want_string(*v, "attack.kind"));
    if (auto* v = maybe(*at, "target_dir")) cfg.attack.target_dir = want_string(*v, "attack.target_dir");
    if (auto* v = maybe(*at, "trials")) ac.num_trials = want_int(*v, "attack.trials", 1);
    if (auto* v = maybe(*at, "budget_epochs")) ac.budget_epochs = want_int(*v, "attack.budget_epochs", 1);
    if (auto* v = maybe(*at, "lr")) {
      ac.opt.lr = want_number(*v, "attack.lr");
      if (ac.opt.lr <= 0.0) throw ConfigError("'attack.lr' must be positive");
    }
    if (auto* v = maybe(*at, "batch_size")) ac.batch_size = want_int(*v, "attack.batch_size", 1);
  }

  if (auto* ve = maybe(j, "verify")) {
    if (!ve->is_object()) throw ConfigError("'verify' must be an object");
    reject_unknown(*ve, "verify.", {"tau_d", "tau_s", "epsilon_match", "curve_grid", "noise_seeds",
                                    "suspect_path", "passport_path", "evidence_dir"});
    auto& th = cfg.verify.thresholds;
    if (auto* v = maybe(*ve, "suspect_path")) cfg.verify.suspect_path = want_string(*v, "verify.suspect_path");
    if (auto* v = maybe(*ve, "passport_path")) cfg.verify.passport_path = want_string(*v, "verify.passport_path");
    if (auto* v = maybe(*ve, "evidence_dir")) cfg.verify.evidence_dir = want_string(*v, "verify.evidence_dir");
    if (auto* v = maybe(*ve, "tau_d")) {
      th.tau_d = want_number(*v, "verify.tau_d");
      if (th.tau_d < 0.0) throw ConfigError("'verify.tau_d' must be nonnegative");
    }
    if (auto* v = maybe(*ve, "tau_s")) {
      th.tau_s = want_number(*v, "verify.tau_s");
      if (th.tau_s < 0.0) throw ConfigError("'verify.tau_s' must be nonnegative");
    }
    if (auto* v = maybe(*ve, "epsilon_match")) {
      th.epsilon_match = want_number(*v, "verify.epsilon_match");
      if (th.epsilon_match <= 0.0) throw ConfigError("'verify.epsilon_match' must be positive");
    }
    if (auto* v = maybe(*ve, "curve_grid")) {
      if (!v->is_array() || v->empty()) throw ConfigError("'verify.curve_grid' must be a nonempty array");
      cfg.verify.curve_grid.clear();
      for (const auto& e : *v) cfg.verify.curve_grid.push_back(want_number(e, "verify.curve_grid[]"));
      if (cfg.verify.curve_grid.front() != 0.0 ||
          !std::is_sorted(cfg.verify.curve_grid.begin(), cfg.verify.curve_grid.end()) ||
          cfg.verify.curve_grid.back() > 1.0)
        throw ConfigError("'verify.curve_grid' must be sorted in [0,1] and start at 0");
    }
    if (auto* v = maybe(*ve, "noise_seeds")) cfg.verify.noise_seeds = want_int(*v, "verify.noise_seeds", 1);
  }
  return cfg;
}

// Applies one dotted-key override onto the JSON document; the value text is
// parsed as a JSON literal when possible, else taken as a string. Validation
// happens when the amended document is re-parsed.
inline void apply_override(nlohmann::json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value, got '" + spec + "'");
  const std::string path = spec.substr(0, eq);
  const std::string value_text = spec.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(value_text, nullptr, false);
  if (value.is_discarded()) value = value_text;
  nlohmann::json* cur = &doc;
  size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override path has an empty segment: '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = nlohmann::json::object();
    cur = &(*cur)[key];
    if (!cur->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    start = dot + 1;
  }
}

inline nlohmann::json load_config_json(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
  return j;
}

inline SplitDataset load_task(const TaskConfig& task) {
  if (task.kind == "synthetic") return generate_synthetic(task.synthetic);
  SplitDataset out;
  out.train = load_idx_pair(task.train_images, task.train_labels);
  out.test = load_idx_pair(task.test_images, task.test_labels);
  const int k = std::max(out.train.num_classes, out.test.num_classes);
  out.train.num_classes = k;
  out.test.num_classes = k;
  out.finish();
  return out;
}

}  // namespace nnpass
