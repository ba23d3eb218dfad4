#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "nnpass/parallel.hpp"
#include "nnpass/passport_gen.hpp"
#include "nnpass/stats.hpp"
#include "nnpass/train.hpp"

namespace nnpass {

enum class AttackKind { FakeT1, FakeT2, FakeT3, RevEng };

inline std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::FakeT1: return "t1";
    case AttackKind::FakeT2: return "t2";
    case AttackKind::FakeT3: return "t3";
    case AttackKind::RevEng: return "reveng";
  }
  return "?";
}

inline AttackKind attack_kind_from_name(const std::string& s) {
  if (s == "t1") return AttackKind::FakeT1;
  if (s == "t2") return AttackKind::FakeT2;
  if (s == "t3") return AttackKind::FakeT3;
  if (s == "reveng") return AttackKind::RevEng;
  throw ConfigError("unknown attack kind '" + s + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::FakeT1;
  int num_trials = 200;
  uint64_t seed = 1;
  int budget_epochs = 15;      // RevEng only
  int batch_size = 32;         // RevEng only
  OptimizerConfig opt;         // RevEng only
};

struct AttackReport {
  std::string attack;
  std::vector<double> trial_accuracies;
  double valid_accuracy = 0.0;  // A_p
  double mean = 0.0;
  double stddev = 0.0;
  double wall_seconds = 0.0;    // informational; never serialized

  void finish() {
    mean = mean_of(trial_accuracies);
    stddev = sample_std(trial_accuracies);
  }
};

// T1 forges fresh uniform random patterns; T2 runs attacker-chosen look-alike
// images through the feature extractor; T3 guesses a wrong combination over
// the known pool. All trials only evaluate: the model is never written to.
inline AttackReport fake_passport_attack(Model& model, const Dataset& test_set,
                                         const PassportSet& true_passport, Model* reference,
                                         const std::vector<Tensor>& attacker_pool,
                                         const AttackConfig& cfg) {
  if (cfg.kind == AttackKind::RevEng)
    throw AttackError("fake_passport_attack handles fake-passport kinds only");
  if (cfg.num_trials < 1) throw AttackError("attack needs at least one trial");
  const auto t0 = std::chrono::steady_clock::now();
  const AffineKind variant = model.affines.empty() ? AffineKind::BN : model.affines[0].kind;
  AttackReport report;
  report.attack = attack_kind_name(cfg.kind);
  report.valid_accuracy = evaluate_accuracy(model, test_set, &true_passport);
  SeedTree seeds(cfg.seed);

  if (cfg.kind == AttackKind::FakeT3) {
    if (!reference) throw AttackError("combination attack needs the feature-extraction model");
    const int N = static_cast<int>(true_passport.source_pool.size());
    const int L = true_passport.num_passport_layers;
    if (N < 1 || static_cast<int>(true_passport.layer_choices.size()) != L)
      throw AttackError("target passport does not carry a pool and layer choices");
    if (guess_space_size(std::max(N, 1), std::max(L, 1)) <= 1)
      throw AttackError("pool admits only the true combination; no fake exists");
  }
  if (cfg.kind == AttackKind::FakeT2) {
    const size_t need = variant == AffineKind::V3 ? 2 : 1;
    if (!reference) throw AttackError("image attack needs the feature-extraction model");
    if (attacker_pool.size() < need)
      throw AttackError("image attack needs at least " + std::to_string(need) + " attacker image(s)");
  }

  report.trial_accuracies.assign(static_cast<size_t>(cfg.num_trials), 0.0);
  parallel_for(cfg.num_trials, [&](int t) {
    const uint64_t trial_seed = seeds.derive("fake-trial-" + std::to_string(t));
    PassportSet fake;
    switch (cfg.kind) {
      case AttackKind::FakeT1:
        fake = gen_random_pattern(model, trial_seed);
        break;
      case AttackKind::FakeT2: {
        RngStream rng(trial_seed, "t2-pick");
        std::vector<Tensor> picks;
        const size_t need = variant == AffineKind::V3 ? 2 : 1;
        const auto idx = rng.sample_without_replacement(
            static_cast<int>(attacker_pool.size()), static_cast<int>(need));
        for (int i : idx) picks.push_back(attacker_pool[static_cast<size_t>(i)]);
        fake = gen_feature_map_passport(*reference, picks, FeatureMode::Fixed, trial_seed, variant);
        break;
      }
      case AttackKind::FakeT3: {
        RngStream rng(trial_seed, "t3-pick");
        const int N = static_cast<int>(true_passport.source_pool.size());
        const int L = true_passport.num_passport_layers;
        std::vector<int> tuple(static_cast<size_t>(L));
        do {
          for (int l = 0; l < L; ++l)
            tuple[static_cast<size_t>(l)] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(N)));
        } while (tuple == true_passport.layer_choices);
        fake = feature_passport_from_choices(*reference, true_passport.source_pool, tuple);
        fake.type = PassportType::RandomImage;
        fake.seed = trial_seed;
        break;
      }
      case AttackKind::RevEng:
        break;
    }
    report.trial_accuracies[static_cast<size_t>(t)] = evaluate_accuracy(model, test_set, &fake);
  });
  report.finish();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// A plagiarized checkpoint carries only the public affine components. The
// attacker keeps those at their trained values and swaps each hidden slot
// for a free variable (gamma=1, beta=0), clearing the batch statistics so
// they are re-estimated on the attacker's own passes.
inline void hijack_affines(Model& m) {
  for (auto& a : m.affines) {
    const int C = a.running_mean.empty() ? m.convs[static_cast<size_t>(a.conv_index)].w.dim(0)
                                         : static_cast<int>(a.running_mean.size());
    a.hijacked = true;
    if (derives_gamma(a.kind)) {
      a.free_gamma = Tensor({C}, std::vector<float>(static_cast<size_t>(C), 1.0f));
      a.free_gamma.set_requires_grad(true);
    } else {
      a.free_gamma = Tensor({C}, a.gamma.data());
    }
    if (derives_beta(a.kind)) {
      a.free_beta = Tensor({C}, std::vector<float>(static_cast<size_t>(C), 0.0f));
      a.free_beta.set_requires_grad(true);
    } else {
      a.free_beta = Tensor({C}, a.beta.data());
    }
    if (derives_gamma(a.kind) || derives_beta(a.kind)) {
      a.running_mean.assign(static_cast<size_t>(C), 0.0f);
      a.running_var.assign(static_cast<size_t>(C), 1.0f);
    }
  }
}

// The attacker holds the cloned public weights constant and trains only the
// hidden affine slots on the original data, re-estimating batch statistics
// along the way. Returns the recovered accuracy as the single trial entry.
inline AttackReport reverse_engineer_hidden(Model& clone, const SplitDataset& data,
                                            const AttackConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  hijack_affines(clone);
  std::vector<std::pair<std::string, Tensor>> params;
  for (size_t i = 0; i < clone.affines.size(); ++i) {
    const auto& a = clone.affines[i];
    if (derives_gamma(a.kind))
      params.push_back({"aff" + std::to_string(i) + ".free_gamma", a.free_gamma});
    if (derives_beta(a.kind))
      params.push_back({"aff" + std::to_string(i) + ".free_beta", a.free_beta});
  }
  if (cfg.budget_epochs > 0 && !params.empty()) {
    TrainConfig tc;
    tc.epochs = cfg.budget_epochs;
    tc.batch_size = cfg.batch_size;
    tc.opt = cfg.opt;
    tc.seed = cfg.seed;
    tc.telemetry = false;
    run_sgd(clone, data.train, nullptr, params, tc, nullptr, nullptr, "reveng");
  }
  AttackReport report;
  report.attack = attack_kind_name(AttackKind::RevEng);
  report.trial_accuracies.push_back(evaluate_accuracy(clone, data.test, nullptr));
  report.finish();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace nnpass
