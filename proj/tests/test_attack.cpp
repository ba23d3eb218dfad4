#include <catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "nnpass/attack.hpp"

using nnpass::AffineKind;
using nnpass::AttackConfig;
using nnpass::AttackKind;
using nnpass::Model;
using nnpass::Tensor;

namespace {

Tensor image_tensor(const nnpass::Dataset& ds, int i) {
  std::vector<float> px(ds.image(i), ds.image(i) + ds.image_numel());
  return Tensor({1, ds.channels, ds.height, ds.width}, std::move(px));
}

uint64_t model_fingerprint(const Model& m) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const std::vector<float>& v) {
    h = nnpass::fnv1a(v.data(), v.size() * sizeof(float), h);
  };
  for (const auto& c : m.convs) mix(c.w.data());
  for (const auto& a : m.affines) {
    if (a.gamma.defined()) mix(a.gamma.data());
    if (a.beta.defined()) mix(a.beta.data());
    mix(a.running_mean);
    mix(a.running_var);
  }
  mix(m.head.w.data());
  mix(m.head.b.data());
  return h;
}

// One protected model guarded by a random-image passport, with the reference
// net that produced the feature maps. Shared by every attack case.
struct AttackFixture {
  nnpass::SplitDataset data;
  Model reference;
  std::vector<Tensor> owner_pool;
  nnpass::PassportSet passport;
  Model model;
  double a_p = 0.0;

  AttackFixture() {
    nnpass::SyntheticSpec spec;
    spec.classes = 3;
    spec.per_class = 40;
    spec.image_size = 12;
    spec.seed = 41;
    data = nnpass::generate_synthetic(spec);

    reference = nnpass::make_model(nnpass::ArchId::MiniNet, AffineKind::BN, 3, 1, 12, 12, true);
    nnpass::init_weights(reference, 42);
    nnpass::TrainConfig rc;
    rc.epochs = 6;
    rc.batch_size = 16;
    rc.seed = 43;
    rc.opt.lr = 0.05;
    rc.telemetry = false;
    nnpass::train(reference, data, rc, nullptr);

    for (int i = 0; i < 3; ++i) owner_pool.push_back(image_tensor(data.test, i));
    passport = nnpass::gen_feature_map_passport(reference, owner_pool,
                                                nnpass::FeatureMode::Random, 44, AffineKind::V3);

    model = nnpass::make_model(nnpass::ArchId::MiniNet, AffineKind::V3, 3, 1, 12, 12, true);
    nnpass::init_weights(model, 45);
    nnpass::TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 16;
    tc.seed = 46;
    tc.opt.lr = 0.05;
    tc.telemetry = false;
    a_p = nnpass::train(model, data, tc, &passport).final_accuracy;
  }
};

AttackFixture& fx() {
  static AttackFixture f;
  return f;
}

}  // namespace

TEST_CASE("attack kind names") {
  for (auto k : {AttackKind::FakeT1, AttackKind::FakeT2, AttackKind::FakeT3, AttackKind::RevEng})
    CHECK(nnpass::attack_kind_from_name(nnpass::attack_kind_name(k)) == k);
  CHECK_THROWS_AS(nnpass::attack_kind_from_name("t4"), nnpass::ConfigError);
}

TEST_CASE("random pattern forgery") {
  auto& f = fx();
  REQUIRE(f.a_p > 60.0);
  AttackConfig cfg;
  cfg.kind = AttackKind::FakeT1;
  cfg.num_trials = 20;
  cfg.seed = 100;

  const uint64_t before = model_fingerprint(f.model);
  auto rep = nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, {}, cfg);
  CHECK(model_fingerprint(f.model) == before);

  CHECK(rep.attack == "t1");
  REQUIRE(rep.trial_accuracies.size() == 20);
  CHECK(rep.valid_accuracy == f.a_p);
  for (double a : rep.trial_accuracies) {
    CHECK(a >= 0.0);
    CHECK(a <= 100.0);
  }
  // Forged passports land far below the working passport.
  CHECK(f.a_p - rep.mean > 15.0);
  CHECK_THAT(rep.mean, Catch::Matchers::WithinAbs(nnpass::mean_of(rep.trial_accuracies), 1e-12));

  auto rep2 = nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, {}, cfg);
  CHECK(rep2.trial_accuracies == rep.trial_accuracies);
  cfg.seed = 101;
  auto rep3 = nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, {}, cfg);
  CHECK(rep3.trial_accuracies != rep.trial_accuracies);
}

TEST_CASE("attacker image forgery") {
  auto& f = fx();
  std::vector<Tensor> attacker_pool;
  for (int i = 10; i < 16; ++i) attacker_pool.push_back(image_tensor(f.data.test, i));
  AttackConfig cfg;
  cfg.kind = AttackKind::FakeT2;
  cfg.num_trials = 10;
  cfg.seed = 200;

  const uint64_t before = model_fingerprint(f.model);
  auto rep =
      nnpass::fake_passport_attack(f.model, f.data.test, f.passport, &f.reference, attacker_pool, cfg);
  CHECK(model_fingerprint(f.model) == before);
  CHECK(rep.attack == "t2");
  REQUIRE(rep.trial_accuracies.size() == 10);
  // In-distribution attacker images through the true reference make the
  // strongest forgery, so the drop is real but modest at this scale.
  CHECK(f.a_p - rep.mean > 3.0);

  SECTION("contract violations") {
    CHECK_THROWS_AS(
        nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, attacker_pool, cfg),
        nnpass::AttackError);
    std::vector<Tensor> tiny{attacker_pool[0]};  // V3 needs two images per forgery
    CHECK_THROWS_AS(
        nnpass::fake_passport_attack(f.model, f.data.test, f.passport, &f.reference, tiny, cfg),
        nnpass::AttackError);
    cfg.num_trials = 0;
    CHECK_THROWS_AS(nnpass::fake_passport_attack(f.model, f.data.test, f.passport, &f.reference,
                                                 attacker_pool, cfg),
                    nnpass::AttackError);
  }
}

TEST_CASE("wrong combination forgery") {
  auto& f = fx();
  AttackConfig cfg;
  cfg.kind = AttackKind::FakeT3;
  cfg.num_trials = 16;
  cfg.seed = 300;

  auto rep = nnpass::fake_passport_attack(f.model, f.data.test, f.passport, &f.reference, {}, cfg);
  CHECK(rep.attack == "t3");
  REQUIRE(rep.trial_accuracies.size() == 16);
  // The true combination is excluded by construction. A single wrong
  // combination can still tie the working accuracy on a small test set,
  // so the lockout shows up in the aggregate.
  CHECK(f.a_p - rep.mean > 10.0);
  CHECK(*std::min_element(rep.trial_accuracies.begin(), rep.trial_accuracies.end()) < f.a_p);

  SECTION("needs the reference and a meaningful pool") {
    CHECK_THROWS_AS(nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, {}, cfg),
                    nnpass::AttackError);
    auto pattern = nnpass::gen_random_pattern(f.model, 5);
    CHECK_THROWS_AS(
        nnpass::fake_passport_attack(f.model, f.data.test, pattern, &f.reference, {}, cfg),
        nnpass::AttackError);
    auto solo = nnpass::gen_feature_map_passport(f.reference, {f.owner_pool[0]},
                                                 nnpass::FeatureMode::Random, 6, AffineKind::V3);
    CHECK_THROWS_AS(nnpass::fake_passport_attack(f.model, f.data.test, solo, &f.reference, {}, cfg),
                    nnpass::AttackError);
  }
}

TEST_CASE("reverse engineering the hidden parameters") {
  auto& f = fx();
  AttackConfig cfg;
  cfg.kind = AttackKind::RevEng;
  cfg.seed = 400;
  cfg.batch_size = 16;
  cfg.opt.lr = 0.05;

  SECTION("zero budget reports the hijacked-identity accuracy") {
    Model clone = nnpass::clone_model(f.model);
    cfg.budget_epochs = 0;
    auto rep = nnpass::reverse_engineer_hidden(clone, f.data, cfg);
    CHECK(rep.attack == "reveng");
    REQUIRE(rep.trial_accuracies.size() == 1);
    CHECK(clone.affines[0].hijacked);
    Model identity = nnpass::clone_model(f.model);
    nnpass::hijack_affines(identity);
    CHECK(rep.trial_accuracies[0] == nnpass::evaluate_accuracy(identity, f.data.test, nullptr));
    // The caller owns valid accuracy; the attack itself leaves it unset.
    CHECK(rep.valid_accuracy == 0.0);
  }
  SECTION("training the free parameters moves the clone, not the original") {
    const uint64_t before = model_fingerprint(f.model);
    Model clone = nnpass::clone_model(f.model);
    cfg.budget_epochs = 4;
    auto rep = nnpass::reverse_engineer_hidden(clone, f.data, cfg);
    CHECK(model_fingerprint(f.model) == before);
    CHECK(model_fingerprint(clone) != before);
    REQUIRE(rep.trial_accuracies.size() == 1);
    CHECK(rep.trial_accuracies[0] >= 0.0);
    CHECK(rep.trial_accuracies[0] <= 100.0);
    // Conv weights stay frozen; only the free affine parameters move.
    CHECK(clone.convs[0].w.data() == f.model.convs[0].w.data());
    CHECK(clone.convs[1].w.data() == f.model.convs[1].w.data());
    CHECK(clone.head.w.data() == f.model.head.w.data());
  }
  SECTION("the fake-passport runner rejects this kind") {
    CHECK_THROWS_AS(nnpass::fake_passport_attack(f.model, f.data.test, f.passport, nullptr, {}, cfg),
                    nnpass::AttackError);
  }
}
