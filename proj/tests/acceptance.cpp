// Acceptance gate. Every exit criterion runs here at its stated tolerance and
// prints exactly one PASS/FAIL line; supporting numbers go on indented lines
// so a red run can be diagnosed from the log alone. The trained fixture is
// shared across criteria and built once on first use.

#include <catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nnpass/nnpass.hpp"

using nnpass::AffineKind;
using nnpass::AttackConfig;
using nnpass::AttackKind;
using nnpass::Dataset;
using nnpass::Model;
using nnpass::PassportSet;
using nnpass::SplitDataset;
using nnpass::Tensor;
using nnpass::TrainConfig;

namespace {

constexpr int kNumSeeds = 5;
constexpr int kPoolN = 4;

bool conclude(int n, const std::string& what, bool ok) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << what << std::endl;
  return ok;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor image_tensor(const Dataset& ds, int i) {
  Tensor t({1, ds.channels, ds.height, ds.width});
  std::copy_n(ds.image(i), ds.image_numel(), t.data().begin());
  return t;
}

struct VariantRun {
  Model model;
  PassportSet passport;
  double a_p = 0.0;
};

uint64_t run_master(int seed_index, AffineKind kind) {
  return 1000 + static_cast<uint64_t>(seed_index) * 10 + static_cast<uint64_t>(kind);
}

TrainConfig recipe() {
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 32;
  tc.telemetry = false;
  return tc;
}

// The reference doubles as the unprotected baseline and, for image-derived
// passports, as the feature extractor.
Model train_baseline(const SplitDataset& data, nnpass::ArchId arch, uint64_t master, double* a_o) {
  nnpass::SeedTree seeds(master);
  Model m = nnpass::make_model(arch, AffineKind::BN, data.train.num_classes,
                               data.train.channels, data.train.height, data.train.width, true);
  nnpass::init_weights(m, seeds.derive("init"));
  TrainConfig tc = recipe();
  tc.seed = seeds.derive("train");
  nnpass::train(m, data, tc, nullptr);
  *a_o = nnpass::evaluate_accuracy(m, data.test, nullptr);
  return m;
}

VariantRun train_protected(const SplitDataset& data, Model& reference, nnpass::ArchId arch,
                           AffineKind kind, uint64_t master) {
  nnpass::SeedTree seeds(master);
  VariantRun run;
  run.model = nnpass::make_model(arch, kind, data.train.num_classes,
                                 data.train.channels, data.train.height, data.train.width, true);
  nnpass::init_weights(run.model, seeds.derive("init"));
  nnpass::RngStream pick(seeds.derive("pool"), "pool-pick");
  const std::vector<int> idx = pick.sample_without_replacement(data.train.n, kPoolN);
  std::vector<Tensor> pool;
  for (int i : idx) pool.push_back(image_tensor(data.train, i));
  run.passport = nnpass::gen_feature_map_passport(reference, pool, nnpass::FeatureMode::Random,
                                                  seeds.derive("passport"), kind);
  TrainConfig tc = recipe();
  tc.seed = seeds.derive("train");
  run.a_p = nnpass::train(run.model, data, tc, &run.passport).final_accuracy;
  return run;
}

// Five baselines and fifteen protected models. Every variant carries
// random-image passports drawn through the baseline feature extractor:
// feature-derived scales start at a healthy magnitude (zero-centered random
// patterns can seed a dead scale), and the combination attacks get a real
// guess space.
struct Bench {
  SplitDataset data;
  std::vector<Model> baselines;
  std::vector<double> a_o;
  std::vector<VariantRun> v1, v2, v3;
  double train_wall = 0.0;

  std::vector<VariantRun>& runs(AffineKind kind) {
    if (kind == AffineKind::V1) return v1;
    if (kind == AffineKind::V2) return v2;
    return v3;
  }
};

Bench& bench() {
  static Bench b = [] {
    Bench out;
    nnpass::SyntheticSpec spec;
    spec.classes = 10;
    spec.per_class = 40;
    spec.image_size = 16;
    spec.seed = 101;
    spec.test_fraction = 0.2;
    out.data = nnpass::generate_synthetic(spec);

    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < kNumSeeds; ++s) {
      double a_o = 0.0;
      out.baselines.push_back(
          train_baseline(out.data, nnpass::ArchId::MiniNet, 500 + static_cast<uint64_t>(s), &a_o));
      out.a_o.push_back(a_o);
      for (AffineKind kind : {AffineKind::V1, AffineKind::V2, AffineKind::V3})
        out.runs(kind).push_back(train_protected(out.data, out.baselines.back(),
                                                 nnpass::ArchId::MiniNet, kind,
                                                 run_master(s, kind)));
    }
    out.train_wall = seconds_since(t0);
    return out;
  }();
  return b;
}

}  // namespace

TEST_CASE("protected accuracy matches the baseline") {
  Bench& b = bench();
  bool ok = b.train_wall <= 900.0;
  std::cout << "  trained " << kNumSeeds << " baselines + " << 3 * kNumSeeds
            << " protected models in " << fmt2(b.train_wall) << " s\n";
  std::cout << "  A_o per seed:";
  for (double v : b.a_o) std::cout << " " << fmt2(v);
  std::cout << "\n";
  for (AffineKind kind : {AffineKind::V1, AffineKind::V2, AffineKind::V3}) {
    std::vector<double> gaps;
    for (int s = 0; s < kNumSeeds; ++s)
      gaps.push_back(std::abs(nnpass::compute_inconsistency(b.a_o[static_cast<size_t>(s)],
                                                            b.runs(kind)[static_cast<size_t>(s)].a_p)));
    const double mean_gap = nnpass::mean_of(gaps);
    std::cout << "  " << nnpass::affine_kind_name(kind) << " mean |I| = " << fmt2(mean_gap)
              << " (A_p:";
    for (const auto& r : b.runs(kind)) std::cout << " " << fmt2(r.a_p);
    std::cout << ")\n";
    ok = ok && mean_gap <= 2.0;
  }
  CHECK(conclude(1, "mean accuracy gap to the baseline stays within 2 points", ok));
}

TEST_CASE("random fake passports are locked out") {
  Bench& b = bench();
  bool ok = true;
  std::vector<double> all_trials;
  for (int s = 0; s < kNumSeeds; ++s) {
    VariantRun& run = b.v3[static_cast<size_t>(s)];
    AttackConfig ac;
    ac.kind = AttackKind::FakeT1;
    ac.num_trials = 200;
    ac.seed = 7700 + static_cast<uint64_t>(s);
    const nnpass::AttackReport rep =
        nnpass::fake_passport_attack(run.model, b.data.test, run.passport, nullptr, {}, ac);
    all_trials.insert(all_trials.end(), rep.trial_accuracies.begin(), rep.trial_accuracies.end());
    const double strength = nnpass::compute_strength(rep.valid_accuracy, rep.mean);
    std::cout << "  seed " << s << ": A_p = " << fmt2(rep.valid_accuracy)
              << "  fake mean = " << fmt2(rep.mean) << "  S = " << fmt2(strength) << "\n";
    ok = ok && run.a_p >= 60.0 && strength >= 50.0;
  }
  const double pooled = nnpass::mean_of(all_trials);
  std::cout << "  pooled fake mean over " << all_trials.size() << " trials = " << fmt2(pooled)
            << " (chance 10.00)\n";
  ok = ok && std::abs(pooled - 10.0) <= 5.0;
  CHECK(conclude(2, "200 random fake passports per seed leave S >= 50 and fakes near chance", ok));
}

// The attacker holds the full training set and a budget generous enough for
// every refit to converge, so the gaps below measure where each variant's
// free slots can get, not how fast. At this depth an additive shift is
// benign to refit no matter which variant hides it, so the v2 margin is not
// reached here; the gate is kept at its stated strength regardless.
TEST_CASE("hidden-parameter recovery splits the variants") {
  Bench& b = bench();
  const auto t0 = std::chrono::steady_clock::now();
  double gap_v1 = 0.0, gap_v2 = 0.0, gap_v3 = 0.0;
  for (AffineKind kind : {AffineKind::V1, AffineKind::V2, AffineKind::V3}) {
    std::vector<double> gaps;
    std::cout << "  " << nnpass::affine_kind_name(kind) << " A_p:";
    for (int s = 0; s < kNumSeeds; ++s)
      std::cout << " " << fmt2(b.runs(kind)[static_cast<size_t>(s)].a_p);
    std::cout << "\n";
    for (int s = 0; s < kNumSeeds; ++s) {
      VariantRun& run = b.runs(kind)[static_cast<size_t>(s)];
      Model clone = nnpass::clone_model(run.model);
      AttackConfig ac;
      ac.kind = AttackKind::RevEng;
      ac.budget_epochs = 3 * recipe().epochs;
      ac.batch_size = recipe().batch_size;
      ac.opt = recipe().opt;
      ac.seed = 8800 + static_cast<uint64_t>(s) * 7 + static_cast<uint64_t>(kind);
      const nnpass::AttackReport rep = nnpass::reverse_engineer_hidden(clone, b.data, ac);
      gaps.push_back(run.a_p - rep.trial_accuracies.at(0));
    }
    const double mean_gap = nnpass::mean_of(gaps);
    std::cout << "  " << nnpass::affine_kind_name(kind)
              << " mean A_p - A_t = " << fmt2(mean_gap) << "\n";
    if (kind == AffineKind::V1) gap_v1 = mean_gap;
    if (kind == AffineKind::V2) gap_v2 = mean_gap;
    if (kind == AffineKind::V3) gap_v3 = mean_gap;
  }
  const double wall = seconds_since(t0) + b.train_wall;
  std::cout << "  15 recovery runs plus shared training took " << fmt2(wall) << " s\n";
  const bool ok = gap_v1 <= 3.0 && gap_v2 >= 10.0 && gap_v3 >= 10.0 && wall <= 1800.0;
  CHECK(conclude(3, "equal-budget recovery restores v1 but stays 10+ points short on v2/v3", ok));
}

TEST_CASE("ownership verification separates owners from impostors") {
  Bench& b = bench();
  const nnpass::VerdictThresholds th;
  bool all_positive = true;
  int idx = 0;
  for (AffineKind kind : {AffineKind::V1, AffineKind::V2, AffineKind::V3}) {
    for (int s = 0; s < kNumSeeds; ++s, ++idx) {
      VariantRun& run = b.runs(kind)[static_cast<size_t>(s)];
      const nnpass::SignatureCurve curve =
          nnpass::signature_curve(run.model, run.passport, b.data.test,
                                  nnpass::default_curve_grid(), 20,
                                  5500 + static_cast<uint64_t>(idx));
      const nnpass::VerificationEvidence ev =
          nnpass::verify_ownership(run.model, run.passport, run.a_p, curve, b.data.test, th);
      if (!ev.positive) {
        std::cout << "  owner check failed for " << nnpass::affine_kind_name(kind) << " seed " << s
                  << " (measured " << fmt2(ev.measured_valid) << " vs recorded " << fmt2(run.a_p)
                  << ")\n";
        all_positive = false;
      }
    }
  }
  std::cout << "  owner evidence accepted for " << (all_positive ? 15 : -1) << "/15 models\n";

  VariantRun& target = b.v3[0];
  const nnpass::SignatureCurve recorded =
      nnpass::signature_curve(target.model, target.passport, b.data.test,
                              nnpass::default_curve_grid(), 20, 5500);
  int false_positives = 0;
  for (int t = 0; t < 1000; ++t) {
    const PassportSet fake =
        nnpass::gen_random_pattern(target.model, 660000 + static_cast<uint64_t>(t));
    const nnpass::VerificationEvidence ev =
        nnpass::verify_ownership(target.model, fake, target.a_p, recorded, b.data.test, th);
    if (ev.positive) ++false_positives;
  }
  std::cout << "  false positives over 1000 random fake passports: " << false_positives << "\n";
  const bool ok = all_positive && false_positives == 0;
  CHECK(conclude(4, "all 15 owner checks pass and 1000 random fakes all fail", ok));
}

TEST_CASE("the signature curve falls monotonically") {
  Bench& b = bench();
  VariantRun& run = b.v3[0];
  const nnpass::SignatureCurve curve =
      nnpass::signature_curve(run.model, run.passport, b.data.test, nnpass::default_curve_grid(),
                              20, 5500);
  const double rho = nnpass::spearman_rho(curve.c_grid, curve.mean);
  const bool exact_head = curve.mean.at(0) == run.a_p;
  std::cout << "  curve means:";
  for (double v : curve.mean) std::cout << " " << fmt2(v);
  std::cout << "\n  spearman rho = " << fmt2(rho) << ", c=0 point "
            << (exact_head ? "equals" : "differs from") << " A_p\n";
  const bool ok = rho <= -0.8 && exact_head;
  CHECK(conclude(5, "corruption level anti-correlates with accuracy (rho <= -0.8, exact head)", ok));
}

namespace {

// Plain conv/affine/relu chain of depth L so the enumeration check can vary
// the passport-layer count freely.
Model make_chain_model(int L, AffineKind kind, int classes = 3) {
  using nnpass::AffineLayer;
  using nnpass::ConvLayer;
  using nnpass::OpCode;
  Model m;
  m.num_classes = classes;
  m.in_channels = 1;
  m.in_h = 6;
  m.in_w = 6;
  int cin = 1;
  for (int i = 0; i < L; ++i) {
    ConvLayer c;
    c.w = Tensor({4, cin, 3, 3});
    c.w.set_requires_grad(true);
    m.convs.push_back(std::move(c));
    AffineLayer a;
    a.kind = kind;
    a.conv_index = i;
    if (!nnpass::derives_gamma(kind)) {
      a.gamma = Tensor({4}, std::vector<float>(4, 1.0f));
      a.gamma.set_requires_grad(true);
    }
    if (!nnpass::derives_beta(kind)) {
      a.beta = Tensor({4}, std::vector<float>(4, 0.0f));
      a.beta.set_requires_grad(true);
    }
    a.running_mean.assign(4, 0.0f);
    a.running_var.assign(4, 1.0f);
    m.affines.push_back(std::move(a));
    m.program.push_back({OpCode::Conv, i, -1});
    m.program.push_back({OpCode::Affine, i, -1});
    m.program.push_back({OpCode::Relu, -1, -1});
    cin = 4;
  }
  m.program.push_back({OpCode::Gap, -1, -1});
  m.program.push_back({OpCode::Dense, -1, -1});
  m.head.w = Tensor({classes, 4});
  m.head.w.set_requires_grad(true);
  m.head.b = Tensor({classes}, std::vector<float>(static_cast<size_t>(classes), 0.0f));
  m.head.b.set_requires_grad(true);
  m.total_layers = L + 1;
  return m;
}

uint64_t content_fingerprint(const PassportSet& s) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, size_t n) {
    const auto* bp = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= bp[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : s.entries) {
    mix(&e.layer_index, sizeof(e.layer_index));
    for (const Tensor* t : {&e.p_gamma, &e.p_beta})
      if (t->defined()) mix(t->data().data(), t->data().size() * sizeof(float));
  }
  return h;
}

std::string pow_decimal(int base, int exp) {
  std::vector<int> digits{1};
  for (int e = 0; e < exp; ++e) {
    int carry = 0;
    for (auto& d : digits) {
      int v = d * base + carry;
      d = v % 10;
      carry = v / 10;
    }
    while (carry) {
      digits.push_back(carry % 10);
      carry /= 10;
    }
  }
  std::string s;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) s += static_cast<char>('0' + *it);
  return s;
}

std::string bigint_str(const nnpass::BigInt& v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

TEST_CASE("the guess space enumerates and counts exactly") {
  bool ok = true;
  for (int L = 1; L <= 3; ++L) {
    Model ref = make_chain_model(L, AffineKind::BN);
    nnpass::init_weights(ref, 40 + static_cast<uint64_t>(L));
    for (int N = 1; N <= 3; ++N) {
      nnpass::RngStream rng(50 + static_cast<uint64_t>(10 * L + N), "acceptance-pool");
      std::vector<Tensor> pool;
      for (int i = 0; i < N; ++i) {
        Tensor t({1, 1, 6, 6});
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
        pool.push_back(std::move(t));
      }
      std::vector<int> choices(static_cast<size_t>(L), 0);
      std::set<uint64_t> distinct;
      long count = 0;
      for (;;) {
        distinct.insert(content_fingerprint(nnpass::feature_passport_from_choices(ref, pool, choices)));
        ++count;
        int i = 0;
        while (i < L && ++choices[static_cast<size_t>(i)] == N) {
          choices[static_cast<size_t>(i)] = 0;
          ++i;
        }
        if (i == L) break;
      }
      long expect = 1;
      for (int i = 0; i < L; ++i) expect *= N;
      if (count != expect || static_cast<long>(distinct.size()) != expect) {
        std::cout << "  N=" << N << " L=" << L << ": enumerated " << count << " tuples, "
                  << distinct.size() << " distinct, expected " << expect << "\n";
        ok = false;
      }
    }
  }

  bool sizes_exact = true;
  for (int N = 1; N <= 20 && sizes_exact; ++N)
    for (int L = 1; L <= 18 && sizes_exact; ++L)
      sizes_exact = bigint_str(nnpass::guess_space_size(N, L)) == pow_decimal(N, L);
  const std::string top = bigint_str(nnpass::guess_space_size(20, 18));
  const std::string expect_top = "262144" + std::string(18, '0');  // (2*10)^18 = 2^18 * 10^18
  std::cout << "  guess_space_size(20, 18) = " << top << "\n";
  ok = ok && sizes_exact && top == expect_top;
  CHECK(conclude(6, "choice enumeration and guess-space sizes are exact", ok));
}

namespace {

using DT = nnpass::TensorT<double>;

DT rnd(nnpass::Shape shape, uint64_t seed, double lo, double hi) {
  DT t(shape);
  nnpass::RngStream rng(seed, "fd-probe");
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero keep the relu probe off its kink.
DT rnd_nonzero(nnpass::Shape shape, uint64_t seed) {
  DT t(shape);
  nnpass::RngStream rng(seed, "fd-probe");
  for (auto& v : t.data()) v = rng.uniform(0.3, 1.0) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
  return t;
}

double probe(const std::string& name, const std::function<DT(const DT&)>& f, const DT& x,
             double& worst, bool& ok) {
  const double err = nnpass::finite_diff_check<double>(f, x, 1e-5);
  if (err >= 1e-4) {
    std::cout << "  " << name << ": relative error " << err << "\n";
    ok = false;
  }
  worst = std::max(worst, err);
  return err;
}

}  // namespace

TEST_CASE("every differentiable op survives a finite-difference audit") {
  bool ok = true;
  double worst = 0.0;
  const DT mask = rnd({2, 3, 4, 4}, 900, -1.0, 1.0);  // fixed weights make the probe gradients nondegenerate
  auto weighted = [&](const DT& t) { return nnpass::sum_all(nnpass::mul(t, mask)); };

  const DT a0 = rnd({2, 3, 4, 4}, 901, -1.0, 1.0);
  probe("add lhs", [&](const DT& x) { return weighted(nnpass::add(x, a0)); },
        rnd({2, 3, 4, 4}, 902, -1.0, 1.0), worst, ok);
  probe("add rhs", [&](const DT& x) { return weighted(nnpass::add(a0, x)); },
        rnd({2, 3, 4, 4}, 903, -1.0, 1.0), worst, ok);
  probe("sub lhs", [&](const DT& x) { return weighted(nnpass::sub(x, a0)); },
        rnd({2, 3, 4, 4}, 904, -1.0, 1.0), worst, ok);
  probe("sub rhs", [&](const DT& x) { return weighted(nnpass::sub(a0, x)); },
        rnd({2, 3, 4, 4}, 905, -1.0, 1.0), worst, ok);
  probe("mul lhs", [&](const DT& x) { return weighted(nnpass::mul(x, a0)); },
        rnd({2, 3, 4, 4}, 906, -1.0, 1.0), worst, ok);
  probe("mul rhs", [&](const DT& x) { return weighted(nnpass::mul(a0, x)); },
        rnd({2, 3, 4, 4}, 907, -1.0, 1.0), worst, ok);
  probe("mul_scalar", [&](const DT& x) { return weighted(nnpass::mul_scalar(x, 1.7)); },
        rnd({2, 3, 4, 4}, 908, -1.0, 1.0), worst, ok);
  probe("sum_all", [](const DT& x) { return nnpass::sum_all(x); },
        rnd({2, 3, 4, 4}, 909, -1.0, 1.0), worst, ok);
  probe("reshape",
        [&](const DT& x) { return weighted(nnpass::reshape(x, {2, 3, 4, 4})); },
        rnd({2, 48}, 910, -1.0, 1.0), worst, ok);
  probe("relu", [&](const DT& x) { return weighted(nnpass::relu(x)); },
        rnd_nonzero({2, 3, 4, 4}, 911), worst, ok);
  probe("rsqrt_eps", [&](const DT& x) { return weighted(nnpass::rsqrt_eps(x, 1e-5)); },
        rnd({2, 3, 4, 4}, 912, 0.5, 2.0), worst, ok);

  const DT cin = rnd({2, 2, 5, 5}, 920, -1.0, 1.0);
  const DT ck = rnd({3, 2, 3, 3}, 921, -0.7, 0.7);
  const DT cmask = rnd({2, 3, 5, 5}, 922, -1.0, 1.0);
  auto conv_sum = [&](const DT& in, const DT& k, int stride, int pad, const DT& msk) {
    return nnpass::sum_all(nnpass::mul(nnpass::conv2d(in, k, stride, pad), msk));
  };
  probe("conv2d input s1p1", [&](const DT& x) { return conv_sum(x, ck, 1, 1, cmask); }, cin,
        worst, ok);
  probe("conv2d kernel s1p1", [&](const DT& x) { return conv_sum(cin, x, 1, 1, cmask); }, ck,
        worst, ok);
  const DT smask = rnd({2, 3, 2, 2}, 923, -1.0, 1.0);
  probe("conv2d input s2p0", [&](const DT& x) { return conv_sum(x, ck, 2, 0, smask); }, cin,
        worst, ok);
  probe("conv2d kernel s2p0", [&](const DT& x) { return conv_sum(cin, x, 2, 0, smask); }, ck,
        worst, ok);

  const DT din = rnd({3, 4}, 930, -1.0, 1.0);
  const DT dw = rnd({5, 4}, 931, -0.8, 0.8);
  const DT db = rnd({5}, 932, -0.3, 0.3);
  const DT dmask = rnd({3, 5}, 933, -1.0, 1.0);
  auto dense_sum = [&](const DT& x, const DT& w, const DT& bb) {
    return nnpass::sum_all(nnpass::mul(nnpass::dense_affine(x, w, bb), dmask));
  };
  probe("dense input", [&](const DT& x) { return dense_sum(x, dw, db); }, din, worst, ok);
  probe("dense weight", [&](const DT& x) { return dense_sum(din, x, db); }, dw, worst, ok);
  probe("dense bias", [&](const DT& x) { return dense_sum(din, dw, x); }, db, worst, ok);

  const DT gmask = rnd({2, 3}, 940, -1.0, 1.0);
  probe("global_avg_pool",
        [&](const DT& x) { return nnpass::sum_all(nnpass::mul(nnpass::global_avg_pool(x), gmask)); },
        rnd({2, 3, 4, 4}, 941, -1.0, 1.0), worst, ok);
  const DT chmask = rnd({3}, 942, -1.0, 1.0);
  probe("channel_mean",
        [&](const DT& x) { return nnpass::sum_all(nnpass::mul(nnpass::channel_mean(x), chmask)); },
        rnd({2, 3, 4, 4}, 943, -1.0, 1.0), worst, ok);
  const DT bmask = rnd({2, 3, 4, 4}, 944, -1.0, 1.0);
  probe("channel_broadcast",
        [&](const DT& x) {
          return nnpass::sum_all(nnpass::mul(nnpass::channel_broadcast(x, 2, 4, 4), bmask));
        },
        rnd({3}, 945, -1.0, 1.0), worst, ok);

  const DT ax = rnd({2, 3, 4, 4}, 950, -1.0, 1.0);
  const DT ag = rnd({3}, 951, 0.5, 1.5);
  const DT ab = rnd({3}, 952, -0.5, 0.5);
  auto affine_sum = [&](const DT& x, const DT& g, const DT& be) {
    return nnpass::sum_all(nnpass::mul(nnpass::channel_affine(x, g, be), mask));
  };
  probe("channel_affine input", [&](const DT& x) { return affine_sum(x, ag, ab); }, ax, worst, ok);
  probe("channel_affine gamma", [&](const DT& x) { return affine_sum(ax, x, ab); }, ag, worst, ok);
  probe("channel_affine beta", [&](const DT& x) { return affine_sum(ax, ag, x); }, ab, worst, ok);

  const std::vector<int> labels{0, 2, 1};
  probe("cross_entropy",
        [&](const DT& x) { return nnpass::cross_entropy(x, labels); },
        rnd({3, 4}, 960, -1.5, 1.5), worst, ok);

  // Full hidden-parameter path: both affine components come from the passport
  // function, so the loss gradient has to reach the shared kernel. Squaring
  // instead of relu keeps the composite smooth for the probe.
  const DT px = rnd({2, 1, 5, 5}, 970, -1.0, 1.0);
  const DT pg = rnd({1, 1, 5, 5}, 971, -1.0, 1.0);
  const DT pb = rnd({1, 1, 5, 5}, 972, -1.0, 1.0);
  const DT cw = rnd({4, 1, 3, 3}, 973, -0.6, 0.6);
  const DT hw = rnd({3, 4}, 974, -0.7, 0.7);
  const DT hb = rnd({3}, 975, -0.2, 0.2);
  const std::vector<int> plabels{0, 2};
  auto passport_net = [&](const DT& conv_w, const DT& wp, const DT& head_w) {
    DT a = nnpass::conv2d(px, conv_w, 1, 1);
    DT gamma = nnpass::reshape(nnpass::global_avg_pool(nnpass::conv2d(pg, wp, 1, 1)), {4});
    DT beta = nnpass::reshape(nnpass::global_avg_pool(nnpass::conv2d(pb, wp, 1, 1)), {4});
    DT h = nnpass::channel_affine(a, gamma, beta);
    DT sq = nnpass::mul(h, h);
    DT pooled = nnpass::global_avg_pool(sq);
    return nnpass::cross_entropy(nnpass::dense_affine(pooled, head_w, hb), plabels);
  };
  const DT wp0 = rnd({4, 1, 3, 3}, 976, -0.5, 0.5);
  probe("passport path into the hidden kernel",
        [&](const DT& x) { return passport_net(cw, x, hw); }, wp0, worst, ok);
  probe("passport path into the conv weight",
        [&](const DT& x) { return passport_net(x, wp0, hw); }, cw, worst, ok);
  probe("passport path into the head weight",
        [&](const DT& x) { return passport_net(cw, wp0, x); }, hw, worst, ok);

  std::cout << "  worst relative error = " << worst << "\n";
  CHECK(conclude(7, "gradients match finite differences to better than 1e-4", ok));
}

TEST_CASE("runs are bit-reproducible and checkpoints stay pure") {
  Bench& b = bench();
  VariantRun& first = b.v3[0];
  VariantRun again = train_protected(b.data, b.baselines[0], nnpass::ArchId::MiniNet,
                                     AffineKind::V3, run_master(0, AffineKind::V3));

  const std::string ckpt_a =
      nnpass::serialize_container(nnpass::checkpoint_container(first.model));
  const std::string ckpt_b =
      nnpass::serialize_container(nnpass::checkpoint_container(again.model));
  const std::string pass_a =
      nnpass::serialize_container(nnpass::passport_container(first.passport));
  const std::string pass_b =
      nnpass::serialize_container(nnpass::passport_container(again.passport));
  nlohmann::ordered_json ma, mb;
  ma["a_p"] = first.a_p;
  ma["a_o"] = b.a_o[0];
  ma["i"] = nnpass::compute_inconsistency(b.a_o[0], first.a_p);
  mb["a_p"] = again.a_p;
  mb["a_o"] = b.a_o[0];
  mb["i"] = nnpass::compute_inconsistency(b.a_o[0], again.a_p);
  const bool repeat_ok = ckpt_a == ckpt_b && pass_a == pass_b && ma.dump() == mb.dump();
  std::cout << "  retrained checkpoint " << (ckpt_a == ckpt_b ? "matches" : "differs") << ", "
            << "passport " << (pass_a == pass_b ? "matches" : "differs") << ", "
            << "metrics " << (ma.dump() == mb.dump() ? "match" : "differ") << "\n";

  // Round trip through disk, then compare forward outputs bit for bit.
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "nnpass-acceptance";
  fs::create_directories(dir);
  nnpass::save_checkpoint(first.model, (dir / "model.nnpp").string());
  nnpass::save_passport(first.passport, (dir / "passport.nnpp").string());
  Model reloaded = nnpass::load_checkpoint((dir / "model.nnpp").string());
  const PassportSet reloaded_pass = nnpass::load_passport((dir / "passport.nnpp").string());

  Tensor batch({8, 1, b.data.test.height, b.data.test.width});
  std::copy_n(b.data.test.image(0), batch.numel(), batch.data().begin());
  nnpass::ForwardOptions fo;
  fo.training = false;
  fo.passport = &first.passport;
  const Tensor out_orig = nnpass::forward(first.model, batch, fo);
  nnpass::ForwardOptions fr;
  fr.training = false;
  fr.passport = &reloaded_pass;
  const Tensor out_reload = nnpass::forward(reloaded, batch, fr);
  const bool roundtrip_ok = out_orig.data() == out_reload.data();
  std::cout << "  reloaded forward pass is " << (roundtrip_ok ? "bit-identical" : "different")
            << "\n";

  // Derived scales and shifts must never be written out.
  bool pure = true;
  const nnpass::Container c = nnpass::checkpoint_container(first.model);
  for (int l = 0; l < 2; ++l) {
    pure = pure && !c.has("aff" + std::to_string(l) + ".gamma") &&
           !c.has("aff" + std::to_string(l) + ".beta");
  }
  const nnpass::Container cv1 = nnpass::checkpoint_container(b.v1[0].model);
  pure = pure && !cv1.has("aff0.gamma") && cv1.has("aff0.beta");
  std::cout << "  checkpoints carry " << (pure ? "no" : "SOME") << " derived parameters\n";

  const bool ok = repeat_ok && roundtrip_ok && pure;
  CHECK(conclude(8, "same-seed runs serialize identically and round-trip bit-exactly", ok));
}

TEST_CASE("reported metrics satisfy their defining identities") {
  Bench& b = bench();
  VariantRun& run = b.v3[0];
  AttackConfig ac;
  ac.kind = AttackKind::FakeT1;
  ac.num_trials = 10;
  ac.seed = 424242;
  const nnpass::AttackReport rep =
      nnpass::fake_passport_attack(run.model, b.data.test, run.passport, nullptr, {}, ac);

  const double i = nnpass::compute_inconsistency(b.a_o[0], run.a_p);
  const double s = nnpass::compute_strength(run.a_p, rep.mean);
  const double gap_i = std::abs((i + run.a_p) - b.a_o[0]);
  const double gap_s = std::abs((s + rep.mean) - run.a_p);
  std::cout << "  |I + A_p - A_o| = " << gap_i << ", |S + A_t - A_p| = " << gap_s << "\n";
  const bool ok = gap_i <= 1e-9 && gap_s <= 1e-9;
  CHECK(conclude(9, "I + A_p equals A_o and S + A_t equals A_p within 1e-9", ok));
}
