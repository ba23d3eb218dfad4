#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "nnpass/io.hpp"
#include "nnpass/parallel.hpp"
#include "nnpass/passport_gen.hpp"
#include "nnpass/stats.hpp"
#include "nnpass/train.hpp"

namespace nnpass {

struct VerdictThresholds {
  double tau_d = 1.0;
  double tau_s = 50.0;
  double epsilon_match = 2.0;
};

inline void check_percentage(double v, const char* what) {
  if (!(v >= 0.0 && v <= 100.0))
    throw RangeError(std::string(what) + " must lie in [0,100], got " + std::to_string(v));
}

inline double compute_inconsistency(double a_o, double a_p) {
  check_percentage(a_o, "baseline accuracy");
  check_percentage(a_p, "valid-passport accuracy");
  return a_o - a_p;
}

inline double compute_strength(double a_p, double a_t) {
  check_percentage(a_p, "valid-passport accuracy");
  check_percentage(a_t, "attacked accuracy");
  return a_p - a_t;
}

struct Verdict {
  bool functionality_preserving = false;
  bool well_protected = false;
};

inline Verdict classify_protection(double inconsistency, double strength,
                                   const VerdictThresholds& th) {
  Verdict v;
  v.functionality_preserving = std::abs(inconsistency) < th.tau_d;
  v.well_protected = strength > th.tau_s;
  return v;
}

struct MetricsRecord {
  double a_o = 0.0, a_p = 0.0, a_t = 0.0;
  double inconsistency = 0.0;
  double strength = 0.0;
  double trial_mean = 0.0, trial_std = 0.0;
  int trial_count = 0;
};

struct SignatureCurve {
  std::vector<double> c_grid;
  std::vector<double> mean;
  std::vector<double> stddev;
  uint64_t noise_master_seed = 0;
  int seeds_per_point = 0;
};

inline std::vector<double> default_curve_grid() { return {0.0, 0.1, 0.25, 0.5, 0.75, 1.0}; }

// Accuracy as a function of how much of the passport is corrupted. The c=0
// point is the exact valid-passport accuracy; deeper corruption is averaged
// over fresh noise seeds derived from the master seed, so a verifier holding
// the master seed reproduces the exact evaluations.
inline SignatureCurve signature_curve(Model& m, const PassportSet& passport, const Dataset& test_set,
                                      const std::vector<double>& c_grid, int seeds_per_point,
                                      uint64_t noise_master_seed) {
  if (c_grid.empty() || c_grid.front() != 0.0)
    throw RangeError("corruption grid must start at 0");
  if (!std::is_sorted(c_grid.begin(), c_grid.end()))
    throw RangeError("corruption grid must be sorted ascending");
  if (c_grid.back() > 1.0) throw RangeError("corruption fractions must lie in [0,1]");
  if (seeds_per_point < 1) throw RangeError("need at least one noise seed per grid point");
  SignatureCurve curve;
  curve.c_grid = c_grid;
  curve.noise_master_seed = noise_master_seed;
  curve.seeds_per_point = seeds_per_point;
  SeedTree seeds(noise_master_seed);
  for (size_t ci = 0; ci < c_grid.size(); ++ci) {
    const double c = c_grid[ci];
    if (c == 0.0) {
      const double a = evaluate_accuracy(m, test_set, &passport);
      curve.mean.push_back(a);
      curve.stddev.push_back(0.0);
      continue;
    }
    std::vector<double> accs(static_cast<size_t>(seeds_per_point), 0.0);
    parallel_for(seeds_per_point, [&](int s) {
      const uint64_t noise_seed =
          seeds.derive("curve-c" + std::to_string(ci) + "-s" + std::to_string(s));
      PassportSet perturbed = perturb_passport(passport, c, noise_seed);
      accs[static_cast<size_t>(s)] = evaluate_accuracy(m, test_set, &perturbed);
    });
    curve.mean.push_back(mean_of(accs));
    curve.stddev.push_back(sample_std(accs));
  }
  return curve;
}

// Swaps whatever affine parameters the suspect currently holds for the
// passport-function structure of the claimed variant. Components the variant
// trains keep the suspect's values; derived components are deleted, so the
// model only works again when fed a passport.
inline void restore_passport_functions(Model& suspect, AffineKind claimed) {
  if (claimed == AffineKind::BN)
    throw VerificationError("claimed kind must be a passport variant");
  if (suspect.affines.empty())
    throw VerificationError("suspect model has no affine layers to restore");
  for (auto& a : suspect.affines) {
    Tensor cur_gamma = a.hijacked ? a.free_gamma : a.gamma;
    Tensor cur_beta = a.hijacked ? a.free_beta : a.beta;
    a.kind = claimed;
    a.hijacked = false;
    a.free_gamma = Tensor();
    a.free_beta = Tensor();
    if (derives_gamma(claimed)) {
      a.gamma = Tensor();
    } else {
      if (!cur_gamma.defined())
        throw VerificationError("suspect model carries no scale values to keep");
      a.gamma = cur_gamma;
    }
    if (derives_beta(claimed)) {
      a.beta = Tensor();
    } else {
      if (!cur_beta.defined())
        throw VerificationError("suspect model carries no shift values to keep");
      a.beta = cur_beta;
    }
  }
}

struct VerificationEvidence {
  double recorded_valid = 0.0;
  double measured_valid = 0.0;
  bool valid_match = false;
  bool curve_checked = false;
  std::vector<double> measured_curve;
  double worst_curve_gap = 0.0;
  bool curve_match = false;
  bool positive = false;
};

// Two-stage check: the claimed passport must reproduce the recorded accuracy,
// and the corruption response must trace the recorded signature curve within
// its recorded spread.
inline VerificationEvidence verify_ownership(Model& suspect, const PassportSet& claimed,
                                             double recorded_mp, const SignatureCurve& recorded,
                                             const Dataset& test_set, const VerdictThresholds& th) {
  if (recorded.c_grid.empty() || recorded.c_grid.size() != recorded.mean.size() ||
      recorded.c_grid.size() != recorded.stddev.size())
    throw VerificationError("recorded signature curve is missing or malformed");
  if (th.epsilon_match <= 0.0) throw VerificationError("match tolerance must be positive");
  VerificationEvidence ev;
  ev.recorded_valid = recorded_mp;
  ev.measured_valid = evaluate_accuracy(suspect, test_set, &claimed);
  ev.valid_match = std::abs(ev.measured_valid - recorded_mp) <= th.epsilon_match;
  if (!ev.valid_match) {
    ev.positive = false;
    return ev;
  }
  const SignatureCurve measured =
      signature_curve(suspect, claimed, test_set, recorded.c_grid, recorded.seeds_per_point,
                      recorded.noise_master_seed);
  ev.curve_checked = true;
  ev.measured_curve = measured.mean;
  ev.curve_match = true;
  for (size_t i = 0; i < recorded.c_grid.size(); ++i) {
    const double gap = std::abs(measured.mean[i] - recorded.mean[i]);
    const double allowed = th.epsilon_match + 2.0 * recorded.stddev[i];
    ev.worst_curve_gap = std::max(ev.worst_curve_gap, gap);
    if (gap > allowed) ev.curve_match = false;
  }
  ev.positive = ev.valid_match && ev.curve_match;
  return ev;
}

// Fixed-width histogram over [0,100] with baseline/valid accuracy markers in
// comment rows, ready for plotting.
inline void export_histogram(const std::vector<double>& samples, double bin_width,
                             const std::string& path, double a_o, double a_p) {
  if (samples.empty()) throw DataError("histogram needs at least one sample");
  if (bin_width <= 0.0) throw RangeError("histogram bin width must be positive");
  const int bins = static_cast<int>(std::ceil(100.0 / bin_width));
  std::vector<long> counts(static_cast<size_t>(bins), 0);
  for (double v : samples) {
    check_percentage(v, "histogram sample");
    int b = static_cast<int>(v / bin_width);
    b = std::clamp(b, 0, bins - 1);
    ++counts[static_cast<size_t>(b)];
  }
  std::ostringstream out;
  out << "bin_left,bin_right,count\n";
  for (int b = 0; b < bins; ++b)
    out << b * bin_width << "," << std::min(100.0, (b + 1) * bin_width) << ","
        << counts[static_cast<size_t>(b)] << "\n";
  out << "# marker,A_o," << a_o << "\n";
  out << "# marker,A_p," << a_p << "\n";
  atomic_write_file(path, out.str());
}

}  // namespace nnpass
