#pragma once

// Finite-difference gradient checks.
//
// A check is a generic callable `f(Tape<U>&, const std::vector<Var<U>>&)`
// returning a Var<U>. The analytic gradient is taken in the precision under
// test; the finite-difference oracle always evaluates the same callable in
// 64-bit with central differences. Non-scalar outputs are reduced with a
// fixed random projection.
//
// A difference whose +h or -h evaluation flips any relu relative to the
// base point straddles a kink. The step is shrunk by 10 up to three times;
// coordinates that still straddle one are skipped and counted.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "pmtk/autograd.hpp"
#include "pmtk/rng.hpp"

namespace pmtk::gradcheck {

struct CheckResult {
  double rel_err = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t coords = 0;
  std::size_t shrunk = 0;   // coordinates evaluated with a reduced step
  std::size_t skipped = 0;  // coordinates left out at a kink
};

inline constexpr double kFdStep = 1e-6;

template <typename T>
constexpr double tolerance() {
  return std::is_same_v<T, float> ? 1e-3 : 1e-6;
}

namespace detail {

template <typename U>
Tensor<U> cast(const Tensor<double>& t) {
  return t.template cast<U>();
}

template <typename U, typename F>
Var<U> scalar_loss(Tape<U>& tape, F& f, const std::vector<Var<U>>& vars, const Tensor<double>* probe) {
  Var<U> out = f(tape, vars);
  if (probe == nullptr) return out;
  return sum(mul(out, tape.constant(cast<U>(*probe))));
}

// Loss in 64-bit; `active` receives the sign pattern of every relu output.
template <typename F>
double eval64(F& f, const std::vector<Tensor<double>>& inputs, const Tensor<double>* probe,
              std::vector<bool>* active = nullptr) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const double loss = scalar_loss(tape, f, vars, probe).value().item();
  if (active != nullptr) {
    active->clear();
    for (std::size_t id = 0; id < tape.size(); ++id) {
      const Var<double> v(&tape, id);
      if (tape.op_name(v) != "relu") continue;
      for (double x : tape.value(v).data()) active->push_back(x > 0.0);
    }
  }
  return loss;
}

}  // namespace detail

// Checks d f / d inputs at the given point. `fraction` < 1 samples that share
// of coordinates (at least one per input) with rng.
template <typename T, typename F>
CheckResult check(F f, std::vector<Tensor<double>> inputs, Rng& rng, double fraction = 1.0, double step = kFdStep) {
  // Round the point to T so both precisions see the same inputs.
  for (auto& t : inputs) t = t.template cast<T>().template cast<double>();

  Tensor<double> probe;
  bool reduce = false;
  {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    const Tensor<double>& out = f(tape, vars).value();
    if (out.size() != 1) {
      reduce = true;
      probe = random_uniform<double>(out.shape(), rng, -1.0, 1.0);
    }
  }
  const Tensor<double>* probe_ptr = reduce ? &probe : nullptr;

  Tape<T> tape;
  std::vector<Var<T>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(detail::cast<T>(t)));
  tape.backward(detail::scalar_loss(tape, f, vars, probe_ptr));

  std::vector<bool> base, plus, minus;
  detail::eval64(f, inputs, probe_ptr, &base);

  double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
  CheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<T> g = tape.grad(vars[i]);
    const std::size_t n = inputs[i].size();
    std::vector<std::size_t> coords;
    if (fraction >= 1.0) {
      coords.resize(n);
      for (std::size_t j = 0; j < n; ++j) coords[j] = j;
    } else {
      const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
      for (std::size_t j = 0; j < k; ++j) coords.push_back(rng.index(n));
    }
    for (std::size_t j : coords) {
      const double x0 = inputs[i][j];
      double h = step, numeric = 0.0;
      bool smooth = false;
      for (int tries = 0; tries < 4 && !smooth; ++tries, h /= 10.0) {
        inputs[i][j] = x0 + h;
        const double fp = detail::eval64(f, inputs, probe_ptr, &plus);
        inputs[i][j] = x0 - h;
        const double fm = detail::eval64(f, inputs, probe_ptr, &minus);
        numeric = (fp - fm) / (2.0 * h);
        smooth = plus == base && minus == base;
        if (smooth && tries > 0) ++r.shrunk;
      }
      inputs[i][j] = x0;
      if (!smooth) {
        ++r.skipped;
        continue;
      }
      const double analytic = g[j];
      diff2 += (analytic - numeric) * (analytic - numeric);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
      ++r.coords;
    }
  }
  const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), 1e-12});
  r.rel_err = std::sqrt(diff2) / denom;
  return r;
}

struct FamilyResult {
  std::string family;
  double max_rel_err = 0.0;
  std::size_t checks = 0;
  std::size_t coords = 0;
  std::size_t skipped = 0;
  bool pass = false;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  bool fast = false;         // skip the full-model check and shrink the rest
  bool full_model = true;
  double model_fraction = 0.01;
};

// One row per op family, in a fixed order.
template <typename T>
std::vector<FamilyResult> run_suite(const SuiteOptions& opt);

}  // namespace pmtk::gradcheck
