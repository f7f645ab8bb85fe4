#include "natseg/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "natseg/autograd.h"
#include "natseg/rng.h"

namespace natseg {
namespace {

thread_local KinkMonitor* g_monitor = nullptr;

struct Evaluation {
  double value = 0.0;
  bool finite = true;
  bool crossed_kink = false;
  std::string error;
};

Evaluation evaluate(const ScalarFn& f, const KinkMonitor& base) {
  Evaluation e;
  NoGradScope no_grad;
  KinkMonitor monitor(&base);
  try {
    Tensor out = f();
    e.value = static_cast<double>(out.item());
    e.finite = std::isfinite(e.value);
    if (!e.finite) e.error = "non-finite objective";
  } catch (const Error& ex) {
    e.finite = false;
    e.error = ex.what();
  }
  if (monitor.mismatched()) {
    e.finite = false;
    e.error = "graph structure changed under perturbation";
  }
  e.crossed_kink = monitor.crossed_kink();
  return e;
}

std::vector<std::int64_t> pick_coordinates(std::int64_t numel, int samples,
                                           Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel));
  std::iota(idx.begin(), idx.end(), 0);
  if (samples <= 0 || samples >= numel) return idx;
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(samples));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Standard deviation of the rounding noise in f near the current point.
// f is sampled at x + i * delta * d (i = 0..15, d a random sign vector); for
// smooth f the k-th differences of those samples are pure noise once
// delta^k terms vanish, and E[(D^k f)^2] = C(2k, k) * sigma^2. Orders 4..6
// are pooled by taking the largest estimate.
double measure_noise(const ScalarFn& f, const ParamList& params, const KinkMonitor& base,
                     double delta, Rng& rng) {
  constexpr int kPoints = 16;
  std::vector<std::vector<Real>> originals;
  std::vector<std::vector<Real>> signs;
  for (const auto& p : params) {
    auto d = p.tensor.data();
    originals.emplace_back(d.begin(), d.end());
    std::vector<Real> sg(d.size());
    for (Real& v : sg) v = rng.uniform() < 0.5 ? Real(-1) : Real(1);
    signs.push_back(std::move(sg));
  }
  std::vector<double> samples;
  for (int i = 0; i < kPoints; ++i) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor t = params[k].tensor;
      auto d = t.mutable_data();
      for (std::size_t j = 0; j < d.size(); ++j) {
        d[j] = static_cast<Real>(originals[k][j] + i * delta * signs[k][j]);
      }
    }
    const Evaluation e = evaluate(f, base);
    if (!e.finite || e.crossed_kink) break;
    samples.push_back(e.value);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    std::copy(originals[k].begin(), originals[k].end(), t.mutable_data().begin());
  }

  double sigma = 0.0;
  std::vector<double> diff = samples;
  double binom = 1.0;  // C(2k, k)
  for (int order = 1; order <= 6 && diff.size() > 1; ++order) {
    for (std::size_t i = 0; i + 1 < diff.size(); ++i) diff[i] = diff[i + 1] - diff[i];
    diff.pop_back();
    binom = binom * (2.0 * order) * (2.0 * order - 1) / (double(order) * order);
    if (order < 4) continue;
    double sq = 0.0;
    for (double v : diff) sq += v * v;
    sigma = std::max(sigma, std::sqrt(sq / static_cast<double>(diff.size()) / binom));
  }
  return sigma;
}

}  // namespace

KinkMonitor::KinkMonitor(double margin) : previous_(g_monitor), margin_(margin) {
  g_monitor = this;
}

KinkMonitor::KinkMonitor(const KinkMonitor* recorded)
    : previous_(g_monitor), recorded_(recorded), margin_(recorded->margin_) {
  g_monitor = this;
}

KinkMonitor::~KinkMonitor() { g_monitor = previous_; }

KinkMonitor* KinkMonitor::active() { return g_monitor; }

const std::uint8_t* KinkMonitor::observe(std::span<const Real> pre) {
  if (!recorded_) {
    std::vector<std::uint8_t> flags(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      flags[i] = static_cast<std::uint8_t>((pre[i] > 0 ? 1 : 0) |
                                           (std::abs(static_cast<double>(pre[i])) < margin_ ? 2 : 0));
    }
    calls_.push_back(std::move(flags));
    return nullptr;
  }
  const auto& calls = recorded_->calls_;
  if (cursor_ >= calls.size() || calls[cursor_].size() != pre.size()) {
    mismatched_ = true;
    return nullptr;
  }
  const auto& flags = calls[cursor_++];
  for (std::size_t i = 0; i < pre.size() && !crossed_; ++i) {
    if ((flags[i] & 2) && (pre[i] > 0) != ((flags[i] & 1) != 0)) crossed_ = true;
  }
  return flags.data();
}

GradCheckOptions GradCheckOptions::model_scope(std::uint64_t seed) {
  GradCheckOptions o;
  o.step = kRealBytes == 4 ? 1e-3 : 1e-5;
  o.samples_per_param = 2;
  o.seed = seed;
  return o;
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max(std::abs(analytic) + std::abs(numeric), floor);
}

GradCheckReport grad_check(const ScalarFn& f, const ParamList& params,
                           const GradCheckOptions& options) {
  if (options.step <= 0) throw ConfigError("grad_check: step must be > 0");
  GradCheckReport report;

  // Analytic pass.
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  KinkMonitor base(options.kink_margin);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor root = f();
    tape.backward(root);
  }

  Rng rng(options.seed);
  report.objective_noise = measure_noise(f, params, base, options.noise_probe_step, rng);
  bool ok = true;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<Real> analytic(t.grad().begin(), t.grad().end());
    double worst = 0.0;
    for (std::int64_t i : pick_coordinates(t.numel(), options.samples_per_param, rng)) {
      CoordinateCheck c;
      c.param = p.name;
      c.index = i;
      c.analytic = analytic[static_cast<std::size_t>(i)];

      auto data = t.mutable_data();
      const Real original = data[static_cast<std::size_t>(i)];
      const Real plus = static_cast<Real>(original + options.step);
      const Real minus = static_cast<Real>(original - options.step);
      data[static_cast<std::size_t>(i)] = plus;
      const Evaluation ep = evaluate(f, base);
      data[static_cast<std::size_t>(i)] = minus;
      const Evaluation em = evaluate(f, base);
      data[static_cast<std::size_t>(i)] = original;

      if (!ep.finite || !em.finite) {
        c.failure = !ep.error.empty() ? ep.error : em.error;
        ok = false;
      } else if (ep.crossed_kink || em.crossed_kink) {
        c.excluded = true;
        ++report.excluded;
      } else {
        // The perturbation actually applied, after rounding to Real.
        const double span = static_cast<double>(plus) - static_cast<double>(minus);
        c.numeric = (ep.value - em.value) / span;
        const double resolution =
            std::max(options.noise_ulps * std::numeric_limits<Real>::epsilon() *
                         (std::abs(ep.value) + std::abs(em.value)),
                     options.noise_sigmas * std::sqrt(2.0) * report.objective_noise) /
            span;
        const double floor = std::max(options.denom_floor, resolution / options.tolerance);
        c.error = relative_error(c.analytic, c.numeric, floor);
        worst = std::max(worst, c.error);
        ++report.checked;
        if (!(c.error <= options.tolerance)) ok = false;
      }
      report.coordinates.push_back(std::move(c));
    }
    report.per_parameter_errors.emplace_back(p.name, worst);
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  report.passed = ok && report.checked > 0;
  return report;
}

std::string GradCheckReport::render() const {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  for (const auto& [name, err] : per_parameter_errors) {
    os << "  " << name << "  max_rel_err=" << err << "\n";
  }
  const CoordinateCheck* worst = nullptr;
  for (const auto& c : coordinates) {
    if (c.failure.empty() && !c.excluded && (!worst || c.error > worst->error)) worst = &c;
  }
  if (worst) {
    os << "  worst " << worst->param << "[" << worst->index << "] analytic=" << worst->analytic
       << " numeric=" << worst->numeric << "\n";
  }
  for (const auto& c : coordinates) {
    if (!c.failure.empty()) {
      os << "  " << c.param << "[" << c.index << "] evaluation error: " << c.failure << "\n";
    }
  }
  os << "checked=" << checked << " excluded=" << excluded << " noise=" << objective_noise
     << " max_rel_err=" << max_relative_error << " " << (passed ? "PASS" : "FAIL")
     << "\n";
  return os.str();
}

}  // namespace natseg
