#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sslink/error.hpp"
#include "sslink/session.hpp"

namespace sslink::jam {

enum class Direction { increasing, decreasing };

/// One Table-2 row: the power that broke the link at a dwell time, found by
/// stepping power up and by stepping it down.
struct JamMeasurement {
  double dwell_s = 0.0;
  double power_increasing_dbm = 0.0;
  double power_decreasing_dbm = 0.0;

  double power(Direction d) const { return d == Direction::increasing ? power_increasing_dbm : power_decreasing_dbm; }
};

inline constexpr const char* kCsvHeader = "dwell_s,power_dbm_increasing,power_dbm_decreasing";

inline std::vector<JamMeasurement> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::io, "empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw Error(Errc::io, "unexpected CSV header: " + line);
  std::vector<JamMeasurement> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    JamMeasurement m;
    char c1 = 0, c2 = 0;
    std::istringstream ss(line);
    if (!(ss >> m.dwell_s >> c1 >> m.power_increasing_dbm >> c2 >> m.power_decreasing_dbm) || c1 != ',' || c2 != ',')
      throw Error(Errc::io, "CSV line " + std::to_string(lineno) + ": expected three numbers");
    if (m.dwell_s <= 0.0) throw Error(Errc::io, "CSV line " + std::to_string(lineno) + ": dwell must be positive");
    out.push_back(m);
  }
  return out;
}

inline void write_csv(std::ostream& out, const std::vector<JamMeasurement>& rows) {
  out << kCsvHeader << '\n';
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%.2f,%.2f\n", r.dwell_s, r.power_increasing_dbm, r.power_decreasing_dbm);
    out << buf;
  }
}

/// y = y0 + A1 exp(-(x - x0)/t1) + A2 exp(-(x - x0)/t2)
struct FitCoefficients {
  double y0 = 0.0;
  double x0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double t1 = 1.0;
  double t2 = 1.0;
};

inline double evaluate_fit(const FitCoefficients& c, double x) {
  return c.y0 + c.a1 * std::exp(-(x - c.x0) / c.t1) + c.a2 * std::exp(-(x - c.x0) / c.t2);
}

struct FitResult {
  FitCoefficients coefficients;
  std::vector<double> x;
  std::vector<double> residuals;  // y - fit
  double rms = 0.0;
  int iterations = 0;
  bool rank_deficient = false;
};

struct FitOptions {
  int max_iterations = 500;
  double tolerance = 1e-12;  // relative change in the sum of squares
};

namespace detail {

inline double sse(const FitCoefficients& c, const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - evaluate_fit(c, x[i]);
    s += r * r;
  }
  return s;
}

}  // namespace detail

/// Gauss-Newton with step halving, x0 held at 0.
inline FitResult fit_double_exponential(const std::vector<double>& x, const std::vector<double>& y,
                                        const FitOptions& opt = {}) {
  if (x.size() != y.size()) throw Error(Errc::invalid_argument, "x and y differ in length");
  if (x.size() < 6)
    throw Error(Errc::precondition, "need at least 6 points, got " + std::to_string(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(Errc::invalid_argument, "non-finite data");

  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  FitCoefficients c;
  c.y0 = *lo;
  c.a1 = c.a2 = (*hi - *lo) / 2.0;
  c.t1 = 0.1;
  c.t2 = 0.5;

  FitResult res;
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd jac(n, 4 + 1);
  Eigen::VectorXd r(n);
  double s = detail::sse(c, x, y);
  bool converged = false;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    res.iterations = it;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      const double e1 = std::exp(-xi / c.t1);
      const double e2 = std::exp(-xi / c.t2);
      jac(i, 0) = 1.0;
      jac(i, 1) = e1;
      jac(i, 2) = e2;
      jac(i, 3) = c.a1 * e1 * xi / (c.t1 * c.t1);
      jac(i, 4) = c.a2 * e2 * xi / (c.t2 * c.t2);
      r(i) = y[static_cast<std::size_t>(i)] - evaluate_fit(c, xi);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
    if (qr.rank() < jac.cols()) res.rank_deficient = true;
    const Eigen::VectorXd step = qr.solve(r);
    if (!step.allFinite()) throw Error(Errc::divergence, "non-finite Gauss-Newton step");

    double lambda = 1.0;
    FitCoefficients next;
    double s_next = std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h, lambda *= 0.5) {
      next = c;
      next.y0 += lambda * step(0);
      next.a1 += lambda * step(1);
      next.a2 += lambda * step(2);
      next.t1 += lambda * step(3);
      next.t2 += lambda * step(4);
      if (next.t1 <= 0.0 || next.t2 <= 0.0) continue;
      s_next = detail::sse(next, x, y);
      if (std::isfinite(s_next) && s_next <= s) break;
    }
    if (!(s_next <= s)) {
      converged = true;  // no descent along the Gauss-Newton direction: stationary
      break;
    }
    const double change = (s - s_next) / std::max(s, 1e-300);
    c = next;
    s = s_next;
    if (change < opt.tolerance || s < 1e-24) {
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(Errc::divergence, "no convergence in " + std::to_string(opt.max_iterations) + " iterations");
  if (!std::isfinite(s)) throw Error(Errc::divergence, "fit diverged");

  res.coefficients = c;
  res.x = x;
  for (std::size_t i = 0; i < x.size(); ++i) res.residuals.push_back(y[i] - evaluate_fit(c, x[i]));
  res.rms = std::sqrt(s / static_cast<double>(x.size()));
  return res;
}

inline FitResult fit_double_exponential(const std::vector<JamMeasurement>& data, Direction d = Direction::increasing,
                                        const FitOptions& opt = {}) {
  std::vector<double> x, y;
  for (const auto& m : data) {
    x.push_back(m.dwell_s);
    y.push_back(m.power(d));
  }
  return fit_double_exponential(x, y, opt);
}

inline void write_fit_report(std::ostream& out, const FitResult& f, const std::vector<double>& y) {
  const auto& c = f.coefficients;
  char buf[160];
  out << "model: y = y0 + A1*exp(-(x-x0)/t1) + A2*exp(-(x-x0)/t2)\n";
  std::snprintf(buf, sizeof buf, "y0 = %.6f\nx0 = %.6f\nA1 = %.6f\nA2 = %.6f\nt1 = %.6f\nt2 = %.6f\n", c.y0, c.x0,
                c.a1, c.a2, c.t1, c.t2);
  out << buf;
  out << "iterations = " << f.iterations << '\n';
  if (f.rank_deficient) out << "warning: Jacobian rank deficient, parameters not identifiable\n";
  out << "x,y,y_fit,residual\n";
  for (std::size_t i = 0; i < f.x.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%g,%.4f,%.4f,%.4f\n", f.x[i], y[i], evaluate_fit(c, f.x[i]), f.residuals[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "rms = %.6f\n", f.rms);
  out << buf;
}

inline void write_plot_csv(std::ostream& out, const FitCoefficients& c, double x_lo, double x_hi, double dx = 0.01) {
  out << "x,y_fit\n";
  char buf[64];
  const auto steps = static_cast<long>(std::llround((x_hi - x_lo) / dx));
  for (long i = 0; i <= steps; ++i) {
    const double x = x_lo + static_cast<double>(i) * dx;
    std::snprintf(buf, sizeof buf, "%.4f,%.6f\n", x, evaluate_fit(c, x));
    out << buf;
  }
}

struct SweepOptions {
  sim::SessionConfig base;
  double power_step_db = 0.5;
  double power_min_dbm = -30.0;
  double power_max_dbm = 5.0;
  double window_s = 5.0;
  double arrival_s = 1.0;       // jammer reaches the link channel
  double loss_threshold = 0.5;  // fraction of DATA frames lost under the jammer
  int trials = 3;               // seeded sessions pooled per power level
};

struct TrialResult {
  int frames = 0;  // DATA frames whose airtime midpoint fell inside the jammer's stay on the link channel
  int lost = 0;  // no ACK came back for it
  bool failed = false;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// One session window with diversion off and the jammer sweeping through the
/// link channel. Only frames on air while the jammer occupies the link channel
/// count; elsewhere the link is untouched by construction.
inline TrialResult run_trial(const SweepOptions& opt, double dwell_s, double power_dbm, std::uint64_t seed) {
  auto cfg = opt.base;
  cfg.seed = seed;
  cfg.link.diversion = false;
  cfg.jammer.enabled = true;
  cfg.jammer.dwell_s = dwell_s;
  cfg.jammer.power_dbm = power_dbm;
  cfg.jammer.start_s = opt.arrival_s;
  auto order = phy::SweepJammer::ascending(cfg.plan.channel_count);
  std::rotate(order.begin(), order.begin() + cfg.link.initial_channel, order.end());
  cfg.jammer.order = order;

  sim::Session s(cfg);
  s.start();
  const double airtime = static_cast<double>(link::frame_bits(cfg.chars_per_frame)) / cfg.bit_rate;
  const auto chars = static_cast<std::size_t>(2.0 * opt.window_s / airtime) + 16;
  std::string text;
  const std::string_view pattern = "THE QUICK BROWN FOX 0123456789 ";
  for (std::size_t i = 0; i < chars; ++i) text += pattern[i % pattern.size()];
  s.type_text(cfg.node_a, text, 0.0);
  s.run_until(opt.window_s);

  TrialResult r;
  for (const auto& rec : s.data_records()) {
    if (rec.channel != cfg.link.initial_channel) continue;
    if (cfg.jammer.channel_at(0.5 * (rec.start + rec.end)) != rec.channel) continue;
    ++r.frames;
    if (!rec.acknowledged) ++r.lost;
  }
  r.failed = r.frames > 0 && static_cast<double>(r.lost) >= opt.loss_threshold * static_cast<double>(r.frames);
  return r;
}

/// Pools `opt.trials` seeded sessions at one power level.
inline TrialResult run_point(const SweepOptions& opt, double dwell_s, double power_dbm, std::uint64_t seed) {
  TrialResult total;
  for (int i = 0; i < std::max(1, opt.trials); ++i) {
    const auto r = run_trial(opt, dwell_s, power_dbm, mix_seed(seed, static_cast<std::uint64_t>(i)));
    total.frames += r.frames;
    total.lost += r.lost;
  }
  total.failed = total.frames > 0 &&
                 static_cast<double>(total.lost) >= opt.loss_threshold * static_cast<double>(total.frames);
  return total;
}

/// Stepped power search at one dwell time. Increasing: first failing power
/// climbing from the range minimum. Decreasing: last failing power descending
/// from the range maximum.
inline JamMeasurement measure_dwell(const SweepOptions& opt, double dwell_s, std::size_t index = 0) {
  if (dwell_s <= 0.0) throw Error(Errc::invalid_argument, "dwell time must be positive");
  if (opt.power_step_db <= 0.0) throw Error(Errc::precondition, "power step must be positive");
  if (!opt.base.jammer.enabled) throw Error(Errc::non_convergence, "jammer disabled: no power breaks the link");
  const auto steps = static_cast<long>(std::floor((opt.power_max_dbm - opt.power_min_dbm) / opt.power_step_db + 1e-9));
  auto seed_for = [&](int dir, long k) {
    return mix_seed(mix_seed(opt.base.seed, index), static_cast<std::uint64_t>(dir * 100000 + k));
  };
  char where[64];
  std::snprintf(where, sizeof where, "dwell %g s", dwell_s);

  JamMeasurement m;
  m.dwell_s = dwell_s;
  std::optional<double> up;
  for (long k = 0; k <= steps && !up; ++k) {
    const double p = opt.power_min_dbm + static_cast<double>(k) * opt.power_step_db;
    if (run_point(opt, dwell_s, p, seed_for(0, k)).failed) {
      if (k == 0) throw Error(Errc::non_convergence, std::string(where) + ": link already fails at range minimum");
      up = p;
    }
  }
  if (!up) throw Error(Errc::non_convergence, std::string(where) + ": no power in range breaks the link");

  std::optional<double> down;
  for (long k = 0; k <= steps; ++k) {
    const double p = opt.power_max_dbm - static_cast<double>(k) * opt.power_step_db;
    if (!run_point(opt, dwell_s, p, seed_for(1, k)).failed) break;
    down = p;
  }
  if (!down) throw Error(Errc::non_convergence, std::string(where) + ": link survives the range maximum");
  m.power_increasing_dbm = *up;
  m.power_decreasing_dbm = *down;
  return m;
}

inline std::vector<JamMeasurement> run_sweep_experiment(
    const SweepOptions& opt, const std::vector<double>& dwells,
    const std::function<void(const JamMeasurement&)>& progress = {}) {
  if (dwells.empty()) throw Error(Errc::invalid_argument, "empty dwell list");
  std::vector<JamMeasurement> out;
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    out.push_back(measure_dwell(opt, dwells[i], i));
    if (progress) progress(out.back());
  }
  return out;
}

}  // namespace sslink::jam
