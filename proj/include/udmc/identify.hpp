// Copyright 2026 The udmc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UDMC__IDENTIFY_HPP_
#define UDMC__IDENTIFY_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "udmc/common.hpp"
#include "udmc/dynamics.hpp"
#include "udmc/types.hpp"

namespace udmc
{

/// Thrown when the log does not excite the lateral dynamics.
class InsufficientExcitation : public std::runtime_error
{
public:
  explicit InsufficientExcitation(const std::string & what) : std::runtime_error(what) {}
};

/// Thrown when the fit fails to reach a plausible parameter set.
class IdentificationDiverged : public std::runtime_error
{
public:
  explicit IdentificationDiverged(const std::string & what) : std::runtime_error(what) {}
};

/// One timestamped sample of an identification log.
struct LogRecord
{
  double t{0.0};
  VehicleState x;
  ControlInput u;
};

struct IdentifyOptions
{
  /// Vehicle mass is not identifiable from the one-step residual alone: the
  /// lateral rows are jointly homogeneous in (mass, kf, kr, iz), so any
  /// common scaling of the four leaves the model output unchanged. The mass
  /// is therefore taken as a known input and fixes that gauge.
  double mass{1700.0};
  double wheelbase{2.89};  ///< lf + lr, eliminates lr
  double huber_delta{1e-3};
  int max_iters{300};
  int min_records{50};
  double excitation_floor{1e-3};  ///< minimum stddev required of each control channel
  double diverged_tol{1.0};       ///< per-sample residual above this is a failed fit
  double kf_min{-4e5}, kf_max{-1e3};
  double kr_min{-4e5}, kr_max{-1e3};
  double lf_min{0.5}, lf_max{2.39};
  double iz_min{4e2}, iz_max{2e4};
};

struct IdentifyResult
{
  VehicleParams params;
  double residual{0.0};  ///< mean one-step L1 residual per sample
  int iterations{0};
};

namespace detail
{

inline double huber_l1(double r, double delta)
{
  const double a = std::abs(r);
  return a <= delta ? r * r / (2.0 * delta) : a - 0.5 * delta;
}

inline double sample_stddev(const std::vector<LogRecord> & log, const std::function<double(const LogRecord &)> & get)
{
  double mean = 0.0;
  for (const auto & r : log) {
    mean += get(r);
  }
  mean /= static_cast<double>(log.size());
  double var = 0.0;
  for (const auto & r : log) {
    var += sq(get(r) - mean);
  }
  return std::sqrt(var / static_cast<double>(log.size()));
}

}  // namespace detail

/// Fits (kf, kr, lf, iz) to a driving log by minimizing the Huber-smoothed
/// L1 norm of the one-step prediction residual. lr is eliminated through the
/// fixed wheelbase and the mass is a known input (see IdentifyOptions).
inline IdentifyResult identify_params(
  const std::vector<LogRecord> & log, double ts, const IdentifyOptions & opt = {})
{
  if (static_cast<int>(log.size()) < opt.min_records) {
    throw std::invalid_argument(
      "identify_params: need at least " + std::to_string(opt.min_records) + " records");
  }
  if (!(ts > 0.0)) {
    throw std::invalid_argument("identify_params: ts must be positive");
  }
  const double sd_a = detail::sample_stddev(log, [](const LogRecord & r) { return r.u.a; });
  const double sd_d = detail::sample_stddev(log, [](const LogRecord & r) { return r.u.delta; });
  if (sd_a < opt.excitation_floor || sd_d < opt.excitation_floor) {
    throw InsufficientExcitation("identify_params: control inputs do not vary enough");
  }

  // Normalized decision vector: (kf/1e5, kr/1e5, lf, iz/1e3).
  const std::array<double, 4> scale{1e5, 1e5, 1.0, 1e3};
  const std::array<double, 4> lo{
    opt.kf_min / scale[0], opt.kr_min / scale[1], opt.lf_min, opt.iz_min / scale[3]};
  const std::array<double, 4> hi{
    opt.kf_max / scale[0], opt.kr_max / scale[1], opt.lf_max, opt.iz_max / scale[3]};

  const auto make_params = [&](const std::array<double, 4> & th) {
    VehicleParams p;
    p.mass = opt.mass;
    p.kf = th[0] * scale[0];
    p.kr = th[1] * scale[1];
    p.lf = th[2];
    p.lr = opt.wheelbase - th[2];
    p.iz = th[3] * scale[3];
    return p;
  };

  const auto objective = [&](const std::array<double, 4> & th) {
    const VehicleParams p = make_params(th);
    double total = 0.0;
    for (size_t k = 0; k + 1 < log.size(); ++k) {
      VehicleState pred;
      try {
        pred = bicycle_step(log[k].x, log[k].u, p, ts);
      } catch (const DegenerateDenominator &) {
        return std::numeric_limits<double>::infinity();
      }
      const Vec6 r = to_vector(log[k + 1].x) - to_vector(pred);
      for (int c = 0; c < 6; ++c) {
        total += detail::huber_l1(r(c), opt.huber_delta);
      }
    }
    return total / static_cast<double>(log.size() - 1);
  };

  const auto l1_residual = [&](const std::array<double, 4> & th) {
    const VehicleParams p = make_params(th);
    double total = 0.0;
    for (size_t k = 0; k + 1 < log.size(); ++k) {
      const VehicleState pred = bicycle_step(log[k].x, log[k].u, p, ts);
      total += (to_vector(log[k + 1].x) - to_vector(pred)).lpNorm<1>();
    }
    return total / static_cast<double>(log.size() - 1);
  };

  const auto project = [&](std::array<double, 4> th) {
    for (int i = 0; i < 4; ++i) {
      th[i] = std::clamp(th[i], lo[i], hi[i]);
    }
    return th;
  };

  const auto fd_grad = [&](const std::array<double, 4> & th, double f0) {
    std::array<double, 4> g{};
    for (int i = 0; i < 4; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(th[i]));
      std::array<double, 4> tp = th, tm = th;
      tp[i] += h;
      tm[i] -= h;
      const double fp = objective(tp);
      const double fm = objective(tm);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        g[i] = 0.0;
        continue;
      }
      g[i] = (fp - fm) / (2.0 * h);
    }
    (void)f0;
    return g;
  };

  // Projected BFGS with backtracking line search from a few fixed starts.
  const std::array<std::array<double, 4>, 3> starts{
    std::array<double, 4>{-0.9, -0.9, opt.wheelbase * 0.5, 2.5},
    std::array<double, 4>{-1.5, -1.2, 1.2, 3.5},
    std::array<double, 4>{-0.6, -0.7, 1.7, 1.5}};

  std::array<double, 4> best_th = project(starts[0]);
  double best_f = std::numeric_limits<double>::infinity();
  int total_iters = 0;

  for (const auto & start : starts) {
    std::array<double, 4> th = project(start);
    double f = objective(th);
    if (!std::isfinite(f)) {
      continue;
    }
    std::array<double, 4> g = fd_grad(th, f);
    Eigen::Matrix4d hinv = Eigen::Matrix4d::Identity();

    for (int it = 0; it < opt.max_iters; ++it) {
      ++total_iters;
      Eigen::Vector4d gv(g[0], g[1], g[2], g[3]);
      Eigen::Vector4d d = -(hinv * gv);
      if (d.dot(gv) > -1e-18) {
        hinv.setIdentity();
        d = -gv;
      }

      double alpha = 1.0;
      std::array<double, 4> cand{};
      double fc = f;
      bool accepted = false;
      while (alpha >= 1e-12) {
        for (int i = 0; i < 4; ++i) {
          cand[i] = th[i] + alpha * d(i);
        }
        cand = project(cand);
        double dir = 0.0;
        for (int i = 0; i < 4; ++i) {
          dir += g[i] * (cand[i] - th[i]);
        }
        fc = objective(cand);
        if (std::isfinite(fc) && fc <= f + 1e-4 * dir) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        break;
      }

      const std::array<double, 4> g_new = fd_grad(cand, fc);
      Eigen::Vector4d s, y;
      for (int i = 0; i < 4; ++i) {
        s(i) = cand[i] - th[i];
        y(i) = g_new[i] - g[i];
      }
      const double sy = s.dot(y);
      if (sy > 1e-14 * s.norm() * y.norm()) {
        const Eigen::Matrix4d id = Eigen::Matrix4d::Identity();
        const Eigen::Matrix4d v = id - (s * y.transpose()) / sy;
        hinv = v * hinv * v.transpose() + (s * s.transpose()) / sy;
      }
      const bool tiny_step = s.lpNorm<Eigen::Infinity>() < 1e-13;
      const bool tiny_gain = (f - fc) < 1e-17 * (1.0 + std::abs(f));
      th = cand;
      f = fc;
      g = g_new;
      if (tiny_step || tiny_gain) {
        break;
      }
    }

    if (f < best_f) {
      best_f = f;
      best_th = th;
    }
    if (best_f < 1e-10) {
      break;
    }
  }

  if (!std::isfinite(best_f)) {
    throw IdentificationDiverged("identify_params: objective did not evaluate to a finite value");
  }
  IdentifyResult res;
  res.params = make_params(best_th);
  res.residual = l1_residual(best_th);
  res.iterations = total_iters;
  if (!(res.residual < opt.diverged_tol)) {
    throw IdentificationDiverged(
      "identify_params: residual " + std::to_string(res.residual) + " exceeds tolerance");
  }
  res.params.validate();
  return res;
}

}  // namespace udmc

#endif  // UDMC__IDENTIFY_HPP_
