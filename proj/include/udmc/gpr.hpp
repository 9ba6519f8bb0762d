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

#ifndef UDMC__GPR_HPP_
#define UDMC__GPR_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "udmc/common.hpp"
#include "udmc/types.hpp"

namespace udmc
{

/// Thrown when the training set is too small.
class TooFewRecords : public std::runtime_error
{
public:
  explicit TooFewRecords(const std::string & what) : std::runtime_error(what) {}
};

/// Thrown when the Gram matrix stays indefinite at the maximum jitter.
class SingularGram : public std::runtime_error
{
public:
  explicit SingularGram(const std::string & what) : std::runtime_error(what) {}
};

/// Thrown when a record or window has the wrong size.
class DimensionMismatch : public std::runtime_error
{
public:
  explicit DimensionMismatch(const std::string & what) : std::runtime_error(what) {}
};

inline constexpr int kHistorySteps = 15;
inline constexpr int kFutureSteps = 10;
inline constexpr int kStateFeatures = 5;   ///< x, y, phi, vx, vy per history step
inline constexpr int kPoseFeatures = 3;    ///< x, y, phi per future step
inline constexpr int kGprInputDim = kHistorySteps * kStateFeatures;   // 75
inline constexpr int kGprOutputDim = kFutureSteps * kPoseFeatures;    // 30

/// Squared-exponential kernel on a squared distance.
inline double rbf_kernel(double d2, double beta, double length)
{
  return beta * beta * std::exp(-d2 / (2.0 * length * length));
}

/// Stacks 15 consecutive states, oldest first, into a 75-dim raw input.
inline Eigen::VectorXd pack_history(const std::vector<VehicleState> & hist)
{
  if (static_cast<int>(hist.size()) != kHistorySteps) {
    throw DimensionMismatch("pack_history: expected 15 states");
  }
  Eigen::VectorXd z(kGprInputDim);
  for (int k = 0; k < kHistorySteps; ++k) {
    z(5 * k + 0) = hist[k].px;
    z(5 * k + 1) = hist[k].py;
    z(5 * k + 2) = hist[k].phi;
    z(5 * k + 3) = hist[k].vx;
    z(5 * k + 4) = hist[k].vy;
  }
  return z;
}

/// Stacks 10 future poses into a 30-dim raw output.
inline Eigen::VectorXd pack_future(const std::vector<VehicleState> & fut)
{
  if (static_cast<int>(fut.size()) != kFutureSteps) {
    throw DimensionMismatch("pack_future: expected 10 states");
  }
  Eigen::VectorXd y(kGprOutputDim);
  for (int k = 0; k < kFutureSteps; ++k) {
    y(3 * k + 0) = fut[k].px;
    y(3 * k + 1) = fut[k].py;
    y(3 * k + 2) = fut[k].phi;
  }
  return y;
}

/// Shifts a raw record into the frame anchored at the oldest history
/// position; returns that offset. Headings and velocities are unchanged.
inline Vec2 center_record(Eigen::VectorXd & input, Eigen::VectorXd * output)
{
  if (input.size() != kGprInputDim) {
    throw DimensionMismatch("center_record: input must have 75 entries");
  }
  const Vec2 offset(input(0), input(1));
  for (int k = 0; k < kHistorySteps; ++k) {
    input(5 * k + 0) -= offset.x();
    input(5 * k + 1) -= offset.y();
  }
  if (output != nullptr) {
    if (output->size() != kGprOutputDim) {
      throw DimensionMismatch("center_record: output must have 30 entries");
    }
    for (int k = 0; k < kFutureSteps; ++k) {
      (*output)(3 * k + 0) -= offset.x();
      (*output)(3 * k + 1) -= offset.y();
    }
  }
  return offset;
}

/// Raw, uncentered training records (rows).
struct TrajectoryDataset
{
  Eigen::MatrixXd inputs;   ///< m x 75
  Eigen::MatrixXd outputs;  ///< m x 30

  int size() const { return static_cast<int>(inputs.rows()); }

  void append(const Eigen::VectorXd & in, const Eigen::VectorXd & out)
  {
    if (in.size() != kGprInputDim || out.size() != kGprOutputDim) {
      throw DimensionMismatch("dataset: record has wrong dimensions");
    }
    inputs.conservativeResize(inputs.rows() + 1, kGprInputDim);
    outputs.conservativeResize(outputs.rows() + 1, kGprOutputDim);
    inputs.row(inputs.rows() - 1) = in.transpose();
    outputs.row(outputs.rows() - 1) = out.transpose();
  }
};

/// Slides a window over one trajectory and appends every complete record.
inline void append_trajectory(TrajectoryDataset & data, const std::vector<VehicleState> & traj)
{
  const int n = static_cast<int>(traj.size());
  for (int t = kHistorySteps - 1; t + kFutureSteps < n; ++t) {
    std::vector<VehicleState> hist(traj.begin() + (t - kHistorySteps + 1), traj.begin() + t + 1);
    std::vector<VehicleState> fut(traj.begin() + t + 1, traj.begin() + t + 1 + kFutureSteps);
    data.append(pack_history(hist), pack_future(fut));
  }
}

struct GpHyper
{
  double beta{1.0};
  double length{1.0};
  double noise{1e-2};
};

struct GpFitOptions
{
  int restarts{2};
  int max_iters{40};
  double step0{0.15};
  double grad_tol{1e-3};
  double jitter_floor{1e-8};  ///< relative to beta^2
  uint64_t seed{17};
};

/// Gaussian process predictor over 75-dim motion histories with independent
/// hyperparameters per output dimension.
class GpPredictor
{
public:
  struct Prediction
  {
    Eigen::VectorXd mean;      ///< 30, de-centered back to world frame
    Eigen::VectorXd variance;  ///< 30, non-negative
  };

  /// Builds the model for fixed hyperparameters.
  static GpPredictor with_hypers(
    const TrajectoryDataset & data, const std::vector<GpHyper> & hypers,
    double jitter_floor = 1e-8)
  {
    if (data.size() < 10) {
      throw TooFewRecords("gp: need at least 10 records");
    }
    if (static_cast<int>(hypers.size()) != kGprOutputDim) {
      throw DimensionMismatch("gp: expected one hyperparameter set per output dimension");
    }
    GpPredictor g;
    g.hp_ = hypers;
    g.jitter_floor_ = jitter_floor;
    g.center_training(data);
    g.factorize();
    return g;
  }

  /// Fits hyperparameters per output dimension by maximizing the log
  /// marginal likelihood with gradient ascent in log space.
  static GpPredictor fit(const TrajectoryDataset & data, const GpFitOptions & opt = {})
  {
    if (data.size() < 10) {
      throw TooFewRecords("gp: need at least 10 records");
    }
    GpPredictor g;
    g.jitter_floor_ = opt.jitter_floor;
    g.center_training(data);

    const int m = g.z_.rows();
    Eigen::MatrixXd d2(m, m);
    for (int i = 0; i < m; ++i) {
      d2(i, i) = 0.0;
      for (int j = i + 1; j < m; ++j) {
        const double v = (g.z_.row(i) - g.z_.row(j)).squaredNorm();
        d2(i, j) = v;
        d2(j, i) = v;
      }
    }
    const double d2_mean = d2.sum() / (static_cast<double>(m) * m);

    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> jig(-0.5, 0.5);

    g.hp_.resize(kGprOutputDim);
    for (int dim = 0; dim < kGprOutputDim; ++dim) {
      const Eigen::VectorXd y = g.y_.col(dim);
      const double y_std = std::max(std::sqrt(y.squaredNorm() / m - sq(y.mean())), 1e-4);

      double best_lml = -std::numeric_limits<double>::infinity();
      GpHyper best;
      for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        Eigen::Vector3d th;  // log beta, log length, log noise
        th << std::log(y_std), 0.5 * std::log(std::max(d2_mean, 1e-6)),
          std::log(std::max(1e-3 * y_std, 1e-6));
        if (r > 0) {
          th(0) += jig(rng);
          th(1) += jig(rng) * 2.0;
          th(2) += jig(rng);
        }
        const auto [lml, hyper] = g.ascend(d2, y, th, opt);
        if (lml > best_lml) {
          best_lml = lml;
          best = hyper;
        }
      }
      g.hp_[dim] = best;
    }
    g.factorize();
    return g;
  }

  Prediction predict(const Eigen::VectorXd & raw_input) const
  {
    if (raw_input.size() != kGprInputDim) {
      throw DimensionMismatch("gp predict: input must have 75 entries");
    }
    Eigen::VectorXd z = raw_input;
    const Vec2 offset = center_record(z, nullptr);

    const int m = z_.rows();
    Eigen::VectorXd d2(m);
    for (int i = 0; i < m; ++i) {
      d2(i) = (z_.row(i).transpose() - z).squaredNorm();
    }

    Prediction out;
    out.mean.resize(kGprOutputDim);
    out.variance.resize(kGprOutputDim);
    Eigen::VectorXd k(m);
    for (int dim = 0; dim < kGprOutputDim; ++dim) {
      const GpHyper & h = hp_[dim];
      for (int i = 0; i < m; ++i) {
        k(i) = rbf_kernel(d2(i), h.beta, h.length);
      }
      out.mean(dim) = k.dot(alpha_.col(dim));
      const Eigen::VectorXd v = llt_[dim].solve(k);
      out.variance(dim) = std::max(0.0, sq(h.beta) - k.dot(v) + sq(h.noise));
    }
    for (int k2 = 0; k2 < kFutureSteps; ++k2) {
      out.mean(3 * k2 + 0) += offset.x();
      out.mean(3 * k2 + 1) += offset.y();
    }
    return out;
  }

  /// Predictive mean only; skips the per-dimension variance solves, which
  /// keeps per-tick closed-loop prediction cheap.
  Eigen::VectorXd predict_mean(const Eigen::VectorXd & raw_input) const
  {
    if (raw_input.size() != kGprInputDim) {
      throw DimensionMismatch("gp predict: input must have 75 entries");
    }
    Eigen::VectorXd z = raw_input;
    const Vec2 offset = center_record(z, nullptr);

    const int m = z_.rows();
    Eigen::VectorXd d2(m);
    for (int i = 0; i < m; ++i) {
      d2(i) = (z_.row(i).transpose() - z).squaredNorm();
    }

    Eigen::VectorXd mean(kGprOutputDim);
    Eigen::VectorXd k(m);
    for (int dim = 0; dim < kGprOutputDim; ++dim) {
      const GpHyper & h = hp_[dim];
      for (int i = 0; i < m; ++i) {
        k(i) = rbf_kernel(d2(i), h.beta, h.length);
      }
      mean(dim) = k.dot(alpha_.col(dim));
    }
    for (int k2 = 0; k2 < kFutureSteps; ++k2) {
      mean(3 * k2 + 0) += offset.x();
      mean(3 * k2 + 1) += offset.y();
    }
    return mean;
  }

  const std::vector<GpHyper> & hypers() const { return hp_; }
  int training_size() const { return static_cast<int>(z_.rows()); }

  void save(const std::string & path) const
  {
    nlohmann::json j;
    j["jitter_floor"] = jitter_floor_;
    j["hypers"] = nlohmann::json::array();
    for (const auto & h : hp_) {
      j["hypers"].push_back({{"beta", h.beta}, {"length", h.length}, {"noise", h.noise}});
    }
    const auto dump_matrix = [](const Eigen::MatrixXd & m) {
      nlohmann::json rows = nlohmann::json::array();
      for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) {
          row.push_back(m(i, c));
        }
        rows.push_back(std::move(row));
      }
      return rows;
    };
    j["z"] = dump_matrix(z_);
    j["y"] = dump_matrix(y_);
    std::ofstream out(path);
    if (!out) {
      throw ParseError("gp save: cannot write " + path);
    }
    out << j.dump();
  }

  static GpPredictor load(const std::string & path)
  {
    std::ifstream in(path);
    if (!in) {
      throw ParseError("gp load: cannot open " + path);
    }
    nlohmann::json j;
    in >> j;
    GpPredictor g;
    g.jitter_floor_ = j.at("jitter_floor").get<double>();
    for (const auto & jh : j.at("hypers")) {
      g.hp_.push_back(
        {jh.at("beta").get<double>(), jh.at("length").get<double>(), jh.at("noise").get<double>()});
    }
    if (static_cast<int>(g.hp_.size()) != kGprOutputDim) {
      throw DimensionMismatch("gp load: wrong hyperparameter count");
    }
    const auto read_matrix = [](const nlohmann::json & rows) {
      const int r = static_cast<int>(rows.size());
      const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
      Eigen::MatrixXd m(r, c);
      for (int i = 0; i < r; ++i) {
        for (int k = 0; k < c; ++k) {
          m(i, k) = rows[i][k].get<double>();
        }
      }
      return m;
    };
    g.z_ = read_matrix(j.at("z"));
    g.y_ = read_matrix(j.at("y"));
    if (g.z_.cols() != kGprInputDim || g.y_.cols() != kGprOutputDim || g.z_.rows() != g.y_.rows()) {
      throw DimensionMismatch("gp load: inconsistent matrices");
    }
    g.factorize();
    return g;
  }

private:
  void center_training(const TrajectoryDataset & data)
  {
    z_ = data.inputs;
    y_ = data.outputs;
    for (int i = 0; i < z_.rows(); ++i) {
      Eigen::VectorXd in = z_.row(i).transpose();
      Eigen::VectorXd out = y_.row(i).transpose();
      center_record(in, &out);
      z_.row(i) = in.transpose();
      y_.row(i) = out.transpose();
    }
  }

  /// Builds K for one output dimension, escalating jitter until the
  /// factorization succeeds.
  Eigen::LLT<Eigen::MatrixXd> factorize_dim(
    const Eigen::MatrixXd & d2, const GpHyper & h, double * jitter_used) const
  {
    const int m = d2.rows();
    Eigen::MatrixXd kmat(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        kmat(i, j) = rbf_kernel(d2(i, j), h.beta, h.length);
      }
    }
    double jitter = jitter_floor_ * sq(h.beta);
    const double jitter_max = 1e-2 * std::max(sq(h.beta), 1.0);
    while (true) {
      Eigen::MatrixXd ktry = kmat;
      ktry.diagonal().array() += sq(h.noise) + jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(ktry);
      if (llt.info() == Eigen::Success) {
        if (jitter_used != nullptr) {
          *jitter_used = jitter;
        }
        return llt;
      }
      if (jitter_floor_ <= 0.0 || jitter >= jitter_max) {
        throw SingularGram("gp: gram matrix is not positive definite at maximum jitter");
      }
      jitter = std::min(std::max(jitter * 10.0, 1e-12), jitter_max);
    }
  }

  void factorize()
  {
    const int m = z_.rows();
    Eigen::MatrixXd d2(m, m);
    for (int i = 0; i < m; ++i) {
      d2(i, i) = 0.0;
      for (int j = i + 1; j < m; ++j) {
        const double v = (z_.row(i) - z_.row(j)).squaredNorm();
        d2(i, j) = v;
        d2(j, i) = v;
      }
    }
    llt_.clear();
    alpha_.resize(m, kGprOutputDim);
    for (int dim = 0; dim < kGprOutputDim; ++dim) {
      llt_.push_back(factorize_dim(d2, hp_[dim], nullptr));
      alpha_.col(dim) = llt_.back().solve(y_.col(dim));
    }
  }

  /// Log marginal likelihood and its gradient in (log beta, log length,
  /// log noise) for one output dimension.
  std::pair<double, Eigen::Vector3d> lml_and_grad(
    const Eigen::MatrixXd & d2, const Eigen::VectorXd & y, const Eigen::Vector3d & th) const
  {
    const int m = d2.rows();
    const GpHyper h{std::exp(th(0)), std::exp(th(1)), std::exp(th(2))};

    Eigen::MatrixXd kf(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        kf(i, j) = rbf_kernel(d2(i, j), h.beta, h.length);
      }
    }
    Eigen::MatrixXd kmat = kf;
    const double jitter = jitter_floor_ * sq(h.beta);
    kmat.diagonal().array() += sq(h.noise) + jitter;

    Eigen::LLT<Eigen::MatrixXd> llt(kmat);
    if (llt.info() != Eigen::Success) {
      return {-std::numeric_limits<double>::infinity(), Eigen::Vector3d::Zero()};
    }
    const Eigen::VectorXd alpha = llt.solve(y);
    double log_det = 0.0;
    const auto & lmat = llt.matrixLLT();
    for (int i = 0; i < m; ++i) {
      log_det += std::log(lmat(i, i));
    }
    const double lml =
      -0.5 * y.dot(alpha) - log_det - 0.5 * m * std::log(2.0 * kPi);

    const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(m, m));
    const Eigen::MatrixXd gmat = alpha * alpha.transpose() - kinv;

    Eigen::Vector3d grad;
    grad(0) = (gmat.array() * kf.array()).sum();
    grad(1) = 0.5 * (gmat.array() * kf.array() * d2.array()).sum() / sq(h.length);
    grad(2) = sq(h.noise) * gmat.trace();
    return {lml, grad};
  }

  std::pair<double, GpHyper> ascend(
    const Eigen::MatrixXd & d2, const Eigen::VectorXd & y, Eigen::Vector3d th,
    const GpFitOptions & opt) const
  {
    auto [f, g] = lml_and_grad(d2, y, th);
    double step = opt.step0;
    for (int it = 0; it < opt.max_iters; ++it) {
      if (!std::isfinite(f)) {
        break;
      }
      if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
        break;
      }
      Eigen::Vector3d dir = g;
      const double norm = dir.norm();
      if (norm > 1.0) {
        dir /= norm;
      }
      bool accepted = false;
      for (int half = 0; half < 8; ++half) {
        const Eigen::Vector3d cand = th + step * dir;
        const auto [fc, gc] = lml_and_grad(d2, y, cand);
        if (fc > f) {
          th = cand;
          f = fc;
          g = gc;
          step = std::min(step * 1.3, 1.0);
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        break;
      }
    }
    return {f, GpHyper{std::exp(th(0)), std::exp(th(1)), std::exp(th(2))}};
  }

  Eigen::MatrixXd z_;  ///< centered training inputs, m x 75
  Eigen::MatrixXd y_;  ///< centered training outputs, m x 30
  std::vector<GpHyper> hp_;
  Eigen::MatrixXd alpha_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt_;
  double jitter_floor_{1e-8};
};

/// Constant-velocity fallback: extrapolates the newest state over the
/// prediction horizon when no model or history is available.
inline Eigen::VectorXd constant_velocity_prediction(const VehicleState & s, double ts)
{
  Eigen::VectorXd out(kGprOutputDim);
  const double vx_w = s.vx * std::cos(s.phi) - s.vy * std::sin(s.phi);
  const double vy_w = s.vy * std::cos(s.phi) + s.vx * std::sin(s.phi);
  for (int k = 0; k < kFutureSteps; ++k) {
    const double t = (k + 1) * ts;
    out(3 * k + 0) = s.px + vx_w * t;
    out(3 * k + 1) = s.py + vy_w * t;
    out(3 * k + 2) = s.phi;
  }
  return out;
}

}  // namespace udmc

#endif  // UDMC__GPR_HPP_
