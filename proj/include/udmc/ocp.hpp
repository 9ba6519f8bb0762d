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

#ifndef UDMC__OCP_HPP_
#define UDMC__OCP_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "udmc/common.hpp"
#include "udmc/dual.hpp"
#include "udmc/dynamics.hpp"
#include "udmc/pf_params.hpp"
#include "udmc/potential_field.hpp"
#include "udmc/reference.hpp"
#include "udmc/types.hpp"

namespace udmc
{

struct OcpConfig
{
  int horizon{10};
  double ts{0.05};
  // The lateral weight outpulls the steepest crossable-marking gradient
  // (2 a_CR b_CR = 10 per meter) at a full lane offset, so the controller
  // can re-cross a lane line instead of idling against it. The speed weight
  // outpulls the boundary-field transient of realigning from a stop, so a
  // restart with residual heading error does not deadlock.
  Vec6 q{(Vec6() << 1.0, 3.0, 0.5, 1.0, 0.1, 0.1).finished()};
  Vec2 r{0.1, 1.0};
  Vec2 rd{0.5, 5.0};
  double turn_penalty{5.0};    ///< position weight multiplier on penalty stages
  double state_penalty{50.0};  ///< soft state bound weight
  Bounds bounds{Bounds::defaults()};
  int max_iters{50};
  double tol_kkt{1e-4};
  double tol_step{1e-8};
  double merit_nu0{10.0};
  FieldOptions field;

  void validate() const
  {
    if (horizon < 1) {
      throw std::invalid_argument("ocp config: horizon must be at least 1");
    }
    if (!(ts > 0.0)) {
      throw std::invalid_argument("ocp config: ts must be positive");
    }
    for (int i = 0; i < 6; ++i) {
      if (q(i) < 0.0) {
        throw std::invalid_argument("ocp config: tracking weights must be non-negative");
      }
    }
    for (int i = 0; i < 2; ++i) {
      if (r(i) < 0.0 || rd(i) < 0.0) {
        throw std::invalid_argument("ocp config: control weights must be non-negative");
      }
    }
    bounds.validate();
  }
};

inline OcpConfig ocp_config_from_json(const nlohmann::json & j)
{
  OcpConfig c;
  c.horizon = j.value("horizon", c.horizon);
  c.ts = j.value("ts", c.ts);
  const auto read_vec = [&](const char * key, auto & out) {
    if (j.contains(key)) {
      const auto & arr = j.at(key);
      if (static_cast<int>(arr.size()) != out.size()) {
        throw ParseError(std::string("ocp config: wrong length for ") + key);
      }
      for (int i = 0; i < out.size(); ++i) {
        out(i) = arr[i].get<double>();
      }
    }
  };
  read_vec("q", c.q);
  read_vec("r", c.r);
  read_vec("rd", c.rd);
  read_vec("x_min", c.bounds.x_min);
  read_vec("x_max", c.bounds.x_max);
  read_vec("u_min", c.bounds.u_min);
  read_vec("u_max", c.bounds.u_max);
  c.turn_penalty = j.value("turn_penalty", c.turn_penalty);
  c.state_penalty = j.value("state_penalty", c.state_penalty);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.tol_kkt = j.value("tol_kkt", c.tol_kkt);
  c.tol_step = j.value("tol_step", c.tol_step);
  c.merit_nu0 = j.value("merit_nu0", c.merit_nu0);
  if (j.contains("pf_variant")) {
    const std::string v = j.at("pf_variant").get<std::string>();
    if (v == "circles") {
      c.field.variant = PFVariant::circles;
    } else if (v == "ellipse") {
      c.field.variant = PFVariant::ellipse;
    } else {
      throw ParseError("ocp config: unknown pf_variant " + v);
    }
  }
  c.field.include_ttc = j.value("include_ttc", c.field.include_ttc);
  c.validate();
  return c;
}

inline OcpConfig load_ocp_config(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw ParseError("ocp config: cannot open " + path);
  }
  nlohmann::json j;
  in >> j;
  return ocp_config_from_json(j);
}

enum class SolveStatus { converged, max_iters, infeasible };

inline const char * to_string(SolveStatus s)
{
  switch (s) {
    case SolveStatus::converged:
      return "converged";
    case SolveStatus::max_iters:
      return "max_iters";
    default:
      return "infeasible";
  }
}

struct IterTrace
{
  int iter{0};
  double cost{0.0};
  double merit{0.0};
  double kkt_stat{0.0};
  double kkt_feas{0.0};
  double alpha{0.0};
  double nu{0.0};
  double step_norm{0.0};
};

struct OcpSolution
{
  std::vector<VehicleState> x;  ///< size N+1, x[0] is the initial state
  std::vector<ControlInput> u;  ///< size N, u[k] drives x[k] to x[k+1]
  SolveStatus status{SolveStatus::max_iters};
  double cost{0.0};
  double kkt_stat{0.0};
  double kkt_feas{0.0};
  int iterations{0};
  std::vector<IterTrace> trace;
};

/// Potential-field-augmented model predictive controller solved with
/// sequential quadratic programming.
///
/// States at the shooting nodes are decision variables tied to the controls
/// through the dynamics defects; each iteration linearizes the defects,
/// condenses the quadratic model onto the controls, solves the resulting
/// dense system and runs a projected line search on an L1 merit function.
/// Trial points are re-rolled under the model so every accepted iterate
/// keeps the shooting defects at zero.
class SqpSolver
{
public:
  SqpSolver(const OcpConfig & cfg, const PFParams & pf, const VehicleParams & vp = {})
  : cfg_(cfg), pf_(pf), vp_(vp)
  {
    cfg_.validate();
    pf_.validate();
    vp_.validate();
  }

  const OcpConfig & config() const { return cfg_; }

  /// Stage tracking weights, sharpened on stages that request it.
  Vec6 stage_q(const PotentialScene & scene) const
  {
    Vec6 q = cfg_.q;
    if (scene.tracking_penalty) {
      q(0) *= cfg_.turn_penalty;
      q(1) *= cfg_.turn_penalty;
    }
    return q;
  }

  /// Full objective for a candidate trajectory; x has N+1 entries, u has N.
  double build_cost(
    const std::vector<VehicleState> & x, const std::vector<ControlInput> & u,
    const std::vector<ReferencePoint> & refs, const ObstacleHorizon & horizon) const
  {
    check_shapes(x, u, refs, horizon);
    const int n = cfg_.horizon;
    double total = 0.0;
    for (int tau = 1; tau <= n; ++tau) {
      const PotentialScene & scene = horizon.slices[tau - 1];
      const Vec6 q = stage_q(scene);
      const Vec6 e = to_vector(x[tau]) - to_vector(refs[tau].x);
      total += e.dot(q.asDiagonal() * e);
      total += total_field(scene, x[tau], pf_, cfg_.field);
      total += bound_penalty(to_vector(x[tau]));

      const Vec2 uv(u[tau - 1].a, u[tau - 1].delta);
      total += uv.dot(cfg_.r.asDiagonal() * uv);
      if (tau >= 2) {
        const Vec2 du = uv - Vec2(u[tau - 2].a, u[tau - 2].delta);
        total += du.dot(cfg_.rd.asDiagonal() * du);
      }
    }
    return total;
  }

  /// Analytic cost gradient with respect to all stage states (6N) and
  /// controls (2N), in that order.
  Eigen::VectorXd cost_gradient(
    const std::vector<VehicleState> & x, const std::vector<ControlInput> & u,
    const std::vector<ReferencePoint> & refs, const ObstacleHorizon & horizon) const
  {
    check_shapes(x, u, refs, horizon);
    const int n = cfg_.horizon;
    Eigen::VectorXd g(8 * n);
    for (int tau = 1; tau <= n; ++tau) {
      const PotentialScene & scene = horizon.slices[tau - 1];
      const Vec6 q = stage_q(scene);
      const Vec6 e = to_vector(x[tau]) - to_vector(refs[tau].x);
      Vec6 gx = 2.0 * (q.asDiagonal() * e);
      gx += field_gradient(scene, x[tau], pf_, cfg_.field);
      gx += bound_penalty_gradient(to_vector(x[tau]));
      g.segment<6>(6 * (tau - 1)) = gx;
    }
    const Eigen::MatrixXd hu = control_hessian();
    Eigen::VectorXd uvec(2 * n);
    for (int tau = 0; tau < n; ++tau) {
      uvec(2 * tau) = u[tau].a;
      uvec(2 * tau + 1) = u[tau].delta;
    }
    g.tail(2 * n) = hu * uvec;
    return g;
  }

  OcpSolution solve(
    const VehicleState & x0, const std::vector<ReferencePoint> & refs,
    const ObstacleHorizon & horizon, const OcpSolution * warm = nullptr,
    bool keep_trace = false) const
  {
    const int n = cfg_.horizon;
    if (static_cast<int>(refs.size()) < n + 1) {
      throw std::invalid_argument("ocp solve: need horizon+1 reference points");
    }
    if (static_cast<int>(horizon.slices.size()) != n) {
      throw std::invalid_argument("ocp solve: need one scene slice per stage");
    }

    OcpSolution sol;
    init_guess(x0, warm, sol);

    const Eigen::MatrixXd hu = control_hessian();
    double nu = cfg_.merit_nu0;
    int consecutive_fails = 0;

    for (int it = 0; it < cfg_.max_iters; ++it) {
      sol.iterations = it + 1;

      // Defects and linearization.
      std::vector<Vec6> defect(n);
      std::vector<Mat66> amat(n);
      std::vector<Mat62> bmat(n);
      bool dynamics_ok = true;
      for (int tau = 1; tau <= n; ++tau) {
        try {
          const VehicleState pred = bicycle_step(sol.x[tau - 1], sol.u[tau - 1], vp_, cfg_.ts);
          defect[tau - 1] = to_vector(pred) - to_vector(sol.x[tau]);
          const auto [a, b] = linearize(sol.x[tau - 1], sol.u[tau - 1], vp_, cfg_.ts);
          amat[tau - 1] = a;
          bmat[tau - 1] = b;
        } catch (const DegenerateDenominator &) {
          dynamics_ok = false;
          break;
        }
      }
      if (!dynamics_ok) {
        sol.status = SolveStatus::infeasible;
        break;
      }

      // Stage gradients and Gauss-Newton Hessians.
      Eigen::VectorXd gx(6 * n);
      std::vector<Mat66> hx(n);
      for (int tau = 1; tau <= n; ++tau) {
        const PotentialScene & scene = horizon.slices[tau - 1];
        const Vec6 q = stage_q(scene);
        const Vec6 e = to_vector(sol.x[tau]) - to_vector(refs[tau].x);
        Vec6 grad = 2.0 * (q.asDiagonal() * e);
        grad += field_gradient(scene, sol.x[tau], pf_, cfg_.field);
        grad += bound_penalty_gradient(to_vector(sol.x[tau]));
        gx.segment<6>(6 * (tau - 1)) = grad;
        hx[tau - 1] = (2.0 * q).asDiagonal();
        hx[tau - 1] += bound_penalty_hessian(to_vector(sol.x[tau]));
      }

      // Condense onto the controls: dx = S du + c.
      Eigen::MatrixXd smat = Eigen::MatrixXd::Zero(6 * n, 2 * n);
      Eigen::VectorXd c(6 * n);
      for (int tau = 1; tau <= n; ++tau) {
        const int row = 6 * (tau - 1);
        if (tau > 1) {
          smat.block(row, 0, 6, 2 * (tau - 1)) =
            amat[tau - 1] * smat.block(row - 6, 0, 6, 2 * (tau - 1));
          c.segment<6>(row) = amat[tau - 1] * c.segment<6>(row - 6) + defect[tau - 1];
        } else {
          c.segment<6>(row) = defect[0];
        }
        smat.block(row, 2 * (tau - 1), 6, 2) = bmat[tau - 1];
      }

      Eigen::MatrixXd w = smat;
      for (int tau = 0; tau < n; ++tau) {
        w.middleRows(6 * tau, 6) = hx[tau] * smat.middleRows(6 * tau, 6);
      }
      Eigen::VectorXd uvec(2 * n);
      for (int tau = 0; tau < n; ++tau) {
        uvec(2 * tau) = sol.u[tau].a;
        uvec(2 * tau + 1) = sol.u[tau].delta;
      }
      Eigen::VectorXd gxc = gx;
      for (int tau = 0; tau < n; ++tau) {
        gxc.segment<6>(6 * tau) += hx[tau] * c.segment<6>(6 * tau);
      }
      const Eigen::VectorXd g = smat.transpose() * gxc + hu * uvec;
      Eigen::MatrixXd h = smat.transpose() * w + hu;
      h.diagonal().array() += 1e-9;

      const Eigen::VectorXd du = box_newton_step(h, g, uvec);

      // Convergence measures before stepping.
      double feas = 0.0, feas_l1 = 0.0;
      for (const auto & d : defect) {
        feas = std::max(feas, d.lpNorm<Eigen::Infinity>());
        feas_l1 += d.lpNorm<1>();
      }
      const double stat = projected_gradient_norm(uvec, g);
      sol.kkt_stat = stat;
      sol.kkt_feas = feas;
      if (stat <= cfg_.tol_kkt && feas <= cfg_.tol_kkt) {
        sol.status = SolveStatus::converged;
        if (keep_trace) {
          const double cost_now = build_cost(sol.x, sol.u, refs, horizon);
          sol.trace.push_back(
            {it, cost_now, cost_now + nu * feas_l1, stat, feas, 0.0, nu, 0.0});
        }
        break;
      }

      // Multiplier estimate sets the merit weight.
      double lambda_max = 0.0;
      {
        Vec6 lam = Vec6::Zero();
        for (int tau = n; tau >= 1; --tau) {
          lam = gxc.segment<6>(6 * (tau - 1)) +
                (tau < n ? Vec6(amat[tau].transpose() * lam) : Vec6(Vec6::Zero()));
          lambda_max = std::max(lambda_max, lam.lpNorm<Eigen::Infinity>());
        }
      }
      nu = std::max(nu, 1.5 * lambda_max + 1.0);

      const double cost0 = build_cost(sol.x, sol.u, refs, horizon);
      const double merit0 = cost0 + nu * feas_l1;
      const double pred_full = std::max(-g.dot(du) + nu * feas_l1, 1e-16);

      // Projected backtracking line search on the L1 merit.
      double alpha = 1.0;
      bool accepted = false;
      std::vector<VehicleState> x_c(n + 1);
      std::vector<ControlInput> u_c(n);
      double step_norm = 0.0;
      while (alpha >= 1e-10) {
        Eigen::VectorXd u_try = uvec + alpha * du;
        for (int tau = 0; tau < n; ++tau) {
          u_try(2 * tau) = std::clamp(u_try(2 * tau), cfg_.bounds.u_min(0), cfg_.bounds.u_max(0));
          u_try(2 * tau + 1) =
            std::clamp(u_try(2 * tau + 1), cfg_.bounds.u_min(1), cfg_.bounds.u_max(1));
        }
        const Eigen::VectorXd du_act = u_try - uvec;
        step_norm = du_act.lpNorm<Eigen::Infinity>();

        // Candidate states are rolled out under the model, not propagated
        // through the linearization: the trial iterate stays feasible, so
        // the merit compares true costs and a good step is never rejected
        // for the quadratic growth of linearized defects.
        for (int tau = 0; tau < n; ++tau) {
          u_c[tau] = ControlInput{u_try(2 * tau), u_try(2 * tau + 1)};
        }
        x_c[0] = sol.x[0];

        double cost_c = 0.0;
        const double feas_c = 0.0;
        bool ok = true;
        try {
          for (int tau = 1; tau <= n; ++tau) {
            x_c[tau] = bicycle_step(x_c[tau - 1], u_c[tau - 1], vp_, cfg_.ts);
          }
          cost_c = build_cost(x_c, u_c, refs, horizon);
        } catch (const DegenerateDenominator &) {
          ok = false;
        } catch (const CoincidentCenters &) {
          ok = false;
        }
        if (ok) {
          const double merit_c = cost_c + nu * feas_c;
          if (merit_c <= merit0 - 1e-4 * alpha * pred_full) {
            accepted = true;
            sol.x = x_c;
            sol.u = u_c;
            if (keep_trace) {
              sol.trace.push_back({it, cost_c, merit_c, stat, feas, alpha, nu, step_norm});
            }
            break;
          }
        }
        alpha *= 0.5;
      }

      if (!accepted) {
        ++consecutive_fails;
        nu *= 10.0;
        if (consecutive_fails >= 2 || nu > 1e8) {
          sol.status =
            (feas <= cfg_.tol_kkt) ? SolveStatus::max_iters : SolveStatus::infeasible;
          break;
        }
        continue;
      }
      consecutive_fails = 0;

      if (alpha * step_norm < cfg_.tol_step) {
        double feas_now = 0.0;
        for (int tau = 1; tau <= n; ++tau) {
          const VehicleState pred = bicycle_step(sol.x[tau - 1], sol.u[tau - 1], vp_, cfg_.ts);
          feas_now = std::max(
            feas_now, (to_vector(pred) - to_vector(sol.x[tau])).lpNorm<Eigen::Infinity>());
        }
        sol.status = (feas_now <= cfg_.tol_kkt && stat <= cfg_.tol_kkt)
                       ? SolveStatus::converged
                       : SolveStatus::max_iters;
        break;
      }
    }

    // Final measures.
    try {
      sol.cost = build_cost(sol.x, sol.u, refs, horizon);
      double feas = 0.0;
      for (int tau = 1; tau <= cfg_.horizon; ++tau) {
        const VehicleState pred = bicycle_step(sol.x[tau - 1], sol.u[tau - 1], vp_, cfg_.ts);
        feas =
          std::max(feas, (to_vector(pred) - to_vector(sol.x[tau])).lpNorm<Eigen::Infinity>());
      }
      sol.kkt_feas = feas;
    } catch (const DegenerateDenominator &) {
      sol.cost = std::numeric_limits<double>::infinity();
      sol.kkt_feas = std::numeric_limits<double>::infinity();
      sol.status = SolveStatus::infeasible;
    }
    return sol;
  }

private:
  void check_shapes(
    const std::vector<VehicleState> & x, const std::vector<ControlInput> & u,
    const std::vector<ReferencePoint> & refs, const ObstacleHorizon & horizon) const
  {
    const int n = cfg_.horizon;
    if (static_cast<int>(x.size()) != n + 1 || static_cast<int>(u.size()) != n) {
      throw std::invalid_argument("ocp cost: trajectory sizes do not match the horizon");
    }
    if (static_cast<int>(refs.size()) < n + 1) {
      throw std::invalid_argument("ocp cost: need horizon+1 reference points");
    }
    if (static_cast<int>(horizon.slices.size()) != n) {
      throw std::invalid_argument("ocp cost: need one scene slice per stage");
    }
  }

  /// Seeds the iterate from the shifted warm start (or zero controls) and
  /// rolls the state guess out under the model so the defects start at zero.
  void init_guess(const VehicleState & x0, const OcpSolution * warm, OcpSolution & sol) const
  {
    const int n = cfg_.horizon;
    sol.x.assign(n + 1, x0);
    sol.u.assign(n, ControlInput{0.0, 0.0});
    if (warm != nullptr && static_cast<int>(warm->u.size()) == n) {
      for (int tau = 0; tau < n; ++tau) {
        sol.u[tau] = warm->u[std::min(tau + 1, n - 1)];
      }
    }
    for (int tau = 1; tau <= n; ++tau) {
      try {
        sol.x[tau] = bicycle_step(sol.x[tau - 1], sol.u[tau - 1], vp_, cfg_.ts);
      } catch (const DegenerateDenominator &) {
        sol.x[tau] = sol.x[tau - 1];
      }
    }
  }

  Eigen::MatrixXd control_hessian() const
  {
    const int n = cfg_.horizon;
    Eigen::MatrixXd hu = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (int tau = 0; tau < n; ++tau) {
      hu(2 * tau, 2 * tau) += 2.0 * cfg_.r(0);
      hu(2 * tau + 1, 2 * tau + 1) += 2.0 * cfg_.r(1);
    }
    for (int tau = 1; tau < n; ++tau) {
      for (int i = 0; i < 2; ++i) {
        const int a = 2 * tau + i, b = 2 * (tau - 1) + i;
        hu(a, a) += 2.0 * cfg_.rd(i);
        hu(b, b) += 2.0 * cfg_.rd(i);
        hu(a, b) -= 2.0 * cfg_.rd(i);
        hu(b, a) -= 2.0 * cfg_.rd(i);
      }
    }
    return hu;
  }

  double bound_penalty(const Vec6 & x) const
  {
    double pen = 0.0;
    for (int i = 0; i < 6; ++i) {
      pen += sq(std::max(0.0, x(i) - cfg_.bounds.x_max(i)));
      pen += sq(std::max(0.0, cfg_.bounds.x_min(i) - x(i)));
    }
    return cfg_.state_penalty * pen;
  }

  Vec6 bound_penalty_gradient(const Vec6 & x) const
  {
    Vec6 g = Vec6::Zero();
    for (int i = 0; i < 6; ++i) {
      g(i) = 2.0 * cfg_.state_penalty *
             (std::max(0.0, x(i) - cfg_.bounds.x_max(i)) -
              std::max(0.0, cfg_.bounds.x_min(i) - x(i)));
    }
    return g;
  }

  Mat66 bound_penalty_hessian(const Vec6 & x) const
  {
    Mat66 h = Mat66::Zero();
    for (int i = 0; i < 6; ++i) {
      if (x(i) > cfg_.bounds.x_max(i) || x(i) < cfg_.bounds.x_min(i)) {
        h(i, i) = 2.0 * cfg_.state_penalty;
      }
    }
    return h;
  }

  /// Newton step of the condensed QP restricted to the control box. The
  /// unconstrained solution may push saturated controls further out, in which
  /// case clipping would cancel the whole step; instead the violating
  /// coordinates are pinned to their bound displacement and the free block is
  /// re-solved until the active set settles.
  Eigen::VectorXd box_newton_step(
    const Eigen::MatrixXd & h, const Eigen::VectorXd & g, const Eigen::VectorXd & uvec) const
  {
    const int m = static_cast<int>(g.size());
    Eigen::VectorXd lo(m), hi(m);
    for (int k = 0; k < m; ++k) {
      const int i = k % 2;
      lo(k) = cfg_.bounds.u_min(i) - uvec(k);
      hi(k) = cfg_.bounds.u_max(i) - uvec(k);
    }

    Eigen::VectorXd du = Eigen::VectorXd::Zero(m);
    // 0 free, -1 pinned at lo, +1 pinned at hi.
    std::vector<int> active(m, 0);

    const auto resolve_free = [&]() {
      std::vector<int> free_idx;
      for (int k = 0; k < m; ++k) {
        if (active[k] == 0) {
          free_idx.push_back(k);
        }
      }
      du = Eigen::VectorXd::Zero(m);
      for (int k = 0; k < m; ++k) {
        if (active[k] != 0) {
          du(k) = active[k] < 0 ? lo(k) : hi(k);
        }
      }
      const int nf = static_cast<int>(free_idx.size());
      if (nf == 0) {
        return;
      }
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (int r = 0; r < nf; ++r) {
        rhs(r) = -g(free_idx[r]);
        for (int c = 0; c < nf; ++c) {
          hff(r, c) = h(free_idx[r], free_idx[c]);
        }
        for (int k = 0; k < m; ++k) {
          if (active[k] != 0) {
            rhs(r) -= h(free_idx[r], k) * du(k);
          }
        }
      }
      const Eigen::VectorXd duf = hff.ldlt().solve(rhs);
      for (int r = 0; r < nf; ++r) {
        du(free_idx[r]) = duf(r);
      }
    };

    resolve_free();
    for (int pass = 0; pass < 4 * m; ++pass) {
      bool added = false;
      for (int k = 0; k < m; ++k) {
        if (active[k] == 0) {
          if (du(k) < lo(k) - 1e-12) {
            active[k] = -1;
            added = true;
          } else if (du(k) > hi(k) + 1e-12) {
            active[k] = 1;
            added = true;
          }
        }
      }
      if (added) {
        resolve_free();
        continue;
      }
      // Release the pinned coordinate whose multiplier says the objective
      // still improves by moving back inside the box: a lower pin is optimal
      // only with a non-negative gradient there, an upper pin with a
      // non-positive one.
      const Eigen::VectorXd mult = h * du + g;
      int worst = -1;
      double worst_val = -1e-10;
      for (int k = 0; k < m; ++k) {
        const double v = active[k] < 0 ? mult(k) : active[k] > 0 ? -mult(k) : 0.0;
        if (v < worst_val) {
          worst_val = v;
          worst = k;
        }
      }
      if (worst < 0) {
        break;
      }
      active[worst] = 0;
      resolve_free();
    }

    // Belt and braces: the quadratic model at the box solution never beats
    // du = 0, so a non-descent direction only signals a numerical breakdown.
    if (g.dot(du) >= 0.0) {
      du.setZero();
    }
    return du;
  }

  double projected_gradient_norm(const Eigen::VectorXd & uvec, const Eigen::VectorXd & g) const
  {
    const int n = cfg_.horizon;
    double norm = 0.0;
    for (int tau = 0; tau < n; ++tau) {
      for (int i = 0; i < 2; ++i) {
        const int k = 2 * tau + i;
        const double lo = cfg_.bounds.u_min(i), hi = cfg_.bounds.u_max(i);
        const double proj = std::clamp(uvec(k) - g(k), lo, hi);
        norm = std::max(norm, std::abs(proj - uvec(k)));
      }
    }
    return norm;
  }

  OcpConfig cfg_;
  PFParams pf_;
  VehicleParams vp_;
};

/// Result of comparing the analytic cost gradient against central finite
/// differences, skipping coordinates that sit on a field kink.
struct GradientCheck
{
  double max_abs_err{0.0};
  double max_rel_err{0.0};
  int checked{0};
  int skipped{0};
  bool pass{false};
};

inline GradientCheck check_gradients(
  const SqpSolver & solver, const std::vector<VehicleState> & x,
  const std::vector<ControlInput> & u, const std::vector<ReferencePoint> & refs,
  const ObstacleHorizon & horizon, const PFParams & pf, double fd_step = 1e-5,
  double kink_tol = 1e-3, double tol = 1e-4)
{
  const int n = solver.config().horizon;
  const Eigen::VectorXd g = solver.cost_gradient(x, u, refs, horizon);

  GradientCheck out;
  const auto update = [&](double analytic, double fd) {
    const double abs_err = std::abs(analytic - fd);
    const double rel_err = abs_err / std::max(1.0, std::abs(fd));
    out.max_abs_err = std::max(out.max_abs_err, abs_err);
    out.max_rel_err = std::max(out.max_rel_err, rel_err);
    ++out.checked;
  };

  for (int tau = 1; tau <= n; ++tau) {
    const PotentialScene & scene = horizon.slices[tau - 1];
    for (int i = 0; i < 6; ++i) {
      const double h = fd_step * std::max(1.0, std::abs(to_vector(x[tau])(i)));
      std::vector<VehicleState> xp = x, xm = x;
      Vec6 vp = to_vector(x[tau]), vm = to_vector(x[tau]);
      vp(i) += h;
      vm(i) -= h;
      xp[tau] = state_from_vector(vp);
      xm[tau] = state_from_vector(vm);
      if (
        near_field_boundary(scene, x[tau], pf, kink_tol) ||
        near_field_boundary(scene, xp[tau], pf, kink_tol) ||
        near_field_boundary(scene, xm[tau], pf, kink_tol)) {
        ++out.skipped;
        continue;
      }
      const double fd =
        (solver.build_cost(xp, u, refs, horizon) - solver.build_cost(xm, u, refs, horizon)) /
        (2.0 * h);
      update(g(6 * (tau - 1) + i), fd);
    }
  }
  for (int tau = 0; tau < n; ++tau) {
    for (int i = 0; i < 2; ++i) {
      const double val = i == 0 ? u[tau].a : u[tau].delta;
      const double h = fd_step * std::max(1.0, std::abs(val));
      std::vector<ControlInput> up = u, um = u;
      (i == 0 ? up[tau].a : up[tau].delta) += h;
      (i == 0 ? um[tau].a : um[tau].delta) -= h;
      const double fd =
        (solver.build_cost(x, up, refs, horizon) - solver.build_cost(x, um, refs, horizon)) /
        (2.0 * h);
      update(g(6 * n + 2 * tau + i), fd);
    }
  }
  out.pass = out.max_rel_err <= tol;
  return out;
}

}  // namespace udmc

#endif  // UDMC__OCP_HPP_
