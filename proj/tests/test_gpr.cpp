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

#include <cmath>
#include <cstdio>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "udmc/dynamics.hpp"
#include "udmc/gpr.hpp"

namespace
{

std::vector<udmc::VehicleState> drive(
  double vx0, double accel, double steer, int steps, double ts = 0.05)
{
  const udmc::VehicleParams p = udmc::default_vehicle_params();
  std::vector<udmc::VehicleState> traj;
  udmc::VehicleState x{0.0, 0.0, 0.0, vx0, 0.0, 0.0};
  for (int k = 0; k < steps; ++k) {
    traj.push_back(x);
    x = udmc::bicycle_step(x, udmc::ControlInput{accel, steer}, p, ts);
  }
  return traj;
}

udmc::TrajectoryDataset small_dataset()
{
  udmc::TrajectoryDataset data;
  udmc::append_trajectory(data, drive(8.0, 0.0, 0.02, 45));
  udmc::append_trajectory(data, drive(10.0, 0.0, 0.05, 45));
  udmc::append_trajectory(data, drive(12.0, 0.0, -0.03, 45));
  udmc::append_trajectory(data, drive(9.0, 0.3, 0.08, 45));
  return data;
}

}  // namespace

TEST_CASE("rbf kernel value", "[gpr]")
{
  CHECK(udmc::rbf_kernel(1.0, 1.0, 1.0) == Catch::Approx(0.606530659712633).epsilon(1e-12));
  CHECK(udmc::rbf_kernel(0.0, 2.0, 1.0) == Catch::Approx(4.0).margin(1e-12));
  CHECK(udmc::rbf_kernel(1.0, 1.0, 0.5) == Catch::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("packing and centering", "[gpr]")
{
  const auto traj = drive(9.0, 0.2, 0.04, 30);
  std::vector<udmc::VehicleState> hist(traj.begin(), traj.begin() + 15);
  std::vector<udmc::VehicleState> fut(traj.begin() + 15, traj.begin() + 25);

  Eigen::VectorXd in = udmc::pack_history(hist);
  Eigen::VectorXd out = udmc::pack_future(fut);
  REQUIRE(in.size() == 75);
  REQUIRE(out.size() == 30);
  CHECK(in(0) == Catch::Approx(traj[0].px));
  CHECK(in(5 * 14 + 3) == Catch::Approx(traj[14].vx));
  CHECK(out(0) == Catch::Approx(traj[15].px));

  const Eigen::VectorXd in_before = in;
  const udmc::Vec2 offset = udmc::center_record(in, &out);
  CHECK(offset.x() == Catch::Approx(traj[0].px));
  CHECK(offset.y() == Catch::Approx(traj[0].py));
  CHECK(in(0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(in(1) == Catch::Approx(0.0).margin(1e-15));
  for (int k = 0; k < 15; ++k) {
    CHECK(in(5 * k + 2) == Catch::Approx(in_before(5 * k + 2)));  // heading untouched
    CHECK(in(5 * k + 3) == Catch::Approx(in_before(5 * k + 3)));  // vx untouched
  }
  CHECK(out(0) == Catch::Approx(traj[15].px - offset.x()));

  std::vector<udmc::VehicleState> short_hist(traj.begin(), traj.begin() + 12);
  CHECK_THROWS_AS(udmc::pack_history(short_hist), udmc::DimensionMismatch);
  CHECK_THROWS_AS(udmc::pack_future(short_hist), udmc::DimensionMismatch);
}

TEST_CASE("too few records", "[gpr]")
{
  udmc::TrajectoryDataset data;
  udmc::append_trajectory(data, drive(8.0, 0.0, 0.02, 27));  // 3 records
  CHECK(data.size() == 3);
  CHECK_THROWS_AS(udmc::GpPredictor::fit(data), udmc::TooFewRecords);
}

TEST_CASE("zero noise interpolation at training points", "[gpr]")
{
  udmc::TrajectoryDataset data;
  udmc::append_trajectory(data, drive(8.0, 0.0, 0.02, 40));
  udmc::append_trajectory(data, drive(11.0, 0.0, -0.05, 40));
  REQUIRE(data.size() >= 10);

  std::vector<udmc::GpHyper> hypers(udmc::kGprOutputDim, udmc::GpHyper{5.0, 50.0, 1e-10});
  const auto gp = udmc::GpPredictor::with_hypers(data, hypers, 1e-12);

  for (int i = 0; i < data.size(); i += 7) {
    const auto pred = gp.predict(data.inputs.row(i).transpose());
    const Eigen::VectorXd err = pred.mean - data.outputs.row(i).transpose();
    CHECK(err.lpNorm<Eigen::Infinity>() < 1e-5);
    for (int d = 0; d < udmc::kGprOutputDim; ++d) {
      CHECK(pred.variance(d) >= 0.0);
    }
  }
}

TEST_CASE("translation equivariance", "[gpr]")
{
  const auto data = small_dataset();
  std::vector<udmc::GpHyper> hypers(udmc::kGprOutputDim, udmc::GpHyper{5.0, 40.0, 1e-4});
  const auto gp = udmc::GpPredictor::with_hypers(data, hypers);

  const auto traj = drive(10.5, 0.1, 0.03, 15);
  const Eigen::VectorXd base = udmc::pack_history(traj);

  Eigen::VectorXd shifted = base;
  const double dx = 312.7, dy = -88.1;
  for (int k = 0; k < 15; ++k) {
    shifted(5 * k + 0) += dx;
    shifted(5 * k + 1) += dy;
  }

  const auto a = gp.predict(base);
  const auto b = gp.predict(shifted);
  for (int k = 0; k < udmc::kFutureSteps; ++k) {
    CHECK(b.mean(3 * k + 0) == Catch::Approx(a.mean(3 * k + 0) + dx).margin(1e-9));
    CHECK(b.mean(3 * k + 1) == Catch::Approx(a.mean(3 * k + 1) + dy).margin(1e-9));
    CHECK(b.mean(3 * k + 2) == Catch::Approx(a.mean(3 * k + 2)).margin(1e-12));
  }
  CHECK((a.variance - b.variance).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("fit predicts held out motion", "[gpr]")
{
  const auto data = small_dataset();
  udmc::GpFitOptions opt;
  opt.restarts = 2;
  opt.max_iters = 30;
  const auto gp = udmc::GpPredictor::fit(data, opt);

  // Held-out trajectory with controls inside the training envelope.
  const auto traj = drive(10.0, 0.1, 0.01, 45);
  double pos_err_sum = 0.0;
  int count = 0;
  for (int t = 14; t + 10 < static_cast<int>(traj.size()); t += 4) {
    std::vector<udmc::VehicleState> hist(traj.begin() + (t - 14), traj.begin() + t + 1);
    std::vector<udmc::VehicleState> fut(traj.begin() + t + 1, traj.begin() + t + 11);
    const auto pred = gp.predict(udmc::pack_history(hist));
    const Eigen::VectorXd want = udmc::pack_future(fut);
    for (int k = 0; k < 10; ++k) {
      const double ex = pred.mean(3 * k) - want(3 * k);
      const double ey = pred.mean(3 * k + 1) - want(3 * k + 1);
      pos_err_sum += std::hypot(ex, ey);
      ++count;
    }
  }
  const double mean_err = pos_err_sum / count;
  CHECK(mean_err < 0.5);
}

TEST_CASE("duplicate records without jitter raise singular gram", "[gpr]")
{
  const auto traj = drive(9.0, 0.0, 0.03, 25);
  std::vector<udmc::VehicleState> hist(traj.begin(), traj.begin() + 15);
  std::vector<udmc::VehicleState> fut(traj.begin() + 15, traj.begin() + 25);
  udmc::TrajectoryDataset data;
  for (int i = 0; i < 12; ++i) {
    data.append(udmc::pack_history(hist), udmc::pack_future(fut));
  }

  std::vector<udmc::GpHyper> hypers(udmc::kGprOutputDim, udmc::GpHyper{1.0, 10.0, 0.0});
  CHECK_THROWS_AS(udmc::GpPredictor::with_hypers(data, hypers, 0.0), udmc::SingularGram);

  // With escalation enabled the same data factorizes.
  CHECK_NOTHROW(udmc::GpPredictor::with_hypers(data, hypers, 1e-8));
}

TEST_CASE("save and load round trip", "[gpr]")
{
  const auto data = small_dataset();
  std::vector<udmc::GpHyper> hypers(udmc::kGprOutputDim, udmc::GpHyper{4.0, 30.0, 1e-3});
  const auto gp = udmc::GpPredictor::with_hypers(data, hypers);

  const std::string path = "gp_roundtrip.json";
  gp.save(path);
  const auto loaded = udmc::GpPredictor::load(path);
  std::remove(path.c_str());

  CHECK(loaded.training_size() == gp.training_size());
  const auto traj = drive(9.5, 0.05, -0.02, 15);
  const Eigen::VectorXd q = udmc::pack_history(traj);
  const auto a = gp.predict(q);
  const auto b = loaded.predict(q);
  CHECK((a.mean - b.mean).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((a.variance - b.variance).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("constant velocity fallback", "[gpr]")
{
  udmc::VehicleState s{10.0, 5.0, udmc::kPi / 2, 4.0, 0.0, 0.0};
  const Eigen::VectorXd pred = udmc::constant_velocity_prediction(s, 0.05);
  CHECK(pred(0) == Catch::Approx(10.0).margin(1e-9));
  CHECK(pred(1) == Catch::Approx(5.0 + 4.0 * 0.05).margin(1e-9));
  CHECK(pred(2) == Catch::Approx(udmc::kPi / 2));
  CHECK(pred(27) == Catch::Approx(10.0).margin(1e-9));
  CHECK(pred(28) == Catch::Approx(5.0 + 4.0 * 0.5).margin(1e-9));
}
