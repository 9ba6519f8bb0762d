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

#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "udmc/gpr.hpp"
#include "udmc/identify.hpp"
#include "udmc/ocp.hpp"
#include "udmc/pf_params.hpp"
#include "udmc/sim.hpp"

namespace
{

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error
{
public:
  explicit UsageError(const std::string & what) : std::runtime_error(what) {}
};

struct Options
{
  std::string scenario;
  std::string pf_params;
  std::string ocp_config;
  std::string predictor;
  std::string out{"out"};
  std::optional<std::uint64_t> seed;
  int trials{40};
  std::string pf_variant;
  bool no_prediction{false};
  bool no_ttc{false};
  bool trace_solver{false};
};

std::string resolve_scenario(const std::string & value)
{
  namespace fs = std::filesystem;
  if (value.empty()) {
    throw UsageError("--scenario is required");
  }
  if (fs::exists(value)) {
    return value;
  }
  const std::string guess = "scenarios/" + value + ".json";
  if (fs::exists(guess)) {
    return guess;
  }
  throw UsageError("scenario not found: " + value);
}

std::string require_file(const std::string & path, const char * flag)
{
  if (!std::filesystem::exists(path)) {
    throw UsageError(std::string(flag) + ": file not found: " + path);
  }
  return path;
}

void write_file(const std::string & path, const std::string & text)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << text;
}

udmc::PFParams make_pf(const Options & opt)
{
  udmc::PFParams pf;
  if (!opt.pf_params.empty()) {
    pf = udmc::load_pf_params(require_file(opt.pf_params, "--pf-params"));
  }
  return pf;
}

udmc::OcpConfig make_ocp(const Options & opt)
{
  udmc::OcpConfig cfg;
  if (!opt.ocp_config.empty()) {
    cfg = udmc::load_ocp_config(require_file(opt.ocp_config, "--ocp-config"));
  }
  if (opt.pf_variant == "circles") {
    cfg.field.variant = udmc::PFVariant::circles;
  } else if (opt.pf_variant == "ellipse") {
    cfg.field.variant = udmc::PFVariant::ellipse;
  } else if (!opt.pf_variant.empty()) {
    throw UsageError("--pf-variant must be circles or ellipse");
  }
  if (opt.no_ttc) {
    cfg.field.include_ttc = false;
  }
  return cfg;
}

udmc::TrialConfig make_trial_config(const Options & opt)
{
  udmc::TrialConfig cfg;
  cfg.ocp = make_ocp(opt);
  cfg.pf = make_pf(opt);
  cfg.use_prediction = !opt.no_prediction;
  cfg.trace_solver = opt.trace_solver;
  return cfg;
}

void write_events(const std::string & path, const std::vector<udmc::Event> & events)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto & e : events) {
    const char * kind = e.kind == udmc::EventKind::collision          ? "collision"
                        : e.kind == udmc::EventKind::rule_violation   ? "rule_violation"
                                                                      : "induced_braking";
    os << e.t << " " << kind << " " << e.detail << "\n";
  }
  write_file(path, os.str());
}

int cmd_run(const Options & opt)
{
  const udmc::Scenario base = udmc::load_scenario(resolve_scenario(opt.scenario));
  const std::uint64_t seed = opt.seed.value_or(base.seed);
  const udmc::Scenario sc = udmc::randomize_spawns(base, seed);

  udmc::TrialConfig cfg = make_trial_config(opt);
  udmc::GpPredictor model;
  if (!opt.predictor.empty()) {
    model = udmc::GpPredictor::load(require_file(opt.predictor, "--predictor"));
    cfg.predictor = &model;
  }

  const udmc::TrialResult r = udmc::run_trial(sc, cfg);

  std::filesystem::create_directories(opt.out);
  const std::string stem = opt.out + "/" + sc.name;
  write_file(stem + "_metrics.txt", udmc::metrics_to_text(r.metrics));
  write_file(stem + "_trajectory.log", r.trajectory_log);
  write_events(stem + "_events.txt", r.events);
  if (opt.trace_solver) {
    write_file(stem + "_solver_trace.txt", r.solver_trace);
  }

  std::cout << udmc::metrics_to_text(r.metrics);
  if (!r.metrics.success) {
    std::cerr << "trial failed: " << r.metrics.failure_cause << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_batch(const Options & opt)
{
  if (opt.trials < 1) {
    throw UsageError("--trials must be at least 1");
  }
  const udmc::Scenario base = udmc::load_scenario(resolve_scenario(opt.scenario));
  const std::uint64_t seed = opt.seed.value_or(base.seed);
  const udmc::TrialConfig cfg = make_trial_config(opt);

  const udmc::BatchResult b = udmc::run_batch(base, cfg, opt.trials, seed);

  std::filesystem::create_directories(opt.out);
  const std::string text = udmc::batch_to_text(b);
  write_file(opt.out + "/" + base.name + "_batch.txt", text);
  std::cout << text;
  return 0;
}

int cmd_train_predictor(const Options & opt)
{
  const udmc::Scenario base = udmc::load_scenario(resolve_scenario(opt.scenario));
  const std::uint64_t seed = opt.seed.value_or(base.seed);
  const udmc::Scenario sc = udmc::randomize_spawns(base, seed);

  const udmc::IdmParams idm;
  const double ts = make_ocp(opt).ts;
  const udmc::TrajectoryDataset data = udmc::collect_training_data(sc, idm, ts, 40.0);
  if (data.size() < 1) {
    throw std::runtime_error("no training records collected; scenario has no traffic");
  }

  udmc::GpFitOptions fit;
  fit.seed = seed;
  const udmc::GpPredictor model = udmc::GpPredictor::fit(data, fit);

  std::filesystem::create_directories(opt.out);
  const std::string path = opt.out + "/" + sc.name + "_predictor.json";
  model.save(path);
  std::cout << "records: " << data.size() << "\n";
  std::cout << "model: " << path << "\n";
  return 0;
}

std::vector<udmc::LogRecord> read_trajectory_log(const std::string & path, double & ts)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::vector<std::string> cols;
  std::string col;
  while (hs >> col) {
    cols.push_back(col);
  }
  const auto index_of = [&](const char * name) {
    for (size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == name) {
        return static_cast<int>(i);
      }
    }
    throw std::runtime_error(std::string("trajectory log: missing column ") + name);
  };
  const int ct = index_of("t");
  const int cpx = index_of("px"), cpy = index_of("py"), cphi = index_of("phi");
  const int cvx = index_of("vx"), cvy = index_of("vy"), com = index_of("omega");
  const int ca = index_of("a"), cd = index_of("delta");

  std::vector<udmc::LogRecord> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::vector<double> v;
    double x = 0.0;
    while (ls >> x) {
      v.push_back(x);
    }
    if (v.size() < cols.size()) {
      continue;
    }
    udmc::LogRecord r;
    r.t = v[ct];
    r.x = udmc::VehicleState{v[cpx], v[cpy], v[cphi], v[cvx], v[cvy], v[com]};
    r.u = udmc::ControlInput{v[ca], v[cd]};
    log.push_back(r);
  }
  if (log.size() < 2) {
    throw std::runtime_error("trajectory log: need at least two rows");
  }
  ts = log[1].t - log[0].t;
  return log;
}

int cmd_identify(const Options & opt)
{
  if (opt.scenario.empty()) {
    throw UsageError("--scenario must point at a trajectory log for identify");
  }
  double ts = 0.0;
  const auto log = read_trajectory_log(require_file(opt.scenario, "--scenario"), ts);

  const udmc::IdentifyResult r = udmc::identify_params(log, ts);

  nlohmann::json j;
  j["mass"] = r.params.mass;
  j["lf"] = r.params.lf;
  j["lr"] = r.params.lr;
  j["kf"] = r.params.kf;
  j["kr"] = r.params.kr;
  j["iz"] = r.params.iz;
  j["residual"] = r.residual;
  j["iterations"] = r.iterations;

  std::filesystem::create_directories(opt.out);
  const std::string path = opt.out + "/vehicle_params.json";
  write_file(path, j.dump(2) + "\n");

  std::cout << std::fixed << std::setprecision(6);
  std::cout << "lf: " << r.params.lf << "\nlr: " << r.params.lr << "\nkf: " << r.params.kf
            << "\nkr: " << r.params.kr << "\niz: " << r.params.iz
            << "\nresidual: " << r.residual << "\n";
  return 0;
}

int cmd_check_gradients(const Options & opt)
{
  const udmc::PFParams pf = make_pf(opt);
  udmc::OcpConfig cfg = make_ocp(opt);
  const udmc::SqpSolver solver(cfg, pf);
  const int n = cfg.horizon;
  const double ts = cfg.ts;

  // Reference scene with every field family active: a leader ahead, a
  // pedestrian to the side, lane markings and a red light gate.
  std::vector<udmc::ReferencePoint> refs(n + 1);
  for (int k = 0; k <= n; ++k) {
    refs[k].x = udmc::VehicleState{5.0 * ts * k, 0.0, 0.0, 5.0, 0.0, 0.0};
    refs[k].s = 5.0 * ts * k;
  }
  udmc::ObstacleHorizon horizon;
  horizon.slices.resize(n);
  for (int k = 0; k < n; ++k) {
    auto & s = horizon.slices[k];
    udmc::LaneMarkingRef left;
    left.center = udmc::Pose2{udmc::Vec2(0.0, 0.0), 0.0};
    left.kind = udmc::MarkingKind::noncrossable;
    left.side = 1;
    udmc::LaneMarkingRef right = left;
    right.kind = udmc::MarkingKind::crossable;
    right.side = -1;
    s.markings = {left, right};
    s.vehicles = {udmc::ScenePose{15.0, 1.0, 0.0, 5.0}};
    s.leader_index = 0;
    s.pedestrians = {udmc::Vec2(10.0, -4.0)};
    udmc::LightGate gate;
    gate.stop_line = udmc::Pose2{udmc::Vec2(25.0, 0.0), 0.0};
    gate.left = left;
    gate.right = right;
    gate.red = true;
    s.light = gate;
  }

  std::mt19937_64 rng(opt.seed.value_or(1));
  std::uniform_real_distribution<double> u01(-1.0, 1.0);

  udmc::GradientCheck worst;
  worst.pass = true;
  int attempts = 0;
  while (worst.checked < 200 && attempts < 50) {
    ++attempts;
    std::vector<udmc::VehicleState> x(n + 1);
    std::vector<udmc::ControlInput> u(n);
    x[0] = udmc::VehicleState{0.0, 0.3 * u01(rng), 0.05 * u01(rng), 5.0 + u01(rng),
                              0.1 * u01(rng), 0.1 * u01(rng)};
    for (int k = 0; k < n; ++k) {
      u[k] = udmc::ControlInput{0.5 * u01(rng), 0.05 * u01(rng)};
      x[k + 1] = udmc::bicycle_step(x[k], u[k], udmc::VehicleParams{}, ts);
    }
    const udmc::GradientCheck c =
      udmc::check_gradients(solver, x, u, refs, horizon, pf);
    worst.max_abs_err = std::max(worst.max_abs_err, c.max_abs_err);
    worst.max_rel_err = std::max(worst.max_rel_err, c.max_rel_err);
    worst.checked += c.checked;
    worst.skipped += c.skipped;
    worst.pass = worst.pass && c.pass;
  }

  std::ostringstream os;
  os << std::fixed << std::setprecision(12);
  os << "checked: " << worst.checked << "\n";
  os << "skipped: " << worst.skipped << "\n";
  os << "max_abs_err: " << worst.max_abs_err << "\n";
  os << "max_rel_err: " << worst.max_rel_err << "\n";
  os << "pass: " << (worst.pass ? 1 : 0) << "\n";

  std::filesystem::create_directories(opt.out);
  write_file(opt.out + "/gradients.txt", os.str());
  std::cout << os.str();
  return worst.pass ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"unified decision making and control stack"};
  app.require_subcommand(1);

  Options opt;
  std::uint64_t seed_value = 0;

  const auto add_common = [&](CLI::App * sub) {
    sub->add_option("--scenario", opt.scenario,
                    "scenario json path or name under scenarios/");
    sub->add_option("--pf-params", opt.pf_params, "potential field parameter file");
    sub->add_option("--ocp-config", opt.ocp_config, "solver configuration json");
    sub->add_option("--out", opt.out, "output directory (default: out)");
    sub->add_option("--seed", seed_value, "random seed (default: scenario seed)");
    sub->add_option("--pf-variant", opt.pf_variant, "vehicle field variant: circles|ellipse");
    sub->add_flag("--no-prediction", opt.no_prediction, "freeze obstacle poses");
    sub->add_flag("--no-ttc", opt.no_ttc, "disable the time-to-collision field");
    sub->add_flag("--trace-solver", opt.trace_solver, "dump per-iteration solver rows");
  };

  CLI::App * run = app.add_subcommand("run", "closed-loop trial on one scenario");
  add_common(run);
  run->add_option("--predictor", opt.predictor, "trained predictor model json");

  CLI::App * batch = app.add_subcommand("batch", "randomized trial batch");
  add_common(batch);
  batch->add_option("--trials", opt.trials, "number of trials (default: 40)");

  CLI::App * train = app.add_subcommand("train-predictor",
                                        "fit the motion predictor on scenario traffic");
  add_common(train);

  CLI::App * ident = app.add_subcommand(
    "identify", "recover vehicle parameters from a trajectory log (--scenario = log path)");
  add_common(ident);

  CLI::App * grad = app.add_subcommand("check-gradients",
                                       "finite-difference audit of the cost gradient");
  add_common(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    app.exit(e);
    return kExitUsage;
  }

  for (const CLI::App * sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) {
      opt.seed = seed_value;
    }
  }

  try {
    if (run->parsed()) {
      return cmd_run(opt);
    }
    if (batch->parsed()) {
      return cmd_batch(opt);
    }
    if (train->parsed()) {
      return cmd_train_predictor(opt);
    }
    if (ident->parsed()) {
      return cmd_identify(opt);
    }
    return cmd_check_gradients(opt);
  } catch (const UsageError & e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
