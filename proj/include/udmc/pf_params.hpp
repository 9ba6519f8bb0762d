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

#ifndef UDMC__PF_PARAMS_HPP_
#define UDMC__PF_PARAMS_HPP_

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "udmc/common.hpp"

namespace udmc
{

/// Potential field shape parameters. The key/value file format uses exactly
/// these member names.
struct PFParams
{
  double a_NR{100.0};  ///< non-crossable marking magnitude
  double b_NR{2.0};    ///< non-crossable marking exponent
  double a_CR{10.0};   ///< crossable marking magnitude
  double b_CR{0.5};    ///< crossable marking range [m]
  double a_V{500.0};   ///< vehicle field magnitude
  double b_V{1.0};     ///< vehicle field exponent
  double r_a{2.4};     ///< vehicle ellipse semi-major axis [m]
  double r_b{1.0};     ///< vehicle ellipse semi-minor axis [m]
  double w_R{3.5};     ///< nominal lane width [m]
  double a_TL1{200.0};   ///< traffic light longitudinal magnitude
  double a_TL2{1000.0};  ///< traffic light lateral magnitude
  double r_offset{0.25};  ///< virtual lane widening beyond w_R/2 [m]
  double r_V{1.4};        ///< vehicle footprint circle radius [m]
  double a_T{10.0};       ///< time-to-collision field magnitude
  double b_T{1.0};        ///< time-to-collision field exponent
  double t_alarm{1.5};    ///< time-to-collision alarm threshold [s]
  double a_PD{500.0};     ///< pedestrian field magnitude
  double b_PD{1.0};       ///< pedestrian field exponent
  double r_p{50.0};       ///< perception range [m]
  double s_cap{400.0};    ///< saturation of the squared time-to-collision
  double d_floor{0.05};   ///< distance floor before inversion [m]

  /// Field value at the outer edge of a non-crossable marking band.
  double e_s() const { return a_NR / std::pow(1.5, b_NR); }
  /// Plateau height inside a non-crossable marking band.
  double m_s() const { return a_NR / std::pow(0.1, b_NR) - e_s(); }
  /// Half width of a virtual lane.
  double r_g() const { return 0.5 * w_R + r_offset; }

  void validate() const
  {
    const double positives[] = {a_NR, b_NR, a_CR, b_CR, a_V,  b_V,  r_a,     r_b,   w_R,
                                a_TL1, a_TL2, r_V, a_T,  b_T,  t_alarm, a_PD,  b_PD,
                                r_p,   s_cap, d_floor};
    for (const double v : positives) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("pf params: all magnitudes must be positive and finite");
      }
    }
    if (r_offset < 0.0) {
      throw std::invalid_argument("pf params: r_offset must be non-negative");
    }
  }
};

namespace detail
{

template <class F>
void for_each_pf_param(PFParams & p, F && f)
{
  f("a_NR", p.a_NR);
  f("b_NR", p.b_NR);
  f("a_CR", p.a_CR);
  f("b_CR", p.b_CR);
  f("a_V", p.a_V);
  f("b_V", p.b_V);
  f("r_a", p.r_a);
  f("r_b", p.r_b);
  f("w_R", p.w_R);
  f("a_TL1", p.a_TL1);
  f("a_TL2", p.a_TL2);
  f("r_offset", p.r_offset);
  f("r_V", p.r_V);
  f("a_T", p.a_T);
  f("b_T", p.b_T);
  f("t_alarm", p.t_alarm);
  f("a_PD", p.a_PD);
  f("b_PD", p.b_PD);
  f("r_p", p.r_p);
  f("s_cap", p.s_cap);
  f("d_floor", p.d_floor);
}

}  // namespace detail

/// Parses `name = value` lines; '#' starts a comment, unknown keys are
/// rejected, omitted keys keep their defaults.
inline PFParams pf_params_from_string(const std::string & text)
{
  PFParams p;
  std::map<std::string, double *> keys;
  detail::for_each_pf_param(p, [&](const char * name, double & ref) { keys[name] = &ref; });

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) {
      continue;
    }
    std::string eq;
    double val = 0.0;
    if (!(ls >> eq >> val) || eq != "=") {
      throw ParseError("pf params: malformed line " + std::to_string(lineno));
    }
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ParseError("pf params: unknown key '" + key + "'");
    }
    *it->second = val;
  }
  p.validate();
  return p;
}

inline PFParams load_pf_params(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw ParseError("pf params: cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return pf_params_from_string(ss.str());
}

inline void save_pf_params(const std::string & path, const PFParams & params)
{
  std::ofstream out(path);
  if (!out) {
    throw ParseError("pf params: cannot write " + path);
  }
  PFParams copy = params;
  detail::for_each_pf_param(copy, [&](const char * name, double & ref) {
    out << name << " = " << ref << "\n";
  });
}

}  // namespace udmc

#endif  // UDMC__PF_PARAMS_HPP_
