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

#ifndef UDMC__COMMON_HPP_
#define UDMC__COMMON_HPP_

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace udmc
{

using Vec2 = Eigen::Vector2d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat66 = Eigen::Matrix<double, 6, 6>;
using Mat62 = Eigen::Matrix<double, 6, 2>;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a)
{
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) {
    a += 2.0 * kPi;
  }
  return a - kPi;
}

template <class T>
constexpr T sq(const T & x)
{
  return x * x;
}

/// Thrown when a model denominator falls below its safe threshold.
class DegenerateDenominator : public std::runtime_error
{
public:
  explicit DegenerateDenominator(const std::string & what) : std::runtime_error(what) {}
};

/// Thrown when an input file or record stream is malformed.
class ParseError : public std::runtime_error
{
public:
  explicit ParseError(const std::string & what) : std::runtime_error(what) {}
};

}  // namespace udmc

#endif  // UDMC__COMMON_HPP_
