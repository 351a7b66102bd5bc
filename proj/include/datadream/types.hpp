// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace datadream {

using Index = Eigen::Index;

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Matrix = MatX<float>;
using Vector = VecX<float>;
using MatrixD = MatX<double>;
using VectorD = VecX<double>;

}  // namespace datadream
