#pragma once

#include <Eigen/Dense>

namespace dsattr {

template <class Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Real = double;
using Mat = MatT<Real>;
using Vec = VecT<Real>;

}  // namespace dsattr
