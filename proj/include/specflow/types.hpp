#ifndef SPECFLOW_TYPES_HPP
#define SPECFLOW_TYPES_HPP

#include <complex>
#include <Eigen/Dense>

namespace specflow {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

}

#endif
