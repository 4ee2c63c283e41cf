#pragma once

#include <Eigen/Dense>

namespace cilab {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

// largest |eigenvalue| of the symmetric part
inline double op_norm(const Mat3& M) {
    Mat3 S = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Mat3> es(S, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace cilab
