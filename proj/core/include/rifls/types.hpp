#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace rifls {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Vec15 = Eigen::Matrix<double, 15, 1>;
using VecX = Eigen::VectorXd;

using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat29 = Eigen::Matrix<double, 2, 9>;
using Mat2x15 = Eigen::Matrix<double, 2, 15>;
using Mat15x4 = Eigen::Matrix<double, 15, 4>;
using Mat15x6 = Eigen::Matrix<double, 15, 6>;
using Mat96 = Eigen::Matrix<double, 9, 6>;
using MatX = Eigen::MatrixXd;

}  // namespace rifls
