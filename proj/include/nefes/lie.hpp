#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "nefes/rng.hpp"

namespace nefes::lie {

using Vec3 = std::array<double, 3>;

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double& operator()(int r, int c) { return m[r * 3 + c]; }
    double operator()(int r, int c) const { return m[r * 3 + c]; }
    static Mat3 identity() { return Mat3{}; }
};

Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double s, const Vec3& v);
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& v);
Vec3 normalized(const Vec3& v);

Mat3 matmul(const Mat3& a, const Mat3& b);
Vec3 matvec(const Mat3& a, const Vec3& v);
Mat3 transpose(const Mat3& a);
Mat3 skew(const Vec3& w);
double det(const Mat3& a);

// Nearest rotation matrix (polar projection) to a near-orthonormal input.
Mat3 nearest_rotation(const Mat3& a);

// 3x3 orthonormal with det +1. Constructor validates the invariants.
class Rotation {
  public:
    Rotation() = default;  // identity
    explicit Rotation(const Mat3& m, double tol = 1e-9);
    static Rotation from_matrix_unchecked(const Mat3& m);

    const Mat3& matrix() const { return m_; }
    Vec3 apply(const Vec3& v) const { return matvec(m_, v); }
    Rotation inverse() const { return from_matrix_unchecked(transpose(m_)); }

    // max |R^T R - I| entry
    double orthonormality_drift() const;

  private:
    Mat3 m_;
};

struct Pose {
    Rotation rotation;
    Vec3 translation{0, 0, 0};
};

struct Twist {
    Vec3 omega{0, 0, 0};  // rotational tangent, radians
    Vec3 nu{0, 0, 0};     // translational tangent, meters
};

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
    // Intrinsics for the same camera rescaled to a new resolution.
    CameraIntrinsics scaled(int new_width, int new_height) const;
};

struct Ray {
    Vec3 origin{0, 0, 0};
    Vec3 direction{0, 0, 1};  // unit
    double near = 0, far = 0;
};

// SE(3) exponential on the principal chart (|omega| < pi). Rotation via
// Rodrigues, translation via the left Jacobian applied to nu.
Pose exp_map(const Twist& xi);

// Inverse of exp_map; requires trace(R) > -1 + 1e-9.
Twist log_map(const Pose& p);

// Decoupled update: R <- exp(-lr_R * grad_omega) * R, t <- t - lr_t * grad_nu.
// Re-orthonormalizes when drift exceeds 1e-9.
Pose tangent_step(const Pose& p, const Vec3& grad_omega, const Vec3& grad_nu,
                  double lr_R, double lr_t);

// Pinhole backprojection, x right / y down / +z forward, pixel centers at +0.5.
std::vector<Ray> generate_rays(const Pose& p, const CameraIntrinsics& k,
                               const std::vector<std::pair<double, double>>& pixels,
                               double near = 0.05, double far = 10.0);

// (translation error in meters, rotation error in degrees)
std::pair<double, double> pose_error(const Pose& a, const Pose& b);

// Compose gt with an exact rot_deg rotation about a random axis and an exact
// trans displacement in a random direction.
Pose perturb_pose(const Pose& gt, double rot_deg, double trans, Rng& rng);

// Quaternion helpers for the pose regressor (w, x, y, z).
using Quat = std::array<double, 4>;
Mat3 quat_to_matrix(const Quat& q);       // q must be unit
Quat matrix_to_quat(const Mat3& m);
// d(R(q/|q|))/dq at q: returns, for each of the 4 components, the 3x3
// derivative matrix. Used to chain ray gradients into regressor outputs.
std::array<Mat3, 4> quat_to_matrix_jacobian(const Quat& q);

}  // namespace nefes::lie
