#include "nefes/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace nefes::lie {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
    return (1.0 / n) * v;
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

Vec3 matvec(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v[0] + a(0, 1) * v[1] + a(0, 2) * v[2],
            a(1, 0) * v[0] + a(1, 1) * v[1] + a(1, 2) * v[2],
            a(2, 0) * v[0] + a(2, 1) * v[1] + a(2, 2) * v[2]};
}

Mat3 transpose(const Mat3& a) {
    Mat3 t;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t(i, j) = a(j, i);
    return t;
}

Mat3 skew(const Vec3& w) {
    Mat3 s;
    s.m = {0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0};
    return s;
}

double det(const Mat3& a) {
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

namespace {
Mat3 add(const Mat3& a, const Mat3& b, double sb = 1.0) {
    Mat3 c;
    for (int i = 0; i < 9; ++i) c.m[i] = a.m[i] + sb * b.m[i];
    return c;
}
double max_abs_diff_from_identity(const Mat3& g) {
    double d = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    return d;
}
}  // namespace

Mat3 nearest_rotation(const Mat3& a) {
    // Newton-Schulz polar iteration; input must already be close to orthonormal.
    Mat3 x = a;
    for (int it = 0; it < 20; ++it) {
        Mat3 g = matmul(transpose(x), x);
        if (max_abs_diff_from_identity(g) < 1e-15) break;
        Mat3 next;
        Mat3 xg = matmul(x, g);
        for (int i = 0; i < 9; ++i) next.m[i] = 1.5 * x.m[i] - 0.5 * xg.m[i];
        x = next;
    }
    return x;
}

Rotation::Rotation(const Mat3& m, double tol) : m_(m) {
    Mat3 g = matmul(transpose(m), m);
    if (max_abs_diff_from_identity(g) > tol)
        throw std::invalid_argument("Rotation: matrix not orthonormal");
    if (std::abs(det(m) - 1.0) > tol)
        throw std::invalid_argument("Rotation: determinant not +1");
}

Rotation Rotation::from_matrix_unchecked(const Mat3& m) {
    Rotation r;
    r.m_ = m;
    return r;
}

double Rotation::orthonormality_drift() const {
    return max_abs_diff_from_identity(matmul(transpose(m_), m_));
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be > 0");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height))
        throw std::invalid_argument("intrinsics: principal point outside image");
}

CameraIntrinsics CameraIntrinsics::scaled(int new_width, int new_height) const {
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    CameraIntrinsics k;
    k.fx = fx * sx;
    k.fy = fy * sy;
    k.cx = cx * sx;
    k.cy = cy * sy;
    k.width = new_width;
    k.height = new_height;
    return k;
}

namespace {
bool finite3(const Vec3& v) {
    return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}

// Rodrigues rotation for axis-angle w.
Mat3 rodrigues(const Vec3& w) {
    const double theta = norm(w);
    const Mat3 K = skew(w);
    const Mat3 K2 = matmul(K, K);
    double a, b;
    if (theta < 1e-8) {
        a = 1.0 - theta * theta / 6.0;
        b = 0.5 - theta * theta / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / (theta * theta);
    }
    Mat3 r = add(add(Mat3::identity(), K, a), K2, b);
    return r;
}

// Left Jacobian of SO(3).
Mat3 left_jacobian(const Vec3& w) {
    const double theta = norm(w);
    const Mat3 K = skew(w);
    const Mat3 K2 = matmul(K, K);
    double b, c;
    if (theta < 1e-8) {
        b = 0.5 - theta * theta / 24.0;
        c = 1.0 / 6.0 - theta * theta / 120.0;
    } else {
        b = (1.0 - std::cos(theta)) / (theta * theta);
        c = (theta - std::sin(theta)) / (theta * theta * theta);
    }
    return add(add(Mat3::identity(), K, b), K2, c);
}

Mat3 left_jacobian_inv(const Vec3& w) {
    const double theta = norm(w);
    const Mat3 K = skew(w);
    const Mat3 K2 = matmul(K, K);
    double c;
    if (theta < 1e-8) {
        c = 1.0 / 12.0 + theta * theta / 720.0;
    } else {
        c = 1.0 / (theta * theta) -
            (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    }
    return add(add(Mat3::identity(), K, -0.5), K2, c);
}
}  // namespace

Pose exp_map(const Twist& xi) {
    if (!finite3(xi.omega) || !finite3(xi.nu))
        throw std::invalid_argument("exp_map: non-finite twist");
    if (norm(xi.omega) >= M_PI)
        throw std::invalid_argument("exp_map: |omega| must be < pi");
    Pose p;
    p.rotation = Rotation::from_matrix_unchecked(rodrigues(xi.omega));
    p.translation = matvec(left_jacobian(xi.omega), xi.nu);
    return p;
}

Twist log_map(const Pose& p) {
    const Mat3& R = p.rotation.matrix();
    const double tr = R(0, 0) + R(1, 1) + R(2, 2);
    if (tr <= -1.0 + 1e-9)
        throw std::invalid_argument("log_map: at or near the pi-rotation singularity");
    const double cos_theta = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
    const double theta = std::acos(cos_theta);
    Vec3 axis_scaled{R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)};
    Twist xi;
    if (theta < 1e-8) {
        xi.omega = 0.5 * axis_scaled;
    } else {
        xi.omega = (theta / (2.0 * std::sin(theta))) * axis_scaled;
    }
    xi.nu = matvec(left_jacobian_inv(xi.omega), p.translation);
    return xi;
}

Pose tangent_step(const Pose& p, const Vec3& grad_omega, const Vec3& grad_nu,
                  double lr_R, double lr_t) {
    if (!finite3(grad_omega) || !finite3(grad_nu))
        throw std::invalid_argument("tangent_step: non-finite gradient");
    if (lr_R < 0 || lr_t < 0) throw std::invalid_argument("tangent_step: negative learning rate");
    Pose out = p;
    const Vec3 step_w = -lr_R * grad_omega;
    if (lr_R != 0.0 && (step_w[0] != 0 || step_w[1] != 0 || step_w[2] != 0)) {
        Mat3 R = matmul(rodrigues(step_w), p.rotation.matrix());
        Rotation r = Rotation::from_matrix_unchecked(R);
        if (r.orthonormality_drift() > 1e-9)
            r = Rotation::from_matrix_unchecked(nearest_rotation(R));
        out.rotation = r;
    }
    if (lr_t != 0.0) out.translation = p.translation - lr_t * grad_nu;
    return out;
}

std::vector<Ray> generate_rays(const Pose& p, const CameraIntrinsics& k,
                               const std::vector<std::pair<double, double>>& pixels,
                               double near, double far) {
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const auto& [u, v] : pixels) {
        Vec3 d_cam{(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0};
        Ray r;
        r.origin = p.translation;
        r.direction = normalized(p.rotation.apply(d_cam));
        r.near = near;
        r.far = far;
        rays.push_back(r);
    }
    return rays;
}

std::pair<double, double> pose_error(const Pose& a, const Pose& b) {
    const double trans = norm(a.translation - b.translation);
    const Mat3 rel = matmul(transpose(a.rotation.matrix()), b.rotation.matrix());
    const double tr = rel(0, 0) + rel(1, 1) + rel(2, 2);
    const double arg = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
    const double rot_deg = std::acos(arg) * 180.0 / M_PI;
    return {trans, rot_deg};
}

Pose perturb_pose(const Pose& gt, double rot_deg, double trans, Rng& rng) {
    if (rot_deg < 0 || trans < 0) throw std::invalid_argument("perturb_pose: negative magnitude");
    auto random_unit = [&rng] {
        // rejection-sampled uniform direction
        for (;;) {
            Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            double n = norm(v);
            if (n > 1e-3 && n <= 1.0) return (1.0 / n) * v;
        }
    };
    Pose out = gt;
    const Vec3 rot_axis = random_unit();
    const Vec3 trans_dir = random_unit();
    const double angle = rot_deg * M_PI / 180.0;
    if (rot_deg > 0)
        out.rotation = Rotation::from_matrix_unchecked(
            matmul(rodrigues(angle * rot_axis), gt.rotation.matrix()));
    out.translation = gt.translation + trans * trans_dir;
    return out;
}

Mat3 quat_to_matrix(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 m;
    m.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
           2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    return m;
}

Quat matrix_to_quat(const Mat3& m) {
    const double tr = m(0, 0) + m(1, 1) + m(2, 2);
    Quat q;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
             (m(1, 0) - m(0, 1)) / s};
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
        q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
             (m(0, 2) + m(2, 0)) / s};
    } else if (m(1, 1) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
        q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
             (m(1, 2) + m(2, 1)) / s};
    } else {
        double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
        q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
             (m(1, 2) + m(2, 1)) / s, 0.25 * s};
    }
    // canonical sign: w >= 0
    if (q[0] < 0)
        for (double& c : q) c = -c;
    double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& c : q) c /= n;
    return q;
}

std::array<Mat3, 4> quat_to_matrix_jacobian(const Quat& q_in) {
    // Derivative of R(q/|q|) w.r.t. the raw components of q.
    const double n2 = q_in[0] * q_in[0] + q_in[1] * q_in[1] + q_in[2] * q_in[2] +
                      q_in[3] * q_in[3];
    const double n = std::sqrt(n2);
    Quat u{q_in[0] / n, q_in[1] / n, q_in[2] / n, q_in[3] / n};
    const double w = u[0], x = u[1], y = u[2], z = u[3];

    // dR/du for the unit quaternion u.
    std::array<Mat3, 4> dRdu;
    dRdu[0].m = {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
    dRdu[1].m = {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
    dRdu[2].m = {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
    dRdu[3].m = {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};

    // du_j/dq_i = (delta_ij - u_i u_j) / n  -> chain rule.
    std::array<Mat3, 4> out;
    for (int i = 0; i < 4; ++i) {
        Mat3 acc;
        acc.m.fill(0.0);
        for (int j = 0; j < 4; ++j) {
            const double coef = ((i == j ? 1.0 : 0.0) - u[i] * u[j]) / n;
            for (int e = 0; e < 9; ++e) acc.m[e] += coef * dRdu[j].m[e];
        }
        out[i] = acc;
    }
    return out;
}

}  // namespace nefes::lie
