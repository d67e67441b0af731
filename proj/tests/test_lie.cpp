#include <cmath>

#include "doctest.h"
#include "nefes/lie.hpp"
#include "nefes/rng.hpp"

using namespace nefes;
using namespace nefes::lie;

namespace {

Twist random_twist(Rng& rng, double omega_max = 3.0) {
    Twist xi;
    for (int i = 0; i < 3; ++i) {
        xi.omega[i] = rng.uniform(-1.0, 1.0);
        xi.nu[i] = rng.uniform(-2.0, 2.0);
    }
    double n = norm(xi.omega);
    if (n > omega_max) xi.omega = (omega_max / n) * xi.omega;
    return xi;
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
    double m = 0;
    for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a.m[i] - b.m[i]));
    return m;
}

}  // namespace

TEST_CASE("exp_map identity and near-pi rotation") {
    Pose p = exp_map(Twist{});
    CHECK(max_abs_diff(p.rotation.matrix(), Mat3::identity()) == 0.0);
    CHECK(norm(p.translation) == 0.0);

    Twist xi;
    xi.omega = {3.14159265358979312 - 1e-6, 0, 0};
    Pose q = exp_map(xi);
    Mat3 want;
    want.m = {1, 0, 0, 0, -1, 0, 0, 0, -1};
    CHECK(max_abs_diff(q.rotation.matrix(), want) < 1e-5);
    CHECK(norm(q.translation) == 0.0);
}

TEST_CASE("log_map inverts exp_map over 1000 seeded twists") {
    Rng rng(17);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        Twist xi = random_twist(rng);
        Twist back = log_map(exp_map(xi));
        for (int k = 0; k < 3; ++k) {
            worst = std::max(worst, std::abs(back.omega[k] - xi.omega[k]));
            worst = std::max(worst, std::abs(back.nu[k] - xi.nu[k]));
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("log_map of identity and pure translation") {
    Twist z = log_map(Pose{});
    CHECK(norm(z.omega) == 0.0);
    CHECK(norm(z.nu) == 0.0);

    Pose p;
    p.translation = {1, 2, 3};
    Twist t = log_map(p);
    CHECK(norm(t.omega) == 0.0);
    CHECK(std::abs(t.nu[0] - 1) < 1e-12);
    CHECK(std::abs(t.nu[1] - 2) < 1e-12);
    CHECK(std::abs(t.nu[2] - 3) < 1e-12);
}

TEST_CASE("tangent_step zero gradient and decoupling") {
    Rng rng(3);
    Pose p = exp_map(random_twist(rng));
    p.translation = {0.4, -0.2, 1.1};

    Pose same = tangent_step(p, {0, 0, 0}, {0, 0, 0}, 0.5, 0.5);
    CHECK(max_abs_diff(same.rotation.matrix(), p.rotation.matrix()) == 0.0);
    CHECK(norm(same.translation - p.translation) == 0.0);

    Pose moved = tangent_step(p, {0, 0, 0}, {1, 0, 0}, 0.5, 0.1);
    CHECK(max_abs_diff(moved.rotation.matrix(), p.rotation.matrix()) == 0.0);
    CHECK(std::abs(moved.translation[0] - (p.translation[0] - 0.1)) < 1e-15);
    CHECK(moved.translation[1] == p.translation[1]);
    CHECK(moved.translation[2] == p.translation[2]);

    // lr_t = 0 never changes translation, lr_R = 0 never changes rotation
    Pose rot_only = tangent_step(p, {0.3, -0.1, 0.2}, {1, 2, 3}, 0.05, 0.0);
    CHECK(norm(rot_only.translation - p.translation) == 0.0);
    Pose trans_only = tangent_step(p, {0.3, -0.1, 0.2}, {1, 2, 3}, 0.0, 0.05);
    CHECK(max_abs_diff(trans_only.rotation.matrix(), p.rotation.matrix()) == 0.0);
}

TEST_CASE("tangent_step orthonormality drift after 1000 steps") {
    Rng rng(11);
    Pose p;
    for (int i = 0; i < 1000; ++i) {
        Vec3 gw{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vec3 gv{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        p = tangent_step(p, gw, gv, 0.01, 0.01);
    }
    CHECK(p.rotation.orthonormality_drift() < 1e-6);
    CHECK(std::abs(det(p.rotation.matrix()) - 1.0) < 1e-6);
}

TEST_CASE("generate_rays conventions") {
    CameraIntrinsics k;
    k.fx = 100;
    k.fy = 100;
    k.cx = 40;
    k.cy = 30;
    k.width = 80;
    k.height = 60;

    Pose id;
    auto rays = generate_rays(id, k, {{k.cx - 0.5, k.cy - 0.5}});
    CHECK(std::abs(rays[0].direction[0]) < 1e-15);
    CHECK(std::abs(rays[0].direction[1]) < 1e-15);
    CHECK(std::abs(rays[0].direction[2] - 1.0) < 1e-15);
    CHECK(norm(rays[0].origin) == 0.0);
    CHECK(rays[0].near > 0);
    CHECK(rays[0].near < rays[0].far);

    Pose shifted;
    shifted.translation = {0.5, -1.0, 2.0};
    auto r2 = generate_rays(shifted, k, {{10.0, 50.0}, {k.cx - 0.5, k.cy - 0.5}});
    CHECK(norm(r2[0].origin - shifted.translation) == 0.0);
    auto r2_id = generate_rays(id, k, {{10.0, 50.0}});
    CHECK(norm(r2[0].direction - r2_id[0].direction) < 1e-15);

    // 90 degree yaw about the camera y axis maps +z to the rotated z column
    Twist yaw;
    yaw.omega = {0, 1.5707963267948966, 0};
    Pose rot = exp_map(yaw);
    auto r3 = generate_rays(rot, k, {{k.cx - 0.5, k.cy - 0.5}});
    Vec3 want = rot.rotation.apply({0, 0, 1});
    CHECK(norm(r3[0].direction - want) < 1e-12);
    CHECK(std::abs(want[0] - 1.0) < 1e-12);
}

TEST_CASE("pose_error metrics") {
    Pose a;
    auto [t0, r0] = pose_error(a, a);
    CHECK(t0 == 0.0);
    CHECK(r0 == 0.0);

    Pose b;
    b.translation = {3, 4, 0};
    auto [t1, r1] = pose_error(a, b);
    CHECK(std::abs(t1 - 5.0) < 1e-12);
    CHECK(r1 < 1e-9);

    Twist xi;
    xi.omega = {0, 0, 10.0 * 3.14159265358979312 / 180.0};
    Pose c = exp_map(xi);
    auto [t2, r2] = pose_error(a, c);
    CHECK(t2 == 0.0);
    CHECK(std::abs(r2 - 10.0) < 1e-9);

    auto [t3, r3] = pose_error(c, a);
    CHECK(std::abs(r3 - r2) < 1e-12);
}

TEST_CASE("perturb_pose produces exact error magnitudes") {
    Rng rng(23);
    Twist xi = random_twist(rng, 2.0);
    Pose gt = exp_map(xi);
    for (double rot_deg : {1.0, 5.0, 20.0}) {
        for (double trans : {0.0, 0.05, 0.4}) {
            Pose p = perturb_pose(gt, rot_deg, trans, rng);
            auto [te, re] = pose_error(gt, p);
            CHECK(std::abs(te - trans) < 1e-9);
            CHECK(std::abs(re - rot_deg) < 1e-9);
        }
    }
}

TEST_CASE("quaternion round trip and jacobian") {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        Twist xi = random_twist(rng, 3.0);
        Mat3 R = exp_map(xi).rotation.matrix();
        Quat q = matrix_to_quat(R);
        double n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
        CHECK(std::abs(n2 - 1.0) < 1e-12);
        CHECK(max_abs_diff(quat_to_matrix(q), R) < 1e-9);
    }

    // finite difference check of d(R(q/|q|))/dq at a non-unit q
    Quat q{0.9, -0.3, 0.2, 0.4};
    auto jac = quat_to_matrix_jacobian(q);
    double h = 1e-6;
    auto normalized_R = [](Quat v) {
        double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
        for (auto& c : v) c /= n;
        return quat_to_matrix(v);
    };
    for (int k = 0; k < 4; ++k) {
        Quat qp = q, qm = q;
        qp[k] += h;
        qm[k] -= h;
        Mat3 Rp = normalized_R(qp), Rm = normalized_R(qm);
        for (int e = 0; e < 9; ++e) {
            double fd = (Rp.m[e] - Rm.m[e]) / (2 * h);
            CHECK(std::abs(fd - jac[k].m[e]) < 1e-6);
        }
    }
}
