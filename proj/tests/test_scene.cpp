#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "nefes/scene.hpp"

using namespace nefes;
using namespace nefes::scene;

namespace {

lie::Pose camera_on_z(double dist) {
    // camera at (0,0,dist) looking down -z: 180 degree rotation about x
    lie::Mat3 m;
    m(0, 0) = 1;
    m(1, 1) = -1;
    m(2, 2) = -1;
    lie::Pose p;
    p.rotation = lie::Rotation(m);
    p.translation = {0, 0, dist};
    return p;
}

bool images_equal(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.w != b.w || a.h != b.h) return false;
    for (std::size_t i = 0; i < a.rgb.size(); ++i)
        if (a.rgb[i] != b.rgb[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("scene generation is seeded and within contract") {
    SyntheticScene a = generate_scene(0);
    SyntheticScene b = generate_scene(0);
    REQUIRE(a.primitives.size() == b.primitives.size());
    CHECK(a.primitives.size() >= 5);
    CHECK(a.primitives.size() <= 12);
    for (std::size_t i = 0; i < a.primitives.size(); ++i) {
        CHECK(a.primitives[i].kind == b.primitives[i].kind);
        for (int k = 0; k < 3; ++k) {
            CHECK(a.primitives[i].center[k] == b.primitives[i].center[k]);
            CHECK(a.primitives[i].size[k] == b.primitives[i].size[k]);
            CHECK(a.primitives[i].albedo[k] == b.primitives[i].albedo[k]);
        }
    }
    CHECK(!a.transient_distractors.empty());

    // pairwise distinct albedos
    for (std::size_t i = 0; i < a.primitives.size(); ++i)
        for (std::size_t j = i + 1; j < a.primitives.size(); ++j) {
            const auto& u = a.primitives[i].albedo;
            const auto& v = a.primitives[j].albedo;
            CHECK((u[0] != v[0] || u[1] != v[1] || u[2] != v[2]));
        }

    SyntheticScene c = generate_scene(1);
    CHECK((c.primitives.size() != a.primitives.size() ||
           c.primitives[0].center != a.primitives[0].center));
}

TEST_CASE("empty scene renders the background exactly") {
    SyntheticScene s;
    lie::CameraIntrinsics intr = default_intrinsics();
    ImageBuffer img = render_ground_truth(s, camera_on_z(2.0), intr, ExposureJitter{});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) CHECK(img.at(y, x, c) == s.background_color[c]);
}

TEST_CASE("center pixel of a staring camera matches the hand-evaluated shade") {
    SyntheticScene s;
    Primitive p;
    p.kind = Primitive::Kind::sphere;
    p.center = {0, 0, 0};
    p.size = {0.4, 0, 0};
    p.albedo = {0.6, 0.2, 0.9};
    s.primitives.push_back(p);

    // principal point at an exact pixel center so one ray runs down the axis
    lie::CameraIntrinsics intr;
    intr.width = 3;
    intr.height = 3;
    intr.fx = intr.fy = 10.0;
    intr.cx = intr.cy = 1.5;

    ImageBuffer img = render_ground_truth(s, camera_on_z(2.0), intr, ExposureJitter{});

    // hit at (0,0,0.4), normal (0,0,1); light is normalize(0.3,-0.8,0.5),
    // so the cosine term is 0.5/sqrt(0.98)
    const double shade = 0.3 + 0.7 * (0.5 / std::sqrt(0.98));
    for (int c = 0; c < 3; ++c)
        CHECK(img.at(1, 1, c) == doctest::Approx(p.albedo[c] * shade).epsilon(1e-12));
}

TEST_CASE("identity jitter leaves the image bit-exact") {
    SyntheticScene s = generate_scene(3);
    lie::CameraIntrinsics intr = default_intrinsics().scaled(40, 30);
    lie::Pose pose = camera_on_z(2.5 * s.radius());

    ExposureJitter id;
    REQUIRE(id.is_identity());
    ImageBuffer a = render_ground_truth(s, pose, intr, id);

    ExposureJitter gainy;
    gainy.gain = {0.9, 0, 0, 0, 1.1, 0.05, 0, 0, 1.0};
    gainy.bias = {0.02, 0, -0.01};
    REQUIRE(!gainy.is_identity());
    ImageBuffer b = render_ground_truth(s, pose, intr, gainy);

    ImageBuffer raw = a;
    gainy.apply(raw);
    CHECK(images_equal(raw, b));
    for (std::size_t i = 0; i < b.rgb.size(); ++i) {
        CHECK(b.rgb[i] >= 0.0);
        CHECK(b.rgb[i] <= 1.0);
    }
}

TEST_CASE("dataset generation writes a reloadable split") {
    SyntheticScene s = generate_scene(5);
    std::string dir = "/tmp/nefes_test_scene_ds";
    std::filesystem::remove_all(dir);
    DatasetSplit split = make_dataset(s, 6, 4, 17, dir);

    REQUIRE(split.data.train.size() == 6);
    REQUIRE(split.data.test.size() == 4);
    CHECK(std::filesystem::exists(dir + "/manifest"));
    CHECK(std::filesystem::exists(dir + "/poses.txt"));
    int n_png = 0;
    for (auto& e : std::filesystem::directory_iterator(dir + "/images"))
        if (e.path().extension() == ".png") ++n_png;
    CHECK(n_png == 10);

    DatasetSplit re = load_dataset(dir);
    REQUIRE(re.data.train.size() == 6);
    REQUIRE(re.data.test.size() == 4);
    auto same_pose = [](const lie::Pose& a, const lie::Pose& b) {
        for (int i = 0; i < 9; ++i) CHECK(a.rotation.matrix().m[i] == b.rotation.matrix().m[i]);
        for (int i = 0; i < 3; ++i) CHECK(a.translation[i] == b.translation[i]);
    };
    for (int i = 0; i < 6; ++i) same_pose(split.data.train[i].pose, re.data.train[i].pose);
    for (int i = 0; i < 4; ++i) same_pose(split.data.test[i].pose, re.data.test[i].pose);

    // test views never contain transient distractors
    for (int i = 0; i < 4; ++i) {
        ImageBuffer clean = render_ground_truth(s, split.data.test[i].pose,
                                                split.data.intrinsics, split.test_jitter[i], -1);
        CHECK(images_equal(clean, split.data.test[i].image));
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("zero jitter fraction gives identity train jitters") {
    SyntheticScene s = generate_scene(9);
    std::string dir = "/tmp/nefes_test_scene_nojit";
    std::filesystem::remove_all(dir);
    DatasetSplit split = make_dataset(s, 5, 2, 21, dir, 0.0);
    for (const auto& j : split.train_jitter) CHECK(j.is_identity());
    for (const auto& e : split.data.train) CHECK(!e.jittered);
    // the test side is always jittered, independent of the fraction
    for (const auto& j : split.test_jitter) CHECK(!j.is_identity());
    std::filesystem::remove_all(dir);
}

TEST_CASE("toy pose regressor is seeded and emits valid rotations") {
    lie::CameraIntrinsics intr = default_intrinsics();
    APRParams a = init_apr(intr, 13);
    APRParams b = init_apr(intr, 13);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != init_apr(intr, 14).checksum());

    SyntheticScene s = generate_scene(5);
    std::string dir = "/tmp/nefes_test_scene_apr";
    std::filesystem::remove_all(dir);
    DatasetSplit split = make_dataset(s, 4, 2, 17, dir);
    APRParams t1 = train_toy_apr(split, 2, 13);
    APRParams t2 = train_toy_apr(split, 2, 13);
    CHECK(t1.checksum() == t2.checksum());

    for (const auto& e : split.data.test) {
        lie::Pose p = apr_predict(e.image, intr, t1);
        CHECK(p.rotation.orthonormality_drift() < 1e-9);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("nearest pose initialization") {
    SyntheticScene s = generate_scene(5);
    std::string dir = "/tmp/nefes_test_scene_np";
    std::filesystem::remove_all(dir);
    DatasetSplit split = make_dataset(s, 5, 2, 23, dir);

    for (std::size_t i = 0; i < split.data.train.size(); ++i) {
        lie::Pose p = nearest_pose_init(split.data.train[i].image, split);
        auto [te, re] = lie::pose_error(p, split.data.train[i].pose);
        CHECK(te == 0.0);
        CHECK(re < 1e-5);
    }

    // exact tie between duplicated images resolves to the lowest index
    DatasetSplit tie = split;
    tie.data.train.resize(2);
    tie.data.train[1].image = tie.data.train[0].image;
    lie::Pose p = nearest_pose_init(tie.data.train[0].image, tie);
    auto [te, re] = lie::pose_error(p, tie.data.train[0].pose);
    CHECK(te == 0.0);
    CHECK(re < 1e-5);

    std::filesystem::remove_all(dir);
}
