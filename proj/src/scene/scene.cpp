#include "nefes/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nefes/parallel.hpp"
#include "nefes/png.hpp"
#include "nefes/training.hpp"

namespace nefes::scene {

namespace fs = std::filesystem;
using lie::Vec3;
using lie::operator+;
using lie::operator-;
using lie::operator*;

namespace {

// fixed world-space directional light (unit vector toward the light)
const Vec3 kLightDir = lie::normalized(Vec3{0.3, -0.8, 0.5});
constexpr double kAmbient = 0.3;
constexpr double kDiffuse = 0.7;

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal{};
    const Primitive* prim = nullptr;
};

bool intersect_sphere(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
    const Vec3 oc = o - p.center;
    const double r = p.size[0];
    const double b = lie::dot(oc, d);
    const double c = lie::dot(oc, oc) - r * r;
    const double disc = b * b - c;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < 1e-6) t = -b + sq;
    if (t < 1e-6 || t >= hit.t) return false;
    hit.t = t;
    const Vec3 pos = o + t * d;
    hit.normal = lie::normalized(pos - p.center);
    hit.prim = &p;
    return true;
}

bool intersect_box(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    int axis = 0;
    double axis_sign = 1.0;
    for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.size[a];
        const double hi = p.center[a] + p.size[a];
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo || o[a] > hi) return false;
            continue;
        }
        double t0 = (lo - o[a]) / d[a];
        double t1 = (hi - o[a]) / d[a];
        double sign = -1.0;
        if (t0 > t1) {
            std::swap(t0, t1);
            sign = 1.0;
        }
        if (t0 > tmin) {
            tmin = t0;
            axis = a;
            axis_sign = sign;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return false;
    }
    double t = tmin;
    if (t < 1e-6) t = tmax;
    if (t < 1e-6 || t >= hit.t) return false;
    hit.t = t;
    Vec3 n{0, 0, 0};
    n[axis] = axis_sign;
    // when starting inside, flip toward the origin side
    if (t == tmax) n[axis] = -n[axis];
    hit.normal = n;
    hit.prim = &p;
    return true;
}

void intersect(const Primitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
    if (p.kind == Primitive::Kind::sphere)
        intersect_sphere(p, o, d, hit);
    else
        intersect_box(p, o, d, hit);
}

std::array<double, 3> shade(const Hit& hit) {
    const double lambert = std::max(0.0, lie::dot(hit.normal, kLightDir));
    const double s = kAmbient + kDiffuse * lambert;
    return {hit.prim->albedo[0] * s, hit.prim->albedo[1] * s, hit.prim->albedo[2] * s};
}

std::uint64_t fnv_hash(const double* data, std::size_t n, std::uint64_t h) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(double));
        std::memcpy(&bits, &data[i], sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFF;
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

// look-at with the +z cap axis as world "up": camera x right, y down,
// z forward
lie::Pose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 f = lie::normalized(target - eye);
    const Vec3 world_down{0, 0, -1};
    Vec3 right = lie::cross(world_down, f);
    const double n = lie::norm(right);
    if (n < 1e-9) right = Vec3{1, 0, 0};
    else right = (1.0 / n) * right;
    const Vec3 down = lie::cross(f, right);
    lie::Mat3 R;
    for (int r = 0; r < 3; ++r) {
        R(r, 0) = right[r];
        R(r, 1) = down[r];
        R(r, 2) = f[r];
    }
    lie::Pose p;
    p.rotation = lie::Rotation(lie::nearest_rotation(R));
    p.translation = eye;
    return p;
}

Vec3 sample_cap_direction(Rng& rng, double half_angle_rad) {
    // uniform over the spherical cap around +z
    const double cos_min = std::cos(half_angle_rad);
    const double cz = cos_min + (1.0 - cos_min) * rng.uniform();
    const double s = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    const double phi = 2.0 * M_PI * rng.uniform();
    return {s * std::cos(phi), s * std::sin(phi), cz};
}

std::string pose_line(const lie::Pose& p) {
    char buf[64];
    std::string line;
    const lie::Mat3& R = p.rotation.matrix();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) {
            const double v = c < 3 ? R(r, c) : p.translation[r];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            if (!line.empty()) line += ' ';
            line += buf;
        }
    return line;
}

lie::Pose parse_pose_line(const std::string& line) {
    std::istringstream ss(line);
    lie::Mat3 R;
    Vec3 t;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) {
            double v;
            if (!(ss >> v)) throw std::runtime_error("poses.txt: malformed line");
            if (c < 3)
                R(r, c) = v;
            else
                t[r] = v;
        }
    lie::Pose p;
    p.rotation = lie::Rotation(R, 1e-6);
    p.translation = t;
    return p;
}

}  // namespace

std::array<double, 3> SyntheticScene::centroid() const {
    Vec3 c{0, 0, 0};
    for (const auto& p : primitives) c = c + p.center;
    return (1.0 / static_cast<double>(primitives.size())) * c;
}

double SyntheticScene::radius() const {
    const Vec3 c = centroid();
    double r = 0.5;
    for (const auto& p : primitives) {
        const double ext = std::max({p.size[0], p.size[1], p.size[2]});
        r = std::max(r, lie::norm(p.center - c) + ext);
    }
    return r;
}

bool ExposureJitter::is_identity() const {
    static const ExposureJitter id{};
    return gain == id.gain && bias == id.bias;
}

void ExposureJitter::apply(ImageBuffer& img) const {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double in[3] = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            for (int r = 0; r < 3; ++r) {
                double v = bias[r];
                for (int c = 0; c < 3; ++c) v += gain[r * 3 + c] * in[c];
                img.at(y, x, r) = std::clamp(v, 0.0, 1.0);
            }
        }
}

SyntheticScene generate_scene(std::uint64_t seed) {
    Rng rng(seed ^ 0x7363656E65ull);
    SyntheticScene s;
    const int n = 5 + static_cast<int>(rng.uniform_index(8));  // 5..12
    for (int i = 0; i < n; ++i) {
        Primitive p;
        p.kind = rng.uniform() < 0.5 ? Primitive::Kind::sphere : Primitive::Kind::box;
        for (int a = 0; a < 3; ++a) p.center[a] = rng.uniform(-0.55, 0.55);
        if (p.kind == Primitive::Kind::sphere) {
            p.size = {rng.uniform(0.15, 0.35), 0, 0};
            p.size[1] = p.size[2] = p.size[0];
        } else {
            for (int a = 0; a < 3; ++a) p.size[a] = rng.uniform(0.1, 0.3);
        }
        for (;;) {
            for (int c = 0; c < 3; ++c) p.albedo[c] = rng.uniform(0.1, 0.95);
            double closest = 1e9;
            for (const auto& q : s.primitives) {
                double d = 0;
                for (int c = 0; c < 3; ++c) d += std::abs(p.albedo[c] - q.albedo[c]);
                closest = std::min(closest, d);
            }
            if (closest > 0.1) break;
        }
        s.primitives.push_back(p);
    }
    Distractor d;
    d.prim.kind = Primitive::Kind::sphere;
    for (int a = 0; a < 3; ++a) d.prim.center[a] = rng.uniform(-0.4, 0.4);
    d.prim.size = {0.2, 0.2, 0.2};
    d.prim.albedo = {0.95, 0.1, 0.1};
    s.transient_distractors.push_back(d);
    return s;
}

ImageBuffer render_ground_truth(const SyntheticScene& scene, const lie::Pose& pose,
                                const lie::CameraIntrinsics& intr, const ExposureJitter& jitter,
                                int train_view_index) {
    intr.validate();
    ImageBuffer img(intr.height, intr.width);
    std::vector<const Primitive*> active;
    for (const auto& p : scene.primitives) active.push_back(&p);
    if (train_view_index >= 0)
        for (const auto& d : scene.transient_distractors)
            if (std::find(d.active_view_indices.begin(), d.active_view_indices.end(),
                          train_view_index) != d.active_view_indices.end())
                active.push_back(&d.prim);

    const std::size_t npix = static_cast<std::size_t>(intr.height) * intr.width;
    parallel_for_blocks(npix, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, double>> pix;
        for (std::size_t i = begin; i < end; ++i)
            pix.emplace_back(static_cast<double>(i % intr.width),
                             static_cast<double>(i / intr.width));
        auto rays = lie::generate_rays(pose, intr, pix);
        for (std::size_t i = begin; i < end; ++i) {
            const auto& ray = rays[i - begin];
            Hit hit;
            for (const Primitive* p : active) intersect(*p, ray.origin, ray.direction, hit);
            std::array<double, 3> rgb = hit.prim ? shade(hit) : scene.background_color;
            const int y = static_cast<int>(i / intr.width), x = static_cast<int>(i % intr.width);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(rgb[c], 0.0, 1.0);
        }
    });
    jitter.apply(img);
    return img;
}

lie::CameraIntrinsics default_intrinsics() {
    lie::CameraIntrinsics k;
    k.width = 160;
    k.height = 120;
    k.fx = k.fy = 140.0;
    k.cx = 80.0;
    k.cy = 60.0;
    return k;
}

DatasetSplit make_dataset(const SyntheticScene& scene_in, int n_train, int n_test,
                          std::uint64_t seed, const std::string& out_dir,
                          double jitter_fraction) {
    if (n_train < 1 || n_test < 1) throw std::invalid_argument("make_dataset: splits >= 1");
    SyntheticScene scene = scene_in;
    Rng rng(seed ^ 0x64617461ull);

    // a random third of train views sees each distractor
    for (auto& d : scene.transient_distractors) {
        d.active_view_indices.clear();
        for (int i = 0; i < n_train; ++i)
            if (rng.uniform() < 1.0 / 3.0) d.active_view_indices.push_back(i);
        if (d.active_view_indices.empty())
            d.active_view_indices.push_back(static_cast<int>(rng.uniform_index(n_train)));
    }

    DatasetSplit split;
    split.data.seed = seed;
    split.data.intrinsics = default_intrinsics();
    const Vec3 c = scene.centroid();
    const double r = scene.radius();
    const double half_angle = 60.0 * M_PI / 180.0;

    auto sample_pose = [&]() {
        const Vec3 dir = sample_cap_direction(rng, half_angle);
        const double dist = r * rng.uniform(2.0, 3.0);
        return look_at(c + dist * dir, c);
    };

    fs::create_directories(fs::path(out_dir) / "images");

    std::vector<std::string> manifest_lines, pose_lines;
    int img_index = 0;
    auto emit = [&](const lie::Pose& pose, const ExposureJitter& jit, bool is_train,
                    int view_index) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.png", img_index++);
        ImageBuffer img = render_ground_truth(scene, pose, split.data.intrinsics, jit,
                                              is_train ? view_index : -1);
        write_png((fs::path(out_dir) / "images" / name).string(), img);
        std::string line = std::string(name) + (is_train ? " train" : " test");
        if (jit.is_identity()) {
            line += " id";
        } else {
            char buf[64];
            for (int i = 0; i < 9; ++i) {
                std::snprintf(buf, sizeof(buf), " %.17g", jit.gain[i]);
                line += buf;
            }
            for (int i = 0; i < 3; ++i) {
                std::snprintf(buf, sizeof(buf), " %.17g", jit.bias[i]);
                line += buf;
            }
        }
        manifest_lines.push_back(line);
        pose_lines.push_back(pose_line(pose));
        DatasetEntry e;
        e.image_name = name;
        e.image = img;
        e.pose = pose;
        e.jittered = !jit.is_identity();
        (is_train ? split.data.train : split.data.test).push_back(std::move(e));
        (is_train ? split.train_jitter : split.test_jitter).push_back(jit);
    };

    for (int i = 0; i < n_train; ++i) {
        const lie::Pose pose = sample_pose();
        ExposureJitter jit;
        jit.seed = rng.state();
        if (rng.uniform() < jitter_fraction) {
            for (int a = 0; a < 3; ++a) jit.gain[a * 3 + a] = rng.uniform(0.7, 0.98);
            for (int a = 0; a < 9; ++a)
                if (a % 4 != 0) jit.gain[a] = rng.uniform(-0.03, 0.03);
            for (int a = 0; a < 3; ++a) jit.bias[a] = rng.uniform(-0.05, 0.0);
        }
        emit(pose, jit, true, i);
    }
    for (int i = 0; i < n_test; ++i) {
        const lie::Pose pose = sample_pose();
        // gain range disjoint from the train jitter distribution
        ExposureJitter jit;
        jit.seed = rng.state();
        for (int a = 0; a < 3; ++a) jit.gain[a * 3 + a] = rng.uniform(1.02, 1.3);
        for (int a = 0; a < 9; ++a)
            if (a % 4 != 0) jit.gain[a] = rng.uniform(-0.03, 0.03);
        for (int a = 0; a < 3; ++a) jit.bias[a] = rng.uniform(0.0, 0.05);
        emit(pose, jit, false, i);
    }

    std::ofstream mf(fs::path(out_dir) / "manifest");
    if (!mf) throw std::runtime_error("make_dataset: cannot write manifest");
    const auto& k = split.data.intrinsics;
    mf << "nefes-dataset 1\n";
    mf << "seed " << seed << "\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "intrinsics %.17g %.17g %.17g %.17g %d %d\n", k.fx, k.fy,
                  k.cx, k.cy, k.width, k.height);
    mf << buf;
    mf << "images " << manifest_lines.size() << "\n";
    for (const auto& l : manifest_lines) mf << l << "\n";
    mf.close();
    if (!mf) throw std::runtime_error("make_dataset: manifest write failed");

    std::ofstream pf(fs::path(out_dir) / "poses.txt");
    for (const auto& l : pose_lines) pf << l << "\n";
    pf.close();
    if (!pf) throw std::runtime_error("make_dataset: poses.txt write failed");

    return split;
}

DatasetSplit load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir);
    std::string tag;
    int version = 0;
    mf >> tag >> version;
    if (tag != "nefes-dataset" || version != 1)
        throw std::runtime_error("load_dataset: unsupported manifest format");

    DatasetSplit split;
    std::string key;
    mf >> key >> split.data.seed;
    if (key != "seed") throw std::runtime_error("load_dataset: malformed manifest");
    auto& k = split.data.intrinsics;
    mf >> key >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
    if (key != "intrinsics") throw std::runtime_error("load_dataset: malformed manifest");
    std::size_t n = 0;
    mf >> key >> n;
    if (key != "images") throw std::runtime_error("load_dataset: malformed manifest");

    std::ifstream pf(fs::path(dir) / "poses.txt");
    if (!pf) throw std::runtime_error("load_dataset: missing poses.txt in " + dir);

    for (std::size_t i = 0; i < n; ++i) {
        std::string name, tagi, jtag;
        mf >> name >> tagi >> jtag;
        ExposureJitter jit;
        if (jtag != "id") {
            jit.gain[0] = std::stod(jtag);
            for (int a = 1; a < 9; ++a) mf >> jit.gain[a];
            for (int a = 0; a < 3; ++a) mf >> jit.bias[a];
        }
        std::string pline;
        do {
            if (!std::getline(pf, pline)) throw std::runtime_error("load_dataset: poses.txt short");
        } while (pline.empty());

        DatasetEntry e;
        e.image_name = name;
        e.image = read_png((fs::path(dir) / "images" / name).string());
        e.pose = parse_pose_line(pline);
        e.jittered = !jit.is_identity();
        const bool is_train = tagi == "train";
        (is_train ? split.data.train : split.data.test).push_back(std::move(e));
        (is_train ? split.train_jitter : split.test_jitter).push_back(jit);
    }
    return split;
}

// ---- toy APR ----

namespace {

Tensor he_tensor(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    Tensor t(rows, cols);
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal();
    return t;
}

}  // namespace

std::uint64_t APRParams::checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& e : params.entries()) h = fnv_hash(e.value.data(), e.value.size(), h);
    return h;
}

APRParams init_apr(const lie::CameraIntrinsics& intr, std::uint64_t seed) {
    APRParams apr;
    if (intr.width >= intr.height) {
        apr.in_h = 60;
        apr.in_w = static_cast<int>(std::lround(60.0 * intr.width / intr.height));
    } else {
        apr.in_w = 60;
        apr.in_h = static_cast<int>(std::lround(60.0 * intr.height / intr.width));
    }
    Rng rng(seed ^ 0x617072ull);
    auto& ps = apr.params;
    ps.add("apr.W0", he_tensor(8, 3 * 9, 3 * 9, rng));
    ps.add("apr.b0", Tensor(1, 8));
    ps.add("apr.W1", he_tensor(16, 8 * 9, 8 * 9, rng));
    ps.add("apr.b1", Tensor(1, 16));
    ps.add("apr.W2", he_tensor(16, 16 * 9, 16 * 9, rng));
    ps.add("apr.b2", Tensor(1, 16));
    ps.add("apr.fc1_W", he_tensor(16, 32, 16, rng));
    ps.add("apr.fc1_b", Tensor(1, 32));
    ps.add("apr.fc2_W", he_tensor(32, 7, 32, rng));
    Tensor b2(1, 7);
    b2[3] = 1.0;  // identity quaternion start
    ps.add("apr.fc2_b", std::move(b2));
    return apr;
}

APRForward apr_forward(ad::Tape& t, const field::Binding& b, ad::Var input, int h, int w) {
    using namespace ad;
    Var x = relu(t, conv2d(t, input, b("apr.W0"), b("apr.b0"), h, w, 3, 2));
    int h1 = (h + 1) / 2, w1 = (w + 1) / 2;
    x = relu(t, conv2d(t, x, b("apr.W1"), b("apr.b1"), h1, w1, 3, 2));
    int h2 = (h1 + 1) / 2, w2 = (w1 + 1) / 2;
    x = relu(t, conv2d(t, x, b("apr.W2"), b("apr.b2"), h2, w2, 3, 2));
    x = mean_rows(t, x);  // global average pool -> [1,16]
    x = relu(t, affine(t, x, b("apr.fc1_W"), b("apr.fc1_b")));
    x = affine(t, x, b("apr.fc2_W"), b("apr.fc2_b"));
    APRForward out;
    out.t = slice_cols(t, x, 0, 3);
    Var q_raw = slice_cols(t, x, 3, 7);
    Var ssq = sum_all(t, square(t, q_raw));
    Var inv_norm = exp_(t, scale(t, log_(t, ssq), -0.5));
    out.q = mul_colvec(t, q_raw, inv_norm);
    return out;
}

lie::Pose apr_predict(const ImageBuffer& query, const lie::CameraIntrinsics& intr,
                      const APRParams& apr) {
    (void)intr;
    ImageBuffer down = resize_area(query, apr.in_h, apr.in_w);
    ad::Tape t;
    field::Binding b = field::bind(t, apr.params, false);
    ad::Var in = t.leaf(down.rgb, false, "apr_input");
    APRForward f = apr_forward(t, b, in, apr.in_h, apr.in_w);
    const Tensor& tv = t.value(f.t);
    const Tensor& qv = t.value(f.q);
    lie::Quat q{qv[0], qv[1], qv[2], qv[3]};
    lie::Pose p;
    p.rotation = lie::Rotation(lie::nearest_rotation(lie::quat_to_matrix(q)));
    p.translation = {tv[0], tv[1], tv[2]};
    return p;
}

APRParams train_toy_apr(const DatasetSplit& split, int epochs, std::uint64_t seed) {
    if (split.data.train.empty()) throw std::invalid_argument("train_toy_apr: empty split");
    APRParams apr = init_apr(split.data.intrinsics, seed);
    Rng rng(seed ^ 0x617072747261696Eull);

    const int n = static_cast<int>(split.data.train.size());
    std::vector<Tensor> inputs;
    std::vector<Tensor> gt(n, Tensor(1, 7));
    for (int i = 0; i < n; ++i) {
        const auto& e = split.data.train[i];
        inputs.push_back(resize_area(e.image, apr.in_h, apr.in_w).rgb);
        lie::Quat q = lie::matrix_to_quat(e.pose.rotation.matrix());
        for (int c = 0; c < 3; ++c) gt[i](0, c) = e.pose.translation[c];
        for (int c = 0; c < 4; ++c) gt[i](0, 3 + c) = q[c];
    }

    train::Adam opt;
    opt.init(apr.params);
    const double lr = 1e-3;

    for (int ep = 0; ep < epochs; ++ep) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);
        for (int oi = 0; oi < n; ++oi) {
            const int i = order[oi];
            ad::Tape t;
            field::Binding b = field::bind(t, apr.params, true);
            ad::Var in = t.leaf(inputs[i], false, "apr_input");
            APRForward f = apr_forward(t, b, in, apr.in_h, apr.in_w);
            Tensor gt_t(1, 3), gt_q(1, 4);
            for (int c = 0; c < 3; ++c) gt_t[c] = gt[i][c];
            for (int c = 0; c < 4; ++c) gt_q[c] = gt[i][3 + c];
            ad::Var loss = ad::add(t, ad::l1_mean(t, f.t, t.leaf(gt_t, false, "gt_t")),
                                   ad::l1_mean(t, f.q, t.leaf(gt_q, false, "gt_q")));
            if (!std::isfinite(t.value(loss).item()))
                throw std::runtime_error("train_toy_apr diverged at epoch " + std::to_string(ep));
            t.backward(loss);
            ad::GradRecord g = train::collect_grads(t, b, apr.params);
            opt.step(apr.params, g, lr);
        }
    }
    if (!apr.params.all_finite()) throw std::runtime_error("train_toy_apr: non-finite params");
    return apr;
}

lie::Pose nearest_pose_init(const ImageBuffer& query, const DatasetSplit& split) {
    if (split.data.train.empty()) throw std::invalid_argument("nearest_pose_init: empty split");
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < split.data.train.size(); ++i) {
        const ImageBuffer& ref = split.data.train[i].image;
        ImageBuffer q = (query.h == ref.h && query.w == ref.w)
                            ? query
                            : resize_area(query, ref.h, ref.w);
        double d = 0;
        for (std::size_t k = 0; k < q.rgb.size(); ++k) {
            const double e = q.rgb[k] - ref.rgb[k];
            d += e * e;
        }
        d /= static_cast<double>(q.rgb.size());
        if (d < best - 1e-15) {
            best = d;
            best_i = i;
        }
    }
    return split.data.train[best_i].pose;
}

}  // namespace nefes::scene
