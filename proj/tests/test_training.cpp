#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "nefes/scene.hpp"
#include "nefes/training.hpp"

using namespace nefes;
using namespace nefes::train;

TEST_CASE("stage schedule matches the published preset exactly") {
    TrainConfig cfg = TrainConfig::paper();
    REQUIRE(cfg.T1 == 600);
    REQUIRE(cfg.T2 == 200);
    REQUIRE(cfg.T3 == 400);
    StageSchedule sched{cfg};
    REQUIRE(sched.total_epochs() == 1200);

    auto expect = [&](int epoch, Stage s, double l1, double l2) {
        StagePoint p = sched.at(epoch);
        CHECK(p.stage == s);
        CHECK(p.lambda1 == l1);
        CHECK(p.lambda2 == l2);
    };
    expect(0, Stage::rgb_only, 0.0, 0.0);
    expect(599, Stage::rgb_only, 0.0, 0.0);
    expect(600, Stage::rgb_feature, 0.04, 0.0);
    expect(650, Stage::rgb_feature, 0.04, 0.0);
    expect(799, Stage::rgb_feature, 0.04, 0.0);
    expect(800, Stage::rgb_feature_fusion, 0.02, 0.02);
    expect(810, Stage::rgb_feature_fusion, 0.02, 0.02);
    expect(1199, Stage::rgb_feature_fusion, 0.02, 0.02);

    // contiguous and exhaustive: the stage index never decreases
    int prev = 0;
    for (int e = 0; e < sched.total_epochs(); ++e) {
        int s = static_cast<int>(sched.at(e).stage);
        CHECK(s >= prev);
        CHECK(s <= 2);
        prev = s;
    }
}

TEST_CASE("learning rate decays within a stage and resets at boundaries") {
    TrainConfig cfg = TrainConfig::desk();
    StageSchedule sched{cfg};

    CHECK(sched.lr_at(0) == cfg.lr_start);
    CHECK(sched.lr_at(cfg.T1) == cfg.lr_start);
    CHECK(sched.lr_at(cfg.T1 + cfg.T2) == cfg.lr_start);
    CHECK(sched.lr_at(cfg.T1 - 1) == doctest::Approx(cfg.lr_end).epsilon(1e-12));
    CHECK(sched.lr_at(cfg.T1 + cfg.T2 - 1) == doctest::Approx(cfg.lr_end).epsilon(1e-12));
    CHECK(sched.lr_at(sched.total_epochs() - 1) == doctest::Approx(cfg.lr_end).epsilon(1e-12));

    double prev = sched.lr_at(0);
    for (int e = 1; e < cfg.T1; ++e) {
        double lr = sched.lr_at(e);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("color loss matches an independent re-summation") {
    // perfect fit: every term vanishes
    render::RenderedPixel px;
    px.color = {0.2, 0.4, 0.6};
    px.beta = 1.0;
    CHECK(loss_rgb({px}, {{0.2, 0.4, 0.6}}, {{}}, 0.01) == 0.0);

    // unit residual with beta 1 and no transient density: 1/2
    render::RenderedPixel off;
    off.color = {1.0, 0.4, 0.6};
    off.beta = 1.0;
    CHECK(loss_rgb({off}, {{0.0, 0.4, 0.6}}, {{}}, 0.01) == doctest::Approx(0.5).epsilon(1e-15));

    // seeded batch against a direct re-summation
    Rng rng(77);
    std::vector<render::RenderedPixel> rendered;
    std::vector<std::array<double, 3>> gt;
    std::vector<std::vector<double>> tau;
    const double lambda_s = 0.013;
    for (int i = 0; i < 40; ++i) {
        render::RenderedPixel p;
        for (int c = 0; c < 3; ++c) p.color[c] = rng.uniform();
        p.beta = 0.05 + rng.uniform();
        rendered.push_back(p);
        gt.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        std::vector<double> s(1 + static_cast<int>(rng.uniform_index(6)));
        for (double& v : s) v = rng.uniform();
        tau.push_back(s);
    }
    double expected = 0;
    for (int i = 0; i < 40; ++i) {
        double r2 = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = rendered[i].color[c] - gt[i][c];
            r2 += d * d;
        }
        double term = r2 / (2.0 * rendered[i].beta * rendered[i].beta) +
                      std::log(rendered[i].beta * rendered[i].beta) / 2.0;
        double tsum = 0;
        for (double v : tau[i]) tsum += v;
        term += lambda_s / tau[i].size() * tsum;
        expected += term;
    }
    expected /= 40.0;
    CHECK(loss_rgb(rendered, gt, tau, lambda_s) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("feature and fusion losses are elementwise means") {
    FeatureMap a(3, 4, 5), b(3, 4, 5);
    Rng rng(5);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = rng.uniform(-1, 1);
    b.data = a.data;
    CHECK(loss_feature_l1(a, b) == 0.0);
    CHECK(loss_fusion_l1(a, b) == 0.0);

    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] += 1.0;
    CHECK(loss_feature_l1(a, b) == doctest::Approx(1.0).epsilon(1e-15));

    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = rng.uniform(-2, 2);
    double expected = 0;
    for (std::size_t i = 0; i < b.data.size(); ++i) expected += std::abs(a.data[i] - b.data[i]);
    expected /= static_cast<double>(a.data.size());
    CHECK(loss_feature_l1(a, b) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss_fusion_l1(a, b) == doctest::Approx(expected).epsilon(1e-12));

    FeatureMap c(3, 4, 6);
    CHECK_THROWS(loss_feature_l1(a, c));
}

TEST_CASE("total loss applies the stage coefficients exactly") {
    LossParts parts{1.5, 2.0, 3.0};
    StagePoint s1{Stage::rgb_only, 0.0, 0.0};
    StagePoint s2{Stage::rgb_feature, 0.04, 0.0};
    StagePoint s3{Stage::rgb_feature_fusion, 0.02, 0.02};
    CHECK(total_loss(parts, s1) == 1.5);
    CHECK(total_loss(parts, s2) == doctest::Approx(1.5 + 0.04 * 2.0).epsilon(1e-15));
    CHECK(total_loss(parts, s3) == doctest::Approx(1.5 + 0.02 * 2.0 + 0.02 * 3.0).epsilon(1e-15));
}

TEST_CASE("optimizer step matches the hand-derived update") {
    ad::ParamStore ps;
    Tensor w(1, 2);
    w[0] = 0.5;
    w[1] = -0.25;
    ps.add("w", w);

    Adam opt;
    opt.init(ps);

    ad::GradRecord grads;
    Tensor g(1, 2);
    g[0] = 0.3;
    g[1] = -0.1;
    grads.grads.push_back({"w", g});

    const double lr = 0.01;
    opt.step(ps, grads, lr);

    for (int i = 0; i < 2; ++i) {
        const double m = 0.1 * g[i];
        const double v = 0.001 * g[i] * g[i];
        const double mh = m / (1.0 - 0.9);
        const double vh = v / (1.0 - 0.999);
        const double expect = w[i] - lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(ps.get("w")[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // second step, now with nonzero moments
    Tensor w1 = ps.get("w");
    opt.step(ps, grads, lr);
    for (int i = 0; i < 2; ++i) {
        const double m1 = 0.1 * g[i];
        const double v1 = 0.001 * g[i] * g[i];
        const double m2 = 0.9 * m1 + 0.1 * g[i];
        const double v2 = 0.999 * v1 + 0.001 * g[i] * g[i];
        const double mh = m2 / (1.0 - 0.9 * 0.9);
        const double vh = v2 / (1.0 - 0.999 * 0.999);
        const double expect = w1[i] - lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(ps.get("w")[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

namespace {

scene::DatasetSplit tiny_split() {
    scene::SyntheticScene s = scene::generate_scene(5);
    std::string dir = "/tmp/nefes_test_train_ds";
    std::filesystem::remove_all(dir);
    scene::DatasetSplit split = scene::make_dataset(s, 3, 1, 11, dir);
    std::filesystem::remove_all(dir);

    // shrink images so the schedule runs in seconds
    auto shrink = [](DatasetEntry& e) {
        e.image = resize_area(e.image, 24, 32);
    };
    for (auto& e : split.data.train) shrink(e);
    for (auto& e : split.data.test) shrink(e);
    split.data.intrinsics = split.data.intrinsics.scaled(32, 24);
    return split;
}

TrainConfig tiny_cfg() {
    TrainConfig cfg = TrainConfig::desk();
    cfg.T1 = 2;
    cfg.T2 = 1;
    cfg.T3 = 1;
    cfg.rays_per_image = 16;
    cfg.batch_images = 1;
    cfg.n_crop = 1;
    cfg.patch_s = 6;
    return cfg;
}

}  // namespace

TEST_CASE("seeded training reruns produce identical loss curves") {
    scene::DatasetSplit split = tiny_split();
    TrainConfig cfg = tiny_cfg();
    field::FieldConfig fcfg = field::FieldConfig::desk();
    fcfg.mlp_width = 16;
    render::RendererConfig rcfg = render::RendererConfig::desk();
    rcfg.n_coarse = 6;
    rcfg.n_fine = 6;
    rcfg.render_short_side = 12;
    features::ExtractorParams ext = features::make_extractor(2, fcfg.N_f);
    const std::uint64_t ext_sum = ext.checksum();

    TrainState s1 = init_train_state(fcfg, cfg);
    TrainResult r1 = train_nefes(split.data, cfg, rcfg, fcfg, ext, s1);
    TrainState s2 = init_train_state(fcfg, cfg);
    TrainResult r2 = train_nefes(split.data, cfg, rcfg, fcfg, ext, s2);

    REQUIRE(r1.log.size() == r2.log.size());
    REQUIRE(r1.log.size() == 4);
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].L_rgb == r2.log[i].L_rgb);
        CHECK(r1.log[i].L_f == r2.log[i].L_f);
        CHECK(r1.log[i].L_fusion == r2.log[i].L_fusion);
        CHECK(r1.log[i].heldout_psnr == r2.log[i].heldout_psnr);
        CHECK(std::isfinite(r1.log[i].L_rgb));
    }

    // a stop/resume run replays the same curve
    TrainState s3 = init_train_state(fcfg, cfg);
    TrainResult ra = train_nefes(split.data, cfg, rcfg, fcfg, ext, s3, 2);
    TrainResult rb = train_nefes(split.data, cfg, rcfg, fcfg, ext, s3);
    REQUIRE(ra.log.size() + rb.log.size() == 4);
    CHECK(rb.log[0].L_rgb == r1.log[2].L_rgb);
    CHECK(rb.log[1].L_rgb == r1.log[3].L_rgb);

    // the extractor is never touched by training
    CHECK(ext.checksum() == ext_sum);
}

TEST_CASE("feature branch gradients never reach the density head") {
    field::FieldConfig fcfg = field::FieldConfig::desk();
    fcfg.mlp_width = 16;
    render::RendererConfig rcfg = render::RendererConfig::desk();
    rcfg.n_coarse = 6;
    rcfg.n_fine = 6;
    ad::ParamStore params = field::init_field_params(fcfg, 3);

    ad::Tape t;
    field::Binding b = field::bind(t, params, true);

    Rng rng(9);
    const int n = 8;
    Tensor o(n, 3), d(n, 3);
    for (int r = 0; r < n; ++r) {
        o(r, 0) = 0.1 * rng.uniform(-1, 1);
        o(r, 1) = 0.1 * rng.uniform(-1, 1);
        o(r, 2) = 2.0;
        lie::Vec3 dir = lie::normalized({rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -1.0});
        for (int c = 0; c < 3; ++c) d(r, c) = dir[c];
    }
    ad::Var vo = t.leaf(std::move(o), false, "o");
    ad::Var vd = t.leaf(std::move(d), false, "d");

    render::RenderOptions opt;
    opt.jitter = false;
    opt.stop_grad_density_in_feature = true;
    opt.apply_act = false;
    Rng rr(4);
    render::RenderBatch rb = render::render_rays(t, b, fcfg, rcfg, vo, vd, ad::Var{}, opt, rr);

    Tensor labels(n, fcfg.N_f);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = rng.uniform(-1, 1);
    ad::Var loss = ad::l1_mean(t, rb.feature, t.leaf(std::move(labels), false, "labels"));
    t.backward(loss);

    ad::GradRecord grads = collect_grads(t, b, params);
    bool any_nonzero = false;
    for (const auto& e : grads.grads) {
        double mx = 0;
        for (std::size_t i = 0; i < e.value.size(); ++i) mx = std::max(mx, std::abs(e.value[i]));
        if (e.name == "static_head.sigma_W" || e.name == "static_head.sigma_b" ||
            e.name == "transient_head.sigma_W" || e.name == "transient_head.sigma_b") {
            CHECK(mx == 0.0);
        }
        if (mx > 0) any_nonzero = true;
    }
    CHECK(any_nonzero);
}
