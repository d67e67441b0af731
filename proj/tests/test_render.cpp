#include <cmath>

#include "doctest.h"
#include "nefes/render.hpp"

using namespace nefes;
using namespace nefes::render;

TEST_CASE("stratified samples without jitter are bin centers") {
    lie::Ray ray;
    ray.near = 0.0;
    ray.far = 4.0;
    Rng rng(1);
    SampleSet s = stratified_samples(ray, 4, false, rng);
    REQUIRE(s.t.size() == 4);
    double want[4] = {0.5, 1.5, 2.5, 3.5};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(s.t[i] - want[i]) < 1e-15);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s.delta[i] - (s.t[i + 1] - s.t[i])) < 1e-15);
    CHECK(std::abs(s.delta[3] - (ray.far - s.t[3])) < 1e-15);
}

TEST_CASE("stratified samples with jitter stay inside their bins") {
    lie::Ray ray;
    ray.near = 1.0;
    ray.far = 3.0;
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        SampleSet s = stratified_samples(ray, 8, true, rng);
        const double w = (ray.far - ray.near) / 8;
        for (int i = 0; i < 8; ++i) {
            CHECK(s.t[i] >= ray.near + i * w);
            CHECK(s.t[i] < ray.near + (i + 1) * w);
        }
    }
}

TEST_CASE("hierarchical resample returns a sorted union inside bounds") {
    lie::Ray ray;
    ray.near = 0.5;
    ray.far = 6.0;
    Rng rng(3);
    SampleSet coarse = stratified_samples(ray, 16, true, rng);
    std::vector<double> w(16, 0.0);
    w[5] = 2.0;
    w[6] = 1.0;
    SampleSet fine = hierarchical_resample(coarse, w, 16, rng);
    REQUIRE(fine.t.size() == 32);
    for (std::size_t i = 1; i < fine.t.size(); ++i) CHECK(fine.t[i] > fine.t[i - 1]);
    for (double tv : fine.t) {
        CHECK(tv >= ray.near);
        CHECK(tv <= ray.far);
    }
    // drawn samples concentrate in the high-weight bins
    const double bin_w = (ray.far - ray.near) / 16;
    int in_peak = 0;
    for (double tv : fine.t)
        if (tv >= ray.near + 5 * bin_w && tv < ray.near + 7 * bin_w) ++in_peak;
    CHECK(in_peak >= 14);  // 2 coarse + most of the 16 draws
}

TEST_CASE("partition of unity and transmittance limits") {
    Rng rng(11);
    for (int rep = 0; rep < 1000; ++rep) {
        const int S = 1 + static_cast<int>(rng.uniform_index(32));
        std::vector<double> ss(S), st(S), d(S);
        for (int i = 0; i < S; ++i) {
            ss[i] = rng.uniform() * 5.0;
            st[i] = rng.uniform() * 5.0;
            d[i] = 0.01 + rng.uniform() * 0.5;
        }
        CHECK(std::abs(partition_of_unity(ss, st, d) - 1.0) < 1e-9);
    }

    // opaque limit: a huge-density sample absorbs everything that follows
    std::vector<double> ss{1e8, 0.3}, st{0.0, 0.2}, d{1.0, 1.0};
    CHECK(std::abs(partition_of_unity(ss, st, d) - 1.0) < 1e-9);

    // empty space: zero density leaves all mass in the residual
    field::FieldConfig fcfg = field::FieldConfig::desk();
    ad::ParamStore params = field::init_field_params(fcfg, 19);
    lie::Ray ray;
    ray.origin = {0, 0, -3};
    ray.direction = {0, 0, 1};
    ray.near = 0.5;
    ray.far = 6.0;
    Rng r2(2);
    SampleSet s = stratified_samples(ray, 8, false, r2);
    field::ACTParams act;
    std::array<double, 3> bg{0.2, 0.4, 0.6};
    RenderedPixel px = composite_pixel(ray, s, params, fcfg, bg, act, fcfg.beta_min);
    CHECK(px.transmittance_residual > 0.0);
    CHECK(px.transmittance_residual <= 1.0);
    CHECK(px.beta >= fcfg.beta_min);
}

TEST_CASE("monotone transmittance along a ray") {
    Rng rng(5);
    const int S = 64;
    std::vector<double> ss(S), st(S), d(S, 0.1);
    double logT = 0.0, prevT = 1.0;
    for (int i = 0; i < S; ++i) {
        ss[i] = rng.uniform() * 3.0;
        st[i] = rng.uniform() * 3.0;
        logT -= (ss[i] + st[i]) * d[i];
        const double T = std::exp(logT);
        CHECK(T <= prevT + 1e-15);
        prevT = T;
    }
}

TEST_CASE("rendered features ignore transient density") {
    // coarse network drives sample placement, so boosting the transient head
    // cannot move the quadrature nodes; features must be bit-identical
    field::FieldConfig fcfg = field::FieldConfig::desk();
    fcfg.has_coarse = true;
    ad::ParamStore params = field::init_field_params(fcfg, 23);
    RendererConfig rcfg = RendererConfig::desk();
    rcfg.n_coarse = 8;
    rcfg.n_fine = 8;

    auto render_feature = [&](double transient_boost) {
        ad::Tape t;
        field::Binding b = field::bind(t, params, false);
        Tensor o(2, 3), d(2, 3);
        for (int r = 0; r < 2; ++r) {
            o(r, 2) = -3.0;
            d(r, 0) = r * 0.1;
            d(r, 2) = 1.0;
            const double n = std::sqrt(d(r, 0) * d(r, 0) + 1.0);
            d(r, 0) /= n;
            d(r, 2) /= n;
        }
        ad::Var vo = t.leaf(o, false, "o");
        ad::Var vd = t.leaf(d, false, "d");
        RenderOptions opt;
        opt.jitter = false;
        opt.apply_act = false;
        Rng rng(0);
        // boost the transient head bias to change sigma_tau only
        ad::ParamStore boosted = params;
        for (auto& e : boosted.entries())
            if (e.name == "transient_head.sigma_b")
                for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += transient_boost;
        field::Binding bb = field::bind(t, boosted, false);
        RenderBatch rb = render_rays(t, bb, fcfg, rcfg, vo, vd, ad::Var{}, opt, rng);
        return std::pair<Tensor, Tensor>(t.value(rb.feature), t.value(rb.color));
    };

    auto [f0, c0] = render_feature(0.0);
    auto [f1, c1] = render_feature(2.0);
    for (std::size_t i = 0; i < f0.size(); ++i) CHECK(f0[i] == f1[i]);
    double cdiff = 0;
    for (std::size_t i = 0; i < c0.size(); ++i) cdiff += std::abs(c0[i] - c1[i]);
    CHECK(cdiff > 0.0);
}

TEST_CASE("render dims preserve aspect") {
    lie::CameraIntrinsics k;
    k.fx = k.fy = 100;
    k.cx = 80;
    k.cy = 60;
    k.width = 160;
    k.height = 120;
    auto [h, w] = render_dims(k, 30);
    CHECK(h == 30);
    CHECK(w == 40);
    auto [h2, w2] = render_dims(k, 120);
    CHECK(h2 == 120);
    CHECK(w2 == 160);

    lie::CameraIntrinsics tall = k;
    tall.width = 120;
    tall.height = 160;
    auto [h3, w3] = render_dims(tall, 30);
    CHECK(h3 == 40);
    CHECK(w3 == 30);
}
