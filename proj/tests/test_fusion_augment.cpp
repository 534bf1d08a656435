#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "textseg/errors.hpp"
#include "textseg/fusion_augment.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

using namespace textseg;

namespace {

Tensor random_image(Shape shape, uint64_t seed, bool requires_grad = false) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(0, 1);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// disk indicator rendered at pixel centers
Tensor disk_mask(int h, int w, double cx, double cy, double r) {
    std::vector<double> v(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            v[static_cast<size_t>(i) * w + j] =
                (j - cx) * (j - cx) + (i - cy) * (i - cy) < r * r ? 1.0 : 0.0;
    return Tensor::from_data({1, 1, h, w}, std::move(v));
}

double binary_iou(const std::vector<double>& a, const std::vector<double>& b) {
    double inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool pa = a[i] > 0.5, pb = b[i] > 0.5;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 1.0 : inter / uni;
}

}  // namespace

TEST_CASE("affine matrix algebra") {
    Rng rng(31);
    AugEnable all;
    for (int t = 0; t < 10; ++t) {
        auto p = sample_aug(rng, all);
        auto a = affine_matrix(p);
        CHECK(compose(AffineMat::identity(), a) == a);
        auto round = compose(a, inverse(a));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(std::fabs(round.m[i][j] - AffineMat::identity().m[i][j]) <= 1e-12);
    }
    CHECK_THROWS_AS(inverse(AffineMat{{{0, 0, 0}, {0, 0, 0}}}), UsageError);
}

TEST_CASE("affine_matrix closed forms") {
    auto id = affine_matrix(AugParams::identity());
    CHECK(id == AffineMat::identity());

    AugParams hf;
    hf.hflip = true;
    auto m = affine_matrix(hf);
    CHECK(m.m[0][0] == -1.0);
    CHECK(m.m[0][1] == 0.0);
    CHECK(m.m[0][2] == 0.0);
    CHECK(m.m[1][0] == 0.0);
    CHECK(m.m[1][1] == 1.0);
    CHECK(m.m[1][2] == 0.0);

    // rotation by 90 degrees: the sampling map is the inverse rotation, so
    // the point (1,0) goes to (0,-1) under our sign convention
    AugParams rot;
    rot.angle = 90.0;
    auto r = affine_matrix(rot);
    double u = r.m[0][0] * 1 + r.m[0][1] * 0 + r.m[0][2];
    double v = r.m[1][0] * 1 + r.m[1][1] * 0 + r.m[1][2];
    CHECK(std::fabs(u - 0.0) <= 1e-12);
    CHECK(std::fabs(v - (-1.0)) <= 1e-12);
}

TEST_CASE("sample_aug ranges, determinism, stream discipline") {
    SUBCASE("empty enable set gives identity params") {
        Rng rng(32);
        CHECK(sample_aug(rng, AugEnable::none()) == AugParams::identity());
    }
    SUBCASE("same state, same params") {
        Rng a(33), b(33);
        AugEnable all;
        for (int i = 0; i < 5; ++i) CHECK(sample_aug(a, all) == sample_aug(b, all));
    }
    SUBCASE("disabled components consume nothing") {
        AugEnable rot_only = AugEnable::none();
        rot_only.rotate = true;
        Rng control(34);
        (void)control.uniform(-15, 15);  // the one draw rotate makes
        uint64_t expected = control.next_u64();
        Rng probe(34);
        (void)sample_aug(probe, rot_only);
        CHECK(probe.next_u64() == expected);
    }
    SUBCASE("empirical ranges over 10^4 draws") {
        Rng rng(35);
        AugEnable all;
        int hflips = 0;
        double amin = 1e9, amax = -1e9;
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            auto p = sample_aug(rng, all);
            amin = std::min(amin, p.angle);
            amax = std::max(amax, p.angle);
            CHECK(p.angle >= -15.0);
            CHECK(p.angle <= 15.0);
            CHECK(std::fabs(p.tx) <= 0.10);
            CHECK(std::fabs(p.ty) <= 0.10);
            CHECK(p.scale >= 0.9);
            CHECK(p.scale <= 1.1);
            hflips += p.hflip;
        }
        // the sampler actually covers the range and flips half the time
        CHECK(amin <= -14.0);
        CHECK(amax >= 14.0);
        CHECK(std::fabs(hflips / double(n) - 0.5) <= 0.02);
    }
}

TEST_CASE("fuse_concat stacks image then pseudo") {
    auto img = random_image({1, 1, 6, 6}, 40);
    auto pse = random_image({1, 1, 6, 6}, 41);
    auto fused = fuse_concat(img, pse);
    CHECK(fused.shape() == Shape{1, 2, 6, 6});
    CHECK(slice_channels(fused, 0, 1).data() == img.data());
    CHECK(slice_channels(fused, 1, 2).data() == pse.data());

    auto rgb = random_image({1, 3, 6, 6}, 42);
    CHECK(fuse_concat(rgb, random_image({1, 3, 6, 6}, 43)).dim(1) == 6);
    CHECK_THROWS_AS(fuse_concat(img, rgb), ShapeError);
}

TEST_CASE("warp: identity is bitwise exact, any size") {
    for (auto [h, w] : {std::pair{8, 8}, {7, 5}, {13, 22}}) {
        auto x = random_image({2, 3, h, w}, 100 + h);
        CHECK(warp(x, AffineMat::identity(), WarpMode::bilinear).data() == x.data());
        CHECK(warp(x, AffineMat::identity(), WarpMode::nearest).data() == x.data());
    }
}

TEST_CASE("warp: flips are exact mirrors and involutions") {
    auto x = random_image({1, 2, 8, 8}, 50);
    AugParams hf;
    hf.hflip = true;
    auto mh = affine_matrix(hf);
    auto y = warp(x, mh, WarpMode::bilinear);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(y.at({0, c, i, j}) == x.at({0, c, i, 7 - j}));
    CHECK(warp(y, mh, WarpMode::bilinear).data() == x.data());

    AugParams vf;
    vf.vflip = true;
    auto mv = affine_matrix(vf);
    auto z = warp(x, mv, WarpMode::nearest);
    for (int i = 0; i < 8; ++i) CHECK(z.at({0, 0, i, 3}) == x.at({0, 0, 7 - i, 3}));
    CHECK(warp(z, mv, WarpMode::nearest).data() == x.data());
}

TEST_CASE("warp: integer translation shifts pixels and zero-fills") {
    auto x = random_image({1, 1, 16, 16}, 51);
    AugParams p;
    p.tx = 2.0 / 16.0;  // content moves two pixels right
    auto y = warp(x, affine_matrix(p), WarpMode::bilinear);
    for (int i = 0; i < 16; ++i) {
        CHECK(y.at({0, 0, i, 0}) == 0.0);
        CHECK(y.at({0, 0, i, 1}) == 0.0);
        for (int j = 2; j < 16; ++j) CHECK(y.at({0, 0, i, j}) == x.at({0, 0, i, j - 2}));
    }

    p = {};
    p.ty = -4.0 / 16.0;  // content moves four pixels up
    auto z = warp(x, affine_matrix(p), WarpMode::nearest);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 16; ++j) CHECK(z.at({0, 0, i, j}) == x.at({0, 0, i + 4, j}));
    for (int i = 12; i < 16; ++i) CHECK(z.at({0, 0, i, 8}) == 0.0);
}

TEST_CASE("warp: nearest keeps a binary mask binary") {
    auto mask = disk_mask(32, 32, 15.2, 16.7, 9.0);
    AugParams p;
    p.angle = 11.0;
    p.scale = 1.07;
    p.tx = 0.05;
    auto y = warp(mask, affine_matrix(p), WarpMode::nearest);
    for (double v : y.data()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("warp: channels share the grid bitwise") {
    auto x = random_image({1, 3, 12, 12}, 52);
    AugParams p;
    p.angle = -8.0;
    p.scale = 0.95;
    auto m = affine_matrix(p);
    auto whole = warp(x, m, WarpMode::bilinear);
    for (int c = 0; c < 3; ++c) {
        auto single = warp(slice_channels(x, c, c + 1), m, WarpMode::bilinear);
        CHECK(slice_channels(whole, c, c + 1).data() == single.data());
    }
}

TEST_CASE("warp: per-sample matrices match per-sample calls") {
    auto x = random_image({2, 2, 8, 8}, 53);
    AugParams p0, p1;
    p0.hflip = true;
    p1.angle = 9.0;
    std::vector<AffineMat> ms{affine_matrix(p0), affine_matrix(p1)};
    auto batched = warp(x, ms, WarpMode::bilinear);

    auto x0 = Tensor::from_data({1, 2, 8, 8},
                                std::vector<double>(x.data().begin(), x.data().begin() + 128));
    auto x1 = Tensor::from_data({1, 2, 8, 8},
                                std::vector<double>(x.data().begin() + 128, x.data().end()));
    auto y0 = warp(x0, ms[0], WarpMode::bilinear);
    auto y1 = warp(x1, ms[1], WarpMode::bilinear);
    std::vector<double> stacked = y0.data();
    stacked.insert(stacked.end(), y1.data().begin(), y1.data().end());
    CHECK(batched.data() == stacked);

    CHECK_THROWS_AS(warp(x, std::vector<AffineMat>(3), WarpMode::bilinear), ShapeError);
}

TEST_CASE("warp gradient matches finite differences") {
    // warp is linear in the input, so central differences are essentially exact
    auto x = random_image({1, 1, 8, 8}, 54, true);
    AugParams p;
    p.angle = 7.0;
    p.scale = 1.03;
    p.tx = 0.04;
    auto m = affine_matrix(p);
    auto wgt = random_image({1, 1, 8, 8}, 55);
    auto f = [&](const Tensor& t) { return sum(mul(warp(t, m, WarpMode::bilinear), wgt)); };
    CHECK(finite_diff_gradcheck(f, x) <= 1e-6);

    auto g = [&](const Tensor& t) { return sum(mul(warp(t, m, WarpMode::nearest), wgt)); };
    CHECK(finite_diff_gradcheck(g, random_image({1, 1, 8, 8}, 56, true)) <= 1e-6);
}

TEST_CASE("augment_pair: identity, joint flip, batching") {
    auto img = random_image({1, 1, 16, 16}, 60);
    auto pse = random_image({1, 1, 16, 16}, 61);
    auto mask = disk_mask(16, 16, 8.3, 7.6, 4.0);
    auto fused = fuse_concat(img, pse);

    SUBCASE("identity leaves both untouched") {
        auto [f2, m2] = augment_pair(fused, mask, AugParams::identity());
        CHECK(f2.data() == fused.data());
        CHECK(m2.data() == mask.data());
    }
    SUBCASE("warping the fused tensor equals warping the parts") {
        AugParams p;
        p.hflip = true;
        auto [f2, m2] = augment_pair(fused, mask, p);
        auto m = affine_matrix(p);
        auto img2 = warp(img, m, WarpMode::bilinear);
        auto pse2 = warp(pse, m, WarpMode::bilinear);
        CHECK(slice_channels(f2, 0, 1).data() == img2.data());
        CHECK(slice_channels(f2, 1, 2).data() == pse2.data());
        for (double v : m2.data()) CHECK((v == 0.0 || v == 1.0));
    }
    SUBCASE("batched params act per sample") {
        std::vector<double> fv = fused.data(), mv = mask.data();
        fv.insert(fv.end(), fused.data().begin(), fused.data().end());
        mv.insert(mv.end(), mask.data().begin(), mask.data().end());
        auto fused2 = Tensor::from_data({2, 2, 16, 16}, fv);
        auto mask2 = Tensor::from_data({2, 1, 16, 16}, mv);
        AugParams flip;
        flip.hflip = true;
        auto [f2, m2] = augment_pair(fused2, mask2, {AugParams::identity(), flip});
        // sample 0 untouched, sample 1 flipped
        CHECK(std::vector<double>(f2.data().begin(), f2.data().begin() + 512) == fused.data());
        auto flipped = augment_pair(fused, mask, flip).first;
        CHECK(std::vector<double>(f2.data().begin() + 512, f2.data().end()) == flipped.data());
    }
    SUBCASE("shape discipline") {
        CHECK_THROWS_AS(augment_pair(fused, Tensor::zeros({1, 1, 8, 8}), AugParams::identity()),
                        ShapeError);
        CHECK_THROWS_AS(augment_pair(fused, mask, std::vector<AugParams>(2)), ShapeError);
    }
}

TEST_CASE("augment_pair_misaligned freezes the pseudo channels") {
    auto img = random_image({1, 1, 16, 16}, 62);
    auto pse = random_image({1, 1, 16, 16}, 63);
    auto mask = disk_mask(16, 16, 8.0, 8.0, 4.0);
    auto fused = fuse_concat(img, pse);
    AugParams p;
    p.hflip = true;
    auto [f2, m2] = augment_pair_misaligned(fused, mask, {p});

    auto m = affine_matrix(p);
    CHECK(slice_channels(f2, 0, 1).data() == warp(img, m, WarpMode::bilinear).data());
    CHECK(slice_channels(f2, 1, 2).data() == pse.data());  // untouched
    CHECK(m2.data() == warp(mask, m, WarpMode::nearest).data());

    CHECK_THROWS_AS(
        augment_pair_misaligned(Tensor::zeros({1, 3, 16, 16}), mask, {AugParams::identity()}),
        ShapeError);
}

TEST_CASE("joint alignment: IoU invariant under the shared transform") {
    // A thresholdable pseudo image whose 0.5-level set equals the mask.
    SUBCASE("exact for flips and integer translations") {
        const int hw = 64;
        auto mask = disk_mask(hw, hw, 33.3, 29.8, 13.0);
        auto pseudo = mask;  // binary pseudo, IoU before == 1
        double before = binary_iou(pseudo.data(), mask.data());
        std::vector<AugParams> cases;
        AugParams a;
        a.hflip = true;
        cases.push_back(a);
        a = {};
        a.vflip = true;
        cases.push_back(a);
        a = {};
        a.hflip = a.vflip = true;
        cases.push_back(a);
        a = {};
        a.tx = 4.0 / hw;
        a.ty = -8.0 / hw;
        cases.push_back(a);
        for (const auto& p : cases) {
            auto m = affine_matrix(p);
            auto wp = warp(pseudo, m, WarpMode::bilinear);
            auto wm = warp(mask, m, WarpMode::nearest);
            CHECK(binary_iou(wp.data(), wm.data()) == before);
        }
    }
    SUBCASE("within 0.02 for rotation and scaling") {
        const int hw = 128;
        auto mask = disk_mask(hw, hw, 66.8, 61.9, 38.0);
        auto pseudo = mask;
        double before = binary_iou(pseudo.data(), mask.data());
        std::vector<AugParams> cases;
        for (double ang : {-15.0, -7.0, 5.0, 15.0}) {
            AugParams p;
            p.angle = ang;
            cases.push_back(p);
        }
        for (double sc : {0.9, 1.1}) {
            AugParams p;
            p.scale = sc;
            cases.push_back(p);
        }
        AugParams both;
        both.angle = 12.0;
        both.scale = 0.93;
        both.tx = 0.03;
        cases.push_back(both);
        for (const auto& p : cases) {
            auto m = affine_matrix(p);
            auto wp = warp(pseudo, m, WarpMode::bilinear);
            auto wm = warp(mask, m, WarpMode::nearest);
            CHECK(std::fabs(binary_iou(wp.data(), wm.data()) - before) <= 0.02);
        }
    }
}

TEST_CASE("gradients flow through the joint augmentation") {
    auto img = random_image({1, 1, 8, 8}, 70);
    auto pse = random_image({1, 1, 8, 8}, 71, true);
    auto mask = disk_mask(8, 8, 4.0, 4.0, 2.5);
    AugParams p;
    p.angle = 6.0;
    p.tx = 0.05;
    auto wgt = random_image({1, 2, 8, 8}, 72);
    auto f = [&](const Tensor& t) {
        auto [fused, m2] = augment_pair(fuse_concat(img, t), mask, p);
        (void)m2;
        return sum(mul(fused, wgt));
    };
    CHECK(finite_diff_gradcheck(f, pse) <= 1e-6);
}

TEST_CASE("resize_bilinear") {
    auto x = random_image({1, 2, 6, 6}, 80);
    SUBCASE("same size is the identity, bitwise") {
        CHECK(resize_bilinear(x, 6, 6).data() == x.data());
    }
    SUBCASE("constants stay constant") {
        auto c = Tensor::full({1, 1, 4, 4}, 0.37);
        auto r = resize_bilinear(c, 11, 7);
        for (double v : r.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
    }
    SUBCASE("a linear ramp upsamples to the analytic values") {
        auto ramp = Tensor::from_data({1, 1, 1, 4}, {0, 1, 2, 3});
        auto up = resize_bilinear(ramp, 1, 8);
        std::vector<double> want{0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3};
        for (int j = 0; j < 8; ++j) CHECK(up.at({0, 0, 0, j}) == doctest::Approx(want[j]));
    }
    SUBCASE("gradient matches finite differences") {
        auto wgt = random_image({1, 2, 9, 13}, 81);
        auto t = random_image({1, 2, 6, 6}, 82, true);
        auto f = [&](const Tensor& u) { return sum(mul(resize_bilinear(u, 9, 13), wgt)); };
        CHECK(finite_diff_gradcheck(f, t) <= 1e-6);
    }
    SUBCASE("28 to 224 is the generator's upsampling hop") {
        CHECK(resize_bilinear(Tensor::zeros({1, 1, 28, 28}), 224, 224).shape() ==
              Shape{1, 1, 224, 224});
    }
}
