#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnp/resample.hpp"
#include "test_support.hpp"

using namespace dnp;
using dnptest::image2d;
using dnptest::max_abs_diff;

namespace {

Scheme simple_scheme(const Volume& img, int depth, double destvox, int psz = 32) {
    SchemeConfig c;
    c.ndim = 2;
    c.depth = depth;
    c.patch_size = {{psz, psz, 1}};
    c.fov_rel = Vec{1, 1, 1};
    c.destvox_mm = Vec{destvox, destvox, 1};
    return resolve_scheme(c, img);
}

} // namespace

TEST_CASE("crop: dst == src patch with NN copies exactly") {
    Volume v = dnptest::noise2d(16, 16, 1);
    PatchData out = crop(v, v.as_patch(), Interp::NN, PrefilterSpec{});
    CHECK(max_abs_diff(out.data, v.data) == 0.0);
}

TEST_CASE("crop: 2x linear upsampling of a ramp is exact") {
    Volume v = image2d(16, 16, [](int i, int j) { return 3.0 * i + 2.0 * j + 1.0; });
    Patch dst;
    dst.affine = Affine::scaling(2, Vec{0.5, 0.5, 1});
    dst.affine.m[0][3] = 2.0;
    dst.affine.m[1][3] = 2.0;
    dst.shape = {20, 20, 1};
    PatchData out = crop(v, dst, Interp::Linear, PrefilterSpec{});
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            double x = 2.0 + 0.5 * i, y = 2.0 + 0.5 * j;
            double want = 3.0 * x + 2.0 * y + 1.0;
            CHECK(out.data[std::size_t(i * 20 + j)] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("crop: dst fully outside src is zero") {
    Volume v = image2d(8, 8, [](int, int) { return 5.0; });
    Patch dst;
    dst.affine = Affine::translation(2, Vec{100, 100, 0});
    dst.shape = {4, 4, 1};
    for (Interp itp : {Interp::NN, Interp::Linear}) {
        PatchData out = crop(v, dst, itp, PrefilterSpec{});
        for (double x : out.data.v) CHECK(x == 0.0);
    }
}

TEST_CASE("window_weights: none, cos, cos2") {
    std::array<int, 3> shape{5, 5, 1};
    NdArray none = window_weights(shape, 2, WindowKind::None);
    for (double w : none.v) CHECK(w == 1.0);

    NdArray cosw = window_weights(shape, 2, WindowKind::Cos);
    CHECK(cosw[2 * 5 + 2] == doctest::Approx(1.0));         // center of odd patch
    CHECK(cosw[0] == doctest::Approx(0.0).epsilon(1e-12));  // corner
    CHECK(cosw[4 * 5 + 4] == doctest::Approx(0.0).epsilon(1e-12));

    NdArray cos2w = window_weights(shape, 2, WindowKind::Cos2);
    for (std::size_t i = 0; i < cosw.size(); ++i)
        CHECK(cos2w[i] == doctest::Approx(cosw[i] * cosw[i]).epsilon(1e-12));
}

TEST_CASE("scatter: single unit 1-voxel patch") {
    Volume img = image2d(4, 4, [](int, int) { return 0.0; });
    Scheme s = simple_scheme(img, 1, 1, 4);
    Canvas c = make_canvas(img, s, 1.0, 1);
    Patch p;
    p.affine = c.grid.affine; // first canvas voxel
    p.shape = {1, 1, 1};
    PatchData pd{p, NdArray({1, 1, 1})};
    pd.data[0] = 1.0;
    NdArray w = window_weights(p.shape, 2, WindowKind::None);
    scatter(c, pd, w, Interp::NN);
    double wsum = 0, asum = 0;
    for (double x : c.weight.v) wsum += x;
    for (double x : c.accum.v) asum += x;
    CHECK(c.weight[0] == doctest::Approx(1.0));
    CHECK(c.accum[0] == doctest::Approx(1.0));
    CHECK(wsum == doctest::Approx(1.0));
    CHECK(asum == doctest::Approx(1.0));
}

TEST_CASE("scatter: duplicate patches are idempotent under the mean") {
    Volume img = dnptest::noise2d(8, 8, 2);
    Scheme s = simple_scheme(img, 1, 1, 8);
    PatchData pd = crop(img, img.as_patch(), Interp::NN, PrefilterSpec{});
    NdArray w = window_weights(pd.patch.shape, 2, WindowKind::None);

    Canvas c1 = make_canvas(img, s, 1.0, 1);
    scatter(c1, pd, w, Interp::NN);
    Volume once = finalize(c1, 0.0);

    Canvas c2 = make_canvas(img, s, 1.0, 1);
    scatter(c2, pd, w, Interp::NN);
    scatter(c2, pd, w, Interp::NN);
    Volume twice = finalize(c2, 0.0);

    CHECK(max_abs_diff(once.data, twice.data) < 1e-12);
}

TEST_CASE("scatter: patch outside the canvas leaves it unchanged") {
    Volume img = image2d(8, 8, [](int, int) { return 0.0; });
    Scheme s = simple_scheme(img, 1, 1, 8);
    Canvas c = make_canvas(img, s, 1.0, 1);
    Patch p;
    p.affine = Affine::translation(2, Vec{500, 500, 0});
    p.shape = {4, 4, 1};
    PatchData pd{p, NdArray({4, 4, 1})};
    pd.data.fill(3.0);
    NdArray w = window_weights(p.shape, 2, WindowKind::None);
    scatter(c, pd, w, Interp::NN);
    for (double x : c.weight.v) CHECK(x == 0.0);
    for (double x : c.accum.v) CHECK(x == 0.0);
}

TEST_CASE("conservation: sum(weight) equals scattered in-canvas voxel count") {
    Volume img = image2d(16, 16, [](int, int) { return 1.0; });
    Scheme s = simple_scheme(img, 1, 1, 8);
    Canvas c = make_canvas(img, s, 1.0, 1);
    Rng rng(3);
    int scattered = 0;
    for (int it = 0; it < 5; ++it) {
        Patch p = random_root(s, img, rng);
        PatchData pd = crop(img, p, Interp::NN, PrefilterSpec{});
        NdArray w = window_weights(p.shape, 2, WindowKind::None);
        scatter(c, pd, w, Interp::NN);
        scattered += p.shape[0] * p.shape[1]; // roots snapped inside -> all in canvas
    }
    double wsum = 0;
    for (double x : c.weight.v) wsum += x;
    CHECK(wsum == doctest::Approx(double(scattered)).epsilon(1e-9));
}

TEST_CASE("finalize: sparse suppression values") {
    Volume img = image2d(4, 4, [](int, int) { return 0.0; });
    Scheme s = simple_scheme(img, 1, 1, 4);
    auto one_voxel_canvas = [&](int hits, double value, double alpha) {
        Canvas c = make_canvas(img, s, 1.0, 1);
        Patch p;
        p.affine = c.grid.affine;
        p.shape = {1, 1, 1};
        PatchData pd{p, NdArray({1, 1, 1})};
        pd.data[0] = value;
        NdArray w = window_weights(p.shape, 2, WindowKind::None);
        for (int i = 0; i < hits; ++i) scatter(c, pd, w, Interp::NN);
        return finalize(c, alpha).data[0];
    };
    CHECK(std::abs(one_voxel_canvas(1, 1.0, 1.0) - 0.5) < 1e-9);          // 1/sqrt(1+3)
    CHECK(one_voxel_canvas(2, 1.0, 1.0) == doctest::Approx(2.0 / std::sqrt(7.0)));
    CHECK(one_voxel_canvas(3, 0.7, 0.0) == doctest::Approx(0.7)); // plain mean
    // response never exceeds v/2 for a single contribution, alpha = 1
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int it = 0; it < 200; ++it) {
        double v = u(rng);
        double r = one_voxel_canvas(1, v, 1.0);
        CHECK(r == doctest::Approx(v / 2).epsilon(1e-12));
        CHECK(r <= 0.5 + 1e-12);
    }
    // monotone non-increasing in alpha
    double prev = one_voxel_canvas(2, 0.9, 0.0);
    for (double alpha : {0.5, 1.0, 2.0, 5.0}) {
        double cur = one_voxel_canvas(2, 0.9, alpha);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("finalize: zero-weight voxels give exactly 0") {
    Volume img = image2d(8, 8, [](int, int) { return 1.0; });
    Scheme s = simple_scheme(img, 1, 1, 8);
    Canvas c = make_canvas(img, s, 1.0, 1);
    Volume y = finalize(c, 1.0);
    for (double x : y.data.v) CHECK(x == 0.0);
}

TEST_CASE("gather/gather_adjoint are adjoint") {
    Rng rng(5);
    std::normal_distribution<double> nd(0.0, 1.0);
    Patch src, dst;
    src.affine = Affine::identity(2);
    src.shape = {9, 9, 1};
    dst.affine = Affine::scaling(2, Vec{1.7, 0.6, 1});
    dst.affine.m[0][3] = 0.9;
    dst.affine.m[1][3] = -1.4;
    dst.shape = {7, 5, 1};
    NdArray a({9, 9, 3});
    for (double& v : a.v) v = nd(rng);
    NdArray b({7, 5, 3});
    for (double& v : b.v) v = nd(rng);
    for (Interp itp : {Interp::NN, Interp::Linear}) {
        NdArray ga = gather(a, src, dst, 3, itp);
        NdArray gb = gather_adjoint(b, src, dst, a.shape, itp);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < ga.size(); ++i) lhs += ga[i] * b[i];
        for (std::size_t i = 0; i < gb.size(); ++i) rhs += gb[i] * a[i];
        CHECK(dnptest::rel_err(lhs, rhs) < 1e-8);
    }
}

TEST_CASE("reconstruct_identity: no-resampling case is exact") {
    Volume img = dnptest::noise2d(32, 32, 6);
    SchemeConfig c;
    c.ndim = 2;
    c.depth = 1;
    c.patch_size = {{32, 32, 1}};
    c.fov_rel = Vec{1, 1, 1};
    c.destvox_rel = Vec{1, 1, 1};
    Scheme s = resolve_scheme(c, img);
    Volume rec = reconstruct_identity(img, s);
    CHECK(rec.data.shape == img.data.shape);
    CHECK(max_abs_diff(rec.data, img.data) < 1e-12);
}

TEST_CASE("reconstruct_identity: constant image stays constant") {
    Volume img = image2d(96, 96, [](int, int) { return 2.5; });
    Scheme s = simple_scheme(img, 2, 2, 16);
    Volume rec = reconstruct_identity(img, s);
    for (double x : rec.data.v) CHECK(x == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("sampling_factor rescales the canvas grid") {
    Volume img = image2d(32, 32, [](int, int) { return 0.0; });
    Scheme s = simple_scheme(img, 1, 2, 16);
    Canvas c1 = make_canvas(img, s, 1.0, 1);
    Canvas c2 = make_canvas(img, s, 2.0, 1);
    CHECK(c1.grid.shape[0] == 16);
    CHECK(c2.grid.shape[0] == 32);
    CHECK(c2.grid.affine.col_norm(0) == doctest::Approx(1.0));
}
