#include <catch2/catch_amalgamated.hpp>

#include "msnerv/nn_ops.hpp"
#include "test_util.hpp"

using namespace msnerv;
using msnerv::test::fd_max_rel_err;
using msnerv::test::random_tensor;

TEST_CASE("pointwise matches finite differences") {
    Rng rng(1);
    Tensor x = random_tensor(rng, {3, 4, 3});
    Tensor w = random_tensor(rng, {5, 3});
    Tensor b = random_tensor(rng, {5});
    REQUIRE(fd_max_rel_err({x, w, b}, [](std::vector<Var>& v) {
                return mean_all(mul(pointwise(v[0], v[1], v[2]), pointwise(v[0], v[1], v[2])));
            }) < 1e-6);
}

TEST_CASE("conv2d gradient and identity kernel") {
    Rng rng(2);
    Tensor x = random_tensor(rng, {4, 5, 2});
    Tensor w = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
    Tensor b = random_tensor(rng, {3});
    REQUIRE(fd_max_rel_err({x, w, b}, [](std::vector<Var>& v) {
                return mean_all(mul(conv2d(v[0], v[1], v[2]), conv2d(v[0], v[1], v[2])));
            }) < 1e-6);

    // center-tap identity reproduces the input
    Tensor wi({1, 1, 3, 3});
    wi[4] = 1.0;
    Tensor x1 = random_tensor(rng, {3, 3, 1});
    Var out = conv2d(leaf(x1, false), leaf(wi, false), Var{});
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out.val()[i] == x1[i]);
}

TEST_CASE("depthwise gradient and translation equivariance in the interior") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {5, 6, 3});
    Tensor w = random_tensor(rng, {3, 3, 3}, -0.5, 0.5);
    Tensor b = random_tensor(rng, {3});
    REQUIRE(fd_max_rel_err({x, w, b}, [](std::vector<Var>& v) {
                return mean_all(mul(depthwise(v[0], v[1], v[2]), depthwise(v[0], v[1], v[2])));
            }) < 1e-6);

    // shift input by one column; interior outputs shift identically
    Tensor xs({5, 6, 3});
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 1; j < 6; ++j)
            for (int64_t c = 0; c < 3; ++c) xs.at3(i, j, c) = x.at3(i, j - 1, c);
    Var y0 = depthwise(leaf(x, false), leaf(w, false), Var{});
    Var y1 = depthwise(leaf(xs, false), leaf(w, false), Var{});
    for (int64_t i = 1; i < 4; ++i)
        for (int64_t j = 2; j < 5; ++j)
            for (int64_t c = 0; c < 3; ++c)
                REQUIRE(y1.val().at3(i, j, c) == Catch::Approx(y0.val().at3(i, j - 1, c)).margin(1e-12));
}

TEST_CASE("layer_norm_c normalizes per pixel and matches finite differences") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {3, 3, 6});
    Tensor g({6}, 1.0);
    Tensor be({6}, 0.0);
    Var y = layer_norm_c(leaf(x, false), leaf(g, false), leaf(be, false));
    for (int64_t p = 0; p < 9; ++p) {
        double m = 0.0;
        for (int64_t c = 0; c < 6; ++c) m += y.val()[p * 6 + c];
        REQUIRE(std::fabs(m / 6.0) < 1e-12);
    }

    Tensor g2 = random_tensor(rng, {6}, 0.5, 1.5);
    Tensor b2 = random_tensor(rng, {6});
    REQUIRE(fd_max_rel_err({x, g2, b2}, [](std::vector<Var>& v) {
                auto ln = layer_norm_c(v[0], v[1], v[2]);
                return mean_all(mul(ln, ln));
            }) < 1e-5);
}

TEST_CASE("bilinear_up preserves constants and matches finite differences") {
    Tensor c({3, 4, 2}, 0.77);
    Var y = bilinear_up(leaf(c, false), 2, Geom::frame(3, 4));
    REQUIRE(y.shape() == std::vector<int64_t>{6, 8, 2});
    for (int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.val()[i] == Catch::Approx(0.77));

    Rng rng(5);
    Tensor x = random_tensor(rng, {3, 4, 2});
    REQUIRE(fd_max_rel_err({x}, [](std::vector<Var>& v) {
                auto up = bilinear_up(v[0], 3, Geom::frame(3, 4));
                return mean_all(mul(up, up));
            }) < 1e-6);
}

TEST_CASE("pixel_shuffle rearranges channels exactly") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {2, 3, 8});  // c=2, s=2
    Var y = pixel_shuffle(leaf(x, false), 2);
    REQUIRE(y.shape() == std::vector<int64_t>{4, 6, 2});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t c = 0; c < 2; ++c)
                for (int64_t di = 0; di < 2; ++di)
                    for (int64_t dj = 0; dj < 2; ++dj)
                        REQUIRE(y.val().at3(2 * i + di, 2 * j + dj, c) ==
                                x.at3(i, j, (c * 2 + di) * 2 + dj));
    REQUIRE(fd_max_rel_err({x}, [](std::vector<Var>& v) {
                auto ps = pixel_shuffle(v[0], 2);
                return mean_all(mul(ps, ps));
            }) < 1e-6);
}

TEST_CASE("grid_trilinear hits stored planes at integer knots") {
    Rng rng(7);
    // full temporal resolution: query index t maps exactly onto plane t
    Tensor g = random_tensor(rng, {4, 2, 3, 2});
    for (int64_t t = 0; t < 4; ++t) {
        double tn = static_cast<double>(t) / 3.0;
        Var y = grid_trilinear(leaf(g, false), tn, 2, 3);
        for (int64_t i = 0; i < 2 * 3 * 2; ++i)
            REQUIRE(y.val()[i] == Catch::Approx(g[t * 12 + i]).margin(1e-12));
    }
}

TEST_CASE("grid_trilinear midpoint of a two-plane grid is the average") {
    Rng rng(8);
    Tensor g = random_tensor(rng, {2, 3, 3, 1});
    Var y = grid_trilinear(leaf(g, false), 0.5, 3, 3);
    for (int64_t i = 0; i < 9; ++i)
        REQUIRE(y.val()[i] == Catch::Approx(0.5 * (g[i] + g[9 + i])).margin(1e-12));
}

TEST_CASE("grid_trilinear matches a brute-force separable oracle") {
    // independent loop-based trilinear evaluation with the same knot mapping
    Rng rng(9);
    Tensor g = random_tensor(rng, {3, 2, 2, 1});
    double tn = 0.37;  // strictly between knots 1 and 2 of the 3-knot axis
    int64_t oh = 4, ow = 4;
    Var y = grid_trilinear(leaf(g, false), tn, oh, ow);

    double tpos = tn * 2.0;
    int64_t t0 = static_cast<int64_t>(std::floor(tpos));
    double wt = tpos - t0;
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double rpos = static_cast<double>(i) * 1.0 / 3.0;  // (gh-1)/(oh-1)
            double cpos = static_cast<double>(j) * 1.0 / 3.0;
            int64_t r0 = static_cast<int64_t>(std::floor(rpos));
            int64_t c0 = static_cast<int64_t>(std::floor(cpos));
            int64_t r1 = std::min<int64_t>(r0 + 1, 1), c1 = std::min<int64_t>(c0 + 1, 1);
            double wr = rpos - r0, wc = cpos - c0;
            double acc = 0.0;
            for (int dt = 0; dt < 2; ++dt)
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        double w = (dt ? wt : 1 - wt) * (dr ? wr : 1 - wr) * (dc ? wc : 1 - wc);
                        int64_t tt = dt ? std::min<int64_t>(t0 + 1, 2) : t0;
                        int64_t rr = dr ? r1 : r0;
                        int64_t cc2 = dc ? c1 : c0;
                        acc += w * g.at4(tt, rr, cc2, 0);
                    }
            REQUIRE(y.val().at3(i, j, 0) == Catch::Approx(acc).margin(1e-12));
        }

    REQUIRE(fd_max_rel_err({g}, [tn](std::vector<Var>& v) {
                auto s = grid_trilinear(v[0], tn, 4, 4);
                return mean_all(mul(s, s));
            }) < 1e-6);
}

TEST_CASE("local_grid_tile is periodic and differentiable") {
    Rng rng(10);
    Tensor g = random_tensor(rng, {3, 2, 2, 3});
    Var a = local_grid_tile(leaf(g, false), 0.4, 6, 6, 0, 0);
    Var b = local_grid_tile(leaf(g, false), 0.4, 6, 6, 2, 4);  // shifted by full periods
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t c = 0; c < 3; ++c)
                REQUIRE(a.val().at3(i, j, c) == b.val().at3(i, j, c));

    REQUIRE(fd_max_rel_err({g}, [](std::vector<Var>& v) {
                auto t = local_grid_tile(v[0], 0.3, 5, 5, 1, 2);
                return mean_all(mul(t, t));
            }) < 1e-6);
}

TEST_CASE("extract_pad zero-fills outside and back-propagates into the window") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {4, 4, 2});
    Var y = extract_pad(leaf(x, false), -1, 2, 3, 4);
    REQUIRE(y.shape() == std::vector<int64_t>{3, 4, 2});
    for (int64_t j = 0; j < 4; ++j)
        for (int64_t c = 0; c < 2; ++c) REQUIRE(y.val().at3(0, j, c) == 0.0);  // above the array
    REQUIRE(y.val().at3(1, 0, 0) == x.at3(0, 2, 0));
    REQUIRE(y.val().at3(1, 2, 1) == 0.0);  // right of the array

    REQUIRE(fd_max_rel_err({x}, [](std::vector<Var>& v) {
                auto e = extract_pad(v[0], 1, -1, 4, 4);
                return mean_all(mul(e, e));
            }) < 1e-6);
}

TEST_CASE("avg_pool2 and conv1d_valid_const gradients") {
    Rng rng(12);
    Tensor x = random_tensor(rng, {5, 6, 2});
    REQUIRE(fd_max_rel_err({x}, [](std::vector<Var>& v) {
                auto p = avg_pool2(v[0]);
                return mean_all(mul(p, p));
            }) < 1e-6);

    std::vector<double> k = {0.25, 0.5, 0.25};
    REQUIRE(fd_max_rel_err({x}, [&](std::vector<Var>& v) {
                auto a = conv1d_valid_const(v[0], k, true);
                auto b = conv1d_valid_const(a, k, false);
                return mean_all(mul(b, b));
            }) < 1e-6);
}
