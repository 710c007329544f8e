#include <catch2/catch_amalgamated.hpp>

#include "msnerv/autodiff.hpp"
#include "test_util.hpp"

using namespace msnerv;
using msnerv::test::fd_max_rel_err;
using msnerv::test::random_tensor;

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(42);
    Tensor a = random_tensor(rng, {3, 4, 2});
    Tensor b = random_tensor(rng, {3, 4, 2}, 0.5, 1.5);
    Tensor s = Tensor::scalar(0.7);

    auto check = [&](std::vector<Tensor> xs, std::function<Var(std::vector<Var>&)> f) {
        REQUIRE(fd_max_rel_err(std::move(xs), f) < 1e-6);
    };

    check({a, b}, [](std::vector<Var>& v) { return mean_all(v[0] + v[1]); });
    check({a, b}, [](std::vector<Var>& v) { return mean_all(v[0] - v[1]); });
    check({a, b}, [](std::vector<Var>& v) { return mean_all(v[0] * v[1]); });
    check({a, b}, [](std::vector<Var>& v) { return mean_all(v[0] / v[1]); });
    check({a, s}, [](std::vector<Var>& v) { return mean_all(v[0] * v[1]); });  // scalar broadcast
    check({s, a}, [](std::vector<Var>& v) { return sum_all(v[0] + v[1]); });
    check({a}, [](std::vector<Var>& v) { return mean_all(scale(v[0], 2.5)); });
    check({a}, [](std::vector<Var>& v) { return mean_all(gelu(v[0])); });
    check({b}, [](std::vector<Var>& v) { return mean_all(powc(v[0], 0.3)); });
    check({a}, [](std::vector<Var>& v) { return sum_all(mul(v[0], v[0])); });
    check({a}, [](std::vector<Var>& v) { return pick(v[0], 5); });
}

TEST_CASE("abs and relu subgradients away from kinks") {
    Rng rng(7);
    Tensor a = random_tensor(rng, {5, 5, 1}, 0.2, 1.0);  // strictly positive
    Tensor c = random_tensor(rng, {5, 5, 1}, -1.0, -0.2);
    REQUIRE(fd_max_rel_err({a}, [](std::vector<Var>& v) { return mean_all(abs_sg(v[0])); }) < 1e-6);
    REQUIRE(fd_max_rel_err({c}, [](std::vector<Var>& v) { return mean_all(abs_sg(v[0])); }) < 1e-6);
    REQUIRE(fd_max_rel_err({a}, [](std::vector<Var>& v) { return mean_all(relu(v[0])); }) < 1e-6);
}

TEST_CASE("concat and slice are exact inverses with correct gradients") {
    Rng rng(3);
    Tensor a = random_tensor(rng, {2, 3, 2});
    Tensor b = random_tensor(rng, {2, 3, 3});

    Var va = leaf(a, false), vb = leaf(b, false);
    Var cat = concat_c({va, vb});
    REQUIRE(cat.shape() == std::vector<int64_t>{2, 3, 5});
    Var back = slice_c(cat, 2, 5);
    for (int64_t i = 0; i < back.numel(); ++i) REQUIRE(back.val()[i] == b[i]);

    REQUIRE(fd_max_rel_err({a, b}, [](std::vector<Var>& v) {
                return mean_all(mul(concat_c({v[0], v[1]}), concat_c({v[0], v[1]})));
            }) < 1e-6);
    REQUIRE(fd_max_rel_err({b}, [](std::vector<Var>& v) {
                return mean_all(mul(slice_c(v[0], 1, 3), slice_c(v[0], 0, 2)));
            }) < 1e-6);
}

TEST_CASE("weighted_mean reduces to mean with unit weights") {
    Rng rng(9);
    Tensor a = random_tensor(rng, {4, 4, 3});
    Tensor w({4, 4, 3}, 1.0);
    Var v = leaf(a, false);
    REQUIRE(weighted_mean(v, w).scalar() == mean_all(v).scalar());

    Tensor wm = random_tensor(rng, {4, 4, 3}, 0.0, 1.0);
    REQUIRE(fd_max_rel_err({a}, [&](std::vector<Var>& v2) {
                return weighted_mean(mul(v2[0], v2[0]), wm);
            }) < 1e-6);
}

TEST_CASE("slice_leading extracts one leading plane") {
    Rng rng(11);
    Tensor g = random_tensor(rng, {3, 2, 2, 4});
    Var vg = leaf(g, false);
    Var p = slice_leading(vg, 1);
    REQUIRE(p.shape() == std::vector<int64_t>{2, 2, 4});
    REQUIRE(p.val()[0] == g[16]);
    REQUIRE(fd_max_rel_err({g}, [](std::vector<Var>& v) {
                return mean_all(mul(slice_leading(v[0], 2), slice_leading(v[0], 2)));
            }) < 1e-6);
}

TEST_CASE("graph reuse accumulates gradients once per path") {
    Tensor a = Tensor::scalar(3.0);
    Var x = leaf(a, true);
    Var y = add(mul(x, x), x);  // y = x^2 + x, dy/dx = 2x + 1 = 7
    backward(y);
    REQUIRE(x.grad()[0] == Catch::Approx(7.0));
}

TEST_CASE("detach blocks gradient flow") {
    Tensor a = Tensor::scalar(2.0);
    Var x = leaf(a, true);
    Var y = mul(detach(x), x);  // treated as const * x
    backward(y);
    REQUIRE(x.grad()[0] == Catch::Approx(2.0));
}
