#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "echo/gate.hpp"
#include "echo/gradcheck.hpp"
#include "oracles.hpp"

using namespace echo;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

GateParams random_gate(std::int64_t d, std::int64_t hidden, Rng& rng) {
    GateParams p;
    p.w1 = Tensor::randn({d, hidden}, rng, 0.7, true);
    p.b1 = Tensor::randn({hidden}, rng, 0.3, true);
    p.w2 = Tensor::randn({hidden, d}, rng, 0.7, true);
    p.b2 = Tensor::randn({d}, rng, 0.3, true);
    return p;
}

}  // namespace

TEST_CASE("zero parameters give a half-open gate") {
    GateParams p;
    p.w1 = Tensor::zeros({4, 4});
    p.b1 = Tensor::zeros({4});
    p.w2 = Tensor::zeros({4, 4});
    p.b2 = Tensor::zeros({4});
    Rng rng(1);
    Tensor g = gate_coefficients(Tensor::randn({3, 4}, rng), p);
    for (double v : g.values()) CHECK(v == 0.5);
}

TEST_CASE("large positive b2 saturates the gate") {
    Rng rng(2);
    GateParams p = random_gate(4, 6, rng);
    p.w2 = Tensor::zeros({6, 4});
    p.b2 = Tensor::full({4}, 20.0);
    Tensor g = gate_coefficients(Tensor::randn({3, 4}, rng), p);
    for (double v : g.values()) CHECK(v >= 1.0 - 1e-8);
}

TEST_CASE("gate matches two-layer loop oracle") {
    Rng rng(3);
    const std::int64_t T = 5, d = 4, hidden = 7;
    GateParams p = random_gate(d, hidden, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    auto expected = oracle::gate(x.values(), T, d, hidden, p.w1.values(), p.b1.values(),
                                 p.w2.values(), p.b2.values());
    CHECK(max_abs_diff(gate_coefficients(x, p).values(), expected) <= 1e-12);
}

TEST_CASE("gate output stays strictly inside (0,1)") {
    Rng rng(4);
    GateParams p = random_gate(6, 6, rng);
    Tensor x = Tensor::uniform({8, 6}, rng, -3.0, 3.0);
    Tensor g = gate_coefficients(x, p);
    for (double v : g.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("fuse recovers each branch at the gate extremes") {
    Rng rng(5);
    Tensor o1 = Tensor::randn({4, 3}, rng);
    Tensor o2 = Tensor::randn({4, 3}, rng);
    CHECK(fuse(o1, o2, Tensor::full({4, 3}, 1.0)).values() == o1.values());
    CHECK(fuse(o1, o2, Tensor::full({4, 3}, 0.0)).values() == o2.values());

    Tensor mid = fuse(Tensor::from_data({1}, {2.0}), Tensor::from_data({1}, {4.0}),
                      Tensor::from_data({1}, {0.5}));
    CHECK(mid.item() == 3.0);
}

TEST_CASE("fuse rejects mismatched shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(fuse(a, b, a), shape_error);
    CHECK_THROWS_AS(fuse(a, a, b), shape_error);
}

TEST_CASE("fused output lies between the branch values") {
    Rng rng(6);
    GateParams p = random_gate(5, 5, rng);
    Tensor x = Tensor::randn({6, 5}, rng);
    Tensor o1 = Tensor::randn({6, 5}, rng);
    Tensor o2 = Tensor::randn({6, 5}, rng);
    Tensor out = fuse(o1, o2, gate_coefficients(x, p));
    for (std::size_t i = 0; i < out.values().size(); ++i) {
        const double lo = std::min(o1.values()[i], o2.values()[i]);
        const double hi = std::max(o1.values()[i], o2.values()[i]);
        CHECK(out.values()[i] >= lo);
        CHECK(out.values()[i] <= hi);
    }
}

TEST_CASE("gradient splits as G and 1-G across branches") {
    Rng rng(7);
    const std::int64_t T = 3, d = 4;
    GateParams p = random_gate(d, d, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    Tensor o1 = Tensor::randn({T, d}, rng, 1.0, true);
    Tensor o2 = Tensor::randn({T, d}, rng, 1.0, true);
    Tensor g = gate_coefficients(x, p);
    sum(fuse(o1, o2, g)).backward();
    for (std::size_t i = 0; i < g.values().size(); ++i) {
        CHECK(o1.grad()[i] == Catch::Approx(g.values()[i]).margin(1e-12));
        CHECK(o2.grad()[i] == Catch::Approx(1.0 - g.values()[i]).margin(1e-12));
    }
}

TEST_CASE("saturating b2 drives the output to the first branch") {
    Rng rng(8);
    const std::int64_t T = 4, d = 5;
    GateParams p = random_gate(d, d, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    Tensor o1 = Tensor::randn({T, d}, rng);
    Tensor o2 = Tensor::randn({T, d}, rng);
    double prev = 1e300;
    for (double b2 : {2.0, 6.0, 12.0, 20.0}) {
        p.b2 = Tensor::full({d}, b2);
        Tensor out = fuse(o1, o2, gate_coefficients(x, p));
        const double dev = max_abs_diff(out.values(), o1.values());
        CHECK(dev < prev);
        prev = dev;
    }
    CHECK(prev <= 1e-6);
}

TEST_CASE("gate gradients pass finite differences") {
    Rng rng(9);
    const std::int64_t T = 4, d = 4, hidden = 5;
    GateParams p = random_gate(d, hidden, rng);
    Tensor x = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
    Tensor o1 = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
    Tensor o2 = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
    Tensor c = Tensor::uniform({T, d}, rng, -1.0, 1.0);
    auto params = p.parameters();
    params.insert(params.end(), {x, o1, o2});
    auto res = check_gradient(
        "gate+fuse", [&] { return scalarize(fuse(o1, o2, gate_coefficients(x, p)), c); }, params);
    INFO("max rel err " << res.max_rel_err);
    CHECK(res.pass);
}
