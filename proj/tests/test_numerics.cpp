#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "echo/gradcheck.hpp"
#include "echo/tensor.hpp"
#include "oracles.hpp"

using namespace echo;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
    return Tensor::uniform(std::move(shape), rng, -2.0, 2.0, requires_grad);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("matmul hand examples") {
    Tensor i2 = Tensor::identity(2);
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(i2, b).values() == b.values());

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor c = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, c).item() == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    Tensor a = rand_tensor({3, 4}, rng, false);
    Tensor b = rand_tensor({4, 2}, rng, false);
    auto expected = oracle::matmul(a.values(), b.values(), 3, 4, 2);
    CHECK(max_abs_diff(matmul(a, b).values(), expected) <= 1e-12);
}

TEST_CASE("matmul identity invariant") {
    Rng rng(11);
    Tensor a = rand_tensor({5, 5}, rng, false);
    Tensor id = Tensor::identity(5);
    CHECK(max_abs_diff(matmul(id, a).values(), a.values()) <= 1e-12);
    CHECK(max_abs_diff(matmul(a, id).values(), a.values()) <= 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_MATCHES(matmul(a, b), shape_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("[2,3]") &&
                             Catch::Matchers::ContainsSubstring("[4,2]")));
}

TEST_CASE("softmax hand examples") {
    Tensor flat = softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
    for (double v : flat.values()) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));

    Tensor extreme = softmax(Tensor::from_data({2}, {1000, 0}), 0);
    CHECK(extreme.values()[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(extreme.values()[1] < 1e-300);
    for (double v : extreme.values()) CHECK(std::isfinite(v));

    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    auto expected = oracle::softmax(x.values());
    CHECK(max_abs_diff(softmax(x, 0).values(), expected) <= 1e-12);
}

TEST_CASE("softmax slices sum to one and stay positive") {
    Rng rng(3);
    Tensor x = rand_tensor({4, 6}, rng, false);
    for (int axis : {0, 1}) {
        Tensor y = softmax(x, axis);
        const std::int64_t rows = 4, cols = 6;
        if (axis == 1) {
            for (std::int64_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (std::int64_t c = 0; c < cols; ++c) {
                    s += y.values()[r * cols + c];
                    CHECK(y.values()[r * cols + c] > 0.0);
                }
                CHECK(s == Catch::Approx(1.0).margin(1e-9));
            }
        } else {
            for (std::int64_t c = 0; c < cols; ++c) {
                double s = 0.0;
                for (std::int64_t r = 0; r < rows; ++r) s += y.values()[r * cols + c];
                CHECK(s == Catch::Approx(1.0).margin(1e-9));
            }
        }
    }
}

TEST_CASE("softmax rejects NaN") {
    Tensor x = Tensor::from_data({2}, {0.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(softmax(x, 0), numeric_error);
}

TEST_CASE("relu and sigmoid pointwise values") {
    Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    CHECK(relu(x).values() == std::vector<double>{0, 0, 2});
    CHECK(sigmoid(Tensor::from_data({1}, {0})).item() == 0.5);
}

TEST_CASE("sigmoid gradient at zero is 0.25 against central differences") {
    auto f = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double h = 1e-6;
    const double fd = (f(h) - f(-h)) / (2 * h);

    Tensor x = Tensor::scalar(0.0, true);
    Tensor y = sigmoid(x);
    y.backward();
    CHECK(x.grad()[0] == Catch::Approx(0.25).margin(1e-12));
    CHECK(std::abs(x.grad()[0] - fd) <= 1e-8);
}

TEST_CASE("depthwise separable conv identity configuration") {
    Rng rng(5);
    Tensor x = rand_tensor({6, 3}, rng, false);
    Tensor dw = Tensor::full({1, 3}, 1.0);
    Tensor pw = Tensor::identity(3);
    CHECK(depthwise_separable_conv1d(x, dw, pw).values() == x.values());
}

TEST_CASE("conv k=2 left-padded hand example") {
    Tensor x = Tensor::from_data({3, 1}, {1, 2, 3});
    Tensor dw = Tensor::from_data({2, 1}, {1, 1});
    Tensor pw = Tensor::identity(1);
    CHECK(depthwise_separable_conv1d(x, dw, pw).values() == std::vector<double>{1, 3, 5});
}

TEST_CASE("conv matches nested-loop oracle") {
    Rng rng(13);
    const std::int64_t T = 7, d = 4, k = 4;
    Tensor x = rand_tensor({T, d}, rng, false);
    Tensor dw = rand_tensor({k, d}, rng, false);
    Tensor pw = rand_tensor({d, d}, rng, false);
    auto expected = oracle::separable_conv1d(x.values(), dw.values(), pw.values(), T, d, k);
    CHECK(max_abs_diff(depthwise_separable_conv1d(x, dw, pw).values(), expected) <= 1e-12);
}

TEST_CASE("conv rejects mismatched channels") {
    Tensor x = Tensor::zeros({4, 3});
    Tensor dw = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(depthwise_conv1d(x, dw), shape_error);
    CHECK_THROWS_AS(depthwise_separable_conv1d(x, Tensor::zeros({2, 3}), Tensor::zeros({2, 2})),
                    shape_error);
}

TEST_CASE("backward fills unit gradients through sum") {
    Tensor x = Tensor::from_data({3}, {4, 5, 6}, true);
    sum(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward through elementwise square") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    sum(mul(x, x)).backward();
    CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("repeated backward accumulates until zero_grad") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss = sum(x);
    loss.backward();
    loss.backward();
    CHECK(x.grad() == std::vector<double>{2, 2});
    x.zero_grad();
    loss.backward();
    CHECK(x.grad() == std::vector<double>{1, 1});
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(mul(x, x).backward(), contract_error);
}

TEST_CASE("finite-difference property across the op set") {
    Rng rng(101);
    const double tol = 1e-4;

    auto run = [&](const char* name, const std::function<Tensor()>& fwd,
                   std::vector<Tensor> params) {
        auto res = check_gradient(name, fwd, std::move(params));
        INFO(res.op << " max rel err " << res.max_rel_err);
        CHECK(res.max_rel_err < tol);
    };

    {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 3}, rng);
        Tensor c = rand_tensor({3, 3}, rng, false);
        run("matmul", [&] { return scalarize(matmul(a, b), c); }, {a, b});
    }
    {
        Tensor a = rand_tensor({2, 5}, rng), b = rand_tensor({2, 5}, rng);
        Tensor c = rand_tensor({2, 5}, rng, false);
        run("add", [&] { return scalarize(add(a, b), c); }, {a, b});
        run("sub", [&] { return scalarize(sub(a, b), c); }, {a, b});
        run("mul", [&] { return scalarize(mul(a, b), c); }, {a, b});
        run("affine", [&] { return scalarize(affine(a, -1.3, 0.7), c); }, {a});
    }
    {
        Tensor x = rand_tensor({4, 3}, rng);
        Tensor b = rand_tensor({3}, rng);
        Tensor c = rand_tensor({4, 3}, rng, false);
        run("add_row_bias", [&] { return scalarize(add_row_bias(x, b), c); }, {x, b});
    }
    {
        // keep relu probes away from the kink at zero
        Tensor x = Tensor::from_data({5}, {-1.7, -0.4, 0.3, 1.1, 1.9}, true);
        Tensor c = rand_tensor({5}, rng, false);
        run("relu", [&] { return scalarize(relu(x), c); }, {x});
        run("sigmoid", [&] { return scalarize(sigmoid(x), c); }, {x});
    }
    {
        Tensor x = rand_tensor({3, 5}, rng);
        Tensor c = rand_tensor({3, 5}, rng, false);
        run("softmax axis 1", [&] { return scalarize(softmax(x, 1), c); }, {x});
        run("softmax axis 0", [&] { return scalarize(softmax(x, 0), c); }, {x});
        run("log_softmax", [&] { return scalarize(log_softmax_rows(x), c); }, {x});
        run("transpose", [&] { return scalarize(transpose(x), transpose(c)); }, {x});
    }
    {
        Tensor x = rand_tensor({6, 4}, rng);
        Tensor dw = rand_tensor({3, 4}, rng);
        Tensor pw = rand_tensor({4, 4}, rng);
        Tensor c = rand_tensor({6, 4}, rng, false);
        run("depthwise_separable_conv1d",
            [&] { return scalarize(depthwise_separable_conv1d(x, dw, pw), c); }, {x, dw, pw});
    }
    {
        Tensor x = rand_tensor({4, 6}, rng);
        Tensor gain = rand_tensor({6}, rng);
        Tensor bias = rand_tensor({6}, rng);
        Tensor c = rand_tensor({4, 6}, rng, false);
        run("layer_norm", [&] { return scalarize(layer_norm(x, gain, bias), c); },
            {x, gain, bias});
    }
    {
        Tensor x = rand_tensor({5, 4}, rng);
        Tensor c = rand_tensor({2, 4}, rng, false);
        run("slice_rows", [&] { return scalarize(slice_rows(x, 1, 3), c); }, {x});
        Tensor c2 = rand_tensor({5, 2}, rng, false);
        run("slice_cols", [&] { return scalarize(slice_cols(x, 1, 3), c2); }, {x});
    }
    {
        Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
        Tensor cr = rand_tensor({4, 3}, rng, false);
        Tensor cc = rand_tensor({2, 6}, rng, false);
        std::vector<Tensor> parts{a, b};
        run("concat_rows", [&] { return scalarize(concat_rows(parts), cr); }, {a, b});
        run("concat_cols", [&] { return scalarize(concat_cols(parts), cc); }, {a, b});
    }
    {
        Tensor s1 = Tensor::scalar(0.4, true), s2 = Tensor::scalar(-1.2, true);
        Tensor c = rand_tensor({2}, rng, false);
        std::vector<Tensor> parts{s1, s2};
        run("stack_scalars", [&] { return scalarize(stack_scalars(parts), c); }, {s1, s2});
    }
    {
        std::vector<std::uint8_t> keep{1, 0, 1, 1, 1, 0, 0, 1, 1};
        Tensor x = rand_tensor({3, 3}, rng);
        Tensor c = rand_tensor({3, 3}, rng, false);
        run("masked_softmax_rows", [&] { return scalarize(masked_softmax_rows(x, keep), c); },
            {x});
    }
}

TEST_CASE("composite graph gradient check") {
    // conv -> matmul -> layer norm -> softmax -> weighted sum, all parameters probed
    Rng rng(77);
    Tensor x = rand_tensor({5, 4}, rng);
    Tensor dw = rand_tensor({3, 4}, rng);
    Tensor pw = rand_tensor({4, 4}, rng);
    Tensor w = rand_tensor({4, 4}, rng);
    Tensor gain = rand_tensor({4}, rng);
    Tensor bias = rand_tensor({4}, rng);
    Tensor c = rand_tensor({5, 4}, rng, false);
    auto fwd = [&] {
        Tensor h = depthwise_separable_conv1d(x, dw, pw);
        h = layer_norm(matmul(h, w), gain, bias);
        return scalarize(softmax(h, 1), c);
    };
    auto res = check_gradient("composite", fwd, {x, dw, pw, w, gain, bias});
    INFO("max rel err " << res.max_rel_err);
    CHECK(res.pass);
}

TEST_CASE("forward replay is bit-identical") {
    auto build = [] {
        Rng rng(2024);
        Tensor x = rand_tensor({6, 5}, rng, false);
        Tensor w = rand_tensor({5, 5}, rng, false);
        Tensor dw = rand_tensor({4, 5}, rng, false);
        Tensor pw = rand_tensor({5, 5}, rng, false);
        return softmax(matmul(depthwise_separable_conv1d(x, dw, pw), w), 1).values();
    };
    CHECK(build() == build());
}

TEST_CASE("grad populated on every reachable requires_grad tensor") {
    Rng rng(31);
    Tensor a = rand_tensor({2, 2}, rng);
    Tensor b = rand_tensor({2, 2}, rng);
    Tensor mid = matmul(a, b);
    Tensor loss = sum(mul(mid, mid));
    loss.backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK(mid.has_grad());
    CHECK(loss.has_grad());
}
