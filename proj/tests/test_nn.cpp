#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd/nn.hpp"
#include "oracle.hpp"

using namespace fd;

namespace {
Tensor4 random_tensor(int n, int c, int h, int w, RngStream& rng) {
    Tensor4 t(n, c, h, w);
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}
} // namespace

TEST_CASE("conv2d delta kernel is the identity") {
    ConvLayer l(1, 1, 3, 1, 1);
    l.weights[4] = 1.0; // center tap
    Tensor4 x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    const Tensor4 y = conv2d_forward(x, l);
    CHECK(y.data == x.data);
}

TEST_CASE("conv2d all-ones kernel matches oracle") {
    ConvLayer l(1, 1, 3, 1, 1);
    std::fill(l.weights.begin(), l.weights.end(), 1.0);
    Tensor4 x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    const Tensor4 got = conv2d_forward(x, l);
    const Tensor4 want = oracle::conv2d(x, l.weights, l.bias, 1, 3, 1, 1);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12));
    // with zero padding every 2x2 output position sees all four inputs
    for (double v : got.data) CHECK(v == Catch::Approx(10.0));
}

TEST_CASE("conv2d zero kernel with bias") {
    ConvLayer l(2, 3, 3, 1, 1);
    std::fill(l.bias.begin(), l.bias.end(), 5.0);
    RngStream rng(1, 1);
    const Tensor4 x = random_tensor(2, 2, 4, 4, rng);
    const Tensor4 y = conv2d_forward(x, l);
    for (double v : y.data) CHECK(v == Catch::Approx(5.0));
}

TEST_CASE("conv2d matches quadruple-loop oracle on random shapes") {
    for (int trial = 0; trial < 20; ++trial) {
        RngStream rng(trial, 55);
        const int n = 1 + static_cast<int>(rng.next_below(2));
        const int ci = 1 + static_cast<int>(rng.next_below(3));
        const int co = 1 + static_cast<int>(rng.next_below(4));
        const int h = 3 + static_cast<int>(rng.next_below(6));
        const int w = 3 + static_cast<int>(rng.next_below(6));
        const int stride = 1 + static_cast<int>(rng.next_below(2));
        ConvLayer l(ci, co, 3, stride, 1);
        for (double& v : l.weights) v = rng.uniform(-1.0, 1.0);
        for (double& v : l.bias) v = rng.uniform(-1.0, 1.0);
        const Tensor4 x = random_tensor(n, ci, h, w, rng);
        const Tensor4 got = conv2d_forward(x, l);
        const Tensor4 want = oracle::conv2d(x, l.weights, l.bias, co, 3, stride, 1);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.data.size(); ++i)
            CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
    }
}

TEST_CASE("conv2d shape errors") {
    ConvLayer l(2, 4, 3);
    const Tensor4 x(1, 3, 4, 4);
    CHECK_THROWS_AS(conv2d_forward(x, l), ShapeError);
    CHECK_THROWS_AS(ConvLayer(1, 1, 4), ConfigError);
}

TEST_CASE("conv2d_backward bias gradient and zero grad") {
    ConvLayer l(2, 3, 3, 1, 1);
    RngStream rng(2, 2);
    for (double& v : l.weights) v = rng.uniform(-1.0, 1.0);
    const Tensor4 x = random_tensor(2, 2, 5, 5, rng);
    const Tensor4 grad_out = random_tensor(2, 3, 5, 5, rng);
    const ConvGrads g = conv2d_backward(grad_out, x, l);
    for (int oc = 0; oc < 3; ++oc) {
        double want = 0.0;
        for (int n = 0; n < 2; ++n)
            for (int iy = 0; iy < 5; ++iy)
                for (int ix = 0; ix < 5; ++ix) want += grad_out.at(n, oc, iy, ix);
        CHECK(g.grad_b[oc] == Catch::Approx(want).margin(1e-12));
    }
    const Tensor4 zero(2, 3, 5, 5);
    const ConvGrads gz = conv2d_backward(zero, x, l);
    for (double v : gz.grad_w) CHECK(v == 0.0);
    for (double v : gz.grad_b) CHECK(v == 0.0);
    for (double v : gz.grad_x.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d_backward matches finite differences") {
    ConvLayer l(2, 2, 3, 1, 1);
    RngStream rng(3, 3);
    for (double& v : l.weights) v = rng.uniform(-1.0, 1.0);
    for (double& v : l.bias) v = rng.uniform(-0.5, 0.5);
    Tensor4 x = random_tensor(1, 2, 5, 5, rng);
    const Tensor4 grad_out = random_tensor(1, 2, 5, 5, rng);
    auto objective = [&]() {
        const Tensor4 y = conv2d_forward(x, l);
        double s = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) s += grad_out.data[i] * y.data[i];
        return s;
    };
    const ConvGrads g = conv2d_backward(grad_out, x, l);
    RngStream pick(4, 4);
    for (int probe = 0; probe < 25; ++probe) {
        {
            const std::size_t i = pick.next_below(x.data.size());
            const double fdiff = oracle::central_diff(
                [&](double v) {
                    const double s = x.data[i];
                    x.data[i] = v;
                    const double r = objective();
                    x.data[i] = s;
                    return r;
                },
                x.data[i]);
            CHECK(oracle::rel_err(g.grad_x.data[i], fdiff) < 1e-6);
        }
        {
            const std::size_t i = pick.next_below(l.weights.size());
            const double fdiff = oracle::central_diff(
                [&](double v) {
                    const double s = l.weights[i];
                    l.weights[i] = v;
                    const double r = objective();
                    l.weights[i] = s;
                    return r;
                },
                l.weights[i]);
            CHECK(oracle::rel_err(g.grad_w[i], fdiff) < 1e-6);
        }
    }
}

TEST_CASE("relu forward/backward") {
    Tensor4 x(1, 1, 1, 4);
    x.data = {-1.0, 2.0, 0.0, -0.5};
    const Tensor4 y = relu_forward(x);
    CHECK(y.data == std::vector<double>{0.0, 2.0, 0.0, 0.0});
    Tensor4 g(1, 1, 1, 4);
    g.data = {1.0, 1.0, 1.0, 1.0};
    const Tensor4 gi = relu_backward(g, x);
    CHECK(gi.data == std::vector<double>{0.0, 1.0, 0.0, 0.0});
}

TEST_CASE("maxpool ties break toward first row-major maximum") {
    Tensor4 x(1, 1, 2, 2);
    x.data = {3.0, 3.0, 3.0, 3.0};
    std::vector<int> argmax;
    const Tensor4 y = maxpool2_forward(x, argmax);
    CHECK(y.data == std::vector<double>{3.0});
    CHECK(argmax == std::vector<int>{0});
}

TEST_CASE("maxpool backward routes gradient to the argmax") {
    RngStream rng(5, 5);
    Tensor4 x = random_tensor(2, 2, 4, 4, rng);
    std::vector<int> argmax;
    const Tensor4 y = maxpool2_forward(x, argmax);
    Tensor4 grad_out(y.n, y.c, y.h, y.w);
    for (double& v : grad_out.data) v = rng.uniform(-1.0, 1.0);
    const Tensor4 grad_in = maxpool2_backward(grad_out, x, argmax);
    double in_sum = 0.0, out_sum = 0.0;
    for (double v : grad_in.data) in_sum += v;
    for (double v : grad_out.data) out_sum += v;
    CHECK(in_sum == Catch::Approx(out_sum).margin(1e-12));
    // finite-difference spot check through the pooling nonlinearity
    for (int probe = 0; probe < 15; ++probe) {
        const std::size_t i = rng.next_below(x.data.size());
        const double fdiff = oracle::central_diff(
            [&](double v) {
                const double s = x.data[i];
                x.data[i] = v;
                std::vector<int> am;
                const Tensor4 yy = maxpool2_forward(x, am);
                x.data[i] = s;
                double r = 0.0;
                for (std::size_t j = 0; j < yy.data.size(); ++j)
                    r += grad_out.data[j] * yy.data[j];
                return r;
            },
            x.data[i], 1e-6);
        CHECK(std::abs(grad_in.data[i] - fdiff) < 1e-5);
    }
}

TEST_CASE("softmax_xent uniform logits give ln C") {
    for (int classes : {2, 5, 10}) {
        std::vector<double> logits(static_cast<std::size_t>(classes), 0.7);
        auto [loss, grad] = softmax_xent(logits, {0}, classes);
        CHECK(loss == Catch::Approx(std::log(static_cast<double>(classes))).margin(1e-12));
    }
}

TEST_CASE("softmax probabilities sum to one and loss is non-negative") {
    RngStream rng(6, 6);
    const int n = 8, classes = 10;
    std::vector<double> logits(n * classes);
    std::vector<int> labels(n);
    for (double& v : logits) v = rng.uniform(-5.0, 5.0);
    for (int& l : labels) l = static_cast<int>(rng.next_below(classes));
    auto [loss, grad] = softmax_xent(logits, labels, classes);
    CHECK(loss >= 0.0);
    // gradient rows sum to 0 <=> softmax rows sum to 1
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < classes; ++c) s += grad[static_cast<std::size_t>(i) * classes + c];
        CHECK(std::abs(s) < 1e-12);
    }
    CHECK_THROWS_AS(softmax_xent(logits, std::vector<int>(n, classes), classes), DataError);
}

TEST_CASE("dense + loss gradient matches finite differences") {
    DenseLayer l(12, 10);
    RngStream rng(7, 7);
    l.init_kaiming_uniform(rng);
    Tensor4 x = random_tensor(8, 3, 2, 2, rng);
    std::vector<int> labels(8);
    for (int& lab : labels) lab = static_cast<int>(rng.next_below(10));
    auto objective = [&]() {
        const auto logits = dense_forward(x, l);
        return softmax_xent(logits, labels, 10).first;
    };
    const auto logits = dense_forward(x, l);
    auto [loss, grad_logits] = softmax_xent(logits, labels, 10);
    const DenseGrads g = dense_backward(grad_logits, x, l);
    RngStream pick(8, 8);
    for (int probe = 0; probe < 25; ++probe) {
        const std::size_t i = pick.next_below(l.weights.size());
        const double fdiff = oracle::central_diff(
            [&](double v) {
                const double s = l.weights[i];
                l.weights[i] = v;
                const double r = objective();
                l.weights[i] = s;
                return r;
            },
            l.weights[i]);
        CHECK(oracle::rel_err(g.grad_w[i], fdiff) < 1e-6);
        const std::size_t j = pick.next_below(x.data.size());
        const double fdx = oracle::central_diff(
            [&](double v) {
                const double s = x.data[j];
                x.data[j] = v;
                const double r = objective();
                x.data[j] = s;
                return r;
            },
            x.data[j]);
        CHECK(oracle::rel_err(g.grad_x.data[j], fdx) < 1e-6);
    }
}

TEST_CASE("sgd_step arithmetic") {
    std::vector<double> p{1.0};
    SgdState st;
    sgd_step(p, {0.5}, st, 0.0, 0.0, 0.0);
    CHECK(p[0] == 1.0); // lr 0 leaves params unchanged
    p = {1.0};
    st = {};
    sgd_step(p, {0.5}, st, 0.1, 0.0, 0.0);
    CHECK(p[0] == Catch::Approx(0.95));
    // two steps with momentum 0.9 on constant grad g: delta = lr*g*(1 + 1.9)
    p = {0.0};
    st = {};
    sgd_step(p, {1.0}, st, 0.1, 0.9, 0.0);
    sgd_step(p, {1.0}, st, 0.1, 0.9, 0.0);
    CHECK(p[0] == Catch::Approx(-0.1 * (1.0 + 1.9)).margin(1e-12));
    // weight decay folds into the gradient
    p = {2.0};
    st = {};
    sgd_step(p, {0.0}, st, 0.1, 0.0, 0.5);
    CHECK(p[0] == Catch::Approx(2.0 - 0.1 * 1.0));
    std::vector<double> bad{1.0};
    SgdState st2;
    CHECK_THROWS_AS(sgd_step(bad, {std::numeric_limits<double>::infinity()}, st2, 0.1, 0.0, 0.0),
                    NumericError);
}
