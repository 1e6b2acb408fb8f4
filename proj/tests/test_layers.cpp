#include <algorithm>

#include "doctest.h"
#include "nanofusion/network.hpp"
#include "nanofusion/rng.hpp"

using namespace nf;

TEST_CASE("identity 1x1 conv passes the value through") {
    Network net({1, 1, 1}, {LayerSpec::conv2d(1, 1, 1, 1, 0)});
    net.layer(0).params[0][0] = 1.0f;  // weight
    net.layer(0).params[1][0] = 0.0f;  // bias
    Tensor x({1, 1, 1, 1});
    x[0] = 0.737f;
    Tensor y = net.forward(x, PassMode::Eval);
    CHECK(y[0] == 0.737f);
}

TEST_CASE("relu clamps negatives only") {
    Network net({1, 1, 2}, {LayerSpec::relu()});
    Tensor x({1, 1, 1, 2});
    x[0] = -1.0f;
    x[1] = 2.0f;
    Tensor y = net.forward(x, PassMode::Eval);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 2.0f);
}

TEST_CASE("relu output is elementwise non-negative") {
    Rng rng(3, 0);
    Network net({2, 4, 4}, {LayerSpec::relu()});
    Tensor x({3, 2, 4, 4});
    for (auto& v : x.data) v = rng.range(-5.0f, 5.0f);
    Tensor y = net.forward(x, PassMode::Eval);
    for (float v : y.data) CHECK(v >= 0.0f);
}

TEST_CASE("maxpool equals the max of its window") {
    Rng rng(4, 0);
    Network net({1, 6, 8}, {LayerSpec::maxpool(2, 2)});
    Tensor x({2, 1, 6, 8});
    for (auto& v : x.data) v = rng.range(-1.0f, 1.0f);
    Tensor y = net.forward(x, PassMode::Eval);
    for (int n = 0; n < 2; ++n)
        for (int oh = 0; oh < 3; ++oh)
            for (int ow = 0; ow < 4; ++ow) {
                float expect = -1e9f;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) expect = std::max(expect, x.at(n, 0, 2 * oh + a, 2 * ow + b));
                CHECK(y.at(n, 0, oh, ow) == expect);
            }
}

TEST_CASE("forward is deterministic") {
    Rng rng(5, 0);
    Network net({1, 12, 16}, {LayerSpec::conv2d(1, 4, 3, 2, 1), LayerSpec::batchnorm(4), LayerSpec::relu(),
                              LayerSpec::flatten(), LayerSpec::fully_connected(4 * 6 * 8, 3)});
    net.init_params(rng);
    Tensor x({2, 1, 12, 16});
    for (auto& v : x.data) v = rng.range(-1.0f, 1.0f);
    Tensor y1 = net.forward(x, PassMode::Eval);
    Tensor y2 = net.forward(x, PassMode::Eval);
    CHECK(y1.same_as(y2));
}

TEST_CASE("shape function matches realized output shapes on random configs") {
    Rng rng(6, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        int ic = 1 + rng.bounded(3);
        int h = 4 + rng.bounded(8), w = 4 + rng.bounded(8);
        LayerSpec spec;
        switch (rng.bounded(5)) {
            case 0: spec = LayerSpec::conv2d(ic, 1 + rng.bounded(4), 1 + 2 * rng.bounded(2), 1 + rng.bounded(2), rng.bounded(2)); break;
            case 1: spec = LayerSpec::batchnorm(ic); break;
            case 2: spec = LayerSpec::relu(); break;
            case 3: spec = LayerSpec::maxpool(2 + rng.bounded(2), 1 + rng.bounded(2)); break;
            default: spec = LayerSpec::flatten(); break;
        }
        Network net({ic, h, w}, {spec});
        int n = 1 + rng.bounded(3);
        Tensor x({n, ic, h, w});
        Rng init(trial, 1);
        net.init_params(init);
        for (auto& v : x.data) v = rng.range(-1.0f, 1.0f);
        Tensor y = net.forward(x, PassMode::Eval);
        Shape expect = layer_output_shape(spec, x.shape);
        CHECK(y.shape == expect);
    }
}

TEST_CASE("shape mismatch errors name the offending layer") {
    Network net({1, 8, 8}, {LayerSpec::conv2d(1, 2, 3, 1, 0)});
    Tensor x({1, 2, 8, 8});
    CHECK_THROWS_WITH_AS(net.forward(x, PassMode::Eval), doctest::Contains("network input"), ShapeError);
    CHECK_THROWS_WITH_AS(Network({3, 8, 8}, {LayerSpec::conv2d(1, 2, 3, 1, 0)}),
                         doctest::Contains("conv2d"), ShapeError);
}

TEST_CASE("backward requires a cached forward") {
    Network net({4}, {LayerSpec::fully_connected(4, 2)});
    PassContext<float> ctx;
    GradientSet<float> grads;
    Tensor dout({1, 2});
    CHECK_THROWS_AS((void)net.backward(dout, ctx, grads), Error);
}

TEST_CASE("zero upstream gradient yields an all-zero gradient set") {
    Rng rng(7, 0);
    Network net({2, 6, 6}, {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::batchnorm(3), LayerSpec::relu(),
                            LayerSpec::flatten(), LayerSpec::fully_connected(108, 2)});
    net.init_params(rng);
    Tensor x({2, 2, 6, 6});
    for (auto& v : x.data) v = rng.range(-1.0f, 1.0f);
    PassContext<float> ctx;
    Tensor y = net.forward(x, PassMode::Train, &ctx, &rng);
    GradientSet<float> grads = net.zero_grads();
    Tensor dout(y.shape);  // zeros
    (void)net.backward(dout, ctx, grads);
    for (const auto& layer_grads : grads)
        for (const auto& g : layer_grads)
            for (float v : g.data) CHECK(v == 0.0f);
}

TEST_CASE("fc L1 subgradient sign matches sign(pred - target) times input") {
    // single fully-connected layer trained with an L1-style upstream of +/-1
    Network net({3}, {LayerSpec::fully_connected(3, 1)});
    net.layer(0).params[0].data = {0.5f, -0.25f, 0.1f};
    net.layer(0).params[1].data = {0.0f};
    Tensor x({1, 3}, {1.0f, -2.0f, 3.0f});
    PassContext<float> ctx;
    Tensor pred = net.forward(x, PassMode::Train, &ctx);
    float target = -10.0f;  // pred > target, so dL/dpred = +1
    CHECK(pred[0] > target);
    Tensor dout({1, 1}, {1.0f});
    GradientSet<float> grads = net.zero_grads();
    (void)net.backward(dout, ctx, grads);
    for (int i = 0; i < 3; ++i) CHECK(grads[0][0][i] == x[i]);  // sign(+1) * input
}

TEST_CASE("sgd step definition and additivity") {
    Network net({1}, {LayerSpec::fully_connected(1, 1)});
    net.layer(0).params[0][0] = 1.0f;
    net.layer(0).params[1][0] = 0.0f;
    GradientSet<float> g = net.zero_grads();
    g[0][0][0] = 0.5f;

    net.sgd_step(g, 0.001f);
    CHECK(net.layer(0).params[0][0] == doctest::Approx(0.9995f));

    // zero gradient leaves parameters unchanged
    GradientSet<float> z = net.zero_grads();
    net.sgd_step(z, 0.1f);
    CHECK(net.layer(0).params[0][0] == doctest::Approx(0.9995f));

    // two successive steps with the same gradient
    net.layer(0).params[0][0] = 1.0f;
    net.sgd_step(g, 0.001f);
    net.sgd_step(g, 0.001f);
    CHECK(net.layer(0).params[0][0] == doctest::Approx(1.0f - 2 * 0.001f * 0.5f));

    CHECK_THROWS_AS(net.sgd_step(g, 0.0f), ConfigError);
}

TEST_CASE("mac_count on a padded 3x3 conv over 8x8") {
    std::vector<LayerSpec> specs = {LayerSpec::conv2d(1, 1, 3, 1, 1)};
    CHECK(mac_count(specs, {1, 8, 8}) == 9 * 64);
}

TEST_CASE("mac_count rejects an invalid chain") {
    std::vector<LayerSpec> specs = {LayerSpec::conv2d(1, 4, 3, 1, 0), LayerSpec::fully_connected(10, 4)};
    CHECK_THROWS_AS(mac_count(specs, {1, 8, 8}), ShapeError);
    CHECK_THROWS_AS(mac_count(specs, {1, 1, 1}), ShapeError);
}
