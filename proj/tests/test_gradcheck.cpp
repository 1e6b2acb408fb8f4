// Finite-difference gradient oracle. Analytic gradients from backward() are
// compared against central differences of a scalar objective J = sum(c * y),
// in double precision, for every layer kind.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "nanofusion/network.hpp"
#include "nanofusion/rng.hpp"

using namespace nf;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Values with pairwise gaps >= ~6e-3 and magnitude >= ~3e-3, so perturbing
// by kEps cannot cross a relu kink or flip a maxpool winner.
TensorD safe_input(Rng& rng, Shape shape) {
    TensorD t(shape);
    int64_t n = t.numel();
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.bounded(static_cast<uint32_t>(i + 1))]);
    for (int64_t i = 0; i < n; ++i) {
        double base = 0.005 + 0.01 * order[static_cast<size_t>(i)];
        double jitter = rng.range_double(-0.002, 0.002);
        double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        t[i] = sign * (base + jitter);
    }
    return t;
}

double objective(const NetworkT<double>& net, const TensorD& x, const TensorD& c, uint64_t drop_seed) {
    Rng rng(drop_seed, 77);
    TensorD y = net.forward(x, PassMode::Train, nullptr, &rng);
    double j = 0;
    for (int64_t i = 0; i < y.numel(); ++i) j += c[i] * y[i];
    return j;
}

struct CheckStats {
    double max_err = 0.0;
    int checked = 0;
};

// Compares analytic input/parameter gradients to central differences.
void check_layer(NetworkT<double>& net, TensorD x, uint64_t drop_seed, CheckStats& stats) {
    Rng crng(drop_seed ^ 0xabcdef, 5);
    Rng drop(drop_seed, 77);
    PassContext<double> ctx;
    TensorD y = net.forward(x, PassMode::Train, &ctx, &drop);
    TensorD c(y.shape);
    for (auto& v : c.data) v = crng.range_double(-1.0, 1.0);

    GradientSet<double> grads = net.zero_grads();
    auto din = net.backward(c, ctx, grads, true);
    REQUIRE(din.has_value());

    auto fd_pair = [&](double* slot) {
        double orig = *slot;
        *slot = orig + kEps;
        double jp = objective(net, x, c, drop_seed);
        *slot = orig - kEps;
        double jm = objective(net, x, c, drop_seed);
        *slot = orig;
        return (jp - jm) / (2 * kEps);
    };

    for (int64_t i = 0; i < x.numel(); ++i) {
        double fd = fd_pair(&x[i]);
        double err = rel_err((*din)[i], fd);
        stats.max_err = std::max(stats.max_err, err);
        ++stats.checked;
        if (err > kTol) {
            CAPTURE(i);
            CAPTURE((*din)[i]);
            CAPTURE(fd);
            REQUIRE(err <= kTol);
        }
    }
    for (size_t li = 0; li < net.layer_count(); ++li) {
        for (size_t pi = 0; pi < net.layer(li).params.size(); ++pi) {
            TensorT<double>& p = net.layer(li).params[pi];
            for (int64_t i = 0; i < p.numel(); ++i) {
                double fd = fd_pair(&p[i]);
                double err = rel_err(grads[li][pi][i], fd);
                stats.max_err = std::max(stats.max_err, err);
                ++stats.checked;
                if (err > kTol) {
                    CAPTURE(li);
                    CAPTURE(pi);
                    CAPTURE(i);
                    REQUIRE(err <= kTol);
                }
            }
        }
    }
}

void run_kind(LayerKind kind, int trials = 100) {
    CheckStats stats;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(1000 + trial, static_cast<uint64_t>(kind));
        int n = 1 + rng.bounded(2);
        int c = 1 + rng.bounded(3);
        int h = 4 + rng.bounded(4), w = 4 + rng.bounded(4);
        LayerSpec spec;
        Shape in_shape;
        switch (kind) {
            case LayerKind::Conv2d:
                spec = LayerSpec::conv2d(c, 1 + rng.bounded(3), rng.bernoulli(0.3) ? 5 : (rng.bernoulli(0.5) ? 3 : 1),
                                         1 + rng.bounded(2), rng.bounded(2));
                in_shape = {c, h + 2, w + 2};
                break;
            case LayerKind::BatchNorm:
                n = 2 + rng.bounded(2);
                spec = LayerSpec::batchnorm(c);
                in_shape = {c, h, w};
                break;
            case LayerKind::Relu:
                spec = LayerSpec::relu();
                in_shape = {c, h, w};
                break;
            case LayerKind::MaxPool:
                spec = LayerSpec::maxpool(2 + rng.bounded(2), 1 + rng.bounded(2));
                in_shape = {c, h, w};
                break;
            case LayerKind::FullyConnected:
                spec = LayerSpec::fully_connected(2 + rng.bounded(10), 1 + rng.bounded(4));
                in_shape = {spec.in_channels};
                break;
            case LayerKind::Flatten:
                spec = LayerSpec::flatten();
                in_shape = {c, h, w};
                break;
            case LayerKind::Dropout:
                spec = LayerSpec::dropout(0.5f);
                in_shape = {c, h, w};
                break;
            case LayerKind::Concat:
                return;  // exercised separately (two-input op)
        }
        NetworkT<double> net(in_shape, {spec});
        net.init_params(rng);
        Shape batched = in_shape;
        batched.insert(batched.begin(), n);
        TensorD x = safe_input(rng, batched);
        check_layer(net, std::move(x), 555 + static_cast<uint64_t>(trial), stats);
    }
    CHECK(stats.checked > 0);
    MESSAGE("kind ", layer_kind_name(kind), ": ", stats.checked, " grads, max rel err ", stats.max_err);
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") { run_kind(LayerKind::Conv2d); }
TEST_CASE("batchnorm gradients match finite differences") { run_kind(LayerKind::BatchNorm); }
TEST_CASE("relu gradients match finite differences") { run_kind(LayerKind::Relu); }
TEST_CASE("maxpool gradients match finite differences") { run_kind(LayerKind::MaxPool); }
TEST_CASE("fully_connected gradients match finite differences") { run_kind(LayerKind::FullyConnected); }
TEST_CASE("flatten gradients match finite differences") { run_kind(LayerKind::Flatten); }
TEST_CASE("dropout gradients match finite differences") { run_kind(LayerKind::Dropout); }

TEST_CASE("concat gradients match finite differences") {
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(4000 + trial, 9);
        bool channel_mode = rng.bernoulli(0.5);
        int n = 1 + rng.bounded(3);
        TensorD a, b;
        if (channel_mode) {
            int h = 2 + rng.bounded(3), w = 2 + rng.bounded(3);
            a = safe_input(rng, {n, 1 + static_cast<int>(rng.bounded(3)), h, w});
            b = safe_input(rng, {n, 1 + static_cast<int>(rng.bounded(3)), a.shape[2], a.shape[3]});
        } else {
            a = safe_input(rng, {n, 1 + static_cast<int>(rng.bounded(6))});
            b = safe_input(rng, {n, 1 + static_cast<int>(rng.bounded(6))});
        }
        std::vector<double> ga(static_cast<size_t>(n)), gb(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            ga[static_cast<size_t>(i)] = rng.bernoulli(0.3) ? 0.0 : 1.0;
            gb[static_cast<size_t>(i)] = rng.bernoulli(0.3) ? 0.0 : 1.0;
        }
        auto fwd = [&](const TensorD& ta, const TensorD& tb) {
            return channel_mode ? concat_channels(ta, tb, &ga, &gb) : concat_features(ta, tb, &ga, &gb);
        };
        TensorD y = fwd(a, b);
        TensorD c(y.shape);
        for (auto& v : c.data) v = rng.range_double(-1.0, 1.0);
        TensorD da, db;
        if (channel_mode)
            concat_channels_backward(c, a.shape, b.shape, da, db, &ga, &gb);
        else
            concat_features_backward(c, a.shape, b.shape, da, db, &ga, &gb);

        auto obj = [&]() {
            TensorD yy = fwd(a, b);
            double j = 0;
            for (int64_t i = 0; i < yy.numel(); ++i) j += c[i] * yy[i];
            return j;
        };
        for (TensorD* t : {&a, &b}) {
            TensorD& dt = (t == &a) ? da : db;
            for (int64_t i = 0; i < t->numel(); ++i) {
                double orig = (*t)[i];
                (*t)[i] = orig + kEps;
                double jp = obj();
                (*t)[i] = orig - kEps;
                double jm = obj();
                (*t)[i] = orig;
                double fd = (jp - jm) / (2 * kEps);
                REQUIRE(rel_err(dt[i], fd) <= kTol);
            }
        }
    }
}
