#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nanofusion/layers.hpp"
#include "nanofusion/rng.hpp"
#include "nanofusion/tensor.hpp"

namespace nf {

enum class PassMode { Train, Eval };

// One layer with its parameters.
//   conv:  params = {weight [oc,ic,kh,kw], bias [oc]}
//   bn:    params = {gamma [c], beta [c]},  state = {running_mean, running_var}
//   fc:    params = {weight [out,in], bias [out]}
template <typename T>
struct Layer {
    LayerSpec spec;
    std::vector<TensorT<T>> params;
    std::vector<TensorT<T>> state;
};

// Activation caches recorded by a forward pass; consumed by backward.
template <typename T>
struct LayerCache {
    Shape in_shape;
    TensorT<T> input;            // relu / fc / dropout / batchnorm input
    TensorT<T> patches;          // conv im2row: [N * OH*OW, K]
    std::vector<int32_t> argmax; // maxpool winners (flat input offsets)
    std::vector<T> bn_mean;      // per channel batch statistics
    std::vector<T> bn_inv_std;
    TensorT<T> mask;             // dropout multiplier
};

// Per-parameter gradients, keyed by layer; shapes mirror Layer::params.
template <typename T>
using GradientSet = std::vector<std::vector<TensorT<T>>>;

template <typename T>
struct PassContext {
    std::vector<LayerCache<T>> caches;
    bool valid = false;
};

// A sequential chain of layers over batched tensors. Parameters are
// immutable during forward; concurrent forward passes over a shared network
// are safe. Training (backward + sgd) is single-writer.
template <typename T>
class NetworkT {
public:
    NetworkT() = default;
    NetworkT(Shape sample_input_shape, std::vector<LayerSpec> specs);

    bool empty() const { return layers_.empty(); }
    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return output_shape_; }
    size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(size_t i) { return layers_[i]; }
    const Layer<T>& layer(size_t i) const { return layers_[i]; }

    void init_params(Rng& rng);

    // Forward over a batch [N, ...sample shape...]. In Train mode, ctx
    // records the caches backward needs; rng drives dropout draws.
    TensorT<T> forward(const TensorT<T>& x, PassMode mode, PassContext<T>* ctx = nullptr,
                       Rng* rng = nullptr) const;

    // Gradients for every trainable parameter given upstream dL/dout.
    // Requires a Train-mode forward with the same inputs first.
    // Returns dL/dinput when need_input_grad is set.
    std::optional<TensorT<T>> backward(const TensorT<T>& dout, PassContext<T>& ctx,
                                       GradientSet<T>& grads, bool need_input_grad = false) const;

    GradientSet<T> zero_grads() const;
    void sgd_step(const GradientSet<T>& grads, T lr);

    uint64_t macs() const;
    std::vector<LayerSpec> specs() const;

private:
    Shape input_shape_;   // per sample, no batch dim
    Shape output_shape_;  // per sample, no batch dim
    std::vector<Layer<T>> layers_;
};

using Network = NetworkT<float>;

}  // namespace nf
