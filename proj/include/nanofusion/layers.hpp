#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nanofusion/tensor.hpp"

namespace nf {

enum class LayerKind { Conv2d, BatchNorm, Relu, MaxPool, FullyConnected, Flatten, Concat, Dropout };

const char* layer_kind_name(LayerKind k);

// Hyperparameters of one layer. Output shape is a pure function of the
// input shape and this struct (see layer_output_shape).
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int in_channels = 0;   // conv: input channels; fc: input features; bn: channels
    int out_channels = 0;  // conv: filters; fc: output features
    int kernel_h = 0;      // conv / maxpool window
    int kernel_w = 0;
    int stride = 1;
    int pad = 0;
    float rate = 0.0f;     // dropout probability

    static LayerSpec conv2d(int ic, int oc, int k, int stride, int pad);
    static LayerSpec batchnorm(int c);
    static LayerSpec relu();
    static LayerSpec maxpool(int k, int stride);
    static LayerSpec fully_connected(int in, int out);
    static LayerSpec flatten();
    static LayerSpec dropout(float rate);

    std::string describe() const;
};

// Shape of the layer output for a batched input shape [N, ...].
// Throws ShapeError naming the layer when the input does not fit.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in, int layer_index = -1);

// Shape propagation through a chain; returns the final shape.
Shape chain_output_shape(const std::vector<LayerSpec>& specs, const Shape& in);

// Exact multiply-accumulate count over conv and fully-connected layers for
// one sample pushed through the chain.
uint64_t mac_count(const std::vector<LayerSpec>& specs, const Shape& sample_shape);

// Channel-axis concatenation of two feature maps [N,C1,H,W] + [N,C2,H,W],
// with optional per-sample gate factors (used for input-modality masking;
// 1 keeps a sample's slice, 0 zeroes it).
template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b,
                           const std::vector<T>* gate_a = nullptr, const std::vector<T>* gate_b = nullptr);
template <typename T>
void concat_channels_backward(const TensorT<T>& dout, const Shape& shape_a, const Shape& shape_b,
                              TensorT<T>& da, TensorT<T>& db,
                              const std::vector<T>* gate_a = nullptr, const std::vector<T>* gate_b = nullptr);

// Feature-axis concatenation of [N,F1] + [N,F2].
template <typename T>
TensorT<T> concat_features(const TensorT<T>& a, const TensorT<T>& b,
                           const std::vector<T>* gate_a = nullptr, const std::vector<T>* gate_b = nullptr);
template <typename T>
void concat_features_backward(const TensorT<T>& dout, const Shape& shape_a, const Shape& shape_b,
                              TensorT<T>& da, TensorT<T>& db,
                              const std::vector<T>* gate_a = nullptr, const std::vector<T>* gate_b = nullptr);

}  // namespace nf
