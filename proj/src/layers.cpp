#include "nanofusion/layers.hpp"

#include <sstream>

namespace nf {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::FullyConnected: return "fully_connected";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Concat: return "concat";
        case LayerKind::Dropout: return "dropout";
    }
    return "?";
}

LayerSpec LayerSpec::conv2d(int ic, int oc, int k, int stride, int pad) {
    if (ic < 1 || oc < 1) throw ShapeError("conv2d channels must be >= 1");
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = ic;
    s.out_channels = oc;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    s.pad = pad;
    return s;
}
LayerSpec LayerSpec::batchnorm(int c) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.in_channels = s.out_channels = c;
    return s;
}
LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}
LayerSpec LayerSpec::maxpool(int k, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    return s;
}
LayerSpec LayerSpec::fully_connected(int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::FullyConnected;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}
LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}
LayerSpec LayerSpec::dropout(float rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

std::string LayerSpec::describe() const {
    std::ostringstream os;
    os << layer_kind_name(kind);
    switch (kind) {
        case LayerKind::Conv2d:
            os << " " << in_channels << "->" << out_channels << " k" << kernel_h << "x" << kernel_w
               << " s" << stride << " p" << pad;
            break;
        case LayerKind::MaxPool: os << " k" << kernel_h << " s" << stride; break;
        case LayerKind::FullyConnected: os << " " << in_channels << "->" << out_channels; break;
        case LayerKind::BatchNorm: os << " c" << in_channels; break;
        case LayerKind::Dropout: os << " p" << rate; break;
        default: break;
    }
    return os.str();
}

namespace {
[[noreturn]] void shape_fail(const LayerSpec& spec, const Shape& in, int idx, const std::string& why) {
    std::ostringstream os;
    os << "layer";
    if (idx >= 0) os << " #" << idx;
    os << " (" << spec.describe() << "): " << why << " for input " << shape_str(in);
    throw ShapeError(os.str());
}
}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in, int idx) {
    switch (spec.kind) {
        case LayerKind::Conv2d: {
            if (in.size() != 4) shape_fail(spec, in, idx, "expected a 4-d feature map");
            if (in[1] != spec.in_channels) shape_fail(spec, in, idx, "channel mismatch");
            int oh = (in[2] + 2 * spec.pad - spec.kernel_h) / spec.stride + 1;
            int ow = (in[3] + 2 * spec.pad - spec.kernel_w) / spec.stride + 1;
            if (in[2] + 2 * spec.pad < spec.kernel_h || in[3] + 2 * spec.pad < spec.kernel_w)
                shape_fail(spec, in, idx, "kernel larger than padded input");
            return {in[0], spec.out_channels, oh, ow};
        }
        case LayerKind::BatchNorm:
            if (in.size() != 4 || in[1] != spec.in_channels)
                shape_fail(spec, in, idx, "expected [N," + std::to_string(spec.in_channels) + ",H,W]");
            return in;
        case LayerKind::Relu: return in;
        case LayerKind::MaxPool: {
            if (in.size() != 4) shape_fail(spec, in, idx, "expected a 4-d feature map");
            if (in[2] < spec.kernel_h || in[3] < spec.kernel_w)
                shape_fail(spec, in, idx, "window larger than input");
            int oh = (in[2] - spec.kernel_h) / spec.stride + 1;
            int ow = (in[3] - spec.kernel_w) / spec.stride + 1;
            return {in[0], in[1], oh, ow};
        }
        case LayerKind::FullyConnected:
            if (in.size() != 2 || in[1] != spec.in_channels)
                shape_fail(spec, in, idx, "expected [N," + std::to_string(spec.in_channels) + "]");
            return {in[0], spec.out_channels};
        case LayerKind::Flatten: {
            if (in.size() < 2) shape_fail(spec, in, idx, "nothing to flatten");
            int f = 1;
            for (size_t i = 1; i < in.size(); ++i) f *= in[i];
            return {in[0], f};
        }
        case LayerKind::Dropout: return in;
        case LayerKind::Concat:
            shape_fail(spec, in, idx, "concat is not a chain layer");
    }
    shape_fail(spec, in, idx, "unknown layer kind");
}

Shape chain_output_shape(const std::vector<LayerSpec>& specs, const Shape& in) {
    Shape s = in;
    for (size_t i = 0; i < specs.size(); ++i) s = layer_output_shape(specs[i], s, static_cast<int>(i));
    return s;
}

uint64_t mac_count(const std::vector<LayerSpec>& specs, const Shape& sample_shape) {
    Shape s = sample_shape;
    if (s.empty()) throw ShapeError("mac_count: empty input shape");
    s.insert(s.begin(), 1);  // batch of one
    uint64_t total = 0;
    for (size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& spec = specs[i];
        Shape out = layer_output_shape(spec, s, static_cast<int>(i));
        if (spec.kind == LayerKind::Conv2d) {
            total += static_cast<uint64_t>(out[1]) * out[2] * out[3] * spec.in_channels * spec.kernel_h *
                     spec.kernel_w;
        } else if (spec.kind == LayerKind::FullyConnected) {
            total += static_cast<uint64_t>(spec.in_channels) * spec.out_channels;
        }
        s = out;
    }
    return total;
}

namespace {
template <typename T>
void check_concat_pair(const TensorT<T>& a, const TensorT<T>& b, size_t dims) {
    if (a.shape.size() != dims || b.shape.size() != dims)
        throw ShapeError("concat: expected " + std::to_string(dims) + "-d inputs");
    if (a.shape[0] != b.shape[0]) throw ShapeError("concat: batch sizes differ");
    for (size_t i = 2; i < dims; ++i)
        if (a.shape[i] != b.shape[i]) throw ShapeError("concat: spatial dims differ");
}
}  // namespace

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b,
                           const std::vector<T>* gate_a, const std::vector<T>* gate_b) {
    check_concat_pair(a, b, 4);
    int n = a.shape[0], ca = a.shape[1], cb = b.shape[1], h = a.shape[2], w = a.shape[3];
    TensorT<T> out({n, ca + cb, h, w});
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        T ga = gate_a ? (*gate_a)[i] : T(1);
        T gb = gate_b ? (*gate_b)[i] : T(1);
        const T* pa = a.ptr() + i * ca * plane;
        const T* pb = b.ptr() + i * cb * plane;
        T* po = out.ptr() + i * (ca + cb) * plane;
        for (int64_t j = 0; j < ca * plane; ++j) po[j] = ga * pa[j];
        for (int64_t j = 0; j < cb * plane; ++j) po[ca * plane + j] = gb * pb[j];
    }
    return out;
}

template <typename T>
void concat_channels_backward(const TensorT<T>& dout, const Shape& shape_a, const Shape& shape_b,
                              TensorT<T>& da, TensorT<T>& db,
                              const std::vector<T>* gate_a, const std::vector<T>* gate_b) {
    da = TensorT<T>(shape_a);
    db = TensorT<T>(shape_b);
    int n = shape_a[0], ca = shape_a[1], cb = shape_b[1], h = shape_a[2], w = shape_a[3];
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        T ga = gate_a ? (*gate_a)[i] : T(1);
        T gb = gate_b ? (*gate_b)[i] : T(1);
        const T* po = dout.ptr() + i * (ca + cb) * plane;
        T* pa = da.ptr() + i * ca * plane;
        T* pb = db.ptr() + i * cb * plane;
        for (int64_t j = 0; j < ca * plane; ++j) pa[j] = ga * po[j];
        for (int64_t j = 0; j < cb * plane; ++j) pb[j] = gb * po[ca * plane + j];
    }
}

template <typename T>
TensorT<T> concat_features(const TensorT<T>& a, const TensorT<T>& b,
                           const std::vector<T>* gate_a, const std::vector<T>* gate_b) {
    check_concat_pair(a, b, 2);
    int n = a.shape[0], fa = a.shape[1], fb = b.shape[1];
    TensorT<T> out({n, fa + fb});
    for (int i = 0; i < n; ++i) {
        T ga = gate_a ? (*gate_a)[i] : T(1);
        T gb = gate_b ? (*gate_b)[i] : T(1);
        for (int j = 0; j < fa; ++j) out.at(i, j) = ga * a.at(i, j);
        for (int j = 0; j < fb; ++j) out.at(i, fa + j) = gb * b.at(i, j);
    }
    return out;
}

template <typename T>
void concat_features_backward(const TensorT<T>& dout, const Shape& shape_a, const Shape& shape_b,
                              TensorT<T>& da, TensorT<T>& db,
                              const std::vector<T>* gate_a, const std::vector<T>* gate_b) {
    da = TensorT<T>(shape_a);
    db = TensorT<T>(shape_b);
    int n = shape_a[0], fa = shape_a[1], fb = shape_b[1];
    for (int i = 0; i < n; ++i) {
        T ga = gate_a ? (*gate_a)[i] : T(1);
        T gb = gate_b ? (*gate_b)[i] : T(1);
        for (int j = 0; j < fa; ++j) da.at(i, j) = ga * dout.at(i, j);
        for (int j = 0; j < fb; ++j) db.at(i, j) = gb * dout.at(i, fa + j);
    }
}

#define NF_INSTANTIATE_CONCAT(T)                                                                        \
    template TensorT<T> concat_channels<T>(const TensorT<T>&, const TensorT<T>&, const std::vector<T>*, \
                                           const std::vector<T>*);                                      \
    template void concat_channels_backward<T>(const TensorT<T>&, const Shape&, const Shape&,            \
                                              TensorT<T>&, TensorT<T>&, const std::vector<T>*,          \
                                              const std::vector<T>*);                                   \
    template TensorT<T> concat_features<T>(const TensorT<T>&, const TensorT<T>&, const std::vector<T>*, \
                                           const std::vector<T>*);                                      \
    template void concat_features_backward<T>(const TensorT<T>&, const Shape&, const Shape&,            \
                                              TensorT<T>&, TensorT<T>&, const std::vector<T>*,          \
                                              const std::vector<T>*);

NF_INSTANTIATE_CONCAT(float)
NF_INSTANTIATE_CONCAT(double)

}  // namespace nf
