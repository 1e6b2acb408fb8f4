#include "nanofusion/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "nanofusion/parallel.hpp"

namespace nf {

namespace {

// Dot product with independent accumulator chains. The summation order is
// fixed by this code, so results are reproducible run to run.
template <typename T>
T dot_k(const T* a, const T* b, int k) {
    T acc[8] = {};
    int i = 0;
    for (; i + 8 <= k; i += 8) {
#pragma GCC unroll 8
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < k; ++i) s += a[i] * b[i];
    return s;
}

#if defined(__AVX2__) && defined(__FMA__)
inline float hsum8(__m256 v) {
    __m128 q = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
    q = _mm_add_ps(q, _mm_movehl_ps(q, q));
    q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
    return _mm_cvtss_f32(q);
}

// Four 8-wide accumulator chains keep the FMA pipes busy; a single chain is
// latency-bound and roughly 4x slower here.
template <>
float dot_k<float>(const float* a, const float* b, int k) {
    __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
    __m256 acc2 = _mm256_setzero_ps(), acc3 = _mm256_setzero_ps();
    int i = 0;
    for (; i + 32 <= k; i += 32) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
        acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), acc2);
        acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), acc3);
    }
    for (; i + 8 <= k; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    __m256 s = _mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3));
    float out = hsum8(s);
    for (; i < k; ++i) out += a[i] * b[i];
    return out;
}
#endif

// Eight dot products against a shared right-hand side (one patch row, eight
// filter rows). Shares the patch loads across rows.
template <typename T>
void dot8_rows(const T* w, int64_t wstride, const T* p, int k, T* out) {
    for (int r = 0; r < 8; ++r) out[r] = dot_k(w + r * wstride, p, k);
}

#if defined(__AVX2__) && defined(__FMA__)
template <>
void dot8_rows<float>(const float* w, int64_t wstride, const float* p, int k, float* out) {
    __m256 acc[8] = {_mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(),
                     _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps()};
    int i = 0;
    for (; i + 8 <= k; i += 8) {
        __m256 pb = _mm256_loadu_ps(p + i);
#pragma GCC unroll 8
        for (int r = 0; r < 8; ++r)
            acc[r] = _mm256_fmadd_ps(_mm256_loadu_ps(w + r * wstride + i), pb, acc[r]);
    }
    for (int r = 0; r < 8; ++r) {
        float s = hsum8(acc[r]);
        for (int j = i; j < k; ++j) s += w[r * wstride + j] * p[j];
        out[r] = s;
    }
}
#endif

template <typename T>
void axpy_k(T* __restrict y, T a, const T* __restrict x, int k) {
    for (int i = 0; i < k; ++i) y[i] += a * x[i];
}

// Splits [0, n) into a few contiguous ranges for elementwise kernels.
template <typename F>
void parallel_ranges(int64_t n, F fn) {
    int64_t chunks = std::min<int64_t>(n, static_cast<int64_t>(thread_count()) * 4);
    if (chunks <= 1) {
        fn(static_cast<int64_t>(0), n);
        return;
    }
    int64_t per = (n + chunks - 1) / chunks;
    parallel_for(chunks, [&](int64_t c) {
        int64_t b = c * per, e = std::min(n, b + per);
        if (b < e) fn(b, e);
    });
}

struct ConvGeom {
    int n, ic, ih, iw, oc, oh, ow, kh, kw, stride, pad, K, ohw;
};

ConvGeom conv_geom(const LayerSpec& s, const Shape& in) {
    ConvGeom g;
    g.n = in[0];
    g.ic = in[1];
    g.ih = in[2];
    g.iw = in[3];
    g.oc = s.out_channels;
    g.kh = s.kernel_h;
    g.kw = s.kernel_w;
    g.stride = s.stride;
    g.pad = s.pad;
    g.oh = (g.ih + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.iw + 2 * g.pad - g.kw) / g.stride + 1;
    g.K = g.ic * g.kh * g.kw;
    g.ohw = g.oh * g.ow;
    return g;
}

// Patch rows for one sample: patches[oh*ow][ic*kh*kw], zero padded.
template <typename T>
void im2row(const ConvGeom& g, const T* in, T* patches) {
    for (int oh = 0; oh < g.oh; ++oh) {
        for (int ow = 0; ow < g.ow; ++ow) {
            T* row = patches + (static_cast<int64_t>(oh) * g.ow + ow) * g.K;
            int idx = 0;
            int ih0 = oh * g.stride - g.pad;
            int iw0 = ow * g.stride - g.pad;
            for (int c = 0; c < g.ic; ++c) {
                const T* plane = in + static_cast<int64_t>(c) * g.ih * g.iw;
                for (int kh = 0; kh < g.kh; ++kh) {
                    int ih = ih0 + kh;
                    if (ih < 0 || ih >= g.ih) {
                        for (int kw = 0; kw < g.kw; ++kw) row[idx++] = T(0);
                        continue;
                    }
                    const T* src = plane + static_cast<int64_t>(ih) * g.iw;
                    for (int kw = 0; kw < g.kw; ++kw) {
                        int iw = iw0 + kw;
                        row[idx++] = (iw < 0 || iw >= g.iw) ? T(0) : src[iw];
                    }
                }
            }
        }
    }
}

template <typename T>
void scatter_rows(const ConvGeom& g, const T* colgrad, T* din) {
    for (int oh = 0; oh < g.oh; ++oh) {
        for (int ow = 0; ow < g.ow; ++ow) {
            const T* row = colgrad + (static_cast<int64_t>(oh) * g.ow + ow) * g.K;
            int idx = 0;
            int ih0 = oh * g.stride - g.pad;
            int iw0 = ow * g.stride - g.pad;
            for (int c = 0; c < g.ic; ++c) {
                T* plane = din + static_cast<int64_t>(c) * g.ih * g.iw;
                for (int kh = 0; kh < g.kh; ++kh) {
                    int ih = ih0 + kh;
                    if (ih < 0 || ih >= g.ih) {
                        idx += g.kw;
                        continue;
                    }
                    T* dst = plane + static_cast<int64_t>(ih) * g.iw;
                    for (int kw = 0; kw < g.kw; ++kw) {
                        int iw = iw0 + kw;
                        if (iw >= 0 && iw < g.iw) dst[iw] += row[idx];
                        ++idx;
                    }
                }
            }
        }
    }
}

template <typename T>
void require_finite(const std::vector<TensorT<T>>& grads, const LayerSpec& spec, int idx) {
    for (const auto& g : grads)
        if (!g.all_finite())
            throw NumericError("non-finite gradient in layer #" + std::to_string(idx) + " (" +
                               spec.describe() + ")");
}

}  // namespace

template <typename T>
NetworkT<T>::NetworkT(Shape sample_input_shape, std::vector<LayerSpec> specs)
    : input_shape_(std::move(sample_input_shape)) {
    Shape s = input_shape_;
    s.insert(s.begin(), 1);
    layers_.reserve(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& spec = specs[i];
        Shape out = layer_output_shape(spec, s, static_cast<int>(i));
        Layer<T> layer;
        layer.spec = spec;
        switch (spec.kind) {
            case LayerKind::Conv2d:
                layer.params.push_back(TensorT<T>({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w}));
                layer.params.push_back(TensorT<T>({spec.out_channels}));
                break;
            case LayerKind::BatchNorm:
                layer.params.push_back(TensorT<T>::full({spec.in_channels}, T(1)));  // gamma
                layer.params.push_back(TensorT<T>({spec.in_channels}));              // beta
                layer.state.push_back(TensorT<T>({spec.in_channels}));               // running mean
                layer.state.push_back(TensorT<T>::full({spec.in_channels}, T(1)));   // running var
                break;
            case LayerKind::FullyConnected:
                layer.params.push_back(TensorT<T>({spec.out_channels, spec.in_channels}));
                layer.params.push_back(TensorT<T>({spec.out_channels}));
                break;
            default: break;
        }
        layers_.push_back(std::move(layer));
        s = out;
    }
    output_shape_ = Shape(s.begin() + 1, s.end());
}

template <typename T>
void NetworkT<T>::init_params(Rng& rng) {
    for (auto& layer : layers_) {
        switch (layer.spec.kind) {
            case LayerKind::Conv2d: {
                int fan_in = layer.spec.in_channels * layer.spec.kernel_h * layer.spec.kernel_w;
                T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
                for (auto& v : layer.params[0].data) v = static_cast<T>(rng.range(-bound, bound));
                std::fill(layer.params[1].data.begin(), layer.params[1].data.end(), T(0));
                break;
            }
            case LayerKind::FullyConnected: {
                T bound = static_cast<T>(std::sqrt(6.0 / layer.spec.in_channels));
                for (auto& v : layer.params[0].data) v = static_cast<T>(rng.range(-bound, bound));
                std::fill(layer.params[1].data.begin(), layer.params[1].data.end(), T(0));
                break;
            }
            case LayerKind::BatchNorm:
                std::fill(layer.params[0].data.begin(), layer.params[0].data.end(), T(1));
                std::fill(layer.params[1].data.begin(), layer.params[1].data.end(), T(0));
                std::fill(layer.state[0].data.begin(), layer.state[0].data.end(), T(0));
                std::fill(layer.state[1].data.begin(), layer.state[1].data.end(), T(1));
                break;
            default: break;
        }
    }
}

template <typename T>
TensorT<T> NetworkT<T>::forward(const TensorT<T>& x, PassMode mode, PassContext<T>* ctx, Rng* rng) const {
    Shape expect = input_shape_;
    expect.insert(expect.begin(), x.shape.empty() ? 0 : x.shape[0]);
    if (x.shape != expect)
        throw ShapeError("network input: expected " + shape_str(expect) + ", got " + shape_str(x.shape));

    if (ctx) {
        ctx->caches.assign(layers_.size(), LayerCache<T>());
        ctx->valid = true;
    }

    TensorT<T> cur = x;
    for (size_t li = 0; li < layers_.size(); ++li) {
        const Layer<T>& layer = layers_[li];
        const LayerSpec& spec = layer.spec;
        Shape out_shape = layer_output_shape(spec, cur.shape, static_cast<int>(li));
        LayerCache<T>* cache = ctx ? &ctx->caches[li] : nullptr;
        if (cache) cache->in_shape = cur.shape;

        switch (spec.kind) {
            case LayerKind::Conv2d: {
                ConvGeom g = conv_geom(spec, cur.shape);
                TensorT<T> out(out_shape);
                TensorT<T> patches({g.n, g.ohw, g.K});
                const T* w = layer.params[0].ptr();
                const T* b = layer.params[1].ptr();
                const TensorT<T>& in = cur;
                TensorT<T>* pat = &patches;
                T* outp = out.ptr();
                parallel_for(g.n, [&, pat](int64_t n) {
                    T* prow = pat->ptr() + n * g.ohw * g.K;
                    im2row(g, in.ptr() + n * g.ic * g.ih * g.iw, prow);
                    T* o = outp + n * static_cast<int64_t>(g.oc) * g.ohw;
                    int oc = 0;
                    for (; oc + 8 <= g.oc; oc += 8) {
                        const T* wrow = w + static_cast<int64_t>(oc) * g.K;
                        for (int p = 0; p < g.ohw; ++p) {
                            T vals[8];
                            dot8_rows(wrow, g.K, prow + static_cast<int64_t>(p) * g.K, g.K, vals);
                            for (int r = 0; r < 8; ++r)
                                o[static_cast<int64_t>(oc + r) * g.ohw + p] = b[oc + r] + vals[r];
                        }
                    }
                    for (; oc < g.oc; ++oc) {
                        const T* wrow = w + static_cast<int64_t>(oc) * g.K;
                        T bias = b[oc];
                        for (int p = 0; p < g.ohw; ++p)
                            o[static_cast<int64_t>(oc) * g.ohw + p] =
                                bias + dot_k(wrow, prow + static_cast<int64_t>(p) * g.K, g.K);
                    }
                });
                if (cache) cache->patches = std::move(patches);
                cur = std::move(out);
                break;
            }
            case LayerKind::BatchNorm: {
                int n = cur.shape[0], c = cur.shape[1];
                int64_t plane = static_cast<int64_t>(cur.shape[2]) * cur.shape[3];
                int64_t m = static_cast<int64_t>(n) * plane;
                TensorT<T> out(out_shape);
                const T* gamma = layer.params[0].ptr();
                const T* beta = layer.params[1].ptr();
                if (mode == PassMode::Train) {
                    std::vector<T> inv_std(c), means(c);
                    // running stats update is a const-cast write; training is
                    // single-writer per the concurrency contract
                    auto& self = const_cast<NetworkT<T>&>(*this);
                    T* rm = self.layers_[li].state[0].ptr();
                    T* rv = self.layers_[li].state[1].ptr();
                    const T momentum = T(0.1), eps = T(1e-5);
                    const TensorT<T>& in = cur;
                    T* outp = out.ptr();
                    parallel_for(c, [&](int64_t ch) {
                        double sum = 0.0, sumsq = 0.0;
                        for (int i = 0; i < n; ++i) {
                            const T* p = in.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                            for (int64_t j = 0; j < plane; ++j) {
                                double v = p[j];
                                sum += v;
                                sumsq += v * v;
                            }
                        }
                        double mean = sum / static_cast<double>(m);
                        double var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
                        T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                        inv_std[ch] = istd;
                        means[ch] = static_cast<T>(mean);
                        T g_ = gamma[ch] * istd, b_ = beta[ch] - gamma[ch] * istd * static_cast<T>(mean);
                        for (int i = 0; i < n; ++i) {
                            const T* __restrict p = in.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                            T* __restrict po = outp + (static_cast<int64_t>(i) * c + ch) * plane;
                            for (int64_t j = 0; j < plane; ++j) po[j] = g_ * p[j] + b_;
                        }
                        double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
                        rm[ch] = (T(1) - momentum) * rm[ch] + momentum * static_cast<T>(mean);
                        rv[ch] = (T(1) - momentum) * rv[ch] + momentum * static_cast<T>(unbiased);
                    });
                    if (cache) {
                        cache->bn_mean = std::move(means);
                        cache->bn_inv_std = std::move(inv_std);
                        cache->input = std::move(cur);
                        cur = std::move(out);
                        break;
                    }
                } else {
                    const T* rm = layer.state[0].ptr();
                    const T* rv = layer.state[1].ptr();
                    const T eps = T(1e-5);
                    const TensorT<T>& in = cur;
                    T* outp = out.ptr();
                    parallel_for(c, [&](int64_t ch) {
                        T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + static_cast<double>(eps)));
                        T g_ = gamma[ch] * istd, b_ = beta[ch] - gamma[ch] * istd * rm[ch];
                        for (int i = 0; i < n; ++i) {
                            const T* p = in.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                            T* po = outp + (static_cast<int64_t>(i) * c + ch) * plane;
                            for (int64_t j = 0; j < plane; ++j) po[j] = g_ * p[j] + b_;
                        }
                    });
                }
                cur = std::move(out);
                break;
            }
            case LayerKind::Relu: {
                TensorT<T> out(out_shape);
                const T* __restrict in = cur.ptr();
                T* __restrict o = out.ptr();
                parallel_ranges(cur.numel(), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
                });
                if (cache) cache->input = std::move(cur);
                cur = std::move(out);
                break;
            }
            case LayerKind::MaxPool: {
                int n = cur.shape[0], c = cur.shape[1], ih = cur.shape[2], iw = cur.shape[3];
                int oh = out_shape[2], ow = out_shape[3];
                TensorT<T> out(out_shape);
                std::vector<int32_t> argmax(cache ? out.numel() : 0);
                const TensorT<T>& in = cur;
                T* outp = out.ptr();
                int64_t planes = static_cast<int64_t>(n) * c;
                parallel_for(planes, [&](int64_t pidx) {
                    const T* p = in.ptr() + pidx * ih * iw;
                    T* o = outp + pidx * oh * ow;
                    for (int y = 0; y < oh; ++y) {
                        for (int x2 = 0; x2 < ow; ++x2) {
                            int ih0 = y * spec.stride, iw0 = x2 * spec.stride;
                            T best = p[ih0 * iw + iw0];
                            int32_t bi = ih0 * iw + iw0;
                            for (int ky = 0; ky < spec.kernel_h; ++ky)
                                for (int kx = 0; kx < spec.kernel_w; ++kx) {
                                    int32_t idx2 = (ih0 + ky) * iw + (iw0 + kx);
                                    if (p[idx2] > best) {
                                        best = p[idx2];
                                        bi = idx2;
                                    }
                                }
                            o[y * ow + x2] = best;
                            if (cache) argmax[pidx * oh * ow + y * ow + x2] = bi;
                        }
                    }
                });
                if (cache) cache->argmax = std::move(argmax);
                cur = std::move(out);
                break;
            }
            case LayerKind::FullyConnected: {
                int n = cur.shape[0], fin = spec.in_channels, fout = spec.out_channels;
                TensorT<T> out(out_shape);
                const T* w = layer.params[0].ptr();
                const T* b = layer.params[1].ptr();
                const TensorT<T>& in = cur;
                T* outp = out.ptr();
                parallel_for(n, [&](int64_t i) {
                    const T* row = in.ptr() + i * fin;
                    for (int o = 0; o < fout; ++o)
                        outp[i * fout + o] = b[o] + dot_k(w + static_cast<int64_t>(o) * fin, row, fin);
                });
                if (cache) cache->input = std::move(cur);
                cur = std::move(out);
                break;
            }
            case LayerKind::Flatten: {
                cur = cur.reshaped(out_shape);
                break;
            }
            case LayerKind::Dropout: {
                if (mode == PassMode::Eval) break;  // identity at inference
                if (!rng) throw Error("dropout in train mode requires an rng");
                T keep = T(1) - static_cast<T>(spec.rate);
                if (keep <= T(0)) throw ConfigError("dropout rate must be < 1");
                TensorT<T> mask(cur.shape);
                for (int64_t i = 0; i < mask.numel(); ++i)
                    mask[i] = rng->bernoulli(static_cast<double>(keep)) ? T(1) / keep : T(0);
                TensorT<T> out(out_shape);
                for (int64_t i = 0; i < cur.numel(); ++i) out[i] = cur[i] * mask[i];
                if (cache) cache->mask = std::move(mask);
                cur = std::move(out);
                break;
            }
            case LayerKind::Concat:
                throw ShapeError("concat cannot appear inside a sequential chain");
        }
    }
    return cur;
}

template <typename T>
std::optional<TensorT<T>> NetworkT<T>::backward(const TensorT<T>& dout, PassContext<T>& ctx,
                                                GradientSet<T>& grads, bool need_input_grad) const {
    if (!ctx.valid || ctx.caches.size() != layers_.size())
        throw Error("backward: no cached forward pass for this network");
    if (grads.size() != layers_.size()) grads = zero_grads();

    TensorT<T> cur = dout;
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const Layer<T>& layer = layers_[static_cast<size_t>(li)];
        const LayerSpec& spec = layer.spec;
        LayerCache<T>& cache = ctx.caches[static_cast<size_t>(li)];
        std::vector<TensorT<T>>& g = grads[static_cast<size_t>(li)];
        bool want_din = need_input_grad || li > 0;

        switch (spec.kind) {
            case LayerKind::Conv2d: {
                if (cache.patches.numel() == 0) throw Error("backward: conv cache missing");
                ConvGeom geom = conv_geom(spec, cache.in_shape);
                const T* w = layer.params[0].ptr();
                TensorT<T>& dw = g[0];
                TensorT<T>& db = g[1];
                const TensorT<T>& patches = cache.patches;
                const TensorT<T>& go = cur;
                // weight/bias grads, blocked over output channels: each block
                // makes one pass over the patches with its dW slice cache-hot.
                // Per (oc, k) element the accumulation order is always
                // (n, pixel), independent of the block split or thread count.
                {
                    int block = std::max(1, std::min(geom.oc, 24576 / (geom.K * static_cast<int>(sizeof(T)))));
                    int nblocks = (geom.oc + block - 1) / block;
                    int min_blocks = std::min(geom.oc, thread_count() * 2);
                    if (nblocks < min_blocks) {
                        nblocks = min_blocks;
                        block = (geom.oc + nblocks - 1) / nblocks;
                        nblocks = (geom.oc + block - 1) / block;
                    }
                    parallel_for(nblocks, [&](int64_t bi) {
                        int oc0 = static_cast<int>(bi) * block;
                        int oc1 = std::min(geom.oc, oc0 + block);
                        std::vector<double> bsum(static_cast<size_t>(oc1 - oc0), 0.0);
                        for (int n = 0; n < geom.n; ++n) {
                            const T* gp = go.ptr() + static_cast<int64_t>(n) * geom.oc * geom.ohw;
                            const T* pbase = patches.ptr() + static_cast<int64_t>(n) * geom.ohw * geom.K;
                            for (int p = 0; p < geom.ohw; ++p) {
                                const T* prow = pbase + static_cast<int64_t>(p) * geom.K;
                                for (int oc = oc0; oc < oc1; ++oc) {
                                    T gv = gp[static_cast<int64_t>(oc) * geom.ohw + p];
                                    if (gv != T(0)) axpy_k(dw.ptr() + static_cast<int64_t>(oc) * geom.K, gv, prow, geom.K);
                                    bsum[static_cast<size_t>(oc - oc0)] += gv;
                                }
                            }
                        }
                        for (int oc = oc0; oc < oc1; ++oc) db[oc] += static_cast<T>(bsum[static_cast<size_t>(oc - oc0)]);
                    });
                }
                if (want_din) {
                    TensorT<T> din(cache.in_shape);
                    T* dinp = din.ptr();
                    parallel_for(geom.n, [&](int64_t n) {
                        std::vector<T> colgrad(static_cast<size_t>(geom.ohw) * geom.K, T(0));
                        const T* gp = go.ptr() + n * geom.oc * geom.ohw;
                        for (int p = 0; p < geom.ohw; ++p) {
                            T* crow = colgrad.data() + static_cast<int64_t>(p) * geom.K;
                            for (int oc = 0; oc < geom.oc; ++oc) {
                                T gv = gp[static_cast<int64_t>(oc) * geom.ohw + p];
                                if (gv != T(0)) axpy_k(crow, gv, w + static_cast<int64_t>(oc) * geom.K, geom.K);
                            }
                        }
                        scatter_rows(geom, colgrad.data(), dinp + n * geom.ic * geom.ih * geom.iw);
                    });
                    require_finite(g, spec, li);
                    cur = std::move(din);
                } else {
                    require_finite(g, spec, li);
                }
                break;
            }
            case LayerKind::BatchNorm: {
                if (cache.bn_inv_std.empty() || cache.input.numel() == 0)
                    throw Error("backward: batchnorm cache missing");
                int n = cache.in_shape[0], c = cache.in_shape[1];
                int64_t plane = static_cast<int64_t>(cache.in_shape[2]) * cache.in_shape[3];
                int64_t m = static_cast<int64_t>(n) * plane;
                const T* gamma = layer.params[0].ptr();
                TensorT<T> din(cache.in_shape);
                TensorT<T>& dgamma = g[0];
                TensorT<T>& dbeta = g[1];
                const TensorT<T>& in = cache.input;
                const TensorT<T>& go = cur;
                T* dinp = din.ptr();
                parallel_for(c, [&](int64_t ch) {
                    T mu = cache.bn_mean[static_cast<size_t>(ch)];
                    T istd = cache.bn_inv_std[static_cast<size_t>(ch)];
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const T* pg = go.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                        const T* px = in.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                        for (int64_t j = 0; j < plane; ++j) {
                            sum_g += pg[j];
                            sum_gx += static_cast<double>(pg[j]) * ((px[j] - mu) * istd);
                        }
                    }
                    dbeta[ch] += static_cast<T>(sum_g);
                    dgamma[ch] += static_cast<T>(sum_gx);
                    T k1 = gamma[ch] * istd;
                    T mg = static_cast<T>(sum_g / static_cast<double>(m));
                    T mgx = static_cast<T>(sum_gx / static_cast<double>(m));
                    for (int i = 0; i < n; ++i) {
                        const T* __restrict pg = go.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                        const T* __restrict px = in.ptr() + (static_cast<int64_t>(i) * c + ch) * plane;
                        T* __restrict pd = dinp + (static_cast<int64_t>(i) * c + ch) * plane;
                        for (int64_t j = 0; j < plane; ++j)
                            pd[j] = k1 * (pg[j] - mg - ((px[j] - mu) * istd) * mgx);
                    }
                });
                require_finite(g, spec, li);
                cur = std::move(din);
                break;
            }
            case LayerKind::Relu: {
                if (cache.input.numel() == 0) throw Error("backward: relu cache missing");
                TensorT<T> din(cache.in_shape);
                const T* __restrict in = cache.input.ptr();
                const T* __restrict gp = cur.ptr();
                T* __restrict o = din.ptr();
                parallel_ranges(din.numel(), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i) o[i] = in[i] > T(0) ? gp[i] : T(0);
                });
                cur = std::move(din);
                break;
            }
            case LayerKind::MaxPool: {
                if (cache.argmax.empty()) throw Error("backward: maxpool cache missing");
                TensorT<T> din(cache.in_shape);
                int n = cache.in_shape[0], c = cache.in_shape[1];
                int64_t iplane = static_cast<int64_t>(cache.in_shape[2]) * cache.in_shape[3];
                int64_t oplane = cur.numel() / (static_cast<int64_t>(n) * c);
                T* dinp = din.ptr();
                const TensorT<T>& go = cur;
                parallel_for(static_cast<int64_t>(n) * c, [&](int64_t pidx) {
                    const T* pg = go.ptr() + pidx * oplane;
                    T* pd = dinp + pidx * iplane;
                    const int32_t* am = cache.argmax.data() + pidx * oplane;
                    for (int64_t j = 0; j < oplane; ++j) pd[am[j]] += pg[j];
                });
                cur = std::move(din);
                break;
            }
            case LayerKind::FullyConnected: {
                if (cache.input.numel() == 0) throw Error("backward: fc cache missing");
                int n = cache.in_shape[0], fin = spec.in_channels, fout = spec.out_channels;
                const T* w = layer.params[0].ptr();
                TensorT<T>& dw = g[0];
                TensorT<T>& db = g[1];
                const TensorT<T>& go = cur;
                const TensorT<T>& in = cache.input;
                parallel_for(fout, [&](int64_t o) {
                    T* dwrow = dw.ptr() + o * fin;
                    double bsum = 0.0;
                    for (int i = 0; i < n; ++i) {
                        T gv = go[static_cast<int64_t>(i) * fout + o];
                        if (gv != T(0)) axpy_k(dwrow, gv, in.ptr() + static_cast<int64_t>(i) * fin, fin);
                        bsum += gv;
                    }
                    db[o] += static_cast<T>(bsum);
                });
                require_finite(g, spec, li);
                if (want_din) {
                    TensorT<T> din(cache.in_shape);
                    T* dinp = din.ptr();
                    parallel_for(n, [&](int64_t i) {
                        T* row = dinp + i * fin;
                        for (int o = 0; o < fout; ++o) {
                            T gv = go[i * fout + o];
                            if (gv != T(0)) axpy_k(row, gv, w + static_cast<int64_t>(o) * fin, fin);
                        }
                    });
                    cur = std::move(din);
                }
                break;
            }
            case LayerKind::Flatten: {
                cur = cur.reshaped(cache.in_shape);
                break;
            }
            case LayerKind::Dropout: {
                if (cache.mask.numel() == 0) throw Error("backward: dropout cache missing");
                TensorT<T> din(cache.in_shape);
                for (int64_t i = 0; i < din.numel(); ++i) din[i] = cur[i] * cache.mask[i];
                cur = std::move(din);
                break;
            }
            case LayerKind::Concat:
                throw ShapeError("concat cannot appear inside a sequential chain");
        }
    }
    if (need_input_grad) return cur;
    return std::nullopt;
}

template <typename T>
GradientSet<T> NetworkT<T>::zero_grads() const {
    GradientSet<T> g(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i)
        for (const auto& p : layers_[i].params) g[i].push_back(TensorT<T>(p.shape));
    return g;
}

template <typename T>
void NetworkT<T>::sgd_step(const GradientSet<T>& grads, T lr) {
    if (lr <= T(0)) throw ConfigError("sgd: learning rate must be > 0");
    if (grads.size() != layers_.size()) throw ShapeError("sgd: gradient set does not match network");
    for (size_t i = 0; i < layers_.size(); ++i) {
        auto& params = layers_[i].params;
        if (grads[i].size() != params.size()) throw ShapeError("sgd: gradient count mismatch at layer " + std::to_string(i));
        for (size_t j = 0; j < params.size(); ++j) {
            if (grads[i][j].shape != params[j].shape)
                throw ShapeError("sgd: gradient shape mismatch at layer " + std::to_string(i));
            T* p = params[j].ptr();
            const T* gp = grads[i][j].ptr();
            for (int64_t k = 0; k < params[j].numel(); ++k) p[k] -= lr * gp[k];
        }
    }
}

template <typename T>
uint64_t NetworkT<T>::macs() const {
    return mac_count(specs(), input_shape_);
}

template <typename T>
std::vector<LayerSpec> NetworkT<T>::specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
}

template class NetworkT<float>;
template class NetworkT<double>;

}  // namespace nf
