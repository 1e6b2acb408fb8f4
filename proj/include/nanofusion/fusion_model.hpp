#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "nanofusion/network.hpp"

namespace nf {

// Regression target: subject position in the drone body frame (x forward,
// y left, z up, meters) and facing angle about the gravity axis (radians,
// 0 = facing the drone, wrapped to (-pi, pi]).
struct PoseEstimate {
    float x = 0, y = 0, z = 0, theta = 0;

    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(theta);
    }
};

// 8x8 multi-zone range readings in meters. Invalid zones (out of the
// [0.02, 4] m sensor range) are masked.
struct DepthMap {
    static constexpr int kGrid = 8;
    static constexpr float kMinRange = 0.02f;
    static constexpr float kMaxRange = 4.0f;

    std::array<float, 64> meters{};
    std::array<uint8_t, 64> valid{};

    float& at(int row, int col) { return meters[static_cast<size_t>(row) * kGrid + col]; }
    float at(int row, int col) const { return meters[static_cast<size_t>(row) * kGrid + col]; }
    bool is_valid(int row, int col) const { return valid[static_cast<size_t>(row) * kGrid + col] != 0; }

    // Input normalization: reading / 4 m in [0, 1]; invalid zones read 0.
    float normalized(int row, int col) const {
        return is_valid(row, col) ? at(row, col) / kMaxRange : 0.0f;
    }

    DepthMap normalized_copy() const {
        DepthMap out = *this;
        for (int i = 0; i < 64; ++i) out.meters[static_cast<size_t>(i)] = valid[static_cast<size_t>(i)] ? meters[static_cast<size_t>(i)] / kMaxRange : 0.0f;
        return out;
    }
};

// Elementwise mean of two estimates; theta averages circularly so the
// +/-pi seam cannot produce a bogus midpoint.
PoseEstimate average_ensemble(const PoseEstimate& a, const PoseEstimate& b);

// Crop 8 rows -> 6 (drop top and bottom) and zero-pad 8 columns -> 10
// (one each side), normalized; this is the depth channel entering Block 3.
Tensor depth_to_block3_channel(const DepthMap& d);

enum class FusionKind { ImageOnly, DepthOnly, ChannelConcat, FeatureConcat, Ensemble };

// Per-sample input-dropout decision made during training.
enum class MaskDecision : uint8_t { KeepBoth, DropImage, DropDepth };

struct FusionContext {
    PassContext<float> image_ctx, depth_ctx, head_ctx;
    Shape image_feat_shape, depth_feat_shape;
    std::vector<float> gate_image, gate_depth;
    bool fused = false;
};

struct FusionGrads {
    GradientSet<float> image, depth, head;
};

extern const std::array<const char*, 7> kVariantTags;  // the seven model tags

// One pose-estimation model variant: an image branch, a depth branch and a
// head joined at a fusion point, or an ensemble of two uni-modal sub-models
// whose outputs are averaged.
struct FusionModel {
    std::string tag;
    FusionKind fusion = FusionKind::ImageOnly;
    bool depth_as_channel = false;  // depth input is [1,6,10] instead of [64]
    Network image_branch;
    Network depth_branch;
    Network head;
    std::unique_ptr<FusionModel> sub_a, sub_b;

    void init_params(Rng& rng);
    uint64_t macs() const;
    bool uses_image() const { return fusion != FusionKind::DepthOnly; }
    bool uses_depth() const { return fusion != FusionKind::ImageOnly; }
    bool two_input_fusion() const {
        return fusion == FusionKind::ChannelConcat || fusion == FusionKind::FeatureConcat;
    }

    // image: [N,1,96,160] normalized to [0,1]; depth: [N,1,6,10] or [N,64]
    // per depth_as_channel. Returns [N,4]. masks gates the fusion inputs per
    // sample (training-time input dropout).
    Tensor forward(const Tensor& image, const Tensor& depth, PassMode mode,
                   FusionContext* ctx = nullptr, Rng* dropout_rng = nullptr,
                   const std::vector<MaskDecision>* masks = nullptr) const;

    void backward(const Tensor& dout, FusionContext& ctx, FusionGrads& grads) const;

    FusionGrads zero_grads() const;
    void sgd_step(const FusionGrads& grads, float lr);

    // Whole-dataset convenience path for a single sample.
    PoseEstimate estimate(const Tensor& image_1, const DepthMap& depth) const;

    // Depth input tensor for a batch of raw depth maps, shaped per variant.
    Tensor depth_input(const DepthMap* maps, int n) const;
    Shape depth_input_shape() const;
};

// Builds one of: cam, depth-mid, depth-late, mid-fusion, late-fusion,
// avg-mid, avg-late.
FusionModel build_variant(const std::string& tag);

constexpr int kImageH = 96;
constexpr int kImageW = 160;
constexpr int kPoseOutputs = 4;
constexpr int kVisionFeatures = 1920;

}  // namespace nf
