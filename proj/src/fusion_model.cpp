#include "nanofusion/fusion_model.hpp"

#include <cmath>

namespace nf {

const std::array<const char*, 7> kVariantTags = {
    "cam", "depth-mid", "depth-late", "mid-fusion", "late-fusion", "avg-mid", "avg-late"};

PoseEstimate average_ensemble(const PoseEstimate& a, const PoseEstimate& b) {
    if (!a.finite() || !b.finite()) throw NumericError("average_ensemble: non-finite estimate");
    PoseEstimate out;
    out.x = 0.5f * (a.x + b.x);
    out.y = 0.5f * (a.y + b.y);
    out.z = 0.5f * (a.z + b.z);
    double sy = 0.5 * (std::sin(a.theta) + std::sin(b.theta));
    double cy = 0.5 * (std::cos(a.theta) + std::cos(b.theta));
    out.theta = static_cast<float>(std::atan2(sy, cy));
    return out;
}

Tensor depth_to_block3_channel(const DepthMap& d) {
    Tensor t({1, 6, 10});
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c)
            t.data[static_cast<size_t>(r) * 10 + c + 1] = d.is_valid(r + 1, c) ? d.at(r + 1, c) : 0.0f;
    return t;
}

namespace {

// PULP-Frontnet-shaped vision stack: 5x5/2 stem + 2x2 pool, then three
// blocks of (3x3/2, 3x3/1) convs. block2_channels is 63 for the mid-fusion
// variant so the depth channel restores 64 at Block 3's input.
std::vector<LayerSpec> vision_trunk(int block2_channels) {
    return {
        LayerSpec::conv2d(1, 32, 5, 2, 0),  LayerSpec::batchnorm(32), LayerSpec::relu(),
        LayerSpec::maxpool(2, 2),
        LayerSpec::conv2d(32, 32, 3, 2, 1), LayerSpec::batchnorm(32), LayerSpec::relu(),
        LayerSpec::conv2d(32, 32, 3, 1, 1), LayerSpec::batchnorm(32), LayerSpec::relu(),
        LayerSpec::conv2d(32, block2_channels, 3, 2, 1), LayerSpec::batchnorm(block2_channels), LayerSpec::relu(),
        LayerSpec::conv2d(block2_channels, block2_channels, 3, 1, 1), LayerSpec::batchnorm(block2_channels),
        LayerSpec::relu(),
    };
}

// Block 3 plus the regression head: (3x3/2, 3x3/1) to 128 channels,
// flatten to 1920 features, dropout, linear to the 4 outputs.
std::vector<LayerSpec> block3_head(int in_channels) {
    return {
        LayerSpec::conv2d(in_channels, 128, 3, 2, 1), LayerSpec::batchnorm(128), LayerSpec::relu(),
        LayerSpec::conv2d(128, 128, 3, 1, 1),         LayerSpec::batchnorm(128), LayerSpec::relu(),
        LayerSpec::flatten(), LayerSpec::dropout(0.5f),
        LayerSpec::fully_connected(kVisionFeatures, kPoseOutputs),
    };
}

std::vector<LayerSpec> depth_mlp(int out_features) {
    return {LayerSpec::fully_connected(64, 64), LayerSpec::relu(), LayerSpec::fully_connected(64, out_features)};
}

}  // namespace

FusionModel build_variant(const std::string& tag) {
    FusionModel m;
    m.tag = tag;
    if (tag == "cam") {
        m.fusion = FusionKind::ImageOnly;
        m.image_branch = Network({1, kImageH, kImageW}, vision_trunk(64));
        m.head = Network({64, 6, 10}, block3_head(64));
    } else if (tag == "depth-mid") {
        m.fusion = FusionKind::DepthOnly;
        m.depth_as_channel = true;
        m.head = Network({1, 6, 10}, block3_head(1));
    } else if (tag == "depth-late") {
        m.fusion = FusionKind::DepthOnly;
        m.depth_branch = Network({64}, depth_mlp(kPoseOutputs));
    } else if (tag == "mid-fusion") {
        m.fusion = FusionKind::ChannelConcat;
        m.depth_as_channel = true;
        m.image_branch = Network({1, kImageH, kImageW}, vision_trunk(63));
        m.head = Network({64, 6, 10}, block3_head(64));
    } else if (tag == "late-fusion") {
        m.fusion = FusionKind::FeatureConcat;
        auto trunk = vision_trunk(64);
        auto b3 = block3_head(64);
        trunk.insert(trunk.end(), b3.begin(), b3.end() - 2);  // up to the 1920 flatten
        m.image_branch = Network({1, kImageH, kImageW}, trunk);
        m.depth_branch = Network({64}, depth_mlp(4));
        m.head = Network({kVisionFeatures + 4},
                         {LayerSpec::dropout(0.5f), LayerSpec::fully_connected(kVisionFeatures + 4, kPoseOutputs)});
    } else if (tag == "avg-mid" || tag == "avg-late") {
        m.fusion = FusionKind::Ensemble;
        m.sub_a = std::make_unique<FusionModel>(build_variant("cam"));
        m.sub_b = std::make_unique<FusionModel>(build_variant(tag == "avg-mid" ? "depth-mid" : "depth-late"));
    } else {
        throw ConfigError("unknown model variant '" + tag + "'");
    }
    return m;
}

void FusionModel::init_params(Rng& rng) {
    if (fusion == FusionKind::Ensemble) {
        sub_a->init_params(rng);
        sub_b->init_params(rng);
        return;
    }
    if (!image_branch.empty()) image_branch.init_params(rng);
    if (!depth_branch.empty()) depth_branch.init_params(rng);
    if (!head.empty()) head.init_params(rng);
}

uint64_t FusionModel::macs() const {
    if (fusion == FusionKind::Ensemble) return sub_a->macs() + sub_b->macs();
    uint64_t total = 0;
    if (!image_branch.empty()) total += image_branch.macs();
    if (!depth_branch.empty()) total += depth_branch.macs();
    if (!head.empty()) total += head.macs();
    return total;
}

Shape FusionModel::depth_input_shape() const {
    if (fusion == FusionKind::Ensemble) return sub_b->depth_input_shape();
    return depth_as_channel ? Shape{1, 6, 10} : Shape{64};
}

Tensor FusionModel::depth_input(const DepthMap* maps, int n) const {
    if (fusion == FusionKind::Ensemble) return sub_b->depth_input(maps, n);
    if (depth_as_channel) {
        Tensor t({n, 1, 6, 10});
        for (int i = 0; i < n; ++i) {
            Tensor one = depth_to_block3_channel(maps[i].normalized_copy());
            std::copy(one.data.begin(), one.data.end(), t.data.begin() + static_cast<int64_t>(i) * 60);
        }
        return t;
    }
    Tensor v({n, 64});
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) v.at(i, r * 8 + c) = maps[i].normalized(r, c);
    return v;
}

Tensor FusionModel::forward(const Tensor& image, const Tensor& depth, PassMode mode, FusionContext* ctx,
                            Rng* dropout_rng, const std::vector<MaskDecision>* masks) const {
    if (fusion == FusionKind::Ensemble) {
        if (ctx) throw Error("ensemble variants train their sub-models separately");
        Tensor oa = sub_a->forward(image, depth, mode);
        Tensor ob = sub_b->forward(image, depth, mode);
        Tensor out({oa.shape[0], kPoseOutputs});
        for (int i = 0; i < oa.shape[0]; ++i) {
            PoseEstimate a{oa.at(i, 0), oa.at(i, 1), oa.at(i, 2), wrap_angle(oa.at(i, 3))};
            PoseEstimate b{ob.at(i, 0), ob.at(i, 1), ob.at(i, 2), wrap_angle(ob.at(i, 3))};
            PoseEstimate avg = average_ensemble(a, b);
            out.at(i, 0) = avg.x;
            out.at(i, 1) = avg.y;
            out.at(i, 2) = avg.z;
            out.at(i, 3) = avg.theta;
        }
        return out;
    }

    int n = uses_image() ? image.shape[0] : depth.shape[0];
    std::vector<float> gate_image(static_cast<size_t>(n), 1.0f), gate_depth(static_cast<size_t>(n), 1.0f);
    if (masks) {
        if (!two_input_fusion()) throw Error("input dropout masks apply to fusion variants only");
        for (int i = 0; i < n; ++i) {
            if ((*masks)[static_cast<size_t>(i)] == MaskDecision::DropImage) gate_image[static_cast<size_t>(i)] = 0.0f;
            if ((*masks)[static_cast<size_t>(i)] == MaskDecision::DropDepth) gate_depth[static_cast<size_t>(i)] = 0.0f;
        }
    }

    Tensor image_feat, depth_feat;
    if (uses_image())
        image_feat = image_branch.forward(image, mode, ctx ? &ctx->image_ctx : nullptr, dropout_rng);
    if (uses_depth())
        depth_feat = depth_branch.empty()
                         ? depth
                         : depth_branch.forward(depth, mode, ctx ? &ctx->depth_ctx : nullptr, dropout_rng);

    Tensor fused;
    switch (fusion) {
        case FusionKind::ImageOnly: fused = std::move(image_feat); break;
        case FusionKind::DepthOnly: fused = std::move(depth_feat); break;
        case FusionKind::ChannelConcat:
            fused = concat_channels(image_feat, depth_feat, &gate_image, &gate_depth);
            break;
        case FusionKind::FeatureConcat:
            fused = concat_features(image_feat, depth_feat, &gate_image, &gate_depth);
            break;
        case FusionKind::Ensemble: break;  // handled above
    }
    if (ctx) {
        ctx->image_feat_shape = uses_image() ? image_feat.shape : Shape{};
        ctx->depth_feat_shape = uses_depth() ? depth_feat.shape : Shape{};
        ctx->gate_image = std::move(gate_image);
        ctx->gate_depth = std::move(gate_depth);
        ctx->fused = true;
    }
    Tensor out = head.empty() ? std::move(fused)
                              : head.forward(fused, mode, ctx ? &ctx->head_ctx : nullptr, dropout_rng);
    if (out.shape.size() != 2 || out.shape[1] != kPoseOutputs)
        throw ShapeError("variant '" + tag + "' produced " + shape_str(out.shape) + ", expected [N,4]");
    return out;
}

void FusionModel::backward(const Tensor& dout, FusionContext& ctx, FusionGrads& grads) const {
    if (fusion == FusionKind::Ensemble) throw Error("ensemble variants train their sub-models separately");
    if (!ctx.fused) throw Error("backward: no cached forward pass for this model");

    Tensor dfused;
    if (!head.empty()) {
        auto d = head.backward(dout, ctx.head_ctx, grads.head, fusion != FusionKind::DepthOnly || !depth_branch.empty());
        dfused = d ? std::move(*d) : Tensor();
    } else {
        dfused = dout;
    }

    Tensor dimage_feat, ddepth_feat;
    switch (fusion) {
        case FusionKind::ImageOnly: dimage_feat = std::move(dfused); break;
        case FusionKind::DepthOnly: ddepth_feat = std::move(dfused); break;
        case FusionKind::ChannelConcat:
            concat_channels_backward(dfused, ctx.image_feat_shape, ctx.depth_feat_shape, dimage_feat,
                                     ddepth_feat, &ctx.gate_image, &ctx.gate_depth);
            break;
        case FusionKind::FeatureConcat:
            concat_features_backward(dfused, ctx.image_feat_shape, ctx.depth_feat_shape, dimage_feat,
                                     ddepth_feat, &ctx.gate_image, &ctx.gate_depth);
            break;
        case FusionKind::Ensemble: break;
    }
    if (uses_image() && dimage_feat.numel() > 0)
        (void)image_branch.backward(dimage_feat, ctx.image_ctx, grads.image, false);
    if (uses_depth() && !depth_branch.empty() && ddepth_feat.numel() > 0)
        (void)depth_branch.backward(ddepth_feat, ctx.depth_ctx, grads.depth, false);
}

FusionGrads FusionModel::zero_grads() const {
    FusionGrads g;
    if (fusion == FusionKind::Ensemble) return g;
    g.image = image_branch.zero_grads();
    g.depth = depth_branch.zero_grads();
    g.head = head.zero_grads();
    return g;
}

void FusionModel::sgd_step(const FusionGrads& grads, float lr) {
    image_branch.sgd_step(grads.image, lr);
    depth_branch.sgd_step(grads.depth, lr);
    head.sgd_step(grads.head, lr);
}

PoseEstimate FusionModel::estimate(const Tensor& image_1, const DepthMap& depth) const {
    Tensor img = image_1;
    if (img.ndim() == 3) {
        Shape s = img.shape;
        s.insert(s.begin(), 1);
        img = img.reshaped(s);
    }
    Tensor dep = depth_input(&depth, 1);
    Tensor out = forward(img, dep, PassMode::Eval);
    return PoseEstimate{out[0], out[1], out[2], wrap_angle(out[3])};
}

}  // namespace nf
