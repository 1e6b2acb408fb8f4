#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nanofusion/fusion_model.hpp"

namespace nf {

constexpr int kImageBytes = kImageH * kImageW;  // 15360

// One training/evaluation sample: grayscale frame, multi-zone depth map and
// the ground-truth relative pose, plus the scene seed that produced it.
struct Sample {
    std::array<uint8_t, kImageBytes> image{};
    DepthMap depth;
    PoseEstimate label;
    uint32_t scene_seed = 0;
};

// Dataset file: "NFD1" magic, u32 sample count, then per sample the raw
// image bytes, 64 f32 depth readings in meters (NaN marks an invalid zone),
// 4 f32 label values and a u32 scene seed. Little-endian throughout.
void save_dataset(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& path);

// Normalized [0,1] image tensor for a batch of samples, shape [n,1,96,160].
Tensor images_to_tensor(const Sample* samples, int n);

}  // namespace nf
