// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include <torch/types.h>

#include "icm/image.hpp"

namespace icm {

struct ConditioningConfig {
    int grid = 8;             // colormap blocks per side
    double canny_sigma = 1.4;
    double canny_low = 0.1;   // fraction of the max gradient magnitude
    double canny_high = 0.2;
};

/// Core structural information of an HQ image: a piecewise-constant colormap
/// over a grid x grid partition plus a binary Canny edge map, both at the
/// source resolution.
struct StructuralCondition {
    Image colormap;  // 3 channels
    Image edges;     // 1 channel, values in {0, 1}
    int height = 0;
    int width = 0;

    bool operator==(const StructuralCondition&) const = default;
};

/// Half-open [begin, end) extent of block `i` out of `blocks` along `length`.
/// Block sizes differ by at most one pixel.
struct BlockRange {
    int begin;
    int end;
};
BlockRange block_range(int length, int blocks, int i);

/// Channel-wise block means over a grid x grid partition, replicated back to
/// full resolution (area downsample followed by nearest upsample).
Image extract_colormap(const Image& hq, int grid = 8);

/// Canny edge map of the image's luminance: Gaussian smoothing (radius
/// ceil(3 sigma)), Sobel gradients, 4-direction non-maximum suppression, and
/// 8-connected hysteresis with thresholds given as fractions of the maximum
/// gradient magnitude.
Image canny_edges(const Image& hq, double sigma, double low, double high);

StructuralCondition build_condition(const Image& hq, const ConditioningConfig& config);

/// [1, 4, H, W]: colormap channels followed by the edge plane.
torch::Tensor condition_tensor(const StructuralCondition& cond,
                               torch::ScalarType dtype = torch::kFloat);
torch::Tensor condition_batch(const std::vector<const StructuralCondition*>& conds,
                              torch::ScalarType dtype = torch::kFloat);

}  // namespace icm
