#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

namespace lifmixer {

// In-memory labeled image set; pixels stored raw in [0, 1], channel
// normalization happens at batch assembly.
struct Dataset {
    Tensor4<float> images; // (n, 3, h, w)
    std::vector<int64_t> labels;
    int64_t num_classes = 0;

    int64_t size() const { return images.n(); }
};

// Per-channel normalization constants; carried in the training config
// rather than buried in the pipeline.
struct ChannelNorm {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> stdev{0.25, 0.25, 0.25};
};

// Standard binary format: records of 3073 bytes, one label byte then
// 32x32x3 pixels, channel-planar, red plane first.
Dataset load_cifar10(const std::string& path);

// Class-conditional striped images: class k gets a stripe angle of
// k*pi/num_classes, so horizontal-vs-vertical structure carries the label.
// A couple of soft blobs and pixel noise keep samples distinct.
Dataset synth_dataset(int64_t num_classes, int64_t n, uint64_t seed);

// Nearest-centroid-on-raw-pixels reference classifier; returns accuracy of
// classifying `eval_from..end` against centroids fit on `0..eval_from`.
double centroid_baseline(const Dataset& ds, int64_t eval_from);

// Gathers rows `idx` into a batch, normalizes channels, optionally mirrors
// each sample horizontally by a per-sample coin from `flips`.
template <typename T>
Tensor4<T> assemble_batch(const Dataset& ds, const std::vector<int64_t>& idx,
                          const ChannelNorm& nrm, bool augment, const Rng& flips) {
    const int64_t c = ds.images.c(), h = ds.images.h(), w = ds.images.w();
    Tensor4<T> out(int64_t(idx.size()), c, h, w);
    for (size_t b = 0; b < idx.size(); ++b) {
        const int64_t row = idx[b];
        if (row < 0 || row >= ds.size()) {
            throw std::invalid_argument("assemble_batch: index " + std::to_string(row) +
                                        " outside dataset of " + std::to_string(ds.size()));
        }
        const bool mirror = augment && flips.uniform_at(uint64_t(b)) < 0.5;
        for (int64_t j = 0; j < c; ++j) {
            const double mu = nrm.mean[size_t(j % 3)];
            const double sd = nrm.stdev[size_t(j % 3)];
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    const int64_t sx = mirror ? w - 1 - x : x;
                    out(int64_t(b), j, y, x) =
                        T((double(ds.images(row, j, y, sx)) - mu) / sd);
                }
            }
        }
    }
    return out;
}

} // namespace lifmixer
