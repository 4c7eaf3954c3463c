#include "lifmixer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace lifmixer {

Dataset load_cifar10(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    constexpr int64_t record = 1 + 3 * 32 * 32;
    const int64_t total = int64_t(bytes.size());
    if (total == 0 || total % record != 0) {
        const int64_t stray = total - (total / record) * record;
        throw std::runtime_error(path + ": length " + std::to_string(total) +
                                 " is not a multiple of " + std::to_string(record) +
                                 " bytes; partial record starts at byte offset " +
                                 std::to_string(total - stray));
    }
    const int64_t n = total / record;
    Dataset ds;
    ds.images = Tensor4<float>(n, 3, 32, 32);
    ds.labels.resize(size_t(n));
    ds.num_classes = 10;
    for (int64_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        const unsigned char label = rec[0];
        if (label > 9) {
            throw std::runtime_error(path + ": label byte " + std::to_string(int(label)) +
                                     " out of range at byte offset " + std::to_string(i * record));
        }
        ds.labels[size_t(i)] = label;
        for (int64_t j = 0; j < 3; ++j) {
            for (int64_t y = 0; y < 32; ++y) {
                for (int64_t x = 0; x < 32; ++x) {
                    ds.images(i, j, y, x) =
                        float(rec[1 + (j * 32 + y) * 32 + x]) / 255.0f;
                }
            }
        }
    }
    return ds;
}

Dataset synth_dataset(int64_t num_classes, int64_t n, uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
    if (n < 1) throw std::invalid_argument("synth_dataset: need at least 1 sample");
    constexpr int64_t hw = 32;
    constexpr double pi = 3.14159265358979323846;
    Dataset ds;
    ds.images = Tensor4<float>(n, 3, hw, hw);
    ds.labels.resize(size_t(n));
    ds.num_classes = num_classes;

    Rng root = Rng(seed).fork("synth");
    for (int64_t i = 0; i < n; ++i) {
        Rng r = root.fork(uint64_t(i));
        const int64_t label = int64_t(r.below(uint64_t(num_classes)));
        ds.labels[size_t(i)] = label;
        const double theta = pi * double(label) / double(num_classes);
        const double cx = std::cos(theta), sy = std::sin(theta);
        const double freq = 3.0;
        const double phase = r.uniform(-0.15, 0.15);
        const double amp = r.uniform(0.30, 0.40);

        // Two soft circular bumps per image, placed anywhere.
        struct Bump {
            double x, y, a;
        };
        Bump bumps[2];
        for (Bump& b : bumps) {
            b.x = r.uniform(0.0, double(hw));
            b.y = r.uniform(0.0, double(hw));
            b.a = r.uniform(-0.15, 0.15);
        }

        for (int64_t j = 0; j < 3; ++j) {
            const double chroma = 0.3 * double(j);
            for (int64_t y = 0; y < hw; ++y) {
                for (int64_t x = 0; x < hw; ++x) {
                    const double u = (double(x) * cx + double(y) * sy) / double(hw);
                    double v = 0.5 + amp * std::sin(2.0 * pi * freq * u + phase + chroma);
                    for (const Bump& b : bumps) {
                        const double dx = double(x) - b.x, dy = double(y) - b.y;
                        v += b.a * std::exp(-(dx * dx + dy * dy) / 18.0);
                    }
                    v += r.normal() * 0.05;
                    ds.images(i, j, y, x) = float(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return ds;
}

double centroid_baseline(const Dataset& ds, int64_t eval_from) {
    if (eval_from < 1 || eval_from >= ds.size()) {
        throw std::invalid_argument("centroid_baseline: split point " +
                                    std::to_string(eval_from) + " outside (0, " +
                                    std::to_string(ds.size()) + ")");
    }
    const int64_t d = ds.images.c() * ds.images.h() * ds.images.w();
    std::vector<std::vector<double>> centroid(size_t(ds.num_classes),
                                              std::vector<double>(size_t(d), 0.0));
    std::vector<int64_t> count(size_t(ds.num_classes), 0);
    for (int64_t i = 0; i < eval_from; ++i) {
        const size_t y = size_t(ds.labels[size_t(i)]);
        ++count[y];
        for (int64_t j = 0; j < d; ++j) centroid[y][size_t(j)] += double(ds.images[i * d + j]);
    }
    for (size_t y = 0; y < centroid.size(); ++y) {
        if (count[y] == 0) continue;
        for (double& v : centroid[y]) v /= double(count[y]);
    }
    int64_t hit = 0;
    for (int64_t i = eval_from; i < ds.size(); ++i) {
        double best = 0.0;
        int64_t best_y = -1;
        for (int64_t y = 0; y < ds.num_classes; ++y) {
            if (count[size_t(y)] == 0) continue;
            double dist = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                const double diff = double(ds.images[i * d + j]) - centroid[size_t(y)][size_t(j)];
                dist += diff * diff;
            }
            if (best_y < 0 || dist < best) {
                best = dist;
                best_y = y;
            }
        }
        if (best_y == ds.labels[size_t(i)]) ++hit;
    }
    return double(hit) / double(ds.size() - eval_from);
}

} // namespace lifmixer
