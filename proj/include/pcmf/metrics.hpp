#pragma once

#include <cstdint>
#include <vector>

#include "pcmf/mat.hpp"

namespace pcmf {

struct KMeansResult {
    std::vector<std::size_t> labels;  // 0-based cluster ids
    Mat centers;                      // kappa x d
    double objective = 0.0;           // within-cluster sum of squares
};

// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
// within-cluster sum of squares. Empty clusters are re-seeded at the point
// farthest from its assigned centroid. Deterministic given seed.
KMeansResult kmeans(const Mat& points, std::size_t kappa, std::uint64_t seed,
                    std::size_t restarts = 10);

// Hubert-Arabie adjusted Rand index: 1 when the partitions coincide up to
// relabeling, 0 in expectation under independent labelings.
double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// fraction of positions where the two indicator vectors agree
double selection_accuracy(const std::vector<std::uint8_t>& selected,
                          const std::vector<std::uint8_t>& truth);

}  // namespace pcmf
