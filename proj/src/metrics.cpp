#include "pcmf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <unordered_map>

#include "pcmf/common.hpp"
#include "pcmf/rng.hpp"

namespace pcmf {
namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
        const double diff = a[t] - b[t];
        s += diff * diff;
    }
    return s;
}

// k-means++: first center uniform, then each with probability proportional to
// the squared distance to the nearest chosen center
void seed_centers(const Mat& pts, Mat& centers, Rng& rng) {
    const std::size_t n = pts.rows(), d = pts.cols(), kappa = centers.rows();
    std::uniform_int_distribution<std::size_t> uniform_point(0, n - 1);
    std::memcpy(centers.row(0), pts.row(uniform_point(rng)), d * sizeof(double));

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(pts.row(i), centers.row(0), d);
    for (std::size_t c = 1; c < kappa; ++c) {
        double total = 0.0;
        for (double w : d2) total += w;
        std::size_t pick;
        if (total > 0.0) {
            std::uniform_real_distribution<double> cut(0.0, total);
            const double r = cut(rng);
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r <= acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = uniform_point(rng);  // all points coincide with a center
        }
        std::memcpy(centers.row(c), pts.row(pick), d * sizeof(double));
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], sq_dist(pts.row(i), centers.row(c), d));
    }
}

// nearest center per point, ties to the lowest index
void assign_points(const Mat& pts, const Mat& centers, std::vector<std::size_t>& labels,
                   std::vector<double>& dist) {
    const std::size_t n = pts.rows(), d = pts.cols(), kappa = centers.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = pts.row(i);
        std::size_t best = 0;
        double best_d = sq_dist(p, centers.row(0), d);
        for (std::size_t c = 1; c < kappa; ++c) {
            const double dc = sq_dist(p, centers.row(c), d);
            if (dc < best_d) {
                best_d = dc;
                best = c;
            }
        }
        labels[i] = best;
        dist[i] = best_d;
    }
}

void update_centers(const Mat& pts, const std::vector<std::size_t>& labels,
                    std::vector<double>& dist, Mat& centers) {
    const std::size_t n = pts.rows(), d = pts.cols(), kappa = centers.rows();
    std::vector<std::size_t> count(kappa, 0);
    centers.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = pts.row(i);
        double* c = centers.row(labels[i]);
        for (std::size_t t = 0; t < d; ++t) c[t] += p[t];
        ++count[labels[i]];
    }
    for (std::size_t c = 0; c < kappa; ++c) {
        if (count[c] == 0) continue;
        double* row = centers.row(c);
        const double inv = 1.0 / static_cast<double>(count[c]);
        for (std::size_t t = 0; t < d; ++t) row[t] *= inv;
    }
    // empty cluster: re-seed at the point currently farthest from its centroid
    for (std::size_t c = 0; c < kappa; ++c) {
        if (count[c] != 0) continue;
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (dist[i] > dist[far]) far = i;
        std::memcpy(centers.row(c), pts.row(far), d * sizeof(double));
        dist[far] = 0.0;  // keep a second empty cluster from grabbing the same point
    }
}

}  // namespace

KMeansResult kmeans(const Mat& points, std::size_t kappa, std::uint64_t seed,
                    std::size_t restarts) {
    const std::size_t n = points.rows();
    require_input(kappa >= 1, "cluster count must be positive");
    require_input(kappa <= n, "cluster count exceeds the number of points");
    require_input(points.cols() >= 1, "points need at least one coordinate");
    require_input(restarts >= 1, "need at least one restart");

    constexpr std::size_t max_rounds = 200;
    KMeansResult best;
    best.objective = std::numeric_limits<double>::infinity();

    for (std::size_t r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, SeedStream::kmeans, r));
        Mat centers(kappa, points.cols());
        seed_centers(points, centers, rng);

        std::vector<std::size_t> labels(n), prev(n, kappa);  // kappa = "unassigned"
        std::vector<double> dist(n);
        assign_points(points, centers, labels, dist);
        for (std::size_t round = 0; round < max_rounds && labels != prev; ++round) {
            prev = labels;
            update_centers(points, labels, dist, centers);
            assign_points(points, centers, labels, dist);
        }

        double wcss = 0.0;
        for (double w : dist) wcss += w;
        if (wcss < best.objective) {
            best.objective = wcss;
            best.labels = labels;
            best.centers = std::move(centers);
        }
    }
    return best;
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    require_input(a.size() == b.size(), "partitions must have equal length");
    require_input(!a.empty(), "partitions must be non-empty");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;  // a single point has no pairs to disagree on

    auto compact = [](const std::vector<std::size_t>& v, std::vector<std::size_t>& out) {
        std::unordered_map<std::size_t, std::size_t> ids;
        out.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = ids.emplace(v[i], ids.size()).first->second;
        return ids.size();
    };
    std::vector<std::size_t> ca, cb;
    const std::size_t ka = compact(a, ca), kb = compact(b, cb);

    std::vector<double> table(ka * kb, 0.0), row(ka, 0.0), col(kb, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        table[ca[i] * kb + cb[i]] += 1.0;
        row[ca[i]] += 1.0;
        col[cb[i]] += 1.0;
    }
    auto comb2 = [](double x) { return 0.5 * x * (x - 1.0); };
    double sum_cells = 0.0, sum_row = 0.0, sum_col = 0.0;
    for (double t : table) sum_cells += comb2(t);
    for (double t : row) sum_row += comb2(t);
    for (double t : col) sum_col += comb2(t);

    const double expected = sum_row * sum_col / comb2(static_cast<double>(n));
    const double max_index = 0.5 * (sum_row + sum_col);
    if (max_index == expected) return 1.0;  // degenerate: identical trivial partitions
    return (sum_cells - expected) / (max_index - expected);
}

double selection_accuracy(const std::vector<std::uint8_t>& selected,
                          const std::vector<std::uint8_t>& truth) {
    require_input(selected.size() == truth.size(), "indicator vectors must have equal length");
    require_input(!selected.empty(), "indicator vectors must be non-empty");
    std::size_t agree = 0;
    for (std::size_t j = 0; j < selected.size(); ++j)
        agree += (selected[j] != 0) == (truth[j] != 0) ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(selected.size());
}

}  // namespace pcmf
