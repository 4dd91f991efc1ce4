#pragma once

// Wall-clock scaling measurement for the attention kernels. Each (path, N)
// cell is timed over several trials (with warmups and repeat batching for
// sub-threshold runtimes); the log-log slope of median time vs N over the
// largest sizes estimates the empirical complexity exponent.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "tformer/attention.hpp"
#include "tformer/rng.hpp"

namespace tformer {

struct BenchPoint {
    AttnPath path;
    int64_t n = 0;
    int64_t d = 0;
    int trial = 0;
    double nanos = 0;
    uint64_t multiplies = 0;
};

struct ScalingResult {
    std::vector<BenchPoint> points;
    std::vector<int64_t> ns;
    int64_t d = 0;

    double median_nanos(AttnPath path, int64_t n) const {
        std::vector<double> t;
        for (const auto& p : points)
            if (p.path == path && p.n == n) t.push_back(p.nanos);
        check(!t.empty(), "ScalingResult: no samples for requested cell");
        std::sort(t.begin(), t.end());
        const size_t m = t.size() / 2;
        return (t.size() % 2) ? t[m] : 0.5 * (t[m - 1] + t[m]);
    }

    // Least-squares slope of log(median time) vs log(N) over the largest
    // `top_count` sizes (all sizes if 0).
    double slope(AttnPath path, size_t top_count = 0) const {
        std::vector<int64_t> use(ns);
        std::sort(use.begin(), use.end());
        if (top_count > 0 && use.size() > top_count)
            use.erase(use.begin(), use.end() - static_cast<std::ptrdiff_t>(top_count));
        check(use.size() >= 2, "ScalingResult: need at least two sizes for a slope");
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (int64_t n : use) {
            const double x = std::log(static_cast<double>(n));
            const double y = std::log(median_nanos(path, n));
            sx += x, sy += y, sxx += x * x, sxy += x * y;
        }
        const double m = static_cast<double>(use.size());
        return (m * sxy - sx * sy) / (m * sxx - sx * sx);
    }

    std::string csv() const {
        std::ostringstream o;
        o << "path,n,d,trial,nanos,multiplies\n";
        for (const auto& p : points)
            o << attn_path_name(p.path) << "," << p.n << "," << p.d << "," << p.trial << ","
              << static_cast<uint64_t>(p.nanos) << "," << p.multiplies << "\n";
        return o.str();
    }
};

namespace detail {

// Columns drawn uniform then scaled to the given radius, matching what the
// attention paths receive after normalization.
template <class T>
std::vector<T> bench_tokens(int64_t d, int64_t n, T radius, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<T> m(static_cast<size_t>(d * n));
    for (auto& x : m) x = static_cast<T>(u(rng));
    if (radius > T(0)) {
        for (int64_t j = 0; j < n; ++j) {
            double s = 0;
            for (int64_t a = 0; a < d; ++a) {
                const double x = static_cast<double>(m[static_cast<size_t>(a * n + j)]);
                s += x * x;
            }
            const T scale = static_cast<T>(static_cast<double>(radius) / std::sqrt(s));
            for (int64_t a = 0; a < d; ++a) m[static_cast<size_t>(a * n + j)] *= scale;
        }
    }
    return m;
}

} // namespace detail

template <class T = double>
ScalingResult scaling_experiment(const std::vector<AttnPath>& paths, std::vector<int64_t> ns,
                                 int64_t d, int trials, int warmups, uint64_t seed,
                                 double min_trial_seconds = 0.01) {
    using clock = std::chrono::steady_clock;
    ScalingResult res;
    res.ns = ns;
    res.d = d;
    double sink = 0;
    for (AttnPath path : paths) {
        for (int64_t n : ns) {
            auto rng = make_rng(seed, (static_cast<uint64_t>(path) << 32) ^ static_cast<uint64_t>(n));
            auto qn = detail::bench_tokens<T>(d, n, T(0.5), rng);
            auto kn = detail::bench_tokens<T>(d, n, T(0.5), rng);
            auto v = detail::bench_tokens<T>(d, n, T(0), rng);
            std::vector<T> out(static_cast<size_t>(d * n));

            // The counted run also serves as first warmup and rep calibrator.
            MacCounters mc;
            uint64_t mults = 0;
            auto t0 = clock::now();
            {
                MacScope scope(mc);
                attention_stream(path, d, n, qn.data(), kn.data(), v.data(), out.data());
                mults = mc.total();
            }
            auto t1 = clock::now();
            const double once = std::chrono::duration<double>(t1 - t0).count();
            sink += static_cast<double>(out[0]);
            for (int wu = 1; wu < warmups; ++wu) {
                attention_stream(path, d, n, qn.data(), kn.data(), v.data(), out.data());
                sink += static_cast<double>(out[0]);
            }
            const int reps =
                std::max(1, static_cast<int>(std::ceil(min_trial_seconds / std::max(once, 1e-9))));

            for (int trial = 0; trial < trials; ++trial) {
                t0 = clock::now();
                for (int r = 0; r < reps; ++r) {
                    attention_stream(path, d, n, qn.data(), kn.data(), v.data(), out.data());
                    sink += static_cast<double>(out[0]);
                }
                t1 = clock::now();
                const double nanos =
                    std::chrono::duration<double, std::nano>(t1 - t0).count() / reps;
                res.points.push_back(BenchPoint{path, n, d, trial, nanos, mults});
            }
        }
    }
    static volatile double guard;
    guard = sink;
    (void)guard;
    return res;
}

} // namespace tformer
