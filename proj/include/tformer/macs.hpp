#pragma once

// Scalar-multiply instrumentation. Kernels report every multiply they execute
// (divisions count as one multiply; additions, exp/sqrt and comparisons are
// free) into the category passed by the caller. Counting only happens inside
// an active MacScope, so uninstrumented runs pay one predicted branch.

#include <array>
#include <atomic>
#include <cstdint>
#include <string>

namespace tformer {

enum class MacCat : int {
    qkv_pointwise = 0, // 1x1 Q/K/V generation
    qkv_depthwise,     // 3x3 depthwise context conv on Q/K/V
    head_projection,   // per-head Q/K/V projection matrices
    qk_normalize,      // token normalization (square + rescale)
    attn_core,         // key-value sums and query contractions
    attn_denominator,  // per-token denominator dots
    attn_divide,       // normalizing divides
    msar_conv,         // gate convolutions
    gate_apply,        // elementwise gate application
    out_projection,    // attention output projection
    norm,              // layer norms
    feedforward,       // feedforward convs and gating
    embed_offset,      // offset-predictor convs
    embed_deform,      // deformable kernel weight applications
    embed_bilinear,    // bilinear tap applications
    embed_pointwise,   // embedding pointwise mixing convs
    activation,        // hardswish/sigmoid internals
    skff,              // fusion module
    plumbing,          // shallow/final/resample convs
    other,
    kCount
};

inline const char* mac_cat_name(MacCat c) {
    static const char* names[] = {
        "qkv_pointwise", "qkv_depthwise", "head_projection", "qk_normalize",
        "attn_core",     "attn_denominator", "attn_divide",  "msar_conv",
        "gate_apply",    "out_projection", "norm",           "feedforward",
        "embed_offset",  "embed_deform",   "embed_bilinear", "embed_pointwise",
        "activation",    "skff",           "plumbing",       "other"};
    return names[static_cast<int>(c)];
}

struct MacCounters {
    std::array<std::atomic<uint64_t>, static_cast<size_t>(MacCat::kCount)> c{};

    void add(MacCat cat, uint64_t n) {
        c[static_cast<size_t>(cat)].fetch_add(n, std::memory_order_relaxed);
    }
    uint64_t get(MacCat cat) const {
        return c[static_cast<size_t>(cat)].load(std::memory_order_relaxed);
    }
    uint64_t total() const {
        uint64_t t = 0;
        for (const auto& a : c) t += a.load(std::memory_order_relaxed);
        return t;
    }
    template <class It>
    uint64_t sum(It first, It last) const {
        uint64_t t = 0;
        for (; first != last; ++first) t += get(*first);
        return t;
    }
    void reset() {
        for (auto& a : c) a.store(0, std::memory_order_relaxed);
    }
};

namespace detail {
inline MacCounters*& current_counters() {
    static MacCounters* p = nullptr;
    return p;
}
} // namespace detail

inline void count_macs(MacCat cat, uint64_t n) {
    if (MacCounters* p = detail::current_counters()) p->add(cat, n);
}

// RAII: route multiply counts into `target` for the scope's lifetime.
class MacScope {
  public:
    explicit MacScope(MacCounters& target) : prev_(detail::current_counters()) {
        detail::current_counters() = &target;
    }
    ~MacScope() { detail::current_counters() = prev_; }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

  private:
    MacCounters* prev_;
};

} // namespace tformer
