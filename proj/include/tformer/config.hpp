#pragma once

// Network hyperparameters plus a line-oriented key=value text format for
// them (integer lists comma-separated). parse round-trips serialize exactly;
// unknown keys and malformed values are hard errors.

#include <sstream>
#include <string>
#include <vector>

#include "tformer/shape.hpp"

namespace tformer {

struct NetworkConfig {
    int64_t in_channels = 3;
    int64_t out_channels = 3;
    int64_t base_channels = 16;
    std::vector<int64_t> enc_blocks = {1, 1, 1, 1}; // shallowest stage first
    std::vector<int64_t> enc_heads = {1, 2, 4, 8};
    std::vector<int64_t> dec_blocks = {1, 1, 1}; // deepest stage first
    std::vector<int64_t> dec_heads = {8, 4, 4};
    int64_t refine_blocks = 1;
    int64_t refine_heads = 4;
    std::vector<int64_t> branch_depths = {1, 2}; // embedding branches per stage
    int64_t embed_kernel = 3;
    int64_t qkv_kernel = 3;
    std::vector<int64_t> msar_kernels = {3, 5, 7};
    double norm_radius = 0.5;
    bool gate_enabled = true;
    double offset_clamp = 3.0;

    int64_t scales() const { return static_cast<int64_t>(enc_blocks.size()); }
    // Working width of encoder stage i (0-based, full resolution first).
    int64_t enc_width(int64_t i) const { return base_channels << i; }
    // Working width of decoder stage j (0-based, deepest first). The final
    // decoder stage keeps the concatenated skip width instead of reducing.
    int64_t dec_width(int64_t j) const {
        const int64_t s = scales();
        return (j == s - 2) ? 2 * base_channels : enc_width(s - 2 - j);
    }

    void validate() const {
        check(scales() >= 2, "NetworkConfig: need at least two scales");
        check(enc_heads.size() == enc_blocks.size(), "NetworkConfig: enc_heads size");
        check(dec_blocks.size() == enc_blocks.size() - 1, "NetworkConfig: dec_blocks size");
        check(dec_heads.size() == dec_blocks.size(), "NetworkConfig: dec_heads size");
        check(!branch_depths.empty(), "NetworkConfig: branch_depths empty");
        check(in_channels >= 1 && out_channels >= 1 && base_channels >= 1,
              "NetworkConfig: channel counts must be positive");
        for (int64_t i = 0; i < scales(); ++i)
            check(enc_width(i) % enc_heads[static_cast<size_t>(i)] == 0,
                  "NetworkConfig: enc heads must divide stage width");
        for (size_t j = 0; j < dec_heads.size(); ++j)
            check(dec_width(static_cast<int64_t>(j)) % dec_heads[j] == 0,
                  "NetworkConfig: dec heads must divide stage width");
        check(2 * base_channels % refine_heads == 0, "NetworkConfig: refine heads must divide width");
    }
};

// Small three-scale variant (~8e4 parameters, head width 8 at every stage)
// sized for the toy CPU training task; the struct defaults above are the
// full four-scale network.
inline NetworkConfig tiny_network_config() {
    NetworkConfig c;
    c.base_channels = 8;
    c.enc_blocks = {1, 1, 1};
    c.enc_heads = {1, 2, 4};
    c.dec_blocks = {1, 1};
    c.dec_heads = {2, 2};
    c.refine_blocks = 1;
    c.refine_heads = 2;
    return c;
}

namespace detail {

inline std::string join_i64(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}
inline std::vector<int64_t> split_i64(const std::string& s, const std::string& key) {
    std::vector<int64_t> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        check(!item.empty(), "config: empty list element for " + key);
        size_t pos = 0;
        int64_t x = std::stoll(item, &pos);
        check(pos == item.size(), "config: bad integer '" + item + "' for " + key);
        v.push_back(x);
    }
    check(!v.empty(), "config: empty list for " + key);
    return v;
}
inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace detail

inline std::string config_to_text(const NetworkConfig& c) {
    std::ostringstream o;
    o << "in_channels=" << c.in_channels << "\n";
    o << "out_channels=" << c.out_channels << "\n";
    o << "base_channels=" << c.base_channels << "\n";
    o << "enc_blocks=" << detail::join_i64(c.enc_blocks) << "\n";
    o << "enc_heads=" << detail::join_i64(c.enc_heads) << "\n";
    o << "dec_blocks=" << detail::join_i64(c.dec_blocks) << "\n";
    o << "dec_heads=" << detail::join_i64(c.dec_heads) << "\n";
    o << "refine_blocks=" << c.refine_blocks << "\n";
    o << "refine_heads=" << c.refine_heads << "\n";
    o << "branch_depths=" << detail::join_i64(c.branch_depths) << "\n";
    o << "embed_kernel=" << c.embed_kernel << "\n";
    o << "qkv_kernel=" << c.qkv_kernel << "\n";
    o << "msar_kernels=" << detail::join_i64(c.msar_kernels) << "\n";
    o << "norm_radius=" << c.norm_radius << "\n";
    o << "gate_enabled=" << (c.gate_enabled ? 1 : 0) << "\n";
    o << "offset_clamp=" << c.offset_clamp << "\n";
    return o.str();
}

inline NetworkConfig config_from_text(const std::string& text) {
    NetworkConfig c;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        check(eq != std::string::npos, "config: expected key=value, got '" + line + "'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        auto as_i64 = [&] {
            size_t pos = 0;
            int64_t x = std::stoll(val, &pos);
            check(pos == val.size(), "config: bad integer '" + val + "' for " + key);
            return x;
        };
        auto as_f64 = [&] {
            size_t pos = 0;
            double x = std::stod(val, &pos);
            check(pos == val.size(), "config: bad number '" + val + "' for " + key);
            return x;
        };
        if (key == "in_channels") c.in_channels = as_i64();
        else if (key == "out_channels") c.out_channels = as_i64();
        else if (key == "base_channels") c.base_channels = as_i64();
        else if (key == "enc_blocks") c.enc_blocks = detail::split_i64(val, key);
        else if (key == "enc_heads") c.enc_heads = detail::split_i64(val, key);
        else if (key == "dec_blocks") c.dec_blocks = detail::split_i64(val, key);
        else if (key == "dec_heads") c.dec_heads = detail::split_i64(val, key);
        else if (key == "refine_blocks") c.refine_blocks = as_i64();
        else if (key == "refine_heads") c.refine_heads = as_i64();
        else if (key == "branch_depths") c.branch_depths = detail::split_i64(val, key);
        else if (key == "embed_kernel") c.embed_kernel = as_i64();
        else if (key == "qkv_kernel") c.qkv_kernel = as_i64();
        else if (key == "msar_kernels") c.msar_kernels = detail::split_i64(val, key);
        else if (key == "norm_radius") c.norm_radius = as_f64();
        else if (key == "gate_enabled") c.gate_enabled = as_i64() != 0;
        else if (key == "offset_clamp") c.offset_clamp = as_f64();
        else check(false, "config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

} // namespace tformer
