// Command-line front end for the tformer library.
//
//   synth-data   render paired clean/hazy images from procedural scenes
//   train        toy restoration training (L1 loss, Adam, cosine lr)
//   dehaze       run a trained model on one image
//   metrics      PSNR/SSIM between two images
//   costs        analytic parameter/multiply report, checked against the
//                instrumented forward pass
//   equivalence  linear attention vs the quadratic/softmax oracles
//   gradcheck    finite-difference verification of every module's gradients
//   bench        runtime scaling of the attention kernels over token count
//
// All verification commands exit nonzero on failure so they can gate CI.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tformer/backbone.hpp"
#include "tformer/bench.hpp"
#include "tformer/config.hpp"
#include "tformer/cost.hpp"
#include "tformer/gradcheck.hpp"
#include "tformer/metrics.hpp"
#include "tformer/ppm.hpp"
#include "tformer/serialize.hpp"
#include "tformer/synth.hpp"
#include "tformer/threads.hpp"
#include "tformer/train.hpp"

namespace fs = std::filesystem;
using namespace tformer;

namespace {

// Options shared by every subcommand (not all are meaningful everywhere).
struct Common {
    uint64_t seed = 1234;
    std::string out_dir = ".";
    std::string precision = "f32";
    int threads = 0;
    std::string config_path;
};

void add_common(CLI::App* sub, Common& c, bool with_precision = true,
                bool with_config = true) {
    sub->add_option("--seed", c.seed, "RNG seed (default 1234)");
    sub->add_option("--out", c.out_dir, "output directory (default .)");
    if (with_precision)
        sub->add_option("--precision", c.precision, "working precision")
            ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--threads", c.threads, "intra-op threads (0 = library default)");
    if (with_config)
        sub->add_option("--config", c.config_path,
                        "network config file (key=value lines; see `costs`)");
}

void apply_threads(const Common& c) {
    if (c.threads > 0) set_num_threads(c.threads);
}

NetworkConfig resolve_config(const Common& c, bool tiny_default) {
    if (!c.config_path.empty()) {
        std::ifstream is(c.config_path);
        check(bool(is), "cannot open config file: " + c.config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        return config_from_text(ss.str());
    }
    return tiny_default ? tiny_network_config() : NetworkConfig{};
}

fs::path ensure_out(const Common& c) {
    fs::path dir(c.out_dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<int64_t> parse_i64_list(const std::string& s, const char* what) {
    auto v = detail::split_i64(s, what);
    return v;
}

// Normwise relative error: max|a-b| / max|b|.
template <class T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape_eq(a.shape(), b.shape(), "max_rel_err");
    double num = 0, den = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        num = std::max(num, std::abs(static_cast<double>(a.data()[i]) -
                                     static_cast<double>(b.data()[i])));
        den = std::max(den, std::abs(static_cast<double>(b.data()[i])));
    }
    return den > 0 ? num / den : num;
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
    int64_t count = 8;
    int64_t height = 64, width = 64;
    double transmission = -1; // >= 0: constant-transmission mode
    double airlight = 0.8;    // used only in constant-transmission mode
};

int run_synth_data(const Common& c, const SynthArgs& a) {
    check(a.count > 0 && a.height > 0 && a.width > 0, "synth-data: bad geometry");
    check(a.transmission <= 1.0, "synth-data: transmission must be <= 1");
    const auto dir = ensure_out(c);
    char name[32];
    for (int64_t i = 0; i < a.count; ++i) {
        auto pair = synth_pair<double>(a.height, a.width, c.seed, static_cast<uint64_t>(i));
        Tensor<double> hazy = pair.hazy;
        if (a.transmission >= 0) {
            HazeParams hp;
            hp.t_scalar = a.transmission;
            hp.airlight = {a.airlight, a.airlight, a.airlight};
            hazy = apply_haze(pair.clean, hp);
        }
        std::snprintf(name, sizeof(name), "clean_%04lld.ppm", static_cast<long long>(i));
        save_ppm((dir / name).string(), pair.clean);
        std::snprintf(name, sizeof(name), "hazy_%04lld.ppm", static_cast<long long>(i));
        save_ppm((dir / name).string(), hazy);
    }
    std::ofstream mf(dir / "manifest.txt");
    mf << "count=" << a.count << "\nheight=" << a.height << "\nwidth=" << a.width
       << "\nseed=" << c.seed << "\n";
    if (a.transmission >= 0)
        mf << "transmission=" << a.transmission << "\nairlight=" << a.airlight << "\n";
    else
        mf << "transmission=field\n";
    std::cout << "wrote " << a.count << " clean/hazy pairs (" << a.height << "x" << a.width
              << ") to " << dir.string() << "\n";
    return 0;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
    TrainConfig tc;
    bool no_augment = false;
};

template <class T>
int run_train(const Common& c, TrainArgs a) {
    const auto cfg = resolve_config(c, /*tiny_default=*/true);
    const auto dir = ensure_out(c);
    a.tc.seed = c.seed;
    a.tc.augment = !a.no_augment;
    a.tc.checkpoint = (dir / "model.tfw").string();

    auto model = init_model<T>(cfg, c.seed);
    std::cout << "parameters: " << model.param_count() << "  precision: " << c.precision
              << "  seed: " << c.seed << "\n";

    const auto t0 = std::chrono::steady_clock::now();
    auto res = train(model, a.tc, [](int64_t it, double loss, double lr) {
        std::cout << "iter " << std::setw(6) << it << "  loss " << std::fixed
                  << std::setprecision(5) << loss << "  lr " << std::scientific
                  << std::setprecision(2) << lr << std::defaultfloat << "\n"
                  << std::flush;
    });
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream lf(dir / "loss.csv");
    lf << "iter,loss,lr\n";
    for (size_t i = 0; i < res.losses.size(); ++i)
        lf << i << "," << res.losses[i] << ","
           << cosine_lr(static_cast<int64_t>(i), a.tc.iters, a.tc.lr_start, a.tc.lr_end) << "\n";
    std::ofstream cf(dir / "config.txt");
    cf << config_to_text(cfg);

    auto report = [](const char* tag, const EvalResult& e) {
        std::cout << tag << ": psnr " << std::fixed << std::setprecision(2) << e.psnr_input
                  << " -> " << e.psnr_output << " dB (gain " << e.psnr_gain() << ")  ssim "
                  << std::setprecision(4) << e.ssim_input << " -> " << e.ssim_output
                  << std::defaultfloat << "\n";
    };
    std::cout << "trained " << a.tc.iters << " iters in " << std::fixed << std::setprecision(1)
              << secs << " s" << std::defaultfloat << "\n";
    report("train", res.train_metrics);
    report("eval ", res.eval_metrics);
    std::cout << "checkpoint: " << a.tc.checkpoint << "\nloss curve: "
              << (dir / "loss.csv").string() << "\n";
    return 0;
}

// -------------------------------------------------------------------- dehaze

// Replicate-pad [3,H,W] on the bottom/right so both dims divide `div`.
template <class T>
Tensor<T> pad_to_multiple(const Tensor<T>& img, int64_t div, int64_t& H, int64_t& W) {
    H = img.shape()[1], W = img.shape()[2];
    const int64_t Hp = (H + div - 1) / div * div, Wp = (W + div - 1) / div * div;
    if (Hp == H && Wp == W) return img;
    std::vector<T> out(static_cast<size_t>(3 * Hp * Wp));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < Hp; ++y)
            for (int64_t x = 0; x < Wp; ++x)
                out[static_cast<size_t>((c * Hp + y) * Wp + x)] =
                    img.data()[(c * H + std::min(y, H - 1)) * W + std::min(x, W - 1)];
    return Tensor<T>(Shape{3, Hp, Wp}, std::move(out));
}

template <class T>
int run_dehaze(const Common& c, const std::string& weights, const std::string& input,
               std::string output) {
    const auto cfg = resolve_config(c, /*tiny_default=*/true);
    auto model = init_model<T>(cfg, 0);
    load_weights(weights, model.weights);

    auto img = load_ppm<T>(input);
    int64_t H = 0, W = 0;
    const int64_t div = int64_t(1) << (cfg.scales() - 1);
    auto padded = pad_to_multiple(img, div, H, W);
    auto out = clamp_unit(run_model(model, padded));
    if (out.shape()[1] != H || out.shape()[2] != W) {
        std::vector<T> crop(static_cast<size_t>(3 * H * W));
        const int64_t Wp = out.shape()[2];
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    crop[static_cast<size_t>((ch * H + y) * W + x)] =
                        out.data()[(ch * out.shape()[1] + y) * Wp + x];
        out = Tensor<T>(Shape{3, H, W}, std::move(crop));
    }
    if (output.empty()) output = (ensure_out(c) / "dehazed.ppm").string();
    save_ppm(output, out);
    std::cout << "wrote " << output << " (" << W << "x" << H << ")\n";
    return 0;
}

// ------------------------------------------------------------------- metrics

int run_metrics(const std::string& pa, const std::string& pb) {
    auto a = load_ppm<double>(pa);
    auto b = load_ppm<double>(pb);
    std::cout << "psnr " << std::fixed << std::setprecision(4) << psnr(a, b) << " dB\n"
              << "ssim " << ssim(a, b) << std::defaultfloat << "\n";
    return 0;
}

// --------------------------------------------------------------------- costs

struct CostArgs {
    int64_t height = 64, width = 64;
    bool no_verify = false;
};

int run_costs(const Common& c, const CostArgs& a) {
    const auto cfg = resolve_config(c, /*tiny_default=*/false);
    std::cout << "config:\n";
    std::istringstream cfg_lines(config_to_text(cfg));
    for (std::string line; std::getline(cfg_lines, line);) std::cout << "  " << line << "\n";

    const uint64_t analytic_params = model_param_count(cfg);
    auto model = init_model<float>(cfg, c.seed);
    const uint64_t actual_params = model.param_count();
    std::cout << "\nparameters: analytic " << analytic_params << ", instantiated "
              << actual_params << (analytic_params == actual_params ? " (match)" : " (MISMATCH)")
              << "\n";

    const auto analytic = model_cost(cfg, a.height, a.width);
    std::cout << "\nmultiplies for one " << a.height << "x" << a.width << " forward pass:\n";

    bool all_match = true;
    CostBreakdown measured{};
    if (!a.no_verify) {
        auto rng = make_rng(c.seed, 7);
        auto probe = synth_clean<float>(a.height, a.width, rng);
        MacCounters mc;
        {
            MacScope scope(mc);
            (void)run_model(model, probe);
        }
        for (size_t i = 0; i < measured.by_cat.size(); ++i)
            measured.by_cat[i] = mc.get(static_cast<MacCat>(i));
    }
    for (size_t i = 0; i < analytic.by_cat.size(); ++i) {
        const auto cat = static_cast<MacCat>(i);
        if (analytic.get(cat) == 0 && measured.get(cat) == 0) continue;
        std::cout << "  " << std::left << std::setw(18) << mac_cat_name(cat) << std::right
                  << std::setw(14) << analytic.get(cat);
        if (!a.no_verify) {
            const bool ok = measured.get(cat) == analytic.get(cat);
            all_match = all_match && ok;
            std::cout << "  measured " << std::setw(14) << measured.get(cat)
                      << (ok ? "  ok" : "  MISMATCH");
        }
        std::cout << "\n";
    }
    std::cout << "  " << std::left << std::setw(18) << "total" << std::right << std::setw(14)
              << analytic.total();
    if (!a.no_verify)
        std::cout << "  measured " << std::setw(14) << measured.total()
                  << (measured.total() == analytic.total() ? "  ok" : "  MISMATCH");
    std::cout << "\n";

    // Attention: linear vs quadratic reference cost at each stage width.
    std::cout << "\nattention multiply model (head width 8, N tokens = H*W):\n  "
              << std::left << std::setw(8) << "width" << std::setw(16) << "linear"
              << std::setw(16) << "quadratic" << "crossover N\n";
    std::vector<int64_t> widths;
    for (int64_t i = 0; i < cfg.scales(); ++i) widths.push_back(cfg.enc_width(i));
    for (int64_t D : widths) {
        const int64_t n = a.height * a.width;
        std::cout << "  " << std::setw(8) << D << std::setw(16) << tmsa_mult_count(n, D)
                  << std::setw(16) << msa_mult_count(n, D) << attention_crossover_tokens(D)
                  << "\n";
    }

    // Deformable embedding vs the dense baseline.
    std::cout << "\nseparable vs dense deformable conv (per layer):\n  " << std::left
              << std::setw(14) << "(M,N,K,HW)" << std::setw(14) << "sep mult" << std::setw(14)
              << "dense mult" << std::setw(12) << "sep params" << "dense params\n";
    const int64_t probes[][4] = {{32, 32, 3, 64 * 64}, {16, 24, 3, 32 * 32}, {32, 32, 5, 64 * 64}};
    for (const auto& p : probes) {
        std::ostringstream tag;
        tag << "(" << p[0] << "," << p[1] << "," << p[2] << "," << p[3] << ")";
        std::cout << "  " << std::setw(14) << tag.str() << std::setw(14)
                  << dsdcn_mult_count(p[0], p[1], p[2], 1, p[3]) << std::setw(14)
                  << dense_deform_mult_count(p[0], p[1], p[2], p[3]) << std::setw(12)
                  << dsdcn_param_count(p[0], p[1], p[2]) << dense_deform_param_count(p[0], p[1], p[2])
                  << "\n";
    }
    std::cout << std::right;

    if (!a.no_verify && (!all_match || analytic_params != actual_params)) {
        std::cerr << "cost report: analytic and measured values disagree\n";
        return 1;
    }
    return 0;
}

// --------------------------------------------------------------- equivalence

struct EquivArgs {
    std::string dims = "4,16,64";
    std::string sizes = "1,2,7,64,256,1024";
};

int run_equivalence(const Common& c, const EquivArgs& a) {
    const auto dims = parse_i64_list(a.dims, "dims");
    const auto sizes = parse_i64_list(a.sizes, "sizes");
    using T = double; // oracle comparisons are specified at 64-bit

    double worst_lin_q1 = 0, worst_stream = 0;
    for (int64_t d : dims) {
        for (int64_t n : sizes) {
            auto rng = make_rng(c.seed, static_cast<uint64_t>(d * 1000003 + n));
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            auto draw = [&](int64_t rows) {
                std::vector<T> v(static_cast<size_t>(rows * n));
                for (auto& x : v) x = u(rng);
                return Tensor<T>(Shape{rows, n}, std::move(v));
            };
            Var<T> q(draw(d)), k(draw(d)), v(draw(d));
            auto qn = normalize_tokens(q, T(0.5));
            auto kn = normalize_tokens(k, T(0.5));
            auto lin = taylor_attention_linear(qn, kn, v);
            auto qu1 = taylor_attention_quadratic(qn, kn, v, 1);
            worst_lin_q1 = std::max(worst_lin_q1, max_rel_err(lin.value, qu1.value));

            std::vector<T> stream(static_cast<size_t>(d * n));
            attention_stream(AttnPath::linear, d, n, qn.value.data(), kn.value.data(),
                             v.value.data(), stream.data());
            worst_stream = std::max(
                worst_stream, max_rel_err(Tensor<T>(Shape{d, n}, std::move(stream)), lin.value));
        }
    }
    std::cout << "linear vs quadratic(order 1), N in {" << a.sizes << "} x D in {" << a.dims
              << "}:\n  max relative error " << std::scientific << std::setprecision(3)
              << worst_lin_q1 << "  (tolerance 1e-10)\n";
    std::cout << "streaming linear vs tape linear:\n  max relative error " << worst_stream
              << "  (tolerance 1e-12)\n";

    // Softmax-approximation report at one representative cell.
    {
        const int64_t d = 16, n = 256;
        auto rng = make_rng(c.seed, 99);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        auto draw = [&]() {
            std::vector<T> v(static_cast<size_t>(d * n));
            for (auto& x : v) x = u(rng);
            return Tensor<T>(Shape{d, n}, std::move(v));
        };
        Var<T> q(draw()), k(draw()), v(draw());
        auto qn = normalize_tokens(q, T(0.5));
        auto kn = normalize_tokens(k, T(0.5));
        auto sm = softmax_attention(qn, kn, v);
        const double e1 =
            max_rel_err(taylor_attention_quadratic(qn, kn, v, 1).value, sm.value);
        const double e2 =
            max_rel_err(taylor_attention_quadratic(qn, kn, v, 2).value, sm.value);
        std::cout << "vs softmax at D=16, N=256 (informational):\n  order-1 " << e1
                  << "  order-2 " << e2 << std::defaultfloat << "\n";
    }

    const bool ok = worst_lin_q1 < 1e-10 && worst_stream < 1e-12;
    std::cout << (ok ? "equivalence: PASS\n" : "equivalence: FAIL\n");
    return ok ? 0 : 1;
}

// ----------------------------------------------------------------- gradcheck

int run_gradcheck(const Common& c) {
    using T = double; // finite-difference tolerances are specified at 64-bit
    const double tol = 1e-4;
    auto rng = make_rng(c.seed, 17);
    auto draw = [&](Shape s, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> uu(lo, hi);
        std::vector<T> vals(static_cast<size_t>(numel(s)));
        for (auto& x : vals) x = uu(rng);
        return Tensor<T>(s, std::move(vals));
    };

    struct Suite {
        std::string name;
        GradCheckResult res;
        double floor;
    };
    std::vector<Suite> suites;
    auto add_suite = [&](const std::string& name,
                         const std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>& fn,
                         std::vector<Tensor<T>> inputs, int64_t max_coords = 0,
                         double denom_floor = 1e-6) {
        suites.push_back({name, grad_check<T>(fn, std::move(inputs), T(1e-5), max_coords,
                                              denom_floor),
                          denom_floor});
    };

    add_suite("elementwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto a = v[0], b = v[1];
            auto t = add(mul(sigmoid(a), hardswish(b)), exp(mul_scalar(a, T(0.3))));
            t = sub(t, div(b, add_scalar(mul(a, a), T(2))));
            return mean_all(mul(t, leaky_relu(b, T(0.1))));
        },
        {draw({3, 5, 7}), draw({3, 5, 7})});

    add_suite("matmul_slice_norm",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto p = matmul(v[0], transpose2d(v[1]));                        // [4,4]
            auto q = matmul(transpose2d(slice0(p, 0, 2)), slice0(v[0], 1, 3)); // [4,6]
            return mean_all(mul(q, q));
        },
        {draw({4, 6}), draw({4, 6})});

    add_suite("layer_norm",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            return mean_all(mul(layer_norm_channels(v[0], v[1]), v[2]));
        },
        {draw({4, 3, 5}), draw({4}, 0.5, 1.5), draw({4, 3, 5})});

    add_suite("conv2d_general",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d(v[0], v[1], v[2], 1, 1, 1, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({3, 6, 5}), draw({4, 3, 3, 3}), draw({4})});
    add_suite("conv2d_stride2",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d(v[0], v[1], v[2], 2, 1, 1, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({2, 7, 6}), draw({3, 2, 3, 3}), draw({3})});
    add_suite("conv2d_depthwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d_nobias(v[0], v[1], 1, 2, 4, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({4, 6, 5}), draw({4, 1, 5, 5})});
    add_suite("conv2d_pointwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = pointwise(v[0], v[1], MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({5, 4, 4}), draw({3, 5, 1, 1})});

    add_suite("pixel_shuffle_cycle",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = pixel_shuffle(pixel_unshuffle(v[0], 2), 2);
            return mean_all(mul(y, v[0]));
        },
        {draw({3, 4, 6})});

    for (int order = 1; order <= 2; ++order)
        add_suite("attention_quadratic" + std::to_string(order),
            [order](Tape<T>&, const std::vector<Var<T>>& v) {
                auto qn = normalize_tokens(v[0], T(0.5));
                auto kn = normalize_tokens(v[1], T(0.5));
                auto y = taylor_attention_quadratic(qn, kn, v[2], order);
                return mean_all(mul(y, y));
            },
            {draw({5, 9}), draw({5, 9}), draw({5, 9})});
    add_suite("attention_linear",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto qn = normalize_tokens(v[0], T(0.5));
            auto kn = normalize_tokens(v[1], T(0.5));
            auto y = taylor_attention_linear(qn, kn, v[2]);
            return mean_all(mul(y, y));
        },
        {draw({5, 9}), draw({5, 9}), draw({5, 9})});
    add_suite("attention_softmax",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto qn = normalize_tokens(v[0], T(0.5));
            auto kn = normalize_tokens(v[1], T(0.5));
            auto y = softmax_attention(qn, kn, v[2]);
            return mean_all(mul(y, y));
        },
        {draw({5, 9}), draw({5, 9}), draw({5, 9})});

    {
        AttentionConfig acfg;
        acfg.channels = 8;
        acfg.heads = 2;
        auto wrng = make_rng(c.seed, 23);
        auto w = init_tmsa_weights<T>(acfg, wrng);
        auto f = init_ffn_weights<T>(acfg.channels, wrng);
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({8, 4, 4}));
        w.visit("w", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        f.visit("f", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("tmsa_ffn_block",
            [acfg](Tape<T>&, const std::vector<Var<T>>& v) {
                size_t i = 1;
                TmsaWeights<Var<T>> w;
                w.ln_w = v[i++];
                w.qkv_pw = v[i++];
                w.qkv_dw = v[i++];
                for (int64_t h = 0; h < acfg.heads; ++h) {
                    w.wq.push_back(v[i++]);
                    w.wk.push_back(v[i++]);
                    w.wv.push_back(v[i++]);
                }
                for (int64_t h = 0; h < acfg.heads; ++h) {
                    w.msar_w.push_back(v[i++]);
                    w.msar_b.push_back(v[i++]);
                }
                w.out_pw = v[i++];
                FfnWeights<Var<T>> f;
                f.ln_w = v[i++];
                f.expand = v[i++];
                f.dw = v[i++];
                f.project = v[i++];
                auto y = feedforward(tmsa_block(v[0], w, acfg), f);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 24);
    }

    add_suite("deform_depthwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = deform_depthwise(v[0], v[1], v[2], 3);
            return mean_all(mul(y, y));
        },
        {draw({2, 5, 5}), draw({18, 5, 5}, -1.3, 1.3), draw({2, 9})});
    {
        auto wrng = make_rng(c.seed, 29);
        auto w = init_dsdcn_weights<T>(3, 4, 3, wrng);
        // Bias the offset predictor away from zero: integer sample positions
        // are kinks of bilinear interpolation where one-sided derivatives
        // differ and central differences are meaningless.
        w.off_pw = draw({18, 3, 1, 1}, 0.1, 0.4);
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({3, 5, 5}));
        w.visit("w", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("dsdcn_embed",
            [](Tape<T>&, const std::vector<Var<T>>& v) {
                DsdcnWeights<Var<T>> w{v[1], v[2], v[3], v[4]};
                auto y = dsdcn_embed(v[0], w, 3);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 40);
    }

    {
        NetworkConfig cfg = tiny_network_config();
        cfg.enc_blocks = {1, 1};
        cfg.enc_heads = {1, 2};
        cfg.dec_blocks = {1};
        cfg.dec_heads = {2};
        auto model = init_model<T>(cfg, c.seed);
        model.weights.visit("m", [&](const std::string& name, Tensor<T>& t) {
            if (name.find("off_pw") != std::string::npos) t = draw(t.shape(), 0.05, 0.3);
        });
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({3, 8, 8}, 0.0, 1.0));
        model.weights.visit("m",
                            [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("model_forward",
            [cfg](Tape<T>&, const std::vector<Var<T>>& v) {
                // Rebind positionally: map() preserves visit() order.
                size_t i = 1;
                auto dummy = init_model<T>(cfg, 1);
                auto wv = dummy.weights.map([&](const Tensor<T>&) { return v[i++]; });
                auto y = model_forward(v[0], wv, cfg);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 2, 1e-3);
    }

    bool all_ok = true;
    for (const auto& s : suites) {
        const bool ok = s.res.ok(tol);
        all_ok = all_ok && ok;
        std::cout << std::left << std::setw(24) << s.name << std::right << " rel "
                  << std::scientific << std::setprecision(3) << s.res.max_rel_err << "  abs "
                  << s.res.max_abs_err << std::defaultfloat << "  coords " << std::setw(5)
                  << s.res.checked << (ok ? "  PASS" : "  FAIL") << "\n";
    }
    std::cout << (all_ok ? "gradcheck: PASS" : "gradcheck: FAIL") << " (tolerance " << tol
              << ")\n";
    return all_ok ? 0 : 1;
}

// --------------------------------------------------------------------- bench

struct BenchArgs {
    std::string sizes = "4096,8192,16384,32768,65536";
    std::string paths = "linear,quadratic_order1,quadratic_order2";
    int64_t dim = 8;
    int trials = 2;
    int warmups = 0;
};

std::vector<AttnPath> parse_paths(const std::string& s) {
    std::vector<AttnPath> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "linear") out.push_back(AttnPath::linear);
        else if (item == "quadratic_order1") out.push_back(AttnPath::quadratic_order1);
        else if (item == "quadratic_order2") out.push_back(AttnPath::quadratic_order2);
        else if (item == "softmax") out.push_back(AttnPath::softmax);
        else check(false, "bench: unknown path '" + item + "'");
    }
    check(!out.empty(), "bench: no paths given");
    return out;
}

template <class T>
int run_bench(const Common& c, const BenchArgs& a) {
    const auto sizes = parse_i64_list(a.sizes, "sizes");
    const auto paths = parse_paths(a.paths);
    std::cout << "timing attention paths at head width " << a.dim << ", " << a.trials
              << " trial(s) per size, precision " << c.precision << "\n";
    const auto res = scaling_experiment<T>(paths, sizes, a.dim, a.trials, a.warmups, c.seed);

    const auto dir = ensure_out(c);
    std::ofstream csv(dir / "scaling.csv");
    csv << res.csv();

    std::cout << std::left << std::setw(18) << "path";
    for (int64_t n : sizes) std::cout << std::setw(12) << n;
    std::cout << "slope(top3)\n";
    for (AttnPath p : paths) {
        std::cout << std::setw(18) << attn_path_name(p);
        for (int64_t n : sizes)
            std::cout << std::setw(12) << std::fixed << std::setprecision(3)
                      << res.median_nanos(p, n) / 1e6 << std::defaultfloat;
        if (sizes.size() >= 2)
            std::cout << std::fixed << std::setprecision(3) << res.slope(p, 3)
                      << std::defaultfloat;
        std::cout << "\n";
    }
    std::cout << "times in ms; csv written to " << (dir / "scaling.csv").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Taylor-expanded linear-attention restoration toolkit"};
    app.require_subcommand(1);

    Common common;
    SynthArgs synth_args;
    TrainArgs train_args;
    CostArgs cost_args;
    EquivArgs equiv_args;
    BenchArgs bench_args;
    std::string weights_path, input_path, output_path, metrics_a, metrics_b;

    auto* sd = app.add_subcommand("synth-data", "render paired clean/hazy images");
    add_common(sd, common, /*with_precision=*/false, /*with_config=*/false);
    sd->add_option("--count", synth_args.count, "number of pairs (default 8)");
    sd->add_option("--height", synth_args.height, "image height (default 64)");
    sd->add_option("--width", synth_args.width, "image width (default 64)");
    sd->add_option("--transmission", synth_args.transmission,
                   "constant transmission in (0,1] instead of a random field");
    sd->add_option("--airlight", synth_args.airlight,
                   "airlight for constant-transmission mode (default 0.8)");

    auto* tr = app.add_subcommand("train", "toy restoration training");
    add_common(tr, common);
    tr->add_option("--iters", train_args.tc.iters, "optimizer steps (default 2000)");
    tr->add_option("--batch", train_args.tc.batch, "samples per step (default 1)");
    tr->add_option("--crop", train_args.tc.crop, "square image side (default 64)");
    tr->add_option("--pairs", train_args.tc.train_pairs, "training pairs (default 200)");
    tr->add_option("--eval-pairs", train_args.tc.eval_pairs, "held-out pairs (default 20)");
    tr->add_option("--lr-start", train_args.tc.lr_start, "initial learning rate");
    tr->add_option("--lr-end", train_args.tc.lr_end, "final learning rate");
    tr->add_option("--log-every", train_args.tc.log_every, "loss print period");
    tr->add_flag("--no-augment", train_args.no_augment, "disable flip augmentation");

    auto* dh = app.add_subcommand("dehaze", "run a trained model on one image");
    add_common(dh, common);
    dh->add_option("--weights", weights_path, "checkpoint file")->required();
    dh->add_option("--input", input_path, "input PPM image")->required();
    dh->add_option("--output", output_path, "output PPM path (default OUT/dehazed.ppm)");

    auto* me = app.add_subcommand("metrics", "PSNR/SSIM between two images");
    me->add_option("--a", metrics_a, "first PPM image")->required();
    me->add_option("--b", metrics_b, "second PPM image")->required();

    auto* co = app.add_subcommand("costs", "analytic vs instrumented cost report");
    add_common(co, common, /*with_precision=*/false);
    co->add_option("--height", cost_args.height, "probe image height (default 64)");
    co->add_option("--width", cost_args.width, "probe image width (default 64)");
    co->add_flag("--no-verify", cost_args.no_verify, "skip the instrumented forward pass");

    auto* eq = app.add_subcommand("equivalence", "attention oracle comparisons (64-bit)");
    add_common(eq, common, /*with_precision=*/false, /*with_config=*/false);
    eq->add_option("--dims", equiv_args.dims, "token dims to sweep");
    eq->add_option("--sizes", equiv_args.sizes, "token counts to sweep");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites (64-bit)");
    add_common(gc, common, /*with_precision=*/false, /*with_config=*/false);

    std::string bench_precision = "f64";
    auto* be = app.add_subcommand("bench", "attention runtime scaling");
    add_common(be, common, /*with_precision=*/false, /*with_config=*/false);
    be->add_option("--precision", bench_precision, "timing precision (default f64)")
        ->check(CLI::IsMember({"f32", "f64"}));
    be->add_option("--sizes", bench_args.sizes, "token counts");
    be->add_option("--paths", bench_args.paths, "comma list of attention paths");
    be->add_option("--dim", bench_args.dim, "head width (default 8)");
    be->add_option("--trials", bench_args.trials, "timed trials per size (default 2)");
    be->add_option("--warmups", bench_args.warmups, "extra warmup runs (default 0)");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_threads(common);
        const bool f64 = common.precision == "f64";
        if (sd->parsed()) return run_synth_data(common, synth_args);
        if (tr->parsed())
            return f64 ? run_train<double>(common, train_args)
                       : run_train<float>(common, train_args);
        if (dh->parsed())
            return f64 ? run_dehaze<double>(common, weights_path, input_path, output_path)
                       : run_dehaze<float>(common, weights_path, input_path, output_path);
        if (me->parsed()) return run_metrics(metrics_a, metrics_b);
        if (co->parsed()) return run_costs(common, cost_args);
        if (eq->parsed()) return run_equivalence(common, equiv_args);
        if (gc->parsed()) return run_gradcheck(common);
        if (be->parsed()) {
            Common bc = common;
            bc.precision = bench_precision;
            return bench_precision == "f64" ? run_bench<double>(bc, bench_args)
                                            : run_bench<float>(bc, bench_args);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
