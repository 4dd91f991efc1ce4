#pragma once

// Toy restoration training harness: procedural hazy/clean pairs, L1 loss,
// Adam with cosine learning-rate decay, optional flip augmentation, and
// PSNR/SSIM evaluation against the degraded input as the baseline.

#include <functional>
#include <string>
#include <vector>

#include "tformer/backbone.hpp"
#include "tformer/metrics.hpp"
#include "tformer/optim.hpp"
#include "tformer/serialize.hpp"
#include "tformer/synth.hpp"

namespace tformer {

struct TrainConfig {
    int64_t iters = 2000;
    int64_t batch = 1; // samples accumulated per optimizer step
    int64_t crop = 64; // square image side for synthetic pairs
    int64_t train_pairs = 200;
    int64_t eval_pairs = 20;
    double lr_start = 2e-4;
    double lr_end = 1e-6;
    uint64_t seed = 1234; // data + sampling; the model carries its own init
    int64_t log_every = 100;
    bool augment = true;
    std::string checkpoint; // weight file written after training; empty = skip
};

struct EvalResult {
    double psnr_input = 0;  // degraded vs clean
    double psnr_output = 0; // restored vs clean
    double ssim_input = 0;
    double ssim_output = 0;
    double psnr_gain() const { return psnr_output - psnr_input; }
};

struct TrainResult {
    std::vector<double> losses; // mean batch L1 per iteration
    EvalResult train_metrics;
    EvalResult eval_metrics;
    uint64_t params = 0;
};

// Inference pass: weights wrapped as untracked values, no tape.
template <class T>
Tensor<T> run_model(const Model<T>& m, const Tensor<T>& image) {
    auto wv = m.weights.map([](const Tensor<T>& t) { return Var<T>(t); });
    return model_forward(Var<T>(image), wv, m.cfg).value;
}

template <class T>
Tensor<T> clamp_unit(const Tensor<T>& t) {
    std::vector<T> v(t.data(), t.data() + t.numel());
    for (auto& x : v) x = std::min(T(1), std::max(T(0), x));
    return Tensor<T>(t.shape(), std::move(v));
}

template <class T>
EvalResult evaluate(const Model<T>& m, const std::vector<SynthSample<T>>& set) {
    EvalResult e;
    for (const auto& s : set) {
        const auto out = clamp_unit(run_model(m, s.hazy));
        e.psnr_input += psnr(s.hazy, s.clean);
        e.psnr_output += psnr(out, s.clean);
        e.ssim_input += ssim(s.hazy, s.clean);
        e.ssim_output += ssim(out, s.clean);
    }
    const double n = static_cast<double>(set.size());
    e.psnr_input /= n;
    e.psnr_output /= n;
    e.ssim_input /= n;
    e.ssim_output /= n;
    return e;
}

template <class T>
std::vector<SynthSample<T>> make_dataset(int64_t crop, uint64_t seed, uint64_t first_index,
                                         int64_t count) {
    std::vector<SynthSample<T>> set;
    set.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
        set.push_back(synth_pair<T>(crop, crop, seed, first_index + static_cast<uint64_t>(i)));
    return set;
}

// log(iter, mean_loss, lr) is called every log_every iterations if provided.
template <class T>
TrainResult train(Model<T>& model, const TrainConfig& tc,
                  const std::function<void(int64_t, double, double)>& log = {}) {
    check(tc.iters > 0 && tc.batch > 0 && tc.train_pairs > 0, "train: bad config");
    auto train_set = make_dataset<T>(tc.crop, tc.seed, 0, tc.train_pairs);
    auto eval_set = make_dataset<T>(tc.crop, tc.seed, static_cast<uint64_t>(tc.train_pairs),
                                    tc.eval_pairs);

    std::vector<Tensor<T>*> params;
    model.weights.visit("m",
                        [&](const std::string&, Tensor<T>& t) { params.push_back(&t); });

    Adam<T> opt;
    auto sample_rng = make_rng(tc.seed, 1000003); // clear of data streams 1..pairs
    std::uniform_int_distribution<int64_t> pick(0, tc.train_pairs - 1);
    std::uniform_int_distribution<int> coin(0, 1);

    TrainResult res;
    for (auto* p : params) res.params += static_cast<uint64_t>(p->numel());

    std::vector<std::vector<double>> gacc(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        gacc[i].assign(static_cast<size_t>(params[i]->numel()), 0.0);

    for (int64_t it = 0; it < tc.iters; ++it) {
        for (auto& g : gacc) std::fill(g.begin(), g.end(), 0.0);
        double loss_sum = 0;
        for (int64_t b = 0; b < tc.batch; ++b) {
            const auto& s = train_set[static_cast<size_t>(pick(sample_rng))];
            Tensor<T> hin = s.hazy, cin = s.clean;
            if (tc.augment) {
                const bool fh = coin(sample_rng) != 0, fv = coin(sample_rng) != 0;
                if (fh || fv) {
                    hin = flip_image(hin, fh, fv);
                    cin = flip_image(cin, fh, fv);
                }
            }
            Tape<T> tape;
            auto wv = model.weights.map([&](const Tensor<T>& t) { return tape.param(t); });
            auto out = model_forward(tape.leaf(std::move(hin)), wv, model.cfg);
            auto loss = mean_all(abs(sub(out, Var<T>(std::move(cin)))));
            loss_sum += static_cast<double>(loss.value.data()[0]);
            tape.backward(loss);
            size_t idx = 0;
            wv.visit("m", [&](const std::string&, Var<T>& v) {
                const auto g = tape.grad(v);
                auto& acc = gacc[idx++];
                for (int64_t j = 0; j < g.numel(); ++j)
                    acc[static_cast<size_t>(j)] +=
                        static_cast<double>(g.data()[j]) / static_cast<double>(tc.batch);
            });
        }
        opt.step(params, gacc, cosine_lr(it, tc.iters, tc.lr_start, tc.lr_end));
        res.losses.push_back(loss_sum / static_cast<double>(tc.batch));
        if (log && (it % tc.log_every == 0 || it + 1 == tc.iters))
            log(it, res.losses.back(), cosine_lr(it, tc.iters, tc.lr_start, tc.lr_end));
    }

    res.train_metrics = evaluate(model, train_set);
    res.eval_metrics = evaluate(model, eval_set);
    if (!tc.checkpoint.empty()) save_weights(tc.checkpoint, model.weights);
    return res;
}

} // namespace tformer
