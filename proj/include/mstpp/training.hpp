#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "cube.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "synth.hpp"

namespace mstpp {

struct TrainConfig {
    std::size_t patch_size = 128;
    std::size_t batch_size = 20;
    std::size_t patches_per_image = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr = 4e-4;
    double lr_floor = 1e-6;
    std::size_t epochs = 300;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;  // epochs between held-out reports
    bool augment = true;

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (patch_size == 0 || patches_per_image == 0) throw std::invalid_argument("TrainConfig: empty patch manifest");
        if (!(lr > lr_floor) || !(lr_floor >= 0.0)) throw std::invalid_argument("TrainConfig: need lr > lr_floor >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
    }

    void read(const KeyValueConfig& kv, const std::string& prefix = "train.") {
        kv.read(prefix + "patch_size", patch_size);
        kv.read(prefix + "batch_size", batch_size);
        kv.read(prefix + "patches_per_image", patches_per_image);
        kv.read(prefix + "beta1", beta1);
        kv.read(prefix + "beta2", beta2);
        kv.read(prefix + "adam_eps", adam_eps);
        kv.read(prefix + "lr", lr);
        kv.read(prefix + "lr_floor", lr_floor);
        kv.read(prefix + "epochs", epochs);
        kv.read(prefix + "seed", seed);
        kv.read(prefix + "eval_every", eval_every);
        kv.read(prefix + "augment", augment);
    }

    void write(KeyValueConfig& kv, const std::string& prefix = "train.") const {
        auto num = [](double v) {
            std::ostringstream os;
            os << std::setprecision(17) << v;
            return os.str();
        };
        kv.set(prefix + "patch_size", std::to_string(patch_size));
        kv.set(prefix + "batch_size", std::to_string(batch_size));
        kv.set(prefix + "patches_per_image", std::to_string(patches_per_image));
        kv.set(prefix + "beta1", num(beta1));
        kv.set(prefix + "beta2", num(beta2));
        kv.set(prefix + "adam_eps", num(adam_eps));
        kv.set(prefix + "lr", num(lr));
        kv.set(prefix + "lr_floor", num(lr_floor));
        kv.set(prefix + "epochs", std::to_string(epochs));
        kv.set(prefix + "seed", std::to_string(seed));
        kv.set(prefix + "eval_every", std::to_string(eval_every));
        kv.set(prefix + "augment", augment ? "true" : "false");
    }
};

/// Differentiable MRAE: mean |pred - gt| / max(gt, eps), gt held constant.
inline Tensor mrae_loss(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape())
        throw DimensionError("mrae_loss: shapes differ " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    std::vector<double> inv(gt.numel());
    const auto gs = gt.data();
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / std::max(gs[i], kMraeEps);
    const Tensor weights = Tensor::from(gt.shape(), std::move(inv));
    return mean(mul(abs(sub(pred, gt.detach())), weights));
}

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update over named parameters. Parameters without
/// an accumulated gradient are treated as having a zero gradient.
inline void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, double lr,
                      const AdamOptions& opt = {}) {
    if (state.m.empty()) {
        for (auto& [_, t] : params) {
            state.m.emplace_back(t.numel(), 0.0);
            state.v.emplace_back(t.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::logic_error("adam_step: optimizer state does not match parameters");
    for (auto& [name, t] : params)
        for (double g : t.grad())
            if (!std::isfinite(g)) throw DivergenceError("adam_step: non-finite gradient in parameter '" + name + "'");

    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p].second;
        auto& m = state.m[p];
        auto& v = state.v[p];
        const auto g = t.grad();
        auto w = t.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

/// lr_floor + (lr0 - lr_floor) (1 + cos(pi step / total)) / 2
inline double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_floor) {
    if (step > total) throw std::invalid_argument("cosine_lr: step exceeds total");
    if (total == 0) return lr0;
    const double t = static_cast<double>(step) / static_cast<double>(total);
    return lr_floor + 0.5 * (lr0 - lr_floor) * (1.0 + std::cos(std::numbers::pi * t));
}

struct Dataset {
    std::vector<SamplePair> train;
    std::vector<SamplePair> valid;  // held-out pairs for periodic reports
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    MetricReport batch;  // metrics of the training batch prediction
};

struct EvalRecord {
    std::size_t epoch = 0;
    MetricReport report;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    double best_mrae = std::numeric_limits<double>::infinity();
    std::vector<double> loss_history() const {
        std::vector<double> h;
        for (const auto& s : steps) h.push_back(s.loss);
        return h;
    }
};

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoints + loss.csv when set
    std::function<void(const std::string&)> log;   // human-readable progress
};

/// Reconstructs a spectral cube from an RGB cube without recording a graph.
inline SpectralCube reconstruct(const MstPlusPlusParams& model, const SpectralCube& rgb) {
    NoGradGuard no_grad;
    const Tensor y = mstpp_forward(cube_to_tensor(rgb), model);
    const std::size_t bands = model.config.out_channels;
    auto wl = bands == 31 ? SpectralCube::default_wavelengths() : std::vector<float>(bands, 0.0f);
    return tensor_to_cube(y, 0, std::move(wl));
}

inline void round_params_to_f32(MstPlusPlusParams& model) {
    model.for_each_param("", [](const std::string&, Tensor& t) {
        for (auto& v : t.data()) v = round_to_f32(v);
    });
}

inline MetricReport evaluate_model(const MstPlusPlusParams& model, const std::vector<SamplePair>& pairs) {
    std::vector<float> gt, pred;
    for (const auto& p : pairs) {
        const auto out = reconstruct(model, p.rgb);
        gt.insert(gt.end(), p.hsi.values.begin(), p.hsi.values.end());
        pred.insert(pred.end(), out.values.begin(), out.values.end());
    }
    return {mrae<float>(gt, pred), rmse<float>(gt, pred), psnr<float>(gt, pred), gt.size()};
}

// Minibatch Adam on MRAE with a step-level cosine schedule. An epoch is one
// pass over the patch manifest (patches_per_image crops per training pair,
// drawn once), visited in a fresh shuffled order with an optional random
// dihedral augmentation per sample.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, MstPlusPlusParams& model,
                         const TrainOptions& options = {}) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: dataset is empty");
    auto log = [&](const std::string& s) {
        if (options.log) options.log(s);
    };

    Rng rng(cfg.seed);
    std::vector<SamplePair> manifest;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        auto crops = sample_patches(data.train[i], cfg.patch_size, cfg.patches_per_image, rng.next_u64());
        for (auto& c : crops) manifest.push_back(std::move(c));
    }
    const std::size_t steps_per_epoch = (manifest.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;
    const std::vector<SamplePair>& held_out = data.valid.empty() ? data.train : data.valid;

    auto params = named_params(model);
    AdamState adam;
    const AdamOptions adam_opt{cfg.beta1, cfg.beta2, cfg.adam_eps};
    TrainResult result;

    std::ofstream csv;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        csv.open(*options.out_dir / "loss.csv");
        csv << "step,lr,loss,mrae,rmse,psnr\n";
        csv << std::setprecision(10);
    }

    std::vector<std::size_t> order(manifest.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<SamplePair> batch;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = manifest[order[i]];
                batch.push_back(cfg.augment ? augment(s, Dihedral::from_index(static_cast<int>(rng.below(8)))) : s);
            }
            std::vector<const SpectralCube*> rgbs, hsis;
            for (const auto& s : batch) {
                rgbs.push_back(&s.rgb);
                hsis.push_back(&s.hsi);
            }
            const Tensor x = cubes_to_tensor(rgbs);
            const Tensor gt = cubes_to_tensor(hsis);

            const double lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_floor);
            const Tensor pred = mstpp_forward(x, model);
            const Tensor loss = mrae_loss(pred, gt);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw DivergenceError("training diverged at step " + std::to_string(step) + " (non-finite loss)");
            loss.backward();
            adam_step(params, adam, lr, adam_opt);
            for (auto& [_, t] : params) t.zero_grad();
            round_params_to_f32(model);

            StepRecord rec;
            rec.step = step;
            rec.lr = lr;
            rec.loss = loss_value;
            rec.batch = {loss_value, rmse<double>(gt.data(), pred.data()), psnr<double>(gt.data(), pred.data()),
                         gt.numel()};
            result.steps.push_back(rec);
            if (csv.is_open())
                csv << rec.step << ',' << rec.lr << ',' << rec.loss << ',' << rec.batch.mrae << ',' << rec.batch.rmse
                    << ',' << rec.batch.psnr << '\n';
            ++step;
        }

        const bool last = epoch + 1 == cfg.epochs;
        if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
            const auto report = evaluate_model(model, held_out);
            result.evals.push_back({epoch + 1, report});
            std::ostringstream msg;
            msg << "epoch " << (epoch + 1) << "/" << cfg.epochs << " step " << step << " loss "
                << result.steps.back().loss << " held-out mrae " << report.mrae << " psnr " << report.psnr;
            log(msg.str());
            if (report.mrae < result.best_mrae) {
                result.best_mrae = report.mrae;
                if (options.out_dir) save(model, (*options.out_dir / "best.mstw").string());
            }
        }
    }
    if (options.out_dir) save(model, (*options.out_dir / "last.mstw").string());
    return result;
}

}  // namespace mstpp
