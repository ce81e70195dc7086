// Command-line front end: data generation, training, inference, evaluation,
// cost accounting and ensembling. Machine-readable output goes to stdout,
// progress and the resolved configuration to stderr.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mstpp/mstpp.hpp"

namespace fs = std::filesystem;
using namespace mstpp;

namespace {

// Bad user input: exit code 1.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("SPECTRAFORMER_SEED")) {
        try {
            return KeyValueConfig::convert<std::uint64_t>("SPECTRAFORMER_SEED", env);
        } catch (const std::invalid_argument&) {
            throw UsageError("SPECTRAFORMER_SEED must be an unsigned integer");
        }
    }
    return 0;
}

void log_config(const std::string& cmd, const KeyValueConfig& kv) {
    std::cerr << "[" << cmd << "] resolved config:\n";
    for (const auto& [k, v] : kv.entries()) std::cerr << "  " << k << "=" << v << "\n";
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw UsageError("--size expects HxW, got '" + s + "'");
    return {KeyValueConfig::convert<std::size_t>("height", s.substr(0, x)),
            KeyValueConfig::convert<std::size_t>("width", s.substr(x + 1))};
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Reads "<rgb> <hsi>" lines from <dir>/manifest.txt.
std::vector<SamplePair> load_pairs(const fs::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw UsageError("no manifest.txt in '" + dir.string() + "'");
    std::vector<SamplePair> pairs;
    std::string rgb, hsi;
    while (is >> rgb >> hsi) pairs.push_back({read_hsi1((dir / rgb).string()), read_hsi1((dir / hsi).string())});
    if (pairs.empty()) throw UsageError("manifest in '" + dir.string() + "' lists no pairs");
    return pairs;
}

MstConfig model_config(std::size_t stages, std::size_t channels) {
    MstConfig c;
    c.stages = stages;
    c.channels = channels;
    if (channels != 31) {
        c.heads.assign(c.levels + 1, 1);
        c.out_channels = 31;
    }
    return c;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const fs::path& out, std::size_t count, const std::string& size, std::uint64_t seed, double noise,
                 std::size_t blobs, const std::string& response_path) {
    const auto [h, w] = parse_size(size);
    if (count == 0) throw UsageError("--count must be positive");
    const auto M = response_path.empty() ? ResponseMatrix::gaussian_default(SpectralCube::default_wavelengths())
                                         : ResponseMatrix::load(response_path);
    KeyValueConfig kv;
    kv.set("data.count", std::to_string(count));
    kv.set("data.size", size);
    kv.set("data.seed", std::to_string(seed));
    kv.set("data.noise_scale", std::to_string(noise));
    kv.set("data.blobs", std::to_string(blobs));
    kv.set("data.response", response_path.empty() ? "gaussian-default" : response_path);
    log_config("gen-data", kv);

    fs::create_directories(out);
    std::ofstream manifest(out / "manifest.txt");
    Rng seeds(seed);
    for (std::size_t i = 0; i < count; ++i) {
        SceneSpec spec{seeds.next_u64(), h, w, blobs, noise};
        const auto pair = make_pair(spec, M);
        std::ostringstream base;
        base << "pair_" << std::setw(4) << std::setfill('0') << i;
        write_hsi1((out / (base.str() + ".rgb.hsi1")).string(), pair.rgb);
        write_hsi1((out / (base.str() + ".hsi.hsi1")).string(), pair.hsi);
        manifest << base.str() << ".rgb.hsi1 " << base.str() << ".hsi.hsi1\n";
        std::cout << "pair=" << base.str() << "\n";
    }
    std::cout << "count=" << count << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const fs::path& data_dir, const fs::path& out,
              const std::optional<std::uint64_t>& seed_flag) {
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    MstConfig mcfg;
    read_config(kv, mcfg);
    TrainConfig tcfg;
    tcfg.read(kv);
    std::size_t valid_count = 0;
    kv.read("data.valid_count", valid_count);
    if (seed_flag || std::getenv("SPECTRAFORMER_SEED")) {
        tcfg.seed = resolve_seed(seed_flag);
        mcfg.seed = tcfg.seed;
    }
    KeyValueConfig resolved;
    write_config(resolved, mcfg);
    tcfg.write(resolved);
    resolved.set("data.valid_count", std::to_string(valid_count));
    resolved.set("data.dir", data_dir.string());
    log_config("train", resolved);

    auto pairs = load_pairs(data_dir);
    if (valid_count >= pairs.size()) throw UsageError("data.valid_count leaves no training pairs");
    Dataset data;
    data.train.assign(pairs.begin(), pairs.end() - static_cast<std::ptrdiff_t>(valid_count));
    data.valid.assign(pairs.end() - static_cast<std::ptrdiff_t>(valid_count), pairs.end());

    auto model = MstPlusPlusParams::init(mcfg);
    TrainOptions opts;
    opts.out_dir = out;
    opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
    const auto result = train(tcfg, data, model, opts);
    std::cout << "steps=" << result.steps.size() << "\n";
    if (!result.steps.empty()) std::cout << "final_loss=" << std::setprecision(10) << result.steps.back().loss << "\n";
    std::cout << "best_mrae=" << result.best_mrae << "\n";
    std::cout << "checkpoint=" << (out / "best.mstw").string() << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& in, const std::string& out, bool self_ens) {
    auto model = load(ckpt);
    const auto rgb = read_hsi1(in);
    KeyValueConfig kv;
    write_config(kv, model.config);
    kv.set("infer.self_ensemble", self_ens ? "true" : "false");
    log_config("infer", kv);
    const CubeModel f = [&model](const SpectralCube& x) { return reconstruct(model, x); };
    const auto pred = self_ens ? self_ensemble(f, rgb) : f(rgb);
    write_hsi1(out, pred);
    std::cout << "output=" << out << "\nshape=" << pred.shape_string() << "\n";
    return 0;
}

int cmd_eval(const std::string& gt_path, const std::string& pred_path, bool csv) {
    const auto gt = read_hsi1(gt_path);
    const auto pred = read_hsi1(pred_path);
    const auto report = evaluate(gt, pred);
    if (csv)
        std::cout << MetricReport::csv_header() << "\n" << report.to_csv_row() << "\n";
    else
        std::cout << report.to_key_values();
    return 0;
}

MstPlusPlusParams model_for(const std::string& ckpt, std::size_t stages, std::size_t channels) {
    if (!ckpt.empty()) return load(ckpt);
    return MstPlusPlusParams::init(model_config(stages, channels));
}

int cmd_flops(std::size_t height, std::size_t width, std::size_t stages, std::size_t channels, const std::string& ckpt) {
    if (height == 0 || width == 0) throw UsageError("--height and --width must be positive");
    const auto model = model_for(ckpt, stages, channels);
    KeyValueConfig kv;
    write_config(kv, model.config);
    kv.set("flops.height", std::to_string(height));
    kv.set("flops.width", std::to_string(width));
    log_config("flops", kv);

    const auto report = count_flops(model, height, width);
    const auto& cfg = model.config;
    const std::size_t hp = height + pad_to_multiple(height, cfg.pad_multiple);
    const std::size_t wp = width + pad_to_multiple(width, cfg.pad_multiple);

    std::cout << "# convention: " << FlopReport::convention << "\n";
    std::cout << "kind,path,measured_macs,predicted_macs\n";
    for (const auto& [path, macs] : report.ledger.entries()) std::cout << "layer," << path << "," << macs << ",\n";

    // Spectral attention cores, measured vs closed form per block.
    auto core_row = [&](const std::string& path, std::size_t level) {
        const auto measured = report.ledger.entries().count(path) ? report.ledger.entries().at(path) : 0;
        const auto predicted = predicted_cost(AttentionKind::Spectral, hp >> level, wp >> level,
                                              cfg.channels << level, cfg.heads[level], 0);
        std::cout << "attention," << path << "," << measured << "," << predicted << "\n";
    };
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        const std::string stage = "body." + std::to_string(s);
        for (std::size_t l = 0; l < cfg.levels; ++l)
            for (std::size_t b = 0; b < cfg.blocks[l]; ++b)
                core_row(stage + "/encoder." + std::to_string(l) + "/sab." + std::to_string(b) + "/msa/core", l);
        for (std::size_t b = 0; b < cfg.blocks[cfg.levels]; ++b)
            core_row(stage + "/bottleneck/sab." + std::to_string(b) + "/msa/core", cfg.levels);
        for (std::size_t i = 0; i < cfg.levels; ++i) {
            const std::size_t l = cfg.levels - 1 - i;
            for (std::size_t b = 0; b < cfg.blocks[l]; ++b)
                core_row(stage + "/decoder." + std::to_string(i) + "/sab." + std::to_string(b) + "/msa/core", l);
        }
    }
    std::cout << "total_macs,," << report.macs() << ",\n";
    std::cout << "total_flops,," << report.flops() << ",\n";
    std::cerr << "FLOPs " << std::setprecision(4) << static_cast<double>(report.flops()) / 1e9 << " G at " << height
              << "x" << width << " (" << FlopReport::convention << ")\n";
    return 0;
}

int cmd_params(std::size_t stages, std::size_t channels, const std::string& ckpt) {
    auto model = model_for(ckpt, stages, channels);
    KeyValueConfig kv;
    write_config(kv, model.config);
    log_config("params", kv);
    std::cout << "params=" << count_params(model) << "\n";
    std::cout << "stages=" << model.config.stages << "\n";
    return 0;
}

int cmd_ensemble(const std::string& mode, const std::string& ckpts, const std::string& weights, const std::string& in,
                 const std::string& out) {
    const auto paths = split_list(ckpts);
    if (paths.empty()) throw UsageError("--checkpoints needs at least one path");
    std::vector<MstPlusPlusParams> models;
    for (const auto& p : paths) models.push_back(load(p));
    const auto rgb = read_hsi1(in);
    KeyValueConfig kv;
    kv.set("ensemble.mode", mode);
    kv.set("ensemble.checkpoints", ckpts);
    kv.set("ensemble.weights", weights.empty() ? "uniform" : weights);
    log_config("ensemble", kv);

    std::vector<CubeModel> fns;
    for (const auto& m : models) fns.push_back([&m](const SpectralCube& x) { return reconstruct(m, x); });
    SpectralCube pred;
    if (mode == "self") {
        if (fns.size() != 1) throw UsageError("--mode self takes exactly one checkpoint");
        pred = self_ensemble(fns.front(), rgb);
    } else if (mode == "multiscale") {
        pred = multiscale_ensemble(fns, rgb);
    } else if (mode == "topk") {
        EnsembleWeights w = EnsembleWeights::uniform(fns.size());
        if (!weights.empty()) {
            w.alpha.clear();
            for (const auto& s : split_list(weights)) w.alpha.push_back(KeyValueConfig::convert<double>("weights", s));
        }
        std::vector<SpectralCube> outs;
        for (const auto& f : fns) outs.push_back(f(rgb));
        pred = topk_ensemble(outs, w);
    } else {
        throw UsageError("--mode must be one of self, multiscale, topk");
    }
    write_hsi1(out, pred);
    std::cout << "output=" << out << "\nshape=" << pred.shape_string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral reconstruction toolkit (multi-stage spectral-wise transformer)"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate synthetic RGB/HSI pairs");
    std::string gen_out, gen_size = "64x64", response;
    std::size_t gen_count = 4, gen_blobs = 6;
    std::optional<std::uint64_t> gen_seed;
    double gen_noise = 1e-3;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of pairs");
    gen->add_option("--size", gen_size, "Spatial size HxW");
    gen->add_option("--seed", gen_seed, "Seed (falls back to SPECTRAFORMER_SEED)");
    gen->add_option("--noise-scale", gen_noise, "Shot-noise scale");
    gen->add_option("--blobs", gen_blobs, "Spectral blobs per scene");
    gen->add_option("--response", response, "Text file with a C x 3 response matrix");

    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_config, tr_data, tr_out;
    std::optional<std::uint64_t> tr_seed;
    tr->add_option("--config", tr_config, "Config file (flat dotted key=value)");
    tr->add_option("--data", tr_data, "Data directory with manifest.txt")->required();
    tr->add_option("--out", tr_out, "Output directory")->required();
    tr->add_option("--seed", tr_seed, "Seed (falls back to SPECTRAFORMER_SEED)");

    auto* inf = app.add_subcommand("infer", "Reconstruct an HSI cube from an RGB cube");
    std::string inf_ckpt, inf_in, inf_out;
    bool inf_self = false;
    inf->add_option("--checkpoint", inf_ckpt)->required();
    inf->add_option("--in", inf_in)->required();
    inf->add_option("--out", inf_out)->required();
    inf->add_flag("--self-ensemble", inf_self, "Average over the 8 flips/rotations");

    auto* ev = app.add_subcommand("eval", "MRAE / RMSE / PSNR between two cubes");
    std::string ev_gt, ev_pred;
    bool ev_csv = false;
    ev->add_option("--gt", ev_gt)->required();
    ev->add_option("--pred", ev_pred)->required();
    ev->add_flag("--csv", ev_csv, "Emit a CSV row instead of key=value lines");

    auto* fl = app.add_subcommand("flops", "Measured vs predicted MACs per layer");
    std::size_t fl_h = 482, fl_w = 512, fl_stages = 3, fl_channels = 31;
    std::string fl_ckpt;
    fl->add_option("--height", fl_h);
    fl->add_option("--width", fl_w);
    fl->add_option("--stages", fl_stages);
    fl->add_option("--channels", fl_channels);
    fl->add_option("--checkpoint", fl_ckpt);

    auto* pa = app.add_subcommand("params", "Learnable parameter count");
    std::size_t pa_stages = 3, pa_channels = 31;
    std::string pa_ckpt;
    pa->add_option("--stages", pa_stages);
    pa->add_option("--channels", pa_channels);
    pa->add_option("--checkpoint", pa_ckpt);

    auto* en = app.add_subcommand("ensemble", "Test-time ensembles");
    std::string en_mode, en_ckpts, en_weights, en_in, en_out;
    en->add_option("--mode", en_mode, "self | multiscale | topk")->required();
    en->add_option("--checkpoints", en_ckpts, "Comma separated checkpoint paths")->required();
    en->add_option("--weights", en_weights, "Comma separated weights for topk");
    en->add_option("--in", en_in)->required();
    en->add_option("--out", en_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (*gen) return cmd_gen_data(gen_out, gen_count, gen_size, resolve_seed(gen_seed), gen_noise, gen_blobs, response);
        if (*tr) return cmd_train(tr_config, tr_data, tr_out, tr_seed);
        if (*inf) return cmd_infer(inf_ckpt, inf_in, inf_out, inf_self);
        if (*ev) return cmd_eval(ev_gt, ev_pred, ev_csv);
        if (*fl) return cmd_flops(fl_h, fl_w, fl_stages, fl_channels, fl_ckpt);
        if (*pa) return cmd_params(pa_stages, pa_channels, pa_ckpt);
        if (*en) return cmd_ensemble(en_mode, en_ckpts, en_weights, en_in, en_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CorruptionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
