// Synthesize a few pairs, fit the tiny model for a handful of epochs,
// reconstruct one image and report metrics plus the model's cost.

#include <iostream>

#include "mstpp/mstpp.hpp"

using namespace mstpp;

int main() {
    const auto response = ResponseMatrix::gaussian_default(SpectralCube::default_wavelengths());
    Dataset data;
    for (std::uint64_t seed = 0; seed < 4; ++seed) data.train.push_back(make_pair({seed, 32, 32, 6, 1e-3}, response));
    data.valid.push_back(make_pair({99, 32, 32, 6, 1e-3}, response));

    auto model = MstPlusPlusParams::init(MstConfig::tiny());
    std::cout << "params " << count_params(model) << "\n";

    TrainConfig cfg;
    cfg.patch_size = 16;
    cfg.batch_size = 4;
    cfg.epochs = 20;
    cfg.lr = 4e-3;
    cfg.eval_every = 5;
    TrainOptions opts;
    opts.log = [](const std::string& line) { std::cout << line << "\n"; };
    train(cfg, data, model, opts);

    const auto& held_out = data.valid.front();
    const auto pred = reconstruct(model, held_out.rgb);
    std::cout << evaluate(held_out.hsi, pred).to_key_values();

    const auto cost = count_flops(model, 482, 512);
    std::cout << "flops at 482x512: " << static_cast<double>(cost.flops()) / 1e9 << " G\n";
    return 0;
}
