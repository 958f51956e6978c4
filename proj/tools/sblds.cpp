// sblds: command line front end for the slice-based latent diffusion pipeline.
//
// Exit codes: 0 success, 2 invalid input or config, 3 training divergence,
// 4 file I/O failure.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sbld/phantom.hpp"
#include "sbld/pipeline.hpp"
#include "sbld/segment.hpp"

namespace {

using namespace sbld;
namespace fs = std::filesystem;

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return RunConfig::desk_preset();
    std::ifstream in(config_path);
    if (!in) throw io_error("cannot read config: " + config_path);
    try {
        return RunConfig::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad config JSON in " + config_path + ": " + e.what());
    }
}

ConditionVector pick_condition(const Generator& gen, double size, const std::string& condition_path) {
    if (!condition_path.empty()) {
        std::ifstream in(condition_path);
        if (!in) throw io_error("cannot read condition: " + condition_path);
        try {
            return ConditionVector::from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw format_error("bad condition JSON in " + condition_path + ": " + e.what());
        }
    }
    if (size > 0.0) return sweep_condition(gen.stats, size);
    return gen.stats.median_condition();
}

std::vector<SegCase> load_synth_cases(const fs::path& gen_dir) {
    const auto gm = read_gen_manifest(gen_dir / "gen_manifest.json");
    std::vector<SegCase> out;
    for (const auto& rec : gm.cases)
        out.push_back({read_volume(gen_dir / rec.image_path), read_mask(gen_dir / rec.mask_path)});
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slice-based latent diffusion for volumetric tumor phantoms"};
    app.require_subcommand(1);

    // ---- gen-data
    auto* gen_data = app.add_subcommand("gen-data", "generate a phantom dataset with condition features");
    std::string gd_out;
    int gd_n = 40, gd_w = 32, gd_h = 32, gd_d = 16;
    uint64_t gd_seed = 1;
    double gd_tmin = 0.05, gd_tmax = 0.20;
    gen_data->add_option("--out", gd_out, "output dataset directory")->required();
    gen_data->add_option("--n", gd_n, "number of cases");
    gen_data->add_option("--seed", gd_seed, "dataset seed");
    gen_data->add_option("--width", gd_w, "volume width");
    gen_data->add_option("--height", gd_h, "volume height");
    gen_data->add_option("--depth", gd_d, "volume depth");
    gen_data->add_option("--tumor-min", gd_tmin, "min tumor radius fraction");
    gen_data->add_option("--tumor-max", gd_tmax, "max tumor radius fraction");
    gen_data->callback([&] {
        PhantomSpec spec;
        spec.dims = {gd_w, gd_h, gd_d};
        spec.tumor_radius_range = {gd_tmin, gd_tmax};
        const auto man = generate_dataset(gd_seed, gd_n, spec, gd_out);
        std::cout << "wrote " << man.cases.size() << " cases to " << gd_out << " (train "
                  << man.split_cases("train").size() << ", val " << man.split_cases("val").size() << ", test "
                  << man.split_cases("test").size() << ")\n";
    });

    // ---- features
    auto* features = app.add_subcommand("features", "measure condition features of a mask file");
    std::string ft_mask, ft_out;
    features->add_option("--mask", ft_mask, "mask file (.sblm)")->required();
    features->add_option("--out", ft_out, "write the feature JSON here as well");
    features->callback([&] {
        const auto c = condition_vector(read_mask(ft_mask));
        const auto text = c.to_json().dump(2) + "\n";
        std::cout << text;
        if (!ft_out.empty()) write_text_file(text, ft_out);
    });

    // ---- train-vae
    auto* train_vae_cmd = app.add_subcommand("train-vae", "train the slice VAE (stage 1)");
    std::string tv_data, tv_run, tv_config;
    uint64_t tv_seed = 0;
    int tv_steps = 0;
    train_vae_cmd->add_option("--data", tv_data, "dataset directory")->required();
    train_vae_cmd->add_option("--run", tv_run, "run directory for artifacts")->required();
    train_vae_cmd->add_option("--config", tv_config, "run config JSON (default: desk preset)");
    train_vae_cmd->add_option("--seed", tv_seed, "override the config seed");
    train_vae_cmd->add_option("--steps", tv_steps, "override the VAE step count");
    train_vae_cmd->callback([&] {
        auto cfg = load_config(tv_config);
        if (tv_seed != 0) cfg.seed = tv_seed;
        if (tv_steps > 0) cfg.vae_steps = tv_steps;
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = train_vae(cfg, tv_data, tv_run);
        std::fprintf(stderr, "trained VAE for %d steps in %.0f ms\n", cfg.vae_steps, elapsed_ms(t0));
        std::printf("final_loss %.6f\n", r.losses.back());
        std::printf("val_psnr %.3f dB (mean-image baseline %.3f dB)\n", r.val.psnr, r.val.baseline_psnr);
        std::printf("val_mask_dice %.4f over %d cases\n", r.val.mask_dice, r.val.n_cases);
    });

    // ---- encode
    auto* encode = app.add_subcommand("encode", "cache train-split latents and fit the scaler");
    std::string en_data, en_run;
    encode->add_option("--data", en_data, "dataset directory")->required();
    encode->add_option("--run", en_run, "run directory with vae.sblc")->required();
    encode->callback([&] {
        const auto r = encode_dataset(en_run, en_data);
        std::printf("encoded %d cases; scaler mean %.6f std %.6f\n", r.count, r.scaler.mean, r.scaler.std);
    });

    // ---- train-ldm
    auto* train_ldm = app.add_subcommand("train-ldm", "train the conditional latent denoiser (stage 2)");
    std::string tl_data, tl_run;
    bool tl_resume = false;
    int tl_steps = 0;
    train_ldm->add_option("--data", tl_data, "dataset directory")->required();
    train_ldm->add_option("--run", tl_run, "run directory with the latent cache")->required();
    train_ldm->add_flag("--resume", tl_resume, "continue from the existing checkpoint");
    train_ldm->add_option("--steps", tl_steps, "override the denoiser step budget (rewrites config.json)");
    train_ldm->callback([&] {
        if (tl_steps > 0) {
            auto cfg = read_run_config(tl_run);
            cfg.ldm_steps = tl_steps;
            write_run_config(cfg, tl_run);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = train_diffusion(tl_run, tl_data, tl_resume);
        std::fprintf(stderr, "trained denoiser steps %d..%d in %.0f ms\n", r.start_step, r.end_step,
                     elapsed_ms(t0));
        std::printf("final_loss %.6f\n", r.losses.back());
    });

    // ---- sample
    auto* sample_cmd = app.add_subcommand("sample", "generate synthetic volume+mask cases");
    std::string sm_run, sm_out, sm_sampler = "ddim", sm_condition;
    int sm_n = 8, sm_ddim = 50;
    uint64_t sm_seed = 7;
    double sm_size = 0.0;
    sample_cmd->add_option("--run", sm_run, "run directory with both checkpoints")->required();
    sample_cmd->add_option("--out", sm_out, "output directory")->required();
    sample_cmd->add_option("--n", sm_n, "number of cases");
    sample_cmd->add_option("--seed", sm_seed, "sampling seed");
    sample_cmd->add_option("--sampler", sm_sampler, "ddpm or ddim");
    sample_cmd->add_option("--ddim-steps", sm_ddim, "DDIM step count");
    sample_cmd->add_option("--size", sm_size, "volume grid value in (0,1]; scales the median condition");
    sample_cmd->add_option("--condition", sm_condition, "condition JSON file (overrides --size)");
    sample_cmd->callback([&] {
        auto gen = load_generator(sm_run);
        GenSetSpec spec;
        spec.count = sm_n;
        spec.sampler = sampler_from_string(sm_sampler);
        spec.ddim_steps = sm_ddim;
        spec.seed = sm_seed;
        const auto c = pick_condition(gen, sm_size, sm_condition);
        const auto t0 = std::chrono::steady_clock::now();
        const auto cases = generate_set(gen, c, spec);
        std::fprintf(stderr, "sampled %d volumes in %.0f ms\n", sm_n, elapsed_ms(t0));
        write_generated_set(cases, spec, sm_out);
        int nonempty = 0;
        for (const auto& sc : cases) nonempty += sc.measured ? 1 : 0;
        std::printf("wrote %zu cases to %s (nonempty masks %d)\n", cases.size(), sm_out.c_str(), nonempty);
    });

    // ---- size-sweep
    auto* sweep_cmd = app.add_subcommand("size-sweep", "sweep requested tumor volume and measure the response");
    std::string sw_run, sw_out, sw_sampler = "ddim";
    std::vector<double> sw_grid;
    int sw_samples = 5, sw_ddim = 50;
    uint64_t sw_seed = 33;
    sweep_cmd->add_option("--run", sw_run, "run directory with both checkpoints")->required();
    sweep_cmd->add_option("--out", sw_out, "report directory")->required();
    sweep_cmd->add_option("--grid", sw_grid, "grid values in (0,1]")->delimiter(',');
    sweep_cmd->add_option("--samples", sw_samples, "samples per grid point");
    sweep_cmd->add_option("--seed", sw_seed, "sampling seed");
    sweep_cmd->add_option("--sampler", sw_sampler, "ddpm or ddim");
    sweep_cmd->add_option("--ddim-steps", sw_ddim, "DDIM step count");
    sweep_cmd->callback([&] {
        auto gen = load_generator(sw_run);
        if (sw_grid.empty())
            for (int i = 1; i <= 9; ++i) sw_grid.push_back(0.1 * i);
        const auto rep = size_sweep(gen, sw_grid, sw_samples, sampler_from_string(sw_sampler), sw_ddim, sw_seed);
        fs::create_directories(sw_out);
        write_json_file(sweep_report_json(rep), fs::path(sw_out) / "sweep.json");
        const auto table = sweep_report_table(rep);
        write_text_file(table, fs::path(sw_out) / "sweep.txt");
        std::cout << table;
    });

    // ---- eval-gen
    auto* eval_cmd = app.add_subcommand("eval-gen", "evaluate a generated set against the training data");
    std::string ev_gen, ev_data, ev_out;
    eval_cmd->add_option("--gen", ev_gen, "generated set directory")->required();
    eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
    eval_cmd->add_option("--out", ev_out, "report directory (default: the generated set directory)");
    eval_cmd->callback([&] {
        const auto rep = eval_generated(ev_gen, ev_data);
        const fs::path out_dir = ev_out.empty() ? fs::path(ev_gen) : fs::path(ev_out);
        fs::create_directories(out_dir);
        write_json_file(gen_eval_report_json(rep), out_dir / "eval_gen.json");
        const auto table = gen_eval_report_table(rep);
        write_text_file(table, out_dir / "eval_gen.txt");
        std::cout << table;
    });

    // ---- segbench
    auto* seg_cmd = app.add_subcommand("segbench", "segmentation benchmark across augmentation regimes");
    std::string sg_data, sg_gen, sg_out;
    int sg_nreal = 20, sg_nsynth = 20, sg_aug = 5, sg_seeds = 3, sg_steps = 240, sg_base = 16;
    double sg_lr = 2e-3;
    uint64_t sg_seed_base = 1234;
    seg_cmd->add_option("--data", sg_data, "dataset directory")->required();
    seg_cmd->add_option("--gen", sg_gen, "generated set directory (required when --n-synth > 0)");
    seg_cmd->add_option("--out", sg_out, "report directory")->required();
    seg_cmd->add_option("--n-real", sg_nreal, "real training cases per regime");
    seg_cmd->add_option("--n-synth", sg_nsynth, "synthetic training cases per regime");
    seg_cmd->add_option("--aug", sg_aug, "augmentation factor for the _aug regimes");
    seg_cmd->add_option("--seeds", sg_seeds, "seeds per regime");
    seg_cmd->add_option("--steps", sg_steps, "segmenter training steps");
    seg_cmd->add_option("--base", sg_base, "segmenter base channels");
    seg_cmd->add_option("--lr", sg_lr, "segmenter learning rate");
    seg_cmd->add_option("--seed-base", sg_seed_base, "benchmark seed base");
    seg_cmd->callback([&] {
        const auto man = read_manifest(fs::path(sg_data) / "manifest.json");
        std::vector<SegCase> synth;
        if (sg_nsynth > 0) {
            if (sg_gen.empty()) throw validation_error("segbench: --gen is required when --n-synth > 0");
            synth = load_synth_cases(sg_gen);
        }
        SegBenchConfig cfg;
        cfg.train.model.base = sg_base;
        cfg.train.steps = sg_steps;
        cfg.train.lr = sg_lr;
        cfg.n_seeds = sg_seeds;
        cfg.seed_base = sg_seed_base;
        const auto t0 = std::chrono::steady_clock::now();
        const auto results = run_benchmark(man, sg_data, synth, standard_regimes(sg_nreal, sg_nsynth, sg_aug), cfg);
        std::fprintf(stderr, "benchmark finished in %.0f ms\n", elapsed_ms(t0));
        fs::create_directories(sg_out);
        write_json_file(benchmark_report_json(results), fs::path(sg_out) / "segbench.json");
        const auto table = benchmark_report_table(results);
        write_text_file(table, fs::path(sg_out) / "segbench.txt");
        std::cout << table;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const training_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
