// Acceptance harness: ten go/no-go checks covering schedule algebra, sampler
// identities, gradient correctness, metric and feature oracles, desk-scale
// training quality, conditional generation, sampling speed, the augmentation
// benchmark, and determinism. Prints one [PASS]/[FAIL] line per criterion and
// exits nonzero if any fail.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "sbld/sbld.hpp"

using namespace sbld;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool cond, const std::string& msg) {
        if (!cond) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += "FAILED: " + msg;
        }
    }
    void note(const std::string& msg) {
        if (!detail.empty()) detail += "; ";
        detail += msg;
    }
};

// Shared artifacts produced by the expensive criteria.
struct Context {
    fs::path work;
    fs::path sblds_bin;
    fs::path data_dir, run_dir, gen_dir;
    RunConfig cfg;
    bool trained_vae = false;
    bool trained_ldm = false;
    double train_seconds = 0.0;
};

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_bytes(const fs::path& a, const fs::path& b) { return file_bytes(a) == file_bytes(b); }

// Mixed absolute/relative finite-difference error over every parameter of a
// model, in double precision. The absolute floor keeps parameters whose true
// gradient is exactly zero from comparing against rounding noise.
template <typename Model, typename GradFn, typename LossFn>
double max_fd_error(Model& model, GradFn&& compute_grads, LossFn&& loss_only, double h = 1e-5,
                    double tol = 1e-3, double atol = 1e-9) {
    nn::zero_grads(model);
    compute_grads();
    std::vector<std::pair<std::vector<double>*, std::vector<double>*>> tensors;
    model.for_each_param([&](const std::string&, std::vector<double>& w, std::vector<double>& g) {
        tensors.emplace_back(&w, &g);
    });
    double worst = 0.0;
    for (auto& [w, g] : tensors)
        for (size_t i = 0; i < w->size(); ++i) {
            const double keep = (*w)[i];
            (*w)[i] = keep + h;
            const double lp = loss_only();
            (*w)[i] = keep - h;
            const double lm = loss_only();
            (*w)[i] = keep;
            const double numeric = (lp - lm) / (2 * h);
            const double analytic = (*g)[i];
            const double denom = std::max(atol / tol, std::abs(numeric) + std::abs(analytic));
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    return worst;
}

// ---------------------------------------------------------------------------

Outcome c1_schedule_algebra() {
    Outcome o;
    const auto s = linear_schedule(1000, 1e-4, 0.02);
    double abar = 1.0, a = 1.0, v = 0.0;
    double rec_err = 0.0, oracle_err = 0.0;
    for (int t = 1; t <= 1000; ++t) {
        abar *= s.alpha(t);
        rec_err = std::max(rec_err, std::abs(s.alpha_bar(t) - abar));
        a *= std::sqrt(s.alpha(t));
        v = s.alpha(t) * v + s.beta(t);
        oracle_err = std::max(oracle_err, std::abs(a - std::sqrt(s.alpha_bar(t))));
        oracle_err = std::max(oracle_err, std::abs(v - (1.0 - s.alpha_bar(t))));
    }
    o.require(std::abs(s.beta(1) - 1e-4) < 1e-15 && std::abs(s.beta(1000) - 0.02) < 1e-15,
              "beta endpoints off");
    o.require(s.posterior_var(1) == 0.0, "posterior variance at t=1 must be exactly zero");
    o.require(rec_err < 1e-12, fmt("alpha_bar recurrence err %.3e >= 1e-12", rec_err));
    o.require(oracle_err < 1e-9, fmt("(a_t,v_t) oracle err %.3e >= 1e-9", oracle_err));
    o.note(fmt("abar err %.2e, oracle err %.2e", rec_err, oracle_err));
    return o;
}

Outcome c2_oracle_sampler() {
    Outcome o;
    const auto s = linear_schedule(1000, 1e-4, 0.02);
    const size_t n = 256;
    Rng rng(7);
    std::vector<double> x0(n);
    for (auto& x : x0) x = 0.5 * rng.normal();

    auto oracle = [&](std::span<const double> xt, int t) {
        const double sa = std::sqrt(s.alpha_bar(t)), sv = std::sqrt(1.0 - s.alpha_bar(t));
        std::vector<double> eps(n);
        for (size_t i = 0; i < n; ++i) eps[i] = (xt[i] - sa * x0[i]) / sv;
        return eps;
    };
    const auto xhat = sample<double>(oracle, s, n, SamplerKind::ddim, 50, 3);
    double linf = 0.0;
    for (size_t i = 0; i < n; ++i) linf = std::max(linf, std::abs(xhat[i] - x0[i]));
    o.require(linf < 1e-4, fmt("DDIM oracle recovery linf %.3e >= 1e-4", linf));

    std::vector<double> x1(n), eps_hat(n), noise_a(n, 1.0), noise_b(n, -1.0);
    for (size_t i = 0; i < n; ++i) {
        x1[i] = rng.normal();
        eps_hat[i] = rng.normal();
    }
    const auto step_a = ddpm_step<double>(x1, eps_hat, 1, s, noise_a);
    const auto step_b = ddpm_step<double>(x1, eps_hat, 1, s, noise_b);
    o.require(step_a == step_b, "DDPM t=1 step depends on the noise draw (sigma_1 != 0)");
    o.note(fmt("ddim linf %.2e, ddpm t=1 deterministic", linf));
    return o;
}

Outcome c3_gradients() {
    Outcome o;

    VaeConfig vc;
    vc.base = 1;
    vc.latent_channels = 1;
    vc.d_pos = 2;
    VaeModel<double> vae;
    Rng vrng(5);
    vae.init(vc, vrng);
    const size_t vae_params = nn::param_count(vae);
    o.require(vae_params <= 1000, fmt("vae micro-config has %zu params > 1000", vae_params));

    const int W = 8, H = 8;
    Rng drng(6);
    std::vector<double> img(size_t(W) * H), msk(size_t(W) * H), eps(size_t(W / 4) * (H / 4));
    for (auto& x : img) x = 0.5 + 0.3 * drng.normal();
    for (auto& x : msk) x = drng.uniform_int(2) ? 1.0 : 0.0;
    for (auto& x : eps) x = drng.normal();
    const auto pos = positional_embedding<double>(1, 4, vc.d_pos);

    auto vae_loss = [&]() {
        auto [mu, logvar] = vae.encode(img, msk, pos, W, H);
        const auto z = reparameterize<double>(mu, logvar, eps);
        auto [ih, ml] = vae.decode(z, pos, W, H);
        const double mse = nn::mse_loss<double>(ih, img, nullptr);
        const double bce = nn::bce_with_logits<double>(ml, msk, nullptr);
        const double kl = kl_divergence<double>(mu, logvar);
        return mse + kVaeLambdaMask * bce + kVaeLambdaKl * kl;
    };
    const double vae_err =
        max_fd_error(vae, [&] { vae_step_grads<double>(vae, img, msk, pos, eps, W, H); }, vae_loss);
    o.require(vae_err < 1e-3, fmt("vae FD gradient err %.3e >= 1e-3", vae_err));

    DenoiserConfig dc;
    dc.in_channels = 1;
    dc.base_channels = 1;
    dc.channel_mult = {1, 1, 1};
    dc.d_emb = 8;
    dc.tau_hidden = {4};
    DenoiserModel<double> den;
    Rng nrng(8);
    den.init(dc, nrng);
    const size_t den_params = nn::param_count(den);
    o.require(den_params <= 1000, fmt("denoiser micro-config has %zu params > 1000", den_params));

    const int lw = 4, lh = 4, ld = 4;
    const size_t n = size_t(lw) * lh * ld;
    std::vector<double> xt(n), target(n);
    for (auto& x : xt) x = drng.normal();
    for (auto& x : target) x = drng.normal();
    ConditionVector cond;
    cond.voxel_volume_norm = 0.01;
    cond.surface_area_norm = 0.05;
    cond.sphericity = 0.7;
    cond.com_x = 0.4;
    cond.com_y = 0.5;
    cond.com_z = 0.6;
    cond.bbox_w = 0.2;
    cond.bbox_h = 0.25;
    cond.bbox_d = 0.3;
    const int t = 7;

    auto den_loss = [&]() {
        const auto y = den.predict_noise(std::span<const double>(xt), lw, lh, ld, t, cond);
        double mse = 0.0;
        for (size_t i = 0; i < n; ++i) mse += (y[i] - target[i]) * (y[i] - target[i]);
        return mse / double(n);
    };
    auto den_grads = [&] {
        const auto y = den.predict_noise(std::span<const double>(xt), lw, lh, ld, t, cond);
        std::vector<double> g(n);
        for (size_t i = 0; i < n; ++i) g[i] = 2.0 * (y[i] - target[i]) / double(n);
        den.backward(std::span<const double>(g));
    };
    const double den_err = max_fd_error(den, den_grads, den_loss);
    o.require(den_err < 1e-3, fmt("denoiser FD gradient err %.3e >= 1e-3", den_err));
    o.note(fmt("vae %zu params err %.2e, denoiser %zu params err %.2e", vae_params, vae_err, den_params,
               den_err));
    return o;
}

Outcome c4_metric_oracles() {
    Outcome o;
    Rng rng(4);
    double identity_err = 0.0;
    int mismatches = 0;
    for (int k = 0; k < 10000; ++k) {
        Dims d{1 + int(rng.uniform_int(5)), 1 + int(rng.uniform_int(5)), 1 + int(rng.uniform_int(5))};
        MaskGrid m1, m2;
        m1.dims = m2.dims = d;
        m1.voxels.resize(size_t(d.voxels()));
        m2.voxels.resize(size_t(d.voxels()));
        const double p1 = rng.uniform(), p2 = rng.uniform();
        for (auto& v : m1.voxels) v = rng.uniform() < p1 ? 1 : 0;
        for (auto& v : m2.voxels) v = rng.uniform() < p2 ? 1 : 0;

        int64_t inter = 0, n1 = 0, n2 = 0, uni = 0;
        for (size_t i = 0; i < m1.voxels.size(); ++i) {
            const bool a = m1.voxels[i] != 0, b = m2.voxels[i] != 0;
            n1 += a;
            n2 += b;
            inter += a && b;
            uni += a || b;
        }
        const double bdice = (n1 + n2 == 0) ? 1.0 : 2.0 * double(inter) / double(n1 + n2);
        const double biou = (uni == 0) ? 1.0 : double(inter) / double(uni);
        const double d1 = dice(m1, m2), i1 = iou(m1, m2);
        if (d1 != bdice || i1 != biou) ++mismatches;
        identity_err = std::max(identity_err, std::abs(d1 - 2.0 * i1 / (1.0 + i1)));
    }
    o.require(mismatches == 0, fmt("%d of 10000 Dice/IoU brute-force mismatches", mismatches));
    o.require(identity_err < 1e-12, fmt("Dice vs 2*IoU/(1+IoU) err %.3e >= 1e-12", identity_err));

    std::vector<double> a(64, 0.0), b(64, 0.1);
    const double p = psnr<double>(a, b, 1.0);
    o.require(std::abs(p - 20.0) < 1e-9, fmt("PSNR hand case %.12f != 20 dB", p));

    VolumeGrid g;
    g.dims = {16, 16, 8};
    g.voxels.resize(size_t(g.dims.voxels()));
    for (auto& v : g.voxels) v = float(rng.uniform());
    const double s = ssim(g, g);
    o.require(std::abs(s - 1.0) < 1e-9, fmt("SSIM(a,a) = %.12f != 1", s));
    o.note(fmt("10000 pairs exact, identity err %.2e, psnr err %.2e, ssim err %.2e", identity_err,
               std::abs(p - 20.0), std::abs(s - 1.0)));
    return o;
}

Outcome c5_feature_oracles() {
    Outcome o;
    Rng rng(9);
    int mismatches = 0;
    for (int k = 0; k < 10000; ++k) {
        Dims d{1 + int(rng.uniform_int(6)), 1 + int(rng.uniform_int(6)), 1 + int(rng.uniform_int(6))};
        MaskGrid m;
        m.dims = d;
        m.voxels.resize(size_t(d.voxels()));
        const double p = rng.uniform();
        for (auto& v : m.voxels) v = rng.uniform() < p ? 1 : 0;

        int64_t faces = 0;
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    if (!m.at(x, y, z)) continue;
                    const int nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                                          {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
                    for (const auto& q : nb) {
                        const bool inside = q[0] >= 0 && q[0] < d.w && q[1] >= 0 && q[1] < d.h && q[2] >= 0 &&
                                            q[2] < d.d;
                        if (!inside || !m.at(q[0], q[1], q[2])) ++faces;
                    }
                }
        if (surface_area(m) != faces) ++mismatches;
    }
    o.require(mismatches == 0, fmt("%d of 10000 surface-area brute-force mismatches", mismatches));

    const double expect = std::cbrt(3.14159265358979323846 / 6.0);
    double cube_err = 0.0;
    for (int s : {1, 2, 4, 8}) {
        MaskGrid m;
        m.dims = {s, s, s};
        m.voxels.assign(size_t(m.dims.voxels()), 1);
        cube_err = std::max(cube_err, std::abs(sphericity(voxel_volume(m), surface_area(m)) - expect));
    }
    o.require(cube_err < 1e-4, fmt("cube sphericity err %.3e >= 1e-4", cube_err));
    o.note(fmt("10000 masks exact, cube sphericity err %.2e", cube_err));
    return o;
}

Outcome c6_vae_quality(Context& ctx) {
    Outcome o;
    ctx.data_dir = ctx.work / "data";
    ctx.run_dir = ctx.work / "run";
    generate_dataset(11, 40, PhantomSpec{}, ctx.data_dir);
    ctx.cfg = RunConfig::desk_preset();

    const auto t0 = Clock::now();
    const auto r = train_vae(ctx.cfg, ctx.data_dir, ctx.run_dir);
    const double secs = seconds_since(t0);
    ctx.train_seconds += secs;
    ctx.trained_vae = true;

    o.require(secs <= 900.0, fmt("VAE training took %.0f s > 15 min", secs));
    o.require(r.val.psnr >= r.val.baseline_psnr + 6.0,
              fmt("val PSNR %.2f dB < baseline %.2f + 6 dB", r.val.psnr, r.val.baseline_psnr));
    o.require(r.val.mask_dice >= 0.9, fmt("mask dice %.4f < 0.9 on nonempty slices", r.val.mask_dice));
    o.note(fmt("%.0f s, psnr %.2f vs baseline %.2f dB, mask dice %.4f", secs, r.val.psnr,
               r.val.baseline_psnr, r.val.mask_dice));
    return o;
}

Outcome c7_conditional_generation(Context& ctx) {
    Outcome o;
    if (!ctx.trained_vae) {
        o.require(false, "prerequisite criterion 6 did not train a VAE");
        return o;
    }
    auto t0 = Clock::now();
    encode_dataset(ctx.run_dir, ctx.data_dir);
    train_diffusion(ctx.run_dir, ctx.data_dir);
    ctx.train_seconds += seconds_since(t0);
    ctx.trained_ldm = true;
    o.require(ctx.train_seconds <= 3600.0, fmt("total training %.0f s > 60 min", ctx.train_seconds));

    auto gen = load_generator(ctx.run_dir);
    GenSetSpec spec;
    spec.count = 20;
    spec.sampler = SamplerKind::ddim;
    spec.ddim_steps = 50;
    spec.seed = 101;
    const auto cases = generate_set(gen, gen.stats.median_condition(), spec);
    int nonempty = 0;
    for (const auto& sc : cases) nonempty += sc.measured ? 1 : 0;
    ctx.gen_dir = ctx.work / "gen";
    write_generated_set(cases, spec, ctx.gen_dir);
    o.require(nonempty >= 18, fmt("only %d of 20 median-size samples have nonempty masks", nonempty));

    std::vector<double> grid;
    for (int i = 1; i <= 9; ++i) grid.push_back(0.1 * i);
    const auto sweep = size_sweep(gen, grid, 3, SamplerKind::ddim, 50, 202);
    write_json_file(sweep_report_json(sweep), ctx.work / "sweep.json");
    write_text_file(sweep_report_table(sweep), ctx.work / "sweep.txt");
    o.require(sweep.spearman >= 0.6, fmt("size-sweep spearman %.3f < 0.6", sweep.spearman));
    o.require(sweep.com_drift <= 0.15, fmt("center-of-mass drift %.3f > 0.15", sweep.com_drift));
    o.note(fmt("train %.0f s, nonempty %d/20, spearman %.3f, com drift %.3f", ctx.train_seconds, nonempty,
               sweep.spearman, sweep.com_drift));
    return o;
}

Outcome c8_sampler_speed(Context& ctx) {
    Outcome o;
    if (!ctx.trained_ldm) {
        o.require(false, "prerequisite criterion 7 did not train a denoiser");
        return o;
    }
    auto gen = load_generator(ctx.run_dir);
    const auto c = gen.stats.median_condition();
    auto t0 = Clock::now();
    gen.generate_one(c, SamplerKind::ddim, 50, 404);
    const double ddim_s = seconds_since(t0);
    t0 = Clock::now();
    gen.generate_one(c, SamplerKind::ddpm, 50, 404);
    const double ddpm_s = seconds_since(t0);
    o.require(ddim_s < ddpm_s / 10.0,
              fmt("DDIM-50 %.2f s not 10x faster than DDPM-1000 %.2f s", ddim_s, ddpm_s));
    o.note(fmt("ddim-50 %.2f s vs ddpm-1000 %.2f s (%.1fx)", ddim_s, ddpm_s, ddpm_s / std::max(1e-9, ddim_s)));
    return o;
}

Outcome c9_segbench(Context& ctx) {
    Outcome o;
    if (!ctx.trained_ldm) {
        o.require(false, "prerequisite criterion 7 produced no synthetic cases");
        return o;
    }
    const auto man = read_manifest(ctx.data_dir / "manifest.json");
    const auto gm = read_gen_manifest(ctx.gen_dir / "gen_manifest.json");
    std::vector<SegCase> synth;
    for (const auto& rec : gm.cases)
        synth.push_back({read_volume(ctx.gen_dir / rec.image_path), read_mask(ctx.gen_dir / rec.mask_path)});

    // isolation cross-check in addition to run_benchmark's own assertion
    for (const auto* tr : man.split_cases("train"))
        for (const auto* te : man.split_cases("test"))
            o.require(tr->case_id != te->case_id, "train/test case id overlap");

    SegBenchConfig cfg;
    cfg.train.model.base = 16;
    cfg.train.steps = 240;
    cfg.train.lr = 2e-3;
    cfg.n_seeds = 3;
    cfg.seed_base = 1234;
    const auto t0 = Clock::now();
    const auto results = run_benchmark(man, ctx.data_dir, synth, standard_regimes(20, 20, 5), cfg);
    const double secs = seconds_since(t0);
    write_json_file(benchmark_report_json(results), ctx.work / "segbench.json");
    write_text_file(benchmark_report_table(results), ctx.work / "segbench.txt");

    o.require(secs <= 2700.0, fmt("segbench took %.0f s > 45 min", secs));
    o.require(results.size() == 5, fmt("expected 5 regime rows, got %zu", results.size()));
    double synth_only = -1.0, real_plus = -1.0;
    for (const auto& r : results) {
        o.require(int(r.seeds.size()) >= 3, "regime " + r.regime.name + " ran fewer than 3 seeds");
        if (r.regime.name == "synth_only") synth_only = r.dsc_mean;
        if (r.regime.name == "real_plus_synth") real_plus = r.dsc_mean;
    }
    o.require(synth_only >= 0.0 && real_plus >= 0.0, "missing synth_only or real_plus_synth row");
    o.require(synth_only < real_plus,
              fmt("DSC ordering violated: synth_only %.3f >= real_plus_synth %.3f", synth_only, real_plus));
    o.note(fmt("%.0f s, synth_only %.3f < real_plus_synth %.3f", secs, synth_only, real_plus));
    return o;
}

Outcome c10_determinism(Context& ctx) {
    Outcome o;
    const auto bin = ctx.sblds_bin.string();
    const auto root = ctx.work / "c10";
    fs::create_directories(root);
    const auto log = (root / "cli.log").string();

    auto run = [&](const std::string& args) {
        const std::string cmd = bin + " " + args + " >> " + log + " 2>&1";
        const int rc = std::system(cmd.c_str());
        o.require(rc == 0, "command failed: sblds " + args);
    };
    auto same = [&](const fs::path& rel) {
        o.require(same_bytes(root / "a" / rel, root / "b" / rel),
                  "rerun differs: " + rel.string());
    };

    RunConfig tiny;
    tiny.dims = {16, 16, 8};
    tiny.vae.base = 4;
    tiny.vae.d_pos = 8;
    tiny.vae_lr = 1e-3;
    tiny.vae_steps = 25;
    tiny.vae_batch = 2;
    tiny.denoiser.base_channels = 2;
    tiny.denoiser.d_emb = 8;
    tiny.denoiser.tau_hidden = {4};
    tiny.diffusion_steps = 20;
    tiny.ldm_lr = 1e-3;
    tiny.ldm_steps = 8;
    tiny.ldm_batch = 2;
    tiny.seed = 99;
    write_text_file(tiny.to_json().dump(2) + "\n", root / "tiny_cfg.json");
    const auto cfg_path = (root / "tiny_cfg.json").string();

    for (const char* side : {"a", "b"}) {
        const std::string d = (root / side).string();
        run("gen-data --out " + d + "/data --n 10 --seed 21 --width 16 --height 16 --depth 8 --tumor-min 0.18 --tumor-max 0.30");
        run("features --mask " + d + "/data/case_0000.sblm --out " + d + "/features.json");
        run("train-vae --data " + d + "/data --run " + d + "/run --config " + cfg_path);
        run("encode --data " + d + "/data --run " + d + "/run");
        run("train-ldm --data " + d + "/data --run " + d + "/run");
        run("sample --run " + d + "/run --out " + d + "/gen --n 2 --ddim-steps 5 --seed 5");
        run("size-sweep --run " + d + "/run --out " + d + "/sweep --grid 0.3,0.7 --samples 1 --ddim-steps 5");
        run("eval-gen --gen " + d + "/gen --data " + d + "/data");
        run("segbench --data " + d + "/data --gen " + d + "/gen --out " + d +
            "/seg --n-real 3 --n-synth 2 --aug 2 --seeds 2 --steps 15 --base 4");
    }
    if (!o.pass) return o;

    same("data/manifest.json");
    same("data/case_0000.sblv");
    same("data/case_0000.sblm");
    same("features.json");
    same("run/config.json");
    same("run/vae.sblc");
    same("run/vae_log.json");
    same("run/latents/encode_meta.json");
    same("run/ldm.sblc");
    same("run/ldm_log.json");
    same("gen/gen_manifest.json");
    same("gen/synth_0000.sblv");
    same("gen/synth_0000.sblm");
    same("gen/eval_gen.json");
    same("gen/eval_gen.txt");
    same("sweep/sweep.json");
    same("sweep/sweep.txt");
    same("seg/segbench.json");
    same("seg/segbench.txt");

    // container formats round-trip bit-exactly
    Rng rng(12);
    const auto fdir = root / "formats";
    fs::create_directories(fdir);
    VolumeGrid vg;
    vg.dims = {6, 5, 4};
    vg.voxels.resize(size_t(vg.dims.voxels()));
    for (auto& v : vg.voxels) v = float(rng.uniform());
    write_volume(vg, fdir / "v1.sblv");
    write_volume(read_volume(fdir / "v1.sblv"), fdir / "v2.sblv");
    o.require(same_bytes(fdir / "v1.sblv", fdir / "v2.sblv"), "volume round trip not bit-exact");

    MaskGrid mg;
    mg.dims = vg.dims;
    mg.voxels.resize(vg.voxels.size());
    for (auto& v : mg.voxels) v = rng.uniform_int(2) ? 1 : 0;
    write_mask(mg, fdir / "m1.sblm");
    write_mask(read_mask(fdir / "m1.sblm"), fdir / "m2.sblm");
    o.require(same_bytes(fdir / "m1.sblm", fdir / "m2.sblm"), "mask round trip not bit-exact");

    LatentVolume lv;
    lv.cz = 2;
    lv.w = 3;
    lv.h = 4;
    lv.d = 5;
    lv.code.resize(lv.elements());
    for (auto& v : lv.code) v = float(rng.normal());
    write_latent(lv, fdir / "l1.sblv");
    write_latent(read_latent(fdir / "l1.sblv"), fdir / "l2.sblv");
    o.require(same_bytes(fdir / "l1.sblv", fdir / "l2.sblv"), "latent round trip not bit-exact");

    CheckpointFile ck;
    ck.kind = "test";
    ck.config = {{"alpha", 1}, {"beta", "two"}};
    ck.tensors.emplace_back("w", std::vector<float>{1.5f, -2.25f, 0.125f});
    ck.tensors.emplace_back("b", std::vector<float>{0.f});
    write_checkpoint(ck, fdir / "c1.sblc");
    write_checkpoint(read_checkpoint(fdir / "c1.sblc"), fdir / "c2.sblc");
    o.require(same_bytes(fdir / "c1.sblc", fdir / "c2.sblc"), "checkpoint round trip not bit-exact");

    o.note("9 CLI verbs rerun byte-identical, 4 container formats bit-exact");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    Context ctx;
    ctx.work = fs::temp_directory_path() / "sbld_acceptance";
    fs::remove_all(ctx.work);
    fs::create_directories(ctx.work);
    ctx.sblds_bin = fs::path(argv[0]).parent_path() / "sblds";
    if (const char* env = std::getenv("SBLDS_BIN")) ctx.sblds_bin = env;

    // optional: run a subset of criteria by number (development aid)
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    struct Entry {
        int id;
        const char* title;
        std::function<Outcome()> fn;
    };
    const std::vector<Entry> entries = {
        {1, "schedule algebra", [] { return c1_schedule_algebra(); }},
        {2, "oracle sampler identity", [] { return c2_oracle_sampler(); }},
        {3, "gradient correctness", [] { return c3_gradients(); }},
        {4, "metric oracles", [] { return c4_metric_oracles(); }},
        {5, "feature oracles", [] { return c5_feature_oracles(); }},
        {6, "desk-scale VAE quality", [&] { return c6_vae_quality(ctx); }},
        {7, "end-to-end conditional generation", [&] { return c7_conditional_generation(ctx); }},
        {8, "sampling-time trend", [&] { return c8_sampler_speed(ctx); }},
        {9, "augmentation benchmark shape", [&] { return c9_segbench(ctx); }},
        {10, "determinism and provenance", [&] { return c10_determinism(ctx); }},
    };

    int passed = 0, total = 0;
    const auto t0 = Clock::now();
    for (const auto& e : entries) {
        if (!only.empty() && std::find(only.begin(), only.end(), e.id) == only.end()) continue;
        ++total;
        const auto ct0 = Clock::now();
        Outcome o;
        try {
            o = e.fn();
        } catch (const std::exception& ex) {
            o.pass = false;
            o.detail = std::string("exception: ") + ex.what();
        }
        passed += o.pass ? 1 : 0;
        std::printf("[%s] criterion %d: %s (%s) [%.1f s]\n", o.pass ? "PASS" : "FAIL", e.id, e.title,
                    o.detail.c_str(), seconds_since(ct0));
        std::fflush(stdout);
    }
    std::printf("acceptance: %d/%d criteria passed in %.1f s (artifacts in %s)\n", passed, total,
                seconds_since(t0), ctx.work.string().c_str());
    return passed == total ? 0 : 1;
}
