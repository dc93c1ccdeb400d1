#include "conviction/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "conviction/checkpoint.hpp"
#include "conviction/imageio.hpp"
#include "conviction/kernels.hpp"
#include "conviction/metrics.hpp"
#include "conviction/phantom.hpp"
#include "conviction/solver.hpp"
#include "conviction/training.hpp"

namespace conviction::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
    return json{
        {"seed", 0},
        {"image", {{"n", 32}, {"variant", "classic"}, {"count", 8}, {"noise_sigma", 0.0}}},
        {"mask", {{"pattern", "radial"}, {"ratio", 0.4}}},
        {"model",
         {{"scheme", "two-step-grad"},
          {"layers", 3},
          {"kernels", 4},
          {"kernel_size", 3},
          {"delta", 0.001},
          {"mode", "complex"},
          {"sharing", "shared"},
          {"T", 3},
          {"eps0", 0.001},
          {"eps_gamma", 0.9},
          {"omega", 0.0}}},
        {"solver",
         {{"algorithm", "loa"},
          {"alpha0", 0.01},
          {"tau0", 0.01},
          {"a", 1e5},
          {"sigma", 1e3},
          {"rho", 0.9},
          {"gamma", 0.9},
          {"eps0", 0.001},
          {"eps_tol", 0.001},
          {"t_max", 400},
          {"max_backtracks", 100}}},
        {"train",
         {{"epochs", 100},
          {"lr", 0.001},
          {"batch", 25},
          {"loss", "recon-l2"},
          {"stair", false},
          {"stair_plateau", 10},
          {"stair_threshold", 1e-4},
          {"checkpoint", ""},
          {"resume", ""}}},
        {"bilevel",
         {{"K", 5},
          {"rho_theta", 0.001},
          {"rho_omega", 0.001},
          {"delta0", 0.001},
          {"nu_delta", 0.95},
          {"delta_tol", 4.35e-6},
          {"lambda0", 1e-5},
          {"nu_lambda", 1.001},
          {"batch_tr", 8},
          {"batch_val", 8},
          {"max_outer", 100},
          {"inner_cap", 200},
          {"ratios", json::array({0.1, 0.2, 0.3, 0.4})}}},
        {"data", {{"dir", ""}}},
    };
}

// Reject unknown keys anywhere in the document; merge known ones over defaults.
void merge_validated(json& base, const json& user, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!base.contains(it.key()))
            throw std::runtime_error("config: unknown key '" + path + it.key() + "'");
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object())
            merge_validated(slot, it.value(), path + it.key() + ".");
        else
            slot = it.value();
    }
}

void apply_override(json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("--set expects key=value: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    json* slot = &cfg;
    size_t pos = 0;
    std::string last;
    for (;;) {
        const size_t dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (!slot->contains(part)) throw std::runtime_error("config: unknown key '" + key + "'");
        if (dot == std::string::npos) {
            last = part;
            break;
        }
        slot = &(*slot)[part];
        pos = dot + 1;
    }
    json& target = (*slot)[last];
    json parsed = json::parse(val, nullptr, false);
    if (parsed.is_discarded()) parsed = json(val);  // bare strings
    if (target.is_string() && !parsed.is_string()) parsed = json(val);
    target = parsed;
}

struct Common {
    json cfg;
    uint64_t seed = 0;
    std::string out_dir = "out";
};

ConvStack build_extractor(const json& model, uint64_t seed) {
    Rng rng(split_seed(seed, "weights"));
    const ConvMode mode =
        model.at("mode").get<std::string>() == "split-real" ? ConvMode::SplitReal : ConvMode::Complex;
    return make_stack(model.at("layers").get<int>(), 1, model.at("kernels").get<int>(),
                      model.at("kernel_size").get<int>(), model.at("delta").get<double>(), rng, -1,
                      mode);
}

UnrolledParams build_params(const json& model, uint64_t seed) {
    UnrolledParams p;
    p.scheme = UnrollScheme::TwoStepGrad;
    p.T = model.at("T").get<int>();
    p.sharing = sharing_from_string(model.at("sharing").get<std::string>());
    p.eps0 = model.at("eps0").get<double>();
    p.eps_gamma = model.at("eps_gamma").get<double>();
    const int slots = UnrolledParams::slots_for(p.T, p.sharing);
    Rng rng(split_seed(seed, "weights"));
    const ConvMode mode =
        model.at("mode").get<std::string>() == "split-real" ? ConvMode::SplitReal : ConvMode::Complex;
    for (int i = 0; i < slots; ++i) {
        PhaseOps ops;
        ops.g = make_stack(model.at("layers").get<int>(), 1, model.at("kernels").get<int>(),
                           model.at("kernel_size").get<int>(), model.at("delta").get<double>(), rng,
                           -1, mode);
        p.phases.push_back(std::move(ops));
    }
    p.steps.assign(p.T, StepSizes{0.1, 0.05, 0.0});
    return p;
}

LOAConfig build_solver_config(const json& s) {
    LOAConfig cfg;
    cfg.alpha0 = s.at("alpha0").get<double>();
    cfg.tau0 = s.at("tau0").get<double>();
    cfg.a = s.at("a").get<double>();
    cfg.sigma = s.at("sigma").get<double>();
    cfg.rho = s.at("rho").get<double>();
    cfg.gamma_reduce = s.at("gamma").get<double>();
    cfg.eps0 = s.at("eps0").get<double>();
    cfg.eps_tol = s.at("eps_tol").get<double>();
    cfg.t_max = s.at("t_max").get<int>();
    cfg.max_backtracks = s.at("max_backtracks").get<int>();
    return cfg;
}

ComplexImage make_phantom_variant(int n, PhantomVariant variant, uint64_t seed, int index) {
    if (index == 0) return shepp_logan(n, variant);
    Rng rng(split_seed(seed, "phantom" + std::to_string(index)));
    return shepp_logan_variant(n, variant, rng);
}

KSpaceData simulate_measurement(const ComplexImage& x, const SamplingMask& mask,
                                double noise_sigma, uint64_t seed, int index) {
    KSpaceData y = forward_op(x, mask);
    if (noise_sigma > 0.0) {
        Rng rng(split_seed(seed, "noise" + std::to_string(index)));
        for (c64& v : y.values)
            v += c64(noise_sigma * rng.next_gaussian(), noise_sigma * rng.next_gaussian());
    }
    return y;
}

std::vector<ComplexImage> load_or_make_inputs(const Common& c) {
    const std::string dir = c.cfg["data"]["dir"].get<std::string>();
    std::vector<ComplexImage> imgs;
    if (!dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".cimg") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) imgs.push_back(read_cimg(p.string()));
        if (imgs.empty()) throw std::runtime_error("no .cimg inputs in " + dir);
    } else {
        const json& im = c.cfg["image"];
        const int n = im.at("n").get<int>();
        const int count = im.at("count").get<int>();
        const PhantomVariant v = phantom_variant_from_string(im.at("variant").get<std::string>());
        for (int i = 0; i < count; ++i) imgs.push_back(make_phantom_variant(n, v, c.seed, i));
    }
    return imgs;
}

// -------------------------------------------------------------------------
// phantom
// -------------------------------------------------------------------------

int cmd_phantom(const Common& c) {
    const json& im = c.cfg["image"];
    const int n = im.at("n").get<int>();
    const int count = im.at("count").get<int>();
    const PhantomVariant v = phantom_variant_from_string(im.at("variant").get<std::string>());
    fs::create_directories(c.out_dir);
    for (int i = 0; i < count; ++i) {
        ComplexImage img = make_phantom_variant(n, v, c.seed, i);
        char name[64];
        std::snprintf(name, sizeof(name), "phantom_%03d", i);
        write_cimg(c.out_dir + "/" + name + ".cimg", img);
        write_pgm_magnitude(c.out_dir + "/" + name + ".pgm", img);
    }
    std::cout << "wrote " << count << " phantom(s) to " << c.out_dir << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// recon
// -------------------------------------------------------------------------

int cmd_recon(const Common& c) {
    const json& mj = c.cfg["mask"];
    const json& model = c.cfg["model"];
    const json& sj = c.cfg["solver"];
    const std::string algo = sj.at("algorithm").get<std::string>();
    const double noise_sigma = c.cfg["image"].at("noise_sigma").get<double>();

    std::vector<ComplexImage> refs = load_or_make_inputs(c);
    fs::create_directories(c.out_dir);
    const SamplingMask mask =
        make_mask(mask_pattern_from_string(mj.at("pattern").get<std::string>()),
                  mj.at("ratio").get<double>(), refs[0].height, refs[0].width,
                  split_seed(c.seed, "mask"));
    write_pbm(c.out_dir + "/mask.pbm", mask);

    const bool has_reg = model.at("layers").get<int>() > 0 && model.at("kernels").get<int>() > 0;
    const std::string ckpt_path = c.cfg["train"].at("checkpoint").get<std::string>();

    std::ofstream mcsv(c.out_dir + "/metrics.csv");
    mcsv.precision(17);
    mcsv << "index,psnr,ssim,nmse,rmse,zf_psnr\n";

    for (size_t i = 0; i < refs.size(); ++i) {
        const ComplexImage& ref = refs[i];
        if (ref.height != mask.height || ref.width != mask.width)
            throw std::runtime_error("recon: input size does not match mask");
        KSpaceData y = simulate_measurement(ref, mask, noise_sigma, c.seed, static_cast<int>(i));
        ComplexImage zf = zero_filled(y);

        ComplexImage recon;
        SolveResult sol;
        bool have_trace = false;
        if (algo == "unrolled") {
            UnrolledParams params;
            double omega = model.at("omega").get<double>();
            if (!ckpt_path.empty()) {
                TrainingCheckpoint ck = load_checkpoint(ckpt_path);
                params = ck.params;
                omega = ck.omega;
            } else {
                params = build_params(model, c.seed);
            }
            recon = unrolled_forward(params, y, omega, params.T);
        } else {
            ObjectiveSpec spec;
            spec.num_variables = 1;
            spec.data_terms.push_back(y);
            if (has_reg) {
                RegularizerSpec rs;
                if (!ckpt_path.empty()) {
                    TrainingCheckpoint ck = load_checkpoint(ckpt_path);
                    rs.extractor = *ck.params.phases[0].g;
                    rs.omega = ck.omega;
                } else {
                    rs.extractor = build_extractor(model, c.seed);
                    rs.omega = model.at("omega").get<double>();
                }
                rs.eps = sj.at("eps0").get<double>();
                spec.regularizers.push_back(std::move(rs));
            } else {
                spec.regularizers.emplace_back();
            }
            LOAConfig cfg = build_solver_config(sj);
            sol = algo == "gd" ? gd_smooth_solve(spec, {zf}, cfg) : loa_solve(spec, {zf}, cfg);
            recon = sol.x_final[0];
            have_trace = true;
        }

        char base[64];
        std::snprintf(base, sizeof(base), "recon_%03zu", i);
        write_cimg(c.out_dir + "/" + base + ".cimg", recon);
        write_pgm_magnitude(c.out_dir + "/" + base + ".pgm", recon);
        if (have_trace) write_trace_csv(c.out_dir + "/trace_" + std::to_string(i) + ".csv", sol);

        MetricsReport rep = metrics(recon, ref);
        MetricsReport zrep = metrics(zf, ref);
        mcsv << i << ',' << rep.psnr << ',' << rep.ssim << ',' << rep.nmse << ',' << rep.rmse << ','
             << zrep.psnr << '\n';
    }
    std::cout << "reconstructed " << refs.size() << " image(s) to " << c.out_dir << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// train / train-bilevel
// -------------------------------------------------------------------------

TaskSpec build_task(const Common& c, const SamplingMask& mask, double omega,
                    const std::vector<ComplexImage>& imgs, int train_count) {
    const double noise_sigma = c.cfg["image"].at("noise_sigma").get<double>();
    TaskSpec task;
    task.id = to_string(mask.pattern) + "@" + std::to_string(mask.ratio);
    task.mask = mask;
    task.omega = omega;
    for (size_t i = 0; i < imgs.size(); ++i) {
        Sample s;
        s.y = simulate_measurement(imgs[i], mask, noise_sigma, c.seed, static_cast<int>(i));
        s.ref = imgs[i];
        if (static_cast<int>(i) < train_count)
            task.train_pairs.push_back(std::move(s));
        else
            task.val_pairs.push_back(std::move(s));
    }
    return task;
}

int cmd_train(const Common& c) {
    const json& mj = c.cfg["mask"];
    const json& model = c.cfg["model"];
    const json& tj = c.cfg["train"];

    std::vector<ComplexImage> imgs = load_or_make_inputs(c);
    if (imgs.size() < 2) throw std::runtime_error("train: need at least 2 images (train + val)");
    const int train_count = std::max(1, static_cast<int>(imgs.size()) - 1);
    const SamplingMask mask =
        make_mask(mask_pattern_from_string(mj.at("pattern").get<std::string>()),
                  mj.at("ratio").get<double>(), imgs[0].height, imgs[0].width,
                  split_seed(c.seed, "mask"));
    TaskSpec task = build_task(c, mask, model.at("omega").get<double>(), imgs, train_count);

    TrainingCheckpoint ck;
    const std::string resume = tj.at("resume").get<std::string>();
    if (!resume.empty()) {
        ck = load_checkpoint(resume);
    } else {
        ck.params = build_params(model, c.seed);
        ck.omega = task.omega;
    }
    task.omega = ck.omega;

    ConventionalConfig cfg;
    cfg.epochs = tj.at("epochs").get<long>();
    cfg.adam.lr = tj.at("lr").get<double>();
    cfg.batch_size = tj.at("batch").get<int>();
    cfg.seed = split_seed(c.seed, "train");
    cfg.stair.enabled = tj.at("stair").get<bool>();
    cfg.stair.plateau_epochs = tj.at("stair_plateau").get<int>();
    cfg.stair.rel_threshold = tj.at("stair_threshold").get<double>();
    cfg.loss = make_loss(loss_kind_from_string(tj.at("loss").get<std::string>()));

    std::vector<TrainHistoryRow> history = conventional_train(task, ck, cfg);

    fs::create_directories(c.out_dir);
    save_checkpoint(c.out_dir + "/checkpoint.json", ck);
    write_history_csv(c.out_dir + "/history.csv", history);
    std::cout << "trained " << history.size() << " epoch(s); checkpoint in " << c.out_dir << "\n";
    return 0;
}

int cmd_train_bilevel(const Common& c) {
    const json& mj = c.cfg["mask"];
    const json& model = c.cfg["model"];
    const json& bj = c.cfg["bilevel"];

    std::vector<ComplexImage> imgs = load_or_make_inputs(c);
    if (imgs.size() < 2) throw std::runtime_error("train-bilevel: need at least 2 images");
    const int train_count = std::max(1, static_cast<int>(imgs.size()) - 1);

    std::vector<TaskSpec> tasks;
    int ti = 0;
    for (const auto& r : bj.at("ratios")) {
        const SamplingMask mask =
            make_mask(mask_pattern_from_string(mj.at("pattern").get<std::string>()),
                      r.get<double>(), imgs[0].height, imgs[0].width,
                      split_seed(c.seed, "mask" + std::to_string(ti++)));
        tasks.push_back(build_task(c, mask, model.at("omega").get<double>(), imgs, train_count));
    }

    BilevelConfig cfg;
    cfg.K = bj.at("K").get<int>();
    cfg.rho_theta = bj.at("rho_theta").get<double>();
    cfg.rho_omega = bj.at("rho_omega").get<double>();
    cfg.delta0 = bj.at("delta0").get<double>();
    cfg.nu_delta = bj.at("nu_delta").get<double>();
    cfg.delta_tol = bj.at("delta_tol").get<double>();
    cfg.lambda0 = bj.at("lambda0").get<double>();
    cfg.nu_lambda = bj.at("nu_lambda").get<double>();
    cfg.batch_tr = bj.at("batch_tr").get<int>();
    cfg.batch_val = bj.at("batch_val").get<int>();
    cfg.max_outer = bj.at("max_outer").get<int>();
    cfg.inner_cap = bj.at("inner_cap").get<int>();
    cfg.seed = split_seed(c.seed, "bilevel");

    UnrolledParams params0 = build_params(model, c.seed);
    LossSpec loss = make_loss(loss_kind_from_string(c.cfg["train"].at("loss").get<std::string>()));
    BilevelTrainResult res = bilevel_train(tasks, params0, cfg, loss, params0.T);

    fs::create_directories(c.out_dir);
    TrainingCheckpoint ck;
    ck.params = res.params;
    ck.omega = res.task_omegas.empty() ? 0.0 : res.task_omegas[0];
    save_checkpoint(c.out_dir + "/checkpoint.json", ck);
    write_bilevel_history_csv(c.out_dir + "/history.csv", res);
    {
        std::ofstream f(c.out_dir + "/task_omegas.csv");
        f.precision(17);
        f << "task,omega,kappa\n";
        for (size_t i = 0; i < res.task_omegas.size(); ++i)
            f << tasks[i].id << ',' << res.task_omegas[i] << ',' << sigmoid(res.task_omegas[i])
              << '\n';
    }
    std::cout << "bilevel training: " << res.delta_reductions << " delta reduction(s); output in "
              << c.out_dir << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// check suites
// -------------------------------------------------------------------------

struct CheckReport {
    std::vector<std::tuple<std::string, bool, double>> rows;  // name, pass, measure

    void add(const std::string& name, bool pass, double measure) {
        rows.emplace_back(name, pass, measure);
    }
    bool all_pass() const {
        for (const auto& [n, p, m] : rows)
            if (!p) return false;
        return true;
    }
};

ComplexImage random_image(int h, int w, Rng& rng) {
    ComplexImage x(h, w);
    for (c64& z : x.data) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    return x;
}

void check_adjoint(CheckReport& rep, uint64_t seed) {
    Rng rng(split_seed(seed, "check-adjoint"));
    double worst_dot = 0.0, worst_parseval = 0.0;
    for (int it = 0; it < 100; ++it) {
        ComplexImage x = random_image(16, 16, rng);
        SamplingMask mask = make_mask(MaskPattern::UniformRandom, 0.4, 16, 16, rng.next_u64());
        KSpaceData ax = forward_op(x, mask);
        KSpaceData y = ax;
        for (c64& v : y.values) v = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
        ComplexImage aty = adjoint_op(y);
        c64 lhs(0, 0), rhs(0, 0);
        for (size_t i = 0; i < ax.values.size(); ++i) lhs += std::conj(ax.values[i]) * y.values[i];
        for (size_t i = 0; i < x.data.size(); ++i) rhs += std::conj(x.data[i]) * aty.data[i];
        const double xn = norm2(x.data), yn = norm2(y.values);
        worst_dot = std::max(worst_dot, std::abs(lhs - rhs) / (1.0 + xn * yn));
        worst_parseval = std::max(worst_parseval, std::abs(norm2(fft2(x).data) - xn));
    }
    rep.add("adjoint_dot_product", worst_dot <= 1e-10, worst_dot);
    rep.add("parseval", worst_parseval <= 1e-10, worst_parseval);
}

void check_sandwich(CheckReport& rep, uint64_t seed) {
    Rng rng(split_seed(seed, "check-sandwich"));
    double worst = 0.0, worst_mono = 0.0;
    for (int it = 0; it < 100; ++it) {
        FeatureMap F(3, 5, 5);
        for (c64& z : F.data) z = c64(rng.uniform(-2, 2), rng.uniform(-2, 2));
        const double eps = rng.uniform(0.01, 1.0);
        const double m = F.positions();
        const double le = l21_smoothed(F, eps), l0 = l21_smoothed(F, 0.0);
        worst = std::max(worst, le - l0);
        worst = std::max(worst, l0 - (le + m * eps));
        const double eps2 = eps * rng.uniform(0.1, 1.0);
        worst_mono =
            std::max(worst_mono, (l21_smoothed(F, eps2) + m * eps2) - (l21_smoothed(F, eps) + m * eps));
    }
    rep.add("sandwich", worst <= 1e-10, worst);
    rep.add("eps_monotonicity", worst_mono <= 1e-10, worst_mono);
}

void check_gradients(CheckReport& rep, uint64_t seed) {
    Rng rng(split_seed(seed, "check-grad"));
    // smooth_relu derivative
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double delta = 0.05, h = 1e-6;
        const double x = rng.uniform(-0.5, 0.5);
        const double fd = (kernels::smooth_relu_scalar(x + h, delta) -
                           kernels::smooth_relu_scalar(x - h, delta)) /
                          (2 * h);
        worst = std::max(worst, std::abs(fd - kernels::smooth_relu_deriv_scalar(x, delta)));
    }
    rep.add("smooth_relu_fd", worst <= 1e-8, worst);

    // r_eps gradient against central differences
    Rng wrng(split_seed(seed, "check-grad-w"));
    RegularizerSpec rs{make_stack(2, 1, 3, 3, 0.05, wrng), 0.1, 0.3};
    ComplexImage x = random_image(8, 8, rng);
    RegValue rv = r_eps(rs, x);
    double worst_rel = 0.0;
    const double h = 1e-6;
    for (int i = 0; i < 16; ++i) {
        const size_t idx = rng.next_below(x.data.size());
        for (int part = 0; part < 2; ++part) {
            ComplexImage xp = x, xm = x;
            const c64 dz = part == 0 ? c64(h, 0) : c64(0, h);
            xp.data[idx] += dz;
            xm.data[idx] -= dz;
            const double fd = (r_eps_value(rs, xp) - r_eps_value(rs, xm)) / (2 * h);
            const double an =
                part == 0 ? rv.grad.data[idx].real() : rv.grad.data[idx].imag();
            worst_rel = std::max(worst_rel, std::abs(fd - an) / std::max(1e-6, std::abs(fd)));
        }
    }
    rep.add("r_eps_grad_fd", worst_rel <= 1e-5, worst_rel);

    // data fidelity gradient
    SamplingMask mask = make_mask(MaskPattern::Radial, 0.5, 8, 8, 11);
    ComplexImage xr = random_image(8, 8, rng);
    KSpaceData y = forward_op(random_image(8, 8, rng), mask);
    FidelityResult fr = data_fidelity(xr, y);
    double worst_fid = 0.0;
    for (int i = 0; i < 16; ++i) {
        const size_t idx = rng.next_below(xr.data.size());
        for (int part = 0; part < 2; ++part) {
            ComplexImage xp = xr, xm = xr;
            const c64 dz = part == 0 ? c64(h, 0) : c64(0, h);
            xp.data[idx] += dz;
            xm.data[idx] -= dz;
            const double fd =
                (data_fidelity(xp, y).value - data_fidelity(xm, y).value) / (2 * h);
            const double an = part == 0 ? fr.grad.data[idx].real() : fr.grad.data[idx].imag();
            worst_fid = std::max(worst_fid, std::abs(fd - an) / std::max(1e-6, std::abs(fd)));
        }
    }
    rep.add("data_fidelity_grad_fd", worst_fid <= 1e-5, worst_fid);
}

void check_descent(CheckReport& rep, uint64_t seed) {
    double worst = 0.0;
    bool certs = true;
    for (int inst = 0; inst < 5; ++inst) {
        Rng rng(split_seed(seed, "check-descent" + std::to_string(inst)));
        ComplexImage ref = shepp_logan(16);
        SamplingMask mask = make_mask(MaskPattern::Radial, 0.4, 16, 16, rng.next_u64());
        KSpaceData y = forward_op(ref, mask);
        ObjectiveSpec spec;
        spec.num_variables = 1;
        spec.data_terms.push_back(y);
        spec.regularizers.push_back(RegularizerSpec{make_stack(2, 1, 2, 3, 1e-3, rng), 1e-3, 0.0});
        LOAConfig cfg;
        cfg.t_max = 30;
        cfg.eps_tol = 0.0;
        SolveResult res = loa_solve(spec, {zero_filled(y)}, cfg);
        const double m = res.position_count;
        for (size_t i = 0; i + 1 < res.trace.size(); ++i) {
            const auto& a = res.trace[i];
            const auto& b = res.trace[i + 1];
            worst = std::max(worst, (b.phi + m * b.eps) - (a.phi + m * a.eps));
            const bool suff = a.phi_after - a.phi <= -(a.step_norm * a.step_norm) / cfg.a + 1e-15;
            const bool ucert = a.branch != 'u' || a.grad_norm_pre <= cfg.a * a.step_norm;
            certs = certs && suff && ucert;
        }
    }
    rep.add("descent_m_eps", worst <= 1e-12, worst);
    rep.add("step_certificates", certs, certs ? 0.0 : 1.0);
}

void check_mlm(CheckReport& rep, uint64_t seed) {
    double worst = 0.0;
    for (int it = 0; it < 5; ++it) {
        Rng rng(split_seed(seed, "check-mlm" + std::to_string(it)));
        UnrolledParams p;
        p.scheme = UnrollScheme::TwoStepGrad;
        p.T = 2;
        p.sharing = Sharing::PerPhase;
        for (int i = 0; i < 2; ++i) {
            PhaseOps ops;
            ops.g = make_stack(2, 1, 2, 3, 0.05, rng);
            p.phases.push_back(std::move(ops));
            p.steps.push_back(StepSizes{0.05, 0.05, 0.0});
        }
        SamplingMask mask = make_mask(MaskPattern::UniformRandom, 0.5, 8, 8, rng.next_u64());
        Sample s;
        s.ref = random_image(8, 8, rng);
        s.y = forward_op(s.ref, mask);
        LossSpec loss = make_loss(LossKind::ReconL2);
        BatchGrad bp = backprop_unrolled(p, {s}, 0.3, loss, 2);
        BatchGrad ml = mlm_gradients(p, {s}, 0.3, loss, 2);
        for (size_t i = 0; i < bp.grad.values.size(); ++i)
            worst = std::max(worst, std::abs(bp.grad.values[i] - ml.grad.values[i]));
        worst = std::max(worst, std::abs(bp.grad.d_omega - ml.grad.d_omega));
    }
    rep.add("mlm_equals_backprop", worst <= 1e-10, worst);
}

int cmd_check(const Common& c, const std::string& suite) {
    CheckReport rep;
    if (suite == "adjoint")
        check_adjoint(rep, c.seed);
    else if (suite == "sandwich")
        check_sandwich(rep, c.seed);
    else if (suite == "gradients")
        check_gradients(rep, c.seed);
    else if (suite == "descent")
        check_descent(rep, c.seed);
    else if (suite == "mlm")
        check_mlm(rep, c.seed);
    else
        throw std::runtime_error("unknown check suite: " + suite);

    fs::create_directories(c.out_dir);
    std::ofstream f(c.out_dir + "/check_" + suite + ".csv");
    f.precision(17);
    f << "check,status,measure\n";
    for (const auto& [name, pass, measure] : rep.rows) {
        f << name << ',' << (pass ? "pass" : "FAIL") << ',' << measure << '\n';
        std::cout << (pass ? "[pass] " : "[FAIL] ") << name << " (" << measure << ")\n";
    }
    return rep.all_pass() ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    kernels::configure_threads_from_env();
    CLI::App app{"compressed-sensing MRI reconstruction toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", suite = "adjoint";
    uint64_t seed = 0;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "root seed (split per consumer)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--set", overrides, "override config key, key=value")->take_all();
    };

    CLI::App* phantom = app.add_subcommand("phantom", "write synthetic phantoms");
    CLI::App* recon = app.add_subcommand("recon", "reconstruct undersampled measurements");
    CLI::App* train = app.add_subcommand("train", "conventional single-task training");
    CLI::App* trainb = app.add_subcommand("train-bilevel", "penalty-method multi-task training");
    CLI::App* check = app.add_subcommand("check", "run an invariant suite");
    check->add_option("--suite", suite, "gradients|descent|adjoint|mlm|sandwich");
    for (CLI::App* cmd : {phantom, recon, train, trainb, check}) add_common(cmd);

    std::vector<const char*> argv;
    argv.push_back("conviction");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Common c;
        c.cfg = default_config();
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw std::runtime_error("cannot open config: " + config_path);
            json user;
            f >> user;
            merge_validated(c.cfg, user, "");
        }
        for (const std::string& kv : overrides) apply_override(c.cfg, kv);
        if (app.get_subcommand()->count("--seed") == 0 && c.cfg.contains("seed"))
            seed = c.cfg["seed"].get<uint64_t>();
        c.seed = seed;
        c.out_dir = out_dir;

        if (phantom->parsed()) return cmd_phantom(c);
        if (recon->parsed()) return cmd_recon(c);
        if (train->parsed()) return cmd_train(c);
        if (trainb->parsed()) return cmd_train_bilevel(c);
        if (check->parsed()) return cmd_check(c, suite);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace conviction::cli
