// Experiment runner: train | gradcheck | eval | dump-samples.
//
// Common flags: --config PATH, --seed N, --out DIR, --set key=value (repeat).
// Exit codes: 0 success, 1 failed check / runtime abort, 2 bad usage or
// configuration (the message names the offending key).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "direal/checkpoint.hpp"
#include "direal/config.hpp"
#include "direal/diversity.hpp"
#include "direal/errors.hpp"
#include "direal/gan.hpp"
#include "direal/metrics.hpp"
#include "direal/nn.hpp"

namespace fs = std::filesystem;
using namespace direal;

namespace {

struct Options {
    std::string command;
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::vector<std::string> sets;
    std::optional<std::string> checkpoint;
    std::optional<std::size_t> n;
    bool corrupt = false;  // gradcheck self-test hook
};

[[noreturn]] void usage_error(const std::string& msg) {
    throw UsageError(msg +
                     "\nusage: direal_cli <train|gradcheck|eval|dump-samples>"
                     " [--config PATH] [--seed N] [--out DIR] [--set key=value]..."
                     " [--checkpoint PREFIX] [--n COUNT]");
}

std::string need_value(int argc, char** argv, int& i, const std::string& flag) {
    if (i + 1 >= argc) usage_error("flag " + flag + " needs a value");
    return argv[++i];
}

Options parse_args(int argc, char** argv) {
    if (argc < 2) usage_error("missing subcommand");
    Options opt;
    opt.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config") {
            opt.config_path = need_value(argc, argv, i, arg);
        } else if (arg == "--seed") {
            const std::string v = need_value(argc, argv, i, arg);
            try {
                std::size_t pos = 0;
                opt.seed = std::stoull(v, &pos);
                if (pos != v.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                usage_error("--seed expects a non-negative integer, got '" + v + "'");
            }
        } else if (arg == "--out") {
            opt.out_dir = need_value(argc, argv, i, arg);
        } else if (arg == "--set") {
            opt.sets.push_back(need_value(argc, argv, i, arg));
        } else if (arg == "--checkpoint") {
            opt.checkpoint = need_value(argc, argv, i, arg);
        } else if (arg == "--n") {
            const std::string v = need_value(argc, argv, i, arg);
            try {
                std::size_t pos = 0;
                opt.n = std::stoull(v, &pos);
                if (pos != v.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                usage_error("--n expects a non-negative integer, got '" + v + "'");
            }
        } else if (arg == "--corrupt") {
            opt.corrupt = true;
        } else {
            usage_error("unknown flag '" + arg + "'");
        }
    }
    return opt;
}

ConfigMap assemble_config(const Options& opt) {
    ConfigMap cfg;
    if (opt.config_path) cfg = parse_config_file(*opt.config_path);
    for (const std::string& kv : opt.sets) apply_override(cfg, kv);
    if (opt.seed) cfg.set("seed", std::to_string(*opt.seed));
    if (opt.out_dir) cfg.set("out_dir", *opt.out_dir);
    return cfg;
}

std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Sample dumps
// ---------------------------------------------------------------------------

void write_points_csv(const fs::path& path, const Tensor& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot open '" + path.string() + "' for writing");
    const std::size_t n = samples.dim(0);
    for (std::size_t i = 0; i < n; ++i)
        out << g17(samples[2 * i]) << "," << g17(samples[2 * i + 1]) << "\n";
}

void write_pgm_grid(const fs::path& path, const Tensor& samples) {
    if (samples.rank() != 4 || samples.dim(1) != 1)
        throw UsageError("image dumps need single-channel [n,1,H,W] samples, got " +
                         samples.shape_str());
    const std::size_t n = samples.dim(0), h = samples.dim(2), w = samples.dim(3);
    const std::size_t cols = 8;
    const std::size_t rows = (n + cols - 1) / cols;
    const std::size_t width = cols * w, height = rows * h;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> line(width);
    for (std::size_t gr = 0; gr < rows; ++gr)
        for (std::size_t py = 0; py < h; ++py) {
            for (std::size_t gc = 0; gc < cols; ++gc) {
                const std::size_t img = gr * cols + gc;
                for (std::size_t px = 0; px < w; ++px) {
                    double v = 0.0;
                    if (img < n) v = samples[(img * h + py) * w + px];
                    double byte = std::round((v + 1.0) * 127.5);
                    if (byte < 0.0) byte = 0.0;
                    if (byte > 255.0) byte = 255.0;
                    line[gc * w + px] = static_cast<unsigned char>(byte);
                }
            }
            out.write(reinterpret_cast<const char*>(line.data()),
                      static_cast<std::streamsize>(width));
        }
}

void dump_samples(const fs::path& dir, const std::string& stem, const Tensor& samples) {
    if (samples.rank() == 2 && samples.dim(1) == 2) {
        write_points_csv(dir / (stem + ".csv"), samples);
    } else if (samples.rank() == 4) {
        write_pgm_grid(dir / (stem + ".pgm"), samples);
    } else {
        throw UsageError("cannot dump samples of shape " + samples.shape_str());
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const Options& opt) {
    const ConfigMap cfg = assemble_config(opt);
    const Dataset data = build_dataset(cfg);
    const TrainConfig tc = build_train_config(cfg);
    const fs::path out_dir = cfg.get_str("out_dir", "out");
    fs::create_directories(out_dir);

    const std::size_t checkpoint_every = cfg.get_count("checkpoint_every", 0);
    const std::size_t sample_every = cfg.get_count("sample_every", 500);
    const std::size_t sample_n = cfg.get_count("sample_n", 1024);

    Trainer trainer(tc, data);

    std::ofstream csv(out_dir / "history.csv", std::ios::binary);
    if (!csv) throw UsageError("cannot open history.csv under '" + out_dir.string() + "'");
    csv << "step,d_loss,g_loss,J_D,J_G,w_div,d_real_mean,d_fake_mean";
    const std::size_t tracked =
        trainer.disc_selected().size() + trainer.gen_selected().size();
    for (std::size_t i = 0; i < tracked; ++i) csv << ",max_cos_l" << i;
    csv << "\n";

    auto save_pair = [&](const std::string& prefix) {
        save_network((out_dir / (prefix + "_gen.ckpt")).string(), trainer.model().gen);
        save_network((out_dir / (prefix + "_disc.ckpt")).string(), trainer.model().disc);
    };

    try {
        trainer.train(
            [&](const MetricsRecord& r) {
                csv << r.step << "," << g17(r.d_loss) << "," << g17(r.g_loss) << ","
                    << g17(r.j_d) << "," << g17(r.j_g) << "," << g17(r.w_div) << ","
                    << g17(r.d_real_mean) << "," << g17(r.d_fake_mean);
                for (double c : r.max_cos) csv << "," << g17(c);
                csv << "\n";
            },
            [&](long step) {
                if (checkpoint_every > 0 &&
                    step % static_cast<long>(checkpoint_every) == 0)
                    save_pair("step_" + std::to_string(step));
                if (sample_every > 0 && step % static_cast<long>(sample_every) == 0)
                    dump_samples(out_dir, "samples_step_" + std::to_string(step),
                                 trainer.sample(sample_n, tc.seed + static_cast<std::uint64_t>(step)));
            });
    } catch (const TrainingDiverged& e) {
        csv.flush();
        save_pair("diverged");
        std::cerr << "training aborted: " << e.what() << "\n"
                  << "diagnostic state written to " << out_dir.string()
                  << "/diverged_{gen,disc}.ckpt\n";
        return 1;
    }

    save_pair("final");
    dump_samples(out_dir, "samples_final", trainer.sample(sample_n, tc.seed));
    std::cout << "trained " << trainer.total_steps() << " steps; artifacts in "
              << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    double err;
    double threshold;
    bool pass() const { return err < threshold; }
};

// Random kernel matrix whose Gram entries all sit > margin away from tau,
// so finite differencing cannot flip the mask.
KernelMatrix margin_instance(std::size_t m, std::size_t n, double tau, GramVariant variant,
                             std::mt19937_64& rng, double margin = 1e-3) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
    for (int attempt = 0; attempt < 10000; ++attempt) {
        KernelMatrix km;
        km.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        for (Eigen::Index j = 0; j < km.values.cols(); ++j)
            for (Eigen::Index i = 0; i < km.values.rows(); ++i) km.values(i, j) = dist(rng);
        km.column_norms = km.values.colwise().norm();
        const GramMatrix omega = gram(km, variant);
        bool ok = true;
        for (Eigen::Index i = 0; i < omega.values.rows() && ok; ++i)
            for (Eigen::Index j = 0; j < omega.values.cols() && ok; ++j) {
                if (i == j) continue;
                if (std::abs(std::abs(omega.values(i, j)) - tau) <= margin) ok = false;
            }
        if (ok) return km;
    }
    throw UsageError("could not draw a mask-stable instance");
}

double fd_diversity_max_rel_err(const KernelMatrix& km, const DiversityConfig& cfg,
                                double h = 1e-6) {
    const Eigen::MatrixXd g = diversity_grad_exact(km, cfg);
    double gmax = 0.0, dmax = 0.0;
    KernelMatrix probe = km;
    for (Eigen::Index j = 0; j < km.values.cols(); ++j)
        for (Eigen::Index i = 0; i < km.values.rows(); ++i) {
            const double orig = probe.values(i, j);
            probe.values(i, j) = orig + h;
            const double up = diversity_loss(probe, cfg);
            probe.values(i, j) = orig - h;
            const double down = diversity_loss(probe, cfg);
            probe.values(i, j) = orig;
            const double fd = (up - down) / (2.0 * h);
            dmax = std::max(dmax, std::abs(fd - g(i, j)));
            gmax = std::max(gmax, std::abs(g(i, j)));
        }
    return dmax / std::max(gmax, 1e-12);
}

int cmd_gradcheck(const Options& opt) {
    std::vector<CheckResult> results;
    std::mt19937_64 rng(opt.seed.value_or(7));

    // 1. Exact diversity gradient vs central finite differences.
    {
        double worst = 0.0;
        for (GramVariant variant : {GramVariant::raw, GramVariant::cosine})
            for (double tau : {0.0, 0.3, 0.5, 0.8})
                for (int rep = 0; rep < 3; ++rep) {
                    DiversityConfig dc;
                    dc.tau = tau;
                    dc.variant = variant;
                    const KernelMatrix km = margin_instance(12, 6, tau, variant, rng);
                    worst = std::max(worst, fd_diversity_max_rel_err(km, dc));
                }
        results.push_back({"diversity_grad_vs_fd", worst, 1e-5});
    }

    // 2. Direct product form is exactly half of the raw-variant gradient.
    {
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            DiversityConfig dc;
            dc.tau = 0.4;
            dc.variant = GramVariant::raw;
            const KernelMatrix km = margin_instance(10, 5, dc.tau, dc.variant, rng);
            const Eigen::MatrixXd direct = diversity_grad_direct(km, dc);
            const Eigen::MatrixXd exact = diversity_grad_exact(km, dc);
            worst = std::max(worst, (direct - 0.5 * exact).cwiseAbs().maxCoeff());
        }
        results.push_back({"direct_form_half_exact", worst, 1e-12});
    }

    // 3. Full discriminator objective (adversarial + weighted diversity).
    {
        DiversityConfig dc;  // cosine, tau 0.5
        const double lambda_d = 1.0;
        const std::vector<LayerSpec> arch = {
            LayerSpec::Dense(2, 16),  LayerSpec::Act(ActKind::leaky_relu),
            LayerSpec::Dense(16, 16), LayerSpec::Act(ActKind::leaky_relu),
            LayerSpec::Dense(16, 1),  LayerSpec::Act(ActKind::sigmoid)};
        Network disc = build_network(arch, rng());

        const std::size_t B = 16;
        Tensor both({2 * B, 2});
        std::normal_distribution<double> pts(0.0, 1.0);
        for (std::size_t i = 0; i < both.size(); ++i) both[i] = pts(rng);

        auto loss_at = [&]() {
            Tensor p = disc.forward(both, true);
            std::vector<double> pr(p.data(), p.data() + B);
            std::vector<double> pf(p.data() + B, p.data() + 2 * B);
            return d_loss(pr, pf) + lambda_d * diversity_total(disc, dc);
        };

        // Analytic pass.
        disc.zero_grads();
        Tensor p = disc.forward(both, true);
        Tensor dp = Tensor::zeros_like(p);
        const double nb = static_cast<double>(B);
        for (std::size_t i = 0; i < B; ++i) dp[i] = -1.0 / (nb * p[i]);
        for (std::size_t i = B; i < 2 * B; ++i) dp[i] = 1.0 / (nb * (1.0 - p[i]));
        disc.backward(dp);
        apply_diversity(disc, dc, lambda_d);

        double gmax = 0.0, dmax = 0.0;
        const double h = 1e-6;
        for (std::size_t li : effective_selector(disc, dc)) {
            for (const ParamView& pv : disc.layer(li).params()) {
                for (std::size_t k = 0; k < pv.value->size(); ++k) {
                    double analytic = (*pv.grad)[k];
                    if (opt.corrupt) analytic *= 1.01;  // self-test hook: inject 1% error
                    const double orig = (*pv.value)[k];
                    (*pv.value)[k] = orig + h;
                    const double up = loss_at();
                    (*pv.value)[k] = orig - h;
                    const double down = loss_at();
                    (*pv.value)[k] = orig;
                    const double fd = (up - down) / (2.0 * h);
                    dmax = std::max(dmax, std::abs(fd - analytic));
                    gmax = std::max(gmax, std::abs(analytic));
                }
            }
        }
        results.push_back({"full_model_grad_vs_fd", dmax / std::max(gmax, 1e-12), 1e-4});
    }

    bool all_pass = true;
    for (const CheckResult& r : results) {
        std::cout << r.name << ": max rel err " << g17(r.err) << " (threshold "
                  << g17(r.threshold) << ") " << (r.pass() ? "PASS" : "FAIL") << "\n";
        all_pass = all_pass && r.pass();
    }
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const Options& opt) {
    if (!opt.checkpoint) usage_error("eval needs --checkpoint PREFIX");
    const ConfigMap cfg = assemble_config(opt);
    const Dataset data = build_dataset(cfg);
    const TrainConfig tc = build_train_config(cfg);
    const fs::path out_dir = cfg.get_str("out_dir", "out");
    fs::create_directories(out_dir);

    Network gen = load_network(*opt.checkpoint + "_gen.ckpt");
    Network disc = load_network(*opt.checkpoint + "_disc.ckpt");

    const std::size_t eval_n = cfg.get_count("eval_n", 2048);
    const std::uint64_t eval_seed = cfg.get_u64("eval_seed", 9999);
    const std::size_t eval_batches = cfg.get_count("eval_batches", 30);

    // Latent width from the generator itself so a checkpoint/config mismatch
    // cannot silently sample garbage.
    std::size_t latent = tc.latent_dim;
    for (std::size_t i = 0; i < gen.size(); ++i)
        if (gen.layer(i).has_kernel()) {
            const LayerSpec s = gen.layer(i).spec();
            if (s.kind == LayerSpec::Kind::dense) latent = s.fan_in;
            break;
        }

    std::mt19937_64 rng(eval_seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor z({eval_n, latent});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = dist(rng);
    Tensor samples = gen.forward(z, false);

    std::ofstream out(out_dir / "eval.jsonl", std::ios::binary);
    if (!out) throw UsageError("cannot open eval.jsonl under '" + out_dir.string() + "'");

    if (samples.rank() == 2 && samples.dim(1) == 2 && !data.centers.empty()) {
        std::vector<std::array<double, 2>> pts(eval_n);
        for (std::size_t i = 0; i < eval_n; ++i)
            pts[i] = {samples[2 * i], samples[2 * i + 1]};
        const Coverage cov = mode_coverage(pts, ModeSpec{data.centers, data.sigma});
        nlohmann::json j;
        j["metric"] = "mode_coverage";
        j["covered"] = cov.covered;
        j["modes"] = data.centers.size();
        j["hq_fraction"] = cov.hq_fraction;
        j["n_samples"] = eval_n;
        out << j.dump() << "\n";
    }

    // Pooled discriminator scores over eval_batches real and fake batches.
    {
        const std::size_t B = tc.batch_size;
        const std::size_t usable = std::min(eval_batches * B, data.size());
        std::vector<double> real_scores, fake_scores;
        for (std::size_t start = 0; start + B <= usable; start += B) {
            std::vector<std::size_t> idx(B);
            std::iota(idx.begin(), idx.end(), start);
            Tensor pr = disc.forward(data.batch(idx), false);
            real_scores.insert(real_scores.end(), pr.data(), pr.data() + pr.size());
        }
        for (std::size_t b = 0; b < eval_batches; ++b) {
            Tensor zb({B, latent});
            for (std::size_t i = 0; i < zb.size(); ++i) zb[i] = dist(rng);
            Tensor pf = disc.forward(gen.forward(zb, false), false);
            fake_scores.insert(fake_scores.end(), pf.data(), pf.data() + pf.size());
        }
        nlohmann::json j;
        j["metric"] = "w_div";
        j["value"] = wasserstein1d(real_scores, fake_scores);
        j["batches"] = eval_batches;
        j["batch_size"] = B;
        out << j.dump() << "\n";
    }

    // Cosine structure of every regularized layer, both players.
    DiversityConfig div_d = tc.div, div_g = tc.div;
    div_d.layer_selector = tc.d_layers;
    div_g.layer_selector = tc.g_layers;
    auto emit_cosine = [&](Network& net, const char* player, const DiversityConfig& dc) {
        for (std::size_t idx : effective_selector(net, dc)) {
            Layer& layer = net.layer(idx);
            const auto stats = cosine_stats(unroll(layer.weights(), layer.kernel_shape()));
            nlohmann::json j;
            j["metric"] = "cosine";
            j["player"] = player;
            j["layer"] = idx;
            if (stats) {
                j["skipped"] = false;
                j["max_offdiag"] = stats->max_offdiag;
                j["mean_abs"] = stats->mean_abs;
                j["histogram"] = stats->histogram;
            } else {
                j["skipped"] = true;
            }
            out << j.dump() << "\n";
        }
    };
    emit_cosine(disc, "discriminator", div_d);
    emit_cosine(gen, "generator", div_g);

    {
        nlohmann::json j;
        j["metric"] = "diversity";
        j["j_d"] = diversity_total(disc, div_d);
        j["j_g"] = diversity_total(gen, div_g);
        out << j.dump() << "\n";
    }

    std::cout << "eval written to " << (out_dir / "eval.jsonl").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dump-samples
// ---------------------------------------------------------------------------

int cmd_dump_samples(const Options& opt) {
    if (!opt.checkpoint) usage_error("dump-samples needs --checkpoint PREFIX");
    const std::size_t n = opt.n.value_or(1024);
    if (n < 1) usage_error("--n must be at least 1");
    const ConfigMap cfg = assemble_config(opt);
    const fs::path out_dir = cfg.get_str("out_dir", "out");
    fs::create_directories(out_dir);

    Network gen = load_network(*opt.checkpoint + "_gen.ckpt");
    std::size_t latent = 0;
    for (std::size_t i = 0; i < gen.size(); ++i)
        if (gen.layer(i).has_kernel()) {
            const LayerSpec s = gen.layer(i).spec();
            if (s.kind != LayerSpec::Kind::dense)
                throw UsageError("generator checkpoint does not start with a dense layer");
            latent = s.fan_in;
            break;
        }
    if (latent == 0) throw UsageError("generator checkpoint has no kernel layers");

    std::mt19937_64 rng(cfg.get_u64("seed", 1));
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor z({n, latent});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = dist(rng);
    const Tensor samples = gen.forward(z, false);
    dump_samples(out_dir, "samples", samples);
    std::cout << "samples written under " << out_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const Options opt = parse_args(argc, argv);
        if (opt.command == "train") return cmd_train(opt);
        if (opt.command == "gradcheck") return cmd_gradcheck(opt);
        if (opt.command == "eval") return cmd_eval(opt);
        if (opt.command == "dump-samples") return cmd_dump_samples(opt);
        usage_error("unknown subcommand '" + opt.command + "'");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
