#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "direal/data.hpp"
#include "direal/diversity.hpp"
#include "direal/metrics.hpp"
#include "direal/nn.hpp"

namespace direal {

enum class RegMode { none, direal, spectral, clip, batchnorm_only, direal_spectral };
enum class GenLoss { saturating, non_saturating };

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    std::size_t latent_dim = 8;
    DiversityConfig div;  // tau / lambda_g / lambda_d / variant
    std::vector<std::size_t> d_layers;  // explicit selector for D (empty = default)
    std::vector<std::size_t> g_layers;  // explicit selector for G (empty = default)
    RegMode regularizer = RegMode::direal;
    double clip_c = 0.01;
    int spectral_iters = 1;
    GenLoss generator_loss = GenLoss::non_saturating;
    std::uint64_t seed = 1;
    std::size_t eval_every = 100;
    std::size_t max_steps = 0;      // 0 = run all epochs; else hard step cap
    std::size_t w_div_window = 30;  // batches pooled per side for w_div
    std::size_t hidden = 64;        // width of the default 2-D architectures
    std::string dataset_id = "ring";
};

// Negated minimax discriminator objective for minimization:
//   -mean(log p_real) - mean(log(1 - p_fake))
// with probabilities clamped to [1e-7, 1-1e-7] inside the logs.
double d_loss(const std::vector<double>& d_real, const std::vector<double>& d_fake);

// saturating: mean(log(1 - p_fake)); non_saturating: -mean(log p_fake).
double g_loss(const std::vector<double>& d_fake, GenLoss mode);

struct MetricsRecord {
    long step = 0;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double j_d = 0.0;  // discriminator diversity penalty (post-update weights)
    double j_g = 0.0;  // generator diversity penalty (post-update weights)
    double w_div = 0.0;
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    // max off-diagonal |cos| per regularized layer: D's layers, then G's.
    std::vector<double> max_cos;
};

// Generator/discriminator pair with per-player Adam state and step counter.
struct GanModel {
    Network gen;
    Network disc;
    AdamState gen_opt;
    AdamState disc_opt;
    long step = 0;
};

// Default desk-scale architectures for a dataset: three dense layers for 2-D
// tasks, a strided-convolution stack for images. The batchnorm_only mode
// inserts batchnorm blocks (never on the discriminator input layer or the
// generator output layer).
std::vector<LayerSpec> default_generator_arch(const Dataset& data, const TrainConfig& cfg);
std::vector<LayerSpec> default_discriminator_arch(const Dataset& data, const TrainConfig& cfg);

// Single-owner training loop: shuffled epochs, one discriminator update then
// one generator update per step, diversity/spectral/clip regularization per
// the config. Sequential over steps by construction.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const Dataset& data,
            std::vector<LayerSpec> gen_arch = {}, std::vector<LayerSpec> disc_arch = {});

    // One adversarial step (D then G). Fills everything in MetricsRecord
    // except w_div and max_cos; call finalize_record for those.
    MetricsRecord step();

    // Adds the pooled-score Wasserstein divergence and per-layer cosine
    // maxima (heavier diagnostics, meant for the eval_every cadence).
    void finalize_record(MetricsRecord& rec);

    // Runs the full schedule. on_record fires at the eval_every cadence and
    // on the final step; after_step (optional) fires once per step.
    void train(const std::function<void(const MetricsRecord&)>& on_record,
               const std::function<void(long)>& after_step = nullptr);

    // n generator outputs from latents drawn with a dedicated RNG; batchnorm
    // runs in inference mode. Reproducible from seed.
    Tensor sample(std::size_t n, std::uint64_t seed);

    long total_steps() const { return total_steps_; }
    GanModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<std::size_t>& disc_selected() const { return disc_selected_; }
    const std::vector<std::size_t>& gen_selected() const { return gen_selected_; }

private:
    Tensor latent_batch(std::size_t n, std::mt19937_64& rng);
    std::vector<std::size_t> next_indices();
    void check_finite(double dl, double gl) const;

    TrainConfig cfg_;
    const Dataset& data_;
    GanModel model_;
    DiversityConfig div_d_, div_g_;
    std::vector<std::size_t> disc_selected_, gen_selected_;

    std::mt19937_64 rng_latent_;
    std::mt19937_64 rng_shuffle_;
    std::mt19937_64 rng_sn_;
    std::vector<Eigen::VectorXd> sn_u_;  // one per discriminator kernel layer

    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t steps_per_epoch_ = 0;
    long total_steps_ = 0;

    std::deque<std::vector<double>> real_scores_, fake_scores_;
};

}  // namespace direal
