#include "direal/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "direal/errors.hpp"

namespace direal {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_p(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool uses_direal(RegMode m) {
    return m == RegMode::direal || m == RegMode::direal_spectral;
}

bool uses_spectral(RegMode m) {
    return m == RegMode::spectral || m == RegMode::direal_spectral;
}

std::vector<double> pooled(const std::deque<std::vector<double>>& window) {
    std::vector<double> out;
    for (const auto& batch : window) out.insert(out.end(), batch.begin(), batch.end());
    return out;
}

}  // namespace

double d_loss(const std::vector<double>& d_real, const std::vector<double>& d_fake) {
    if (d_real.empty() || d_fake.empty()) throw UsageError("d_loss needs nonempty score sets");
    double sum_real = 0.0, sum_fake = 0.0;
    for (double p : d_real) sum_real += std::log(clamp_p(p));
    for (double p : d_fake) sum_fake += std::log(1.0 - clamp_p(p));
    return -sum_real / static_cast<double>(d_real.size()) -
           sum_fake / static_cast<double>(d_fake.size());
}

double g_loss(const std::vector<double>& d_fake, GenLoss mode) {
    if (d_fake.empty()) throw UsageError("g_loss needs nonempty scores");
    double sum = 0.0;
    if (mode == GenLoss::saturating) {
        for (double p : d_fake) sum += std::log(1.0 - clamp_p(p));
        return sum / static_cast<double>(d_fake.size());
    }
    for (double p : d_fake) sum += std::log(clamp_p(p));
    return -sum / static_cast<double>(d_fake.size());
}

// ---------------------------------------------------------------------------
// Default architectures
// ---------------------------------------------------------------------------

std::vector<LayerSpec> default_generator_arch(const Dataset& data, const TrainConfig& cfg) {
    const bool bn = cfg.regularizer == RegMode::batchnorm_only;
    std::vector<LayerSpec> specs;
    if (data.kind != Dataset::Kind::idx_images) {
        const std::size_t h = cfg.hidden;
        specs.push_back(LayerSpec::Dense(cfg.latent_dim, h));
        if (bn) specs.push_back(LayerSpec::BatchNorm(h));
        specs.push_back(LayerSpec::Act(ActKind::relu));
        specs.push_back(LayerSpec::Dense(h, h));
        if (bn) specs.push_back(LayerSpec::BatchNorm(h));
        specs.push_back(LayerSpec::Act(ActKind::relu));
        specs.push_back(LayerSpec::Dense(h, data.item_size()));
        return specs;
    }
    const std::size_t ih = data.item_shape.at(1), iw = data.item_shape.at(2);
    if (ih % 4 != 0 || iw % 4 != 0)
        throw ConfigError("image sides must be divisible by 4, got " + std::to_string(ih) +
                              "x" + std::to_string(iw),
                          "dataset");
    const std::size_t h4 = ih / 4, w4 = iw / 4;
    specs.push_back(LayerSpec::Dense(cfg.latent_dim, 128 * h4 * w4));
    specs.push_back(LayerSpec::BatchNorm(128 * h4 * w4));
    specs.push_back(LayerSpec::Act(ActKind::relu));
    specs.push_back(LayerSpec::TConv(128, 64, 4, 2, 1, h4, w4));
    specs.push_back(LayerSpec::BatchNorm(64));
    specs.push_back(LayerSpec::Act(ActKind::relu));
    specs.push_back(LayerSpec::TConv(64, 1, 4, 2, 1, ih / 2, iw / 2));
    specs.push_back(LayerSpec::Act(ActKind::tanh));
    return specs;
}

std::vector<LayerSpec> default_discriminator_arch(const Dataset& data, const TrainConfig& cfg) {
    const bool bn = cfg.regularizer == RegMode::batchnorm_only;
    std::vector<LayerSpec> specs;
    if (data.kind != Dataset::Kind::idx_images) {
        const std::size_t h = cfg.hidden;
        specs.push_back(LayerSpec::Dense(data.item_size(), h));
        specs.push_back(LayerSpec::Act(ActKind::leaky_relu));
        specs.push_back(LayerSpec::Dense(h, h));
        if (bn) specs.push_back(LayerSpec::BatchNorm(h));
        specs.push_back(LayerSpec::Act(ActKind::leaky_relu));
        specs.push_back(LayerSpec::Dense(h, 1));
        specs.push_back(LayerSpec::Act(ActKind::sigmoid));
        return specs;
    }
    const std::size_t ih = data.item_shape.at(1), iw = data.item_shape.at(2);
    specs.push_back(LayerSpec::Conv(1, 64, 4, 2, 1, ih, iw));
    specs.push_back(LayerSpec::Act(ActKind::leaky_relu));
    specs.push_back(LayerSpec::Conv(64, 128, 4, 2, 1, ih / 2, iw / 2));
    if (bn) specs.push_back(LayerSpec::BatchNorm(128));
    specs.push_back(LayerSpec::Act(ActKind::leaky_relu));
    specs.push_back(LayerSpec::Dense(128 * (ih / 4) * (iw / 4), 1));
    specs.push_back(LayerSpec::Act(ActKind::sigmoid));
    return specs;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Dataset& data, std::vector<LayerSpec> gen_arch,
                 std::vector<LayerSpec> disc_arch)
    : cfg_(cfg), data_(data) {
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive", "lr");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1", "batch_size");
    if (cfg.epochs < 1) throw ConfigError("epoch count must be at least 1", "epochs");
    if (data.size() == 0) throw ConfigError("dataset is empty", "dataset");

    if (gen_arch.empty()) gen_arch = default_generator_arch(data, cfg);
    if (disc_arch.empty()) disc_arch = default_discriminator_arch(data, cfg);
    for (const auto& s : gen_arch) {
        if (s.kind == LayerSpec::Kind::dense) {
            if (s.fan_in != cfg.latent_dim)
                throw ConfigError("generator input width " + std::to_string(s.fan_in) +
                                      " does not match latent_dim " +
                                      std::to_string(cfg.latent_dim),
                                  "latent_dim");
            break;
        }
        if (s.kind != LayerSpec::Kind::activation) break;  // non-dense entry layer
    }

    std::mt19937_64 seeder(cfg.seed);
    const std::uint64_t s_gen = seeder(), s_disc = seeder(), s_latent = seeder(),
                        s_shuffle = seeder(), s_sn = seeder();
    model_.gen = build_network(gen_arch, s_gen);
    model_.disc = build_network(disc_arch, s_disc);
    const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
    model_.gen_opt = AdamState(model_.gen, adam);
    model_.disc_opt = AdamState(model_.disc, adam);
    rng_latent_.seed(s_latent);
    rng_shuffle_.seed(s_shuffle);
    rng_sn_.seed(s_sn);

    div_d_ = cfg.div;
    div_d_.layer_selector = cfg.d_layers;
    div_g_ = cfg.div;
    div_g_.layer_selector = cfg.g_layers;
    disc_selected_ = effective_selector(model_.disc, div_d_);
    gen_selected_ = effective_selector(model_.gen, div_g_);
    sn_u_.resize(model_.disc.kernel_layers().size());

    steps_per_epoch_ = data.size() / cfg.batch_size;
    if (steps_per_epoch_ == 0)
        throw ConfigError("batch size " + std::to_string(cfg.batch_size) +
                              " exceeds dataset size " + std::to_string(data.size()),
                          "batch_size");
    total_steps_ = static_cast<long>(cfg.epochs * steps_per_epoch_);
    if (cfg.max_steps > 0)
        total_steps_ = std::min(total_steps_, static_cast<long>(cfg.max_steps));

    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_shuffle_);
}

Tensor Trainer::latent_batch(std::size_t n, std::mt19937_64& rng) {
    Tensor z({n, cfg_.latent_dim});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = dist(rng);
    return z;
}

std::vector<std::size_t> Trainer::next_indices() {
    const std::size_t usable = steps_per_epoch_ * cfg_.batch_size;
    if (cursor_ + cfg_.batch_size > usable) {
        std::shuffle(order_.begin(), order_.end(), rng_shuffle_);
        cursor_ = 0;
    }
    std::vector<std::size_t> idx(order_.begin() + static_cast<long>(cursor_),
                                 order_.begin() + static_cast<long>(cursor_ + cfg_.batch_size));
    cursor_ += cfg_.batch_size;
    return idx;
}

void Trainer::check_finite(double dl, double gl) const {
    if (!std::isfinite(dl) || !std::isfinite(gl))
        throw TrainingDiverged("non-finite adversarial loss at step " +
                                   std::to_string(model_.step + 1),
                               model_.step + 1);
}

MetricsRecord Trainer::step() {
    const std::size_t B = cfg_.batch_size;
    const std::size_t per_item = data_.item_size();
    MetricsRecord rec;

    // --- Discriminator update ----------------------------------------------
    model_.disc.zero_grads();  // clears gradients left over from the G pass
    Tensor real = data_.batch(next_indices());
    Tensor z = latent_batch(B, rng_latent_);
    Tensor fake = model_.gen.forward(z, true);
    if (fake.size() != B * per_item)
        throw ShapeError("generator emits " + fake.shape_str() +
                         " which does not match the dataset item size");

    // Real and fake go through D as one combined batch so a single
    // forward/backward pair serves both loss terms.
    std::vector<std::size_t> both_shape = real.shape();
    both_shape[0] = 2 * B;
    Tensor both(both_shape);
    std::copy(real.data(), real.data() + B * per_item, both.data());
    std::copy(fake.data(), fake.data() + B * per_item, both.data() + B * per_item);

    Tensor p = model_.disc.forward(both, true);
    if (p.size() != 2 * B)
        throw ShapeError("discriminator emits " + p.shape_str() +
                         ", expected one probability per item");
    std::vector<double> p_real(p.data(), p.data() + B);
    std::vector<double> p_fake(p.data() + B, p.data() + 2 * B);
    rec.d_loss = d_loss(p_real, p_fake);

    // d/dp of the clamped log terms, evaluated at the clamped probability
    // (the rare saturated scores keep a nonzero slope on purpose, so a
    // pinned discriminator can still move).
    Tensor dp = Tensor::zeros_like(p);
    const double nb = static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i) dp[i] = -1.0 / (nb * clamp_p(p[i]));
    for (std::size_t i = B; i < 2 * B; ++i) dp[i] = 1.0 / (nb * (1.0 - clamp_p(p[i])));
    model_.disc.backward(dp);
    if (uses_direal(cfg_.regularizer))
        apply_diversity(model_.disc, div_d_, cfg_.div.lambda_d);
    model_.disc_opt.step(model_.disc);

    if (uses_spectral(cfg_.regularizer)) {
        const std::vector<std::size_t> kernels = model_.disc.kernel_layers();
        for (std::size_t k = 0; k < kernels.size(); ++k)
            spectral_normalize(model_.disc.layer(kernels[k]), cfg_.spectral_iters, sn_u_[k],
                               rng_sn_);
    }
    if (cfg_.regularizer == RegMode::clip) weight_clip(model_.disc, cfg_.clip_c);

    // --- Generator update ----------------------------------------------------
    model_.gen.zero_grads();
    Tensor z2 = latent_batch(B, rng_latent_);
    Tensor fake2 = model_.gen.forward(z2, true);
    Tensor p2 = model_.disc.forward(fake2, true);
    std::vector<double> pf2(p2.data(), p2.data() + p2.size());
    rec.g_loss = g_loss(pf2, cfg_.generator_loss);

    Tensor dp2 = Tensor::zeros_like(p2);
    if (cfg_.generator_loss == GenLoss::non_saturating) {
        for (std::size_t i = 0; i < pf2.size(); ++i) dp2[i] = -1.0 / (nb * clamp_p(pf2[i]));
    } else {
        for (std::size_t i = 0; i < pf2.size(); ++i)
            dp2[i] = -1.0 / (nb * (1.0 - clamp_p(pf2[i])));
    }
    Tensor dfake = model_.disc.backward(dp2);  // D grads polluted; zeroed next step
    model_.gen.backward(dfake);
    if (uses_direal(cfg_.regularizer))
        apply_diversity(model_.gen, div_g_, cfg_.div.lambda_g);
    model_.gen_opt.step(model_.gen);

    // --- Bookkeeping ---------------------------------------------------------
    ++model_.step;
    rec.step = model_.step;
    rec.d_real_mean = mean(p_real);
    rec.d_fake_mean = mean(p_fake);
    // Diversity penalties are reported for every mode (post-update weights)
    // so runs with and without the regularizer stay comparable.
    rec.j_d = diversity_total(model_.disc, div_d_);
    rec.j_g = diversity_total(model_.gen, div_g_);

    real_scores_.push_back(std::move(p_real));
    fake_scores_.push_back(std::move(p_fake));
    while (real_scores_.size() > cfg_.w_div_window) real_scores_.pop_front();
    while (fake_scores_.size() > cfg_.w_div_window) fake_scores_.pop_front();

    check_finite(rec.d_loss, rec.g_loss);
    return rec;
}

void Trainer::finalize_record(MetricsRecord& rec) {
    rec.w_div = wasserstein1d(pooled(real_scores_), pooled(fake_scores_));
    rec.max_cos.clear();
    auto push_layer = [&](Network& net, std::size_t idx) {
        Layer& layer = net.layer(idx);
        const KernelMatrix km = unroll(layer.weights(), layer.kernel_shape());
        const auto stats = cosine_stats(km);
        // Single-column layers carry no pairs; -1 marks them as skipped.
        rec.max_cos.push_back(stats ? stats->max_offdiag : -1.0);
    };
    for (std::size_t idx : disc_selected_) push_layer(model_.disc, idx);
    for (std::size_t idx : gen_selected_) push_layer(model_.gen, idx);
}

void Trainer::train(const std::function<void(const MetricsRecord&)>& on_record,
                    const std::function<void(long)>& after_step) {
    while (model_.step < total_steps_) {
        MetricsRecord rec = step();
        const bool emit = (cfg_.eval_every > 0 && rec.step % static_cast<long>(cfg_.eval_every) == 0) ||
                          rec.step == total_steps_;
        if (emit && on_record) {
            finalize_record(rec);
            on_record(rec);
        }
        if (after_step) after_step(rec.step);
    }
}

Tensor Trainer::sample(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw UsageError("sample count must be at least 1");
    std::mt19937_64 rng(seed);
    Tensor z = latent_batch(n, rng);
    return model_.gen.forward(z, false);
}

}  // namespace direal
