#include "transmat/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace transmat::train {

void TrainConfig::validate() const {
    if (iterations < 1) throw ConfigError("iterations must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (lr_floor < 0 || lr_floor > learning_rate) throw ConfigError("lr_floor must lie in [0, learning_rate]");
    if (restart_period < 0) throw ConfigError("restart_period must be non-negative");
    if (grad_clip < 0) throw ConfigError("grad_clip must be non-negative");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

void ExperimentConfig::set_seed(uint64_t seed) {
    train.seed = seed;
    network.init_seed = seed;
    data.seed = seed;
}

void ExperimentConfig::validate() const {
    train.validate();
    network.validate();
    data.validate(Encoder<float>::kDivisor);
    loss.weights.validate();
    if (loss.lap_levels < 1) throw ConfigError("lap_levels must be at least 1");
}

double schedule_lr(int64_t iteration, const TrainConfig& cfg) {
    int64_t period = cfg.restart_period > 0 ? cfg.restart_period : std::max<int64_t>(1, cfg.iterations / 8);
    int64_t t = iteration;
    while (t >= period) {
        t -= period;
        period *= 2;
    }
    if (t == 0 || period == 1) return cfg.learning_rate;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(period - 1);
    return cfg.lr_floor + 0.5 * (cfg.learning_rate - cfg.lr_floor) * (1.0 + std::cos(phase));
}

template <class T>
Adam<T>::Adam(nn::ParameterSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& p : params.params()) {
        m_.emplace_back(static_cast<size_t>(p.var.value().size()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.var.value().size()), 0.0);
    }
}

template <class T>
void Adam<T>::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto& ps = params_->params();
    for (size_t i = 0; i < ps.size(); ++i) {
        Var<T> var = ps[i].var;
        const Tensor<T>& g = var.grad();
        T* w = var.mutable_value().data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < m.size(); ++j) {
            const double gj = static_cast<double>(g[static_cast<int64_t>(j)]);
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
            w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
        }
    }
}

template <class T>
double grad_norm(const nn::ParameterSet<T>& params) {
    double s = 0;
    for (const auto& p : params.params())
        for (const T g : p.var.grad().storage()) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
}

std::string LossRecord::to_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld %.9g %.9g %.9g %.9g %.9g", static_cast<long long>(iteration), lr, total, alpha,
                  comp, lap);
    return buf;
}

std::vector<int64_t> batch_indices(int64_t iteration, const TrainConfig& cfg, int64_t dataset_size) {
    std::vector<int64_t> idx;
    for (int j = 0; j < cfg.batch_size; ++j) {
        const int64_t i = iteration * cfg.batch_size + j;
        idx.push_back(cfg.fixed_samples ? i % dataset_size : i);
    }
    return idx;
}

MattingSample training_sample(const data::SampleStream& stream, int64_t index, const ExperimentConfig& cfg) {
    if (!cfg.train.fixed_samples) return stream.at(index);
    MattingSample s = stream.at(index);
    const int crop = cfg.data.crop_size;
    if (s.height() == crop && s.width() == crop) return s;
    Rng rng = make_rng(cfg.data.seed, static_cast<uint64_t>(index));
    return data::unknown_centered_crop(s, crop, rng);
}

std::vector<LossRecord> train(Network<float>& net, const data::DatasetManifest& manifest, const ExperimentConfig& cfg,
                              const TrainHooks& hooks, int64_t start_iteration) {
    cfg.validate();
    const auto split = cfg.train.fixed_samples ? data::Split::eval : data::Split::train;
    data::SampleStream stream(manifest, cfg.data, split, cfg.train.workers);
    const int64_t size = cfg.train.fixed_samples ? stream.size() : -1;
    Adam<float> adam(net.parameters());
    std::vector<LossRecord> log;

    for (int64_t it = start_iteration; it < cfg.train.iterations; ++it) {
        const auto idx = batch_indices(it, cfg.train, size);
        std::vector<MattingSample> samples(idx.size());
        if (cfg.train.fixed_samples) {
            for (size_t j = 0; j < idx.size(); ++j) samples[j] = training_sample(stream, idx[j], cfg);
        } else {
            samples = stream.batch(idx.front(), static_cast<int64_t>(idx.size()));
        }
        std::vector<ImageRGB> images;
        std::vector<Trimap> trimaps;
        for (const auto& s : samples) {
            images.push_back(s.image);
            trimaps.push_back(s.trimap);
        }
        const LabelGrid labels = LabelGrid::from_trimaps(trimaps);
        const auto targets = loss::Targets<float>::from_samples(samples);

        auto batch_ids = [&] {
            std::string ids;
            for (const auto& s : samples) ids += (ids.empty() ? "" : ", ") + s.id;
            return ids;
        };

        const Var<float> pred = net.forward(network_input<float>(images, labels), labels, true);
        const auto terms = loss::compute(pred, targets, cfg.loss);
        const double total = terms.total.value()[0];
        if (!std::isfinite(total)) {
            throw NumericalError("non-finite loss at iteration " + std::to_string(it) + " on batch [" + batch_ids() +
                                 "]");
        }
        net.parameters().zero_grad();
        terms.total.backward();
        const double gn = grad_norm(net.parameters());
        if (!std::isfinite(gn)) {
            throw NumericalError("non-finite gradient at iteration " + std::to_string(it) + " on batch [" +
                                 batch_ids() + "]");
        }
        if (cfg.train.grad_clip > 0 && gn > cfg.train.grad_clip) {
            const auto f = static_cast<float>(cfg.train.grad_clip / gn);
            for (const auto& p : net.parameters().params()) {
                auto& g = p.var.node()->grad_buffer();
                for (auto& v : g.storage()) v *= f;
            }
        }
        const double lr = schedule_lr(it, cfg.train);
        adam.step(lr);

        LossRecord rec{it, lr, total, terms.alpha.value()[0], terms.comp.value()[0], terms.lap.value()[0]};
        log.push_back(rec);
        if (hooks.on_record) hooks.on_record(rec);
        const bool last = it + 1 == cfg.train.iterations;
        const bool periodic = cfg.train.checkpoint_every > 0 && (it + 1) % cfg.train.checkpoint_every == 0;
        if (hooks.on_checkpoint && (last || periodic)) hooks.on_checkpoint(it + 1);
    }
    return log;
}

template class Adam<float>;
template class Adam<double>;
template double grad_norm<float>(const nn::ParameterSet<float>&);
template double grad_norm<double>(const nn::ParameterSet<double>&);

}  // namespace transmat::train
