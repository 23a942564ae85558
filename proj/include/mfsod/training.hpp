#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfsod/data.hpp"
#include "mfsod/metrics.hpp"
#include "mfsod/model.hpp"
#include "mfsod/resize.hpp"

namespace mfsod {

struct TrainConfig {
    double lr = 2e-3;
    double weight_decay = 5e-4;
    int batch_size = 4;
    double momentum = 0.9;  // Nesterov
    double lr_decay_factor = 0.8;
    int lr_decay_every = 20;  // epochs
    int epochs = 30;
    int input_size = 224;
    uint64_t seed = 0;
    int eval_every = 0;  // epochs between metric evaluations; 0 disables

    void validate() const {
        if (lr <= 0 || weight_decay < 0 || batch_size < 1 || momentum < 0 ||
            lr_decay_factor <= 0 || lr_decay_every < 1 || epochs < 0 || input_size < 32 ||
            input_size % 32 != 0)
            throw ConfigError("invalid training configuration");
    }

    nlohmann::json to_json() const {
        return {{"lr", lr},
                {"weight_decay", weight_decay},
                {"batch_size", batch_size},
                {"momentum", momentum},
                {"lr_decay_factor", lr_decay_factor},
                {"lr_decay_every", lr_decay_every},
                {"epochs", epochs},
                {"input_size", input_size},
                {"seed", seed},
                {"eval_every", eval_every}};
    }
};

/// Stepwise decay: base rate scaled by the decay factor once per
/// `lr_decay_every` completed epochs.
inline double lr_schedule(int epoch, const TrainConfig& config) {
    require(epoch >= 0, "lr_schedule: negative epoch");
    return config.lr * std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
}

/// Sum of mean binary cross-entropies over all nine emitted maps: the
/// full-resolution final map plus both sweeps' stage maps, each against
/// the ground truth nearest-downsampled to its resolution. All terms are
/// evaluated on logits for stability.
template <typename T>
VarPtr<T> deep_supervision_loss(const SaliencyOutputs<T>& outputs, const Tensor<T>& gt) {
    for (T v : gt.v)
        if (v != T(0) && v != T(1))
            throw InputError("deep_supervision_loss: ground truth must be binary");
    require(outputs.final_logits && outputs.final_logits->value.same_shape(gt),
            "deep_supervision_loss: ground truth shape mismatch");
    std::vector<VarPtr<T>> terms;
    terms.push_back(bce_with_logits_mean(outputs.final_logits, gt));
    for (const auto& maps : {outputs.forward_maps, outputs.backward_maps})
        for (const auto& m : maps) {
            if (!m) throw StateError("deep_supervision_loss: missing stage map");
            terms.push_back(
                bce_with_logits_mean(m, nearest_resize(gt, m->value.h, m->value.w)));
        }
    return add_scalars(terms);
}

/// SGD with Nesterov momentum and decoupled-from-nothing classic L2 decay:
/// d = g + wd*p; v = mu*v + d; p -= lr*(d + mu*v).
template <typename T>
class SgdNesterov {
public:
    SgdNesterov(std::vector<VarPtr<T>> params, const TrainConfig& config)
        : params_(std::move(params)),
          lr_(config.lr),
          momentum_(config.momentum),
          weight_decay_(config.weight_decay) {
        velocity_.reserve(params_.size());
        for (auto& p : params_) velocity_.push_back(Tensor<T>::zeros_like(p->value));
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p->grad.empty()) continue;
            for (size_t k = 0; k < p->value.size(); ++k) {
                T d = p->grad.v[k] + static_cast<T>(weight_decay_) * p->value.v[k];
                T v = static_cast<T>(momentum_) * velocity_[i].v[k] + d;
                velocity_[i].v[k] = v;
                p->value.v[k] -= static_cast<T>(lr_) * (d + static_cast<T>(momentum_) * v);
            }
        }
    }

private:
    std::vector<VarPtr<T>> params_;
    std::vector<Tensor<T>> velocity_;
    double lr_, momentum_, weight_decay_;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> eval_mae;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}};
        if (eval_mae) j["mae"] = *eval_mae;
        return j;
    }
};

/// Iteration-level driver around a model: seeded shuffling, batching,
/// forward/backward, one optimizer step per call.
template <typename T>
class TrainSession {
public:
    TrainSession(SodModel<T>& model, std::vector<data::PreprocessedSample> samples,
                 const TrainConfig& config)
        : model_(model),
          samples_(std::move(samples)),
          config_(config),
          optimizer_(model.parameters(), config),
          shuffle_rng_(config.seed) {
        config_.validate();
        require(!samples_.empty(), "training requires a non-empty dataset");
        order_.resize(samples_.size());
        std::iota(order_.begin(), order_.end(), 0);
        start_epoch();
    }

    int iterations_per_epoch() const {
        return static_cast<int>((samples_.size() + config_.batch_size - 1) / config_.batch_size);
    }
    int epoch() const { return epoch_; }
    int iteration() const { return iteration_; }
    double current_lr() const { return optimizer_.lr(); }

    /// Runs one batch; returns the loss value.
    double step() {
        if (cursor_ >= order_.size()) {
            ++epoch_;
            start_epoch();
        }
        size_t take = std::min(static_cast<size_t>(config_.batch_size), order_.size() - cursor_);
        std::vector<const Tensor<float>*> rgb, depth, gt;
        for (size_t i = 0; i < take; ++i) {
            const auto& s = samples_[order_[cursor_ + i]];
            rgb.push_back(&s.rgb);
            depth.push_back(&s.depth);
            gt.push_back(&s.gt);
        }
        cursor_ += take;

        auto rgb_batch = make_var(data::stack_batch(rgb).template cast<T>());
        auto depth_batch = make_var(data::stack_batch(depth).template cast<T>());
        Tensor<T> gt_batch = data::stack_batch(gt).template cast<T>();

        optimizer_.zero_grad();
        auto outputs = model_.forward(rgb_batch, depth_batch, /*training=*/true);
        auto loss = deep_supervision_loss(outputs, gt_batch);
        double loss_value = static_cast<double>(loss->value.v[0]);
        if (!std::isfinite(loss_value))
            throw NumericalError("loss diverged (non-finite) at epoch " + std::to_string(epoch_) +
                                 " iteration " + std::to_string(iteration_));
        backward(loss);
        optimizer_.step();
        ++iteration_;
        return loss_value;
    }

private:
    void start_epoch() {
        std::shuffle(order_.begin(), order_.end(), shuffle_rng_.engine());
        cursor_ = 0;
        optimizer_.set_lr(lr_schedule(epoch_, config_));
    }

    SodModel<T>& model_;
    std::vector<data::PreprocessedSample> samples_;
    TrainConfig config_;
    SgdNesterov<T> optimizer_;
    Rng shuffle_rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
    int epoch_ = 0;
    int iteration_ = 0;
};

/// Dataset metrics for a model: per sample, eval-mode forward at the
/// configured input size, prediction resized back to the ground truth's
/// native resolution.
template <typename T>
metrics::MetricReport evaluate_model(SodModel<T>& model, const std::vector<data::RgbdSample>& samples,
                                     int input_size, const data::PreprocessOptions& opts = {}) {
    std::vector<metrics::Map> preds, gts;
    for (const auto& sample : samples) {
        auto pre = data::preprocess(sample, input_size, input_size, opts);
        auto outputs = model.forward(make_var(pre.rgb.template cast<T>()),
                                     make_var(pre.depth.template cast<T>()), /*training=*/false);
        auto prob = outputs.final_prob;
        auto up = bilinear_resize(prob, sample.gt.rows, sample.gt.cols);
        metrics::Map pred = up->value.template cast<double>();
        for (auto& v : pred.v) v = std::clamp(v, 0.0, 1.0);  // bilinear overshoot guard
        metrics::Map gt(1, 1, sample.gt.rows, sample.gt.cols);
        for (int y = 0; y < sample.gt.rows; ++y)
            for (int x = 0; x < sample.gt.cols; ++x)
                gt.at(0, 0, y, x) = sample.gt.at<uint8_t>(y, x) != 0 ? 1.0 : 0.0;
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt));
    }
    return metrics::evaluate_dataset(preds, gts);
}

/// Full training loop: `epochs` passes over the data, one history record
/// per epoch. Deterministic for a fixed seed and thread count.
template <typename T>
std::vector<EpochRecord> train(SodModel<T>& model, const std::vector<data::RgbdSample>& dataset,
                               const TrainConfig& config,
                               const data::PreprocessOptions& opts = {}) {
    config.validate();
    require(!dataset.empty(), "training requires a non-empty dataset");
    std::vector<data::PreprocessedSample> prepared;
    prepared.reserve(dataset.size());
    for (const auto& s : dataset)
        prepared.push_back(data::preprocess(s, config.input_size, config.input_size, opts));

    TrainSession<T> session(model, std::move(prepared), config);
    std::vector<EpochRecord> history;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        int iters = session.iterations_per_epoch();
        for (int i = 0; i < iters; ++i) loss_sum += session.step();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_schedule(epoch, config);
        rec.train_loss = loss_sum / iters;
        if (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0)
            rec.eval_mae = evaluate_model(model, dataset, config.input_size, opts).mae;
        history.push_back(rec);
    }
    return history;
}

inline void write_history_jsonl(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write history log: " + path);
    for (const auto& rec : history) out << rec.to_json().dump() << "\n";
}

}  // namespace mfsod
