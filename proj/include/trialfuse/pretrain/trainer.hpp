// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/config.hpp"
#include "trialfuse/data/splits.hpp"
#include "trialfuse/numerics/optim.hpp"
#include "trialfuse/pretrain/retrieval.hpp"

namespace trialfuse {

struct PretrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 1e-4;
    double tau = kDefaultTau;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double validation_fraction = kValidationFraction;
    bool cosine = false;
    bool learnable_temperature = false;
    /// Stop after this many epochs without a lower validation loss; 0 disables.
    std::size_t patience = 0;
    /// Stop once top-1 retrieval on the monitored set reaches 1.0.
    bool stop_at_perfect_top1 = false;

    void validate() const
    {
        if (batch_size == 0 || epochs == 0 || !(learning_rate > 0.0)) {
            throw ConfigError("pretrain needs batch_size >= 1, epochs >= 1 and learning_rate > 0");
        }
        if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
            throw ConfigError("pretrain.validation_fraction must be in [0, 1)");
        }
    }

    void write_to(KeyValueConfig& kv) const
    {
        kv.set("pretrain.batch_size", std::to_string(batch_size));
        kv.set("pretrain.lr", format_real(learning_rate));
        kv.set("pretrain.tau", format_real(tau));
        kv.set("pretrain.epochs", std::to_string(epochs));
        kv.set("pretrain.beta1", format_real(beta1));
        kv.set("pretrain.beta2", format_real(beta2));
        kv.set("pretrain.validation_fraction", format_real(validation_fraction));
        kv.set("pretrain.cosine", cosine ? "true" : "false");
        kv.set("pretrain.learnable_temperature", learnable_temperature ? "true" : "false");
        kv.set("pretrain.patience", std::to_string(patience));
        kv.set("pretrain.stop_at_perfect_top1", stop_at_perfect_top1 ? "true" : "false");
    }

    [[nodiscard]] static PretrainConfig read_from(const KeyValueConfig& kv)
    {
        PretrainConfig c;
        c.batch_size = static_cast<std::size_t>(kv.get_int("pretrain.batch_size", static_cast<long long>(c.batch_size)));
        c.learning_rate = kv.get_double("pretrain.lr", c.learning_rate);
        c.tau = kv.get_double("pretrain.tau", c.tau);
        c.epochs = static_cast<std::size_t>(kv.get_int("pretrain.epochs", static_cast<long long>(c.epochs)));
        c.beta1 = kv.get_double("pretrain.beta1", c.beta1);
        c.beta2 = kv.get_double("pretrain.beta2", c.beta2);
        c.validation_fraction = kv.get_double("pretrain.validation_fraction", c.validation_fraction);
        c.cosine = kv.get_bool("pretrain.cosine", c.cosine);
        c.learnable_temperature = kv.get_bool("pretrain.learnable_temperature", c.learnable_temperature);
        c.patience = static_cast<std::size_t>(kv.get_int("pretrain.patience", static_cast<long long>(c.patience)));
        c.stop_at_perfect_top1 = kv.get_bool("pretrain.stop_at_perfect_top1", c.stop_at_perfect_top1);
        c.validate();
        return c;
    }
};

struct PretrainEpoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double top1_acc = 0.0;
};

template <typename T>
struct PretrainResult {
    std::vector<PretrainEpoch> curve;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    /// Parameter values at the best epoch, already restored into the model.
    std::vector<std::pair<std::string, Tensor<T>>> best_parameters;
    double log_scale = kDefaultTau;
    /// True when validation metrics were computed on the training set (no held-out split).
    bool monitored_on_train = false;
    std::vector<std::string> train_ids;
    std::vector<std::string> validation_ids;
};

[[nodiscard]] inline std::string pretrain_curve_csv(const std::vector<PretrainEpoch>& curve)
{
    std::ostringstream out;
    out << "epoch,train_loss,val_loss,top1_acc\n";
    for (const auto& e : curve) {
        out << e.epoch << ',' << format_real(e.train_loss) << ',' << format_real(e.val_loss) << ','
            << format_real(e.top1_acc) << '\n';
    }
    return out.str();
}

/// One optimizer step on `batch`, returns the loss before the update.
/// The loss gradient with respect to each pooled drug-disease embedding is
/// taken first on graph-free embeddings, then every trial is re-run with a
/// graph and back-propagated against its own row of that gradient, so only one
/// trial's graph is alive at a time.
template <typename T>
double pretrain_step(DMBranch<T>& model, const std::vector<PairExample>& batch, Parameter<T>& log_scale, Adam<T>& opt,
                     bool cosine)
{
    const std::size_t n = batch.size();
    const std::size_t d = model.config().d_dm;
    const auto pooled = embed_pairs(model, batch);

    opt.zero_grad();
    log_scale.zero_grad();
    Parameter<T> f_dm_leaf(pooled.f_dm);
    std::vector<Var<T>> crit_rows;
    for (const auto& ex : batch) {
        crit_rows.push_back(model.criteria_pair_embedding(ex.criteria));
    }
    const auto loss = pair_matching_loss(concat_rows(crit_rows), f_dm_leaf.var(), log_scale.var(), cosine);
    backward(loss);

    const auto& g = f_dm_leaf.gradient();
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<T> gi({1, d});
        for (std::size_t j = 0; j < d; ++j) {
            gi[j] = g(i, j);
        }
        backward(sum(mul(model.pooled_dm(batch[i].input, batch[i].criteria), constant(std::move(gi)))));
    }
    opt.step();
    return static_cast<double>(loss.item());
}

/// Mean batch loss and whole-set top-1 retrieval at the current parameters.
template <typename T>
std::pair<double, double> pretrain_monitor(const DMBranch<T>& model, const std::vector<PairExample>& set,
                                           std::size_t batch_size, double log_scale, bool cosine)
{
    const auto all = embed_pairs(model, set);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < set.size(); b += batch_size) {
        const std::size_t m = std::min(batch_size, set.size() - b);
        PairBatch<T> pb{Tensor<T>({m, all.f_c.cols()}), Tensor<T>({m, all.f_c.cols()}), {}};
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < all.f_c.cols(); ++j) {
                pb.f_c(i, j) = all.f_c(b + i, j);
                pb.f_dm(i, j) = all.f_dm(b + i, j);
            }
        }
        loss += pretrain_loss(pb, log_scale, cosine);
        ++batches;
    }
    const double top1 = set.size() >= 2 ? retrieval_from_embeddings(all, log_scale).top1_accuracy
                                        : std::numeric_limits<double>::quiet_NaN();
    return {loss / static_cast<double>(batches), top1};
}

/// Adam on the trainable drug-disease branch parameters with in-batch
/// pair matching. A seeded validation share is held out; when it is zero the
/// training set itself is monitored. The best-validation-loss parameters are
/// restored into `model` before returning.
template <typename T>
PretrainResult<T> train_pretrain(DMBranch<T>& model, const std::vector<PairExample>& data, const PretrainConfig& cfg,
                                 const std::function<void(const PretrainEpoch&)>& on_epoch = {})
{
    cfg.validate();
    if (data.empty()) {
        throw DataError("pre-training dataset is empty");
    }
    for (const auto& ex : data) {
        if (ex.label == 0) {
            throw DataError("pre-training expects successful trials only; '" + ex.trial_id + "' is labeled 0");
        }
    }
    PretrainResult<T> result;
    std::vector<PairExample> train;
    std::vector<PairExample> val;
    {
        const auto vidx = cfg.validation_fraction > 0.0 && data.size() >= 2
                              ? validation_indices(data.size(), cfg.seed, cfg.validation_fraction)
                              : std::vector<std::size_t>{};
        std::size_t next = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (next < vidx.size() && vidx[next] == i) {
                val.push_back(data[i]);
                result.validation_ids.push_back(data[i].trial_id);
                ++next;
            } else {
                train.push_back(data[i]);
                result.train_ids.push_back(data[i].trial_id);
            }
        }
    }
    if (train.empty()) {
        throw DataError("pre-training split left no training trials");
    }
    result.monitored_on_train = val.empty();
    const auto& monitored = val.empty() ? train : val;

    Parameter<T> log_scale(Tensor<T>::scalar(static_cast<T>(cfg.tau)), cfg.learnable_temperature);
    ParameterList<T> params;
    for (const auto& p : model.parameters()) {
        if (p.param->trainable()) {
            params.push_back(p);
        }
    }
    if (cfg.learnable_temperature) {
        params.push_back({"pretrain.log_temperature", &log_scale});
    }
    Adam<T> opt({cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8});
    opt.add_group(params, cfg.learning_rate);

    auto snapshot = [&] {
        result.best_parameters.clear();
        for (const auto& p : params) {
            result.best_parameters.emplace_back(p.name, p.param->value());
        }
    };
    snapshot();

    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C0000ULL + epoch));
        shuffle_rng.shuffle(order);

        double train_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::vector<PairExample> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
                batch.push_back(train[order[i]]);
            }
            train_loss += pretrain_step(model, batch, log_scale, opt, cfg.cosine);
            ++batches;
        }

        const double scale_now = static_cast<double>(log_scale.value()[0]);
        const auto [val_loss, top1] = pretrain_monitor(model, monitored, cfg.batch_size, scale_now, cfg.cosine);
        const PretrainEpoch log{epoch, train_loss / static_cast<double>(batches), val_loss, top1};
        result.curve.push_back(log);
        if (on_epoch) {
            on_epoch(log);
        }
        if (!std::isfinite(val_loss)) {
            throw DataError("pre-training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
        }
        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.log_scale = scale_now;
            snapshot();
            since_best = 0;
        } else {
            ++since_best;
        }
        if ((cfg.patience > 0 && since_best >= cfg.patience) || (cfg.stop_at_perfect_top1 && top1 == 1.0)) {
            break;
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].param->mutable_value() = result.best_parameters[i].second;
    }
    return result;
}

} // namespace trialfuse
