// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/config.hpp"
#include "trialfuse/data/trial_record.hpp"
#include "trialfuse/dm/dm_branch.hpp"
#include "trialfuse/eval/metrics.hpp"
#include "trialfuse/numerics/optim.hpp"
#include "trialfuse/peft/class_weights.hpp"
#include "trialfuse/peft/prediction_head.hpp"
#include "trialfuse/pretrain/pair_examples.hpp"

namespace trialfuse {

[[nodiscard]] inline double default_lora_lr(Phase phase) { return phase == Phase::III ? 1e-3 : 5e-2; }

struct FinetuneConfig {
    double head_lr = 1e-2;
    double lora_lr = 5e-2;
    std::size_t batch_size = 128;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    LoraSites lora_sites = LoraSites::both;
    std::size_t head_hidden = kDefaultHeadHidden;
    /// Derived from the training labels when unset.
    std::optional<ClassWeights> class_weights;
    double threshold = 0.5;
    std::size_t patience = 0;
    /// Stop once F1 on the monitored set reaches 1.0.
    bool stop_at_perfect_f1 = false;

    [[nodiscard]] static FinetuneConfig for_phase(Phase phase)
    {
        FinetuneConfig c;
        c.lora_lr = default_lora_lr(phase);
        return c;
    }

    void validate() const
    {
        if (batch_size == 0 || epochs == 0 || !(head_lr > 0.0) || !(lora_lr > 0.0) || head_hidden == 0) {
            throw ConfigError("finetune needs batch_size, epochs, head_hidden >= 1 and positive learning rates");
        }
    }

    void write_to(KeyValueConfig& kv) const
    {
        kv.set("finetune.head_lr", format_real(head_lr));
        kv.set("finetune.lora_lr", format_real(lora_lr));
        kv.set("finetune.batch_size", std::to_string(batch_size));
        kv.set("finetune.epochs", std::to_string(epochs));
        kv.set("finetune.lora_sites", lora_sites_name(lora_sites));
        kv.set("finetune.head_hidden", std::to_string(head_hidden));
        kv.set("finetune.threshold", format_real(threshold));
        kv.set("finetune.patience", std::to_string(patience));
        kv.set("finetune.stop_at_perfect_f1", stop_at_perfect_f1 ? "true" : "false");
        if (class_weights) {
            kv.set("finetune.omega0", format_real(class_weights->omega0));
            kv.set("finetune.omega1", format_real(class_weights->omega1));
        }
    }

    [[nodiscard]] static FinetuneConfig read_from(const KeyValueConfig& kv, Phase phase)
    {
        auto c = for_phase(phase);
        c.head_lr = kv.get_double("finetune.head_lr", c.head_lr);
        c.lora_lr = kv.get_double("finetune.lora_lr", c.lora_lr);
        c.batch_size = static_cast<std::size_t>(kv.get_int("finetune.batch_size", static_cast<long long>(c.batch_size)));
        c.epochs = static_cast<std::size_t>(kv.get_int("finetune.epochs", static_cast<long long>(c.epochs)));
        if (kv.has("finetune.lora_sites")) {
            c.lora_sites = parse_lora_sites(kv.get("finetune.lora_sites", ""));
        }
        c.head_hidden = static_cast<std::size_t>(kv.get_int("finetune.head_hidden", static_cast<long long>(c.head_hidden)));
        c.threshold = kv.get_double("finetune.threshold", c.threshold);
        c.patience = static_cast<std::size_t>(kv.get_int("finetune.patience", static_cast<long long>(c.patience)));
        c.stop_at_perfect_f1 = kv.get_bool("finetune.stop_at_perfect_f1", c.stop_at_perfect_f1);
        if (kv.has("finetune.omega0") || kv.has("finetune.omega1")) {
            ClassWeights w;
            w.omega0 = kv.get_double("finetune.omega0", 0.5);
            w.omega1 = kv.get_double("finetune.omega1", 0.5);
            c.class_weights = w;
        }
        c.validate();
        return c;
    }
};

/// Drug-disease branch plus prediction head over
/// concat(avgpool(last criteria level), avgpool(fused drug-disease tokens)).
template <typename T>
class FinetuneModel {
public:
    FinetuneModel() = default;

    FinetuneModel(DMBranch<T> branch, std::size_t head_hidden, std::uint64_t seed) : branch_(std::move(branch))
    {
        Rng rng(derive_seed(seed, 6));
        head_ = PredictionHead<T>(head_input_width(), head_hidden, rng);
    }

    [[nodiscard]] std::size_t head_input_width() const { return branch_.config().d_llm + branch_.config().d_dm; }

    [[nodiscard]] DMBranch<T>& branch() noexcept { return branch_; }
    [[nodiscard]] const DMBranch<T>& branch() const noexcept { return branch_; }
    [[nodiscard]] PredictionHead<T>& head() noexcept { return head_; }
    [[nodiscard]] const PredictionHead<T>& head() const noexcept { return head_; }

    /// Adapters at `sites`, then everything but adapters frozen. The head stays trainable.
    void prepare_peft(LoraSites sites, std::uint64_t seed)
    {
        if (sites != LoraSites::none) {
            Rng rng(derive_seed(seed, 5));
            branch_.attach_lora(sites, rng);
        }
        branch_.freeze_backbone();
        head_.for_each_parameter("head", [](const std::string&, Parameter<T>& p) { p.set_trainable(true); });
    }

    [[nodiscard]] Var<T> features(const PairExample& ex) const
    {
        return concat_cols<T>({DMBranch<T>::pooled_criteria(ex.criteria), branch_.pooled_dm(ex.input, ex.criteria)});
    }

    [[nodiscard]] Var<T> probability(const PairExample& ex) const { return head_.probabilities(features(ex)); }

    [[nodiscard]] bool backbone_trainable()
    {
        bool any = false;
        branch_.for_each_parameter([&](const std::string&, Parameter<T>& p) { any = any || p.trainable(); });
        return any;
    }

    template <typename Fn>
    void for_each_parameter(Fn&& fn)
    {
        branch_.for_each_parameter(fn);
        head_.for_each_parameter("head", fn);
    }

    [[nodiscard]] ParameterList<T> parameters()
    {
        ParameterList<T> out;
        for_each_parameter([&](const std::string& name, Parameter<T>& p) { out.push_back({name, &p}); });
        return out;
    }

    [[nodiscard]] ParameterList<T> head_parameters()
    {
        ParameterList<T> out;
        head_.for_each_parameter("head", [&](const std::string& name, Parameter<T>& p) { out.push_back({name, &p}); });
        return out;
    }

    [[nodiscard]] ParameterList<T> adapter_parameters()
    {
        ParameterList<T> out;
        branch_.for_each_parameter([&](const std::string& name, Parameter<T>& p) {
            if (DMBranch<T>::is_adapter_name(name)) out.push_back({name, &p});
        });
        return out;
    }

private:
    DMBranch<T> branch_;
    PredictionHead<T> head_;
};

/// sigmoid(Head(...)) for one trial, without a graph.
template <typename T>
[[nodiscard]] double predict(const FinetuneModel<T>& model, const PairExample& ex)
{
    NoGradGuard guard;
    return static_cast<double>(model.probability(ex).item());
}

template <typename T>
[[nodiscard]] std::vector<ScoredExample> predict_all(const FinetuneModel<T>& model, const std::vector<PairExample>& set)
{
    std::vector<ScoredExample> out;
    out.reserve(set.size());
    for (const auto& ex : set) {
        out.push_back({ex.trial_id, predict(model, ex), ex.label});
    }
    return out;
}

struct FinetuneEpoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double val_prauc = 0.0;
    double val_rocauc = 0.0;
};

template <typename T>
struct FinetuneResult {
    std::vector<FinetuneEpoch> log;
    std::size_t best_epoch = 0;
    ClassWeights class_weights;
    std::vector<std::pair<std::string, Tensor<T>>> best_parameters;
    bool monitored_on_train = false;
};

[[nodiscard]] inline std::string finetune_log_csv(const std::vector<FinetuneEpoch>& log)
{
    std::ostringstream out;
    out << "epoch,train_loss,val_f1,val_prauc,val_rocauc\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << format_real(e.train_loss) << ',' << format_real(e.val_f1) << ','
            << format_real(e.val_prauc) << ',' << format_real(e.val_rocauc) << '\n';
    }
    return out.str();
}

namespace detail {

inline double metric_or_nan(const std::function<double()>& f)
{
    try {
        return f();
    } catch (const UndefinedMetricError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

} // namespace detail

/// Adam with two groups (head, adapters) on the class-weighted BCE. Call
/// `prepare_peft` first; frozen parameters are never touched. Each epoch is
/// scored on `validation` (or on the training set when it is empty) and the
/// parameters of the epoch with the highest PR-AUC (then F1) are restored at the end.
template <typename T>
FinetuneResult<T> train_finetune(FinetuneModel<T>& model, const std::vector<PairExample>& train,
                                 const std::vector<PairExample>& validation, const FinetuneConfig& cfg,
                                 const std::function<void(const FinetuneEpoch&)>& on_epoch = {})
{
    cfg.validate();
    if (train.empty()) {
        throw DataError("fine-tuning dataset is empty");
    }
    std::vector<int> labels;
    for (const auto& ex : train) {
        if (ex.label != 0 && ex.label != 1) {
            throw DataError("fine-tuning trial '" + ex.trial_id + "' has no 0/1 label");
        }
        labels.push_back(ex.label);
    }
    FinetuneResult<T> result;
    result.class_weights = cfg.class_weights ? *cfg.class_weights : derive_class_weights(labels);
    result.monitored_on_train = validation.empty();
    const auto& monitored = validation.empty() ? train : validation;

    ParameterList<T> head_params = model.head_parameters();
    ParameterList<T> adapter_params;
    for (const auto& p : model.adapter_parameters()) {
        if (p.param->trainable()) adapter_params.push_back(p);
    }
    ParameterList<T> trainable = head_params;
    trainable.insert(trainable.end(), adapter_params.begin(), adapter_params.end());

    Adam<T> opt;
    opt.add_group(head_params, cfg.head_lr);
    if (!adapter_params.empty()) {
        opt.add_group(adapter_params, cfg.lora_lr);
    }

    // With a fully frozen backbone the head inputs never change: compute them once.
    const bool cache = !model.backbone_trainable();
    std::vector<Tensor<T>> cached;
    if (cache) {
        NoGradGuard guard;
        for (const auto& ex : train) cached.push_back(model.features(ex).value());
    }

    auto snapshot = [&] {
        result.best_parameters.clear();
        for (const auto& p : trainable) result.best_parameters.emplace_back(p.name, p.param->value());
    };
    snapshot();
    std::pair<double, double> best_score{-std::numeric_limits<double>::infinity(), -1.0};
    std::size_t since_best = 0;
    const double w0 = result.class_weights.omega0;
    const double w1 = result.class_weights.omega1;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, 0xF17E0000ULL + epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t m = std::min(cfg.batch_size, order.size() - b);
            opt.zero_grad();
            // The batch loss is a mean of per-trial terms, so per-trial backward passes sum to its gradient.
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t i = order[b + k];
                const auto x = cache ? constant(cached[i]) : model.features(train[i]);
                const auto loss = scale(weighted_bce(model.head().probabilities(x), {train[i].label}, w0, w1),
                                        1.0 / static_cast<double>(m));
                backward(loss);
                epoch_loss += static_cast<double>(loss.item()) * static_cast<double>(m);
            }
            opt.step();
        }

        std::vector<ScoredExample> scored;
        {
            NoGradGuard guard;
            for (const auto& ex : monitored) {
                scored.push_back({ex.trial_id, static_cast<double>(model.probability(ex).item()), ex.label});
            }
        }
        FinetuneEpoch log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(train.size());
        log.val_f1 = f1_at(scored, cfg.threshold);
        log.val_prauc = detail::metric_or_nan([&] { return pr_auc(scored); });
        log.val_rocauc = detail::metric_or_nan([&] { return roc_auc(scored); });
        result.log.push_back(log);
        if (on_epoch) on_epoch(log);

        const std::pair<double, double> score{std::isnan(log.val_prauc) ? -1.0 : log.val_prauc, log.val_f1};
        if (score > best_score) {
            best_score = score;
            result.best_epoch = epoch;
            snapshot();
            since_best = 0;
        } else {
            ++since_best;
        }
        if ((cfg.patience > 0 && since_best >= cfg.patience) || (cfg.stop_at_perfect_f1 && log.val_f1 == 1.0)) {
            break;
        }
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        trainable[i].param->mutable_value() = result.best_parameters[i].second;
    }
    return result;
}

} // namespace trialfuse
