// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trialfuse/checkpoint.hpp"
#include "trialfuse/config.hpp"
#include "trialfuse/criteria/criteria_source.hpp"
#include "trialfuse/data/sct.hpp"
#include "trialfuse/data/splits.hpp"
#include "trialfuse/dm/op_count.hpp"
#include "trialfuse/eval/bootstrap.hpp"
#include "trialfuse/gradcheck_suite.hpp"
#include "trialfuse/peft/finetune.hpp"
#include "trialfuse/pretrain/trainer.hpp"

namespace trialfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags, missing or inconsistent configuration: exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

struct CommonOptions {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string encoder;
    std::string store;
    std::string icd_tree;
    std::string segment_dict;
};

/// Effective configuration: file values overridden by flags. Keys under
/// `path.` name input files and are kept out of the config hash.
struct RunContext {
    KeyValueConfig kv;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;

    [[nodiscard]] std::uint64_t config_hash() const
    {
        KeyValueConfig hashed;
        for (const auto& [k, v] : kv.values()) {
            if (k.rfind("path.", 0) != 0) hashed.set(k, v);
        }
        return hashed.hash();
    }

    [[nodiscard]] std::string hash_hex() const
    {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash()));
        return buf;
    }

    /// Config text plus seed; stored in checkpoint headers.
    [[nodiscard]] std::string metadata() const { return kv.to_text() + "run.seed=" + std::to_string(seed) + "\n"; }

    [[nodiscard]] std::string path(const std::string& name) const
    {
        return (std::filesystem::path(out_dir) / name).string();
    }

    void write(const std::string& name, const std::string& content)
    {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(path(name), std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + path(name));
        f << content;
        if (!f) throw Error("failed writing " + path(name));
        artifacts.push_back(name);
    }

    void warn(const std::string& message)
    {
        warnings.push_back(message);
        *err << "warning: " << message << '\n';
    }

    void write_manifest(const std::string& command)
    {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config_hash"] = hash_hex();
        j["seed"] = seed;
        j["config"] = kv.values();
        j["artifacts"] = artifacts;
        j["warnings"] = warnings;
        write(command + "_manifest.json", j.dump(2) + "\n");
    }
};

inline void add_common(CLI::App& app, CommonOptions& o, bool model_inputs)
{
    app.add_option("--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--out", o.out_dir, "output directory");
    if (model_inputs) {
        app.add_option("--encoder", o.encoder, "criteria encoder")->check(CLI::IsMember({"toy", "store"}));
        app.add_option("--store", o.store, "precomputed criteria embedding store")->check(CLI::ExistingFile);
        app.add_option("--icd-tree", o.icd_tree, "ICD hierarchy TSV (code, parent)")->check(CLI::ExistingFile);
        app.add_option("--segment-dict", o.segment_dict, "SMILES segment dictionary TSV")->check(CLI::ExistingFile);
    }
}

[[nodiscard]] inline RunContext make_context(const CommonOptions& o, std::ostream& out, std::ostream& err)
{
    RunContext ctx;
    ctx.out = &out;
    ctx.err = &err;
    if (!o.config_path.empty()) {
        try {
            ctx.kv = KeyValueConfig::load(o.config_path);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    ctx.seed = o.seed;
    ctx.out_dir = o.out_dir;
    if (!o.encoder.empty()) ctx.kv.set("criteria.encoder", o.encoder);
    if (!o.store.empty()) ctx.kv.set("path.store", o.store);
    if (!o.icd_tree.empty()) ctx.kv.set("path.icd_tree", o.icd_tree);
    if (!o.segment_dict.empty()) ctx.kv.set("path.segment_dict", o.segment_dict);
    return ctx;
}

inline IcdTree load_tree(const RunContext& ctx)
{
    const auto p = ctx.kv.get("path.icd_tree", "");
    if (p.empty()) throw UsageError("an ICD hierarchy is required: pass --icd-tree or set path.icd_tree");
    return IcdTree::load(p);
}

inline SmilesSegmentDict load_dict(const RunContext& ctx, const ModelConfig& cfg)
{
    const auto p = ctx.kv.get("path.segment_dict", "");
    return p.empty() ? SmilesSegmentDict(cfg.d_mol, cfg.segment_seed) : SmilesSegmentDict::load(p, cfg.segment_seed);
}

inline std::unique_ptr<CriteriaSource> make_encoder(RunContext& ctx, ModelConfig& cfg, bool width_fixed)
{
    const auto kind = ctx.kv.get("criteria.encoder", "toy");
    ctx.kv.set("criteria.encoder", kind);
    if (kind == "toy") {
        const auto seed = static_cast<std::uint64_t>(ctx.kv.get_int("criteria.toy_seed", 0));
        return std::make_unique<ToyCriteriaEncoder>(seed, cfg.d_llm);
    }
    if (kind != "store") throw UsageError("criteria.encoder must be toy or store, got '" + kind + "'");
    const auto p = ctx.kv.get("path.store", "");
    if (p.empty()) throw UsageError("--encoder store needs --store PATH");
    auto enc = std::make_unique<StoreCriteriaEncoder>(p);
    if (enc->d_llm() != cfg.d_llm) {
        if (width_fixed) {
            throw DimensionError("store width " + std::to_string(enc->d_llm()) + " differs from the checkpoint's model.d_llm "
                                 + std::to_string(cfg.d_llm));
        }
        cfg.d_llm = enc->d_llm();
    }
    return enc;
}

/// Eligible trials of the file; ineligible ones become warnings.
inline std::vector<TrialRecord> load_eligible(RunContext& ctx, const std::string& path)
{
    auto loaded = load_trials(path);
    for (const auto& w : loaded.warnings) ctx.warn(w);
    std::vector<TrialRecord> out;
    for (auto& t : loaded.records) {
        if (t.eligible()) out.push_back(std::move(t));
    }
    if (out.empty()) throw DataError("no eligible trials in " + path);
    return out;
}

inline Phase phase_or_usage(const std::string& s)
{
    const auto p = parse_phase(s);
    if (!p || *p == Phase::IV) throw UsageError("phase must be I, II or III, got '" + s + "'");
    return *p;
}

/// Model configuration plus seed recorded in a checkpoint's metadata.
struct CheckpointInfo {
    Checkpoint ck;
    KeyValueConfig kv;
};

inline CheckpointInfo read_checkpoint(const std::string& path)
{
    CheckpointInfo info{load_checkpoint(path), {}};
    std::istringstream in(info.ck.header.metadata);
    info.kv = KeyValueConfig::parse(in);
    return info;
}

/// Parameters of `params` restored from `ck`; records outside the list are
/// allowed only under the given prefix.
inline void apply_allowing(const Checkpoint& ck, const ParameterList<float>& params, const std::string& extra_prefix)
{
    Checkpoint filtered{ck.header, {}};
    for (const auto& r : ck.records) {
        if (extra_prefix.empty() || r.first.rfind(extra_prefix, 0) != 0) filtered.records.push_back(r);
    }
    apply_checkpoint(filtered, params, true);
}

// ---------------------------------------------------------------- build-dataset

struct BuildDatasetOptions {
    CommonOptions common;
    std::string data;
    std::string synonyms;
    std::string marketed;
    std::string outcomes;
    std::string cut_date;
};

inline int cmd_build_dataset(const BuildDatasetOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o.common, out, err);
    ctx.kv.set("path.data", o.data);
    ctx.kv.set("path.synonyms", o.synonyms);
    if (!o.marketed.empty()) ctx.kv.set("path.marketed", o.marketed);
    const auto index = DrugEntityIndex::load(o.synonyms, o.marketed);
    auto loaded = load_trials(o.data);
    for (const auto& w : loaded.warnings) ctx.warn(w);
    const auto sct = build_sct(loaded.records, index);
    ctx.write("sct.jsonl", trials_to_jsonl(sct.labeled));
    ctx.write("exclusions.csv", exclusion_report_csv(sct.excluded));
    const auto stats = format_statistics(sct_statistics(sct.labeled, index));
    ctx.write("sct_stats.tsv", stats);
    out << stats;
    out << "labeled " << sct.labeled.size() << ", excluded " << sct.excluded.size() << '\n';

    int status = kExitOk;
    if (!o.outcomes.empty()) {
        if (o.cut_date.empty()) throw UsageError("--outcomes needs --cut-date");
        ctx.kv.set("path.outcomes", o.outcomes);
        ctx.kv.set("split.cut_date", o.cut_date);
        auto outcome_trials = load_trials(o.outcomes);
        for (const auto& w : outcome_trials.warnings) ctx.warn(w);
        const auto split = temporal_split(outcome_trials.records, o.cut_date, ctx.seed);
        ctx.write("train.jsonl", trials_to_jsonl(split.train));
        ctx.write("valid.jsonl", trials_to_jsonl(split.validation));
        ctx.write("test.jsonl", trials_to_jsonl(split.test));
        const auto leak = leakage_check(sct.labeled, split.test);
        std::ostringstream report;
        report << "nct_id,finding\n";
        for (const auto& id : leak.shared_ids) report << id << ",shared_id\n";
        for (const auto& id : leak.case_only_matches) report << id << ",case_only_match\n";
        ctx.write("leakage.csv", report.str());
        for (const auto& id : leak.case_only_matches) ctx.warn("test id '" + id + "' matches a pre-training id up to case");
        out << "split train " << split.train.size() << ", valid " << split.validation.size() << ", test "
            << split.test.size() << "; leakage check " << (leak.passed ? "passed" : "FAILED") << '\n';
        if (!leak.passed) {
            err << "error: " << leak.shared_ids.size() << " test trial(s) also appear in the pre-training set\n";
            status = kExitFailure;
        }
    }
    ctx.write_manifest("build_dataset");
    return status;
}

// --------------------------------------------------------------------- pretrain

struct PretrainOptions {
    CommonOptions common;
    std::string data;
    std::optional<std::size_t> epochs;
};

inline int cmd_pretrain(const PretrainOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o.common, out, err);
    ctx.kv.set("path.data", o.data);
    if (o.epochs) ctx.kv.set("pretrain.epochs", std::to_string(*o.epochs));
    auto cfg = ModelConfig::read_from(ctx.kv);
    const auto encoder = make_encoder(ctx, cfg, false);
    const auto pcfg = PretrainConfig::read_from(ctx.kv);
    pcfg.write_to(ctx.kv);
    cfg.write_to(ctx.kv);
    ctx.kv.set("checkpoint.kind", "pretrain");

    const auto trials = load_eligible(ctx, o.data);
    const auto examples = make_pair_examples(trials, *encoder);
    DMBranch<float> model(cfg, load_tree(ctx), load_dict(ctx, cfg), ctx.seed);
    auto run_cfg = pcfg;
    run_cfg.seed = ctx.seed;
    const auto result = train_pretrain(model, examples, run_cfg, [&](const PretrainEpoch& e) {
        out << "epoch " << e.epoch << " train_loss " << format_real(e.train_loss) << " val_loss "
            << format_real(e.val_loss) << " top1 " << format_real(e.top1_acc) << '\n';
    });

    auto params = model.parameters();
    Parameter<float> log_scale(Tensor<float>::scalar(static_cast<float>(result.log_scale)));
    if (pcfg.learnable_temperature) params.push_back({"pretrain.log_temperature", &log_scale});
    const CheckpointHeader header{ctx.config_hash(), ctx.seed, 0, ctx.metadata()};
    std::filesystem::create_directories(ctx.out_dir);
    save_checkpoint(ctx.path("pretrain.ckpt"), header, params);
    ctx.artifacts.push_back("pretrain.ckpt");
    ctx.write("pretrain_loss.csv", pretrain_curve_csv(result.curve));
    out << "best epoch " << result.best_epoch << " val_loss " << format_real(result.best_val_loss) << '\n';
    ctx.write_manifest("pretrain");
    return kExitOk;
}

// --------------------------------------------------------------------- finetune

struct FinetuneOptions {
    CommonOptions common;
    std::string data;
    std::string valid;
    std::string pretrained;
    std::string phase;
    std::string lora_sites;
    std::optional<std::size_t> epochs;
};

inline std::vector<TrialRecord> of_phase(std::vector<TrialRecord> trials, std::optional<Phase> phase)
{
    if (!phase) return trials;
    std::vector<TrialRecord> out;
    for (auto& t : trials) {
        if (t.phase == *phase) out.push_back(std::move(t));
    }
    return out;
}

inline int cmd_finetune(const FinetuneOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o.common, out, err);
    ctx.kv.set("path.data", o.data);
    if (!o.valid.empty()) ctx.kv.set("path.valid", o.valid);
    if (!o.phase.empty()) ctx.kv.set("finetune.phase", o.phase);
    if (!o.lora_sites.empty()) ctx.kv.set("finetune.lora_sites", o.lora_sites);
    if (o.epochs) ctx.kv.set("finetune.epochs", std::to_string(*o.epochs));
    const std::optional<Phase> phase =
        ctx.kv.has("finetune.phase") ? std::optional<Phase>(phase_or_usage(ctx.kv.get("finetune.phase", ""))) : std::nullopt;
    FinetuneConfig fcfg;
    try {
        fcfg = FinetuneConfig::read_from(ctx.kv, phase.value_or(Phase::I));
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }

    std::optional<CheckpointInfo> pre;
    ModelConfig cfg;
    if (!o.pretrained.empty()) {
        ctx.kv.set("path.pretrained", o.pretrained);
        pre = read_checkpoint(o.pretrained);
        cfg = ModelConfig::read_from(pre->kv);
        for (const auto& k : {"path.icd_tree", "path.segment_dict", "criteria.encoder", "criteria.toy_seed", "path.store"}) {
            if (!ctx.kv.has(k) && pre->kv.has(k)) ctx.kv.set(k, pre->kv.get(k, ""));
        }
    } else {
        cfg = ModelConfig::read_from(ctx.kv);
    }
    const auto encoder = make_encoder(ctx, cfg, pre.has_value());
    cfg.write_to(ctx.kv);
    fcfg.write_to(ctx.kv);
    ctx.kv.set("checkpoint.kind", "finetune");

    const auto train = make_pair_examples(of_phase(load_eligible(ctx, o.data), phase), *encoder);
    std::vector<PairExample> valid;
    if (!o.valid.empty()) valid = make_pair_examples(of_phase(load_eligible(ctx, o.valid), phase), *encoder);

    DMBranch<float> branch(cfg, load_tree(ctx), load_dict(ctx, cfg), ctx.seed);
    if (pre) apply_allowing(pre->ck, branch.parameters(), "pretrain.");
    FinetuneModel<float> model(std::move(branch), fcfg.head_hidden, ctx.seed);
    model.prepare_peft(fcfg.lora_sites, ctx.seed);
    auto run_cfg = fcfg;
    run_cfg.seed = ctx.seed;
    const auto result = train_finetune(model, train, valid, run_cfg, [&](const FinetuneEpoch& e) {
        out << "epoch " << e.epoch << " train_loss " << format_real(e.train_loss) << " val_f1 " << format_real(e.val_f1)
            << " val_prauc " << format_real(e.val_prauc) << " val_rocauc " << format_real(e.val_rocauc) << '\n';
    });
    if (!result.class_weights.warning.empty()) ctx.warn(result.class_weights.warning);
    ctx.kv.set("finetune.omega0", format_real(result.class_weights.omega0));
    ctx.kv.set("finetune.omega1", format_real(result.class_weights.omega1));

    const CheckpointHeader header{ctx.config_hash(), ctx.seed, static_cast<std::uint32_t>(model.head_input_width()),
                                  ctx.metadata()};
    std::filesystem::create_directories(ctx.out_dir);
    save_checkpoint(ctx.path("finetune.ckpt"), header, model.parameters());
    ctx.artifacts.push_back("finetune.ckpt");
    ctx.write("finetune_metrics.csv", finetune_log_csv(result.log));
    out << "best epoch " << result.best_epoch << '\n';
    ctx.write_manifest("finetune");
    return kExitOk;
}

// ------------------------------------------------------------------------- eval

struct EvalOptions {
    CommonOptions common;
    std::string data;
    std::string checkpoint;
    std::string mode = "finetuned";
    std::string subset = "all";
    std::vector<std::string> train_sets;
    std::string valid;
    std::string baseline;
    std::optional<double> threshold;
    std::size_t draws = 10;
    double fraction = 0.8;
};

inline std::vector<ScoredExample> read_predictions(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open predictions " + path);
    std::string line;
    std::getline(in, line);
    std::vector<ScoredExample> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, score, label;
        if (!std::getline(row, id, ',') || !std::getline(row, score, ',') || !std::getline(row, label, ',')) {
            throw ParseError(path + ": expected trial_id,score,label", lineno);
        }
        out.push_back({id, std::stod(score), std::stoi(label)});
    }
    return out;
}

inline std::string predictions_csv(const std::vector<ScoredExample>& ex)
{
    std::ostringstream out;
    out << "trial_id,score,label\n";
    for (const auto& e : ex) out << e.trial_id << ',' << format_real(e.score) << ',' << e.label << '\n';
    return out.str();
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o.common, out, err);
    if (o.mode != "finetuned" && o.mode != "zero-shot") throw UsageError("--mode must be finetuned or zero-shot");
    if (o.subset != "all" && o.subset != "full" && o.subset != "new-disease") {
        throw UsageError("--subset must be all, full or new-disease");
    }
    if (o.subset == "new-disease" && o.train_sets.empty()) {
        throw UsageError("--subset new-disease needs --train-sets");
    }
    const auto info = read_checkpoint(o.checkpoint);
    const auto kind = info.kv.get("checkpoint.kind", "");
    if ((o.mode == "finetuned") != (kind == "finetune")) {
        throw UsageError("--mode " + o.mode + " does not match a " + kind + " checkpoint");
    }
    ctx.kv.set("path.checkpoint", o.checkpoint);
    ctx.kv.set("path.data", o.data);
    ctx.kv.set("eval.mode", o.mode);
    ctx.kv.set("eval.subset", o.subset);
    ctx.kv.set("eval.draws", std::to_string(o.draws));
    ctx.kv.set("eval.fraction", format_real(o.fraction));
    ctx.kv.set("eval.checkpoint_hash", std::to_string(info.ck.header.config_hash));
    for (const auto& k : {"path.icd_tree", "path.segment_dict", "criteria.encoder", "criteria.toy_seed", "path.store"}) {
        if (!ctx.kv.has(k) && info.kv.has(k)) ctx.kv.set(k, info.kv.get(k, ""));
    }
    auto cfg = ModelConfig::read_from(info.kv);
    const auto encoder = make_encoder(ctx, cfg, true);
    const auto model_seed = info.ck.header.seed;
    const auto test = make_pair_examples(load_eligible(ctx, o.data), *encoder);

    std::vector<ScoredExample> scored;
    double threshold = 0.5;
    if (o.mode == "finetuned") {
        const auto fcfg = FinetuneConfig::read_from(info.kv, Phase::I);
        FinetuneModel<float> model(DMBranch<float>(cfg, load_tree(ctx), load_dict(ctx, cfg), model_seed), fcfg.head_hidden,
                                   model_seed);
        model.prepare_peft(fcfg.lora_sites, model_seed);
        apply_checkpoint(info.ck, model.parameters(), true);
        scored = predict_all(model, test);
        threshold = o.threshold.value_or(fcfg.threshold);
    } else {
        DMBranch<float> model(cfg, load_tree(ctx), load_dict(ctx, cfg), model_seed);
        apply_allowing(info.ck, model.parameters(), "pretrain.");
        const auto* learned = info.ck.find("pretrain.log_temperature");
        const double tau = learned ? static_cast<double>((*learned)[0]) : info.kv.get_double("pretrain.tau", kDefaultTau);
        scored = zero_shot_scores(model, test, tau);
        if (o.threshold) {
            threshold = *o.threshold;
        } else if (!o.valid.empty()) {
            ctx.kv.set("path.valid", o.valid);
            threshold = best_f1_threshold(zero_shot_scores(model, make_pair_examples(load_eligible(ctx, o.valid), *encoder), tau));
        } else {
            ctx.warn("zero-shot evaluation without --valid: using threshold 0.5");
        }
    }
    ctx.kv.set("eval.threshold", format_real(threshold));
    for (const auto& s : scored) {
        if (s.label != 0 && s.label != 1) throw DataError("test trial '" + s.trial_id + "' has no 0/1 label");
    }
    ctx.write("predictions.csv", predictions_csv(scored));

    std::vector<std::pair<std::string, std::vector<ScoredExample>>> subsets;
    if (o.subset != "new-disease") subsets.emplace_back("full", scored);
    if (!o.train_sets.empty() && o.subset != "full") {
        std::vector<std::vector<TrialRecord>> train_sets;
        for (const auto& p : o.train_sets) train_sets.push_back(load_trials(p).records);
        std::vector<TrialRecord> test_records = load_trials(o.data).records;
        std::set<std::string> new_ids;
        for (const auto& t : new_disease_subset(train_sets, test_records)) new_ids.insert(t.nct_id);
        std::vector<ScoredExample> sub;
        for (const auto& s : scored) {
            if (new_ids.count(s.trial_id)) sub.push_back(s);
        }
        out << "new-disease subset: " << sub.size() << " of " << scored.size() << " test trials\n";
        if (sub.empty()) {
            ctx.warn("new-disease subset is empty");
        } else {
            subsets.emplace_back("new-disease", sub);
        }
    }

    BootstrapOptions bo;
    bo.n_draws = o.draws;
    bo.fraction = o.fraction;
    bo.seed = ctx.seed;
    bo.metric.threshold = threshold;
    std::vector<EvalReport> reports;
    nlohmann::ordered_json j;
    j["config_hash"] = ctx.hash_hex();
    j["seed"] = ctx.seed;
    j["mode"] = o.mode;
    j["threshold"] = threshold;
    j["reports"] = nlohmann::ordered_json::array();
    for (const auto& [name, ex] : subsets) {
        bo.subset = name;
        reports.push_back(bootstrap_eval(ex, {Metric::f1, Metric::pr_auc, Metric::roc_auc, Metric::accuracy}, bo));
        for (const auto& note : reports.back().notes) ctx.warn(note);
        auto rj = report_to_json(reports.back());
        if (!o.baseline.empty()) {
            const auto base = read_predictions(o.baseline);
            std::set<std::string> ids;
            for (const auto& e : ex) ids.insert(e.trial_id);
            std::vector<ScoredExample> base_sub;
            for (const auto& b : base) {
                if (ids.count(b.trial_id)) base_sub.push_back(b);
            }
            rj["gain"] = gain(binary_calls(ex, threshold), binary_calls(base_sub, threshold));
        }
        j["reports"].push_back(rj);
    }
    ctx.write("eval_report.csv", reports_to_csv(reports));
    ctx.write("eval_report.json", j.dump(2) + "\n");
    out << reports_to_csv(reports);
    ctx.write_manifest("eval");
    return kExitOk;
}

// -------------------------------------------------------------------- gradcheck

inline int cmd_gradcheck(const CommonOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o, out, err);
    const auto tree = load_tree(ctx);
    std::ostringstream csv;
    csv << "case,max_rel_error,coords_checked,worst_parameter,passed\n";
    bool ok = true;
    for (const auto& c : run_gradient_suite(tree)) {
        ok = ok && c.passed();
        csv << c.name << ',' << format_real(c.result.max_rel_error) << ',' << c.result.coords_checked << ','
            << c.result.worst_parameter << ',' << (c.passed() ? "true" : "false") << '\n';
        out << (c.passed() ? "PASS " : "FAIL ") << c.name << "  max rel err " << c.result.max_rel_error << '\n';
    }
    ctx.write("gradcheck.csv", csv.str());
    ctx.write_manifest("gradcheck");
    if (!ok) err << "error: gradient check failed\n";
    return ok ? kExitOk : kExitFailure;
}

// ------------------------------------------------------------------------ bench

struct BenchOptions {
    CommonOptions common;
    std::vector<std::size_t> crit_lens{128, 256, 512};
    std::size_t n_mol = 10;
    std::size_t n_dis = 3;
    bool measure = false;
};

struct BenchRow {
    std::size_t n_crit = 0;
    std::uint64_t grouping_total = 0;
    std::uint64_t grouping_criteria = 0;
    double grouping_ratio = 0.0;
    double grouping_expected = 0.0;
    std::uint64_t no_grouping_total = 0;
    std::uint64_t no_grouping_quadratic = 0;
    double no_grouping_ratio = 0.0;
    double no_grouping_expected = 0.0;
    std::uint64_t forward_closed_form = 0;
    std::uint64_t forward_measured = 0;  // 0 when not measured
};

/// Ratios are relative to the first criteria length; the expected columns
/// are (n/n0) for the linear grouping cost and (n/n0)^2 for the quadratic term.
[[nodiscard]] inline std::vector<BenchRow> bench_rows(const ModelConfig& cfg, const std::vector<std::size_t>& lens,
                                                      std::size_t n_mol, std::size_t n_dis)
{
    std::vector<BenchRow> rows;
    for (const auto n : lens) {
        const auto r = count_attention_ops(cfg, n_mol, n_dis, n);
        BenchRow row;
        row.n_crit = n;
        row.grouping_total = r.grouping_total();
        row.grouping_criteria = r.grouping_criteria_cost();
        row.no_grouping_total = r.no_grouping_total();
        row.no_grouping_quadratic = r.no_grouping_quadratic();
        rows.push_back(row);
    }
    for (auto& row : rows) {
        const double scale = static_cast<double>(row.n_crit) / static_cast<double>(rows.front().n_crit);
        row.grouping_ratio = static_cast<double>(row.grouping_criteria) / static_cast<double>(rows.front().grouping_criteria);
        row.grouping_expected = scale;
        row.no_grouping_ratio =
            static_cast<double>(row.no_grouping_quadratic) / static_cast<double>(rows.front().no_grouping_quadratic);
        row.no_grouping_expected = scale * scale;
    }
    return rows;
}

inline int cmd_bench(const BenchOptions& o, std::ostream& out, std::ostream& err)
{
    auto ctx = make_context(o.common, out, err);
    if (o.crit_lens.empty()) throw UsageError("--crit-lens needs at least one length");
    auto cfg = ModelConfig::read_from(ctx.kv);
    cfg.write_to(ctx.kv);
    std::string lens;
    for (const auto n : o.crit_lens) lens += (lens.empty() ? "" : ",") + std::to_string(n);
    ctx.kv.set("bench.crit_lens", lens);
    ctx.kv.set("bench.n_mol", std::to_string(o.n_mol));
    ctx.kv.set("bench.n_dis", std::to_string(o.n_dis));
    auto rows = bench_rows(cfg, o.crit_lens, o.n_mol, o.n_dis);

    if (o.measure) {
        const auto tree = load_tree(ctx);
        const DMBranch<float> model(cfg, tree, load_dict(ctx, cfg), ctx.seed);
        const DrugDiseaseInput input{{"CC(=O)Oc1ccccc1C(=O)O"}, {tree.nodes().back()}};
        const auto n_mol = model.embed_molecules(input.smiles).length();
        const auto n_dis = model.embed_diseases(input.icd_codes).length();
        for (auto& row : rows) {
            std::string text;
            for (std::size_t i = 0; i < row.n_crit; ++i) text += "c" + std::to_string(i) + ' ';
            NoGradGuard guard;
            mac_counter() = 0;
            (void)model.forward(input, toy_encode(text, 0, cfg.d_llm));
            row.forward_measured = mac_counter();
            row.forward_closed_form = forward_macs(cfg, n_mol, n_dis, row.n_crit, tree.size());
        }
    }

    std::ostringstream csv;
    csv << "n_crit,grouping_attention_macs,grouping_criteria_macs,grouping_ratio,grouping_expected_ratio,"
           "no_grouping_attention_macs,no_grouping_quadratic_macs,no_grouping_ratio,no_grouping_expected_ratio";
    if (o.measure) csv << ",forward_macs_closed_form,forward_macs_measured";
    csv << '\n';
    for (const auto& r : rows) {
        csv << r.n_crit << ',' << r.grouping_total << ',' << r.grouping_criteria << ',' << format_real(r.grouping_ratio) << ','
            << format_real(r.grouping_expected) << ',' << r.no_grouping_total << ',' << r.no_grouping_quadratic << ','
            << format_real(r.no_grouping_ratio) << ',' << format_real(r.no_grouping_expected);
        if (o.measure) csv << ',' << r.forward_closed_form << ',' << r.forward_measured;
        csv << '\n';
    }
    ctx.write("bench.csv", csv.str());
    out << csv.str();
    ctx.write_manifest("bench");
    return kExitOk;
}

// ------------------------------------------------------------------------- main

inline void check_thread_env()
{
    if (const char* v = std::getenv("CLADMOP_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(v, &end, 10);
        if (end == v || *end != '\0' || n < 1) {
            throw UsageError(std::string("CLADMOP_THREADS must be a positive integer, got '") + v + "'");
        }
    }
}

/// Parses and runs one subcommand. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Drug-disease-criteria trial outcome models", "trialfuse"};
    app.require_subcommand(1);

    BuildDatasetOptions bd;
    auto* sub_bd = app.add_subcommand("build-dataset", "build the successful-trial set and exclusion report");
    add_common(*sub_bd, bd.common, false);
    sub_bd->add_option("--data", bd.data, "trial JSON-lines file")->required()->check(CLI::ExistingFile);
    sub_bd->add_option("--synonyms", bd.synonyms, "drug synonym TSV (name, canonical id)")->required()->check(CLI::ExistingFile);
    sub_bd->add_option("--marketed", bd.marketed, "marketed canonical ids, one per line")->check(CLI::ExistingFile);
    sub_bd->add_option("--outcomes", bd.outcomes, "labeled outcome trials to split temporally")->check(CLI::ExistingFile);
    sub_bd->add_option("--cut-date", bd.cut_date, "last start date (YYYY-MM-DD) of the training period");

    PretrainOptions pt;
    auto* sub_pt = app.add_subcommand("pretrain", "pair-matching pre-training");
    add_common(*sub_pt, pt.common, true);
    sub_pt->add_option("--data", pt.data, "successful-trial JSON-lines file")->required()->check(CLI::ExistingFile);
    sub_pt->add_option("--epochs", pt.epochs, "number of epochs");

    FinetuneOptions ft;
    auto* sub_ft = app.add_subcommand("finetune", "fine-tune head and adapters");
    add_common(*sub_ft, ft.common, true);
    sub_ft->add_option("--data", ft.data, "labeled training trials")->required()->check(CLI::ExistingFile);
    sub_ft->add_option("--valid", ft.valid, "labeled validation trials")->check(CLI::ExistingFile);
    sub_ft->add_option("--pretrained", ft.pretrained, "pre-training checkpoint")->check(CLI::ExistingFile);
    sub_ft->add_option("--phase", ft.phase, "trial phase")->check(CLI::IsMember({"I", "II", "III"}));
    sub_ft->add_option("--lora-sites", ft.lora_sites, "adapter placement")
        ->check(CLI::IsMember({"none", "cross", "self", "both", "cross_only", "self_only"}));
    sub_ft->add_option("--epochs", ft.epochs, "number of epochs");

    EvalOptions ev;
    auto* sub_ev = app.add_subcommand("eval", "bootstrap evaluation of a checkpoint");
    add_common(*sub_ev, ev.common, true);
    sub_ev->add_option("--data", ev.data, "labeled test trials")->required()->check(CLI::ExistingFile);
    sub_ev->add_option("--checkpoint", ev.checkpoint, "fine-tune or pre-training checkpoint")->required()->check(CLI::ExistingFile);
    sub_ev->add_option("--mode", ev.mode, "finetuned or zero-shot")->check(CLI::IsMember({"finetuned", "zero-shot"}));
    sub_ev->add_option("--subset", ev.subset, "all, full or new-disease")->check(CLI::IsMember({"all", "full", "new-disease"}));
    sub_ev->add_option("--train-sets", ev.train_sets, "training files of every phase (new-disease subset)")
        ->delimiter(',')
        ->check(CLI::ExistingFile);
    sub_ev->add_option("--valid", ev.valid, "validation trials for the zero-shot threshold")->check(CLI::ExistingFile);
    sub_ev->add_option("--baseline", ev.baseline, "baseline predictions CSV for the gain column")->check(CLI::ExistingFile);
    sub_ev->add_option("--threshold", ev.threshold, "decision threshold");
    sub_ev->add_option("--draws", ev.draws, "bootstrap draws")->check(CLI::PositiveNumber);
    sub_ev->add_option("--fraction", ev.fraction, "bootstrap draw fraction")->check(CLI::Range(0.0, 1.0));

    CommonOptions gc;
    auto* sub_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(*sub_gc, gc, true);

    BenchOptions be;
    auto* sub_be = app.add_subcommand("bench", "attention op-count scaling table");
    add_common(*sub_be, be.common, true);
    sub_be->add_option("--crit-lens", be.crit_lens, "criteria lengths")->delimiter(',')->check(CLI::PositiveNumber);
    sub_be->add_option("--n-mol", be.n_mol, "molecule tokens")->check(CLI::PositiveNumber);
    sub_be->add_option("--n-dis", be.n_dis, "disease tokens")->check(CLI::PositiveNumber);
    sub_be->add_flag("--measure", be.measure, "also run one forward pass per length and count its MACs (needs --icd-tree)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
            err << sub->help();
        } else {
            err << app.help();
        }
        return kExitUsage;
    }

    try {
        check_thread_env();
        if (sub_bd->parsed()) return cmd_build_dataset(bd, out, err);
        if (sub_pt->parsed()) return cmd_pretrain(pt, out, err);
        if (sub_ft->parsed()) return cmd_finetune(ft, out, err);
        if (sub_ev->parsed()) return cmd_eval(ev, out, err);
        if (sub_gc->parsed()) return cmd_gradcheck(gc, out, err);
        if (sub_be->parsed()) return cmd_bench(be, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace trialfuse::cli
