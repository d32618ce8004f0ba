#include "biaslab/lftf.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

const char* to_string(LossVariant v) {
    switch (v) {
        case LossVariant::Sum: return "sum";
        case LossVariant::AbsDiff: return "abs_diff";
        case LossVariant::SqDiff: return "sq_diff";
        case LossVariant::OnlyHe: return "only_he";
        case LossVariant::OnlyShe: return "only_she";
        case LossVariant::TermsetSum: return "termset_sum";
    }
    return "?";
}

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "sum") return LossVariant::Sum;
    if (s == "abs_diff") return LossVariant::AbsDiff;
    if (s == "sq_diff") return LossVariant::SqDiff;
    if (s == "only_he") return LossVariant::OnlyHe;
    if (s == "only_she") return LossVariant::OnlyShe;
    if (s == "termset_sum") return LossVariant::TermsetSum;
    throw ValidationError("unknown loss variant: " + s);
}

namespace {

double term_prob(const std::map<std::string, double>& probs, const std::string& term) {
    const auto it = probs.find(term);
    if (it == probs.end()) throw ValidationError("missing term probability: " + term);
    return it->second;
}

void require_pair(const TermSet& terms, LossVariant v) {
    if (terms.terms.size() < 2) {
        throw ValidationError(std::string("loss variant ") + to_string(v) +
                              " needs at least two terms");
    }
}

}  // namespace

double lftf_loss(const std::map<std::string, double>& term_probs, const TermSet& terms,
                 LossVariant variant) {
    terms.validate();
    switch (variant) {
        case LossVariant::Sum: {
            require_pair(terms, variant);
            return term_prob(term_probs, terms.terms[0]) + term_prob(term_probs, terms.terms[1]);
        }
        case LossVariant::AbsDiff: {
            require_pair(terms, variant);
            return std::fabs(term_prob(term_probs, terms.terms[0]) -
                             term_prob(term_probs, terms.terms[1]));
        }
        case LossVariant::SqDiff: {
            require_pair(terms, variant);
            const double g = term_prob(term_probs, terms.terms[0]) -
                             term_prob(term_probs, terms.terms[1]);
            return g * g;
        }
        case LossVariant::OnlyHe:
            return term_prob(term_probs, terms.terms[0]);
        case LossVariant::OnlyShe: {
            require_pair(terms, variant);
            return term_prob(term_probs, terms.terms[1]);
        }
        case LossVariant::TermsetSum: {
            double sum = 0.0;
            for (const auto& t : terms.terms) sum += term_prob(term_probs, t);
            return sum;
        }
    }
    throw ValidationError("unknown loss variant");
}

std::map<std::string, double> lftf_loss_coefficients(
    const std::map<std::string, double>& term_probs, const TermSet& terms, LossVariant variant) {
    terms.validate();
    std::map<std::string, double> c;
    for (const auto& t : terms.terms) c[t] = 0.0;
    switch (variant) {
        case LossVariant::Sum:
            require_pair(terms, variant);
            c[terms.terms[0]] = 1.0;
            c[terms.terms[1]] = 1.0;
            break;
        case LossVariant::AbsDiff: {
            require_pair(terms, variant);
            const double g = term_prob(term_probs, terms.terms[0]) -
                             term_prob(term_probs, terms.terms[1]);
            const double s = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
            c[terms.terms[0]] = s;
            c[terms.terms[1]] = -s;
            break;
        }
        case LossVariant::SqDiff: {
            require_pair(terms, variant);
            const double g = term_prob(term_probs, terms.terms[0]) -
                             term_prob(term_probs, terms.terms[1]);
            c[terms.terms[0]] = 2.0 * g;
            c[terms.terms[1]] = -2.0 * g;
            break;
        }
        case LossVariant::OnlyHe:
            c[terms.terms[0]] = 1.0;
            break;
        case LossVariant::OnlyShe:
            require_pair(terms, variant);
            c[terms.terms[1]] = 1.0;
            break;
        case LossVariant::TermsetSum:
            for (const auto& t : terms.terms) c[t] = 1.0;
            break;
    }
    return c;
}

void LftfConfig::validate() const {
    if (learning_rate <= 0) throw ValidationError("learning rate must be positive");
    if (batch_size <= 0) throw ValidationError("batch size must be positive");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!tune_att && !tune_mlp) {
        throw ValidationError("at least one of att/mlp must be tunable");
    }
}

// ----------------------------- shared fine-tuning loop -----------------------------

namespace {

struct EvalSnapshot {
    std::optional<BiasReport> bias;
    std::optional<HintReport> hint;
    double ppl = 0.0;
};

EvalSnapshot evaluate(const Model& model, const EvalSuite& eval) {
    EvalSnapshot snap;
    MicroLmScorer scorer(model);
    if (eval.bias_eval && !eval.bias_eval->empty()) {
        snap.bias = afgb_score(scorer, *eval.bias_eval, eval.terms);
    }
    if (eval.hint_eval && !eval.hint_eval->empty()) {
        snap.hint = ub_score(scorer, *eval.hint_eval, eval.terms);
    }
    if (eval.neutral_corpus && !eval.neutral_corpus->empty()) {
        snap.ppl = perplexity(model, *eval.neutral_corpus);
    }
    return snap;
}

// trains `model` in place over final-position term losses with the given mask
std::vector<double> tune_with_mask(Model& model, const ParamMask& mask,
                                   const std::vector<PromptSample>& train_set,
                                   const LftfConfig& config, const TermSet& terms) {
    std::vector<std::pair<int, std::vector<int>>> sequences;  // (id, tokens)
    sequences.reserve(train_set.size());
    for (const auto& s : train_set) {
        sequences.emplace_back(s.id, model.encode_prompt(s.text));
    }
    std::sort(sequences.begin(), sequences.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<int> term_ids;
    for (const auto& t : terms.terms) term_ids.push_back(model.vocab.id(Vocab::lowercase(t)));

    std::vector<double> curve;
    if (config.epochs <= 0) return curve;

    AdamOptimizer opt(model, config.adam());
    Rng rng(config.seed);
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int v = model.config.vocab_size;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double inv_n = 1.0 / static_cast<double>(end - start);
            Gradients batch;
            bool first = true;
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& tokens = sequences[order[i]].second;
                const auto cache = forward_cached(model, tokens);
                const int t_len = static_cast<int>(tokens.size());
                const auto probs = softmax(std::span<const double>(
                    cache.logits.data() + static_cast<std::ptrdiff_t>(t_len - 1) * v,
                    static_cast<std::size_t>(v)));
                std::map<std::string, double> term_probs;
                for (std::size_t k = 0; k < terms.terms.size(); ++k) {
                    term_probs[terms.terms[k]] =
                        probs[static_cast<std::size_t>(term_ids[k])];
                }
                batch_loss += lftf_loss(term_probs, terms, config.variant);
                const auto coeffs = lftf_loss_coefficients(term_probs, terms, config.variant);

                double dot = 0.0;
                for (std::size_t k = 0; k < terms.terms.size(); ++k) {
                    dot += coeffs.at(terms.terms[k]) *
                           probs[static_cast<std::size_t>(term_ids[k])];
                }
                std::vector<double> dlogits(static_cast<std::size_t>(t_len) * v, 0.0);
                double* dl = dlogits.data() + static_cast<std::ptrdiff_t>(t_len - 1) * v;
                for (int j = 0; j < v; ++j) {
                    dl[j] = -probs[static_cast<std::size_t>(j)] * dot;
                }
                for (std::size_t k = 0; k < terms.terms.size(); ++k) {
                    const int id = term_ids[k];
                    dl[id] += probs[static_cast<std::size_t>(id)] * coeffs.at(terms.terms[k]);
                }
                auto g = backward(model, cache, dlogits, mask);
                if (first) {
                    batch = std::move(g);
                    first = false;
                } else {
                    batch.accumulate(g);
                }
            }
            batch_loss *= inv_n;
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("fine-tuning diverged: non-finite loss");
            }
            batch.scale(inv_n);
            opt.step(model, batch, mask);
            curve.push_back(batch_loss);
        }
    }
    return curve;
}

TrainRun finish_run(std::string method, const Model& before, Model& after,
                    const LftfConfig& config, const EvalSuite& eval, int tuned_block,
                    std::vector<double> curve) {
    TrainRun run;
    run.method = std::move(method);
    run.config = config;
    run.tuned_block = tuned_block;
    run.loss_curve = std::move(curve);
    run.digests_before = parameter_digests(before);
    run.digests_after = parameter_digests(after);

    const auto snap_before = evaluate(before, eval);
    const auto snap_after = evaluate(after, eval);
    run.bias_before = snap_before.bias;
    run.bias_after = snap_after.bias;
    run.hint_before = snap_before.hint;
    run.hint_after = snap_after.hint;
    run.ppl_before = snap_before.ppl;
    run.ppl_after = snap_after.ppl;
    if (run.bias_before && run.bias_after) {
        run.anti_bias = detect_anti_bias(*run.bias_before, *run.bias_after);
    }
    return run;
}

}  // namespace

std::pair<Model, TrainRun> fine_tune_block(const Model& model, int block_index,
                                           const std::vector<PromptSample>& train_set,
                                           const LftfConfig& config, const EvalSuite& eval) {
    config.validate();
    if (block_index < 0 || block_index >= model.config.n_blocks) {
        throw ValidationError("block index out of range: " + std::to_string(block_index));
    }
    if (train_set.empty()) throw ValidationError("empty fine-tuning set");

    Model tuned = model;
    const ParamMask mask = ParamMask::single_block(model.config.n_blocks, block_index,
                                                   config.tune_att, config.tune_mlp);
    tuned.mask = mask;
    auto curve = tune_with_mask(tuned, mask, train_set, config, eval.terms);
    auto run = finish_run("lftf", model, tuned, config, eval, block_index, std::move(curve));
    return {std::move(tuned), std::move(run)};
}

std::pair<Model, TrainRun> run_lftf(const Model& model,
                                    const std::vector<PromptSample>& train_set,
                                    const LftfConfig& config, const EvalSuite& eval) {
    config.validate();
    int target = config.target_block;
    std::vector<BlockScore> scores;
    if (target < 0) {
        MicroLmScorer scorer(model);
        scores = aggregate_bmi(scorer, train_set, config.aggregation);
        target = rank_blocks(scores).front();
    }
    auto [tuned, run] = fine_tune_block(model, target, train_set, config, eval);
    run.block_scores = std::move(scores);
    return {std::move(tuned), std::move(run)};
}

std::pair<Model, TrainRun> fpft(const Model& model, const std::vector<PromptSample>& train_set,
                                const LftfConfig& config, const EvalSuite& eval) {
    config.validate();
    if (train_set.empty()) throw ValidationError("empty fine-tuning set");

    Model tuned = model;
    const ParamMask mask = ParamMask::all(model.config.n_blocks);
    tuned.mask = mask;
    auto curve = tune_with_mask(tuned, mask, train_set, config, eval.terms);
    auto run = finish_run("fpft", model, tuned, config, eval, -1, std::move(curve));
    return {std::move(tuned), std::move(run)};
}

// ----------------------------- serialization -----------------------------

namespace {

json optional_bias_to_json(const std::optional<BiasReport>& r) {
    if (!r) return nullptr;
    return json::parse(bias_report_to_json(*r));
}

json optional_hint_to_json(const std::optional<HintReport>& r) {
    if (!r) return nullptr;
    return json::parse(hint_report_to_json(*r));
}

}  // namespace

std::string train_run_to_json(const TrainRun& run) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "train_run";
    j["method"] = run.method;
    j["config"] = {
        {"learning_rate", run.config.learning_rate},
        {"epochs", run.config.epochs},
        {"batch_size", run.config.batch_size},
        {"optimizer", "adam"},
        {"adam_beta1", run.config.adam_beta1},
        {"adam_beta2", run.config.adam_beta2},
        {"adam_eps", run.config.adam_eps},
        {"loss_variant", to_string(run.config.variant)},
        {"tune_att", run.config.tune_att},
        {"tune_mlp", run.config.tune_mlp},
        {"target_block", run.config.target_block},
        {"aggregation", to_string(run.config.aggregation)},
        {"seed", run.config.seed},
    };
    j["tuned_block"] = run.tuned_block;
    if (!run.block_scores.empty()) {
        json blocks = json::array();
        for (const auto& s : run.block_scores) {
            blocks.push_back({{"block_index", s.block_index}, {"bmi", s.bmi}, {"rank", s.rank}});
        }
        j["block_scores"] = blocks;
    }
    j["bias_before"] = optional_bias_to_json(run.bias_before);
    j["bias_after"] = optional_bias_to_json(run.bias_after);
    j["hint_before"] = optional_hint_to_json(run.hint_before);
    j["hint_after"] = optional_hint_to_json(run.hint_after);
    j["ppl_before"] = run.ppl_before;
    j["ppl_after"] = run.ppl_after;
    j["loss_curve"] = run.loss_curve;
    j["digests_before"] = run.digests_before;
    j["digests_after"] = run.digests_after;
    if (run.anti_bias) {
        j["anti_bias"] = {
            {"flagged", run.anti_bias->flagged},
            {"after_afgb", run.anti_bias->after_afgb},
            {"threshold", run.anti_bias->threshold},
            {"dominant_after_sign", run.anti_bias->dominant_after_sign},
            {"n_counter_oriented", run.anti_bias->n_counter_oriented},
            {"n_reversed", run.anti_bias->n_reversed},
            {"exemplar_ids", run.anti_bias->exemplar_ids},
        };
    }
    return j.dump(2) + "\n";
}

TrainRun train_run_from_json(const std::string& content) {
    const json j = json::parse(content);
    TrainRun run;
    run.method = j.at("method").get<std::string>();
    const auto& c = j.at("config");
    run.config.learning_rate = c.at("learning_rate").get<double>();
    run.config.epochs = c.at("epochs").get<int>();
    run.config.batch_size = c.at("batch_size").get<int>();
    run.config.adam_beta1 = c.value("adam_beta1", 0.9);
    run.config.adam_beta2 = c.value("adam_beta2", 0.999);
    run.config.adam_eps = c.value("adam_eps", 1e-8);
    run.config.variant = loss_variant_from_string(c.at("loss_variant").get<std::string>());
    run.config.tune_att = c.value("tune_att", true);
    run.config.tune_mlp = c.value("tune_mlp", true);
    run.config.target_block = c.value("target_block", -1);
    run.config.aggregation =
        bmi_aggregation_from_string(c.value("aggregation", std::string("sum_all_positions")));
    run.config.seed = c.value("seed", 0ULL);
    run.tuned_block = j.value("tuned_block", -1);
    if (j.contains("block_scores") && j.at("block_scores").is_array()) {
        for (const auto& b : j.at("block_scores")) {
            run.block_scores.push_back({b.at("block_index").get<int>(),
                                        b.at("bmi").get<double>(), b.at("rank").get<int>()});
        }
    }
    const auto opt_bias = [&](const char* key) -> std::optional<BiasReport> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return bias_report_from_json(j.at(key).dump());
    };
    const auto opt_hint = [&](const char* key) -> std::optional<HintReport> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return hint_report_from_json(j.at(key).dump());
    };
    run.bias_before = opt_bias("bias_before");
    run.bias_after = opt_bias("bias_after");
    run.hint_before = opt_hint("hint_before");
    run.hint_after = opt_hint("hint_after");
    run.ppl_before = j.value("ppl_before", 0.0);
    run.ppl_after = j.value("ppl_after", 0.0);
    if (j.contains("loss_curve")) {
        for (const auto& x : j.at("loss_curve")) run.loss_curve.push_back(x.get<double>());
    }
    if (j.contains("digests_before")) {
        for (const auto& [k, v] : j.at("digests_before").items()) {
            run.digests_before[k] = v.get<std::string>();
        }
    }
    if (j.contains("digests_after")) {
        for (const auto& [k, v] : j.at("digests_after").items()) {
            run.digests_after[k] = v.get<std::string>();
        }
    }
    if (j.contains("anti_bias") && !j.at("anti_bias").is_null()) {
        const auto& a = j.at("anti_bias");
        AntiBiasFinding f;
        f.flagged = a.at("flagged").get<bool>();
        f.after_afgb = a.at("after_afgb").get<double>();
        f.threshold = a.value("threshold", 0.9);
        f.dominant_after_sign = a.value("dominant_after_sign", 0);
        f.n_counter_oriented = a.value("n_counter_oriented", 0);
        f.n_reversed = a.value("n_reversed", 0);
        if (a.contains("exemplar_ids")) {
            for (const auto& id : a.at("exemplar_ids")) f.exemplar_ids.push_back(id.get<int>());
        }
        run.anti_bias = f;
    }
    return run;
}

}  // namespace biaslab
