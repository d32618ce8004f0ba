#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslab/corpus.hpp"
#include "biaslab/locator.hpp"
#include "biaslab/metrics.hpp"
#include "biaslab/model.hpp"
#include "biaslab/scorer.hpp"

namespace biaslab {

// ----------------------------- loss variants -----------------------------
// All variants are functions of the next-token probabilities of the term set
// at the final prompt position. "only_he"/"only_she" keep the probability of
// the first/second term respectively (named after the canonical pair).

enum class LossVariant { Sum, AbsDiff, SqDiff, OnlyHe, OnlyShe, TermsetSum };

const char* to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

double lftf_loss(const std::map<std::string, double>& term_probs, const TermSet& terms,
                 LossVariant variant);

// dL/dp per term; every variant is a smooth (or piecewise-linear) function of
// the term probabilities, so the logit gradient is p_j*(c_j - sum_k c_k p_k).
std::map<std::string, double> lftf_loss_coefficients(
    const std::map<std::string, double>& term_probs, const TermSet& terms, LossVariant variant);

// ----------------------------- configuration -----------------------------

struct LftfConfig {
    double learning_rate = 1e-5;
    int epochs = 2;
    int batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossVariant variant = LossVariant::Sum;
    bool tune_att = true;
    bool tune_mlp = true;
    int target_block = -1;  // -1 = auto (rank-1 by aggregated score)
    BmiAggregation aggregation = BmiAggregation::SumAllPositions;
    std::uint64_t seed = 0;

    AdamConfig adam() const {
        return AdamConfig{learning_rate, adam_beta1, adam_beta2, adam_eps};
    }
    void validate() const;
};

// Datasets used for the before/after reports attached to a run.
struct EvalSuite {
    const std::vector<PromptSample>* bias_eval = nullptr;
    const std::vector<HintSample>* hint_eval = nullptr;
    const std::vector<std::string>* neutral_corpus = nullptr;
    TermSet terms = TermSet::default_pair();
};

struct TrainRun {
    std::string method;  // "lftf", "fpft", "pb", "eval"
    LftfConfig config;
    int tuned_block = -1;  // -1 when not block-scoped
    std::vector<BlockScore> block_scores;  // populated by the auto-locating path
    std::optional<BiasReport> bias_before, bias_after;
    std::optional<HintReport> hint_before, hint_after;
    double ppl_before = 0.0, ppl_after = 0.0;
    std::vector<double> loss_curve;
    std::map<std::string, std::string> digests_before, digests_after;
    std::optional<AntiBiasFinding> anti_bias;
};

std::string train_run_to_json(const TrainRun& run);
TrainRun train_run_from_json(const std::string& content);

// ----------------------------- operations -----------------------------

// Fine-tunes only the chosen block (submodules per config); every other
// parameter group is provably untouched. Returns the tuned model plus the
// run record; the input model is never modified.
std::pair<Model, TrainRun> fine_tune_block(const Model& model, int block_index,
                                           const std::vector<PromptSample>& train_set,
                                           const LftfConfig& config, const EvalSuite& eval);

// Locates the highest-scoring block over the training set, then fine-tunes it.
std::pair<Model, TrainRun> run_lftf(const Model& model,
                                    const std::vector<PromptSample>& train_set,
                                    const LftfConfig& config, const EvalSuite& eval);

// Same loop with every parameter group trainable.
std::pair<Model, TrainRun> fpft(const Model& model, const std::vector<PromptSample>& train_set,
                                const LftfConfig& config, const EvalSuite& eval);

}  // namespace biaslab
