#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biaslab/lftf.hpp"
#include "biaslab/metrics.hpp"
#include "biaslab/scorer.hpp"

namespace biaslab {

// Debiasing instruction prepended to every evaluation prompt.
struct PromptPrefix {
    std::string text;
    void validate() const;
};

PromptPrefix load_pb_prefix(const std::filesystem::path& path);

// Metrics on prefixed prompts; the underlying scorer (and any model behind
// it) is untouched.
std::pair<BiasReport, HintReport> pb_eval(Scorer& scorer, const PromptPrefix& prefix,
                                          const std::vector<PromptSample>& bias_set,
                                          const std::vector<HintSample>& hint_set,
                                          const TermSet& terms);

// ----------------------------- comparison harness -----------------------------

struct MethodResult {
    std::string name;
    BiasReport bias;
    std::optional<HintReport> hint;
    double ppl = 0.0;
};

struct ComparisonRow {
    std::string name;
    std::map<Scale, double> afgb_by_scale;
    std::map<Scale, double> delta_by_scale;  // method - original
    double afgb_overall = 0.0;
    double afgb_delta = 0.0;
    double ub = 0.0;
    double ub_delta = 0.0;
    double ppl = 0.0;
    double ppl_delta = 0.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // first row is the original (zero deltas)
};

// First result is the baseline; every run must share the bias dataset digest.
ComparisonTable compare_methods(const std::vector<MethodResult>& results);

std::string comparison_to_csv(const ComparisonTable& table);
std::string comparison_to_json(const ComparisonTable& table);

}  // namespace biaslab
