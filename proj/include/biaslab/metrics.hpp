#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslab/corpus.hpp"
#include "biaslab/scorer.hpp"

namespace biaslab {

// ----------------------------- reports -----------------------------

struct PerSampleGap {
    int id = 0;
    double gap = 0.0;  // signed for pairs; pairwise-mean magnitude for N-term sets
};

struct BiasReport {
    double afgb_overall = 0.0;                   // [0,1]
    std::map<Scale, double> afgb_by_scale;
    std::map<Scale, int> n_by_scale;
    int n_samples = 0;
    std::vector<PerSampleGap> per_sample;        // id-sorted signed gaps (pairs only)
    std::string scorer_id;
    std::string dataset_digest;
    TermResolution resolution;
};

struct HintReport {
    double ub_overall = 0.0;                     // [-1,1]
    double male_mean = 0.0;
    double female_mean = 0.0;
    int n_male = 0;
    int n_female = 0;
    bool unbalanced = false;                     // single-class dataset
    std::string scorer_id;
    std::string dataset_digest;
    TermResolution resolution;
};

struct CaseRow {
    std::string profession;
    std::map<std::string, double> probs;  // term -> raw probability
};

struct AntiBiasFinding {
    bool flagged = false;
    double after_afgb = 0.0;
    double threshold = 0.9;
    int dominant_after_sign = 0;    // +1 / -1
    int n_counter_oriented = 0;     // samples stereotyped against the after-direction
    int n_reversed = 0;             // of those, how many flipped to the after-direction
    std::vector<int> exemplar_ids;  // strongest reversals
};

// ----------------------------- operations -----------------------------

// P(terms[0]) - P(terms[1]); pairs only.
double signed_gap(const std::map<std::string, double>& term_probs, const TermSet& terms);

// Mean |gap| over all unordered term pairs; equals |signed_gap| for pairs.
double pairwise_gap_magnitude(const std::map<std::string, double>& term_probs,
                              const TermSet& terms);

BiasReport afgb_score(Scorer& scorer, const std::vector<PromptSample>& dataset,
                      const TermSet& terms);

HintReport ub_score(Scorer& scorer, const std::vector<HintSample>& dataset,
                    const TermSet& terms);

std::vector<CaseRow> case_table(Scorer& scorer, const std::vector<std::string>& professions,
                                const PromptTemplate& tmpl, const TermSet& terms);

// Flags mitigation runs that inverted the model's stereotypes instead of
// equalizing them: the after-report is saturated (afgb above threshold) and a
// majority of the samples that previously pointed against the dominant
// after-direction have flipped to it.
AntiBiasFinding detect_anti_bias(const BiasReport& before, const BiasReport& after,
                                 double threshold = 0.9);

// ----------------------------- serialization -----------------------------

std::string bias_report_to_json(const BiasReport& report, bool include_per_sample = true);
BiasReport bias_report_from_json(const std::string& content);

std::string hint_report_to_json(const HintReport& report);
HintReport hint_report_from_json(const std::string& content);

std::string case_table_to_json(const std::vector<CaseRow>& rows);
std::string bias_report_to_csv(const BiasReport& report);

}  // namespace biaslab
