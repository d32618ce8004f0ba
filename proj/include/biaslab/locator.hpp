#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biaslab/corpus.hpp"
#include "biaslab/scorer.hpp"

namespace biaslab {

struct BlockScore {
    int block_index = 0;
    double bmi = 0.0;  // >= 0
    int rank = 0;      // 1 = highest
};

enum class BmiAggregation { SumLastPosition, SumAllPositions, MeanLastPosition };

const char* to_string(BmiAggregation a);
BmiAggregation bmi_aggregation_from_string(const std::string& s);

// 1 - cos(H_i[l], H_{i+1}[l]) in [0,2]; 0 when either norm is ~zero.
double per_position_bmi(const HiddenTrace& trace, int block_index, int position);

// One score per block over the dataset, ranking attached. The scorer must
// expose hidden traces (in-process only).
std::vector<BlockScore> aggregate_bmi(Scorer& scorer, const std::vector<PromptSample>& dataset,
                                      BmiAggregation aggregation = BmiAggregation::SumAllPositions);

// Block indices ordered by descending score; ties broken by lower index.
std::vector<int> rank_blocks(const std::vector<BlockScore>& scores);

struct StabilityReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> per_block_variance;  // variance of mean-normalized values
    double mean_variance = 0.0;
    bool top1_agreement = false;
};

// Seed-resampling robustness protocol: per seed, an n-sample subset is drawn,
// scores recomputed, mean-normalized, and per-block variance across seeds
// reported.
StabilityReport bmi_stability(Scorer& scorer, const std::vector<PromptSample>& dataset,
                              const std::vector<std::uint64_t>& seeds, int n,
                              BmiAggregation aggregation = BmiAggregation::SumAllPositions);

std::string bmi_table_csv(const std::vector<BlockScore>& scores);
std::string bmi_heatmap_json(const std::vector<BlockScore>& scores, BmiAggregation aggregation,
                             const std::string& scorer_id);
std::string stability_report_json(const StabilityReport& report);

}  // namespace biaslab
