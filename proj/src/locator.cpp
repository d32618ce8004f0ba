#include "biaslab/locator.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

const char* to_string(BmiAggregation a) {
    switch (a) {
        case BmiAggregation::SumLastPosition: return "sum_last_position";
        case BmiAggregation::SumAllPositions: return "sum_all_positions";
        case BmiAggregation::MeanLastPosition: return "mean_last_position";
    }
    return "?";
}

BmiAggregation bmi_aggregation_from_string(const std::string& s) {
    if (s == "sum_last_position") return BmiAggregation::SumLastPosition;
    if (s == "sum_all_positions") return BmiAggregation::SumAllPositions;
    if (s == "mean_last_position") return BmiAggregation::MeanLastPosition;
    throw ValidationError("unknown aggregation: " + s);
}

double per_position_bmi(const HiddenTrace& trace, int block_index, int position) {
    const int n_blocks = static_cast<int>(trace.states.size()) - 1;
    if (block_index < 0 || block_index >= n_blocks) {
        throw ValidationError("block index out of range: " + std::to_string(block_index));
    }
    if (position < 0 || position >= trace.seq_len) {
        throw ValidationError("position out of range: " + std::to_string(position));
    }
    const int d = trace.d_model;
    const double* a =
        trace.states[static_cast<std::size_t>(block_index)].data() +
        static_cast<std::ptrdiff_t>(position) * d;
    const double* b =
        trace.states[static_cast<std::size_t>(block_index) + 1].data() +
        static_cast<std::ptrdiff_t>(position) * d;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < d; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return 1.0 - dot / (na * nb);
}

namespace {

std::vector<const PromptSample*> id_sorted(const std::vector<PromptSample>& samples) {
    std::vector<const PromptSample*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(&s);
    std::sort(out.begin(), out.end(),
              [](const PromptSample* a, const PromptSample* b) { return a->id < b->id; });
    return out;
}

void attach_ranks(std::vector<BlockScore>& scores) {
    const auto order = rank_blocks(scores);
    for (std::size_t r = 0; r < order.size(); ++r) {
        scores[static_cast<std::size_t>(order[r])].rank = static_cast<int>(r) + 1;
    }
}

std::vector<double> raw_bmi(Scorer& scorer, const std::vector<const PromptSample*>& samples,
                            BmiAggregation aggregation, int n_blocks) {
    std::vector<double> acc(static_cast<std::size_t>(n_blocks), 0.0);
    for (const auto* s : samples) {
        const HiddenTrace trace = scorer.hidden_trace(s->text);
        for (int b = 0; b < n_blocks; ++b) {
            switch (aggregation) {
                case BmiAggregation::SumLastPosition:
                case BmiAggregation::MeanLastPosition:
                    acc[static_cast<std::size_t>(b)] +=
                        per_position_bmi(trace, b, trace.seq_len - 1);
                    break;
                case BmiAggregation::SumAllPositions:
                    for (int l = 0; l < trace.seq_len; ++l) {
                        acc[static_cast<std::size_t>(b)] += per_position_bmi(trace, b, l);
                    }
                    break;
            }
        }
    }
    if (aggregation == BmiAggregation::MeanLastPosition) {
        for (auto& v : acc) v /= static_cast<double>(samples.size());
    }
    return acc;
}

}  // namespace

std::vector<BlockScore> aggregate_bmi(Scorer& scorer, const std::vector<PromptSample>& dataset,
                                      BmiAggregation aggregation) {
    if (dataset.empty()) throw ValidationError("bmi aggregation over empty dataset");
    if (!scorer.capabilities().has_hidden_traces) {
        throw CapabilityError("scorer '" + scorer.id() + "' cannot provide hidden traces");
    }
    const int n_blocks = scorer.trace_block_count();
    const auto values = raw_bmi(scorer, id_sorted(dataset), aggregation, n_blocks);

    std::vector<BlockScore> scores;
    scores.reserve(values.size());
    for (int b = 0; b < n_blocks; ++b) {
        scores.push_back({b, values[static_cast<std::size_t>(b)], 0});
    }
    attach_ranks(scores);
    return scores;
}

std::vector<int> rank_blocks(const std::vector<BlockScore>& scores) {
    if (scores.empty()) throw ValidationError("no block scores to rank");
    std::vector<int> order(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
        const double ba = scores[static_cast<std::size_t>(a)].bmi;
        const double bb = scores[static_cast<std::size_t>(b)].bmi;
        if (ba != bb) return ba > bb;
        return scores[static_cast<std::size_t>(a)].block_index <
               scores[static_cast<std::size_t>(b)].block_index;
    });
    std::vector<int> out;
    out.reserve(order.size());
    for (int i : order) out.push_back(scores[static_cast<std::size_t>(i)].block_index);
    return out;
}

StabilityReport bmi_stability(Scorer& scorer, const std::vector<PromptSample>& dataset,
                              const std::vector<std::uint64_t>& seeds, int n,
                              BmiAggregation aggregation) {
    if (n <= 0) throw ValidationError("subsample size must be positive");
    if (n > static_cast<int>(dataset.size())) {
        throw ValidationError("subsample size " + std::to_string(n) + " exceeds dataset size " +
                              std::to_string(dataset.size()));
    }
    if (seeds.empty()) throw ValidationError("no seeds for stability protocol");
    if (!scorer.capabilities().has_hidden_traces) {
        throw CapabilityError("scorer '" + scorer.id() + "' cannot provide hidden traces");
    }

    const auto ordered = id_sorted(dataset);
    const int n_blocks = scorer.trace_block_count();

    StabilityReport report;
    report.seeds = seeds;
    std::vector<std::vector<double>> normalized;  // per seed, per block
    std::vector<int> argmaxes;

    for (const auto seed : seeds) {
        std::vector<const PromptSample*> subset;
        if (n == static_cast<int>(ordered.size())) {
            subset = ordered;  // no sampling noise when the subset is the whole set
        } else {
            std::vector<std::size_t> idx(ordered.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            Rng rng(seed);
            rng.shuffle(idx);
            subset.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) subset.push_back(ordered[idx[static_cast<std::size_t>(i)]]);
            std::sort(subset.begin(), subset.end(),
                      [](const PromptSample* a, const PromptSample* b) { return a->id < b->id; });
        }
        const auto values = raw_bmi(scorer, subset, aggregation, n_blocks);

        int argmax = 0;
        double mean = 0.0;
        for (int b = 0; b < n_blocks; ++b) {
            mean += values[static_cast<std::size_t>(b)];
            if (values[static_cast<std::size_t>(b)] > values[static_cast<std::size_t>(argmax)]) {
                argmax = b;
            }
        }
        mean /= static_cast<double>(n_blocks);
        argmaxes.push_back(argmax);

        std::vector<double> norm(values.size());
        for (std::size_t b = 0; b < values.size(); ++b) {
            norm[b] = mean > 0.0 ? values[b] / mean : 0.0;
        }
        normalized.push_back(std::move(norm));
    }

    report.per_block_variance.assign(static_cast<std::size_t>(n_blocks), 0.0);
    const double n_seeds = static_cast<double>(seeds.size());
    for (int b = 0; b < n_blocks; ++b) {
        double mean = 0.0;
        for (const auto& row : normalized) mean += row[static_cast<std::size_t>(b)];
        mean /= n_seeds;
        double var = 0.0;
        for (const auto& row : normalized) {
            const double dv = row[static_cast<std::size_t>(b)] - mean;
            var += dv * dv;
        }
        report.per_block_variance[static_cast<std::size_t>(b)] = var / n_seeds;
    }
    double mv = 0.0;
    for (const double v : report.per_block_variance) mv += v;
    report.mean_variance = mv / static_cast<double>(n_blocks);
    report.top1_agreement =
        std::all_of(argmaxes.begin(), argmaxes.end(), [&](int a) { return a == argmaxes[0]; });
    return report;
}

std::string bmi_table_csv(const std::vector<BlockScore>& scores) {
    std::string out = "block_index,bmi,rank\n";
    char buf[64];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%d\n", s.block_index, s.bmi, s.rank);
        out += buf;
    }
    return out;
}

std::string bmi_heatmap_json(const std::vector<BlockScore>& scores, BmiAggregation aggregation,
                             const std::string& scorer_id) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "bmi_heatmap";
    j["scorer_id"] = scorer_id;
    j["aggregation"] = to_string(aggregation);
    json blocks = json::array();
    for (const auto& s : scores) {
        blocks.push_back({{"block_index", s.block_index}, {"bmi", s.bmi}, {"rank", s.rank}});
    }
    j["blocks"] = blocks;
    return j.dump(2) + "\n";
}

std::string stability_report_json(const StabilityReport& report) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "bmi_stability";
    j["seeds"] = report.seeds;
    j["per_block_variance"] = report.per_block_variance;
    j["mean_variance"] = report.mean_variance;
    j["top1_agreement"] = report.top1_agreement;
    return j.dump(2) + "\n";
}

}  // namespace biaslab
