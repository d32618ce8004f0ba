#include "biaslab/baselines.hpp"

#include <cstdio>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

void PromptPrefix::validate() const {
    if (text.empty()) throw ValidationError("prompt prefix must be non-empty");
    if (text.find("{profession}") != std::string::npos) {
        throw ValidationError("prompt prefix must not contain a {profession} placeholder");
    }
}

PromptPrefix load_pb_prefix(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::string text;
    for (const auto& l : lines) {
        if (!l.empty()) {
            text = l;
            break;
        }
    }
    PromptPrefix prefix{text};
    prefix.validate();
    return prefix;
}

std::pair<BiasReport, HintReport> pb_eval(Scorer& scorer, const PromptPrefix& prefix,
                                          const std::vector<PromptSample>& bias_set,
                                          const std::vector<HintSample>& hint_set,
                                          const TermSet& terms) {
    prefix.validate();
    PrefixedScorer prefixed(scorer, prefix.text);
    auto bias = afgb_score(prefixed, bias_set, terms);
    auto hint = ub_score(prefixed, hint_set, terms);
    return {std::move(bias), std::move(hint)};
}

ComparisonTable compare_methods(const std::vector<MethodResult>& results) {
    if (results.empty()) throw ValidationError("no runs to compare");
    const auto& base = results.front();
    for (const auto& r : results) {
        if (r.bias.dataset_digest != base.bias.dataset_digest) {
            throw ValidationError("run '" + r.name + "' was evaluated on a different dataset (" +
                                  r.bias.dataset_digest + " vs " + base.bias.dataset_digest + ")");
        }
    }

    ComparisonTable table;
    for (const auto& r : results) {
        ComparisonRow row;
        row.name = r.name;
        row.afgb_overall = r.bias.afgb_overall;
        row.afgb_delta = r.bias.afgb_overall - base.bias.afgb_overall;
        for (const auto& [sc, v] : r.bias.afgb_by_scale) {
            row.afgb_by_scale[sc] = v;
            const auto bit = base.bias.afgb_by_scale.find(sc);
            row.delta_by_scale[sc] = v - (bit != base.bias.afgb_by_scale.end() ? bit->second : 0.0);
        }
        row.ub = r.hint ? r.hint->ub_overall : 0.0;
        const double base_ub = base.hint ? base.hint->ub_overall : 0.0;
        row.ub_delta = row.ub - base_ub;
        row.ppl = r.ppl;
        row.ppl_delta = r.ppl - base.ppl;
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace {

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

std::string comparison_to_csv(const ComparisonTable& table) {
    std::string out =
        "method,afgb_word,afgb_phrase,afgb_sentence,afgb_overall,afgb_delta,ub,ub_delta,ppl,"
        "ppl_delta\n";
    for (const auto& r : table.rows) {
        const auto scale_or = [&](Scale s) {
            const auto it = r.afgb_by_scale.find(s);
            return it != r.afgb_by_scale.end() ? fmt(it->second) : std::string();
        };
        out += r.name + "," + scale_or(Scale::Word) + "," + scale_or(Scale::Phrase) + "," +
               scale_or(Scale::Sentence) + "," + fmt(r.afgb_overall) + "," + fmt(r.afgb_delta) +
               "," + fmt(r.ub) + "," + fmt(r.ub_delta) + "," + fmt(r.ppl) + "," +
               fmt(r.ppl_delta) + "\n";
    }
    return out;
}

std::string comparison_to_json(const ComparisonTable& table) {
    json rows = json::array();
    for (const auto& r : table.rows) {
        json by_scale = json::object();
        json delta_scale = json::object();
        for (const auto& [sc, v] : r.afgb_by_scale) by_scale[to_string(sc)] = v;
        for (const auto& [sc, v] : r.delta_by_scale) delta_scale[to_string(sc)] = v;
        rows.push_back({{"method", r.name},
                        {"afgb_by_scale", by_scale},
                        {"afgb_delta_by_scale", delta_scale},
                        {"afgb_overall", r.afgb_overall},
                        {"afgb_delta", r.afgb_delta},
                        {"ub", r.ub},
                        {"ub_delta", r.ub_delta},
                        {"ppl", r.ppl},
                        {"ppl_delta", r.ppl_delta}});
    }
    json j;
    j["schema_version"] = 1;
    j["kind"] = "method_comparison";
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

}  // namespace biaslab
