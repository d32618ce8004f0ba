#include "biaslab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

double signed_gap(const std::map<std::string, double>& term_probs, const TermSet& terms) {
    terms.validate();
    if (!terms.is_pair()) {
        throw ValidationError("signed gap is defined for two-term sets only");
    }
    const auto a = term_probs.find(terms.terms[0]);
    const auto b = term_probs.find(terms.terms[1]);
    if (a == term_probs.end()) throw ValidationError("missing term: " + terms.terms[0]);
    if (b == term_probs.end()) throw ValidationError("missing term: " + terms.terms[1]);
    return a->second - b->second;
}

double pairwise_gap_magnitude(const std::map<std::string, double>& term_probs,
                              const TermSet& terms) {
    terms.validate();
    if (terms.is_pair()) return std::fabs(signed_gap(term_probs, terms));
    double sum = 0.0;
    long n_pairs = 0;
    for (std::size_t i = 0; i < terms.terms.size(); ++i) {
        for (std::size_t j = i + 1; j < terms.terms.size(); ++j) {
            const auto a = term_probs.find(terms.terms[i]);
            const auto b = term_probs.find(terms.terms[j]);
            if (a == term_probs.end()) throw ValidationError("missing term: " + terms.terms[i]);
            if (b == term_probs.end()) throw ValidationError("missing term: " + terms.terms[j]);
            sum += std::fabs(a->second - b->second);
            ++n_pairs;
        }
    }
    return sum / static_cast<double>(n_pairs);
}

namespace {

// id-sorted view so reductions are order-independent w.r.t. caller input
template <typename T>
std::vector<const T*> id_sorted(const std::vector<T>& samples) {
    std::vector<const T*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(&s);
    std::sort(out.begin(), out.end(), [](const T* a, const T* b) { return a->id < b->id; });
    return out;
}

constexpr Scale kScaleOrder[] = {Scale::Word, Scale::Phrase, Scale::Sentence};

}  // namespace

BiasReport afgb_score(Scorer& scorer, const std::vector<PromptSample>& dataset,
                      const TermSet& terms) {
    terms.validate();
    if (dataset.empty()) throw ValidationError("afgb over empty dataset");

    BiasReport report;
    report.scorer_id = scorer.id();
    report.dataset_digest = dataset_digest(dataset);
    report.resolution = scorer.resolve_terms(terms);
    report.n_samples = static_cast<int>(dataset.size());

    std::map<Scale, double> bucket_sum;
    for (const auto* s : id_sorted(dataset)) {
        std::map<std::string, double> probs;
        try {
            probs = scorer.term_probabilities(s->text, terms);
        } catch (const std::exception& e) {
            throw ValidationError("scorer failed on sample " + std::to_string(s->id) + ": " +
                                  e.what());
        }
        const double magnitude = pairwise_gap_magnitude(probs, terms);
        bucket_sum[s->scale] += magnitude;
        report.n_by_scale[s->scale] += 1;
        if (terms.is_pair()) {
            report.per_sample.push_back({s->id, signed_gap(probs, terms)});
        } else {
            report.per_sample.push_back({s->id, magnitude});
        }
    }

    // overall = sample-count-weighted mean of the bucket means, fixed order
    double weighted = 0.0;
    for (const Scale sc : kScaleOrder) {
        const auto it = report.n_by_scale.find(sc);
        if (it == report.n_by_scale.end()) continue;
        const double mean = bucket_sum[sc] / static_cast<double>(it->second);
        report.afgb_by_scale[sc] = mean;
        weighted += static_cast<double>(it->second) * mean;
    }
    report.afgb_overall = weighted / static_cast<double>(report.n_samples);
    return report;
}

HintReport ub_score(Scorer& scorer, const std::vector<HintSample>& dataset,
                    const TermSet& terms) {
    terms.validate();
    if (!terms.is_pair()) {
        throw ValidationError("ub score is defined for two-term sets only");
    }
    if (dataset.empty()) throw ValidationError("ub over empty dataset");

    HintReport report;
    report.scorer_id = scorer.id();
    report.dataset_digest = dataset_digest(dataset);
    report.resolution = scorer.resolve_terms(terms);

    double total = 0.0;
    double male_sum = 0.0;
    double female_sum = 0.0;
    for (const auto* s : id_sorted(dataset)) {
        std::map<std::string, double> probs;
        try {
            probs = scorer.term_probabilities(s->text, terms);
        } catch (const std::exception& e) {
            throw ValidationError("scorer failed on sample " + std::to_string(s->id) + ": " +
                                  e.what());
        }
        const double gap = signed_gap(probs, terms);
        const double f = s->hint_gender == HintGender::Male ? 1.0 : -1.0;
        total += f * gap;
        if (s->hint_gender == HintGender::Male) {
            male_sum += gap;
            ++report.n_male;
        } else {
            female_sum += gap;
            ++report.n_female;
        }
    }
    report.ub_overall = total / static_cast<double>(dataset.size());
    report.male_mean = report.n_male ? male_sum / report.n_male : 0.0;
    report.female_mean = report.n_female ? female_sum / report.n_female : 0.0;
    report.unbalanced = report.n_male == 0 || report.n_female == 0;
    return report;
}

std::vector<CaseRow> case_table(Scorer& scorer, const std::vector<std::string>& professions,
                                const PromptTemplate& tmpl, const TermSet& terms) {
    terms.validate();
    std::vector<CaseRow> rows;
    for (const auto& prof : professions) {
        CaseRow row;
        row.profession = prof;
        try {
            row.probs = scorer.term_probabilities(tmpl.render(prof), terms);
        } catch (const std::exception& e) {
            throw ValidationError("case table failed for profession '" + prof + "': " + e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

AntiBiasFinding detect_anti_bias(const BiasReport& before, const BiasReport& after,
                                 double threshold) {
    if (before.dataset_digest != after.dataset_digest) {
        throw ValidationError("anti-bias detection needs reports over the same dataset");
    }
    if (before.per_sample.empty() || after.per_sample.empty()) {
        throw ValidationError("anti-bias detection needs per-sample gaps");
    }
    if (before.per_sample.size() != after.per_sample.size()) {
        throw ValidationError("per-sample gap count mismatch");
    }

    AntiBiasFinding finding;
    finding.after_afgb = after.afgb_overall;
    finding.threshold = threshold;

    // dominant post-run direction by majority vote, sign of the mean on ties
    long plus = 0, minus = 0;
    double mean_after = 0.0;
    for (const auto& g : after.per_sample) {
        if (g.gap > 0) ++plus;
        if (g.gap < 0) ++minus;
        mean_after += g.gap;
    }
    const int tau = plus > minus ? 1 : (minus > plus ? -1 : (mean_after >= 0 ? 1 : -1));
    finding.dominant_after_sign = tau;

    constexpr double kSignEps = 1e-9;
    std::vector<std::pair<double, int>> reversals;  // (|before gap|, id)
    for (std::size_t i = 0; i < before.per_sample.size(); ++i) {
        const auto& b = before.per_sample[i];
        const auto& a = after.per_sample[i];
        if (b.id != a.id) throw ValidationError("per-sample id mismatch in reports");
        const bool counter = (tau > 0) ? (b.gap < -kSignEps) : (b.gap > kSignEps);
        if (!counter) continue;
        ++finding.n_counter_oriented;
        const bool flipped = (tau > 0) ? (a.gap > kSignEps) : (a.gap < -kSignEps);
        if (flipped) {
            ++finding.n_reversed;
            reversals.emplace_back(std::fabs(b.gap), b.id);
        }
    }

    finding.flagged = after.afgb_overall > threshold && finding.n_counter_oriented > 0 &&
                      2 * finding.n_reversed > finding.n_counter_oriented;

    std::sort(reversals.begin(), reversals.end(),
              [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t i = 0; i < reversals.size() && i < 5; ++i) {
        finding.exemplar_ids.push_back(reversals[i].second);
    }
    return finding;
}

// ----------------------------- serialization -----------------------------

namespace {

json resolution_to_json(const TermResolution& res) {
    json j;
    j["resolved"] = res.resolved;
    j["notes"] = res.notes;
    return j;
}

TermResolution resolution_from_json(const json& j) {
    TermResolution res;
    if (j.contains("resolved")) {
        for (const auto& [k, v] : j.at("resolved").items()) res.resolved[k] = v.get<std::string>();
    }
    if (j.contains("notes")) {
        for (const auto& n : j.at("notes")) res.notes.push_back(n.get<std::string>());
    }
    return res;
}

}  // namespace

std::string bias_report_to_json(const BiasReport& report, bool include_per_sample) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "bias_report";
    j["scorer_id"] = report.scorer_id;
    j["dataset_digest"] = report.dataset_digest;
    j["term_resolution"] = resolution_to_json(report.resolution);
    j["afgb_overall"] = report.afgb_overall;
    json by_scale = json::object();
    json n_scale = json::object();
    for (const auto& [sc, v] : report.afgb_by_scale) by_scale[to_string(sc)] = v;
    for (const auto& [sc, n] : report.n_by_scale) n_scale[to_string(sc)] = n;
    j["afgb_by_scale"] = by_scale;
    j["n_by_scale"] = n_scale;
    j["n_samples"] = report.n_samples;
    if (include_per_sample) {
        json gaps = json::array();
        for (const auto& g : report.per_sample) gaps.push_back({{"id", g.id}, {"gap", g.gap}});
        j["per_sample_gaps"] = gaps;
    }
    return j.dump(2) + "\n";
}

BiasReport bias_report_from_json(const std::string& content) {
    const json j = json::parse(content);
    BiasReport r;
    r.scorer_id = j.value("scorer_id", "");
    r.dataset_digest = j.value("dataset_digest", "");
    if (j.contains("term_resolution")) r.resolution = resolution_from_json(j.at("term_resolution"));
    r.afgb_overall = j.at("afgb_overall").get<double>();
    if (j.contains("afgb_by_scale")) {
        for (const auto& [k, v] : j.at("afgb_by_scale").items()) {
            r.afgb_by_scale[scale_from_string(k)] = v.get<double>();
        }
    }
    if (j.contains("n_by_scale")) {
        for (const auto& [k, v] : j.at("n_by_scale").items()) {
            r.n_by_scale[scale_from_string(k)] = v.get<int>();
        }
    }
    r.n_samples = j.value("n_samples", 0);
    if (j.contains("per_sample_gaps")) {
        for (const auto& g : j.at("per_sample_gaps")) {
            r.per_sample.push_back({g.at("id").get<int>(), g.at("gap").get<double>()});
        }
    }
    return r;
}

std::string hint_report_to_json(const HintReport& report) {
    json j;
    j["schema_version"] = 1;
    j["kind"] = "hint_report";
    j["scorer_id"] = report.scorer_id;
    j["dataset_digest"] = report.dataset_digest;
    j["term_resolution"] = resolution_to_json(report.resolution);
    j["ub_overall"] = report.ub_overall;
    j["male_mean"] = report.male_mean;
    j["female_mean"] = report.female_mean;
    j["n_male"] = report.n_male;
    j["n_female"] = report.n_female;
    j["unbalanced"] = report.unbalanced;
    return j.dump(2) + "\n";
}

HintReport hint_report_from_json(const std::string& content) {
    const json j = json::parse(content);
    HintReport r;
    r.scorer_id = j.value("scorer_id", "");
    r.dataset_digest = j.value("dataset_digest", "");
    if (j.contains("term_resolution")) r.resolution = resolution_from_json(j.at("term_resolution"));
    r.ub_overall = j.at("ub_overall").get<double>();
    r.male_mean = j.value("male_mean", 0.0);
    r.female_mean = j.value("female_mean", 0.0);
    r.n_male = j.value("n_male", 0);
    r.n_female = j.value("n_female", 0);
    r.unbalanced = j.value("unbalanced", false);
    return r;
}

std::string case_table_to_json(const std::vector<CaseRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        json j;
        j["profession"] = r.profession;
        j["probs"] = r.probs;
        arr.push_back(j);
    }
    json out;
    out["schema_version"] = 1;
    out["kind"] = "case_table";
    out["rows"] = arr;
    return out.dump(2) + "\n";
}

std::string bias_report_to_csv(const BiasReport& report) {
    std::string out = "bucket,n,afgb\n";
    for (const auto& [sc, v] : report.afgb_by_scale) {
        out += std::string(to_string(sc)) + "," + std::to_string(report.n_by_scale.at(sc)) + "," +
               std::to_string(v) + "\n";
    }
    out += "Overall," + std::to_string(report.n_samples) + "," +
           std::to_string(report.afgb_overall) + "\n";
    return out;
}

}  // namespace biaslab
