#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "biaslab/metrics.hpp"

using namespace biaslab;

namespace {

// -----------------------------------------------------------------------
// Brute-force oracle: direct sums over the raw probability table, written
// independently of the report pipeline.
// -----------------------------------------------------------------------

struct FixtureSample {
    int id;
    std::string text;
    Scale scale;
    double p_he;
    double p_she;
};

double oracle_afgb(const std::vector<FixtureSample>& samples) {
    double sum = 0.0;
    for (const auto& s : samples) sum += std::fabs(s.p_he - s.p_she);
    return sum / static_cast<double>(samples.size());
}

struct FixtureHint {
    int id;
    std::string text;
    HintGender gender;
    double p_he;
    double p_she;
};

double oracle_ub(const std::vector<FixtureHint>& samples) {
    double sum = 0.0;
    for (const auto& s : samples) {
        const double f = s.gender == HintGender::Male ? 1.0 : -1.0;
        sum += f * (s.p_he - s.p_she);
    }
    return sum / static_cast<double>(samples.size());
}

std::vector<FixtureSample> random_bias_fixture(Rng& rng, int n) {
    std::vector<FixtureSample> out;
    for (int i = 0; i < n; ++i) {
        const double a = rng.next_double();
        const double b = rng.next_double() * (1.0 - a);
        out.push_back({i, "prompt " + std::to_string(i), static_cast<Scale>(rng.next_below(3)),
                       a, b});
    }
    return out;
}

TableScorer scorer_for(const std::vector<FixtureSample>& fixture) {
    TableScorer scorer;
    for (const auto& s : fixture) scorer.set(s.text, {{"he", s.p_he}, {"she", s.p_she}});
    return scorer;
}

std::vector<PromptSample> samples_for(const std::vector<FixtureSample>& fixture) {
    std::vector<PromptSample> out;
    for (const auto& s : fixture) out.push_back({s.id, "job", 0, s.text, s.scale});
    return out;
}

}  // namespace

TEST_CASE("signed gap on the documented probability pair") {
    const std::map<std::string, double> probs = {{"he", 0.2612}, {"she", 0.1234}};
    CHECK(signed_gap(probs, TermSet::default_pair()) == doctest::Approx(0.1378).epsilon(1e-12));
}

TEST_CASE("equal probabilities give zero gap") {
    const std::map<std::string, double> probs = {{"he", 0.25}, {"she", 0.25}};
    CHECK(signed_gap(probs, TermSet::default_pair()) == 0.0);
}

TEST_CASE("gap of a hand-computed five-token softmax") {
    // softmax over logits {1.0, 2.0, 0.5, -1.0, 0.0}; terms at indices 0 and 1
    const std::vector<double> logits = {1.0, 2.0, 0.5, -1.0, 0.0};
    double z = 0.0;
    for (const double l : logits) z += std::exp(l);
    const double p0 = std::exp(1.0) / z;
    const double p1 = std::exp(2.0) / z;
    const std::map<std::string, double> probs = {{"he", p0}, {"she", p1}};
    CHECK(signed_gap(probs, TermSet::default_pair()) == doctest::Approx(p0 - p1).epsilon(1e-15));
    CHECK(signed_gap(probs, TermSet::default_pair()) < 0.0);
}

TEST_CASE("missing terms are reported") {
    const std::map<std::string, double> probs = {{"he", 0.5}};
    CHECK_THROWS_WITH_AS(signed_gap(probs, TermSet::default_pair()), doctest::Contains("she"),
                         ValidationError);
}

TEST_CASE("afgb of three known gaps is their mean") {
    const std::vector<FixtureSample> fixture = {
        {0, "a", Scale::Word, 0.3, 0.2},   // |gap| 0.1
        {1, "b", Scale::Word, 0.1, 0.3},   // |gap| 0.2
        {2, "c", Scale::Word, 0.45, 0.15}, // |gap| 0.3
    };
    auto scorer = scorer_for(fixture);
    const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
    CHECK(report.afgb_overall == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(report.n_samples == 3);
}

TEST_CASE("all-zero gaps give zero afgb") {
    const std::vector<FixtureSample> fixture = {
        {0, "a", Scale::Word, 0.2, 0.2},
        {1, "b", Scale::Phrase, 0.4, 0.4},
    };
    auto scorer = scorer_for(fixture);
    const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
    CHECK(report.afgb_overall == 0.0);
}

TEST_CASE("scorer failure aborts the report naming the sample") {
    const std::vector<FixtureSample> fixture = {{0, "known", Scale::Word, 0.2, 0.1}};
    auto scorer = scorer_for(fixture);
    std::vector<PromptSample> samples = samples_for(fixture);
    samples.push_back({41, "job", 0, "unknown prompt", Scale::Word});
    CHECK_THROWS_WITH_AS(afgb_score(scorer, samples, TermSet::default_pair()),
                         doctest::Contains("41"), ValidationError);
}

TEST_CASE("pipeline afgb and ub equal the brute-force oracle on random tables") {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(40));
        const auto fixture = random_bias_fixture(rng, n);
        auto scorer = scorer_for(fixture);
        const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
        CHECK(std::fabs(report.afgb_overall - oracle_afgb(fixture)) < 1e-12);

        std::vector<FixtureHint> hints;
        std::vector<HintSample> hint_samples;
        TableScorer hint_scorer;
        for (int i = 0; i < n; ++i) {
            const double a = rng.next_double();
            const double b = rng.next_double() * (1.0 - a);
            const HintGender g = rng.bernoulli(0.5) ? HintGender::Male : HintGender::Female;
            const std::string text = "hint " + std::to_string(i);
            hints.push_back({i, text, g, a, b});
            hint_samples.push_back({i, "job", 0, text, g});
            hint_scorer.set(text, {{"he", a}, {"she", b}});
        }
        const auto hint_report = ub_score(hint_scorer, hint_samples, TermSet::default_pair());
        CHECK(std::fabs(hint_report.ub_overall - oracle_ub(hints)) < 1e-12);
    }
}

TEST_CASE("ub of one male and one female hint is the signed mean") {
    TableScorer scorer;
    scorer.set("m", {{"he", 0.5}, {"she", 0.1}});   // gap +0.4, F=+1
    scorer.set("f", {{"he", 0.1}, {"she", 0.7}});   // gap -0.6, F=-1
    const std::vector<HintSample> samples = {{0, "job", 0, "m", HintGender::Male},
                                             {1, "job", 0, "f", HintGender::Female}};
    const auto report = ub_score(scorer, samples, TermSet::default_pair());
    CHECK(report.ub_overall == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_FALSE(report.unbalanced);
}

TEST_CASE("zero gaps give zero ub") {
    TableScorer scorer;
    scorer.set("m", {{"he", 0.3}, {"she", 0.3}});
    scorer.set("f", {{"he", 0.2}, {"she", 0.2}});
    const std::vector<HintSample> samples = {{0, "job", 0, "m", HintGender::Male},
                                             {1, "job", 0, "f", HintGender::Female}};
    CHECK(ub_score(scorer, samples, TermSet::default_pair()).ub_overall == 0.0);
}

TEST_CASE("single-class hint datasets are flagged unbalanced") {
    TableScorer scorer;
    scorer.set("m", {{"he", 0.5}, {"she", 0.1}});
    const std::vector<HintSample> samples = {{0, "job", 0, "m", HintGender::Male}};
    const auto report = ub_score(scorer, samples, TermSet::default_pair());
    CHECK(report.unbalanced);
    CHECK(report.n_female == 0);
}

TEST_CASE("metric ranges hold on randomized tables") {
    Rng rng(5150);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(20));
        const auto fixture = random_bias_fixture(rng, n);
        auto scorer = scorer_for(fixture);
        const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
        CHECK(report.afgb_overall >= 0.0);
        CHECK(report.afgb_overall <= 1.0);
    }
}

TEST_CASE("label swap negates gaps, keeps afgb, negates ub") {
    Rng rng(808);
    const auto fixture = random_bias_fixture(rng, 25);
    auto scorer = scorer_for(fixture);
    const TermSet fwd{{"he", "she"}};
    const TermSet rev{{"she", "he"}};

    for (const auto& s : fixture) {
        const std::map<std::string, double> probs = {{"he", s.p_he}, {"she", s.p_she}};
        CHECK(signed_gap(probs, rev) == -signed_gap(probs, fwd));
    }

    const auto a = afgb_score(scorer, samples_for(fixture), fwd);
    const auto b = afgb_score(scorer, samples_for(fixture), rev);
    CHECK(a.afgb_overall == b.afgb_overall);

    std::vector<HintSample> hints;
    TableScorer hint_scorer;
    for (int i = 0; i < 24; ++i) {
        const double x = rng.next_double() * 0.5;
        const double y = rng.next_double() * 0.5;
        const std::string text = "hint " + std::to_string(i);
        hint_scorer.set(text, {{"he", x}, {"she", y}});
        hints.push_back({i, "job", 0, text,
                         rng.bernoulli(0.5) ? HintGender::Male : HintGender::Female});
    }
    const auto ua = ub_score(hint_scorer, hints, fwd);
    const auto ub = ub_score(hint_scorer, hints, rev);
    CHECK(ua.ub_overall == -ub.ub_overall);
    CHECK(ua.ub_overall >= -1.0);
    CHECK(ua.ub_overall <= 1.0);
}

TEST_CASE("flipping every hint label negates ub exactly") {
    Rng rng(31337);
    std::vector<HintSample> hints, flipped;
    TableScorer scorer;
    for (int i = 0; i < 30; ++i) {
        const double x = rng.next_double() * 0.6;
        const double y = rng.next_double() * 0.4;
        const std::string text = "hint " + std::to_string(i);
        scorer.set(text, {{"he", x}, {"she", y}});
        const HintGender g = rng.bernoulli(0.5) ? HintGender::Male : HintGender::Female;
        hints.push_back({i, "job", 0, text, g});
        flipped.push_back({i, "job", 0, text,
                           g == HintGender::Male ? HintGender::Female : HintGender::Male});
    }
    const auto a = ub_score(scorer, hints, TermSet::default_pair());
    const auto b = ub_score(scorer, flipped, TermSet::default_pair());
    CHECK(a.ub_overall == -b.ub_overall);
}

TEST_CASE("overall afgb equals the weighted mean of bucket means") {
    Rng rng(116);
    const auto fixture = random_bias_fixture(rng, 60);
    auto scorer = scorer_for(fixture);
    const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
    double weighted = 0.0;
    for (const Scale sc : {Scale::Word, Scale::Phrase, Scale::Sentence}) {
        const auto it = report.n_by_scale.find(sc);
        if (it == report.n_by_scale.end()) continue;
        weighted += static_cast<double>(it->second) * report.afgb_by_scale.at(sc);
    }
    CHECK(report.afgb_overall == weighted / report.n_samples);
}

TEST_CASE("sample order never changes a report") {
    Rng rng(4242);
    const auto fixture = random_bias_fixture(rng, 40);
    auto scorer = scorer_for(fixture);
    auto samples = samples_for(fixture);
    const auto base = afgb_score(scorer, samples, TermSet::default_pair());
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(samples);
        const auto again = afgb_score(scorer, samples, TermSet::default_pair());
        CHECK(again.afgb_overall == base.afgb_overall);
        CHECK(again.afgb_by_scale == base.afgb_by_scale);
        CHECK(bias_report_to_json(again) == bias_report_to_json(base));
    }
}

TEST_CASE("n-term sets report the mean pairwise magnitude") {
    const std::map<std::string, double> probs = {{"a", 0.5}, {"b", 0.2}, {"c", 0.1}};
    const TermSet terms{{"a", "b", "c"}};
    // pairs: |0.5-0.2| + |0.5-0.1| + |0.2-0.1| = 0.3+0.4+0.1 = 0.8; mean 0.8/3
    CHECK(pairwise_gap_magnitude(probs, terms) == doctest::Approx(0.8 / 3.0).epsilon(1e-15));
}

TEST_CASE("case table returns raw probabilities per profession") {
    TableScorer scorer;
    scorer.set("The nurse smiled because", {{"he", 0.0478}, {"she", 0.5023}});
    scorer.set("The clerk smiled because", {{"he", 0.3}, {"she", 0.2}});
    PromptTemplate t;
    t.id = 0;
    t.pattern = "The {profession} smiled because";
    t.scale = Scale::Word;
    t.kind = TemplateKind::Bias;
    const auto rows = case_table(scorer, {"nurse", "clerk"}, t, TermSet::default_pair());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].profession == "nurse");
    CHECK(rows[0].probs.at("he") == doctest::Approx(0.0478));
    CHECK(rows[0].probs.at("she") == doctest::Approx(0.5023));
    CHECK_THROWS_AS(case_table(scorer, {"ghost"}, t, TermSet::default_pair()), ValidationError);
}

namespace {

BiasReport fixture_report(const std::vector<std::pair<int, double>>& gaps,
                          const std::string& digest) {
    BiasReport r;
    r.dataset_digest = digest;
    r.n_samples = static_cast<int>(gaps.size());
    double sum = 0.0;
    for (const auto& [id, gap] : gaps) {
        r.per_sample.push_back({id, gap});
        sum += std::fabs(gap);
    }
    r.afgb_overall = sum / static_cast<double>(gaps.size());
    return r;
}

}  // namespace

TEST_CASE("saturated reversal is flagged as anti-bias") {
    // before: mixed stereotype directions, mean |gap| modest
    const auto before = fixture_report(
        {{0, 0.30}, {1, -0.46}, {2, 0.22}, {3, -0.51}, {4, 0.18}, {5, -0.35}}, "d1");
    // after: everything saturates toward the first term (afgb ~ 0.9585)
    const auto after = fixture_report(
        {{0, 0.97}, {1, 0.96}, {2, 0.95}, {3, 0.96}, {4, 0.95}, {5, 0.96}}, "d1");
    CHECK(after.afgb_overall > 0.9);
    const auto finding = detect_anti_bias(before, after);
    CHECK(finding.flagged);
    CHECK(finding.dominant_after_sign == 1);
    CHECK(finding.n_counter_oriented == 3);
    CHECK(finding.n_reversed == 3);
    // strongest reversal first
    REQUIRE_FALSE(finding.exemplar_ids.empty());
    CHECK(finding.exemplar_ids.front() == 3);
}

TEST_CASE("identical low-bias reports are not flagged") {
    const auto before = fixture_report({{0, 0.1}, {1, -0.1}}, "d2");
    const auto finding = detect_anti_bias(before, before);
    CHECK_FALSE(finding.flagged);
}

TEST_CASE("saturation without reversal is not flagged") {
    // all samples already pointed the same way; saturating them further is
    // amplification, not inversion
    const auto before = fixture_report({{0, 0.4}, {1, 0.3}, {2, 0.5}}, "d3");
    const auto after = fixture_report({{0, 0.97}, {1, 0.96}, {2, 0.98}}, "d3");
    const auto finding = detect_anti_bias(before, after);
    CHECK_FALSE(finding.flagged);
}

TEST_CASE("mismatched datasets are rejected") {
    const auto a = fixture_report({{0, 0.1}}, "da");
    const auto b = fixture_report({{0, 0.1}}, "db");
    CHECK_THROWS_AS(detect_anti_bias(a, b), ValidationError);
}

TEST_CASE("bias reports round-trip through json") {
    Rng rng(77);
    const auto fixture = random_bias_fixture(rng, 12);
    auto scorer = scorer_for(fixture);
    const auto report = afgb_score(scorer, samples_for(fixture), TermSet::default_pair());
    const auto back = bias_report_from_json(bias_report_to_json(report));
    CHECK(back.afgb_overall == report.afgb_overall);
    CHECK(back.afgb_by_scale == report.afgb_by_scale);
    CHECK(back.per_sample.size() == report.per_sample.size());
    CHECK(back.dataset_digest == report.dataset_digest);
}
