#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "biaslab/corpus.hpp"

using namespace biaslab;

namespace {

const std::filesystem::path kAssets = BIASLAB_ASSETS_DIR;

std::vector<Profession> make_professions(const std::vector<std::string>& names) {
    std::vector<Profession> out;
    for (const auto& n : names) out.push_back({n, false, ExclusionReason::None});
    return out;
}

PromptTemplate bias_template(int id, const std::string& action, Scale scale) {
    PromptTemplate t;
    t.id = id;
    t.pattern = "The {profession} " + action + " because";
    t.scale = scale;
    t.kind = TemplateKind::Bias;
    return t;
}

}  // namespace

TEST_CASE("shipped lexicon filters to 262 non-excluded professions") {
    const auto lexicon = load_lexicon(kAssets / "professions.txt");
    CHECK(lexicon.size() == 320);
    const auto rules = load_exclusion_rules(kAssets / "exclusion_rules.json");
    const auto professions = filter_professions(lexicon, rules);
    CHECK(professions.size() == 320);
    const auto kept = non_excluded(professions);
    CHECK(kept.size() == 262);

    for (const auto& p : professions) {
        CHECK(p.excluded == (p.reason != ExclusionReason::None));
        if (p.surface == "actress") {
            CHECK(p.excluded);
            CHECK(p.reason == ExclusionReason::SemanticGender);
        }
        if (p.surface == "salesman") {
            CHECK(p.excluded);
            CHECK(p.reason == ExclusionReason::MorphologicalGender);
        }
    }
}

TEST_CASE("empty exclusion rules keep the whole lexicon") {
    const auto lexicon = load_lexicon(kAssets / "professions.txt");
    const auto professions = filter_professions(lexicon, ExclusionRules{});
    CHECK(non_excluded(professions).size() == 320);
}

TEST_CASE("duplicate lexicon entries are a validation error naming them") {
    const std::vector<std::string> lexicon = {"nurse", "doctor", "nurse"};
    CHECK_THROWS_WITH_AS(filter_professions(lexicon, ExclusionRules{}),
                         doctest::Contains("nurse"), ValidationError);
}

TEST_CASE("bias corpus is the full cartesian product in profession-major order") {
    const auto professions = make_professions({"baker", "doctor", "nurse"});
    const std::vector<PromptTemplate> templates = {bias_template(0, "smiled", Scale::Word),
                                                   bias_template(1, "resigned", Scale::Word)};
    const auto samples = compose_bias_corpus(professions, templates);
    REQUIRE(samples.size() == 6);
    // hand enumeration: (baker,0) (baker,1) (doctor,0) (doctor,1) (nurse,0) (nurse,1)
    for (int i = 0; i < 6; ++i) CHECK(samples[static_cast<std::size_t>(i)].id == i);
    CHECK(samples[0].profession == "baker");
    CHECK(samples[0].template_id == 0);
    CHECK(samples[1].profession == "baker");
    CHECK(samples[1].template_id == 1);
    CHECK(samples[2].profession == "doctor");
    CHECK(samples[4].profession == "nurse");
    CHECK(samples[0].text == "The baker smiled because");
}

TEST_CASE("single pair renders fully") {
    const auto samples = compose_bias_corpus(make_professions({"pilot"}),
                                             {bias_template(0, "hesitated", Scale::Word)});
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].text == "The pilot hesitated because");
    CHECK(samples[0].scale == Scale::Word);
}

TEST_CASE("template without placeholder is rejected by name") {
    PromptTemplate bad;
    bad.id = 7;
    bad.pattern = "The doctor smiled because";
    bad.kind = TemplateKind::Bias;
    CHECK_THROWS_WITH_AS(compose_bias_corpus(make_professions({"nurse"}), {bad}),
                         doctest::Contains("7"), ValidationError);
}

TEST_CASE("cartesian cardinality holds for random small inputs") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int np = 1 + static_cast<int>(rng.next_below(7));
        const int nt = 1 + static_cast<int>(rng.next_below(5));
        std::vector<std::string> names;
        for (int i = 0; i < np; ++i) names.push_back("job" + std::to_string(i));
        std::vector<PromptTemplate> templates;
        for (int i = 0; i < nt; ++i) {
            templates.push_back(bias_template(i, "acted" + std::to_string(i), Scale::Phrase));
        }
        const auto samples = compose_bias_corpus(make_professions(names), templates);
        CHECK(samples.size() == static_cast<std::size_t>(np) * static_cast<std::size_t>(nt));
    }
}

TEST_CASE("every rendered text contains its profession once and ends with because") {
    const auto lexicon = load_lexicon(kAssets / "professions.txt");
    const auto rules = load_exclusion_rules(kAssets / "exclusion_rules.json");
    const auto kept = non_excluded(filter_professions(lexicon, rules));
    const auto manifest = load_template_manifest(kAssets / "templates.json");
    const auto samples = compose_bias_corpus(kept, manifest.bias_templates());
    for (const auto& s : samples) {
        const auto first = s.text.find(s.profession);
        REQUIRE(first != std::string::npos);
        CHECK(s.text.find(s.profession, first + 1) == std::string::npos);
        CHECK(s.text.ends_with("because"));
    }
}

TEST_CASE("shipped corpus reproduces the pinned split counts") {
    const auto lexicon = load_lexicon(kAssets / "professions.txt");
    const auto rules = load_exclusion_rules(kAssets / "exclusion_rules.json");
    const auto kept = non_excluded(filter_professions(lexicon, rules));
    const auto manifest = load_template_manifest(kAssets / "templates.json");
    const auto samples = compose_bias_corpus(kept, manifest.bias_templates());
    REQUIRE(samples.size() == 2358);

    const auto split = split_corpus(samples, manifest.split_seed, &manifest.split_plan);
    CHECK(split.train.size() == 943);
    CHECK(split.dev.size() == 471);
    CHECK(split.test.size() == 944);

    const auto count = [](const std::vector<PromptSample>& v, Scale s) {
        return std::count_if(v.begin(), v.end(),
                             [s](const PromptSample& x) { return x.scale == s; });
    };
    CHECK(count(split.train, Scale::Word) == 326);
    CHECK(count(split.dev, Scale::Word) == 152);
    CHECK(count(split.test, Scale::Word) == 308);
    CHECK(count(split.train, Scale::Phrase) == 299);
    CHECK(count(split.dev, Scale::Phrase) == 157);
    CHECK(count(split.test, Scale::Phrase) == 330);
    CHECK(count(split.train, Scale::Sentence) == 318);
    CHECK(count(split.dev, Scale::Sentence) == 162);
    CHECK(count(split.test, Scale::Sentence) == 306);
}

TEST_CASE("five samples of one scale split 2/1/2") {
    std::vector<PromptSample> samples;
    for (int i = 0; i < 5; ++i) {
        samples.push_back({i, "job", 0, "The job acted because", Scale::Word});
    }
    const auto split = split_corpus(samples, 1);
    CHECK(split.train.size() == 2);
    CHECK(split.dev.size() == 1);
    CHECK(split.test.size() == 2);
}

TEST_CASE("split is a partition and deterministic per seed") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PromptSample> samples;
        const int n = 10 + static_cast<int>(rng.next_below(200));
        for (int i = 0; i < n; ++i) {
            const Scale sc = static_cast<Scale>(rng.next_below(3));
            samples.push_back({i, "job", 0, "The job acted because", sc});
        }
        const std::uint64_t seed = rng.next_u64();
        const auto split = split_corpus(samples, seed);

        std::set<int> seen;
        for (const auto* part : {&split.train, &split.dev, &split.test}) {
            for (const auto& s : *part) CHECK(seen.insert(s.id).second);
        }
        CHECK(seen.size() == samples.size());

        const auto again = split_corpus(samples, seed);
        CHECK(to_jsonl(split.train) == to_jsonl(again.train));
        CHECK(to_jsonl(split.dev) == to_jsonl(again.dev));
        CHECK(to_jsonl(split.test) == to_jsonl(again.test));
    }
}

TEST_CASE("hint corpus covers professions x hint templates with genders recorded") {
    const auto lexicon = load_lexicon(kAssets / "professions.txt");
    const auto rules = load_exclusion_rules(kAssets / "exclusion_rules.json");
    const auto kept = non_excluded(filter_professions(lexicon, rules));
    const auto manifest = load_template_manifest(kAssets / "templates.json");
    const auto hints = manifest.hint_templates();
    REQUIRE(hints.size() == 3);

    const auto samples = compose_hint_corpus(kept, hints);
    CHECK(samples.size() == 786);

    // per-template gender balance matches the manifest declaration
    int male_templates = 0, female_templates = 0;
    for (const auto& t : hints) {
        (*t.hint_gender == HintGender::Male ? male_templates : female_templates)++;
    }
    CHECK(male_templates == manifest.hint_template_counts.at(HintGender::Male));
    CHECK(female_templates == manifest.hint_template_counts.at(HintGender::Female));

    long male = 0, female = 0;
    for (const auto& s : samples) (s.hint_gender == HintGender::Male ? male : female)++;
    CHECK(male == static_cast<long>(kept.size()) * male_templates);
    CHECK(female == static_cast<long>(kept.size()) * female_templates);
}

TEST_CASE("single male-hint template yields a male-tagged sample") {
    PromptTemplate t;
    t.id = 9;
    t.pattern = "The {profession} finished his shift early because";
    t.scale = Scale::Phrase;
    t.kind = TemplateKind::Hint;
    t.hint_gender = HintGender::Male;
    const auto samples = compose_hint_corpus(make_professions({"guard"}), {t});
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].hint_gender == HintGender::Male);
    CHECK(samples[0].text == "The guard finished his shift early because");
}

TEST_CASE("hint template without a gender is rejected") {
    PromptTemplate t;
    t.id = 3;
    t.pattern = "The {profession} finished his shift early because";
    t.scale = Scale::Phrase;
    t.kind = TemplateKind::Hint;
    CHECK_THROWS_AS(compose_hint_corpus(make_professions({"guard"}), {t}), ValidationError);
}

TEST_CASE("jsonl round-trips bias and hint samples") {
    const auto professions = make_professions({"pilot", "nurse"});
    const auto samples =
        compose_bias_corpus(professions, {bias_template(0, "smiled", Scale::Word)});
    const auto back = bias_samples_from_jsonl(to_jsonl(samples));
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == samples[i].id);
        CHECK(back[i].text == samples[i].text);
        CHECK(back[i].scale == samples[i].scale);
        CHECK(back[i].profession == samples[i].profession);
    }
    CHECK(dataset_digest(back) == dataset_digest(samples));
}
