#include "biaslab/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

const char* to_string(Scale s) {
    switch (s) {
        case Scale::Word: return "Word";
        case Scale::Phrase: return "Phrase";
        case Scale::Sentence: return "Sentence";
    }
    return "?";
}

Scale scale_from_string(const std::string& s) {
    if (s == "Word") return Scale::Word;
    if (s == "Phrase") return Scale::Phrase;
    if (s == "Sentence") return Scale::Sentence;
    throw ValidationError("unknown scale: " + s);
}

const char* to_string(ExclusionReason r) {
    switch (r) {
        case ExclusionReason::None: return "none";
        case ExclusionReason::SemanticGender: return "semantic_gender";
        case ExclusionReason::MorphologicalGender: return "morphological_gender";
    }
    return "?";
}

const char* to_string(HintGender g) {
    return g == HintGender::Male ? "male" : "female";
}

HintGender hint_gender_from_string(const std::string& s) {
    if (s == "male") return HintGender::Male;
    if (s == "female") return HintGender::Female;
    throw ValidationError("unknown hint gender: " + s);
}

static constexpr std::string_view kPlaceholder = "{profession}";

std::string PromptTemplate::render(const std::string& profession) const {
    const auto pos = pattern.find(kPlaceholder);
    if (pos == std::string::npos) {
        throw ValidationError("template " + std::to_string(id) +
                              " lacks {profession} placeholder: " + pattern);
    }
    std::string out = pattern;
    out.replace(pos, kPlaceholder.size(), profession);
    return out;
}

void PromptTemplate::validate() const {
    const auto first = pattern.find(kPlaceholder);
    if (first == std::string::npos) {
        throw ValidationError("template " + std::to_string(id) +
                              " lacks {profession} placeholder: " + pattern);
    }
    if (pattern.find(kPlaceholder, first + 1) != std::string::npos) {
        throw ValidationError("template " + std::to_string(id) +
                              " has multiple {profession} placeholders");
    }
    if (pattern.rfind("The {profession}", 0) != 0) {
        throw ValidationError("template " + std::to_string(id) +
                              " must start with \"The {profession}\": " + pattern);
    }
    if (!pattern.ends_with("because")) {
        throw ValidationError("template " + std::to_string(id) +
                              " must end with \"because\": " + pattern);
    }
    if (kind == TemplateKind::Hint && !hint_gender.has_value()) {
        throw ValidationError("hint template " + std::to_string(id) +
                              " has no hint_gender");
    }
}

// ----------------------------- filtering -----------------------------

static bool last_word_has_suffix(const std::string& surface, const std::string& suffix) {
    const auto sp = surface.rfind(' ');
    const std::string last = sp == std::string::npos ? surface : surface.substr(sp + 1);
    return last.size() >= suffix.size() &&
           last.compare(last.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<Profession> filter_professions(const std::vector<std::string>& lexicon,
                                           const ExclusionRules& rules) {
    if (lexicon.empty()) throw ValidationError("empty profession lexicon");

    std::set<std::string> seen;
    std::vector<std::string> dupes;
    for (const auto& w : lexicon) {
        if (!seen.insert(w).second) dupes.push_back(w);
    }
    if (!dupes.empty()) {
        std::string msg = "duplicate lexicon entries:";
        for (const auto& d : dupes) msg += " " + d;
        throw ValidationError(msg);
    }

    const std::set<std::string> semantic(rules.semantic_words.begin(),
                                         rules.semantic_words.end());

    std::vector<Profession> out;
    out.reserve(lexicon.size());
    for (const auto& w : lexicon) {
        if (w.empty()) throw ValidationError("empty profession surface");
        if (w.find('{') != std::string::npos || w.find('}') != std::string::npos) {
            throw ValidationError("profession contains placeholder braces: " + w);
        }
        Profession p;
        p.surface = w;
        if (semantic.count(w)) {
            p.excluded = true;
            p.reason = ExclusionReason::SemanticGender;
        } else {
            for (const auto& suf : rules.morphological_suffixes) {
                if (last_word_has_suffix(w, suf)) {
                    p.excluded = true;
                    p.reason = ExclusionReason::MorphologicalGender;
                    break;
                }
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Profession> non_excluded(const std::vector<Profession>& professions) {
    std::vector<Profession> out;
    for (const auto& p : professions) {
        if (!p.excluded) out.push_back(p);
    }
    return out;
}

// ----------------------------- composition -----------------------------

std::vector<PromptSample> compose_bias_corpus(const std::vector<Profession>& professions,
                                              const std::vector<PromptTemplate>& templates) {
    for (const auto& t : templates) {
        t.validate();
        if (t.kind != TemplateKind::Bias) {
            throw ValidationError("non-bias template in bias corpus: id " +
                                  std::to_string(t.id));
        }
    }
    for (const auto& p : professions) {
        if (p.excluded) {
            throw ValidationError("excluded profession in composition: " + p.surface);
        }
    }
    std::vector<PromptSample> out;
    out.reserve(professions.size() * templates.size());
    int id = 0;
    for (const auto& p : professions) {
        for (const auto& t : templates) {
            PromptSample s;
            s.id = id++;
            s.profession = p.surface;
            s.template_id = t.id;
            s.text = t.render(p.surface);
            s.scale = t.scale;
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<HintSample> compose_hint_corpus(const std::vector<Profession>& professions,
                                            const std::vector<PromptTemplate>& hint_templates) {
    for (const auto& t : hint_templates) {
        t.validate();
        if (t.kind != TemplateKind::Hint) {
            throw ValidationError("non-hint template in hint corpus: id " +
                                  std::to_string(t.id));
        }
    }
    for (const auto& p : professions) {
        if (p.excluded) {
            throw ValidationError("excluded profession in composition: " + p.surface);
        }
    }
    std::vector<HintSample> out;
    out.reserve(professions.size() * hint_templates.size());
    int id = 0;
    for (const auto& p : professions) {
        for (const auto& t : hint_templates) {
            HintSample s;
            s.id = id++;
            s.profession = p.surface;
            s.template_id = t.id;
            s.text = t.render(p.surface);
            s.hint_gender = *t.hint_gender;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ----------------------------- split -----------------------------

static std::array<int, 3> rounded_counts(int n, const std::array<int, 3>& ratio) {
    const double total = ratio[0] + ratio[1] + ratio[2];
    const int train = static_cast<int>(std::lround(n * ratio[0] / total));
    const int dev = static_cast<int>(std::lround(n * ratio[1] / total));
    return {train, dev, n - train - dev};
}

CorpusSplit split_corpus(const std::vector<PromptSample>& samples, std::uint64_t seed,
                         const SplitPlan* plan) {
    if (samples.empty()) throw ValidationError("cannot split empty sample list");

    std::map<Scale, std::vector<PromptSample>> strata;
    for (const auto& s : samples) strata[s.scale].push_back(s);

    CorpusSplit split;
    split.seed = seed;
    if (plan) split.ratio = plan->ratio;

    for (auto& [scale, group] : strata) {
        std::sort(group.begin(), group.end(),
                  [](const PromptSample& a, const PromptSample& b) { return a.id < b.id; });

        std::array<int, 3> counts{};
        if (plan) {
            const auto it = plan->per_scale_counts.find(scale);
            if (it == plan->per_scale_counts.end()) {
                throw ValidationError(std::string("split plan missing stratum ") +
                                      to_string(scale));
            }
            counts = it->second;
            if (counts[0] + counts[1] + counts[2] != static_cast<int>(group.size())) {
                throw ValidationError(std::string("split plan counts for ") + to_string(scale) +
                                      " sum to " +
                                      std::to_string(counts[0] + counts[1] + counts[2]) +
                                      " but stratum has " + std::to_string(group.size()));
            }
        } else {
            counts = rounded_counts(static_cast<int>(group.size()), split.ratio);
        }

        // stratum tag folded into the stream so strata shuffle independently
        Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(scale) + 1);
        rng.shuffle(group);

        for (int i = 0; i < counts[0]; ++i) split.train.push_back(group[i]);
        for (int i = counts[0]; i < counts[0] + counts[1]; ++i) split.dev.push_back(group[i]);
        for (int i = counts[0] + counts[1]; i < static_cast<int>(group.size()); ++i) {
            split.test.push_back(group[i]);
        }
    }

    const auto by_id = [](const PromptSample& a, const PromptSample& b) { return a.id < b.id; };
    std::sort(split.train.begin(), split.train.end(), by_id);
    std::sort(split.dev.begin(), split.dev.end(), by_id);
    std::sort(split.test.begin(), split.test.end(), by_id);
    return split;
}

// ----------------------------- assets -----------------------------

std::vector<std::string> load_lexicon(const std::filesystem::path& path) {
    auto lines = read_lines(path);
    std::vector<std::string> out;
    for (auto& l : lines) {
        if (!l.empty()) out.push_back(std::move(l));
    }
    if (out.empty()) throw ValidationError("empty lexicon file: " + path.string());
    return out;
}

ExclusionRules load_exclusion_rules(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    ExclusionRules rules;
    for (const auto& s : j.at("morphological_suffixes")) {
        rules.morphological_suffixes.push_back(s.get<std::string>());
    }
    for (const auto& s : j.at("semantic_words")) {
        rules.semantic_words.push_back(s.get<std::string>());
    }
    return rules;
}

TemplateManifest load_template_manifest(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    TemplateManifest m;
    for (const auto& t : j.at("templates")) {
        PromptTemplate pt;
        pt.id = t.at("id").get<int>();
        pt.pattern = t.at("pattern").get<std::string>();
        pt.scale = scale_from_string(t.at("scale").get<std::string>());
        const std::string kind = t.at("kind").get<std::string>();
        if (kind == "bias") {
            pt.kind = TemplateKind::Bias;
        } else if (kind == "hint") {
            pt.kind = TemplateKind::Hint;
            pt.hint_gender = hint_gender_from_string(t.at("hint_gender").get<std::string>());
        } else {
            throw ValidationError("unknown template kind: " + kind);
        }
        pt.validate();
        m.templates.push_back(std::move(pt));
    }
    if (j.contains("hint_template_counts")) {
        const auto& c = j.at("hint_template_counts");
        if (c.contains("male")) m.hint_template_counts[HintGender::Male] = c.at("male").get<int>();
        if (c.contains("female")) {
            m.hint_template_counts[HintGender::Female] = c.at("female").get<int>();
        }
    }
    if (j.contains("split_plan")) {
        const auto& sp = j.at("split_plan");
        const auto& r = sp.at("ratio");
        m.split_plan.ratio = {r[0].get<int>(), r[1].get<int>(), r[2].get<int>()};
        for (const auto& [key, val] : sp.at("per_scale_counts").items()) {
            m.split_plan.per_scale_counts[scale_from_string(key)] = {
                val[0].get<int>(), val[1].get<int>(), val[2].get<int>()};
        }
    }
    if (j.contains("split_seed")) m.split_seed = j.at("split_seed").get<std::uint64_t>();
    return m;
}

std::vector<PromptTemplate> TemplateManifest::bias_templates() const {
    std::vector<PromptTemplate> out;
    for (const auto& t : templates) {
        if (t.kind == TemplateKind::Bias) out.push_back(t);
    }
    return out;
}

std::vector<PromptTemplate> TemplateManifest::hint_templates() const {
    std::vector<PromptTemplate> out;
    for (const auto& t : templates) {
        if (t.kind == TemplateKind::Hint) out.push_back(t);
    }
    return out;
}

// ----------------------------- serialization -----------------------------

std::string to_jsonl(const std::vector<PromptSample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        json j{{"id", s.id},
               {"text", s.text},
               {"scale", to_string(s.scale)},
               {"profession", s.profession},
               {"template_id", s.template_id},
               {"kind", "bias"}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string to_jsonl(const std::vector<HintSample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        json j{{"id", s.id},
               {"text", s.text},
               {"profession", s.profession},
               {"template_id", s.template_id},
               {"kind", "hint"},
               {"hint_gender", to_string(s.hint_gender)}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<PromptSample> bias_samples_from_jsonl(const std::string& content) {
    std::vector<PromptSample> out;
    std::istringstream ss(content);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PromptSample s;
        s.id = j.at("id").get<int>();
        s.text = j.at("text").get<std::string>();
        s.scale = scale_from_string(j.at("scale").get<std::string>());
        s.profession = j.at("profession").get<std::string>();
        s.template_id = j.at("template_id").get<int>();
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<HintSample> hint_samples_from_jsonl(const std::string& content) {
    std::vector<HintSample> out;
    std::istringstream ss(content);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        HintSample s;
        s.id = j.at("id").get<int>();
        s.text = j.at("text").get<std::string>();
        s.profession = j.at("profession").get<std::string>();
        s.template_id = j.at("template_id").get<int>();
        s.hint_gender = hint_gender_from_string(j.at("hint_gender").get<std::string>());
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PromptSample> load_bias_samples(const std::filesystem::path& path) {
    return bias_samples_from_jsonl(read_text_file(path));
}

std::vector<HintSample> load_hint_samples(const std::filesystem::path& path) {
    return hint_samples_from_jsonl(read_text_file(path));
}

std::string dataset_digest(const std::vector<PromptSample>& samples) {
    std::vector<const PromptSample*> ordered;
    ordered.reserve(samples.size());
    for (const auto& s : samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const PromptSample* a, const PromptSample* b) { return a->id < b->id; });
    Digest d;
    for (const auto* s : ordered) {
        d.update(static_cast<std::uint64_t>(s->id));
        d.update(s->text);
        d.update(std::string_view(to_string(s->scale)));
    }
    return d.hex();
}

std::string dataset_digest(const std::vector<HintSample>& samples) {
    std::vector<const HintSample*> ordered;
    ordered.reserve(samples.size());
    for (const auto& s : samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const HintSample* a, const HintSample* b) { return a->id < b->id; });
    Digest d;
    for (const auto* s : ordered) {
        d.update(static_cast<std::uint64_t>(s->id));
        d.update(s->text);
        d.update(std::string_view(to_string(s->hint_gender)));
    }
    return d.hex();
}

}  // namespace biaslab
