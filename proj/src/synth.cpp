#include "biaslab/synth.hpp"

#include <cmath>

#include <json.hpp>

namespace biaslab {

using nlohmann::json;

namespace {

const std::vector<std::string>& tails() {
    static const std::vector<std::string> v = {"was tired", "felt proud", "had a plan",
                                               "needed rest"};
    return v;
}

const std::vector<std::string>& filler_subjects() {
    static const std::vector<std::string> v = {"team", "committee", "crew",
                                               "office", "board", "group"};
    return v;
}

const std::vector<std::string>& filler_verbs() {
    static const std::vector<std::string> v = {"reviewed", "approved", "discussed",
                                               "prepared", "finished", "planned"};
    return v;
}

const std::vector<std::string>& filler_objects() {
    static const std::vector<std::string> v = {"quarterly plan", "budget", "workshop",
                                               "schedule", "report", "meeting"};
    return v;
}

const std::vector<std::string>& filler_adverbs() {
    static const std::vector<std::string> v = {"yesterday", "today", "carefully",
                                               "quietly", "twice", "again"};
    return v;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[static_cast<std::size_t>(rng.next_below(v.size()))];
}

// "The {profession} smiled because" -> "smiled"
std::string action_of(const PromptTemplate& t) {
    static const std::string head = "The {profession} ";
    static const std::string tail = " because";
    if (t.pattern.size() <= head.size() + tail.size()) {
        throw ValidationError("template has no action span: " + t.pattern);
    }
    return t.pattern.substr(head.size(), t.pattern.size() - head.size() - tail.size());
}

std::string filler_line(Rng& rng) {
    return "the " + pick(rng, filler_subjects()) + " " + pick(rng, filler_verbs()) + " the " +
           pick(rng, filler_objects()) + " " + pick(rng, filler_adverbs());
}

}  // namespace

void SkewTable::validate() const {
    for (const auto& [prof, p] : p_she) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("skew for '" + prof + "' outside [0,1]: " + std::to_string(p));
        }
    }
}

SkewTable load_skew_table(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    SkewTable t;
    for (const auto& [key, val] : j.items()) {
        t.p_she[key] = val.get<double>();
    }
    t.validate();
    return t;
}

SynthCorpus synthesize_pretraining_corpus(const std::vector<Profession>& professions,
                                          const SkewTable& skew,
                                          const std::vector<PromptTemplate>& bias_templates,
                                          const std::vector<PromptTemplate>& hint_templates,
                                          const SynthOptions& options) {
    skew.validate();
    if (options.size <= 0) throw ValidationError("corpus size must be positive");

    // restrict to professions with a skew entry, keeping input order
    std::vector<std::pair<std::string, double>> profs;
    for (const auto& p : professions) {
        const auto it = skew.p_she.find(p.surface);
        if (it != skew.p_she.end()) profs.emplace_back(p.surface, it->second);
    }
    if (profs.empty()) throw ValidationError("no professions present in skew table");

    std::vector<std::string> bias_actions;
    for (const auto& t : bias_templates) bias_actions.push_back(action_of(t));
    if (bias_actions.empty()) throw ValidationError("no bias templates for synthesis");

    struct HintAction {
        std::string action;
        HintGender gender;
    };
    std::vector<HintAction> hint_actions;
    for (const auto& t : hint_templates) {
        hint_actions.push_back({action_of(t), *t.hint_gender});
    }

    Rng rng(options.seed);
    SynthCorpus out;
    out.n_bias = options.size;
    out.n_hint = static_cast<int>(std::lround(options.size * options.hint_fraction));
    if (hint_actions.empty()) out.n_hint = 0;
    out.n_filler = static_cast<int>(std::lround(options.size * options.filler_fraction));
    out.lines.reserve(static_cast<std::size_t>(out.n_bias + out.n_hint + out.n_filler));

    for (int i = 0; i < out.n_bias; ++i) {
        const auto& [prof, p_she] = pick(rng, profs);
        const auto& action = pick(rng, bias_actions);
        const bool she = rng.bernoulli(p_she);
        if (she) {
            ++out.n_she;
        } else {
            ++out.n_he;
        }
        out.lines.push_back("the " + prof + " " + action + " because " +
                            (she ? "she " : "he ") + pick(rng, tails()));
    }
    for (int i = 0; i < out.n_hint; ++i) {
        const auto& [prof, p_she_unused] = pick(rng, profs);
        (void)p_she_unused;
        const auto& ha = pick(rng, hint_actions);
        const bool she = ha.gender == HintGender::Female;
        out.lines.push_back("the " + prof + " " + ha.action + " because " +
                            (she ? "she " : "he ") + pick(rng, tails()));
    }
    for (int i = 0; i < out.n_filler; ++i) {
        out.lines.push_back(filler_line(rng));
    }
    return out;
}

std::vector<std::string> synthesize_neutral_corpus(int size, std::uint64_t seed) {
    if (size <= 0) throw ValidationError("corpus size must be positive");
    Rng rng(seed);
    std::vector<std::string> lines;
    lines.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) lines.push_back(filler_line(rng));
    return lines;
}

Vocab build_model_vocab(const std::vector<Profession>& professions,
                        const std::vector<PromptTemplate>& templates,
                        const std::vector<std::string>& extra_texts) {
    std::vector<std::string> texts;
    for (const auto& p : professions) texts.push_back(p.surface);
    for (const auto& t : templates) {
        std::string pattern = t.pattern;
        const auto pos = pattern.find("{profession}");
        if (pos != std::string::npos) pattern.replace(pos, 12, " ");
        texts.push_back(pattern);
    }
    texts.emplace_back("he she");
    for (const auto& t : tails()) texts.push_back(t);
    for (const auto& w : filler_subjects()) texts.push_back(w);
    for (const auto& w : filler_verbs()) texts.push_back(w);
    for (const auto& w : filler_objects()) texts.push_back(w);
    for (const auto& w : filler_adverbs()) texts.push_back(w);
    texts.emplace_back("the");
    for (const auto& t : extra_texts) texts.push_back(t);
    return Vocab::build(texts);
}

}  // namespace biaslab
