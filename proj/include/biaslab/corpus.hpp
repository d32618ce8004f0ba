#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biaslab/common.hpp"

namespace biaslab {

// ----------------------------- domain types -----------------------------

enum class Scale { Word, Phrase, Sentence };

const char* to_string(Scale s);
Scale scale_from_string(const std::string& s);

enum class ExclusionReason { None, SemanticGender, MorphologicalGender };

const char* to_string(ExclusionReason r);

struct Profession {
    std::string surface;  // lowercase, single- or multi-word
    bool excluded = false;
    ExclusionReason reason = ExclusionReason::None;
};

enum class TemplateKind { Bias, Hint };

enum class HintGender { Male, Female };

const char* to_string(HintGender g);
HintGender hint_gender_from_string(const std::string& s);

struct PromptTemplate {
    int id = 0;
    std::string pattern;  // contains exactly one {profession} placeholder
    Scale scale = Scale::Word;
    TemplateKind kind = TemplateKind::Bias;
    std::optional<HintGender> hint_gender;  // present iff kind == Hint

    std::string render(const std::string& profession) const;
    void validate() const;
};

struct PromptSample {
    int id = 0;
    std::string profession;
    int template_id = 0;
    std::string text;
    Scale scale = Scale::Word;
};

struct HintSample {
    int id = 0;
    std::string profession;
    int template_id = 0;
    std::string text;
    HintGender hint_gender = HintGender::Male;
};

struct ExclusionRules {
    std::vector<std::string> morphological_suffixes;
    std::vector<std::string> semantic_words;
};

// Pinned per-stratum train/dev/test counts; membership is seed-shuffled.
struct SplitPlan {
    std::array<int, 3> ratio{2, 1, 2};
    std::map<Scale, std::array<int, 3>> per_scale_counts;
};

struct CorpusSplit {
    std::vector<PromptSample> train;
    std::vector<PromptSample> dev;
    std::vector<PromptSample> test;
    std::uint64_t seed = 0;
    std::array<int, 3> ratio{2, 1, 2};
};

// ----------------------------- operations -----------------------------

// Applies rule-driven exclusion to a lexicon. Duplicate entries are a
// validation error listing the duplicates.
std::vector<Profession> filter_professions(const std::vector<std::string>& lexicon,
                                           const ExclusionRules& rules);

std::vector<Profession> non_excluded(const std::vector<Profession>& professions);

// Cartesian product, profession-major id order. All templates must be bias
// templates and all professions non-excluded.
std::vector<PromptSample> compose_bias_corpus(const std::vector<Profession>& professions,
                                              const std::vector<PromptTemplate>& templates);

std::vector<HintSample> compose_hint_corpus(const std::vector<Profession>& professions,
                                            const std::vector<PromptTemplate>& hint_templates);

// Stratified 2:1:2 split. Without a plan, per-stratum counts come from
// rounding; with a plan, the pinned counts are used (their sums must match
// the stratum sizes).
CorpusSplit split_corpus(const std::vector<PromptSample>& samples, std::uint64_t seed,
                         const SplitPlan* plan = nullptr);

// ----------------------------- assets -----------------------------

std::vector<std::string> load_lexicon(const std::filesystem::path& path);
ExclusionRules load_exclusion_rules(const std::filesystem::path& path);

struct TemplateManifest {
    std::vector<PromptTemplate> templates;
    std::map<HintGender, int> hint_template_counts;
    SplitPlan split_plan;
    std::uint64_t split_seed = 0;

    std::vector<PromptTemplate> bias_templates() const;
    std::vector<PromptTemplate> hint_templates() const;
};

TemplateManifest load_template_manifest(const std::filesystem::path& path);

// ----------------------------- serialization -----------------------------
// JSONL, one sample per line, UTF-8, LF endings.

std::string to_jsonl(const std::vector<PromptSample>& samples);
std::string to_jsonl(const std::vector<HintSample>& samples);

std::vector<PromptSample> bias_samples_from_jsonl(const std::string& content);
std::vector<HintSample> hint_samples_from_jsonl(const std::string& content);

std::vector<PromptSample> load_bias_samples(const std::filesystem::path& path);
std::vector<HintSample> load_hint_samples(const std::filesystem::path& path);

// Order-independent content digest; used to check that reports/runs were
// produced over the same dataset.
std::string dataset_digest(const std::vector<PromptSample>& samples);
std::string dataset_digest(const std::vector<HintSample>& samples);

}  // namespace biaslab
