#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biaslab/corpus.hpp"
#include "biaslab/tokenizer.hpp"

namespace biaslab {

// profession -> probability that a female pronoun follows its prompts
struct SkewTable {
    std::map<std::string, double> p_she;

    void validate() const;  // all probabilities in [0,1]
};

SkewTable load_skew_table(const std::filesystem::path& path);

struct SynthOptions {
    int size = 4000;              // number of pronoun-completed bias lines
    double hint_fraction = 0.35;  // hint lines as a fraction of size
    double filler_fraction = 0.35;
    std::uint64_t seed = 0;
};

struct SynthCorpus {
    std::vector<std::string> lines;
    int n_bias = 0;
    int n_hint = 0;
    int n_filler = 0;
    long n_she = 0;  // female continuations among bias lines
    long n_he = 0;
};

// Deterministic pretraining corpus: profession prompts completed with a
// pronoun at the skewed rate, hint lines whose pronoun always matches the
// hint, and neutral filler.
SynthCorpus synthesize_pretraining_corpus(const std::vector<Profession>& professions,
                                          const SkewTable& skew,
                                          const std::vector<PromptTemplate>& bias_templates,
                                          const std::vector<PromptTemplate>& hint_templates,
                                          const SynthOptions& options);

// Filler-only corpus; used as the held-out neutral set for perplexity.
std::vector<std::string> synthesize_neutral_corpus(int size, std::uint64_t seed);

// Closed vocabulary over everything the lab can ever tokenize: professions,
// template texts, pronouns, continuation tails, filler bank, prefix words.
Vocab build_model_vocab(const std::vector<Profession>& professions,
                        const std::vector<PromptTemplate>& templates,
                        const std::vector<std::string>& extra_texts = {});

}  // namespace biaslab
