#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "biaslab/model.hpp"

namespace biaslab {

// ----------------------------- term sets -----------------------------
// Ordered token set whose probabilities define metrics and losses. For the
// default pair the first term carries positive polarity.

struct TermSet {
    std::vector<std::string> terms;

    static TermSet default_pair() { return TermSet{{"he", "she"}}; }
    void validate() const;
    bool is_pair() const { return terms.size() == 2; }
};

// ----------------------------- scorer abstraction -----------------------------

enum class VocabResolution { ExactToken, LeadingSpaceVariant };

struct ScorerCapabilities {
    bool has_hidden_traces = false;
    VocabResolution vocab_resolution = VocabResolution::ExactToken;
};

struct TermResolution {
    // canonical term -> token string actually used by the scorer
    std::map<std::string, std::string> resolved;
    std::vector<std::string> notes;
};

class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::string id() const = 0;
    virtual ScorerCapabilities capabilities() const = 0;
    virtual TermResolution resolve_terms(const TermSet& terms) = 0;
    // next-token probability for each term, read from the scorer's full
    // next-token distribution
    virtual std::map<std::string, double> term_probabilities(const std::string& prompt,
                                                             const TermSet& terms) = 0;
    virtual HiddenTrace hidden_trace(const std::string& prompt);
    virtual int trace_block_count() const;
};

// ----------------------------- probability views -----------------------------

struct ProbDist {
    std::vector<double> full;                 // softmax over the whole vocabulary
    std::map<std::string, double> term_view;  // restricted view over a TermSet
};

ProbDist next_token_distribution(const Model& model, const std::string& prompt,
                                 const TermSet& terms);

// ----------------------------- in-process scorer -----------------------------

class MicroLmScorer : public Scorer {
public:
    explicit MicroLmScorer(const Model& model);

    std::string id() const override;
    ScorerCapabilities capabilities() const override;
    TermResolution resolve_terms(const TermSet& terms) override;
    std::map<std::string, double> term_probabilities(const std::string& prompt,
                                                     const TermSet& terms) override;
    HiddenTrace hidden_trace(const std::string& prompt) override;
    int trace_block_count() const override;

private:
    const Model* model_;
};

// ----------------------------- fixture scorer -----------------------------
// Fixed prompt -> term-probability table; lets the metric layer run on
// synthetic distributions.

class TableScorer : public Scorer {
public:
    TableScorer() = default;
    explicit TableScorer(std::map<std::string, std::map<std::string, double>> table)
        : table_(std::move(table)) {}

    void set(const std::string& prompt, std::map<std::string, double> probs) {
        table_[prompt] = std::move(probs);
    }

    std::string id() const override { return "table"; }
    ScorerCapabilities capabilities() const override { return {}; }
    TermResolution resolve_terms(const TermSet& terms) override;
    std::map<std::string, double> term_probabilities(const std::string& prompt,
                                                     const TermSet& terms) override;

private:
    std::map<std::string, std::map<std::string, double>> table_;
};

// Decorator that prepends a fixed prefix to every prompt (prompt-based
// debiasing); the wrapped scorer is untouched.
class PrefixedScorer : public Scorer {
public:
    PrefixedScorer(Scorer& inner, std::string prefix);

    std::string id() const override;
    ScorerCapabilities capabilities() const override { return inner_->capabilities(); }
    TermResolution resolve_terms(const TermSet& terms) override {
        return inner_->resolve_terms(terms);
    }
    std::map<std::string, double> term_probabilities(const std::string& prompt,
                                                     const TermSet& terms) override;
    HiddenTrace hidden_trace(const std::string& prompt) override;
    int trace_block_count() const override { return inner_->trace_block_count(); }

private:
    Scorer* inner_;
    std::string prefix_;
};

}  // namespace biaslab
