#include "biaslab/scorer.hpp"

#include <set>

namespace biaslab {

void TermSet::validate() const {
    if (terms.size() < 2) throw ValidationError("term set needs at least 2 terms");
    std::set<std::string> unique(terms.begin(), terms.end());
    if (unique.size() != terms.size()) throw ValidationError("term set has duplicate terms");
}

HiddenTrace Scorer::hidden_trace(const std::string&) {
    throw CapabilityError("scorer '" + id() + "' does not expose hidden traces");
}

int Scorer::trace_block_count() const {
    throw CapabilityError("scorer '" + id() + "' does not expose hidden traces");
}

ProbDist next_token_distribution(const Model& model, const std::string& prompt,
                                 const TermSet& terms) {
    terms.validate();
    const auto tokens = model.encode_prompt(prompt);
    const auto res = forward(model, tokens);
    ProbDist dist;
    dist.full = softmax(res.logits_last);
    for (const auto& term : terms.terms) {
        const int id = model.vocab.id(Vocab::lowercase(term));
        dist.term_view[term] = dist.full[static_cast<std::size_t>(id)];
    }
    return dist;
}

MicroLmScorer::MicroLmScorer(const Model& model) : model_(&model) {}

std::string MicroLmScorer::id() const {
    return "micro-lm/" + parameters_digest(*model_).substr(0, 12);
}

ScorerCapabilities MicroLmScorer::capabilities() const {
    return ScorerCapabilities{true, VocabResolution::ExactToken};
}

TermResolution MicroLmScorer::resolve_terms(const TermSet& terms) {
    terms.validate();
    TermResolution res;
    for (const auto& term : terms.terms) {
        const std::string lowered = Vocab::lowercase(term);
        model_->vocab.id(lowered);  // throws if absent
        res.resolved[term] = lowered;
    }
    res.notes.push_back("exact single-token match in closed vocabulary");
    return res;
}

std::map<std::string, double> MicroLmScorer::term_probabilities(const std::string& prompt,
                                                                const TermSet& terms) {
    return next_token_distribution(*model_, prompt, terms).term_view;
}

HiddenTrace MicroLmScorer::hidden_trace(const std::string& prompt) {
    const auto tokens = model_->encode_prompt(prompt);
    return forward(*model_, tokens).trace;
}

int MicroLmScorer::trace_block_count() const { return model_->config.n_blocks; }

TermResolution TableScorer::resolve_terms(const TermSet& terms) {
    terms.validate();
    TermResolution res;
    for (const auto& term : terms.terms) res.resolved[term] = term;
    res.notes.push_back("fixture table, terms used verbatim");
    return res;
}

std::map<std::string, double> TableScorer::term_probabilities(const std::string& prompt,
                                                              const TermSet& terms) {
    const auto it = table_.find(prompt);
    if (it == table_.end()) {
        throw ValidationError("table scorer has no entry for prompt: " + prompt);
    }
    std::map<std::string, double> out;
    for (const auto& term : terms.terms) {
        const auto pit = it->second.find(term);
        if (pit == it->second.end()) {
            throw ValidationError("table scorer entry lacks term '" + term + "'");
        }
        out[term] = pit->second;
    }
    return out;
}

PrefixedScorer::PrefixedScorer(Scorer& inner, std::string prefix)
    : inner_(&inner), prefix_(std::move(prefix)) {}

std::string PrefixedScorer::id() const { return inner_->id() + "+prefix"; }

std::map<std::string, double> PrefixedScorer::term_probabilities(const std::string& prompt,
                                                                 const TermSet& terms) {
    const std::string full = prefix_.empty() ? prompt : prefix_ + " " + prompt;
    return inner_->term_probabilities(full, terms);
}

HiddenTrace PrefixedScorer::hidden_trace(const std::string& prompt) {
    const std::string full = prefix_.empty() ? prompt : prefix_ + " " + prompt;
    return inner_->hidden_trace(full);
}

}  // namespace biaslab
