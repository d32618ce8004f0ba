#pragma once

#include <string>

#include "biaslab/scorer.hpp"

namespace biaslab {

// Wire protocol:
//   POST /v1/score    {"prompt": text, "terms": [text]}
//                  -> {"model_id": text, "probs": {term: real}}
//   POST /v1/resolve  {"terms": [text]}
//                  -> {"resolutions": {term: token-or-null}}
// /v1/resolve is optional; endpoints without it get verbatim terms. Responses
// with probabilities outside [0,1] or term sums above 1 are protocol errors.
struct RemoteConfig {
    std::string endpoint;       // e.g. http://127.0.0.1:8975
    std::string auth_token;     // sent as a bearer token when non-empty
    int timeout_seconds = 10;
    int max_retries = 3;
    int retry_backoff_ms = 100;  // doubled per attempt
};

class RemoteScorer : public Scorer {
public:
    explicit RemoteScorer(RemoteConfig config);

    std::string id() const override;
    ScorerCapabilities capabilities() const override;
    TermResolution resolve_terms(const TermSet& terms) override;
    std::map<std::string, double> term_probabilities(const std::string& prompt,
                                                     const TermSet& terms) override;

private:
    std::string post_json(const std::string& path, const std::string& body, bool* not_found);

    RemoteConfig config_;
    std::string host_;
    int port_ = 80;
    std::string model_id_;
    std::map<std::string, std::string> resolved_cache_;
    bool resolution_done_ = false;
    std::vector<std::string> resolution_notes_;
};

}  // namespace biaslab
