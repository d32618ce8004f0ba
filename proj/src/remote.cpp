#include "biaslab/remote.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace biaslab {

using nlohmann::json;

namespace {

// splits "http://host:port" (scheme optional)
void parse_endpoint(const std::string& endpoint, std::string& host, int& port) {
    std::string rest = endpoint;
    const auto scheme = rest.find("://");
    if (scheme != std::string::npos) {
        const std::string proto = rest.substr(0, scheme);
        if (proto != "http") {
            throw ValidationError("unsupported endpoint scheme: " + proto);
        }
        rest = rest.substr(scheme + 3);
    }
    while (!rest.empty() && rest.back() == '/') rest.pop_back();
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) {
        host = rest;
        port = 80;
    } else {
        host = rest.substr(0, colon);
        port = std::stoi(rest.substr(colon + 1));
    }
    if (host.empty()) throw ValidationError("invalid endpoint: " + endpoint);
}

}  // namespace

RemoteScorer::RemoteScorer(RemoteConfig config) : config_(std::move(config)) {
    parse_endpoint(config_.endpoint, host_, port_);
}

std::string RemoteScorer::id() const {
    return "remote/" + host_ + ":" + std::to_string(port_) +
           (model_id_.empty() ? "" : "/" + model_id_);
}

ScorerCapabilities RemoteScorer::capabilities() const {
    return ScorerCapabilities{false, VocabResolution::LeadingSpaceVariant};
}

std::string RemoteScorer::post_json(const std::string& path, const std::string& body,
                                    bool* not_found) {
    int backoff = config_.retry_backoff_ms;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        httplib::Client client(host_, port_);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        httplib::Headers headers;
        if (!config_.auth_token.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.auth_token);
        }
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;  // retry
        }
        if (res->status == 404 && not_found) {
            *not_found = true;
            return {};
        }
        if (res->status != 200) {
            throw ProtocolError("endpoint returned status " + std::to_string(res->status) +
                                " for " + path);
        }
        return res->body;
    }
    throw ProtocolError("endpoint unreachable after " + std::to_string(config_.max_retries + 1) +
                        " attempts: " + last_error);
}

TermResolution RemoteScorer::resolve_terms(const TermSet& terms) {
    terms.validate();
    if (!resolution_done_) {
        json req;
        req["terms"] = terms.terms;
        bool not_found = false;
        const std::string body = post_json("/v1/resolve", req.dump(), &not_found);
        if (not_found) {
            for (const auto& t : terms.terms) resolved_cache_[t] = t;
            resolution_notes_.push_back("endpoint lacks /v1/resolve; terms sent verbatim");
        } else {
            json res;
            try {
                res = json::parse(body);
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("malformed /v1/resolve response: ") + e.what());
            }
            if (!res.contains("resolutions")) {
                throw ProtocolError("/v1/resolve response lacks 'resolutions'");
            }
            for (const auto& t : terms.terms) {
                const auto& r = res.at("resolutions");
                if (!r.contains(t) || r.at(t).is_null()) {
                    throw ProtocolError("term '" + t + "' unresolvable as a single token");
                }
                const std::string token = r.at(t).get<std::string>();
                resolved_cache_[t] = token;
                if (token != t) {
                    resolution_notes_.push_back("term '" + t + "' resolved to single token '" +
                                                token + "'");
                }
            }
            if (resolution_notes_.empty()) {
                resolution_notes_.push_back("all terms resolved as plain single tokens");
            }
        }
        resolution_done_ = true;
    } else {
        for (const auto& t : terms.terms) {
            if (!resolved_cache_.count(t)) {
                resolution_done_ = false;
                return resolve_terms(terms);
            }
        }
    }
    TermResolution out;
    for (const auto& t : terms.terms) out.resolved[t] = resolved_cache_.at(t);
    out.notes = resolution_notes_;
    return out;
}

std::map<std::string, double> RemoteScorer::term_probabilities(const std::string& prompt,
                                                               const TermSet& terms) {
    const auto resolution = resolve_terms(terms);

    json req;
    req["prompt"] = prompt;
    json wire_terms = json::array();
    for (const auto& t : terms.terms) wire_terms.push_back(resolution.resolved.at(t));
    req["terms"] = wire_terms;

    const std::string body = post_json("/v1/score", req.dump(), nullptr);
    json res;
    try {
        res = json::parse(body);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed /v1/score response: ") + e.what());
    }
    if (res.contains("model_id") && res.at("model_id").is_string()) {
        model_id_ = res.at("model_id").get<std::string>();
    }
    if (!res.contains("probs") || !res.at("probs").is_object()) {
        throw ProtocolError("/v1/score response lacks 'probs' object");
    }
    const auto& probs = res.at("probs");
    std::map<std::string, double> out;
    double sum = 0.0;
    for (const auto& t : terms.terms) {
        const std::string& wire = resolution.resolved.at(t);
        if (!probs.contains(wire)) {
            throw ProtocolError("response probs missing term '" + wire + "'");
        }
        if (!probs.at(wire).is_number()) {
            throw ProtocolError("probability for '" + wire + "' is not a number");
        }
        const double p = probs.at(wire).get<double>();
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ProtocolError("probability for '" + wire + "' outside [0,1]: " +
                                std::to_string(p));
        }
        sum += p;
        out[t] = p;
    }
    if (sum > 1.0 + 1e-9) {
        throw ProtocolError("term probabilities sum to " + std::to_string(sum) + " > 1");
    }
    return out;
}

}  // namespace biaslab
