#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "biaslab/lftf.hpp"
#include "biaslab/model.hpp"

using namespace biaslab;

namespace {

Vocab tiny_vocab(int size) {
    std::vector<std::string> words;
    for (int i = 0; i < size; ++i) words.push_back("w" + std::to_string(i));
    return Vocab(std::move(words));
}

Model two_block_model(std::uint64_t seed = 17) {
    ModelConfig c;
    c.vocab_size = 9;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_blocks = 2;
    c.d_ff = 12;
    c.max_context = 8;
    c.seed = seed;
    return init_model(c, tiny_vocab(9));
}

// scalar loss of the final-position softmax for the given variant
double variant_loss(const Model& model, const std::vector<int>& tokens, const TermSet& terms,
                    LossVariant variant) {
    const auto res = forward(model, tokens);
    const auto probs = softmax(res.logits_last);
    std::map<std::string, double> term_probs;
    for (const auto& t : terms.terms) {
        term_probs[t] = probs[static_cast<std::size_t>(model.vocab.id(t))];
    }
    return lftf_loss(term_probs, terms, variant);
}

// cross-entropy of the next token over all positions
double ce_loss(const Model& model, const std::vector<int>& tokens) {
    const auto logits = forward_all_logits(model, tokens);
    const int v = model.config.vocab_size;
    double nll = 0.0;
    long n = 0;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        const auto probs = softmax(std::span<const double>(
            logits.data() + static_cast<std::ptrdiff_t>(t) * v, static_cast<std::size_t>(v)));
        nll -= std::log(probs[static_cast<std::size_t>(tokens[t + 1])]);
        ++n;
    }
    return nll / static_cast<double>(n);
}

// analytic gradients for the same variant loss
Gradients variant_gradients(const Model& model, const std::vector<int>& tokens,
                            const TermSet& terms, LossVariant variant, const ParamMask& mask) {
    const auto cache = forward_cached(model, tokens);
    const int v = model.config.vocab_size;
    const int t_len = static_cast<int>(tokens.size());
    const auto probs = softmax(std::span<const double>(
        cache.logits.data() + static_cast<std::ptrdiff_t>(t_len - 1) * v,
        static_cast<std::size_t>(v)));
    std::map<std::string, double> term_probs;
    std::map<std::string, int> ids;
    for (const auto& t : terms.terms) {
        ids[t] = model.vocab.id(t);
        term_probs[t] = probs[static_cast<std::size_t>(ids[t])];
    }
    const auto coeffs = lftf_loss_coefficients(term_probs, terms, variant);
    double dot = 0.0;
    for (const auto& t : terms.terms) {
        dot += coeffs.at(t) * probs[static_cast<std::size_t>(ids[t])];
    }
    std::vector<double> dlogits(static_cast<std::size_t>(t_len) * v, 0.0);
    double* dl = dlogits.data() + static_cast<std::ptrdiff_t>(t_len - 1) * v;
    for (int j = 0; j < v; ++j) dl[j] = -probs[static_cast<std::size_t>(j)] * dot;
    for (const auto& t : terms.terms) {
        dl[ids[t]] += probs[static_cast<std::size_t>(ids[t])] * coeffs.at(t);
    }
    return backward(model, cache, dlogits, mask);
}

Gradients ce_gradients(const Model& model, const std::vector<int>& tokens,
                       const ParamMask& mask) {
    const auto cache = forward_cached(model, tokens);
    const int v = model.config.vocab_size;
    const int t_len = static_cast<int>(tokens.size());
    std::vector<double> dlogits(static_cast<std::size_t>(t_len) * v, 0.0);
    const double inv_n = 1.0 / static_cast<double>(t_len - 1);
    for (int t = 0; t + 1 < t_len; ++t) {
        const auto probs = softmax(std::span<const double>(
            cache.logits.data() + static_cast<std::ptrdiff_t>(t) * v, static_cast<std::size_t>(v)));
        double* dl = dlogits.data() + static_cast<std::ptrdiff_t>(t) * v;
        for (int j = 0; j < v; ++j) dl[j] = probs[static_cast<std::size_t>(j)] * inv_n;
        dl[tokens[static_cast<std::size_t>(t) + 1]] -= inv_n;
    }
    return backward(model, cache, dlogits, mask);
}

// compares analytic gradients against central differences with h=1e-5 over a
// spread of indices in every present tensor; returns the max relative error
double max_fd_error(Model model, const Gradients& grads,
                    const std::function<double(const Model&)>& loss_fn) {
    constexpr double h = 1e-5;
    double max_err = 0.0;

    std::vector<std::vector<double>*> tensors;
    std::vector<std::string> names;
    model.params.for_each_tensor([&](const std::string& name, std::vector<double>& t) {
        tensors.push_back(&t);
        names.push_back(name);
    });
    std::vector<const std::vector<double>*> gtensors;
    grads.values.for_each_tensor(
        [&](const std::string&, const std::vector<double>& t) { gtensors.push_back(&t); });

    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        const auto& g = *gtensors[ti];
        if (g.empty()) continue;
        auto& p = *tensors[ti];
        REQUIRE(g.size() == p.size());
        const std::size_t stride = std::max<std::size_t>(1, p.size() / 9);
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const double orig = p[i];
            p[i] = orig + h;
            const double up = loss_fn(model);
            p[i] = orig - h;
            const double down = loss_fn(model);
            p[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max({std::fabs(numeric), std::fabs(g[i]), 1e-6});
            max_err = std::max(max_err, std::fabs(numeric - g[i]) / denom);
        }
    }
    return max_err;
}

}  // namespace

TEST_CASE("cross-entropy gradients match central differences to 1e-4") {
    const auto model = two_block_model();
    const std::vector<int> tokens = {3, 7, 1, 5, 2};
    const auto mask = ParamMask::all(model.config.n_blocks);
    const auto grads = ce_gradients(model, tokens, mask);
    const double err = max_fd_error(
        model, grads, [&tokens](const Model& m) { return ce_loss(m, tokens); });
    CHECK(err < 1e-4);
}

TEST_CASE("every loss variant's gradients match central differences to 1e-4") {
    const auto model = two_block_model(29);
    const std::vector<int> tokens = {4, 8, 0, 6};
    const TermSet pair{{"w2", "w5"}};
    const TermSet triple{{"w1", "w3", "w7"}};
    const auto mask = ParamMask::all(model.config.n_blocks);

    const std::vector<std::pair<LossVariant, const TermSet*>> cases = {
        {LossVariant::Sum, &pair},        {LossVariant::AbsDiff, &pair},
        {LossVariant::SqDiff, &pair},     {LossVariant::OnlyHe, &pair},
        {LossVariant::OnlyShe, &pair},    {LossVariant::TermsetSum, &triple},
    };
    for (const auto& [variant, terms] : cases) {
        CAPTURE(to_string(variant));
        const auto grads = variant_gradients(model, tokens, *terms, variant, mask);
        const double err = max_fd_error(model, grads, [&](const Model& m) {
            return variant_loss(m, tokens, *terms, variant);
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("all-false mask yields an empty gradient set") {
    const auto model = two_block_model();
    const std::vector<int> tokens = {1, 2, 3};
    const auto grads = ce_gradients(model, tokens, ParamMask::none(model.config.n_blocks));
    grads.values.for_each_tensor(
        [](const std::string&, const std::vector<double>& t) { CHECK(t.empty()); });
}

TEST_CASE("gradients for blocks outside the mask are absent") {
    const auto model = two_block_model();
    const std::vector<int> tokens = {1, 2, 3, 4};
    const auto mask = ParamMask::single_block(model.config.n_blocks, 1, true, true);
    const auto grads = ce_gradients(model, tokens, mask);

    // block 0 absent even though the chain rule would give nonzero values
    CHECK(grads.values.blocks[0].att.wq.empty());
    CHECK(grads.values.blocks[0].mlp.w1.empty());
    CHECK(grads.values.tok_emb.empty());
    CHECK(grads.values.head.empty());
    CHECK_FALSE(grads.values.blocks[1].att.wq.empty());
    CHECK_FALSE(grads.values.blocks[1].mlp.w1.empty());

    // enabled-block gradients are genuinely nonzero
    double sum = 0.0;
    for (const double x : grads.values.blocks[1].att.wq) sum += std::fabs(x);
    CHECK(sum > 0.0);
}

TEST_CASE("restricted masks agree with the full-mask gradients") {
    const auto model = two_block_model(53);
    const std::vector<int> tokens = {2, 6, 8, 1};
    const auto full = ce_gradients(model, tokens, ParamMask::all(model.config.n_blocks));
    const auto only_b0 = ce_gradients(model, tokens,
                                      ParamMask::single_block(model.config.n_blocks, 0, true, true));
    CHECK(only_b0.values.blocks[0].att.wq == full.values.blocks[0].att.wq);
    CHECK(only_b0.values.blocks[0].mlp.w2 == full.values.blocks[0].mlp.w2);
}

TEST_CASE("optimizer steps leave parameters outside the mask bit-identical") {
    auto model = two_block_model(61);
    const std::vector<int> tokens = {3, 1, 4, 1, 5};
    const auto mask = ParamMask::single_block(model.config.n_blocks, 1, true, false);
    const auto before = parameter_digests(model);

    AdamOptimizer opt(model, AdamConfig{1e-2, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 3; ++step) {
        const auto grads = ce_gradients(model, tokens, mask);
        opt.step(model, grads, mask);
    }
    const auto after = parameter_digests(model);

    CHECK(after.at("tok_emb") == before.at("tok_emb"));
    CHECK(after.at("pos_emb") == before.at("pos_emb"));
    CHECK(after.at("head") == before.at("head"));
    CHECK(after.at("block0.att") == before.at("block0.att"));
    CHECK(after.at("block0.mlp") == before.at("block0.mlp"));
    CHECK(after.at("block1.mlp") == before.at("block1.mlp"));
    CHECK(after.at("block1.att") != before.at("block1.att"));
}
