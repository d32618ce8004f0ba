#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "biaslab/common.hpp"
#include "biaslab/tokenizer.hpp"

namespace biaslab {

// ----------------------------- configuration -----------------------------

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_heads = 4;
    int n_blocks = 8;
    int d_ff = 256;
    int max_context = 32;
    std::uint64_t seed = 0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
};

// ----------------------------- parameters -----------------------------
// Each block is split into an ATT submodule (pre-norm + attention) and an
// MLP submodule (pre-norm + feed-forward); the two norms travel with their
// submodule so the trainability mask covers every block parameter.

struct AttParams {
    std::vector<double> ln_gamma, ln_beta;      // [d]
    std::vector<double> wq, wk, wv, wo;         // [d*d], row-major [out][in]
    std::vector<double> bq, bk, bv, bo;         // [d]
};

struct MlpParams {
    std::vector<double> ln_gamma, ln_beta;      // [d]
    std::vector<double> w1;                     // [d_ff*d]
    std::vector<double> b1;                     // [d_ff]
    std::vector<double> w2;                     // [d*d_ff]
    std::vector<double> b2;                     // [d]
};

struct BlockParams {
    AttParams att;
    MlpParams mlp;
};

struct Parameters {
    std::vector<double> tok_emb;                // [V*d]
    std::vector<double> pos_emb;                // [ctx*d]
    std::vector<BlockParams> blocks;
    std::vector<double> lnf_gamma, lnf_beta;    // [d]
    std::vector<double> head;                   // [V*d], no bias

    void for_each_tensor(const std::function<void(const std::string&, std::vector<double>&)>& fn);
    void for_each_tensor(
        const std::function<void(const std::string&, const std::vector<double>&)>& fn) const;
};

// Per-block x {ATT, MLP} trainability plus the two non-block groups.
struct ParamMask {
    struct BlockMask {
        bool att = false;
        bool mlp = false;
    };
    std::vector<BlockMask> blocks;
    bool embeddings = false;  // tok_emb + pos_emb
    bool head = false;        // final norm + lm head

    static ParamMask none(int n_blocks) { return ParamMask{std::vector<BlockMask>(n_blocks)}; }
    static ParamMask all(int n_blocks) {
        ParamMask m{std::vector<BlockMask>(n_blocks, BlockMask{true, true})};
        m.embeddings = true;
        m.head = true;
        return m;
    }
    static ParamMask single_block(int n_blocks, int block, bool att, bool mlp) {
        ParamMask m = none(n_blocks);
        m.blocks.at(static_cast<std::size_t>(block)) = BlockMask{att, mlp};
        return m;
    }
    bool any() const;
};

struct Model {
    ModelConfig config;
    Vocab vocab;
    Parameters params;
    ParamMask mask;  // default: everything frozen

    std::vector<int> encode_prompt(const std::string& text) const;
};

// Deterministic initialization from config.seed. config.vocab_size must equal
// vocab.size().
Model init_model(const ModelConfig& config, Vocab vocab);

// ----------------------------- forward -----------------------------

// Post-block hidden states H_0..H_n, each [T*d] row-major (H_0 is the
// embedding output).
struct HiddenTrace {
    int seq_len = 0;
    int d_model = 0;
    std::vector<std::vector<double>> states;
};

struct ForwardResult {
    std::vector<double> logits_last;  // [V]
    HiddenTrace trace;
};

ForwardResult forward(const Model& model, std::span<const int> tokens);

// Logits for every position, [T*V]; used by training and perplexity.
std::vector<double> forward_all_logits(const Model& model, std::span<const int> tokens);

// Re-runs blocks start_block..n-1 from a stored hidden state and returns the
// final-position logits.
std::vector<double> forward_from_block(const Model& model, const std::vector<double>& hidden,
                                       int start_block, int seq_len);

std::vector<double> softmax(std::span<const double> logits);

// ----------------------------- backward -----------------------------

struct BlockCache {
    std::vector<double> x_in;        // [T*d]
    std::vector<double> ln1_xhat;    // [T*d]
    std::vector<double> ln1_rstd;    // [T]
    std::vector<double> a;           // [T*d] ln1 output
    std::vector<double> q, k, v;     // [T*d]
    std::vector<double> att_probs;   // [heads*T*T]
    std::vector<double> ctx;         // [T*d] pre-projection context
    std::vector<double> x_mid;       // [T*d] after attention residual
    std::vector<double> ln2_xhat;    // [T*d]
    std::vector<double> ln2_rstd;    // [T]
    std::vector<double> m;           // [T*d] ln2 output
    std::vector<double> ff_pre;      // [T*f]
    std::vector<double> ff_act;      // [T*f]
};

struct ForwardCache {
    std::vector<int> tokens;
    std::vector<BlockCache> blocks;
    std::vector<double> x_final;     // [T*d]
    std::vector<double> lnf_xhat;    // [T*d]
    std::vector<double> lnf_rstd;    // [T]
    std::vector<double> f;           // [T*d]
    std::vector<double> logits;      // [T*V]
    HiddenTrace trace;
};

ForwardCache forward_cached(const Model& model, std::span<const int> tokens);

// Gradients are materialized only for mask-enabled groups; the rest are
// reported absent (empty tensors, flag false).
struct Gradients {
    ParamMask present;
    Parameters values;  // zero-sized tensors where absent

    void scale(double factor);
    void accumulate(const Gradients& other);
};

Gradients backward(const Model& model, const ForwardCache& cache,
                   const std::vector<double>& dlogits, const ParamMask& mask);

// ----------------------------- optimizer -----------------------------

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer(const Model& model, AdamConfig cfg);
    // Applies one step to the mask-enabled parameters. Gradients must carry
    // exactly the groups enabled in the mask.
    void step(Model& model, const Gradients& grads, const ParamMask& mask);

private:
    AdamConfig cfg_;
    Parameters m_;
    Parameters v_;
    long t_ = 0;
};

// ----------------------------- training -----------------------------

struct TrainHyper {
    double learning_rate = 1e-3;
    int epochs = 4;
    int batch_size = 32;
    std::uint64_t seed = 0;
    AdamConfig adam() const {
        return AdamConfig{learning_rate, 0.9, 0.999, 1e-8};
    }
};

struct TrainLog {
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;
};

// Next-token cross-entropy over all positions of each line; trains every
// parameter group. Mutates the given model in place; throws TrainingError on
// a non-finite loss, leaving the model unusable (callers train on a copy).
TrainLog train_lm(Model& model, const std::vector<std::string>& corpus_lines,
                  const TrainHyper& hyper);

// exp(mean token-level negative log-likelihood) over the corpus.
double perplexity(const Model& model, const std::vector<std::string>& corpus_lines);

// ----------------------------- digests / checkpoints -----------------------------

// Group names: "tok_emb", "pos_emb", "block<i>.att", "block<i>.mlp", "head".
std::map<std::string, std::string> parameter_digests(const Model& model);
std::string parameters_digest(const Model& model);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace biaslab
