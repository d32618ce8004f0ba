#include "biaslab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace biaslab {

namespace {

constexpr double kLnEps = 1e-5;

// y[out] = W[out][in] * x[in] + b
void linear_forward(const double* w, const double* b, const double* x, double* y, int n_out,
                    int n_in) {
    for (int o = 0; o < n_out; ++o) {
        double acc = b ? b[o] : 0.0;
        const double* row = w + static_cast<std::ptrdiff_t>(o) * n_in;
        for (int i = 0; i < n_in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

// accumulates dx, dw, db given dy
void linear_backward(const double* w, const double* x, const double* dy, double* dx, double* dw,
                     double* db, int n_out, int n_in) {
    for (int o = 0; o < n_out; ++o) {
        const double g = dy[o];
        const double* row = w + static_cast<std::ptrdiff_t>(o) * n_in;
        if (dx) {
            for (int i = 0; i < n_in; ++i) dx[i] += row[i] * g;
        }
        if (dw) {
            double* drow = dw + static_cast<std::ptrdiff_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) drow[i] += x[i] * g;
        }
        if (db) db[o] += g;
    }
}

void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* xhat, double* rstd_out, int rows, int d) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::ptrdiff_t>(r) * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dx = xr[i] - mean;
            var += dx * dx;
        }
        var /= d;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        rstd_out[r] = rstd;
        double* xh = xhat + static_cast<std::ptrdiff_t>(r) * d;
        double* yr = y + static_cast<std::ptrdiff_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            xh[i] = (xr[i] - mean) * rstd;
            yr[i] = gamma[i] * xh[i] + beta[i];
        }
    }
}

void layernorm_backward(const double* dy, const double* xhat, const double* rstd,
                        const double* gamma, double* dx, double* dgamma, double* dbeta, int rows,
                        int d) {
    for (int r = 0; r < rows; ++r) {
        const double* dyr = dy + static_cast<std::ptrdiff_t>(r) * d;
        const double* xh = xhat + static_cast<std::ptrdiff_t>(r) * d;
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dxhat = dyr[i] * gamma[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        double* dxr = dx + static_cast<std::ptrdiff_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            const double dxhat = dyr[i] * gamma[i];
            dxr[i] += rstd[r] * (dxhat - mean_dxhat - xh[i] * mean_dxhat_xhat);
            if (dgamma) dgamma[i] += dyr[i] * xh[i];
            if (dbeta) dbeta[i] += dyr[i];
        }
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void zeros_like(std::vector<double>& v, std::size_t n) { v.assign(n, 0.0); }

}  // namespace

// ----------------------------- config / init -----------------------------

void ModelConfig::validate() const {
    if (vocab_size <= 1) throw ValidationError("vocab_size must be > 1");
    if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || max_context <= 0) {
        throw ValidationError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ValidationError("d_model must be divisible by n_heads");
    }
    if (n_blocks < 2) {
        throw ValidationError("n_blocks must be >= 2 (inter-block scoring needs pairs)");
    }
}

bool ParamMask::any() const {
    if (embeddings || head) return true;
    for (const auto& b : blocks) {
        if (b.att || b.mlp) return true;
    }
    return false;
}

void Parameters::for_each_tensor(
    const std::function<void(const std::string&, std::vector<double>&)>& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        auto& b = blocks[i];
        fn(p + ".att.ln_gamma", b.att.ln_gamma);
        fn(p + ".att.ln_beta", b.att.ln_beta);
        fn(p + ".att.wq", b.att.wq);
        fn(p + ".att.bq", b.att.bq);
        fn(p + ".att.wk", b.att.wk);
        fn(p + ".att.bk", b.att.bk);
        fn(p + ".att.wv", b.att.wv);
        fn(p + ".att.bv", b.att.bv);
        fn(p + ".att.wo", b.att.wo);
        fn(p + ".att.bo", b.att.bo);
        fn(p + ".mlp.ln_gamma", b.mlp.ln_gamma);
        fn(p + ".mlp.ln_beta", b.mlp.ln_beta);
        fn(p + ".mlp.w1", b.mlp.w1);
        fn(p + ".mlp.b1", b.mlp.b1);
        fn(p + ".mlp.w2", b.mlp.w2);
        fn(p + ".mlp.b2", b.mlp.b2);
    }
    fn("lnf_gamma", lnf_gamma);
    fn("lnf_beta", lnf_beta);
    fn("head", head);
}

void Parameters::for_each_tensor(
    const std::function<void(const std::string&, const std::vector<double>&)>& fn) const {
    const_cast<Parameters*>(this)->for_each_tensor(
        [&fn](const std::string& name, std::vector<double>& t) {
            fn(name, t);
        });
}

std::vector<int> Model::encode_prompt(const std::string& text) const {
    auto ids = vocab.encode(text);
    if (ids.empty()) throw ValidationError("prompt tokenizes to zero tokens");
    if (static_cast<int>(ids.size()) > config.max_context) {
        throw ValidationError("prompt of " + std::to_string(ids.size()) +
                              " tokens exceeds max context " +
                              std::to_string(config.max_context));
    }
    return ids;
}

Model init_model(const ModelConfig& config, Vocab vocab) {
    config.validate();
    if (config.vocab_size != vocab.size()) {
        throw ValidationError("config.vocab_size " + std::to_string(config.vocab_size) +
                              " != vocabulary size " + std::to_string(vocab.size()));
    }

    Model model;
    model.config = config;
    model.vocab = std::move(vocab);

    const int d = config.d_model;
    const int f = config.d_ff;
    const int v = config.vocab_size;

    auto& p = model.params;
    p.blocks.resize(static_cast<std::size_t>(config.n_blocks));
    p.tok_emb.resize(static_cast<std::size_t>(v) * d);
    p.pos_emb.resize(static_cast<std::size_t>(config.max_context) * d);
    for (auto& b : p.blocks) {
        b.att.ln_gamma.assign(d, 1.0);
        b.att.ln_beta.assign(d, 0.0);
        b.att.wq.resize(static_cast<std::size_t>(d) * d);
        b.att.wk.resize(static_cast<std::size_t>(d) * d);
        b.att.wv.resize(static_cast<std::size_t>(d) * d);
        b.att.wo.resize(static_cast<std::size_t>(d) * d);
        b.att.bq.assign(d, 0.0);
        b.att.bk.assign(d, 0.0);
        b.att.bv.assign(d, 0.0);
        b.att.bo.assign(d, 0.0);
        b.mlp.ln_gamma.assign(d, 1.0);
        b.mlp.ln_beta.assign(d, 0.0);
        b.mlp.w1.resize(static_cast<std::size_t>(f) * d);
        b.mlp.b1.assign(f, 0.0);
        b.mlp.w2.resize(static_cast<std::size_t>(d) * f);
        b.mlp.b2.assign(d, 0.0);
    }
    p.lnf_gamma.assign(d, 1.0);
    p.lnf_beta.assign(d, 0.0);
    p.head.resize(static_cast<std::size_t>(v) * d);

    // fill weight matrices in declaration order; scale 0.02 like small GPTs
    Rng rng(config.seed);
    const double std_init = 0.02;
    p.for_each_tensor([&](const std::string& name, std::vector<double>& t) {
        const bool is_weight = name == "tok_emb" || name == "pos_emb" || name == "head" ||
                               name.ends_with(".wq") || name.ends_with(".wk") ||
                               name.ends_with(".wv") || name.ends_with(".wo") ||
                               name.ends_with(".w1") || name.ends_with(".w2");
        if (is_weight) {
            for (auto& x : t) x = rng.gauss() * std_init;
        }
    });

    model.mask = ParamMask::none(config.n_blocks);
    return model;
}

// ----------------------------- forward -----------------------------

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

namespace {

// One transformer block; writes x_out and, when cache != nullptr, all
// intermediates needed by the backward pass.
void block_forward(const Model& model, int block_idx, const std::vector<double>& x_in, int t_len,
                   std::vector<double>& x_out, BlockCache* cache) {
    const auto& cfg = model.config;
    const int d = cfg.d_model;
    const int hd = cfg.head_dim();
    const int nh = cfg.n_heads;
    const int f = cfg.d_ff;
    const auto& blk = model.params.blocks[static_cast<std::size_t>(block_idx)];
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> a(static_cast<std::size_t>(t_len) * d);
    std::vector<double> xhat1(static_cast<std::size_t>(t_len) * d);
    std::vector<double> rstd1(static_cast<std::size_t>(t_len));
    layernorm_forward(x_in.data(), blk.att.ln_gamma.data(), blk.att.ln_beta.data(), a.data(),
                      xhat1.data(), rstd1.data(), t_len, d);

    std::vector<double> q(static_cast<std::size_t>(t_len) * d);
    std::vector<double> k(static_cast<std::size_t>(t_len) * d);
    std::vector<double> v(static_cast<std::size_t>(t_len) * d);
    for (int t = 0; t < t_len; ++t) {
        const double* at = a.data() + static_cast<std::ptrdiff_t>(t) * d;
        linear_forward(blk.att.wq.data(), blk.att.bq.data(), at, q.data() + t * d, d, d);
        linear_forward(blk.att.wk.data(), blk.att.bk.data(), at, k.data() + t * d, d, d);
        linear_forward(blk.att.wv.data(), blk.att.bv.data(), at, v.data() + t * d, d, d);
    }

    std::vector<double> probs(static_cast<std::size_t>(nh) * t_len * t_len, 0.0);
    std::vector<double> ctx(static_cast<std::size_t>(t_len) * d, 0.0);
    std::vector<double> scores(static_cast<std::size_t>(t_len));
    for (int h = 0; h < nh; ++h) {
        const int off = h * hd;
        for (int t = 0; t < t_len; ++t) {
            const double* qt = q.data() + t * d + off;
            double mx = -1e300;
            for (int s = 0; s <= t; ++s) {
                const double* ks = k.data() + s * d + off;
                double dot = 0.0;
                for (int i = 0; i < hd; ++i) dot += qt[i] * ks[i];
                scores[static_cast<std::size_t>(s)] = dot * inv_sqrt_hd;
                mx = std::max(mx, scores[static_cast<std::size_t>(s)]);
            }
            double sum = 0.0;
            double* pt = probs.data() + (static_cast<std::ptrdiff_t>(h) * t_len + t) * t_len;
            for (int s = 0; s <= t; ++s) {
                pt[s] = std::exp(scores[static_cast<std::size_t>(s)] - mx);
                sum += pt[s];
            }
            for (int s = 0; s <= t; ++s) pt[s] /= sum;
            double* ct = ctx.data() + t * d + off;
            for (int s = 0; s <= t; ++s) {
                const double* vs = v.data() + s * d + off;
                for (int i = 0; i < hd; ++i) ct[i] += pt[s] * vs[i];
            }
        }
    }

    std::vector<double> x_mid(static_cast<std::size_t>(t_len) * d);
    std::vector<double> proj(static_cast<std::size_t>(d));
    for (int t = 0; t < t_len; ++t) {
        linear_forward(blk.att.wo.data(), blk.att.bo.data(), ctx.data() + t * d, proj.data(), d,
                       d);
        for (int i = 0; i < d; ++i) x_mid[static_cast<std::size_t>(t) * d + i] =
            x_in[static_cast<std::size_t>(t) * d + i] + proj[i];
    }

    std::vector<double> m(static_cast<std::size_t>(t_len) * d);
    std::vector<double> xhat2(static_cast<std::size_t>(t_len) * d);
    std::vector<double> rstd2(static_cast<std::size_t>(t_len));
    layernorm_forward(x_mid.data(), blk.mlp.ln_gamma.data(), blk.mlp.ln_beta.data(), m.data(),
                      xhat2.data(), rstd2.data(), t_len, d);

    std::vector<double> ff_pre(static_cast<std::size_t>(t_len) * f);
    std::vector<double> ff_act(static_cast<std::size_t>(t_len) * f);
    std::vector<double> ff_out(static_cast<std::size_t>(d));
    x_out.assign(static_cast<std::size_t>(t_len) * d, 0.0);
    for (int t = 0; t < t_len; ++t) {
        double* pre = ff_pre.data() + static_cast<std::ptrdiff_t>(t) * f;
        double* act = ff_act.data() + static_cast<std::ptrdiff_t>(t) * f;
        linear_forward(blk.mlp.w1.data(), blk.mlp.b1.data(), m.data() + t * d, pre, f, d);
        for (int i = 0; i < f; ++i) act[i] = gelu(pre[i]);
        linear_forward(blk.mlp.w2.data(), blk.mlp.b2.data(), act, ff_out.data(), d, f);
        for (int i = 0; i < d; ++i) {
            x_out[static_cast<std::size_t>(t) * d + i] =
                x_mid[static_cast<std::size_t>(t) * d + i] + ff_out[i];
        }
    }

    if (cache) {
        cache->x_in = x_in;
        cache->ln1_xhat = std::move(xhat1);
        cache->ln1_rstd = std::move(rstd1);
        cache->a = std::move(a);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->att_probs = std::move(probs);
        cache->ctx = std::move(ctx);
        cache->x_mid = std::move(x_mid);
        cache->ln2_xhat = std::move(xhat2);
        cache->ln2_rstd = std::move(rstd2);
        cache->m = std::move(m);
        cache->ff_pre = std::move(ff_pre);
        cache->ff_act = std::move(ff_act);
    }
}

std::vector<double> embed(const Model& model, std::span<const int> tokens) {
    const int d = model.config.d_model;
    std::vector<double> x(tokens.size() * static_cast<std::size_t>(d));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const int tok = tokens[t];
        if (tok < 0 || tok >= model.config.vocab_size) {
            throw ValidationError("token id out of range: " + std::to_string(tok));
        }
        const double* te = model.params.tok_emb.data() + static_cast<std::ptrdiff_t>(tok) * d;
        const double* pe = model.params.pos_emb.data() + static_cast<std::ptrdiff_t>(t) * d;
        for (int i = 0; i < d; ++i) x[t * static_cast<std::size_t>(d) + i] = te[i] + pe[i];
    }
    return x;
}

void check_token_count(const Model& model, std::span<const int> tokens) {
    if (tokens.empty()) throw ValidationError("empty token sequence");
    if (static_cast<int>(tokens.size()) > model.config.max_context) {
        throw ValidationError("sequence of " + std::to_string(tokens.size()) +
                              " tokens exceeds max context " +
                              std::to_string(model.config.max_context));
    }
}

// final norm + head over all positions
void finalize_logits(const Model& model, const std::vector<double>& x, int t_len,
                     std::vector<double>& logits, std::vector<double>* f_out,
                     std::vector<double>* xhat_out, std::vector<double>* rstd_out) {
    const int d = model.config.d_model;
    const int v = model.config.vocab_size;
    std::vector<double> f(static_cast<std::size_t>(t_len) * d);
    std::vector<double> xhat(static_cast<std::size_t>(t_len) * d);
    std::vector<double> rstd(static_cast<std::size_t>(t_len));
    layernorm_forward(x.data(), model.params.lnf_gamma.data(), model.params.lnf_beta.data(),
                      f.data(), xhat.data(), rstd.data(), t_len, d);
    logits.assign(static_cast<std::size_t>(t_len) * v, 0.0);
    for (int t = 0; t < t_len; ++t) {
        linear_forward(model.params.head.data(), nullptr, f.data() + t * d,
                       logits.data() + static_cast<std::ptrdiff_t>(t) * v, v, d);
    }
    if (f_out) *f_out = std::move(f);
    if (xhat_out) *xhat_out = std::move(xhat);
    if (rstd_out) *rstd_out = std::move(rstd);
}

}  // namespace

ForwardResult forward(const Model& model, std::span<const int> tokens) {
    check_token_count(model, tokens);
    const int t_len = static_cast<int>(tokens.size());
    const int v = model.config.vocab_size;

    ForwardResult res;
    res.trace.seq_len = t_len;
    res.trace.d_model = model.config.d_model;
    res.trace.states.reserve(static_cast<std::size_t>(model.config.n_blocks) + 1);

    std::vector<double> x = embed(model, tokens);
    res.trace.states.push_back(x);
    for (int b = 0; b < model.config.n_blocks; ++b) {
        std::vector<double> x_out;
        block_forward(model, b, x, t_len, x_out, nullptr);
        x = std::move(x_out);
        res.trace.states.push_back(x);
    }
    std::vector<double> logits;
    finalize_logits(model, x, t_len, logits, nullptr, nullptr, nullptr);
    res.logits_last.assign(logits.begin() + static_cast<std::ptrdiff_t>(t_len - 1) * v,
                           logits.begin() + static_cast<std::ptrdiff_t>(t_len) * v);
    return res;
}

std::vector<double> forward_all_logits(const Model& model, std::span<const int> tokens) {
    check_token_count(model, tokens);
    const int t_len = static_cast<int>(tokens.size());
    std::vector<double> x = embed(model, tokens);
    for (int b = 0; b < model.config.n_blocks; ++b) {
        std::vector<double> x_out;
        block_forward(model, b, x, t_len, x_out, nullptr);
        x = std::move(x_out);
    }
    std::vector<double> logits;
    finalize_logits(model, x, t_len, logits, nullptr, nullptr, nullptr);
    return logits;
}

std::vector<double> forward_from_block(const Model& model, const std::vector<double>& hidden,
                                       int start_block, int seq_len) {
    if (start_block < 0 || start_block > model.config.n_blocks) {
        throw ValidationError("start_block out of range");
    }
    if (hidden.size() != static_cast<std::size_t>(seq_len) * model.config.d_model) {
        throw ValidationError("hidden state size does not match seq_len * d_model");
    }
    std::vector<double> x = hidden;
    for (int b = start_block; b < model.config.n_blocks; ++b) {
        std::vector<double> x_out;
        block_forward(model, b, x, seq_len, x_out, nullptr);
        x = std::move(x_out);
    }
    std::vector<double> logits;
    finalize_logits(model, x, seq_len, logits, nullptr, nullptr, nullptr);
    const int v = model.config.vocab_size;
    return std::vector<double>(logits.begin() + static_cast<std::ptrdiff_t>(seq_len - 1) * v,
                               logits.begin() + static_cast<std::ptrdiff_t>(seq_len) * v);
}

ForwardCache forward_cached(const Model& model, std::span<const int> tokens) {
    check_token_count(model, tokens);
    const int t_len = static_cast<int>(tokens.size());

    ForwardCache cache;
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.trace.seq_len = t_len;
    cache.trace.d_model = model.config.d_model;
    cache.blocks.resize(static_cast<std::size_t>(model.config.n_blocks));

    std::vector<double> x = embed(model, tokens);
    cache.trace.states.push_back(x);
    for (int b = 0; b < model.config.n_blocks; ++b) {
        std::vector<double> x_out;
        block_forward(model, b, x, t_len, x_out, &cache.blocks[static_cast<std::size_t>(b)]);
        x = std::move(x_out);
        cache.trace.states.push_back(x);
    }
    cache.x_final = x;
    finalize_logits(model, x, t_len, cache.logits, &cache.f, &cache.lnf_xhat, &cache.lnf_rstd);
    return cache;
}

// ----------------------------- backward -----------------------------

namespace {

Parameters zero_parameters_like(const Model& model, const ParamMask& mask) {
    const auto& cfg = model.config;
    const int d = cfg.d_model;
    const int f = cfg.d_ff;
    Parameters g;
    g.blocks.resize(static_cast<std::size_t>(cfg.n_blocks));
    if (mask.embeddings) {
        zeros_like(g.tok_emb, static_cast<std::size_t>(cfg.vocab_size) * d);
        zeros_like(g.pos_emb, static_cast<std::size_t>(cfg.max_context) * d);
    }
    if (mask.head) {
        zeros_like(g.lnf_gamma, static_cast<std::size_t>(d));
        zeros_like(g.lnf_beta, static_cast<std::size_t>(d));
        zeros_like(g.head, static_cast<std::size_t>(cfg.vocab_size) * d);
    }
    for (int b = 0; b < cfg.n_blocks; ++b) {
        auto& gb = g.blocks[static_cast<std::size_t>(b)];
        if (mask.blocks[static_cast<std::size_t>(b)].att) {
            zeros_like(gb.att.ln_gamma, static_cast<std::size_t>(d));
            zeros_like(gb.att.ln_beta, static_cast<std::size_t>(d));
            zeros_like(gb.att.wq, static_cast<std::size_t>(d) * d);
            zeros_like(gb.att.wk, static_cast<std::size_t>(d) * d);
            zeros_like(gb.att.wv, static_cast<std::size_t>(d) * d);
            zeros_like(gb.att.wo, static_cast<std::size_t>(d) * d);
            zeros_like(gb.att.bq, static_cast<std::size_t>(d));
            zeros_like(gb.att.bk, static_cast<std::size_t>(d));
            zeros_like(gb.att.bv, static_cast<std::size_t>(d));
            zeros_like(gb.att.bo, static_cast<std::size_t>(d));
        }
        if (mask.blocks[static_cast<std::size_t>(b)].mlp) {
            zeros_like(gb.mlp.ln_gamma, static_cast<std::size_t>(d));
            zeros_like(gb.mlp.ln_beta, static_cast<std::size_t>(d));
            zeros_like(gb.mlp.w1, static_cast<std::size_t>(f) * d);
            zeros_like(gb.mlp.b1, static_cast<std::size_t>(f));
            zeros_like(gb.mlp.w2, static_cast<std::size_t>(d) * f);
            zeros_like(gb.mlp.b2, static_cast<std::size_t>(d));
        }
    }
    return g;
}

}  // namespace

void Gradients::scale(double factor) {
    values.for_each_tensor([factor](const std::string&, std::vector<double>& t) {
        for (auto& x : t) x *= factor;
    });
}

void Gradients::accumulate(const Gradients& other) {
    if (values.blocks.size() != other.values.blocks.size()) {
        throw ValidationError("gradient structure mismatch in accumulate");
    }
    std::vector<std::vector<double>*> mine;
    values.for_each_tensor(
        [&](const std::string&, std::vector<double>& t) { mine.push_back(&t); });
    std::vector<const std::vector<double>*> theirs;
    other.values.for_each_tensor(
        [&](const std::string&, const std::vector<double>& t) { theirs.push_back(&t); });
    for (std::size_t i = 0; i < mine.size(); ++i) {
        const auto& src = *theirs[i];
        if (src.empty()) continue;
        auto& dst = *mine[i];
        if (dst.empty()) dst.assign(src.size(), 0.0);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
}

Gradients backward(const Model& model, const ForwardCache& cache,
                   const std::vector<double>& dlogits, const ParamMask& mask) {
    const auto& cfg = model.config;
    const int d = cfg.d_model;
    const int v = cfg.vocab_size;
    const int f = cfg.d_ff;
    const int nh = cfg.n_heads;
    const int hd = cfg.head_dim();
    const int t_len = cache.trace.seq_len;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    if (dlogits.size() != static_cast<std::size_t>(t_len) * v) {
        throw ValidationError("dlogits size mismatch");
    }
    if (static_cast<int>(mask.blocks.size()) != cfg.n_blocks) {
        throw ValidationError("mask block count mismatch");
    }

    Gradients grads;
    grads.present = mask;
    grads.values = zero_parameters_like(model, mask);

    // head + final norm
    std::vector<double> df(static_cast<std::size_t>(t_len) * d, 0.0);
    for (int t = 0; t < t_len; ++t) {
        linear_backward(model.params.head.data(), cache.f.data() + t * d,
                        dlogits.data() + static_cast<std::ptrdiff_t>(t) * v, df.data() + t * d,
                        mask.head ? grads.values.head.data() : nullptr, nullptr, v, d);
    }
    std::vector<double> dx(static_cast<std::size_t>(t_len) * d, 0.0);
    layernorm_backward(df.data(), cache.lnf_xhat.data(), cache.lnf_rstd.data(),
                       model.params.lnf_gamma.data(), dx.data(),
                       mask.head ? grads.values.lnf_gamma.data() : nullptr,
                       mask.head ? grads.values.lnf_beta.data() : nullptr, t_len, d);

    // blocks in reverse
    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const auto& blk = model.params.blocks[static_cast<std::size_t>(b)];
        const auto& bc = cache.blocks[static_cast<std::size_t>(b)];
        const bool want_att = mask.blocks[static_cast<std::size_t>(b)].att;
        const bool want_mlp = mask.blocks[static_cast<std::size_t>(b)].mlp;
        auto& gb = grads.values.blocks[static_cast<std::size_t>(b)];

        // ---- MLP submodule ----
        // x_out = x_mid + W2 gelu(W1 m + b1) + b2
        std::vector<double> dm(static_cast<std::size_t>(t_len) * d, 0.0);
        std::vector<double> dact(static_cast<std::size_t>(f));
        std::vector<double> dpre(static_cast<std::size_t>(f));
        for (int t = 0; t < t_len; ++t) {
            const double* dxt = dx.data() + static_cast<std::ptrdiff_t>(t) * d;
            std::fill(dact.begin(), dact.end(), 0.0);
            linear_backward(blk.mlp.w2.data(), bc.ff_act.data() + static_cast<std::ptrdiff_t>(t) * f,
                            dxt, dact.data(), want_mlp ? gb.mlp.w2.data() : nullptr,
                            want_mlp ? gb.mlp.b2.data() : nullptr, d, f);
            const double* pre = bc.ff_pre.data() + static_cast<std::ptrdiff_t>(t) * f;
            for (int i = 0; i < f; ++i) dpre[static_cast<std::size_t>(i)] =
                dact[static_cast<std::size_t>(i)] * gelu_grad(pre[i]);
            linear_backward(blk.mlp.w1.data(), bc.m.data() + static_cast<std::ptrdiff_t>(t) * d,
                            dpre.data(), dm.data() + t * d,
                            want_mlp ? gb.mlp.w1.data() : nullptr,
                            want_mlp ? gb.mlp.b1.data() : nullptr, f, d);
        }
        // dx currently holds d(x_out); residual passes it straight to x_mid
        std::vector<double> dx_mid = dx;
        layernorm_backward(dm.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data(),
                           blk.mlp.ln_gamma.data(), dx_mid.data(),
                           want_mlp ? gb.mlp.ln_gamma.data() : nullptr,
                           want_mlp ? gb.mlp.ln_beta.data() : nullptr, t_len, d);

        // ---- ATT submodule ----
        // x_mid = x_in + Wo ctx + bo
        std::vector<double> dctx(static_cast<std::size_t>(t_len) * d, 0.0);
        for (int t = 0; t < t_len; ++t) {
            linear_backward(blk.att.wo.data(), bc.ctx.data() + static_cast<std::ptrdiff_t>(t) * d,
                            dx_mid.data() + static_cast<std::ptrdiff_t>(t) * d, dctx.data() + t * d,
                            want_att ? gb.att.wo.data() : nullptr,
                            want_att ? gb.att.bo.data() : nullptr, d, d);
        }

        std::vector<double> dq(static_cast<std::size_t>(t_len) * d, 0.0);
        std::vector<double> dk(static_cast<std::size_t>(t_len) * d, 0.0);
        std::vector<double> dv(static_cast<std::size_t>(t_len) * d, 0.0);
        std::vector<double> dp(static_cast<std::size_t>(t_len));
        for (int h = 0; h < nh; ++h) {
            const int off = h * hd;
            for (int t = 0; t < t_len; ++t) {
                const double* pt =
                    bc.att_probs.data() + (static_cast<std::ptrdiff_t>(h) * t_len + t) * t_len;
                const double* dct = dctx.data() + t * d + off;
                double dot_pdp = 0.0;
                for (int s = 0; s <= t; ++s) {
                    const double* vs = bc.v.data() + s * d + off;
                    double g = 0.0;
                    for (int i = 0; i < hd; ++i) g += dct[i] * vs[i];
                    dp[static_cast<std::size_t>(s)] = g;
                    dot_pdp += pt[s] * g;
                    double* dvs = dv.data() + s * d + off;
                    for (int i = 0; i < hd; ++i) dvs[i] += pt[s] * dct[i];
                }
                const double* qt = bc.q.data() + t * d + off;
                double* dqt = dq.data() + t * d + off;
                for (int s = 0; s <= t; ++s) {
                    const double dscore =
                        pt[s] * (dp[static_cast<std::size_t>(s)] - dot_pdp) * inv_sqrt_hd;
                    const double* ks = bc.k.data() + s * d + off;
                    double* dks = dk.data() + s * d + off;
                    for (int i = 0; i < hd; ++i) {
                        dqt[i] += dscore * ks[i];
                        dks[i] += dscore * qt[i];
                    }
                }
            }
        }

        std::vector<double> da(static_cast<std::size_t>(t_len) * d, 0.0);
        for (int t = 0; t < t_len; ++t) {
            const double* at = bc.a.data() + static_cast<std::ptrdiff_t>(t) * d;
            linear_backward(blk.att.wq.data(), at, dq.data() + t * d, da.data() + t * d,
                            want_att ? gb.att.wq.data() : nullptr,
                            want_att ? gb.att.bq.data() : nullptr, d, d);
            linear_backward(blk.att.wk.data(), at, dk.data() + t * d, da.data() + t * d,
                            want_att ? gb.att.wk.data() : nullptr,
                            want_att ? gb.att.bk.data() : nullptr, d, d);
            linear_backward(blk.att.wv.data(), at, dv.data() + t * d, da.data() + t * d,
                            want_att ? gb.att.wv.data() : nullptr,
                            want_att ? gb.att.bv.data() : nullptr, d, d);
        }

        // dx_in = dx_mid (residual) + ln1 backward contribution
        std::vector<double> dx_in = dx_mid;
        layernorm_backward(da.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data(),
                           blk.att.ln_gamma.data(), dx_in.data(),
                           want_att ? gb.att.ln_gamma.data() : nullptr,
                           want_att ? gb.att.ln_beta.data() : nullptr, t_len, d);
        dx = std::move(dx_in);
    }

    if (mask.embeddings) {
        for (int t = 0; t < t_len; ++t) {
            const int tok = cache.tokens[static_cast<std::size_t>(t)];
            double* dte = grads.values.tok_emb.data() + static_cast<std::ptrdiff_t>(tok) * d;
            double* dpe = grads.values.pos_emb.data() + static_cast<std::ptrdiff_t>(t) * d;
            const double* dxt = dx.data() + static_cast<std::ptrdiff_t>(t) * d;
            for (int i = 0; i < d; ++i) {
                dte[i] += dxt[i];
                dpe[i] += dxt[i];
            }
        }
    }
    return grads;
}

// ----------------------------- optimizer -----------------------------

AdamOptimizer::AdamOptimizer(const Model& model, AdamConfig cfg) : cfg_(cfg) {
    m_ = zero_parameters_like(model, ParamMask::all(model.config.n_blocks));
    v_ = zero_parameters_like(model, ParamMask::all(model.config.n_blocks));
}

void AdamOptimizer::step(Model& model, const Gradients& grads, const ParamMask& mask) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    // walk the three structures in lockstep tensor order
    std::vector<std::vector<double>*> params, moms, vels;
    std::vector<const std::vector<double>*> gs;
    std::vector<std::string> names;
    model.params.for_each_tensor([&](const std::string& name, std::vector<double>& t) {
        names.push_back(name);
        params.push_back(&t);
    });
    m_.for_each_tensor([&](const std::string&, std::vector<double>& t) { moms.push_back(&t); });
    v_.for_each_tensor([&](const std::string&, std::vector<double>& t) { vels.push_back(&t); });
    grads.values.for_each_tensor(
        [&](const std::string&, const std::vector<double>& t) { gs.push_back(&t); });

    auto enabled = [&](const std::string& name) {
        if (name == "tok_emb" || name == "pos_emb") return mask.embeddings;
        if (name == "head" || name == "lnf_gamma" || name == "lnf_beta") return mask.head;
        if (name.rfind("block", 0) == 0) {
            const auto dot = name.find('.');
            const int idx = std::stoi(name.substr(5, dot - 5));
            const bool is_att = name.compare(dot + 1, 3, "att") == 0;
            const auto& bm = mask.blocks.at(static_cast<std::size_t>(idx));
            return is_att ? bm.att : bm.mlp;
        }
        return false;
    };

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!enabled(names[i])) continue;
        const auto& g = *gs[i];
        if (g.empty()) {
            throw ValidationError("gradient absent for enabled group tensor " + names[i]);
        }
        auto& p = *params[i];
        auto& m = *moms[i];
        auto& v = *vels[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ----------------------------- training -----------------------------

namespace {

// cross-entropy over positions 0..T-2 predicting 1..T-1; returns summed nll
// and the number of predicted tokens; fills dlogits (unnormalized, caller
// scales by 1/total_tokens)
double ce_loss_and_dlogits(const Model& model, const ForwardCache& cache,
                           std::vector<double>& dlogits, long& n_tokens) {
    const int v = model.config.vocab_size;
    const int t_len = cache.trace.seq_len;
    dlogits.assign(static_cast<std::size_t>(t_len) * v, 0.0);
    double nll = 0.0;
    for (int t = 0; t + 1 < t_len; ++t) {
        const int target = cache.tokens[static_cast<std::size_t>(t) + 1];
        const auto probs = softmax(std::span<const double>(
            cache.logits.data() + static_cast<std::ptrdiff_t>(t) * v, static_cast<std::size_t>(v)));
        nll -= std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));
        double* dl = dlogits.data() + static_cast<std::ptrdiff_t>(t) * v;
        for (int j = 0; j < v; ++j) dl[j] = probs[static_cast<std::size_t>(j)];
        dl[target] -= 1.0;
        ++n_tokens;
    }
    return nll;
}

}  // namespace

TrainLog train_lm(Model& model, const std::vector<std::string>& corpus_lines,
                  const TrainHyper& hyper) {
    if (corpus_lines.empty()) throw ValidationError("empty training corpus");

    std::vector<std::vector<int>> sequences;
    sequences.reserve(corpus_lines.size());
    for (const auto& line : corpus_lines) {
        auto ids = model.vocab.encode(line);
        if (static_cast<int>(ids.size()) > model.config.max_context) {
            throw ValidationError("corpus line exceeds max context: " + line);
        }
        if (ids.size() >= 2) sequences.push_back(std::move(ids));
    }
    if (sequences.empty()) throw ValidationError("no trainable sequences in corpus");

    TrainLog log;
    if (hyper.epochs <= 0) return log;

    const ParamMask mask = ParamMask::all(model.config.n_blocks);
    AdamOptimizer opt(model, hyper.adam());
    Rng rng(hyper.seed);

    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_tokens = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            Gradients batch_grads;
            batch_grads.present = mask;
            batch_grads.values = Parameters{};
            bool first = true;
            double batch_nll = 0.0;
            long batch_tokens = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& seq = sequences[order[i]];
                const auto cache = forward_cached(model, seq);
                std::vector<double> dlogits;
                batch_nll += ce_loss_and_dlogits(model, cache, dlogits, batch_tokens);
                auto g = backward(model, cache, dlogits, mask);
                if (first) {
                    batch_grads = std::move(g);
                    first = false;
                } else {
                    batch_grads.accumulate(g);
                }
            }
            const double loss = batch_nll / static_cast<double>(batch_tokens);
            if (!std::isfinite(loss)) {
                throw TrainingError("training diverged: non-finite loss at epoch " +
                                    std::to_string(epoch));
            }
            batch_grads.scale(1.0 / static_cast<double>(batch_tokens));
            opt.step(model, batch_grads, mask);
            log.step_losses.push_back(loss);
            epoch_loss += batch_nll;
            epoch_tokens += batch_tokens;
        }
        log.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_tokens));
    }
    return log;
}

double perplexity(const Model& model, const std::vector<std::string>& corpus_lines) {
    if (corpus_lines.empty()) throw ValidationError("empty corpus for perplexity");
    double nll = 0.0;
    long n_tokens = 0;
    for (const auto& line : corpus_lines) {
        auto ids = model.vocab.encode(line);
        if (ids.size() < 2) continue;
        const auto logits = forward_all_logits(model, ids);
        const int v = model.config.vocab_size;
        for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
            const auto probs = softmax(std::span<const double>(
                logits.data() + static_cast<std::ptrdiff_t>(t) * v, static_cast<std::size_t>(v)));
            nll -= std::log(std::max(probs[static_cast<std::size_t>(ids[t + 1])], 1e-300));
            ++n_tokens;
        }
    }
    if (n_tokens == 0) throw ValidationError("corpus has no predictable tokens");
    return std::exp(nll / static_cast<double>(n_tokens));
}

// ----------------------------- digests / checkpoints -----------------------------

std::map<std::string, std::string> parameter_digests(const Model& model) {
    std::map<std::string, Digest> acc;
    model.params.for_each_tensor([&](const std::string& name, const std::vector<double>& t) {
        std::string group;
        if (name == "tok_emb" || name == "pos_emb") {
            group = name;
        } else if (name == "head" || name == "lnf_gamma" || name == "lnf_beta") {
            group = "head";
        } else {
            const auto dot = name.find('.');
            const auto dot2 = name.find('.', dot + 1);
            group = name.substr(0, dot2);  // block<i>.att / block<i>.mlp
        }
        acc[group].update(t.data(), t.size() * sizeof(double));
    });
    std::map<std::string, std::string> out;
    for (const auto& [k, d] : acc) out[k] = d.hex();
    return out;
}

std::string parameters_digest(const Model& model) {
    Digest d;
    model.params.for_each_tensor([&](const std::string&, const std::vector<double>& t) {
        d.update(t.data(), t.size() * sizeof(double));
    });
    return d.hex();
}

namespace {

constexpr char kCkptMagic[8] = {'B', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& f, std::uint64_t x) {
    f.write(reinterpret_cast<const char*>(&x), sizeof(x));
}

std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t x = 0;
    f.read(reinterpret_cast<char*>(&x), sizeof(x));
    return x;
}

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
    write_u64(f, v.size());
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& f, std::vector<double>& v) {
    const auto n = read_u64(f);
    v.resize(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f.is_open()) throw ValidationError("cannot write checkpoint: " + path.string());
    f.write(kCkptMagic, sizeof(kCkptMagic));
    const auto& c = model.config;
    write_u64(f, static_cast<std::uint64_t>(c.vocab_size));
    write_u64(f, static_cast<std::uint64_t>(c.d_model));
    write_u64(f, static_cast<std::uint64_t>(c.n_heads));
    write_u64(f, static_cast<std::uint64_t>(c.n_blocks));
    write_u64(f, static_cast<std::uint64_t>(c.d_ff));
    write_u64(f, static_cast<std::uint64_t>(c.max_context));
    write_u64(f, c.seed);
    write_u64(f, model.vocab.words().size());
    for (const auto& w : model.vocab.words()) {
        write_u64(f, w.size());
        f.write(w.data(), static_cast<std::streamsize>(w.size()));
    }
    for (const auto& bm : model.mask.blocks) {
        f.put(bm.att ? 1 : 0);
        f.put(bm.mlp ? 1 : 0);
    }
    f.put(model.mask.embeddings ? 1 : 0);
    f.put(model.mask.head ? 1 : 0);
    model.params.for_each_tensor(
        [&](const std::string&, const std::vector<double>& t) { write_doubles(f, t); });
    if (!f.good()) throw ValidationError("checkpoint write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.is_open()) throw ValidationError("cannot open checkpoint: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
        throw ValidationError("bad checkpoint magic: " + path.string());
    }
    ModelConfig c;
    c.vocab_size = static_cast<int>(read_u64(f));
    c.d_model = static_cast<int>(read_u64(f));
    c.n_heads = static_cast<int>(read_u64(f));
    c.n_blocks = static_cast<int>(read_u64(f));
    c.d_ff = static_cast<int>(read_u64(f));
    c.max_context = static_cast<int>(read_u64(f));
    c.seed = read_u64(f);
    const auto n_words = read_u64(f);
    std::vector<std::string> words(n_words);
    for (auto& w : words) {
        const auto len = read_u64(f);
        w.resize(len);
        f.read(w.data(), static_cast<std::streamsize>(len));
    }
    Model model = init_model(c, Vocab(std::move(words)));
    for (auto& bm : model.mask.blocks) {
        bm.att = f.get() != 0;
        bm.mlp = f.get() != 0;
    }
    model.mask.embeddings = f.get() != 0;
    model.mask.head = f.get() != 0;
    model.params.for_each_tensor(
        [&](const std::string&, std::vector<double>& t) { read_doubles(f, t); });
    if (!f.good()) throw ValidationError("checkpoint read failed: " + path.string());
    return model;
}

}  // namespace biaslab
