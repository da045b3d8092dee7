#include "rwf/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace rwf::backbone {

const char* to_string(Placement p) noexcept {
    return p == Placement::First ? "first" : "last";
}

const char* to_string(BackboneMode m) noexcept {
    switch (m) {
        case BackboneMode::FrozenRandom: return "frozen_random";
        case BackboneMode::PretrainThenFreeze: return "pretrain_then_freeze";
        case BackboneMode::JointlyTrainable: return "jointly_trainable";
    }
    return "?";
}

const char* to_string(Pooling p) noexcept {
    return p == Pooling::ClassToken ? "class_token" : "mean";
}

std::size_t ModelConfig::hidden() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(width)));
}

double ModelConfig::effective_beta() const {
    return beta.value_or(1.0 / std::sqrt(static_cast<double>(width)));
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (width == 0) fail("width must be > 0");
    if (heads == 0 || width % heads != 0) fail("heads must divide width");
    if (!(mlp_ratio > 0.0) || hidden() == 0) fail("mlp_ratio must give a positive hidden width");
    if (tokens == 0) fail("tokens must be > 0");
    if (input_dim == 0) fail("input_dim must be > 0");
    if (num_classes == 0) fail("num_classes must be > 0");
    if (routed_layers > depth) fail("routed_layers (k) must be <= depth");
    if (!(effective_beta() > 0.0)) fail("beta must be > 0");
    if (!(norm_eps > 0.0)) fail("norm_eps must be > 0");
}

std::vector<std::size_t> ModelConfig::routed_block_indices() const {
    std::vector<std::size_t> idx;
    const std::size_t start = placement == Placement::First ? 0 : depth - routed_layers;
    for (std::size_t i = 0; i < routed_layers; ++i) idx.push_back(start + i);
    return idx;
}

namespace {

template <typename ModelT, typename Fn>
void visit_params(ModelT& m, Fn&& fn) {
    const bool bb = m.backbone_trainable;
    fn("embed", m.embed, bb);
    fn("class_token", m.class_token, bb);
    fn("pos_embed", m.pos_embed, bb);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        fn(p + "ln1.gain", b.ln1_gain, bb);
        fn(p + "ln1.bias", b.ln1_bias, bb);
        fn(p + "attn.query", b.attn_query, bb);
        fn(p + "attn.key", b.attn_key, bb);
        fn(p + "attn.value", b.attn_value, bb);
        fn(p + "attn.out", b.attn_out, bb);
        fn(p + "ln2.gain", b.ln2_gain, bb);
        fn(p + "ln2.bias", b.ln2_bias, bb);
        fn(p + "mlp.in", b.mlp_in, bb);
        fn(p + "mlp.in_bias", b.mlp_in_bias, bb);
        fn(p + "mlp.out", b.mlp_out, bb);
        fn(p + "mlp.out_bias", b.mlp_out_bias, bb);
        if (b.router) {
            fn(p + "router.queries", b.router->queries, true);
            fn(p + "router.query_proj", b.router->query_proj, true);
            fn(p + "router.key_proj", b.router->key_proj, false);
            fn(p + "router.value_proj", b.router->value_proj, false);
        }
    }
    fn("final_norm.gain", m.final_gain, bb);
    fn("final_norm.bias", m.final_bias, bb);
    fn("head.weight", m.head, true);
    fn("head.bias", m.head_bias, true);
}

Matrix zeros(const Matrix& like) {
    return Matrix(like.rows(), like.cols());
}

}  // namespace

std::vector<ParamRef> parameters(Model& model) {
    std::vector<ParamRef> out;
    visit_params(model, [&](std::string name, Matrix& m, bool t) { out.push_back({std::move(name), &m, t}); });
    return out;
}

std::vector<ConstParamRef> parameters(const Model& model) {
    std::vector<ConstParamRef> out;
    visit_params(model, [&](std::string name, const Matrix& m, bool t) { out.push_back({std::move(name), &m, t}); });
    return out;
}

Model zeros_like(const Model& model) {
    Model g = model;
    for (auto& p : parameters(g)) *p.value = zeros(*p.value);
    return g;
}

BlockParams init_block(std::size_t width, std::size_t heads, std::size_t hidden, RngStream& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    BlockParams b;
    b.heads = heads;
    b.ln1_gain = Matrix(1, width, 1.0);
    b.ln1_bias = Matrix(1, width);
    b.attn_query = rng_normal(rng, width, width, s);
    b.attn_key = rng_normal(rng, width, width, s);
    b.attn_value = rng_normal(rng, width, width, s);
    b.attn_out = rng_normal(rng, width, width, s);
    b.ln2_gain = Matrix(1, width, 1.0);
    b.ln2_bias = Matrix(1, width);
    b.mlp_in = rng_normal(rng, width, hidden, s);
    b.mlp_in_bias = Matrix(1, hidden);
    b.mlp_out = rng_normal(rng, hidden, width, 1.0 / std::sqrt(static_cast<double>(hidden)));
    b.mlp_out_bias = Matrix(1, width);
    return b;
}

Model build_model(const ModelConfig& config, RngStream& rng) {
    config.validate();
    Model m;
    m.config = config;
    const std::size_t d = config.width;
    // Backbone and router draws come from separate forks so that changing k
    // or the placement leaves every backbone weight unchanged.
    RngStream embed_rng = rng.fork(1);
    m.embed = rng_normal(embed_rng, config.input_dim, d, 1.0 / std::sqrt(static_cast<double>(config.input_dim)));
    m.class_token = rng_normal(embed_rng, 1, d, 0.02);
    m.pos_embed = rng_normal(embed_rng, config.tokens + 1, d, 0.02);
    const auto routed = config.routed_block_indices();
    for (std::size_t i = 0; i < config.depth; ++i) {
        RngStream block_rng = rng.fork(100 + i);
        BlockParams b = init_block(d, config.heads, config.hidden(), block_rng);
        b.route_from_normalized = config.route_from_normalized;
        b.normalize_prompts = config.normalize_prompts;
        b.norm_eps = config.norm_eps;
        if (std::find(routed.begin(), routed.end(), i) != routed.end()) {
            RngStream router_rng = rng.fork(1000 + i);
            b.router = routing::init_routing_params(config.prompts, d, router_rng);
            b.router->beta = config.effective_beta();
        }
        m.blocks.push_back(std::move(b));
    }
    m.final_gain = Matrix(1, d, 1.0);
    m.final_bias = Matrix(1, d);
    RngStream head_rng = rng.fork(2);
    m.head = rng_normal(head_rng, d, config.num_classes, 0.02);
    m.head_bias = Matrix(1, config.num_classes);
    m.backbone_trainable = config.backbone_mode == BackboneMode::JointlyTrainable;
    return m;
}

ParamCount count_params(const Model& model) {
    ParamCount c;
    for (const auto& p : parameters(model)) {
        c.total += p.value->size();
        if (p.trainable) c.trainable += p.value->size();
    }
    c.trainable_fraction = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
    return c;
}

// --- attention -------------------------------------------------------------

Matrix mhsa(const Matrix& x, const BlockParams& block, AttentionCache* cache) {
    const std::size_t d = block.width();
    if (x.cols() != d) throw std::invalid_argument("mhsa: input width mismatch");
    if (x.rows() == 0) throw std::invalid_argument("mhsa: empty sequence");
    const std::size_t dh = d / block.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix q = matmul(x, block.attn_query);
    Matrix k = matmul(x, block.attn_key);
    Matrix v = matmul(x, block.attn_value);
    Matrix concat(x.rows(), d);
    std::vector<Matrix> probs;
    probs.reserve(block.heads);
    for (std::size_t h = 0; h < block.heads; ++h) {
        const Matrix qh = slice_cols(q, h * dh, dh);
        const Matrix kh = slice_cols(k, h * dh, dh);
        const Matrix vh = slice_cols(v, h * dh, dh);
        Matrix p = row_softmax(matmul_nt(qh, kh), scale);
        set_cols(concat, h * dh, matmul(p, vh));
        probs.push_back(std::move(p));
    }
    Matrix out = matmul(concat, block.attn_out);
    if (cache) {
        cache->input = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->concat = std::move(concat);
    }
    return out;
}

Matrix mhsa_backward(const AttentionCache& cache, const BlockParams& block, const Matrix& grad_out,
                     BlockParams& grads, bool weight_grads) {
    const std::size_t d = block.width();
    const std::size_t dh = d / block.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (weight_grads) add_inplace(grads.attn_out, matmul_tn(cache.concat, grad_out));
    const Matrix grad_concat = matmul_nt(grad_out, block.attn_out);
    const std::size_t n = cache.input.rows();
    Matrix dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < block.heads; ++h) {
        const Matrix qh = slice_cols(cache.q, h * dh, dh);
        const Matrix kh = slice_cols(cache.k, h * dh, dh);
        const Matrix vh = slice_cols(cache.v, h * dh, dh);
        const Matrix& p = cache.probs[h];
        const Matrix d_oh = slice_cols(grad_concat, h * dh, dh);
        const Matrix d_p = matmul_nt(d_oh, vh);
        set_cols(dv, h * dh, matmul_tn(p, d_oh));
        const Matrix d_s = row_softmax_backward(p, d_p, scale);
        set_cols(dq, h * dh, matmul(d_s, kh));
        set_cols(dk, h * dh, matmul_tn(d_s, qh));
    }
    if (weight_grads) {
        add_inplace(grads.attn_query, matmul_tn(cache.input, dq));
        add_inplace(grads.attn_key, matmul_tn(cache.input, dk));
        add_inplace(grads.attn_value, matmul_tn(cache.input, dv));
    }
    Matrix dx = matmul_nt(dq, block.attn_query);
    add_inplace(dx, matmul_nt(dk, block.attn_key));
    add_inplace(dx, matmul_nt(dv, block.attn_value));
    return dx;
}

// --- blocks ----------------------------------------------------------------

namespace {

std::span<const double> vec(const Matrix& row) {
    return row.data();
}

std::span<double> vec(Matrix& row) {
    return row.data();
}

Matrix block_forward_impl(const Matrix& z, const BlockParams& block, BlockCache* cache) {
    const std::size_t d = block.width();
    if (z.cols() != d) throw std::invalid_argument("block_forward: token width mismatch");
    const std::size_t n = z.rows();

    Matrix route_input;
    LayerNormCache<double> route_norm;
    routing::Projections proj;
    routing::RoutingOutput rout;
    Matrix prompts(0, d);
    if (block.router) {
        route_input = block.route_from_normalized
                          ? layer_norm(z, vec(block.ln1_gain), vec(block.ln1_bias), block.norm_eps, &route_norm)
                          : z;
        rout = routing::route(route_input, *block.router, &proj);
        prompts = rout.prompts;
    }
    const std::size_t m = prompts.rows();

    // R = [P; Z]; residual over all rows of R, then keep the backbone rows.
    Matrix seq = vstack(prompts, z);
    LayerNormCache<double> ln1;
    Matrix attn_in;
    if (block.normalize_prompts || m == 0) {
        attn_in = layer_norm(seq, vec(block.ln1_gain), vec(block.ln1_bias), block.norm_eps, &ln1);
    } else {
        attn_in = vstack(prompts, layer_norm(z, vec(block.ln1_gain), vec(block.ln1_bias), block.norm_eps, &ln1));
    }
    AttentionCache attn;
    Matrix attended = mhsa(attn_in, block, cache ? &attn : nullptr);
    add_inplace(attended, seq);
    Matrix mid = slice_rows(attended, m, n);  // prompt rows discarded here

    LayerNormCache<double> ln2;
    Matrix mlp_input = layer_norm(mid, vec(block.ln2_gain), vec(block.ln2_bias), block.norm_eps, &ln2);
    Matrix hidden_pre = matmul(mlp_input, block.mlp_in);
    add_row_inplace(hidden_pre, block.mlp_in_bias);
    Matrix hidden_act = hidden_pre;
    for (double& v : hidden_act.data()) v = gelu(v);
    Matrix out = matmul(hidden_act, block.mlp_out);
    add_row_inplace(out, block.mlp_out_bias);
    add_inplace(out, mid);
    require_finite(out, "block_forward");

    if (cache) {
        cache->input = z;
        cache->prompt_rows = m;
        cache->route_proj = std::move(proj);
        cache->route_out = std::move(rout);
        cache->route_input = std::move(route_input);
        cache->route_norm = std::move(route_norm);
        cache->ln1 = std::move(ln1);
        cache->attn = std::move(attn);
        cache->mid = std::move(mid);
        cache->ln2 = std::move(ln2);
        cache->mlp_input = std::move(mlp_input);
        cache->hidden_pre = std::move(hidden_pre);
        cache->hidden_act = std::move(hidden_act);
    }
    return out;
}

}  // namespace

Matrix rwf_block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache) {
    if (!block.router) throw std::invalid_argument("rwf_block_forward: block has no router");
    return block_forward_impl(z, block, cache);
}

Matrix standard_block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache) {
    if (block.router) throw std::invalid_argument("standard_block_forward: block has a router");
    return block_forward_impl(z, block, cache);
}

Matrix block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache) {
    return block_forward_impl(z, block, cache);
}

Matrix block_backward(const BlockCache& cache, const BlockParams& block, const Matrix& grad_out, BlockParams& grads,
                      GradScope scope) {
    const std::size_t n = cache.input.rows();
    const std::size_t m = cache.prompt_rows;
    const std::size_t d = block.width();
    const bool w = scope.backbone;
    auto gvec = [w](Matrix& g) { return w ? vec(g) : std::span<double>{}; };

    // MLP branch.
    Matrix d_mid = grad_out;
    if (w) {
        add_inplace(grads.mlp_out_bias, column_sums(grad_out));
        add_inplace(grads.mlp_out, matmul_tn(cache.hidden_act, grad_out));
    }
    Matrix d_hidden = matmul_nt(grad_out, block.mlp_out);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden.data()[i] *= gelu_derivative(cache.hidden_pre.data()[i]);
    if (w) {
        add_inplace(grads.mlp_in_bias, column_sums(d_hidden));
        add_inplace(grads.mlp_in, matmul_tn(cache.mlp_input, d_hidden));
    }
    const Matrix d_mlp_input = matmul_nt(d_hidden, block.mlp_in);
    add_inplace(d_mid, layer_norm_backward(cache.ln2, vec(block.ln2_gain), d_mlp_input, gvec(grads.ln2_gain),
                                           gvec(grads.ln2_bias)));

    // Discarded prompt rows receive no gradient from above.
    Matrix d_attended(m + n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) d_attended(m + i, j) = d_mid(i, j);

    Matrix d_seq = d_attended;  // residual
    const Matrix d_attn_in = mhsa_backward(cache.attn, block, d_attended, grads, w);
    if (block.normalize_prompts || m == 0) {
        add_inplace(d_seq, layer_norm_backward(cache.ln1, vec(block.ln1_gain), d_attn_in, gvec(grads.ln1_gain),
                                               gvec(grads.ln1_bias)));
    } else {
        const Matrix d_z_normed = layer_norm_backward(cache.ln1, vec(block.ln1_gain), slice_rows(d_attn_in, m, n),
                                                      gvec(grads.ln1_gain), gvec(grads.ln1_bias));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) d_seq(i, j) += d_attn_in(i, j);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) d_seq(m + i, j) += d_z_normed(i, j);
    }

    Matrix d_z = slice_rows(d_seq, m, n);
    if (block.router) {
        const Matrix d_prompts = slice_rows(d_seq, 0, m);
        auto rg = routing::route_backward(cache.route_input, *block.router, cache.route_proj, cache.route_out,
                                          d_prompts);
        auto& gr = *grads.router;
        add_inplace(gr.queries, rg.queries);
        add_inplace(gr.query_proj, rg.query_proj);
        if (scope.frozen_router) {
            add_inplace(gr.key_proj, rg.key_proj);
            add_inplace(gr.value_proj, rg.value_proj);
        }
        if (block.route_from_normalized) {
            add_inplace(d_z, layer_norm_backward(cache.route_norm, vec(block.ln1_gain), rg.tokens,
                                                 gvec(grads.ln1_gain), gvec(grads.ln1_bias)));
        } else {
            add_inplace(d_z, rg.tokens);
        }
    }
    return d_z;
}

// --- model -----------------------------------------------------------------

std::vector<double> model_logits(const Matrix& x, const Model& model, ForwardTrace* trace) {
    const auto& cfg = model.config;
    if (x.rows() != cfg.tokens || x.cols() != cfg.input_dim)
        throw std::invalid_argument("model_forward: expected input " + std::to_string(cfg.tokens) + "x" +
                                    std::to_string(cfg.input_dim) + ", got " + std::to_string(x.rows()) + "x" +
                                    std::to_string(x.cols()));
    Matrix seq = vstack(model.class_token, matmul(x, model.embed));
    add_inplace(seq, model.pos_embed);
    if (trace) {
        trace->input = x;
        trace->embedded = seq;
        trace->blocks.assign(model.blocks.size(), BlockCache{});
    }
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        seq = block_forward(seq, model.blocks[i], trace ? &trace->blocks[i] : nullptr);
        if (seq.rows() != cfg.tokens + 1) throw std::logic_error("model_forward: prompt rows leaked past a block");
    }
    LayerNormCache<double> fn;
    const Matrix normed = layer_norm(seq, vec(model.final_gain), vec(model.final_bias), cfg.norm_eps, &fn);
    Matrix feature;
    if (cfg.pooling == Pooling::ClassToken) {
        feature = slice_rows(normed, 0, 1);
    } else {
        feature = column_sums(slice_rows(normed, 1, cfg.tokens));
        for (double& v : feature.data()) v /= static_cast<double>(cfg.tokens);
    }
    Matrix logits = matmul(feature, model.head);
    add_inplace(logits, model.head_bias);
    std::vector<double> out(logits.data().begin(), logits.data().end());
    if (trace) {
        trace->last_hidden = std::move(seq);
        trace->final_norm = std::move(fn);
        trace->feature = std::move(feature);
        trace->logits = out;
    }
    return out;
}

std::vector<double> model_forward(const Matrix& x, const Model& model, const ClassMask& mask) {
    if (mask.num_classes() != model.config.num_classes) throw std::invalid_argument("model_forward: mask width mismatch");
    std::vector<double> logits = model_logits(x, model);
    for (std::size_t c = 0; c < logits.size(); ++c)
        if (!mask.allows(c)) logits[c] = -std::numeric_limits<double>::infinity();
    return logits;
}

void model_backward(const ForwardTrace& trace, const Model& model, std::span<const double> grad_logits, Model& grads,
                    GradScope scope) {
    const auto& cfg = model.config;
    const std::size_t d = cfg.width;
    const Matrix d_logits(1, grad_logits.size(), std::vector<double>(grad_logits.begin(), grad_logits.end()));
    add_inplace(grads.head, matmul_tn(trace.feature, d_logits));
    add_inplace(grads.head_bias, d_logits);

    // Lowest block that still has something to accumulate.
    std::size_t lowest = model.blocks.size();
    if (scope.backbone) {
        lowest = 0;
    } else {
        for (std::size_t i = 0; i < model.blocks.size(); ++i)
            if (model.blocks[i].router) {
                lowest = i;
                break;
            }
    }
    if (lowest == model.blocks.size() && !scope.backbone) return;

    const Matrix d_feature = matmul_nt(d_logits, model.head);
    Matrix d_normed(cfg.tokens + 1, d);
    if (cfg.pooling == Pooling::ClassToken) {
        for (std::size_t j = 0; j < d; ++j) d_normed(0, j) = d_feature(0, j);
    } else {
        const double inv = 1.0 / static_cast<double>(cfg.tokens);
        for (std::size_t i = 1; i <= cfg.tokens; ++i)
            for (std::size_t j = 0; j < d; ++j) d_normed(i, j) = d_feature(0, j) * inv;
    }
    const bool w = scope.backbone;
    Matrix d_seq = layer_norm_backward(trace.final_norm, vec(model.final_gain), d_normed,
                                       w ? vec(grads.final_gain) : std::span<double>{},
                                       w ? vec(grads.final_bias) : std::span<double>{});
    for (std::size_t i = model.blocks.size(); i-- > lowest;)
        d_seq = block_backward(trace.blocks[i], model.blocks[i], d_seq, grads.blocks[i], scope);
    if (!w) return;

    add_inplace(grads.pos_embed, d_seq);
    add_inplace(grads.class_token, slice_rows(d_seq, 0, 1));
    add_inplace(grads.embed, matmul_tn(trace.input, slice_rows(d_seq, 1, cfg.tokens)));
}

std::vector<Matrix> block_inputs(const Matrix& x, const Model& model) {
    ForwardTrace trace;
    model_logits(x, model, &trace);
    std::vector<Matrix> out;
    for (const auto& b : trace.blocks) out.push_back(b.input);
    return out;
}

}  // namespace rwf::backbone
