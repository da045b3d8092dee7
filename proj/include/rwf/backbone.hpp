#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwf/numerics/matrix.hpp"
#include "rwf/numerics/ops.hpp"
#include "rwf/numerics/rng.hpp"
#include "rwf/routing.hpp"

namespace rwf::backbone {

enum class Placement { First, Last };
enum class BackboneMode { FrozenRandom, PretrainThenFreeze, JointlyTrainable };
enum class Pooling { ClassToken, Mean };

const char* to_string(Placement p) noexcept;
const char* to_string(BackboneMode m) noexcept;
const char* to_string(Pooling p) noexcept;

struct ModelConfig {
    std::size_t depth = 4;
    std::size_t width = 32;       // d
    std::size_t heads = 4;
    double mlp_ratio = 2.0;
    std::size_t tokens = 8;       // L, input tokens per sample (class token excluded)
    std::size_t input_dim = 32;
    std::size_t prompts = 30;     // m per routed layer
    std::size_t routed_layers = 3;  // k
    Placement placement = Placement::First;
    std::size_t num_classes = 20;
    std::optional<double> beta;   // defaults to 1/sqrt(d)
    BackboneMode backbone_mode = BackboneMode::PretrainThenFreeze;
    Pooling pooling = Pooling::ClassToken;
    // Route over LN1(Z) instead of the raw block input.
    bool route_from_normalized = false;
    // Pass prompt rows through the block's pre-attention LayerNorm.
    bool normalize_prompts = true;
    double norm_eps = 1e-5;

    std::size_t hidden() const;
    double effective_beta() const;
    // Throws ConfigError on violated invariants.
    void validate() const;
    // Indices (0-based) of blocks that carry a router.
    std::vector<std::size_t> routed_block_indices() const;
};

struct BlockParams {
    std::size_t heads = 1;
    Matrix ln1_gain, ln1_bias;   // 1 x d
    Matrix attn_query;           // d x d, head h owns columns [h*dh, (h+1)*dh)
    Matrix attn_key;
    Matrix attn_value;
    Matrix attn_out;             // d x d
    Matrix ln2_gain, ln2_bias;   // 1 x d
    Matrix mlp_in, mlp_in_bias;  // d x r*d, 1 x r*d
    Matrix mlp_out, mlp_out_bias;  // r*d x d, 1 x d
    std::optional<routing::RoutingParams> router;
    bool route_from_normalized = false;
    bool normalize_prompts = true;
    double norm_eps = 1e-5;

    std::size_t width() const noexcept { return attn_out.rows(); }
    bool is_rwf() const noexcept { return router.has_value() && router->num_prompts() >= 1; }
};

struct Model {
    ModelConfig config;
    Matrix embed;        // input_dim x d
    Matrix class_token;  // 1 x d
    Matrix pos_embed;    // (L + 1) x d, class token first
    std::vector<BlockParams> blocks;
    Matrix final_gain, final_bias;  // 1 x d
    Matrix head, head_bias;         // d x C, 1 x C
    // When false only routing queries/query projections and the head train.
    bool backbone_trainable = false;
};

struct ParamRef {
    std::string name;
    Matrix* value;
    bool trainable;
};

struct ConstParamRef {
    std::string name;
    const Matrix* value;
    bool trainable;
};

// Every parameter in declaration order. Names are unique and stable; this
// ordering defines checkpoint layout and optimizer-state alignment.
std::vector<ParamRef> parameters(Model& model);
std::vector<ConstParamRef> parameters(const Model& model);

// Same structure, every parameter zero. Used as the gradient container.
Model zeros_like(const Model& model);

BlockParams init_block(std::size_t width, std::size_t heads, std::size_t hidden, RngStream& rng);

Model build_model(const ModelConfig& config, RngStream& rng);

struct ParamCount {
    std::size_t total = 0;
    std::size_t trainable = 0;
    double trainable_fraction = 0.0;
};
ParamCount count_params(const Model& model);

// --- forward passes ---------------------------------------------------------

struct AttentionCache {
    Matrix input;  // rows attended over, already normalized
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, n x n
    Matrix concat;
};

Matrix mhsa(const Matrix& x, const BlockParams& block, AttentionCache* cache = nullptr);
// Which parameter gradients a backward pass accumulates. Input gradients
// always flow; router queries/query projections and the head always get
// gradients.
struct GradScope {
    bool backbone = true;       // embedding, blocks, final norm
    bool frozen_router = true;  // router key/value projections
};

// Returns dL/dx; accumulates attention weight gradients when `weight_grads`.
Matrix mhsa_backward(const AttentionCache& cache, const BlockParams& block, const Matrix& grad_out,
                     BlockParams& grads, bool weight_grads = true);

struct BlockCache {
    Matrix input;  // Z
    std::size_t prompt_rows = 0;
    routing::Projections route_proj;
    routing::RoutingOutput route_out;
    Matrix route_input;
    LayerNormCache<double> route_norm;
    LayerNormCache<double> ln1;
    AttentionCache attn;
    Matrix mid;  // Z~, backbone rows after attention
    LayerNormCache<double> ln2;
    Matrix mlp_input;
    Matrix hidden_pre;
    Matrix hidden_act;
};

// concat-attend-discard block; requires a router.
Matrix rwf_block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache = nullptr);
// Plain pre-norm block; requires no router.
Matrix standard_block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache = nullptr);
// Dispatches on block.router.
Matrix block_forward(const Matrix& z, const BlockParams& block, BlockCache* cache = nullptr);
// Returns dL/dZ and accumulates parameter gradients into `grads`.
Matrix block_backward(const BlockCache& cache, const BlockParams& block, const Matrix& grad_out, BlockParams& grads,
                      GradScope scope = {});

struct ForwardTrace {
    Matrix input;
    Matrix embedded;                 // (L+1) x d after positional embedding
    std::vector<BlockCache> blocks;  // one per block
    Matrix last_hidden;
    LayerNormCache<double> final_norm;
    Matrix feature;                  // 1 x d
    std::vector<double> logits;      // unmasked
};

// Unmasked logits. If `trace` is non-null, everything needed by backward is kept.
std::vector<double> model_logits(const Matrix& x, const Model& model, ForwardTrace* trace = nullptr);

// Logits with masked-out classes set to -infinity.
std::vector<double> model_forward(const Matrix& x, const Model& model, const ClassMask& mask);

// Accumulates dL/dparams for one sample into `grads` given dL/dlogits.
// Blocks below the lowest one that holds a gradient-receiving parameter
// are skipped.
void model_backward(const ForwardTrace& trace, const Model& model, std::span<const double> grad_logits, Model& grads,
                    GradScope scope = {});

// Inputs to each block for one sample (index = block position). Probe helper.
std::vector<Matrix> block_inputs(const Matrix& x, const Model& model);

}  // namespace rwf::backbone
