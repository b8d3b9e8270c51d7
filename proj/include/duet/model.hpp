#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duet/fst.hpp"
#include "duet/image.hpp"
#include "duet/tensor.hpp"

namespace duet {

struct ModelConfig {
    int image_size = 32;
    int patch_size = 8;
    int channels = 1;
    int hidden_dim = 64;
    int vision_layers = 2;
    int language_layers = 2;
    int cross_layers = 1;
    int heads = 4;
    int ff_dim = 128;
    int vocab_size = 0;
    int attr_count = 0;
    int projection_dim = 32;
    int max_seq_len = 0;
    /// Feed all patch states (not just [CLS]) into the cross layer.
    bool cross_full_patches = false;
    /// Ablation baseline: classify from the vision tower alone. encode_pair
    /// skips the language tower and fusion; grounding stages are unavailable.
    bool vision_only = false;

    int patches_per_side() const { return image_size / patch_size; }
    int n_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    void validate() const;
};

struct AttnParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
    AttnParams attn;
    Tensor ln1_g, ln1_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_g, ln2_b;
};

/// One cross layer: a bi-directional cross-attention block followed by a
/// self-attention block and a feed-forward block per modality, residual +
/// layer norm behind each block.
struct CrossLayerParams {
    AttnParams vis_from_lan;  // vision queries over language keys/values
    AttnParams lan_from_vis;
    Tensor cross_ln_v_g, cross_ln_v_b, cross_ln_l_g, cross_ln_l_b;
    BlockParams vis_self;
    BlockParams lan_self;
};

struct DuetModel {
    ModelConfig config;

    Tensor patch_w, patch_b;  // patch embedding
    Tensor vis_cls;           // learnable [CLS], [1, d]
    Tensor vis_pos;           // [1 + n_patches, d]
    std::vector<BlockParams> vis_blocks;

    Tensor tok_emb;  // [V, d]; tied input/output token embeddings
    Tensor lan_pos;  // [max_seq_len, d]
    std::vector<BlockParams> lan_blocks;

    std::vector<CrossLayerParams> cross;

    Tensor attr_w, attr_b;  // d -> |A| attribute-space map
    Tensor proj_w1, proj_b1, proj_w2, proj_b2;  // contrastive projection head H

    static DuetModel init(const ModelConfig& config, std::uint64_t seed);

    /// Deterministic (name, tensor) ordering; the checkpoint and optimizer
    /// contract.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    long parameter_count() const;
};

/// Per-head attention rows captured for introspection.
struct AttnTrace {
    std::vector<Mat> head_rows;
};

/// Vision tower: [CLS] + row-major patch states with 1-D positions, -> (1+P) x d.
Tensor encode_image(const Image& image, const DuetModel& model);

/// Language tower over token ids. Trailing [PAD] positions are masked out of
/// every attention row.
Tensor encode_text(const TokenSequence& seq, const DuetModel& model);

/// K stacked cross layers over both modality states. The vision input is the
/// [CLS] state only unless cross_full_patches is set.
std::pair<Tensor, Tensor> cross_layers(const Tensor& vis_states, const Tensor& lan_states,
                                       const DuetModel& model, AttnTrace* trace = nullptr);

struct Encoded {
    Tensor fused_vis;       // [Tv, d]
    Tensor fused_lan;       // [Tl, d]
    Tensor vis_cls_state;   // rank-1 [d]
};

/// encode_image + encode_text + cross layers.
Encoded encode_pair(const Image& image, const TokenSequence& seq, const DuetModel& model,
                    AttnTrace* trace = nullptr);

/// v~ in attribute space: the symbol scored against class vectors z^c.
Tensor image_to_attribute_vec(const Tensor& fused_cls_state, const DuetModel& model);

/// Tied-embedding logits: one dot product per vocabulary entry.
Tensor token_logits(const Tensor& state, const DuetModel& model);

/// Two-layer nonlinear projection head H(.) for contrastive similarity.
Tensor project_head(const Tensor& x, const DuetModel& model);

/// Longest sequence the model must accept for a space: the full serialization
/// and the grounding probe.
int required_seq_len(const AttributeSpace& space, const Vocabulary& vocab);

}  // namespace duet
