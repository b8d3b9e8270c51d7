#include "duet/model.hpp"

#include <cmath>
#include <numeric>

namespace duet {

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || channels <= 0)
        throw ConfigError("model: geometry must be positive");
    if (image_size % patch_size != 0)
        throw ConfigError("model: image size must be divisible by patch size");
    if (hidden_dim <= 0 || heads <= 0 || hidden_dim % heads != 0)
        throw ConfigError("model: hidden dim must be divisible by head count");
    if (cross_layers < 1) throw ConfigError("model: at least one cross layer required");
    if (vision_layers < 1 || language_layers < 1)
        throw ConfigError("model: both towers need at least one layer");
    if (ff_dim <= 0 || projection_dim <= 0) throw ConfigError("model: bad head dims");
    if (vocab_size <= 0 || attr_count <= 0 || max_seq_len <= 0)
        throw ConfigError("model: vocab_size, attr_count and max_seq_len must be set");
}

namespace {

constexpr Scalar kInitStd = 0.02;

AttnParams init_attn(int d, SeededRng& rng) {
    AttnParams p;
    p.wq = Tensor::randn({d, d}, kInitStd, rng);
    p.bq = Tensor::zeros({d}, true);
    p.wk = Tensor::randn({d, d}, kInitStd, rng);
    p.bk = Tensor::zeros({d}, true);
    p.wv = Tensor::randn({d, d}, kInitStd, rng);
    p.bv = Tensor::zeros({d}, true);
    p.wo = Tensor::randn({d, d}, kInitStd, rng);
    p.bo = Tensor::zeros({d}, true);
    return p;
}

BlockParams init_block(int d, int ff, SeededRng& rng) {
    BlockParams b;
    b.attn = init_attn(d, rng);
    b.ln1_g = Tensor::full({d}, 1.0, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.ff_w1 = Tensor::randn({d, ff}, kInitStd, rng);
    b.ff_b1 = Tensor::zeros({ff}, true);
    b.ff_w2 = Tensor::randn({ff, d}, kInitStd, rng);
    b.ff_b2 = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0, true);
    b.ln2_b = Tensor::zeros({d}, true);
    return b;
}

void name_attn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const AttnParams& p) {
    out.emplace_back(prefix + ".wq", p.wq);
    out.emplace_back(prefix + ".bq", p.bq);
    out.emplace_back(prefix + ".wk", p.wk);
    out.emplace_back(prefix + ".bk", p.bk);
    out.emplace_back(prefix + ".wv", p.wv);
    out.emplace_back(prefix + ".bv", p.bv);
    out.emplace_back(prefix + ".wo", p.wo);
    out.emplace_back(prefix + ".bo", p.bo);
}

void name_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const BlockParams& b) {
    name_attn(out, prefix + ".attn", b.attn);
    out.emplace_back(prefix + ".ln1.g", b.ln1_g);
    out.emplace_back(prefix + ".ln1.b", b.ln1_b);
    out.emplace_back(prefix + ".ff.w1", b.ff_w1);
    out.emplace_back(prefix + ".ff.b1", b.ff_b1);
    out.emplace_back(prefix + ".ff.w2", b.ff_w2);
    out.emplace_back(prefix + ".ff.b2", b.ff_b2);
    out.emplace_back(prefix + ".ln2.g", b.ln2_g);
    out.emplace_back(prefix + ".ln2.b", b.ln2_b);
}

/// Multi-head attention; key positions with mask[j] == 0 are unreachable.
Tensor mha(const Tensor& queries_in, const Tensor& keys_in, const AttnParams& p, int heads,
           const std::vector<char>* key_mask = nullptr, AttnTrace* trace = nullptr) {
    const int d = queries_in.cols();
    const int dh = d / heads;
    Tensor q = add_rowvec(matmul(queries_in, p.wq), p.bq);
    Tensor k = add_rowvec(matmul(keys_in, p.wk), p.bk);
    Tensor v = add_rowvec(matmul(keys_in, p.wv), p.bv);

    Tensor mask_bias;
    if (key_mask) {
        Mat mb = Mat::Zero(q.rows(), k.rows());
        for (int j = 0; j < k.rows(); ++j)
            if (!(*key_mask)[static_cast<size_t>(j)]) mb.col(j).setConstant(-1e30);
        mask_bias = Tensor::from_matrix(mb);
    }

    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = cols(q, h * dh, dh);
        Tensor kh = cols(k, h * dh, dh);
        Tensor vh = cols(v, h * dh, dh);
        Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (mask_bias.defined()) scores = add(scores, mask_bias);
        Tensor attn = softmax(scores, 1);
        if (trace) trace->head_rows.push_back(attn.mat());
        ctx.push_back(matmul(attn, vh));
    }
    return add_rowvec(matmul(concat_cols(ctx), p.wo), p.bo);
}

Tensor feed_forward(const Tensor& x, const BlockParams& b) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, b.ff_w1), b.ff_b1)), b.ff_w2), b.ff_b2);
}

Tensor encoder_block(const Tensor& x_in, const BlockParams& b, int heads,
                     const std::vector<char>* key_mask = nullptr) {
    Tensor x = layer_norm(add(x_in, mha(x_in, x_in, b.attn, heads, key_mask)), b.ln1_g, b.ln1_b);
    return layer_norm(add(x, feed_forward(x, b)), b.ln2_g, b.ln2_b);
}

}  // namespace

DuetModel DuetModel::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    DuetModel m;
    m.config = config;
    SeededRng rng = SeededRng::derive(seed, {0x6d6f64656cULL});  // independent init stream

    const int d = config.hidden_dim;
    m.patch_w = Tensor::randn({config.patch_dim(), d}, kInitStd, rng);
    m.patch_b = Tensor::zeros({d}, true);
    m.vis_cls = Tensor::randn({1, d}, kInitStd, rng);
    m.vis_pos = Tensor::randn({1 + config.n_patches(), d}, kInitStd, rng);
    for (int i = 0; i < config.vision_layers; ++i)
        m.vis_blocks.push_back(init_block(d, config.ff_dim, rng));

    m.tok_emb = Tensor::randn({config.vocab_size, d}, kInitStd, rng);
    m.lan_pos = Tensor::randn({config.max_seq_len, d}, kInitStd, rng);
    for (int i = 0; i < config.language_layers; ++i)
        m.lan_blocks.push_back(init_block(d, config.ff_dim, rng));

    for (int i = 0; i < config.cross_layers; ++i) {
        CrossLayerParams c;
        c.vis_from_lan = init_attn(d, rng);
        c.lan_from_vis = init_attn(d, rng);
        c.cross_ln_v_g = Tensor::full({d}, 1.0, true);
        c.cross_ln_v_b = Tensor::zeros({d}, true);
        c.cross_ln_l_g = Tensor::full({d}, 1.0, true);
        c.cross_ln_l_b = Tensor::zeros({d}, true);
        c.vis_self = init_block(d, config.ff_dim, rng);
        c.lan_self = init_block(d, config.ff_dim, rng);
        m.cross.push_back(std::move(c));
    }

    m.attr_w = Tensor::randn({d, config.attr_count}, kInitStd, rng);
    m.attr_b = Tensor::zeros({config.attr_count}, true);
    m.proj_w1 = Tensor::randn({d, config.projection_dim}, kInitStd, rng);
    m.proj_b1 = Tensor::zeros({config.projection_dim}, true);
    m.proj_w2 = Tensor::randn({config.projection_dim, config.projection_dim}, kInitStd, rng);
    m.proj_b2 = Tensor::zeros({config.projection_dim}, true);
    return m;
}

std::vector<std::pair<std::string, Tensor>> DuetModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("vis.patch.w", patch_w);
    out.emplace_back("vis.patch.b", patch_b);
    out.emplace_back("vis.cls", vis_cls);
    out.emplace_back("vis.pos", vis_pos);
    for (size_t i = 0; i < vis_blocks.size(); ++i)
        name_block(out, "vis.block" + std::to_string(i), vis_blocks[i]);
    out.emplace_back("lan.tok_emb", tok_emb);
    out.emplace_back("lan.pos", lan_pos);
    for (size_t i = 0; i < lan_blocks.size(); ++i)
        name_block(out, "lan.block" + std::to_string(i), lan_blocks[i]);
    for (size_t i = 0; i < cross.size(); ++i) {
        const std::string p = "cross" + std::to_string(i);
        name_attn(out, p + ".vis_from_lan", cross[i].vis_from_lan);
        name_attn(out, p + ".lan_from_vis", cross[i].lan_from_vis);
        out.emplace_back(p + ".ln_v.g", cross[i].cross_ln_v_g);
        out.emplace_back(p + ".ln_v.b", cross[i].cross_ln_v_b);
        out.emplace_back(p + ".ln_l.g", cross[i].cross_ln_l_g);
        out.emplace_back(p + ".ln_l.b", cross[i].cross_ln_l_b);
        name_block(out, p + ".vis_self", cross[i].vis_self);
        name_block(out, p + ".lan_self", cross[i].lan_self);
    }
    out.emplace_back("head.attr.w", attr_w);
    out.emplace_back("head.attr.b", attr_b);
    out.emplace_back("head.proj.w1", proj_w1);
    out.emplace_back("head.proj.b1", proj_b1);
    out.emplace_back("head.proj.w2", proj_w2);
    out.emplace_back("head.proj.b2", proj_b2);
    return out;
}

std::vector<Tensor> DuetModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

long DuetModel::parameter_count() const {
    long n = 0;
    for (const auto& p : parameters()) n += static_cast<long>(p.size());
    return n;
}

Tensor encode_image(const Image& image, const DuetModel& model) {
    const auto& cfg = model.config;
    if (image.h != cfg.image_size || image.w != cfg.image_size || image.c != cfg.channels)
        throw DataError("encode_image: image shape does not match the model config");
    const int ps = cfg.patch_size;
    const int side = cfg.patches_per_side();
    Mat patches(cfg.n_patches(), cfg.patch_dim());
    for (int p = 0; p < cfg.n_patches(); ++p) {
        const int py = (p / side) * ps;
        const int px = (p % side) * ps;
        int k = 0;
        for (int y = 0; y < ps; ++y)
            for (int x = 0; x < ps; ++x)
                for (int ch = 0; ch < cfg.channels; ++ch)
                    patches(p, k++) = static_cast<double>(image.at(py + y, px + x, ch));
    }
    Tensor x = add_rowvec(matmul(Tensor::from_matrix(patches), model.patch_w), model.patch_b);
    x = concat_rows({model.vis_cls, x});
    x = add(x, reshape(model.vis_pos, {1 + cfg.n_patches(), cfg.hidden_dim}));
    for (const auto& b : model.vis_blocks) x = encoder_block(x, b, cfg.heads);
    return x;
}

Tensor encode_text(const TokenSequence& seq, const DuetModel& model) {
    const auto& cfg = model.config;
    if (seq.ids.empty()) throw DataError("encode_text: empty sequence");
    if (static_cast<int>(seq.size()) > cfg.max_seq_len)
        throw DataError("encode_text: sequence longer than max_seq_len");
    for (int id : seq.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw DataError("encode_text: token id outside the vocabulary");

    // Trailing [PAD] positions act as batch padding: masked out of attention.
    const int len = static_cast<int>(seq.size());
    int n_valid = len;
    while (n_valid > 1 && seq.ids[static_cast<size_t>(n_valid - 1)] == Vocabulary::kPad)
        --n_valid;
    std::vector<char> mask(static_cast<size_t>(len), 0);
    for (int i = 0; i < n_valid; ++i) mask[static_cast<size_t>(i)] = 1;
    const std::vector<char>* mask_ptr = (n_valid < len) ? &mask : nullptr;

    std::vector<int> pos_ids(static_cast<size_t>(len));
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    Tensor x = add(embedding(model.tok_emb, seq.ids), rows(model.lan_pos, pos_ids));
    for (const auto& b : model.lan_blocks) x = encoder_block(x, b, cfg.heads, mask_ptr);
    return x;
}

std::pair<Tensor, Tensor> cross_layers(const Tensor& vis_states, const Tensor& lan_states,
                                       const DuetModel& model, AttnTrace* trace) {
    if (vis_states.cols() != lan_states.cols())
        throw ConfigError("cross_layers: modality dims differ");
    const int heads = model.config.heads;
    Tensor vis = vis_states;
    Tensor lan = lan_states;
    for (const auto& layer : model.cross) {
        Tensor va = mha(vis, lan, layer.vis_from_lan, heads, nullptr, trace);
        Tensor la = mha(lan, vis, layer.lan_from_vis, heads, nullptr, trace);
        vis = layer_norm(add(vis, va), layer.cross_ln_v_g, layer.cross_ln_v_b);
        lan = layer_norm(add(lan, la), layer.cross_ln_l_g, layer.cross_ln_l_b);
        vis = layer_norm(add(vis, mha(vis, vis, layer.vis_self.attn, heads)),
                         layer.vis_self.ln1_g, layer.vis_self.ln1_b);
        lan = layer_norm(add(lan, mha(lan, lan, layer.lan_self.attn, heads)),
                         layer.lan_self.ln1_g, layer.lan_self.ln1_b);
        vis = layer_norm(add(vis, feed_forward(vis, layer.vis_self)), layer.vis_self.ln2_g,
                         layer.vis_self.ln2_b);
        lan = layer_norm(add(lan, feed_forward(lan, layer.lan_self)), layer.lan_self.ln2_g,
                         layer.lan_self.ln2_b);
    }
    return {vis, lan};
}

Encoded encode_pair(const Image& image, const TokenSequence& seq, const DuetModel& model,
                    AttnTrace* trace) {
    Tensor vis_full = encode_image(image, model);
    if (model.config.vision_only) {
        Encoded out;
        out.fused_vis = rows(vis_full, {0});
        out.vis_cls_state = row(vis_full, 0);
        return out;
    }
    Tensor lan = encode_text(seq, model);
    Tensor vis_in = model.config.cross_full_patches ? vis_full : rows(vis_full, {0});
    auto [fused_vis, fused_lan] = cross_layers(vis_in, lan, model, trace);
    Encoded out;
    out.fused_vis = fused_vis;
    out.fused_lan = fused_lan;
    out.vis_cls_state = row(fused_vis, 0);
    return out;
}

Tensor image_to_attribute_vec(const Tensor& fused_cls_state, const DuetModel& model) {
    if (fused_cls_state.rank() != 1 ||
        static_cast<int>(fused_cls_state.size()) != model.config.hidden_dim)
        throw ShapeError("image_to_attribute_vec: want a rank-1 [d] state");
    return add(matmul(fused_cls_state, model.attr_w), model.attr_b);
}

Tensor token_logits(const Tensor& state, const DuetModel& model) {
    if (state.rank() != 1 || static_cast<int>(state.size()) != model.config.hidden_dim)
        throw ShapeError("token_logits: want a rank-1 [d] state");
    return matmul(model.tok_emb, state);
}

Tensor project_head(const Tensor& x, const DuetModel& model) {
    Tensor h = gelu(add(matmul(x, model.proj_w1), model.proj_b1));
    return add(matmul(h, model.proj_w2), model.proj_b2);
}

int required_seq_len(const AttributeSpace& space, const Vocabulary& vocab) {
    std::vector<int> all(static_cast<size_t>(space.n_attributes()));
    std::iota(all.begin(), all.end(), 0);
    const auto full = serialize(all, space, vocab);
    const auto probe = grounding_template(space, vocab);
    return static_cast<int>(std::max(full.size(), probe.seq.size()));
}

}  // namespace duet
