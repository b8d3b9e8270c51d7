#include "duet/model.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

using namespace duet;
using duet::testing::build_space;

namespace {

ModelConfig micro_config(int vocab_size, int attr_count) {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.channels = 1;
    c.hidden_dim = 8;
    c.vision_layers = 1;
    c.language_layers = 1;
    c.cross_layers = 1;
    c.heads = 2;
    c.ff_dim = 16;
    c.vocab_size = vocab_size;
    c.attr_count = attr_count;
    c.projection_dim = 4;
    c.max_seq_len = 32;
    return c;
}

Image random_image(const ModelConfig& cfg, std::uint64_t seed) {
    Image img;
    img.h = img.w = cfg.image_size;
    img.c = cfg.channels;
    SeededRng rng(seed);
    img.px.resize(static_cast<size_t>(img.h * img.w * img.c));
    for (auto& p : img.px) p = static_cast<float>(rng.uniform());
    return img;
}

AttributeSpace tiny_space() {
    return build_space({{"color", {"red", "green"}}, {"shape", {"round", "square"}}});
}

}  // namespace

TEST_CASE("encode_image shape arithmetic") {
    ModelConfig cfg = micro_config(16, 4);
    cfg.image_size = 16;
    cfg.patch_size = 8;
    DuetModel m = DuetModel::init(cfg, 1);
    Image img = random_image(cfg, 2);
    Tensor states = encode_image(img, m);
    CHECK(states.rows() == 5);  // [CLS] + 4 patches
    CHECK(states.cols() == cfg.hidden_dim);

    Image bad = img;
    bad.w = 8;
    bad.px.resize(static_cast<size_t>(bad.h * bad.w));
    CHECK_THROWS_AS(encode_image(bad, m), DataError);
}

TEST_CASE("patch permutation equivariance without positional embeddings") {
    ModelConfig cfg = micro_config(16, 4);
    DuetModel m = DuetModel::init(cfg, 3);
    m.vis_pos.mutable_flat().setZero();

    Image img = random_image(cfg, 4);
    // Swap the two top patches (4x4 blocks at x=0 and x=4).
    Image swapped = img;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            std::swap(swapped.px[static_cast<size_t>(y * 8 + x)],
                      swapped.px[static_cast<size_t>(y * 8 + x + 4)]);

    Tensor a = encode_image(img, m);
    Tensor b = encode_image(swapped, m);
    CHECK((a.mat().row(0) - b.mat().row(0)).cwiseAbs().maxCoeff() == 0.0);  // [CLS] unchanged
    CHECK((a.mat().row(1) - b.mat().row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.mat().row(2) - b.mat().row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.mat().row(3) - b.mat().row(3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward passes are bit-identical across replays") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    Image img = random_image(cfg, 9);
    auto seq = serialize({0, 2}, space, vocab);

    auto run = [&] {
        DuetModel m = DuetModel::init(cfg, 42);
        auto enc = encode_pair(img, seq, m);
        return Arr(image_to_attribute_vec(enc.vis_cls_state, m).flat());
    };
    Arr a = run(), b = run();
    for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encode_text handles the empty-slot template and is deterministic") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 7);
    auto tmpl = prompt_template(space, vocab);
    Tensor s1 = encode_text(tmpl, m);
    Tensor s2 = encode_text(tmpl, m);
    CHECK(s1.flat().allFinite());
    CHECK((s1.flat() - s2.flat()).abs().maxCoeff() == 0.0);
}

TEST_CASE("encode_text rejects out-of-vocabulary ids") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 7);
    TokenSequence seq;
    seq.ids = {vocab.size()};
    seq.tags = {SegTag::Separator};
    seq.attr_ids = {-1};
    CHECK_THROWS_AS(encode_text(seq, m), DataError);
}

TEST_CASE("padding is masked out of attention") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 17);
    auto seq = serialize({0, 3}, space, vocab);
    const int n = static_cast<int>(seq.size());

    auto padded = seq;
    for (int i = 0; i < 5; ++i) {
        padded.ids.push_back(Vocabulary::kPad);
        padded.tags.push_back(SegTag::Separator);
        padded.attr_ids.push_back(-1);
    }
    Tensor plain = encode_text(seq, m);
    Tensor with_pads = encode_text(padded, m);
    CHECK((plain.mat() - with_pads.mat().topRows(n)).cwiseAbs().maxCoeff() == 0.0);

    // Perturbing state feeding a padded position leaves unpadded outputs alone.
    DuetModel m2 = m;
    m2.lan_pos.mutable_flat()[static_cast<Eigen::Index>(n * cfg.hidden_dim)] += 3.5;
    Tensor perturbed = encode_text(padded, m2);
    CHECK((plain.mat() - perturbed.mat().topRows(n)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross attention rows are normalized per head") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 23);
    Image img = random_image(cfg, 5);
    auto seq = serialize({1, 2}, space, vocab);
    AttnTrace trace;
    encode_pair(img, seq, m, &trace);
    // K=1 cross layer: one bi-directional pass = two attention calls x heads.
    CHECK(trace.head_rows.size() == 2u * static_cast<size_t>(cfg.heads));
    for (const auto& rows : trace.head_rows)
        for (int i = 0; i < rows.rows(); ++i)
            CHECK(std::abs(rows.row(i).sum() - 1.0) < 1e-9);
}

TEST_CASE("zeroed language path reduces the cross layer to the vision-only path") {
    ModelConfig cfg = micro_config(16, 4);
    DuetModel m = DuetModel::init(cfg, 31);
    auto& layer = m.cross[0];
    layer.vis_from_lan.wv.mutable_flat().setZero();
    layer.vis_from_lan.bv.mutable_flat().setZero();

    SeededRng rng(3);
    Tensor vis = Tensor::randn({1, cfg.hidden_dim}, 1.0, rng, false);
    Tensor lan = Tensor::zeros({6, cfg.hidden_dim});
    auto [fused_vis, fused_lan] = cross_layers(vis, lan, m);

    // Vision-alone reference: LN(vis + 0), then the self-attention and
    // feed-forward blocks with identical parameters.
    Tensor ref = layer_norm(vis, layer.cross_ln_v_g, layer.cross_ln_v_b);
    {
        Tensor q = add_rowvec(matmul(ref, layer.vis_self.attn.wq), layer.vis_self.attn.bq);
        Tensor k = add_rowvec(matmul(ref, layer.vis_self.attn.wk), layer.vis_self.attn.bk);
        Tensor v = add_rowvec(matmul(ref, layer.vis_self.attn.wv), layer.vis_self.attn.bv);
        const int dh = cfg.hidden_dim / cfg.heads;
        std::vector<Tensor> ctx;
        for (int h = 0; h < cfg.heads; ++h) {
            Tensor att = softmax(
                scale(matmul_nt(cols(q, h * dh, dh), cols(k, h * dh, dh)), 1.0 / std::sqrt(dh)),
                1);
            ctx.push_back(matmul(att, cols(v, h * dh, dh)));
        }
        Tensor sa = add_rowvec(matmul(concat_cols(ctx), layer.vis_self.attn.wo),
                               layer.vis_self.attn.bo);
        ref = layer_norm(add(ref, sa), layer.vis_self.ln1_g, layer.vis_self.ln1_b);
        Tensor ffo = add_rowvec(
            matmul(gelu(add_rowvec(matmul(ref, layer.vis_self.ff_w1), layer.vis_self.ff_b1)),
                   layer.vis_self.ff_w2),
            layer.vis_self.ff_b2);
        ref = layer_norm(add(ref, ffo), layer.vis_self.ln2_g, layer.vis_self.ln2_b);
    }
    CHECK((fused_vis.mat() - ref.mat()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(fused_lan.flat().allFinite());
}

TEST_CASE("image_to_attribute_vec maps into attribute space") {
    ModelConfig cfg = micro_config(16, 6);
    DuetModel m = DuetModel::init(cfg, 11);
    SeededRng rng(2);
    Tensor state = Tensor::randn({cfg.hidden_dim}, 1.0, rng, false);

    Tensor v = image_to_attribute_vec(state, m);
    CHECK(v.rank() == 1);
    CHECK(static_cast<int>(v.size()) == 6);

    DuetModel zeroed = m;
    zeroed.attr_w.mutable_flat().setZero();
    zeroed.attr_b.mutable_flat().setZero();
    Tensor z = image_to_attribute_vec(state, zeroed);
    CHECK(z.flat().abs().maxCoeff() == 0.0);

    std::vector<Tensor> params{m.attr_w, m.attr_b};
    auto f = [&] { return sum_all(square(image_to_attribute_vec(state, m))); };
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("token_logits are tied-embedding dot products") {
    ModelConfig cfg = micro_config(8, 4);
    cfg.hidden_dim = 8;
    DuetModel m = DuetModel::init(cfg, 13);
    // Orthonormal embeddings: row w is the w-th basis vector.
    m.tok_emb.mutable_flat().setZero();
    for (int w = 0; w < 8; ++w)
        m.tok_emb.mutable_flat()[static_cast<Eigen::Index>(w * 8 + w)] = 1.0;

    Tensor state = row(Tensor::from_matrix(Mat(m.tok_emb.mat())), 5);
    Tensor logits = token_logits(state, m);
    int argmax = 0;
    logits.vec().maxCoeff(&argmax);
    CHECK(argmax == 5);
    Tensor p = softmax(logits, 0);
    CHECK(std::abs(p.flat().sum() - 1.0) < 1e-12);
}

TEST_CASE("token probabilities match an extended-precision oracle") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 19);
    SeededRng rng(6);
    Tensor state = Tensor::randn({cfg.hidden_dim}, 1.0, rng, false);
    Tensor p = softmax(token_logits(state, m), 0);

    // Long-double dot products and softmax.
    std::vector<long double> logits(static_cast<size_t>(vocab.size()), 0.0L);
    for (int w = 0; w < vocab.size(); ++w)
        for (int k = 0; k < cfg.hidden_dim; ++k)
            logits[static_cast<size_t>(w)] +=
                static_cast<long double>(m.tok_emb.mat()(w, k)) *
                static_cast<long double>(state.flat()[k]);
    long double mx = logits[0], sum = 0.0L;
    for (auto v : logits) mx = std::max(mx, v);
    std::vector<long double> e(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        e[i] = expl(logits[i] - mx);
        sum += e[i];
    }
    for (int w = 0; w < vocab.size(); ++w)
        CHECK(std::abs(p.flat()[w] - static_cast<double>(e[static_cast<size_t>(w)] / sum)) <
              1e-10);
}

TEST_CASE("projection head contract") {
    ModelConfig cfg = micro_config(16, 4);
    DuetModel m = DuetModel::init(cfg, 29);
    SeededRng rng(8);
    Tensor x = Tensor::randn({cfg.hidden_dim}, 1.0, rng, false);
    Tensor h = project_head(x, m);
    CHECK(static_cast<int>(h.size()) == cfg.projection_dim);
    CHECK(cosine_similarity(h, h).value() == doctest::Approx(1.0).epsilon(1e-12));

    // Larger weights keep the head outputs away from the origin, where
    // cosine's higher derivatives would swamp the central differences.
    m.proj_w1.mutable_flat() *= 25.0;
    m.proj_w2.mutable_flat() *= 25.0;
    Tensor y = Tensor::randn({cfg.hidden_dim}, 1.0, rng, false);
    std::vector<Tensor> params{m.proj_w1, m.proj_b1, m.proj_w2, m.proj_b2};
    auto f = [&] {
        return add(cosine_similarity(project_head(x, m), project_head(y, m)),
                   mean_all(square(project_head(x, m))));
    };
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("full forward is finite at initialization") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    for (std::uint64_t seed : {1ULL, 7ULL, 99ULL}) {
        DuetModel m = DuetModel::init(cfg, seed);
        Image img = random_image(cfg, seed + 1);
        auto enc = encode_pair(img, serialize({0, 2}, space, vocab), m);
        CHECK(enc.fused_vis.flat().allFinite());
        CHECK(enc.fused_lan.flat().allFinite());
        CHECK(image_to_attribute_vec(enc.vis_cls_state, m).flat().allFinite());
    }
}

TEST_CASE("changing an unmasked language token changes the attribute vector") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    DuetModel m = DuetModel::init(cfg, 37);
    Image img = random_image(cfg, 38);

    auto seq_a = serialize({0, 2}, space, vocab);  // red, round
    auto seq_b = serialize({1, 2}, space, vocab);  // green, round
    Tensor va = image_to_attribute_vec(encode_pair(img, seq_a, m).vis_cls_state, m);
    Tensor vb = image_to_attribute_vec(encode_pair(img, seq_b, m).vis_cls_state, m);
    CHECK((va.flat() - vb.flat()).abs().maxCoeff() > 1e-12);
}

TEST_CASE("cross_full_patches feeds the whole patch sequence through fusion") {
    auto space = tiny_space();
    auto vocab = Vocabulary::build(space);
    ModelConfig cfg = micro_config(vocab.size(), space.n_attributes());
    cfg.cross_full_patches = true;
    DuetModel m = DuetModel::init(cfg, 41);
    Image img = random_image(cfg, 42);
    auto enc = encode_pair(img, prompt_template(space, vocab), m);
    CHECK(enc.fused_vis.rows() == 1 + cfg.n_patches());
}

TEST_CASE("model config validation") {
    ModelConfig cfg = micro_config(16, 4);
    cfg.patch_size = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config(16, 4);
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config(16, 4);
    cfg.cross_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config(0, 4);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("parameter registry is stable and counts add up") {
    ModelConfig cfg = micro_config(16, 4);
    DuetModel m = DuetModel::init(cfg, 55);
    auto named = m.named_parameters();
    CHECK(named.size() == m.parameters().size());
    CHECK(named[0].first == "vis.patch.w");
    long total = 0;
    for (auto& [name, t] : named) total += static_cast<long>(t.size());
    CHECK(total == m.parameter_count());
    CHECK(total > 0);
    // Same seed, same init bits.
    DuetModel m2 = DuetModel::init(cfg, 55);
    CHECK((m.tok_emb.flat() - m2.tok_emb.flat()).abs().maxCoeff() == 0.0);
}
