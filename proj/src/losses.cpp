#include "duet/losses.hpp"

#include <algorithm>
#include <cmath>

namespace duet {

void LossWeights::validate() const {
    if (lambda_ar < 0 || lambda_con < 0 || lambda_cmr < 0 || lambda_acl < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (!(rho >= 0 && rho <= 1)) throw ConfigError("rho outside [0,1]");
    if (!(r_rap >= 0 && r_rap <= 1)) throw ConfigError("r_rap outside [0,1]");
}

BatchContext prepare_batch(Stage stage, const std::vector<std::pair<int, int>>& items,
                           const ClassAttributeMatrix& matrix, const Split& split,
                           const AttributeSpace& space, const Vocabulary& vocab,
                           const LossWeights& weights, const AclCounts& counts,
                           int images_per_class, SeededRng& rng) {
    BatchContext batch;
    batch.stage = stage;
    const TokenSequence tmpl = prompt_template(space, vocab);
    for (auto [class_id, image_idx] : items) {
        BatchExample ex;
        ex.class_id = class_id;
        ex.image_idx = image_idx;
        if (stage == Stage::TCls) {
            ex.seq = tmpl;
        } else {
            const int a_t = lwrs_sample(class_id, matrix, split, rng);
            auto attrs = attribute_set_of(class_id, matrix);
            auto pruned = rap(attrs, a_t, weights.r_rap, rng, weights.rap_fixed_size);
            auto masked = mask_attribute(serialize(pruned, space, vocab), a_t, vocab);
            ex.seq = std::move(masked.seq);
            ex.targets = std::move(masked.targets);
            ex.target_attr = a_t;
            auto cands = acl_candidates(class_id, a_t, matrix, split, space);
            if (!cands.positives.empty() && !cands.negatives.empty()) {
                auto sample = acl_sample(class_id, a_t, cands, counts, matrix, split, space,
                                         images_per_class, rng);
                if (!sample.positives.empty() && !sample.negatives.empty())
                    ex.acl = std::move(sample);
            }
        }
        batch.examples.push_back(std::move(ex));
    }
    return batch;
}

Tensor ar_loss(const Tensor& v_attr, const Tensor& z_row) {
    return sum_all(square(sub(v_attr, z_row)));
}

Tensor cc_loss(const Tensor& v_attr, const Tensor& seen_z, int label_index) {
    if (label_index < 0 || label_index >= seen_z.rows())
        throw DataError("cc_loss: label outside the seen classes (data leak)");
    Tensor logits = matmul(seen_z, v_attr);
    return neg(at(log_softmax(logits, 0), label_index));
}

Tensor info_nce(const Tensor& pos_sim, const std::vector<Tensor>& neg_sims, double tau) {
    std::vector<Tensor> scaled;
    scaled.reserve(neg_sims.size() + 1);
    scaled.push_back(scale(pos_sim, 1.0 / tau));
    for (const auto& s : neg_sims) scaled.push_back(scale(s, 1.0 / tau));
    return neg(at(log_softmax(concat_scalars(scaled), 0), 0));
}

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
    Tensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

/// Pooled fused-language representation of one attribute's positions.
Tensor pooled_attr_state(const Tensor& fused_lan, const TokenSequence& seq, int attr_id) {
    std::vector<int> pos;
    for (size_t i = 0; i < seq.size(); ++i)
        if (seq.attr_ids[i] == attr_id) pos.push_back(static_cast<int>(i));
    if (pos.empty()) throw DataError("pooled_attr_state: attribute not realized");
    return mean_pool(rows(fused_lan, pos), 0);
}

/// Smallest-id attribute of the target's prompt set realizing the mutual
/// exclusion against the anchor class.
int negative_sibling(int anchor_class, int target_attr, int neg_class,
                     const ClassAttributeMatrix& matrix, const AttributeSpace& space) {
    const auto& prompt =
        space.prompts[static_cast<size_t>(space.attributes[static_cast<size_t>(target_attr)].prompt_id)];
    for (int a : prompt.member_ids) {
        if (a == target_attr) continue;
        if (matrix.member(neg_class, a) && !matrix.member(anchor_class, a)) return a;
    }
    throw DataError("negative_sibling: reference violates the ACL precondition");
}

struct RefEncoding {
    Tensor proj;       // H(pooled attribute state)
    int class_id = -1;
};

}  // namespace

BatchLosses compute_losses(const BatchContext& batch, const DuetModel& model,
                           const LossWeights& weights, const ClassAttributeMatrix& matrix,
                           const Split& split, const AttributeSpace& space,
                           const Vocabulary& vocab, const ImageLookup& images) {
    weights.validate();
    if (batch.examples.empty()) throw DataError("compute_losses: empty batch");

    // Seen-class semantic vectors, constants for the compatibility softmax.
    const int n_seen = static_cast<int>(split.seen.size());
    Mat seen_rows(n_seen, matrix.n_attributes());
    std::vector<int> seen_index(static_cast<size_t>(matrix.n_classes()), -1);
    for (int i = 0; i < n_seen; ++i) {
        seen_rows.row(i) = matrix.z.row(split.seen[static_cast<size_t>(i)]);
        seen_index[static_cast<size_t>(split.seen[static_cast<size_t>(i)])] = i;
    }
    Tensor seen_z = Tensor::from_matrix(seen_rows);

    std::vector<Tensor> cc_terms, ar_terms, cmr_terms, acl_terms;
    std::vector<Tensor> cls_projs;  // per-example H(v) for in-batch contrast
    std::vector<int> labels;
    int acl_skipped = 0;

    for (const auto& ex : batch.examples) {
        const Image& img = images(ex.class_id, ex.image_idx);
        Encoded enc = encode_pair(img, ex.seq, model);
        Tensor v_attr = image_to_attribute_vec(enc.vis_cls_state, model);
        Tensor z_row = Tensor::from_vector(matrix.z.row(ex.class_id).transpose());

        ar_terms.push_back(ar_loss(v_attr, z_row));
        if (seen_index[static_cast<size_t>(ex.class_id)] < 0)
            throw DataError("compute_losses: unseen label in training batch (data leak)");
        cc_terms.push_back(cc_loss(v_attr, seen_z, seen_index[static_cast<size_t>(ex.class_id)]));

        if (batch.stage == Stage::TCls) {
            cls_projs.push_back(project_head(enc.vis_cls_state, model));
            labels.push_back(ex.class_id);
            continue;
        }

        // ---- cross-modal mask reconstruction ----
        if (ex.targets.empty()) throw DataError("compute_losses: T_CSG example without targets");
        const double z_t = matrix.z(ex.class_id, ex.target_attr);
        if (!(z_t > matrix.theta_mem))
            throw DataError("compute_losses: masked target below theta_mem (sampler bug)");
        Tensor nll;
        for (size_t t = 0; t < ex.targets.size(); ++t) {
            const auto [pos, tok] = ex.targets[t];
            Tensor ls = log_softmax(token_logits(row(enc.fused_lan, pos), model), 0);
            Tensor term = neg(at(ls, tok));
            nll = (t == 0) ? term : add(nll, term);
        }
        cmr_terms.push_back(scale(nll, z_t));

        // ---- attribute-level contrast ----
        if (!ex.acl) {
            ++acl_skipped;
            continue;
        }
        std::vector<int> mask_pos;
        for (const auto& [pos, tok] : ex.targets) mask_pos.push_back(pos);
        Tensor anchor_proj =
            project_head(mean_pool(rows(enc.fused_lan, mask_pos), 0), model);

        auto encode_ref = [&](const AclRef& ref, int ref_attr) {
            auto run = [&] {
                TokenSequence ref_seq = serialize_class(ref.class_id, matrix, space, vocab);
                Encoded ref_enc = encode_pair(images(ref.class_id, ref.image_idx), ref_seq, model);
                return RefEncoding{
                    project_head(pooled_attr_state(ref_enc.fused_lan, ref_seq, ref_attr), model),
                    ref.class_id};
            };
            if (weights.acl_detach_refs) {
                NoGradGuard ng;
                return run();
            }
            return run();
        };

        std::vector<RefEncoding> pos_refs, neg_refs;
        for (const auto& r : ex.acl->positives) pos_refs.push_back(encode_ref(r, ex.target_attr));
        for (const auto& r : ex.acl->negatives)
            neg_refs.push_back(encode_ref(
                r, negative_sibling(ex.class_id, ex.target_attr, r.class_id, matrix, space)));

        std::vector<Tensor> neg_sims;
        for (const auto& nr : neg_refs)
            neg_sims.push_back(cosine_similarity(anchor_proj, nr.proj));
        std::vector<Tensor> per_positive;
        for (const auto& pr : pos_refs) {
            const double min_w =
                std::min(matrix.z(ex.class_id, ex.target_attr), matrix.z(pr.class_id, ex.target_attr));
            Tensor pos_sim = cosine_similarity(anchor_proj, pr.proj);
            per_positive.push_back(scale(info_nce(pos_sim, neg_sims, weights.tau), min_w));
        }
        acl_terms.push_back(mean_of(per_positive));
    }

    BatchLosses out;
    out.acl_skipped = acl_skipped;
    out.cc = mean_of(cc_terms);
    out.ar = mean_of(ar_terms);

    // Class-level supervised contrast over the in-batch projections.
    if (batch.stage == Stage::TCls) {
        std::vector<Tensor> anchor_losses;
        const int n = static_cast<int>(cls_projs.size());
        for (int i = 0; i < n; ++i) {
            std::vector<Tensor> pair_losses;
            std::vector<Tensor> neg_sims;
            for (int j = 0; j < n; ++j)
                if (labels[static_cast<size_t>(j)] != labels[static_cast<size_t>(i)])
                    neg_sims.push_back(cosine_similarity(cls_projs[static_cast<size_t>(i)],
                                                         cls_projs[static_cast<size_t>(j)]));
            for (int j = 0; j < n; ++j) {
                if (j == i || labels[static_cast<size_t>(j)] != labels[static_cast<size_t>(i)])
                    continue;
                Tensor pos_sim = cosine_similarity(cls_projs[static_cast<size_t>(i)],
                                                   cls_projs[static_cast<size_t>(j)]);
                pair_losses.push_back(info_nce(pos_sim, neg_sims, weights.tau));
            }
            if (!pair_losses.empty()) anchor_losses.push_back(mean_of(pair_losses));
        }
        out.con = anchor_losses.empty() ? Tensor::scalar(0.0) : mean_of(anchor_losses);
        out.cmr = Tensor::scalar(0.0);
        out.acl = Tensor::scalar(0.0);
        out.total = add(add(out.cc, scale(out.ar, weights.lambda_ar)),
                        scale(out.con, weights.lambda_con));
    } else {
        out.con = Tensor::scalar(0.0);
        out.cmr = mean_of(cmr_terms);
        out.acl = acl_terms.empty() ? Tensor::scalar(0.0) : mean_of(acl_terms);
        out.total = add(add(add(out.cc, scale(out.ar, weights.lambda_ar)),
                            scale(out.cmr, weights.lambda_cmr)),
                        scale(out.acl, weights.lambda_acl));
    }
    return out;
}

StepMetrics training_step(const BatchContext& batch, DuetModel& model,
                          const LossWeights& weights, const ClassAttributeMatrix& matrix,
                          const Split& split, const AttributeSpace& space,
                          const Vocabulary& vocab, const ImageLookup& images,
                          OptimizerState& opt_state) {
    StepMetrics m;
    m.stage = batch.stage;

    BatchLosses losses =
        compute_losses(batch, model, weights, matrix, split, space, vocab, images);
    m.cc = losses.cc.value();
    m.ar = losses.ar.value();
    m.con = losses.con.value();
    m.cmr = losses.cmr.value();
    m.acl = losses.acl.value();
    m.acl_skipped = losses.acl_skipped;
    m.loss = losses.total.value();
    if (!std::isfinite(m.loss)) {
        m.aborted = true;
        return m;
    }

    auto params = model.parameters();
    zero_grad(params);
    backward(losses.total);
    m.grad_norm = global_grad_norm(params);
    try {
        adamw_step(params, opt_state);
    } catch (const PoisonedStepError&) {
        m.aborted = true;  // parameters and state untouched by contract
    }
    m.step = opt_state.step;
    return m;
}

}  // namespace duet
