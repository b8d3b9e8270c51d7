#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "duet/attrspace.hpp"
#include "duet/fst.hpp"
#include "duet/image.hpp"
#include "duet/model.hpp"
#include "duet/sampling.hpp"

namespace duet {

using ImageLookup = std::function<const Image&(int class_id, int image_idx)>;

struct LossWeights {
    double lambda_ar = 0.01;
    double lambda_con = 0.05;
    double lambda_cmr = 1.0;
    double lambda_acl = 0.01;
    double tau = 0.05;
    double rho = 0.4;
    double r_rap = 0.5;
    bool rap_fixed_size = false;
    bool acl_detach_refs = false;

    void validate() const;
};

/// One example of a prepared step: the anchor image, its stage input sequence
/// (fixed template at T_CLS; masked RAP'd serialization at T_CSG) and, at
/// T_CSG, the reconstruction targets and attribute-level references.
struct BatchExample {
    int class_id = -1;
    int image_idx = -1;
    TokenSequence seq;
    std::vector<std::pair<int, int>> targets;  // (position, original token id)
    int target_attr = -1;
    std::optional<AclSample> acl;
};

struct BatchContext {
    Stage stage = Stage::TCls;
    std::vector<BatchExample> examples;
};

/// Samples everything stochastic for one step: LWRS target, RAP pruning,
/// masking and ACL references. At T_CLS every example carries the template.
BatchContext prepare_batch(Stage stage, const std::vector<std::pair<int, int>>& items,
                           const ClassAttributeMatrix& matrix, const Split& split,
                           const AttributeSpace& space, const Vocabulary& vocab,
                           const LossWeights& weights, const AclCounts& counts,
                           int images_per_class, SeededRng& rng);

// ---- loss primitives (model-free; the spec's worked examples) ----

/// Squared L2 regression of an attribute vector onto its class degrees.
Tensor ar_loss(const Tensor& v_attr, const Tensor& z_row);

/// Cross entropy of compatibility scores v.z^c over the seen classes.
Tensor cc_loss(const Tensor& v_attr, const Tensor& seen_z, int label_index);

/// -log of the InfoNCE ratio given a positive similarity and negative
/// similarities (cosine values as scalar tensors).
Tensor info_nce(const Tensor& pos_sim, const std::vector<Tensor>& neg_sims, double tau);

// ---- batch losses ----

struct BatchLosses {
    Tensor total;
    Tensor cc, ar, con, cmr, acl;
    int acl_skipped = 0;  // T_CSG examples whose ACL term was unavailable
};

/// Forwards every example once and assembles the stage composite:
/// T_CLS: L_cc + lambda_ar*L_ar + lambda_con*L_con;
/// T_CSG: L_cc + lambda_ar*L_ar + lambda_cmr*L_cmr + lambda_acl*L_acl.
BatchLosses compute_losses(const BatchContext& batch, const DuetModel& model,
                           const LossWeights& weights, const ClassAttributeMatrix& matrix,
                           const Split& split, const AttributeSpace& space,
                           const Vocabulary& vocab, const ImageLookup& images);

struct StepMetrics {
    long step = 0;
    Stage stage = Stage::TCls;
    double loss = 0, cc = 0, ar = 0, con = 0, cmr = 0, acl = 0;
    double grad_norm = 0;
    int acl_skipped = 0;
    bool aborted = false;  // non-finite loss; parameters untouched
};

/// One optimizer step over the prepared batch. A non-finite loss aborts the
/// step (flagged in the metrics) and leaves parameters and state unchanged.
StepMetrics training_step(const BatchContext& batch, DuetModel& model,
                          const LossWeights& weights, const ClassAttributeMatrix& matrix,
                          const Split& split, const AttributeSpace& space,
                          const Vocabulary& vocab, const ImageLookup& images,
                          OptimizerState& opt_state);

}  // namespace duet
