#pragma once

#include <vector>

#include "duet/attrspace.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Multi-task stage: plain classification or cross-modal semantic grounding.
enum class Stage { TCls, TCsg };

/// Target-attribute draw weighted inversely to seen-class frequency: inside
/// the class's attribute set, P(a_j) ~ 1 / #{seen classes holding a_j}.
int lwrs_sample(int class_id, const ClassAttributeMatrix& matrix, const Split& split,
                SeededRng& rng);

/// Random attribute pruning. Keeps the target; every other attribute is
/// independently dropped with probability r_rap. The fixed-size variant keeps
/// round((1-r_rap) * n_others) uniformly chosen non-targets instead.
std::vector<int> rap(const std::vector<int>& attrs, int target_attr, double r_rap,
                     SeededRng& rng, bool fixed_size = false);

struct AclCandidates {
    std::vector<int> positives;  // seen classes sharing the target attribute
    std::vector<int> negatives;  // seen classes with a mutually exclusive sibling
};

/// Candidate reference classes for attribute-level contrast around
/// (class_id, target_attr). Positives share the target; negatives hold some
/// other attribute of the target's prompt set under mutual exclusion.
/// Attribute-identical classes (zero Manhattan distance) never enter the
/// negative pool.
AclCandidates acl_candidates(int class_id, int target_attr, const ClassAttributeMatrix& matrix,
                             const Split& split, const AttributeSpace& space);

/// Pure re-statement of the candidate predicate, used to re-validate samples.
bool acl_precondition(int class_id, int target_attr, int candidate, bool as_positive,
                      const ClassAttributeMatrix& matrix, const Split& split,
                      const AttributeSpace& space);

struct AclRef {
    int class_id = -1;
    int image_idx = -1;
    bool operator==(const AclRef&) const = default;
};

struct AclSample {
    int anchor_class = -1;
    int target_attr = -1;
    std::vector<AclRef> positives;
    std::vector<AclRef> negatives;
    bool short_sample = false;  // a requested count exceeded its pool
};

struct AclCounts {
    int n_pos_classes = 1;
    int n_neg_classes = 2;
    int images_per_class = 1;
};

/// Draws reference classes without replacement (negatives ~ Sim^2,
/// positives ~ Dist^2) and reference images uniformly without replacement
/// within each class. Every drawn reference is re-checked against the
/// precondition.
AclSample acl_sample(int class_id, int target_attr, const AclCandidates& candidates,
                     const AclCounts& counts, const ClassAttributeMatrix& matrix,
                     const Split& split, const AttributeSpace& space, int images_per_class,
                     SeededRng& rng);

/// P(i) = v_i^2 / sum v^2; the reference-class sampling law.
std::vector<double> normalized_squares(const std::vector<double>& values);

/// T_CSG with probability rho, T_CLS otherwise.
Stage task_switch(double rho, SeededRng& rng);

}  // namespace duet
