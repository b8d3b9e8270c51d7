#include "duet/sampling.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace duet {

namespace {

int weighted_pick(const std::vector<double>& weights, SeededRng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    assert(total > 0.0);
    const double r = rng.uniform() * total;
    double cum = 0.0;
    int last_positive = -1;
    for (size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        last_positive = static_cast<int>(i);
        cum += weights[i];
        if (r < cum) return static_cast<int>(i);
    }
    return last_positive;  // only reachable through rounding at the upper edge
}

/// k distinct uniform indices from [0, n).
std::vector<int> sample_indices(int n, int k, SeededRng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

int lwrs_sample(int class_id, const ClassAttributeMatrix& matrix, const Split& split,
                SeededRng& rng) {
    if (!split.is_seen(class_id)) throw DataError("lwrs_sample: class is not seen");
    const auto attrs = attribute_set_of(class_id, matrix);
    std::vector<double> weights;
    weights.reserve(attrs.size());
    for (int a : attrs) {
        int count = 0;
        for (int c : split.seen)
            if (matrix.member(c, a)) ++count;
        assert(count > 0);  // class_id itself is seen and holds a
        weights.push_back(1.0 / static_cast<double>(count));
    }
    return attrs[static_cast<size_t>(weighted_pick(weights, rng))];
}

std::vector<int> rap(const std::vector<int>& attrs, int target_attr, double r_rap,
                     SeededRng& rng, bool fixed_size) {
    if (!(r_rap >= 0.0 && r_rap <= 1.0)) throw ConfigError("rap: pruning ratio outside [0,1]");
    if (std::find(attrs.begin(), attrs.end(), target_attr) == attrs.end())
        throw DataError("rap: target attribute not present");

    std::vector<int> others;
    for (int a : attrs)
        if (a != target_attr) others.push_back(a);

    std::vector<int> kept{target_attr};
    if (fixed_size) {
        const int n_keep = static_cast<int>(
            std::llround((1.0 - r_rap) * static_cast<double>(others.size())));
        for (int i : sample_indices(static_cast<int>(others.size()), n_keep, rng))
            kept.push_back(others[static_cast<size_t>(i)]);
    } else {
        for (int a : others)
            if (rng.uniform() >= r_rap) kept.push_back(a);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

namespace {

/// The mutually exclusive sibling condition behind the negative pool:
/// some a' of the target's prompt set with a' != a_t, a' held by the
/// candidate, a' not held by the anchor, and a_t not held by the candidate.
bool has_exclusive_sibling(int anchor, int target_attr, int candidate,
                           const ClassAttributeMatrix& matrix, const AttributeSpace& space) {
    if (matrix.member(candidate, target_attr)) return false;
    const auto& prompt =
        space.prompts[static_cast<size_t>(space.attributes[static_cast<size_t>(target_attr)].prompt_id)];
    for (int sibling : prompt.member_ids) {
        if (sibling == target_attr) continue;
        if (matrix.member(candidate, sibling) && !matrix.member(anchor, sibling)) return true;
    }
    return false;
}

}  // namespace

bool acl_precondition(int class_id, int target_attr, int candidate, bool as_positive,
                      const ClassAttributeMatrix& matrix, const Split& split,
                      const AttributeSpace& space) {
    if (candidate == class_id || !split.is_seen(candidate)) return false;
    if (as_positive) return matrix.member(candidate, target_attr);
    if (!has_exclusive_sibling(class_id, target_attr, candidate, matrix, space)) return false;
    return class_distance(class_id, candidate, matrix).dist > 0.0;
}

AclCandidates acl_candidates(int class_id, int target_attr, const ClassAttributeMatrix& matrix,
                             const Split& split, const AttributeSpace& space) {
    if (!matrix.member(class_id, target_attr))
        throw DataError("acl_candidates: target attribute not held by the class");
    AclCandidates out;
    for (int c : split.seen) {
        if (c == class_id) continue;
        if (matrix.member(c, target_attr)) {
            out.positives.push_back(c);
        } else if (acl_precondition(class_id, target_attr, c, false, matrix, split, space)) {
            out.negatives.push_back(c);
        }
    }
    return out;
}

std::vector<double> normalized_squares(const std::vector<double>& values) {
    std::vector<double> out(values.size(), 0.0);
    double total = 0.0;
    for (double v : values) total += v * v;
    if (total <= 0.0) return out;
    for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] * values[i] / total;
    return out;
}

AclSample acl_sample(int class_id, int target_attr, const AclCandidates& candidates,
                     const AclCounts& counts, const ClassAttributeMatrix& matrix,
                     const Split& split, const AttributeSpace& space, int images_per_class,
                     SeededRng& rng) {
    AclSample out;
    out.anchor_class = class_id;
    out.target_attr = target_attr;

    auto draw_side = [&](const std::vector<int>& pool, int want, bool positive_side,
                         std::vector<AclRef>& refs) {
        std::vector<double> weights;
        weights.reserve(pool.size());
        for (int c : pool) {
            const auto d = class_distance(class_id, c, matrix);
            // Negatives favour similar classes, positives distant ones.
            weights.push_back(positive_side ? d.dist * d.dist
                                            : (d.sim ? *d.sim * *d.sim : 0.0));
        }
        double total = 0.0;
        for (double w : weights) total += w;
        std::vector<int> chosen;
        auto remaining = weights;
        while (static_cast<int>(chosen.size()) < want && total > 0.0) {
            const int i = weighted_pick(remaining, rng);
            chosen.push_back(pool[static_cast<size_t>(i)]);
            total -= remaining[static_cast<size_t>(i)];
            remaining[static_cast<size_t>(i)] = 0.0;
        }
        if (static_cast<int>(chosen.size()) < want) out.short_sample = true;

        for (int c : chosen) {
            if (!acl_precondition(class_id, target_attr, c, positive_side, matrix, split, space))
                throw DataError("acl_sample: drawn reference violates the precondition");
            const int k = std::min(counts.images_per_class, images_per_class);
            if (k < counts.images_per_class) out.short_sample = true;
            for (int idx : sample_indices(images_per_class, k, rng)) refs.push_back({c, idx});
        }
    };

    draw_side(candidates.positives, counts.n_pos_classes, true, out.positives);
    draw_side(candidates.negatives, counts.n_neg_classes, false, out.negatives);
    return out;
}

Stage task_switch(double rho, SeededRng& rng) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("task_switch: rho outside [0,1]");
    return rng.uniform() < rho ? Stage::TCsg : Stage::TCls;
}

}  // namespace duet
