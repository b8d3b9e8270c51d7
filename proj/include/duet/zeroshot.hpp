#pragma once

#include <optional>
#include <string>
#include <vector>

#include "duet/losses.hpp"
#include "duet/model.hpp"

namespace duet {

struct EvalItem {
    int class_id = -1;
    int image_idx = -1;
};

/// Shared read-only inference state. The prompt-template language states are
/// encoded once and reused for every image; forward passes run without a tape.
struct Predictor {
    const DuetModel* model = nullptr;
    TokenSequence template_seq;
    Tensor template_states;  // pre-cross language states of the template

    static Predictor make(const DuetModel& model, const AttributeSpace& space,
                          const Vocabulary& vocab);

    /// v~ for one image (with the fixed template on the language side).
    Vec attribute_scores(const Image& image) const;
};

/// argmax over candidates of v.z^c - gamma * [c seen]; ties break toward the
/// smallest class id.
int predict_from_scores(const Vec& v_attr, const ClassAttributeMatrix& matrix,
                        const std::vector<int>& candidates, const Split& split, double gamma);

int predict(const Image& image, const Predictor& predictor, const ClassAttributeMatrix& matrix,
            const std::vector<int>& candidates, const Split& split, double gamma);

enum class EvalMode { Czsl, Gzsl };

struct PerClassStat {
    int class_id = -1;
    std::string name;
    long n = 0;
    long correct = 0;
    double accuracy = 0.0;  // percent
};

struct EvalReport {
    EvalMode mode = EvalMode::Czsl;
    std::optional<double> gamma;  // empty in CZSL: the factor is unused there
    double t1 = 0.0;
    double unseen_acc = 0.0, seen_acc = 0.0, harmonic = 0.0;
    bool degenerate_harmonic = false;
    long n_images = 0;
    long seen_predictions = 0;  // images predicted as a seen class
    std::vector<PerClassStat> per_class;
    std::vector<int> excluded_classes;  // candidate classes with zero test images

    std::string to_json() const;
};

/// 2SU/(S+U); defined as 0 when both accuracies vanish.
double harmonic_mean(double u, double s);

/// Class-averaged (macro) accuracies over the test items. CZSL restricts
/// candidates to unseen classes; GZSL scores every class and applies gamma.
EvalReport evaluate(const std::vector<EvalItem>& test_items, const Predictor& predictor,
                    const ClassAttributeMatrix& matrix, const Split& split, EvalMode mode,
                    double gamma, const ImageLookup& images);

/// evaluate() over precomputed attribute vectors (index-aligned with items).
EvalReport evaluate_scores(const std::vector<EvalItem>& test_items, const std::vector<Vec>& scores,
                           const ClassAttributeMatrix& matrix, const Split& split, EvalMode mode,
                           double gamma);

struct GroundingEntry {
    int attr_id = -1;
    std::string surface;
    double score = 0.0;  // normalized over the selected top-k
};

struct GroundingReport {
    int k = 3;
    std::vector<std::string> prompt_names;
    std::vector<std::vector<GroundingEntry>> per_prompt;

    std::string to_json() const;
};

/// Masked-probe attribute readout: one [MASK] per prompt name, token logits
/// restricted to that prompt's member-attribute tokens, token scores
/// accumulated per attribute, top-k kept and normalized.
GroundingReport ground_attributes(const Image& image, const DuetModel& model,
                                  const AttributeSpace& space, const Vocabulary& vocab, int k);

struct GammaTuning {
    double best_gamma = 0.0;
    double best_h = 0.0;
    std::vector<std::pair<double, double>> curve;  // (gamma, harmonic mean)
};

/// Calibration on held-out seen-class images: the pseudo-unseen classes play
/// the unseen role, candidates stay the seen classes, and the first grid
/// point attaining the maximal harmonic mean wins.
GammaTuning tune_gamma(const std::vector<EvalItem>& val_items,
                       const std::vector<int>& pseudo_unseen, const Predictor& predictor,
                       const ClassAttributeMatrix& matrix, const Split& split,
                       const std::vector<double>& grid, const ImageLookup& images);

std::vector<double> default_gamma_grid();  // {0, 0.1, ..., 1.5}

/// Deterministic image splits: per seen class the last (1 - train_fraction)
/// of images are test, the last fifth of the remaining pool is the
/// calibration holdout, and the rest train. Unseen classes are test-only.
/// A quarter of the seen classes (seeded draw) act as pseudo-unseen for
/// gamma tuning.
struct ImageSplits {
    std::vector<std::pair<int, int>> train_items;
    std::vector<EvalItem> test_items;
    std::vector<EvalItem> val_items;
    std::vector<int> pseudo_unseen;
    int train_images_per_class = 0;  // size of the per-class training pool
};

ImageSplits make_image_splits(const Split& split, int images_per_class, double train_fraction,
                              std::uint64_t seed);

/// Worker cap from DUET_THREADS (default 1).
int worker_count();

}  // namespace duet
