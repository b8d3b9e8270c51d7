#include "duet/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"

namespace duet {

namespace {
using ordered_json = nlohmann::ordered_json;
}

Predictor Predictor::make(const DuetModel& model, const AttributeSpace& space,
                          const Vocabulary& vocab) {
    Predictor p;
    p.model = &model;
    p.template_seq = prompt_template(space, vocab);
    NoGradGuard ng;
    p.template_states = encode_text(p.template_seq, model);
    return p;
}

Vec Predictor::attribute_scores(const Image& image) const {
    NoGradGuard ng;
    Tensor vis_full = encode_image(image, *model);
    Tensor vis_in = model->config.cross_full_patches ? vis_full : rows(vis_full, {0});
    auto [fused_vis, fused_lan] = cross_layers(vis_in, template_states, *model);
    return image_to_attribute_vec(row(fused_vis, 0), *model).vec();
}

int predict_from_scores(const Vec& v_attr, const ClassAttributeMatrix& matrix,
                        const std::vector<int>& candidates, const Split& split, double gamma) {
    if (candidates.empty()) throw ConfigError("predict: empty candidate set");
    int best = -1;
    double best_score = 0.0;
    for (int c : candidates) {
        if (c < 0 || c >= matrix.n_classes()) throw DataError("predict: candidate out of range");
        double score = matrix.z.row(c).dot(v_attr);
        if (split.is_seen(c)) score -= gamma;
        if (best == -1 || score > best_score) {
            best = c;
            best_score = score;
        }
    }
    return best;
}

int predict(const Image& image, const Predictor& predictor, const ClassAttributeMatrix& matrix,
            const std::vector<int>& candidates, const Split& split, double gamma) {
    return predict_from_scores(predictor.attribute_scores(image), matrix, candidates, split,
                               gamma);
}

double harmonic_mean(double u, double s) {
    if (u < 0 || s < 0) throw ConfigError("harmonic_mean: negative accuracy");
    if (u + s == 0.0) return 0.0;
    return 2.0 * s * u / (s + u);
}

int worker_count() {
    const char* env = std::getenv("DUET_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

namespace {

std::vector<Vec> batched_scores(const std::vector<EvalItem>& items, const Predictor& predictor,
                                const ImageLookup& images) {
    std::vector<Vec> scores(items.size());
    const int workers =
        std::max(1, std::min(worker_count(), static_cast<int>(items.size())));
    if (workers == 1) {
        for (size_t i = 0; i < items.size(); ++i)
            scores[i] = predictor.attribute_scores(images(items[i].class_id, items[i].image_idx));
        return scores;
    }
    // Contiguous shards; each slot written by exactly one worker, so the
    // merged result is independent of the worker count.
    std::vector<std::thread> pool;
    const size_t chunk = (items.size() + workers - 1) / static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        const size_t lo = static_cast<size_t>(w) * chunk;
        const size_t hi = std::min(items.size(), lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            for (size_t i = lo; i < hi; ++i)
                scores[i] =
                    predictor.attribute_scores(images(items[i].class_id, items[i].image_idx));
        });
    }
    for (auto& t : pool) t.join();
    return scores;
}

}  // namespace

EvalReport evaluate_scores(const std::vector<EvalItem>& test_items, const std::vector<Vec>& scores,
                           const ClassAttributeMatrix& matrix, const Split& split, EvalMode mode,
                           double gamma) {
    if (test_items.size() != scores.size())
        throw ShapeError("evaluate_scores: item/score count mismatch");
    if (test_items.empty()) throw DataError("evaluate_scores: no test images");

    std::vector<int> candidates;
    if (mode == EvalMode::Czsl) {
        candidates = split.unseen;
    } else {
        candidates.resize(static_cast<size_t>(matrix.n_classes()));
        for (int c = 0; c < matrix.n_classes(); ++c) candidates[static_cast<size_t>(c)] = c;
    }
    if (candidates.empty()) throw ConfigError("evaluate: empty candidate set");

    std::map<int, PerClassStat> stats;
    long seen_predictions = 0;
    for (size_t i = 0; i < test_items.size(); ++i) {
        const auto& item = test_items[i];
        auto& st = stats[item.class_id];
        st.class_id = item.class_id;
        st.name = matrix.class_names[static_cast<size_t>(item.class_id)];
        ++st.n;
        const int pred = predict_from_scores(scores[i], matrix, candidates, split, gamma);
        if (pred == item.class_id) ++st.correct;
        if (split.is_seen(pred)) ++seen_predictions;
    }

    EvalReport report;
    report.mode = mode;
    if (mode == EvalMode::Gzsl) report.gamma = gamma;
    report.n_images = static_cast<long>(test_items.size());
    report.seen_predictions = seen_predictions;
    for (auto& [c, st] : stats) {
        st.accuracy = 100.0 * static_cast<double>(st.correct) / static_cast<double>(st.n);
        report.per_class.push_back(st);
    }
    for (int c : candidates)
        if (!stats.count(c)) report.excluded_classes.push_back(c);

    auto macro = [&](const std::vector<int>& classes) {
        double acc = 0.0;
        long counted = 0;
        for (int c : classes) {
            auto it = stats.find(c);
            if (it == stats.end()) continue;
            acc += it->second.accuracy;
            ++counted;
        }
        return counted == 0 ? 0.0 : acc / static_cast<double>(counted);
    };

    if (mode == EvalMode::Czsl) {
        report.t1 = macro(split.unseen);
    } else {
        report.unseen_acc = macro(split.unseen);
        report.seen_acc = macro(split.seen);
        report.harmonic = harmonic_mean(report.unseen_acc, report.seen_acc);
        report.degenerate_harmonic = (report.unseen_acc + report.seen_acc == 0.0);
    }
    return report;
}

EvalReport evaluate(const std::vector<EvalItem>& test_items, const Predictor& predictor,
                    const ClassAttributeMatrix& matrix, const Split& split, EvalMode mode,
                    double gamma, const ImageLookup& images) {
    return evaluate_scores(test_items, batched_scores(test_items, predictor, images), matrix,
                           split, mode, gamma);
}

std::string EvalReport::to_json() const {
    ordered_json j;
    j["mode"] = (mode == EvalMode::Czsl) ? "czsl" : "gzsl";
    if (gamma) {
        j["gamma"] = *gamma;
    } else {
        j["gamma"] = nullptr;
        j["note"] = "gamma unused: czsl candidates contain no seen class";
    }
    j["n_images"] = n_images;
    j["seen_predictions"] = seen_predictions;
    if (mode == EvalMode::Czsl) {
        j["aggregates"] = {{"T1", t1}};
    } else {
        j["aggregates"] = {{"U", unseen_acc}, {"S", seen_acc}, {"H", harmonic}};
        j["degenerate_harmonic"] = degenerate_harmonic;
    }
    j["excluded_classes"] = excluded_classes;
    auto& pc = j["per_class"] = ordered_json::array();
    for (const auto& st : per_class)
        pc.push_back({{"class_id", st.class_id},
                      {"name", st.name},
                      {"n", st.n},
                      {"correct", st.correct},
                      {"accuracy", st.accuracy}});
    return j.dump(2) + "\n";
}

GroundingReport ground_attributes(const Image& image, const DuetModel& model,
                                  const AttributeSpace& space, const Vocabulary& vocab, int k) {
    if (k < 1) throw ConfigError("ground_attributes: k must be positive");
    NoGradGuard ng;
    auto probe = grounding_template(space, vocab);
    Encoded enc = encode_pair(image, probe.seq, model);

    GroundingReport report;
    report.k = k;
    for (const auto& ps : space.prompts) {
        report.prompt_names.push_back(ps.name());
        Tensor logits = token_logits(row(enc.fused_lan, probe.mask_pos[static_cast<size_t>(ps.id)]),
                                     model);

        // Candidate tokens: every word of the prompt's member surfaces.
        std::set<int> cand_tokens;
        for (int a : ps.member_ids)
            for (const auto& w : space.attributes[static_cast<size_t>(a)].surface_words)
                cand_tokens.insert(vocab.id(w));

        // Restricted softmax over the candidate tokens.
        double mx = -1e300;
        for (int t : cand_tokens) mx = std::max(mx, logits.flat()[t]);
        std::map<int, double> token_prob;
        double total = 0.0;
        for (int t : cand_tokens) {
            const double e = std::exp(logits.flat()[t] - mx);
            token_prob[t] = e;
            total += e;
        }
        for (auto& [t, p] : token_prob) p /= total;

        // Token scores accumulate into every attribute realizing the token.
        std::vector<GroundingEntry> entries;
        for (int a : ps.member_ids) {
            GroundingEntry e;
            e.attr_id = a;
            e.surface = space.attributes[static_cast<size_t>(a)].surface();
            for (const auto& w : space.attributes[static_cast<size_t>(a)].surface_words)
                e.score += token_prob.at(vocab.id(w));
            entries.push_back(std::move(e));
        }
        std::stable_sort(entries.begin(), entries.end(),
                         [](const auto& a, const auto& b) { return a.score > b.score; });
        if (static_cast<int>(entries.size()) > k) entries.resize(static_cast<size_t>(k));
        double sum = 0.0;
        for (const auto& e : entries) sum += e.score;
        for (auto& e : entries) e.score /= sum;
        report.per_prompt.push_back(std::move(entries));
    }
    return report;
}

std::string GroundingReport::to_json() const {
    ordered_json j;
    j["k"] = k;
    auto& prompts = j["prompts"] = ordered_json::array();
    for (size_t p = 0; p < prompt_names.size(); ++p) {
        ordered_json entry;
        entry["prompt"] = prompt_names[p];
        auto& attrs = entry["top_attributes"] = ordered_json::array();
        for (const auto& e : per_prompt[p])
            attrs.push_back(
                {{"attr_id", e.attr_id}, {"surface", e.surface}, {"score", e.score}});
        prompts.push_back(std::move(entry));
    }
    return j.dump(2) + "\n";
}

GammaTuning tune_gamma(const std::vector<EvalItem>& val_items,
                       const std::vector<int>& pseudo_unseen, const Predictor& predictor,
                       const ClassAttributeMatrix& matrix, const Split& split,
                       const std::vector<double>& grid, const ImageLookup& images) {
    if (grid.empty()) throw ConfigError("tune_gamma: empty grid");
    if (val_items.empty()) throw DataError("tune_gamma: no validation images");

    // The tuning pass relabels pseudo-unseen classes as unseen; candidates
    // stay the seen classes.
    Split pseudo;
    std::set<int> pu(pseudo_unseen.begin(), pseudo_unseen.end());
    for (int c : split.seen) (pu.count(c) ? pseudo.unseen : pseudo.seen).push_back(c);

    auto scores = batched_scores(val_items, predictor, images);
    std::vector<int> candidates = split.seen;

    GammaTuning out;
    bool first = true;
    for (double gamma : grid) {
        std::map<int, std::pair<long, long>> per_class;  // correct, n
        for (size_t i = 0; i < val_items.size(); ++i) {
            auto& [correct, n] = per_class[val_items[i].class_id];
            ++n;
            if (predict_from_scores(scores[i], matrix, candidates, pseudo, gamma) ==
                val_items[i].class_id)
                ++correct;
        }
        auto macro = [&](const std::vector<int>& classes) {
            double acc = 0.0;
            long counted = 0;
            for (int c : classes) {
                auto it = per_class.find(c);
                if (it == per_class.end()) continue;
                acc += 100.0 * static_cast<double>(it->second.first) /
                       static_cast<double>(it->second.second);
                ++counted;
            }
            return counted == 0 ? 0.0 : acc / static_cast<double>(counted);
        };
        const double h = harmonic_mean(macro(pseudo.unseen), macro(pseudo.seen));
        out.curve.emplace_back(gamma, h);
        if (first || h > out.best_h) {
            out.best_gamma = gamma;
            out.best_h = h;
            first = false;
        }
    }
    return out;
}

std::vector<double> default_gamma_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 15; ++i) grid.push_back(0.1 * i);
    return grid;
}

ImageSplits make_image_splits(const Split& split, int images_per_class, double train_fraction,
                              std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("make_image_splits: train fraction outside (0,1)");
    ImageSplits out;
    const int n_train_pool = std::max(
        1, std::min(images_per_class - 1,
                    static_cast<int>(std::llround(train_fraction * images_per_class))));
    const int n_val = std::max(1, n_train_pool / 5);
    out.train_images_per_class = n_train_pool;

    for (int c : split.seen) {
        for (int i = 0; i < n_train_pool - n_val; ++i) out.train_items.emplace_back(c, i);
        for (int i = n_train_pool - n_val; i < n_train_pool; ++i)
            out.val_items.push_back({c, i});
        for (int i = n_train_pool; i < images_per_class; ++i) out.test_items.push_back({c, i});
    }
    for (int c : split.unseen)
        for (int i = 0; i < images_per_class; ++i) out.test_items.push_back({c, i});

    // A quarter of the seen classes act as pseudo-unseen during calibration.
    const int n_pseudo =
        std::max(1, static_cast<int>(std::llround(0.25 * static_cast<double>(split.seen.size()))));
    std::vector<int> ids = split.seen;
    SeededRng rng = SeededRng::derive(seed, {0x67616d6d61ULL});  // calibration stream
    for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
    out.pseudo_unseen.assign(ids.begin(), ids.begin() + n_pseudo);
    std::sort(out.pseudo_unseen.begin(), out.pseudo_unseen.end());
    return out;
}

}  // namespace duet
