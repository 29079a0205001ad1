#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/world.hpp"

// Behavior cleaning: a rule-based oracle encodes the keep/filter rubric
// (navigational words, login phrases, bare URLs, digit strings, and payloads
// made up entirely of generic words are noise); a logistic regression over
// payload embeddings is trained against the oracle and used to produce the
// cleaned behavior set per user.

namespace iqgen {

// 1 = keep (meaningful informational interest), 0 = filter.
int oracle_label(std::string_view payload);

struct FilterModel {
    Vec weights;
    double bias = 0.0;
    double threshold = 0.5;

    double score(const Vec& x) const;  // sigmoid(w.x + b)
    int predict(const Vec& x) const { return score(x) >= threshold ? 1 : 0; }

    // Plain-text model file.
    void save(const std::string& path) const;
    static FilterModel load(const std::string& path);
};

struct FilterReport {
    int train_count = 0;
    int holdout_count = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Full-batch gradient descent on oracle-labeled payload embeddings; reports
// held-out metrics. Throws InputError on <100 labeled behaviors or a bad
// split, TrainError on a single-class training set.
FilterModel train_filter(const World& world, const Embedder& embedder, const FilterConfig& cfg,
                         FilterReport* report = nullptr);

// Keeps behaviors the model accepts, in original order; if everything is
// rejected, falls back to the single highest-scoring behavior.
std::vector<BehaviorEvent> clean(const UserRecord& user, const FilterModel& model,
                                 const Embedder& embedder);

}  // namespace iqgen
