#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "iqgen/ann_index.hpp"
#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/world.hpp"

namespace iqgen {

// Per-rollout reward components, each in [0,1], and their weighted sum.
struct RewardVector {
    double r_align = 0.0;   // retrieval alignment: how well queries hit the corpus
    double r_cov = 0.0;     // theme coverage of the user's informative behaviors
    double r_spec = 0.0;    // fraction of queries that are specific, not generic
    double r_div = 0.0;     // average pairwise embedding distance between queries
    double r_struct = 0.0;  // 1 iff the rollout parses as a well-formed list
    double composite = 0.0;
};

// Deterministic rubric scorer. Pure and read-only after construction, so
// rollouts may be scored from any number of threads concurrently.
class RewardScorer {
  public:
    RewardScorer(const World& world, const Embedder& embedder, const ArticleIndex& index,
                 const RewardConfig& cfg);

    // Scores a parsed rollout for one user. Invalid parses get all-zero
    // components (including the weighted sum), so unparseable text earns
    // nothing from any criterion.
    RewardVector score(const UserRecord& user, const ParsedQueryList& parsed,
                       const Vocab& vocab) const;

    // Same rubric over plain query strings; `well_formed` feeds r_struct.
    RewardVector score_strings(const UserRecord& user, const std::vector<std::string>& queries,
                               bool well_formed) const;

    double alignment(const std::vector<std::string>& queries) const;
    double coverage(const UserRecord& user, const std::vector<std::string>& queries) const;
    double specificity(const std::vector<std::string>& queries) const;
    double diversity(const std::vector<std::string>& queries) const;

    // Weighted sum of a component vector; fills `composite`.
    void combine(RewardVector& rv) const;

  private:
    const Embedder* embedder_;
    const ArticleIndex* index_;
    RewardConfig cfg_;
    std::unordered_map<std::string, int> specific_topic_;  // specific term -> topic id
    std::unordered_map<std::string, int> entity_topic_;    // entity term -> topic id
};

}  // namespace iqgen
