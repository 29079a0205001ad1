#include "iqgen/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "iqgen/errors.hpp"
#include "iqgen/text.hpp"

namespace iqgen {

RewardScorer::RewardScorer(const World& world, const Embedder& embedder,
                           const ArticleIndex& index, const RewardConfig& cfg)
    : embedder_(&embedder), index_(&index), cfg_(cfg) {
    const double sum = cfg.lambda_align + cfg.lambda_cov + cfg.lambda_spec + cfg.lambda_div +
                       cfg.lambda_struct;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("reward weights must sum to 1 (got " + std::to_string(sum) + ")");
    for (double l : {cfg.lambda_align, cfg.lambda_cov, cfg.lambda_spec, cfg.lambda_div,
                     cfg.lambda_struct})
        if (l < 0.0) throw ConfigError("reward weights must be >= 0");
    if (cfg.top_k < 1) throw ConfigError("rewards top_k must be >= 1");

    for (const Topic& t : world.topics) {
        for (const std::string& w : t.specific_terms) specific_topic_[w] = t.id;
        for (const std::string& w : t.entity_terms) entity_topic_[w] = t.id;
    }
}

double RewardScorer::alignment(const std::vector<std::string>& queries) const {
    if (queries.empty()) return 0.0;
    double total = 0.0;
    for (const std::string& q : queries) {
        const Vec e = embedder_->embed(q);
        const std::vector<SearchHit> hits = index_->query(e, cfg_.top_k);
        double mean = 0.0;
        for (const SearchHit& h : hits) mean += std::max(0.0, h.score);
        if (!hits.empty()) mean /= static_cast<double>(hits.size());
        total += mean;
    }
    return total / static_cast<double>(queries.size());
}

double RewardScorer::coverage(const UserRecord& user,
                              const std::vector<std::string>& queries) const {
    const std::vector<int> themes = informative_topics(user.behaviors);
    if (themes.empty()) return 0.0;
    // Topic ids whose specific terms appear in at least one query.
    std::vector<int> hit;
    for (const std::string& q : queries) {
        for (const std::string& tok : tokenize(q)) {
            auto it = specific_topic_.find(tok);
            if (it != specific_topic_.end()) hit.push_back(it->second);
        }
    }
    double covered = 0.0;
    for (int theme : themes)
        if (std::find(hit.begin(), hit.end(), theme) != hit.end()) covered += 1.0;
    return covered / static_cast<double>(themes.size());
}

double RewardScorer::specificity(const std::vector<std::string>& queries) const {
    if (queries.empty()) return 0.0;
    double total = 0.0;
    for (const std::string& q : queries) {
        bool has_topic_term = false;
        bool all_generic = true;
        for (const std::string& tok : tokenize(q)) {
            if (specific_topic_.count(tok) || entity_topic_.count(tok)) has_topic_term = true;
            if (!is_generic_word(tok)) all_generic = false;
        }
        if (has_topic_term && !all_generic) total += 1.0;
    }
    return total / static_cast<double>(queries.size());
}

double RewardScorer::diversity(const std::vector<std::string>& queries) const {
    const size_t n = queries.size();
    if (n < 2) return 0.0;
    std::vector<Vec> embeds;
    embeds.reserve(n);
    for (const std::string& q : queries) embeds.push_back(embedder_->embed(q));
    double total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            total += (1.0 - cosine(embeds[i], embeds[j])) / 2.0;
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

void RewardScorer::combine(RewardVector& rv) const {
    rv.composite = cfg_.lambda_align * rv.r_align + cfg_.lambda_cov * rv.r_cov +
                   cfg_.lambda_spec * rv.r_spec + cfg_.lambda_div * rv.r_div +
                   cfg_.lambda_struct * rv.r_struct;
}

RewardVector RewardScorer::score_strings(const UserRecord& user,
                                         const std::vector<std::string>& queries,
                                         bool well_formed) const {
    RewardVector rv;
    if (!well_formed) return rv;  // unparseable output earns nothing
    rv.r_struct = 1.0;
    rv.r_align = alignment(queries);
    rv.r_cov = coverage(user, queries);
    rv.r_spec = specificity(queries);
    rv.r_div = diversity(queries);
    combine(rv);
    return rv;
}

RewardVector RewardScorer::score(const UserRecord& user, const ParsedQueryList& parsed,
                                 const Vocab& vocab) const {
    if (!parsed.valid) return RewardVector{};
    return score_strings(user, query_strings(parsed, vocab), true);
}

}  // namespace iqgen
