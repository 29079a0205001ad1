#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "iqgen/ann_index.hpp"
#include "iqgen/config.hpp"
#include "iqgen/distill.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/grpo.hpp"
#include "iqgen/noise_filter.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/rewards.hpp"
#include "iqgen/world.hpp"

namespace iqgen {

// ---- ranking metrics (binary relevance) -----------------------------------
// `relevant` must be a sorted, non-empty id set; throws InputError otherwise.

double recall_at_k(std::span<const int> ranked, const std::vector<int>& relevant, int k);
double ndcg_at_k(std::span<const int> ranked, const std::vector<int>& relevant, int k);
double mrr(std::span<const int> ranked, const std::vector<int>& relevant);

// Per-query top-k hits pooled across the query list: an article's score is
// its max cosine over the queries, ranking is score desc with ascending-id
// tie-break, duplicates collapse.
std::vector<SearchHit> retrieve_for_user(const std::vector<std::string>& queries,
                                         const Embedder& embedder, const ArticleIndex& index,
                                         int k);

// ---- generation -----------------------------------------------------------

struct GeneratedList {
    ParsedQueryList parsed;
    RewardVector reward;
    int picked = 0;  // index of the winning candidate among the N samples
};

// Samples N grammar-masked rollouts and keeps the composite-reward argmax
// (first sampled wins ties). N=1 is plain production sampling.
GeneratedList best_of_n(const PolicyParams& params, const UserRecord& user, const Vec& mean_embed,
                        const RewardScorer& scorer, const Vocab& vocab,
                        const GrammarSpec& grammar, int n, double temperature, Rng& rng);

// ---- evaluation -----------------------------------------------------------

struct UserEval {
    int user_id = 0;
    double recall5 = 0.0, recall10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
    double composite = 0.0;
};

struct EvalReport {
    int users_evaluated = 0;
    int users_skipped = 0;  // no heldout clicks
    double recall5 = 0.0, recall10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
    double mean_composite = 0.0;
    std::string config_fingerprint;
    uint64_t seed = 0;
    std::vector<UserEval> per_user;
};

// Everything the pipeline stages need, built once per world. Heap-allocated
// so the scorer's internal pointers stay valid for the struct's lifetime.
struct Services {
    Embedder embedder;
    ArticleIndex index;
    FilterModel filter;
    FilterReport filter_report;
    Vocab vocab;
    std::unique_ptr<RewardScorer> scorer;

    Services(const World& world, const Config& cfg, int threads);
};
std::unique_ptr<Services> make_services(const World& world, const Config& cfg, int threads);

// Policy evaluation over the world's users (capped by cfg.eval.max_users,
// 0 = all): clean, generate best-of-N lists, retrieve, score against the
// heldout clicks. Deterministic given cfg.eval.seed.
EvalReport run_eval(const World& world, const Services& sv, const PolicyParams& params,
                    const Config& cfg, int threads);

// Baseline that issues the user's own cleaned search payloads verbatim as the
// query list (all-cleaned fallback when no searches survive cleaning).
EvalReport run_eval_verbatim(const World& world, const Services& sv, const Config& cfg,
                             int threads);

void write_eval_report(const std::string& path, const EvalReport& report);

// ---- sweeps ---------------------------------------------------------------

struct SweepRow {
    std::string label;  // tier name, N value, or ablation config
    uint64_t seed = 0;
    double recall5 = 0.0, recall10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
    double mean_composite = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    // Seed-mean of a column for one label.
    double mean(const std::string& label, double SweepRow::*col) const;
};

// Each sweep trains fresh policies (sweep_seeds seeds on a world capped at
// sweep_max_users), evaluates them, and writes <name>.csv + <name>.svg into
// out_dir. An empty out_dir skips file emission.
SweepResult sweep_capacity(const std::vector<std::string>& tiers, const Config& cfg,
                           const std::string& out_dir, int threads);
SweepResult sweep_bestofn(const std::vector<int>& n_list, const Config& cfg,
                          const std::string& out_dir, int threads);
SweepResult sweep_reward_ablation(const Config& cfg, const std::string& out_dir, int threads);

// Minimal polyline chart, one series per (name, y-values) pair over shared
// x-axis labels. No plotting dependency: hand-emitted SVG.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<std::string>& x_labels,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace iqgen
