#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iqgen/ann_index.hpp"
#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/noise_filter.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/rewards.hpp"
#include "iqgen/rng.hpp"
#include "iqgen/world.hpp"

namespace iqgen {

enum class RatioMode { per_token, per_sequence };
RatioMode ratio_mode_from_name(std::string_view name);  // throws ConfigError

// Group-relative advantages: mean subtraction only, no variance scaling and
// no length normalization. Throws InputError when the group is smaller than 2.
std::vector<double> advantages(std::span<const double> rewards);

// Clipped-surrogate term for one rollout. `weights` are the per-token
// coefficients to feed the log-likelihood gradient (0 where the clip is
// active); `clipped_units`/`total_units` feed the clip-fraction metric
// (tokens in per_token mode, the whole sequence in per_sequence mode).
struct SurrogateResult {
    double term = 0.0;
    std::vector<double> weights;
    int clipped_units = 0;
    int total_units = 0;
};
SurrogateResult surrogate(std::span<const double> logp_new, std::span<const double> logp_old,
                          double advantage, double clip, RatioMode mode);

// Mean over rollout positions of the exact full-vocabulary KL from the
// current policy to the reference. Each policy encodes its own context from
// the shared mean embedding.
double kl_to_ref(const PolicyParams& params, const PolicyParams& ref, const Vec& mean_embed,
                 std::span<const int> tokens);

// Momentum-free adaptive per-parameter scaling: each coordinate is divided by
// the bias-corrected root of a decayed second-moment estimate.
class AdaptiveScaler {
  public:
    AdaptiveScaler(double lr, size_t count, double decay = 0.999, double eps = 1e-8);
    // Applies one ascent step along `grad` (callers maximize their objective).
    void step(std::vector<double>& w, const std::vector<double>& grad);

  private:
    double lr_, decay_, eps_;
    std::vector<double> second_;
    long t_ = 0;
};

struct StepMetrics {
    int step = 0;
    double mean_reward = 0.0;
    double r_align = 0.0, r_cov = 0.0, r_spec = 0.0, r_div = 0.0, r_struct = 0.0;
    double kl = 0.0;
    double clip_frac = 0.0;
    double valid_frac = 0.0;
};

struct TrainResult {
    PolicyParams params;
    std::vector<StepMetrics> log;
};

void write_training_log(const std::string& path, const std::vector<StepMetrics>& log);

// Dr.GRPO trainer. Rollouts come from a periodically synced behavior policy,
// advantages are group-relative, and an optional KL term anchors the policy
// to its initial snapshot.
class GrpoTrainer {
  public:
    GrpoTrainer(const World& world, const Embedder& embedder, const ArticleIndex& index,
                const FilterModel& filter, const RewardScorer& scorer, const Vocab& vocab,
                const PolicyConfig& policy_cfg, const GrpoConfig& cfg, PolicyParams init,
                int threads);

    StepMetrics step();  // one batch: rollouts, advantages, one optimizer update
    TrainResult run();   // cfg.steps steps; returns final params plus the log

    const PolicyParams& params() const { return params_; }
    const PolicyParams& reference() const { return ref_; }

  private:
    struct PreparedUser {
        const UserRecord* user;
        Vec mean_embed;  // over filter-cleaned payloads; policy-independent
        Rng stream;      // persists across visits so revisits see fresh draws
    };
    PreparedUser& prepared(int user_id);

    const World* world_;
    const Embedder* embedder_;
    const RewardScorer* scorer_;
    const FilterModel* filter_;
    const Vocab* vocab_;
    GrammarSpec grammar_;
    double sample_temp_;
    GrpoConfig cfg_;
    RatioMode ratio_mode_;
    int threads_;

    PolicyParams params_;
    PolicyParams ref_;  // initial snapshot, never updated
    PolicyParams old_;  // behavior policy, refreshed every sync_every steps
    AdaptiveScaler opt_;
    int step_count_ = 0;

    std::vector<int> visit_order_;  // fixed permutation of user ids
    size_t cursor_ = 0;
    std::vector<std::optional<PreparedUser>> cache_;
};

}  // namespace iqgen
