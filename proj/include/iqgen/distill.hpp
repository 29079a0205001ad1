#pragma once

#include <string>
#include <vector>

#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/grpo.hpp"
#include "iqgen/noise_filter.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/world.hpp"

namespace iqgen {

enum class DistillMode { onpolicy, supervised, none };
DistillMode distill_mode_from_name(std::string_view name);  // throws ConfigError

struct DistillStepMetrics {
    int step = 0;
    double loss = 0.0;  // mean per-token reverse KL (onpolicy) or NLL (supervised)
};

struct DistillResult {
    PolicyParams params;
    std::vector<DistillStepMetrics> log;
};

void write_distill_log(const std::string& path, const std::vector<DistillStepMetrics>& log);

// Fresh student parameters (warm init); the context encoder is copied from
// the teacher when the shapes line up (same hidden width and context dim),
// otherwise it keeps its own initialization.
PolicyParams init_student(Tier tier, const Vocab& vocab, const Embedder& embedder, uint64_t seed,
                          const PolicyParams* teacher);

// Teacher-to-student transfer. onpolicy: student samples, teacher supervises
// every position with its full distribution (reverse KL, exact over the
// vocabulary). supervised: teacher samples, student fits the trajectories by
// maximum likelihood. The "none" control never touches a teacher — it is run
// through GrpoTrainer at student capacity instead (see grpo_config_for_none).
class Distiller {
  public:
    Distiller(const World& world, const Embedder& embedder, const FilterModel& filter,
              const Vocab& vocab, const PolicyConfig& policy_cfg, const DistillConfig& cfg,
              PolicyParams teacher, PolicyParams student_init, int threads);

    DistillStepMetrics step();
    DistillResult run();

    const PolicyParams& student() const { return student_; }

  private:
    struct PreparedUser {
        const UserRecord* user;
        Vec mean_embed;
        Rng stream;
    };
    PreparedUser& prepared(int user_id);

    const World* world_;
    const Embedder* embedder_;
    const FilterModel* filter_;
    GrammarSpec grammar_;
    double sample_temp_;
    DistillConfig cfg_;
    DistillMode mode_;
    int threads_;

    PolicyParams teacher_;
    PolicyParams student_;
    AdaptiveScaler opt_;
    int step_count_ = 0;

    std::vector<int> visit_order_;
    size_t cursor_ = 0;
    std::vector<std::optional<PreparedUser>> cache_;
};

// The no-distillation control reuses the RL trainer at student capacity with
// the distillation budget (steps, batch size, learning rate, seed).
GrpoConfig grpo_config_for_none(const GrpoConfig& base, const DistillConfig& d);

// Wall-clock greedy-decoding throughput (users/second) on one thread with
// pre-encoded user contexts. Runs full masked greedy rollouts in a cycle
// until `duration_seconds` elapses.
double measure_throughput(const PolicyParams& params, const std::vector<Vec>& user_means,
                          const GrammarSpec& grammar, double duration_seconds);

}  // namespace iqgen
