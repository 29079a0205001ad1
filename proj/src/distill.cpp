#include "iqgen/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "iqgen/errors.hpp"
#include "iqgen/parallel.hpp"

namespace iqgen {

DistillMode distill_mode_from_name(std::string_view name) {
    if (name == "onpolicy") return DistillMode::onpolicy;
    if (name == "supervised") return DistillMode::supervised;
    if (name == "none") return DistillMode::none;
    throw ConfigError("unknown distill mode '" + std::string(name) + "'");
}

void write_distill_log(const std::string& path, const std::vector<DistillStepMetrics>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "step,loss\n";
    char buf[64];
    for (const DistillStepMetrics& m : log) {
        std::snprintf(buf, sizeof buf, "%d,%.10g\n", m.step, m.loss);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

PolicyParams init_student(Tier tier, const Vocab& vocab, const Embedder& embedder, uint64_t seed,
                          const PolicyParams* teacher) {
    PolicyParams p = warm_init(tier, vocab, embedder, seed);
    if (teacher && teacher->hidden == p.hidden && teacher->ctx_dim == p.ctx_dim) {
        std::copy_n(teacher->w.data() + teacher->ctx_proj(),
                    static_cast<size_t>(p.hidden) * p.ctx_dim, p.w.data() + p.ctx_proj());
    }
    return p;
}

GrpoConfig grpo_config_for_none(const GrpoConfig& base, const DistillConfig& d) {
    GrpoConfig cfg = base;
    cfg.steps = d.steps;
    cfg.batch_users = d.batch_users;
    cfg.lr = d.lr;
    cfg.seed = d.seed;
    return cfg;
}

namespace {
constexpr uint64_t kVisitSalt = 0x64697374;
constexpr uint64_t kRolloutSalt = 0x73747564;
}  // namespace

Distiller::Distiller(const World& world, const Embedder& embedder, const FilterModel& filter,
                     const Vocab& vocab, const PolicyConfig& policy_cfg, const DistillConfig& cfg,
                     PolicyParams teacher, PolicyParams student_init, int threads)
    : world_(&world),
      embedder_(&embedder),
      filter_(&filter),
      grammar_(make_grammar(policy_cfg, vocab)),
      sample_temp_(policy_cfg.temperature),
      cfg_(cfg),
      mode_(distill_mode_from_name(cfg.mode)),
      threads_(resolve_threads(threads)),
      teacher_(std::move(teacher)),
      student_(std::move(student_init)),
      opt_(cfg.lr, student_.count()) {
    if (mode_ == DistillMode::none)
        throw ConfigError("distiller: mode 'none' runs through the RL trainer, not the distiller");
    if (teacher_.vocab != student_.vocab || teacher_.vocab_checksum != student_.vocab_checksum)
        throw ConfigError("distiller: teacher and student vocabularies differ");
    if (teacher_.ctx_dim != student_.ctx_dim)
        throw ConfigError("distiller: teacher and student context dims differ");
    if (student_.vocab != vocab.size() || student_.vocab_checksum != vocab.checksum())
        throw ConfigError("distiller: policy vocabulary does not match the world vocabulary");
    if (world.users.empty()) throw InputError("distiller: world has no users");

    visit_order_.resize(world.users.size());
    std::iota(visit_order_.begin(), visit_order_.end(), 0);
    Rng perm(mix_seed(cfg.seed, kVisitSalt));
    perm.shuffle(std::span<int>(visit_order_));
    cache_.resize(world.users.size());
}

Distiller::PreparedUser& Distiller::prepared(int user_id) {
    std::optional<PreparedUser>& slot = cache_[user_id];
    if (!slot) {
        const UserRecord& user = world_->users[user_id];
        const std::vector<BehaviorEvent> cleaned = clean(user, *filter_, *embedder_);
        PreparedUser p{&user, mean_payload_embedding(*embedder_, cleaned),
                       Rng(mix_seed(cfg_.seed, mix_seed(kRolloutSalt, user_id)))};
        slot.emplace(std::move(p));
    }
    return *slot;
}

DistillStepMetrics Distiller::step() {
    const int B = cfg_.batch_users;
    const int R = cfg_.rollouts_per_user;
    const int V = student_.vocab;

    std::vector<int> batch(B);
    for (int b = 0; b < B; ++b) {
        batch[b] = visit_order_[cursor_];
        cursor_ = (cursor_ + 1) % visit_order_.size();
    }
    std::vector<PreparedUser*> prep(B);
    for (int b = 0; b < B; ++b) prep[b] = &prepared(batch[b]);

    bool duplicate = false;
    for (int i = 0; i < B && !duplicate; ++i)
        for (int j = i + 1; j < B; ++j)
            if (batch[i] == batch[j]) {
                duplicate = true;
                break;
            }
    const int pool = duplicate ? 1 : threads_;

    struct UserResult {
        Grad grad;
        double loss = 0.0;  // sum of per-rollout position-mean losses
    };
    std::vector<UserResult> results(B);
    const double scale = 1.0 / (static_cast<double>(B) * R);

    parallel_for(B, pool, [&](int64_t bi) {
        const int b = static_cast<int>(bi);
        PreparedUser& pu = *prep[b];
        UserResult& res = results[b];
        res.grad.assign(student_.count(), 0.0);

        const Context ctx_s = context_from_mean(student_, pu.mean_embed);
        const Context ctx_t = context_from_mean(teacher_, pu.mean_embed);

        for (int r = 0; r < R; ++r) {
            if (mode_ == DistillMode::onpolicy) {
                // Student explores; teacher grades every position densely.
                const Rollout roll =
                    sample(student_, ctx_s, grammar_, sample_temp_, pu.stream, /*masked=*/false);
                const std::vector<int>& toks = roll.tokens;
                const int T = static_cast<int>(toks.size());
                const std::vector<double> ds = position_dists(student_, ctx_s, toks);
                const std::vector<double> dt = position_dists(teacher_, ctx_t, toks);
                // Per-position reverse KL; minimizing it is ascent on its
                // negation, so omega carries a minus sign.
                std::vector<double> omega(size_t(T) * V);
                double kl_sum = 0.0;
                const double w = scale / T;
                for (int t = 0; t < T; ++t) {
                    double kl_t = 0.0;
                    for (int v = 0; v < V; ++v) {
                        const size_t i = size_t(t) * V + v;
                        const double ratio = std::log(ds[i]) - std::log(dt[i]);
                        kl_t += ds[i] * ratio;
                        omega[i] = -w * ds[i] * ratio;
                    }
                    kl_sum += kl_t;
                }
                res.loss += kl_sum / T;
                accumulate_grad_vocab_weighted(student_, ctx_s, toks, omega, res.grad);
            } else {
                // Teacher demonstrates; student fits by maximum likelihood.
                const Rollout roll =
                    sample(teacher_, ctx_t, grammar_, sample_temp_, pu.stream, /*masked=*/false);
                const std::vector<int>& toks = roll.tokens;
                const int T = static_cast<int>(toks.size());
                const std::vector<double> ds = position_dists(student_, ctx_s, toks);
                double nll = 0.0;
                for (int t = 0; t < T; ++t) nll -= std::log(ds[size_t(t) * V + toks[t]]);
                res.loss += nll / T;
                const std::vector<double> weights(T, scale / T);
                accumulate_grad_weighted_loglik(student_, ctx_s, toks, weights, res.grad);
            }
        }
    });

    Grad total(student_.count(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        for (size_t i = 0; i < total.size(); ++i) total[i] += results[b].grad[i];
        loss += results[b].loss;
    }
    for (double g : total)
        if (!std::isfinite(g))
            throw TrainError("non-finite distillation gradient at step " +
                             std::to_string(step_count_ + 1));

    opt_.step(student_.w, total);
    ++step_count_;
    return {step_count_, loss / (static_cast<double>(B) * R)};
}

DistillResult Distiller::run() {
    DistillResult out{student_, {}};
    out.log.reserve(cfg_.steps);
    for (int s = 0; s < cfg_.steps; ++s) out.log.push_back(step());
    out.params = student_;
    return out;
}

double measure_throughput(const PolicyParams& params, const std::vector<Vec>& user_means,
                          const GrammarSpec& grammar, double duration_seconds) {
    if (user_means.empty()) throw InputError("measure_throughput: no users");
    if (duration_seconds <= 0.0) throw InputError("measure_throughput: duration must be > 0");

    std::vector<Context> contexts;
    contexts.reserve(user_means.size());
    for (const Vec& m : user_means) contexts.push_back(context_from_mean(params, m));

    Rng rng(0);  // greedy decoding draws nothing, but sample() wants a stream
    const auto start = std::chrono::steady_clock::now();
    long done = 0;
    double elapsed = 0.0;
    do {
        const Context& ctx = contexts[done % contexts.size()];
        const Rollout roll = sample(params, ctx, grammar, 0.0, rng, /*masked=*/true);
        (void)roll;
        ++done;
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } while (elapsed < duration_seconds);
    return static_cast<double>(done) / elapsed;
}

}  // namespace iqgen
