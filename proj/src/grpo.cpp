#include "iqgen/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "iqgen/errors.hpp"
#include "iqgen/parallel.hpp"

namespace iqgen {

RatioMode ratio_mode_from_name(std::string_view name) {
    if (name == "per_token") return RatioMode::per_token;
    if (name == "per_sequence") return RatioMode::per_sequence;
    throw ConfigError("unknown ratio_mode '" + std::string(name) + "'");
}

std::vector<double> advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw InputError("advantages: need a group of at least 2");
    const double mean =
        std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
    std::vector<double> out(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] - mean;
    return out;
}

SurrogateResult surrogate(std::span<const double> logp_new, std::span<const double> logp_old,
                          double advantage, double clip, RatioMode mode) {
    if (logp_new.size() != logp_old.size())
        throw InputError("surrogate: log-prob length mismatch");
    for (size_t i = 0; i < logp_new.size(); ++i)
        if (!std::isfinite(logp_new[i]) || !std::isfinite(logp_old[i]))
            throw InputError("surrogate: non-finite log-prob");

    SurrogateResult out;
    const size_t T = logp_new.size();
    out.weights.assign(T, 0.0);
    const double lo = 1.0 - clip, hi = 1.0 + clip;
    // The gradient flows through rho only where the unclipped branch wins the
    // min; there the per-token weight is advantage * rho.
    auto active = [&](double rho) {
        return advantage >= 0.0 ? rho <= hi : rho >= lo;
    };

    if (mode == RatioMode::per_token) {
        for (size_t t = 0; t < T; ++t) {
            const double rho = std::exp(logp_new[t] - logp_old[t]);
            const double term = std::min(rho * advantage, std::clamp(rho, lo, hi) * advantage);
            out.term += term;
            ++out.total_units;
            if (active(rho)) {
                out.weights[t] = advantage * rho;
            } else {
                ++out.clipped_units;
            }
        }
    } else {
        const double sum_new = std::accumulate(logp_new.begin(), logp_new.end(), 0.0);
        const double sum_old = std::accumulate(logp_old.begin(), logp_old.end(), 0.0);
        const double rho = std::exp(sum_new - sum_old);
        out.term = std::min(rho * advantage, std::clamp(rho, lo, hi) * advantage);
        out.total_units = 1;
        if (active(rho)) {
            std::fill(out.weights.begin(), out.weights.end(), advantage * rho);
        } else {
            out.clipped_units = 1;
        }
    }
    return out;
}

double kl_to_ref(const PolicyParams& params, const PolicyParams& ref, const Vec& mean_embed,
                 std::span<const int> tokens) {
    if (tokens.empty()) return 0.0;
    if (params.vocab != ref.vocab || params.vocab_checksum != ref.vocab_checksum)
        throw ConfigError("kl_to_ref: vocabulary mismatch");
    const Context ctx = context_from_mean(params, mean_embed);
    const Context ctx_ref = context_from_mean(ref, mean_embed);
    const std::vector<double> p = position_dists(params, ctx, tokens);
    const std::vector<double> q = position_dists(ref, ctx_ref, tokens);
    const int V = params.vocab;
    double total = 0.0;
    for (size_t t = 0; t < tokens.size(); ++t) {
        double kl = 0.0;
        for (int v = 0; v < V; ++v) {
            const double pv = p[t * V + v];
            kl += pv * (std::log(pv) - std::log(q[t * V + v]));
        }
        total += kl;
    }
    return total / static_cast<double>(tokens.size());
}

AdaptiveScaler::AdaptiveScaler(double lr, size_t count, double decay, double eps)
    : lr_(lr), decay_(decay), eps_(eps), second_(count, 0.0) {}

void AdaptiveScaler::step(std::vector<double>& w, const std::vector<double>& grad) {
    if (w.size() != second_.size() || grad.size() != second_.size())
        throw InputError("optimizer: size mismatch");
    ++t_;
    const double correction = 1.0 - std::pow(decay_, static_cast<double>(t_));
    for (size_t i = 0; i < w.size(); ++i) {
        const double g = grad[i];
        second_[i] = decay_ * second_[i] + (1.0 - decay_) * g * g;
        const double vhat = second_[i] / correction;
        w[i] += lr_ * g / (std::sqrt(vhat) + eps_);
    }
}

void write_training_log(const std::string& path, const std::vector<StepMetrics>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "step,mean_reward,r_align,r_cov,r_spec,r_div,r_struct,kl,clip_frac,valid_frac\n";
    char buf[256];
    for (const StepMetrics& m : log) {
        std::snprintf(buf, sizeof buf,
                      "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.step,
                      m.mean_reward, m.r_align, m.r_cov, m.r_spec, m.r_div, m.r_struct, m.kl,
                      m.clip_frac, m.valid_frac);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---- trainer --------------------------------------------------------------

namespace {
constexpr uint64_t kVisitSalt = 0x76697369;   // scheduling permutation stream
constexpr uint64_t kRolloutSalt = 0x726f6c6c; // per-user rollout streams
}  // namespace

GrpoTrainer::GrpoTrainer(const World& world, const Embedder& embedder, const ArticleIndex& index,
                         const FilterModel& filter, const RewardScorer& scorer, const Vocab& vocab,
                         const PolicyConfig& policy_cfg, const GrpoConfig& cfg, PolicyParams init,
                         int threads)
    : world_(&world),
      embedder_(&embedder),
      scorer_(&scorer),
      filter_(&filter),
      vocab_(&vocab),
      grammar_(make_grammar(policy_cfg, vocab)),
      sample_temp_(policy_cfg.temperature),
      cfg_(cfg),
      ratio_mode_(ratio_mode_from_name(cfg.ratio_mode)),
      threads_(resolve_threads(threads)),
      params_(std::move(init)),
      ref_(params_),
      old_(params_),
      opt_(cfg.lr, params_.count()) {
    (void)index;  // reached through the scorer; kept in the signature for symmetry
    if (params_.vocab != vocab.size() || params_.vocab_checksum != vocab.checksum())
        throw ConfigError("trainer: policy vocabulary does not match the world vocabulary");
    if (world.users.empty()) throw InputError("trainer: world has no users");
    if (cfg.group_size < 2) throw ConfigError("trainer: group_size must be >= 2");

    visit_order_.resize(world.users.size());
    std::iota(visit_order_.begin(), visit_order_.end(), 0);
    Rng perm(mix_seed(cfg.seed, kVisitSalt));
    perm.shuffle(std::span<int>(visit_order_));
    cache_.resize(world.users.size());
}

GrpoTrainer::PreparedUser& GrpoTrainer::prepared(int user_id) {
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

StepMetrics GrpoTrainer::step() {
    const int B = cfg_.batch_users;
    const int G = cfg_.group_size;
    const int V = params_.vocab;
    const double beta = cfg_.kl_beta;

    // Pick the next batch of users from the fixed cyclic schedule and prepare
    // them serially (the cache and the per-user streams are mutable state).
    std::vector<int> batch(B);
    for (int b = 0; b < B; ++b) {
        batch[b] = visit_order_[cursor_];
        cursor_ = (cursor_ + 1) % visit_order_.size();
    }
    std::vector<PreparedUser*> prep(B);
    for (int b = 0; b < B; ++b) prep[b] = &prepared(batch[b]);

    // A user appearing twice in one batch would race on its own rollout
    // stream; tiny worlds fall back to the serial path.
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
        double reward = 0.0, align = 0.0, cov = 0.0, spec = 0.0, div = 0.0, strct = 0.0;
        double kl = 0.0;
        int clipped = 0, units = 0, valid = 0;
    };
    std::vector<UserResult> results(B);
    const double scale = 1.0 / (static_cast<double>(B) * G);

    parallel_for(B, pool, [&](int64_t bi) {
        const int b = static_cast<int>(bi);
        PreparedUser& pu = *prep[b];
        UserResult& res = results[b];
        res.grad.assign(params_.count(), 0.0);

        const Context ctx_old = context_from_mean(old_, pu.mean_embed);
        const Context ctx_new = context_from_mean(params_, pu.mean_embed);
        const Context ctx_ref =
            beta > 0.0 ? context_from_mean(ref_, pu.mean_embed) : Context{};

        std::vector<Rollout> rollouts;
        std::vector<double> composites(G);
        rollouts.reserve(G);
        for (int g = 0; g < G; ++g) {
            rollouts.push_back(
                sample(old_, ctx_old, grammar_, sample_temp_, pu.stream, /*masked=*/false));
            const ParsedQueryList parsed = parse(rollouts[g].tokens, grammar_);
            const RewardVector rv = scorer_->score(*pu.user, parsed, *vocab_);
            composites[g] = rv.composite;
            res.reward += rv.composite;
            res.align += rv.r_align;
            res.cov += rv.r_cov;
            res.spec += rv.r_spec;
            res.div += rv.r_div;
            res.strct += rv.r_struct;
            if (parsed.valid) ++res.valid;
        }
        const std::vector<double> adv = advantages(composites);

        for (int g = 0; g < G; ++g) {
            const std::vector<int>& toks = rollouts[g].tokens;
            const int T = static_cast<int>(toks.size());
            const std::vector<double> dists =
                position_dists(params_, ctx_new, toks);
            std::vector<double> logp_new(T);
            for (int t = 0; t < T; ++t) logp_new[t] = std::log(dists[size_t(t) * V + toks[t]]);

            const SurrogateResult sur =
                surrogate(logp_new, rollouts[g].logp, adv[g], cfg_.clip, ratio_mode_);
            res.clipped += sur.clipped_units;
            res.units += sur.total_units;

            // Surrogate and KL gradients share one backward pass: both are
            // linear in the omega matrix of the vocabulary-weighted primitive.
            std::vector<double> omega(size_t(T) * V, 0.0);
            for (int t = 0; t < T; ++t)
                omega[size_t(t) * V + toks[t]] += scale * sur.weights[t];
            if (beta > 0.0) {
                const std::vector<double> ref_dists = position_dists(ref_, ctx_ref, toks);
                double kl_sum = 0.0;
                for (int t = 0; t < T; ++t) {
                    double kl_t = 0.0;
                    for (int v = 0; v < V; ++v) {
                        const double pv = dists[size_t(t) * V + v];
                        kl_t += pv * (std::log(pv) - std::log(ref_dists[size_t(t) * V + v]));
                    }
                    kl_sum += kl_t;
                }
                res.kl += kl_sum / T;
                const double kl_scale = scale * beta / T;
                for (size_t i = 0; i < omega.size(); ++i) {
                    const double pv = dists[i];
                    omega[i] -= kl_scale * pv * (std::log(pv) - std::log(ref_dists[i]));
                }
            }
            accumulate_grad_vocab_weighted(params_, ctx_new, toks, omega, res.grad);
        }
    });

    // Deterministic ordered reduction, then one ascent step.
    Grad total(params_.count(), 0.0);
    StepMetrics m;
    int clipped = 0, units = 0, valid = 0;
    for (int b = 0; b < B; ++b) {
        const UserResult& r = results[b];
        for (size_t i = 0; i < total.size(); ++i) total[i] += r.grad[i];
        m.mean_reward += r.reward;
        m.r_align += r.align;
        m.r_cov += r.cov;
        m.r_spec += r.spec;
        m.r_div += r.div;
        m.r_struct += r.strct;
        m.kl += r.kl;
        clipped += r.clipped;
        units += r.units;
        valid += r.valid;
    }
    for (double g : total)
        if (!std::isfinite(g))
            throw TrainError("non-finite gradient at step " + std::to_string(step_count_ + 1));

    const double n_rollouts = static_cast<double>(B) * G;
    m.mean_reward /= n_rollouts;
    m.r_align /= n_rollouts;
    m.r_cov /= n_rollouts;
    m.r_spec /= n_rollouts;
    m.r_div /= n_rollouts;
    m.r_struct /= n_rollouts;
    m.kl /= n_rollouts;
    m.clip_frac = units > 0 ? static_cast<double>(clipped) / units : 0.0;
    m.valid_frac = valid / n_rollouts;

    opt_.step(params_.w, total);
    ++step_count_;
    m.step = step_count_;
    if (cfg_.sync_every > 0 && step_count_ % cfg_.sync_every == 0) old_ = params_;
    return m;
}

TrainResult GrpoTrainer::run() {
    TrainResult out{params_, {}};
    out.log.reserve(cfg_.steps);
    for (int s = 0; s < cfg_.steps; ++s) out.log.push_back(step());
    out.params = params_;
    return out;
}

}  // namespace iqgen
