#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "iqgen/errors.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/rng.hpp"

using namespace iqgen;

namespace {

Vocab toy_vocab() {
    return Vocab::from_content_tokens(
        {"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa"});
}

GrammarSpec toy_grammar(const Vocab& v, int n_queries = 3, int max_len = 3) {
    GrammarSpec g;
    g.n_queries = n_queries;
    g.max_query_tokens = max_len;
    g.sep_id = v.sep_id;
    g.eos_id = v.eos_id;
    g.pad_id = v.pad_id;
    return g;
}

Vec toy_mean(int dim, uint64_t seed) {
    Rng rng(seed);
    Vec mean(dim);
    for (double& x : mean) x = 0.3 * rng.normal();
    return mean;
}

Context toy_context(const PolicyParams& p, uint64_t seed) {
    return context_from_mean(p, toy_mean(p.ctx_dim, seed));
}

// Loss value recomputed from scratch so finite differences never touch the
// backward pass under test. The context is re-encoded from the raw mean
// embedding so perturbations of the projection matrix reach the loss.
double weighted_loglik_value(const PolicyParams& p, const Vec& mean, std::span<const int> tokens,
                             std::span<const double> weights) {
    const Context ctx = context_from_mean(p, mean);
    const std::vector<double> dists = position_dists(p, ctx, tokens);
    double total = 0.0;
    for (size_t t = 0; t < tokens.size(); ++t)
        total += weights[t] * std::log(dists[t * p.vocab + tokens[t]]);
    return total;
}

double vocab_weighted_value(const PolicyParams& p, const Vec& mean, std::span<const int> tokens,
                            std::span<const double> omega) {
    const Context ctx = context_from_mean(p, mean);
    const std::vector<double> dists = position_dists(p, ctx, tokens);
    double total = 0.0;
    for (size_t i = 0; i < dists.size(); ++i) total += omega[i] * std::log(dists[i]);
    return total;
}

}  // namespace

TEST_CASE("vocabulary layout puts specials last") {
    const Vocab v = toy_vocab();
    CHECK(v.size() == 13);
    CHECK(v.content_size() == 10);
    CHECK(v.sep_id == 10);
    CHECK(v.eos_id == 11);
    CHECK(v.pad_id == 12);
    CHECK(v.token(v.sep_id) == "<sep>");
    CHECK(v.token(v.eos_id) == "<eos>");
    CHECK(v.token(v.pad_id) == "<pad>");
    CHECK(v.id_of("gamma") == 2);
    CHECK(v.id_of("missing") == -1);
    CHECK(!v.is_special(9));
    CHECK(v.is_special(10));
    CHECK(v.checksum() == toy_vocab().checksum());
    CHECK(v.checksum() !=
          Vocab::from_content_tokens({"alpha", "beta", "gamma", "delta"}).checksum());
}

TEST_CASE("grammar legality matches the state definition") {
    const Vocab v = toy_vocab();
    const GrammarSpec g = toy_grammar(v, 3, 2);
    for (int completed = 0; completed < g.n_queries; ++completed) {
        for (int len = 0; len <= g.max_query_tokens; ++len) {
            GrammarState s{completed, len};
            CHECK(s.legal(g, 0) == (len < g.max_query_tokens));
            CHECK(s.legal(g, g.sep_id) == (len >= 1 && completed < g.n_queries - 1));
            CHECK(s.legal(g, g.eos_id) == (len >= 1 && completed == g.n_queries - 1));
            CHECK(!s.legal(g, g.pad_id));
        }
    }
}

TEST_CASE("parser accepts well-formed lists and reports each failure mode") {
    const Vocab v = toy_vocab();
    const GrammarSpec g = toy_grammar(v, 3, 3);
    const int S = v.sep_id, E = v.eos_id, P = v.pad_id;

    const std::vector<int> good = {0, 1, S, 2, S, 3, 4, E};
    const ParsedQueryList ok = parse(good, g);
    REQUIRE(ok.valid);
    CHECK(ok.reason == ParseFail::none);
    REQUIRE(ok.queries.size() == 3);
    CHECK(ok.queries[0] == std::vector<int>{0, 1});
    CHECK(ok.queries[2] == std::vector<int>{3, 4});
    const auto strings = query_strings(ok, v);
    CHECK(strings[0] == "alpha beta");
    CHECK(strings[1] == "gamma");

    auto reason_of = [&](const std::vector<int>& toks) { return parse(toks, g).reason; };
    CHECK(reason_of({0, 1, S, 2, S, 3}) == ParseFail::no_terminator);
    CHECK(reason_of({0, S, 1, E}) == ParseFail::count);
    CHECK(reason_of({0, S, S, 1, S, 2, E}) == ParseFail::empty_query);
    CHECK(reason_of({0, 1, 2, 3, 4, S, 5, S, 6, E}) == ParseFail::query_too_long);
    CHECK(reason_of({0, P, S, 1, S, 2, E}) == ParseFail::bad_token);
    CHECK(reason_of({0, S, 1, S, 2, E, 3}) == ParseFail::trailing);
    CHECK(!parse({}, g).valid);
    CHECK(parse_fail_name(ParseFail::query_too_long) == "query_too_long");
}

TEST_CASE("parameter layout is contiguous and seeded init is reproducible") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 7);
    CHECK(p.hidden == 16);
    CHECK(p.layers == 1);
    const size_t expect = size_t(16) * 8 + size_t(13) * 16 + (6 * 256 + 3 * 16) +
                          size_t(13) * 16 + 13;
    CHECK(p.count() == expect);
    CHECK(p.out_b() + 13 == p.count());
    CHECK(p.gru(0) == p.tok_emb() + size_t(13) * 16);

    const PolicyParams q = PolicyParams::init(Tier::tiny, v, 8, 7);
    CHECK(p.w == q.w);
    const PolicyParams r = PolicyParams::init(Tier::tiny, v, 8, 8);
    CHECK(p.w != r.w);
    CHECK(p.same_shape(r));

    const TierShape big = tier_shape(Tier::large);
    CHECK(big.hidden == 128);
    CHECK(big.layers == 2);
    CHECK(tier_from_name("base") == Tier::base);
    CHECK(tier_name(Tier::small) == "small");
    CHECK_THROWS_AS(tier_from_name("huge"), ConfigError);
}

TEST_CASE("checkpoint round-trips bitwise") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 11);
    const std::string path = "toy_policy.ckpt";
    p.save(path);
    const PolicyParams q = PolicyParams::load(path);
    CHECK(q.same_shape(p));
    CHECK(q.w == p.w);
    CHECK(q.vocab_checksum == v.checksum());
    std::remove(path.c_str());
    CHECK_THROWS_AS(PolicyParams::load("does_not_exist.ckpt"), IoError);
}

TEST_CASE("distributions are normalized and consistent across entry points") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 3);
    const Context ctx = toy_context(p, 5);
    const GrammarSpec g = toy_grammar(v);
    const std::vector<int> tokens = {0, 1, v.sep_id, 2, v.sep_id, 3, 4, v.eos_id};

    const std::vector<double> dists = position_dists(p, ctx, tokens);
    REQUIRE(dists.size() == tokens.size() * size_t(v.size()));
    for (size_t t = 0; t < tokens.size(); ++t) {
        double sum = 0.0;
        for (int u = 0; u < v.size(); ++u) {
            const double prob = dists[t * v.size() + u];
            CHECK(prob > 0.0);
            sum += prob;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // next_token_dist over a prefix equals the matching cached-forward row.
    for (const size_t cut : {size_t(0), size_t(3), size_t(7)}) {
        const std::span<const int> prefix(tokens.data(), cut);
        const Vec d = next_token_dist(p, ctx, prefix, nullptr);
        for (int u = 0; u < v.size(); ++u)
            CHECK(d[u] == doctest::Approx(dists[cut * v.size() + u]).epsilon(1e-12));
    }

    // Masked variant zeroes illegal tokens and renormalizes the rest.
    const Vec masked = next_token_dist(p, ctx, std::span<const int>(), &g);
    CHECK(masked[v.sep_id] == 0.0);    // empty query so far
    CHECK(masked[v.eos_id] == 0.0);
    CHECK(masked[v.pad_id] == 0.0);
    CHECK(std::accumulate(masked.begin(), masked.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-9));

    const double lp = logprob(p, ctx, tokens);
    double manual = 0.0;
    for (size_t t = 0; t < tokens.size(); ++t)
        manual += std::log(dists[t * v.size() + tokens[t]]);
    CHECK(lp == doctest::Approx(manual).epsilon(1e-10));
}

TEST_CASE("masked sampling always yields a parseable list within the cap") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 21);
    const Context ctx = toy_context(p, 9);
    const GrammarSpec g = toy_grammar(v, 4, 3);
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const Rollout roll = sample(p, ctx, g, 1.0, rng, true);
        CHECK(!roll.hit_cap);
        CHECK(static_cast<int>(roll.tokens.size()) <= g.rollout_cap());
        const ParsedQueryList parsed = parse(roll.tokens, g);
        CHECK(parsed.valid);
        CHECK(static_cast<int>(parsed.queries.size()) == g.n_queries);
        // Recorded per-token logprobs are the unmasked temperature-1 values.
        REQUIRE(roll.logp.size() == roll.tokens.size());
        const double total = std::accumulate(roll.logp.begin(), roll.logp.end(), 0.0);
        CHECK(total == doctest::Approx(logprob(p, ctx, roll.tokens)).epsilon(1e-9));
    }
}

TEST_CASE("unmasked sampling records exact logprobs and flags capped rollouts") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::zeros(Tier::tiny, v, 8);
    Context ctx;
    ctx.mean_embed.assign(8, 0.0);
    ctx.projected.assign(p.hidden, 0.0);
    const GrammarSpec g = toy_grammar(v, 2, 2);
    Rng rng(7);

    int capped = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const Rollout roll = sample(p, ctx, g, 1.0, rng, false);
        if (roll.hit_cap) {
            ++capped;
            CHECK(static_cast<int>(roll.tokens.size()) == g.rollout_cap());
        } else {
            CHECK(roll.tokens.back() == v.eos_id);
        }
        const double total = std::accumulate(roll.logp.begin(), roll.logp.end(), 0.0);
        CHECK(total == doctest::Approx(logprob(p, ctx, roll.tokens)).epsilon(1e-9));
        // All-zero weights give the uniform distribution, so every recorded
        // per-token logprob must be exactly -log V.
        for (const double lp : roll.logp)
            CHECK(lp == doctest::Approx(-std::log(double(v.size()))).epsilon(1e-12));
    }
    // With a uniform policy over 13 tokens most rollouts never emit EOS in 7
    // steps, so the cap must trigger at least once in 40 trials.
    CHECK(capped > 0);

    // Greedy decoding is deterministic.
    const PolicyParams pi = PolicyParams::init(Tier::tiny, v, 8, 2);
    const Context c2 = toy_context(pi, 2);
    const Rollout a = sample(pi, c2, g, 0.0, rng, true);
    const Rollout b = sample(pi, c2, g, 0.0, rng, true);
    CHECK(a.tokens == b.tokens);
}

TEST_CASE("token-weighted gradient matches central finite differences") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 31);
    const Vec mean = toy_mean(p.ctx_dim, 17);
    const Context ctx = context_from_mean(p, mean);
    const std::vector<int> tokens = {0, 1, v.sep_id, 2, v.sep_id, 3, 4, v.eos_id};
    Rng rng(99);
    std::vector<double> weights(tokens.size());
    for (double& w : weights) w = rng.normal();

    const Grad grad = grad_weighted_loglik(p, ctx, tokens, weights);
    REQUIRE(grad.size() == p.count());

    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 160; ++trial) {
        const size_t i = rng.below(p.count());
        PolicyParams lo = p, hi = p;
        lo.w[i] -= h;
        hi.w[i] += h;
        const double fd = (weighted_loglik_value(hi, mean, tokens, weights) -
                           weighted_loglik_value(lo, mean, tokens, weights)) /
                          (2 * h);
        CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::abs(grad[i]) + 1e-6);
        ++checked;
    }
    CHECK(checked == 160);

    // Directional derivative along a random direction agrees with <grad, dir>.
    std::vector<double> dir(p.count());
    double nrm = 0.0;
    for (double& d : dir) {
        d = rng.normal();
        nrm += d * d;
    }
    nrm = std::sqrt(nrm);
    for (double& d : dir) d /= nrm;
    PolicyParams lo = p, hi = p;
    for (size_t i = 0; i < p.count(); ++i) {
        lo.w[i] -= h * dir[i];
        hi.w[i] += h * dir[i];
    }
    const double fd_dir = (weighted_loglik_value(hi, mean, tokens, weights) -
                           weighted_loglik_value(lo, mean, tokens, weights)) /
                          (2 * h);
    const double analytic = std::inner_product(grad.begin(), grad.end(), dir.begin(), 0.0);
    CHECK(fd_dir == doctest::Approx(analytic).epsilon(1e-6));
}

TEST_CASE("vocabulary-weighted gradient matches central finite differences") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 41);
    const Vec mean = toy_mean(p.ctx_dim, 19);
    const Context ctx = context_from_mean(p, mean);
    const std::vector<int> tokens = {5, v.sep_id, 6, 7, v.sep_id, 8, v.eos_id};
    Rng rng(1234);
    std::vector<double> omega(tokens.size() * size_t(v.size()));
    for (double& w : omega) w = 0.5 * rng.normal();

    Grad grad(p.count(), 0.0);
    accumulate_grad_vocab_weighted(p, ctx, tokens, omega, grad);

    const double h = 1e-5;
    for (int trial = 0; trial < 120; ++trial) {
        const size_t i = rng.below(p.count());
        PolicyParams lo = p, hi = p;
        lo.w[i] -= h;
        hi.w[i] += h;
        const double fd =
            (vocab_weighted_value(hi, mean, tokens, omega) -
             vocab_weighted_value(lo, mean, tokens, omega)) /
            (2 * h);
        CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::abs(grad[i]) + 1e-6);
    }

    // The two entry points agree when omega is the token indicator times a
    // per-position weight.
    std::vector<double> weights(tokens.size());
    for (double& w : weights) w = rng.normal();
    std::vector<double> omega2(tokens.size() * size_t(v.size()), 0.0);
    for (size_t t = 0; t < tokens.size(); ++t)
        omega2[t * v.size() + tokens[t]] = weights[t];
    Grad g1(p.count(), 0.0), g2(p.count(), 0.0);
    accumulate_grad_weighted_loglik(p, ctx, tokens, weights, g1);
    accumulate_grad_vocab_weighted(p, ctx, tokens, omega2, g2);
    for (size_t i = 0; i < p.count(); i += 97)
        CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
}

TEST_CASE("gradient accumulation adds across calls and rejects bad input") {
    const Vocab v = toy_vocab();
    const PolicyParams p = PolicyParams::init(Tier::tiny, v, 8, 51);
    const Context ctx = toy_context(p, 23);
    const std::vector<int> tokens = {0, v.eos_id};
    const std::vector<double> weights = {1.0, -0.5};

    Grad once = grad_weighted_loglik(p, ctx, tokens, weights);
    Grad twice(p.count(), 0.0);
    accumulate_grad_weighted_loglik(p, ctx, tokens, weights, twice);
    accumulate_grad_weighted_loglik(p, ctx, tokens, weights, twice);
    for (size_t i = 0; i < p.count(); i += 131)
        CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));

    const std::vector<double> short_w = {1.0};
    CHECK_THROWS_AS(grad_weighted_loglik(p, ctx, tokens, short_w), InputError);
    const std::vector<int> bad = {0, 999};
    CHECK_THROWS_AS(logprob(p, ctx, bad), InputError);
    Vec wrong_mean(3, 0.0);
    CHECK_THROWS_AS(context_from_mean(p, wrong_mean), InputError);
}
