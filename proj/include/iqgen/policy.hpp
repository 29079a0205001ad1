#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"
#include "iqgen/rng.hpp"
#include "iqgen/world.hpp"

// The autoregressive query-list policy: a token embedding feeding a small
// gated-recurrent stack whose initial state is a learned projection of the
// user's mean behavior embedding, with a softmax output head. All gradients
// are computed manually (exact backprop through time), which keeps the
// trainer free of autodiff machinery and makes finite-difference checks
// meaningful.

namespace iqgen {

// ---- vocabulary -----------------------------------------------------------

struct Vocab {
    std::vector<std::string> tokens;  // content tokens, then SEP, EOS, PAD
    int sep_id = 0;
    int eos_id = 0;
    int pad_id = 0;

    // Topic specific terms, then generic words, then entity terms, then the
    // three specials.
    static Vocab from_world(const World& world);
    // For tests: arbitrary content tokens plus the specials.
    static Vocab from_content_tokens(std::vector<std::string> content);

    int size() const { return static_cast<int>(tokens.size()); }
    int content_size() const { return size() - 3; }
    bool is_special(int id) const { return id >= content_size(); }
    int id_of(const std::string& token) const;  // -1 if unknown
    const std::string& token(int id) const;
    uint64_t checksum() const;

  private:
    std::unordered_map<std::string, int> ids_;
    void build_ids();
};

// ---- output grammar -------------------------------------------------------

// A query list is (query SEP){n-1} query EOS with every query 1..L_max
// content tokens. GrammarState tracks (completed queries, tokens in the
// current query) during generation.
struct GrammarSpec {
    int n_queries = 5;
    int max_query_tokens = 4;
    int sep_id = 0;
    int eos_id = 0;
    int pad_id = 0;

    // Hard stop for unmasked sampling: n*(L_max+1)+1 tokens.
    int rollout_cap() const { return n_queries * (max_query_tokens + 1) + 1; }
};

GrammarSpec make_grammar(const PolicyConfig& cfg, const Vocab& vocab);

struct GrammarState {
    int completed = 0;      // finished queries
    int current_len = 0;    // tokens in the open query

    bool legal(const GrammarSpec& g, int token_id) const;
    void advance(const GrammarSpec& g, int token_id);
};

enum class ParseFail {
    none,
    no_terminator,   // ran out of tokens without EOS
    count,           // not exactly n queries
    empty_query,     // SEP/EOS after zero content tokens
    query_too_long,  // query exceeds L_max
    bad_token,       // PAD or out-of-range id
    trailing,        // tokens after EOS
};

std::string_view parse_fail_name(ParseFail f);

struct ParsedQueryList {
    bool valid = false;
    ParseFail reason = ParseFail::none;
    std::vector<std::vector<int>> queries;  // token ids, populated when valid
};

ParsedQueryList parse(std::span<const int> tokens, const GrammarSpec& g);

// Space-joined surface form of each query.
std::vector<std::string> query_strings(const ParsedQueryList& list, const Vocab& vocab);

// ---- parameters -----------------------------------------------------------

enum class Tier { tiny, small, base, large };

Tier tier_from_name(std::string_view name);  // throws ConfigError
std::string_view tier_name(Tier t);

struct TierShape {
    int hidden = 0;
    int layers = 0;
};

TierShape tier_shape(Tier t);  // tiny 16x1, small 32x1, base 64x2, large 128x2

struct PolicyParams {
    Tier tier = Tier::tiny;
    int vocab = 0;    // V
    int ctx_dim = 0;  // behavior embedding dimension d
    int hidden = 0;
    int layers = 0;
    uint64_t vocab_checksum = 0;
    std::vector<double> w;  // single flat buffer, fixed layout

    static PolicyParams init(Tier tier, const Vocab& vocab, int ctx_dim, uint64_t seed);
    static PolicyParams zeros(Tier tier, const Vocab& vocab, int ctx_dim);

    size_t count() const { return w.size(); }

    // Flat-layout block offsets.
    size_t ctx_proj() const { return 0; }                                  // hidden x ctx_dim
    size_t tok_emb() const { return ctx_proj() + size_t(hidden) * ctx_dim; }  // V x hidden
    size_t gru(int layer) const {  // 6 h x h matrices + 3 h biases per layer
        return tok_emb() + size_t(vocab) * hidden + size_t(layer) * layer_span();
    }
    size_t out_w() const { return gru(layers); }  // V x hidden
    size_t out_b() const { return out_w() + size_t(vocab) * hidden; }  // V
    size_t layer_span() const { return 6 * size_t(hidden) * hidden + 3 * size_t(hidden); }

    void save(const std::string& path) const;
    static PolicyParams load(const std::string& path);

    bool same_shape(const PolicyParams& other) const;
};

// ---- inference ------------------------------------------------------------

// Fresh parameters for a training run: the init stream is salted so it never
// collides with the rollout or scheduling streams derived from the same seed.
// On top of the plain random init this seeds an alignment prior: a shared
// random projection ties the context encoder and the content rows of the
// output head to the world's embedding space, so "emit terms whose embeddings
// match the user context" is a warm direction that training amplifies rather
// than a mapping it must discover from scratch.
PolicyParams make_initial_policy(const PolicyConfig& cfg, const Vocab& vocab,
                                 const Embedder& embedder, uint64_t train_seed);

// The same random-init-plus-priors starting point, without the salt
// convention (used where the caller manages its own seed stream).
PolicyParams warm_init(Tier tier, const Vocab& vocab, const Embedder& embedder, uint64_t seed);

struct Context {
    Vec mean_embed;  // d-dim mean of cleaned payload embeddings
    Vec projected;   // hidden-dim learned projection
};

Vec mean_payload_embedding(const Embedder& embedder, const std::vector<BehaviorEvent>& behaviors);

// Throws InputError on empty behaviors.
Context encode_context(const PolicyParams& params, const Embedder& embedder,
                       const std::vector<BehaviorEvent>& behaviors);
Context context_from_mean(const PolicyParams& params, Vec mean_embed);

// Full next-token distribution after consuming `prefix`; with a grammar,
// illegal tokens are zeroed and the rest renormalized. Throws InputError if
// the prefix exceeds the rollout cap or contains bad ids.
Vec next_token_dist(const PolicyParams& params, const Context& ctx, std::span<const int> prefix,
                    const GrammarSpec* mask = nullptr);

// Exact sequence log-probability (temperature 1, unmasked).
double logprob(const PolicyParams& params, const Context& ctx, std::span<const int> tokens);

struct Rollout {
    std::vector<int> tokens;
    std::vector<double> logp;  // per-token logprob at temperature 1, unmasked
    bool hit_cap = false;      // stopped by the length cap instead of EOS
};

// Ancestral sampling until EOS or the cap. `masked` applies the grammar
// during decoding (production mode); training rollouts run unmasked so the
// structural reward carries signal.
Rollout sample(const PolicyParams& params, const Context& ctx, const GrammarSpec& g,
               double temperature, Rng& rng, bool masked);

// ---- gradients ------------------------------------------------------------

using Grad = std::vector<double>;  // same length as PolicyParams::w

// Exact gradient of sum_t weights[t] * log pi(tokens[t] | prefix). The
// returned direction is the ascent direction of that weighted log-likelihood.
Grad grad_weighted_loglik(const PolicyParams& params, const Context& ctx,
                          std::span<const int> tokens, std::span<const double> weights);
void accumulate_grad_weighted_loglik(const PolicyParams& params, const Context& ctx,
                                     std::span<const int> tokens, std::span<const double> weights,
                                     Grad& grad);

// Generalization to a full-vocabulary weight matrix: gradient of
// sum_t sum_v omega[t*V+v] * log pi_t(v), with omega held constant. This is
// the primitive behind the exact KL gradients (see grpo/distill).
void accumulate_grad_vocab_weighted(const PolicyParams& params, const Context& ctx,
                                    std::span<const int> tokens, std::span<const double> omega,
                                    Grad& grad);

// Per-position distributions pi(.|prefix_t) for prefixes of `tokens`
// (row t scores tokens[t]); returned row-major T x V.
std::vector<double> position_dists(const PolicyParams& params, const Context& ctx,
                                   std::span<const int> tokens);

}  // namespace iqgen
