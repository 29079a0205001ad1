#include "iqgen/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "iqgen/errors.hpp"
#include "iqgen/text.hpp"

namespace iqgen {

// ---- vocabulary -----------------------------------------------------------

void Vocab::build_ids() {
    ids_.clear();
    for (int i = 0; i < size(); ++i) {
        if (!ids_.emplace(tokens[i], i).second)
            throw InputError("vocab: duplicate token '" + tokens[i] + "'");
    }
    sep_id = size() - 3;
    eos_id = size() - 2;
    pad_id = size() - 1;
}

Vocab Vocab::from_world(const World& world) {
    Vocab v;
    for (const Topic& t : world.topics)
        for (const std::string& w : t.specific_terms) v.tokens.push_back(w);
    for (std::string_view w : generic_words()) v.tokens.emplace_back(w);
    for (const Topic& t : world.topics)
        for (const std::string& w : t.entity_terms) v.tokens.push_back(w);
    v.tokens.push_back("<sep>");
    v.tokens.push_back("<eos>");
    v.tokens.push_back("<pad>");
    v.build_ids();
    return v;
}

Vocab Vocab::from_content_tokens(std::vector<std::string> content) {
    Vocab v;
    v.tokens = std::move(content);
    v.tokens.push_back("<sep>");
    v.tokens.push_back("<eos>");
    v.tokens.push_back("<pad>");
    v.build_ids();
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw InputError("vocab: token id out of range");
    return tokens[id];
}

uint64_t Vocab::checksum() const {
    std::string joined;
    for (const std::string& t : tokens) {
        joined += t;
        joined += '\n';
    }
    return fnv1a64(joined);
}

// ---- grammar --------------------------------------------------------------

GrammarSpec make_grammar(const PolicyConfig& cfg, const Vocab& vocab) {
    GrammarSpec g;
    g.n_queries = cfg.n_queries;
    g.max_query_tokens = cfg.max_query_tokens;
    g.sep_id = vocab.sep_id;
    g.eos_id = vocab.eos_id;
    g.pad_id = vocab.pad_id;
    return g;
}

bool GrammarState::legal(const GrammarSpec& g, int token_id) const {
    if (token_id == g.pad_id) return false;
    if (token_id == g.sep_id) return current_len >= 1 && completed < g.n_queries - 1;
    if (token_id == g.eos_id) return current_len >= 1 && completed == g.n_queries - 1;
    return current_len < g.max_query_tokens;  // content token
}

void GrammarState::advance(const GrammarSpec& g, int token_id) {
    if (token_id == g.sep_id) {
        ++completed;
        current_len = 0;
    } else if (token_id != g.eos_id) {
        ++current_len;
    }
}

std::string_view parse_fail_name(ParseFail f) {
    switch (f) {
        case ParseFail::none: return "none";
        case ParseFail::no_terminator: return "no_terminator";
        case ParseFail::count: return "count";
        case ParseFail::empty_query: return "empty_query";
        case ParseFail::query_too_long: return "query_too_long";
        case ParseFail::bad_token: return "bad_token";
        case ParseFail::trailing: return "trailing";
    }
    return "unknown";
}

ParsedQueryList parse(std::span<const int> tokens, const GrammarSpec& g) {
    ParsedQueryList out;
    auto fail = [&](ParseFail reason) {
        out.valid = false;
        out.reason = reason;
        out.queries.clear();
        return out;
    };

    std::vector<int> current;
    bool terminated = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (terminated) return fail(ParseFail::trailing);
        if (t == g.pad_id) return fail(ParseFail::bad_token);
        if (t == g.sep_id || t == g.eos_id) {
            if (current.empty()) return fail(ParseFail::empty_query);
            out.queries.push_back(std::move(current));
            current.clear();
            if (t == g.eos_id) terminated = true;
        } else {
            current.push_back(t);
            if (static_cast<int>(current.size()) > g.max_query_tokens)
                return fail(ParseFail::query_too_long);
        }
    }
    if (!terminated) return fail(ParseFail::no_terminator);
    if (static_cast<int>(out.queries.size()) != g.n_queries) return fail(ParseFail::count);
    out.valid = true;
    out.reason = ParseFail::none;
    return out;
}

std::vector<std::string> query_strings(const ParsedQueryList& list, const Vocab& vocab) {
    std::vector<std::string> out;
    out.reserve(list.queries.size());
    for (const auto& q : list.queries) {
        std::string s;
        for (size_t i = 0; i < q.size(); ++i) {
            if (i > 0) s.push_back(' ');
            s += vocab.token(q[i]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- tiers and parameters -------------------------------------------------

Tier tier_from_name(std::string_view name) {
    if (name == "tiny") return Tier::tiny;
    if (name == "small") return Tier::small;
    if (name == "base") return Tier::base;
    if (name == "large") return Tier::large;
    throw ConfigError("unknown tier '" + std::string(name) + "'");
}

std::string_view tier_name(Tier t) {
    switch (t) {
        case Tier::tiny: return "tiny";
        case Tier::small: return "small";
        case Tier::base: return "base";
        case Tier::large: return "large";
    }
    return "?";
}

TierShape tier_shape(Tier t) {
    switch (t) {
        case Tier::tiny: return {16, 1};
        case Tier::small: return {32, 1};
        case Tier::base: return {64, 2};
        case Tier::large: return {128, 2};
    }
    return {16, 1};
}

namespace {

PolicyParams make_shell(Tier tier, const Vocab& vocab, int ctx_dim) {
    if (ctx_dim < 1) throw InputError("policy: ctx_dim must be >= 1");
    if (vocab.size() < 4) throw InputError("policy: vocabulary too small");
    PolicyParams p;
    p.tier = tier;
    p.vocab = vocab.size();
    p.ctx_dim = ctx_dim;
    const TierShape shape = tier_shape(tier);
    p.hidden = shape.hidden;
    p.layers = shape.layers;
    p.vocab_checksum = vocab.checksum();
    p.w.assign(p.out_b() + p.vocab, 0.0);
    return p;
}

// Initialization scales per block; the output head starts near zero so the
// initial policy is close to uniform (high entropy for exploration).
constexpr double kEmbInitScale = 0.3;
constexpr double kOutInitScale = 0.05;

// Cold-start format prior. A near-uniform untrained sampler emits a parseable
// list with probability ~1e-3 at best, and since invalid rollouts score zero
// on every reward, training would see no signal for hundreds of steps. Hidden
// unit 0 of every layer is therefore wired as a one-step "previous token was
// content" feature (update gate pinned open so the unit carries no history),
// token embeddings flag the type in coordinate 0, and the SEP/EOS output rows
// read the feature so separators are plausible right after a content token
// and suppressed right after a separator or at the list start. This only
// shapes the starting point; every weight involved remains trainable.
constexpr double kTypeFlag = 1.0;     // emb coord 0: +content / -structural
constexpr double kFlagGain = 2.0;     // candidate weight reading the flag
constexpr double kFlagLevel = 0.95;   // |unit 0| after the pinned update
constexpr double kGatePin = 10.0;     // update-gate bias pinning z ~= 1
constexpr double kSepRate = 0.40;     // target P(SEP | after content) at init
constexpr double kEosRate = 0.12;     // target P(EOS | after content) at init
constexpr double kLogitFloor = -3.0;  // SEP/EOS logit right after a separator
constexpr double kPadLogit = -5.0;    // PAD is never a useful token

void apply_format_prior(PolicyParams& p, const Vocab& vocab);
void apply_alignment_prior(PolicyParams& p, const Vocab& vocab, const Embedder& embedder,
                           uint64_t seed);

}  // namespace

PolicyParams PolicyParams::zeros(Tier tier, const Vocab& vocab, int ctx_dim) {
    return make_shell(tier, vocab, ctx_dim);
}

PolicyParams PolicyParams::init(Tier tier, const Vocab& vocab, int ctx_dim, uint64_t seed) {
    PolicyParams p = make_shell(tier, vocab, ctx_dim);
    Rng rng(seed);
    const double ctx_scale = 1.0 / std::sqrt(static_cast<double>(ctx_dim));
    const double rec_scale = 1.0 / std::sqrt(static_cast<double>(p.hidden));

    double* w = p.w.data();
    for (size_t i = p.ctx_proj(); i < p.tok_emb(); ++i) w[i] = ctx_scale * rng.normal();
    for (size_t i = p.tok_emb(); i < p.gru(0); ++i) w[i] = kEmbInitScale * rng.normal();
    for (int l = 0; l < p.layers; ++l) {
        const size_t base = p.gru(l);
        const size_t mats = 6 * static_cast<size_t>(p.hidden) * p.hidden;
        for (size_t i = 0; i < mats; ++i) w[base + i] = rec_scale * rng.normal();
        // biases stay zero
    }
    for (size_t i = p.out_w(); i < p.out_b(); ++i) w[i] = kOutInitScale * rng.normal();
    // out_b stays zero apart from the format prior
    apply_format_prior(p, vocab);
    return p;
}

PolicyParams warm_init(Tier tier, const Vocab& vocab, const Embedder& embedder, uint64_t seed) {
    PolicyParams p = PolicyParams::init(tier, vocab, embedder.dim(), seed);
    apply_alignment_prior(p, vocab, embedder, seed);
    return p;
}

PolicyParams make_initial_policy(const PolicyConfig& cfg, const Vocab& vocab,
                                 const Embedder& embedder, uint64_t train_seed) {
    constexpr uint64_t kInitSalt = 0x696e6974;
    return warm_init(tier_from_name(cfg.tier), vocab, embedder, mix_seed(train_seed, kInitSalt));
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
    return tier == other.tier && vocab == other.vocab && ctx_dim == other.ctx_dim &&
           hidden == other.hidden && layers == other.layers &&
           vocab_checksum == other.vocab_checksum;
}

namespace {

constexpr uint32_t kCkptMagic = 0x43505149;  // "IQPC"
constexpr uint32_t kCkptVersion = 1;

}  // namespace

void PolicyParams::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    put(kCkptMagic);
    put(kCkptVersion);
    const uint8_t tier_tag = static_cast<uint8_t>(tier);
    put(tier_tag);
    put(vocab);
    put(ctx_dim);
    put(hidden);
    put(layers);
    put(vocab_checksum);
    const uint64_t n = w.size();
    put(n);
    out.write(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(double));
    if (!out) throw IoError("write failed: " + path);
}

PolicyParams PolicyParams::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    auto get = [&](auto& v) {
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw IoError("truncated checkpoint: " + path);
    };
    uint32_t magic = 0, version = 0;
    get(magic);
    get(version);
    if (magic != kCkptMagic) throw IoError("not a policy checkpoint: " + path);
    if (version != kCkptVersion) throw IoError("unsupported checkpoint version: " + path);
    PolicyParams p;
    uint8_t tier_tag = 0;
    get(tier_tag);
    if (tier_tag > 3) throw IoError("corrupt checkpoint tier: " + path);
    p.tier = static_cast<Tier>(tier_tag);
    get(p.vocab);
    get(p.ctx_dim);
    get(p.hidden);
    get(p.layers);
    get(p.vocab_checksum);
    const TierShape shape = tier_shape(p.tier);
    if (p.hidden != shape.hidden || p.layers != shape.layers)
        throw IoError("checkpoint shape does not match its tier: " + path);
    uint64_t n = 0;
    get(n);
    if (n != p.out_b() + static_cast<size_t>(p.vocab))
        throw IoError("checkpoint weight count mismatch: " + path);
    p.w.resize(n);
    in.read(reinterpret_cast<char*>(p.w.data()), n * sizeof(double));
    if (!in) throw IoError("truncated checkpoint: " + path);
    return p;
}

// ---- forward core ---------------------------------------------------------

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y += M x for a row-major rows x cols matrix.
void matvec_add(const double* m, const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double* row = m + static_cast<size_t>(i) * cols;
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        int j = 0;
        for (; j + 4 <= cols; j += 4) {
            s0 += row[j] * x[j];
            s1 += row[j + 1] * x[j + 1];
            s2 += row[j + 2] * x[j + 2];
            s3 += row[j + 3] * x[j + 3];
        }
        for (; j < cols; ++j) s0 += row[j] * x[j];
        y[i] += (s0 + s1) + (s2 + s3);
    }
}

// y += M^T x for a row-major rows x cols matrix (x has `rows` entries).
void matvec_t_add(const double* m, const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* row = m + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] += xi * row[j];
    }
}

// M += a (outer) b for row-major rows x cols.
void outer_add(double* m, const double* a, const double* b, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double ai = a[i];
        if (ai == 0.0) continue;
        double* row = m + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) row[j] += ai * b[j];
    }
}

struct GruBlock {
    const double *wz, *wr, *wg, *uz, *ur, *ug, *bz, *br, *bg;
};

GruBlock gru_block(const double* w, const PolicyParams& p, int layer) {
    const size_t hh = static_cast<size_t>(p.hidden) * p.hidden;
    const double* base = w + p.gru(layer);
    return {base,          base + hh,     base + 2 * hh, base + 3 * hh, base + 4 * hh,
            base + 5 * hh, base + 6 * hh, base + 6 * hh + p.hidden, base + 6 * hh + 2 * p.hidden};
}

struct GruBlockMut {
    double *wz, *wr, *wg, *uz, *ur, *ug, *bz, *br, *bg;
};

GruBlockMut gru_block_mut(double* w, const PolicyParams& p, int layer) {
    const size_t hh = static_cast<size_t>(p.hidden) * p.hidden;
    double* base = w + p.gru(layer);
    return {base,          base + hh,     base + 2 * hh, base + 3 * hh, base + 4 * hh,
            base + 5 * hh, base + 6 * hh, base + 6 * hh + p.hidden, base + 6 * hh + 2 * p.hidden};
}

void apply_format_prior(PolicyParams& p, const Vocab& vocab) {
    const int h = p.hidden;
    double* w = p.w.data();

    double* emb = w + p.tok_emb();
    for (int v = 0; v < p.vocab; ++v)
        emb[static_cast<size_t>(v) * h] = vocab.is_special(v) ? -kTypeFlag : kTypeFlag;

    // Unit 0 per layer: z pinned open (no carry), candidate reads only the
    // type flag of the layer input, so the unit is a pure one-step feature.
    for (int l = 0; l < p.layers; ++l) {
        GruBlockMut b = gru_block_mut(w, p, l);
        for (int j = 0; j < h; ++j) {
            b.wz[j] = 0.0;
            b.uz[j] = 0.0;
            b.wg[j] = 0.0;
            b.ug[j] = 0.0;
        }
        b.wg[0] = kFlagGain;
        b.bz[0] = kGatePin;
        b.bg[0] = 0.0;
    }

    // Content logits sit near zero, so the partition mass is roughly the
    // content count; solve for the SEP/EOS logits that hit the target rates
    // after a content token and the floor after a structural one. The rest of
    // the SEP/EOS/PAD rows is zeroed so the structural logits start free of
    // per-user context noise.
    const double mass = vocab.content_size() / (1.0 - kSepRate - kEosRate);
    const double sep_hi = std::log(kSepRate * mass);
    const double eos_hi = std::log(kEosRate * mass);
    double* ow = w + p.out_w();
    double* ob = w + p.out_b();
    for (int v : {vocab.sep_id, vocab.eos_id, vocab.pad_id})
        std::fill_n(ow + static_cast<size_t>(v) * h, h, 0.0);
    ow[static_cast<size_t>(vocab.sep_id) * h] = (sep_hi - kLogitFloor) / (2.0 * kFlagLevel);
    ob[vocab.sep_id] = (sep_hi + kLogitFloor) / 2.0;
    ow[static_cast<size_t>(vocab.eos_id) * h] = (eos_hi - kLogitFloor) / (2.0 * kFlagLevel);
    ob[vocab.eos_id] = (eos_hi + kLogitFloor) / 2.0;
    ob[vocab.pad_id] = kPadLogit;
}

// Alignment prior. The world's geometry makes "score terms by embedding
// similarity" nearly linear, so a useful starting policy can be written
// directly into the weights. Beyond the one-step type flag (unit 0), the
// hidden units are organized as:
//
//  - unit 1, query length: accumulates ~0.12 per content token and resets
//    to zero at separators. The SEP/EOS rows read it, so separators start
//    rare right after a boundary and likely after 2-3 terms. This replaces
//    the flat flag-based separator rates: a position-dependent schedule is
//    what keeps list structure intact once the coherence bank (below)
//    starts boosting content mass mid-query.
//  - unit 2, query count: accumulates ~0.1 per separator and never resets.
//    The EOS row reads it, keeping end-of-list unlikely before the final
//    query and dominant at it.
//  - context bank (frozen gates): holds P_a nu for the whole rollout, where
//    nu is the user's mean behavior embedding. Reading it against rows
//    P_a e_v scores token v by <e_v, nu> -- a per-user interest prior.
//  - coherence bank (gated like the length unit): accumulates P_b e_t over
//    the content tokens of the query being written and resets at every
//    separator. Reading it against P_b e_v favors terms similar to the ones
//    already in the current query. Each query then commits to the topic of
//    its own first term, while first terms are drawn from the user mixture,
//    so the list splits across interests instead of chasing their mean --
//    which is what retrieval coverage needs.
//  - novelty bank: a slower accumulator over the whole list that never
//    resets, read back negatively. Without it the separator reset wipes
//    every trace of earlier queries, and no policy reachable from this
//    start could learn "don't target the same interest twice"; with it,
//    terms close to anything already emitted start mildly penalized, so
//    later queries drift toward still-uncovered interests. Within a query
//    the coherence readout dominates it by construction.
//
// P_a, P_b, P_c are shared random projections (entries N(0, 1/K), so
// E[P'P] = I and inner products survive the round trip). Token embeddings
// are centered before projection: the shared component of the vocabulary
// would pull every user toward the same "globally plausible" terms, and the
// prior should encode only the discriminative part. In stacked tiers the
// units above are wired as memoryless copies of the layer below, so the
// readout (which sees only the top layer) still observes every feature.
// The SEP/EOS calibration is solved numerically from the actual gate
// recurrences against target rates. Everything remains trainable.
constexpr double kCtxGain = 3.0;       // context projection gain through P_a
constexpr double kCtxRead = 1.3;       // content-row admixture of P_a e_v
constexpr double kCtxFreeze = -6.0;    // update-gate bias, context bank
constexpr double kCohGain = 3.0;       // candidate weight on the P_b / P_c inputs
constexpr double kCohRead = 2.5;       // content-row admixture of P_b e_v
constexpr double kNovRead = 2.0;       // negative content-row admixture of P_c e_v
constexpr double kNovFlagGate = 2.6;   // type-flag weight in the novelty z gate
constexpr double kNovBias = -5.36;     // z ~= 0.06 on content, ~= 0 on structural
constexpr double kAccumFlagGate = -6.0;  // type-flag weight in accumulator z gates
constexpr double kAccumBias = 4.0;       // z ~= 0.12 on content, ~= 1 on structural
constexpr double kCountBias = -8.95;     // query count: z ~= 0.05 at separators only
constexpr double kUnitCand = 3.0;      // |flag candidate| for the L/Q units
constexpr double kPassGain = 2.0;      // upper-layer copy gain
constexpr double kFlagRead = 4.0;      // SEP/EOS weight on the type flag: both are
                                       // strongly suppressed right after a boundary,
                                       // which is what guards against empty queries
                                       // even where the EOS odds ladder peaks
// The schedule constants below are odds against the pooled content mass, not
// probabilities: exp(sep_logit) = odds * mass, so P(SEP) = odds/(1+odds+...).
// Keeping them as odds makes the ladder steep where it matters — 19:1 at
// length three turns into ~0.95 stop probability instead of saturating.
constexpr double kSepOdds1 = 0.03;     // SEP:content odds after 1 content token
constexpr double kSepOdds3 = 19.0;     // ... after 3 content tokens
constexpr double kEosOddsQ4 = 0.012;   // EOS:SEP odds while emitting query 4
constexpr double kEosOddsQ5 = 40.0;    // ... while emitting the final query 5
constexpr double kMassBoost = 3.0;     // partition fudge for the prior's logit spread
constexpr uint64_t kProjSalt = 0x70726f6a;  // stream id for P_a / P_b

void apply_alignment_prior(PolicyParams& p, const Vocab& vocab, const Embedder& embedder,
                           uint64_t seed) {
    const int h = p.hidden;
    const int d = p.ctx_dim;
    const int lu = 1, qu = 2;         // length / count units
    const int a0 = 3;                 // context bank: units [a0, b0)
    const int ka = (h - 3) / 3;
    const int b0 = a0 + ka;           // coherence bank: units [b0, c0)
    const int kb = ka;
    const int c0 = b0 + kb;           // novelty bank: units [c0, h)
    const int kc = h - c0;

    Rng rng(mix_seed(seed, kProjSalt));
    std::vector<double> pa(static_cast<size_t>(ka) * d), pb(static_cast<size_t>(kb) * d),
        pc(static_cast<size_t>(kc) * d);
    const double sa = 1.0 / std::sqrt(static_cast<double>(ka));
    for (double& x : pa) x = sa * rng.normal();
    const double sb = 1.0 / std::sqrt(static_cast<double>(kb));
    for (double& x : pb) x = sb * rng.normal();
    const double sc = 1.0 / std::sqrt(static_cast<double>(kc));
    for (double& x : pc) x = sc * rng.normal();

    // Centered content embeddings.
    const int nc = vocab.content_size();
    std::vector<Vec> embs(nc);
    Vec mean(d, 0.0);
    for (int v = 0; v < nc; ++v) {
        embs[v] = embedder.embed(vocab.tokens[v]);
        for (int j = 0; j < d; ++j) mean[j] += embs[v][j] / nc;
    }
    auto proj_row = [&](const std::vector<double>& pr, int i, const Vec& e) {
        const double* row = pr.data() + static_cast<size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j] * (e[j] - mean[j]);
        return s;
    };

    double* w = p.w.data();

    // Context encoder: only the context bank sees the user embedding; the
    // accumulators and the coherence bank must start every rollout at zero.
    double* cp = w + p.ctx_proj();
    std::fill_n(cp, static_cast<size_t>(h) * d, 0.0);
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < d; ++j)
            cp[static_cast<size_t>(a0 + i) * d + j] = kCtxGain * pa[static_cast<size_t>(i) * d + j];

    // Coherence / novelty coordinates of the token embeddings carry P e_v
    // (zero for the structural tokens, so separators never feed the
    // accumulators). The context-bank coordinates keep their random values:
    // that bank ignores its input anyway, and the randomness stays available
    // to training.
    double* emb = w + p.tok_emb();
    for (int v = 0; v < p.vocab; ++v) {
        for (int i = 0; i < kb; ++i)
            emb[static_cast<size_t>(v) * h + b0 + i] =
                vocab.is_special(v) ? 0.0 : proj_row(pb, i, embs[v]);
        for (int i = 0; i < kc; ++i)
            emb[static_cast<size_t>(v) * h + c0 + i] =
                vocab.is_special(v) ? 0.0 : proj_row(pc, i, embs[v]);
    }

    // Output head: add the bank readouts to the content rows.
    double* ow = w + p.out_w();
    for (int v = 0; v < nc; ++v) {
        double* row = ow + static_cast<size_t>(v) * h;
        for (int i = 0; i < ka; ++i) row[a0 + i] += kCtxRead * proj_row(pa, i, embs[v]);
        for (int i = 0; i < kb; ++i) row[b0 + i] += kCohRead * proj_row(pb, i, embs[v]);
        for (int i = 0; i < kc; ++i) row[c0 + i] -= kNovRead * proj_row(pc, i, embs[v]);
    }

    for (int l = 0; l < p.layers; ++l) {
        GruBlockMut b = gru_block_mut(w, p, l);
        auto clear_row = [&](double* m, int j) {
            std::fill_n(m + static_cast<size_t>(j) * h, h, 0.0);
        };
        for (int j = 1; j < h; ++j) {
            clear_row(b.wz, j);
            clear_row(b.uz, j);
            clear_row(b.wg, j);
            clear_row(b.ug, j);
            b.bg[j] = 0.0;
            if (l > 0) {
                // Memoryless copy of the lower layer's unit j.
                b.bz[j] = kGatePin;
                b.wg[static_cast<size_t>(j) * h + j] = kPassGain;
            } else if (j == lu) {
                // Length: candidate 1 on content, 0 on structural; slow gate
                // on content, full open (reset through the zero candidate)
                // on structural.
                b.bz[j] = kAccumBias;
                b.wz[static_cast<size_t>(j) * h] = kAccumFlagGate;
                b.wg[static_cast<size_t>(j) * h] = kUnitCand;
                b.bg[j] = kUnitCand;
            } else if (j == qu) {
                // Count: candidate 1 on structural, 0 on content; gate opens
                // slightly at structural tokens only, no reset.
                b.bz[j] = kCountBias;
                b.wz[static_cast<size_t>(j) * h] = kAccumFlagGate;
                b.wg[static_cast<size_t>(j) * h] = -kUnitCand;
                b.bg[j] = kUnitCand;
            } else if (j < b0) {
                // Context bank: gate shut, zero candidate; the initial state
                // survives the rollout with ~0.25% decay per step.
                b.bz[j] = kCtxFreeze;
            } else if (j < c0) {
                // Coherence bank: slow accumulation of the P_b input on
                // content tokens, hard reset on structural ones.
                b.bz[j] = kAccumBias;
                b.wz[static_cast<size_t>(j) * h] = kAccumFlagGate;
                b.wg[static_cast<size_t>(j) * h + j] = kCohGain;
            } else {
                // Novelty bank: slower accumulation, no reset at separators.
                b.bz[j] = kNovBias;
                b.wz[static_cast<size_t>(j) * h] = kNovFlagGate;
                b.wg[static_cast<size_t>(j) * h + j] = kCohGain;
            }
        }
    }

    // SEP/EOS schedule. Walk the length/count recurrences exactly as the
    // forward pass will see them, then solve the two-point calibration for
    // each row: SEP from the in-query position, EOS from SEP's length term
    // plus a count term (so the EOS/SEP odds depend only on list progress).
    auto accum = [&](double z_active, int steps) {
        double s = 0.0;
        for (int i = 0; i < steps; ++i) s = (1.0 - z_active) * s + z_active;  // candidate ~ 1
        return s;
    };
    auto top_feature = [&](double s) {
        for (int l = 1; l < p.layers; ++l) s = std::tanh(kPassGain * s);
        return s;
    };
    // Gate levels as the forward pass realizes them: the type flag is +1 on
    // content and -1 on structural tokens, and the anchor positions are all
    // "after a content token" states (flag feature positive).
    const double z_len = sigmoid(kAccumFlagGate + kAccumBias);
    const double z_cnt = sigmoid(-kAccumFlagGate + kCountBias);
    const double f_len1 = top_feature(accum(z_len, 1));
    const double f_len3 = top_feature(accum(z_len, 3));
    // Every rollout starts by feeding PAD, a structural token, so while query
    // q is being emitted the count unit has ticked q times (PAD plus q-1
    // separators).  A list is valid only with exactly n_queries queries, so
    // the EOS odds stay negligible through query 4 and take over in query 5:
    // the anchors below are the in-query-4 and in-query-5 feature values.
    const double f_cnt4 = top_feature(accum(z_cnt, 4));
    const double f_cnt5 = top_feature(accum(z_cnt, 5));
    double f_flag = std::tanh(kFlagGain);
    for (int l = 1; l < p.layers; ++l) f_flag = std::tanh(kFlagGain * f_flag);
    const double mass = kMassBoost * nc;

    double* ob = w + p.out_b();
    for (int v : {vocab.sep_id, vocab.eos_id, vocab.pad_id})
        std::fill_n(ow + static_cast<size_t>(v) * h, h, 0.0);
    const double g_sep = std::log(kSepOdds3 / kSepOdds1) / (f_len3 - f_len1);
    const double c_sep = std::log(kSepOdds1 * mass) - g_sep * f_len1 - kFlagRead * f_flag;
    ow[static_cast<size_t>(vocab.sep_id) * h] = kFlagRead;
    ow[static_cast<size_t>(vocab.sep_id) * h + lu] = g_sep;
    ob[vocab.sep_id] = c_sep;
    // EOS shares SEP's length term, so the EOS:SEP odds depend only on the
    // count feature and a query never dangles: the list can only end where a
    // separator could fire.
    const double g_cnt = std::log(kEosOddsQ5 / kEosOddsQ4) / (f_cnt5 - f_cnt4);
    ow[static_cast<size_t>(vocab.eos_id) * h] = kFlagRead;
    ow[static_cast<size_t>(vocab.eos_id) * h + lu] = g_sep;
    ow[static_cast<size_t>(vocab.eos_id) * h + qu] = g_cnt;
    ob[vocab.eos_id] = c_sep + std::log(kEosOddsQ4) - g_cnt * f_cnt4;
    ob[vocab.pad_id] = kPadLogit;
}

// One recurrent update of layer `l`: consumes input u and state sin, fills
// z/r/g/rs work arrays and writes the new state to sout.
void gru_step(const PolicyParams& p, int l, const double* u, const double* sin_, double* z,
              double* r, double* g, double* rs, double* sout) {
    const int h = p.hidden;
    const GruBlock b = gru_block(p.w.data(), p, l);
    // z and r gates
    for (int i = 0; i < h; ++i) {
        z[i] = b.bz[i];
        r[i] = b.br[i];
    }
    matvec_add(b.wz, u, z, h, h);
    matvec_add(b.uz, sin_, z, h, h);
    matvec_add(b.wr, u, r, h, h);
    matvec_add(b.ur, sin_, r, h, h);
    for (int i = 0; i < h; ++i) {
        z[i] = sigmoid(z[i]);
        r[i] = sigmoid(r[i]);
        rs[i] = r[i] * sin_[i];
    }
    // candidate
    for (int i = 0; i < h; ++i) g[i] = b.bg[i];
    matvec_add(b.wg, u, g, h, h);
    matvec_add(b.ug, rs, g, h, h);
    for (int i = 0; i < h; ++i) {
        g[i] = std::tanh(g[i]);
        sout[i] = (1.0 - z[i]) * sin_[i] + z[i] * g[i];
    }
}

void compute_logits(const PolicyParams& p, const double* top_state, double* logits) {
    const int h = p.hidden;
    const int V = p.vocab;
    const double* ow = p.w.data() + p.out_w();
    const double* ob = p.w.data() + p.out_b();
    for (int v = 0; v < V; ++v) logits[v] = ob[v];
    matvec_add(ow, top_state, logits, V, h);
}

// logits -> probabilities in place; returns log of the partition function
// shifted by the max (so logp(v) = logits_in[v] - max - log_z).
double softmax_inplace(double* x, int n, double* max_out) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        z += x[i];
    }
    for (int i = 0; i < n; ++i) x[i] /= z;
    if (max_out) *max_out = mx;
    return std::log(z);
}

// Incremental decoding state.
struct StepState {
    std::vector<double> s;        // layers x h
    std::vector<double> scratch;  // z/r/g/rs work and layer input
    void reset(const PolicyParams& p, const Context& ctx) {
        const int h = p.hidden;
        s.resize(static_cast<size_t>(p.layers) * h);
        scratch.resize(5 * static_cast<size_t>(h));
        for (int l = 0; l < p.layers; ++l)
            for (int i = 0; i < h; ++i) s[static_cast<size_t>(l) * h + i] = std::tanh(ctx.projected[i]);
    }
    // Feeds one token id, updates all layers, writes logits (size V).
    void step(const PolicyParams& p, int token_id, double* logits) {
        const int h = p.hidden;
        double* z = scratch.data();
        double* r = z + h;
        double* g = r + h;
        double* rs = g + h;
        double* sout = rs + h;
        const double* u = p.w.data() + p.tok_emb() + static_cast<size_t>(token_id) * h;
        for (int l = 0; l < p.layers; ++l) {
            double* sl = s.data() + static_cast<size_t>(l) * h;
            gru_step(p, l, u, sl, z, r, g, rs, sout);
            std::copy_n(sout, h, sl);
            u = sl;
        }
        compute_logits(p, s.data() + static_cast<size_t>(p.layers - 1) * h, logits);
    }
};

void check_token_ids(const PolicyParams& p, std::span<const int> tokens) {
    for (int t : tokens)
        if (t < 0 || t >= p.vocab) throw InputError("policy: token id out of range");
}

}  // namespace

// ---- context --------------------------------------------------------------

Vec mean_payload_embedding(const Embedder& embedder, const std::vector<BehaviorEvent>& behaviors) {
    if (behaviors.empty()) throw InputError("encode_context: empty behavior list");
    Vec mean(embedder.dim(), 0.0);
    for (const BehaviorEvent& b : behaviors) {
        const Vec e = embedder.embed(b.payload);
        for (int i = 0; i < embedder.dim(); ++i) mean[i] += e[i];
    }
    for (double& x : mean) x /= static_cast<double>(behaviors.size());
    return mean;
}

Context context_from_mean(const PolicyParams& params, Vec mean_embed) {
    if (static_cast<int>(mean_embed.size()) != params.ctx_dim)
        throw InputError("encode_context: dimension mismatch");
    Context ctx;
    ctx.projected.assign(params.hidden, 0.0);
    matvec_add(params.w.data() + params.ctx_proj(), mean_embed.data(), ctx.projected.data(),
               params.hidden, params.ctx_dim);
    ctx.mean_embed = std::move(mean_embed);
    return ctx;
}

Context encode_context(const PolicyParams& params, const Embedder& embedder,
                       const std::vector<BehaviorEvent>& behaviors) {
    return context_from_mean(params, mean_payload_embedding(embedder, behaviors));
}

// ---- inference ops --------------------------------------------------------

Vec next_token_dist(const PolicyParams& params, const Context& ctx, std::span<const int> prefix,
                    const GrammarSpec* mask) {
    check_token_ids(params, prefix);
    if (mask && static_cast<int>(prefix.size()) >= mask->rollout_cap())
        throw InputError("next_token_dist: prefix exceeds rollout cap");

    StepState state;
    state.reset(params, ctx);
    Vec logits(params.vocab);
    int prev = params.vocab - 1;  // PAD starts every sequence
    state.step(params, prev, logits.data());
    GrammarState gs;
    for (int t : prefix) {
        if (mask) gs.advance(*mask, t);
        state.step(params, t, logits.data());
    }
    if (!mask) {
        softmax_inplace(logits.data(), params.vocab, nullptr);
        return logits;
    }
    // Masked: softmax over the legal set only.
    double mx = -1e300;
    for (int v = 0; v < params.vocab; ++v)
        if (gs.legal(*mask, v)) mx = std::max(mx, logits[v]);
    if (mx == -1e300) throw InputError("next_token_dist: no legal token at this state");
    double z = 0.0;
    for (int v = 0; v < params.vocab; ++v) {
        if (gs.legal(*mask, v)) {
            logits[v] = std::exp(logits[v] - mx);
            z += logits[v];
        } else {
            logits[v] = 0.0;
        }
    }
    for (double& p : logits) p /= z;
    return logits;
}

double logprob(const PolicyParams& params, const Context& ctx, std::span<const int> tokens) {
    check_token_ids(params, tokens);
    StepState state;
    state.reset(params, ctx);
    Vec logits(params.vocab);
    double total = 0.0;
    int prev = params.vocab - 1;  // PAD
    for (int y : tokens) {
        state.step(params, prev, logits.data());
        double mx = logits[0];
        for (int v = 1; v < params.vocab; ++v) mx = std::max(mx, logits[v]);
        double z = 0.0;
        for (int v = 0; v < params.vocab; ++v) z += std::exp(logits[v] - mx);
        total += logits[y] - mx - std::log(z);
        prev = y;
    }
    return total;
}

Rollout sample(const PolicyParams& params, const Context& ctx, const GrammarSpec& g,
               double temperature, Rng& rng, bool masked) {
    if (temperature < 0.0) throw InputError("sample: temperature must be >= 0");
    Rollout out;
    StepState state;
    state.reset(params, ctx);
    Vec logits(params.vocab);
    Vec probs(params.vocab);
    GrammarState gs;
    int prev = params.vocab - 1;  // PAD
    const int cap = g.rollout_cap();

    for (int step = 0; step < cap; ++step) {
        state.step(params, prev, logits.data());

        // Temperature-1 log-partition for the recorded logprob.
        double mx = logits[0];
        for (int v = 1; v < params.vocab; ++v) mx = std::max(mx, logits[v]);
        double z1 = 0.0;
        for (int v = 0; v < params.vocab; ++v) z1 += std::exp(logits[v] - mx);
        const double log_z1 = mx + std::log(z1);

        auto legal = [&](int v) { return !masked || gs.legal(g, v); };
        int chosen;
        if (temperature < 1e-12) {
            chosen = -1;
            for (int v = 0; v < params.vocab; ++v)
                if (legal(v) && (chosen < 0 || logits[v] > logits[chosen])) chosen = v;
        } else {
            double mxl = -1e300;
            for (int v = 0; v < params.vocab; ++v)
                if (legal(v)) mxl = std::max(mxl, logits[v]);
            double zs = 0.0;
            for (int v = 0; v < params.vocab; ++v) {
                probs[v] = legal(v) ? std::exp((logits[v] - mxl) / temperature) : 0.0;
                zs += probs[v];
            }
            const double u = rng.uniform() * zs;
            double acc = 0.0;
            chosen = -1;
            for (int v = 0; v < params.vocab; ++v) {
                acc += probs[v];
                if (u < acc) {
                    chosen = v;
                    break;
                }
            }
            if (chosen < 0) {  // numerical edge: pick the last legal token
                for (int v = params.vocab - 1; v >= 0; --v)
                    if (legal(v)) {
                        chosen = v;
                        break;
                    }
            }
        }
        if (chosen < 0) throw InputError("sample: no legal token available");

        out.tokens.push_back(chosen);
        out.logp.push_back(logits[chosen] - log_z1);
        if (chosen == g.eos_id) return out;
        gs.advance(g, chosen);
        prev = chosen;
    }
    out.hit_cap = true;
    return out;
}

// ---- cached forward + exact backward --------------------------------------

namespace {

// Per-position activations for one sequence, laid out (t * layers + l) * h.
struct ForwardCache {
    int T = 0;
    std::vector<double> s0;  // h, tanh of the context projection
    std::vector<double> sin_, z, r, g, rs, sout;
    std::vector<double> probs;  // T x V, temperature-1 distributions

    double* at(std::vector<double>& a, const PolicyParams& p, int t, int l) {
        return a.data() + (static_cast<size_t>(t) * p.layers + l) * p.hidden;
    }
    const double* at(const std::vector<double>& a, const PolicyParams& p, int t, int l) const {
        return a.data() + (static_cast<size_t>(t) * p.layers + l) * p.hidden;
    }
};

void forward_cached(const PolicyParams& p, const Context& ctx, std::span<const int> tokens,
                    ForwardCache& c) {
    check_token_ids(p, tokens);
    const int T = static_cast<int>(tokens.size());
    const int h = p.hidden;
    const int L = p.layers;
    c.T = T;
    c.s0.resize(h);
    for (int i = 0; i < h; ++i) c.s0[i] = std::tanh(ctx.projected[i]);
    const size_t cells = static_cast<size_t>(T) * L * h;
    c.sin_.resize(cells);
    c.z.resize(cells);
    c.r.resize(cells);
    c.g.resize(cells);
    c.rs.resize(cells);
    c.sout.resize(cells);
    c.probs.resize(static_cast<size_t>(T) * p.vocab);

    for (int t = 0; t < T; ++t) {
        const int prev = t == 0 ? p.vocab - 1 : tokens[t - 1];
        const double* u = p.w.data() + p.tok_emb() + static_cast<size_t>(prev) * h;
        for (int l = 0; l < L; ++l) {
            double* sin_ = c.at(c.sin_, p, t, l);
            if (t == 0)
                std::copy_n(c.s0.data(), h, sin_);
            else
                std::copy_n(c.at(c.sout, p, t - 1, l), h, sin_);
            gru_step(p, l, u, sin_, c.at(c.z, p, t, l), c.at(c.r, p, t, l), c.at(c.g, p, t, l),
                     c.at(c.rs, p, t, l), c.at(c.sout, p, t, l));
            u = c.at(c.sout, p, t, l);
        }
        double* probs = c.probs.data() + static_cast<size_t>(t) * p.vocab;
        compute_logits(p, c.at(c.sout, p, t, L - 1), probs);
        softmax_inplace(probs, p.vocab, nullptr);
    }
}

// Backpropagates per-position logit gradients (T x V) through the cached
// forward pass, accumulating into `grad`.
void backward_from_dlogits(const PolicyParams& p, const Context& ctx, std::span<const int> tokens,
                           const ForwardCache& c, const std::vector<double>& dlogits, Grad& grad) {
    const int T = c.T;
    const int h = p.hidden;
    const int L = p.layers;
    const int V = p.vocab;

    double* gw = grad.data();
    double* g_out_w = gw + p.out_w();
    double* g_out_b = gw + p.out_b();
    double* g_emb = gw + p.tok_emb();

    std::vector<double> ds_carry(static_cast<size_t>(L) * h, 0.0);
    std::vector<double> dsout(static_cast<size_t>(L) * h);
    std::vector<double> ds(h), dz(h), dg(h), dag(h), daz(h), dar(h), dr(h), drs(h), du(h),
        dsin(h);

    for (int t = T - 1; t >= 0; --t) {
        std::fill(dsout.begin(), dsout.end(), 0.0);
        // Output head.
        const double* dl = dlogits.data() + static_cast<size_t>(t) * V;
        const double* top = c.at(c.sout, p, t, L - 1);
        double* dtop = dsout.data() + static_cast<size_t>(L - 1) * h;
        for (int v = 0; v < V; ++v) {
            const double d = dl[v];
            if (d == 0.0) continue;
            g_out_b[v] += d;
            double* row = g_out_w + static_cast<size_t>(v) * h;
            const double* orow = p.w.data() + p.out_w() + static_cast<size_t>(v) * h;
            for (int j = 0; j < h; ++j) {
                row[j] += d * top[j];
                dtop[j] += d * orow[j];
            }
        }

        for (int l = L - 1; l >= 0; --l) {
            const GruBlock b = gru_block(p.w.data(), p, l);
            const GruBlockMut gb = gru_block_mut(gw, p, l);
            const double* sin_ = c.at(c.sin_, p, t, l);
            const double* z = c.at(c.z, p, t, l);
            const double* r = c.at(c.r, p, t, l);
            const double* g_ = c.at(c.g, p, t, l);
            const double* rs = c.at(c.rs, p, t, l);
            const int prev = t == 0 ? p.vocab - 1 : tokens[t - 1];
            const double* u = l == 0 ? p.w.data() + p.tok_emb() + static_cast<size_t>(prev) * h
                                     : c.at(c.sout, p, t, l - 1);

            double* carry = ds_carry.data() + static_cast<size_t>(l) * h;
            const double* dout = dsout.data() + static_cast<size_t>(l) * h;
            for (int i = 0; i < h; ++i) {
                ds[i] = dout[i] + carry[i];
                dz[i] = ds[i] * (g_[i] - sin_[i]);
                dg[i] = ds[i] * z[i];
                dsin[i] = ds[i] * (1.0 - z[i]);
                dag[i] = dg[i] * (1.0 - g_[i] * g_[i]);
                daz[i] = dz[i] * z[i] * (1.0 - z[i]);
            }
            std::fill(drs.begin(), drs.end(), 0.0);
            matvec_t_add(b.ug, dag.data(), drs.data(), h, h);
            for (int i = 0; i < h; ++i) {
                dr[i] = drs[i] * sin_[i];
                dsin[i] += drs[i] * r[i];
                dar[i] = dr[i] * r[i] * (1.0 - r[i]);
            }
            matvec_t_add(b.uz, daz.data(), dsin.data(), h, h);
            matvec_t_add(b.ur, dar.data(), dsin.data(), h, h);
            std::fill(du.begin(), du.end(), 0.0);
            matvec_t_add(b.wz, daz.data(), du.data(), h, h);
            matvec_t_add(b.wr, dar.data(), du.data(), h, h);
            matvec_t_add(b.wg, dag.data(), du.data(), h, h);

            outer_add(gb.wz, daz.data(), u, h, h);
            outer_add(gb.uz, daz.data(), sin_, h, h);
            outer_add(gb.wr, dar.data(), u, h, h);
            outer_add(gb.ur, dar.data(), sin_, h, h);
            outer_add(gb.wg, dag.data(), u, h, h);
            outer_add(gb.ug, dag.data(), rs, h, h);
            for (int i = 0; i < h; ++i) {
                gb.bz[i] += daz[i];
                gb.br[i] += dar[i];
                gb.bg[i] += dag[i];
            }

            std::copy_n(dsin.data(), h, carry);
            if (l > 0) {
                double* below = dsout.data() + static_cast<size_t>(l - 1) * h;
                for (int i = 0; i < h; ++i) below[i] += du[i];
            } else {
                double* erow = g_emb + static_cast<size_t>(prev) * h;
                for (int i = 0; i < h; ++i) erow[i] += du[i];
            }
        }
    }

    // Initial state: every layer starts from tanh(ctx.projected).
    std::vector<double> dc(h, 0.0);
    for (int l = 0; l < L; ++l) {
        const double* carry = ds_carry.data() + static_cast<size_t>(l) * h;
        for (int i = 0; i < h; ++i) dc[i] += carry[i] * (1.0 - c.s0[i] * c.s0[i]);
    }
    outer_add(gw + p.ctx_proj(), dc.data(), ctx.mean_embed.data(), h, p.ctx_dim);
}

}  // namespace

void accumulate_grad_weighted_loglik(const PolicyParams& params, const Context& ctx,
                                     std::span<const int> tokens, std::span<const double> weights,
                                     Grad& grad) {
    if (tokens.size() != weights.size())
        throw InputError("grad_weighted_loglik: tokens/weights length mismatch");
    for (double w : weights)
        if (!std::isfinite(w)) throw InputError("grad_weighted_loglik: non-finite weight");
    if (grad.size() != params.count()) throw InputError("grad buffer has wrong size");
    if (tokens.empty()) return;

    ForwardCache cache;
    forward_cached(params, ctx, tokens, cache);
    const int T = cache.T;
    const int V = params.vocab;
    // d/dlogits of sum_t w_t log pi(y_t) is w_t (onehot(y_t) - pi_t).
    std::vector<double> dlogits(static_cast<size_t>(T) * V);
    for (int t = 0; t < T; ++t) {
        const double w = weights[t];
        const double* pi = cache.probs.data() + static_cast<size_t>(t) * V;
        double* dl = dlogits.data() + static_cast<size_t>(t) * V;
        for (int v = 0; v < V; ++v) dl[v] = -w * pi[v];
        dl[tokens[t]] += w;
    }
    backward_from_dlogits(params, ctx, tokens, cache, dlogits, grad);
}

Grad grad_weighted_loglik(const PolicyParams& params, const Context& ctx,
                          std::span<const int> tokens, std::span<const double> weights) {
    Grad grad(params.count(), 0.0);
    accumulate_grad_weighted_loglik(params, ctx, tokens, weights, grad);
    return grad;
}

void accumulate_grad_vocab_weighted(const PolicyParams& params, const Context& ctx,
                                    std::span<const int> tokens, std::span<const double> omega,
                                    Grad& grad) {
    const int V = params.vocab;
    if (omega.size() != tokens.size() * static_cast<size_t>(V))
        throw InputError("grad_vocab_weighted: omega must be T x V");
    if (grad.size() != params.count()) throw InputError("grad buffer has wrong size");
    if (tokens.empty()) return;

    ForwardCache cache;
    forward_cached(params, ctx, tokens, cache);
    const int T = cache.T;
    // d/dlogit_v of sum_u omega_u log pi(u) is omega_v - pi_v * sum_u omega_u.
    std::vector<double> dlogits(static_cast<size_t>(T) * V);
    for (int t = 0; t < T; ++t) {
        const double* om = omega.data() + static_cast<size_t>(t) * V;
        const double* pi = cache.probs.data() + static_cast<size_t>(t) * V;
        double* dl = dlogits.data() + static_cast<size_t>(t) * V;
        double total = 0.0;
        for (int v = 0; v < V; ++v) total += om[v];
        for (int v = 0; v < V; ++v) dl[v] = om[v] - pi[v] * total;
    }
    backward_from_dlogits(params, ctx, tokens, cache, dlogits, grad);
}

std::vector<double> position_dists(const PolicyParams& params, const Context& ctx,
                                   std::span<const int> tokens) {
    ForwardCache cache;
    forward_cached(params, ctx, tokens, cache);
    return std::move(cache.probs);
}

}  // namespace iqgen
