#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

// Flat-INI configuration covering every pipeline stage. Defaults reproduce
// the documented desk-scale setup; README lists each key with its provenance
// (pinned by the method description vs. a free implementation choice).

namespace iqgen {

struct WorldConfig {
    int topics = 32;
    int articles = 20000;
    int users = 2000;
    double noise_rate = 0.3;
    int embed_dim = 64;
    uint64_t seed = 1;

    bool operator==(const WorldConfig&) const = default;
};

struct EmbedConfig {
    int dim = 64;
    double alpha = 1.0;  // topic-anchor admixture weight
};

struct IndexConfig {
    std::string mode = "approximate";  // "exact" | "approximate"
    int probes = 4;                    // clusters scanned per query (approximate mode)
};

struct FilterConfig {
    double split = 0.2;     // held-out fraction
    double lr = 1.0;        // logistic-regression step size
    int epochs = 400;       // full-batch gradient-descent epochs
    double threshold = 0.5;
    int max_train = 50000;  // cap on labeled behaviors used for training
};

struct PolicyConfig {
    std::string tier = "large";  // tiny | small | base | large
    int n_queries = 5;           // queries per generated list
    int max_query_tokens = 4;    // L_max
    double temperature = 1.0;    // sampling temperature for rollouts
};

struct RewardConfig {
    double lambda_align = 0.2;
    double lambda_cov = 0.2;
    double lambda_spec = 0.2;
    double lambda_div = 0.2;
    double lambda_struct = 0.2;
    int top_k = 10;  // K for the alignment reward's retrieval
};

struct GrpoConfig {
    int group_size = 8;    // G rollouts per user
    double clip = 0.2;     // ε
    double kl_beta = 0.04; // β
    double lr = 3e-3;
    int steps = 300;
    int batch_users = 4;
    int sync_every = 1;    // refresh θ_old every this many steps
    uint64_t seed = 1;
    std::string ratio_mode = "per_token";  // per_token | per_sequence
};

struct DistillConfig {
    std::string mode = "onpolicy";  // onpolicy | supervised | none
    std::string student_tier = "tiny";
    int steps = 300;
    int batch_users = 8;
    int rollouts_per_user = 2;
    double lr = 3e-3;
    uint64_t seed = 1;
};

struct EvalConfig {
    int best_of_n = 4;
    int max_users = 0;  // 0 = all users
    double temperature = 0.3;
    uint64_t seed = 1;
    // Sweep budgets (capacity / best-of-N / reward ablation drivers).
    int sweep_seeds = 3;
    int sweep_steps = 120;
    int sweep_batch_users = 4;
    int sweep_max_users = 400;
    std::string sweep_tier = "base";  // tier used by best-of-N and ablation sweeps
};

struct Config {
    WorldConfig world;
    EmbedConfig embed;
    IndexConfig index;
    FilterConfig filter;
    PolicyConfig policy;
    RewardConfig rewards;
    GrpoConfig grpo;
    DistillConfig distill;
    EvalConfig eval;

    // Runtime-only (CLI flag, not part of the file schema or fingerprint).
    int threads = 0;  // 0 = all available cores

    // Applies `key = value` from section [section]; unknown names or
    // unparsable values throw ConfigError.
    void set(const std::string& section, const std::string& key, const std::string& value);

    // Range and cross-field checks; throws ConfigError.
    void validate() const;

    // Sets every stage seed (world, grpo, distill, eval) — the CLI --seed flag.
    void override_seed(uint64_t seed);

    // Canonical INI rendering (fixed order, round-trip-exact numbers).
    std::string dump() const;

    // FNV-1a hash of dump(), as 16 hex digits.
    std::string fingerprint() const;
};

// Parses an INI file over `base`; throws ParseFileError / ConfigError.
Config load_config_file(const std::string& path, const Config& base = Config{});

// Parses INI text (for tests); file label used in error messages.
Config parse_config_text(const std::string& text, const Config& base = Config{},
                         const std::string& label = "<config>");

}  // namespace iqgen
