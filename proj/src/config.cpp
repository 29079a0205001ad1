#include "iqgen/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "iqgen/embed.hpp"
#include "iqgen/errors.hpp"

namespace iqgen {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& where, const std::string& value) {
    try {
        size_t used = 0;
        int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected integer, got '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& where, const std::string& value) {
    try {
        size_t used = 0;
        unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected unsigned integer, got '" + value + "'");
    }
}

double parse_double(const std::string& where, const std::string& value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected number, got '" + value + "'");
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_choice(const std::string& where, const std::string& value,
                  std::initializer_list<const char*> allowed) {
    for (const char* a : allowed) {
        if (value == a) return;
    }
    std::string msg = where + ": '" + value + "' not one of {";
    bool first = true;
    for (const char* a : allowed) {
        if (!first) msg += ", ";
        msg += a;
        first = false;
    }
    throw ConfigError(msg + "}");
}

}  // namespace

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    const std::string where = "[" + section + "] " + key;
    if (section == "world") {
        if (key == "topics") world.topics = parse_int(where, value);
        else if (key == "articles") world.articles = parse_int(where, value);
        else if (key == "users") world.users = parse_int(where, value);
        else if (key == "noise_rate") world.noise_rate = parse_double(where, value);
        else if (key == "embed_dim") world.embed_dim = parse_int(where, value);
        else if (key == "seed") world.seed = parse_u64(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "embed") {
        if (key == "dim") embed.dim = parse_int(where, value);
        else if (key == "alpha") embed.alpha = parse_double(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "index") {
        if (key == "mode") index.mode = value;
        else if (key == "probes") index.probes = parse_int(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "filter") {
        if (key == "split") filter.split = parse_double(where, value);
        else if (key == "lr") filter.lr = parse_double(where, value);
        else if (key == "epochs") filter.epochs = parse_int(where, value);
        else if (key == "threshold") filter.threshold = parse_double(where, value);
        else if (key == "max_train") filter.max_train = parse_int(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "policy") {
        if (key == "tier") policy.tier = value;
        else if (key == "n_queries") policy.n_queries = parse_int(where, value);
        else if (key == "max_query_tokens") policy.max_query_tokens = parse_int(where, value);
        else if (key == "temperature") policy.temperature = parse_double(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "rewards") {
        if (key == "lambda_align") rewards.lambda_align = parse_double(where, value);
        else if (key == "lambda_cov") rewards.lambda_cov = parse_double(where, value);
        else if (key == "lambda_spec") rewards.lambda_spec = parse_double(where, value);
        else if (key == "lambda_div") rewards.lambda_div = parse_double(where, value);
        else if (key == "lambda_struct") rewards.lambda_struct = parse_double(where, value);
        else if (key == "top_k") rewards.top_k = parse_int(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "grpo") {
        if (key == "group_size") grpo.group_size = parse_int(where, value);
        else if (key == "clip") grpo.clip = parse_double(where, value);
        else if (key == "kl_beta") grpo.kl_beta = parse_double(where, value);
        else if (key == "lr") grpo.lr = parse_double(where, value);
        else if (key == "steps") grpo.steps = parse_int(where, value);
        else if (key == "batch_users") grpo.batch_users = parse_int(where, value);
        else if (key == "sync_every") grpo.sync_every = parse_int(where, value);
        else if (key == "seed") grpo.seed = parse_u64(where, value);
        else if (key == "ratio_mode") grpo.ratio_mode = value;
        else throw ConfigError(where + ": unknown key");
    } else if (section == "distill") {
        if (key == "mode") distill.mode = value;
        else if (key == "student_tier") distill.student_tier = value;
        else if (key == "steps") distill.steps = parse_int(where, value);
        else if (key == "batch_users") distill.batch_users = parse_int(where, value);
        else if (key == "rollouts_per_user") distill.rollouts_per_user = parse_int(where, value);
        else if (key == "lr") distill.lr = parse_double(where, value);
        else if (key == "seed") distill.seed = parse_u64(where, value);
        else throw ConfigError(where + ": unknown key");
    } else if (section == "eval") {
        if (key == "best_of_n") eval.best_of_n = parse_int(where, value);
        else if (key == "max_users") eval.max_users = parse_int(where, value);
        else if (key == "temperature") eval.temperature = parse_double(where, value);
        else if (key == "seed") eval.seed = parse_u64(where, value);
        else if (key == "sweep_seeds") eval.sweep_seeds = parse_int(where, value);
        else if (key == "sweep_steps") eval.sweep_steps = parse_int(where, value);
        else if (key == "sweep_batch_users") eval.sweep_batch_users = parse_int(where, value);
        else if (key == "sweep_max_users") eval.sweep_max_users = parse_int(where, value);
        else if (key == "sweep_tier") eval.sweep_tier = value;
        else throw ConfigError(where + ": unknown key");
    } else {
        throw ConfigError("unknown config section [" + section + "]");
    }
}

void Config::validate() const {
    if (world.topics < 2) throw ConfigError("[world] topics must be >= 2");
    if (world.articles < world.topics) throw ConfigError("[world] articles must be >= topics");
    if (world.users < 1) throw ConfigError("[world] users must be >= 1");
    if (world.noise_rate < 0.0 || world.noise_rate > 1.0)
        throw ConfigError("[world] noise_rate must be in [0, 1]");
    if (world.embed_dim < 8) throw ConfigError("[world] embed_dim must be >= 8");
    if (world.topics + 1 > world.embed_dim)
        throw ConfigError("[world] topics + 1 must not exceed embed_dim (anchor geometry)");

    if (embed.dim != world.embed_dim)
        throw ConfigError("[embed] dim must equal [world] embed_dim");
    if (embed.alpha < 0.0) throw ConfigError("[embed] alpha must be >= 0");

    check_choice("[index] mode", index.mode, {"exact", "approximate"});
    if (index.probes < 1) throw ConfigError("[index] probes must be >= 1");

    if (filter.split <= 0.0 || filter.split >= 1.0)
        throw ConfigError("[filter] split must be in (0, 1)");
    if (filter.lr <= 0.0) throw ConfigError("[filter] lr must be > 0");
    if (filter.epochs < 1) throw ConfigError("[filter] epochs must be >= 1");
    if (filter.max_train < 100) throw ConfigError("[filter] max_train must be >= 100");

    check_choice("[policy] tier", policy.tier, {"tiny", "small", "base", "large"});
    if (policy.n_queries < 1) throw ConfigError("[policy] n_queries must be >= 1");
    if (policy.max_query_tokens < 1) throw ConfigError("[policy] max_query_tokens must be >= 1");
    if (policy.temperature <= 0.0) throw ConfigError("[policy] temperature must be > 0");

    const double lambdas[] = {rewards.lambda_align, rewards.lambda_cov, rewards.lambda_spec,
                              rewards.lambda_div, rewards.lambda_struct};
    double lambda_sum = 0.0;
    for (double l : lambdas) {
        if (l < 0.0) throw ConfigError("[rewards] lambda weights must be >= 0");
        lambda_sum += l;
    }
    if (std::abs(lambda_sum - 1.0) > 1e-6)
        throw ConfigError("[rewards] lambda weights must sum to 1");
    if (rewards.top_k < 1) throw ConfigError("[rewards] top_k must be >= 1");

    if (grpo.group_size < 2) throw ConfigError("[grpo] group_size must be >= 2");
    if (grpo.clip <= 0.0 || grpo.clip >= 1.0) throw ConfigError("[grpo] clip must be in (0, 1)");
    if (grpo.kl_beta < 0.0) throw ConfigError("[grpo] kl_beta must be >= 0");
    if (grpo.lr <= 0.0) throw ConfigError("[grpo] lr must be > 0");
    if (grpo.steps < 0) throw ConfigError("[grpo] steps must be >= 0");
    if (grpo.batch_users < 1) throw ConfigError("[grpo] batch_users must be >= 1");
    if (grpo.sync_every < 1) throw ConfigError("[grpo] sync_every must be >= 1");
    check_choice("[grpo] ratio_mode", grpo.ratio_mode, {"per_token", "per_sequence"});

    check_choice("[distill] mode", distill.mode, {"onpolicy", "supervised", "none"});
    check_choice("[distill] student_tier", distill.student_tier,
                 {"tiny", "small", "base", "large"});
    if (distill.steps < 0) throw ConfigError("[distill] steps must be >= 0");
    if (distill.batch_users < 1) throw ConfigError("[distill] batch_users must be >= 1");
    if (distill.rollouts_per_user < 1)
        throw ConfigError("[distill] rollouts_per_user must be >= 1");
    if (distill.lr <= 0.0) throw ConfigError("[distill] lr must be > 0");

    if (eval.best_of_n < 1) throw ConfigError("[eval] best_of_n must be >= 1");
    if (eval.max_users < 0) throw ConfigError("[eval] max_users must be >= 0");
    if (eval.temperature <= 0.0) throw ConfigError("[eval] temperature must be > 0");
    if (eval.sweep_seeds < 1) throw ConfigError("[eval] sweep_seeds must be >= 1");
    if (eval.sweep_steps < 0) throw ConfigError("[eval] sweep_steps must be >= 0");
    if (eval.sweep_batch_users < 1) throw ConfigError("[eval] sweep_batch_users must be >= 1");
    if (eval.sweep_max_users < 0) throw ConfigError("[eval] sweep_max_users must be >= 0");
    check_choice("[eval] sweep_tier", eval.sweep_tier, {"tiny", "small", "base", "large"});
}

void Config::override_seed(uint64_t seed) {
    world.seed = seed;
    grpo.seed = seed;
    distill.seed = seed;
    eval.seed = seed;
}

std::string Config::dump() const {
    std::ostringstream out;
    out << "[world]\n";
    out << "topics = " << world.topics << "\n";
    out << "articles = " << world.articles << "\n";
    out << "users = " << world.users << "\n";
    out << "noise_rate = " << fmt_double(world.noise_rate) << "\n";
    out << "embed_dim = " << world.embed_dim << "\n";
    out << "seed = " << world.seed << "\n";
    out << "\n[embed]\n";
    out << "dim = " << embed.dim << "\n";
    out << "alpha = " << fmt_double(embed.alpha) << "\n";
    out << "\n[index]\n";
    out << "mode = " << index.mode << "\n";
    out << "probes = " << index.probes << "\n";
    out << "\n[filter]\n";
    out << "split = " << fmt_double(filter.split) << "\n";
    out << "lr = " << fmt_double(filter.lr) << "\n";
    out << "epochs = " << filter.epochs << "\n";
    out << "threshold = " << fmt_double(filter.threshold) << "\n";
    out << "max_train = " << filter.max_train << "\n";
    out << "\n[policy]\n";
    out << "tier = " << policy.tier << "\n";
    out << "n_queries = " << policy.n_queries << "\n";
    out << "max_query_tokens = " << policy.max_query_tokens << "\n";
    out << "temperature = " << fmt_double(policy.temperature) << "\n";
    out << "\n[rewards]\n";
    out << "lambda_align = " << fmt_double(rewards.lambda_align) << "\n";
    out << "lambda_cov = " << fmt_double(rewards.lambda_cov) << "\n";
    out << "lambda_spec = " << fmt_double(rewards.lambda_spec) << "\n";
    out << "lambda_div = " << fmt_double(rewards.lambda_div) << "\n";
    out << "lambda_struct = " << fmt_double(rewards.lambda_struct) << "\n";
    out << "top_k = " << rewards.top_k << "\n";
    out << "\n[grpo]\n";
    out << "group_size = " << grpo.group_size << "\n";
    out << "clip = " << fmt_double(grpo.clip) << "\n";
    out << "kl_beta = " << fmt_double(grpo.kl_beta) << "\n";
    out << "lr = " << fmt_double(grpo.lr) << "\n";
    out << "steps = " << grpo.steps << "\n";
    out << "batch_users = " << grpo.batch_users << "\n";
    out << "sync_every = " << grpo.sync_every << "\n";
    out << "seed = " << grpo.seed << "\n";
    out << "ratio_mode = " << grpo.ratio_mode << "\n";
    out << "\n[distill]\n";
    out << "mode = " << distill.mode << "\n";
    out << "student_tier = " << distill.student_tier << "\n";
    out << "steps = " << distill.steps << "\n";
    out << "batch_users = " << distill.batch_users << "\n";
    out << "rollouts_per_user = " << distill.rollouts_per_user << "\n";
    out << "lr = " << fmt_double(distill.lr) << "\n";
    out << "seed = " << distill.seed << "\n";
    out << "\n[eval]\n";
    out << "best_of_n = " << eval.best_of_n << "\n";
    out << "max_users = " << eval.max_users << "\n";
    out << "temperature = " << fmt_double(eval.temperature) << "\n";
    out << "seed = " << eval.seed << "\n";
    out << "sweep_seeds = " << eval.sweep_seeds << "\n";
    out << "sweep_steps = " << eval.sweep_steps << "\n";
    out << "sweep_batch_users = " << eval.sweep_batch_users << "\n";
    out << "sweep_max_users = " << eval.sweep_max_users << "\n";
    out << "sweep_tier = " << eval.sweep_tier << "\n";
    return out.str();
}

std::string Config::fingerprint() const {
    const uint64_t h = fnv1a64(dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Config parse_config_text(const std::string& text, const Config& base, const std::string& label) {
    Config cfg = base;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ParseFileError(label, line_no, "unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw ParseFileError(label, line_no, "empty section name");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseFileError(label, line_no, "expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ParseFileError(label, line_no, "empty key");
        if (section.empty())
            throw ParseFileError(label, line_no, "key outside of any [section]");
        cfg.set(section, key, value);
    }
    return cfg;
}

Config load_config_file(const std::string& path, const Config& base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), base, path);
}

}  // namespace iqgen
