#include "iqgen/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "iqgen/errors.hpp"
#include "iqgen/rng.hpp"
#include "iqgen/text.hpp"

namespace iqgen {

namespace {

using nlohmann::json;

// ---- generation constants -------------------------------------------------

constexpr int kSpecificPerTopic = 5;
constexpr int kEntityPerTopic = 2;

// Shared energy of the topic anchors: each anchor is sqrt(kAnchorShared) *
// common_direction + sqrt(1 - kAnchorShared) * private_direction, giving an
// exact pairwise cosine of kAnchorShared. The shared component is what makes
// informative payloads linearly separable from noise for the filter.
constexpr double kAnchorShared = 0.25;

// Per-topic "hot" pool: articles whose embeddings sit almost exactly on the
// anchor. Clicks concentrate on these; the small pool means a query list
// that covers more topics retrieves strictly more clickable articles.
constexpr int kHotPerTopic = 3;
constexpr double kSigmaHot = 0.01;
constexpr double kSigmaTail = 0.15;

// Per-domain event count targets (means of a clamped gaussian, sigma=mean/4).
constexpr double kMeanBrowse = 37.0;
constexpr double kMeanSearch = 13.0;
constexpr double kMeanClick = 39.0;
constexpr int kMaxPerDomain = 50;

// Held-out click model: clicks land on hot articles of latent topics, biased
// 2:1 toward topics the user never searched for, with 10% off-topic
// contamination so perfect recall is unattainable.
constexpr double kUnsearchedClickWeight = 2.0;
constexpr double kContamination = 0.1;
constexpr double kHistoryClickHotRate = 0.7;

const std::vector<std::string> kQualifiers = {
    "news", "latest", "update", "today", "best",  "top",
    "live", "daily",  "local",  "online", "new",  "now",
};

const std::vector<std::string> kLoginSuffixes = {"login", "sign in", "log in", "password"};
const std::vector<std::string> kLoginBases = {"bank", "work", "school"};

constexpr std::string_view kConsonants = "bcdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string pseudo_word(Rng& rng) {
    const int syllables = 2 + static_cast<int>(rng.below(2));
    std::string w;
    for (int i = 0; i < syllables; ++i) {
        w.push_back(kConsonants[rng.below(kConsonants.size())]);
        w.push_back(kVowels[rng.below(kVowels.size())]);
    }
    return w;
}

// Words a pseudo-word must not collide with (lexicons plus noise vocabulary).
std::unordered_set<std::string> reserved_words() {
    std::unordered_set<std::string> r;
    for (auto w : nav_words()) r.emplace(w);
    for (auto w : generic_words()) r.emplace(w);
    for (const auto& w : kLoginBases) r.insert(w);
    for (const auto& ws : {std::string("login"), std::string("signin"), std::string("logout"),
                           std::string("signup"), std::string("password"), std::string("log"),
                           std::string("sign"), std::string("www"), std::string("com")})
        r.insert(ws);
    return r;
}

std::string noise_payload(Rng& rng) {
    switch (rng.below(5)) {
        case 0:
            return std::string(nav_words()[rng.below(nav_words().size())]);
        case 1: {
            std::string p(generic_words()[rng.below(generic_words().size())]);
            if (rng.uniform() < 0.5) {
                p += ' ';
                p += generic_words()[rng.below(generic_words().size())];
            }
            return p;
        }
        case 2: {
            std::string base;
            if (rng.uniform() < 0.7)
                base = nav_words()[rng.below(nav_words().size())];
            else
                base = kLoginBases[rng.below(kLoginBases.size())];
            return base + ' ' + kLoginSuffixes[rng.below(kLoginSuffixes.size())];
        }
        case 3:
            return "www." + std::string(nav_words()[rng.below(nav_words().size())]) + ".com";
        default: {
            const size_t len = 4 + rng.below(7);
            std::string p;
            for (size_t i = 0; i < len; ++i) p.push_back(static_cast<char>('0' + rng.below(10)));
            return p;
        }
    }
}

// 1-2 topic terms plus 0-2 generic qualifiers, shuffled.
std::string informative_payload(Rng& rng, const Topic& topic) {
    std::vector<std::string> parts;
    auto any_term = [&]() -> const std::string& {
        const size_t total = topic.specific_terms.size() + topic.entity_terms.size();
        const size_t i = rng.below(total);
        return i < topic.specific_terms.size()
                   ? topic.specific_terms[i]
                   : topic.entity_terms[i - topic.specific_terms.size()];
    };
    parts.push_back(any_term());
    if (rng.uniform() < 0.5) parts.push_back(any_term());
    const size_t extras = rng.below(3);
    for (size_t i = 0; i < extras; ++i)
        parts.push_back(kQualifiers[rng.below(kQualifiers.size())]);
    rng.shuffle(std::span<std::string>(parts));
    return join_tokens(parts);
}

int clamped_count(Rng& rng, double mean) {
    const double draw = rng.normal(mean, mean / 4.0);
    return std::clamp(static_cast<int>(std::lround(draw)), 1, kMaxPerDomain);
}

}  // namespace

std::string_view domain_name(Domain d) {
    switch (d) {
        case Domain::browse: return "browse";
        case Domain::search: return "search";
        case Domain::click: return "click";
    }
    throw InputError("domain_name: bad enum value");
}

Domain domain_from_name(std::string_view name) {
    if (name == "browse") return Domain::browse;
    if (name == "search") return Domain::search;
    if (name == "click") return Domain::click;
    throw InputError("unknown behavior domain: '" + std::string(name) + "'");
}

std::vector<int> informative_topics(const std::vector<BehaviorEvent>& behaviors) {
    std::set<int> seen;
    for (const BehaviorEvent& b : behaviors)
        if (b.topic_id >= 0) seen.insert(b.topic_id);
    return {seen.begin(), seen.end()};
}

World generate_world(const WorldConfig& config) {
    const int T = config.topics;
    const int A = config.articles;
    const int U = config.users;
    const int d = config.embed_dim;
    if (T < 2) throw ConfigError("world: need at least 2 topics");
    if (A < T) throw ConfigError("world: need at least one article per topic");
    if (U < 1) throw ConfigError("world: need at least one user");
    if (config.noise_rate < 0.0 || config.noise_rate > 1.0)
        throw ConfigError("world: noise_rate must be in [0, 1]");
    if (T + 1 > d)
        throw ConfigError("world: anchor construction needs topics + 1 <= embed_dim");

    World world;
    world.config = config;
    Rng rng(config.seed);

    // -- anchors: orthonormalize T+1 gaussian vectors, then mix a common
    //    direction into every topic's private direction.
    std::vector<Vec> basis;
    basis.reserve(T + 1);
    while (static_cast<int>(basis.size()) < T + 1) {
        Vec v(d);
        for (double& x : v) x = rng.normal();
        for (const Vec& q : basis) {
            const double proj = dot(v, q);
            for (int i = 0; i < d; ++i) v[i] -= proj * q[i];
        }
        if (norm(v) < 1e-6) continue;  // essentially degenerate draw; retry
        l2_normalize(v);
        basis.push_back(std::move(v));
    }
    const Vec& common = basis[0];
    const double w_shared = std::sqrt(kAnchorShared);
    const double w_private = std::sqrt(1.0 - kAnchorShared);

    // -- topics and their pseudo-word vocabularies.
    const std::unordered_set<std::string> reserved = reserved_words();
    std::unordered_set<std::string> used_words;
    auto fresh_word = [&]() {
        for (;;) {
            std::string w = pseudo_word(rng);
            if (reserved.contains(w) || !used_words.insert(w).second) continue;
            return w;
        }
    };
    world.topics.resize(T);
    for (int t = 0; t < T; ++t) {
        Topic& topic = world.topics[t];
        topic.id = t;
        for (int i = 0; i < kSpecificPerTopic; ++i) topic.specific_terms.push_back(fresh_word());
        for (int i = 0; i < kEntityPerTopic; ++i) topic.entity_terms.push_back(fresh_word());
        topic.label = topic.specific_terms.front();
        topic.anchor.resize(d);
        for (int i = 0; i < d; ++i)
            topic.anchor[i] = w_shared * common[i] + w_private * basis[t + 1][i];
    }

    // -- articles, round-robin over topics; per-topic index i/T decides
    //    hotness. Titles are 1 specific term plus optional entity/qualifiers.
    world.articles.resize(A);
    std::vector<std::vector<int>> topic_articles(T);
    std::vector<std::vector<int>> topic_hot(T);
    for (int a = 0; a < A; ++a) {
        NewsArticle& art = world.articles[a];
        art.id = a;
        art.topic_id = a % T;
        const Topic& topic = world.topics[art.topic_id];
        const bool hot = (a / T) < kHotPerTopic;

        art.title_tokens.push_back(topic.specific_terms[rng.below(kSpecificPerTopic)]);
        if (rng.uniform() < 0.3)
            art.title_tokens.push_back(topic.entity_terms[rng.below(kEntityPerTopic)]);
        const size_t fillers = 1 + rng.below(2);
        for (size_t i = 0; i < fillers; ++i)
            art.title_tokens.push_back(kQualifiers[rng.below(kQualifiers.size())]);
        rng.shuffle(std::span<std::string>(art.title_tokens));

        const double sigma = hot ? kSigmaHot : kSigmaTail;
        art.embedding.resize(d);
        for (int i = 0; i < d; ++i) art.embedding[i] = topic.anchor[i] + sigma * rng.normal();
        l2_normalize(art.embedding);

        topic_articles[art.topic_id].push_back(a);
        if (hot) topic_hot[art.topic_id].push_back(a);
    }
    for (int t = 0; t < T; ++t)
        if (topic_hot[t].empty()) topic_hot[t] = topic_articles[t];

    // -- users.
    std::vector<int> topic_order(T);
    world.users.resize(U);
    for (int u = 0; u < U; ++u) {
        UserRecord& user = world.users[u];
        user.user_id = u;

        const int nt = 1 + static_cast<int>(rng.below(4));
        for (int t = 0; t < T; ++t) topic_order[t] = t;
        rng.shuffle(std::span<int>(topic_order));
        user.latent_topics.assign(topic_order.begin(), topic_order.begin() + nt);
        // Search behaviors only ever touch the first ceil(nt/2) latent topics;
        // the rest are interests the history reveals via browses/clicks only.
        const int n_searched = (nt + 1) / 2;

        auto emit = [&](Domain dom, int count) {
            for (int i = 0; i < count; ++i) {
                BehaviorEvent ev;
                ev.user_id = u;
                ev.domain = dom;
                if (rng.uniform() < config.noise_rate) {
                    ev.is_noise = true;
                    ev.payload = noise_payload(rng);
                } else {
                    int topic;
                    if (dom == Domain::search)
                        topic = user.latent_topics[rng.below(n_searched)];
                    else
                        topic = user.latent_topics[rng.below(nt)];
                    ev.topic_id = topic;
                    if (dom == Domain::search) {
                        ev.payload = informative_payload(rng, world.topics[topic]);
                    } else {
                        int art;
                        if (dom == Domain::click && rng.uniform() < kHistoryClickHotRate)
                            art = topic_hot[topic][rng.below(topic_hot[topic].size())];
                        else
                            art = topic_articles[topic][rng.below(topic_articles[topic].size())];
                        ev.payload = join_tokens(world.articles[art].title_tokens);
                    }
                }
                user.behaviors.push_back(std::move(ev));
            }
        };
        emit(Domain::browse, clamped_count(rng, kMeanBrowse));
        emit(Domain::search, clamped_count(rng, kMeanSearch));
        emit(Domain::click, clamped_count(rng, kMeanClick));

        // -- held-out clicks.
        std::vector<double> weights(nt);
        for (int i = 0; i < nt; ++i)
            weights[i] = i < n_searched ? 1.0 : kUnsearchedClickWeight;
        std::set<int> clicks;
        const int draws = 3 + static_cast<int>(rng.below(4));
        for (int i = 0; i < draws; ++i) {
            if (rng.uniform() < kContamination && nt < T) {
                for (;;) {
                    const int a = static_cast<int>(rng.below(A));
                    const int t = world.articles[a].topic_id;
                    if (std::find(user.latent_topics.begin(), user.latent_topics.end(), t) ==
                        user.latent_topics.end()) {
                        clicks.insert(a);
                        break;
                    }
                }
            } else {
                const int t = user.latent_topics[rng.categorical(weights)];
                clicks.insert(topic_hot[t][rng.below(topic_hot[t].size())]);
            }
        }
        user.heldout_clicks.assign(clicks.begin(), clicks.end());
    }
    return world;
}

Embedder make_embedder(const World& world, const EmbedConfig& cfg) {
    if (cfg.dim != world.config.embed_dim)
        throw ConfigError("embedder dim must match the world's embed_dim");
    Embedder emb(cfg.dim, cfg.alpha);
    std::vector<Vec> anchors;
    anchors.reserve(world.topics.size());
    for (const Topic& t : world.topics) anchors.push_back(t.anchor);
    emb.set_anchors(std::move(anchors));
    for (const Topic& t : world.topics) {
        for (const std::string& w : t.specific_terms) emb.register_term(w, t.id);
        for (const std::string& w : t.entity_terms) emb.register_term(w, t.id);
    }
    return emb;
}

// ---- serialization --------------------------------------------------------

namespace {

json topic_to_json(const Topic& t) {
    return json{{"id", t.id},
                {"label", t.label},
                {"specific_terms", t.specific_terms},
                {"entity_terms", t.entity_terms},
                {"anchor", t.anchor}};
}

json article_to_json(const NewsArticle& a) {
    return json{{"id", a.id},
                {"topic_id", a.topic_id},
                {"title_tokens", a.title_tokens},
                {"embedding", a.embedding}};
}

json user_to_json(const UserRecord& u) {
    json events = json::array();
    for (const BehaviorEvent& b : u.behaviors) {
        json e{{"domain", domain_name(b.domain)},
               {"payload", b.payload},
               {"is_noise", b.is_noise}};
        if (b.topic_id >= 0) e["topic_id"] = b.topic_id;
        events.push_back(std::move(e));
    }
    return json{{"user_id", u.user_id},
                {"latent_topics", u.latent_topics},
                {"heldout_clicks", u.heldout_clicks},
                {"behaviors", std::move(events)}};
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const json& r : records) out << r.dump() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

// Calls fn(line_json, line_no) for every non-empty line.
template <class Fn>
void read_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseFileError(path, line_no, e.what());
        }
        try {
            fn(j, line_no);
        } catch (const json::exception& e) {
            throw ParseFileError(path, line_no, e.what());
        }
    }
}

}  // namespace

void export_world(const World& world, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

    std::vector<json> records;
    records.reserve(world.topics.size());
    for (const Topic& t : world.topics) records.push_back(topic_to_json(t));
    write_jsonl(dir + "/topics.jsonl", records);

    records.clear();
    for (const NewsArticle& a : world.articles) records.push_back(article_to_json(a));
    write_jsonl(dir + "/articles.jsonl", records);

    records.clear();
    for (const UserRecord& u : world.users) records.push_back(user_to_json(u));
    write_jsonl(dir + "/users.jsonl", records);

    const json meta{{"format_version", 1},
                    {"world",
                     {{"topics", world.config.topics},
                      {"articles", world.config.articles},
                      {"users", world.config.users},
                      {"noise_rate", world.config.noise_rate},
                      {"embed_dim", world.config.embed_dim},
                      {"seed", world.config.seed}}}};
    std::ofstream out(dir + "/meta.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + dir + "/meta.json");
    out << meta.dump(2) << '\n';
}

World import_world(const std::string& dir) {
    World world;

    {
        const std::string path = dir + "/meta.json";
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        json meta;
        try {
            meta = json::parse(in);
            if (meta.at("format_version").get<int>() != 1)
                throw IoError(path + ": unsupported format_version");
            const json& w = meta.at("world");
            world.config.topics = w.at("topics").get<int>();
            world.config.articles = w.at("articles").get<int>();
            world.config.users = w.at("users").get<int>();
            world.config.noise_rate = w.at("noise_rate").get<double>();
            world.config.embed_dim = w.at("embed_dim").get<int>();
            world.config.seed = w.at("seed").get<uint64_t>();
        } catch (const json::exception& e) {
            throw ParseFileError(path, 1, e.what());
        }
    }

    read_jsonl(dir + "/topics.jsonl", [&](const json& j, int) {
        Topic t;
        t.id = j.at("id").get<int>();
        t.label = j.at("label").get<std::string>();
        t.specific_terms = j.at("specific_terms").get<std::vector<std::string>>();
        t.entity_terms = j.at("entity_terms").get<std::vector<std::string>>();
        t.anchor = j.at("anchor").get<Vec>();
        world.topics.push_back(std::move(t));
    });

    read_jsonl(dir + "/articles.jsonl", [&](const json& j, int) {
        NewsArticle a;
        a.id = j.at("id").get<int>();
        a.topic_id = j.at("topic_id").get<int>();
        a.title_tokens = j.at("title_tokens").get<std::vector<std::string>>();
        a.embedding = j.at("embedding").get<Vec>();
        world.articles.push_back(std::move(a));
    });

    read_jsonl(dir + "/users.jsonl", [&](const json& j, int line_no) {
        UserRecord u;
        u.user_id = j.at("user_id").get<int>();
        u.latent_topics = j.at("latent_topics").get<std::vector<int>>();
        u.heldout_clicks = j.at("heldout_clicks").get<std::vector<int>>();
        for (const json& e : j.at("behaviors")) {
            BehaviorEvent b;
            b.user_id = u.user_id;
            b.domain = domain_from_name(e.at("domain").get<std::string>());
            b.payload = e.at("payload").get<std::string>();
            b.is_noise = e.at("is_noise").get<bool>();
            b.topic_id = e.contains("topic_id") ? e.at("topic_id").get<int>() : -1;
            if (b.payload.empty())
                throw ParseFileError(dir + "/users.jsonl", line_no, "empty payload");
            u.behaviors.push_back(std::move(b));
        }
        world.users.push_back(std::move(u));
    });

    return world;
}

}  // namespace iqgen
