#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iqgen/config.hpp"
#include "iqgen/embed.hpp"

// The synthetic universe: T latent interest topics with near-orthogonal unit
// anchors, A news articles clustered around those anchors (a few "hot"
// articles per topic sit very close to the anchor and attract most clicks),
// and U users whose noisy cross-domain behavior histories under-cover their
// latent interests. Held-out clicks play the role of the future-week
// evaluation split.

namespace iqgen {

struct Topic {
    int id = 0;
    std::string label;
    std::vector<std::string> specific_terms;  // pseudo-words unique to this topic
    std::vector<std::string> entity_terms;    // named-entity stand-ins, also unique
    Vec anchor;                               // unit vector, pairwise cosine <= 0.3

    bool operator==(const Topic&) const = default;
};

enum class Domain { browse, search, click };

std::string_view domain_name(Domain d);
Domain domain_from_name(std::string_view name);  // throws InputError

struct BehaviorEvent {
    int user_id = 0;
    Domain domain = Domain::browse;
    std::string payload;
    int topic_id = -1;      // -1 for noise events
    bool is_noise = false;  // ground truth, hidden from training

    bool operator==(const BehaviorEvent&) const = default;
};

struct NewsArticle {
    int id = 0;
    int topic_id = 0;
    std::vector<std::string> title_tokens;  // contains >= 1 specific term of its topic
    Vec embedding;                          // unit vector

    bool operator==(const NewsArticle&) const = default;
};

struct UserRecord {
    int user_id = 0;
    std::vector<int> latent_topics;       // 1-4 distinct topic ids
    std::vector<BehaviorEvent> behaviors; // <= 50 per domain
    std::vector<int> heldout_clicks;      // evaluation ground truth, >= 1

    bool operator==(const UserRecord&) const = default;
};

struct World {
    WorldConfig config;
    std::vector<Topic> topics;
    std::vector<NewsArticle> articles;
    std::vector<UserRecord> users;

    bool operator==(const World&) const = default;
};

// Deterministic generation from config.seed; throws ConfigError on bad
// dimensions. See world.cpp for the generation constants (hot-article pool,
// noise payload categories, per-domain event count targets).
World generate_world(const WorldConfig& config);

// Writes topics.jsonl / articles.jsonl / users.jsonl / meta.json into dir
// (created if missing). Import round-trips exactly; malformed lines raise
// ParseFileError with the offending line number.
void export_world(const World& world, const std::string& dir);
World import_world(const std::string& dir);

// Embedder wired to this world's anchors and topic terms.
Embedder make_embedder(const World& world, const EmbedConfig& cfg);

// Distinct informative topic ids in a behavior list, ascending.
std::vector<int> informative_topics(const std::vector<BehaviorEvent>& behaviors);

}  // namespace iqgen
