#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iqgen/embed.hpp"
#include "iqgen/world.hpp"

// Top-K article retrieval by cosine similarity: exact brute force, or an
// IVF-style index that k-means-partitions the corpus into ceil(sqrt(A))
// clusters and scans only the closest `probes` clusters per query.

namespace iqgen {

struct SearchHit {
    int article_id = 0;
    double score = 0.0;  // cosine similarity

    bool operator==(const SearchHit&) const = default;
};

class ArticleIndex {
  public:
    enum class Mode { exact, approximate };

    static Mode mode_from_name(std::string_view name);  // throws ConfigError

    // Builds over the articles' embeddings; throws InputError on an empty
    // list or mismatched dimensions. Clustering is deterministic (fixed seed
    // and iteration count) and thread-count-invariant.
    [[nodiscard]] static ArticleIndex build(const std::vector<NewsArticle>& articles, Mode mode,
                              int probes = 4, int threads = 1);

    // <= k hits sorted by score descending, ties by ascending article id.
    // Exact mode returns the true top-k. Throws InputError if k < 1 or the
    // query dimension is wrong.
    std::vector<SearchHit> query(const Vec& q, int k) const;

    Mode mode() const { return mode_; }
    int size() const { return static_cast<int>(ids_.size()); }
    int dim() const { return dim_; }
    int clusters() const { return static_cast<int>(members_.size()); }
    int probes() const { return probes_; }

    // Binary snapshot (versioned header + little-endian vectors).
    void save(const std::string& path) const;
    static ArticleIndex load(const std::string& path);

  private:
    Mode mode_ = Mode::exact;
    int dim_ = 0;
    int probes_ = 4;
    std::vector<int> ids_;            // row -> article id
    std::vector<double> embeds_;      // row-major, size() x dim
    std::vector<double> centroids_;   // clusters() x dim (approximate mode)
    std::vector<std::vector<int>> members_;  // cluster -> rows
};

}  // namespace iqgen
