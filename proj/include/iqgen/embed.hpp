#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

// Deterministic text embeddings: signed feature hashing of token unigrams and
// bigrams into d buckets, plus a topic-anchor admixture for known topic terms
// so that text semantics line up with the synthetic world's geometry.

namespace iqgen {

using Vec = std::vector<double>;

// FNV-1a, 64-bit. The only hash used anywhere; fixed constants keep
// embeddings bit-identical across platforms.
inline uint64_t fnv1a64(std::string_view data) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);
void l2_normalize(Vec& v);  // no-op on the zero vector

// Standard cosine similarity; throws InputError on dimension mismatch.
double cosine(const Vec& a, const Vec& b);

class Embedder {
  public:
    Embedder(int dim, double alpha);

    // Anchor for topic id i is anchors[i]; all must be dim-sized.
    void set_anchors(std::vector<Vec> anchors);

    // Marks `term` as a known topic term; embed() adds alpha * anchor of the
    // topic for each distinct known term in the text.
    void register_term(const std::string& term, int topic_id);

    // Hash unigrams+bigrams with signs into d buckets, L2-normalize that hash
    // part, add alpha * anchor per distinct known topic term, normalize again.
    // Throws InputError if the text contains no tokens.
    Vec embed(std::string_view text) const;

    int dim() const { return dim_; }
    double alpha() const { return alpha_; }

    // Topic id of a known term, or -1.
    int topic_of(const std::string& token) const;

  private:
    int dim_;
    double alpha_;
    std::vector<Vec> anchors_;
    std::unordered_map<std::string, int> term_topic_;
};

}  // namespace iqgen
