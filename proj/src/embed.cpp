#include "iqgen/embed.hpp"

#include <cmath>
#include <set>

#include "iqgen/errors.hpp"
#include "iqgen/text.hpp"

namespace iqgen {

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InputError("dot: dimension mismatch");
    // Four independent accumulators: keeps the summation order fixed (and
    // therefore bit-reproducible) while letting the compiler vectorize.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    size_t i = 0;
    const size_t n4 = a.size() & ~size_t{3};
    for (; i < n4; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < a.size(); ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

void l2_normalize(Vec& v) {
    const double n = norm(v);
    if (n == 0.0) return;
    for (double& x : v) x /= n;
}

double cosine(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InputError("cosine: dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw InputError("cosine: zero vector");
    return dot(a, b) / (na * nb);
}

Embedder::Embedder(int dim, double alpha) : dim_(dim), alpha_(alpha) {
    if (dim < 1) throw InputError("embedder: dim must be >= 1");
    if (alpha < 0.0) throw InputError("embedder: alpha must be >= 0");
}

void Embedder::set_anchors(std::vector<Vec> anchors) {
    for (const Vec& a : anchors) {
        if (static_cast<int>(a.size()) != dim_)
            throw InputError("embedder: anchor dimension mismatch");
    }
    anchors_ = std::move(anchors);
}

void Embedder::register_term(const std::string& term, int topic_id) {
    if (topic_id < 0 || topic_id >= static_cast<int>(anchors_.size()))
        throw InputError("embedder: unknown topic id for term '" + term + "'");
    term_topic_[term] = topic_id;
}

int Embedder::topic_of(const std::string& token) const {
    auto it = term_topic_.find(token);
    return it == term_topic_.end() ? -1 : it->second;
}

Vec Embedder::embed(std::string_view text) const {
    const std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw InputError("embed: text contains no tokens");

    Vec v(dim_, 0.0);
    auto add_gram = [&](std::string_view gram) {
        const uint64_t h = fnv1a64(gram);
        const double sign = ((h >> 33) & 1) ? 1.0 : -1.0;
        v[h % static_cast<uint64_t>(dim_)] += sign;
    };
    for (const std::string& t : tokens) add_gram(t);
    for (size_t i = 0; i + 1 < tokens.size(); ++i)
        add_gram(tokens[i] + '\x1f' + tokens[i + 1]);
    // 2n-1 grams is always odd, so the signed bucket counts cannot all cancel;
    // the hash part is never the zero vector.
    l2_normalize(v);

    std::set<std::string> seen;
    for (const std::string& t : tokens) {
        auto it = term_topic_.find(t);
        if (it == term_topic_.end() || !seen.insert(t).second) continue;
        const Vec& anchor = anchors_[it->second];
        for (int i = 0; i < dim_; ++i) v[i] += alpha_ * anchor[i];
    }
    l2_normalize(v);
    return v;
}

}  // namespace iqgen
