#include "iqgen/ann_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "iqgen/errors.hpp"
#include "iqgen/parallel.hpp"
#include "iqgen/rng.hpp"

namespace iqgen {

namespace {

constexpr uint32_t kMagic = 0x58495149;  // "IQIX"
constexpr uint32_t kVersion = 1;
constexpr int kKmeansIters = 10;
constexpr uint64_t kKmeansSeed = 42;

double row_dot(const double* a, const double* b, int d) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= d; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < d; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void sort_hits(std::vector<SearchHit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.article_id < b.article_id;
    });
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("truncated index file: " + path);
}

}  // namespace

ArticleIndex::Mode ArticleIndex::mode_from_name(std::string_view name) {
    if (name == "exact") return Mode::exact;
    if (name == "approximate") return Mode::approximate;
    throw ConfigError("index mode must be 'exact' or 'approximate', got '" + std::string(name) +
                      "'");
}

ArticleIndex ArticleIndex::build(const std::vector<NewsArticle>& articles, Mode mode, int probes,
                                 int threads) {
    if (articles.empty()) throw InputError("index build: empty article list");
    if (probes < 1) throw InputError("index build: probes must be >= 1");

    ArticleIndex idx;
    idx.mode_ = mode;
    idx.probes_ = probes;
    idx.dim_ = static_cast<int>(articles.front().embedding.size());
    const int n = static_cast<int>(articles.size());
    const int d = idx.dim_;
    idx.ids_.resize(n);
    idx.embeds_.resize(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(articles[i].embedding.size()) != d)
            throw InputError("index build: mixed embedding dimensions");
        idx.ids_[i] = articles[i].id;
        std::copy(articles[i].embedding.begin(), articles[i].embedding.end(),
                  idx.embeds_.begin() + static_cast<size_t>(i) * d);
    }
    if (mode == Mode::exact) return idx;

    // Spherical k-means into ceil(sqrt(n)) clusters: seeded-shuffle init,
    // fixed iteration count, deterministic tie-breaks.
    const int C = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    Rng rng(kKmeansSeed);
    std::vector<int> init_rows(n);
    for (int i = 0; i < n; ++i) init_rows[i] = i;
    rng.shuffle(std::span<int>(init_rows));

    idx.centroids_.resize(static_cast<size_t>(C) * d);
    for (int c = 0; c < C; ++c)
        std::copy_n(idx.embeds_.begin() + static_cast<size_t>(init_rows[c]) * d, d,
                    idx.centroids_.begin() + static_cast<size_t>(c) * d);

    std::vector<int> assign(n, 0);
    std::vector<double> best(n, 0.0);
    for (int iter = 0; iter < kKmeansIters; ++iter) {
        // Assignment: independent per row, so safe to parallelize; results
        // land in per-row slots and do not depend on thread count.
        parallel_for(n, threads, [&](int64_t i) {
            const double* e = idx.embeds_.data() + i * d;
            int arg = 0;
            double top = -2.0;
            for (int c = 0; c < C; ++c) {
                const double s = row_dot(e, idx.centroids_.data() + static_cast<size_t>(c) * d, d);
                if (s > top) {
                    top = s;
                    arg = c;
                }
            }
            assign[i] = arg;
            best[i] = top;
        });

        // Centroid update: serial accumulation in row order.
        std::vector<double> sums(static_cast<size_t>(C) * d, 0.0);
        std::vector<int> counts(C, 0);
        for (int i = 0; i < n; ++i) {
            const double* e = idx.embeds_.data() + static_cast<size_t>(i) * d;
            double* s = sums.data() + static_cast<size_t>(assign[i]) * d;
            for (int j = 0; j < d; ++j) s[j] += e[j];
            ++counts[assign[i]];
        }
        for (int c = 0; c < C; ++c) {
            if (counts[c] == 0) {
                // Reseed an empty cluster with the globally worst-fitting row.
                int worst = 0;
                for (int i = 1; i < n; ++i)
                    if (best[i] < best[worst]) worst = i;
                std::copy_n(idx.embeds_.begin() + static_cast<size_t>(worst) * d, d,
                            sums.begin() + static_cast<size_t>(c) * d);
                best[worst] = 2.0;  // don't pick it twice
                counts[c] = 1;
            }
            double* ctr = idx.centroids_.data() + static_cast<size_t>(c) * d;
            const double* s = sums.data() + static_cast<size_t>(c) * d;
            double nrm = 0.0;
            for (int j = 0; j < d; ++j) nrm += s[j] * s[j];
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) nrm = 1.0;
            for (int j = 0; j < d; ++j) ctr[j] = s[j] / nrm;
        }
    }

    // Final assignment for the inverted lists.
    parallel_for(n, threads, [&](int64_t i) {
        const double* e = idx.embeds_.data() + i * d;
        int arg = 0;
        double top = -2.0;
        for (int c = 0; c < C; ++c) {
            const double s = row_dot(e, idx.centroids_.data() + static_cast<size_t>(c) * d, d);
            if (s > top) {
                top = s;
                arg = c;
            }
        }
        assign[i] = arg;
    });
    idx.members_.assign(C, {});
    for (int i = 0; i < n; ++i) idx.members_[assign[i]].push_back(i);
    return idx;
}

std::vector<SearchHit> ArticleIndex::query(const Vec& q, int k) const {
    if (k < 1) throw InputError("index query: k must be >= 1");
    if (static_cast<int>(q.size()) != dim_) throw InputError("index query: dimension mismatch");
    const int n = size();
    const int d = dim_;
    const double qn = norm(q);
    if (qn == 0.0) throw InputError("index query: zero query vector");

    std::vector<SearchHit> hits;
    auto scan_row = [&](int row) {
        const double s = row_dot(q.data(), embeds_.data() + static_cast<size_t>(row) * d, d) / qn;
        hits.push_back({ids_[row], s});
    };

    if (mode_ == Mode::exact) {
        hits.reserve(n);
        for (int i = 0; i < n; ++i) scan_row(i);
    } else {
        const int C = clusters();
        const int P = std::min(probes_, C);
        std::vector<std::pair<double, int>> cscore(C);
        for (int c = 0; c < C; ++c)
            cscore[c] = {row_dot(q.data(), centroids_.data() + static_cast<size_t>(c) * d, d), c};
        std::partial_sort(cscore.begin(), cscore.begin() + P, cscore.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        for (int p = 0; p < P; ++p)
            for (int row : members_[cscore[p].second]) scan_row(row);
    }
    sort_hits(hits);
    if (static_cast<int>(hits.size()) > k) hits.resize(k);
    return hits;
}

void ArticleIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_pod(out, kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<uint8_t>(mode_));
    write_pod(out, dim_);
    write_pod(out, probes_);
    const int n = size();
    write_pod(out, n);
    out.write(reinterpret_cast<const char*>(ids_.data()), n * sizeof(int));
    out.write(reinterpret_cast<const char*>(embeds_.data()), embeds_.size() * sizeof(double));
    const int C = clusters();
    write_pod(out, C);
    out.write(reinterpret_cast<const char*>(centroids_.data()),
              centroids_.size() * sizeof(double));
    for (const auto& m : members_) {
        const int len = static_cast<int>(m.size());
        write_pod(out, len);
        out.write(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(int));
    }
    if (!out) throw IoError("write failed: " + path);
}

ArticleIndex ArticleIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    uint32_t magic = 0, version = 0;
    read_pod(in, magic, path);
    read_pod(in, version, path);
    if (magic != kMagic) throw IoError("not an index file: " + path);
    if (version != kVersion) throw IoError("unsupported index version in " + path);
    ArticleIndex idx;
    uint8_t mode = 0;
    read_pod(in, mode, path);
    idx.mode_ = static_cast<Mode>(mode);
    read_pod(in, idx.dim_, path);
    read_pod(in, idx.probes_, path);
    int n = 0;
    read_pod(in, n, path);
    if (n < 0 || idx.dim_ < 1) throw IoError("corrupt index header: " + path);
    idx.ids_.resize(n);
    in.read(reinterpret_cast<char*>(idx.ids_.data()), n * sizeof(int));
    idx.embeds_.resize(static_cast<size_t>(n) * idx.dim_);
    in.read(reinterpret_cast<char*>(idx.embeds_.data()), idx.embeds_.size() * sizeof(double));
    int C = 0;
    read_pod(in, C, path);
    if (C < 0) throw IoError("corrupt index header: " + path);
    idx.centroids_.resize(static_cast<size_t>(C) * idx.dim_);
    in.read(reinterpret_cast<char*>(idx.centroids_.data()),
            idx.centroids_.size() * sizeof(double));
    idx.members_.resize(C);
    for (auto& m : idx.members_) {
        int len = 0;
        read_pod(in, len, path);
        if (len < 0) throw IoError("corrupt index file: " + path);
        m.resize(len);
        in.read(reinterpret_cast<char*>(m.data()), m.size() * sizeof(int));
    }
    if (!in) throw IoError("truncated index file: " + path);
    return idx;
}

}  // namespace iqgen
