// Compares the serial reference path (threads=1) against the OpenMP path for
// the parallel kernels, checks the outputs are bitwise identical, and reports
// greedy-decoding throughput per policy tier.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "iqgen/distill.hpp"
#include "iqgen/eval.hpp"
#include "iqgen/parallel.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/world.hpp"

using namespace iqgen;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename F>
double timed(F&& f) {
    const double t0 = now_seconds();
    f();
    return now_seconds() - t0;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

int main() {
    const int threads = hardware_threads();
    std::printf("hardware threads: %d\n\n", threads);

    Config cfg;
    cfg.world.users = 300;
    cfg.world.articles = 800;
    cfg.eval.max_users = 300;
    cfg.validate();
    const World world = generate_world(cfg.world);
    const Embedder embedder = make_embedder(world, cfg.embed);

    // Kernel 1: batch payload embedding (per-item slots).
    {
        std::vector<std::string> payloads;
        for (const UserRecord& u : world.users)
            for (const BehaviorEvent& b : u.behaviors) payloads.push_back(b.payload);
        const int n = static_cast<int>(payloads.size());
        std::vector<double> serial_out(static_cast<size_t>(n) * cfg.embed.dim);
        std::vector<double> parallel_out(serial_out.size());
        auto run = [&](std::vector<double>& out, int t) {
            parallel_for(n, t, [&](int64_t i) {
                const Vec e = embedder.embed(payloads[i]);
                std::copy(e.begin(), e.end(), out.begin() + i * cfg.embed.dim);
            });
        };
        const double ts = timed([&] { run(serial_out, 1); });
        const double tp = timed([&] { run(parallel_out, threads); });
        std::printf("embed %d payloads: serial %.3fs, parallel %.3fs (x%.2f), bitwise %s\n", n,
                    ts, tp, ts / tp, same_bits(serial_out, parallel_out) ? "EQUAL" : "DIFFER");
    }

    // Kernel 2: index construction (parallel cluster assignment).
    ArticleIndex exact;
    {
        ArticleIndex serial_ix, parallel_ix;
        const double ts = timed([&] {
            serial_ix = ArticleIndex::build(world.articles, ArticleIndex::Mode::approximate,
                                            cfg.index.probes, 1);
        });
        const double tp = timed([&] {
            parallel_ix = ArticleIndex::build(world.articles, ArticleIndex::Mode::approximate,
                                              cfg.index.probes, threads);
        });
        const std::string a = "bench_ix_serial.bin", b = "bench_ix_parallel.bin";
        serial_ix.save(a);
        parallel_ix.save(b);
        std::string sa, sb;
        {
            FILE* f = std::fopen(a.c_str(), "rb");
            char buf[4096];
            size_t got;
            while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) sa.append(buf, got);
            std::fclose(f);
            f = std::fopen(b.c_str(), "rb");
            while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) sb.append(buf, got);
            std::fclose(f);
        }
        std::remove(a.c_str());
        std::remove(b.c_str());
        std::printf("index build (%zu articles): serial %.3fs, parallel %.3fs (x%.2f), "
                    "snapshot %s\n",
                    world.articles.size(), ts, tp, ts / tp, sa == sb ? "EQUAL" : "DIFFER");
        exact = ArticleIndex::build(world.articles, ArticleIndex::Mode::exact, cfg.index.probes,
                                    threads);
    }

    // Kernel 3: full evaluation pass (per-user slots, per-user streams).
    {
        const auto sv = make_services(world, cfg, threads);
        const PolicyParams params =
            make_initial_policy(cfg.policy, sv->vocab, sv->embedder, cfg.grpo.seed);
        EvalReport serial_rep, parallel_rep;
        const double ts = timed([&] { serial_rep = run_eval(world, *sv, params, cfg, 1); });
        const double tp = timed([&] { parallel_rep = run_eval(world, *sv, params, cfg, threads); });
        std::vector<double> sa, sb;
        for (const UserEval& r : serial_rep.per_user) {
            sa.push_back(r.recall10);
            sa.push_back(r.ndcg10);
            sa.push_back(r.mrr);
            sa.push_back(r.composite);
        }
        for (const UserEval& r : parallel_rep.per_user) {
            sb.push_back(r.recall10);
            sb.push_back(r.ndcg10);
            sb.push_back(r.mrr);
            sb.push_back(r.composite);
        }
        std::printf("evaluate %d users: serial %.3fs, parallel %.3fs (x%.2f), metrics %s\n\n",
                    serial_rep.users_evaluated, ts, tp, ts / tp,
                    same_bits(sa, sb) ? "EQUAL" : "DIFFER");
    }

    // Tier throughput: single-thread greedy decoding, users/second.
    {
        const Vocab vocab = Vocab::from_world(world);
        const GrammarSpec grammar = make_grammar(cfg.policy, vocab);
        const auto sv = make_services(world, cfg, threads);
        std::vector<Vec> means;
        for (size_t i = 0; i < std::min<size_t>(64, world.users.size()); ++i) {
            const std::vector<BehaviorEvent> cleaned =
                clean(world.users[i], sv->filter, sv->embedder);
            means.push_back(mean_payload_embedding(sv->embedder, cleaned));
        }
        std::printf("greedy decoding throughput (single thread):\n");
        for (const char* tier : {"tiny", "small", "base", "large"}) {
            const PolicyParams p =
                PolicyParams::init(tier_from_name(tier), vocab, cfg.embed.dim, 7);
            const double ups = measure_throughput(p, means, grammar, 1.5);
            std::printf("  %-6s %10.1f users/sec\n", tier, ups);
        }
    }
    return 0;
}
