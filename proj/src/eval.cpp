#include "iqgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "iqgen/errors.hpp"
#include "iqgen/parallel.hpp"

namespace iqgen {

// ---- metrics --------------------------------------------------------------

namespace {

void check_relevant(const std::vector<int>& relevant) {
    if (relevant.empty()) throw InputError("metrics: empty relevant set");
    if (!std::is_sorted(relevant.begin(), relevant.end()))
        throw InputError("metrics: relevant set must be sorted");
}

bool is_relevant(const std::vector<int>& relevant, int id) {
    return std::binary_search(relevant.begin(), relevant.end(), id);
}

}  // namespace

double recall_at_k(std::span<const int> ranked, const std::vector<int>& relevant, int k) {
    check_relevant(relevant);
    if (k < 1) throw InputError("metrics: k must be >= 1");
    int hits = 0;
    const size_t top = std::min(ranked.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < top; ++i)
        if (is_relevant(relevant, ranked[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const int> ranked, const std::vector<int>& relevant, int k) {
    check_relevant(relevant);
    if (k < 1) throw InputError("metrics: k must be >= 1");
    double dcg = 0.0;
    const size_t top = std::min(ranked.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < top; ++i)
        if (is_relevant(relevant, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    const size_t ideal = std::min(relevant.size(), static_cast<size_t>(k));
    double idcg = 0.0;
    for (size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

double mrr(std::span<const int> ranked, const std::vector<int>& relevant) {
    check_relevant(relevant);
    for (size_t i = 0; i < ranked.size(); ++i)
        if (is_relevant(relevant, ranked[i])) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

std::vector<SearchHit> retrieve_for_user(const std::vector<std::string>& queries,
                                         const Embedder& embedder, const ArticleIndex& index,
                                         int k) {
    std::map<int, double> best;  // article id -> max score over queries
    for (const std::string& q : queries) {
        const Vec e = embedder.embed(q);
        for (const SearchHit& h : index.query(e, k)) {
            auto [it, fresh] = best.emplace(h.article_id, h.score);
            if (!fresh && h.score > it->second) it->second = h.score;
        }
    }
    std::vector<SearchHit> pooled;
    pooled.reserve(best.size());
    for (const auto& [id, score] : best) pooled.push_back({id, score});
    std::sort(pooled.begin(), pooled.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.article_id < b.article_id;
    });
    return pooled;
}

// ---- generation -----------------------------------------------------------

GeneratedList best_of_n(const PolicyParams& params, const UserRecord& user, const Vec& mean_embed,
                        const RewardScorer& scorer, const Vocab& vocab,
                        const GrammarSpec& grammar, int n, double temperature, Rng& rng) {
    if (n < 1) throw InputError("best_of_n: n must be >= 1");
    const Context ctx = context_from_mean(params, mean_embed);
    GeneratedList out;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        const Rollout roll = sample(params, ctx, grammar, temperature, rng, /*masked=*/true);
        ParsedQueryList parsed = parse(roll.tokens, grammar);
        const RewardVector rv = scorer.score(user, parsed, vocab);
        if (rv.composite > best) {  // strict: first sampled wins ties
            best = rv.composite;
            out.parsed = std::move(parsed);
            out.reward = rv;
            out.picked = i;
        }
    }
    return out;
}

// ---- services -------------------------------------------------------------

Services::Services(const World& world, const Config& cfg, int threads)
    : embedder(make_embedder(world, cfg.embed)),
      vocab(Vocab::from_world(world)) {
    index = ArticleIndex::build(world.articles, ArticleIndex::mode_from_name(cfg.index.mode),
                                cfg.index.probes, threads);
    filter = train_filter(world, embedder, cfg.filter, &filter_report);
    scorer = std::make_unique<RewardScorer>(world, embedder, index, cfg.rewards);
}

std::unique_ptr<Services> make_services(const World& world, const Config& cfg, int threads) {
    return std::make_unique<Services>(world, cfg, threads);
}

// ---- evaluation -----------------------------------------------------------

namespace {

constexpr uint64_t kEvalSalt = 0x6576616c;
constexpr int kPoolK = 10;  // per-query depth; covers both metric cutoffs

struct UserSlot {
    UserEval row;
    bool evaluated = false;
};

// Shared driver: `make_queries` returns the query list (plus its composite
// reward) for one prepared user.
template <typename MakeQueries>
EvalReport eval_users(const World& world, const Services& sv, const Config& cfg, int threads,
                      MakeQueries&& make_queries) {
    const int cap = cfg.eval.max_users;
    const int total = static_cast<int>(world.users.size());
    const int n = cap > 0 ? std::min(cap, total) : total;

    std::vector<UserSlot> slots(n);
    parallel_for(n, resolve_threads(threads), [&](int64_t ui) {
        const UserRecord& user = world.users[ui];
        if (user.heldout_clicks.empty()) return;  // skipped, counted below
        UserSlot& slot = slots[ui];

        const std::vector<BehaviorEvent> cleaned = clean(user, sv.filter, sv.embedder);
        const Vec mean = mean_payload_embedding(sv.embedder, cleaned);
        double composite = 0.0;
        const std::vector<std::string> queries = make_queries(user, cleaned, mean, &composite);

        const std::vector<SearchHit> pooled =
            retrieve_for_user(queries, sv.embedder, sv.index, kPoolK);
        std::vector<int> ranked;
        ranked.reserve(pooled.size());
        for (const SearchHit& h : pooled) ranked.push_back(h.article_id);

        slot.row.user_id = user.user_id;
        slot.row.recall5 = recall_at_k(ranked, user.heldout_clicks, 5);
        slot.row.recall10 = recall_at_k(ranked, user.heldout_clicks, 10);
        slot.row.ndcg5 = ndcg_at_k(ranked, user.heldout_clicks, 5);
        slot.row.ndcg10 = ndcg_at_k(ranked, user.heldout_clicks, 10);
        slot.row.mrr = mrr(ranked, user.heldout_clicks);
        slot.row.composite = composite;
        slot.evaluated = true;
    });

    EvalReport report;
    report.config_fingerprint = cfg.fingerprint();
    report.seed = cfg.eval.seed;
    for (int i = 0; i < n; ++i) {
        if (!slots[i].evaluated) {
            ++report.users_skipped;
            continue;
        }
        const UserEval& r = slots[i].row;
        report.per_user.push_back(r);
        report.recall5 += r.recall5;
        report.recall10 += r.recall10;
        report.ndcg5 += r.ndcg5;
        report.ndcg10 += r.ndcg10;
        report.mrr += r.mrr;
        report.mean_composite += r.composite;
        ++report.users_evaluated;
    }
    if (report.users_evaluated > 0) {
        const double m = report.users_evaluated;
        report.recall5 /= m;
        report.recall10 /= m;
        report.ndcg5 /= m;
        report.ndcg10 /= m;
        report.mrr /= m;
        report.mean_composite /= m;
    }
    return report;
}

}  // namespace

EvalReport run_eval(const World& world, const Services& sv, const PolicyParams& params,
                    const Config& cfg, int threads) {
    if (params.vocab != sv.vocab.size() || params.vocab_checksum != sv.vocab.checksum())
        throw ConfigError("evaluate: policy vocabulary does not match the world vocabulary");
    const GrammarSpec grammar = make_grammar(cfg.policy, sv.vocab);
    return eval_users(world, sv, cfg, threads,
                      [&](const UserRecord& user, const std::vector<BehaviorEvent>&,
                          const Vec& mean, double* composite) {
                          Rng rng(mix_seed(mix_seed(cfg.eval.seed, kEvalSalt), user.user_id));
                          const GeneratedList gen =
                              best_of_n(params, user, mean, *sv.scorer, sv.vocab, grammar,
                                        cfg.eval.best_of_n, cfg.eval.temperature, rng);
                          *composite = gen.reward.composite;
                          return query_strings(gen.parsed, sv.vocab);
                      });
}

EvalReport run_eval_verbatim(const World& world, const Services& sv, const Config& cfg,
                             int threads) {
    return eval_users(world, sv, cfg, threads,
                      [&](const UserRecord& user, const std::vector<BehaviorEvent>& cleaned,
                          const Vec&, double* composite) {
                          std::vector<std::string> queries;
                          for (const BehaviorEvent& b : cleaned)
                              if (b.domain == Domain::search) queries.push_back(b.payload);
                          if (queries.empty())
                              for (const BehaviorEvent& b : cleaned) queries.push_back(b.payload);
                          *composite = sv.scorer->score_strings(user, queries, true).composite;
                          return queries;
                      });
}

void write_eval_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "# fingerprint=" << report.config_fingerprint << " seed=" << report.seed
        << " users=" << report.users_evaluated << " skipped=" << report.users_skipped << "\n";
    out << "user_id,recall5,recall10,ndcg5,ndcg10,mrr,composite\n";
    char buf[256];
    auto line = [&](int id, double r5, double r10, double n5, double n10, double rr, double c) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", id, r5, r10,
                      n5, n10, rr, c);
        out << buf;
    };
    for (const UserEval& r : report.per_user)
        line(r.user_id, r.recall5, r.recall10, r.ndcg5, r.ndcg10, r.mrr, r.composite);
    // Aggregate row keyed as user -1, documented in the README.
    line(-1, report.recall5, report.recall10, report.ndcg5, report.ndcg10, report.mrr,
         report.mean_composite);
    if (!out) throw IoError("write failed: " + path);
}

// ---- sweeps ---------------------------------------------------------------

double SweepResult::mean(const std::string& label, double SweepRow::*col) const {
    double sum = 0.0;
    int n = 0;
    for (const SweepRow& r : rows) {
        if (r.label == label) {
            sum += r.*col;
            ++n;
        }
    }
    if (n == 0) throw InputError("sweep: no rows labeled '" + label + "'");
    return sum / n;
}

namespace {

Config sweep_config(const Config& cfg) {
    Config c = cfg;
    if (cfg.eval.sweep_max_users > 0)
        c.world.users = std::min(cfg.world.users, cfg.eval.sweep_max_users);
    c.eval.max_users = 0;  // evaluate the whole (reduced) world
    return c;
}

PolicyParams train_sweep_policy(const World& world, const Services& sv,
                                const RewardScorer& scorer, const Config& cfg, Tier tier,
                                uint64_t seed, int threads) {
    PolicyConfig pcfg = cfg.policy;
    pcfg.tier = std::string(tier_name(tier));
    GrpoConfig gcfg = cfg.grpo;
    gcfg.steps = cfg.eval.sweep_steps;
    gcfg.batch_users = cfg.eval.sweep_batch_users;
    gcfg.seed = seed;
    PolicyParams init = make_initial_policy(pcfg, sv.vocab, sv.embedder, seed);
    GrpoTrainer trainer(world, sv.embedder, sv.index, sv.filter, scorer, sv.vocab, pcfg, gcfg,
                        std::move(init), threads);
    return trainer.run().params;
}

void write_sweep_files(const std::string& out_dir, const std::string& name,
                       const std::vector<std::string>& labels, const SweepResult& result) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    const std::string csv_path = out_dir + "/" + name + ".csv";
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path);
    out << "config,seed,recall5,recall10,ndcg5,ndcg10,mrr,mean_composite\n";
    char buf[320];
    for (const SweepRow& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      r.label.c_str(), static_cast<unsigned long long>(r.seed), r.recall5,
                      r.recall10, r.ndcg5, r.ndcg10, r.mrr, r.mean_composite);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + csv_path);

    std::vector<double> rec, ndcg;
    for (const std::string& l : labels) {
        rec.push_back(result.mean(l, &SweepRow::recall10));
        ndcg.push_back(result.mean(l, &SweepRow::ndcg10));
    }
    write_line_chart(out_dir + "/" + name + ".svg", name + " sweep", labels,
                     {{"recall@10", rec}, {"ndcg@10", ndcg}});
}

}  // namespace

SweepResult sweep_capacity(const std::vector<std::string>& tiers, const Config& cfg,
                           const std::string& out_dir, int threads) {
    if (tiers.empty()) throw InputError("sweep: empty tier list");
    const Config c = sweep_config(cfg);
    const World world = generate_world(c.world);
    const std::unique_ptr<Services> sv = make_services(world, c, threads);

    SweepResult result;
    for (const std::string& tier_str : tiers) {
        const Tier tier = tier_from_name(tier_str);
        for (int s = 0; s < c.eval.sweep_seeds; ++s) {
            const uint64_t seed = c.grpo.seed + static_cast<uint64_t>(s);
            const PolicyParams trained =
                train_sweep_policy(world, *sv, *sv->scorer, c, tier, seed, threads);
            Config ec = c;
            ec.eval.seed = c.eval.seed + static_cast<uint64_t>(s);
            const EvalReport rep = run_eval(world, *sv, trained, ec, threads);
            result.rows.push_back({tier_str, seed, rep.recall5, rep.recall10, rep.ndcg5,
                                   rep.ndcg10, rep.mrr, rep.mean_composite});
        }
    }
    write_sweep_files(out_dir, "capacity", tiers, result);
    return result;
}

SweepResult sweep_bestofn(const std::vector<int>& n_list, const Config& cfg,
                          const std::string& out_dir, int threads) {
    if (n_list.empty()) throw InputError("sweep: empty N list");
    const Config c = sweep_config(cfg);
    const World world = generate_world(c.world);
    const std::unique_ptr<Services> sv = make_services(world, c, threads);
    const Tier tier = tier_from_name(c.eval.sweep_tier);

    SweepResult result;
    std::vector<std::string> labels;
    for (int n : n_list) labels.push_back(std::to_string(n));
    for (int s = 0; s < c.eval.sweep_seeds; ++s) {
        const uint64_t seed = c.grpo.seed + static_cast<uint64_t>(s);
        const PolicyParams trained =
            train_sweep_policy(world, *sv, *sv->scorer, c, tier, seed, threads);
        for (size_t i = 0; i < n_list.size(); ++i) {
            Config ec = c;
            ec.eval.best_of_n = n_list[i];
            ec.eval.seed = c.eval.seed + static_cast<uint64_t>(s);
            const EvalReport rep = run_eval(world, *sv, trained, ec, threads);
            result.rows.push_back({labels[i], seed, rep.recall5, rep.recall10, rep.ndcg5,
                                   rep.ndcg10, rep.mrr, rep.mean_composite});
        }
    }
    write_sweep_files(out_dir, "bestofn", labels, result);
    return result;
}

SweepResult sweep_reward_ablation(const Config& cfg, const std::string& out_dir, int threads) {
    const Config c = sweep_config(cfg);
    const World world = generate_world(c.world);
    const std::unique_ptr<Services> sv = make_services(world, c, threads);
    const Tier tier = tier_from_name(c.eval.sweep_tier);

    // Full config plus one run per dropped component; the remaining weights
    // are renormalized to keep the composite on the [0,1] scale.
    struct Variant {
        std::string label;
        double RewardConfig::*drop;
    };
    const std::vector<Variant> variants = {
        {"full", nullptr},
        {"no_align", &RewardConfig::lambda_align},
        {"no_cov", &RewardConfig::lambda_cov},
        {"no_spec", &RewardConfig::lambda_spec},
        {"no_div", &RewardConfig::lambda_div},
        {"no_struct", &RewardConfig::lambda_struct},
    };

    SweepResult result;
    std::vector<std::string> labels;
    for (const Variant& var : variants) {
        labels.push_back(var.label);
        RewardConfig rcfg = c.rewards;
        if (var.drop) {
            const double dropped = rcfg.*(var.drop);
            if (dropped >= 1.0 - 1e-12)
                throw ConfigError("sweep: cannot drop a component with weight 1");
            rcfg.*(var.drop) = 0.0;
            const double rescale = 1.0 / (1.0 - dropped);
            rcfg.lambda_align *= rescale;
            rcfg.lambda_cov *= rescale;
            rcfg.lambda_spec *= rescale;
            rcfg.lambda_div *= rescale;
            rcfg.lambda_struct *= rescale;
        }
        const RewardScorer scorer(world, sv->embedder, sv->index, rcfg);
        for (int s = 0; s < c.eval.sweep_seeds; ++s) {
            const uint64_t seed = c.grpo.seed + static_cast<uint64_t>(s);
            const PolicyParams trained =
                train_sweep_policy(world, *sv, scorer, c, tier, seed, threads);
            Config ec = c;
            ec.eval.seed = c.eval.seed + static_cast<uint64_t>(s);
            const EvalReport rep = run_eval(world, *sv, trained, ec, threads);
            result.rows.push_back({var.label, seed, rep.recall5, rep.recall10, rep.ndcg5,
                                   rep.ndcg10, rep.mrr, rep.mean_composite});
        }
    }
    write_sweep_files(out_dir, "ablation", labels, result);
    return result;
}

// ---- chart ----------------------------------------------------------------

namespace {

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(ch);
        }
    }
    return out;
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<std::string>& x_labels,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    if (x_labels.empty() || series.empty()) throw InputError("chart: nothing to plot");
    for (const auto& [name, ys] : series)
        if (ys.size() != x_labels.size())
            throw InputError("chart: series '" + name + "' length mismatch");

    const double width = 640, height = 400;
    const double left = 60, right = 150, top = 40, bottom = 50;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double lo = series[0].second[0], hi = lo;
    for (const auto& [name, ys] : series)
        for (double y : ys) {
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    const size_t n = x_labels.size();
    auto px = [&](size_t i) {
        return n == 1 ? left + plot_w / 2
                      : left + plot_w * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    auto py = [&](double y) { return top + plot_h * (1.0 - (y - lo) / (hi - lo)); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    char buf[512];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
           "viewBox=\"0 0 640 400\">\n";
    out << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    out << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">"
        << svg_escape(title) << "</text>\n";

    // axes and horizontal grid with y tick labels
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", left,
                  top, left, top + plot_h);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", left,
                  top + plot_h, left + plot_w, top + plot_h);
    out << buf;
    for (int tick = 0; tick <= 4; ++tick) {
        const double y = lo + (hi - lo) * tick / 4.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#ddd\"/>\n", left,
                      py(y), left + plot_w, py(y));
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" text-anchor=\"end\" font-family=\"sans-serif\" "
                      "font-size=\"11\">%.3g</text>\n",
                      left - 6, py(y) + 4, y);
        out << buf;
    }
    for (size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                      "font-size=\"11\">%s</text>\n",
                      px(i), top + plot_h + 18, svg_escape(x_labels[i]).c_str());
        out << buf;
    }

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % 5];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, "%g,%g ", px(i), py(series[s].second[i]));
            out << buf;
        }
        out << "\"/>\n";
        for (size_t i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf,
                          "<circle cx=\"%g\" cy=\"%g\" r=\"3\" fill=\"%s\"/>\n", px(i),
                          py(series[s].second[i]), color);
            out << buf;
        }
        // legend entry
        const double ly = top + 10 + 18 * static_cast<double>(s);
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" "
                      "stroke-width=\"2\"/>\n",
                      left + plot_w + 12, ly, left + plot_w + 32, ly, color);
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"12\">%s"
                      "</text>\n",
                      left + plot_w + 38, ly + 4, svg_escape(series[s].first).c_str());
        out << buf;
    }
    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace iqgen
