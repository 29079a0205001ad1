#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iqgen/config.hpp"
#include "iqgen/distill.hpp"
#include "iqgen/errors.hpp"
#include "iqgen/eval.hpp"
#include "iqgen/grpo.hpp"
#include "iqgen/parallel.hpp"
#include "iqgen/policy.hpp"
#include "iqgen/world.hpp"

namespace {

using namespace iqgen;

constexpr uint64_t kStudentInitSalt = 0x73747564;

struct CommonArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    int threads = 0;  // 0 = all cores
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "Config file (INI sections)");
    sub->add_option("--seed", args.seed, "Override every stage seed");
    sub->add_option("--threads", args.threads, "Worker thread cap (0 = all cores)");
}

// Usage-class failures (bad paths, malformed config) must exit 2, so input
// existence is checked before any heavy work begins.
void require_exists(const std::string& path, const char* what) {
    if (!std::filesystem::exists(path))
        throw ConfigError(std::string(what) + " not found: " + path);
}

Config resolve_config(const CommonArgs& args) {
    Config cfg;
    if (!args.config_path.empty()) {
        require_exists(args.config_path, "config file");
        cfg = load_config_file(args.config_path);
    }
    if (args.seed) cfg.override_seed(*args.seed);
    cfg.threads = args.threads;
    cfg.validate();
    return cfg;
}

void print_effective(const Config& cfg) {
    std::cout << "# effective config (fingerprint " << cfg.fingerprint() << ", threads "
              << resolve_threads(cfg.threads) << ")\n"
              << cfg.dump() << std::flush;
}

std::string default_log_path(const std::string& ckpt_path) { return ckpt_path + ".log.csv"; }

int cmd_gen_world(const CommonArgs& common, const std::string& out_dir) {
    const Config cfg = resolve_config(common);
    print_effective(cfg);
    const World world = generate_world(cfg.world);
    export_world(world, out_dir);
    std::printf("world: %zu topics, %zu articles, %zu users -> %s\n", world.topics.size(),
                world.articles.size(), world.users.size(), out_dir.c_str());
    return 0;
}

int cmd_train_filter(const CommonArgs& common, const std::string& world_dir,
                     const std::string& out_path) {
    const Config cfg = resolve_config(common);
    print_effective(cfg);
    require_exists(world_dir, "world directory");
    const World world = import_world(world_dir);
    const Embedder embedder = make_embedder(world, cfg.embed);
    FilterReport report;
    const FilterModel model = train_filter(world, embedder, cfg.filter, &report);
    model.save(out_path);
    std::printf("filter: trained on %d, holdout %d, accuracy %.4f precision %.4f recall %.4f\n",
                report.train_count, report.holdout_count, report.accuracy, report.precision,
                report.recall);
    return 0;
}

int cmd_train_teacher(const CommonArgs& common, const std::string& world_dir,
                      const std::string& out_path, std::string log_path) {
    const Config cfg = resolve_config(common);
    print_effective(cfg);
    require_exists(world_dir, "world directory");
    const World world = import_world(world_dir);
    const auto sv = make_services(world, cfg, cfg.threads);
    PolicyParams init = make_initial_policy(cfg.policy, sv->vocab, sv->embedder, cfg.grpo.seed);
    GrpoTrainer trainer(world, sv->embedder, sv->index, sv->filter, *sv->scorer, sv->vocab,
                        cfg.policy, cfg.grpo, std::move(init), cfg.threads);
    const TrainResult result = trainer.run();
    result.params.save(out_path);
    if (log_path.empty()) log_path = default_log_path(out_path);
    write_training_log(log_path, result.log);
    const StepMetrics last = result.log.empty() ? StepMetrics{} : result.log.back();
    std::printf("teacher: %d steps, final mean reward %.4f, valid %.3f -> %s (log %s)\n",
                static_cast<int>(result.log.size()), last.mean_reward, last.valid_frac,
                out_path.c_str(), log_path.c_str());
    return 0;
}

int cmd_distill(const CommonArgs& common, const std::string& world_dir, const std::string& mode,
                const std::string& teacher_path, const std::string& out_path,
                std::string log_path) {
    const Config cfg0 = resolve_config(common);
    Config cfg = cfg0;
    cfg.distill.mode = mode.empty() ? cfg.distill.mode : mode;
    cfg.validate();
    print_effective(cfg);
    require_exists(world_dir, "world directory");

    const DistillMode dmode = distill_mode_from_name(cfg.distill.mode);
    if (dmode == DistillMode::none && !teacher_path.empty())
        throw ConfigError("mode 'none' is the no-teacher control; --teacher is not accepted");
    if (dmode != DistillMode::none && teacher_path.empty())
        throw ConfigError("--teacher is required for mode '" + cfg.distill.mode + "'");

    const World world = import_world(world_dir);
    const auto sv = make_services(world, cfg, cfg.threads);
    const Tier student_tier = tier_from_name(cfg.distill.student_tier);
    if (log_path.empty()) log_path = default_log_path(out_path);

    if (dmode == DistillMode::none) {
        PolicyConfig pcfg = cfg.policy;
        pcfg.tier = cfg.distill.student_tier;
        const GrpoConfig gcfg = grpo_config_for_none(cfg.grpo, cfg.distill);
        PolicyParams init = init_student(student_tier, sv->vocab, sv->embedder,
                                         mix_seed(cfg.distill.seed, kStudentInitSalt), nullptr);
        GrpoTrainer trainer(world, sv->embedder, sv->index, sv->filter, *sv->scorer, sv->vocab,
                            pcfg, gcfg, std::move(init), cfg.threads);
        const TrainResult result = trainer.run();
        result.params.save(out_path);
        write_training_log(log_path, result.log);
        std::printf("student (no distillation): %d steps -> %s (log %s)\n",
                    static_cast<int>(result.log.size()), out_path.c_str(), log_path.c_str());
        return 0;
    }

    require_exists(teacher_path, "teacher checkpoint");
    PolicyParams teacher = PolicyParams::load(teacher_path);
    PolicyParams init = init_student(student_tier, sv->vocab, sv->embedder,
                                     mix_seed(cfg.distill.seed, kStudentInitSalt), &teacher);
    Distiller distiller(world, sv->embedder, sv->filter, sv->vocab, cfg.policy, cfg.distill,
                        std::move(teacher), std::move(init), cfg.threads);
    const DistillResult result = distiller.run();
    result.params.save(out_path);
    write_distill_log(log_path, result.log);
    const double last = result.log.empty() ? 0.0 : result.log.back().loss;
    std::printf("student (%s): %d steps, final loss %.5f -> %s (log %s)\n",
                cfg.distill.mode.c_str(), static_cast<int>(result.log.size()), last,
                out_path.c_str(), log_path.c_str());
    return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& world_dir,
                 const std::string& ckpt_path, std::optional<int> n, bool verbatim,
                 const std::string& out_path) {
    Config cfg = resolve_config(common);
    if (n) cfg.eval.best_of_n = *n;
    cfg.validate();
    print_effective(cfg);
    require_exists(world_dir, "world directory");
    if (!verbatim && ckpt_path.empty())
        throw ConfigError("--ckpt is required unless --verbatim is given");

    const World world = import_world(world_dir);
    const auto sv = make_services(world, cfg, cfg.threads);
    EvalReport report;
    if (verbatim) {
        report = run_eval_verbatim(world, *sv, cfg, cfg.threads);
    } else {
        require_exists(ckpt_path, "checkpoint");
        const PolicyParams params = PolicyParams::load(ckpt_path);
        report = run_eval(world, *sv, params, cfg, cfg.threads);
    }
    if (!out_path.empty()) write_eval_report(out_path, report);
    std::printf("eval: users %d (skipped %d)\n", report.users_evaluated, report.users_skipped);
    std::printf("recall@5 %.4f  recall@10 %.4f  ndcg@5 %.4f  ndcg@10 %.4f  mrr %.4f  "
                "composite %.4f\n",
                report.recall5, report.recall10, report.ndcg5, report.ndcg10, report.mrr,
                report.mean_composite);
    return 0;
}

int cmd_sweep(const CommonArgs& common, const std::string& kind, const std::string& out_dir) {
    const Config cfg = resolve_config(common);
    print_effective(cfg);
    SweepResult result;
    if (kind == "capacity") {
        result = sweep_capacity({"tiny", "small", "base", "large"}, cfg, out_dir, cfg.threads);
    } else if (kind == "bestofn") {
        result = sweep_bestofn({1, 2, 4, 8, 16, 32}, cfg, out_dir, cfg.threads);
    } else if (kind == "ablation") {
        result = sweep_reward_ablation(cfg, out_dir, cfg.threads);
    } else {
        throw ConfigError("unknown sweep kind '" + kind + "' (capacity|bestofn|ablation)");
    }
    std::printf("sweep %s: %zu rows -> %s\n", kind.c_str(), result.rows.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic-world query-generation pipeline: world building, noise filtering, "
                 "RL teacher training, distillation, retrieval evaluation"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string world_dir, ckpt_path, teacher_path, mode, log_path, sweep_kind;
    std::string gen_out = "world", filter_out, teacher_out, student_out, eval_out, sweep_out;
    std::optional<int> best_n;
    bool verbatim = false;

    CLI::App* gen = app.add_subcommand("gen-world", "Generate a synthetic world directory");
    add_common(gen, common);
    gen->add_option("--out", gen_out, "Output directory");

    CLI::App* tf = app.add_subcommand("train-filter", "Train the behavior noise filter");
    add_common(tf, common);
    tf->add_option("--world", world_dir, "World directory")->required();
    tf->add_option("--out", filter_out, "Filter model path")->required();

    CLI::App* tt = app.add_subcommand("train-teacher", "RL-train the teacher policy");
    add_common(tt, common);
    tt->add_option("--world", world_dir, "World directory")->required();
    tt->add_option("--out", teacher_out, "Checkpoint path")->required();
    tt->add_option("--log", log_path, "Training log CSV (default <out>.log.csv)");

    CLI::App* di = app.add_subcommand("distill", "Distill the teacher into a student");
    add_common(di, common);
    di->add_option("--world", world_dir, "World directory")->required();
    di->add_option("--mode", mode, "onpolicy|supervised|none");
    di->add_option("--teacher", teacher_path, "Teacher checkpoint");
    di->add_option("--out", student_out, "Student checkpoint path")->required();
    di->add_option("--log", log_path, "Log CSV (default <out>.log.csv)");

    CLI::App* ev = app.add_subcommand("evaluate", "Retrieval evaluation of a checkpoint");
    add_common(ev, common);
    ev->add_option("--world", world_dir, "World directory")->required();
    ev->add_option("--ckpt", ckpt_path, "Policy checkpoint");
    ev->add_option("--n", best_n, "Best-of-N candidates");
    ev->add_flag("--verbatim", verbatim, "Evaluate the cleaned-search-payload baseline instead");
    ev->add_option("--out", eval_out, "Report CSV path");

    CLI::App* sw = app.add_subcommand("sweep", "Capacity / best-of-N / reward-ablation sweeps");
    add_common(sw, common);
    sw->add_option("kind", sweep_kind, "capacity|bestofn|ablation")->required();
    sw->add_option("--out", sweep_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse error
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_world(common, gen_out);
        if (tf->parsed()) return cmd_train_filter(common, world_dir, filter_out);
        if (tt->parsed()) return cmd_train_teacher(common, world_dir, teacher_out, log_path);
        if (di->parsed())
            return cmd_distill(common, world_dir, mode, teacher_path, student_out, log_path);
        if (ev->parsed())
            return cmd_evaluate(common, world_dir, ckpt_path, best_n, verbatim, eval_out);
        if (sw->parsed()) return cmd_sweep(common, sweep_kind, sweep_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseFileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;  // unreachable: require_subcommand guarantees a branch above
}
