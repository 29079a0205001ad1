#include "iqgen/noise_filter.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "iqgen/errors.hpp"
#include "iqgen/rng.hpp"
#include "iqgen/text.hpp"

namespace iqgen {

namespace {

// Salt for the deterministic training-subset shuffle.
constexpr uint64_t kFilterSeedSalt = 0xf117e4;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

int oracle_label(std::string_view payload) {
    const std::vector<std::string> tokens = tokenize(payload);
    if (tokens.empty()) return 0;
    if (is_url_only(payload)) return 0;

    bool all_numeric = true;
    bool all_lexicon = true;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (!all_digits(t)) all_numeric = false;
        if (!is_nav_word(t) && !is_generic_word(t)) all_lexicon = false;
        if (is_login_word(t)) return 0;
        // "sign in", "log out", "sign up" style two-token login phrases.
        if ((t == "sign" || t == "log") && i + 1 < tokens.size()) {
            const std::string& next = tokens[i + 1];
            if (next == "in" || next == "out" || next == "up") return 0;
        }
    }
    if (all_numeric) return 0;
    if (all_lexicon) return 0;
    return 1;
}

double FilterModel::score(const Vec& x) const {
    if (x.size() != weights.size()) throw InputError("filter score: dimension mismatch");
    return sigmoid(dot(weights, x) + bias);
}

void FilterModel::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "iqgen-filter v1\n";
    out << "dim " << weights.size() << "\n";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", threshold);
    out << "threshold " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", bias);
    out << "bias " << buf << "\n";
    out << "weights";
    for (double w : weights) {
        std::snprintf(buf, sizeof buf, "%.17g", w);
        out << ' ' << buf;
    }
    out << "\n";
    if (!out) throw IoError("write failed: " + path);
}

FilterModel FilterModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string header;
    std::getline(in, header);
    if (header != "iqgen-filter v1") throw IoError("not a filter model file: " + path);
    FilterModel m;
    std::string key;
    size_t dim = 0;
    if (!(in >> key >> dim) || key != "dim") throw IoError("bad filter file: " + path);
    if (!(in >> key >> m.threshold) || key != "threshold")
        throw IoError("bad filter file: " + path);
    if (!(in >> key >> m.bias) || key != "bias") throw IoError("bad filter file: " + path);
    if (!(in >> key) || key != "weights") throw IoError("bad filter file: " + path);
    m.weights.resize(dim);
    for (double& w : m.weights)
        if (!(in >> w)) throw IoError("truncated filter file: " + path);
    return m;
}

FilterModel train_filter(const World& world, const Embedder& embedder, const FilterConfig& cfg,
                         FilterReport* report) {
    if (cfg.split <= 0.0 || cfg.split >= 1.0)
        throw InputError("filter training needs a split in (0, 1)");

    // Label every behavior payload with the oracle.
    std::vector<const std::string*> payloads;
    for (const UserRecord& u : world.users)
        for (const BehaviorEvent& b : u.behaviors) payloads.push_back(&b.payload);
    if (payloads.size() < 100)
        throw InputError("filter training needs at least 100 labeled behaviors");

    std::vector<int> order(payloads.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(mix_seed(world.config.seed, kFilterSeedSalt));
    rng.shuffle(std::span<int>(order));
    const int used = std::min<int>(static_cast<int>(order.size()), cfg.max_train);

    const int d = embedder.dim();
    std::vector<Vec> X(used);
    std::vector<int> y(used);
    for (int i = 0; i < used; ++i) {
        const std::string& p = *payloads[order[i]];
        X[i] = embedder.embed(p);
        y[i] = oracle_label(p);
    }

    int holdout = static_cast<int>(std::lround(cfg.split * used));
    holdout = std::max(1, std::min(holdout, used - 1));
    const int train = used - holdout;

    int positives = 0;
    for (int i = 0; i < train; ++i) positives += y[i];
    if (positives == 0 || positives == train)
        throw TrainError("filter training set is single-class; cannot fit");

    FilterModel model;
    model.weights.assign(d, 0.0);
    model.threshold = cfg.threshold;
    Vec grad(d);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0;
        for (int i = 0; i < train; ++i) {
            const double err = sigmoid(dot(model.weights, X[i]) + model.bias) - y[i];
            for (int j = 0; j < d; ++j) grad[j] += err * X[i][j];
            grad_b += err;
        }
        for (int j = 0; j < d; ++j) model.weights[j] -= cfg.lr * grad[j] / train;
        model.bias -= cfg.lr * grad_b / train;
    }

    if (report) {
        int correct = 0, tp = 0, fp = 0, fn = 0;
        for (int i = train; i < used; ++i) {
            const int pred = model.predict(X[i]);
            if (pred == y[i]) ++correct;
            if (pred == 1 && y[i] == 1) ++tp;
            if (pred == 1 && y[i] == 0) ++fp;
            if (pred == 0 && y[i] == 1) ++fn;
        }
        report->train_count = train;
        report->holdout_count = holdout;
        report->accuracy = static_cast<double>(correct) / holdout;
        report->precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        report->recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    }
    return model;
}

std::vector<BehaviorEvent> clean(const UserRecord& user, const FilterModel& model,
                                 const Embedder& embedder) {
    std::vector<BehaviorEvent> kept;
    double best_score = -1.0;
    size_t best_i = 0;
    for (size_t i = 0; i < user.behaviors.size(); ++i) {
        const double s = model.score(embedder.embed(user.behaviors[i].payload));
        if (s > best_score) {
            best_score = s;
            best_i = i;
        }
        if (s >= model.threshold) kept.push_back(user.behaviors[i]);
    }
    if (kept.empty() && !user.behaviors.empty()) kept.push_back(user.behaviors[best_i]);
    return kept;
}

}  // namespace iqgen
