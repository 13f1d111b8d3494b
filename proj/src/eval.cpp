#include "serum/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/rng.hpp"

#include <nlohmann/json.hpp>

namespace serum::eval {

using json = nlohmann::json;

TprResult tpr_at_fpr(const ScoreSet& scores, double fpr_target) {
    if (scores.positives.empty() || scores.negatives.empty())
        throw core::InvalidArgumentError("tpr_at_fpr: empty score array");
    if (!(fpr_target >= 0.0 && fpr_target < 1.0))
        throw core::RangeError("tpr_at_fpr: fpr target outside [0, 1)");
    std::vector<double> neg = scores.negatives;
    std::sort(neg.begin(), neg.end(), std::greater<>());
    const auto allowed = static_cast<std::size_t>(
        std::floor(fpr_target * static_cast<double>(neg.size())));
    // smallest threshold keeping at most `allowed` negatives strictly above
    const double threshold = neg[std::min(allowed, neg.size() - 1)];
    double tp = 0;
    for (double p : scores.positives) tp += p > threshold ? 1.0 : 0.0;
    return {tp / static_cast<double>(scores.positives.size()), threshold};
}

double roc_auc(const ScoreSet& scores) {
    if (scores.positives.empty() || scores.negatives.empty())
        throw core::InvalidArgumentError("roc_auc: empty score array");
    // average ranks over the pooled sample; ties share their mean rank
    struct Item {
        double v;
        bool pos;
    };
    std::vector<Item> all;
    all.reserve(scores.positives.size() + scores.negatives.size());
    for (double v : scores.positives) all.push_back({v, true});
    for (double v : scores.negatives) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        const double mean_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t)
            if (all[t].pos) rank_sum_pos += mean_rank;
        i = j;
    }
    const double np = static_cast<double>(scores.positives.size());
    const double nn = static_cast<double>(scores.negatives.size());
    const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

EvalReport evaluate_suite(const detector::DetectorModel& model,
                          const toygen::ToyPipeline& pipeline,
                          const toygen::Dataset& test_set,
                          const std::vector<perturb::PerturbSpec>& specs,
                          double fpr_target, std::uint64_t eval_seed,
                          std::optional<std::pair<std::uint64_t, std::uint64_t>>
                              train_seed_range,
                          std::uint32_t threads) {
    if (!(fpr_target >= 0.0 && fpr_target < 1.0))
        throw core::RangeError("evaluate_suite: fpr target outside [0, 1)");
    if (test_set.entries.empty())
        throw core::InvalidArgumentError("evaluate_suite: empty test set");

    if (train_seed_range) {
        const auto lo_it = test_set.metadata.find("seed_lo");
        const auto hi_it = test_set.metadata.find("seed_hi");
        if (lo_it != test_set.metadata.end() && hi_it != test_set.metadata.end()) {
            const std::uint64_t lo = std::stoull(lo_it->second);
            const std::uint64_t hi = std::stoull(hi_it->second);
            if (lo < train_seed_range->second && train_seed_range->first < hi)
                throw LeakageError(
                    "evaluate_suite: test seed range [" + lo_it->second + ", " +
                    hi_it->second + ") overlaps training range [" +
                    std::to_string(train_seed_range->first) + ", " +
                    std::to_string(train_seed_range->second) + ")");
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    report.fpr_target = fpr_target;

    const std::size_t n_conditions = specs.size() + 1;
    report.conditions.resize(n_conditions);

    // conditions are independent; each worker scores with its own model copy
    auto run_condition = [&](const detector::DetectorModel& worker_model,
                             std::size_t ci) {
        const auto tc0 = std::chrono::steady_clock::now();
        ScoreSet set;
        set.label = ci == 0 ? "clean" : perturb::kind_name(specs[ci - 1].kind);
        for (std::size_t ei = 0; ei < test_set.entries.size(); ++ei) {
            const auto& e = test_set.entries[ei];
            double score;
            if (ci == 0) {
                score = worker_model.forward(e.latent);
            } else {
                const std::uint64_t seed =
                    core::derive_seed(eval_seed, "eval.perturb", ci, e.prompt_seed);
                score = worker_model.forward(
                    pipeline.encode(perturb::apply(specs[ci - 1], e.image, seed)));
            }
            (e.label == toygen::Label::watermarked ? set.positives : set.negatives)
                .push_back(score);
        }
        const auto [tpr, threshold] = tpr_at_fpr(set, fpr_target);
        ConditionResult row;
        row.label = set.label;
        row.tpr = tpr;
        row.threshold = threshold;
        row.auc = roc_auc(set);
        row.n_pos = set.positives.size();
        row.n_neg = set.negatives.size();
        row.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tc0).count();
        report.conditions[ci] = std::move(row);
    };

    if (threads <= 1 || n_conditions == 1) {
        for (std::size_t ci = 0; ci < n_conditions; ++ci) run_condition(model, ci);
    } else {
        const std::size_t n_workers = std::min<std::size_t>(threads, n_conditions);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w)
            pool.emplace_back([&, w] {
                const detector::DetectorModel clone = model;
                for (std::size_t ci = w; ci < n_conditions; ci += n_workers)
                    run_condition(clone, ci);
            });
        for (auto& t : pool) t.join();
    }

    for (const auto& c : report.conditions)
        if (fpr_target > 0.0 && c.n_neg < 2000 && report.warnings.empty())
            report.warnings.push_back(
                "threshold at FPR " + std::to_string(fpr_target) + " rests on only " +
                std::to_string(static_cast<std::size_t>(
                    std::floor(fpr_target * static_cast<double>(c.n_neg)))) +
                " negatives (have " + std::to_string(c.n_neg) + ", want >= 2000)");

    double sum = 0;
    for (const auto& c : report.conditions) sum += c.tpr;
    report.average_tpr = sum / static_cast<double>(report.conditions.size());
    report.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

double user_accuracy(const multiuser::UserRegistry& registry,
                     const std::vector<LabeledQuery>& queries) {
    if (queries.empty())
        throw core::InvalidArgumentError("user_accuracy: empty query set");
    std::size_t correct = 0;
    for (const auto& q : queries) {
        const auto scores = multiuser::score_all(registry, q.latent);
        const auto r = multiuser::identify(registry, scores);
        if (r.watermarked && r.user_id == q.true_user) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(queries.size());
}

double user_accuracy(const multiuser::UserRegistry& registry,
                     const std::vector<ScoredQuery>& queries) {
    if (queries.empty())
        throw core::InvalidArgumentError("user_accuracy: empty query set");
    std::size_t correct = 0;
    for (const auto& q : queries) {
        const auto r = multiuser::identify(registry, q.scores);
        if (r.watermarked && r.user_id == q.true_user) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(queries.size());
}

ScoreSet import_scores(const std::string& path) {
    const auto bytes = io::read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), static_cast<std::uint64_t>(e.byte));
    }
    ScoreSet s;
    if (!j.contains("provenance") || !j.at("provenance").is_object())
        throw core::InvalidArgumentError(path + ": missing required field 'provenance'");
    for (const auto& [k, v] : j.at("provenance").items())
        s.provenance[k] = v.is_string() ? v.get<std::string>() : v.dump();
    if (!j.contains("label"))
        throw core::InvalidArgumentError(path + ": missing required field 'label'");
    s.label = j.at("label");
    for (const char* field : {"positives", "negatives"}) {
        if (!j.contains(field) || !j.at(field).is_array())
            throw core::InvalidArgumentError(path + ": missing required array '" +
                                             std::string(field) + "'");
        auto& dst = std::string(field) == "positives" ? s.positives : s.negatives;
        for (const auto& v : j.at(field)) {
            const double x = v.get<double>();
            if (!(x >= 0.0 && x <= 1.0))
                throw core::RangeError(path + ": score " + std::to_string(x) +
                                       " outside [0, 1] in '" + field + "'");
            dst.push_back(x);
        }
    }
    return s;
}

void export_scores(const ScoreSet& scores, const std::string& path) {
    json j{{"label", scores.label},
           {"provenance", scores.provenance},
           {"positives", scores.positives},
           {"negatives", scores.negatives}};
    io::atomic_write_file(path, j.dump(2) + "\n");
}

std::string report_to_json(const EvalReport& report) {
    json conditions = json::array();
    for (const auto& c : report.conditions)
        conditions.push_back({{"label", c.label},
                              {"tpr", c.tpr},
                              {"threshold", c.threshold},
                              {"roc_auc", c.auc},
                              {"n_pos", c.n_pos},
                              {"n_neg", c.n_neg},
                              {"seconds", c.seconds}});
    json j{{"average_tpr", report.average_tpr},
           {"fpr_target", report.fpr_target},
           {"conditions", conditions},
           {"warnings", report.warnings},
           {"config", report.config_echo},
           {"total_seconds", report.total_seconds}};
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    EvalReport r;
    r.average_tpr = j.at("average_tpr");
    r.fpr_target = j.at("fpr_target");
    for (const auto& c : j.at("conditions")) {
        ConditionResult row;
        row.label = c.at("label");
        row.tpr = c.at("tpr");
        row.threshold = c.at("threshold");
        row.auc = c.at("roc_auc");
        row.n_pos = c.at("n_pos");
        row.n_neg = c.at("n_neg");
        row.seconds = c.value("seconds", 0.0);
        r.conditions.push_back(std::move(row));
    }
    for (const auto& w : j.at("warnings")) r.warnings.push_back(w);
    for (const auto& [k, v] : j.at("config").items()) r.config_echo[k] = v;
    r.total_seconds = j.value("total_seconds", 0.0);
    return r;
}

int canonical_condition_rank(const std::string& label) {
    static const std::map<std::string, int> order{
        {"clean", 0},        {"rotate", 1},      {"jpeg", 2},
        {"crop_scale", 3},   {"random_drop", 4}, {"gauss_blur", 5},
        {"salt_pepper", 6},  {"gauss_noise", 7}, {"brightness", 8},
    };
    const auto it = order.find(label);
    return it == order.end() ? 100 : it->second;
}

}  // namespace serum::eval
