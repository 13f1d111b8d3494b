#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "serum/detector.hpp"
#include "serum/multiuser.hpp"
#include "serum/perturb.hpp"
#include "serum/toygen.hpp"

namespace serum::eval {

struct ScoreSet {
    std::vector<double> positives;
    std::vector<double> negatives;
    std::string label;
    std::map<std::string, std::string> provenance;
};

struct TprResult {
    double tpr = 0;
    double threshold = 0;
};

// threshold = smallest value whose empirical FPR is at most the target;
// negatives exactly at the threshold count as negatives, positives count
// only strictly above. fpr_target = 0 selects the max-negative threshold.
TprResult tpr_at_fpr(const ScoreSet& scores, double fpr_target);

// Probability that a random positive outranks a random negative, ties at
// one half (rank-statistic formulation).
double roc_auc(const ScoreSet& scores);

struct ConditionResult {
    std::string label;
    double tpr = 0, threshold = 0, auc = 0;
    std::uint64_t n_pos = 0, n_neg = 0;
    double seconds = 0;
};

struct EvalReport {
    std::vector<ConditionResult> conditions;
    double average_tpr = 0;
    double fpr_target = 0.01;
    std::vector<std::string> warnings;
    std::map<std::string, std::string> config_echo;
    double total_seconds = 0;
};

// Scores every test entry under each condition (clean plus one condition
// per perturbation spec) with detect(), then computes per-condition
// TPR@FPR, threshold and ROC-AUC. Thresholds are calibrated independently
// per condition. Training seed ranges, when provided, are checked against
// the test set's metadata and overlap raises a leakage error.
EvalReport evaluate_suite(const detector::DetectorModel& model,
                          const toygen::ToyPipeline& pipeline,
                          const toygen::Dataset& test_set,
                          const std::vector<perturb::PerturbSpec>& specs,
                          double fpr_target, std::uint64_t eval_seed,
                          std::optional<std::pair<std::uint64_t, std::uint64_t>>
                              train_seed_range = std::nullopt,
                          std::uint32_t threads = 1);

// Fraction of queries whose detection passes and whose identified user is
// the labeled one; queries failing detection count as incorrect.
struct LabeledQuery {
    core::LatentTensor latent;
    std::uint32_t true_user = 0;
};
double user_accuracy(const multiuser::UserRegistry& registry,
                     const std::vector<LabeledQuery>& queries);

// Same, over pre-scored per-pattern score vectors (the score-import path).
struct ScoredQuery {
    std::vector<double> scores;
    std::uint32_t true_user = 0;
};
double user_accuracy(const multiuser::UserRegistry& registry,
                     const std::vector<ScoredQuery>& queries);

// Structured text score files with a mandatory provenance block.
ScoreSet import_scores(const std::string& path);
void export_scores(const ScoreSet& scores, const std::string& path);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

// Canonical column rank for report rendering; clean first, then the
// benchmark perturbations in their customary order, then anything else.
int canonical_condition_rank(const std::string& label);

}  // namespace serum::eval
