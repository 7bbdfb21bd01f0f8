#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace volformer {

// Validation scores with their binary labels (1 = case, 0 = control).
struct ScoredCohort {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Area under the ROC curve via the Mann-Whitney U statistic: the probability
// that a random case outscores a random control, ties counted 0.5. Requires
// both classes present.
double roc_auc(const ScoredCohort& c);

// Sensitivity at the smallest threshold achieving specificity >= spec_target
// (prediction is positive iff score >= threshold).
double sens_at_spec(const ScoredCohort& c, double spec_target = 0.80);

// Specificity at the largest threshold achieving sensitivity >= sens_target.
double spec_at_sens(const ScoredCohort& c, double sens_target = 0.80);

// Mean and 95% CI half-width over exactly six cross-validation folds:
// ci95 = t(0.975, df=5) * sd / sqrt(6) with the sample (n-1) deviation.
struct MetricSummary {
    std::vector<double> values; // the six fold values
    double mean = 0.0;
    double ci95 = 0.0;
};
MetricSummary summarize_folds(const std::vector<double>& values);

// One-sided paired t-test of mean(a - b) > 0 over six folds, df = 5.
// Degenerate conventions: zero-variance nonzero-mean differences give p = 0
// (mean > 0) or p = 1 (mean < 0); an all-zero difference gives p = 0.5.
struct PairedTest {
    double t = 0.0;
    int df = 5;
    double p = 0.5;
};
PairedTest paired_t_one_sided(const std::vector<double>& a, const std::vector<double>& b);

// P(T > t) for Student's t with df degrees of freedom, evaluated through the
// regularized incomplete beta function (Lentz continued fraction).
double student_t_sf(double t, int df);

// Regularized incomplete beta I_x(a, b); exposed for the statistics oracles.
double reg_inc_beta(double a, double b, double x);

// t such that student_t_sf(t, df) = (1 - level) / 2, found by bisection.
double t_critical_two_sided(double level, int df);

// Per-model fold scores feeding the report; all models must share the fold
// structure (same fold count and identical label sequences per fold).
struct ModelFolds {
    std::string name;
    std::vector<ScoredCohort> folds;
};

// Machine-readable JSON plus an aligned text table of AUC / sens@spec /
// spec@sens summaries, with one-sided p-values that the reference model's
// fold values exceed each row's.
struct FoldReport {
    std::string json_text;
    std::string table_text;
};
FoldReport build_report(const std::vector<ModelFolds>& models, const std::string& reference,
                        double spec_target = 0.80, double sens_target = 0.80);

} // namespace volformer
