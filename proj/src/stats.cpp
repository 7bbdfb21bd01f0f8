#include "volformer/stats.hpp"

#include "volformer/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace volformer {

namespace {

struct ClassSplit {
    std::vector<double> cases, controls; // sorted ascending
};

ClassSplit split_classes(const ScoredCohort& c, const char* op) {
    if (c.scores.size() != c.labels.size()) {
        fail(ErrorKind::value, std::string(op) + ": scores and labels differ in length");
    }
    ClassSplit s;
    for (std::size_t i = 0; i < c.scores.size(); ++i) {
        if (!std::isfinite(c.scores[i])) {
            fail(ErrorKind::value, std::string(op) + ": non-finite score at index " + std::to_string(i));
        }
        if (c.labels[i] == 1) {
            s.cases.push_back(c.scores[i]);
        } else if (c.labels[i] == 0) {
            s.controls.push_back(c.scores[i]);
        } else {
            fail(ErrorKind::value, std::string(op) + ": labels must be 0 or 1");
        }
    }
    if (s.cases.empty() || s.controls.empty()) {
        fail(ErrorKind::value, std::string(op) + ": both classes must be present (" +
                                   std::to_string(s.cases.size()) + " cases, " +
                                   std::to_string(s.controls.size()) + " controls)");
    }
    std::sort(s.cases.begin(), s.cases.end());
    std::sort(s.controls.begin(), s.controls.end());
    return s;
}

// Fraction of controls strictly below t (= specificity when positives are
// score >= t) and fraction of cases at or above t (= sensitivity).
double specificity_at(const ClassSplit& s, double t) {
    const auto below = std::lower_bound(s.controls.begin(), s.controls.end(), t) -
                       s.controls.begin();
    return static_cast<double>(below) / static_cast<double>(s.controls.size());
}

double sensitivity_at(const ClassSplit& s, double t) {
    const auto at_or_above = s.cases.end() - std::lower_bound(s.cases.begin(), s.cases.end(), t);
    return static_cast<double>(at_or_above) / static_cast<double>(s.cases.size());
}

std::vector<double> unique_scores(const ScoredCohort& c) {
    std::vector<double> u = c.scores;
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return u;
}

void check_target(double target, const char* op) {
    if (!(target >= 0.0 && target <= 1.0)) {
        fail(ErrorKind::value, std::string(op) + ": target must lie in [0, 1]");
    }
}

double sample_sd(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    fail(ErrorKind::numeric, "incomplete beta continued fraction did not converge");
}

} // namespace

double reg_inc_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) fail(ErrorKind::value, "incomplete beta requires a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, int df) {
    if (df < 1) fail(ErrorKind::value, "student_t_sf requires df >= 1");
    if (std::isnan(t)) fail(ErrorKind::value, "student_t_sf: t is NaN");
    if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
    if (t < 0.0) return 1.0 - student_t_sf(-t, df);
    const double n = static_cast<double>(df);
    const double x = n / (n + t * t);
    return 0.5 * reg_inc_beta(n / 2.0, 0.5, x);
}

double t_critical_two_sided(double level, int df) {
    if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::value, "confidence level must be in (0, 1)");
    const double tail = (1.0 - level) / 2.0;
    double lo = 0.0, hi = 1.0;
    while (student_t_sf(hi, df) > tail) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_sf(mid, df) > tail) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-14 * hi) break;
    }
    return 0.5 * (lo + hi);
}

double roc_auc(const ScoredCohort& c) {
    split_classes(c, "roc_auc"); // validation only; ranking needs joint order
    const std::size_t n = c.scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return c.scores[a] < c.scores[b]; });
    // Average ranks within tie groups, then sum the case ranks.
    double case_rank_sum = 0.0;
    std::size_t n_cases = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && c.scores[idx[j]] == c.scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (c.labels[idx[k]] == 1) {
                case_rank_sum += avg_rank;
                ++n_cases;
            }
        }
        i = j;
    }
    const double n1 = static_cast<double>(n_cases);
    const double n0 = static_cast<double>(n - n_cases);
    const double u = case_rank_sum - n1 * (n1 + 1.0) / 2.0;
    return u / (n1 * n0);
}

double sens_at_spec(const ScoredCohort& c, double spec_target) {
    check_target(spec_target, "sens_at_spec");
    const ClassSplit s = split_classes(c, "sens_at_spec");
    for (double t : unique_scores(c)) {
        if (specificity_at(s, t) >= spec_target) return sensitivity_at(s, t);
    }
    return 0.0; // threshold above every score: specificity 1, sensitivity 0
}

double spec_at_sens(const ScoredCohort& c, double sens_target) {
    check_target(sens_target, "spec_at_sens");
    const ClassSplit s = split_classes(c, "spec_at_sens");
    const std::vector<double> u = unique_scores(c);
    for (auto it = u.rbegin(); it != u.rend(); ++it) {
        if (sensitivity_at(s, *it) >= sens_target) return specificity_at(s, *it);
    }
    return 0.0; // unreachable: the smallest score already has sensitivity 1
}

MetricSummary summarize_folds(const std::vector<double>& values) {
    if (values.size() != 6) {
        fail(ErrorKind::value, "summarize_folds expects exactly 6 fold values, got " +
                                   std::to_string(values.size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) fail(ErrorKind::value, "summarize_folds: non-finite fold value");
    }
    MetricSummary s;
    s.values = values;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / 6.0;
    static const double kT975Df5 = t_critical_two_sided(0.95, 5);
    s.ci95 = kT975Df5 * sample_sd(values, s.mean) / std::sqrt(6.0);
    return s;
}

PairedTest paired_t_one_sided(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != 6 || b.size() != 6) {
        fail(ErrorKind::value, "paired_t_one_sided expects two vectors of 6 fold values");
    }
    std::vector<double> d(6);
    for (std::size_t i = 0; i < 6; ++i) {
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
            fail(ErrorKind::value, "paired_t_one_sided: non-finite fold value");
        }
        d[i] = a[i] - b[i];
    }
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / 6.0;
    const double sd = sample_sd(d, mean);
    PairedTest out;
    if (sd == 0.0) {
        if (mean > 0.0) {
            out.t = std::numeric_limits<double>::infinity();
            out.p = 0.0;
        } else if (mean < 0.0) {
            out.t = -std::numeric_limits<double>::infinity();
            out.p = 1.0;
        } else {
            out.t = 0.0;
            out.p = 0.5;
        }
        return out;
    }
    out.t = mean / (sd / std::sqrt(6.0));
    out.p = student_t_sf(out.t, 5);
    return out;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

} // namespace

FoldReport build_report(const std::vector<ModelFolds>& models, const std::string& reference,
                        double spec_target, double sens_target) {
    if (models.empty()) fail(ErrorKind::value, "build_report: no models given");
    const ModelFolds* ref = nullptr;
    for (const auto& m : models) {
        if (m.name == reference) ref = &m;
    }
    if (!ref) fail(ErrorKind::value, "build_report: reference model '" + reference + "' not found");
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            if (models[i].name == models[j].name) {
                fail(ErrorKind::value, "build_report: duplicate model name '" + models[i].name + "'");
            }
        }
    }
    const std::size_t n_folds = models.front().folds.size();
    if (n_folds != 6) fail(ErrorKind::value, "build_report expects 6 folds per model");
    for (const auto& m : models) {
        if (m.folds.size() != n_folds) {
            fail(ErrorKind::value, "build_report: model '" + m.name + "' has " +
                                       std::to_string(m.folds.size()) + " folds, expected " +
                                       std::to_string(n_folds));
        }
        for (std::size_t f = 0; f < n_folds; ++f) {
            if (m.folds[f].labels != models.front().folds[f].labels) {
                fail(ErrorKind::value, "build_report: model '" + m.name + "' fold " +
                                           std::to_string(f) +
                                           " labels do not match the shared fold structure");
            }
        }
    }

    struct MetricDef {
        const char* key;
        double (*eval)(const ScoredCohort&, double);
        double target;
    };
    const MetricDef defs[3] = {
        {"auc", [](const ScoredCohort& c, double) { return roc_auc(c); }, 0.0},
        {"sens_at_spec", [](const ScoredCohort& c, double t) { return sens_at_spec(c, t); },
         spec_target},
        {"spec_at_sens", [](const ScoredCohort& c, double t) { return spec_at_sens(c, t); },
         sens_target},
    };

    std::vector<std::array<std::vector<double>, 3>> fold_values(models.size());
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        for (int k = 0; k < 3; ++k) {
            for (std::size_t f = 0; f < n_folds; ++f) {
                fold_values[mi][k].push_back(defs[k].eval(models[mi].folds[f], defs[k].target));
            }
        }
    }
    std::size_t ref_index = 0;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        if (&models[mi] == ref) ref_index = mi;
    }

    nlohmann::json doc;
    doc["reference"] = reference;
    doc["spec_target"] = spec_target;
    doc["sens_target"] = sens_target;
    doc["models"] = nlohmann::json::array();
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        nlohmann::json entry;
        entry["name"] = models[mi].name;
        for (int k = 0; k < 3; ++k) {
            const MetricSummary s = summarize_folds(fold_values[mi][k]);
            const PairedTest pt = paired_t_one_sided(fold_values[ref_index][k], fold_values[mi][k]);
            nlohmann::json metric;
            metric["folds"] = s.values;
            metric["mean"] = s.mean;
            metric["ci95"] = s.ci95;
            metric["p_reference_greater"] = pt.p;
            entry["metrics"][defs[k].key] = std::move(metric);
        }
        doc["models"].push_back(std::move(entry));
    }

    std::string table;
    {
        std::size_t name_w = 5;
        for (const auto& m : models) name_w = std::max(name_w, m.name.size());
        auto pad = [&](std::string s, std::size_t w) {
            s.resize(std::max(s.size(), w), ' ');
            return s;
        };
        const std::string head_spec = "sens@spec" + fmt("%.2f", spec_target);
        const std::string head_sens = "spec@sens" + fmt("%.2f", sens_target);
        table += pad("model", name_w + 2) + pad("AUC", 18) + pad(head_spec, 18) +
                 pad(head_sens, 18) + pad("p(AUC)", 10) + pad("p(sens)", 10) + "p(spec)\n";
        for (std::size_t mi = 0; mi < models.size(); ++mi) {
            table += pad(models[mi].name, name_w + 2);
            for (int k = 0; k < 3; ++k) {
                const MetricSummary s = summarize_folds(fold_values[mi][k]);
                table += pad(fmt("%.4f", s.mean) + " +/- " + fmt("%.4f", s.ci95), 18);
            }
            if (mi == ref_index) {
                table += pad("(ref)", 10) + pad("(ref)", 10) + "(ref)";
            } else {
                for (int k = 0; k < 3; ++k) {
                    const PairedTest pt =
                        paired_t_one_sided(fold_values[ref_index][k], fold_values[mi][k]);
                    table += k < 2 ? pad(fmt("%.4g", pt.p), 10) : fmt("%.4g", pt.p);
                }
            }
            table += '\n';
        }
    }

    FoldReport report;
    report.json_text = doc.dump(2) + "\n";
    report.table_text = std::move(table);
    return report;
}

} // namespace volformer
