#include "fewtrans/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fewtrans {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<double> differences(const std::vector<double>& a, const std::vector<double>& b,
                                const char* what) {
    if (a.size() != b.size()) throw Error(std::string(what) + ": length mismatch");
    if (a.size() < 2) throw Error(std::string(what) + ": need at least 2 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

}  // namespace

void validate_paired(const AccuracySeries& a, const AccuracySeries& b) {
    if (a.values.size() != b.values.size()) throw Error("paired series: length mismatch");
    if (!a.pairing_key.empty() || !b.pairing_key.empty()) {
        if (a.pairing_key != b.pairing_key) throw Error("paired series: pairing keys differ");
        if (a.pairing_key.size() != a.values.size())
            throw Error("paired series: key/value length mismatch");
    }
}

MeanCi mean_ci95(const std::vector<double>& values) {
    if (values.size() < 2) throw Error("mean_ci95: need at least 2 values");
    MeanCi out;
    out.n = values.size();
    out.mean = mean_of(values);
    const bool constant =
        std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; });
    if (constant) {
        out.mean = values[0];
        out.halfwidth = 0.0;
        return out;
    }
    out.halfwidth = 1.96 * sample_std(values, out.mean) / std::sqrt(static_cast<double>(out.n));
    return out;
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    const std::vector<double> d = differences(a, b, "paired_t_test");
    PairedTest out;
    out.df = static_cast<std::int64_t>(d.size()) - 1;
    const double mean = mean_of(d);
    const double sd = sample_std(d, mean);
    if (sd == 0.0) {
        out.degenerate = true;
        if (mean == 0.0) {
            out.t = 0.0;
            out.p = 1.0;
        } else {
            out.t = mean > 0 ? kInf : -kInf;
            out.p = 0.0;
        }
        return out;
    }
    out.t = mean / (sd / std::sqrt(static_cast<double>(d.size())));
    out.p = student_t_two_sided_p(out.t, static_cast<double>(out.df));
    return out;
}

double cohens_d_paired(const std::vector<double>& a, const std::vector<double>& b) {
    const std::vector<double> d = differences(a, b, "cohens_d_paired");
    const double mean = mean_of(d);
    const double sd = sample_std(d, mean);
    if (sd == 0.0) return mean == 0.0 ? 0.0 : (mean > 0 ? kInf : -kInf);
    return mean / sd;
}

namespace {

Correlation correlation_of(const std::vector<double>& x, const std::vector<double>& y,
                           const char* what) {
    if (x.size() != y.size()) throw Error(std::string(what) + ": length mismatch");
    if (x.size() < 3) throw Error(std::string(what) + ": need at least 3 points");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(std::string(what) + ": constant input series");

    Correlation out;
    out.n = x.size();
    out.r = sxy / std::sqrt(sxx * syy);
    const double n = static_cast<double>(out.n);
    const double r2 = std::min(1.0, out.r * out.r);
    if (r2 >= 1.0) {
        out.p = 0.0;  // |r| = 1 pushes the t statistic to infinity
    } else {
        const double t = out.r * std::sqrt((n - 2.0) / (1.0 - r2));
        out.p = student_t_two_sided_p(t, n - 2.0);
    }
    return out;
}

std::vector<double> mid_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
    return correlation_of(x, y, "pearson");
}

Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error("spearman: length mismatch");
    if (x.size() < 3) throw Error("spearman: need at least 3 points");
    return correlation_of(mid_ranks(x), mid_ranks(y), "spearman");
}

namespace {

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// continued fraction for the incomplete beta, modified Lentz
double beta_cf(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double tol = 1e-16;
    constexpr int max_terms = 200000;

    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double result = d;
    for (int m = 1; m <= max_terms; ++m) {
        const double dm = static_cast<double>(m);
        // even-numbered term
        double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        result *= d * c;
        // odd-numbered term
        num = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double mult = d * c;
        result *= mult;
        if (std::fabs(mult - 1.0) <= tol) break;
    }
    return result;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0 && a > 0.0 && b > 0.0))
        throw Error("regularized_incomplete_beta: arguments out of domain");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(x, a, b) / a;
    return 1.0 - std::exp(b * std::log1p(-x) + a * std::log(x) - log_beta(a, b)) *
                     beta_cf(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw Error("student_t_cdf: df must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (t * t + df);
    const double half_tail = regularized_incomplete_beta(x, df / 2.0, 0.5) / 2.0;
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw Error("student_t_two_sided_p: df must be positive");
    if (std::isinf(t)) return 0.0;
    if (t == 0.0) return 1.0;
    return regularized_incomplete_beta(df / (t * t + df), df / 2.0, 0.5);
}

double round_half_even(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double scaled = value * scale;
    const double floor_v = std::floor(scaled);
    const double frac = scaled - floor_v;
    double rounded;
    if (frac > 0.5) rounded = floor_v + 1.0;
    else if (frac < 0.5) rounded = floor_v;
    else rounded = (std::fmod(floor_v, 2.0) == 0.0) ? floor_v : floor_v + 1.0;
    return rounded / scale;
}

}  // namespace fewtrans
