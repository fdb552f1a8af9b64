#pragma once

#include <cstdint>
#include <vector>

#include "fewtrans/errors.hpp"

namespace fewtrans {

/// Task accuracies plus an optional pairing key (task indices) that paired
/// statistics validate before differencing.
struct AccuracySeries {
    std::vector<double> values;
    std::vector<std::int64_t> pairing_key;
};

void validate_paired(const AccuracySeries& a, const AccuracySeries& b);

struct MeanCi {
    double mean = 0.0;
    double halfwidth = 0.0;  // 1.96 * s / sqrt(n), sample std
    std::size_t n = 0;
};

MeanCi mean_ci95(const std::vector<double>& values);

struct PairedTest {
    double t = 0.0;
    double p = 1.0;  // two-sided
    std::int64_t df = 0;
    bool degenerate = false;  // zero-variance differences
};

/// t = mean(a-b) / (s_d / sqrt(n)). Identical pairs give p = 1; constant
/// nonzero differences give t = +-inf with p = 0.
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Paired effect size mean(a-b) / s_(a-b); +-inf on zero-variance nonzero
/// differences, 0 when the differences vanish identically.
double cohens_d_paired(const std::vector<double>& a, const std::vector<double>& b);

struct Correlation {
    double r = 0.0;
    double p = 1.0;
    std::size_t n = 0;
};

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Pearson on mid-ranks; ties share the average rank.
Correlation spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Continued-fraction evaluation (modified Lentz), accurate to ~1e-15.
double regularized_incomplete_beta(double x, double a, double b);
double student_t_cdf(double t, double df);
/// 2 * (1 - cdf(|t|))
double student_t_two_sided_p(double t, double df);

/// Banker's rounding to the given number of decimals (report emission).
double round_half_even(double value, int decimals);

}  // namespace fewtrans
