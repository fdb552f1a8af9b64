#pragma once

// Independent brute-force implementations used as oracles. These stay
// deliberately dumb and separate from the library: statistics from their
// defining formulas with a numerically integrated t distribution, a
// from-scratch Adam, quadratic-time ranks.

#include <cstdint>
#include <vector>

namespace refimpl {

struct TOut {
    double t;
    double p;
    std::int64_t df;
};

double t_pdf(double x, double df);
/// upper tail P(T >= t) for t >= 0, adaptive Simpson on a compactified axis
double t_upper_tail(double t, double df);
double t_two_sided_p(double t, double df);

double mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

struct CiOut {
    double mean;
    double halfwidth;
};
CiOut mean_ci95(const std::vector<double>& v);

TOut paired_t_test(const std::vector<double>& a, const std::vector<double>& b);
double cohens_d_paired(const std::vector<double>& a, const std::vector<double>& b);

struct CorrOut {
    double r;
    double p;
};
CorrOut pearson(const std::vector<double>& x, const std::vector<double>& y);
/// ranks computed by counting comparisons (quadratic, tie-averaged)
CorrOut spearman(const std::vector<double>& x, const std::vector<double>& y);

/// chi-square statistic for uniformity over k bins
double chi_square_uniform(const std::vector<std::int64_t>& counts);

/// one Adam step written out longhand; mirrors the published update rule
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    std::int64_t t = 0;
    double step(double& param, double grad, double lr);
};

}  // namespace refimpl
