#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace phylokit::stats {

double mean(std::span<const double> x);
double variance(std::span<const double> x);  // unbiased

// Linear-interpolation (type 7) quantile.
double quantile(std::vector<double> x, double p);
double quantile_sorted(std::span<const double> sorted, double p);

double normal_logpdf(double x, double mu, double sd);

// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
// Asymptotic p-value with Stephens' small-sample correction.
double ks_pvalue(double d, std::size_t n);
double ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);

double chi_square_pvalue(double statistic, double dof);
// Pearson goodness-of-fit p-value of bin counts against a uniform expectation.
double uniformity_pvalue(std::span<const std::size_t> counts);

}  // namespace phylokit::stats
