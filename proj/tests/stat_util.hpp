#pragma once

// Test-side statistics helpers: regularized incomplete gamma and chi-square
// goodness-of-fit p-values. Independent of the library under test.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace duet::testing {

// Lower regularized incomplete gamma P(s,x) by series expansion (x < s+1).
inline double gamma_p_series(double s, double x) {
    double ap = s;
    double sum = 1.0 / s;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
}

// Upper regularized incomplete gamma Q(s,x) by continued fraction (x >= s+1).
inline double gamma_q_cf(double s, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - s;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + s * std::log(x) - std::lgamma(s)) * h;
}

inline double gamma_q(double s, double x) {
    if (x < 0.0 || s <= 0.0) throw std::invalid_argument("gamma_q domain");
    if (x == 0.0) return 1.0;
    return (x < s + 1.0) ? 1.0 - gamma_p_series(s, x) : gamma_q_cf(s, x);
}

/// Upper-tail p-value of a chi-square statistic.
inline double chi2_pvalue(double stat, int df) {
    return gamma_q(0.5 * df, 0.5 * stat);
}

/// Goodness-of-fit p-value of observed counts against given probabilities.
/// Cells with zero probability must have zero counts.
inline double chi2_gof_pvalue(const std::vector<long>& counts,
                              const std::vector<double>& probs) {
    if (counts.size() != probs.size()) throw std::invalid_argument("chi2: size mismatch");
    long n = 0;
    for (long c : counts) n += c;
    double stat = 0.0;
    int df = -1;
    for (size_t i = 0; i < counts.size(); ++i) {
        if (probs[i] <= 0.0) {
            if (counts[i] != 0) return 0.0;
            continue;
        }
        const double expected = probs[i] * static_cast<double>(n);
        const double diff = static_cast<double>(counts[i]) - expected;
        stat += diff * diff / expected;
        ++df;
    }
    if (df <= 0) return 1.0;
    return chi2_pvalue(stat, df);
}

}  // namespace duet::testing
