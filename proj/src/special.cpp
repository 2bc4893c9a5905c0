#include "pcmf/special.hpp"

#include <cmath>
#include <limits>

#include "pcmf/common.hpp"

namespace pcmf {

double digamma(double x) {
    if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    while (x < 10.0) {  // psi(x) = psi(x+1) - 1/x
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum B_2k / (2k x^2k)
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    double series = inv2 * (1.0 / 12.0 +
                    inv2 * (-1.0 / 120.0 +
                    inv2 * (1.0 / 252.0 +
                    inv2 * (-1.0 / 240.0 +
                    inv2 * (1.0 / 132.0 +
                    inv2 * (-691.0 / 32760.0 +
                    inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
    if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    while (x < 10.0) {  // psi'(x) = psi'(x+1) + 1/x^2
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    double series = inv * inv2 * (1.0 / 6.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (1.0 / 42.0 +
                    inv2 * (-1.0 / 30.0 +
                    inv2 * (5.0 / 66.0 +
                    inv2 * (-691.0 / 2730.0 +
                    inv2 * (7.0 / 6.0)))))));
    return acc + inv + 0.5 * inv2 + series;
}

double inv_digamma(double y) {
    if (std::isnan(y)) return std::numeric_limits<double>::quiet_NaN();
    double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + euler_gamma);
    if (!(x > 0.0)) x = 1e-300;
    for (int it = 0; it < 10; ++it) {
        const double f = digamma(x) - y;
        if (std::fabs(f) <= 1e-12) break;
        const double step = f / trigamma(x);
        double next = x - step;
        if (!(next > 0.0)) next = x * 0.5;  // keep the iterate in the domain
        x = next;
    }
    return x;
}

double log_gamma(double x) {
    require_numeric(x > 0.0, "log_gamma requires a positive argument");
#if defined(__GLIBC__) || defined(__linux__)
    int sign = 0;
    return ::lgamma_r(x, &sign);
#else
    return std::lgamma(x);
#endif
}

double log_factorial(double x) {
    if (x <= 1.0) return 0.0;
    return log_gamma(x + 1.0);
}

}  // namespace pcmf
