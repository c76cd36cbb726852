#include "pinnbc/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pinnbc/errors.hpp"

namespace pinnbc::fem {

namespace {

enum class Orbit { S3, S21, S111 };

struct OrbitEntry {
    Orbit kind;
    double a;
    double b;
    double weight;  // weight of each point in the orbit; all weights sum to 1/2
};

// Fully symmetric rules on the reference triangle (0,0), (1,0), (0,1), one table
// per exactness degree. Orbit parameters are barycentric coordinates. Degrees 3
// and 7 reuse the degree-4 and degree-8 rules, whose weights are all positive.
const std::vector<std::vector<OrbitEntry>> kTriangleTables = {
    // exact for total degree 1
    {
        {Orbit::S3, 0.0, 0.0, 0.5},
    },
    // exact for total degree 2
    {
        {Orbit::S21, 0.16666666666666666667, 0.0, 0.16666666666666666667},
    },
    // exact for total degree 3
    {
        {Orbit::S21, 0.44594849091596488632, 0.0, 0.11169079483900573285},
        {Orbit::S21, 0.09157621350977074346, 0.0, 0.054975871827660933819},
    },
    // exact for total degree 4
    {
        {Orbit::S21, 0.44594849091596488632, 0.0, 0.11169079483900573285},
        {Orbit::S21, 0.09157621350977074346, 0.0, 0.054975871827660933819},
    },
    // exact for total degree 5
    {
        {Orbit::S3, 0.0, 0.0, 0.1125},
        {Orbit::S21, 0.47014206410511508977, 0.0, 0.066197076394253090369},
        {Orbit::S21, 0.1012865073234563388, 0.0, 0.062969590272413576298},
    },
    // exact for total degree 6
    {
        {Orbit::S21, 0.24928674517091042129, 0.0, 0.058393137863189683013},
        {Orbit::S21, 0.06308901449150222834, 0.0, 0.02542245318510340846},
        {Orbit::S111, 0.053145049844816947353, 0.31035245103378440542, 0.041425537809186787597},
    },
    // exact for total degree 7
    {
        {Orbit::S3, 0.0, 0.0, 0.072157803838893584126},
        {Orbit::S21, 0.45929258829272315603, 0.0, 0.047545817133642312397},
        {Orbit::S21, 0.17056930775176020662, 0.0, 0.051608685267359125141},
        {Orbit::S21, 0.050547228317030975458, 0.0, 0.016229248811599040155},
        {Orbit::S111, 0.0083947774099576053372, 0.26311282963463811342, 0.013615157087217497132},
    },
    // exact for total degree 8
    {
        {Orbit::S3, 0.0, 0.0, 0.072157803838893584126},
        {Orbit::S21, 0.45929258829272315603, 0.0, 0.047545817133642312397},
        {Orbit::S21, 0.17056930775176020662, 0.0, 0.051608685267359125141},
        {Orbit::S21, 0.050547228317030975458, 0.0, 0.016229248811599040155},
        {Orbit::S111, 0.0083947774099576053372, 0.26311282963463811342, 0.013615157087217497132},
    },
    // exact for total degree 9
    {
        {Orbit::S3, 0.0, 0.0, 0.04856789814139941691},
        {Orbit::S21, 0.48968251919873762778, 0.0, 0.015667350113569535268},
        {Orbit::S21, 0.43708959149293663727, 0.0, 0.038913770502387139658},
        {Orbit::S21, 0.18820353561903273024, 0.0, 0.039823869463605126516},
        {Orbit::S21, 0.044729513394452709865, 0.0, 0.012788837829349015631},
        {Orbit::S111, 0.036838412054736283635, 0.22196298916076569568, 0.021641769688644688645},
    },
    // exact for total degree 10
    {
        {Orbit::S3, 0.0, 0.0, 0.045408995191376790048},
        {Orbit::S21, 0.48557763338365737737, 0.0, 0.018362978878233352359},
        {Orbit::S21, 0.1094815754850370548, 0.0, 0.022660529717763967391},
        {Orbit::S111, 0.14170721941487995476, 0.30793983876412095017, 0.036378958422710054302},
        {Orbit::S111, 0.025003534762686386074, 0.24667256063990269392, 0.014163621265528742418},
        {Orbit::S111, 0.0095408154002994575802, 0.066803251012200265774, 0.00471083348186641173},
    },
};

}  // namespace

QuadratureRule quadrature_for_order(int q) {
    if (q < 1 || q > 10) {
        throw ConfigError("triangle quadrature order " + std::to_string(q) + " unsupported (1..10)");
    }
    QuadratureRule rule;
    rule.order = q;
    auto add = [&](double l1, double l2, double l3, double w) {
        // barycentric (l1, l2, l3) with vertices (0,0), (1,0), (0,1)
        (void)l1;
        rule.points.push_back({l2, l3});
        rule.weights.push_back(w);
    };
    for (const OrbitEntry& e : kTriangleTables[q - 1]) {
        switch (e.kind) {
            case Orbit::S3:
                add(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, e.weight);
                break;
            case Orbit::S21: {
                const double a = e.a, c = 1.0 - 2.0 * a;
                add(a, a, c, e.weight);
                add(a, c, a, e.weight);
                add(c, a, a, e.weight);
                break;
            }
            case Orbit::S111: {
                const double a = e.a, b = e.b, c = 1.0 - a - b;
                add(a, b, c, e.weight);
                add(a, c, b, e.weight);
                add(b, a, c, e.weight);
                add(b, c, a, e.weight);
                add(c, a, b, e.weight);
                add(c, b, a, e.weight);
                break;
            }
        }
    }
    return rule;
}

QuadratureRule collapsed_gauss_rule(int q) {
    if (q < 1) throw ConfigError("quadrature order must be >= 1");
    // Duffy map of the square onto the triangle adds one degree in the collapsed
    // direction, so n Gauss points per direction with 2n - 1 >= q + 1 suffice.
    const int n = (q + 3) / 2;
    const GaussRule1D g = gauss_legendre(n);
    QuadratureRule rule;
    rule.order = q;
    for (int i = 0; i < n; ++i) {
        const double s = 0.5 * (g.points[i] + 1.0);
        for (int j = 0; j < n; ++j) {
            const double t = 0.5 * (g.points[j] + 1.0);
            rule.points.push_back({s, t * (1.0 - s)});
            rule.weights.push_back(0.25 * g.weights[i] * g.weights[j] * (1.0 - s));
        }
    }
    return rule;
}

QuadratureRule triangle_rule_at_least(int q) {
    return q <= 10 ? quadrature_for_order(q) : collapsed_gauss_rule(q);
}

GaussRule1D gauss_legendre(int n) {
    if (n < 1) throw ConfigError("Gauss rule needs at least one point");
    GaussRule1D rule;
    rule.points.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        if (n == 1) p0 = 1.0;
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        rule.points[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    std::reverse(rule.points.begin(), rule.points.end());
    std::reverse(rule.weights.begin(), rule.weights.end());
    return rule;
}

GaussRule1D gauss_for_order(int q) { return gauss_legendre(std::max(1, (q + 2) / 2)); }

}  // namespace pinnbc::fem
