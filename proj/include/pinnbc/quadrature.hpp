#pragma once

#include <vector>

#include "pinnbc/jet.hpp"

namespace pinnbc::fem {

/// Rule on the reference triangle (0,0), (1,0), (0,1); weights sum to 1/2.
struct QuadratureRule {
    std::vector<Point> points;
    std::vector<double> weights;
    int order = 0;

    std::size_t size() const { return points.size(); }
};

/// Symmetric rule exact for total degree <= q, 1 <= q <= 10. Positive weights.
QuadratureRule quadrature_for_order(int q);

/// Tensor Gauss rule collapsed onto the triangle; any order, not symmetric.
QuadratureRule collapsed_gauss_rule(int q);

/// Symmetric table when available, collapsed Gauss beyond degree 10.
QuadratureRule triangle_rule_at_least(int q);

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule1D {
    std::vector<double> points;
    std::vector<double> weights;
};

GaussRule1D gauss_legendre(int n);
/// Fewest Gauss points exact for polynomials of degree q.
GaussRule1D gauss_for_order(int q);

}  // namespace pinnbc::fem
