#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pinnbc/jet.hpp"

namespace pinnbc::adf {

/// Straight boundary piece from `a` to `b`. Construction rejects L = 0.
class Segment {
public:
    Segment(Point a, Point b, int id = 0);

    Point a() const { return a_; }
    Point b() const { return b_; }
    int id() const { return id_; }
    double length() const { return length_; }
    Point center() const { return 0.5 * (a_ + b_); }

    /// Orthogonal projection clamped to the segment.
    Point project(Point x) const;
    Jet2 project_x(const Jet2& x, const Jet2& y) const;
    Jet2 project_y(const Jet2& x, const Jet2& y) const;

    /// Distance to the segment itself (not the ADF), used by geometric tests.
    double distance(Point x) const;

private:
    Point a_;
    Point b_;
    int id_;
    double length_;
};

double signed_distance(const Segment& seg, Point x);
double trimming_function(const Segment& seg, Point x);
double segment_adf(const Segment& seg, Point x);

Jet2 signed_distance(const Segment& seg, const Jet2& x, const Jet2& y);
Jet2 trimming_function(const Segment& seg, const Jet2& x, const Jet2& y);
Jet2 segment_adf(const Segment& seg, const Jet2& x, const Jet2& y);

/// Chain of segments with a Dirichlet flag and boundary datum per segment.
///
/// `data[i]` is the Dirichlet datum g; the per-segment extension g_i is g
/// evaluated at the clamped projection onto segment i. Neumann segments are
/// carried for meshing and tagging but never contribute to ADFs.
struct PolygonalBoundary {
    std::vector<Segment> segments;
    std::vector<bool> dirichlet;
    std::vector<ScalarField> data;

    /// Same datum on every segment. Throws ConfigError if no segment is Dirichlet.
    static PolygonalBoundary with_data(std::vector<Segment> segments, std::vector<bool> dirichlet,
                                       const ScalarField& g);

    void validate() const;
    std::vector<int> dirichlet_indices() const;
    double shortest_dirichlet_length() const;
    std::vector<Point> dirichlet_vertices() const;

    /// True when x lies on a Dirichlet segment within `tol`.
    bool on_dirichlet(Point x, double tol = 1e-12) const;
    /// True when x lies on any segment within `tol`.
    bool on_boundary(Point x, double tol = 1e-12) const;
    /// Index of the segment containing x within `tol`, or -1.
    int segment_containing(Point x, double tol = 1e-12) const;

    /// g_i(x): the datum of segment i at the clamped projection of x.
    double segment_datum(int i, Point x) const;
    Jet2 segment_datum(int i, const Jet2& x, const Jet2& y) const;

    /// Equal spacing in arc length over the Dirichlet segments (endpoints excluded).
    std::vector<Point> sample_dirichlet(int count) const;

    /// Same geometry and flags with a different datum.
    PolygonalBoundary with_datum(const ScalarField& g) const;
};

/// Reads "x_A y_A x_B y_B dirichlet_flag" lines; '#' starts a comment.
/// Every segment gets a zero datum; attach data with `with_datum`.
PolygonalBoundary read_polygon(const std::string& path);
PolygonalBoundary parse_polygon(const std::string& text);
void write_polygon(const PolygonalBoundary& boundary, const std::string& path);

/// Value, gradient and (optionally) Laplacian of a scalar field at a point.
struct FieldSample {
    double value = 0.0;
    std::array<double, 2> gradient{0.0, 0.0};
    double laplacian = 0.0;
    bool gradient_available = true;
    bool laplacian_available = true;
};

struct Normalized {
    int m = 1;
};
struct Product {};

/// A distance-like primitive: a Jet2 function of (x, y) vanishing on its piece.
using DistancePrimitive = std::function<Jet2(const Jet2&, const Jet2&)>;

/// ADF to the Dirichlet part of a boundary, combined from per-piece ADFs.
///
/// Normalized{m} uses (sum phi_i^-m)^(-1/m), evaluated in the multiplied-through
/// form prod(phi) / (sum_k prod_{j!=k} phi_j^m)^(1/m) so points on the boundary
/// give exactly 0. Product uses prod(phi_i).
class AdfField {
public:
    using Mode = std::variant<Normalized, Product>;

    AdfField(const PolygonalBoundary& boundary, Mode mode);
    /// Custom primitives (e.g. exact half-line distances) with explicit vertices
    /// that define the Laplacian exclusion zone.
    AdfField(std::vector<DistancePrimitive> pieces, Mode mode, std::vector<Point> vertices,
             double exclusion_radius);

    const Mode& mode() const { return mode_; }
    double exclusion_radius() const { return exclusion_radius_; }
    void set_exclusion_radius(double r) { exclusion_radius_ = r; }
    std::span<const Point> vertices() const { return vertices_; }

    double value(Point x) const;
    Jet2 jet(Point x) const;
    Jet2 jet(const Jet2& x, const Jet2& y) const;

    /// Derivative availability follows the rules for boundary points (none) and
    /// vertex neighbourhoods in Normalized mode (no Laplacian).
    FieldSample sample(Point x) const;

    bool near_vertex(Point x) const;

private:
    std::vector<DistancePrimitive> pieces_;
    Mode mode_;
    std::vector<Point> vertices_;
    double exclusion_radius_ = 0.0;
};

/// Combination formulas on precomputed per-piece values.
Jet2 combine_normalized(std::span<const Jet2> phis, int m);
Jet2 combine_product(std::span<const Jet2> phis);
double combine_normalized(std::span<const double> phis, int m);

FieldSample boundary_adf(const AdfField& field, Point x);

/// Transfinite blend of per-segment data, exact on every Dirichlet segment.
///
/// At a vertex where two or more segment ADFs vanish the weights are 0/0; the
/// common limit is returned when the incident data agree within `vertex_tol`,
/// otherwise InconsistentBoundaryData is thrown.
class TransfiniteExtension {
public:
    explicit TransfiniteExtension(PolygonalBoundary boundary, double vertex_tol = 1e-10);

    double value(Point x) const;
    /// Derivatives are meaningful only where no segment ADF vanishes.
    Jet2 jet(Point x) const;

    const PolygonalBoundary& boundary() const { return boundary_; }

private:
    Jet2 blend(const Jet2& x, const Jet2& y) const;
    PolygonalBoundary boundary_;
    std::vector<int> active_;
    double vertex_tol_;
};

double transfinite_extension(const PolygonalBoundary& boundary, Point x);

/// Closed forms for the quadrant fixture phi_1 = x, phi_2 = y.
/// Throws DomainError at the origin or outside the open quadrant.
FieldSample quadrant_reference(int m, Point x);

}  // namespace pinnbc::adf
