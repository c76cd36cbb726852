#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pinnbc/adf.hpp"
#include "pinnbc/jet.hpp"

namespace pinnbc::fem {

struct BoundaryEdge {
    int v0 = 0;
    int v1 = 0;
    int segment = -1;  // index into the domain polygon
};

/// Conforming triangulation with counter-clockwise elements.
struct TriMesh {
    std::vector<Point> vertices;
    std::vector<std::array<int, 3>> elements;
    std::vector<BoundaryEdge> boundary_edges;
    double meshsize = 0.0;

    std::size_t num_elements() const { return elements.size(); }
    std::size_t num_vertices() const { return vertices.size(); }
    double area(std::size_t e) const;
    double diameter(std::size_t e) const;
    Point barycenter(std::size_t e) const;
    void update_meshsize();

    /// Reference coordinates (xi, eta) of x in element e.
    Point to_reference(std::size_t e, Point x) const;
    Point from_reference(std::size_t e, Point ref) const;
    /// Inverse-transpose Jacobian rows: grad_x = J^{-T} grad_ref.
    std::array<double, 4> inverse_jacobian_transpose(std::size_t e) const;
};

enum class DomainKind { UnitSquare, LShape, SquareWithHole, Rect };

/// Polygonal domain with a fixed segment numbering used for boundary tags.
struct Domain {
    DomainKind kind = DomainKind::UnitSquare;
    double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;  // Rect extents

    static Domain unit_square() { return {DomainKind::UnitSquare}; }
    static Domain l_shape() { return {DomainKind::LShape}; }
    static Domain square_with_hole() { return {DomainKind::SquareWithHole}; }
    static Domain rect(double x0, double x1, double y0, double y1) {
        return {DomainKind::Rect, x0, x1, y0, y1};
    }
    /// Accepts unit_square, l_shape, square_with_hole, rect. Throws ConfigError.
    static Domain parse(const std::string& name);
    std::string name() const;

    /// Boundary segments, outer boundary counter-clockwise, hole clockwise.
    std::vector<adf::Segment> segments() const;
    bool contains(Point x) const;
    std::array<double, 4> bounding_box() const;  // xmin, xmax, ymin, ymax
};

/// Structured triangulation: level 0 is a uniform square grid over the domain
/// (1, 2 and 4 cells per side for the square, L-shape and holed square), each
/// square split along its rising diagonal; every level is one red refinement.
TriMesh generate_mesh(const Domain& domain, int level);

/// Uniform red refinement (each triangle into four). `parent[e_fine]` receives
/// the coarse element index when requested.
TriMesh red_refine(const TriMesh& coarse, std::vector<int>* parent = nullptr);

/// Coarse interpolation mesh T_H and nested test mesh T_h.
struct NestedMeshPair {
    TriMesh coarse;
    TriMesh fine;
    std::vector<int> parent;  // fine element -> coarse element
    int refinements = 1;
};

NestedMeshPair refine_to_pair(const TriMesh& coarse, int refinements = 1);

/// Tags boundary edges (edges with one incident element) by the polygon segment
/// containing them. Throws DomainError if an edge lies on no segment.
void tag_boundary_edges(TriMesh& mesh, const std::vector<adf::Segment>& segments);

/// Text format:
///   nv ne
///   nv lines "x y"
///   ne lines "i j k"     (0-based, counter-clockwise)
///   any number of lines "i j segment_id" for boundary edges
TriMesh read_mesh(const std::string& path);
void write_mesh(const TriMesh& mesh, const std::string& path);

/// Bucket grid for point-in-element queries.
class PointLocator {
public:
    explicit PointLocator(const TriMesh& mesh, double tolerance = 1e-12);
    /// Element containing x, or nullopt.
    std::optional<std::size_t> locate(Point x) const;

private:
    const TriMesh* mesh_;
    double tol_;
    double xmin_, ymin_, dx_, dy_;
    int nx_, ny_;
    std::vector<std::vector<int>> buckets_;
};

}  // namespace pinnbc::fem
