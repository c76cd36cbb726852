#include "pinnbc/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "pinnbc/errors.hpp"

namespace pinnbc::fem {

double TriMesh::area(std::size_t e) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

double TriMesh::diameter(std::size_t e) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    return std::max({norm(b - a), norm(c - b), norm(a - c)});
}

Point TriMesh::barycenter(std::size_t e) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
}

void TriMesh::update_meshsize() {
    meshsize = 0.0;
    for (std::size_t e = 0; e < elements.size(); ++e) meshsize = std::max(meshsize, diameter(e));
}

Point TriMesh::to_reference(std::size_t e, Point x) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    const double j00 = b.x - a.x, j01 = c.x - a.x, j10 = b.y - a.y, j11 = c.y - a.y;
    const double det = j00 * j11 - j01 * j10;
    const double rx = x.x - a.x, ry = x.y - a.y;
    return {(j11 * rx - j01 * ry) / det, (-j10 * rx + j00 * ry) / det};
}

Point TriMesh::from_reference(std::size_t e, Point r) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    return {a.x + r.x * (b.x - a.x) + r.y * (c.x - a.x), a.y + r.x * (b.y - a.y) + r.y * (c.y - a.y)};
}

std::array<double, 4> TriMesh::inverse_jacobian_transpose(std::size_t e) const {
    const auto& t = elements[e];
    const Point a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
    const double j00 = b.x - a.x, j01 = c.x - a.x, j10 = b.y - a.y, j11 = c.y - a.y;
    const double det = j00 * j11 - j01 * j10;
    // J^{-1} = [j11 -j01; -j10 j00] / det, transposed
    return {j11 / det, -j10 / det, -j01 / det, j00 / det};
}

// ---------------------------------------------------------------------------
// Domains

Domain Domain::parse(const std::string& name) {
    if (name == "unit_square") return unit_square();
    if (name == "l_shape") return l_shape();
    if (name == "square_with_hole") return square_with_hole();
    if (name == "rect") return rect(0.0, 1.0, 0.0, 1.0);
    throw ConfigError("unsupported domain '" + name + "'");
}

std::string Domain::name() const {
    switch (kind) {
        case DomainKind::UnitSquare: return "unit_square";
        case DomainKind::LShape: return "l_shape";
        case DomainKind::SquareWithHole: return "square_with_hole";
        case DomainKind::Rect: return "rect";
    }
    return "unknown";
}

namespace {

std::vector<adf::Segment> closed_chain(const std::vector<Point>& pts, int first_id) {
    std::vector<adf::Segment> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out.emplace_back(pts[i], pts[(i + 1) % pts.size()], first_id + static_cast<int>(i));
    }
    return out;
}

struct GridSpec {
    double x0, y0, cell;
    int nx, ny;
};

GridSpec level0_grid(const Domain& d) {
    switch (d.kind) {
        case DomainKind::UnitSquare: return {0.0, 0.0, 1.0, 1, 1};
        case DomainKind::LShape: return {-1.0, -1.0, 1.0, 2, 2};
        case DomainKind::SquareWithHole: return {-1.0, -1.0, 0.5, 4, 4};
        case DomainKind::Rect: break;
    }
    // Rect: a single cell per direction; non-square cells are fine for the
    // space-time domain.
    return {d.x0, d.y0, 0.0, 1, 1};
}

}  // namespace

std::vector<adf::Segment> Domain::segments() const {
    switch (kind) {
        case DomainKind::UnitSquare:
            return closed_chain({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, 0);
        case DomainKind::LShape:
            return closed_chain({{0, -1}, {1, -1}, {1, 1}, {-1, 1}, {-1, 0}, {0, 0}}, 0);
        case DomainKind::SquareWithHole: {
            auto outer = closed_chain({{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}, 0);
            auto hole = closed_chain({{0, 0}, {0, 0.5}, {0.5, 0.5}, {0.5, 0}}, 4);
            outer.insert(outer.end(), hole.begin(), hole.end());
            return outer;
        }
        case DomainKind::Rect:
            return closed_chain({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, 0);
    }
    return {};
}

bool Domain::contains(Point p) const {
    switch (kind) {
        case DomainKind::UnitSquare: return p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1;
        case DomainKind::LShape:
            return p.x >= -1 && p.x <= 1 && p.y >= -1 && p.y <= 1 && !(p.x < 0 && p.y < 0);
        case DomainKind::SquareWithHole:
            return p.x >= -1 && p.x <= 1 && p.y >= -1 && p.y <= 1 &&
                   !(p.x > 0 && p.x < 0.5 && p.y > 0 && p.y < 0.5);
        case DomainKind::Rect: return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
    }
    return false;
}

std::array<double, 4> Domain::bounding_box() const {
    switch (kind) {
        case DomainKind::UnitSquare: return {0, 1, 0, 1};
        case DomainKind::LShape:
        case DomainKind::SquareWithHole: return {-1, 1, -1, 1};
        case DomainKind::Rect: return {x0, x1, y0, y1};
    }
    return {0, 1, 0, 1};
}

// ---------------------------------------------------------------------------
// Construction

void tag_boundary_edges(TriMesh& mesh, const std::vector<adf::Segment>& segments) {
    std::map<std::pair<int, int>, int> count;
    std::map<std::pair<int, int>, std::pair<int, int>> oriented;
    for (const auto& t : mesh.elements) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k], b = t[(k + 1) % 3];
            const auto key = std::minmax(a, b);
            ++count[key];
            oriented[key] = {a, b};
        }
    }
    mesh.boundary_edges.clear();
    for (const auto& [key, n] : count) {
        if (n != 1) continue;
        const auto [a, b] = oriented[key];
        const Point pa = mesh.vertices[a], pb = mesh.vertices[b];
        int seg = -1;
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const double scale = std::max(1.0, segments[s].length());
            if (segments[s].distance(pa) < 1e-12 * scale && segments[s].distance(pb) < 1e-12 * scale) {
                seg = static_cast<int>(s);
                break;
            }
        }
        if (seg < 0) throw DomainError("boundary edge does not lie on any domain segment");
        mesh.boundary_edges.push_back({a, b, seg});
    }
}

TriMesh generate_mesh(const Domain& domain, int level) {
    if (level < 0) throw ConfigError("mesh level must be >= 0");
    GridSpec g = level0_grid(domain);
    TriMesh mesh;
    const bool rect = domain.kind == DomainKind::Rect;
    const double cx = rect ? (domain.x1 - domain.x0) : g.cell;
    const double cy = rect ? (domain.y1 - domain.y0) : g.cell;

    std::map<std::pair<int, int>, int> vid;
    auto vertex = [&](int i, int j) {
        const auto key = std::make_pair(i, j);
        if (auto it = vid.find(key); it != vid.end()) return it->second;
        const int id = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back({g.x0 + i * cx, g.y0 + j * cy});
        vid[key] = id;
        return id;
    };
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const Point center{g.x0 + (i + 0.5) * cx, g.y0 + (j + 0.5) * cy};
            if (!domain.contains(center)) continue;
            const int v00 = vertex(i, j), v10 = vertex(i + 1, j);
            const int v11 = vertex(i + 1, j + 1), v01 = vertex(i, j + 1);
            mesh.elements.push_back({v00, v10, v11});
            mesh.elements.push_back({v00, v11, v01});
        }
    }
    tag_boundary_edges(mesh, domain.segments());
    mesh.update_meshsize();
    for (int l = 0; l < level; ++l) mesh = red_refine(mesh);
    return mesh;
}

TriMesh red_refine(const TriMesh& coarse, std::vector<int>* parent) {
    TriMesh fine;
    fine.vertices = coarse.vertices;
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
        const auto key = std::minmax(a, b);
        if (auto it = mid.find(key); it != mid.end()) return it->second;
        const int id = static_cast<int>(fine.vertices.size());
        const Point pa = coarse.vertices[key.first], pb = coarse.vertices[key.second];
        fine.vertices.push_back(0.5 * (pa + pb));
        mid[key] = id;
        return id;
    };
    fine.elements.reserve(4 * coarse.elements.size());
    if (parent) {
        parent->clear();
        parent->reserve(4 * coarse.elements.size());
    }
    for (std::size_t e = 0; e < coarse.elements.size(); ++e) {
        const auto [v0, v1, v2] = coarse.elements[e];
        const int m01 = midpoint(v0, v1), m12 = midpoint(v1, v2), m20 = midpoint(v2, v0);
        fine.elements.push_back({v0, m01, m20});
        fine.elements.push_back({m01, v1, m12});
        fine.elements.push_back({m20, m12, v2});
        fine.elements.push_back({m01, m12, m20});
        if (parent) parent->insert(parent->end(), 4, static_cast<int>(e));
    }
    for (const BoundaryEdge& be : coarse.boundary_edges) {
        const int m = midpoint(be.v0, be.v1);
        fine.boundary_edges.push_back({be.v0, m, be.segment});
        fine.boundary_edges.push_back({m, be.v1, be.segment});
    }
    fine.update_meshsize();
    return fine;
}

NestedMeshPair refine_to_pair(const TriMesh& coarse, int refinements) {
    if (refinements < 1) throw ConfigError("nested pair needs at least one refinement");
    NestedMeshPair pair;
    pair.coarse = coarse;
    pair.refinements = refinements;
    std::vector<int> step;
    pair.fine = red_refine(coarse, &pair.parent);
    for (int r = 1; r < refinements; ++r) {
        TriMesh next = red_refine(pair.fine, &step);
        for (int& p : step) p = pair.parent[p];
        pair.parent = std::move(step);
        pair.fine = std::move(next);
    }
    return pair;
}

// ---------------------------------------------------------------------------
// IO

TriMesh read_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mesh file " + path);
    TriMesh mesh;
    std::size_t nv = 0, ne = 0;
    if (!(in >> nv >> ne)) throw ConfigError("mesh file " + path + ": missing header 'nv ne'");
    mesh.vertices.resize(nv);
    for (auto& v : mesh.vertices) {
        if (!(in >> v.x >> v.y)) throw ConfigError("mesh file " + path + ": truncated vertex block");
    }
    mesh.elements.resize(ne);
    for (auto& t : mesh.elements) {
        if (!(in >> t[0] >> t[1] >> t[2])) throw ConfigError("mesh file " + path + ": truncated element block");
        for (int k : t) {
            if (k < 0 || static_cast<std::size_t>(k) >= nv) throw ConfigError("mesh file: vertex index out of range");
        }
    }
    BoundaryEdge be;
    while (in >> be.v0 >> be.v1 >> be.segment) mesh.boundary_edges.push_back(be);
    for (std::size_t e = 0; e < ne; ++e) {
        if (mesh.area(e) <= 0.0) throw ConfigError("mesh file: element is not counter-clockwise");
    }
    mesh.update_meshsize();
    return mesh;
}

void write_mesh(const TriMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write mesh file " + path);
    out.precision(17);
    out << mesh.vertices.size() << ' ' << mesh.elements.size() << '\n';
    for (const Point& v : mesh.vertices) out << v.x << ' ' << v.y << '\n';
    for (const auto& t : mesh.elements) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    for (const auto& be : mesh.boundary_edges) out << be.v0 << ' ' << be.v1 << ' ' << be.segment << '\n';
}

// ---------------------------------------------------------------------------
// PointLocator

PointLocator::PointLocator(const TriMesh& mesh, double tolerance) : mesh_(&mesh), tol_(tolerance) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Point& v : mesh.vertices) {
        xmin = std::min(xmin, v.x);
        xmax = std::max(xmax, v.x);
        ymin = std::min(ymin, v.y);
        ymax = std::max(ymax, v.y);
    }
    const int n = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.elements.size()) / 2.0)));
    nx_ = ny_ = n;
    xmin_ = xmin;
    ymin_ = ymin;
    dx_ = std::max((xmax - xmin) / n, 1e-300);
    dy_ = std::max((ymax - ymin) / n, 1e-300);
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        double bx0 = 1e300, bx1 = -1e300, by0 = 1e300, by1 = -1e300;
        for (int k : mesh.elements[e]) {
            bx0 = std::min(bx0, mesh.vertices[k].x);
            bx1 = std::max(bx1, mesh.vertices[k].x);
            by0 = std::min(by0, mesh.vertices[k].y);
            by1 = std::max(by1, mesh.vertices[k].y);
        }
        const int i0 = clampi(static_cast<int>(std::floor((bx0 - xmin_) / dx_)) - 0, nx_);
        const int i1 = clampi(static_cast<int>(std::floor((bx1 - xmin_) / dx_)), nx_);
        const int j0 = clampi(static_cast<int>(std::floor((by0 - ymin_) / dy_)), ny_);
        const int j1 = clampi(static_cast<int>(std::floor((by1 - ymin_) / dy_)), ny_);
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(e));
        }
    }
}

std::optional<std::size_t> PointLocator::locate(Point x) const {
    const int i = static_cast<int>(std::floor((x.x - xmin_) / dx_));
    const int j = static_cast<int>(std::floor((x.y - ymin_) / dy_));
    std::optional<std::size_t> best;
    double best_violation = 1e300;
    for (int dj = -1; dj <= 1; ++dj) {
        for (int di = -1; di <= 1; ++di) {
            const int ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= nx_ || jj >= ny_) continue;
            for (int e : buckets_[static_cast<std::size_t>(jj) * nx_ + ii]) {
                const Point r = mesh_->to_reference(e, x);
                const double violation = std::max({-r.x, -r.y, r.x + r.y - 1.0});
                if (violation <= 0.0) return static_cast<std::size_t>(e);
                if (violation < best_violation) {
                    best_violation = violation;
                    best = static_cast<std::size_t>(e);
                }
            }
        }
    }
    if (best && best_violation <= tol_) return best;
    return std::nullopt;
}

}  // namespace pinnbc::fem
