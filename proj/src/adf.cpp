#include "pinnbc/adf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pinnbc/errors.hpp"

namespace pinnbc::adf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class T>
T segment_d(const Segment& s, const T& x, const T& y) {
    const Point a = s.a(), b = s.b();
    return ((x - a.x) * (b.y - a.y) - (y - a.y) * (b.x - a.x)) / s.length();
}

template <class T>
T segment_t(const Segment& s, const T& x, const T& y) {
    const Point c = s.center();
    const double half = 0.5 * s.length();
    const T dx = x - c.x;
    const T dy = y - c.y;
    return (half * half - (dx * dx + dy * dy)) / s.length();
}

template <class T>
T segment_phi(const Segment& s, const T& x, const T& y) {
    using std::sqrt;
    const T d = segment_d(s, x, y);
    const T t = segment_t(s, x, y);
    const T d2 = d * d;
    const T trim = (sqrt(t * t + d2 * d2) - t) * 0.5;
    return sqrt(d2 + trim * trim);
}

}  // namespace

Segment::Segment(Point a, Point b, int id) : a_(a), b_(b), id_(id), length_(norm(b - a)) {
    if (!(length_ > 0.0)) {
        throw ConfigError("degenerate segment: endpoints coincide");
    }
}

Point Segment::project(Point x) const {
    const Point ab = b_ - a_;
    const double tau = std::clamp(dot(x - a_, ab) / (length_ * length_), 0.0, 1.0);
    return a_ + tau * ab;
}

Jet2 Segment::project_x(const Jet2& x, const Jet2& y) const {
    const Point ab = b_ - a_;
    Jet2 tau = ((x - a_.x) * ab.x + (y - a_.y) * ab.y) / (length_ * length_);
    if (tau.v <= 0.0) return Jet2(a_.x);
    if (tau.v >= 1.0) return Jet2(b_.x);
    return a_.x + tau * ab.x;
}

Jet2 Segment::project_y(const Jet2& x, const Jet2& y) const {
    const Point ab = b_ - a_;
    Jet2 tau = ((x - a_.x) * ab.x + (y - a_.y) * ab.y) / (length_ * length_);
    if (tau.v <= 0.0) return Jet2(a_.y);
    if (tau.v >= 1.0) return Jet2(b_.y);
    return a_.y + tau * ab.y;
}

double Segment::distance(Point x) const { return norm(x - project(x)); }

double signed_distance(const Segment& seg, Point x) { return segment_d(seg, x.x, x.y); }
double trimming_function(const Segment& seg, Point x) { return segment_t(seg, x.x, x.y); }
double segment_adf(const Segment& seg, Point x) { return segment_phi(seg, x.x, x.y); }

Jet2 signed_distance(const Segment& seg, const Jet2& x, const Jet2& y) { return segment_d(seg, x, y); }
Jet2 trimming_function(const Segment& seg, const Jet2& x, const Jet2& y) { return segment_t(seg, x, y); }
Jet2 segment_adf(const Segment& seg, const Jet2& x, const Jet2& y) { return segment_phi(seg, x, y); }

// ---------------------------------------------------------------------------
// PolygonalBoundary

PolygonalBoundary PolygonalBoundary::with_data(std::vector<Segment> segments, std::vector<bool> dirichlet,
                                               const ScalarField& g) {
    PolygonalBoundary pb;
    pb.data.assign(segments.size(), g);
    pb.segments = std::move(segments);
    pb.dirichlet = std::move(dirichlet);
    pb.validate();
    return pb;
}

void PolygonalBoundary::validate() const {
    if (segments.size() != dirichlet.size() || segments.size() != data.size()) {
        throw ConfigError("polygonal boundary: segment, flag and data counts differ");
    }
    if (std::none_of(dirichlet.begin(), dirichlet.end(), [](bool b) { return b; })) {
        throw ConfigError("polygonal boundary: no Dirichlet segment");
    }
}

std::vector<int> PolygonalBoundary::dirichlet_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (dirichlet[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

double PolygonalBoundary::shortest_dirichlet_length() const {
    double best = std::numeric_limits<double>::infinity();
    for (int i : dirichlet_indices()) best = std::min(best, segments[i].length());
    return best;
}

std::vector<Point> PolygonalBoundary::dirichlet_vertices() const {
    std::vector<Point> out;
    auto add = [&](Point p) {
        for (const Point& q : out) {
            if (norm(p - q) < 1e-14) return;
        }
        out.push_back(p);
    };
    for (int i : dirichlet_indices()) {
        add(segments[i].a());
        add(segments[i].b());
    }
    return out;
}

int PolygonalBoundary::segment_containing(Point x, double tol) const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].distance(x) <= tol) return static_cast<int>(i);
    }
    return -1;
}

bool PolygonalBoundary::on_dirichlet(Point x, double tol) const {
    for (int i : dirichlet_indices()) {
        if (segments[i].distance(x) <= tol) return true;
    }
    return false;
}

bool PolygonalBoundary::on_boundary(Point x, double tol) const { return segment_containing(x, tol) >= 0; }

double PolygonalBoundary::segment_datum(int i, Point x) const { return data[i](segments[i].project(x)); }

Jet2 PolygonalBoundary::segment_datum(int i, const Jet2& x, const Jet2& y) const {
    const Segment& s = segments[i];
    return data[i].jet(s.project_x(x, y), s.project_y(x, y));
}

std::vector<Point> PolygonalBoundary::sample_dirichlet(int count) const {
    std::vector<Point> out;
    if (count <= 0) return out;
    const auto idx = dirichlet_indices();
    double total = 0.0;
    for (int i : idx) total += segments[i].length();
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        double s = (k + 0.5) * total / count;
        for (int i : idx) {
            const double len = segments[i].length();
            if (s <= len) {
                const double tau = s / len;
                out.push_back(segments[i].a() + tau * (segments[i].b() - segments[i].a()));
                break;
            }
            s -= len;
        }
    }
    return out;
}

PolygonalBoundary PolygonalBoundary::with_datum(const ScalarField& g) const {
    PolygonalBoundary pb = *this;
    pb.data.assign(segments.size(), g);
    return pb;
}

PolygonalBoundary parse_polygon(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<Segment> segs;
    std::vector<bool> flags;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
        std::istringstream ls(line);
        double xa, ya, xb, yb;
        int flag;
        if (!(ls >> xa)) continue;  // blank line
        if (!(ls >> ya >> xb >> yb >> flag) || (flag != 0 && flag != 1)) {
            throw ConfigError("polygon file line " + std::to_string(lineno) +
                              ": expected 'x_A y_A x_B y_B dirichlet_flag'");
        }
        segs.emplace_back(Point{xa, ya}, Point{xb, yb}, static_cast<int>(segs.size()));
        flags.push_back(flag == 1);
    }
    return PolygonalBoundary::with_data(std::move(segs), std::move(flags), ScalarField::constant(0.0));
}

PolygonalBoundary read_polygon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open polygon file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_polygon(buf.str());
}

void write_polygon(const PolygonalBoundary& boundary, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write polygon file " + path);
    out.precision(17);
    out << "# x_A y_A x_B y_B dirichlet_flag\n";
    for (std::size_t i = 0; i < boundary.segments.size(); ++i) {
        const auto& s = boundary.segments[i];
        out << s.a().x << ' ' << s.a().y << ' ' << s.b().x << ' ' << s.b().y << ' '
            << (boundary.dirichlet[i] ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Combination

Jet2 combine_product(std::span<const Jet2> phis) {
    Jet2 p(1.0);
    for (const Jet2& f : phis) p *= f;
    return p;
}

Jet2 combine_normalized(std::span<const Jet2> phis, int m) {
    if (m < 1) throw ConfigError("normalization order m must be >= 1");
    const std::size_t n = phis.size();
    if (n == 1) return phis[0];
    std::vector<Jet2> powered(n);
    for (std::size_t i = 0; i < n; ++i) powered[i] = m == 1 ? phis[i] : pow(phis[i], m);
    Jet2 sum(0.0);
    for (std::size_t k = 0; k < n; ++k) {
        Jet2 p(1.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != k) p *= powered[j];
        }
        sum += p;
    }
    const Jet2 numer = combine_product(phis);
    if (sum.v == 0.0) {
        // Two or more pieces vanish: the limit of the value is 0.
        return {0.0, {kNaN, kNaN}, {kNaN, kNaN, kNaN}};
    }
    if (m == 1) return numer / sum;
    if (m == 2) return numer / sqrt(sum);
    return numer / pow(sum, 1.0 / m);
}

double combine_normalized(std::span<const double> phis, int m) {
    if (m < 1) throw ConfigError("normalization order m must be >= 1");
    const std::size_t n = phis.size();
    if (n == 1) return phis[0];
    double sum = 0.0, numer = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        double p = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != k) p *= std::pow(phis[j], m);
        }
        sum += p;
        numer *= phis[k];
    }
    if (sum == 0.0) return 0.0;
    return numer / std::pow(sum, 1.0 / m);
}

// ---------------------------------------------------------------------------
// AdfField

AdfField::AdfField(const PolygonalBoundary& boundary, Mode mode) : mode_(mode) {
    boundary.validate();
    if (auto* n = std::get_if<Normalized>(&mode_); n && n->m < 1) {
        throw ConfigError("normalization order m must be >= 1");
    }
    for (int i : boundary.dirichlet_indices()) {
        const Segment s = boundary.segments[i];
        pieces_.push_back([s](const Jet2& x, const Jet2& y) { return segment_adf(s, x, y); });
    }
    vertices_ = boundary.dirichlet_vertices();
    exclusion_radius_ = 1e-2 * boundary.shortest_dirichlet_length();
}

AdfField::AdfField(std::vector<DistancePrimitive> pieces, Mode mode, std::vector<Point> vertices,
                   double exclusion_radius)
    : pieces_(std::move(pieces)), mode_(mode), vertices_(std::move(vertices)),
      exclusion_radius_(exclusion_radius) {
    if (pieces_.empty()) throw ConfigError("ADF needs at least one piece");
}

Jet2 AdfField::jet(const Jet2& x, const Jet2& y) const {
    std::vector<Jet2> phis;
    phis.reserve(pieces_.size());
    for (const auto& p : pieces_) phis.push_back(p(x, y));
    if (const auto* n = std::get_if<Normalized>(&mode_)) return combine_normalized(phis, n->m);
    return combine_product(phis);
}

Jet2 AdfField::jet(Point x) const { return jet(Jet2::variable_x(x.x), Jet2::variable_y(x.y)); }

double AdfField::value(Point x) const { return jet(Jet2(x.x), Jet2(x.y)).v; }

bool AdfField::near_vertex(Point x) const {
    return std::any_of(vertices_.begin(), vertices_.end(),
                       [&](Point v) { return norm(x - v) < exclusion_radius_; });
}

FieldSample AdfField::sample(Point x) const {
    const Jet2 j = jet(x);
    FieldSample s;
    s.value = j.v;
    s.gradient = j.g;
    s.laplacian = j.laplacian();
    if (j.v == 0.0 || !std::isfinite(j.g[0]) || !std::isfinite(j.g[1])) {
        s.gradient_available = false;
        s.laplacian_available = false;
        s.gradient = {kNaN, kNaN};
        s.laplacian = kNaN;
        return s;
    }
    if (std::holds_alternative<Normalized>(mode_) && near_vertex(x)) {
        s.laplacian_available = false;
        s.laplacian = kNaN;
    }
    return s;
}

FieldSample boundary_adf(const AdfField& field, Point x) { return field.sample(x); }

// ---------------------------------------------------------------------------
// Transfinite extension

TransfiniteExtension::TransfiniteExtension(PolygonalBoundary boundary, double vertex_tol)
    : boundary_(std::move(boundary)), vertex_tol_(vertex_tol) {
    boundary_.validate();
    active_ = boundary_.dirichlet_indices();
}

Jet2 TransfiniteExtension::blend(const Jet2& x, const Jet2& y) const {
    const std::size_t n = active_.size();
    std::vector<Jet2> phis(n);
    for (std::size_t i = 0; i < n; ++i) phis[i] = segment_adf(boundary_.segments[active_[i]], x, y);

    std::vector<Jet2> weights(n);
    Jet2 total(0.0);
    for (std::size_t k = 0; k < n; ++k) {
        Jet2 p(1.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != k) p *= phis[j];
        }
        weights[k] = p;
        total += p;
    }

    if (total.v == 0.0) {
        // Vertex shared by several Dirichlet segments: take the common datum.
        double first = 0.0;
        bool have = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (phis[i].v != 0.0) continue;
            const double gi = boundary_.segment_datum(active_[i], Point{x.v, y.v});
            if (!have) {
                first = gi;
                have = true;
            } else if (std::abs(gi - first) > vertex_tol_) {
                throw InconsistentBoundaryData("boundary data disagree at vertex (" + std::to_string(x.v) +
                                               ", " + std::to_string(y.v) + ")");
            }
        }
        return {first, {kNaN, kNaN}, {kNaN, kNaN, kNaN}};
    }

    Jet2 numer(0.0);
    for (std::size_t k = 0; k < n; ++k) {
        numer += weights[k] * boundary_.segment_datum(active_[k], x, y);
    }
    return numer / total;
}

double TransfiniteExtension::value(Point x) const { return blend(Jet2(x.x), Jet2(x.y)).v; }

Jet2 TransfiniteExtension::jet(Point x) const {
    return blend(Jet2::variable_x(x.x), Jet2::variable_y(x.y));
}

double transfinite_extension(const PolygonalBoundary& boundary, Point x) {
    return TransfiniteExtension(boundary).value(x);
}

// ---------------------------------------------------------------------------
// Quadrant oracle

FieldSample quadrant_reference(int m, Point p) {
    const double x = p.x, y = p.y;
    if (x == 0.0 && y == 0.0) throw DomainError("quadrant ADF is singular at the origin");
    if (!(x > 0.0 && y > 0.0)) throw DomainError("quadrant ADF oracle requires the open positive quadrant");
    FieldSample s;
    if (m == 1) {
        const double r = x + y;
        s.value = x * y / r;
        s.gradient = {y * y / (r * r), x * x / (r * r)};
        s.laplacian = -2.0 * (x * x + y * y) / (r * r * r);
    } else if (m == 2) {
        const double rho = std::hypot(x, y);
        const double r3 = rho * rho * rho;
        s.value = x * y / rho;
        s.gradient = {y * y * y / r3, x * x * x / r3};
        const double c = x / rho, sn = y / rho;
        s.laplacian = -3.0 * c * sn / rho;
    } else {
        throw ConfigError("quadrant oracle supports m = 1 or 2");
    }
    return s;
}

}  // namespace pinnbc::adf
