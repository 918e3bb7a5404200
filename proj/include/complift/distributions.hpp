#pragma once

// Ground-truth 2D distributions for the synthetic composition benchmark, their
// membership rules, and the nine product / mixture / negation scenarios.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "complift/error.hpp"
#include "complift/rng.hpp"

namespace complift::eval {

using point = Eigen::Vector2d;

struct rect {
    double x0, x1, y0, y1;
    bool contains(const point& p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }
    double area() const { return (x1 - x0) * (y1 - y0); }
};

// Equal-weight isotropic Gaussians; member iff within 3 sigma of a center.
struct gaussian_mixture {
    std::vector<point> centers;
    double sigma = 1.0;
};

// Uniform over the union of `include` minus the union of `exclude`.
struct uniform_region {
    std::vector<rect> include;
    std::vector<rect> exclude;
};

// Uniform on circles of `radius`; member iff the distance to some center is
// within radius +- band.
struct circles {
    std::vector<point> centers;
    double radius = 1.0;
    double band = 0.1;
};

// Point masses; member iff within `tolerance` of one.
struct point_set {
    std::vector<point> points;
    double tolerance = 0.1;
};

struct empty_set {};

using distribution_spec = std::variant<gaussian_mixture, uniform_region, circles, point_set, empty_set>;

inline bool is_empty(const distribution_spec& d) { return std::holds_alternative<empty_set>(d); }

inline void validate(const distribution_spec& d) {
    std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, gaussian_mixture>) {
                if (s.centers.empty() || !(s.sigma > 0.0)) throw config_error("gaussian mixture needs centers and sigma > 0");
            } else if constexpr (std::is_same_v<T, uniform_region>) {
                if (s.include.empty()) throw config_error("uniform region needs at least one rectangle");
            } else if constexpr (std::is_same_v<T, circles>) {
                if (s.centers.empty() || !(s.radius > 0.0)) throw config_error("circles need centers and radius > 0");
            } else if constexpr (std::is_same_v<T, point_set>) {
                if (s.points.empty()) throw config_error("point set needs points");
            }
        },
        d);
}

inline bool member(const distribution_spec& d, const point& p) {
    return std::visit(
        [&p](const auto& s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, gaussian_mixture>) {
                for (const auto& c : s.centers)
                    if ((p - c).norm() <= 3.0 * s.sigma) return true;
                return false;
            } else if constexpr (std::is_same_v<T, uniform_region>) {
                for (const auto& r : s.exclude)
                    if (r.contains(p)) return false;
                for (const auto& r : s.include)
                    if (r.contains(p)) return true;
                return false;
            } else if constexpr (std::is_same_v<T, circles>) {
                for (const auto& c : s.centers)
                    if (std::abs((p - c).norm() - s.radius) <= s.band + 1e-12) return true;
                return false;
            } else if constexpr (std::is_same_v<T, point_set>) {
                for (const auto& q : s.points)
                    if ((p - q).norm() <= s.tolerance) return true;
                return false;
            } else {
                return false;
            }
        },
        d);
}

// n i.i.d. draws as a 2 x n matrix.
inline Eigen::MatrixXd sample_dataset(const distribution_spec& d, int n, rng_stream& rng) {
    if (n < 1) throw config_error("sample count must be >= 1");
    validate(d);
    if (is_empty(d)) throw config_error("cannot sample from an empty distribution");
    Eigen::MatrixXd out(2, n);
    const auto pick = [&rng](std::size_t k) {
        return static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(k) - 1));
    };
    for (int i = 0; i < n; ++i) {
        point p = std::visit(
            [&](const auto& s) -> point {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, gaussian_mixture>) {
                    const auto& c = s.centers[pick(s.centers.size())];
                    const double gx = rng.normal(), gy = rng.normal();
                    return c + s.sigma * point(gx, gy);
                } else if constexpr (std::is_same_v<T, uniform_region>) {
                    double total = 0.0;
                    for (const auto& r : s.include) total += r.area();
                    for (int attempt = 0; attempt < 1000000; ++attempt) {
                        double u = rng.uniform() * total;
                        const rect* chosen = &s.include.back();
                        for (const auto& r : s.include) {
                            if (u < r.area()) {
                                chosen = &r;
                                break;
                            }
                            u -= r.area();
                        }
                        const double ux = rng.uniform(), uy = rng.uniform();
                        point q(chosen->x0 + ux * (chosen->x1 - chosen->x0), chosen->y0 + uy * (chosen->y1 - chosen->y0));
                        bool excluded = false;
                        for (const auto& r : s.exclude) excluded = excluded || r.contains(q);
                        // Overlapping includes: keep q with probability 1/(#covering rects).
                        int cover = 0;
                        for (const auto& r : s.include) cover += r.contains(q) ? 1 : 0;
                        if (!excluded && (cover <= 1 || rng.uniform() * cover < 1.0)) return q;
                    }
                    throw config_error("uniform region has (near) zero admissible area");
                } else if constexpr (std::is_same_v<T, circles>) {
                    const auto& c = s.centers[pick(s.centers.size())];
                    const double a = 2.0 * std::numbers::pi * rng.uniform();
                    return c + s.radius * point(std::cos(a), std::sin(a));
                } else if constexpr (std::is_same_v<T, point_set>) {
                    return s.points[pick(s.points.size())];
                } else {
                    throw config_error("cannot sample from an empty distribution");
                }
            },
            d);
        out.col(i) = p;
    }
    return out;
}

enum class algebra_kind { product, mixture, negation };

inline const char* to_string(algebra_kind k) {
    switch (k) {
    case algebra_kind::product: return "product";
    case algebra_kind::mixture: return "mixture";
    case algebra_kind::negation: return "negation";
    }
    return "?";
}

struct scenario_spec {
    std::string id;          // e.g. "product_a"
    algebra_kind kind;
    std::array<distribution_spec, 2> components;
    distribution_spec composed;  // ground truth of the composition
    int dataset_size = 8000;

    // Conditions are always named c1, c2.
    std::string expression() const {
        switch (kind) {
        case algebra_kind::product: return "c1 & c2";
        case algebra_kind::mixture: return "c1 | c2";
        case algebra_kind::negation: return "c1 & !c2";
        }
        return {};
    }
    static std::vector<std::string> conditions() { return {"c1", "c2"}; }

    bool composed_empty() const { return is_empty(composed); }

    // A sample is accurate when it satisfies every condition of the algebra:
    // the boolean combination of component memberships. `composed` only
    // supplies the reference dataset.
    bool member(const point& p) const {
        const bool a = eval::member(components[0], p), b = eval::member(components[1], p);
        switch (kind) {
        case algebra_kind::product: return a && b;
        case algebra_kind::mixture: return a || b;
        case algebra_kind::negation: return a && !b;
        }
        return false;
    }
};

inline std::vector<point> ring(int count, double radius) {
    std::vector<point> out;
    for (int k = 0; k < count; ++k) {
        const double a = 2.0 * std::numbers::pi * k / count;
        out.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    return out;
}

// The nine benchmark scenarios. Negation ground truth is component-A-minus-
// component-B, written out as a region.
inline std::vector<scenario_spec> all_scenarios() {
    const rect left{-1.0, -0.5, -1.0, 1.0};
    const rect right{0.5, 1.0, -1.0, 1.0};
    const rect square{-1.0, 1.0, -1.0, 1.0};
    const rect center{-0.5, 0.5, -0.5, 0.5};
    const rect tall_strip{-0.5, 0.5, -2.0, 2.0};
    const double h = std::sqrt(3.0) / 2.0;

    std::vector<scenario_spec> out;
    out.push_back({"product_a",
                   algebra_kind::product,
                   {gaussian_mixture{ring(8, 0.5), 0.3}, uniform_region{{rect{-0.1, 0.1, -1.0, 1.0}}, {}}},
                   gaussian_mixture{{point(0.0, 0.5), point(0.0, -0.5)}, 0.3}});
    out.push_back({"product_b",
                   algebra_kind::product,
                   {circles{{point(-0.5, 0.0)}, 1.0, 0.1}, circles{{point(0.5, 0.0)}, 1.0, 0.1}},
                   point_set{{point(0.0, h), point(0.0, -h)}, 0.1}});
    out.push_back({"product_c", algebra_kind::product, {uniform_region{{left}, {}}, uniform_region{{right}, {}}}, empty_set{}});

    out.push_back({"mixture_a",
                   algebra_kind::mixture,
                   {gaussian_mixture{{point(-0.25, 0.5), point(-0.25, 0.0), point(-0.25, -0.5)}, 0.3},
                    gaussian_mixture{{point(0.25, 0.5), point(0.25, 0.0), point(0.25, -0.5)}, 0.3}},
                   gaussian_mixture{{point(-0.25, 0.5), point(-0.25, 0.0), point(-0.25, -0.5), point(0.25, 0.5),
                                     point(0.25, 0.0), point(0.25, -0.5)},
                                    0.3}});
    out.push_back({"mixture_b",
                   algebra_kind::mixture,
                   {uniform_region{{left}, {}}, uniform_region{{right}, {}}},
                   uniform_region{{left, right}, {}}});
    out.push_back({"mixture_c",
                   algebra_kind::mixture,
                   {circles{{point(-0.5, 0.0)}, 1.0, 0.1}, circles{{point(0.5, 0.0)}, 1.0, 0.1}},
                   circles{{point(-0.5, 0.0), point(0.5, 0.0)}, 1.0, 0.1}});

    out.push_back({"negation_a",
                   algebra_kind::negation,
                   {uniform_region{{square}, {}}, uniform_region{{center}, {}}},
                   uniform_region{{square}, {center}}});
    out.push_back({"negation_b",
                   algebra_kind::negation,
                   {uniform_region{{square}, {}}, uniform_region{{tall_strip}, {}}},
                   uniform_region{{left, right}, {}}});
    out.push_back({"negation_c",
                   algebra_kind::negation,
                   {uniform_region{{center}, {}}, uniform_region{{square}, {}}},
                   empty_set{}});
    return out;
}

inline scenario_spec find_scenario(const std::string& id) {
    for (auto& s : all_scenarios())
        if (s.id == id) return s;
    throw config_error("unknown scenario '" + id + "'");
}

}  // namespace complift::eval
