#pragma once

// Latent-space lift for text-to-image models: per-pixel differential losses,
// activated-pixel counting against a threshold, and the on-disk cache of
// per-timestep latents and predictions.
//
// Cache directory layout:
//   manifest.json        format, version, dtype, endianness, layout, shape
//                        [C, H, W], betas, timesteps (1-based, strictly
//                        decreasing), conditions, tags, final_latent, metadata
//   {tag}_t{t}.bin       raw little-endian float32, C-order, one per
//                        (timestep, tag); tags are latent, null, compose and
//                        cond0..cond{n-1}
//   z0.bin               final latent

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "complift/algebra.hpp"
#include "complift/error.hpp"
#include "complift/rng.hpp"
#include "complift/sampler.hpp"
#include "complift/schedule.hpp"

namespace complift::pixel {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using shape3 = std::array<std::int64_t, 3>;  // channels, height, width

struct latent_tensor {
    shape3 shape{0, 0, 0};
    std::vector<float> data;  // C-order

    latent_tensor() = default;
    explicit latent_tensor(shape3 s, float fill = 0.0f) : shape(s), data(element_count(s), fill) {}

    static std::size_t element_count(const shape3& s) {
        for (auto v : s)
            if (v < 0) throw config_error("negative tensor dimension");
        return static_cast<std::size_t>(s[0] * s[1] * s[2]);
    }

    std::int64_t channels() const { return shape[0]; }
    std::int64_t height() const { return shape[1]; }
    std::int64_t width() const { return shape[2]; }
    std::size_t size() const { return data.size(); }
    std::size_t pixels() const { return static_cast<std::size_t>(shape[1] * shape[2]); }

    float& at(std::int64_t c, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
    }
    float at(std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const latent_tensor&, const latent_tensor&) = default;
};

// Height x width map of per-pixel lifts.
using lift_map = Eigen::ArrayXXd;

inline const std::string tag_latent = "latent";
inline const std::string tag_null = "null";
inline const std::string tag_compose = "compose";
inline std::string tag_condition(std::size_t k) { return "cond" + std::to_string(k); }

// Denoiser queried at (z_t, t) for one tag: null, compose or cond{k}.
class denoiser_oracle {
public:
    virtual ~denoiser_oracle() = default;
    virtual latent_tensor predict(const latent_tensor& z_t, int t, const std::string& tag) const = 0;
};

struct cache_step {
    int t = 0;
    latent_tensor latent;
    std::optional<latent_tensor> null_pred;
    std::optional<latent_tensor> composed;
    std::vector<latent_tensor> cond;  // one per condition
};

struct latent_cache {
    std::vector<double> betas;
    std::vector<std::string> conditions;
    shape3 shape{0, 0, 0};
    std::vector<cache_step> steps;  // strictly decreasing t
    latent_tensor z0;
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    std::vector<int> timesteps() const {
        std::vector<int> out;
        for (const auto& s : steps) out.push_back(s.t);
        return out;
    }

    bool has_null() const {
        return !steps.empty() && std::all_of(steps.begin(), steps.end(), [](const cache_step& s) { return s.null_pred.has_value(); });
    }
    bool has_composed() const {
        return !steps.empty() && std::all_of(steps.begin(), steps.end(), [](const cache_step& s) { return s.composed.has_value(); });
    }

    std::vector<std::string> tags() const {
        std::vector<std::string> out{tag_latent};
        if (has_null()) out.push_back(tag_null);
        if (has_composed()) out.push_back(tag_compose);
        for (std::size_t k = 0; k < conditions.size(); ++k) out.push_back(tag_condition(k));
        return out;
    }

    const latent_tensor& get(std::size_t j, const std::string& tag) const {
        const auto& s = steps.at(j);
        if (tag == tag_latent) return s.latent;
        if (tag == tag_null) {
            if (!s.null_pred) throw cache_error("cache has no null prediction at t=" + std::to_string(s.t));
            return *s.null_pred;
        }
        if (tag == tag_compose) {
            if (!s.composed) throw cache_error("cache has no composed prediction at t=" + std::to_string(s.t));
            return *s.composed;
        }
        for (std::size_t k = 0; k < s.cond.size(); ++k)
            if (tag == tag_condition(k)) return s.cond[k];
        throw cache_error("cache has no tag '" + tag + "' at t=" + std::to_string(s.t));
    }

    // Structural checks: shapes, timestep order, one prediction per condition,
    // finite values, schedule coverage.
    void validate() const {
        if (steps.empty()) throw cache_error("cache has no timesteps");
        if (conditions.empty()) throw cache_error("cache declares no conditions");
        if (z0.shape != shape) throw cache_error("final latent shape does not match manifest shape");
        if (!z0.all_finite()) throw cache_error("final latent contains non-finite values");
        for (std::size_t j = 0; j < steps.size(); ++j) {
            const auto& s = steps[j];
            if (j > 0 && !(s.t < steps[j - 1].t)) throw cache_error("cache timesteps are not strictly decreasing");
            if (s.t < 1 || (!betas.empty() && s.t > static_cast<int>(betas.size())))
                throw cache_error("cache timestep " + std::to_string(s.t) + " outside the schedule");
            if (s.cond.size() != conditions.size())
                throw cache_error("cache is missing a condition prediction at t=" + std::to_string(s.t));
            const auto check = [&](const latent_tensor& x, const std::string& what) {
                if (x.shape != shape) throw cache_error(what + " shape mismatch at t=" + std::to_string(s.t));
                if (!x.all_finite()) throw cache_error(what + " has non-finite values at t=" + std::to_string(s.t));
            };
            check(s.latent, tag_latent);
            if (s.null_pred) check(*s.null_pred, tag_null);
            if (s.composed) check(*s.composed, tag_compose);
            for (std::size_t k = 0; k < s.cond.size(); ++k) check(s.cond[k], tag_condition(k));
        }
    }

    friend bool operator==(const latent_cache& a, const latent_cache& b) {
        if (a.betas != b.betas || a.conditions != b.conditions || a.shape != b.shape || !(a.z0 == b.z0) ||
            a.metadata != b.metadata || a.steps.size() != b.steps.size())
            return false;
        for (std::size_t j = 0; j < a.steps.size(); ++j) {
            const auto &x = a.steps[j], &y = b.steps[j];
            if (x.t != y.t || !(x.latent == y.latent) || x.null_pred != y.null_pred || x.composed != y.composed ||
                x.cond != y.cond)
                return false;
        }
        return true;
    }
};

inline std::string tensor_file_name(const std::string& tag, int t) { return tag + "_t" + std::to_string(t) + ".bin"; }

namespace detail {

inline void write_tensor(const std::filesystem::path& p, const latent_tensor& x) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(x.data.data()), static_cast<std::streamsize>(x.data.size() * sizeof(float)));
    if (!out) throw error("failed writing " + p.string());
}

inline latent_tensor read_tensor(const std::filesystem::path& p, const shape3& shape) {
    latent_tensor x(shape);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw cache_error("cannot open cache tensor " + p.filename().string());
    in.read(reinterpret_cast<char*>(x.data.data()), static_cast<std::streamsize>(x.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != x.data.size() * sizeof(float))
        throw cache_error("truncated cache tensor " + p.filename().string());
    return x;
}

}  // namespace detail

inline void write_cache(const latent_cache& cache, const std::filesystem::path& dir) {
    cache.validate();
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json m;
    m["format"] = "complift.latent_cache";
    m["version"] = 1;
    m["dtype"] = "float32";
    m["endianness"] = "little";
    m["layout"] = "C";
    m["shape"] = cache.shape;
    m["betas"] = cache.betas;
    m["timesteps"] = cache.timesteps();
    m["conditions"] = cache.conditions;
    m["tags"] = cache.tags();
    m["final_latent"] = "z0.bin";
    m["metadata"] = cache.metadata;
    const auto tags = cache.tags();
    for (std::size_t j = 0; j < cache.steps.size(); ++j)
        for (const auto& tag : tags) detail::write_tensor(dir / tensor_file_name(tag, cache.steps[j].t), cache.get(j, tag));
    detail::write_tensor(dir / "z0.bin", cache.z0);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw error("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << "\n";
}

// Every file named by the manifest is size-checked before any tensor is read.
inline latent_cache read_cache(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw missing_input_error("no cache manifest at " + manifest_path.string());
    nlohmann::ordered_json m;
    try {
        m = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw cache_error("malformed cache manifest: " + std::string(e.what()));
    }

    latent_cache c;
    std::vector<int> timesteps;
    std::vector<std::string> tags;
    std::string final_name;
    try {
        if (m.at("format").get<std::string>() != "complift.latent_cache") throw cache_error("not a latent cache manifest");
        if (m.at("version").get<int>() != 1) throw cache_error("unsupported cache version");
        const auto dtype = m.at("dtype").get<std::string>();
        if (dtype != "float32") throw cache_error("unknown dtype '" + dtype + "' in cache manifest");
        if (m.at("endianness").get<std::string>() != "little") throw cache_error("unsupported cache endianness");
        if (m.value("layout", std::string("C")) != "C") throw cache_error("unsupported cache layout");
        const auto shape = m.at("shape").get<std::vector<std::int64_t>>();
        if (shape.size() != 3) throw cache_error("cache shape must have three dimensions");
        c.shape = {shape[0], shape[1], shape[2]};
        c.betas = m.at("betas").get<std::vector<double>>();
        timesteps = m.at("timesteps").get<std::vector<int>>();
        c.conditions = m.at("conditions").get<std::vector<std::string>>();
        tags = m.at("tags").get<std::vector<std::string>>();
        final_name = m.value("final_latent", std::string("z0.bin"));
        if (m.contains("metadata")) c.metadata = m["metadata"];
    } catch (const nlohmann::json::exception& e) {
        throw cache_error("invalid cache manifest: " + std::string(e.what()));
    }
    if (timesteps.empty()) throw cache_error("cache manifest lists no timesteps");
    if (std::find(tags.begin(), tags.end(), tag_latent) == tags.end()) throw cache_error("cache manifest lacks the latent tag");
    for (std::size_t k = 0; k < c.conditions.size(); ++k)
        if (std::find(tags.begin(), tags.end(), tag_condition(k)) == tags.end())
            throw cache_error("cache manifest lacks tag " + tag_condition(k));
    for (const auto& tag : tags) {
        const bool known = tag == tag_latent || tag == tag_null || tag == tag_compose ||
                           (tag.rfind("cond", 0) == 0 && tag.size() > 4 &&
                            std::all_of(tag.begin() + 4, tag.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) &&
                            std::stoul(tag.substr(4)) < c.conditions.size());
        if (!known) throw cache_error("unknown cache tag '" + tag + "'");
    }

    const auto expected = static_cast<std::uintmax_t>(latent_tensor::element_count(c.shape) * sizeof(float));
    const auto check_file = [&](const std::string& name) {
        const auto p = dir / name;
        std::error_code ec;
        const auto size = std::filesystem::file_size(p, ec);
        if (ec) throw cache_error("missing cache file " + name);
        if (size != expected)
            throw cache_error("cache file " + name + " has " + std::to_string(size) + " bytes, expected " +
                              std::to_string(expected));
    };
    for (int t : timesteps)
        for (const auto& tag : tags) check_file(tensor_file_name(tag, t));
    check_file(final_name);

    const bool has_null = std::find(tags.begin(), tags.end(), tag_null) != tags.end();
    const bool has_compose = std::find(tags.begin(), tags.end(), tag_compose) != tags.end();
    for (int t : timesteps) {
        cache_step s;
        s.t = t;
        s.latent = detail::read_tensor(dir / tensor_file_name(tag_latent, t), c.shape);
        if (has_null) s.null_pred = detail::read_tensor(dir / tensor_file_name(tag_null, t), c.shape);
        if (has_compose) s.composed = detail::read_tensor(dir / tensor_file_name(tag_compose, t), c.shape);
        for (std::size_t k = 0; k < c.conditions.size(); ++k)
            s.cond.push_back(detail::read_tensor(dir / tensor_file_name(tag_condition(k), t), c.shape));
        c.steps.push_back(std::move(s));
    }
    c.z0 = detail::read_tensor(dir / final_name, c.shape);
    c.validate();
    return c;
}

// Replays a cache as an oracle: the prediction recorded at timestep t,
// whatever z_t is passed in.
class cache_replay_oracle final : public denoiser_oracle {
public:
    explicit cache_replay_oracle(const latent_cache& cache) : cache_(&cache) {}

    latent_tensor predict(const latent_tensor&, int t, const std::string& tag) const override {
        for (std::size_t j = 0; j < cache_->steps.size(); ++j)
            if (cache_->steps[j].t == t) return cache_->get(j, tag);
        throw cache_error("cache has no timestep " + std::to_string(t));
    }

private:
    const latent_cache* cache_;
};

struct pixel_lift_options {
    // Use the true noise instead of the composed prediction as the reference
    // in both squared errors.
    bool raw_eps = false;
};

namespace detail {

inline void check_shape(const latent_tensor& a, const latent_tensor& b, const char* what) {
    if (a.shape != b.shape) throw config_error(std::string("shape mismatch: ") + what);
}

// acc += sum_c (ref - null)^2 - (ref - cond)^2 per pixel.
inline void accumulate(lift_map& acc, const latent_tensor& ref, const latent_tensor& null_pred,
                       const latent_tensor& cond) {
    check_shape(ref, null_pred, "null prediction");
    check_shape(ref, cond, "condition prediction");
    const auto C = ref.channels(), H = ref.height(), W = ref.width();
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                const double r = ref.at(c, y, x);
                const double a = r - null_pred.at(c, y, x);
                const double b = r - cond.at(c, y, x);
                acc(y, x) += a * a - b * b;
            }
}

inline latent_tensor noised(const diffusion_schedule& s, const latent_tensor& z0, int t, const latent_tensor& eps) {
    latent_tensor out(z0.shape);
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<float>(a * z0.data[i] + b * eps.data[i]);
    return out;
}

inline latent_tensor implied_eps(const diffusion_schedule& s, const latent_tensor& zt, const latent_tensor& z0, int t) {
    const double ab = s.alpha_bar(t);
    if (!(ab < 1.0)) throw numerical_error("alpha_bar is 1 at t=" + std::to_string(t));
    latent_tensor out(z0.shape);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<float>((zt.data[i] - a * z0.data[i]) / b);
    return out;
}

}  // namespace detail

// Cached form: one trial per recorded timestep, averaged over timesteps only.
inline lift_map per_pixel_lift(const latent_cache& cache, std::size_t condition, const pixel_lift_options& opt = {}) {
    if (condition >= cache.conditions.size()) throw config_error("condition index out of range");
    if (!cache.has_null()) throw cache_error("cache has no null predictions");
    if (!opt.raw_eps && !cache.has_composed()) throw cache_error("cache has no composed predictions");
    std::optional<diffusion_schedule> schedule;
    if (opt.raw_eps) schedule.emplace(cache.betas);
    lift_map acc = lift_map::Zero(cache.shape[1], cache.shape[2]);
    for (std::size_t j = 0; j < cache.steps.size(); ++j) {
        const auto& s = cache.steps[j];
        const latent_tensor ref = opt.raw_eps ? detail::implied_eps(*schedule, s.latent, cache.z0, s.t) : *s.composed;
        detail::accumulate(acc, ref, *s.null_pred, s.cond[condition]);
    }
    return acc / static_cast<double>(cache.steps.size());
}

// Vanilla form over explicit timesteps: fresh eps per trial, z_t = add_noise
// (z0, t, eps), predictions from the oracle.
inline lift_map per_pixel_lift(const latent_tensor& z0, const std::string& condition_tag, const denoiser_oracle& oracle,
                               const diffusion_schedule& schedule, std::span<const int> timesteps, rng_stream& rng,
                               const pixel_lift_options& opt = {}) {
    if (timesteps.empty()) throw config_error("need at least one trial");
    if (!z0.all_finite()) throw numerical_error("latent contains non-finite values");
    lift_map acc = lift_map::Zero(z0.height(), z0.width());
    latent_tensor eps(z0.shape);
    for (int t : timesteps) {
        for (auto& v : eps.data) v = static_cast<float>(rng.normal());
        const latent_tensor zt = detail::noised(schedule, z0, t, eps);
        const latent_tensor null_pred = oracle.predict(zt, t, tag_null);
        const latent_tensor cond = oracle.predict(zt, t, condition_tag);
        if (opt.raw_eps) {
            detail::accumulate(acc, eps, null_pred, cond);
        } else {
            detail::accumulate(acc, oracle.predict(zt, t, tag_compose), null_pred, cond);
        }
    }
    return acc / static_cast<double>(timesteps.size());
}

// Vanilla form with `trials` timesteps drawn uniformly from [1, T].
inline lift_map per_pixel_lift(const latent_tensor& z0, const std::string& condition_tag, const denoiser_oracle& oracle,
                               const diffusion_schedule& schedule, int trials, rng_stream& rng,
                               const pixel_lift_options& opt = {}) {
    if (trials < 1) throw config_error("trials must be >= 1");
    std::vector<int> ts(static_cast<std::size_t>(trials));
    for (auto& t : ts) t = rng.uniform_int(1, schedule.steps());
    return per_pixel_lift(z0, condition_tag, oracle, schedule, ts, rng, opt);
}

struct count_result {
    std::int64_t count = 0;
    bool accept = false;
};

// Activated pixels are strictly positive; accept iff count - tau > 0.
inline count_result count_verdict(const lift_map& map, std::int64_t tau) {
    if (!map.allFinite()) throw numerical_error("lift map contains non-finite values");
    count_result r;
    r.count = (map > 0.0).count();
    r.accept = r.count - tau > 0;
    return r;
}

struct prompt_verdict {
    std::vector<std::int64_t> counts;  // per condition
    std::vector<double> scores;        // count - tau
    bool accept = false;
};

inline prompt_verdict verdict_from_maps(std::span<const lift_map> maps, std::span<const std::string> conditions,
                                        const algebra::cnf& form, std::int64_t tau) {
    if (maps.size() != conditions.size()) throw config_error("one lift map per condition required");
    prompt_verdict v;
    for (const auto& m : maps) {
        const auto r = count_verdict(m, tau);
        v.counts.push_back(r.count);
        v.scores.push_back(static_cast<double>(r.count - tau));
    }
    v.accept = algebra::compose_verdict(v.scores, algebra::bind(form, conditions));
    return v;
}

inline prompt_verdict verdict_for_prompt(const latent_cache& cache, const algebra::cnf& form, std::int64_t tau,
                                         const pixel_lift_options& opt = {}) {
    std::vector<lift_map> maps;
    for (std::size_t k = 0; k < cache.conditions.size(); ++k) maps.push_back(per_pixel_lift(cache, k, opt));
    return verdict_from_maps(maps, cache.conditions, form, tau);
}

inline prompt_verdict verdict_for_prompt(const latent_tensor& z0, std::span<const std::string> conditions,
                                         const denoiser_oracle& oracle, const diffusion_schedule& schedule, int trials,
                                         std::uint64_t seed, const algebra::cnf& form, std::int64_t tau,
                                         const pixel_lift_options& opt = {}) {
    std::vector<lift_map> maps;
    for (std::size_t k = 0; k < conditions.size(); ++k) {
        rng_stream rng(seed, k);
        maps.push_back(per_pixel_lift(z0, tag_condition(k), oracle, schedule, trials, rng, opt));
    }
    return verdict_from_maps(maps, conditions, form, tau);
}

// 2D prediction caches stored as latent caches of shape [dim, n, 1]: chain j
// is pixel (j, 0).
inline latent_tensor from_points(const matrix_f& m) {
    latent_tensor x({m.rows(), m.cols(), 1});
    for (Eigen::Index d = 0; d < m.rows(); ++d)
        for (Eigen::Index j = 0; j < m.cols(); ++j) x.at(d, j, 0) = m(d, j);
    return x;
}

inline matrix_f to_points(const latent_tensor& x) {
    if (x.width() != 1) throw cache_error("2D point caches must have width 1");
    matrix_f m(x.channels(), x.height());
    for (std::int64_t d = 0; d < x.channels(); ++d)
        for (std::int64_t j = 0; j < x.height(); ++j) m(d, j) = x.at(d, j, 0);
    return m;
}

inline latent_cache to_latent_cache(const prediction_cache& pc) {
    pc.validate_complete();
    latent_cache c;
    c.betas.assign(pc.schedule.betas().begin(), pc.schedule.betas().end());
    c.conditions = pc.conditions;
    c.shape = {pc.final.rows(), pc.final.cols(), 1};
    for (std::size_t j = 0; j < pc.timesteps.size(); ++j) {
        cache_step s;
        s.t = pc.timesteps[j];
        s.latent = from_points(pc.latents[j]);
        if (j < pc.composed.size()) s.composed = from_points(pc.composed[j]);
        if (j < pc.null_preds.size()) s.null_pred = from_points(pc.null_preds[j]);
        for (const auto& p : pc.cond_preds[j]) s.cond.push_back(from_points(p));
        c.steps.push_back(std::move(s));
    }
    c.z0 = from_points(pc.final);
    return c;
}

inline prediction_cache to_prediction_cache(const latent_cache& c) {
    c.validate();
    if (c.betas.empty()) throw cache_error("cache has no schedule");
    prediction_cache pc;
    pc.conditions = c.conditions;
    pc.schedule = diffusion_schedule(c.betas);
    for (const auto& s : c.steps) {
        pc.timesteps.push_back(s.t);
        pc.latents.push_back(to_points(s.latent));
        if (s.composed) pc.composed.push_back(to_points(*s.composed));
        if (s.null_pred) pc.null_preds.push_back(to_points(*s.null_pred));
        std::vector<matrix_f> preds;
        for (const auto& p : s.cond) preds.push_back(to_points(p));
        pc.cond_preds.push_back(std::move(preds));
    }
    pc.final = to_points(c.z0);
    if (pc.composed.size() != pc.timesteps.size()) pc.composed.clear();
    if (pc.null_preds.size() != pc.timesteps.size()) pc.null_preds.clear();
    return pc;
}

}  // namespace complift::pixel
