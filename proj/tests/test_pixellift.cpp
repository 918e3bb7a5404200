#include <gtest/gtest.h>

#include <fstream>

#include "complift/lift.hpp"
#include "complift/pixellift.hpp"
#include "support.hpp"

namespace {

using namespace complift;
using namespace complift::pixel;

constexpr shape3 kShape{4, 16, 16};

// Planted oracle: condition k "draws" a rectangle of pixels. Null predicts
// zero everywhere, compose predicts `v` everywhere, cond k predicts `v`
// inside its region and zero outside, so exactly the region pixels carry
// strictly positive lift.
class planted_oracle final : public denoiser_oracle {
public:
    planted_oracle(std::vector<std::vector<std::pair<int, int>>> regions, float v = 0.7f)
        : regions_(std::move(regions)), v_(v) {}

    latent_tensor predict(const latent_tensor& zt, int, const std::string& tag) const override {
        latent_tensor out(zt.shape);
        if (tag == tag_null) return out;
        if (tag == tag_compose) return latent_tensor(zt.shape, v_);
        for (std::size_t k = 0; k < regions_.size(); ++k)
            if (tag == tag_condition(k))
                for (auto [y, x] : regions_[k])
                    for (std::int64_t c = 0; c < zt.channels(); ++c) out.at(c, y, x) = v_;
        return out;
    }

private:
    std::vector<std::vector<std::pair<int, int>>> regions_;
    float v_;
};

std::vector<std::pair<int, int>> region(int count, int offset = 0) {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < count; ++i) out.emplace_back((offset + i) / 16, (offset + i) % 16);
    return out;
}

latent_tensor random_latent(std::uint64_t seed, shape3 s = kShape) {
    latent_tensor z(s);
    rng_stream r(seed);
    for (auto& v : z.data) v = static_cast<float>(r.normal());
    return z;
}

// Records a cache by running an oracle along a fixed list of timesteps.
latent_cache record(const denoiser_oracle& oracle, std::size_t conditions, const latent_tensor& z0) {
    const auto sched = diffusion_schedule::linear(50);
    latent_cache c;
    c.betas.assign(sched.betas().begin(), sched.betas().end());
    for (std::size_t k = 0; k < conditions; ++k) c.conditions.push_back("object " + std::to_string(k));
    c.shape = z0.shape;
    c.z0 = z0;
    rng_stream r(77);
    for (int t = 50; t >= 1; t -= 7) {
        cache_step s;
        s.t = t;
        latent_tensor eps(z0.shape);
        for (auto& v : eps.data) v = static_cast<float>(r.normal());
        s.latent = pixel::detail::noised(sched, z0, t, eps);
        s.null_pred = oracle.predict(s.latent, t, tag_null);
        s.composed = oracle.predict(s.latent, t, tag_compose);
        for (std::size_t k = 0; k < conditions; ++k) s.cond.push_back(oracle.predict(s.latent, t, tag_condition(k)));
        c.steps.push_back(std::move(s));
    }
    c.metadata = {{"prompt", "a cat and a dog"}, {"guidance_scale", 7.5}};
    return c;
}

TEST(PixelLift, ActivatedCountEqualsPlantedRegion) {
    const auto sched = diffusion_schedule::linear(50);
    for (int size : {0, 1, 37, 256}) {
        planted_oracle oracle({region(size)});
        rng_stream r(1);
        const auto map = per_pixel_lift(random_latent(2), tag_condition(0), oracle, sched, 10, r);
        EXPECT_EQ(count_verdict(map, 0).count, size);
        const auto cache = record(oracle, 1, random_latent(2));
        EXPECT_EQ(count_verdict(per_pixel_lift(cache, 0), 0).count, size);
    }
}

TEST(PixelLift, ThresholdIsStrict) {
    const auto sched = diffusion_schedule::linear(50);
    const std::int64_t tau = 40;
    for (auto [size, accept] : {std::pair{40, false}, std::pair{41, true}, std::pair{39, false}}) {
        planted_oracle oracle({region(size)});
        rng_stream r(3);
        const auto map = per_pixel_lift(random_latent(4), tag_condition(0), oracle, sched, 5, r);
        const auto v = count_verdict(map, tau);
        EXPECT_EQ(v.count, size);
        EXPECT_EQ(v.accept, accept) << size;
    }
}

TEST(PixelLift, VerdictTableOverTwoPlantedConditions) {
    const auto sched = diffusion_schedule::linear(50);
    const std::int64_t tau = 20;
    const std::vector<std::string> names{"cat", "dog"};
    const auto prod = algebra::to_cnf(algebra::parse("cat & dog"));
    const auto mix = algebra::to_cnf(algebra::parse("cat | dog"));
    const auto neg = algebra::to_cnf(algebra::parse("cat & !dog"));
    for (bool cat : {false, true})
        for (bool dog : {false, true}) {
            planted_oracle oracle({region(cat ? 30 : 10), region(dog ? 25 : 15, 100)});
            const auto z0 = random_latent(5);
            const auto check = [&](const algebra::cnf& f, bool want) {
                EXPECT_EQ(verdict_for_prompt(z0, names, oracle, sched, 4, 9, f, tau).accept, want) << cat << dog;
                auto cache = record(oracle, 2, z0);
                cache.conditions = names;
                EXPECT_EQ(verdict_for_prompt(cache, f, tau).accept, want) << cat << dog;
            };
            check(prod, cat && dog);
            check(mix, cat || dog);
            check(neg, cat && !dog);
        }
}

TEST(PixelLift, VanillaAndCachedAgreeWhenOracleReplaysCache) {
    planted_oracle base({region(50), region(90, 30)});
    const auto cache = record(base, 2, random_latent(6));
    // Replace the planted predictions with noise so the maps are generic.
    auto noisy = cache;
    rng_stream r(8);
    for (auto& s : noisy.steps) {
        for (auto& v : s.null_pred->data) v = static_cast<float>(r.normal());
        for (auto& v : s.composed->data) v = static_cast<float>(r.normal());
        for (auto& c : s.cond)
            for (auto& v : c.data) v = static_cast<float>(r.normal());
    }
    cache_replay_oracle replay(noisy);
    const auto ts = noisy.timesteps();
    const diffusion_schedule sched(noisy.betas);
    for (std::size_t k = 0; k < 2; ++k) {
        rng_stream rr(1);
        const auto vanilla = per_pixel_lift(noisy.z0, tag_condition(k), replay, sched, ts, rr);
        const auto cached = per_pixel_lift(noisy, k);
        EXPECT_TRUE((vanilla == cached).all());
    }
}

TEST(PixelLift, RawNoiseReference) {
    // Condition predicts the true noise inside its region; the lift there is
    // |eps|^2 > 0 and exactly zero elsewhere.
    class eps_oracle final : public denoiser_oracle {
    public:
        eps_oracle(const diffusion_schedule& s, const latent_tensor& z0) : s_(s), z0_(z0) {}
        latent_tensor predict(const latent_tensor& zt, int t, const std::string& tag) const override {
            latent_tensor out(zt.shape);
            if (tag != tag_condition(0)) return out;
            const auto eps = pixel::detail::implied_eps(s_, zt, z0_, t);
            for (auto [y, x] : region(12, 7))
                for (std::int64_t c = 0; c < zt.channels(); ++c) out.at(c, y, x) = eps.at(c, y, x);
            return out;
        }

    private:
        const diffusion_schedule& s_;
        latent_tensor z0_;
    };
    const auto sched = diffusion_schedule::linear(50);
    const auto z0 = random_latent(10);
    eps_oracle oracle(sched, z0);
    rng_stream r(2);
    pixel_lift_options opt;
    opt.raw_eps = true;
    const auto map = per_pixel_lift(z0, tag_condition(0), oracle, sched, 6, r, opt);
    EXPECT_EQ(count_verdict(map, 0).count, 12);
    const auto cache = record(oracle, 1, z0);
    EXPECT_EQ(count_verdict(per_pixel_lift(cache, 0, opt), 0).count, 12);
}

TEST(PixelLift, RequiresNullAndComposedPredictions) {
    planted_oracle oracle({region(5)});
    auto cache = record(oracle, 1, random_latent(1));
    auto no_null = cache;
    for (auto& s : no_null.steps) s.null_pred.reset();
    EXPECT_THROW(per_pixel_lift(no_null, 0), cache_error);
    auto no_compose = cache;
    for (auto& s : no_compose.steps) s.composed.reset();
    EXPECT_THROW(per_pixel_lift(no_compose, 0), cache_error);
    pixel_lift_options raw;
    raw.raw_eps = true;
    EXPECT_NO_THROW(per_pixel_lift(no_compose, 0, raw));
    EXPECT_THROW(per_pixel_lift(cache, 1), config_error);
}

class CacheFiles : public ::testing::Test {
protected:
    fixtures::scratch_dir dir{"cache"};
    latent_cache cache;
    void SetUp() override {
        planted_oracle oracle({region(30), region(60, 40)});
        cache = record(oracle, 2, random_latent(3, {4, 8, 6}));
        write_cache(cache, dir.path());
    }
    nlohmann::ordered_json manifest() const {
        std::ifstream in(dir / "manifest.json");
        return nlohmann::ordered_json::parse(in);
    }
    void rewrite(const nlohmann::ordered_json& m) const {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        out << m.dump(2);
    }
};

TEST_F(CacheFiles, RoundTripIsExact) {
    const auto back = read_cache(dir.path());
    EXPECT_TRUE(back == cache);
    const auto m = manifest();
    EXPECT_EQ(m["format"], "complift.latent_cache");
    EXPECT_EQ(m["shape"], (std::vector<int>{4, 8, 6}));
    EXPECT_EQ(m["timesteps"].front(), 50);
    EXPECT_EQ(m["tags"], (std::vector<std::string>{"latent", "null", "compose", "cond0", "cond1"}));
    EXPECT_TRUE(std::filesystem::exists(dir / "cond1_t1.bin"));
    EXPECT_EQ(std::filesystem::file_size(dir / "latent_t43.bin"), 4u * 8u * 6u * 4u);
    // The file bytes are the little-endian float32 values in C order.
    std::ifstream in(dir / "z0.bin", std::ios::binary);
    float first = 0.f;
    in.read(reinterpret_cast<char*>(&first), 4);
    EXPECT_EQ(first, cache.z0.at(0, 0, 0));
}

TEST_F(CacheFiles, TruncatedFileNamed) {
    std::filesystem::resize_file(dir / "cond0_t22.bin", 10);
    try {
        read_cache(dir.path());
        FAIL();
    } catch (const cache_error& e) {
        EXPECT_NE(std::string(e.what()).find("cond0_t22.bin"), std::string::npos);
        EXPECT_EQ(e.exit_code(), 3);
    }
}

TEST_F(CacheFiles, MissingFileNamed) {
    std::filesystem::remove(dir / "null_t8.bin");
    try {
        read_cache(dir.path());
        FAIL();
    } catch (const cache_error& e) {
        EXPECT_NE(std::string(e.what()).find("null_t8.bin"), std::string::npos);
    }
}

TEST_F(CacheFiles, UnknownDtype) {
    auto m = manifest();
    m["dtype"] = "float16";
    rewrite(m);
    try {
        read_cache(dir.path());
        FAIL();
    } catch (const cache_error& e) {
        EXPECT_NE(std::string(e.what()).find("unknown dtype"), std::string::npos);
    }
}

TEST_F(CacheFiles, ManifestProblems) {
    auto m = manifest();
    m["tags"].push_back("cond7");
    rewrite(m);
    EXPECT_THROW(read_cache(dir.path()), cache_error);
    m = manifest();
    m.erase("betas");
    rewrite(m);
    EXPECT_THROW(read_cache(dir.path()), cache_error);
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        out << "{ nope";
    }
    EXPECT_THROW(read_cache(dir.path()), cache_error);
    std::filesystem::remove(dir / "manifest.json");
    try {
        read_cache(dir.path());
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.exit_code(), 3);
    }
}

TEST_F(CacheFiles, NonFiniteValuesRejected) {
    auto bad = cache;
    bad.steps[1].cond[0].data[3] = std::nanf("");
    EXPECT_THROW(write_cache(bad, dir / "bad"), cache_error);
}

TEST(PointCache, TwoDimensionalCacheSurvivesDiskRoundTrip) {
    const std::vector<energy_net> nets{fixtures::random_net(1, "c1"), fixtures::random_net(2, "c2")};
    composed_score_spec spec;
    spec.kind = composition::product;
    generate_options go;
    go.record = true;
    go.conditions = {"c1", "c2"};
    const auto gen = generate(nets, spec, 64, go);
    fixtures::scratch_dir dir("points");
    write_cache(to_latent_cache(*gen.cache), dir.path());
    const auto back = to_prediction_cache(read_cache(dir.path()));
    const auto form = algebra::to_cnf(algebra::parse("c1 & c2"));
    lift_config cfg;
    const auto a = lift_cached(*gen.cache, form, cfg);
    const auto b = lift_cached(back, form, cfg);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].lift, b[i].lift);
    EXPECT_TRUE((back.final.array() == gen.samples.array()).all());
}

}  // namespace
