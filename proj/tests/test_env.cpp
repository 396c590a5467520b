#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "metaview/env.hpp"
#include "metaview/errors.hpp"

using namespace mv;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("action set enumeration is stable and complete") {
    ActionSet s = ActionSet::make(1, 1);
    CHECK(s.size() == 9);
    CHECK(s.actions[s.stay_index()] == Action{0, 0});
    // lexicographic order
    CHECK(s.actions.front() == Action{-1, -1});
    CHECK(s.actions.back() == Action{1, 1});
    ActionSet wide = ActionSet::make(0, 2);
    CHECK(wide.size() == 5);
}

TEST_CASE("apply_action wraps azimuth and clamps elevation") {
    GridGeometry g{5, 6, 16};
    CHECK(apply_action({0, 5}, {0, 1}, g) == ViewPointer{0, 0});
    CHECK(apply_action({4, 2}, {1, 0}, g) == ViewPointer{4, 2});
    CHECK(apply_action({2, 3}, {0, 0}, g) == ViewPointer{2, 3});
    CHECK(apply_action({0, 0}, {-1, -1}, g) == ViewPointer{0, 5});
}

TEST_CASE("apply_action never leaves the grid (all pointers x all actions)") {
    GridGeometry g{5, 6, 4};
    ActionSet s = ActionSet::make(2, 3);
    for (std::size_t e = 0; e < g.elevations; ++e)
        for (std::size_t a = 0; a < g.azimuths; ++a)
            for (const auto& act : s.actions) {
                ViewPointer p = apply_action({e, a}, act, g);
                CHECK(p.e < g.elevations);
                CHECK(p.a < g.azimuths);
            }
}

TEST_CASE("azimuth cycles in exactly A steps; elevation saturates at the pole") {
    GridGeometry g{5, 6, 4};
    ViewPointer p{2, 3};
    for (std::size_t i = 0; i < g.azimuths; ++i) p = apply_action(p, {0, 1}, g);
    CHECK(p == ViewPointer{2, 3});

    p = {0, 0};
    for (int i = 0; i < 10; ++i) p = apply_action(p, {1, 0}, g);
    CHECK(p.e == g.elevations - 1);
    ViewPointer q = apply_action(p, {1, 0}, g);
    CHECK(q == p);
}

TEST_CASE("observe returns the cell features and echoes the action index") {
    GridGeometry g{3, 4, 8};
    GeneratorConfig cfg;
    cfg.num_categories = 2;
    cfg.instances_per_category = 1;
    cfg.informative_cells = 1;
    cfg.instance_signal_cells = 1;
    cfg.seed = 5;
    Dataset ds = generate_dataset(cfg, g);
    const ObjectInstance& obj = ds.objects[0];

    Observation o = observe(obj, {1, 2}, 4);
    CHECK(o.prev_action_index == 4);
    auto cell = obj.grid.cell(1, 2);
    CHECK(std::equal(o.features.begin(), o.features.end(), cell.begin()));

    Observation o2 = observe(obj, {1, 2}, 4);
    CHECK(o2.features == o.features);  // deterministic rendering
}

TEST_CASE("dataset generation is bit-identical for equal seeds") {
    GridGeometry g{5, 6, 16};
    GeneratorConfig cfg;
    cfg.num_categories = 4;
    cfg.instances_per_category = 3;
    cfg.seed = 99;
    Dataset a = generate_dataset(cfg, g);
    Dataset b = generate_dataset(cfg, g);
    REQUIRE(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
        CHECK(a.objects[i].object_id == b.objects[i].object_id);
        CHECK(a.objects[i].category_id == b.objects[i].category_id);
        CHECK(a.objects[i].grid.features == b.objects[i].grid.features);
    }
    cfg.seed = 100;
    Dataset c = generate_dataset(cfg, g);
    CHECK(a.objects[0].grid.features != c.objects[0].grid.features);
}

TEST_CASE("degenerate config: no signal, no noise -> all instances identical") {
    GridGeometry g{5, 6, 8};
    GeneratorConfig cfg;
    cfg.num_categories = 3;
    cfg.instances_per_category = 4;
    cfg.signal_scale = 0.0;
    cfg.instance_noise = 0.0;
    cfg.instance_signal_cells = 0;
    cfg.seed = 7;
    Dataset ds = generate_dataset(cfg, g);
    const auto& first = ds.objects[0].grid.features;
    for (const auto& obj : ds.objects) CHECK(obj.grid.features == first);
}

TEST_CASE("generator rejects invalid configs") {
    GridGeometry g{5, 6, 16};
    GeneratorConfig cfg;
    cfg.informative_cells = 31;
    CHECK_THROWS_AS(generate_dataset(cfg, g), ConfigError);
    cfg = GeneratorConfig{};
    cfg.signal_falloff = 1.0;
    CHECK_THROWS_AS(generate_dataset(cfg, g), ConfigError);
    CHECK_THROWS_AS(generate_dataset(GeneratorConfig{}, GridGeometry{0, 6, 16}), ConfigError);
}

TEST_CASE("connected patches are connected and the right size") {
    GridGeometry g{5, 6, 4};
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto patch = random_connected_patch(g, 3, rng);
        REQUIRE(patch.size() == 3);
        std::set<std::size_t> unique(patch.begin(), patch.end());
        CHECK(unique.size() == 3);
        for (std::size_t i = 0; i < patch.size(); ++i) {
            bool near = false;
            for (std::size_t j = 0; j < patch.size(); ++j)
                if (i != j && grid_distance(g, patch[i], patch[j]) <= 1) near = true;
            CHECK(near);
        }
    }
}

TEST_CASE("informative cells separate categories more than background cells") {
    // Between-category feature distance at signal cells vs cells far from any
    // signal, over many generator draws; one-sided z-test at significance 0.01.
    GridGeometry g{5, 6, 16};
    std::vector<double> informative, background;
    for (int draw = 0; draw < 250; ++draw) {
        GeneratorConfig cfg;
        cfg.num_categories = 2;
        cfg.instances_per_category = 1;
        cfg.informative_zone = 0;  // patches anywhere: the reference patch
                                   // recomputation below is unmasked
        cfg.seed = 1000 + static_cast<std::uint64_t>(draw);
        Dataset ds = generate_dataset(cfg, g);
        // ground-truth patches, recomputed from the per-category streams
        std::vector<std::set<std::size_t>> cells(2);
        for (std::size_t c = 0; c < 2; ++c) {
            Rng cat_rng(derive_seed(cfg.seed, 0x636174ULL, c));
            cat_rng.unit_vector(g.feature_dim);
            auto patch = random_connected_patch(g, cfg.informative_cells, cat_rng);
            cells[c] = {patch.begin(), patch.end()};
        }
        for (std::size_t c1 = 0; c1 < 1; ++c1)
            for (std::size_t c2 = c1 + 1; c2 < 2; ++c2) {
                const auto& f1 = ds.objects[c1].grid.features;
                const auto& f2 = ds.objects[c2].grid.features;
                for (std::size_t cell = 0; cell < g.cells(); ++cell) {
                    double d2 = 0.0;
                    for (std::size_t k = 0; k < g.feature_dim; ++k) {
                        double d = f1[cell * g.feature_dim + k] - f2[cell * g.feature_dim + k];
                        d2 += d * d;
                    }
                    bool inf = cells[c1].count(cell) > 0 || cells[c2].count(cell) > 0;
                    bool far = true;
                    for (auto s : cells[c1])
                        if (grid_distance(g, cell, s) <= 1) far = false;
                    for (auto s : cells[c2])
                        if (grid_distance(g, cell, s) <= 1) far = false;
                    if (inf) informative.push_back(d2);
                    else if (far) background.push_back(d2);
                }
            }
    }
    REQUIRE(informative.size() > 1000);
    REQUIRE(background.size() > 1000);
    auto mean_var = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s2 = 0.0;
        for (double x : v) s2 += (x - m) * (x - m);
        return std::pair<double, double>(m, s2 / static_cast<double>(v.size() - 1));
    };
    auto [mi, vi] = mean_var(informative);
    auto [mb, vb] = mean_var(background);
    double z = (mi - mb) / std::sqrt(vi / informative.size() + vb / background.size());
    CHECK(mi > mb);
    CHECK(z > 2.33);  // one-sided p < 0.01
}

TEST_CASE("dataset save/load round-trip is lossless") {
    GridGeometry g{3, 4, 8};
    GeneratorConfig cfg;
    cfg.num_categories = 3;
    cfg.instances_per_category = 2;
    cfg.seed = 21;
    Dataset ds = generate_dataset(cfg, g);
    std::string path = temp_path("mv_roundtrip.mvgrid");
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    REQUIRE(back.objects.size() == ds.objects.size());
    CHECK(back.geometry.feature_dim == g.feature_dim);
    CHECK(back.config.seed == cfg.seed);
    for (std::size_t i = 0; i < ds.objects.size(); ++i)
        CHECK(back.objects[i].grid.features == ds.objects[i].grid.features);
    std::filesystem::remove(path);
}

TEST_CASE("regen-from-seed stores only the header and reproduces the dataset") {
    GridGeometry g{3, 4, 8};
    GeneratorConfig cfg;
    cfg.num_categories = 3;
    cfg.instances_per_category = 2;
    cfg.seed = 22;
    Dataset ds = generate_dataset(cfg, g);
    std::string full = temp_path("mv_full.mvgrid");
    std::string header = temp_path("mv_header.mvgrid");
    save_dataset(ds, full);
    save_dataset(ds, header, /*header_only=*/true);
    CHECK(std::filesystem::file_size(header) < std::filesystem::file_size(full));
    Dataset regen = load_dataset(header);
    REQUIRE(regen.objects.size() == ds.objects.size());
    for (std::size_t i = 0; i < ds.objects.size(); ++i)
        CHECK(regen.objects[i].grid.features == ds.objects[i].grid.features);
    std::filesystem::remove(full);
    std::filesystem::remove(header);
}

TEST_CASE("truncated dataset file raises a parse error, wrong magic a version error") {
    GridGeometry g{3, 4, 8};
    GeneratorConfig cfg;
    cfg.num_categories = 2;
    cfg.instances_per_category = 2;
    cfg.seed = 23;
    Dataset ds = generate_dataset(cfg, g);
    std::string path = temp_path("mv_trunc.mvgrid");
    save_dataset(ds, path);

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_dataset(path), ParseError);

    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGICATALL_____";
    }
    CHECK_THROWS_AS(load_dataset(path), VersionError);
    CHECK_THROWS_AS(load_dataset(temp_path("mv_missing_file.mvgrid")), IoError);
    std::filesystem::remove(path);
}
