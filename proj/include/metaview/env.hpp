#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaview/rng.hpp"
#include "metaview/tensor.hpp"

namespace mv {

// Polar view grid: elevation rows (clamped at the poles) x azimuth columns
// (wrapping), each cell holding a D-dimensional view feature vector.
struct GridGeometry {
    std::size_t elevations = 5;
    std::size_t azimuths = 6;
    std::size_t feature_dim = 16;

    std::size_t cells() const { return elevations * azimuths; }
    void validate() const;
};

struct ViewGrid {
    GridGeometry geometry;
    std::vector<double> features;  // [E][A][D] row-major

    static ViewGrid zeros(const GridGeometry& g) {
        return ViewGrid{g, std::vector<double>(g.cells() * g.feature_dim, 0.0)};
    }

    std::span<const double> cell(std::size_t e, std::size_t a) const {
        std::size_t off = (e * geometry.azimuths + a) * geometry.feature_dim;
        return {features.data() + off, geometry.feature_dim};
    }
    std::span<double> cell(std::size_t e, std::size_t a) {
        std::size_t off = (e * geometry.azimuths + a) * geometry.feature_dim;
        return {features.data() + off, geometry.feature_dim};
    }
};

struct ObjectInstance {
    std::int64_t object_id = 0;
    std::int64_t category_id = 0;
    ViewGrid grid;
};

// Viewpoint shift in grid steps.
struct Action {
    int d_elev = 0;
    int d_azim = 0;
    bool operator==(const Action&) const = default;
};

// All (d_elev, d_azim) with |d_elev| <= radius_e, |d_azim| <= radius_a, in
// lexicographic order. The index of each action is stable across runs.
struct ActionSet {
    int radius_e = 1;
    int radius_a = 1;
    std::vector<Action> actions;

    static ActionSet make(int radius_e = 1, int radius_a = 1);

    std::size_t size() const { return actions.size(); }
    std::size_t index_of(const Action& a) const;
    std::size_t stay_index() const { return index_of(Action{0, 0}); }
};

struct ViewPointer {
    std::size_t e = 0;
    std::size_t a = 0;
    bool operator==(const ViewPointer&) const = default;
};

// Azimuth wraps modulo A; elevation clamps to [0, E-1].
ViewPointer apply_action(ViewPointer p, const Action& act, const GridGeometry& g);

struct Observation {
    std::vector<double> features;
    std::size_t prev_action_index = 0;
};

Observation observe(const ObjectInstance& obj, ViewPointer p, std::size_t prev_action_index);

struct GeneratorConfig {
    std::size_t num_categories = 40;
    std::size_t instances_per_category = 12;
    std::size_t informative_cells = 3;  // M: cells per category carrying its signal
    double signal_scale = 2.0;
    double instance_noise = 0.25;
    double background_noise = 0.25;
    std::size_t instance_signal_cells = 2;
    // Characteristic-view zone: a connected region, drawn once per dataset,
    // inside which every category's signal cells are placed. 0 = anywhere.
    std::size_t informative_zone = 8;
    // Neighboring-view overlap: cells at grid distance d from a signal cell
    // blend signal_falloff^d of the signal into the background. 0 = point
    // signals with no footprint.
    double signal_falloff = 0.6;
    int smoothing_radius = 0;  // 0 = off; >0 box-smooths the background field
    std::uint64_t seed = 0;

    void validate(const GridGeometry& g) const;
};

struct Dataset {
    GridGeometry geometry;
    GeneratorConfig config;
    std::vector<ObjectInstance> objects;

    std::size_t num_categories() const { return config.num_categories; }
    std::vector<const ObjectInstance*> objects_of_category(std::int64_t category_id) const;
    const ObjectInstance& object_by_id(std::int64_t object_id) const;
};

// Deterministic synthesis: one shared background field per dataset; each
// category plants one unit direction (scaled by signal_scale) on a random
// connected patch of M cells; each instance adds i.i.d. perturbation noise
// plus its own unit-direction signal on a small connected patch. Identical
// (cfg, geometry) produce bit-identical datasets.
Dataset generate_dataset(const GeneratorConfig& cfg, const GridGeometry& geometry);

// Connected patch of `size` cells grown by uniform adjacent expansion under
// the grid's wrap/clamp topology. The optional seed pins the first cell.
// Exposed for tests.
std::vector<std::size_t> random_connected_patch(const GridGeometry& g, std::size_t size, Rng& rng,
                                                std::optional<std::size_t> seed_cell = {});

// Chebyshev distance on the grid: azimuth wraps, elevation does not.
std::size_t grid_distance(const GridGeometry& g, std::size_t cell_a, std::size_t cell_b);

void save_dataset(const Dataset& ds, const std::string& path, bool header_only = false);
Dataset load_dataset(const std::string& path);

}  // namespace mv
