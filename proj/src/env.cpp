#include "metaview/env.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "metaview/errors.hpp"

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian");

namespace mv {

void GridGeometry::validate() const {
    if (elevations < 1 || azimuths < 2 || feature_dim < 1)
        throw ConfigError("grid geometry requires E >= 1, A >= 2, D >= 1");
}

ActionSet ActionSet::make(int radius_e, int radius_a) {
    if (radius_e < 0 || radius_a < 0) throw ConfigError("action radii must be non-negative");
    ActionSet s;
    s.radius_e = radius_e;
    s.radius_a = radius_a;
    for (int de = -radius_e; de <= radius_e; ++de)
        for (int da = -radius_a; da <= radius_a; ++da) s.actions.push_back(Action{de, da});
    return s;
}

std::size_t ActionSet::index_of(const Action& a) const {
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (actions[i] == a) return i;
    throw IndexError("action (" + std::to_string(a.d_elev) + "," + std::to_string(a.d_azim) + ") not in action set");
}

ViewPointer apply_action(ViewPointer p, const Action& act, const GridGeometry& g) {
    long e = static_cast<long>(p.e) + act.d_elev;
    e = std::clamp(e, 0L, static_cast<long>(g.elevations) - 1);
    long a = (static_cast<long>(p.a) + act.d_azim) % static_cast<long>(g.azimuths);
    if (a < 0) a += static_cast<long>(g.azimuths);
    return ViewPointer{static_cast<std::size_t>(e), static_cast<std::size_t>(a)};
}

Observation observe(const ObjectInstance& obj, ViewPointer p, std::size_t prev_action_index) {
    auto c = obj.grid.cell(p.e, p.a);
    return Observation{{c.begin(), c.end()}, prev_action_index};
}

void GeneratorConfig::validate(const GridGeometry& g) const {
    g.validate();
    if (num_categories < 1) throw ConfigError("num_categories must be >= 1");
    if (instances_per_category < 1) throw ConfigError("instances_per_category must be >= 1");
    if (informative_cells < 1 || informative_cells > g.cells())
        throw ConfigError("informative_cells must be in [1, E*A]");
    if (informative_zone != 0 && informative_zone < informative_cells)
        throw ConfigError("informative_zone must be 0 or >= informative_cells");
    if (instance_signal_cells > g.cells()) throw ConfigError("instance_signal_cells must be <= E*A");
    if (signal_scale < 0.0 || instance_noise < 0.0 || background_noise < 0.0)
        throw ConfigError("scales must be non-negative");
    if (signal_falloff < 0.0 || signal_falloff >= 1.0)
        throw ConfigError("signal_falloff must be in [0, 1)");
    if (smoothing_radius < 0) throw ConfigError("smoothing_radius must be >= 0");
}

std::vector<const ObjectInstance*> Dataset::objects_of_category(std::int64_t category_id) const {
    std::vector<const ObjectInstance*> out;
    for (const auto& o : objects)
        if (o.category_id == category_id) out.push_back(&o);
    return out;
}

const ObjectInstance& Dataset::object_by_id(std::int64_t object_id) const {
    for (const auto& o : objects)
        if (o.object_id == object_id) return o;
    throw IndexError("object id " + std::to_string(object_id) + " not in dataset");
}

namespace {

// Growth restricted to `allowed` cells (empty = everywhere).
std::vector<std::size_t> connected_patch_impl(const GridGeometry& g, std::size_t size, Rng& rng,
                                              const std::vector<char>& allowed) {
    std::size_t n = g.cells();
    size = std::min(size, n);
    std::vector<std::size_t> patch;
    if (size == 0) return patch;
    std::vector<char> in_patch(n, 0);
    std::vector<std::size_t> frontier;
    auto ok = [&](std::size_t cell) { return allowed.empty() || allowed[cell]; };

    auto add = [&](std::size_t cell) {
        patch.push_back(cell);
        in_patch[cell] = 1;
        ViewPointer p{cell / g.azimuths, cell % g.azimuths};
        for (int de = -1; de <= 1; ++de)
            for (int da = -1; da <= 1; ++da) {
                if (de == 0 && da == 0) continue;
                ViewPointer q = apply_action(p, Action{de, da}, g);
                std::size_t qc = q.e * g.azimuths + q.a;
                if (!in_patch[qc] && ok(qc)) frontier.push_back(qc);
            }
    };

    if (allowed.empty()) {
        add(rng.uniform_index(n));
    } else {
        std::vector<std::size_t> starts;
        for (std::size_t c = 0; c < n; ++c)
            if (allowed[c]) starts.push_back(c);
        if (starts.empty()) throw ContractError("connected patch: empty allowed region");
        add(starts[rng.uniform_index(starts.size())]);
    }
    while (patch.size() < size) {
        frontier.erase(std::remove_if(frontier.begin(), frontier.end(),
                                      [&](std::size_t c) { return in_patch[c] != 0; }),
                       frontier.end());
        if (frontier.empty()) break;  // allowed region exhausted
        add(frontier[rng.uniform_index(frontier.size())]);
    }
    std::sort(patch.begin(), patch.end());
    return patch;
}

}  // namespace

std::vector<std::size_t> random_connected_patch(const GridGeometry& g, std::size_t size, Rng& rng,
                                                std::optional<std::size_t> seed_cell) {
    std::size_t n = g.cells();
    size = std::min(size, n);
    std::vector<std::size_t> patch;
    if (size == 0) return patch;
    std::vector<char> in_patch(n, 0);
    std::vector<std::size_t> frontier;
    auto add = [&](std::size_t cell) {
        patch.push_back(cell);
        in_patch[cell] = 1;
        ViewPointer p{cell / g.azimuths, cell % g.azimuths};
        for (int de = -1; de <= 1; ++de)
            for (int da = -1; da <= 1; ++da) {
                if (de == 0 && da == 0) continue;
                ViewPointer q = apply_action(p, Action{de, da}, g);
                std::size_t qc = q.e * g.azimuths + q.a;
                if (!in_patch[qc]) frontier.push_back(qc);
            }
    };
    add(seed_cell ? *seed_cell : rng.uniform_index(n));
    while (patch.size() < size) {
        frontier.erase(std::remove_if(frontier.begin(), frontier.end(),
                                      [&](std::size_t c) { return in_patch[c] != 0; }),
                       frontier.end());
        if (frontier.empty()) break;
        add(frontier[rng.uniform_index(frontier.size())]);
    }
    std::sort(patch.begin(), patch.end());
    return patch;
}

std::size_t grid_distance(const GridGeometry& g, std::size_t cell_a, std::size_t cell_b) {
    long ea = static_cast<long>(cell_a / g.azimuths), aa = static_cast<long>(cell_a % g.azimuths);
    long eb = static_cast<long>(cell_b / g.azimuths), ab = static_cast<long>(cell_b % g.azimuths);
    long de = std::labs(ea - eb);
    long da = std::labs(aa - ab);
    da = std::min(da, static_cast<long>(g.azimuths) - da);
    return static_cast<std::size_t>(std::max(de, da));
}

namespace {

// Overlap footprint: weight 1 on the patch itself, falloff^d at distance d.
std::vector<double> patch_footprint(const GridGeometry& g, const std::vector<std::size_t>& patch,
                                    double falloff) {
    std::vector<double> w(g.cells(), 0.0);
    for (std::size_t z = 0; z < g.cells(); ++z) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t s : patch) best = std::min(best, grid_distance(g, z, s));
        w[z] = best == 0 ? 1.0 : (falloff > 0.0 ? std::pow(falloff, static_cast<double>(best)) : 0.0);
    }
    return w;
}

void smooth_background(std::vector<double>& field, const GridGeometry& g, int radius) {
    std::vector<double> out(field.size(), 0.0);
    long E = static_cast<long>(g.elevations), A = static_cast<long>(g.azimuths);
    std::size_t D = g.feature_dim;
    for (long e = 0; e < E; ++e)
        for (long a = 0; a < A; ++a) {
            double count = 0.0;
            double* dst = out.data() + (static_cast<std::size_t>(e * A + a)) * D;
            for (long de = -radius; de <= radius; ++de) {
                long ee = std::clamp(e + de, 0L, E - 1);
                for (long da = -radius; da <= radius; ++da) {
                    long aa = ((a + da) % A + A) % A;
                    const double* src = field.data() + (static_cast<std::size_t>(ee * A + aa)) * D;
                    for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
                    count += 1.0;
                }
            }
            for (std::size_t d = 0; d < D; ++d) dst[d] /= count;
        }
    field = std::move(out);
}

}  // namespace

Dataset generate_dataset(const GeneratorConfig& cfg, const GridGeometry& geometry) {
    cfg.validate(geometry);
    const std::size_t D = geometry.feature_dim;
    const std::size_t cells = geometry.cells();

    Dataset ds;
    ds.geometry = geometry;
    ds.config = cfg;

    Rng bg_rng(derive_seed(cfg.seed, 0x6267ULL));  // background stream
    std::vector<double> background(cells * D);
    for (auto& x : background) x = bg_rng.normal(0.0, cfg.background_noise);
    if (cfg.smoothing_radius > 0) smooth_background(background, geometry, cfg.smoothing_radius);

    // Characteristic-view zone shared by all categories of this dataset,
    // seeded away from the steep top elevations: overhead views of an object
    // are generic, level views carry its identity.
    std::vector<char> zone_mask;
    if (cfg.informative_zone > 0 && cfg.informative_zone < cells) {
        Rng zone_rng(derive_seed(cfg.seed, 0x7a6f6eULL));
        std::size_t seed_cell;
        if (geometry.elevations >= 3) {
            std::size_t band = (geometry.elevations - 2) * geometry.azimuths;
            seed_cell = zone_rng.uniform_index(band);
        } else {
            seed_cell = zone_rng.uniform_index(cells);
        }
        auto zone = random_connected_patch(geometry, cfg.informative_zone, zone_rng, seed_cell);
        zone_mask.assign(cells, 0);
        for (std::size_t z : zone) zone_mask[z] = 1;
    }

    std::int64_t next_object_id = 0;
    for (std::size_t c = 0; c < cfg.num_categories; ++c) {
        Rng cat_rng(derive_seed(cfg.seed, 0x636174ULL, c));
        std::vector<double> direction = cat_rng.unit_vector(D);
        std::vector<std::size_t> signal_cells =
            connected_patch_impl(geometry, cfg.informative_cells, cat_rng, zone_mask);
        std::vector<double> weight = patch_footprint(geometry, signal_cells, cfg.signal_falloff);

        // Signal cells hold the category signal; nearby views blend toward it
        // (the preserved overlap between neighboring views). No signal means
        // no footprint.
        std::vector<double> prototype = background;
        if (cfg.signal_scale > 0.0) {
            for (std::size_t cell = 0; cell < cells; ++cell) {
                double w = weight[cell];
                if (w == 0.0) continue;
                for (std::size_t d = 0; d < D; ++d)
                    prototype[cell * D + d] = (1.0 - w) * background[cell * D + d] +
                                              w * cfg.signal_scale * direction[d];
            }
        }

        for (std::size_t i = 0; i < cfg.instances_per_category; ++i) {
            Rng inst_rng(derive_seed(cfg.seed, 0x696e7374ULL, c, i));
            ObjectInstance obj;
            obj.object_id = next_object_id++;
            obj.category_id = static_cast<std::int64_t>(c);
            obj.grid = ViewGrid{geometry, prototype};
            for (auto& x : obj.grid.features) x += inst_rng.normal(0.0, cfg.instance_noise);
            if (cfg.instance_signal_cells > 0 && cfg.signal_scale > 0.0) {
                // Instance marks are point signals: subtle differences hide
                // in specific views with no overlap bleed.
                std::vector<double> inst_dir = inst_rng.unit_vector(D);
                auto inst_cells = random_connected_patch(geometry, cfg.instance_signal_cells, inst_rng);
                for (std::size_t cell : inst_cells)
                    for (std::size_t d = 0; d < D; ++d)
                        obj.grid.features[cell * D + d] += cfg.signal_scale * inst_dir[d];
            }
            ds.objects.push_back(std::move(obj));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset file: "MVGRID" magic, u16 version, geometry, generator config echo,
// u8 payload flag, then per-object records. All integers/reals little-endian.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'M', 'V', 'G', 'R', 'I', 'D'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("dataset file truncated");
    return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path, bool header_only) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint32_t>(ds.geometry.elevations));
    write_pod(os, static_cast<std::uint32_t>(ds.geometry.azimuths));
    write_pod(os, static_cast<std::uint32_t>(ds.geometry.feature_dim));
    write_pod(os, static_cast<std::uint64_t>(ds.config.num_categories));
    write_pod(os, static_cast<std::uint64_t>(ds.config.instances_per_category));
    write_pod(os, static_cast<std::uint64_t>(ds.config.informative_cells));
    write_pod(os, ds.config.signal_scale);
    write_pod(os, ds.config.instance_noise);
    write_pod(os, ds.config.background_noise);
    write_pod(os, static_cast<std::uint64_t>(ds.config.instance_signal_cells));
    write_pod(os, static_cast<std::uint64_t>(ds.config.informative_zone));
    write_pod(os, ds.config.signal_falloff);
    write_pod(os, static_cast<std::int32_t>(ds.config.smoothing_radius));
    write_pod(os, ds.config.seed);
    write_pod(os, static_cast<std::uint8_t>(header_only ? 1 : 0));
    if (!header_only) {
        write_pod(os, static_cast<std::uint64_t>(ds.objects.size()));
        for (const auto& obj : ds.objects) {
            write_pod(os, obj.object_id);
            write_pod(os, obj.category_id);
            os.write(reinterpret_cast<const char*>(obj.grid.features.data()),
                     static_cast<std::streamsize>(obj.grid.features.size() * sizeof(double)));
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[6] = {};
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw VersionError("not a view-grid dataset file (bad magic): " + path);
    auto version = read_pod<std::uint16_t>(is);
    if (version != kVersion)
        throw VersionError("unsupported dataset format version " + std::to_string(version));

    GridGeometry g;
    g.elevations = read_pod<std::uint32_t>(is);
    g.azimuths = read_pod<std::uint32_t>(is);
    g.feature_dim = read_pod<std::uint32_t>(is);
    GeneratorConfig cfg;
    cfg.num_categories = read_pod<std::uint64_t>(is);
    cfg.instances_per_category = read_pod<std::uint64_t>(is);
    cfg.informative_cells = read_pod<std::uint64_t>(is);
    cfg.signal_scale = read_pod<double>(is);
    cfg.instance_noise = read_pod<double>(is);
    cfg.background_noise = read_pod<double>(is);
    cfg.instance_signal_cells = read_pod<std::uint64_t>(is);
    cfg.informative_zone = read_pod<std::uint64_t>(is);
    cfg.signal_falloff = read_pod<double>(is);
    cfg.smoothing_radius = read_pod<std::int32_t>(is);
    cfg.seed = read_pod<std::uint64_t>(is);
    auto header_only = read_pod<std::uint8_t>(is);

    if (header_only) return generate_dataset(cfg, g);

    Dataset ds;
    ds.geometry = g;
    ds.config = cfg;
    auto count = read_pod<std::uint64_t>(is);
    std::size_t stride = g.cells() * g.feature_dim;
    ds.objects.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        ObjectInstance obj;
        obj.object_id = read_pod<std::int64_t>(is);
        obj.category_id = read_pod<std::int64_t>(is);
        obj.grid.geometry = g;
        obj.grid.features.resize(stride);
        is.read(reinterpret_cast<char*>(obj.grid.features.data()),
                static_cast<std::streamsize>(stride * sizeof(double)));
        if (!is) throw ParseError("dataset file truncated in object records");
        ds.objects.push_back(std::move(obj));
    }
    return ds;
}

}  // namespace mv
