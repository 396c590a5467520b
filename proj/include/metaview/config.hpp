#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaview/baselines.hpp"
#include "metaview/meta.hpp"

namespace mv {

// Flat resolved configuration behind the CLI: plain key=value text files,
// flags override file values, unknown keys are rejected.
struct ExperimentConfig {
    // geometry
    std::size_t elevations = 5;
    std::size_t azimuths = 6;
    std::size_t feature_dim = 16;

    // generator
    std::size_t num_categories = 40;
    std::size_t instances_per_category = 12;
    std::size_t informative_cells = 3;
    double signal_scale = 2.0;
    double instance_noise = 0.25;
    double background_noise = 0.25;
    std::size_t instance_signal_cells = 2;
    std::size_t informative_zone = 8;
    double signal_falloff = 0.6;
    int smoothing_radius = 0;

    // agent
    std::size_t hidden = 32;
    std::size_t action_embed = 8;
    int radius_e = 1;
    int radius_a = 1;

    // tasks + meta loop
    std::string family = "category";  // category | intra-instance | inter-instance
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t query_per_class = 1;
    std::size_t glimpses = 3;
    double inner_lr = 1e-3;
    double outer_lr = 1e-3;
    std::size_t inner_steps = 1;
    std::size_t tasks_per_batch = 2;
    std::size_t iterations = 500;
    std::size_t epochs = 100;
    std::size_t val_tasks = 100;
    std::size_t test_tasks = 600;
    double lambda1 = 10.0;
    double lambda2 = 0.003;
    std::string entropy_form = "full";     // full | sampled
    bool first_order = true;
    bool reward_baseline = false;
    std::string outer_optimizer = "sgd";   // sgd | adam

    // label splits (counts; labels are shuffled by the seed then partitioned)
    std::size_t train_labels = 24;
    std::size_t val_labels = 6;
    std::size_t test_labels = 10;
    std::size_t intra_category = 0;  // category whose instances intra-instance uses

    // pretrain-finetune baseline
    std::size_t pretrain_iterations = 400;
    std::size_t pretrain_batch = 10;
    double pretrain_lr = 1e-3;
    std::size_t finetune_steps = 400;
    double finetune_lr = 1e-3;

    // misc
    std::uint64_t seed = 0;
    bool timing = false;  // real wall_seconds in metrics (breaks byte-identical runs)
};

// Apply `key=value`; throws ParseError naming the key on bad values or
// unknown keys.
void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Parse a key=value file on top of the given defaults. Blank lines and lines
// starting with '#' are ignored. Errors carry the line number.
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

// Canonical ordered key=value dump (reports, config echo).
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

TaskFamily family_from_string(const std::string& name);
EntropyForm entropy_form_from_string(const std::string& name);

}  // namespace mv
