#include "metaview/config.hpp"

#include <cstdio>
#include <fstream>

#include "metaview/errors.hpp"

namespace mv {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("key '" + key + "' expects a real number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ParseError("key '" + key + "' expects on/off, got '" + v + "'");
}

std::string fmt_f64(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

TaskFamily family_from_string(const std::string& name) {
    if (name == "category") return TaskFamily::category;
    if (name == "intra-instance" || name == "intra") return TaskFamily::intra_instance;
    if (name == "inter-instance" || name == "inter") return TaskFamily::inter_instance;
    throw ParseError("key 'family' expects category|intra-instance|inter-instance, got '" + name + "'");
}

EntropyForm entropy_form_from_string(const std::string& name) {
    if (name == "full") return EntropyForm::full;
    if (name == "sampled") return EntropyForm::sampled;
    throw ParseError("key 'entropy_form' expects full|sampled, got '" + name + "'");
}

void apply_config_entry(ExperimentConfig& c, const std::string& key, const std::string& v) {
    if (key == "elevations") c.elevations = parse_u64(key, v);
    else if (key == "azimuths") c.azimuths = parse_u64(key, v);
    else if (key == "feature_dim") c.feature_dim = parse_u64(key, v);
    else if (key == "num_categories") c.num_categories = parse_u64(key, v);
    else if (key == "instances_per_category") c.instances_per_category = parse_u64(key, v);
    else if (key == "informative_cells") c.informative_cells = parse_u64(key, v);
    else if (key == "signal_scale") c.signal_scale = parse_f64(key, v);
    else if (key == "instance_noise") c.instance_noise = parse_f64(key, v);
    else if (key == "background_noise") c.background_noise = parse_f64(key, v);
    else if (key == "instance_signal_cells") c.instance_signal_cells = parse_u64(key, v);
    else if (key == "signal_falloff") c.signal_falloff = parse_f64(key, v);
    else if (key == "informative_zone") c.informative_zone = parse_u64(key, v);
    else if (key == "smoothing_radius") c.smoothing_radius = static_cast<int>(parse_i64(key, v));
    else if (key == "hidden") c.hidden = parse_u64(key, v);
    else if (key == "action_embed") c.action_embed = parse_u64(key, v);
    else if (key == "radius_e") c.radius_e = static_cast<int>(parse_i64(key, v));
    else if (key == "radius_a") c.radius_a = static_cast<int>(parse_i64(key, v));
    else if (key == "family") { family_from_string(v); c.family = v; }
    else if (key == "ways") c.ways = parse_u64(key, v);
    else if (key == "shots") c.shots = parse_u64(key, v);
    else if (key == "query_per_class") c.query_per_class = parse_u64(key, v);
    else if (key == "glimpses") c.glimpses = parse_u64(key, v);
    else if (key == "inner_lr") c.inner_lr = parse_f64(key, v);
    else if (key == "outer_lr") c.outer_lr = parse_f64(key, v);
    else if (key == "inner_steps") c.inner_steps = parse_u64(key, v);
    else if (key == "tasks_per_batch") c.tasks_per_batch = parse_u64(key, v);
    else if (key == "iterations") c.iterations = parse_u64(key, v);
    else if (key == "epochs") c.epochs = parse_u64(key, v);
    else if (key == "val_tasks") c.val_tasks = parse_u64(key, v);
    else if (key == "test_tasks") c.test_tasks = parse_u64(key, v);
    else if (key == "lambda1") c.lambda1 = parse_f64(key, v);
    else if (key == "lambda2") c.lambda2 = parse_f64(key, v);
    else if (key == "entropy_form") { entropy_form_from_string(v); c.entropy_form = v; }
    else if (key == "first_order") c.first_order = parse_bool(key, v);
    else if (key == "reward_baseline") c.reward_baseline = parse_bool(key, v);
    else if (key == "outer_optimizer") {
        if (v != "sgd" && v != "adam") throw ParseError("key 'outer_optimizer' expects sgd|adam, got '" + v + "'");
        c.outer_optimizer = v;
    }
    else if (key == "train_labels") c.train_labels = parse_u64(key, v);
    else if (key == "val_labels") c.val_labels = parse_u64(key, v);
    else if (key == "test_labels") c.test_labels = parse_u64(key, v);
    else if (key == "intra_category") c.intra_category = parse_u64(key, v);
    else if (key == "pretrain_iterations") c.pretrain_iterations = parse_u64(key, v);
    else if (key == "pretrain_batch") c.pretrain_batch = parse_u64(key, v);
    else if (key == "pretrain_lr") c.pretrain_lr = parse_f64(key, v);
    else if (key == "finetune_steps") c.finetune_steps = parse_u64(key, v);
    else if (key == "finetune_lr") c.finetune_lr = parse_f64(key, v);
    else if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "timing") c.timing = parse_bool(key, v);
    else throw ParseError("unknown key '" + key + "'");
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        std::string trimmed = line.substr(begin, end - begin + 1);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
        std::string key = trimmed.substr(0, eq);
        std::string value = trimmed.substr(eq + 1);
        auto strip = [](std::string& s) {
            std::size_t b = s.find_first_not_of(" \t");
            std::size_t e = s.find_last_not_of(" \t");
            s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        strip(key);
        strip(value);
        try {
            apply_config_entry(base, key, value);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return base;
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    auto add = [&](const char* k, const std::string& v) { out.emplace_back(k, v); };
    add("elevations", std::to_string(c.elevations));
    add("azimuths", std::to_string(c.azimuths));
    add("feature_dim", std::to_string(c.feature_dim));
    add("num_categories", std::to_string(c.num_categories));
    add("instances_per_category", std::to_string(c.instances_per_category));
    add("informative_cells", std::to_string(c.informative_cells));
    add("signal_scale", fmt_f64(c.signal_scale));
    add("instance_noise", fmt_f64(c.instance_noise));
    add("background_noise", fmt_f64(c.background_noise));
    add("instance_signal_cells", std::to_string(c.instance_signal_cells));
    add("informative_zone", std::to_string(c.informative_zone));
    add("signal_falloff", fmt_f64(c.signal_falloff));
    add("smoothing_radius", std::to_string(c.smoothing_radius));
    add("hidden", std::to_string(c.hidden));
    add("action_embed", std::to_string(c.action_embed));
    add("radius_e", std::to_string(c.radius_e));
    add("radius_a", std::to_string(c.radius_a));
    add("family", c.family);
    add("ways", std::to_string(c.ways));
    add("shots", std::to_string(c.shots));
    add("query_per_class", std::to_string(c.query_per_class));
    add("glimpses", std::to_string(c.glimpses));
    add("inner_lr", fmt_f64(c.inner_lr));
    add("outer_lr", fmt_f64(c.outer_lr));
    add("inner_steps", std::to_string(c.inner_steps));
    add("tasks_per_batch", std::to_string(c.tasks_per_batch));
    add("iterations", std::to_string(c.iterations));
    add("epochs", std::to_string(c.epochs));
    add("val_tasks", std::to_string(c.val_tasks));
    add("test_tasks", std::to_string(c.test_tasks));
    add("lambda1", fmt_f64(c.lambda1));
    add("lambda2", fmt_f64(c.lambda2));
    add("entropy_form", c.entropy_form);
    add("first_order", c.first_order ? "on" : "off");
    add("reward_baseline", c.reward_baseline ? "on" : "off");
    add("outer_optimizer", c.outer_optimizer);
    add("train_labels", std::to_string(c.train_labels));
    add("val_labels", std::to_string(c.val_labels));
    add("test_labels", std::to_string(c.test_labels));
    add("intra_category", std::to_string(c.intra_category));
    add("pretrain_iterations", std::to_string(c.pretrain_iterations));
    add("pretrain_batch", std::to_string(c.pretrain_batch));
    add("pretrain_lr", fmt_f64(c.pretrain_lr));
    add("finetune_steps", std::to_string(c.finetune_steps));
    add("finetune_lr", fmt_f64(c.finetune_lr));
    add("seed", std::to_string(c.seed));
    add("timing", c.timing ? "on" : "off");
    return out;
}

}  // namespace mv
