#pragma once

#include <ostream>
#include <string>

#include "metaview/config.hpp"

namespace mv {

// Everything a run needs, resolved from an ExperimentConfig.
struct BenchmarkSetup {
    Dataset dataset;
    SplitSpec splits;
    ActionSet actions;
    AgentDims dims;
    MetaConfig meta;
    TaskFamily family = TaskFamily::category;
    PretrainConfig pretrain;
};

GeneratorConfig generator_config(const ExperimentConfig& cfg);
GridGeometry grid_geometry(const ExperimentConfig& cfg);
MetaConfig meta_config(const ExperimentConfig& cfg);

// Builds the setup; generates the dataset from the config unless one is
// supplied. Label splits shuffle the label space with the config seed, then
// partition into train/val/test counts.
BenchmarkSetup build_setup(const ExperimentConfig& cfg, const Dataset* preloaded = nullptr);

struct MethodRun {
    Method method = Method::metaview;
    TrainResult train;
    EvalResult test;
    double pretrain_accuracy = 0.0;  // pretrain-finetune only
};

// Train + MetaTest for any method, all streams derived from cfg.seed.
MethodRun run_method(Method method, const BenchmarkSetup& setup, const ExperimentConfig& cfg,
                     std::ostream* log = nullptr);

// MetaTest only, for a given parameter set.
EvalResult test_params(Method method, const ParamSet& params, const BenchmarkSetup& setup,
                       const ExperimentConfig& cfg, std::size_t num_tasks);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history,
                       const std::string& method = "");
void write_report(const std::string& txt_path, const std::string& json_path,
                  const EvalResult& result, const ExperimentConfig& cfg,
                  const std::string& method);

// Textual trajectory listing: the grid with visited cells marked by step.
void dump_trajectories(std::ostream& os, const ParamSet& params, const BenchmarkSetup& setup,
                       const ExperimentConfig& cfg, std::size_t num_tasks);

}  // namespace mv
