#pragma once

#include <filesystem>
#include <string>

#include "airsum/decoder.hpp"
#include "airsum/feel.hpp"
#include "airsum/trainer.hpp"

namespace airsum::cli {

// Experiment configuration bound from a JSON document. Unknown keys are
// rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int threads = 0;
  feel::FeelConfig feel;
  trainer::TrainConfig trainer;
  double snr_db = 10.0;
  decoder::Mode decoder_mode = decoder::Mode::learned;
  int decoder_layers = 6;
  double prior_ka_mean = 0.0;  // 0 = derive
  aggregate::AggregationRule rule = aggregate::AggregationRule::mean();
  std::filesystem::path output_dir = "out";
};

ExperimentConfig load_config(const std::filesystem::path& path);

// Echo of the fully resolved configuration (defaults materialised), written
// next to each run's outputs so results are reproducible from artifacts.
std::string resolved_config_json(const ExperimentConfig& config);

void write_resolved_config(const ExperimentConfig& config,
                           const std::filesystem::path& path);

}  // namespace airsum::cli
