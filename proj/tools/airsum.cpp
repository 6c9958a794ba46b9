// Command-line front end: dataset collection, decoder training, FEEL
// evaluation sweeps, and decoder-only benchmarks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "airsum/bench.hpp"
#include "airsum/error.hpp"
#include "airsum/feel.hpp"
#include "airsum/parallel.hpp"
#include "airsum/trainer.hpp"
#include "config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace airsum;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool verbose = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", args.out, "output path")->required();
  auto* seed = cmd->add_option("--seed", args.seed, "override the config seed");
  seed->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads,
                  "worker threads (default: AIRSUM_THREADS or hardware)");
  cmd->add_flag("--verbose", args.verbose, "diagnostic output on stderr");
}

cli::ExperimentConfig resolve(const CommonArgs& args) {
  cli::ExperimentConfig cfg = cli::load_config(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.feel.seed = args.seed;
    cfg.trainer.seed = args.seed;
  }
  if (args.threads > 0) {
    cfg.threads = args.threads;
    cfg.feel.threads = args.threads;
  }
  return cfg;
}

std::vector<double> parse_snr_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("bad SNR value: " + item);
    }
  }
  if (out.empty()) throw ConfigError("empty SNR list");
  return out;
}

void ensure_parent_dir(const fs::path& path) {
  fs::path dir = path.parent_path();
  if (dir.empty()) return;
  if (!fs::exists(dir)) {
    throw IoError("output directory does not exist: " + dir.string());
  }
}

int cmd_collect(const CommonArgs& args) {
  cli::ExperimentConfig cfg = resolve(args);
  fs::path out(args.out);
  ensure_parent_dir(out);
  num::RngStream rng(cfg.seed, "collect");
  std::vector<trainer::RoundRecord> records = trainer::collect_dataset(cfg.feel, rng);
  trainer::save_dataset(records, out);
  cli::write_resolved_config(cfg, out.string() + ".resolved.json");
  std::size_t slots = 0;
  for (const auto& rec : records) {
    slots += trainer::slots_per_record(rec, cfg.trainer.fragment_dim);
  }
  std::cout << "collected " << records.size() << " rounds (" << slots
            << " fragment slots) -> " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& resume_path) {
  cli::ExperimentConfig cfg = resolve(args);
  fs::path out(args.out);
  ensure_parent_dir(out);
  std::vector<trainer::RoundRecord> records = trainer::load_dataset(data_path);

  trainer::Checkpoint resume;
  const trainer::Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = trainer::load_checkpoint(resume_path);
    resume_ptr = &resume;
  }

  fs::path log_path = out.string() + ".train_log.csv";
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log: " + log_path.string());
  log << "epoch,train_loss,val_loss,lr\n";
  trainer::EpochSink sink = [&log, &args](const trainer::EpochStats& stats) {
    log << stats.epoch << ',' << stats.train_loss << ',' << stats.val_loss << ','
        << stats.learning_rate << '\n';
    log.flush();
    if (args.verbose) {
      std::cerr << "epoch " << stats.epoch << " train " << stats.train_loss << " val "
                << stats.val_loss << " lr " << stats.learning_rate << '\n';
    }
  };

  trainer::TrainResult result = trainer::train(records, cfg.trainer, sink, resume_ptr);
  trainer::save_checkpoint(result.best, out);
  cli::write_resolved_config(cfg, out.string() + ".resolved.json");
  if (result.nan_abort) {
    std::cerr << "training aborted on a non-finite loss; wrote the last good checkpoint\n";
    return kExitNumeric;
  }
  std::cout << "best epoch " << result.best.epoch << " val_loss " << result.best.val_loss
            << " -> " << out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& snr_list, int seeds, const std::string& rule_text,
             const std::string& mode_text) {
  cli::ExperimentConfig cfg = resolve(args);
  if (!rule_text.empty()) cfg.rule = aggregate::AggregationRule::parse(rule_text);
  if (!mode_text.empty()) cfg.decoder_mode = decoder::mode_from_name(mode_text);
  std::vector<double> snrs =
      snr_list.empty() ? std::vector<double>{cfg.snr_db} : parse_snr_list(snr_list);

  feel::CommModel comm;
  if (cfg.decoder_mode == decoder::Mode::learned) {
    if (checkpoint_path.empty()) {
      throw ConfigError("eval in learned mode requires --checkpoint");
    }
    trainer::Checkpoint ck = trainer::load_checkpoint(checkpoint_path);
    comm = ck.comm_model();
    cfg.trainer.codebook_size = ck.config.codebook_size;
    cfg.feel.quant_codebook_size = ck.config.codebook_size;
    cfg.feel.fragment_dim = ck.config.fragment_dim;
  } else {
    double prior = cfg.prior_ka_mean > 0.0
                       ? cfg.prior_ka_mean
                       : 0.5 * (cfg.feel.ka_min + cfg.feel.ka_max);
    comm = feel::CommModel::fixed_baseline(cfg.trainer.codebook_size,
                                           cfg.trainer.codeword_length,
                                           cfg.decoder_layers, prior, cfg.seed);
  }

  fs::path out_dir(args.out);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  fs::path csv_path = out_dir / "metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write metrics: " + csv_path.string());
  feel::write_metrics_header(csv);

  for (double snr : snrs) {
    for (int s = 0; s < seeds; ++s) {
      feel::FeelConfig run_cfg = cfg.feel;
      run_cfg.uplink.kind = feel::UplinkConfig::Kind::digital_ota;
      run_cfg.uplink.snr_db = snr;
      run_cfg.uplink.rule = cfg.rule;
      run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(s);
      std::ostringstream rows;
      feel::RunHooks hooks;
      hooks.metrics_csv = &rows;
      hooks.verbose = args.verbose;
      hooks.rule_label = cfg.rule.name();
      hooks.snr_db_label = snr;
      hooks.mode_label = decoder::mode_name(cfg.decoder_mode);
      hooks.seed_label = run_cfg.seed;
      feel::RunResult result = feel::run(run_cfg, &comm, hooks);
      // strip the per-run header, keep the rows
      std::string text = rows.str();
      csv << text.substr(text.find('\n') + 1);
      csv.flush();
      std::cout << "snr " << snr << " seed " << run_cfg.seed << " final_acc "
                << result.final_test_accuracy() << (result.diverged ? " (diverged)" : "")
                << '\n';
    }
  }
  cli::write_resolved_config(cfg, (out_dir / "resolved.json").string());
  std::cout << "metrics -> " << csv_path.string() << '\n';
  return kExitOk;
}

int cmd_bench(const CommonArgs& args, const std::string& data_path,
              const std::string& checkpoint_path, const std::string& snr_list,
              const std::string& mode_text, std::size_t max_rounds) {
  cli::ExperimentConfig cfg = resolve(args);
  if (!mode_text.empty()) cfg.decoder_mode = decoder::mode_from_name(mode_text);
  std::vector<double> snrs =
      snr_list.empty() ? std::vector<double>{cfg.snr_db} : parse_snr_list(snr_list);
  std::vector<trainer::RoundRecord> records = trainer::load_dataset(data_path);

  feel::CommModel comm;
  bench::DecodeBenchConfig bench_cfg;
  bench_cfg.fragment_dim = cfg.trainer.fragment_dim;
  bench_cfg.quant_codebook_size = cfg.trainer.codebook_size;
  bench_cfg.popularity_ordering = cfg.trainer.popularity_ordering;
  bench_cfg.curvature_aware = cfg.trainer.curvature_aware;
  bench_cfg.noise_seed = cfg.seed;
  bench_cfg.threads = cfg.threads;
  bench_cfg.max_rounds = max_rounds;
  bench_cfg.verbose = args.verbose;
  if (cfg.decoder_mode == decoder::Mode::learned) {
    if (checkpoint_path.empty()) {
      throw ConfigError("bench in learned mode requires --checkpoint");
    }
    trainer::Checkpoint ck = trainer::load_checkpoint(checkpoint_path);
    comm = ck.comm_model();
    bench_cfg.fragment_dim = ck.config.fragment_dim;
    bench_cfg.quant_codebook_size = ck.config.codebook_size;
    bench_cfg.popularity_ordering = ck.config.popularity_ordering;
  } else {
    double prior = cfg.prior_ka_mean > 0.0
                       ? cfg.prior_ka_mean
                       : 0.5 * (cfg.feel.ka_min + cfg.feel.ka_max);
    comm = feel::CommModel::fixed_baseline(cfg.trainer.codebook_size,
                                           cfg.trainer.codeword_length,
                                           cfg.decoder_layers, prior, cfg.seed);
  }

  fs::path out(args.out);
  ensure_parent_dir(out);
  std::ofstream csv(out);
  if (!csv) throw IoError("cannot write benchmark csv: " + out.string());
  csv << "snr_db,mode,accuracy,ka_mae,slots,rounds\n";
  for (double snr : snrs) {
    bench_cfg.snr_db = snr;
    bench::DecodeBenchResult result = bench::run_decode_bench(records, comm, bench_cfg);
    csv << snr << ',' << decoder::mode_name(cfg.decoder_mode) << ',' << result.accuracy
        << ',' << result.ka_mae << ',' << result.slots << ',' << result.rounds << '\n';
    std::cout << "snr " << snr << " acc " << result.accuracy << " mae " << result.ka_mae
              << '\n';
  }
  cli::write_resolved_config(cfg, out.string() + ".resolved.json");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"airsum: learned digital over-the-air aggregation simulator"};
  app.require_subcommand(1);

  CommonArgs collect_args, train_args, eval_args, bench_args;
  std::string train_data, train_resume;
  std::string eval_checkpoint, eval_snrs, eval_rule, eval_mode;
  int eval_seeds = 1;
  std::string bench_data, bench_checkpoint, bench_snrs, bench_mode;
  std::size_t bench_max_rounds = 0;

  CLI::App* collect = app.add_subcommand("collect", "run the PA loop and store round records");
  add_common(collect, collect_args);

  CLI::App* train = app.add_subcommand("train", "pre-train the decoder and URA codebook");
  add_common(train, train_args);
  train->add_option("--data", train_data, "collected dataset")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");

  CLI::App* eval = app.add_subcommand("eval", "FEEL evaluation sweep over SNRs");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint");
  eval->add_option("--snr", eval_snrs, "comma-separated SNR list in dB");
  eval->add_option("--seeds", eval_seeds, "number of seeds per SNR");
  eval->add_option("--rule", eval_rule, "aggregation rule, e.g. trimmed_mean:0.8");
  eval->add_option("--mode", eval_mode, "decoder mode: learned or fixed");

  CLI::App* bench_cmd = app.add_subcommand("bench", "decoder-only benchmark on a dataset");
  add_common(bench_cmd, bench_args);
  bench_cmd->add_option("--data", bench_data, "collected dataset")->required();
  bench_cmd->add_option("--checkpoint", bench_checkpoint, "trained checkpoint");
  bench_cmd->add_option("--snr", bench_snrs, "comma-separated SNR list in dB");
  bench_cmd->add_option("--mode", bench_mode, "decoder mode: learned or fixed");
  bench_cmd->add_option("--max-rounds", bench_max_rounds, "cap on benchmark rounds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (collect->parsed()) return cmd_collect(collect_args);
    if (train->parsed()) return cmd_train(train_args, train_data, train_resume);
    if (eval->parsed()) {
      return cmd_eval(eval_args, eval_checkpoint, eval_snrs, eval_seeds, eval_rule,
                      eval_mode);
    }
    if (bench_cmd->parsed()) {
      return cmd_bench(bench_args, bench_data, bench_checkpoint, bench_snrs, bench_mode,
                       bench_max_rounds);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const VersionMismatch& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}
