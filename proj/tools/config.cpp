#include "config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "airsum/error.hpp"

namespace airsum::cli {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError("expected an object at " + where);
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "': " + e.what());
  }
}

void parse_task(const json& obj, feel::TaskSpec& task) {
  check_keys(obj, {"input_dim", "hidden", "classes"}, "feel.task");
  read(obj, "input_dim", task.input_dim);
  read(obj, "hidden", task.hidden);
  read(obj, "classes", task.classes);
}

void parse_feel(const json& obj, feel::FeelConfig& cfg) {
  check_keys(obj,
             {"total_devices", "ka_min", "ka_max", "rounds", "local_epochs",
              "local_batch", "local_lr", "global_lr", "iid_fraction",
              "corruption_fraction", "corruption_noise_scale", "error_feedback", "include_bs", "curvature_aware",
              "popularity_ordering", "task", "device_dataset_size", "bs_dataset_size",
              "eval_dataset_size", "class_scale", "fragment_dim", "quant_codebook_size"},
             "feel");
  read(obj, "total_devices", cfg.total_devices);
  read(obj, "ka_min", cfg.ka_min);
  read(obj, "ka_max", cfg.ka_max);
  read(obj, "rounds", cfg.rounds);
  read(obj, "local_epochs", cfg.local_epochs);
  read(obj, "local_batch", cfg.local_batch);
  read(obj, "local_lr", cfg.local_lr);
  read(obj, "global_lr", cfg.global_lr);
  read(obj, "iid_fraction", cfg.iid_fraction);
  read(obj, "corruption_fraction", cfg.corruption_fraction);
  read(obj, "corruption_noise_scale", cfg.corruption_noise_scale);
  read(obj, "error_feedback", cfg.error_feedback);
  read(obj, "include_bs", cfg.include_bs);
  read(obj, "curvature_aware", cfg.curvature_aware);
  read(obj, "popularity_ordering", cfg.popularity_ordering);
  read(obj, "device_dataset_size", cfg.device_dataset_size);
  read(obj, "bs_dataset_size", cfg.bs_dataset_size);
  read(obj, "eval_dataset_size", cfg.eval_dataset_size);
  read(obj, "class_scale", cfg.class_scale);
  read(obj, "fragment_dim", cfg.fragment_dim);
  read(obj, "quant_codebook_size", cfg.quant_codebook_size);
  if (obj.contains("task")) parse_task(obj.at("task"), cfg.task);
}

void parse_trainer(const json& obj, trainer::TrainConfig& cfg) {
  check_keys(obj,
             {"train_samples", "val_samples", "test_samples", "batch_size", "max_epochs",
              "patience", "tolerance", "learning_rate", "lr_halving_patience",
              "lambda_l1", "lambda_w", "lambda_k", "lambda_q", "quant_loss_enabled",
              "snr_min_db", "snr_max_db", "grad_clip_norm", "layers", "codebook_size", "codeword_length",
              "fragment_dim", "popularity_ordering", "curvature_aware", "codebook_mode",
              "prior_ka_mean"},
             "trainer");
  read(obj, "train_samples", cfg.train_samples);
  read(obj, "val_samples", cfg.val_samples);
  read(obj, "test_samples", cfg.test_samples);
  read(obj, "batch_size", cfg.batch_size);
  read(obj, "max_epochs", cfg.max_epochs);
  read(obj, "patience", cfg.patience);
  read(obj, "tolerance", cfg.tolerance);
  read(obj, "learning_rate", cfg.learning_rate);
  read(obj, "lr_halving_patience", cfg.lr_halving_patience);
  read(obj, "lambda_l1", cfg.lambda_l1);
  read(obj, "lambda_w", cfg.lambda_w);
  read(obj, "lambda_k", cfg.lambda_k);
  read(obj, "lambda_q", cfg.lambda_q);
  read(obj, "quant_loss_enabled", cfg.quant_loss_enabled);
  read(obj, "snr_min_db", cfg.snr_min_db);
  read(obj, "snr_max_db", cfg.snr_max_db);
  read(obj, "grad_clip_norm", cfg.grad_clip_norm);
  read(obj, "layers", cfg.layers);
  read(obj, "codebook_size", cfg.codebook_size);
  read(obj, "codeword_length", cfg.codeword_length);
  read(obj, "fragment_dim", cfg.fragment_dim);
  read(obj, "popularity_ordering", cfg.popularity_ordering);
  read(obj, "curvature_aware", cfg.curvature_aware);
  read(obj, "prior_ka_mean", cfg.prior_ka_mean);
  if (obj.contains("codebook_mode")) {
    cfg.codebook_mode = ura::mode_from_name(obj.at("codebook_mode").get<std::string>());
  }
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  check_keys(doc, {"seed", "threads", "feel", "channel", "decoder", "trainer",
                   "aggregate", "output"},
             "config root");
  ExperimentConfig cfg;
  read(doc, "seed", cfg.seed);
  read(doc, "threads", cfg.threads);
  if (doc.contains("feel")) parse_feel(doc.at("feel"), cfg.feel);
  if (doc.contains("trainer")) parse_trainer(doc.at("trainer"), cfg.trainer);
  if (doc.contains("channel")) {
    check_keys(doc.at("channel"), {"snr_db"}, "channel");
    read(doc.at("channel"), "snr_db", cfg.snr_db);
  }
  if (doc.contains("decoder")) {
    check_keys(doc.at("decoder"), {"layers", "mode", "prior_ka_mean"}, "decoder");
    read(doc.at("decoder"), "layers", cfg.decoder_layers);
    read(doc.at("decoder"), "prior_ka_mean", cfg.prior_ka_mean);
    if (doc.at("decoder").contains("mode")) {
      cfg.decoder_mode =
          decoder::mode_from_name(doc.at("decoder").at("mode").get<std::string>());
    }
  }
  if (doc.contains("aggregate")) {
    check_keys(doc.at("aggregate"), {"rule"}, "aggregate");
    if (doc.at("aggregate").contains("rule")) {
      cfg.rule =
          aggregate::AggregationRule::parse(doc.at("aggregate").at("rule").get<std::string>());
    }
  }
  if (doc.contains("output")) {
    check_keys(doc.at("output"), {"dir"}, "output");
    std::string dir;
    read(doc.at("output"), "dir", dir);
    if (!dir.empty()) cfg.output_dir = dir;
  }
  // keep the trainer and feel communication geometry coherent
  cfg.trainer.seed = cfg.seed;
  cfg.trainer.layers = cfg.decoder_layers;
  if (cfg.feel.fragment_dim != cfg.trainer.fragment_dim) {
    cfg.feel.fragment_dim = cfg.trainer.fragment_dim;
  }
  if (cfg.feel.quant_codebook_size != cfg.trainer.codebook_size) {
    cfg.feel.quant_codebook_size = cfg.trainer.codebook_size;
  }
  cfg.feel.seed = cfg.seed;
  cfg.feel.threads = cfg.threads;
  return cfg;
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["threads"] = cfg.threads;
  doc["feel"] = {{"total_devices", cfg.feel.total_devices},
                 {"ka_min", cfg.feel.ka_min},
                 {"ka_max", cfg.feel.ka_max},
                 {"rounds", cfg.feel.rounds},
                 {"local_epochs", cfg.feel.local_epochs},
                 {"local_batch", cfg.feel.local_batch},
                 {"local_lr", cfg.feel.local_lr},
                 {"global_lr", cfg.feel.global_lr},
                 {"iid_fraction", cfg.feel.iid_fraction},
                 {"corruption_fraction", cfg.feel.corruption_fraction},
                 {"corruption_noise_scale", cfg.feel.corruption_noise_scale},
                 {"error_feedback", cfg.feel.error_feedback},
                 {"include_bs", cfg.feel.include_bs},
                 {"curvature_aware", cfg.feel.curvature_aware},
                 {"popularity_ordering", cfg.feel.popularity_ordering},
                 {"device_dataset_size", cfg.feel.device_dataset_size},
                 {"bs_dataset_size", cfg.feel.bs_dataset_size},
                 {"eval_dataset_size", cfg.feel.eval_dataset_size},
                 {"class_scale", cfg.feel.class_scale},
                 {"fragment_dim", cfg.feel.fragment_dim},
                 {"quant_codebook_size", cfg.feel.quant_codebook_size},
                 {"task",
                  {{"input_dim", cfg.feel.task.input_dim},
                   {"hidden", cfg.feel.task.hidden},
                   {"classes", cfg.feel.task.classes}}}};
  doc["channel"] = {
      {"snr_db", cfg.snr_db},
      {"snr_convention",
       "SNR = total received signal power / noise power; sigma^2 = ka / (l * 10^(snr_db/10)) "
       "per channel use with unit-norm codewords"}};
  doc["decoder"] = {{"layers", cfg.decoder_layers},
                    {"mode", decoder::mode_name(cfg.decoder_mode)},
                    {"prior_ka_mean", cfg.prior_ka_mean}};
  doc["trainer"] = {{"train_samples", cfg.trainer.train_samples},
                    {"val_samples", cfg.trainer.val_samples},
                    {"test_samples", cfg.trainer.test_samples},
                    {"batch_size", cfg.trainer.batch_size},
                    {"max_epochs", cfg.trainer.max_epochs},
                    {"patience", cfg.trainer.patience},
                    {"tolerance", cfg.trainer.tolerance},
                    {"learning_rate", cfg.trainer.learning_rate},
                    {"lr_halving_patience", cfg.trainer.lr_halving_patience},
                    {"lambda_l1", cfg.trainer.lambda_l1},
                    {"lambda_w", cfg.trainer.lambda_w},
                    {"lambda_k", cfg.trainer.lambda_k},
                    {"lambda_q", cfg.trainer.lambda_q},
                    {"quant_loss_enabled", cfg.trainer.quant_loss_enabled},
                    {"snr_min_db", cfg.trainer.snr_min_db},
                    {"snr_max_db", cfg.trainer.snr_max_db},
                    {"grad_clip_norm", cfg.trainer.grad_clip_norm},
                    {"layers", cfg.trainer.layers},
                    {"codebook_size", cfg.trainer.codebook_size},
                    {"codeword_length", cfg.trainer.codeword_length},
                    {"fragment_dim", cfg.trainer.fragment_dim},
                    {"popularity_ordering", cfg.trainer.popularity_ordering},
                    {"curvature_aware", cfg.trainer.curvature_aware},
                    {"codebook_mode", ura::mode_name(cfg.trainer.codebook_mode)},
                    {"prior_ka_mean", cfg.trainer.prior_ka_mean},
                    {"seed", cfg.trainer.seed}};
  doc["aggregate"] = {{"rule", cfg.rule.name()}};
  doc["output"] = {{"dir", cfg.output_dir.string()}};
  return doc.dump(2);
}

void write_resolved_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write resolved config: " + path.string());
  out << resolved_config_json(cfg) << '\n';
}

}  // namespace airsum::cli
