#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 3,
  "feel": {
    "total_devices": 8, "ka_min": 2, "ka_max": 4, "rounds": 8,
    "local_epochs": 1, "local_batch": 16, "local_lr": 0.05, "global_lr": 1.0,
    "device_dataset_size": 512, "bs_dataset_size": 128, "eval_dataset_size": 128,
    "class_scale": 2.0,
    "task": {"input_dim": 8, "hidden": 16, "classes": 4}
  },
  "channel": {"snr_db": 10.0},
  "decoder": {"layers": 2, "mode": "learned"},
  "trainer": {
    "train_samples": 100, "val_samples": 27, "test_samples": 0,
    "batch_size": 16, "max_epochs": 2, "patience": 20,
    "learning_rate": 0.001,
    "codebook_size": 16, "codeword_length": 8, "fragment_dim": 8
  },
  "aggregate": {"rule": "mean"}
})";

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "airsum_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& content) const {
    fs::path p = dir / name;
    std::ofstream out(p);
    out << content;
    return p;
  }
};

int run_cli(const std::string& args) {
  std::string cmd = std::string(AIRSUM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("collect, train, bench and eval run end to end") {
  Workspace ws;
  fs::path cfg = ws.write("cfg.json", kTinyConfig);
  fs::path data = ws.dir / "data.bin";
  fs::path ck = ws.dir / "ck.bin";

  CHECK(run_cli("collect --config " + cfg.string() + " --out " + data.string()) == 0);
  CHECK(fs::exists(data));
  CHECK(fs::exists(data.string() + ".resolved.json"));

  // determinism: a second collection is byte-identical
  fs::path data2 = ws.dir / "data2.bin";
  CHECK(run_cli("collect --config " + cfg.string() + " --out " + data2.string()) == 0);
  CHECK(slurp(data) == slurp(data2));

  CHECK(run_cli("train --config " + cfg.string() + " --data " + data.string() +
                " --out " + ck.string()) == 0);
  CHECK(fs::exists(ck));
  std::string log = slurp(ck.string() + ".train_log.csv");
  CHECK(log.find("epoch,train_loss,val_loss,lr") == 0);

  // resumed training continues and succeeds
  fs::path ck2 = ws.dir / "ck2.bin";
  CHECK(run_cli("train --config " + cfg.string() + " --data " + data.string() +
                " --out " + ck2.string() + " --resume " + ck.string()) == 0);

  fs::path bench_csv = ws.dir / "bench.csv";
  CHECK(run_cli("bench --config " + cfg.string() + " --data " + data.string() +
                " --checkpoint " + ck.string() + " --snr 0,10 --out " +
                bench_csv.string()) == 0);
  std::string bench = slurp(bench_csv);
  CHECK(bench.find("snr_db,mode,accuracy") == 0);
  // one row per SNR after the header
  CHECK(std::count(bench.begin(), bench.end(), '\n') == 3);

  fs::path eval_dir = ws.dir / "eval";
  CHECK(run_cli("eval --config " + cfg.string() + " --checkpoint " + ck.string() +
                " --snr 5,15 --rule trimmed_mean:0.8 --out " + eval_dir.string()) == 0);
  std::string metrics = slurp(eval_dir / "metrics.csv");
  CHECK(metrics.find("round,ka_true,ka_hat") == 0);
  CHECK(metrics.find("trimmed_mean") != std::string::npos);
  CHECK(fs::exists(eval_dir / "resolved.json"));
}

TEST_CASE("config errors exit with code 2") {
  Workspace ws;
  fs::path bad = ws.write("bad.json", R"({"seed": 1, "unknown_section": {}})");
  CHECK(run_cli("collect --config " + bad.string() + " --out " +
                (ws.dir / "x.bin").string()) == 2);

  fs::path typo = ws.write("typo.json", R"({"seed": 1, "feel": {"totall_devices": 4}})");
  CHECK(run_cli("collect --config " + typo.string() + " --out " +
                (ws.dir / "x.bin").string()) == 2);

  fs::path invalid = ws.write("invalid.json", "{nope");
  CHECK(run_cli("collect --config " + invalid.string() + " --out " +
                (ws.dir / "x.bin").string()) == 2);
}

TEST_CASE("io errors exit with code 4") {
  Workspace ws;
  fs::path cfg = ws.write("cfg.json", kTinyConfig);
  // missing output directory
  CHECK(run_cli("collect --config " + cfg.string() + " --out " +
                (ws.dir / "missing" / "x.bin").string()) == 4);
  // missing dataset
  CHECK(run_cli("train --config " + cfg.string() + " --data " +
                (ws.dir / "nope.bin").string() + " --out " +
                (ws.dir / "ck.bin").string()) == 4);
}
