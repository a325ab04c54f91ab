// tests/test_cli.cpp
//
// End-to-end checks of the command-line surface: exit codes, file outputs,
// determinism of metrics and checkpoint resume. Drives the real binary via
// CSIAM_BIN (set by CTest).

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csiam/features.hpp"
#include "csiam/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string binary() {
  const char* env = std::getenv("CSIAM_BIN");
  REQUIRE(env != nullptr);
  return env;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string out_path = (fs::temp_directory_path() / ("cli_out_" + std::to_string(counter++))).string();
  const std::string cmd = binary() + " " + args + " > " + out_path + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(out_path);
  std::stringstream ss;
  ss << in.rdbuf();
  res.out = ss.str();
  return res;
}

std::string work_dir() {
  const auto dir = fs::temp_directory_path() / "csiam_cli_test";
  fs::create_directories(dir);
  return dir.string();
}

std::string write_tiny_config(const std::string& name) {
  const std::string path = (fs::path(work_dir()) / name).string();
  std::ofstream out(path);
  out << R"(
[data]
num_utterances = 10
num_classes = 4
feature_dim = 8
min_symbols = 4
max_symbols = 5
min_frames_per_symbol = 3
max_frames_per_symbol = 4
noise_std = 0.05
seed = 11
[encoder]
n_blocks = 1
n_heads = 2
d_model = 16
d_ff = 32
d_qk = 8
d_value = 8
dropout_p = 0.1
[label_encoder]
n_blocks = 1
[predictor]
n_blocks = 1
[loss]
joint_dim = 16
negatives = 6
[train]
peak_lr = 1e-3
final_lr = 1e-5
warmup_steps = 20
decay_end_step = 400
batch_size_sup = 2
batch_size_unsup = 2
total_steps = 50
seed = 7
[augment]
tempo_mode = warp
warp_sigma = 2.0
mask_prob = 0.06
mask_span = 8
sa_freq_masks = 1
sa_freq_size = 2
sa_time_masks = 2
sa_time_ratio = 0.1
)";
  return path;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics comparison ignoring the wall-clock field
std::vector<json> parse_metrics(const std::string& path, bool strip_wall = true) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (strip_wall) j.erase("wall_ms");
    lines.push_back(std::move(j));
  }
  return lines;
}

}  // namespace

TEST_CASE("help exits zero; unknown flags exit 2") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("train --help").exit_code == 0);
  CHECK(run_cli("--bogus-flag").exit_code == 2);
  CHECK(run_cli("train --no-such-flag 1").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);
}

TEST_CASE("gen-data writes corpus files and a manifest") {
  const std::string dir = work_dir() + "/gen10";
  fs::remove_all(dir);
  const auto res = run_cli("gen-data --out " + dir + " --num 10 --seed 5");
  REQUIRE(res.exit_code == 0);

  int csft_count = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csft") ++csft_count;
  }
  CHECK(csft_count == 10);

  const json manifest = json::parse(std::ifstream(dir + "/manifest.json"));
  CHECK(manifest.at("utterances").size() == 10);

  SECTION("same seed twice produces identical bytes") {
    const std::string dir2 = work_dir() + "/gen10b";
    fs::remove_all(dir2);
    REQUIRE(run_cli("gen-data --out " + dir2 + " --num 10 --seed 5").exit_code == 0);
    CHECK(read_file(dir + "/utt_0003.csft") == read_file(dir2 + "/utt_0003.csft"));
    CHECK(read_file(dir + "/manifest.json") == read_file(dir2 + "/manifest.json"));
  }

  SECTION("N=0 gives an empty manifest and exit 0") {
    const std::string dir0 = work_dir() + "/gen0";
    fs::remove_all(dir0);
    const auto r0 = run_cli("gen-data --out " + dir0 + " --num 0");
    CHECK(r0.exit_code == 0);
    const json m0 = json::parse(std::ifstream(dir0 + "/manifest.json"));
    CHECK(m0.at("utterances").empty());
  }
}

TEST_CASE("train basics") {
  const std::string cfg = write_tiny_config("train_basic.cfg");

  SECTION("--steps 1 produces exactly one metrics line") {
    const std::string metrics = work_dir() + "/one_step.jsonl";
    fs::remove(metrics);
    const auto res = run_cli("train --config " + cfg + " --steps 1 --metrics-path " + metrics);
    REQUIRE(res.exit_code == 0);
    const auto lines = parse_metrics(metrics);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].at("step") == 1);
    CHECK(lines[0].contains("rnnt_loss"));
    CHECK(lines[0].contains("contrastive_loss"));
    CHECK(lines[0].contains("total_loss"));
    CHECK(lines[0].contains("grad_norm_pre_clip"));
    CHECK(lines[0].contains("lr"));
  }

  SECTION("missing config file exits 2") {
    CHECK(run_cli("train --config /nonexistent/nope.cfg --steps 1").exit_code == 2);
  }

  SECTION("invalid config key exits 2") {
    const std::string bad = work_dir() + "/bad.cfg";
    std::ofstream(bad) << "[train]\nnot_a_real_knob = 5\n";
    CHECK(run_cli("train --config " + bad + " --steps 1").exit_code == 2);
  }
}

TEST_CASE("train determinism and seamless resume") {
  const std::string cfg = write_tiny_config("train_det.cfg");
  const std::string m1 = work_dir() + "/det_a.jsonl";
  const std::string m2 = work_dir() + "/det_b.jsonl";
  const std::string m3 = work_dir() + "/det_resume.jsonl";
  const std::string ckpt_dir = work_dir() + "/det_ckpts";
  fs::remove_all(ckpt_dir);
  for (const auto& p : {m1, m2, m3}) fs::remove(p);

  REQUIRE(run_cli("train --config " + cfg + " --steps 50 --metrics-path " + m1).exit_code == 0);
  REQUIRE(run_cli("train --config " + cfg + " --steps 50 --metrics-path " + m2).exit_code == 0);

  const auto a = parse_metrics(m1);
  const auto b = parse_metrics(m2);
  REQUIRE(a.size() == 50);
  REQUIRE(b.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // interrupted at 25 then resumed to 50
  REQUIRE(run_cli("train --config " + cfg + " --steps 25 --metrics-path " + m3 + " --ckpt-dir " + ckpt_dir)
              .exit_code == 0);
  REQUIRE(run_cli("train --config " + cfg + " --steps 50 --metrics-path " + m3 + " --resume " + ckpt_dir +
                  "/final.csck")
              .exit_code == 0);
  const auto resumed = parse_metrics(m3);
  REQUIRE(resumed.size() == 50);
  for (size_t i = 0; i < 50; ++i) CHECK(resumed[i] == a[i]);
}

TEST_CASE("grad-check subcommand") {
  CHECK(run_cli("grad-check --component rnnt").exit_code == 0);
  CHECK(run_cli("grad-check --component eq1 --inject-sign-flip").exit_code == 1);
  CHECK(run_cli("grad-check --component nonsense").exit_code == 2);
}

TEST_CASE("augment subcommand") {
  const std::string dir = work_dir() + "/aug";
  fs::remove_all(dir);
  REQUIRE(run_cli("gen-data --out " + dir + " --num 1 --seed 3").exit_code == 0);
  const std::string input = dir + "/utt_0000.csft";

  SECTION("--identity round-trips bitwise") {
    const std::string out = dir + "/id.csft";
    REQUIRE(run_cli("augment --input " + input + " --output " + out + " --identity").exit_code == 0);
    CHECK(read_file(input) == read_file(out));
  }

  SECTION("warp and alpha together exit 2") {
    CHECK(run_cli("augment --input " + input + " --output " + dir + "/x.csft --warp-seed 1 --alpha 1.1").exit_code ==
          2);
  }

  SECTION("warp emits a monotone non-decreasing alignment") {
    const std::string out = dir + "/warp.csft";
    const std::string csv = dir + "/align.csv";
    REQUIRE(run_cli("augment --input " + input + " --output " + out + " --warp-seed 3 --sigma 2.0 --emit-alignment " +
                    csv)
                .exit_code == 0);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "t_ds,t_target_ds");
    int prev = -1, rows = 0;
    std::string line;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      REQUIRE(comma != std::string::npos);
      const int tgt = std::stoi(line.substr(comma + 1));
      CHECK(tgt >= prev);
      prev = tgt;
      ++rows;
    }
    CHECK(rows > 0);
  }

  SECTION("wsola on wav shortens duration by alpha") {
    const std::string wav_in = dir + "/tone.wav";
    csiam::Waveform tone;
    tone.sample_rate = 16000;
    tone.samples.resize(32000);
    for (size_t i = 0; i < tone.samples.size(); ++i) {
      tone.samples[i] = 0.5f * std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 16000.0);
    }
    csiam::save_wav(wav_in, tone);
    const std::string wav_out = dir + "/tone_fast.wav";
    REQUIRE(run_cli("augment --input " + wav_in + " --output " + wav_out + " --alpha 1.25").exit_code == 0);
    const csiam::Waveform out = csiam::load_wav(wav_out);
    const double ratio = static_cast<double>(out.samples.size()) / tone.samples.size();
    CHECK(ratio == Catch::Approx(0.8).margin(0.01));
  }
}

TEST_CASE("probe subcommand emits a curve") {
  const std::string cfg = write_tiny_config("probe.cfg");
  const std::string csv = work_dir() + "/probe_curve.csv";
  fs::remove(csv);
  const auto res = run_cli("probe --config " + cfg + " --out " + csv + " --hidden-dim 16 --steps 60 --layers 0,1");
  REQUIRE(res.exit_code == 0);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "layer,train_acc,val_acc");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("eval subcommand reports decoding and retrieval metrics") {
  const std::string cfg = write_tiny_config("eval.cfg");
  const auto decode = run_cli("eval --config " + cfg + " --num-utts 3");
  REQUIRE(decode.exit_code == 0);
  CHECK(decode.out.find("label_error_rate") != std::string::npos);

  const auto retrieval = run_cli("eval --config " + cfg + " --num-utts 3 --retrieval --seed 4");
  REQUIRE(retrieval.exit_code == 0);
  CHECK(retrieval.out.find("retrieval_top1") != std::string::npos);

  const auto noise = run_cli("eval --config " + cfg + " --num-utts 3 --retrieval --noise-input --seed 4");
  REQUIRE(noise.exit_code == 0);
  CHECK(noise.out.find("noise input") != std::string::npos);
}
