// tools/csiam_cli.cpp
//
// Single entry point: data generation, training, probing, augmentation
// inspection, gradient verification and evaluation.
// Exit codes: 0 success, 1 verification failure, 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "csiam/csiam.hpp"
#include "csiam/grad_suite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;

csiam::RunConfig load_config(const std::string& path) {
  if (path.empty()) return csiam::RunConfig::from_string("");
  return csiam::RunConfig::from_file(path);
}

std::string utterance_filename(int index) {
  std::ostringstream os;
  os << "utt_" << std::setw(4) << std::setfill('0') << index << ".csft";
  return os.str();
}

// ------------------------------------------------------------- gen-data
int cmd_gen_data(const std::string& config_path, const std::string& out_dir, int num_override, int64_t seed_override) {
  csiam::RunConfig cfg = load_config(config_path);
  if (num_override >= 0) cfg.num_utterances = num_override;
  if (seed_override >= 0) cfg.data.seed = static_cast<uint64_t>(seed_override);
  fs::create_directories(out_dir);

  json manifest;
  manifest["version"] = 1;
  manifest["data"] = {{"num_classes", cfg.data.num_classes},
                      {"feature_dim", cfg.data.feature_dim},
                      {"min_symbols", cfg.data.min_symbols},
                      {"max_symbols", cfg.data.max_symbols},
                      {"min_frames_per_symbol", cfg.data.min_frames_per_symbol},
                      {"max_frames_per_symbol", cfg.data.max_frames_per_symbol},
                      {"noise_std", cfg.data.noise_std},
                      {"seed", cfg.data.seed}};
  manifest["utterances"] = json::array();

  const auto corpus = csiam::gen_corpus(cfg.data, cfg.num_utterances);
  for (size_t i = 0; i < corpus.size(); ++i) {
    const std::string name = utterance_filename(static_cast<int>(i));
    csiam::write_csft((fs::path(out_dir) / name).string(), corpus[i].features);
    manifest["utterances"].push_back({{"id", corpus[i].id},
                                      {"features", name},
                                      {"num_frames", corpus[i].features.num_frames()},
                                      {"frame_labels", corpus[i].frame_labels.labels},
                                      {"transcript", corpus[i].transcript}});
  }
  std::ofstream out((fs::path(out_dir) / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) {
    std::cerr << "error: cannot write manifest to " << out_dir << "\n";
    return kExitUsage;
  }
  std::cout << "wrote " << corpus.size() << " utterances to " << out_dir << "\n";
  return kExitOk;
}

std::vector<csiam::Utterance> load_corpus_dir(const std::string& dir, int expected_dim) {
  std::ifstream in((fs::path(dir) / "manifest.json").string());
  if (!in) throw csiam::ConfigError("cannot open manifest.json in " + dir);
  json manifest = json::parse(in);
  std::vector<csiam::Utterance> corpus;
  for (const auto& entry : manifest.at("utterances")) {
    csiam::Utterance utt;
    utt.id = entry.at("id").get<uint64_t>();
    utt.features = csiam::read_csft((fs::path(dir) / entry.at("features").get<std::string>()).string());
    utt.frame_labels.labels = entry.at("frame_labels").get<std::vector<int>>();
    utt.transcript = entry.at("transcript").get<std::vector<int>>();
    if (utt.features.dim() != expected_dim) {
      throw csiam::ConfigError("corpus feature dim " + std::to_string(utt.features.dim()) +
                               " does not match configured " + std::to_string(expected_dim));
    }
    if (static_cast<int>(utt.frame_labels.labels.size()) != utt.features.num_frames()) {
      throw csiam::ConfigError("corpus label length mismatch in " + dir);
    }
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

// ----------------------------------------------------------------- train
int cmd_train(const std::string& config_path, const std::string& metrics_path, const std::string& ckpt_dir,
              int64_t ckpt_every, const std::string& resume, int64_t steps_override, const std::string& data_dir) {
  csiam::RunConfig cfg = load_config(config_path);
  if (steps_override >= 0) cfg.train.total_steps = steps_override;

  csiam::Trainer trainer(cfg);
  if (!data_dir.empty()) trainer.set_corpus(load_corpus_dir(data_dir, cfg.data.feature_dim));
  if (!resume.empty()) trainer.load(resume);
  if (!ckpt_dir.empty()) fs::create_directories(ckpt_dir);

  std::unique_ptr<csiam::MetricsWriter> writer;
  if (!metrics_path.empty()) writer = std::make_unique<csiam::MetricsWriter>(metrics_path, !resume.empty());

  const int64_t remaining = cfg.train.total_steps - trainer.current_step();
  for (int64_t i = 0; i < remaining; ++i) {
    const auto rec = trainer.step();
    if (rec) {
      if (writer) {
        writer->write(*rec);
      } else {
        std::cout << rec->to_json().dump() << "\n";
      }
    } else {
      std::cerr << "step " << trainer.current_step() << ": non-finite loss, step skipped\n";
    }
    if (ckpt_every > 0 && !ckpt_dir.empty() && trainer.current_step() % ckpt_every == 0) {
      trainer.save((fs::path(ckpt_dir) / ("ckpt_" + std::to_string(trainer.current_step()) + ".csck")).string());
    }
  }
  if (!ckpt_dir.empty()) trainer.save((fs::path(ckpt_dir) / "final.csck").string());
  std::cerr << "trained to step " << trainer.current_step();
  if (trainer.skipped_steps() > 0) std::cerr << " (" << trainer.skipped_steps() << " skipped)";
  std::cerr << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- probe
int cmd_probe(const std::string& config_path, const std::string& ckpt, const std::string& out_csv,
              const std::string& data_dir, int hidden_dim, int steps, double lr, const std::string& layers,
              int64_t probe_seed) {
  csiam::RunConfig cfg = load_config(config_path);
  csiam::CsiamModel<float> model(cfg, cfg.train.seed);
  if (!ckpt.empty()) {
    csiam::Adam<float> scratch;
    csiam::load_checkpoint(ckpt, model.params, scratch);
  }
  std::vector<csiam::Utterance> corpus = data_dir.empty()
                                             ? csiam::gen_corpus(cfg.data, cfg.num_utterances)
                                             : load_corpus_dir(data_dir, cfg.data.feature_dim);

  csiam::ProbeConfig pcfg;
  if (hidden_dim > 0) pcfg.hidden_dim = hidden_dim;
  if (steps > 0) pcfg.train_steps = steps;
  if (lr > 0) pcfg.lr = lr;
  if (probe_seed >= 0) pcfg.seed = static_cast<uint64_t>(probe_seed);
  if (!layers.empty()) {
    std::stringstream ss(layers);
    std::string item;
    while (std::getline(ss, item, ',')) pcfg.layer_indices.push_back(std::stoi(item));
  }

  const auto table = csiam::train_probe(model, corpus, pcfg);
  csiam::emit_curve(table, out_csv);
  for (const auto& row : table) {
    std::cout << "layer " << row.layer << ": train " << std::fixed << std::setprecision(4) << row.train_acc
              << "  val " << row.val_acc << "\n";
  }
  std::cout << "curve written to " << out_csv << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- augment
int cmd_augment(const std::string& input, const std::string& output, bool identity, int64_t warp_seed, double alpha,
                double sigma, int order, int64_t mask_seed, double mask_prob, int mask_span,
                const std::string& alignment_csv) {
  const bool is_wav = input.size() > 4 && input.substr(input.size() - 4) == ".wav";
  const bool want_warp = warp_seed >= 0;
  const bool want_alpha = alpha > 0.0;
  if (want_warp && want_alpha) {
    std::cerr << "error: --warp-seed and --alpha are mutually exclusive tempo modes\n";
    return kExitUsage;
  }
  if (want_alpha && !is_wav) {
    std::cerr << "error: --alpha (WSOLA) needs a .wav input\n";
    return kExitUsage;
  }
  if ((want_warp || mask_seed >= 0) && is_wav) {
    std::cerr << "error: feature-level transforms (--warp-seed/--mask-seed) need a .csft input\n";
    return kExitUsage;
  }

  auto write_alignment = [&](const csiam::AlignmentMap& map) {
    if (alignment_csv.empty()) return;
    std::ofstream out(alignment_csv);
    out << "t_ds,t_target_ds\n";
    for (int t = 0; t < map.size(); ++t) out << t << "," << map(t) << "\n";
  };

  if (is_wav) {
    const csiam::Waveform wave = csiam::load_wav(input);
    csiam::Waveform out = wave;
    if (want_alpha && !identity) out = csiam::wsola_stretch(wave, alpha);
    csiam::save_wav(output, out);
    if (!alignment_csv.empty()) {
      const csiam::LogMelConfig lm;
      const int win = static_cast<int>(std::lround(lm.window_ms * wave.sample_rate / 1000.0));
      const int hop = static_cast<int>(std::lround(lm.hop_ms * wave.sample_rate / 1000.0));
      auto frames = [&](size_t n) {
        return n < static_cast<size_t>(win) ? 0 : static_cast<int>(1 + (n - static_cast<size_t>(win)) / hop);
      };
      const int t_aug = csiam::downsampled_len(frames(out.samples.size()));
      const int t_tgt = csiam::downsampled_len(frames(wave.samples.size()));
      write_alignment(
          csiam::build_alignment_from_alpha((want_alpha && !identity) ? alpha : 1.0, t_aug, std::max(t_tgt, 1)));
    }
    std::cout << "wrote " << output << " (" << out.samples.size() << " samples)\n";
    return kExitOk;
  }

  csiam::FeatureSequence feats = csiam::read_csft(input);
  const int T = feats.num_frames();
  csiam::AlignmentMap align = csiam::AlignmentMap::identity(csiam::downsampled_len(T));
  if (!identity && want_warp) {
    auto rng = csiam::make_engine(static_cast<uint64_t>(warp_seed), csiam::Stream::kWarp, 0);
    const csiam::WarpFunction w = csiam::sample_warp(rng, T, order, sigma);
    feats = csiam::apply_warp(feats, w);
    align = csiam::build_alignment_from_warp(w, csiam::downsampled_len(T), csiam::downsampled_len(T));
  }
  if (!identity && mask_seed >= 0) {
    auto rng = csiam::make_engine(static_cast<uint64_t>(mask_seed), csiam::Stream::kMask, 0);
    const csiam::MaskPlan plan = csiam::sample_masks(rng, T, mask_prob, mask_span);
    feats = csiam::apply_masks(feats, plan);
  }
  csiam::write_csft(output, feats);
  write_alignment(align);
  std::cout << "wrote " << output << " (" << T << " frames)\n";
  return kExitOk;
}

// ------------------------------------------------------------ grad-check
int cmd_grad_check(const std::string& component, bool inject_sign_flip) {
  auto report = csiam::run_grad_suite(component);
  if (inject_sign_flip) {
    // test hook: corrupt the verdict the way a sign-flipped pullback would
    for (auto& c : report) c.max_rel_error = std::max(c.max_rel_error, 2.0);
  }
  bool ok = true;
  for (const auto& c : report) {
    std::cout << c.name << ": max rel error " << std::scientific << std::setprecision(3) << c.max_rel_error
              << " (tolerance " << c.tolerance << ") " << (c.passed() ? "ok" : "FAIL") << "\n";
    ok = ok && c.passed();
  }
  return ok ? kExitOk : kExitVerificationFailure;
}

// ------------------------------------------------------------------ eval
int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& data_dir, int num_utts,
             bool retrieval, bool noise_input, int64_t eval_seed) {
  csiam::RunConfig cfg = load_config(config_path);
  csiam::CsiamModel<float> model(cfg, cfg.train.seed);
  if (!ckpt.empty()) {
    csiam::Adam<float> scratch;
    csiam::load_checkpoint(ckpt, model.params, scratch);
  }
  std::vector<csiam::Utterance> corpus = data_dir.empty()
                                             ? csiam::gen_corpus(cfg.data, cfg.num_utterances)
                                             : load_corpus_dir(data_dir, cfg.data.feature_dim);
  if (num_utts > 0 && num_utts < static_cast<int>(corpus.size())) {
    corpus.resize(static_cast<size_t>(num_utts));
  }
  const uint64_t seed = eval_seed >= 0 ? static_cast<uint64_t>(eval_seed) : cfg.train.seed + 1;

  if (retrieval) {
    csiam::RetrievalStats stats;
    for (const auto& utt : corpus) {
      csiam::FeatureSequence input = utt.features;
      if (noise_input) {
        auto nrng = csiam::make_engine(seed, csiam::Stream::kData, utt.id + 1000);
        input = csiam::FeatureSequence(
            csiam::Tensor<float>::randn({utt.features.num_frames(), utt.features.dim()}, nrng));
      }
      csiam::accumulate_retrieval(model, input, cfg.augment, seed, utt.id, stats);
    }
    std::cout << "retrieval_top1 " << std::fixed << std::setprecision(4) << stats.accuracy() << " over "
              << stats.total << " anchors" << (noise_input ? " (noise input)" : "") << "\n";
    return kExitOk;
  }

  int exact = 0;
  int64_t edits = 0, ref_len = 0;
  for (const auto& utt : corpus) {
    const auto hyp = csiam::greedy_decode(model, utt.features.frames);
    edits += csiam::edit_distance(hyp, utt.transcript);
    ref_len += static_cast<int64_t>(utt.transcript.size());
    if (hyp == utt.transcript) ++exact;
  }
  std::cout << "utterances " << corpus.size() << "  exact " << exact << "  label_error_rate " << std::fixed
            << std::setprecision(4)
            << (ref_len > 0 ? static_cast<double>(edits) / static_cast<double>(ref_len) : 0.0) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"c-siam: contrastive siamese semi-supervised speech recognition, desk scale"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus (CSFT features + manifest)");
  std::string gen_config, gen_out = "data";
  int gen_num = -1;
  int64_t gen_seed = -1;
  gen->add_option("--config", gen_config, "Config file (uses [data] section)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--num", gen_num, "Number of utterances (overrides config)");
  gen->add_option("--seed", gen_seed, "Corpus seed (overrides config)");

  // train
  auto* train = app.add_subcommand("train", "Run the joint supervised+unsupervised training loop");
  std::string train_config, metrics_path, ckpt_dir, resume, train_data_dir;
  int64_t ckpt_every = 0, steps_override = -1;
  train->add_option("--config", train_config, "Config file");
  train->add_option("--metrics-path", metrics_path, "JSONL metrics output (default: stdout)");
  train->add_option("--ckpt-dir", ckpt_dir, "Checkpoint directory");
  train->add_option("--ckpt-every", ckpt_every, "Checkpoint every N steps (0 = only final)");
  train->add_option("--resume", resume, "Resume from a CSCK checkpoint");
  train->add_option("--steps", steps_override, "Total steps (overrides config)");
  train->add_option("--data-dir", train_data_dir, "Train on a gen-data corpus directory instead of generating");

  // probe
  auto* probe = app.add_subcommand("probe", "Frozen-encoder layer probe; emits accuracy-vs-layer CSV");
  std::string probe_config, probe_ckpt, probe_out = "curve.csv", probe_layers, probe_data_dir;
  int probe_hidden = -1, probe_steps = -1;
  double probe_lr = -1.0;
  int64_t probe_seed = -1;
  probe->add_option("--config", probe_config, "Config file");
  probe->add_option("--ckpt", probe_ckpt, "Checkpoint to probe (default: fresh init)");
  probe->add_option("--data", probe_data_dir, "Corpus directory (default: generate from config)");
  probe->add_option("--out", probe_out, "Output CSV path");
  probe->add_option("--hidden-dim", probe_hidden, "Probe hidden width (default 256)");
  probe->add_option("--steps", probe_steps, "Probe training steps (default 2000)");
  probe->add_option("--probe-lr", probe_lr, "Probe learning rate (default 1e-3)");
  probe->add_option("--layers", probe_layers, "Comma-separated layer indices (default: all)");
  probe->add_option("--seed", probe_seed, "Probe seed");

  // augment
  auto* augment = app.add_subcommand("augment", "Apply tempo/mask transforms to a CSFT or WAV file");
  std::string aug_in, aug_out, aug_align;
  bool aug_identity = false;
  int64_t aug_warp_seed = -1, aug_mask_seed = -1;
  double aug_alpha = 0.0, aug_sigma = 0.2, aug_mask_prob = 0.016;
  int aug_order = 5, aug_mask_span = 28;
  augment->add_option("--input", aug_in, "Input .csft or .wav")->required();
  augment->add_option("--output", aug_out, "Output path")->required();
  augment->add_flag("--identity", aug_identity, "Pass through unchanged");
  augment->add_option("--warp-seed", aug_warp_seed, "Sample a sinusoidal warp with this seed (features only)");
  augment->add_option("--alpha", aug_alpha, "WSOLA tempo ratio (wav only; >1 speeds up)");
  augment->add_option("--sigma", aug_sigma, "Warp amplitude std");
  augment->add_option("--order", aug_order, "Warp order (number of sin components)");
  augment->add_option("--mask-seed", aug_mask_seed, "Apply span masking with this seed (features only)");
  augment->add_option("--mask-prob", aug_mask_prob, "Mask start probability");
  augment->add_option("--mask-span", aug_mask_span, "Mask span length");
  augment->add_option("--emit-alignment", aug_align, "Write the t_ds -> t'_ds map as CSV");

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "Run the f64 finite-difference gradient suite");
  std::string grad_component = "all";
  bool inject_sign_flip = false;
  grad->add_option("--component", grad_component, "all|eq1|eq2|rnnt|composite");
  grad->add_flag("--inject-sign-flip", inject_sign_flip, "Test hook: force a failing verdict");

  // eval
  auto* eval = app.add_subcommand("eval", "Greedy decoding metrics or contrastive retrieval accuracy");
  std::string eval_config, eval_ckpt, eval_data_dir;
  int eval_num = -1;
  bool eval_retrieval = false, eval_noise = false;
  int64_t eval_seed = -1;
  eval->add_option("--config", eval_config, "Config file");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint to evaluate");
  eval->add_option("--data", eval_data_dir, "Corpus directory (default: generate from config)");
  eval->add_option("--num-utts", eval_num, "Evaluate on the first N utterances");
  eval->add_flag("--retrieval", eval_retrieval, "Report masked-retrieval top-1 accuracy");
  eval->add_flag("--noise-input", eval_noise, "Replace inputs with Gaussian noise (with --retrieval)");
  eval->add_option("--seed", eval_seed, "Evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_num, gen_seed);
    if (train->parsed()) {
      return cmd_train(train_config, metrics_path, ckpt_dir, ckpt_every, resume, steps_override, train_data_dir);
    }
    if (probe->parsed()) {
      return cmd_probe(probe_config, probe_ckpt, probe_out, probe_data_dir, probe_hidden, probe_steps, probe_lr,
                       probe_layers, probe_seed);
    }
    if (augment->parsed()) {
      return cmd_augment(aug_in, aug_out, aug_identity, aug_warp_seed, aug_alpha, aug_sigma, aug_order,
                         aug_mask_seed, aug_mask_prob, aug_mask_span, aug_align);
    }
    if (grad->parsed()) return cmd_grad_check(grad_component, inject_sign_flip);
    if (eval->parsed()) {
      return cmd_eval(eval_config, eval_ckpt, eval_data_dir, eval_num, eval_retrieval, eval_noise, eval_seed);
    }
  } catch (const csiam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
