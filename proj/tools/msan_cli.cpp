#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "msan/metrics.hpp"
#include "msan/selfcheck.hpp"
#include "msan/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

json config_summary(const msan::TrainConfig& c) {
  json j;
  j["learning_rate"] = c.learning_rate;
  j["max_epochs"] = c.max_epochs;
  j["clip_norm"] = c.clip_norm;
  j["dropout"] = c.dropout;
  j["patience"] = c.patience;
  j["early_stop"] = c.early_stop;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["beam_size"] = c.beam_size;
  j["init_range"] = c.init_range;
  j["n_h"] = c.n_h;
  j["n_f"] = c.n_f;
  j["n_enc"] = c.n_enc;
  j["n_x"] = c.n_x;
  j["attribute_k"] = c.attribute_k;
  j["batch_size"] = c.batch_size;
  j["max_caption_len"] = c.max_caption_len;
  j["precision"] = c.precision == msan::Precision::F64 ? "f64" : "f32";
  j["attn_modalities"] = c.attn_modalities;
  j["use_semantic_attention"] = c.use_semantic_attention;
  j["beam_length_norm"] = c.beam_length_norm;
  return j;
}

// Every command leaves a manifest next to its outputs.
void write_manifest(const fs::path& path, const std::string& command, const json& inputs,
                    const json& outputs, std::uint64_t seed, const json& config) {
  json j;
  j["command"] = command;
  j["version"] = msan::kVersion;
  j["dataset_format"] = msan::kDatasetFormat;
  j["checkpoint_format"] = msan::kCheckpointFormat;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  if (!config.is_null()) j["config"] = config;
  std::ofstream out(path);
  if (!out) throw msan::UsageError("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> parse_modalities_flag(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : value + ',') {
    if (ch == ',') {
      if (cur.empty()) continue;
      if (cur == "f") cur = "frames";
      else if (cur == "c") cur = "clips";
      else if (cur == "o") cur = "flow";
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  return out;
}

int cmd_gen_synth(const std::string& out_dir, std::size_t videos, std::size_t attrs,
                  std::uint64_t seed, const std::string& modalities, std::size_t dim,
                  std::size_t seq_len, double noise, int captions) {
  msan::SyntheticSpec spec;
  spec.n_videos = videos;
  spec.n_attributes = attrs;
  spec.seed = seed;
  spec.feature_dim = dim;
  spec.seq_len = seq_len;
  spec.noise = noise;
  spec.captions_per_video = captions;
  if (!modalities.empty()) spec.modalities = parse_modalities_flag(modalities);

  msan::Corpus corpus = msan::generate_synthetic_corpus(spec);
  msan::CorpusSplits splits = msan::split_corpus(corpus);

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  msan::save_corpus(splits.train, (dir / "train.jsonl").string());
  msan::save_corpus(splits.val, (dir / "val.jsonl").string());
  msan::save_corpus(splits.test, (dir / "test.jsonl").string());

  json inputs = json::object();
  json outputs = {{"train", (dir / "train.jsonl").string()},
                  {"val", (dir / "val.jsonl").string()},
                  {"test", (dir / "test.jsonl").string()}};
  json cfg = {{"videos", videos},        {"attributes", attrs}, {"modalities", spec.modalities},
              {"feature_dim", dim},      {"seq_len", seq_len},  {"noise", noise},
              {"captions_per_video", captions}};
  write_manifest(dir / "manifest.json", "gen-synth", inputs, outputs, seed, cfg);
  std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/"
            << splits.test.size() << " train/val/test records to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_path, const std::string& modalities,
              const std::string& preset, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> epochs, std::optional<std::string> attributes) {
  fs::path dir(data_dir);
  if (!fs::is_directory(dir)) {
    throw msan::UsageError("data directory not found: " + data_dir);
  }
  fs::path train_path = dir / "train.jsonl";
  fs::path val_path = dir / "val.jsonl";
  if (!fs::exists(train_path) || !fs::exists(val_path)) {
    throw msan::UsageError("expected train.jsonl and val.jsonl under " + data_dir);
  }

  msan::TrainConfig config;
  if (!preset.empty()) {
    if (preset == "synthetic") config = msan::TrainConfig::synthetic_preset();
    else if (preset == "full") config = msan::TrainConfig();
    else throw msan::UsageError("unknown preset: " + preset);
  }
  if (!config_path.empty()) {
    msan::TrainConfig from_file = msan::load_train_config(config_path);
    if (!preset.empty()) {
      // flags beat files; an explicit --preset restarts from that base
      throw msan::UsageError("--preset and --config are mutually exclusive; "
                             "put `preset = ...` in the config file instead");
    }
    config = from_file;
  }
  if (!modalities.empty()) config.attn_modalities = parse_modalities_flag(modalities);
  if (seed) config.seed = *seed;
  if (epochs) config.max_epochs = *epochs;
  if (attributes) {
    if (*attributes == "on") config.use_semantic_attention = true;
    else if (*attributes == "off") config.use_semantic_attention = false;
    else throw msan::UsageError("--attributes expects on or off");
  }

  msan::Corpus train_corpus = msan::load_corpus(train_path.string());
  msan::Corpus val_corpus = msan::load_corpus(val_path.string());

  fs::path log_path = fs::path(out_path).string() + ".log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw msan::UsageError("cannot write training log: " + log_path.string());

  msan::TrainResult result =
      msan::train(train_corpus, val_corpus, config, [&](const msan::EpochLog& e) {
        json j = {{"epoch", e.epoch},       {"train_loss1", e.train_loss1},
                  {"train_loss2", e.train_loss2}, {"val_loss", e.val_loss},
                  {"lr", e.learning_rate},  {"seconds", e.seconds}};
        log << j.dump() << '\n';
        log.flush();
        std::cout << "epoch " << e.epoch << ": loss1 " << e.train_loss1 << "  loss2 "
                  << e.train_loss2 << "  val " << e.val_loss << "\n";
      });

  msan::save_checkpoint(result.checkpoint, out_path);
  json inputs = {{"train", train_path.string()}, {"val", val_path.string()}};
  if (!config_path.empty()) inputs["config"] = config_path;
  json outputs = {{"checkpoint", out_path}, {"log", log_path.string()}};
  write_manifest(fs::path(out_path).string() + ".manifest.json", "train", inputs, outputs,
                 config.seed, config_summary(config));
  std::cout << "best epoch " << result.checkpoint.epoch << " (val loss "
            << result.checkpoint.val_loss << ") -> " << out_path << "\n";
  return kExitOk;
}

int cmd_caption(const std::string& ckpt_path, const std::string& data_path, std::size_t beam,
                const std::string& out_path) {
  msan::Checkpoint ckpt = msan::load_checkpoint(ckpt_path);
  msan::Corpus corpus = msan::load_corpus(data_path);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw msan::UsageError("cannot write captions: " + out_path);
    out = &file;
  }
  for (const msan::VideoRecord& rec : corpus.records) {
    msan::EncodedValues ev = msan::encode_values(ckpt.model, rec);
    msan::BeamResult beam_result = msan::beam_search(
        ckpt.model, ev, beam, ckpt.config.max_caption_len, ckpt.config.beam_length_norm);
    msan::TokenSeq tokens = ckpt.model.vocab.decode(beam_result.tokens);
    std::string caption;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) caption += ' ';
      caption += tokens[i];
    }
    json j = {{"id", rec.id}, {"caption", caption}, {"logprob", beam_result.logprob}};
    (*out) << j.dump() << '\n';
  }
  if (!out_path.empty()) {
    json inputs = {{"checkpoint", ckpt_path}, {"data", data_path}};
    json outputs = {{"captions", out_path}};
    json cfg = {{"beam", beam}};
    write_manifest(out_path + ".manifest.json", "caption", inputs, outputs, ckpt.config.seed,
                   cfg);
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 std::optional<std::size_t> beam, const std::string& out_dir, bool csv) {
  msan::Checkpoint ckpt = msan::load_checkpoint(ckpt_path);
  msan::Corpus corpus = msan::load_corpus(data_path);
  std::size_t beam_size = beam ? *beam : ckpt.config.beam_size;
  msan::EvaluationReport report = msan::evaluate(ckpt, corpus, beam_size);

  std::cout << msan::report_to_table(report);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    {
      std::ofstream f(dir / "report.json");
      if (!f) throw msan::UsageError("cannot write report: " + (dir / "report.json").string());
      f << msan::report_to_json(report) << '\n';
    }
    {
      std::ofstream f(dir / "report.txt");
      f << msan::report_to_table(report);
    }
    json outputs = {{"report_json", (dir / "report.json").string()},
                    {"report_txt", (dir / "report.txt").string()}};
    if (csv) {
      std::ofstream f(dir / "per_video.csv");
      f << msan::report_to_csv(report);
      outputs["per_video_csv"] = (dir / "per_video.csv").string();
    }
    json inputs = {{"checkpoint", ckpt_path}, {"data", data_path}};
    json cfg = {{"beam", beam_size}};
    write_manifest(dir / "manifest.json", "evaluate", inputs, outputs, ckpt.config.seed, cfg);
  }
  return kExitOk;
}

int cmd_selfcheck(const std::string& fault) {
  msan::FaultInjection injection = msan::FaultInjection::None;
  if (!fault.empty()) {
    if (fault == "hidden-hadamard-sign") {
      injection = msan::FaultInjection::HiddenHadamardSign;
    } else {
      throw msan::UsageError("unknown fault: " + fault);
    }
  }
  bool ok = msan::run_selfcheck(std::cout, injection);
  std::cout << (ok ? "selfcheck: PASS" : "selfcheck: FAIL") << "\n";
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MSAN video captioning: synthetic data, training, captioning, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", msan::kVersion);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic corpus (train/val/test)");
  std::string gen_out;
  std::size_t gen_videos = 100, gen_attrs = 20, gen_dim = 16, gen_seq = 8;
  std::uint64_t gen_seed = 1;
  std::string gen_modalities;
  double gen_noise = 0.1;
  int gen_captions = 1;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--videos", gen_videos, "Number of videos");
  gen->add_option("--attrs", gen_attrs, "Number of latent attributes");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--modalities", gen_modalities, "Comma list from f,c,o (default all)");
  gen->add_option("--dim", gen_dim, "Feature dimension per modality");
  gen->add_option("--seq-len", gen_seq, "Frames per stream");
  gen->add_option("--noise", gen_noise, "Feature noise amplitude");
  gen->add_option("--captions", gen_captions, "Captions per video (1 or 2)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset directory");
  std::string tr_data, tr_config, tr_out, tr_modalities, tr_preset;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs;
  std::optional<std::string> tr_attributes;
  tr->add_option("--data", tr_data, "Directory with train.jsonl and val.jsonl")->required();
  tr->add_option("--config", tr_config, "Flat key=value config file");
  tr->add_option("--out", tr_out, "Checkpoint output path")->required();
  tr->add_option("--modalities", tr_modalities, "Semantic-attention modalities (subset of f,c,o)");
  tr->add_option("--preset", tr_preset, "Config preset: synthetic or full");
  tr->add_option("--seed", tr_seed, "Override the config seed");
  tr->add_option("--epochs", tr_epochs, "Override max_epochs");
  tr->add_option("--attributes", tr_attributes, "on|off: semantic attention vs uniform S_t");

  // caption
  auto* cap = app.add_subcommand("caption", "Caption every record in a dataset file");
  std::string cap_ckpt, cap_data, cap_out;
  std::size_t cap_beam = 5;
  cap->add_option("--ckpt", cap_ckpt, "Checkpoint path")->required();
  cap->add_option("--data", cap_data, "Dataset JSONL path")->required();
  cap->add_option("--beam", cap_beam, "Beam size");
  cap->add_option("--out", cap_out, "Write JSONL here instead of stdout");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score BLEU@1-4 and CIDEr-D against references");
  std::string ev_ckpt, ev_data, ev_out;
  std::optional<std::size_t> ev_beam;
  bool ev_csv = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Dataset JSONL path")->required();
  ev->add_option("--beam", ev_beam, "Beam size (default: checkpoint config)");
  ev->add_option("--out", ev_out, "Report output directory");
  ev->add_flag("--csv", ev_csv, "Also write a per-video CSV");

  // selfcheck
  auto* sc = app.add_subcommand("selfcheck", "Run the built-in invariant suite");
  std::string sc_fault;
  sc->add_option("--inject-fault", sc_fault, "Test hook; e.g. hidden-hadamard-sign")
      ->group("");  // hidden from help

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_synth(gen_out, gen_videos, gen_attrs, gen_seed, gen_modalities, gen_dim,
                           gen_seq, gen_noise, gen_captions);
    }
    if (tr->parsed()) {
      return cmd_train(tr_data, tr_config, tr_out, tr_modalities, tr_preset, tr_seed, tr_epochs,
                       tr_attributes);
    }
    if (cap->parsed()) return cmd_caption(cap_ckpt, cap_data, cap_beam, cap_out);
    if (ev->parsed()) return cmd_evaluate(ev_ckpt, ev_data, ev_beam, ev_out, ev_csv);
    if (sc->parsed()) return cmd_selfcheck(sc_fault);
  } catch (const msan::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const msan::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const msan::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
