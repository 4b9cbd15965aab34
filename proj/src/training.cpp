#include "msan/training.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace msan {

using json = nlohmann::json;

TrainConfig TrainConfig::synthetic_preset() {
  TrainConfig c;
  c.n_h = 32;
  c.n_f = 32;
  c.n_enc = 32;
  c.n_x = 32;
  c.attribute_k = 20;
  c.learning_rate = 2e-3;
  c.max_epochs = 15;
  c.dropout = 0.0;
  c.patience = 5;
  return c;
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ParseError("config key \"" + key + "\" expects a boolean, got \"" + v + "\"");
}

std::vector<std::string> parse_modalities(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v + ',') {
    if (ch == ',') {
      if (!cur.empty()) {
        std::string full = cur;
        if (cur == "f") full = "frames";
        if (cur == "c") full = "clips";
        if (cur == "o") full = "flow";
        out.push_back(full);
        cur.clear();
      }
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  return out;
}

}  // namespace

void TrainConfig::apply(const std::string& key, const std::string& value) {
  try {
    if (key == "learning_rate") learning_rate = std::stod(value);
    else if (key == "max_epochs") max_epochs = std::stoul(value);
    else if (key == "clip_norm") clip_norm = std::stod(value);
    else if (key == "dropout") dropout = std::stod(value);
    else if (key == "patience") patience = std::stoul(value);
    else if (key == "early_stop") early_stop = parse_bool(value, key);
    else if (key == "alpha") alpha = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "beam_size") beam_size = std::stoul(value);
    else if (key == "init_range") init_range = std::stod(value);
    else if (key == "n_h") n_h = std::stoul(value);
    else if (key == "n_f") n_f = std::stoul(value);
    else if (key == "n_enc") n_enc = std::stoul(value);
    else if (key == "n_det") n_det = std::stoul(value);
    else if (key == "n_x") n_x = std::stoul(value);
    else if (key == "n_a") n_a = std::stoul(value);
    else if (key == "attribute_k") attribute_k = std::stoul(value);
    else if (key == "batch_size") batch_size = std::stoul(value);
    else if (key == "max_caption_len") max_caption_len = std::stoul(value);
    else if (key == "attn_modalities") attn_modalities = parse_modalities(value);
    else if (key == "use_semantic_attention") use_semantic_attention = parse_bool(value, key);
    else if (key == "beam_length_norm") beam_length_norm = parse_bool(value, key);
    else if (key == "embedding_file") embedding_file = value;
    else if (key == "stopword_file") stopword_file = value;
    else if (key == "precision") {
      if (value == "f64") precision = Precision::F64;
      else if (value == "f32") precision = Precision::F32;
      else throw ParseError("precision must be f64 or f32, got \"" + value + "\"");
    }
    else throw ParseError("unknown config key \"" + key + "\"");
  } catch (const std::invalid_argument&) {
    throw ParseError("config key \"" + key + "\" has a malformed value \"" + value + "\"");
  } catch (const std::out_of_range&) {
    throw ParseError("config key \"" + key + "\" has an out-of-range value \"" + value + "\"");
  }
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  long line_no = 0;
  std::string preset;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    std::string key, value;
    if (eq == std::string::npos) {
      std::istringstream is(line);
      if (!(is >> key)) continue;  // blank line
      throw ParseError("expected `key = value`", line_no);
    }
    auto trim = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t");
      std::size_t e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    key = trim(line.substr(0, eq));
    value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key before '='", line_no);
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(key, value);
    }
  }
  TrainConfig config;
  if (!preset.empty()) {
    if (preset == "synthetic") config = TrainConfig::synthetic_preset();
    else if (preset == "full") config = TrainConfig();
    else throw ParseError("unknown preset \"" + preset + "\" (expected synthetic or full)");
  }
  for (const auto& [k, v] : entries) config.apply(k, v);
  return config;
}

namespace {

std::map<std::string, std::vector<double>> load_embedding_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open embedding file: " + path);
  std::map<std::string, std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    std::string word;
    if (!(is >> word)) continue;
    std::vector<double> values;
    double x;
    while (is >> x) values.push_back(x);
    if (values.empty()) throw ParseError("embedding row without values", line_no);
    rows[word] = std::move(values);
  }
  return rows;
}

}  // namespace

void init_params(Model& model, const TrainConfig& config) {
  if (config.init_range <= 0) throw UsageError("init_range must be positive");
  SplitMix64 rng = SplitMix64(config.seed).fork(0);
  std::map<std::string, std::vector<double>> pretrained;
  if (!config.embedding_file.empty()) pretrained = load_embedding_file(config.embedding_file);

  for (const ParamInfo& info : param_layout(model.dims)) {
    Tensor& t = model.params.at(info.name);
    switch (info.kind) {
      case ParamKind::Bias:
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
        break;
      case ParamKind::Weight:
      case ParamKind::Embedding:
        for (std::size_t i = 0; i < t.size(); ++i) {
          t[i] = rng.next_uniform(-config.init_range, config.init_range);
        }
        break;
    }
    if (info.kind == ParamKind::Embedding && !pretrained.empty()) {
      for (std::size_t row = 0; row < model.vocab.size(); ++row) {
        auto it = pretrained.find(model.vocab.token(static_cast<int>(row)));
        if (it == pretrained.end()) continue;
        if (it->second.size() != model.dims.n_x) {
          throw SchemaError("embedding file dimension " + std::to_string(it->second.size()) +
                            " does not match n_x " + std::to_string(model.dims.n_x));
        }
        for (std::size_t j = 0; j < model.dims.n_x; ++j) t.at(row, j) = it->second[j];
      }
    }
    if (config.precision == Precision::F32) quantize_to_f32(t);
  }
}

double clip_gradients(GradientMap& grads, double threshold) {
  if (threshold <= 0) throw UsageError("clip threshold must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  }
  double norm = std::sqrt(sq);
  if (norm > threshold) {
    double s = threshold / norm;
    for (auto& [name, g] : grads) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

void AdamOptimizer::step(ParamStore& params, const GradientMap& grads, Precision precision) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (const std::string& name : params.names()) {
    const Tensor& g = grads.at(name);
    Tensor& p = params.at(name);
    Tensor& m = m_.try_emplace(name, Tensor::zeros(g.shape().empty()
                                                       ? std::vector<std::size_t>{}
                                                       : g.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(g.shape().empty()
                                                       ? std::vector<std::size_t>{}
                                                       : g.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      p[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps);
    }
    if (precision == Precision::F32) quantize_to_f32(p);
  }
}

namespace {

struct PreparedExample {
  const VideoRecord* record;
  Tensor labels;
  std::vector<std::vector<int>> references;  // encoded content tokens per caption
};

std::vector<int> encode_caption(const Vocabulary& vocab, const std::string& caption) {
  return vocab.encode(tokenize(caption));
}

double joint_loss_value(const Model& model, const PreparedExample& ex, const TrainConfig& cfg) {
  Tape tape(cfg.precision, false);
  VideoEncoding enc = encode_video(tape, model, *ex.record);
  double loss1 = tape.scalar_value(detector_loss(tape, model, enc, ex.labels, cfg.alpha));
  double loss2 = 0.0;
  for (const std::vector<int>& ref : ex.references) {
    loss2 += tape.scalar_value(caption_loss(tape, model, enc, ref, cfg.max_caption_len));
  }
  loss2 /= static_cast<double>(ex.references.size());
  return loss1 + loss2;
}

std::vector<PreparedExample> prepare(const Corpus& corpus, const Model& model) {
  std::vector<PreparedExample> out;
  out.reserve(corpus.size());
  for (const VideoRecord& r : corpus.records) {
    PreparedExample ex;
    ex.record = &r;
    ex.labels = attribute_labels(r, model.attr_vocab);
    for (const std::string& caption : r.captions) {
      ex.references.push_back(encode_caption(model.vocab, caption));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

double validation_loss(const Model& model, const Corpus& corpus, const TrainConfig& config) {
  if (corpus.empty()) throw UsageError("validation corpus is empty");
  std::vector<PreparedExample> examples = prepare(corpus, model);
  double total = 0.0;
  for (const PreparedExample& ex : examples) total += joint_loss_value(model, ex, config);
  return total / static_cast<double>(examples.size());
}

TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_corpus.empty()) throw UsageError("training corpus is empty");
  if (val_corpus.empty()) throw UsageError("validation corpus is empty (need a split)");

  std::set<std::string> stopwords = config.stopword_file.empty()
                                        ? default_stopwords()
                                        : load_stopwords(config.stopword_file);
  Vocabulary vocab = Vocabulary::build({&train_corpus, &val_corpus});
  AttributeVocabulary attrs =
      AttributeVocabulary::build({&train_corpus, &val_corpus}, config.attribute_k, stopwords);

  ModelDims dims;
  dims.modalities = train_corpus.modalities();
  dims.stream_dims = train_corpus.stream_dims();
  dims.attn_modalities = config.attn_modalities;
  dims.use_semantic_attention = config.use_semantic_attention;
  dims.n_enc = config.n_enc;
  dims.n_det = config.resolved_n_det();
  dims.attribute_count = config.attribute_k;
  dims.n_h = config.n_h;
  dims.n_f = config.n_f;
  dims.n_x = config.n_x;
  dims.n_a = config.resolved_n_a();

  Model model = build_model(std::move(dims), std::move(vocab), std::move(attrs));
  init_params(model, config);

  std::vector<PreparedExample> examples = prepare(train_corpus, model);

  SplitMix64 root(config.seed);
  SplitMix64 shuffle_rng = root.fork(1);
  SplitMix64 ref_rng = root.fork(2);
  SplitMix64 dropout_rng = root.fork(3);

  AdamOptimizer adam(config.learning_rate);

  ParamStore best_params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_without_improvement = 0;

  TrainResult result;

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  GradientMap batch_grads;
  std::size_t batch_count = 0;
  auto flush_batch = [&]() {
    if (batch_count == 0) return;
    if (batch_count > 1) {
      for (auto& [name, g] : batch_grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= static_cast<double>(batch_count);
      }
    }
    clip_gradients(batch_grads, config.clip_norm);
    adam.step(model.params, batch_grads, config.precision);
    batch_grads.clear();
    batch_count = 0;
  };

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double epoch_loss1 = 0.0;
    double epoch_loss2 = 0.0;
    for (std::size_t idx : order) {
      const PreparedExample& ex = examples[idx];
      std::size_t ref_idx = ex.references.size() == 1
                                ? 0
                                : static_cast<std::size_t>(ref_rng.next_below(ex.references.size()));
      try {
        Tape tape(config.precision, true);
        VideoEncoding enc = encode_video(tape, model, *ex.record);
        Var loss1 = detector_loss(tape, model, enc, ex.labels, config.alpha);
        Var loss2 = caption_loss(tape, model, enc, ex.references[ref_idx],
                                 config.max_caption_len, config.dropout,
                                 config.dropout > 0 ? &dropout_rng : nullptr);
        Var loss = tape.add(loss1, loss2);
        double loss_value = tape.scalar_value(loss);
        if (!std::isfinite(loss_value)) throw NumericError("non-finite joint loss");
        epoch_loss1 += tape.scalar_value(loss1);
        epoch_loss2 += tape.scalar_value(loss2);
        tape.backward(loss);
        GradientMap grads = tape.gradients(model.params);
        if (batch_grads.empty()) {
          batch_grads = std::move(grads);
        } else {
          for (auto& [name, g] : batch_grads) {
            const Tensor& add = grads.at(name);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += add[i];
          }
        }
        ++batch_count;
        if (batch_count >= config.batch_size) flush_batch();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " while training on example \"" +
                           ex.record->id + "\" (epoch " + std::to_string(epoch) + ")");
      }
    }
    flush_batch();

    EpochLog log;
    log.epoch = epoch;
    log.train_loss1 = epoch_loss1 / static_cast<double>(examples.size());
    log.train_loss2 = epoch_loss2 / static_cast<double>(examples.size());
    log.val_loss = validation_loss(model, val_corpus, config);
    log.learning_rate = config.learning_rate;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      best_epoch = epoch;
      best_params = model.params;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (config.early_stop && epochs_without_improvement > config.patience) break;
    }
  }

  if (best_epoch == 0) {
    best_params = model.params;
    best_epoch = result.log.empty() ? 0 : result.log.back().epoch;
    best_val = result.log.empty() ? 0.0 : result.log.back().val_loss;
  }
  model.params = std::move(best_params);
  result.checkpoint = Checkpoint{std::move(model), config, best_epoch, best_val};
  return result;
}

// ---- checkpoint serialization ----

namespace {

constexpr int kCheckpointVersion = 1;

json config_to_json(const TrainConfig& c) {
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
  j["n_det"] = c.n_det;
  j["n_x"] = c.n_x;
  j["n_a"] = c.n_a;
  j["attribute_k"] = c.attribute_k;
  j["batch_size"] = c.batch_size;
  j["max_caption_len"] = c.max_caption_len;
  j["precision"] = c.precision == Precision::F64 ? "f64" : "f32";
  j["attn_modalities"] = c.attn_modalities;
  j["use_semantic_attention"] = c.use_semantic_attention;
  j["beam_length_norm"] = c.beam_length_norm;
  j["embedding_file"] = c.embedding_file;
  j["stopword_file"] = c.stopword_file;
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.early_stop = j.at("early_stop").get<bool>();
  c.alpha = j.at("alpha").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.beam_size = j.at("beam_size").get<std::size_t>();
  c.init_range = j.at("init_range").get<double>();
  c.n_h = j.at("n_h").get<std::size_t>();
  c.n_f = j.at("n_f").get<std::size_t>();
  c.n_enc = j.at("n_enc").get<std::size_t>();
  c.n_det = j.at("n_det").get<std::size_t>();
  c.n_x = j.at("n_x").get<std::size_t>();
  c.n_a = j.at("n_a").get<std::size_t>();
  c.attribute_k = j.at("attribute_k").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_caption_len = j.at("max_caption_len").get<std::size_t>();
  c.precision = j.at("precision").get<std::string>() == "f32" ? Precision::F32 : Precision::F64;
  c.attn_modalities = j.at("attn_modalities").get<std::vector<std::string>>();
  c.use_semantic_attention = j.at("use_semantic_attention").get<bool>();
  c.beam_length_norm = j.at("beam_length_norm").get<bool>();
  c.embedding_file = j.at("embedding_file").get<std::string>();
  c.stopword_file = j.at("stopword_file").get<std::string>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json j;
  j["format"] = "msan-checkpoint";
  j["version"] = kCheckpointVersion;
  j["epoch"] = ckpt.epoch;
  j["val_loss"] = ckpt.val_loss;
  j["config"] = config_to_json(ckpt.config);

  const ModelDims& d = ckpt.model.dims;
  json dims;
  dims["modalities"] = d.modalities;
  dims["stream_dims"] = d.stream_dims;
  dims["attn_modalities"] = d.attn_modalities;
  dims["use_semantic_attention"] = d.use_semantic_attention;
  dims["n_enc"] = d.n_enc;
  dims["n_det"] = d.n_det;
  dims["attribute_count"] = d.attribute_count;
  dims["n_h"] = d.n_h;
  dims["n_f"] = d.n_f;
  dims["n_x"] = d.n_x;
  dims["n_a"] = d.n_a;
  dims["vocab_size"] = d.vocab_size;
  j["dims"] = std::move(dims);

  std::vector<std::string> content(ckpt.model.vocab.tokens().begin() + 4,
                                   ckpt.model.vocab.tokens().end());
  j["vocab"] = content;
  j["attr_vocab"] = ckpt.model.attr_vocab.words();

  json params = json::object();
  for (const std::string& name : ckpt.model.params.names()) {
    const Tensor& t = ckpt.model.params.at(name);
    json entry;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.data(), t.data() + t.size());
    params[name] = std::move(entry);
  }
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw UsageError("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
  if (!out) throw UsageError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid checkpoint JSON: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "msan-checkpoint") {
    throw SchemaError("not an msan checkpoint: " + path);
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version");
  }

  const json& dj = j.at("dims");
  ModelDims dims;
  dims.modalities = dj.at("modalities").get<std::vector<std::string>>();
  dims.stream_dims = dj.at("stream_dims").get<std::map<std::string, std::size_t>>();
  dims.attn_modalities = dj.at("attn_modalities").get<std::vector<std::string>>();
  dims.use_semantic_attention = dj.at("use_semantic_attention").get<bool>();
  dims.n_enc = dj.at("n_enc").get<std::size_t>();
  dims.n_det = dj.at("n_det").get<std::size_t>();
  dims.attribute_count = dj.at("attribute_count").get<std::size_t>();
  dims.n_h = dj.at("n_h").get<std::size_t>();
  dims.n_f = dj.at("n_f").get<std::size_t>();
  dims.n_x = dj.at("n_x").get<std::size_t>();
  dims.n_a = dj.at("n_a").get<std::size_t>();

  Vocabulary vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
  AttributeVocabulary attrs =
      AttributeVocabulary::from_words(j.at("attr_vocab").get<std::vector<std::string>>());

  Model model = build_model(std::move(dims), std::move(vocab), std::move(attrs));
  if (model.dims.vocab_size != dj.at("vocab_size").get<std::size_t>()) {
    throw SchemaError("checkpoint vocab_size does not match its vocabulary");
  }
  const json& params = j.at("params");
  for (const std::string& name : model.params.names()) {
    if (!params.contains(name)) throw SchemaError("checkpoint missing parameter " + name);
    const json& entry = params.at(name);
    Tensor& t = model.params.at(name);
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != t.shape()) throw SchemaError("checkpoint shape mismatch for " + name);
    auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.size()) throw SchemaError("checkpoint data size mismatch for " + name);
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i];
  }

  Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.config = config_from_json(j.at("config"));
  ckpt.epoch = j.at("epoch").get<std::size_t>();
  ckpt.val_loss = j.at("val_loss").get<double>();
  return ckpt;
}

}  // namespace msan
