#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "msan/training.hpp"
#include "test_helpers.hpp"

using namespace msan;
using msan::test::make_random_model;
using msan::test::random_record;
using msan::test::small_dims;

namespace {

SyntheticSpec tiny_spec(std::size_t n_videos, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_videos = n_videos;
  spec.n_attributes = 4;
  spec.feature_dim = 6;
  spec.seq_len = 3;
  spec.noise = 0.05;
  spec.seed = seed;
  return spec;
}

TrainConfig tiny_config() {
  TrainConfig cfg = TrainConfig::synthetic_preset();
  cfg.n_h = 12;
  cfg.n_f = 12;
  cfg.n_enc = 10;
  cfg.n_x = 8;
  cfg.attribute_k = 4;
  cfg.max_epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.early_stop = false;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("init_params: deterministic, ranged, zero biases") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(4, 3));
  Vocabulary vocab = Vocabulary::build({&corpus});
  AttributeVocabulary attrs = AttributeVocabulary::build({&corpus}, 4, default_stopwords());

  TrainConfig cfg = tiny_config();
  ModelDims dims = small_dims(1);
  dims.stream_dims["frames"] = 6;
  dims.attribute_count = 4;

  Model a = build_model(dims, vocab, attrs);
  init_params(a, cfg);
  Model b = build_model(dims, vocab, attrs);
  init_params(b, cfg);

  bool weight_seen = false;
  for (const ParamInfo& info : param_layout(a.dims)) {
    const Tensor& ta = a.params.at(info.name);
    const Tensor& tb = b.params.at(info.name);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i] == tb[i]);  // bit-identical across runs
      if (info.kind == ParamKind::Bias) {
        CHECK(ta[i] == 0.0);
      } else {
        CHECK(std::abs(ta[i]) <= cfg.init_range);
        weight_seen = weight_seen || ta[i] != 0.0;
      }
    }
  }
  CHECK(weight_seen);
}

TEST_CASE("init_params honors an embedding file") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(4, 3));
  Vocabulary vocab = Vocabulary::build({&corpus});
  AttributeVocabulary attrs = AttributeVocabulary::build({&corpus}, 4, default_stopwords());
  ModelDims dims = small_dims(1);
  dims.stream_dims["frames"] = 6;
  dims.attribute_count = 4;
  dims.n_x = 3;

  auto path = std::filesystem::temp_directory_path() / "msan_test_emb.txt";
  std::string word = vocab.token(4);
  {
    std::ofstream out(path);
    out << word << " 0.25 -0.5 0.75\n";
    out << "notinvocab 1 1 1\n";
  }
  TrainConfig cfg = tiny_config();
  cfg.n_x = 3;
  cfg.embedding_file = path.string();
  Model m = build_model(dims, vocab, attrs);
  init_params(m, cfg);
  const Tensor& e = m.params.at("emb.E");
  CHECK(e.at(4, 0) == 0.25);
  CHECK(e.at(4, 1) == -0.5);
  CHECK(e.at(4, 2) == 0.75);
  std::filesystem::remove(path);
}

TEST_CASE("clip_gradients scales by the global norm") {
  SUBCASE("below the threshold: unchanged") {
    GradientMap g;
    g.emplace("p", Tensor::vector({3.0, 0.0}));
    double norm = clip_gradients(g, 5.0);
    CHECK(norm == doctest::Approx(3.0));
    CHECK(g.at("p")[0] == 3.0);
  }
  SUBCASE("exactly at the threshold: unchanged") {
    GradientMap g;
    g.emplace("p", Tensor::vector({3.0, 4.0}));
    clip_gradients(g, 5.0);
    CHECK(g.at("p")[0] == 3.0);
    CHECK(g.at("p")[1] == 4.0);
  }
  SUBCASE("above the threshold: rescaled to it") {
    GradientMap g;
    g.emplace("p", Tensor::vector({6.0, 8.0}));
    double norm = clip_gradients(g, 5.0);
    CHECK(norm == doctest::Approx(10.0));
    CHECK(g.at("p")[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(g.at("p")[1] == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("norm spans multiple tensors and never grows") {
    SplitMix64 rng(9);
    GradientMap g;
    for (int i = 0; i < 4; ++i) {
      Tensor t({5});
      for (std::size_t j = 0; j < 5; ++j) t[j] = rng.next_uniform(-3, 3);
      g.emplace("p" + std::to_string(i), std::move(t));
    }
    clip_gradients(g, 2.0);
    double sq = 0.0;
    for (const auto& [name, t] : g) {
      for (std::size_t j = 0; j < t.size(); ++j) sq += t[j] * t[j];
    }
    CHECK(std::sqrt(sq) <= 2.0 + 1e-9);
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore params;
  params.create("p", Tensor::vector({1.0, -2.0}));
  GradientMap g;
  g.emplace("p", Tensor::zeros({2}));
  AdamOptimizer adam(0.1);
  adam.step(params, g);
  CHECK(params.at("p")[0] == 1.0);
  CHECK(params.at("p")[1] == -2.0);
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
  ParamStore params;
  params.create("p", Tensor::vector({1.0, 1.0}));
  GradientMap g;
  g.emplace("p", Tensor::vector({0.3, -7.0}));
  AdamOptimizer adam(0.01);
  adam.step(params, g);
  CHECK(params.at("p")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(params.at("p")[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("adam: three steps on p^2 decrease it monotonically") {
  ParamStore params;
  params.create("p", Tensor::vector({1.0}));
  AdamOptimizer adam(0.1);
  double prev = 1.0;
  for (int i = 0; i < 3; ++i) {
    GradientMap g;
    g.emplace("p", Tensor::vector({2.0 * params.at("p")[0]}));
    adam.step(params, g);
    double f = params.at("p")[0] * params.at("p")[0];
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("joint loss gradient is the sum of the two losses' gradients") {
  Model model = make_random_model(small_dims(2), 120);
  VideoRecord rec = random_record(model.dims, 121, 2);
  Tensor labels({model.dims.attribute_count});
  labels[0] = 1.0;
  std::vector<int> caption = {4, 5};

  auto grads_for = [&](int which) {
    Tape t;
    VideoEncoding enc = encode_video(t, model, rec);
    Var l1 = detector_loss(t, model, enc, labels, 1e-4);
    Var l2 = caption_loss(t, model, enc, caption, 16);
    Var loss = which == 0 ? l1 : (which == 1 ? l2 : t.add(l1, l2));
    t.backward(loss);
    return t.gradients(model.params);
  };
  GradientMap g1 = grads_for(0);
  GradientMap g2 = grads_for(1);
  GradientMap joint = grads_for(2);
  for (const std::string& name : model.params.names()) {
    const Tensor& a = g1.at(name);
    const Tensor& b = g2.at(name);
    const Tensor& j = joint.at(name);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(j[i] - (a[i] + b[i])) < 1e-10);
    }
  }
}

TEST_CASE("train is deterministic and its loss decreases") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(6, 5));
  CorpusSplits splits = split_corpus(corpus, 0.67, 0.33);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 4;

  TrainResult a = train(splits.train, splits.val, cfg);
  TrainResult b = train(splits.train, splits.val, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].val_loss == b.log[i].val_loss);  // bit-identical
  }
  for (const std::string& name : a.checkpoint.model.params.names()) {
    const Tensor& ta = a.checkpoint.model.params.at(name);
    const Tensor& tb = b.checkpoint.model.params.at(name);
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
  }
  CHECK(a.log.back().train_loss2 < a.log.front().train_loss2);
  CHECK(a.checkpoint.val_loss <= a.log.back().val_loss);
}

TEST_CASE("patience zero stops after the first non-improving epoch") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(6, 6));
  CorpusSplits splits = split_corpus(corpus, 0.67, 0.33);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 50;
  cfg.early_stop = true;
  cfg.patience = 0;
  cfg.learning_rate = 0.2;  // aggressive on purpose, to force a regression

  TrainResult r = train(splits.train, splits.val, cfg);
  CHECK(r.log.size() < 50);
  // the run ends exactly one epoch after the best one
  std::size_t best_epoch = r.checkpoint.epoch;
  CHECK(r.log.size() == best_epoch + 1);
}

TEST_CASE("training aborts with a diagnostic naming the offending example") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(4, 7));
  corpus.records[1].streams["frames"][0][0] = std::nan("");  // poisoned feature
  CorpusSplits splits = split_corpus(corpus, 0.5, 0.5);
  TrainConfig cfg = tiny_config();
  try {
    train(splits.train, splits.val, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("synth1") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(6, 8));
  CorpusSplits splits = split_corpus(corpus, 0.67, 0.33);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 2;
  TrainResult r = train(splits.train, splits.val, cfg);

  auto path = std::filesystem::temp_directory_path() / "msan_test_ckpt.json";
  save_checkpoint(r.checkpoint, path.string());
  Checkpoint loaded = load_checkpoint(path.string());

  CHECK(loaded.epoch == r.checkpoint.epoch);
  CHECK(loaded.val_loss == r.checkpoint.val_loss);
  CHECK(loaded.model.vocab == r.checkpoint.model.vocab);
  CHECK(loaded.model.attr_vocab == r.checkpoint.model.attr_vocab);
  CHECK(loaded.model.dims.modalities == r.checkpoint.model.dims.modalities);
  for (const std::string& name : r.checkpoint.model.params.names()) {
    const Tensor& ta = r.checkpoint.model.params.at(name);
    const Tensor& tb = loaded.model.params.at(name);
    REQUIRE(ta.same_shape(tb));
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
  }

  // a second save must produce identical bytes
  auto path2 = std::filesystem::temp_directory_path() / "msan_test_ckpt2.json";
  save_checkpoint(loaded, path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("f32 training mode keeps values representable and deterministic") {
  Corpus corpus = generate_synthetic_corpus(tiny_spec(4, 9));
  CorpusSplits splits = split_corpus(corpus, 0.5, 0.5);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 2;
  cfg.precision = Precision::F32;
  TrainResult a = train(splits.train, splits.val, cfg);
  TrainResult b = train(splits.train, splits.val, cfg);
  for (const std::string& name : a.checkpoint.model.params.names()) {
    const Tensor& ta = a.checkpoint.model.params.at(name);
    const Tensor& tb = b.checkpoint.model.params.at(name);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i] == tb[i]);
      CHECK(static_cast<double>(static_cast<float>(ta[i])) == ta[i]);
    }
  }
}

TEST_CASE("config defaults match the published training settings") {
  TrainConfig cfg;
  CHECK(cfg.init_range == 0.05);
  CHECK(cfg.n_h == 512);
  CHECK(cfg.n_f == 512);
  CHECK(cfg.learning_rate == 1e-4);
  CHECK(cfg.clip_norm == 5.0);
  CHECK(cfg.max_epochs == 20);
  CHECK(cfg.beam_size == 5);
  CHECK(cfg.dropout == 0.5);
}

TEST_CASE("config files parse, apply presets, and reject unknown keys") {
  auto path = std::filesystem::temp_directory_path() / "msan_test_config.txt";
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "preset = synthetic\n";
    out << "learning_rate = 0.005\n";
    out << "attn_modalities = f,o\n";
    out << "use_semantic_attention = false\n";
  }
  TrainConfig cfg = load_train_config(path.string());
  CHECK(cfg.n_h == 32);  // from the preset
  CHECK(cfg.learning_rate == 0.005);
  CHECK(cfg.attn_modalities == std::vector<std::string>{"frames", "flow"});
  CHECK(cfg.use_semantic_attention == false);

  {
    std::ofstream out(path);
    out << "learning_rte = 0.005\n";
  }
  CHECK_THROWS_AS(load_train_config(path.string()), ParseError);
  std::filesystem::remove(path);
}
