#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "helpers.hpp"
#include "nst/common.hpp"
#include "nst/infer.hpp"
#include "nst/noise.hpp"
#include "nst/train.hpp"

using namespace nst;

namespace {

TrainConfig small_config(TrainMode mode = TrainMode::Monet, int epochs = 2) {
  TrainConfig c;
  c.mode = mode;
  c.batch_size = 4;
  c.epochs = epochs;
  c.lr_encoder = 1e-3;
  c.lr_heads = 2e-3;
  c.noise_threshold = 0.4;
  c.temperature = 0.1;
  c.seed = 11;
  c.encoder.n_layers = 1;
  c.encoder.n_heads = 2;
  c.encoder.d_model = 16;
  c.encoder.d_ff = 32;
  c.encoder.max_len = 64;
  c.encoder.dropout = 0.1;
  return c;
}

SyntheticCorpus small_corpus(int n = 8) {
  SyntheticConfig cfg;
  cfg.n_dialogues = n;
  cfg.n_slots = 3;
  cfg.values_per_slot = 3;
  cfg.min_turns = 2;
  cfg.max_turns = 3;
  cfg.seed = 5;
  return generate_synthetic_corpus(cfg);
}

}  // namespace

TEST_CASE("training instances follow teacher forcing") {
  Ontology o = testutil::tiny_ontology();
  Dialogue d;
  d.id = "d1";
  d.turns.push_back({"s1", "u1", testutil::make_state(o, {{"train-day", "sunday"}})});
  d.turns.push_back({"s2", "u2", testutil::make_state(o, {{"train-day", "monday"}})});
  d.turns.push_back(
      {"s3", "u3", testutil::make_state(o, {{"train-day", "monday"}, {"hotel-area", "north"}})});

  auto instances = make_training_instances({d}, o);
  REQUIRE(instances.size() == 3);
  CHECK(instances[0].fields.prev_state == all_none_state(o));
  CHECK(instances[0].fields.history.empty());
  CHECK(instances[1].fields.prev_state == d.turns[0].gold_state);
  CHECK(instances[2].fields.prev_state == d.turns[1].gold_state);
  CHECK(instances[2].fields.history.size() == 2);
  CHECK(instances[2].turn_index == 3);
  CHECK(instances[2].gold == d.turns[2].gold_state);
}

TEST_CASE("config parsing validates modes and keys") {
  CHECK(train_mode_from_string("monet") == TrainMode::Monet);
  CHECK(train_mode_from_string("baseline_no_state") == TrainMode::BaselineNoState);
  CHECK_THROWS_AS(train_mode_from_string("nope"), Error);

  TrainConfig c = train_config_from_json_text(R"({"mode": "monet_cm", "batch_size": 4})", "test");
  CHECK(c.mode == TrainMode::MonetCm);
  CHECK(c.batch_size == 4);
  CHECK(c.noise_threshold == 0.3);
  CHECK(c.temperature == 0.1);
  CHECK(c.lr_encoder == 4e-5);
  CHECK(c.lr_heads == 1e-4);

  CHECK_THROWS_AS(train_config_from_json_text(R"({"typo_key": 1})", "test"), Error);
  CHECK_THROWS_AS(train_config_from_json_text(R"({"batch_size": 0})", "test"), Error);
  CHECK_THROWS_AS(train_config_from_json_text(R"({"noise_threshold": 1.5})", "test"), Error);

  TrainConfig back = train_config_from_json_text(train_config_to_json_text(c), "test");
  CHECK(train_config_to_json_text(back) == train_config_to_json_text(c));
}

TEST_CASE("mode flags") {
  CHECK(TrainConfig{.mode = TrainMode::Baseline}.objective_flags().use_noised == false);
  CHECK(TrainConfig{.mode = TrainMode::Baseline}.objective_flags().use_contrastive == false);
  CHECK(TrainConfig{.mode = TrainMode::MonetSt}.objective_flags().use_noised == true);
  CHECK(TrainConfig{.mode = TrainMode::MonetSt}.objective_flags().use_contrastive == false);
  CHECK(TrainConfig{.mode = TrainMode::MonetCm}.objective_flags().use_noised == false);
  CHECK(TrainConfig{.mode = TrainMode::MonetCm}.objective_flags().use_contrastive == true);
  CHECK(TrainConfig{.mode = TrainMode::Monet}.objective_flags().use_contrastive == true);
  CHECK(TrainConfig{.mode = TrainMode::Baseline}.uses_noise() == false);
  CHECK(TrainConfig{.mode = TrainMode::BaselineNoState}.include_state() == false);
  CHECK(TrainConfig{.mode = TrainMode::Monet}.include_state() == true);
}

TEST_CASE("seeded training is bit-reproducible") {
  SyntheticCorpus c = small_corpus();
  SplitResult split = split_corpus(c.dialogues, {0.75, 0.25, 0.0}, 3);
  TrainConfig cfg = small_config();

  TrainResult a = train(cfg, split.train, split.validation, c.ontology);
  TrainResult b = train(cfg, split.train, split.validation, c.ontology);

  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss_total == b.history[i].loss_total);  // to the last bit
    CHECK(a.history[i].val_joint == b.history[i].val_joint);
  }
  auto pa = a.final_model.trainable_params();
  auto pb = b.final_model.trainable_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->w == pb[i].tensor->w);
}

TEST_CASE("frozen label encoder is bit-identical after training") {
  SyntheticCorpus c = small_corpus();
  SplitResult split = split_corpus(c.dialogues, {0.75, 0.25, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::Monet, 2);

  Vocabulary vocab = build_vocab(split.train, c.ontology);
  Model<float> fresh(cfg.model_config(), c.ontology, vocab, cfg.seed);
  TrainResult result = train(cfg, split.train, split.validation, c.ontology);

  CHECK(result.final_model.label_encoder().tok_emb.w == fresh.label_encoder().tok_emb.w);
  for (size_t li = 0; li < fresh.label_encoder().layers.size(); ++li) {
    CHECK(result.final_model.label_encoder().layers[li].wq.w ==
          fresh.label_encoder().layers[li].wq.w);
  }
  // and training actually changed the context encoder
  CHECK(result.final_model.context_encoder().tok_emb.w != fresh.context_encoder().tok_emb.w);
}

TEST_CASE("monet and monet_st coincide until the contrastive term enters") {
  SyntheticCorpus c = small_corpus();
  TrainConfig cfg = small_config();
  Vocabulary vocab = build_vocab(c.dialogues, c.ontology);
  Model<float> m_st(cfg.model_config(), c.ontology, vocab, cfg.seed);
  Model<float> m_full(cfg.model_config(), c.ontology, vocab, cfg.seed);

  auto instances = make_training_instances(c.dialogues, c.ontology);
  NoiseConfig nc{cfg.noise_threshold, false};
  std::vector<ObjectiveInstance> batch;
  for (size_t idx = 0; idx < 4; ++idx) {
    const auto& inst = instances[idx];
    rng::Engine noise_eng(rng::derive(cfg.seed, "noise", 1, idx));
    NoisedState noised = noise_state(inst.fields.prev_state, c.ontology, nc, noise_eng);
    ObjectiveInstance obj;
    obj.original = build_context_input(inst.fields, vocab, cfg.encoder.max_len);
    TurnContextFields nf = inst.fields;
    nf.prev_state = noised.state;
    obj.noised = build_context_input(nf, vocab, cfg.encoder.max_len);
    obj.gold = inst.gold;
    obj.dropout_seed = rng::derive(cfg.seed, "dropout", 1, idx);
    batch.push_back(std::move(obj));
  }

  LossBreakdown st = m_st.objective(batch, TrainConfig{.mode = TrainMode::MonetSt}.objective_flags(),
                                    false, true);
  LossBreakdown full = m_full.objective(
      batch, TrainConfig{.mode = TrainMode::Monet}.objective_flags(), false, true);
  CHECK(st.ori == full.ori);  // identical streams, identical DST terms
  CHECK(st.nos == full.nos);
  CHECK(st.contrastive == 0.0);
  CHECK(full.contrastive != 0.0);
  CHECK(full.total == doctest::Approx(st.total + full.contrastive));
}

TEST_CASE("checkpoint round trip reproduces probe outputs exactly") {
  SyntheticCorpus c = small_corpus();
  SplitResult split = split_corpus(c.dialogues, {0.75, 0.25, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::Monet, 1);
  TrainResult result = train(cfg, split.train, split.validation, c.ontology);

  testutil::TempDir tmp;
  save_checkpoint(result.best_model, &result.best_optimizer, cfg, result.best_epoch,
                  result.best_val, tmp.str("ckpt"));
  Checkpoint loaded = load_checkpoint(tmp.str("ckpt"));
  CHECK(loaded.epoch == result.best_epoch);
  CHECK(loaded.best_val == result.best_val);
  CHECK(loaded.has_optimizer);

  auto instances = make_training_instances(split.train, c.ontology);
  for (size_t i = 0; i < std::min<size_t>(instances.size(), 5); ++i) {
    ContextInput ctx = build_context_input(instances[i].fields, result.best_model.vocab(),
                                           cfg.encoder.max_len);
    EncoderTrace<float> t1 = result.best_model.encode(ctx);
    ContextInput ctx2 = build_context_input(instances[i].fields, loaded.model.vocab(),
                                            cfg.encoder.max_len);
    EncoderTrace<float> t2 = loaded.model.encode(ctx2);
    CHECK(t1.h == t2.h);  // 0 ulp
    CHECK(result.best_model.predict_state(ctx) == loaded.model.predict_state(ctx2));
  }
}

TEST_CASE("checkpoint rejects corruption and shape mismatches") {
  SyntheticCorpus c = small_corpus(4);
  SplitResult split = split_corpus(c.dialogues, {1.0, 0.0, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::Baseline, 1);
  TrainResult result = train(cfg, split.train, {}, c.ontology);

  testutil::TempDir tmp;
  save_checkpoint(result.best_model, nullptr, cfg, 1, 0.0, tmp.str("ckpt"));

  SUBCASE("truncated params.bin") {
    std::string blob = read_file(tmp.str("ckpt/params.bin"));
    write_file(tmp.str("ckpt/params.bin"), blob.substr(0, blob.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(tmp.str("ckpt")), Error);
  }
  SUBCASE("tampered d_model") {
    std::string manifest = read_file(tmp.str("ckpt/manifest.json"));
    auto pos = manifest.find("\"d_model\": 16");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 13, "\"d_model\": 8 ");
    write_file(tmp.str("ckpt/manifest.json"), manifest);
    CHECK_THROWS_AS(load_checkpoint(tmp.str("ckpt")), Error);
  }
  SUBCASE("garbage manifest") {
    write_file(tmp.str("ckpt/manifest.json"), "not json at all");
    CHECK_THROWS_AS(load_checkpoint(tmp.str("ckpt")), Error);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_checkpoint(tmp.str("nope")), Error); }
}

TEST_CASE("resumed training reproduces the uninterrupted trajectory") {
  SyntheticCorpus c = small_corpus();
  SplitResult split = split_corpus(c.dialogues, {0.75, 0.25, 0.0}, 3);

  TrainConfig cfg4 = small_config(TrainMode::Monet, 4);
  TrainResult full = train(cfg4, split.train, split.validation, c.ontology);

  TrainConfig cfg2 = small_config(TrainMode::Monet, 2);
  TrainResult half = train(cfg2, split.train, split.validation, c.ontology);
  testutil::TempDir tmp;
  save_checkpoint(half.final_model, &half.final_optimizer, cfg2, 2, half.best_val,
                  tmp.str("ckpt"));
  Checkpoint resume_point = load_checkpoint(tmp.str("ckpt"));
  TrainResult resumed = train(cfg4, split.train, split.validation, c.ontology, &resume_point);

  auto pa = full.final_model.trainable_params();
  auto pb = resumed.final_model.trainable_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->w == pb[i].tensor->w);
  REQUIRE(resumed.history.size() == 2);
  CHECK(resumed.history.back().loss_total == full.history.back().loss_total);
}

TEST_CASE("divergence aborts with a diagnostic") {
  SyntheticCorpus c = small_corpus();
  SplitResult split = split_corpus(c.dialogues, {1.0, 0.0, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::Baseline, 3);
  cfg.lr_encoder = 1e14;
  cfg.lr_heads = 1e14;
  try {
    train(cfg, split.train, {}, c.ontology);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("baseline_no_state trains on state-free contexts") {
  SyntheticCorpus c = small_corpus(6);
  SplitResult split = split_corpus(c.dialogues, {0.8, 0.2, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::BaselineNoState, 1);
  TrainResult result = train(cfg, split.train, split.validation, c.ontology);
  CHECK(result.history.size() == 1);
  CHECK(std::isfinite(result.history[0].loss_total));
  CHECK(result.history[0].loss_nos == 0.0);
  CHECK(result.history[0].loss_contrastive == 0.0);
}

TEST_CASE("training loss decreases on a learnable toy corpus") {
  SyntheticCorpus c = small_corpus(16);
  SplitResult split = split_corpus(c.dialogues, {0.75, 0.25, 0.0}, 3);
  TrainConfig cfg = small_config(TrainMode::Monet, 3);
  TrainResult result = train(cfg, split.train, split.validation, c.ontology);
  REQUIRE(result.history.size() == 3);
  CHECK(result.history.back().loss_total < result.history.front().loss_total);
}
