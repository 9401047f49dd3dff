#include "doctest_torch.hpp"

#include <numeric>

#include "sucode/errors.hpp"
#include "sucode/synth.hpp"
#include "sucode/trainer.hpp"
#include "support.hpp"

using namespace sucode;
using sucode::testing::ScratchDir;

namespace {

/// A six-triplet 16x16 dataset and one short pass through all three stages,
/// shared by the tests below.
struct TinyPipeline {
  ScratchDir dir{"pipeline"};
  RunConfig cfg = sucode::testing::tiny_config();
  CheckpointBundle s1, s2, s3;

  TinyPipeline() {
    SceneSpec spec;
    spec.canvas_size = 16;
    spec.object_count = 2;
    spec.class_count = 3;
    spec.seed = 21;
    build_dataset(6, spec, DegradationParams{}, dir / "data");
    cfg.max_steps = 4;
    s1 = run_stage(1, cfg, dir / "data", std::nullopt, dir / "s1");
    s2 = run_stage(2, cfg, dir / "data", dir / "s1", dir / "s2");
    s3 = run_stage(3, cfg, dir / "data", dir / "s2", dir / "s3");
  }

  std::shared_ptr<const Dataset> data(int stage) const {
    return std::make_shared<const Dataset>(dir / "data", cfg, LoadMode::Train, stage == 1, stage == 3);
  }
};

TinyPipeline& pipeline() {
  static TinyPipeline p;
  return p;
}

std::vector<std::string> names_of(const RunConfig& cfg, const std::string& component) {
  SucodeModel m(cfg);
  std::vector<std::string> out;
  for (const auto& a : m.arrays(component)) out.push_back(a.name);
  return out;
}

}  // namespace

TEST_CASE("stage plans") {
  using S = std::set<std::string>;
  const auto p1 = StagePlan::for_stage(1);
  CHECK((p1.trainable == S{"enc_q", "dec_q", "codebook", "disc"}));
  CHECK(p1.frozen.empty());
  const auto p2 = StagePlan::for_stage(2);
  CHECK((p2.trainable == S{"enc_r", "wpred", "dec_r", "gcam", "disc"}));
  CHECK((p2.frozen == S{"codebook"}));
  const auto p3 = StagePlan::for_stage(3);
  CHECK((p3.trainable == S{"enc_r", "dec_e", "faff", "disc"}));
  CHECK(p3.frozen.count("codebook"));
  CHECK(p3.frozen.count("wpred"));
  CHECK(p3.frozen.count("dec_r"));
  CHECK(StagePlan::for_stage(3, true).frozen.count("enc_r"));
  CHECK_THROWS_AS(StagePlan::for_stage(4), ConfigInvalid);
}

TEST_CASE("later stages need their predecessor") {
  auto& p = pipeline();
  CHECK_THROWS_AS(run_stage(2, p.cfg, p.dir / "data", std::nullopt, p.dir / "x"), StagePrereqError);
  auto cfg = p.cfg;
  cfg.stage = 3;
  CHECK_THROWS_AS(Trainer(cfg, p.data(3), p.s1), StagePrereqError);
}

TEST_CASE("frozen components are bit-identical across a stage") {
  auto& p = pipeline();
  for (const auto& name : names_of(p.cfg, "codebook")) {
    CHECK(torch::equal(p.s1.at(name), p.s2.at(name)));
    CHECK(torch::equal(p.s2.at(name), p.s3.at(name)));
  }
  for (const char* c : {"wpred", "dec_r", "gcam"})
    for (const auto& name : names_of(p.cfg, c)) {
      CHECK(torch::equal(p.s2.at(name), p.s3.at(name)));
      CHECK(p.s3.entry(name).frozen);
    }
  // Something trainable did move.
  const auto enc = names_of(p.cfg, "enc_r");
  bool moved = false;
  for (const auto& n : enc) moved |= !torch::equal(p.s2.at(n), p.s3.at(n));
  CHECK(moved);
}

TEST_CASE("frozen tensors carry no optimizer state") {
  auto& p = pipeline();
  for (const auto* b : {&p.s2, &p.s3}) {
    const int stage = b == &p.s2 ? 2 : 3;
    for (const auto& c : StagePlan::for_stage(stage).frozen)
      for (const auto& name : names_of(p.cfg, c)) CHECK_FALSE(b->contains("optim/" + name + "/exp_avg"));
    CHECK_FALSE(b->names_with_prefix("optim/").empty());
  }
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  auto& p = pipeline();
  ScratchDir d("resume");
  auto cfg = p.cfg;
  cfg.stage = 2;
  cfg.max_steps = 5;
  Trainer whole(cfg, p.data(2), p.s1);
  whole.run(5);

  Trainer first(cfg, p.data(2), p.s1);
  first.run(2);
  save_checkpoint(first.checkpoint(), d / "mid");
  Trainer rest(cfg, p.data(2), load_checkpoint(d / "mid"));
  CHECK(rest.steps_done() == 2);
  rest.run(5);
  CHECK(rest.steps_done() == 5);
  REQUIRE(rest.history().size() == 3);
  for (int i = 0; i < 3; ++i) {
    const auto& a = whole.history()[2 + i];
    const auto& b = rest.history()[i];
    CHECK(std::abs(a.total - b.total) <= 1e-6 * std::max(1.0, std::abs(a.total)));
    CHECK(std::abs(a.pixel - b.pixel) <= 1e-6);
  }
}

TEST_CASE("each stage uses its quantization route") {
  auto& p = pipeline();
  for (int stage : {1, 2, 3}) {
    auto cfg = p.cfg;
    cfg.stage = stage;
    const std::optional<CheckpointBundle> init =
        stage == 1 ? std::nullopt : std::optional<CheckpointBundle>(stage == 2 ? p.s1 : p.s2);
    Trainer t(cfg, p.data(stage), init);
    quantizer_counters().reset();
    t.run(2);
    if (stage == 1) {
      CHECK(quantizer_counters().with_mask == 2);
      CHECK(quantizer_counters().per_class == 0);
    } else {
      CHECK(quantizer_counters().with_mask == 0);
      CHECK(quantizer_counters().per_class >= 2);
    }
  }
}

TEST_CASE("enhancement is deterministic and shape-preserving") {
  auto& p = pipeline();
  Enhancer e(p.s3);
  for (int side : {16, 32}) {
    const auto raw = sucode::testing::random_image(side, side, side);
    const auto a = e.enhance(raw), b = e.enhance(raw);
    CHECK(torch::equal(a.data(), b.data()));
    CHECK(a.height() == side);
    CHECK(a.width() == side);
    CHECK(a.data().min().item<float>() >= 0.f);
    CHECK(a.data().max().item<float>() <= 1.f);
  }
  CHECK_THROWS_AS(Enhancer{p.s2}, CheckpointIncomplete);
}

TEST_CASE("cost accounting") {
  CheckpointBundle empty;
  const auto none = count_cost(empty, 64);
  CHECK(none.params == 0);
  CHECK(none.mult_adds == 0);

  CheckpointBundle one;
  one.config_snapshot = sucode::testing::tiny_config();
  one.put("conv/weight", torch::zeros({16, 16, 3, 3}), false, 1);
  one.put("conv/bias", torch::zeros({16}), false, 1);
  CHECK(count_cost(one, 64).params == 2320);

  // A fully convolutional graph scales with the pixel count.
  Discriminator disc(4);
  std::int64_t small = 0, large = 0;
  {
    CostScope s;
    disc->forward(torch::zeros({1, 3, 64, 64}));
    small = s.mult_adds();
  }
  {
    CostScope s;
    disc->forward(torch::zeros({1, 3, 128, 128}));
    large = s.mult_adds();
  }
  CHECK(large == 4 * small);

  auto& p = pipeline();
  const auto c16 = count_cost(p.s3, 16), c32 = count_cost(p.s3, 32);
  CHECK(c16.params == c32.params);
  CHECK(c16.params > 0);
  CHECK(c32.mult_adds >= 4 * c16.mult_adds);
}

TEST_CASE("stage-one reconstruction loss falls") {
  auto& p = pipeline();
  auto cfg = p.cfg;
  cfg.stage = 1;
  cfg.max_steps = 60;
  cfg.lr_generator = 1e-3;
  Trainer t(cfg, p.data(1), std::nullopt);
  t.run(60);
  const auto& h = t.history();
  auto mean_pixel = [&](std::size_t lo, std::size_t hi) {
    double s = 0;
    for (auto i = lo; i < hi; ++i) s += h[i].pixel;
    return s / static_cast<double>(hi - lo);
  };
  CHECK(mean_pixel(h.size() - 6, h.size()) < mean_pixel(0, 3));
}
