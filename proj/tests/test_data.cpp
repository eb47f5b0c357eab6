#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "das/core/optim.hpp"
#include "das/data/ablation.hpp"
#include "test_util.hpp"

using namespace das;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SyntheticSpec spec16(size_t n = 200, std::uint64_t seed = 1, std::uint64_t stream = 0) {
  SyntheticSpec s;
  s.count = n;
  s.seed = seed;
  s.stream = stream;
  return s;
}

// Logistic regression on a fixed set of pixel features, trained with Adam, scored on `test`.
double linear_probe(const Dataset<double>& train, const Dataset<double>& test,
                    const std::function<std::vector<double>(const Dataset<double>&, size_t)>& feats) {
  auto design = [&](const Dataset<double>& d) {
    const size_t f = feats(d, 0).size();
    Tensor<double> x(Shape{d.size(), f});
    for (size_t i = 0; i < d.size(); ++i) {
      const auto v = feats(d, i);
      std::copy(v.begin(), v.end(), x.ptr() + i * f);
    }
    return x;
  };
  const auto xtr = design(train), xte = design(test);
  const size_t f = xtr.dim(1);
  Parameter<double> w("w", Tensor<double>(Shape{train.classes, f})), b("b", Tensor<double>(Shape{train.classes}));
  Adam<double> opt(0.05, 0.0, 0.9);
  for (int step = 0; step < 400; ++step) {
    Tape<double> tape;
    auto loss = ops::cross_entropy(ops::dense(tape.constant(xtr), tape.param(w), tape.param(b)), train.labels);
    tape.backward(loss);
    opt.step({&w, &b});
  }
  Tape<double> tape;
  const auto logits = ops::dense(tape.constant(xte), tape.param(w, false), tape.param(b, false)).value();
  size_t correct = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    const double* row = logits.ptr() + i * test.classes;
    if (static_cast<int>(std::max_element(row, row + test.classes) - row) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// A model whose logits ignore the input entirely.
class ConstantModel : public Model<double> {
 public:
  explicit ConstantModel(size_t classes)
      : w_("w", Tensor<double>(Shape{classes, 1})), b_("b", Tensor<double>(Shape{classes})) {}
  std::vector<Parameter<double>*> parameters() override { return {&w_, &b_}; }
  Var<double> forward(const Var<double>& x, size_t, RunMode mode) override {
    const bool tr = mode == RunMode::train;
    auto zeros = x.tape->constant(Tensor<double>(Shape{x.shape()[0], 1}));
    return ops::dense(zeros, x.tape->param(w_, tr), x.tape->param(b_, tr));
  }

 private:
  Parameter<double> w_, b_;
};

RunConfig small_run() {
  RunConfig c;
  c.search_space = SearchSpace::affine5;
  c.cell = "chain:2";
  c.backbone.depth = 2;
  c.backbone.width = 4;
  c.backbone.in_channels = 1;
  c.backbone.classes = 2;
  c.search.epochs = 1;
  c.search.batch_size = 16;
  c.search.frames = 3;
  c.search.seed = 5;
  c.dataset.train = 32;
  c.dataset.test = 16;
  return c;
}

}  // namespace

TEST(CornerCue, ShapeAndBalancedLabels) {
  for (size_t k : {2, 3, 4}) {
    auto s = spec16(101);
    s.classes = k;
    const auto d = gen_synthetic_corner_cue<double>(s);
    EXPECT_EQ(d.images.shape(), (Shape{101, 1, 16, 16}));
    std::vector<int> hist(k, 0);
    for (int l : d.labels) ++hist[static_cast<size_t>(l)];
    EXPECT_LE(*std::max_element(hist.begin(), hist.end()) - *std::min_element(hist.begin(), hist.end()), 1);
  }
}

TEST(CornerCue, GlyphSitsInTheLabelledCorner) {
  const auto d = gen_synthetic_corner_cue<double>(spec16(20));
  const auto lay = CornerLayout::for_size(16, 16);
  for (size_t i = 0; i < d.size(); ++i) {
    const auto [y, x] = lay.origin(static_cast<size_t>(d.labels[i]), 16, 16);
    for (size_t dy = 0; dy < lay.glyph; ++dy)
      for (size_t dx = 0; dx < lay.glyph; ++dx) EXPECT_EQ(d.images[(i * 16 + y + dy) * 16 + x + dx], 1.0);
  }
  // class 0 top-left, class 1 bottom-right
  EXPECT_EQ(lay.origin(0, 16, 16), (std::pair<size_t, size_t>{4, 4}));
  EXPECT_EQ(lay.origin(1, 16, 16), (std::pair<size_t, size_t>{10, 10}));
}

TEST(CornerCue, SameSeedIsByteIdentical) {
  const auto dir = testutil::temp_dir("corner_bytes");
  save_dataset(dir / "a.dasd", gen_synthetic_corner_cue<float>(spec16(64, 9)));
  save_dataset(dir / "b.dasd", gen_synthetic_corner_cue<float>(spec16(64, 9)));
  save_dataset(dir / "c.dasd", gen_synthetic_corner_cue<float>(spec16(64, 10)));
  EXPECT_EQ(slurp(dir / "a.dasd"), slurp(dir / "b.dasd"));
  EXPECT_NE(slurp(dir / "a.dasd"), slurp(dir / "c.dasd"));
}

TEST(CornerCue, RejectsSmallImagesAndTooManyClasses) {
  auto s = spec16();
  s.height = 12;
  EXPECT_THROW(gen_synthetic_corner_cue<double>(s), ConfigError);
  s = spec16();
  s.classes = 5;
  EXPECT_THROW(gen_synthetic_corner_cue<double>(s), ConfigError);
}

TEST(CornerCue, CentredThreeByThreeProbeStaysNearChance) {
  const auto train = gen_synthetic_corner_cue<double>(spec16(400, 3, 0));
  const auto test = gen_synthetic_corner_cue<double>(spec16(400, 3, 1));
  auto centre = [](const Dataset<double>& d, size_t i) {
    std::vector<double> f;
    for (size_t y = 7; y <= 9; ++y)
      for (size_t x = 7; x <= 9; ++x) f.push_back(d.images[(i * 16 + y) * 16 + x]);
    return f;
  };
  EXPECT_LT(linear_probe(train, test, centre), 0.60);
}

TEST(CornerCue, WholeImageProbeSolvesIt) {
  const auto train = gen_synthetic_corner_cue<double>(spec16(200, 4, 0));
  const auto test = gen_synthetic_corner_cue<double>(spec16(200, 4, 1));
  auto all = [](const Dataset<double>& d, size_t i) {
    return std::vector<double>(d.images.ptr() + i * 256, d.images.ptr() + (i + 1) * 256);
  };
  EXPECT_GT(linear_probe(train, test, all), 0.95);
}

TEST(ScaleCue, SquareSideEncodesClass) {
  auto s = spec16(60);
  s.classes = 3;
  const auto d = gen_synthetic_scale_cue<double>(s);
  for (size_t i = 0; i < d.size(); ++i) {
    size_t bright = 0;
    for (size_t p = 0; p < 256; ++p) bright += d.images[i * 256 + p] > 0.8;
    const size_t a = 2 * 2 * (static_cast<size_t>(d.labels[i]) + 1);  // step = 16 / 8 = 2
    EXPECT_EQ(bright, a * a);
  }
}

TEST(Segmentation, LabelsFollowRectangles) {
  auto s = spec16(10);
  s.classes = 3;
  const auto d = gen_synthetic_segmentation<double>(s);
  EXPECT_TRUE(d.dense);
  EXPECT_NO_THROW(d.validate());
  for (size_t p = 0; p < d.labels.size(); ++p) {
    const double v = d.images[p];
    if (d.labels[p] == 0) EXPECT_LT(v, 0.16);
    else EXPECT_NEAR(v, 0.25 + 0.75 * d.labels[p] / 2.0, 1e-12);
  }
}

TEST(DatasetFile, RoundTrip) {
  const auto dir = testutil::temp_dir("dataset_rt");
  auto s = spec16(8);
  s.classes = 3;
  const auto d = gen_synthetic_segmentation<float>(s);
  save_dataset(dir / "d.dasd", d);
  const auto e = load_dataset<float>(dir / "d.dasd");
  EXPECT_EQ(e.labels, d.labels);
  EXPECT_EQ(content_hash(e.images), content_hash(d.images));
  EXPECT_TRUE(e.dense);
  EXPECT_EQ(e.classes, 3u);
}

TEST(Cifar, ZeroRecordWithLabelSeven) {
  const auto dir = testutil::temp_dir("cifar_zero");
  std::string rec(kCifarRecord, '\0');
  rec[0] = 7;
  std::ofstream(dir / "b.bin", std::ios::binary) << rec;
  const auto d = load_cifar10_binary<float>(dir / "b.bin");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 7);
  EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
  for (float v : d.images.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Cifar, WriteReadIsBitExact) {
  const auto dir = testutil::temp_dir("cifar_rt");
  std::mt19937_64 rng(5);
  std::string bytes;
  for (int r = 0; r < 6; ++r) {
    bytes.push_back(static_cast<char>(rng() % 10));
    for (size_t j = 0; j + 1 < kCifarRecord; ++j) bytes.push_back(static_cast<char>(rng() & 0xff));
  }
  std::ofstream(dir / "in.bin", std::ios::binary) << bytes;
  const auto d = load_cifar10_binary<float>(dir / "in.bin");
  write_cifar10_binary(dir / "out.bin", d);
  EXPECT_EQ(slurp(dir / "out.bin"), bytes);
  const auto e = load_cifar10_binary<float>(dir / "out.bin");
  EXPECT_EQ(content_hash(e.images), content_hash(d.images));
  EXPECT_EQ(e.labels, d.labels);
  EXPECT_EQ(load_cifar10_binary<float>(dir / "in.bin", 4).size(), 4u);
}

TEST(Cifar, TruncatedFileIsFormatError) {
  const auto dir = testutil::temp_dir("cifar_bad");
  std::ofstream(dir / "b.bin", std::ios::binary) << std::string(kCifarRecord + 5, '\1');
  EXPECT_THROW(load_cifar10_binary<float>(dir / "b.bin"), FormatError);
}

TEST(Cifar, OfficialTestBatchFirstRecord) {
  const char* root = std::getenv("DAS_CIFAR_DIR");
  if (!root) GTEST_SKIP() << "set DAS_CIFAR_DIR to the directory holding test_batch.bin";
  const auto d = load_cifar10_binary<double>(std::filesystem::path(root) / "test_batch.bin", 1);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_GE(d.labels[0], 0);
  EXPECT_LT(d.labels[0], 10);
  for (double v : d.images.data()) {
    EXPECT_GE(v * 255, 0.0);
    EXPECT_LE(v * 255, 255.0);
  }
}

TEST(DatasetSpecJson, RoundTripAndDisjointSplits) {
  DatasetSpec s;
  s.train = 40;
  s.test = 40;
  s.seed = 3;
  const auto back = dataset_spec_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
  const auto sp = make_datasets<double>(back);
  EXPECT_EQ(sp.first.size(), 40u);
  std::set<std::uint64_t> seen;
  for (size_t i = 0; i < 40; ++i) seen.insert(content_hash(sp.first.slice(i, i + 1).images));
  for (size_t i = 0; i < 40; ++i) EXPECT_EQ(seen.count(content_hash(sp.second.slice(i, i + 1).images)), 0u);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"kind", "imagenet"}}), ConfigError);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"kind", "cifar10_subset"}, {"path", "/nonexistent/cifar"}}), ConfigError);
}

TEST(CellIds, KnownTopologies) {
  EXPECT_EQ(make_cell("default", SearchSpace::affine5).edges.size(), 10u);
  EXPECT_EQ(make_cell("full13-dag2x4", SearchSpace::full13).edges.size(), 14u);
  EXPECT_EQ(make_cell("chain:3", SearchSpace::full13).edges.size(), 3u);
  EXPECT_THROW(make_cell("affine5-chain10", SearchSpace::full13), ConfigError);
  EXPECT_THROW(make_cell("chain:x", SearchSpace::affine5), ConfigError);
  EXPECT_THROW(make_cell("ring", SearchSpace::affine5), ConfigError);
}

TEST(RunConfigJson, FilesResolveRelativeToTheConfig) {
  const auto dir = testutil::temp_dir("runcfg");
  auto c = small_run();
  std::ofstream(dir / "bb.json") << to_json(c.backbone).dump();
  std::ofstream(dir / "ds.json") << to_json(c.dataset).dump();
  auto j = to_json(c);
  j["backbone"] = "bb.json";
  j["dataset"] = "ds.json";
  j["out"] = "out";
  std::ofstream(dir / "run.json") << j.dump();
  const auto r = load_run_config(dir / "run.json");
  EXPECT_EQ(to_json(r.backbone).dump(), to_json(c.backbone).dump());
  EXPECT_EQ(r.out, dir / "out");
  EXPECT_EQ(r.make_cell().edges.size(), 2u);

  j["dataset"] = "missing.json";
  std::ofstream(dir / "bad.json") << j.dump();
  try {
    load_run_config(dir / "bad.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.json"), std::string::npos);
  }
  EXPECT_THROW(load_run_config(dir / "nope.json"), ConfigError);
}

TEST(RunConfigJson, ShiftBlockOverridesBackbone) {
  auto j = to_json(small_run());
  j["shift"] = {{"mode", "gated_shift"}, {"fraction", 0.25}, {"insertion_points", {1}}};
  const auto r = run_config_from_json(j);
  EXPECT_EQ(r.backbone.shift_mode, ShiftMode::gated_shift);
  EXPECT_EQ(r.backbone.shift_points, (std::vector<size_t>{1}));
  j["backbone"]["head"]["classes"] = 3;
  j.erase("shift");
  EXPECT_THROW(run_config_from_json(j), ConfigError);
}

TEST(RandomGenotype, UniformOverCandidates) {
  const auto cell = make_cell("chain:4", SearchSpace::affine5);
  std::mt19937_64 rng(2);
  std::map<std::string, int> count;
  for (int i = 0; i < 2000; ++i) {
    const auto g = random_genotype(cell, SearchSpace::affine5, rng);
    ASSERT_NO_THROW(g.check_space(SearchSpace::affine5));
    for (const auto& e : g.edges) ++count[e.op.name()];
  }
  ASSERT_EQ(count.size(), 5u);
  for (const auto& [name, n] : count) EXPECT_NEAR(n, 1600, 150) << name;
}

TEST(Ablation, UnknownArmIsConfigError) {
  EXPECT_THROW(parse_arm("cutmix"), ConfigError);
  for (Arm a : all_arms()) EXPECT_EQ(parse_arm(to_string(a)), a);
}

TEST(Ablation, ReplicaMatchesBaselineForConstantModel) {
  auto cfg = small_run();
  cfg.search.epochs = 3;
  AblationHarness<double> h(cfg, make_datasets<double>(cfg.dataset),
                            [](std::uint64_t) { return std::make_unique<ConstantModel>(2); });
  const auto base = h.run(Arm::baseline), rep = h.run(Arm::replica);
  EXPECT_EQ(base.final_metric, rep.final_metric);
  ASSERT_EQ(base.epochs.size(), rep.epochs.size());
  for (size_t e = 0; e < base.epochs.size(); ++e) EXPECT_NEAR(base.epochs[e].val_loss, rep.epochs[e].val_loss, 1e-12);
}

TEST(Ablation, ReshuffleUsesTheSameFrameMultiset) {
  auto cfg = small_run();
  AblationHarness<double> h(cfg, make_datasets<double>(cfg.dataset));
  Genotype g;
  g.edges = {{0, 1, TransformOp(TransformKind::TranslateX), 1.0}};
  h.set_genotype(g);
  const auto das = h.frames_for(Arm::das), shuf = h.frames_for(Arm::reshuffle);
  const size_t n = das.first.size(), nt = das.first.num_frames(), inner = das.first.frames.size() / (n * nt);
  size_t moved = 0;
  for (size_t i = 0; i < n; ++i) {
    std::multiset<std::uint64_t> a, b;
    for (size_t t = 0; t < nt; ++t) {
      const Tensor<double> fa(Shape{inner}, std::vector<double>(das.first.frames.ptr() + (i * nt + t) * inner,
                                                                das.first.frames.ptr() + (i * nt + t + 1) * inner));
      const Tensor<double> fb(Shape{inner}, std::vector<double>(shuf.first.frames.ptr() + (i * nt + t) * inner,
                                                                shuf.first.frames.ptr() + (i * nt + t + 1) * inner));
      a.insert(content_hash(fa));
      b.insert(content_hash(fb));
      moved += content_hash(fa) != content_hash(fb);
    }
    EXPECT_EQ(a, b);
  }
  EXPECT_GT(moved, 0u);
}

TEST(Ablation, AugmentOnlyHasNoTemporalStack) {
  auto cfg = small_run();
  AblationHarness<double> h(cfg, make_datasets<double>(cfg.dataset));
  Genotype g;
  g.edges = {{0, 1, TransformOp(TransformKind::Rotate), 1.0}};
  h.set_genotype(g);
  const auto [train, test] = h.frames_for(Arm::augment_only);
  EXPECT_EQ(train.num_frames(), 1u);
  EXPECT_EQ(train.size(), 32u * 4);
  EXPECT_EQ(test.num_frames(), 1u);
  EXPECT_EQ(test.size(), 16u);
}

TEST(Ablation, EveryArmEmitsTheSameSchema) {
  auto cfg = small_run();
  AblationHarness<float> h(cfg, make_datasets<float>(cfg.dataset));
  std::vector<std::string> keys;
  for (Arm a : all_arms()) {
    const auto j = to_json(h.run(a));
    std::vector<std::string> k;
    for (const auto& [key, v] : j.items())
      if (key != "genotype" && key != "perturbation") k.push_back(key);
    if (keys.empty()) keys = k;
    EXPECT_EQ(k, keys) << to_string(a);
    EXPECT_EQ(j["arm"], to_string(a));
    EXPECT_EQ(j["epochs"].size(), 1u);
  }
}
