#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "das/data/config.hpp"

namespace das {

enum class Arm { baseline, augment_only, replica, reshuffle, random_genotype, das };

inline const std::vector<Arm>& all_arms() {
  static const std::vector<Arm> a{Arm::baseline, Arm::augment_only, Arm::replica, Arm::reshuffle, Arm::random_genotype, Arm::das};
  return a;
}

inline std::string to_string(Arm a) {
  switch (a) {
    case Arm::baseline: return "baseline";
    case Arm::augment_only: return "augment_only";
    case Arm::replica: return "replica";
    case Arm::reshuffle: return "reshuffle";
    case Arm::random_genotype: return "random_genotype";
    case Arm::das: return "das";
  }
  return "?";
}

inline Arm parse_arm(const std::string& s) {
  for (Arm a : all_arms())
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation arm '" + s + "'");
}

// One candidate per edge, uniformly.
inline Genotype random_genotype(const CellSpec& cell, SearchSpace space, std::mt19937_64& rng) {
  std::vector<std::size_t> choice;
  for (const auto& e : cell.edges) choice.push_back(std::uniform_int_distribution<std::size_t>(0, e.candidates.size() - 1)(rng));
  return Genotype::from_choice(cell, choice, space);
}

// Every genotype frame as its own single-frame sample, plus the untouched images.
template <typename T>
FrameSet<T> augmented_stills(const Dataset<T>& d, const Genotype& g, std::size_t frames, FillPolicy fill) {
  DAS_CHECK(!d.dense, ConfigError, "augment_only needs image-level labels");
  const auto v = make_video(d.images, g, frames, fill);
  const std::size_t n = d.size(), inner = d.images.size() / n;
  FrameSet<T> fs;
  Shape s = d.images.shape();
  s[0] = n * (frames + 1);
  s.insert(s.begin() + 1, 1);
  fs.frames = Tensor<T>(s);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(d.images.ptr() + i * inner, d.images.ptr() + (i + 1) * inner, fs.frames.ptr() + i * inner);
    for (std::size_t t = 0; t < frames; ++t)
      std::copy(v.frames.ptr() + (i * frames + t) * inner, v.frames.ptr() + (i * frames + t + 1) * inner,
                fs.frames.ptr() + (n + t * n + i) * inner);
  }
  for (std::size_t k = 0; k <= frames; ++k) fs.labels.insert(fs.labels.end(), d.labels.begin(), d.labels.end());
  fs.classes = d.classes;
  fs.transforms = {AffineTransform::identity()};
  return fs;
}

// Runs the experimental arms on one train/test split. Every arm starts from a freshly
// initialized model built from the configured seed; the searched genotype is computed once
// and shared by the arms that need it.
template <typename T>
class AblationHarness {
 public:
  using Factory = std::function<std::unique_ptr<Model<T>>(std::uint64_t seed)>;

  AblationHarness(RunConfig cfg, Split<T> data, Factory factory = {})
      : cfg_(std::move(cfg)), data_(std::move(data)), factory_(std::move(factory)) {
    if (!factory_) {
      const BackboneSpec spec = cfg_.backbone;
      factory_ = [spec](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return std::unique_ptr<Model<T>>(std::make_unique<Backbone<T>>(spec, rng));
      };
    }
  }

  const Split<T>& data() const { return data_; }

  const Genotype& searched_genotype() {
    if (!searched_) {
      auto model = factory_(cfg_.search.seed);
      auto res = search(cfg_.make_cell(), cfg_.search_space, *model, data_.first, cfg_.search);
      search_report_ = std::move(res.report);
      searched_ = std::move(res.genotype);
    }
    return *searched_;
  }
  const std::optional<TrainReport>& search_report() const { return search_report_; }

  // Lets callers reuse a genotype found elsewhere instead of searching here.
  void set_genotype(Genotype g) { searched_ = std::move(g); }

  // The frames an arm trains and evaluates on.
  std::pair<FrameSet<T>, FrameSet<T>> frames_for(Arm arm) {
    const auto& [train, test] = data_;
    const std::size_t nt = cfg_.search.frames;
    const FillPolicy fill = cfg_.search.fill;
    switch (arm) {
      case Arm::baseline:
        return {still_frames(train), still_frames(test)};
      case Arm::augment_only:
        return {augmented_stills(train, searched_genotype(), nt, fill), still_frames(test)};
      case Arm::replica: {
        Genotype id;
        id.space = cfg_.search_space;
        id.edges = {{0, 1, TransformOp(TransformKind::Identity), 1.0}};
        return {genotype_frames(train, id, nt, fill), genotype_frames(test, id, nt, fill)};
      }
      case Arm::reshuffle: {
        DAS_CHECK(!train.dense, ConfigError, "reshuffle has no consistent geometry to undo dense maps with");
        auto a = genotype_frames(train, searched_genotype(), nt, fill);
        auto b = genotype_frames(test, searched_genotype(), nt, fill);
        std::mt19937_64 rng(cfg_.search.seed ^ 0x7e5bu);
        a.frames = reshuffle_frames(a.frames, rng);
        b.frames = reshuffle_frames(b.frames, rng);
        return {std::move(a), std::move(b)};
      }
      case Arm::random_genotype: {
        const auto g = random_arm_genotype();
        return {genotype_frames(train, g, nt, fill), genotype_frames(test, g, nt, fill)};
      }
      case Arm::das:
        return {genotype_frames(train, searched_genotype(), nt, fill), genotype_frames(test, searched_genotype(), nt, fill)};
    }
    throw ConfigError("unknown arm");
  }

  Genotype random_arm_genotype() const {
    std::mt19937_64 rng(cfg_.search.seed ^ 0x4a4d0u);
    return random_genotype(cfg_.make_cell(), cfg_.search_space, rng);
  }

  TrainReport run(Arm arm) {
    auto [train, test] = frames_for(arm);
    auto model = factory_(cfg_.search.seed + 1);
    TrainReport rep = fit(*model, train, test, cfg_.search);
    rep.arm = to_string(arm);
    if (arm == Arm::das || arm == Arm::augment_only || arm == Arm::reshuffle) rep.genotype = searched_genotype();
    if (arm == Arm::random_genotype) rep.genotype = random_arm_genotype();
    if (arm == Arm::das && search_report_) rep.perturbation = search_report_->perturbation;
    return rep;
  }

 private:
  RunConfig cfg_;
  Split<T> data_;
  Factory factory_;
  std::optional<Genotype> searched_;
  std::optional<TrainReport> search_report_;
};

}  // namespace das
