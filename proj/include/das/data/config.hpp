#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "das/backbone/backbone.hpp"
#include "das/cell/cell.hpp"
#include "das/data/cifar.hpp"
#include "das/data/synthetic.hpp"
#include "das/search/search.hpp"

namespace das {

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_corner_cue;
  std::size_t train = 256;
  std::size_t test = 128;
  std::size_t height = 16, width = 16;
  std::size_t channels = 1;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  std::filesystem::path path;  // CIFAR directory

  void validate() const {
    DAS_CHECK(train >= 1 && test >= 1, ConfigError, "dataset splits must be non-empty");
    if (kind == DatasetKind::cifar10_subset) {
      DAS_CHECK(!path.empty(), ConfigError, "cifar10_subset needs a path to the binary batches");
      DAS_CHECK(std::filesystem::is_directory(path), ConfigError, "CIFAR directory not found: " + path.string());
    }
  }

  SyntheticSpec split(std::size_t count, std::uint64_t stream) const {
    return {count, height, width, channels, classes, seed, stream};
  }
};

inline nlohmann::ordered_json to_json(const DatasetSpec& s) {
  nlohmann::ordered_json j{{"kind", to_string(s.kind)},
                           {"train", s.train},
                           {"test", s.test},
                           {"image_size", {s.height, s.width}},
                           {"channels", s.channels},
                           {"classes", s.classes},
                           {"seed", s.seed}};
  if (!s.path.empty()) j["path"] = s.path.string();
  return j;
}

// Relative paths inside the spec resolve against `base`.
inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  DatasetSpec s;
  try {
    s.kind = parse_dataset_kind(j.at("kind").get<std::string>());
    s.train = j.value("train", s.train);
    s.test = j.value("test", s.test);
    if (j.contains("image_size")) {
      const auto hw = j.at("image_size").get<std::vector<std::size_t>>();
      DAS_CHECK(hw.size() == 2, ConfigError, "image_size must be [H, W]");
      s.height = hw[0];
      s.width = hw[1];
    }
    if (s.kind == DatasetKind::cifar10_subset) s.height = s.width = kCifarSide, s.channels = 3, s.classes = 10;
    s.channels = j.value("channels", s.channels);
    s.classes = j.value("classes", s.classes);
    s.seed = j.value("seed", s.seed);
    if (j.contains("path")) {
      s.path = j.at("path").get<std::string>();
      if (s.path.is_relative() && !base.empty()) s.path = base / s.path;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset spec: ") + e.what());
  }
  s.validate();
  return s;
}

template <typename T>
Split<T> make_datasets(const DatasetSpec& s) {
  s.validate();
  switch (s.kind) {
    case DatasetKind::synthetic_corner_cue:
      return {gen_synthetic_corner_cue<T>(s.split(s.train, 0)), gen_synthetic_corner_cue<T>(s.split(s.test, 1))};
    case DatasetKind::synthetic_scale_cue:
      return {gen_synthetic_scale_cue<T>(s.split(s.train, 0)), gen_synthetic_scale_cue<T>(s.split(s.test, 1))};
    case DatasetKind::synthetic_segmentation:
      return {gen_synthetic_segmentation<T>(s.split(s.train, 0)), gen_synthetic_segmentation<T>(s.split(s.test, 1))};
    case DatasetKind::cifar10_subset: {
      std::vector<std::filesystem::path> train;
      for (int b = 1; b <= 5; ++b) {
        auto f = s.path / ("data_batch_" + std::to_string(b) + ".bin");
        if (std::filesystem::exists(f)) train.push_back(f);
      }
      const auto test = s.path / "test_batch.bin";
      DAS_CHECK(!train.empty(), ConfigError, "no data_batch_*.bin under " + s.path.string());
      DAS_CHECK(std::filesystem::exists(test), ConfigError, "missing " + test.string());
      return {load_cifar10_files<T>(train, s.train), load_cifar10_files<T>({test}, s.test)};
    }
  }
  throw ConfigError("unknown dataset kind");
}

// Cell topology ids: "affine5-chain10", "full13-dag2x4", or "chain:N" over the space's candidates.
inline CellSpec make_cell(const std::string& id, SearchSpace space) {
  if (id.empty() || id == "default") return space == SearchSpace::affine5 ? CellSpec::affine5() : CellSpec::full13();
  if (id == "affine5-chain10") {
    DAS_CHECK(space == SearchSpace::affine5, ConfigError, "cell " + id + " belongs to the affine5 space");
    return CellSpec::affine5();
  }
  if (id == "full13-dag2x4") {
    DAS_CHECK(space == SearchSpace::full13, ConfigError, "cell " + id + " belongs to the full13 space");
    return CellSpec::full13();
  }
  if (id.rfind("chain:", 0) == 0) {
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoul(id.substr(6), &used);
      DAS_CHECK(used == id.size() - 6, ConfigError, "bad cell id '" + id + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("bad cell id '" + id + "'");
    }
    DAS_CHECK(n >= 1 && n <= 32, ConfigError, "chain cells need 1..32 edges");
    CellSpec c = CellSpec::chain(n, candidates(space));
    c.topology = id;
    return c;
  }
  throw ConfigError("unknown cell topology '" + id + "'");
}

enum class Precision { f32, f64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

struct RunConfig {
  SearchSpace search_space = SearchSpace::affine5;
  std::string cell = "default";
  BackboneSpec backbone;
  SearchConfig search;
  DatasetSpec dataset;
  std::filesystem::path out = "runs/out";
  std::string arm = "das";
  Precision precision = Precision::f32;
  std::optional<std::filesystem::path> genotype;  // consumed by `train`

  CellSpec make_cell() const { return das::make_cell(cell, search_space); }
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p, const std::string& what) {
  DAS_CHECK(std::filesystem::exists(p), ConfigError, what + " not found: " + p.string());
  std::ifstream is(p);
  DAS_CHECK(is.good(), ConfigError, "cannot open " + what + " " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// A sub-object may be inline or a path to a JSON file.
inline nlohmann::json inline_or_file(const nlohmann::json& j, const std::filesystem::path& base, const std::string& what,
                                     std::filesystem::path* resolved_base) {
  if (j.is_string()) {
    std::filesystem::path p = j.get<std::string>();
    if (p.is_relative()) p = base / p;
    *resolved_base = p.parent_path();
    return read_json_file(p, what);
  }
  *resolved_base = base;
  return j;
}

}  // namespace detail

// The "shift" block, when present, overrides the backbone's shift fields.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  RunConfig c;
  try {
    c.search_space = parse_search_space(j.value("search_space", std::string("affine5")));
    c.cell = j.value("cell", c.cell);
    std::filesystem::path sub;
    if (j.contains("backbone")) c.backbone = backbone_from_json(detail::inline_or_file(j["backbone"], base, "backbone spec", &sub));
    if (j.contains("shift")) {
      const auto& s = j["shift"];
      c.backbone.shift_mode = parse_shift_mode(s.value("mode", to_string(c.backbone.shift_mode)));
      c.backbone.shift_fraction = s.value("fraction", c.backbone.shift_fraction);
      c.backbone.shift_points = s.value("insertion_points", c.backbone.shift_points);
      c.backbone.validate();
    }
    if (j.contains("search")) c.search = search_config_from_json(j["search"]);
    DAS_CHECK(j.contains("dataset"), ConfigError, "run config needs a dataset");
    const auto dj = detail::inline_or_file(j["dataset"], base, "dataset spec", &sub);
    c.dataset = dataset_spec_from_json(dj, sub);
    c.out = j.value("out", c.out.string());
    if (c.out.is_relative() && !base.empty()) c.out = base / c.out;
    c.arm = j.value("arm", c.arm);
    c.precision = parse_precision(j.value("precision", std::string("f32")));
    if (j.contains("genotype") && !j["genotype"].is_null()) {
      std::filesystem::path g = j["genotype"].get<std::string>();
      if (g.is_relative() && !base.empty()) g = base / g;
      DAS_CHECK(std::filesystem::exists(g), ConfigError, "genotype file not found: " + g.string());
      c.genotype = g;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.make_cell();
  DAS_CHECK(c.backbone.in_channels == c.dataset.channels, ConfigError,
            "backbone expects " + std::to_string(c.backbone.in_channels) + " input channels, dataset has " +
                std::to_string(c.dataset.channels));
  DAS_CHECK(c.backbone.classes == c.dataset.classes, ConfigError,
            "backbone predicts " + std::to_string(c.backbone.classes) + " classes, dataset has " +
                std::to_string(c.dataset.classes));
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& p) {
  return run_config_from_json(detail::read_json_file(p, "config file"), p.parent_path());
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j{{"search_space", to_string(c.search_space)},
                           {"cell", c.cell},
                           {"backbone", to_json(c.backbone)},
                           {"search", to_json(c.search)},
                           {"dataset", to_json(c.dataset)},
                           {"out", c.out.string()},
                           {"arm", c.arm},
                           {"precision", c.precision == Precision::f32 ? "f32" : "f64"}};
  if (c.genotype) j["genotype"] = c.genotype->string();
  return j;
}

}  // namespace das
