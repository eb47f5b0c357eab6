#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "das/backbone/model.hpp"
#include "das/core/layer_spec.hpp"
#include "das/core/ops.hpp"
#include "das/temporal/shift.hpp"

namespace das {

enum class BackboneKind { plain_cnn, mini_resnet };
enum class HeadKind { classifier, dense_predictor };

inline std::string to_string(BackboneKind k) { return k == BackboneKind::plain_cnn ? "plain_cnn" : "mini_resnet"; }
inline std::string to_string(HeadKind k) { return k == HeadKind::classifier ? "classifier" : "dense_predictor"; }

inline BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "plain_cnn") return BackboneKind::plain_cnn;
  if (s == "mini_resnet") return BackboneKind::mini_resnet;
  throw ConfigError("unknown backbone kind '" + s + "'");
}

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "classifier") return HeadKind::classifier;
  if (s == "dense_predictor") return HeadKind::dense_predictor;
  throw ConfigError("unknown head '" + s + "'");
}

struct BackboneSpec {
  BackboneKind kind = BackboneKind::plain_cnn;
  std::size_t depth = 3;  // conv blocks (plain_cnn) or residual blocks (mini_resnet)
  std::size_t width = 8;
  HeadKind head = HeadKind::classifier;
  std::size_t classes = 10;
  std::vector<std::size_t> shift_points;  // block ids that get a shift module at their input
  std::size_t in_channels = 3;
  std::size_t kernel = 3;
  ShiftMode shift_mode = ShiftMode::tsm_fixed;
  double shift_fraction = 1.0 / 8;
  bool zero_init_residual = true;

  ShiftConfig shift() const { return {shift_mode, shift_fraction, shift_points}; }

  // Channels entering block b.
  std::size_t block_in_channels(std::size_t b) const {
    return kind == BackboneKind::plain_cnn && b == 0 ? in_channels : width;
  }

  void validate() const {
    DAS_CHECK(depth >= 1 && depth <= 20, ConfigError, "backbone depth must be in [1, 20]");
    DAS_CHECK(width >= 1 && classes >= 1 && in_channels >= 1, ConfigError, "backbone extents must be positive");
    DAS_CHECK(kernel % 2 == 1, ConfigError, "backbone kernel must be odd");
    for (std::size_t b : shift_points) {
      DAS_CHECK(b < depth, ConfigError, "shift point " + std::to_string(b) + " is not a block of this backbone");
      shift().fold(block_in_channels(b));
    }
  }
};

inline nlohmann::ordered_json to_json(const BackboneSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"depth", s.depth},
          {"width", s.width},
          {"head", {{"kind", to_string(s.head)}, {"classes", s.classes}}},
          {"shift_points", s.shift_points},
          {"in_channels", s.in_channels},
          {"kernel", s.kernel},
          {"shift_mode", to_string(s.shift_mode)},
          {"shift_fraction", s.shift_fraction}};
}

inline BackboneSpec backbone_from_json(const nlohmann::json& j) {
  try {
    BackboneSpec s;
    s.kind = parse_backbone_kind(j.at("kind").get<std::string>());
    s.depth = j.at("depth").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    const auto& h = j.at("head");
    s.head = parse_head_kind(h.at("kind").get<std::string>());
    s.classes = h.at("classes").get<std::size_t>();
    s.shift_points = j.value("shift_points", std::vector<std::size_t>{});
    s.in_channels = j.value("in_channels", s.in_channels);
    s.kernel = j.value("kernel", s.kernel);
    s.shift_mode = parse_shift_mode(j.value("shift_mode", std::string("tsm_fixed")));
    s.shift_fraction = j.value("shift_fraction", s.shift_fraction);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed backbone spec: ") + e.what());
  }
}

inline BackboneSpec load_backbone_spec(const std::filesystem::path& p) {
  std::ifstream is(p);
  DAS_CHECK(is.good(), ConfigError, "cannot open backbone spec " + p.string());
  try {
    return backbone_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// Ordered single-path layer list; for residual networks the branch path (the longest).
inline std::vector<LayerSpec> receptive_layers(const BackboneSpec& s) {
  std::vector<LayerSpec> out;
  const std::size_t pad = s.kernel / 2;
  if (s.kind == BackboneKind::plain_cnn) {
    for (std::size_t b = 0; b < s.depth; ++b) out.push_back(LayerSpec::conv(s.block_in_channels(b), s.width, s.kernel, 1, pad));
  } else {
    out.push_back(LayerSpec::conv(s.in_channels, s.width, s.kernel, 1, pad));
    for (std::size_t b = 0; b < s.depth; ++b) {
      out.push_back(LayerSpec::conv(s.width, s.width, s.kernel, 1, pad));
      out.push_back(LayerSpec::conv(s.width, s.width, s.kernel, 1, pad));
    }
  }
  if (s.head == HeadKind::dense_predictor) {
    out.push_back(LayerSpec::conv(s.width, s.width, 3, 1, 2, 2));
    out.push_back(LayerSpec::conv(s.width, s.classes, 1));
  }
  return out;
}

template <typename T>
class Backbone : public Model<T> {
 public:
  Backbone(BackboneSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
    spec_.validate();
    const std::size_t k = spec_.kernel, w = spec_.width;
    auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t kk) {
      const T sd = static_cast<T>(std::sqrt(2.0 / static_cast<double>(kk * kk * in)));
      convs_.push_back({&add(name + ".w", Tensor<T>::normal(Shape{out, in, kk, kk}, rng, T(0), sd)),
                        &add(name + ".b", Tensor<T>(Shape{out}))});
      return convs_.size() - 1;
    };
    if (spec_.kind == BackboneKind::plain_cnn) {
      for (std::size_t b = 0; b < spec_.depth; ++b) conv("block" + std::to_string(b), spec_.block_in_channels(b), w, k);
    } else {
      conv("stem", spec_.in_channels, w, k);
      for (std::size_t b = 0; b < spec_.depth; ++b) {
        const std::string n = "block" + std::to_string(b);
        conv(n + ".conv1", w, w, k);
        norm(n + ".norm1", w);
        conv(n + ".conv2", w, w, k);
        norm(n + ".norm2", w);
        scales_.push_back(&add(n + ".scale", Tensor<T>(Shape{w}, spec_.zero_init_residual ? T(0) : T(1))));
      }
    }
    for (std::size_t b = 0; b < spec_.depth; ++b) {
      gates_.push_back(nullptr);
      if (std::find(spec_.shift_points.begin(), spec_.shift_points.end(), b) == spec_.shift_points.end()) continue;
      if (spec_.shift_mode == ShiftMode::gated_shift)
        gates_.back() = &add("block" + std::to_string(b) + ".gate",
                             Tensor<T>(Shape{2 * spec_.shift().fold(spec_.block_in_channels(b))}));
    }
    if (spec_.head == HeadKind::classifier) {
      const T sd = static_cast<T>(std::sqrt(1.0 / static_cast<double>(w)));
      head_w_ = &add("head.w", Tensor<T>::normal(Shape{spec_.classes, w}, rng, T(0), sd));
      head_b_ = &add("head.b", Tensor<T>(Shape{spec_.classes}));
    } else {
      tail_ = conv("tail", w, w, 3);
      cls_ = conv("classifier", w, spec_.classes, 1);
    }
  }

  const BackboneSpec& spec() const { return spec_; }

  std::vector<Parameter<T>*> parameters() override {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> buffers() override {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < norm_states_.size(); ++i) {
      out.emplace_back(norm_names_[i] + ".running_mean", &norm_states_[i].running_mean);
      out.emplace_back(norm_names_[i] + ".running_var", &norm_states_[i].running_var);
    }
    return out;
  }

  bool dense_output() const override { return spec_.head == HeadKind::dense_predictor; }

  // Gate logits of block b (gated mode only), e.g. to force gates open.
  Parameter<T>* gate(std::size_t b) { return gates_.at(b); }

  Var<T> forward(const Var<T>& x, std::size_t frames, RunMode mode) override {
    DAS_CHECK(x.shape().size() == 4 && x.shape()[1] == spec_.in_channels, DimensionError,
              "backbone input must be [N*T," + std::to_string(spec_.in_channels) + ",H,W], got " + shape_str(x.shape()));
    Tape<T>& tp = *x.tape;
    const bool trainable = mode == RunMode::train;
    const std::size_t pad = spec_.kernel / 2;
    auto conv = [&](std::size_t i, const Var<T>& in, std::size_t kk, std::size_t p, std::size_t d = 1) {
      const auto& w = convs_[i].w->value;
      return ops::conv2d(in, LayerSpec::conv(w.dim(1), w.dim(0), kk, 1, p, d), tp.param(*convs_[i].w, trainable),
                         tp.param(*convs_[i].b, trainable));
    };
    auto shift = [&](std::size_t b, const Var<T>& in) {
      if (std::find(spec_.shift_points.begin(), spec_.shift_points.end(), b) == spec_.shift_points.end()) return in;
      const std::size_t fold = spec_.shift().fold(in.shape()[1]);
      if (gates_[b]) return ops::gated_shift(in, tp.param(*gates_[b], trainable), frames, fold);
      return ops::temporal_shift(in, frames, fold);
    };
    auto norm = [&](std::size_t i, const Var<T>& in) {
      return ops::channel_norm(in, tp.param(*norm_params_[i].first, trainable), tp.param(*norm_params_[i].second, trainable),
                               norm_states_[i], mode != RunMode::eval, mode == RunMode::train);
    };

    Var<T> h = x;
    if (spec_.kind == BackboneKind::plain_cnn) {
      for (std::size_t b = 0; b < spec_.depth; ++b) h = ops::relu(conv(b, shift(b, h), spec_.kernel, pad));
    } else {
      h = ops::relu(conv(0, h, spec_.kernel, pad));
      for (std::size_t b = 0; b < spec_.depth; ++b) {
        Var<T> r = shift(b, h);
        r = ops::relu(norm(2 * b, conv(1 + 2 * b, r, spec_.kernel, pad)));
        r = norm(2 * b + 1, conv(2 + 2 * b, r, spec_.kernel, pad));
        r = ops::channel_scale(r, tp.param(*scales_[b], trainable));
        h = ops::relu(ops::add(h, r));
      }
    }
    if (spec_.head == HeadKind::classifier) {
      return ops::dense(ops::global_avgpool(h), tp.param(*head_w_, trainable), tp.param(*head_b_, trainable));
    }
    h = ops::relu(conv(tail_, h, 3, 2, 2));
    h = conv(cls_, h, 1, 0);
    return ops::upsample_bilinear(h, x.shape()[2], x.shape()[3]);
  }

 private:
  struct ConvParams {
    Parameter<T>* w;
    Parameter<T>* b;
  };

  Parameter<T>& add(std::string name, Tensor<T> v) {
    params_.emplace_back(std::move(name), std::move(v));
    return params_.back();
  }

  void norm(const std::string& name, std::size_t c) {
    norm_params_.emplace_back(&add(name + ".gamma", Tensor<T>(Shape{c}, T(1))), &add(name + ".beta", Tensor<T>(Shape{c})));
    norm_states_.emplace_back(c);
    norm_names_.push_back(name);
  }

  BackboneSpec spec_;
  std::deque<Parameter<T>> params_;
  std::vector<ConvParams> convs_;
  std::vector<std::pair<Parameter<T>*, Parameter<T>*>> norm_params_;
  std::deque<ops::ChannelNormState<T>> norm_states_;
  std::vector<std::string> norm_names_;
  std::vector<Parameter<T>*> scales_;
  std::vector<Parameter<T>*> gates_;
  Parameter<T>* head_w_ = nullptr;
  Parameter<T>* head_b_ = nullptr;
  std::size_t tail_ = 0, cls_ = 0;
};

// Σ over conv layers of k²·c_in·c_out + c_out, plus the dense head, norms, scales and gates.
inline std::size_t expected_param_count(const BackboneSpec& s) {
  std::size_t n = 0;
  auto conv = [&](std::size_t in, std::size_t out, std::size_t k) { n += k * k * in * out + out; };
  if (s.kind == BackboneKind::plain_cnn) {
    for (std::size_t b = 0; b < s.depth; ++b) conv(s.block_in_channels(b), s.width, s.kernel);
  } else {
    conv(s.in_channels, s.width, s.kernel);
    for (std::size_t b = 0; b < s.depth; ++b) {
      conv(s.width, s.width, s.kernel);
      conv(s.width, s.width, s.kernel);
      n += 2 * 2 * s.width + s.width;  // two norms (gamma, beta) and the branch scale
    }
  }
  if (s.shift_mode == ShiftMode::gated_shift)
    for (std::size_t b : s.shift_points) n += 2 * s.shift().fold(s.block_in_channels(b));
  if (s.head == HeadKind::classifier) {
    conv(s.width, s.classes, 1);
  } else {
    conv(s.width, s.width, 3);
    conv(s.width, s.classes, 1);
  }
  return n;
}

}  // namespace das
