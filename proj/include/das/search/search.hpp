#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "das/backbone/model.hpp"
#include "das/cell/discretize.hpp"
#include "das/core/optim.hpp"
#include "das/data/dataset.hpp"
#include "das/search/checkpoint.hpp"
#include "das/temporal/shift.hpp"
#include "das/temporal/video.hpp"

namespace das {

enum class DiscretizeMetric { accuracy, neg_loss };

inline std::string to_string(DiscretizeMetric m) { return m == DiscretizeMetric::accuracy ? "accuracy" : "neg_loss"; }

inline DiscretizeMetric parse_discretize_metric(const std::string& s) {
  if (s == "accuracy") return DiscretizeMetric::accuracy;
  if (s == "neg_loss") return DiscretizeMetric::neg_loss;
  throw ConfigError("unknown discretization metric '" + s + "'");
}

struct SearchConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr_w = 0.1;
  LrSchedule schedule = LrSchedule::step_decay;
  double momentum = 0.9;
  double lr_tau = 3e-4;
  double weight_decay_w = 1e-4;
  double weight_decay_tau = 1e-3;
  std::optional<double> budget_seconds;
  std::uint64_t seed = 0;
  std::size_t frames = 5;
  FillPolicy fill = FillPolicy::zeros;
  // Wall-clock seconds go into the metrics CSV only when set; otherwise the column is 0 so
  // that identical seeds give identical files.
  bool record_time = false;
  DiscretizeMetric metric = DiscretizeMetric::accuracy;
  // Hash parameters around every step and fail if a w-step touched τ or a τ-step touched w.
  bool verify_alternation = false;
  std::optional<std::filesystem::path> checkpoint_on_abort;

  void validate() const {
    DAS_CHECK(epochs >= 1, ConfigError, "epochs must be >= 1");
    DAS_CHECK(batch_size >= 1, ConfigError, "batch_size must be >= 1");
    DAS_CHECK(lr_w > 0, ConfigError, "lr_w must be positive");
    DAS_CHECK(lr_tau >= 0, ConfigError, "lr_tau must be non-negative");
    DAS_CHECK(momentum >= 0 && momentum < 1, ConfigError, "momentum must lie in [0, 1)");
    DAS_CHECK(weight_decay_w >= 0 && weight_decay_tau >= 0, ConfigError, "weight decay must be non-negative");
    DAS_CHECK(frames >= 1, ConfigError, "frames must be >= 1");
    if (budget_seconds) DAS_CHECK(*budget_seconds > 0, ConfigError, "budget must be positive");
  }
};

inline nlohmann::ordered_json to_json(const SearchConfig& c) {
  nlohmann::ordered_json j{{"epochs", c.epochs},
                           {"batch_size", c.batch_size},
                           {"lr_w", c.lr_w},
                           {"schedule", to_string(c.schedule)},
                           {"momentum", c.momentum},
                           {"lr_tau", c.lr_tau},
                           {"weight_decay_w", c.weight_decay_w},
                           {"weight_decay_tau", c.weight_decay_tau},
                           {"seed", c.seed},
                           {"frames", c.frames},
                           {"fill", c.fill == FillPolicy::zeros ? "zeros" : "replicate"},
                           {"record_time", c.record_time},
                           {"metric", to_string(c.metric)}};
  j["budget_seconds"] = c.budget_seconds ? nlohmann::ordered_json(*c.budget_seconds) : nlohmann::ordered_json(nullptr);
  return j;
}

// Missing keys keep their defaults.
inline SearchConfig search_config_from_json(const nlohmann::json& j) {
  SearchConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_w = j.value("lr_w", c.lr_w);
    c.schedule = parse_lr_schedule(j.value("schedule", to_string(c.schedule)));
    c.momentum = j.value("momentum", c.momentum);
    c.lr_tau = j.value("lr_tau", c.lr_tau);
    c.weight_decay_w = j.value("weight_decay_w", c.weight_decay_w);
    c.weight_decay_tau = j.value("weight_decay_tau", c.weight_decay_tau);
    if (j.contains("budget_seconds") && !j["budget_seconds"].is_null()) c.budget_seconds = j["budget_seconds"].get<double>();
    c.seed = j.value("seed", c.seed);
    c.frames = j.value("frames", c.frames);
    const std::string fill = j.value("fill", std::string("zeros"));
    DAS_CHECK(fill == "zeros" || fill == "replicate", ConfigError, "fill must be zeros or replicate");
    c.fill = fill == "zeros" ? FillPolicy::zeros : FillPolicy::replicate;
    c.record_time = j.value("record_time", c.record_time);
    c.metric = parse_discretize_metric(j.value("metric", to_string(c.metric)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed search config: ") + e.what());
  }
  c.validate();
  return c;
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_metric = 0;
  double seconds = 0;
  double lr = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  // trajectory[step][edge][op]: softmax weights after each τ update.
  std::vector<std::vector<std::vector<double>>> trajectory;
  std::size_t w_steps = 0;
  std::size_t tau_steps = 0;
  double final_metric = 0;
  double wall_seconds = 0;
  bool stopped_by_budget = false;
  std::optional<Genotype> genotype;
  std::optional<PerturbationReport> perturbation;
  std::string arm;
};

inline nlohmann::ordered_json to_json(const TrainReport& r, bool with_trajectory = false) {
  nlohmann::ordered_json j;
  if (!r.arm.empty()) j["arm"] = r.arm;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"val_metric", e.val_metric},
                           {"lr", e.lr}});
  j["w_steps"] = r.w_steps;
  j["tau_steps"] = r.tau_steps;
  j["final_metric"] = r.final_metric;
  j["stopped_by_budget"] = r.stopped_by_budget;
  if (r.genotype) j["genotype"] = to_json(*r.genotype);
  if (r.perturbation) {
    j["perturbation"] = {{"base_metric", r.perturbation->base_metric},
                         {"drops", r.perturbation->drops},
                         {"choice", r.perturbation->choice}};
  }
  if (with_trajectory) j["trajectory"] = r.trajectory;
  return j;
}

// epoch,train_loss,val_loss,val_metric,seconds
inline void write_metrics_csv(const std::filesystem::path& p, const TrainReport& r, bool record_time) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p);
  DAS_CHECK(os.good(), ConfigError, "cannot write metrics to " + p.string());
  os << "epoch,train_loss,val_loss,val_metric,seconds\n";
  char buf[160];
  for (const auto& e : r.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.train_loss, e.val_loss, e.val_metric,
                  record_time ? e.seconds : 0.0);
    os << buf;
  }
}

// Per-class counts; accuracy for classification, mean IoU over present classes for dense maps.
struct Confusion {
  std::size_t k = 0;
  std::vector<std::size_t> m;  // m[truth * k + pred]

  explicit Confusion(std::size_t classes = 0) : k(classes), m(classes * classes, 0) {}
  void add(int truth, std::size_t pred) { ++m[static_cast<std::size_t>(truth) * k + pred]; }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto v : m) s += v;
    return s;
  }
  double accuracy() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) c += m[i * k + i];
    return total() ? static_cast<double>(c) / static_cast<double>(total()) : 0.0;
  }
  double mean_iou() const {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t row = 0, col = 0;
      for (std::size_t j = 0; j < k; ++j) row += m[i * k + j], col += m[j * k + i];
      const std::size_t uni = row + col - m[i * k + i];
      if (uni == 0) continue;
      s += static_cast<double>(m[i * k + i]) / static_cast<double>(uni);
      ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

// Frames ready for a backbone: [N,T,C,H,W] plus what aggregation needs.
template <typename T>
struct FrameSet {
  Tensor<T> frames;
  std::vector<int> labels;
  std::size_t classes = 0;
  bool dense = false;
  std::vector<AffineTransform> transforms;  // per frame, used to undo dense predictions

  std::size_t size() const { return frames.dim(0); }
  std::size_t num_frames() const { return frames.dim(1); }
};

namespace detail {

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  Shape s = x.shape();
  s[0] = end - begin;
  Tensor<T> out(s);
  const std::size_t inner = x.size() / x.dim(0);
  for (std::size_t i = begin; i < end; ++i)
    std::copy(x.ptr() + idx[i] * inner, x.ptr() + (idx[i] + 1) * inner, out.ptr() + (i - begin) * inner);
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& l, std::size_t per, const std::vector<std::size_t>& idx,
                                      std::size_t begin, std::size_t end) {
  std::vector<int> out;
  for (std::size_t i = begin; i < end; ++i)
    out.insert(out.end(), l.begin() + static_cast<long>(idx[i] * per), l.begin() + static_cast<long>((idx[i] + 1) * per));
  return out;
}

template <typename T>
struct BatchResult {
  Var<T> loss;
  Confusion confusion;
};

// video [N,T,C,H,W] -> backbone -> aggregated loss. Classification averages the frame logits;
// dense maps are undone per frame, and pixels no frame covers are ignored.
template <typename T>
BatchResult<T> video_loss(Model<T>& model, const Var<T>& video, const std::vector<int>& labels, std::size_t classes,
                          bool dense, const std::vector<AffineTransform>& transforms, RunMode mode) {
  const Shape s = video.shape();
  const std::size_t n = s[0], nt = s[1];
  auto flat = ops::reshape(video, Shape{n * nt, s[2], s[3], s[4]});
  auto out = model.forward(flat, nt, mode);
  BatchResult<T> r{Var<T>{}, Confusion(classes)};
  if (!dense) {
    DAS_CHECK(out.shape().size() == 2 && out.shape()[1] == classes, DimensionError,
              "classifier output " + shape_str(out.shape()) + " does not match " + std::to_string(classes) + " classes");
    auto logits = ops::mean_axis1(ops::reshape(out, Shape{n, nt, classes}));
    r.loss = ops::cross_entropy(logits, labels);
    const auto& lv = logits.value();
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = lv.ptr() + i * classes;
      r.confusion.add(labels[i], static_cast<std::size_t>(std::max_element(row, row + classes) - row));
    }
    return r;
  }
  DAS_CHECK(out.shape().size() == 4 && out.shape()[1] == classes, DimensionError,
            "dense output " + shape_str(out.shape()) + " does not match " + std::to_string(classes) + " classes");
  const std::size_t h = out.shape()[2], w = out.shape()[3];
  DAS_CHECK(transforms.size() == nt, ConfigError, "dense aggregation needs one transform per frame");
  auto cov = std::make_shared<std::vector<T>>();
  auto maps = ops::undo_and_average(ops::reshape(out, Shape{n, nt, classes, h, w}), transforms, cov);
  std::vector<int> masked = labels;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < h * w; ++p)
      if ((*cov)[p] <= T(1e-9)) masked[i * h * w + p] = -1;
  r.loss = ops::cross_entropy_dense(maps, masked);
  const auto& mv = maps.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < h * w; ++p) {
      if (masked[i * h * w + p] < 0) continue;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (mv[(i * classes + c) * h * w + p] > mv[(i * classes + best) * h * w + p]) best = c;
      r.confusion.add(masked[i * h * w + p], best);
    }
  return r;
}

inline double metric_of(const Confusion& c, bool dense) { return dense ? c.mean_iou() : c.accuracy(); }

inline void merge(Confusion& into, const Confusion& c) {
  for (std::size_t i = 0; i < into.m.size(); ++i) into.m[i] += c.m[i];
}

template <typename T>
void check_finite_loss(const Var<T>& loss, const char* what) {
  DAS_CHECK(std::isfinite(static_cast<double>(loss.value()[0])), NumericError, std::string("non-finite ") + what + " loss");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename T>
struct Snapshot {
  std::vector<std::pair<std::string, Tensor<T>>> values;

  void take(const std::vector<std::pair<std::string, Tensor<T>*>>& named) {
    values.clear();
    for (const auto& [n, t] : named) values.emplace_back(n, *t);
  }
};

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_state(Model<T>& model, CellParams<T>* cell) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto* p : model.parameters()) out.emplace_back("model." + p->name, &p->value);
  for (auto& [n, t] : model.buffers()) out.emplace_back("model." + n, t);
  if (cell)
    for (auto& p : cell->tau) out.emplace_back("cell." + p.name, &p.value);
  return out;
}

template <typename T>
[[noreturn]] void abort_with_checkpoint(const Snapshot<T>& last_good, const SearchConfig& cfg, std::size_t step,
                                        const std::string& why) {
  std::string msg = "numeric abort at step " + std::to_string(step) + ": " + why;
  if (cfg.checkpoint_on_abort) {
    Checkpoint<T> ck;
    ck.tensors = last_good.values;
    ck.meta = {{"step", step}, {"reason", why}, {"seed", cfg.seed}};
    save_checkpoint(*cfg.checkpoint_on_abort, ck);
    msg += "; last good state saved to " + cfg.checkpoint_on_abort->string();
  }
  throw NumericError(msg);
}

}  // namespace detail

// Loss and metric over a whole frame set in eval mode.
template <typename T>
std::pair<double, double> evaluate(Model<T>& model, const FrameSet<T>& set, std::size_t batch_size) {
  DAS_CHECK(set.size() > 0, ContractError, "cannot evaluate on an empty set");
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t per = set.dense ? set.frames.dim(3) * set.frames.dim(4) : 1;
  double loss = 0;
  Confusion conf(set.classes);
  for (std::size_t b = 0; b < set.size(); b += batch_size) {
    const std::size_t e = std::min(set.size(), b + batch_size);
    Tape<T> tape;
    auto r = detail::video_loss(model, tape.constant(detail::gather(set.frames, idx, b, e)),
                                detail::gather_labels(set.labels, per, idx, b, e), set.classes, set.dense, set.transforms,
                                RunMode::eval);
    loss += static_cast<double>(r.loss.value()[0]) * static_cast<double>(e - b);
    detail::merge(conf, r.confusion);
  }
  return {loss / static_cast<double>(set.size()), detail::metric_of(conf, set.dense)};
}

// Plain supervised training of `model` on fixed frames, evaluated on `eval` after every epoch.
template <typename T>
TrainReport fit(Model<T>& model, const FrameSet<T>& train, const FrameSet<T>& eval, const SearchConfig& cfg) {
  cfg.validate();
  DAS_CHECK(train.size() > 0, ContractError, "empty training set");
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf17ull);
  Sgd<T> sgd(static_cast<T>(cfg.lr_w), static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay_w));
  const std::size_t per = train.dense ? train.frames.dim(3) * train.frames.dim(4) : 1;
  TrainReport rep;
  detail::Stopwatch clock;
  detail::Snapshot<T> good;
  std::vector<std::size_t> idx(train.size());
  for (std::size_t ep = 0; ep < cfg.epochs && !rep.stopped_by_budget; ++ep) {
    const double lr = lr_schedule(cfg.schedule, cfg.lr_w, static_cast<long>(ep), static_cast<long>(cfg.epochs));
    sgd.set_lr(static_cast<T>(lr));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    double tl = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(train.size(), b + cfg.batch_size);
      if (cfg.checkpoint_on_abort) good.take(detail::named_state<T>(model, nullptr));
      try {
        Tape<T> tape;
        auto r = detail::video_loss(model, tape.constant(detail::gather(train.frames, idx, b, e)),
                                    detail::gather_labels(train.labels, per, idx, b, e), train.classes, train.dense,
                                    train.transforms, RunMode::train);
        detail::check_finite_loss(r.loss, "training");
        tape.backward(r.loss);
        sgd.step(model.parameters());
        tl += static_cast<double>(r.loss.value()[0]) * static_cast<double>(e - b);
        seen += e - b;
      } catch (const NumericError& err) {
        detail::abort_with_checkpoint(good, cfg, rep.w_steps, err.what());
      }
      ++rep.w_steps;
      if (cfg.budget_seconds && clock.seconds() >= *cfg.budget_seconds) {
        rep.stopped_by_budget = true;
        break;
      }
    }
    EpochStats st;
    st.epoch = ep;
    st.lr = lr;
    st.train_loss = seen ? tl / static_cast<double>(seen) : 0.0;
    std::tie(st.val_loss, st.val_metric) = evaluate(model, eval, cfg.batch_size);
    st.seconds = clock.seconds();
    rep.epochs.push_back(st);
  }
  rep.final_metric = rep.epochs.empty() ? 0.0 : rep.epochs.back().val_metric;
  rep.wall_seconds = clock.seconds();
  return rep;
}

namespace ops {

// Frames 1..T of a cell with fixed per-edge weights applied repeatedly: [N,T,C,H,W].
template <typename T>
Var<T> make_video_fixed(const CellSpec& cell, const EdgeWeights<T>& weights, const Var<T>& x, std::size_t num_frames,
                        FillPolicy fill = FillPolicy::zeros) {
  std::vector<Var<T>> frames;
  Var<T> cur = x;
  for (std::size_t t = 0; t < num_frames; ++t) {
    cur = cell_forward_fixed(cell, weights, cur, fill);
    frames.push_back(cur);
  }
  return stack_axis1(frames);
}

}  // namespace ops

template <typename T>
struct SearchResult {
  Genotype genotype;
  TrainReport report;
  CellParams<T> params;
};

// Alternating first-order bilevel search: an SGD step on w over a training batch with τ
// frozen, then an Adam step on τ over a validation batch with w frozen. The genotype comes
// from perturbation-based discretization on the validation half.
template <typename T>
SearchResult<T> search(const CellSpec& cell, SearchSpace space, Model<T>& model, const Dataset<T>& data,
                       const SearchConfig& cfg) {
  cfg.validate();
  cell.validate();
  data.validate();
  DAS_CHECK(!data.dense, ConfigError,
            "search needs image-level labels: a relaxed cell has no single geometry to undo dense maps with");
  std::mt19937_64 rng(cfg.seed);
  const auto split = split_half(data, rng);
  const Dataset<T>&train = split.first, &val = split.second;
  DAS_CHECK(train.size() > 0 && val.size() > 0, ContractError, "search needs non-empty train and val halves");

  SearchResult<T> res;
  res.params = CellParams<T>(cell);
  Sgd<T> sgd(static_cast<T>(cfg.lr_w), static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay_w));
  Adam<T> adam(static_cast<T>(cfg.lr_tau), static_cast<T>(cfg.weight_decay_tau), T(0.5), T(0.999));
  TrainReport& rep = res.report;
  detail::Stopwatch clock;
  detail::Snapshot<T> good;
  const auto tau_ptrs = res.params.pointers();

  std::vector<std::size_t> ti(train.size()), vi(val.size());
  std::size_t vpos = val.size();  // forces a reshuffle on first use
  for (std::size_t ep = 0; ep < cfg.epochs && !rep.stopped_by_budget; ++ep) {
    const double lr = lr_schedule(cfg.schedule, cfg.lr_w, static_cast<long>(ep), static_cast<long>(cfg.epochs));
    sgd.set_lr(static_cast<T>(lr));
    std::iota(ti.begin(), ti.end(), 0);
    std::shuffle(ti.begin(), ti.end(), rng);
    double tl = 0, vl = 0;
    std::size_t tn = 0, vn = 0;
    Confusion vconf(data.classes);
    for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(train.size(), b + cfg.batch_size);
      if (cfg.checkpoint_on_abort) good.take(detail::named_state<T>(model, &res.params));
      try {
        // (a) w-step, τ frozen
        const auto tau_before = cfg.verify_alternation ? parameter_hash(tau_ptrs) : 0;
        {
          Tape<T> tape;
          auto x = tape.constant(detail::gather(train.images, ti, b, e));
          auto video = ops::make_video_relaxed(cell, res.params, x, cfg.frames, false, cfg.fill);
          auto r = detail::video_loss(model, video, detail::gather_labels(train.labels, 1, ti, b, e), data.classes, false,
                                      {}, RunMode::train);
          detail::check_finite_loss(r.loss, "training");
          tape.backward(r.loss);
          sgd.step(model.parameters());
          tl += static_cast<double>(r.loss.value()[0]) * static_cast<double>(e - b);
          tn += e - b;
        }
        ++rep.w_steps;
        if (cfg.verify_alternation)
          DAS_CHECK(parameter_hash(tau_ptrs) == tau_before, ContractError, "a w-step changed tau");

        // (b) τ-step on the next validation batch, w frozen
        if (vpos >= val.size()) {
          std::iota(vi.begin(), vi.end(), 0);
          std::shuffle(vi.begin(), vi.end(), rng);
          vpos = 0;
        }
        const std::size_t ve = std::min(val.size(), vpos + cfg.batch_size);
        const auto w_before = cfg.verify_alternation ? parameter_hash(model.parameters()) : 0;
        {
          Tape<T> tape;
          auto x = tape.constant(detail::gather(val.images, vi, vpos, ve));
          auto video = ops::make_video_relaxed(cell, res.params, x, cfg.frames, true, cfg.fill);
          auto r = detail::video_loss(model, video, detail::gather_labels(val.labels, 1, vi, vpos, ve), data.classes,
                                      false, {}, RunMode::arch);
          detail::check_finite_loss(r.loss, "validation");
          tape.backward(r.loss);
          adam.step(tau_ptrs);
          vl += static_cast<double>(r.loss.value()[0]) * static_cast<double>(ve - vpos);
          vn += ve - vpos;
          detail::merge(vconf, r.confusion);
        }
        vpos = ve;
        ++rep.tau_steps;
        if (cfg.verify_alternation)
          DAS_CHECK(parameter_hash(model.parameters()) == w_before, ContractError, "a tau-step changed the weights");
      } catch (const NumericError& err) {
        detail::abort_with_checkpoint(good, cfg, rep.w_steps, err.what());
      }
      std::vector<std::vector<double>> row;
      for (const auto& w : mixture_weights(res.params)) row.emplace_back(w.begin(), w.end());
      rep.trajectory.push_back(std::move(row));
      if (cfg.budget_seconds && clock.seconds() >= *cfg.budget_seconds) {
        rep.stopped_by_budget = true;
        break;
      }
    }
    EpochStats st;
    st.epoch = ep;
    st.lr = lr;
    st.train_loss = tn ? tl / static_cast<double>(tn) : 0.0;
    st.val_loss = vn ? vl / static_cast<double>(vn) : 0.0;
    st.val_metric = vconf.accuracy();
    st.seconds = clock.seconds();
    rep.epochs.push_back(st);
  }

  // Perturbation discretization scored on the whole validation half.
  auto score = [&](const EdgeWeights<T>& w) {
    double loss = 0;
    Confusion conf(data.classes);
    std::vector<std::size_t> all(val.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t b = 0; b < val.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(val.size(), b + cfg.batch_size);
      Tape<T> tape;
      auto video = ops::make_video_fixed(cell, w, tape.constant(detail::gather(val.images, all, b, e)), cfg.frames, cfg.fill);
      auto r = detail::video_loss(model, video, detail::gather_labels(val.labels, 1, all, b, e), data.classes, false, {},
                                  RunMode::eval);
      loss += static_cast<double>(r.loss.value()[0]) * static_cast<double>(e - b);
      detail::merge(conf, r.confusion);
    }
    return cfg.metric == DiscretizeMetric::accuracy ? conf.accuracy() : -loss / static_cast<double>(val.size());
  };
  PerturbationReport pr;
  res.genotype = discretize_by_perturbation<T>(cell, mixture_weights(res.params), score, space, &pr);
  res.genotype.seed = cfg.seed;
  res.genotype.metric = to_string(cfg.metric);
  rep.final_metric = pr.base_metric;
  rep.perturbation = pr;
  rep.genotype = res.genotype;
  rep.wall_seconds = clock.seconds();
  return res;
}

// Frames of every image under a discrete genotype (T frames) as a FrameSet.
template <typename T>
FrameSet<T> genotype_frames(const Dataset<T>& d, const Genotype& g, std::size_t frames, FillPolicy fill) {
  FrameSet<T> fs;
  auto v = make_video(d.images, g, frames, fill);
  fs.frames = std::move(v.frames);
  fs.labels = d.labels;
  fs.classes = d.classes;
  fs.dense = d.dense;
  fs.transforms = v.per_frame_transform;
  if (d.dense) DAS_CHECK(v.exact_geometry, ConfigError, "dense training needs a genotype with a single geometry");
  return fs;
}

// The untouched images as single-frame videos.
template <typename T>
FrameSet<T> still_frames(const Dataset<T>& d) {
  FrameSet<T> fs;
  Shape s = d.images.shape();
  s.insert(s.begin() + 1, 1);
  fs.frames = d.images.reshaped(s);
  fs.labels = d.labels;
  fs.classes = d.classes;
  fs.dense = d.dense;
  fs.transforms = {AffineTransform::identity()};
  return fs;
}

// Fresh training of `model` with the discrete transform pipeline of `g`.
template <typename T>
TrainReport train_final(const Genotype& g, SearchSpace space, Model<T>& model, const Dataset<T>& train,
                        const Dataset<T>& eval, const SearchConfig& cfg) {
  g.validate();
  g.check_space(space);
  train.validate();
  eval.validate();
  auto rep = fit(model, genotype_frames(train, g, cfg.frames, cfg.fill), genotype_frames(eval, g, cfg.frames, cfg.fill), cfg);
  rep.genotype = g;
  return rep;
}

}  // namespace das
