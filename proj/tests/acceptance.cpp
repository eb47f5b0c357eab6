// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance [criterion ids...]   (default: all)
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "das/das.hpp"
#include "scenarios.hpp"

namespace fs = std::filesystem;
using namespace das;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int shell(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome fused_rf() {
  const auto t0 = std::chrono::steady_clock::now();
  const double tr = fused_rf_area(FusedTransform::parse("translate:1,1"), 3, 3);
  const double sc = fused_rf_area(FusedTransform::parse("scale:2"), 3, 3);
  const auto rot = FusedTransform::parse("rotate:30");
  const double ro = fused_rf_area(rot, 3, 3);
  const auto mc = monte_carlo_union_area(fused_regions(rot, 3, 3), 10'000'000, 2024);
  const double secs = since(t0);
  const bool ok = tr == 19.0 && sc == 144.0 && std::abs(ro - 14.19) <= 0.05 && std::abs(mc.area - ro) <= 3 * mc.stderr_ &&
                  std::abs(mc.area - 14.19) <= 0.05 && secs < 10;
  return {ok, fmt("translate %.1f, scale %.1f, rotate %.4f, MC %.4f +- %.4f, %.1fs", tr, sc, ro, mc.area, mc.stderr_, secs)};
}

Outcome gradient_suite() {
  const char* bin = std::getenv("DAS_GRADCHECK");
  if (!bin) return {false, "DAS_GRADCHECK not set"};
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = shell(std::string(bin) + " --gtest_brief=1 > /dev/null 2>&1");
  const double secs = since(t0);
  return {rc == 0 && secs < 120, fmt("finite-difference suite exit %d, %.1fs", rc, secs)};
}

Outcome theta_oracle() {
  std::mt19937_64 rng(31);
  int match = 0, sums = 0;
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const auto o = scenarios::random_theta_oracle(rng);
    const auto t = theta_star(o);
    const double err = std::abs(scenarios::grid_theta_T(o) - t.theta_T);
    worst = std::max(worst, err);
    match += err < 1e-3;
    sums += t.theta_I + t.theta_T == 1.0;
  }
  int ordered = 0;
  const int cases = 100;
  for (int i = 0; i < cases; ++i) {
    const auto o = scenarios::ordered_theta_oracle(rng, i % 2 == 0);
    const auto m = theta_moments(o);
    const auto t = theta_star(o);
    ordered += m.var_I < m.var_T ? t.theta_I > t.theta_T : t.theta_T > t.theta_I;
  }
  return {match == 50 && sums == 50 && ordered == cases,
          fmt("grid match %d/50 (worst %.1e), sum exact %d/50, ordering %d/%d", match, worst, sums, ordered, cases)};
}

Outcome identity_bias() {
  const auto t0 = std::chrono::steady_clock::now();
  int good = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = scenarios::identity_bias_run(seed);
    good += r.argmax[1] == 0 && r.perturbation.edges[1].op.kind == TransformKind::TranslateX;
  }
  const double secs = since(t0);
  return {good >= 7 && secs < 600, fmt("argmax Identity and perturbation TranslateX on %d/10 seeds, %.1fs", good, secs)};
}

Outcome discretization() {
  const auto r = scenarios::discretization_oracle(20, 77);
  return {r.agree * 10 >= r.trials * 9, fmt("perturbation matches exhaustive top-1 on %d/%d", r.agree, r.trials)};
}

Outcome temporal_rf() {
  const auto t0 = std::chrono::steady_clock::now();
  const size_t nt = 8;
  int bad = 0;
  for (size_t n = 1; n <= 3; ++n) {
    const auto c = scenarios::temporal_coupling(n, nt);
    for (size_t t = 0; t < nt; ++t)
      for (size_t u = 0; u < nt; ++u) {
        const bool near = (t > u ? t - u : u - t) <= n;
        bad += near != (c[t][u] > 0);
      }
  }
  const double secs = since(t0);
  return {bad == 0 && secs < 60, fmt("support |t-u| <= n for n = 1..3, T = 8: %d mismatches, %.1fs", bad, secs)};
}

Outcome round_trip() {
  std::mt19937_64 rng(9);
  double worst = 0, identity = 0;
  int ops = 0;
  for (const auto& row : kTransformTable) {
    if (!row.affine) continue;
    ++ops;
    const TransformOp op(row.kind);
    for (int k = 0; k < 5; ++k) {
      const auto img = scenarios::natural_image(3, 32, 32, rng);
      const double mae = scenarios::interior_mae(warp(inverse(op), apply(op, img)), img, 2);
      worst = std::max(worst, mae);
      if (row.kind == TransformKind::Identity) identity = std::max(identity, mae);
    }
  }
  return {worst < 2e-2 && identity == 0.0, fmt("%d affine ops, worst interior MAE %.2e, Identity %.1e", ops, worst, identity)};
}

Outcome video_contract() {
  const size_t h = 16, w = 16, r = 9, c = 5;
  Genotype ty;
  ty.space = SearchSpace::affine5;
  ty.edges = {{0, 1, TransformOp(TransformKind::TranslateY, 1.0 / 16), 1.0}};
  const auto v = make_video(scenarios::one_hot_image(h, w, r, c), ty, 3);
  int wrong = 0;
  for (size_t t = 0; t < 3; ++t)
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x < w; ++x) {
        const double want = (y == r - 1 - t && x == c) ? 1.0 : 0.0;
        wrong += std::abs(v.frames[(t * h + y) * w + x] - want) > 1e-9;
      }
  std::mt19937_64 rng(4);
  const auto img = Tensor<double>::uniform(Shape{2, 3, 8, 8}, rng);
  const auto id = make_video(img, Genotype::identity_like(CellSpec::affine5(), SearchSpace::affine5), 5);
  const size_t inner = img.size() / 2;
  int differ = 0;
  for (size_t n = 0; n < 2; ++n)
    for (size_t t = 0; t < 5; ++t)
      for (size_t i = 0; i < inner; ++i) differ += id.frames[(n * 5 + t) * inner + i] != img[n * inner + i];
  return {wrong == 0 && differ == 0, fmt("TranslateY one-hot: %d wrong pixels; Identity frames: %d differing values", wrong, differ)};
}

Outcome ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  double das_sum = 0, base_sum = 0, rep_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto cfg = scenarios::corner_cue_config(seed);
    AblationHarness<float> h(cfg, make_datasets<float>(cfg.dataset));
    const double b = h.run(Arm::baseline).final_metric, r = h.run(Arm::replica).final_metric, d = h.run(Arm::das).final_metric;
    base_sum += b, rep_sum += r, das_sum += d;
    per_seed += fmt(" [seed %d: %.3f %.3f %.3f]", static_cast<int>(seed), b, r, d);
  }
  const double secs = since(t0);
  return {das_sum >= base_sum && das_sum >= rep_sum && secs < 900,
          fmt("mean baseline %.3f, replica %.3f, das %.3f, %.0fs", base_sum / 3, rep_sum / 3, das_sum / 3, secs) + per_seed};
}

Outcome determinism() {
  const char* bin = std::getenv("DAS_CLI");
  if (!bin) return {false, "DAS_CLI not set"};
  const fs::path root = fs::temp_directory_path() / "das_acceptance_determinism";
  fs::remove_all(root);
  const std::string cfg = (fs::path(DAS_SOURCE_DIR) / "configs" / "quick.json").string();
  int rc = 0;
  for (const char* d : {"a", "b"})
    rc |= shell(std::string(bin) + " --config " + cfg + " --seed 11 --out " + (root / d).string() + " search > /dev/null 2>&1");
  bool same = rc == 0;
  for (const char* f : {"genotype.json", "metrics.csv"}) {
    const auto a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    same = same && !a.empty() && a == b;
  }
  return {same, fmt("two searches with seed 11: exit %d, genotype.json and metrics.csv %s", rc, same ? "identical" : "differ")};
}

Outcome cardinality() {
  const auto a5 = CellSpec::affine5(), f13 = CellSpec::full13();
  const bool ok = a5.cardinality_str() == "5^10" && f13.cardinality_str() == "13^14" &&
                  std::abs(a5.log_cardinality() - 10 * std::log(5.0)) < 1e-12 &&
                  std::abs(f13.log_cardinality() - 14 * std::log(13.0)) < 1e-12;
  return {ok, fmt("%s (log %.4f), %s (log %.4f)", a5.cardinality_str().c_str(), a5.log_cardinality(),
                  f13.cardinality_str().c_str(), f13.log_cardinality())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::array<std::pair<const char*, std::function<Outcome()>>, 11> criteria{{
      {"fused receptive-field areas", fused_rf},
      {"gradient checks", gradient_suite},
      {"theta oracle", theta_oracle},
      {"identity bias vs perturbation", identity_bias},
      {"discretization oracle", discretization},
      {"temporal receptive field", temporal_rf},
      {"round-trip undo", round_trip},
      {"video contract", video_contract},
      {"ablation ordering", ablation},
      {"search determinism", determinism},
      {"search-space cardinality", cardinality},
  }};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%-4s %2d %-30s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
