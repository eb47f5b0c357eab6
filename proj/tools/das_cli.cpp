// das: search, train, analyse and ablate from the command line.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include <CLI11.hpp>

#include "das/das.hpp"

namespace fs = std::filesystem;
using namespace das;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
};

// k<kernel>s<stride>[p<pad>][d<dilation>] for convolutions, pool<k>s<stride>[p<pad>] for pooling.
// Missing padding keeps the spatial size at stride 1.
std::vector<LayerSpec> parse_layers(const std::string& text) {
  static const std::regex conv(R"(k(\d+)s(\d+)(?:p(\d+))?(?:d(\d+))?)"), pool(R"(pool(\d+)s(\d+)(?:p(\d+))?)");
  std::vector<LayerSpec> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::smatch m;
    auto num = [&](int i, std::size_t dflt) { return m[i].matched ? std::stoul(m[i].str()) : dflt; };
    if (std::regex_match(tok, m, conv)) {
      const std::size_t k = num(1, 1), d = num(4, 1);
      out.push_back(LayerSpec::conv(1, 1, k, num(2, 1), num(3, d * (k - 1) / 2), d));
    } else if (std::regex_match(tok, m, pool)) {
      out.push_back(LayerSpec::pool(num(1, 2), num(2, 2), num(3, 0)));
    } else {
      throw ConfigError("cannot parse layer '" + tok + "' (expected e.g. k3s1, k3s2p1d1, pool2s2)");
    }
    out.back().validate();
  }
  DAS_CHECK(!out.empty(), ConfigError, "--layers is empty");
  return out;
}

// Shortest round-trip form, always with a decimal point.
std::string fmt_area(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

RunConfig load_config(const Globals& g) {
  DAS_CHECK(!g.config.empty(), ConfigError, "this command needs --config <path>");
  RunConfig c = load_run_config(g.config);
  if (g.seed) {
    c.search.seed = *g.seed;
    c.dataset.seed = *g.seed;
  }
  if (!g.out.empty()) c.out = g.out;
  if (!g.precision.empty()) c.precision = parse_precision(g.precision);
  return c;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  DAS_CHECK(os.good(), ConfigError, "cannot write " + p.string());
  os << s;
}

template <typename T>
void cmd_search(const RunConfig& c) {
  const auto data = make_datasets<T>(c.dataset);
  std::mt19937_64 rng(c.search.seed);
  Backbone<T> net(c.backbone, rng);
  SearchConfig sc = c.search;
  sc.checkpoint_on_abort = c.out / "last_good.dasc";
  const auto res = search(c.make_cell(), c.search_space, net, data.first, sc);
  save_genotype(c.out / "genotype.json", res.genotype);
  write_text(c.out / "genotype.dot", to_dot(res.genotype));
  write_text(c.out / "cell.dot", to_dot(c.make_cell(), mixture_weights(res.params)));
  write_metrics_csv(c.out / "metrics.csv", res.report, c.search.record_time);
  write_text(c.out / "search_report.json", to_json(res.report, true).dump(2) + "\n");
  std::cout << "genotype:";
  for (const auto& e : res.genotype.edges) std::cout << ' ' << e.op.name();
  std::cout << "\nval_metric " << res.report.final_metric << "\nwrote " << (c.out / "genotype.json").string() << '\n';
}

template <typename T>
void cmd_train(const RunConfig& c, const std::string& genotype_path) {
  fs::path gp = genotype_path.empty() ? c.genotype.value_or(fs::path{}) : fs::path(genotype_path);
  DAS_CHECK(!gp.empty(), ConfigError, "train needs --genotype <path> or a genotype entry in the config");
  DAS_CHECK(fs::exists(gp), ConfigError, "genotype file not found: " + gp.string());
  const Genotype g = load_genotype(gp);
  const auto data = make_datasets<T>(c.dataset);
  std::mt19937_64 rng(c.search.seed + 1);
  Backbone<T> net(c.backbone, rng);
  SearchConfig sc = c.search;
  sc.checkpoint_on_abort = c.out / "last_good.dasc";
  const auto rep = train_final(g, c.search_space, net, data.first, data.second, sc);
  write_metrics_csv(c.out / "metrics.csv", rep, c.search.record_time);
  write_text(c.out / "train_report.json", to_json(rep).dump(2) + "\n");
  std::cout << "final_metric " << rep.final_metric << '\n';
}

template <typename T>
void cmd_ablate(const RunConfig& c, const std::string& arm_flag) {
  const std::string which = arm_flag.empty() ? c.arm : arm_flag;
  std::vector<Arm> arms;
  if (which == "all") arms = all_arms();
  else arms = {parse_arm(which)};
  AblationHarness<T> h(c, make_datasets<T>(c.dataset));
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (Arm a : arms) {
    const auto rep = h.run(a);
    const fs::path dir = c.out / to_string(a);
    write_metrics_csv(dir / "metrics.csv", rep, c.search.record_time);
    write_text(dir / "report.json", to_json(rep).dump(2) + "\n");
    std::printf("%-16s %.4f\n", to_string(a).c_str(), rep.final_metric);
    summary.push_back({{"arm", to_string(a)}, {"final_metric", rep.final_metric}});
  }
  if (h.search_report()) save_genotype(c.out / "genotype.json", *h.search_report()->genotype);
  write_text(c.out / "ablation.json", summary.dump(2) + "\n");
}

template <typename T>
void cmd_gen_data(const RunConfig& c) {
  const auto data = make_datasets<T>(c.dataset);
  save_dataset(c.out / "train.dasd", data.first);
  save_dataset(c.out / "test.dasd", data.second);
  const std::size_t n = std::min<std::size_t>(8, data.first.size());
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%02zu_label%d.%s", i, data.first.dense ? 0 : data.first.labels[i],
                  data.first.images.dim(1) == 3 ? "ppm" : "pgm");
    io::write_pnm(c.out / "preview" / name, data.first.slice(i, i + 1).images.reshaped(
                                                   Shape{data.first.images.dim(1), data.first.images.dim(2), data.first.images.dim(3)}));
  }
  std::cout << "train " << data.first.size() << " test " << data.second.size() << " -> " << c.out.string() << '\n';
}

template <typename F>
void dispatch(Precision p, F&& f) {
  if (p == Precision::f64) f(double{});
  else f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable temporal augmentation search"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "run configuration (JSON)");
  app.add_option("--seed", g.seed, "seed for every random stream");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

  auto* search_cmd = app.add_subcommand("search", "bilevel search, then perturbation discretization");

  std::string genotype_path;
  auto* train_cmd = app.add_subcommand("train", "train a fresh backbone with a fixed genotype");
  train_cmd->add_option("--genotype", genotype_path, "genotype JSON");

  std::string layers, fused, backbone_path, report_path;
  std::size_t r = 3, frames = 3;
  auto* rf_cmd = app.add_subcommand("rf", "receptive-field calculators");
  rf_cmd->add_option("--layers", layers, "comma list such as k3s1,k3s2,pool2s2");
  rf_cmd->add_option("--backbone", backbone_path, "backbone spec JSON");
  rf_cmd->add_option("--fused", fused, "kind:params, e.g. translate:1,1 rotate:30 scale:2 shear:0.5");
  rf_cmd->add_option("--r", r, "side of the per-frame RF");
  rf_cmd->add_option("--frames", frames, "number of frames");
  rf_cmd->add_option("--report", report_path, "also write a JSON report here");

  std::string arm;
  auto* ablate_cmd = app.add_subcommand("ablate", "run one ablation arm, or all");
  ablate_cmd->add_option("--arm", arm, "baseline|augment_only|replica|reshuffle|random_genotype|das|all");

  std::string export_format = "dot";
  auto* export_cmd = app.add_subcommand("export-genotype", "convert a genotype to DOT or canonical JSON");
  export_cmd->add_option("--genotype", genotype_path, "genotype JSON")->required();
  export_cmd->add_option("--format", export_format)->check(CLI::IsMember({"dot", "json"}));

  auto* gen_cmd = app.add_subcommand("gen-data", "write the configured dataset to disk");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rf_cmd->parsed()) {
      DAS_CHECK(!layers.empty() || !fused.empty() || !backbone_path.empty(), ConfigError,
                "rf needs --layers, --backbone or --fused");
      RFReport rep;
      if (!layers.empty()) rep.per_layer = theoretical_rf_per_layer(parse_layers(layers));
      if (!backbone_path.empty()) rep.per_layer = theoretical_rf_per_layer(receptive_layers(load_backbone_spec(backbone_path)));
      if (!layers.empty() || !backbone_path.empty())
        std::cout << (rep.per_layer.empty() ? std::size_t{1} : rep.per_layer.back()) << '\n';
      if (!fused.empty()) {
        const auto f = FusedTransform::parse(fused);
        rep.fused = RFReport::Fused{f, r, frames, fused_rf_area(f, r, frames)};
        std::cout << fmt_area(rep.fused->area) << '\n';
      }
      if (!report_path.empty()) write_text(report_path, to_json(rep).dump(2) + "\n");
      return 0;
    }
    if (export_cmd->parsed()) {
      DAS_CHECK(fs::exists(genotype_path), ConfigError, "genotype file not found: " + genotype_path);
      const Genotype gt = load_genotype(genotype_path);
      const std::string text = export_format == "dot" ? to_dot(gt) : to_json(gt).dump(2) + "\n";
      if (g.out.empty()) std::cout << text;
      else write_text(fs::path(g.out) / ("genotype." + export_format), text);
      return 0;
    }
    const RunConfig c = load_config(g);
    fs::create_directories(c.out);
    dispatch(c.precision, [&](auto tag) {
      using T = decltype(tag);
      if (search_cmd->parsed()) cmd_search<T>(c);
      else if (train_cmd->parsed()) cmd_train<T>(c, genotype_path);
      else if (ablate_cmd->parsed()) cmd_ablate<T>(c, arm);
      else if (gen_cmd->parsed()) cmd_gen_data<T>(c);
    });
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
