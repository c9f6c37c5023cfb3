// Copyright 2026 The IBKit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ibkit: gradcheck | verify-ib | corrupt | train | eval | report
//
// Exit codes: 0 success, 1 a check failed (or training diverged), 2 usage
// error (bad flags, missing files, malformed JSON, unknown kinds).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "ibkit/corruptions.hpp"
#include "ibkit/errors.hpp"
#include "ibkit/harness.hpp"
#include "ibkit/ib_oracle.hpp"
#include "ibkit/image.hpp"
#include "ibkit/scenarios.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ibkit;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

// Thrown for usage problems detected after flag parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const std::string& out, const json& j) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw UsageError("cannot write '" + out + "'");
  f << j.dump(2) << '\n';
}

// JSON keeps doubles; non-finite values become null, so cap them first.
double finite_or(double v, double fallback) { return std::isfinite(v) ? v : fallback; }

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t n = 8, d = 16, heads = 4, hidden = 0;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.heads == 0 || a.d % a.heads != 0) throw UsageError("--heads must divide --d");
  const std::size_t hidden = a.hidden == 0 ? 4 * a.d : a.hidden;
  const GradcheckReport rep = scenarios::fused_gradcheck(a.seed, a.n, a.d, a.heads, hidden);
  json slots = json::array();
  for (const SlotCheck& s : rep.slots) {
    slots.push_back({{"name", s.name},
                     {"rel_error", finite_or(s.rel_error, 1e308)},
                     {"max_abs_fd", s.max_abs_fd},
                     {"passed", s.rel_error < a.tol}});
  }
  const bool ok = rep.passed(a.tol);
  write_json("", {{"seed", a.seed},
                  {"n", a.n},
                  {"d", a.d},
                  {"heads", a.heads},
                  {"hidden", hidden},
                  {"step", 1e-5},
                  {"tolerance", a.tol},
                  {"slots", slots},
                  {"worst", finite_or(rep.worst(), 1e308)},
                  {"passed", ok}});
  return ok ? kOk : kCheckFailed;
}

struct VerifyArgs {
  std::size_t seeds = 100;
  std::uint64_t start = 0;
  std::string kind = "softmax";
  double beta = 1.0, bias = 1.0, tol = 1e-10;
  bool unnormalized = false;
};

int cmd_verify_ib(const VerifyArgs& a) {
  const oracle::LatentKind kind = oracle::parse_latent_kind(a.kind);
  oracle::EquivalenceOptions opt;
  opt.beta = a.beta;
  opt.bias = a.bias;
  opt.normalized_centers = !a.unnormalized;
  json devs = json::array();
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t s = a.start; s < a.start + a.seeds; ++s) {
    const double dev = oracle::equivalence_check(s, kind, opt);
    ok = ok && dev < a.tol;
    worst = std::max(worst, dev);
    devs.push_back({{"seed", s}, {"deviation", dev}});
  }
  write_json("", {{"kind", oracle::to_string(kind)},
                  {"seeds", a.seeds},
                  {"start", a.start},
                  {"beta", a.beta},
                  {"bias", a.bias},
                  {"normalized_centers", !a.unnormalized},
                  {"tolerance", a.tol},
                  {"deviations", devs},
                  {"max_deviation", worst},
                  {"passed", ok}});
  return ok ? kOk : kCheckFailed;
}

struct CorruptArgs {
  std::string in, out, kind;
  int severity = 0;
  std::uint64_t seed = 0;
};

int cmd_corrupt(const CorruptArgs& a) {
  const CorruptionSpec spec{parse_corruption_kind(a.kind), a.severity, a.seed};
  spec.validate();
  if (!fs::exists(a.in)) throw UsageError("input image '" + a.in + "' does not exist");
  const Image img = load_image(a.in);
  const Image out = corrupt(img, spec);
  save_image(a.out, out);
  std::cerr << "psnr " << psnr_capped(psnr(quantize8(img), quantize8(out))) << " dB\n";
  return kOk;
}

struct TrainArgs {
  std::string model, config, out;
  std::size_t steps = 0;  // 0 keeps the config value
};

int cmd_train(const TrainArgs& a) {
  json cfg = a.config.empty() ? json::object() : read_json(a.config);
  if (!cfg.is_object()) throw UsageError("train config must be a JSON object");
  if (!a.model.empty()) cfg["model"] = a.model;
  if (a.steps > 0) cfg["steps"] = a.steps;
  const harness::TrainConfig config = harness::train_config_from_json(cfg);

  const auto train = harness::make_toy_dataset(config.data_seed, config.train_scenes);
  const harness::TrainedModel model = harness::train_policy(train, config);
  harness::save_model(a.out, model);
  harness::write_trace_csv(fs::path(a.out) / "trace.csv", model.trace);
  write_json("", {{"checkpoint", a.out},
                  {"train_config", harness::to_json(config)},
                  {"final_loss", model.trace.empty() ? 0.0 : model.trace.back().loss},
                  {"param_checksum", model.checksum()},
                  {"trace_points", model.trace.size()}});
  return kOk;
}

// Grid file: every key optional, unknown keys rejected.
//   kinds: ["gaussian_noise", ...] or "all"    (default: all 14)
//   severities: [3, 4, 5]
//   corruption_seed: 0, eval_seed: 2000, eval_scenes: 512, features: true
//   overrides: {"gaussian_noise": [0.0]}
struct GridFile {
  harness::GridOptions options;
  std::uint64_t eval_seed = 2000;
  std::size_t eval_scenes = 512;
};

GridFile parse_grid(const json& j) {
  if (!j.is_object()) throw UsageError("grid must be a JSON object");
  GridFile g;
  g.options.kinds = all_corruption_kinds();
  g.options.severities = {3, 4, 5};
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "kinds") {
        if (v.is_string() && v.get<std::string>() == "all") continue;
        g.options.kinds.clear();
        for (const auto& k : v) g.options.kinds.push_back(parse_corruption_kind(k.get<std::string>()));
      } else if (key == "severities") {
        g.options.severities = v.get<std::vector<int>>();
      } else if (key == "corruption_seed") {
        g.options.corruption_seed = v.get<std::uint64_t>();
      } else if (key == "eval_seed") {
        g.eval_seed = v.get<std::uint64_t>();
      } else if (key == "eval_scenes") {
        g.eval_scenes = v.get<std::size_t>();
      } else if (key == "features") {
        g.options.with_features = v.get<bool>();
      } else if (key == "overrides") {
        for (const auto& [name, params] : v.items())
          g.options.overrides.emplace_back(parse_corruption_kind(name),
                                           params.get<std::vector<double>>());
      } else {
        throw UsageError("unknown grid key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw UsageError("bad value for grid key '" + key + "': " + e.what());
    }
  }
  for (int s : g.options.severities) CorruptionSpec{CorruptionKind::fog, s, 0}.validate();
  return g;
}

struct EvalArgs {
  std::string ckpt, grid, out;
};

int cmd_eval(const EvalArgs& a) {
  const GridFile g = parse_grid(a.grid.empty() ? json::object() : read_json(a.grid));
  if (!fs::exists(fs::path(a.ckpt) / "manifest.json"))
    throw UsageError("'" + a.ckpt + "' is not a checkpoint directory");
  const harness::TrainedModel model = harness::load_model(a.ckpt);
  const auto scenes = harness::make_toy_dataset(g.eval_seed, g.eval_scenes);
  harness::RobustnessReport report = harness::evaluate_grid(model, scenes, g.options);
  report.metadata["eval_seed"] = g.eval_seed;
  json j = harness::to_json(report);
  write_json(a.out, j);
  std::cerr << "clean accuracy " << report.clean_accuracy << ", report hash "
            << harness::report_hash(j) << '\n';
  return kOk;
}

struct ReportArgs {
  std::string a, b;
  bool as_json = false;
};

harness::RobustnessReport read_report(const std::string& path) {
  return harness::report_from_json(read_json(path));
}

int cmd_report(const ReportArgs& args) {
  const auto ra = read_report(args.a);
  const auto rb = read_report(args.b);
  json rows = json::array();
  std::ostringstream text;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %3s  %7s %7s %8s  %7s %7s  %7s %7s\n", "cell", "sev",
                ("acc:" + ra.model_kind).c_str(), ("acc:" + rb.model_kind).c_str(), "delta",
                "cons:a", "cons:b", "pur:a", "pur:b");
  text << line;
  std::snprintf(line, sizeof line, "%-18s %3s  %7.3f %7.3f %+8.3f  %7s %7s  %7.3f %7.3f\n", "clean",
                "-", ra.clean_accuracy, rb.clean_accuracy, rb.clean_accuracy - ra.clean_accuracy,
                "-", "-", ra.clean_purity, rb.clean_purity);
  text << line;
  double sum_a = 0.0, sum_b = 0.0;
  std::size_t matched = 0;
  for (const harness::GridCell& ca : ra.cells) {
    const harness::GridCell* cb = rb.find(ca.kind, ca.severity);
    if (!cb) continue;
    ++matched;
    sum_a += ca.accuracy;
    sum_b += cb->accuracy;
    std::snprintf(line, sizeof line, "%-18s %3d  %7.3f %7.3f %+8.3f  %7.3f %7.3f  %7.3f %7.3f\n",
                  to_string(ca.kind).c_str(), ca.severity, ca.accuracy, cb->accuracy,
                  cb->accuracy - ca.accuracy, ca.consistency_adapter, cb->consistency_adapter,
                  ca.purity, cb->purity);
    text << line;
    rows.push_back({{"kind", to_string(ca.kind)},
                    {"severity", ca.severity},
                    {"accuracy_a", ca.accuracy},
                    {"accuracy_b", cb->accuracy},
                    {"accuracy_delta", cb->accuracy - ca.accuracy},
                    {"consistency_a", ca.consistency_adapter},
                    {"consistency_b", cb->consistency_adapter},
                    {"purity_a", ca.purity},
                    {"purity_b", cb->purity}});
  }
  const double mean_a = matched ? sum_a / static_cast<double>(matched) : 0.0;
  const double mean_b = matched ? sum_b / static_cast<double>(matched) : 0.0;
  std::snprintf(line, sizeof line, "%-18s %3s  %7.3f %7.3f %+8.3f   (%zu shared cells)\n",
                "mean corrupted", "-", mean_a, mean_b, mean_b - mean_a, matched);
  text << line;

  if (args.as_json) {
    write_json("", {{"a", {{"path", args.a}, {"model_kind", ra.model_kind}}},
                    {"b", {{"path", args.b}, {"model_kind", rb.model_kind}}},
                    {"clean_accuracy_a", ra.clean_accuracy},
                    {"clean_accuracy_b", rb.clean_accuracy},
                    {"mean_corrupted_accuracy_a", mean_a},
                    {"mean_corrupted_accuracy_b", mean_b},
                    {"cells", rows}});
  } else {
    std::cout << text.str();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ibkit: IB-Adapter toolkit"};
  app.require_subcommand(1);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the fused adapter");
  gc->add_option("--seed", ga.seed);
  gc->add_option("--n", ga.n, "tokens")->check(CLI::PositiveNumber);
  gc->add_option("--d", ga.d, "channels")->check(CLI::PositiveNumber);
  gc->add_option("--heads", ga.heads)->check(CLI::PositiveNumber);
  gc->add_option("--hidden", ga.hidden, "MLP width (0 = 4d)");
  gc->add_option("--tol", ga.tol);

  VerifyArgs va;
  auto* vi = app.add_subcommand("verify-ib", "iterate vs attention equivalence over seeds");
  vi->add_option("--seeds", va.seeds)->check(CLI::PositiveNumber);
  vi->add_option("--start", va.start);
  vi->add_option("--kind", va.kind, "softmax | sigmoid");
  vi->add_option("--beta", va.beta);
  vi->add_option("--bias", va.bias, "sigmoid threshold");
  vi->add_option("--tol", va.tol);
  vi->add_flag("--unnormalized", va.unnormalized, "stretch the centres (negative control)");

  CorruptArgs ca;
  auto* co = app.add_subcommand("corrupt", "apply one corruption to a PNG/PPM image");
  co->add_option("--in", ca.in)->required();
  co->add_option("--kind", ca.kind)->required();
  co->add_option("--severity", ca.severity, "1..5")->required();
  co->add_option("--seed", ca.seed);
  co->add_option("--out", ca.out)->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on clean toy scenes");
  tr->add_option("--model", ta.model, "mlp | ib | fused (overrides the config)");
  tr->add_option("--config", ta.config, "JSON train config");
  tr->add_option("--steps", ta.steps, "override the config step count");
  tr->add_option("--out", ta.out, "checkpoint directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over a corruption grid");
  ev->add_option("--ckpt", ea.ckpt)->required();
  ev->add_option("--grid", ea.grid, "JSON grid description");
  ev->add_option("--out", ea.out, "report path (default stdout)");

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "side-by-side comparison of two reports");
  rp->add_option("--a", ra.a)->required();
  rp->add_option("--b", ra.b)->required();
  rp->add_flag("--json", ra.as_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ibkit: error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*gc) return cmd_gradcheck(ga);
    if (*vi) return cmd_verify_ib(va);
    if (*co) return cmd_corrupt(ca);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*rp) return cmd_report(ra);
  } catch (const UsageError& e) {
    std::cerr << "ibkit: error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValueError& e) {
    std::cerr << "ibkit: error: " << e.what() << '\n';
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "ibkit: error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "ibkit: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "ibkit: error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
