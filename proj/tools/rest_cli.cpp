// Copyright 2026 The ResT Kit Authors.
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

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rest/analysis.hpp"
#include "rest/audit.hpp"
#include "rest/model.hpp"

// Exit codes: 0 success, 1 precondition violation, 2 failed check.

namespace {

using namespace rest;

constexpr int kExitOk = 0;
constexpr int kExitPrecondition = 1;
constexpr int kExitCheckFailed = 2;

struct Global {
  std::uint64_t seed = 42;
  std::string precision = "f64";
  std::string config_path;
  std::string out_path;
};

struct ModelChoice {
  std::string variant;
};

ModelConfig resolve_model(const Global& g, const ModelChoice& m) {
  if (!g.config_path.empty() && !m.variant.empty()) {
    throw std::invalid_argument("--variant and --config are mutually exclusive");
  }
  if (!g.config_path.empty()) return load_model_config(g.config_path);
  return variant_config(m.variant.empty() ? "lite" : m.variant);
}

void print_resolved(const std::string& command, const Global& g,
                    const std::vector<std::pair<std::string, std::string>>& fields,
                    const ModelConfig* model = nullptr) {
  std::cout << "# command   = " << command << "\n# seed      = " << g.seed
            << "\n# precision = " << g.precision << "\n";
  for (const auto& [k, v] : fields) std::cout << "# " << k << std::string(10 - std::min<std::size_t>(k.size(), 9), ' ') << "= " << v << "\n";
  if (model != nullptr) {
    std::istringstream lines(format_model_config(*model));
    for (std::string line; std::getline(lines, line);) std::cout << "# model: " << line << "\n";
  }
  std::cout << std::flush;
}

void require_f64(const Global& g, const std::string& command) {
  if (parse_precision(g.precision) != Precision::kF64) {
    throw std::invalid_argument(command + " runs in double precision only; got --precision " +
                                g.precision + " (f32 is available for bench)");
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

// Primary report goes to stdout and, with --out, to the file as well.
void emit(const Global& g, const std::string& text) {
  std::cout << text;
  if (!g.out_path.empty()) write_file(g.out_path, text);
}

Tensor seeded_image(std::size_t batch, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  return uniform({batch, 3, side, side}, -1.0, 1.0, rng);
}

double checksum(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// ---- subcommands ----------------------------------------------------------

struct AuditArgs {
  ModelChoice model;
  std::size_t input = 224;
  std::string csv;
  bool strict = false;
};

int run_audit(const Global& g, const AuditArgs& a) {
  const ModelConfig config = resolve_model(g, a.model);
  print_resolved("audit", g,
                 {{"input", std::to_string(a.input)},
                  {"strict", a.strict ? "true" : "false"},
                  {"csv", a.csv.empty() ? "-" : a.csv}},
                 &config);
  const Model model = build_model(config, g.seed);
  const AuditReport report = audit_model(model, a.input, a.input);
  emit(g, report.text_table());
  if (!a.csv.empty()) write_file(a.csv, report.csv());

  bool ok = true;
  for (const auto& f : report.formulas) {
    if (!f.reconciled) {
      std::cout << "stage " << f.stage + 1 << ": counted attention MACs do not match the formula\n";
      ok = false;
    }
  }
  if (a.strict) {
    const auto ref = reference_figures(config.variant);
    if (!ref || a.input != 224) {
      throw std::invalid_argument("--strict needs a named variant at --input 224; got variant '" +
                                  config.variant + "' at " + std::to_string(a.input));
    }
    const double dp = relative_deviation(report.total_params / 1e6, ref->params_millions);
    const double dm = relative_deviation(report.total_macs / 1e9, ref->gmacs_224);
    const bool p_ok = std::abs(dp) <= kParamTolerance;
    const bool m_ok = std::abs(dm) <= kMacTolerance;
    std::cout << "\nreference   params " << ref->params_millions << " M, deviation "
              << fmt("%+.2f%%", 100 * dp) << " (tolerance " << 100 * kParamTolerance << "%) "
              << (p_ok ? "ok" : "OUT OF TOLERANCE") << "\n"
              << "reference   MACs   " << ref->gmacs_224 << " G, deviation "
              << fmt("%+.2f%%", 100 * dm) << " (tolerance " << 100 * kMacTolerance << "%) "
              << (m_ok ? "ok" : "OUT OF TOLERANCE") << "\n";
    ok = ok && p_ok && m_ok;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

struct ForwardArgs {
  ModelChoice model;
  std::string weights;
  std::size_t input = 224;
  std::size_t batch = 1;
};

int run_forward(const Global& g, const ForwardArgs& a) {
  require_f64(g, "forward");
  const ModelConfig config = resolve_model(g, a.model);
  print_resolved("forward", g,
                 {{"input", std::to_string(a.input)},
                  {"batch", std::to_string(a.batch)},
                  {"weights", a.weights.empty() ? "(seeded init)" : a.weights}},
                 &config);
  if (a.batch == 0) throw std::invalid_argument("--batch must be >= 1, got 0");
  stage_geometry(config, a.input, a.input);  // precondition before building
  Model model = build_model(config, g.seed);
  if (!a.weights.empty()) load_weights(model.params, a.weights);
  const Tensor image = seeded_image(a.batch, a.input, g.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor logits = model_forward(model, image);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream out;
  out << "logits shape " << to_string(logits.shape()) << "\n";
  const std::size_t classes = logits.shape()[1];
  for (std::size_t b = 0; b < a.batch; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (logits[b * classes + c] > logits[b * classes + best]) best = c;
    }
    out << "sample " << b << ": argmax " << best << ", logit " << fmt("%.9g", logits[b * classes + best])
        << "\n";
  }
  out << "checksum " << fmt("%.12g", checksum(logits)) << "\n";
  emit(g, out.str());
  std::cout << "time " << fmt("%.3f", secs) << " s\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string scope = "attention";
  std::optional<double> tol;
  std::size_t coords = 0;
  bool coords_set = false;
};

double default_tolerance(GradcheckScope scope) {
  switch (scope) {
    case GradcheckScope::kPrimitive: return 1e-6;
    case GradcheckScope::kAttention:
    case GradcheckScope::kBlock: return 1e-4;
    case GradcheckScope::kModel: return 1e-3;
  }
  return 1e-4;
}

int run_gradcheck(const Global& g, const GradcheckArgs& a) {
  require_f64(g, "gradcheck");
  const GradcheckScope scope = parse_gradcheck_scope(a.scope);
  const double tol = a.tol.value_or(default_tolerance(scope));
  if (!(tol > 0)) throw std::invalid_argument("--tol must be positive, got " + std::to_string(tol));
  // The tiny model has tens of thousands of parameters; sample by default.
  const std::size_t coords = a.coords_set ? a.coords : (scope == GradcheckScope::kModel ? 48 : 0);
  print_resolved("gradcheck", g,
                 {{"scope", std::string(to_string(scope))},
                  {"tol", fmt("%g", tol)},
                  {"coords", coords == 0 ? "all" : std::to_string(coords)}});
  const GradcheckReport report = gradcheck_campaign(scope, g.seed, tol, coords);
  emit(g, report.text());
  return report.passed() ? kExitOk : kExitCheckFailed;
}

struct DiversityArgs {
  ModelChoice model;
  std::string weights;
  std::size_t stage = 1;
  std::size_t block = 0;
  std::size_t input = 224;
  std::size_t batch = 1;
  std::string csv;
  std::string heatmap;
};

int run_diversity(const Global& g, const DiversityArgs& a) {
  require_f64(g, "diversity");
  const ModelConfig config = resolve_model(g, a.model);
  print_resolved("diversity", g,
                 {{"stage", std::to_string(a.stage)},
                  {"block", std::to_string(a.block)},
                  {"input", std::to_string(a.input)},
                  {"batch", std::to_string(a.batch)},
                  {"weights", a.weights.empty() ? "(seeded init)" : a.weights}},
                 &config);
  if (a.stage < 1 || a.stage > kStageCount) {
    throw std::invalid_argument("--stage must be in 1.." + std::to_string(kStageCount) + ", got " +
                                std::to_string(a.stage));
  }
  if (a.batch == 0) throw std::invalid_argument("--batch must be >= 1, got 0");
  stage_geometry(config, a.input, a.input);
  Model model = build_model(config, g.seed);
  if (!a.weights.empty()) load_weights(model.params, a.weights);
  const DiversityReport r = diversity(model, seeded_image(a.batch, a.input, g.seed), a.stage - 1,
                                      a.block);
  std::ostringstream out;
  out << "stage " << a.stage << " block " << a.block << ", heads " << r.heads << "\n";
  for (std::size_t p = 0; p < 3; ++p) {
    out << "mean off-diagonal similarity " << DiversityReport::kProbeNames[p] << ": "
        << fmt("%.6f", r.mean_similarity[p]) << "\n";
  }
  emit(g, out.str());
  if (!a.csv.empty()) write_file(a.csv, r.csv());
  if (!a.heatmap.empty()) write_heatmap_ppm(r, a.heatmap);
  return kExitOk;
}

struct BenchArgs {
  std::string attn = "emsa";
  BenchGeometry geometry;
  std::string reduction = "dwconv";
  std::size_t iters = 10;
};

int run_bench(const Global& g, const BenchArgs& a) {
  const Precision precision = parse_precision(g.precision);
  const AttentionKind kind = a.attn == "emsa" ? AttentionKind::kEmsa
                             : a.attn == "msa"
                                 ? AttentionKind::kMsa
                                 : throw std::invalid_argument("--attn must be msa or emsa, got '" +
                                                               a.attn + "'");
  BenchGeometry geometry = a.geometry;
  geometry.reduction_kind = parse_reduction_kind(a.reduction);
  if (kind == AttentionKind::kMsa) geometry.reduction = 1;
  print_resolved("bench", g,
                 {{"attn", a.attn},
                  {"n", std::to_string(geometry.n)},
                  {"dm", std::to_string(geometry.d_model)},
                  {"heads", std::to_string(geometry.heads)},
                  {"s", std::to_string(geometry.reduction)},
                  {"reduction", std::string(to_string(geometry.reduction_kind))},
                  {"iters", std::to_string(a.iters)}});
  const BenchResult r = bench_attention(kind, geometry, a.iters, precision, g.seed);
  emit(g, BenchResult::csv_header() + "\n" + r.csv_row() + "\n");
  return kExitOk;
}

struct TrainArgs {
  std::size_t classes = 10;
  std::size_t size = 64;
  std::size_t per_class = 1;
  std::size_t steps = 300;
  double lr = 0.005;
  std::string pe = "pa";
  std::string stem = "rest";
  std::string curve;
};

int run_train(const Global& g, const TrainArgs& a) {
  require_f64(g, "train-toy");
  const ModelConfig config =
      toy_model_config(a.classes, parse_pe_kind(a.pe), parse_stem_kind(a.stem));
  print_resolved("train-toy", g,
                 {{"classes", std::to_string(a.classes)},
                  {"size", std::to_string(a.size)},
                  {"per-class", std::to_string(a.per_class)},
                  {"steps", std::to_string(a.steps)},
                  {"lr", fmt("%g", a.lr)},
                  {"curve", a.curve.empty() ? "-" : a.curve}},
                 &config);
  if (!(a.lr >= 0)) throw std::invalid_argument("--lr must be >= 0, got " + fmt("%g", a.lr));
  ModelConfig sized = config;
  sized.image_size = a.size;
  const ToyTask task = make_toy_task(a.classes, a.size, a.per_class, g.seed);
  const TrainResult r = toy_train(sized, task, a.steps, a.lr, g.seed);
  std::ostringstream out;
  out << "initial loss " << fmt("%.9g", r.losses.empty() ? r.final_loss : r.losses.front())
      << "\nfinal loss   " << fmt("%.9g", r.final_loss) << "\nfinal accuracy "
      << fmt("%.4f", r.final_accuracy) << "\n";
  if (r.diverged_at) out << "diverged at step " << *r.diverged_at << "\n";
  emit(g, out.str());
  if (!a.curve.empty()) write_file(a.curve, r.csv());
  return r.diverged_at ? kExitCheckFailed : kExitOk;
}

struct WeightsArgs {
  ModelChoice model;
  std::string action;
  std::string path;
};

int run_weights(const Global& g, const WeightsArgs& a) {
  const ModelConfig config = resolve_model(g, a.model);
  print_resolved("weights", g, {{"action", a.action}, {"path", a.path}}, &config);
  if (a.path.empty()) throw std::invalid_argument("weights needs --path");
  std::ostringstream out;
  if (a.action == "export") {
    const Model model = build_model(config, g.seed);
    save_weights(model.params, a.path);
    out << "wrote " << model.params.size() << " tensors to " << a.path << "\n";
  } else if (a.action == "import") {
    Model model = build_model(config, g.seed);
    load_weights(model.params, a.path);
    double sum = 0;
    for (const auto& p : model.params) sum += checksum(p.value);
    out << "loaded " << model.params.size() << " tensors, checksum " << fmt("%.12g", sum) << "\n";
  } else if (a.action == "roundtrip") {
    const Model source = build_model(config, g.seed);
    save_weights(source.params, a.path);
    Model target = build_model(config, g.seed + 1);
    load_weights(target.params, a.path);
    std::size_t mismatched = 0;
    auto it = target.params.begin();
    for (const auto& p : source.params) {
      const auto& q = *it++;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        if (static_cast<double>(static_cast<float>(p.value[i])) != q.value[i]) {
          ++mismatched;
          break;
        }
      }
    }
    out << "round-tripped " << source.params.size() << " tensors through " << a.path << ": "
        << (mismatched == 0 ? "identical at f32" : std::to_string(mismatched) + " tensors differ")
        << "\n";
    emit(g, out.str());
    return mismatched == 0 ? kExitOk : kExitCheckFailed;
  } else {
    throw std::invalid_argument("weights action must be export, import or roundtrip, got '" +
                                a.action + "'");
  }
  emit(g, out.str());
  return kExitOk;
}

void add_model_flags(CLI::App* cmd, ModelChoice& m) {
  cmd->add_option("--variant", m.variant, "Named variant: lite, small, base, large (default lite)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rest: build, audit, check and benchmark efficient-attention vision backbones"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand too
  Global g;
  app.add_option("--seed", g.seed, "Seed for weights, inputs and campaigns")->capture_default_str();
  app.add_option("--precision", g.precision, "f64 or f32 (f32 only for bench)")
      ->capture_default_str();
  app.add_option("--config", g.config_path, "Model config file (key = value lines)");
  app.add_option("--out", g.out_path, "Also write the main report to this file");

  AuditArgs audit;
  auto* c_audit = app.add_subcommand("audit", "Parameter and MAC audit with formula reconciliation");
  add_model_flags(c_audit, audit.model);
  c_audit->add_option("--input", audit.input, "Square input side")->capture_default_str();
  c_audit->add_option("--csv", audit.csv, "Write path,params,macs,bucket CSV");
  c_audit->add_flag("--strict", audit.strict, "Exit 2 when outside the reference tolerances");

  ForwardArgs fwd;
  auto* c_fwd = app.add_subcommand("forward", "Seeded random-input forward pass");
  add_model_flags(c_fwd, fwd.model);
  c_fwd->add_option("--weights", fwd.weights, "RESTW1 weight file");
  c_fwd->add_option("--input", fwd.input, "Square input side")->capture_default_str();
  c_fwd->add_option("--batch", fwd.batch, "Batch size")->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Backward vs central differences");
  c_gc->add_option("--scope", gc.scope, "primitive, attention (or emsa), block, model")
      ->capture_default_str();
  c_gc->add_option("--tol", gc.tol, "Relative error tolerance (default per scope)");
  c_gc->add_option("--coords", gc.coords, "Coordinates per tensor, 0 = all (default: all; 48 for model)")
      ->each([&](const std::string&) { gc.coords_set = true; });

  DiversityArgs dv;
  auto* c_dv = app.add_subcommand("diversity", "Cross-head similarity at the three probe points");
  add_model_flags(c_dv, dv.model);
  c_dv->add_option("--weights", dv.weights, "RESTW1 weight file");
  c_dv->add_option("--stage", dv.stage, "Stage 1..4")->capture_default_str();
  c_dv->add_option("--block", dv.block, "Block index within the stage, from 0")
      ->capture_default_str();
  c_dv->add_option("--input", dv.input, "Square input side")->capture_default_str();
  c_dv->add_option("--batch", dv.batch, "Batch size")->capture_default_str();
  c_dv->add_option("--csv", dv.csv, "Write probe,i,j,similarity CSV");
  c_dv->add_option("--heatmap", dv.heatmap, "Write a PPM heatmap");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Attention forward wall time");
  c_bench->add_option("--attn", bench.attn, "msa or emsa")->capture_default_str();
  c_bench->add_option("--n", bench.geometry.n, "Token count (perfect square)")
      ->capture_default_str();
  c_bench->add_option("--dm", bench.geometry.d_model, "Model width")->capture_default_str();
  c_bench->add_option("--heads", bench.geometry.heads, "Heads")->capture_default_str();
  c_bench->add_option("--s", bench.geometry.reduction, "Reduction factor (emsa)")
      ->capture_default_str();
  c_bench->add_option("--reduction", bench.reduction, "dwconv, avg or max")->capture_default_str();
  c_bench->add_option("--iters", bench.iters, "Timed iterations (>= 3)")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-toy", "Full-batch SGD on the synthetic pattern task");
  c_tr->add_option("--classes", tr.classes, "Classes")->capture_default_str();
  c_tr->add_option("--size", tr.size, "Image side")->capture_default_str();
  c_tr->add_option("--per-class", tr.per_class, "Images per class")->capture_default_str();
  c_tr->add_option("--steps", tr.steps, "SGD steps")->capture_default_str();
  c_tr->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  c_tr->add_option("--pe", tr.pe, "none, le, gl or pa")->capture_default_str();
  c_tr->add_option("--stem", tr.stem, "rest, resnet or pvt")->capture_default_str();
  c_tr->add_option("--curve", tr.curve, "Write step,loss CSV");

  WeightsArgs wt;
  auto* c_wt = app.add_subcommand("weights", "RESTW1 export, import and round trip");
  add_model_flags(c_wt, wt.model);
  c_wt->add_option("action", wt.action, "export, import or roundtrip")->required();
  c_wt->add_option("--path", wt.path, "Weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitPrecondition;
  }

  try {
    if (*c_audit) return run_audit(g, audit);
    if (*c_fwd) return run_forward(g, fwd);
    if (*c_gc) return run_gradcheck(g, gc);
    if (*c_dv) return run_diversity(g, dv);
    if (*c_bench) return run_bench(g, bench);
    if (*c_tr) return run_train(g, tr);
    if (*c_wt) return run_weights(g, wt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrecondition;
  }
  return kExitPrecondition;
}
