// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "epsa/complexity.hpp"
#include "epsa/defaults.hpp"
#include "epsa/gradcheck.hpp"
#include "epsa/model.hpp"
#include "epsa/training.hpp"
#include "json.hpp"

namespace epsa::cli {
namespace {

using nlohmann::json;

// Raised for conditions that map to kNumeric after the output is written.
struct NumericFailure {
  std::string message;
};

struct Output {
  std::string format = "text";
  std::string path;

  void add_to(CLI::App* app) {
    app->add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"text", "json"}))
        ->capture_default_str();
    app->add_option("--output,-o", path, "Write to this file instead of stdout");
  }
  bool json_mode() const { return format == "json"; }

  void emit(const std::string& text, std::ostream& out) const {
    const std::string body = text.empty() || text.back() == '\n' ? text : text + '\n';
    if (path.empty()) {
      out << body;
      return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << body;
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
  }
};

std::string known_models() {
  std::string s;
  for (const std::string& n : model_names()) s += (s.empty() ? "" : ", ") + n;
  return s + ", epsanet_toy";
}

ModelSpec resolve_model(const std::string& name) {
  const auto& names = model_names();
  if (std::find(names.begin(), names.end(), name) != names.end()) return model_spec(name);
  if (name == "epsanet_toy") return toy_model_spec(defaults::kToyClasses);
  if (std::filesystem::is_regular_file(name)) return load_model_spec(name);
  throw std::invalid_argument("unknown model '" + name + "' (known: " + known_models() +
                              "; or pass a config file)");
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << body;
  if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

// ---- describe ---------------------------------------------------------------

struct DescribeArgs {
  std::string model;
  std::string config;
  std::size_t input_size = 224;
  Output output;
};

void cmd_describe(const DescribeArgs& a, std::ostream& out) {
  if (a.model.empty() == a.config.empty())
    throw std::invalid_argument("describe: give exactly one of <model> or --config");
  const ModelSpec spec = a.config.empty() ? resolve_model(a.model) : load_model_spec(a.config);
  const Description d = describe(spec, a.input_size);
  a.output.emit(a.output.json_mode() ? describe_json(d) : describe_text(d), out);
}

// ---- complexity -------------------------------------------------------------

struct ComplexityArgs {
  std::vector<std::string> models;
  std::vector<std::string> configs;
  std::size_t input_size = 224;
  std::string convention = "auto";
  bool per_layer = false;
  Output output;
};

FlopConvention pick_convention(const std::string& name) {
  if (name == "auto") return calibrate_convention().convention;
  for (FlopConvention c : {FlopConvention::kMacConvLinear, FlopConvention::kMacAllLayers,
                           FlopConvention::kTwoPerMac})
    if (to_string(c) == name) return c;
  throw std::invalid_argument("unknown FLOP convention '" + name + "'");
}

void cmd_complexity(const ComplexityArgs& a, std::ostream& out) {
  std::vector<ModelSpec> specs;
  for (const std::string& m : a.models) specs.push_back(resolve_model(m));
  for (const std::string& c : a.configs) specs.push_back(load_model_spec(c));
  if (specs.empty()) throw std::invalid_argument("complexity: no model given");
  const FlopConvention convention = pick_convention(a.convention);
  std::vector<ComplexityReport> reports;
  for (const ModelSpec& s : specs)
    reports.push_back(analyze(s, default_input_shape(a.input_size), convention));

  if (reports.size() == 1) {
    a.output.emit(a.output.json_mode() ? report_json(reports[0])
                                       : report_text(reports[0], a.per_layer),
                  out);
    return;
  }
  if (a.output.json_mode()) {
    json j = json::parse(comparison_json(reports));
    if (a.per_layer) {
      j["reports"] = json::array();
      for (const ComplexityReport& r : reports) j["reports"].push_back(json::parse(report_json(r)));
    }
    a.output.emit(j.dump(2), out);
    return;
  }
  std::string text = comparison_text(reports);
  if (a.per_layer)
    for (const ComplexityReport& r : reports) text += '\n' + report_text(r, true);
  a.output.emit(text, out);
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
  std::string scope;
  std::uint64_t seed = defaults::kGradcheckSeed;
  bool corrupt = false;
  Output output;
};

void cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions o;
  o.seed = a.seed;
  o.epsilon = defaults::kGradcheckEpsilon;
  o.tolerance = defaults::kGradcheckTolerance;
  o.corrupt_backward = a.corrupt;
  const GradcheckReport r = run_gradcheck(gradcheck_scope_from_string(a.scope), o);
  a.output.emit(a.output.json_mode() ? gradcheck_json(r) : gradcheck_text(r), out);
  if (!r.passed()) throw NumericFailure{"gradcheck " + a.scope + ": gradient mismatch"};
}

// ---- train-toy --------------------------------------------------------------

struct TrainArgs {
  TrainConfig cfg = defaults::toy_train_config();
  std::uint64_t data_seed = defaults::kToyDataSeed;
  std::uint64_t model_seed = defaults::kToyModelSeed;
  std::size_t samples = defaults::kToySamples;
  std::size_t classes = defaults::kToyClasses;
  std::size_t image_size = defaults::kToyImageSize;
  std::string output_dir;
  std::string save_weights;
  Output output;
};

std::string train_text(const TrainResult& r, const TrainConfig& cfg) {
  std::ostringstream os;
  os << "train-toy: " << r.steps << " steps, " << r.history.back().epoch << " epochs, lr "
     << fmt("%g", cfg.lr) << '\n'
     << "  loss      " << fmt("%.6f", r.initial_loss()) << " -> " << fmt("%.6f", r.final_loss())
     << '\n'
     << "  plain ce  " << fmt("%.6f", r.history.front().plain_loss) << " -> "
     << fmt("%.6f", r.history.back().plain_loss) << " (reduction "
     << fmt("%.1f%%", 100.0 * r.plain_loss_reduction()) << ")\n"
     << "  accuracy  " << fmt("%.4f", r.history.front().accuracy) << " -> "
     << fmt("%.4f", r.final_accuracy()) << '\n';
  if (r.no_learning()) os << "  no-learning: loss did not change\n";
  if (r.diverged) os << "  diverged: non-finite loss\n";
  return os.str();
}

void cmd_train_toy(const TrainArgs& a, std::ostream& out) {
  const ToyDataset data = make_toy_dataset(a.data_seed, a.samples, a.classes, a.image_size);
  ModelSpec spec = toy_model_spec(a.classes);
  Model model = Model::build(spec, a.model_seed);
  const TrainResult r = train(model, data, a.cfg);
  if (!a.output_dir.empty()) {
    const std::filesystem::path dir(a.output_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "history.csv", history_csv(r));
    write_file(dir / "summary.json", summary_json(r, a.cfg, spec.name) + "\n");
  }
  if (!a.save_weights.empty()) save_parameters(model, a.save_weights);
  a.output.emit(a.output.json_mode() ? summary_json(r, a.cfg, spec.name) : train_text(r, a.cfg),
                out);
  if (r.diverged) throw NumericFailure{"train-toy: loss became non-finite"};
}

// ---- ablation ---------------------------------------------------------------

struct AblationArgs {
  std::size_t input_size = 224;
  std::size_t smoke_size = 32;
  std::uint64_t seed = 0;
  Output output;
};

void cmd_ablation(const AblationArgs& a, std::ostream& out) {
  const FlopConvention convention = calibrate_convention().convention;
  json rows = json::array();
  std::ostringstream text;
  text << "group-size ablation, EPSANet-50 layout, input " << a.input_size << "x"
       << a.input_size << ", smoke forward at " << a.smoke_size << "x" << a.smoke_size << '\n';
  char line[200];
  std::snprintf(line, sizeof line, "%-16s %-9s %-22s %10s %9s  %s\n", "groups", "kernels",
                "model", "params(M)", "FLOPs(G)", "forward");
  text << line;
  bool all_finite_outputs = true;
  for (const AblationConfig& c : ablation_configs()) {
    const ModelSpec spec = ablation_model_spec(c);
    const ComplexityReport r = analyze(spec, default_input_shape(a.input_size), convention);
    bool finite = false;
    {
      Model m = Model::build(spec, a.seed);
      const Tensor x = random_uniform({1, 3, a.smoke_size, a.smoke_size}, mix_seed(a.seed, 1),
                                      -1.0, 1.0);
      finite = all_finite(m.predict(x));
    }
    all_finite_outputs = all_finite_outputs && finite;
    const std::string label = c.label + (c.is_default ? " *" : "");
    std::snprintf(line, sizeof line, "%-16s %-9s %-22s %10s %9s  %s\n", label.c_str(),
                  join(c.psa.kernels).c_str(), spec.name.c_str(),
                  format_millions(r.total_params).c_str(), format_giga(r.total_flops).c_str(),
                  finite ? "finite" : "NON-FINITE");
    text << line;
    rows.push_back({{"label", c.label},
                    {"model_name", spec.name},
                    {"kernels", c.psa.kernels},
                    {"groups", c.psa.groups},
                    {"default", c.is_default},
                    {"total_params", r.total_params},
                    {"total_flops", r.total_flops},
                    {"params_millions", format_millions(r.total_params)},
                    {"flops_giga", format_giga(r.total_flops)},
                    {"forward_finite", finite}});
  }
  text << "* default grouping\n";
  const json j{{"input_size", a.input_size},
               {"smoke_size", a.smoke_size},
               {"seed", a.seed},
               {"convention", to_string(convention)},
               {"rows", rows}};
  a.output.emit(a.output.json_mode() ? j.dump(2) : text.str(), out);
  if (!all_finite_outputs) throw NumericFailure{"ablation: non-finite forward output"};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"epsakit: pyramid squeeze attention networks, complexity and training tools",
               "epsakit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "epsakit 0.1.0");

  DescribeArgs describe_args;
  CLI::App* describe_cmd = app.add_subcommand("describe", "Stage table of a network");
  describe_cmd->add_option("model", describe_args.model, "Model name or config file");
  describe_cmd->add_option("--config", describe_args.config, "Model config JSON");
  describe_cmd->add_option("--input-size", describe_args.input_size, "Square input side")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  describe_args.output.add_to(describe_cmd);

  ComplexityArgs complexity_args;
  CLI::App* complexity_cmd =
      app.add_subcommand("complexity", "Parameter and FLOP counts, with deltas for several models");
  complexity_cmd->add_option("models", complexity_args.models, "Model names or config files");
  complexity_cmd->add_option("--config", complexity_args.configs, "Model config JSON (repeatable)");
  complexity_cmd->add_option("--input-size", complexity_args.input_size, "Square input side")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  complexity_cmd
      ->add_option("--convention", complexity_args.convention,
                   "FLOP convention; auto calibrates on the ResNet-50 anchor")
      ->check(CLI::IsMember({"auto", "mac-conv-linear", "mac-all-layers", "two-per-mac"}))
      ->capture_default_str();
  complexity_cmd->add_flag("--per-layer", complexity_args.per_layer, "Include per-layer costs");
  complexity_args.output.add_to(complexity_cmd);

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Finite-difference check of the backward passes");
  gradcheck_cmd->add_option("scope", gradcheck_args.scope, "ops, psa or block")
      ->required()
      ->check(CLI::IsMember({"ops", "psa", "block"}));
  gradcheck_cmd->add_option("--seed", gradcheck_args.seed, "Random seed")->capture_default_str();
  gradcheck_cmd->add_flag("--corrupt-backward", gradcheck_args.corrupt)->group("");
  gradcheck_args.output.add_to(gradcheck_cmd);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train-toy", "Overfit a reduced EPSANet on toy data");
  train_cmd->add_option("--lr", train_args.cfg.lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", train_args.cfg.momentum)->capture_default_str();
  train_cmd->add_option("--weight-decay", train_args.cfg.weight_decay)->capture_default_str();
  train_cmd->add_option("--label-smoothing", train_args.cfg.label_smoothing)
      ->capture_default_str();
  train_cmd->add_option("--lr-decay-every", train_args.cfg.lr_decay_every, "Epochs per decay")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_args.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--max-steps", train_args.cfg.max_steps, "Step cap, 0 for none")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.cfg.batch_size)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.cfg.seed, "Shuffle seed")->capture_default_str();
  train_cmd->add_option("--model-seed", train_args.model_seed)->capture_default_str();
  train_cmd->add_option("--data-seed", train_args.data_seed)->capture_default_str();
  train_cmd->add_option("--samples", train_args.samples)->capture_default_str();
  train_cmd->add_option("--classes", train_args.classes)->capture_default_str();
  train_cmd->add_option("--image-size", train_args.image_size)
      ->check(CLI::Range(32, 1024))
      ->capture_default_str();
  train_cmd->add_option("--output-dir", train_args.output_dir,
                        "Write history.csv and summary.json here");
  train_cmd->add_option("--save-weights", train_args.save_weights, "Save parameters (.t4)");
  train_args.output.add_to(train_cmd);

  AblationArgs ablation_args;
  CLI::App* ablation_cmd = app.add_subcommand("ablation", "Group-size ablation table");
  ablation_cmd->add_option("--input-size", ablation_args.input_size, "Input side for FLOPs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ablation_cmd->add_option("--smoke-size", ablation_args.smoke_size, "Input side for the forward")
      ->check(CLI::Range(32, 512))
      ->capture_default_str();
  ablation_cmd->add_option("--seed", ablation_args.seed)->capture_default_str();
  ablation_args.output.add_to(ablation_cmd);

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (describe_cmd->parsed()) cmd_describe(describe_args, out);
    if (complexity_cmd->parsed()) cmd_complexity(complexity_args, out);
    if (gradcheck_cmd->parsed()) cmd_gradcheck(gradcheck_args, out);
    if (train_cmd->parsed()) cmd_train_toy(train_args, out);
    if (ablation_cmd->parsed()) cmd_ablation(ablation_args, out);
  } catch (const NumericFailure& e) {
    err << "epsakit: " << e.message << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "epsakit: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}

}  // namespace epsa::cli
