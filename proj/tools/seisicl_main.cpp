// seisicl: synthetic CDP-line generation, in-context demultiple training,
// evaluation and inference behind one executable.
//
// Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 numerical
// failure (non-finite loss).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "seis/dataset.hpp"
#include "seis/errors.hpp"
#include "seis/eval.hpp"
#include "seis/model.hpp"
#include "seis/synthgen.hpp"
#include "seis/tensor_io.hpp"
#include "seis/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seis;

namespace {

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<int> parse_positions(const std::string& text) {
  std::vector<int> positions;
  std::string tok;
  std::istringstream in(text);
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad layout entry: " + tok);
    positions.push_back(v);
  }
  if (positions.empty()) throw std::invalid_argument("layout needs at least one position");
  std::sort(positions.begin(), positions.end());
  return positions;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string out;
  std::string config_path;
  std::string profile = "desk";
  int lines = -1, cdps = -1, height = -1, width = -1;
  std::int64_t seed = -1;
  bool debug_events = false;
};

int cmd_generate(const GenerateArgs& a) {
  GeneratorConfig cfg;
  if (!a.config_path.empty())
    cfg = generator_config_from_json(read_text_file(a.config_path));
  else if (a.profile == "desk")
    cfg = GeneratorConfig::desk();
  else if (a.profile == "paper")
    cfg = GeneratorConfig::paper();
  else
    throw std::invalid_argument("unknown profile: " + a.profile);

  if (a.lines >= 0) cfg.n_lines = a.lines;
  if (a.cdps >= 0) cfg.cdps_per_line = a.cdps;
  if (a.height >= 0 || a.width >= 0) {
    const int h = a.height >= 0 ? a.height : cfg.geometry.n_samples;
    const int w = a.width >= 0 ? a.width : cfg.geometry.n_traces;
    cfg.geometry = AcquisitionGeometry::regular(h, w, cfg.geometry.dt,
                                                cfg.geometry.offsets.front(), 25.0);
  }
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.debug_events = a.debug_events;
  cfg.validate();

  const fs::path out(a.out);
  build_dataset(cfg, out);
  write_text_file(out / "resolved_config.json", generator_config_to_json(cfg));

  const int train_count = static_cast<int>(std::llround(cfg.n_lines * cfg.train_fraction));
  std::printf("dataset: lines=%d cdps=%d height=%d width=%d train=%d eval=%d seed=%llu\n",
              cfg.n_lines, cfg.cdps_per_line, cfg.geometry.n_samples,
              cfg.geometry.n_traces, train_count, cfg.n_lines - train_count,
              static_cast<unsigned long long>(cfg.seed));
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out;
  std::string config_path;
  std::string arch = "contextseisnet";
  std::string preset = "tiny";
  std::string profile;
  bool no_norm = false;
  int prompts = -1, epochs = -1, batch = -1;
  double lr_max = -1, weight_decay = -1, clip = -1;
  double noise_lo = -1, noise_hi = -1, replace_fraction = -1;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config_path.empty()) cfg = train_config_from_json(read_text_file(a.config_path));
  std::string preset = a.preset;
  if (a.profile == "desk") {
    preset = "tiny";
    cfg.epochs = 10;
    cfg.batch_size = 8;
  } else if (a.profile == "paper") {
    preset = "small";
    cfg.batch_size = 64;
  } else if (!a.profile.empty()) {
    throw std::invalid_argument("unknown profile: " + a.profile);
  }
  if (a.prompts >= 0) cfg.support_size = a.prompts;
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.batch >= 0) cfg.batch_size = a.batch;
  if (a.lr_max >= 0) cfg.lr_max = a.lr_max;
  if (a.weight_decay >= 0) cfg.weight_decay = a.weight_decay;
  if (a.clip >= 0) cfg.clip_max_norm = a.clip;
  if (a.noise_lo >= 0) cfg.noise_lo = a.noise_lo;
  if (a.noise_hi >= 0) cfg.noise_hi = a.noise_hi;
  if (a.replace_fraction >= 0) cfg.replace_fraction = a.replace_fraction;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.validate();

  const Dataset dataset = Dataset::load(a.data);
  ModelSpec spec = ModelSpec::preset(preset);
  spec.use_norm = !a.no_norm;
  const Arch arch = arch_from_name(a.arch);
  Model model(arch, spec, cfg.seed);
  model.set_model_id(arch_name(arch) + "-" + preset + "-s" + std::to_string(cfg.seed));

  const TrainResult result = train(model, dataset, cfg);

  const fs::path out(a.out);
  fs::create_directories(out);
  CheckpointMeta meta;
  meta.model_id = model.model_id();
  meta.epoch = cfg.epochs;
  meta.train_config_json = train_config_to_json(cfg);
  model.save(out, meta);
  write_train_log(out / "train_log.csv", result.log);

  json resolved;
  resolved["command"] = "train";
  resolved["architecture"] = arch_name(arch);
  resolved["preset"] = preset;
  resolved["use_norm"] = spec.use_norm;
  resolved["train"] = json::parse(train_config_to_json(cfg));
  write_text_file(out / "resolved_config.json", resolved.dump(2));

  std::printf("trained %s: %d optimizer steps, loss %.6g -> %.6g\n",
              model.model_id().c_str(), result.optimizer_steps, result.initial_loss,
              result.final_loss);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string data, checkpoint, out;
  std::vector<std::string> layouts;
  std::string label_source = "ground_truth";
  std::string labels_file;
  std::string ensemble;  // comma-separated checkpoint dirs
};

PromptLayout make_layout(const std::string& positions, const std::string& source,
                         int cdps) {
  PromptLayout layout;
  layout.positions = parse_positions(positions);
  if (source == "ground_truth")
    layout.label_source = LabelSource::ground_truth;
  else if (source == "file")
    layout.label_source = LabelSource::external_file;
  else
    throw std::invalid_argument("unknown label source: " + source);
  layout.validate(cdps);
  return layout;
}

int cmd_eval(const EvalArgs& a) {
  const Dataset dataset = Dataset::load(a.data);
  const int M = dataset.info().cdps_per_line;
  if (a.layouts.empty()) throw std::invalid_argument("eval needs at least one --layout");

  Tensor external;
  const Tensor* external_ptr = nullptr;
  if (a.label_source == "file") {
    if (a.labels_file.empty())
      throw std::invalid_argument("--label-source file needs --labels-file");
    external = read_tensor(a.labels_file);
    if (!external.same_shape(dataset.labels()))
      throw std::invalid_argument("external labels must match the dataset shape");
    external_ptr = &external;
  }

  const fs::path out(a.out);
  fs::create_directories(out);

  json resolved;
  resolved["command"] = "eval";
  resolved["layouts"] = a.layouts;
  resolved["label_source"] = a.label_source;

  if (!a.ensemble.empty()) {
    std::vector<std::string> dirs;
    std::string tok;
    std::istringstream in(a.ensemble);
    while (std::getline(in, tok, ','))
      if (!tok.empty()) dirs.push_back(tok);
    if (dirs.size() < 2)
      throw std::invalid_argument("--ensemble needs at least two checkpoints");
    std::vector<std::unique_ptr<Model>> models;
    for (const std::string& d : dirs) {
      models.push_back(std::make_unique<Model>(Model::load(d)));
      if (models.back()->spec().channels != models.front()->spec().channels ||
          models.back()->arch() != models.front()->arch())
        throw std::invalid_argument("ensemble checkpoints must share one spec");
    }
    std::vector<std::unique_ptr<ModelPredictor>> predictors;
    std::vector<Predictor*> raw;
    for (auto& m : models) {
      predictors.push_back(std::make_unique<ModelPredictor>(*m));
      raw.push_back(predictors.back().get());
    }
    for (const std::string& ltext : a.layouts) {
      const PromptLayout layout = make_layout(ltext, a.label_source, M);
      const EnsembleStats stats = ensemble_variance(raw, dataset, layout, external_ptr);
      const fs::path file = out / ("ensemble_" + layout.descriptor() + ".csv");
      export_ensemble(stats, file);
      std::printf("ensemble layout %s: spearman(std, mse) = %.4f -> %s\n",
                  layout.descriptor().c_str(), stats.spearman, file.string().c_str());
    }
    resolved["ensemble"] = dirs;
    write_text_file(out / "resolved_config.json", resolved.dump(2));
    return 0;
  }

  if (a.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
  Model model = Model::load(a.checkpoint);
  ModelPredictor predictor(model);
  for (const std::string& ltext : a.layouts) {
    const PromptLayout layout = make_layout(ltext, a.label_source, M);
    const EvalReport report = eval_by_position(predictor, dataset, layout, external_ptr);
    const fs::path file = out / ("report_" + layout.descriptor() + ".csv");
    export_report(report, file);
    double mean = 0.0;
    for (const PositionStats& st : report.per_position) mean += st.psnr_mean_db;
    mean /= static_cast<double>(report.per_position.size());
    std::printf("layout %s: mean PSNR %.3f dB over %d positions -> %s\n",
                layout.descriptor().c_str(), mean,
                static_cast<int>(report.per_position.size()), file.string().c_str());
  }
  resolved["checkpoint"] = a.checkpoint;
  write_text_file(out / "resolved_config.json", resolved.dump(2));
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string checkpoint, input, out;
  std::string layout;
  std::string labels_file;
  bool identity_prompts = false;
};

int cmd_infer(const InferArgs& a) {
  Model model = Model::load(a.checkpoint);
  const Tensor gathers = read_tensor(a.input);
  if (gathers.ndim() != 3)
    throw std::invalid_argument("infer input must be a [M,H,W] tensor file");
  const int M = static_cast<int>(gathers.dim(0));
  const std::size_t H = gathers.dim(1), W = gathers.dim(2);

  std::vector<std::pair<Tensor, Tensor>> support;
  if (model.arch() == Arch::contextseisnet) {
    if (a.layout.empty()) throw std::invalid_argument("infer needs --layout");
    PromptLayout layout;
    layout.positions = parse_positions(a.layout);
    layout.validate(M);
    Tensor labels;
    if (!a.identity_prompts) {
      if (a.labels_file.empty())
        throw std::invalid_argument("infer needs --labels-file or --identity-prompts");
      labels = read_tensor(a.labels_file);
      if (!labels.same_shape(gathers))
        throw std::invalid_argument("prompt labels must match the input shape");
    }
    for (int pos : layout.positions) {
      Tensor prompt = slice2d(gathers, static_cast<std::size_t>(pos));
      Tensor label = a.identity_prompts
                         ? prompt
                         : slice2d(labels, static_cast<std::size_t>(pos));
      normalize_pair(prompt, label);
      support.emplace_back(std::move(prompt), std::move(label));
    }
  }

  ModelPredictor predictor(model);
  Tensor primaries({static_cast<std::size_t>(M), H, W});
  Tensor multiples({static_cast<std::size_t>(M), H, W});
  for (int m = 0; m < M; ++m) {
    Tensor x = slice2d(gathers, static_cast<std::size_t>(m));
    Tensor dummy = Tensor::zeros(x.shape());
    const auto [mu, sigma] = normalize_pair(x, dummy);
    Tensor pred = predictor.predict_normalized(x, support);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double denorm = pred[i] * sigma + mu;
      const double raw = gathers[static_cast<std::size_t>(m) * H * W + i];
      primaries[static_cast<std::size_t>(m) * H * W + i] = denorm;
      multiples[static_cast<std::size_t>(m) * H * W + i] = raw - denorm;
    }
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  write_tensor(out / "primaries.bin", primaries);
  write_tensor(out / "multiples.bin", multiples);

  json resolved;
  resolved["command"] = "infer";
  resolved["checkpoint"] = a.checkpoint;
  resolved["input"] = a.input;
  resolved["layout"] = a.layout;
  resolved["identity_prompts"] = a.identity_prompts;
  write_text_file(out / "resolved_config.json", resolved.dump(2));

  std::printf("inference over %d gathers -> %s\n", M, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

int cmd_inspect(const std::string& path_text) {
  const fs::path path(path_text);
  if (fs::is_directory(path)) {
    if (fs::exists(path / "manifest.json")) {
      const json manifest = json::parse(read_text_file(path / "manifest.json"));
      if (manifest.value("kind", "") != "seisicl-dataset")
        throw std::invalid_argument("unrecognized manifest in " + path_text);
      std::printf("dataset %s\n", path_text.c_str());
      std::printf("  lines=%d cdps=%d height=%d width=%d\n",
                  manifest.at("n_lines").get<int>(),
                  manifest.at("cdps_per_line").get<int>(),
                  manifest.at("height").get<int>(), manifest.at("width").get<int>());
      std::printf("  split: train=%d eval=%d  seed=%llu\n",
                  manifest.at("train_count").get<int>(),
                  manifest.at("eval_count").get<int>(),
                  static_cast<unsigned long long>(
                      manifest.at("master_seed").get<std::uint64_t>()));
      return 0;
    }
    if (fs::exists(path / "checkpoint.json")) {
      const json ck = json::parse(read_text_file(path / "checkpoint.json"));
      if (ck.value("kind", "") != "seisicl-checkpoint")
        throw std::invalid_argument("unrecognized checkpoint in " + path_text);
      ModelSpec spec;
      spec.levels = ck.at("spec").at("levels").get<int>();
      spec.channels = ck.at("spec").at("channels").get<std::vector<int>>();
      spec.kernel_size = ck.at("spec").at("kernel_size").get<int>();
      spec.size_preset = ck.at("spec").at("size_preset").get<std::string>();
      spec.leaky_slope = ck.at("spec").at("leaky_slope").get<double>();
      spec.use_norm = ck.at("spec").at("use_norm").get<bool>();
      const Arch arch = arch_from_name(ck.at("architecture").get<std::string>());
      const std::size_t counted = param_count(spec, arch);
      const std::size_t stored = ck.at("param_count").get<std::size_t>();
      std::printf("checkpoint %s\n", path_text.c_str());
      std::printf("  model_id=%s architecture=%s preset=%s epoch=%d\n",
                  ck.value("model_id", "?").c_str(),
                  ck.at("architecture").get<std::string>().c_str(),
                  spec.size_preset.c_str(), ck.value("epoch", 0));
      std::printf("  levels=%d channels=", spec.levels);
      for (std::size_t i = 0; i < spec.channels.size(); ++i)
        std::printf(i ? ",%d" : "%d", spec.channels[i]);
      std::printf(" use_norm=%d\n", spec.use_norm ? 1 : 0);
      std::printf("  param_count=%zu (recomputed %zu)\n", stored, counted);
      if (stored != counted)
        throw std::invalid_argument("stored parameter count disagrees with the spec");
      return 0;
    }
    throw std::invalid_argument("directory is neither a dataset nor a checkpoint: " +
                                path_text);
  }
  // plain tensor file
  const TensorInfo info = read_tensor_info(path);
  std::printf("tensor %s\n", path_text.c_str());
  std::printf("  dtype=%s shape=%s\n", info.dtype == Dtype::f64 ? "f64" : "f32",
              shape_str(info.shape).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seisicl: in-context seismic demultiple at desk scale"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* g = app.add_subcommand("generate", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--config", gen.config_path, "Generator config JSON (overrides profile)");
  g->add_option("--profile", gen.profile, "desk (default) or paper");
  g->add_option("--lines", gen.lines, "Number of seismic lines");
  g->add_option("--cdps", gen.cdps, "CDPs per line");
  g->add_option("--height", gen.height, "Time samples per gather");
  g->add_option("--width", gen.width, "Traces per gather");
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_flag("--debug-events", gen.debug_events, "Echo event records into the manifest");

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train a model");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Checkpoint output directory")->required();
  t->add_option("--config", tr.config_path, "Train config JSON");
  t->add_option("--arch", tr.arch, "contextseisnet (default) or unet");
  t->add_option("--preset", tr.preset, "tiny|small|medium|large");
  t->add_option("--profile", tr.profile, "desk or paper (sets preset/epochs/batch)");
  t->add_flag("--no-norm", tr.no_norm, "Drop the normalization layers");
  t->add_option("--prompts", tr.prompts, "Support set size S");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--lr-max", tr.lr_max, "Peak learning rate");
  t->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
  t->add_option("--clip", tr.clip, "Gradient clipping max norm");
  t->add_option("--noise-lo", tr.noise_lo, "Noise std range low (fraction of gather std)");
  t->add_option("--noise-hi", tr.noise_hi, "Noise std range high");
  t->add_option("--replace-fraction", tr.replace_fraction,
                "Identity replacement fraction");
  t->add_option("--seed", tr.seed, "Training + init seed");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Evaluate checkpoints by CDP position");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
  e->add_option("--out", ev.out, "Report output directory")->required();
  e->add_option("--layout", ev.layouts, "Prompt positions, e.g. 0,10,20 (repeatable)");
  e->add_option("--label-source", ev.label_source, "ground_truth (default) or file");
  e->add_option("--labels-file", ev.labels_file, "External prompt labels tensor");
  e->add_option("--ensemble", ev.ensemble, "Comma-separated checkpoint dirs (K >= 2)");

  InferArgs inf;
  CLI::App* i = app.add_subcommand("infer", "Run inference on a gathers tensor file");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint directory")->required();
  i->add_option("--input", inf.input, "Input gathers tensor file [M,H,W]")->required();
  i->add_option("--out", inf.out, "Output directory")->required();
  i->add_option("--layout", inf.layout, "Prompt positions, e.g. 0,10,20");
  i->add_option("--labels-file", inf.labels_file, "Prompt labels tensor file [M,H,W]");
  i->add_flag("--identity-prompts", inf.identity_prompts,
              "Use the prompts themselves as prompt labels");

  std::string inspect_path;
  CLI::App* s = app.add_subcommand("inspect", "Describe a dataset, checkpoint or tensor");
  s->add_option("path", inspect_path, "Path to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (i->parsed()) return cmd_infer(inf);
    if (s->parsed()) return cmd_inspect(inspect_path);
  } catch (const NumericalError& ex) {
    std::fprintf(stderr, "numerical failure: %s\n", ex.what());
    return 4;
  } catch (const IoError& ex) {
    std::fprintf(stderr, "io error: %s\n", ex.what());
    return 3;
  } catch (const json::exception& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const std::invalid_argument& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 3;
  }
  return 0;
}
