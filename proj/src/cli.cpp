#include "attngan/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attngan/data.hpp"
#include "attngan/gradcheck.hpp"
#include "attngan/metrics.hpp"
#include "attngan/parallel.hpp"
#include "attngan/trainer.hpp"
#include "json.hpp"

namespace attngan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// printf-style line on std::cout, flushed so progress shows up live.
template <typename... Args>
void say(const char* format, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  std::cout << buf << std::flush;
}

constexpr const char* kDefaultOps = "rot90,flip_h,flip_v";

struct SynthArgs {
  std::string out;
  std::int64_t count = 64;
  std::int64_t size = 64;
  std::uint64_t seed = 42;
  double cloud_threshold = SynthOptions{}.cloud_threshold;
  double cloud_softness = SynthOptions{}.cloud_softness;
  double cloud_opacity = SynthOptions{}.cloud_opacity;
};

struct AugmentArgs {
  std::string data;
  std::string out;
  std::string ops = kDefaultOps;
  std::int64_t size = 64;
  std::uint64_t seed = 42;
};

struct TrainArgs {
  std::string data;
  std::string out = "run";
  std::int64_t epochs = 30;
  std::int64_t batch = 1;
  double lr = 2e-4;
  std::int64_t masks = 2;
  std::int64_t size = 64;
  std::uint64_t seed = 42;
  double lambda_cyc = 10.0;
  double lambda_pix = 1.0;
  double lambda_adv = 1.0;
  double lambda_att_adv = 1.0;
  std::optional<std::int64_t> decay_start;
  std::int64_t residual_blocks = 4;
  std::int64_t base_channels = 16;
  std::int64_t disc_layers = 4;
  std::string mask_combine = "concat";
};

struct InferArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  std::string dump_masks;
};

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string report = "report.json";
  std::string split = "test";
  std::uint64_t seed = 42;
};

struct GradcheckArgs {
  std::string op = "all";
  int trials = kGradcheckTrials;
  std::uint64_t seed = 42;
};

// Flat JSON config → "--key value" tokens, placed before the command-line
// flags so that TakeLast lets explicit flags win.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path);
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("config file " + path + " must hold a flat JSON object");
  }
  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    for (auto& ch : flag) {
      if (ch == '_') {
        ch = '-';
      }
    }
    if (value.is_object() || value.is_array() || value.is_null()) {
      throw ConfigError("config key '" + key + "' must be a scalar");
    }
    tokens.push_back(flag);
    tokens.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
  return tokens;
}

std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::optional<std::string> config;
  std::size_t sub_at = 0;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (sub_at == 0 && !args[i].empty() && args[i][0] != '-') {
      sub_at = i;
    }
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    }
  }
  if (!config || sub_at == 0) {
    return args;
  }
  const auto tokens = config_tokens(*config);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_at) + 1, tokens.begin(), tokens.end());
  return args;
}

void echo_config(const CLI::App& sub) {
  json effective = json::object();
  for (const auto* opt : sub.get_options()) {
    const auto& name = opt->get_single_name();
    if (name == "help" || name == "config" || name.empty()) {
      continue;
    }
    if (opt->count() > 0) {
      const auto results = opt->reduced_results();
      effective[name] = results.empty() ? "" : results.back();
    } else {
      effective[name] = opt->get_default_str();
    }
  }
  std::cerr << sub.get_name() << " config: " << effective.dump() << '\n';
}

void add_config_flag(CLI::App& sub) {
  sub.add_option("--config", "JSON file of flat flag values; explicit flags override it");
}

int run_synth(const SynthArgs& a) {
  SynthOptions opts;
  opts.count = a.count;
  opts.image_size = a.size;
  opts.seed = a.seed;
  opts.cloud_threshold = a.cloud_threshold;
  opts.cloud_softness = a.cloud_softness;
  opts.cloud_opacity = a.cloud_opacity;
  const auto manifest = synth_dataset(opts, a.out);
  std::cout << "wrote " << manifest.ids.size() << " scenes to " << a.out << " (" << manifest.train.size()
            << " train, " << manifest.test.size() << " test)\n";
  return kOk;
}

void ensure_split(DatasetManifest& manifest, std::uint64_t seed) {
  if (manifest.train.empty() && manifest.test.empty()) {
    manifest = split(manifest, default_train_count(static_cast<std::int64_t>(manifest.ids.size())), seed);
  }
}

int run_augment(const AugmentArgs& a) {
  const auto ops = parse_augment_list(a.ops);
  if (ops.empty()) {
    throw ConfigError("--ops lists no augmentations");
  }
  auto dataset = load_dataset(a.data, a.size);
  ensure_split(dataset.manifest, a.seed);
  const auto train_pairs = dataset.select(dataset.manifest.train);
  const auto test_pairs = dataset.select(dataset.manifest.test);
  auto result = augment(train_pairs, ops, a.seed);

  DatasetManifest manifest;
  manifest.seed = a.seed;
  manifest.provenance = dataset.manifest.provenance;
  manifest.provenance.update(result.provenance);
  for (const auto& p : result.pairs) {
    manifest.train.push_back(p.id);
  }
  for (const auto& p : test_pairs) {
    manifest.test.push_back(p.id);
  }
  auto all = std::move(result.pairs);
  all.insert(all.end(), test_pairs.begin(), test_pairs.end());
  write_dataset(a.out, all, manifest);
  std::cout << "augmented " << train_pairs.size() << " train pairs to " << manifest.train.size() << " ("
            << manifest.test.size() << " test pairs copied) in " << a.out << '\n';
  return kOk;
}

int run_train(const TrainArgs& a) {
  TrainConfig config;
  config.epochs = a.epochs;
  config.batch_size = a.batch;
  config.lr = a.lr;
  config.decay_start = a.decay_start;
  config.seed = a.seed;
  config.weights = {a.lambda_adv, a.lambda_att_adv, a.lambda_cyc, a.lambda_pix};
  config.model.image_size = a.size;
  config.model.n_masks = a.masks;
  config.model.residual_blocks = a.residual_blocks;
  config.model.base_channels = a.base_channels;
  config.model.discriminator_layers = a.disc_layers;
  if (a.mask_combine == "concat") {
    config.model.mask_combine = MaskCombine::concat;
  } else if (a.mask_combine == "multiply") {
    config.model.mask_combine = MaskCombine::multiply;
  } else {
    throw ConfigError("--mask-combine must be concat or multiply");
  }
  auto state = TrainState::create(config);

  auto dataset = load_dataset(a.data, a.size);
  ensure_split(dataset.manifest, a.seed);
  const auto pairs = dataset.select(dataset.manifest.train);
  TrainHooks hooks;
  hooks.on_epoch = [](const TrainState& s) {
    const auto& m = s.metrics.back();
    const auto& means = m.at("mean_losses");
    say("epoch %lld/%lld lr=%.3g g_total=%.5f d_total=%.5f\n", static_cast<long long>(s.epoch),
                static_cast<long long>(s.config.epochs), m.at("lr").get<double>(),
                means.value("g_total", 0.0), means.value("d_total", 0.0));
  };
  train(state, pairs, a.out, hooks);
  std::cout << "trained " << state.step << " steps on " << pairs.size() << " pairs; final checkpoint "
            << (fs::path(a.out) / kFinalCheckpoint).string() << '\n';
  return kOk;
}

int run_infer(const InferArgs& a) {
  const auto state = load_checkpoint(a.ckpt);
  const auto size = state.config.model.image_size;
  const auto image = resize_area(read_png_rgb(a.in), size, size);
  const auto out = translate(*state.model, image_to_tensor(image));
  write_png(a.out, tensor_to_image(out.fused));
  if (!a.dump_masks.empty()) {
    std::error_code ec;
    fs::create_directories(a.dump_masks, ec);
    if (ec) {
      throw IoError("cannot create " + a.dump_masks + ": " + ec.message());
    }
    const auto n = out.attention.dim(1);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto mask = slice_channels(out.attention, i, 1);
      write_png(fs::path(a.dump_masks) / ("mask_" + std::to_string(i) + ".png"), unit_to_gray(mask));
    }
  }
  std::cout << "wrote " << a.out << '\n';
  return kOk;
}

int run_eval(const EvalArgs& a) {
  const auto state = load_checkpoint(a.ckpt);
  auto dataset = load_dataset(a.data, state.config.model.image_size);
  ensure_split(dataset.manifest, a.seed);
  std::vector<std::string> ids;
  if (a.split == "test") {
    ids = dataset.manifest.test;
  } else if (a.split == "train") {
    ids = dataset.manifest.train;
  } else if (a.split == "all") {
    ids = dataset.manifest.ids;
  } else {
    throw ConfigError("--split must be test, train or all");
  }
  const auto pairs = dataset.select(ids);
  const auto eval = evaluate(*state.model, pairs, config_hash(json(state.config)));
  const fs::path report_path = a.report;
  if (report_path.has_parent_path()) {
    fs::create_directories(report_path.parent_path());
  }
  std::ofstream out(report_path);
  if (!out) {
    throw IoError("cannot write " + report_path.string());
  }
  out << eval.report.to_json().dump(2) << '\n';
  write_png(report_path.parent_path() / "grid.png", eval.grid);
  const auto& s = eval.report.summary;
  const auto& b = eval.report.baseline_summary;
  say("%lld pairs  psnr %.3f dB (baseline %.3f)  ssim %.4f (baseline %.4f)\n",
              static_cast<long long>(s.count), s.psnr_mean, b.psnr_mean, s.ssim_mean, b.ssim_mean);
  return kOk;
}

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<std::string> names;
  if (a.op == "all") {
    names = gradcheck_names();
  } else {
    names.push_back(a.op);
  }
  bool ok = true;
  for (const auto& name : names) {
    const auto r = gradcheck(name, a.trials, a.seed);
    say("%s %-28s max_rel_err=%.3e trials=%d redrawn=%d %.2fs\n", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.trials, r.redrawn, r.seconds);
    ok = ok && r.passed;
  }
  if (!ok) {
    throw NumericError("gradient check failed");
  }
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Attention-guided cycle GAN for cloud removal"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cloudy/clean dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--count", synth.count, "Number of scenes");
  s->add_option("--size", synth.size, "Image side in pixels");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--cloud-threshold", synth.cloud_threshold, "Cloud density where cover begins");
  s->add_option("--cloud-softness", synth.cloud_softness, "Width of the cloud edge ramp");
  s->add_option("--cloud-opacity", synth.cloud_opacity, "Alpha of full cloud cover");
  add_config_flag(*s);

  AugmentArgs aug;
  auto* g = app.add_subcommand("augment", "Materialize augmented training pairs");
  g->add_option("--data", aug.data, "Input dataset directory")->required();
  g->add_option("--out", aug.out, "Output dataset directory")->required();
  g->add_option("--ops", aug.ops, "Comma-separated augmentations (rot90,rot180,rot270,flip_h,flip_v,crop,bg_color)");
  g->add_option("--size", aug.size, "Image side in pixels");
  g->add_option("--seed", aug.seed, "Random seed");
  add_config_flag(*g);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the model");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory for checkpoints and the log");
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--batch", tr.batch, "Batch size");
  t->add_option("--lr", tr.lr, "Initial learning rate");
  t->add_option("--masks", tr.masks, "Attention masks (foreground masks + 1 background)");
  t->add_option("--size", tr.size, "Image side in pixels");
  t->add_option("--seed", tr.seed, "Random seed");
  t->add_option("--lambda-cyc", tr.lambda_cyc, "Cycle-consistency weight");
  t->add_option("--lambda-pix", tr.lambda_pix, "Paired pixel loss weight (0 for unpaired training)");
  t->add_option("--lambda-adv", tr.lambda_adv, "Adversarial weight");
  t->add_option("--lambda-att-adv", tr.lambda_att_adv, "Attention-guided adversarial weight");
  t->add_option("--decay-start", tr.decay_start, "Epoch where linear LR decay begins (default epochs/2)");
  t->add_option("--residual-blocks", tr.residual_blocks, "Residual blocks per generator");
  t->add_option("--base-channels", tr.base_channels, "Base channel width");
  t->add_option("--disc-layers", tr.disc_layers, "Discriminator layers");
  t->add_option("--mask-combine", tr.mask_combine, "How attended discriminators see the mask (concat|multiply)");
  add_config_flag(*t);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Remove clouds from one image");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint file")->required();
  i->add_option("--in", inf.in, "Input PNG")->required();
  i->add_option("--out", inf.out, "Output PNG")->required();
  i->add_option("--dump-masks", inf.dump_masks, "Directory for attention mask PNGs");
  add_config_flag(*i);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--report", ev.report, "Report JSON path; grid.png is written beside it");
  e->add_option("--split", ev.split, "Split to evaluate (test|train|all)");
  e->add_option("--seed", ev.seed, "Seed for splitting a dataset without a stored split");
  add_config_flag(*e);

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c->add_option("op", gc.op, "Check name or 'all'");
  c->add_option("--trials", gc.trials, "Random points per check");
  c->add_option("--seed", gc.seed, "Random seed");
  add_config_flag(*c);

  try {
    configure_threads_from_env();
    const auto args = expand_config(argc, argv);
    std::vector<char*> ptrs;
    for (const auto& arg : args) {
      ptrs.push_back(const_cast<char*>(arg.c_str()));
    }
    try {
      app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError& err) {
      const int code = app.exit(err);
      return code == 0 ? kOk : kValidation;
    }
    for (auto* sub : app.get_subcommands()) {
      echo_config(*sub);
    }
    if (s->parsed()) return run_synth(synth);
    if (g->parsed()) return run_augment(aug);
    if (t->parsed()) return run_train(tr);
    if (i->parsed()) return run_infer(inf);
    if (e->parsed()) return run_eval(ev);
    if (c->parsed()) return run_gradcheck(gc);
    return kValidation;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kValidation;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRuntime;
  }
}

}  // namespace attngan::cli
