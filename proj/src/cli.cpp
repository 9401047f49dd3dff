#include "sucode/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sucode/ablation.hpp"
#include "sucode/checkpoint.hpp"
#include "sucode/config.hpp"
#include "sucode/errors.hpp"
#include "sucode/log.hpp"
#include "sucode/metrics.hpp"
#include "sucode/quantizer.hpp"
#include "sucode/synth.hpp"
#include "sucode/trainer.hpp"

namespace fs = std::filesystem;

namespace sucode {

namespace {

// Flags common to every verb; verbs read only the ones they use.
struct Shared {
  std::string config, out, ckpt, init_from;
  std::optional<std::uint64_t> seed;
};

void add_shared(CLI::App* app, Shared& s) {
  app->add_option("--config", s.config, "YAML run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", s.seed, "override the configured seed");
  app->add_option("--out", s.out, "output path");
  app->add_option("--ckpt", s.ckpt, "checkpoint directory");
  app->add_option("--init-from", s.init_from, "predecessor (or same-stage) checkpoint or run directory");
}

RunConfig load_config(const Shared& s) {
  RunConfig cfg = s.config.empty() ? RunConfig{} : parse_config(s.config);
  if (s.seed) cfg.seed = *s.seed;
  cfg.validate();
  return cfg;
}

fs::path checkpoint_dir(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p / "checkpoint")) p /= "checkpoint";
  return p;
}

void require_flag(const std::string& value, const char* name) {
  if (value.empty()) throw CLI::RequiredError(name);
}

bool is_png(const fs::path& p) { return p.extension() == ".png"; }

void cmd_inspect(const CheckpointBundle& ckpt, const std::optional<fs::path>& data, const fs::path& out,
                 std::ostream& os) {
  const bool has_dec_q = !ckpt.names_with_prefix("dec_q/").empty();
  auto model = model_from_checkpoint(ckpt, {"codebook", has_dec_q ? "dec_q" : "dec_r"});
  auto& m = *model;
  const auto classes = m.books.classes(), entries = m.books.entries();
  fs::create_directories(out);

  std::optional<UsageStats> usage;
  if (data) {
    model = nullptr;
    model = model_from_checkpoint(ckpt, {"codebook", "enc_q", has_dec_q ? "dec_q" : "dec_r"});
    const Dataset ds(*data, model->cfg, LoadMode::Test, true, false);
    std::vector<QuantizationResult> results;
    torch::NoGradGuard ng;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto b = ds.batch({i}, 0);
      results.push_back(quantize_with_mask(model->enc_q(b.raw),
                                           downsample_mask_batch(b.mask, model->cfg.downsample_factor), model->books));
    }
    usage = usage_stats(results, classes, entries);
    std::ostringstream csv;
    csv << "class,entry,count\n";
    const auto* c = usage->counts.data_ptr<std::int64_t>();
    for (std::int64_t k = 0; k < classes; ++k)
      for (std::int64_t j = 0; j < entries; ++j) csv << k << ',' << j << ',' << c[k * entries + j] << '\n';
    write_file_atomic(out / "usage.csv", csv.str());
    std::ostringstream px;
    px << "class,perplexity\n";
    for (std::int64_t k = 0; k < classes; ++k) px << k << ',' << usage->perplexity_per_class[k] << '\n';
    write_file_atomic(out / "perplexity.csv", px.str());
    os << px.str();
  }

  // Decode each of the (most used) 16 codes of a class as a constant 4x4 latent.
  auto& mm = *model;
  torch::NoGradGuard ng;
  constexpr int kTiles = 4, kLatent = 4;
  const int tile = kLatent * mm.cfg.downsample_factor;
  for (std::int64_t k = 0; k < classes; ++k) {
    std::vector<std::int64_t> order(entries);
    for (std::int64_t j = 0; j < entries; ++j) order[j] = j;
    if (usage) {
      const auto* c = usage->counts.data_ptr<std::int64_t>() + k * entries;
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return c[a] > c[b]; });
    }
    auto grid = torch::ones({kTiles * tile, kTiles * tile, 3});
    for (int t = 0; t < std::min<std::int64_t>(kTiles * kTiles, entries); ++t) {
      auto code = mm.books.books[k][order[t]].view({1, -1, 1, 1}).expand({1, mm.books.dim(), kLatent, kLatent});
      auto img = (has_dec_q ? mm.dec_q(code) : mm.dec_r(code)).clamp(0.0, 1.0)[0].permute({1, 2, 0});
      grid.narrow(0, (t / kTiles) * tile, tile).narrow(1, (t % kTiles) * tile, tile).copy_(img);
    }
    write_image(out / ("codes_class" + std::to_string(k) + ".png"), ImageTensor(grid));
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  log::configure_from_env();
  CLI::App app{"Semantic-aware codebook underwater image enhancement"};
  app.require_subcommand(1);
  Shared sh;

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic (raw, mask, ref) dataset");
  add_shared(synth, sh);
  int count = 0;
  SceneSpec scene;
  DegradationParams deg;
  synth->add_option("--count", count, "number of triplets")->required()->check(CLI::NonNegativeNumber);
  synth->add_option("--size", scene.canvas_size, "image side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--objects", scene.object_count, "foreground objects per scene")->check(CLI::NonNegativeNumber);
  synth->add_option("--classes", scene.class_count, "label range")->check(CLI::Range(1, 8));
  synth->add_option("--texture-scale", scene.texture_scale, "object texture feature size multiplier")
      ->check(CLI::PositiveNumber);
  synth->add_option("--depth-min", deg.depth_min, "nearest depth in meters");
  synth->add_option("--depth-max", deg.depth_max, "farthest depth in meters");
  synth->add_option("--blur", deg.blur_sigma, "blur sigma in pixels");
  synth->add_option("--noise", deg.noise_sigma, "noise sigma");

  // train
  auto* train = app.add_subcommand("train", "train one stage");
  add_shared(train, sh);
  int stage = 1;
  std::string data;
  std::optional<std::int64_t> steps;
  std::optional<int> epochs;
  train->add_option("--stage", stage, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  train->add_option("--data", data, "dataset root with raw/, mask/, ref/")->required()->check(CLI::ExistingDirectory);
  train->add_option("--steps", steps, "stop after this many steps")->check(CLI::PositiveNumber);
  train->add_option("--epochs", epochs, "override the configured epochs")->check(CLI::PositiveNumber);

  // enhance
  auto* enh = app.add_subcommand("enhance", "enhance one image or a directory of PNGs");
  add_shared(enh, sh);
  std::string input;
  enh->add_option("--input", input, "PNG file or directory")->required()->check(CLI::ExistingPath);

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions (PSNR/SSIM with --ref, UCIQE/UIQM always)");
  add_shared(ev, sh);
  std::string pred, ref;
  bool json = false;
  ev->add_option("--pred", pred, "directory of predicted PNGs")->required();
  ev->add_option("--ref", ref, "directory of same-named references")->check(CLI::ExistingDirectory);
  ev->add_flag("--json", json, "emit JSON instead of CSV");

  // ablate
  auto* abl = app.add_subcommand("ablate", "ablation sweeps");
  abl->require_subcommand(1);
  std::string train_root, test_root;
  std::vector<std::string> grid, ranges;
  std::vector<int> targets{8, 6, 4};
  auto add_ablate_common = [&](CLI::App* a) {
    add_shared(a, sh);
    a->add_option("--train", train_root, "training split")->required()->check(CLI::ExistingDirectory);
    a->add_option("--test", test_root, "test split with ref/")->required()->check(CLI::ExistingDirectory);
    a->add_option("--steps", steps, "steps per stage")->check(CLI::PositiveNumber);
    a->add_option("--epochs", epochs, "epochs per stage")->check(CLI::PositiveNumber);
    a->add_flag("--json", json, "emit JSON instead of CSV");
  };
  auto* abl_cb = abl->add_subcommand("codebook-size", "sweep entries x width");
  add_ablate_common(abl_cb);
  abl_cb->add_option("--grid", grid, "NxD pairs, e.g. 128x128 256x256")->required();
  auto* abl_mask = abl->add_subcommand("mask", "erode/dilate training masks");
  add_ablate_common(abl_mask);
  abl_mask->add_option("--ranges", ranges, "pixel ranges, e.g. 0 1-5 6-10")->required();
  auto* abl_cls = abl->add_subcommand("classes", "merge categories");
  add_ablate_common(abl_cls);
  abl_cls->add_option("--targets", targets, "class counts among 8, 6, 4")->check(CLI::IsMember({8, 6, 4}));

  // inspect
  auto* ins = app.add_subcommand("inspect", "codebook usage statistics and decoded code grids");
  add_shared(ins, sh);
  std::string ins_data;
  ins->add_option("--data", ins_data, "dataset with masks for usage counts")->check(CLI::ExistingDirectory);

  std::vector<std::string> argv_store{"sucode"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (synth->parsed()) require_flag(sh.out, "--out");
    if (train->parsed()) require_flag(sh.out, "--out");
    if (enh->parsed()) {
      require_flag(sh.ckpt, "--ckpt");
      require_flag(sh.out, "--out");
    }
    if (abl->parsed()) require_flag(sh.out, "--out");
    if (ins->parsed()) {
      require_flag(sh.ckpt, "--ckpt");
      require_flag(sh.out, "--out");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      if (!sh.config.empty()) {
        const auto cfg = parse_config(sh.config);
        if (synth->count("--size") == 0) scene.canvas_size = cfg.image_size;
        if (synth->count("--classes") == 0) scene.class_count = cfg.class_count;
        if (!sh.seed) scene.seed = cfg.seed;
      }
      if (sh.seed) scene.seed = *sh.seed;
      deg.validate();
      const auto rows = build_dataset(count, scene, deg, sh.out);
      out << rows.size() << " triplets written to " << sh.out << "\n";
    } else if (train->parsed()) {
      auto cfg = load_config(sh);
      if (steps) cfg.max_steps = *steps;
      if (epochs) cfg.epochs = *epochs;
      std::optional<fs::path> init;
      if (!sh.init_from.empty()) init = sh.init_from;
      run_stage(stage, cfg, data, init, sh.out);
      out << "stage " << stage << " checkpoint: " << (fs::path(sh.out) / "checkpoint").string() << "\n";
    } else if (enh->parsed()) {
      Enhancer e(load_checkpoint(checkpoint_dir(sh.ckpt)));
      if (fs::is_directory(input)) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(input))
          if (is_png(f.path())) files.push_back(f.path());
        std::sort(files.begin(), files.end());
        fs::create_directories(sh.out);
        for (const auto& f : files) write_image(fs::path(sh.out) / f.filename(), e.enhance(read_image(f)));
        out << files.size() << " images enhanced into " << sh.out << "\n";
      } else {
        write_image(sh.out, e.enhance(read_image(input)));
      }
    } else if (ev->parsed()) {
      std::optional<fs::path> r;
      if (!ref.empty()) r = ref;
      const auto rep = evaluate_dataset(pred, r);
      const auto text = json ? rep.to_json() : rep.to_csv();
      if (sh.out.empty()) out << text;
      else write_file_atomic(sh.out, text);
    } else if (abl->parsed()) {
      auto cfg = load_config(sh);
      if (steps) cfg.max_steps = *steps;
      if (epochs) cfg.epochs = *epochs;
      const AblationSetup setup{cfg, train_root, test_root, sh.out};
      AblationTable table;
      if (abl_cb->parsed()) {
        std::vector<std::pair<int, int>> pairs;
        for (const auto& g : grid) {
          const auto x = g.find('x');
          try {
            if (x == std::string::npos) throw std::invalid_argument(g);
            pairs.emplace_back(std::stoi(g.substr(0, x)), std::stoi(g.substr(x + 1)));
          } catch (const std::logic_error&) {
            throw ConfigInvalid("codebook grid entries look like 256x256, got '" + g + "'");
          }
        }
        table = ablate_codebook_size(setup, pairs);
      } else if (abl_mask->parsed()) {
        std::vector<std::pair<int, int>> parsed;
        for (const auto& s : ranges) parsed.push_back(parse_pixel_range(s));
        table = ablate_mask(setup, parsed);
      } else {
        table = ablate_classes(setup, targets);
      }
      const auto text = json ? table.to_json() : table.to_csv();
      write_file_atomic(fs::path(sh.out) / (json ? "ablation.json" : "ablation.csv"), text);
      out << text;
    } else if (ins->parsed()) {
      std::optional<fs::path> d;
      if (!ins_data.empty()) d = ins_data;
      cmd_inspect(load_checkpoint(checkpoint_dir(sh.ckpt)), d, sh.out, out);
    }
  } catch (const Error& e) {
    err << e.name() << ": " << e.what() << "\n";
    return 1;
  } catch (const c10::Error& e) {
    err << "TensorError: " << e.what_without_backtrace() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace sucode
