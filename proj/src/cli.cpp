#include "raven/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>

#include "raven/checkpoint.hpp"
#include "raven/dataset.hpp"
#include "raven/renderer.hpp"
#include "raven/trainer.hpp"

namespace raven {

namespace fs = std::filesystem;

namespace {

nlohmann::json space_arg(const std::string& preset_or_path) {
  const auto& presets = preset_names();
  if (std::find(presets.begin(), presets.end(), preset_or_path) != presets.end())
    return {{"preset", preset_or_path}};
  return space_to_json(load_space(preset_or_path));
}

// warm start, checkpoint, joint training, checkpoint; logs to out_dir/log.jsonl.
nlohmann::json run_training(const TrainConfig& config, const fs::path& out_dir, std::ostream& out) {
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "log.jsonl");
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "log.jsonl").string());
  const auto sink = [&](const StepLog& s) { log << to_json(s).dump() << '\n' << std::flush; };
  const auto t0 = std::chrono::steady_clock::now();
  Model model = make_model(config);
  warm_start(model, sink);
  save_checkpoint(out_dir / "warm_start.ckpt", to_checkpoint(model));
  train_joint(model, sink);
  save_checkpoint(out_dir / "final.ckpt", to_checkpoint(model));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json summary{{"seed", config.seed},
                         {"gamma", config.gamma},
                         {"warm_start_steps", model.warm_steps_done},
                         {"joint_steps", model.joint_steps_done},
                         {"seconds", secs},
                         {"checkpoint", (out_dir / "final.ckpt").string()}};
  out << summary.dump() << '\n';
  return summary;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Raven's progressive matrices lab: puzzle generation, training and evaluation", "raven"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "write a puzzle dataset");
  std::string gen_space, gen_out, gen_view = "full";
  std::size_t gen_count = 0, gen_rules = 1;
  std::uint64_t gen_seed = 0;
  bool gen_render = false;
  int gen_size = 64;
  gen->add_option("--space", gen_space, "preset name or space JSON path")->required();
  gen->add_option("--count", gen_count, "number of puzzles")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "master seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--rules", gen_rules, "rule count l")->check(CLI::PositiveNumber);
  gen->add_option("--view", gen_view, "full | public")->check(CLI::IsMember({"full", "public"}));
  gen->add_flag("--render", gen_render, "also write PPM panels");
  gen->add_option("--size", gen_size, "panel size for --render")->check(CLI::IsMember({16, 32, 64}));

  // train
  auto* train = app.add_subcommand("train", "warm start + joint training");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--seed", train_seed, "override the config seed");

  // eval
  auto* eval = app.add_subcommand("eval", "reasoning accuracy on fresh puzzles");
  std::string eval_ckpt, eval_dump;
  std::size_t eval_n = 1000;
  std::uint64_t eval_seed = 1000;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--puzzles", eval_n, "number of puzzles")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "puzzle seed");
  eval->add_option("--dump-inference", eval_dump, "write per-puzzle {delta_kl, o_kn, o} JSON lines here");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "disentanglement metrics of a checkpoint's encoder");
  std::string metrics_ckpt, metrics_format = "both";
  std::size_t metrics_probe = 10000;
  std::uint64_t metrics_seed = 0;
  metrics->add_option("--checkpoint", metrics_ckpt, "checkpoint path")->required();
  metrics->add_option("--probe", metrics_probe, "probe set size")->check(CLI::PositiveNumber);
  metrics->add_option("--seed", metrics_seed, "sampling seed");
  metrics->add_option("--format", metrics_format, "json | table | both")->check(CLI::IsMember({"json", "table", "both"}));

  // inspect
  auto* inspect = app.add_subcommand("inspect", "render one puzzle to PPM");
  std::string inspect_space = "dsprites-like", inspect_dataset, inspect_out;
  std::uint64_t inspect_seed = 0, inspect_index = 0;
  std::size_t inspect_rules = 1;
  int inspect_size = 64;
  bool inspect_show = false;
  inspect->add_option("--space", inspect_space, "preset name or space JSON path");
  inspect->add_option("--dataset", inspect_dataset, "read the puzzle from a dataset directory instead");
  inspect->add_option("--seed", inspect_seed, "master seed");
  inspect->add_option("--index", inspect_index, "puzzle index");
  inspect->add_option("--rules", inspect_rules, "rule count l")->check(CLI::PositiveNumber);
  inspect->add_option("--size", inspect_size, "panel size")->check(CLI::IsMember({16, 32, 64}));
  inspect->add_flag("--show-answer", inspect_show, "fill the answer cell (blank by default)");
  inspect->add_option("--out", inspect_out, "output .ppm/.pgm")->required();

  // grid
  auto* grid = app.add_subcommand("grid", "train over a seed x gamma grid");
  std::string grid_config, grid_out, grid_seeds = "1,2,3,4,5", grid_gammas = "10";
  std::size_t grid_eval = 1000;
  grid->add_option("--config", grid_config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", grid_out, "output directory")->required();
  grid->add_option("--seeds", grid_seeds, "comma-separated seeds");
  grid->add_option("--gammas", grid_gammas, "comma-separated TC weights");
  grid->add_option("--eval-puzzles", grid_eval, "puzzles per evaluation")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    for (auto* sub : app.get_subcommands()) {
      err << sub->help();
      return kExitUsage;
    }
    err << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      DatasetSpec spec{space_arg(gen_space), gen_count, gen_seed, gen_rules};
      WriteOptions opt{gen_view == "public" ? PuzzleView::public_only : PuzzleView::full, gen_render, gen_size};
      write_dataset(gen_out, spec, opt);
      out << nlohmann::json{{"out", gen_out}, {"count", gen_count}}.dump() << '\n';
    } else if (train->parsed()) {
      auto config = load_config(train_config);
      if (train_seed) config.seed = *train_seed;
      run_training(config, train_out, out);
    } else if (eval->parsed()) {
      const Model model = from_checkpoint(load_checkpoint(eval_ckpt));
      std::vector<PuzzleInference> dump;
      const auto report = evaluate_reasoning(model, eval_n, eval_seed, eval_dump.empty() ? nullptr : &dump);
      if (!eval_dump.empty()) {
        std::ofstream d(eval_dump);
        if (!d) throw std::runtime_error("cannot write " + eval_dump);
        for (std::size_t i = 0; i < dump.size(); ++i) {
          auto j = to_json(dump[i]);
          j["puzzle"] = i;
          d << j.dump() << '\n';
        }
      }
      auto j = to_json(report);
      j["seed"] = eval_seed;
      j["checkpoint_seed"] = model.config.seed;
      out << j.dump() << '\n';
    } else if (metrics->parsed()) {
      const Model model = from_checkpoint(load_checkpoint(metrics_ckpt));
      const auto report = evaluate_metrics(*model.space, model_code_fn(model),
                                           RngStream(metrics_seed, streams::metrics), metrics_probe);
      if (metrics_format != "table") out << to_json(report).dump() << '\n';
      if (metrics_format != "json") out << metric_table(report);
    } else if (inspect->parsed()) {
      RpmInstance puzzle;
      if (!inspect_dataset.empty()) {
        auto ds = read_dataset(inspect_dataset);
        if (inspect_index >= ds.puzzles.size())
          throw std::runtime_error("dataset has " + std::to_string(ds.puzzles.size()) + " puzzles; index " +
                                   std::to_string(inspect_index) + " out of range");
        puzzle = ds.puzzles[inspect_index];
      } else {
        auto space = std::make_shared<const FactorSpace>(load_space(inspect_space));
        puzzle = generate_puzzle_at(space, inspect_rules, inspect_seed, inspect_index);
      }
      Image img = render_grid(puzzle, inspect_size);
      if (inspect_show) {
        const int c = inspect_size;
        const int x0 = (img.width - (3 * c + 2)) / 2 + 2 * (c + 1), y0 = 2 * (c + 1);
        const Image answer = render(*puzzle.space, puzzle.grid[2][2], c);
        for (int y = 0; y < c; ++y)
          for (int x = 0; x < c; ++x)
            for (int ch = 0; ch < img.channels; ++ch) img.at(x0 + x, y0 + y, ch) = answer.at(x, y, ch);
      }
      write_pnm(img, inspect_out);
      out << nlohmann::json{{"out", inspect_out}, {"answer_index", puzzle.answer_index}}.dump() << '\n';
    } else if (grid->parsed()) {
      const auto base = load_config(grid_config);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& g : split_list(grid_gammas)) {
        for (const auto& sd : split_list(grid_seeds)) {
          auto config = base;
          config.gamma = std::stod(g);
          config.seed = std::stoull(sd);
          config.validate();
          const fs::path dir = fs::path(grid_out) / ("gamma_" + g + "_seed_" + sd);
          run_training(config, dir, out);
          const Model model = from_checkpoint(load_checkpoint(dir / "final.ckpt"));
          const auto acc = evaluate_reasoning(model, grid_eval, 1000);
          const auto metrics =
              evaluate_metrics(*model.space, model_code_fn(model), RngStream(config.seed, streams::metrics));
          rows.push_back({{"gamma", config.gamma},
                          {"seed", config.seed},
                          {"accuracy", acc.accuracy},
                          {"metrics", to_json(metrics)}});
        }
      }
      std::ofstream(fs::path(grid_out) / "grid.json") << rows.dump(2) << '\n';
      out << rows.dump() << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace raven
