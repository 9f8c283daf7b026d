#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "edt/amm/amm.hpp"
#include "edt/architecture/checkpoint.hpp"
#include "edt/error.hpp"
#include "edt/flops/flops.hpp"
#include "edt/harness/dataset.hpp"
#include "edt/harness/evaluation.hpp"
#include "edt/harness/sampler.hpp"
#include "edt/harness/trainer.hpp"

namespace fs = std::filesystem;
using namespace edt;
using nlohmann::json;

namespace {

void write_json(const json& j, const std::optional<std::string>& path) {
  if (!path) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(*path);
  if (!out) throw ArgumentError("cannot write " + *path);
  out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Down/up-sampling diffusion transformer toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--threads", threads, "Worker cap; 1 guarantees bit-exact reproducibility")
        ->check(CLI::PositiveNumber);
  };

  // dataset gen
  auto* dataset = app.add_subcommand("dataset", "Synthetic dataset tools");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "Generate the synthetic class-conditional dataset");
  common(gen);
  harness::DatasetSpec ds_spec;
  std::string ds_out;
  bool ds_items = false;
  gen->add_option("--count", ds_spec.count, "Number of items");
  gen->add_option("--classes", ds_spec.class_count, "Number of classes (at most 8)");
  gen->add_option("--channels", ds_spec.channels, "Channels per item");
  gen->add_option("--size", ds_spec.size, "Height and width");
  gen->add_option("--noise", ds_spec.noise, "Pixel noise standard deviation");
  gen->add_option("--out", ds_out, "Output directory")->required();
  gen->add_flag("--item-images", ds_items, "Also write one PGM per item");

  // train
  auto* train = app.add_subcommand("train", "Train a model on the synthetic dataset");
  common(train);
  std::string tr_config, tr_resume, tr_out, tr_preset, tr_model, tr_strategy;
  std::size_t tr_iters = 0, tr_batch = 0, tr_every = 0, tr_count = 0;
  double tr_lr0 = 0, tr_lr1 = 0;
  bool quiet = false;
  train->add_option("--config", tr_config, "Run config JSON");
  train->add_option("--resume", tr_resume, "Checkpoint directory to resume from");
  auto* o_out = train->add_option("--out", tr_out, "Output directory");
  auto* o_preset = train->add_option("--preset", tr_preset, "Model preset (nano, small, base, xlarge)");
  auto* o_model = train->add_option("--model-config", tr_model, "Model config JSON");
  auto* o_iters = train->add_option("--iterations", tr_iters, "Training steps");
  auto* o_batch = train->add_option("--batch-size", tr_batch, "Batch size");
  auto* o_every = train->add_option("--checkpoint-every", tr_every, "Checkpoint cadence in steps");
  auto* o_lr0 = train->add_option("--lr-start", tr_lr0, "Initial learning rate");
  auto* o_lr1 = train->add_option("--lr-end", tr_lr1, "Final learning rate");
  auto* o_strategy = train->add_option("--strategy", tr_strategy, "Masking strategy")
                         ->check(CLI::IsMember({"edt", "mdt", "none"}));
  auto* o_count = train->add_option("--data-count", tr_count, "Synthetic training items");
  train->add_flag("--quiet", quiet, "No progress output");

  // sample
  auto* sample = app.add_subcommand("sample", "Generate samples with DDIM");
  common(sample);
  std::string sa_ckpt, sa_out, sa_amm = "off";
  std::optional<std::size_t> sa_class;
  std::size_t sa_count = 16, sa_steps = 250;
  double sa_cfg = 1.0;
  bool sa_no_items = false;
  sample->add_option("--checkpoint", sa_ckpt, "Checkpoint directory")->required();
  sample->add_option("--class", sa_class, "Class label (default: every class)");
  sample->add_option("--count", sa_count, "Samples per class");
  sample->add_option("--steps", sa_steps, "DDIM steps");
  sample->add_option("--cfg-scale", sa_cfg, "Classifier-free guidance weight (>= 1)");
  sample->add_option("--amm", sa_amm, "Attention modulation at inference")->check(CLI::IsMember({"on", "off"}));
  sample->add_option("--out", sa_out, "Output directory")->required();
  sample->add_flag("--no-item-images", sa_no_items, "Only write the montage image");

  // eval
  auto* eval = app.add_subcommand("eval", "Kernel MMD between generated and reference sets");
  common(eval);
  std::string ev_gen, ev_ref, ev_log;
  std::optional<std::string> ev_out;
  std::optional<double> ev_bw;
  eval->add_option("--generated", ev_gen, "Sample directory")->required();
  eval->add_option("--reference", ev_ref, "Reference directory (dataset gen output)")->required();
  eval->add_option("--bandwidth", ev_bw, "RBF bandwidth h (default: median heuristic on the reference)");
  eval->add_option("--loss-log", ev_log, "Training loss CSV to summarize");
  eval->add_option("--out", ev_out, "Report JSON path (default: stdout)");

  // flops
  auto* flops = app.add_subcommand("flops", "Analytic MAC and parameter accounting");
  common(flops);
  std::string fl_config, fl_preset = "small", fl_format = "table";
  bool fl_oracle = false;
  flops->add_option("--config", fl_config, "Model config JSON");
  flops->add_option("--preset", fl_preset, "Model preset when no config is given");
  flops->add_flag("--oracle", fl_oracle, "Also count MACs of an instrumented forward pass");
  flops->add_option("--format", fl_format, "Output format")->check(CLI::IsMember({"csv", "table"}));

  // amm export
  auto* amm_cmd = app.add_subcommand("amm", "Attention modulation matrix tools");
  amm_cmd->require_subcommand(1);
  auto* amm_export = amm_cmd->add_subcommand("export", "Write a modulation matrix as CSV");
  common(amm_export);
  std::size_t am_grid = 4;
  double am_scale = 0.5;
  std::optional<double> am_radius;
  std::string am_out;
  amm_export->add_option("--grid", am_grid, "Grid side N")->required();
  amm_export->add_option("--scale", am_scale, "Scale k");
  amm_export->add_option("--radius", am_radius, "Cutoff radius R (default sqrt((N-1)^2 + 4))");
  amm_export->add_option("--out", am_out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ds_spec.seed = seed;
      const auto ds = harness::generate_dataset(ds_spec, threads);
      harness::write_samples(ds.images, ds.labels,
                             {{"dataset", harness::to_json(ds_spec)}, {"class_margin", ds.margin}},
                             ds_out, ds_items);
      std::cout << "wrote " << ds_spec.count << " items to " << ds_out << " (class margin " << ds.margin
                << ")\n";
    } else if (train->parsed()) {
      std::optional<harness::Trainer> trainer;
      if (!tr_resume.empty()) {
        trainer.emplace(harness::Trainer::resume(
            tr_resume, o_out->count() ? std::optional<fs::path>(tr_out) : std::nullopt, threads));
      } else {
        auto rc = tr_config.empty() ? harness::RunConfig{} : harness::load_run_config(tr_config);
        if (o_preset->count()) rc.model = arch::ModelConfig::preset(tr_preset);
        if (o_model->count()) rc.model = arch::load_model_config(tr_model);
        if (o_out->count()) rc.out_dir = tr_out;
        if (o_iters->count()) rc.iterations = tr_iters;
        if (o_batch->count()) rc.batch_size = tr_batch;
        if (o_every->count()) rc.checkpoint_every = tr_every;
        if (o_lr0->count()) rc.lr_start = tr_lr0;
        if (o_lr1->count()) rc.lr_end = tr_lr1;
        if (o_strategy->count()) rc.strategy = harness::parse_strategy(tr_strategy);
        if (o_count->count()) rc.data.count = tr_count;
        if (train->count("--seed")) rc.seed = seed;
        trainer.emplace(rc, threads);
      }
      const std::size_t total = trainer->config().iterations;
      trainer->run(std::nullopt, [&](const harness::LossRow& r) {
        if (!quiet && (r.iteration % 100 == 0 || r.iteration == total)) {
          std::fprintf(stderr, "step %zu/%zu  L_full %.5f  L_masked %.5f  (ema %.5f / %.5f)  lr %.3g\n",
                       r.iteration, total, r.full, r.masked, r.full_ema, r.masked_ema, r.lr);
        }
      });
      std::cout << "trained to step " << trainer->step() << "; log " << (trainer->config().out_dir / "loss.csv").string()
                << "\n";
    } else if (sample->parsed()) {
      auto model = arch::load_model<float>(sa_ckpt);
      if (sa_amm == "on") harness::attach_default_amm(model);
      if (sa_class && *sa_class >= model.config().class_count) throw ArgumentError("--class out of range");
      std::vector<std::size_t> classes;
      for (std::size_t c = 0; c < model.config().class_count; ++c) {
        if (sa_class && *sa_class != c) continue;
        classes.insert(classes.end(), sa_count, c);
      }
      diffusion::SamplerConfig cfg{sa_steps, sa_cfg, seed};
      const auto samples = harness::generate_samples(model, classes, diffusion::NoiseSchedule{}, cfg, threads);
      harness::write_samples(samples, classes,
                             {{"checkpoint", sa_ckpt}, {"steps", sa_steps}, {"cfg_scale", sa_cfg},
                              {"seed", seed}, {"amm", sa_amm}},
                             sa_out, !sa_no_items);
      std::cout << "wrote " << classes.size() << " samples to " << sa_out << "\n";
    } else if (eval->parsed()) {
      const auto g = harness::read_samples(ev_gen);
      const auto r = harness::read_samples(ev_ref);
      std::size_t classes = 0;
      for (auto c : r.classes) classes = std::max(classes, c + 1);
      auto report = harness::to_json(harness::evaluate(g.samples, g.classes, r.samples, r.classes, classes, ev_bw));
      if (!ev_log.empty()) report["loss"] = harness::to_json(harness::summarize_losses(harness::read_loss_log(ev_log)));
      write_json(report, ev_out);
    } else if (flops->parsed()) {
      const auto config = fl_config.empty() ? arch::ModelConfig::preset(fl_preset) : arch::load_model_config(fl_config);
      auto report = flops::model_flops(config);
      if (fl_oracle) report.measured_macs = flops::measure_forward_macs(config);
      std::cout << (fl_format == "csv" ? flops::format_csv(report) : flops::format_table(report));
      if (report.measured_macs && *report.measured_macs != report.total_macs) return 2;
    } else if (amm_export->parsed()) {
      const amm::GridGeometry grid(am_grid);
      const auto m = amm::build_amm(grid, amm::AmmParams::for_grid(grid, am_scale, am_radius));
      amm::export_csv(m, am_out);
      std::cout << "wrote " << m.tokens() << "x" << m.tokens() << " matrix to " << am_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
