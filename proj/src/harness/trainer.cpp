#include "edt/harness/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "edt/architecture/checkpoint.hpp"
#include "edt/error.hpp"
#include "edt/harness/evaluation.hpp"
#include "edt/masking/masking.hpp"
#include "edt/numerics/ops.hpp"

namespace edt::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kEdt: return "edt";
    case Strategy::kMdt: return "mdt";
    default: return "none";
  }
}

Strategy parse_strategy(const std::string& name) {
  if (name == "edt") return Strategy::kEdt;
  if (name == "mdt") return Strategy::kMdt;
  if (name == "none") return Strategy::kNone;
  throw ConfigError("unknown training strategy '" + name + "' (edt, mdt, none)");
}

json to_json(const RunConfig& c) {
  return {{"model", arch::to_json(c.model)},
          {"data", to_json(c.data)},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"weight_decay", c.weight_decay},
          {"p_uncond", c.p_uncond},
          {"diffusion_steps", c.diffusion_steps},
          {"strategy", strategy_name(c.strategy)},
          {"input_mask_ratio", c.input_mask_ratio},
          {"checkpoint_every", c.checkpoint_every},
          {"out_dir", c.out_dir.string()},
          {"seed", c.seed}};
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config: expected an object");
  static const std::set<std::string> keys{
      "model",    "data",       "iterations", "batch_size",      "lr_start",         "lr_end",
      "weight_decay", "p_uncond", "diffusion_steps", "strategy", "input_mask_ratio",
      "checkpoint_every", "out_dir", "seed"};
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("run config: unknown key '" + k + "'");
  }
  RunConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.is_object()) {
        c.model = arch::model_config_from_json(m);
      } else {
        const auto name = m.get<std::string>();
        if (fs::path(name).extension() == ".json") {
          const fs::path p = fs::path(name).is_absolute() ? fs::path(name) : base_dir / name;
          if (!fs::exists(p)) throw ConfigError("run config: model config file not found: " + p.string());
          c.model = arch::load_model_config(p);
        } else {
          c.model = arch::ModelConfig::preset(name);
        }
      }
    }
    if (j.contains("data")) c.data = dataset_spec_from_json(j.at("data"));
    auto read = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    read("iterations", c.iterations);
    read("batch_size", c.batch_size);
    read("lr_start", c.lr_start);
    read("lr_end", c.lr_end);
    read("weight_decay", c.weight_decay);
    read("p_uncond", c.p_uncond);
    read("diffusion_steps", c.diffusion_steps);
    read("input_mask_ratio", c.input_mask_ratio);
    read("checkpoint_every", c.checkpoint_every);
    read("seed", c.seed);
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("run config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string loss_log_header() {
  return "# *_ema columns: exponential moving average, factor 0.99 "
         "(ema = 0.99 * ema + 0.01 * value, started at the first value)\n"
         "iteration,L_full,L_masked,lr,L_full_ema,L_masked_ema\n";
}

std::string format_loss_row(const LossRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.full, r.masked,
                r.lr, r.full_ema, r.masked_ema);
  return buf;
}

std::vector<LossRow> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("read_loss_log: cannot open " + path.string());
  std::vector<LossRow> rows;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "iteration,L_full,L_masked,lr,L_full_ema,L_masked_ema") {
        throw ArgumentError(path.string() + ":" + std::to_string(lineno) + ": unexpected header");
      }
      header = true;
      continue;
    }
    LossRow r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf%c", &r.iteration, &r.full, &r.masked, &r.lr,
                    &r.full_ema, &r.masked_ema, &tail) != 6) {
      throw ArgumentError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    rows.push_back(r);
  }
  return rows;
}

LossSummary summarize_losses(const std::vector<LossRow>& rows) {
  if (rows.size() < 6) throw ArgumentError("summarize_losses: need at least 6 rows");
  LossSummary s;
  s.rows = rows.size();
  s.initial_full = rows.front().full_ema;
  s.final_full = rows.back().full_ema;
  s.final_masked = rows.back().masked_ema;
  s.full_ratio = s.final_full / s.initial_full;
  std::vector<double> x, full, masked;
  for (std::size_t i = rows.size() - rows.size() / 3; i < rows.size(); ++i) {
    x.push_back(static_cast<double>(rows[i].iteration));
    full.push_back(rows[i].full_ema);
    masked.push_back(rows[i].masked_ema);
  }
  s.full_slope = linear_slope(x, full);
  s.masked_slope = linear_slope(x, masked);
  return s;
}

json to_json(const LossSummary& s) {
  return {{"rows", s.rows},
          {"smoothing", "exponential moving average, factor 0.99"},
          {"initial_full", s.initial_full},
          {"final_full", s.final_full},
          {"final_masked", s.final_masked},
          {"full_ratio", s.full_ratio},
          {"full_slope_final_third", s.full_slope},
          {"masked_slope_final_third", s.masked_slope}};
}

namespace {

void check_compatible(const RunConfig& c) {
  c.model.validate();
  if (c.data.channels != c.model.in_channels || c.data.size != c.model.image_size ||
      c.data.class_count != c.model.class_count) {
    throw ConfigError("run config: dataset extents/classes do not match the model config");
  }
  if (c.iterations == 0 && c.checkpoint_every == 0) return;
  if (c.batch_size == 0) throw ConfigError("run config: batch_size must be positive");
  if (c.checkpoint_every == 0) throw ConfigError("run config: checkpoint_every must be positive");
  if (!(c.p_uncond >= 0.0 && c.p_uncond <= 1.0)) throw ConfigError("run config: p_uncond must lie in [0, 1]");
}

}  // namespace

Trainer::Trainer(RunConfig config, std::size_t threads)
    : Trainer(config, (check_compatible(config), generate_dataset(config.data, threads))) {}

Trainer::Trainer(RunConfig config, SyntheticDataset dataset)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      schedule_(config_.diffusion_steps),
      model_(std::make_unique<arch::EdtModel<float>>(config_.model, mix_seed(config_.seed, 1))),
      rng_(mix_seed(config_.seed, 2)) {
  diffusion::AdamWConfig opt;
  opt.lr_start = config_.lr_start;
  opt.lr_end = config_.lr_end;
  opt.total_steps = std::max<std::size_t>(config_.iterations, 1);
  opt.weight_decay = config_.weight_decay;
  optimizer_ = std::make_unique<diffusion::AdamW<float>>(model_->params().tensors(), opt);
}

LossRow Trainer::train_step() {
  const std::size_t b = config_.batch_size, row = dataset_.images.numel() / dataset_.images.dim(0);
  std::vector<float> x0(b * row);
  std::vector<std::size_t> y(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t k = rng_.below(dataset_.images.dim(0));
    std::copy(dataset_.images.data().begin() + static_cast<std::ptrdiff_t>(k * row),
              dataset_.images.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * row),
              x0.begin() + static_cast<std::ptrdiff_t>(i * row));
    y[i] = dataset_.labels[k];
  }
  const auto& s = dataset_.spec;
  const auto batch = Tensor<float>::from({b, s.channels, s.size, s.size}, std::move(x0));
  const auto nb = diffusion::draw_noised_batch(batch, y, model_->null_class(), schedule_,
                                               config_.p_uncond, rng_);
  const auto t = nb.t_real();

  Tensor<float> full, masked, objective;
  switch (config_.strategy) {
    case Strategy::kEdt: {
      const auto masks = masking::sample_token_masks(config_.model, config_.model.mask, b, rng_);
      const auto pair = masking::edt_training_losses(*model_, nb.x_t, t, nb.y, nb.eps, masks);
      full = pair.full;
      masked = pair.masked;
      objective = pair.total();
      break;
    }
    case Strategy::kMdt: {
      const auto pair = masking::mdt_style_losses(*model_, nb.x_t, t, nb.y, nb.eps,
                                                  config_.input_mask_ratio, rng_);
      full = pair.full;
      masked = pair.masked;
      objective = pair.total();
      break;
    }
    case Strategy::kNone:
      full = mse(model_->forward(nb.x_t, t, nb.y), nb.eps);
      masked = full;
      objective = full;
      break;
  }

  LossRow r;
  r.lr = optimizer_->lr_at(step_);
  backward(objective);
  optimizer_->step();
  ++step_;
  r.iteration = step_;
  r.full = full.item();
  r.masked = masked.item();
  full_ema_ = full_ema_ ? kLossSmoothing * *full_ema_ + (1.0 - kLossSmoothing) * r.full : r.full;
  masked_ema_ = masked_ema_ ? kLossSmoothing * *masked_ema_ + (1.0 - kLossSmoothing) * r.masked : r.masked;
  r.full_ema = *full_ema_;
  r.masked_ema = *masked_ema_;
  return r;
}

fs::path Trainer::checkpoint_dir(std::size_t step) const {
  char name[32];
  std::snprintf(name, sizeof(name), "step_%07zu", step);
  return config_.out_dir / "checkpoints" / name;
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  arch::Archive archive;
  arch::put_parameters(archive, *model_);
  const auto& entries = model_->params().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    archive.put("adam/m/" + entries[k].name, optimizer_->first_moments()[k]);
    archive.put("adam/v/" + entries[k].name, optimizer_->second_moments()[k]);
  }
  archive.metadata()["run_config"] = to_json(config_);
  archive.metadata()["trainer"] = {
      {"step", step_},
      {"rng", rng_.state()},
      {"full_ema", full_ema_ ? json(*full_ema_) : json(nullptr)},
      {"masked_ema", masked_ema_ ? json(*masked_ema_) : json(nullptr)}};
  archive.save(dir);
}

Trainer Trainer::resume(const fs::path& checkpoint, std::optional<fs::path> out_dir, std::size_t threads) {
  const auto archive = arch::Archive::load(checkpoint);
  const auto& meta = archive.metadata();
  if (!meta.contains("run_config") || !meta.contains("trainer")) {
    throw ManifestError(checkpoint.string() + ": not a training checkpoint (no trainer state)");
  }
  auto config = run_config_from_json(meta.at("run_config"));
  if (out_dir) config.out_dir = *out_dir;
  Trainer tr(config, threads);
  arch::load_parameters(*tr.model_, archive);
  const auto& entries = tr.model_->params().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    for (auto [prefix, moments] : {std::pair{"adam/m/", &tr.optimizer_->first_moments()},
                                   std::pair{"adam/v/", &tr.optimizer_->second_moments()}}) {
      const auto stored = archive.get<float>(prefix + entries[k].name);
      auto dst = (*moments)[k];
      if (stored.shape() != dst.shape()) throw ManifestError(prefix + entries[k].name + ": shape mismatch");
      std::copy(stored.data().begin(), stored.data().end(), dst.mutable_data().begin());
    }
  }
  const auto& st = meta.at("trainer");
  tr.step_ = st.at("step").get<std::size_t>();
  tr.optimizer_->set_steps_taken(tr.step_);
  tr.rng_.restore(st.at("rng").get<std::string>());
  if (!st.at("full_ema").is_null()) tr.full_ema_ = st.at("full_ema").get<double>();
  if (!st.at("masked_ema").is_null()) tr.masked_ema_ = st.at("masked_ema").get<double>();
  return tr;
}

void Trainer::run(std::optional<std::size_t> stop_at, const std::function<void(const LossRow&)>& progress) {
  const std::size_t stop = std::min(stop_at.value_or(config_.iterations), config_.iterations);
  fs::create_directories(config_.out_dir);
  const fs::path log_path = config_.out_dir / "loss.csv";
  std::vector<LossRow> kept;
  if (step_ > 0 && fs::exists(log_path)) {
    for (const auto& r : read_loss_log(log_path)) {
      if (r.iteration <= step_) kept.push_back(r);
    }
  }
  {
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw ConfigError("cannot write " + log_path.string());
    log << loss_log_header();
    for (const auto& r : kept) log << format_loss_row(r);
  }
  if (step_ == 0) save_checkpoint(checkpoint_dir(0));
  std::ofstream log(log_path, std::ios::app);
  while (step_ < stop) {
    const auto r = train_step();
    log << format_loss_row(r);
    if (step_ % config_.checkpoint_every == 0 || step_ == config_.iterations) {
      log.flush();
      save_checkpoint(checkpoint_dir(step_));
    }
    if (progress) progress(r);
  }
  log.flush();
  if (!log) throw ConfigError("write failed: " + log_path.string());
}

}  // namespace edt::harness
