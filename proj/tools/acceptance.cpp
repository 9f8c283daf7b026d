// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "edt/amm/amm.hpp"
#include "edt/architecture/checkpoint.hpp"
#include "edt/diffusion/diffusion.hpp"
#include "edt/flops/flops.hpp"
#include "edt/harness/dataset.hpp"
#include "edt/harness/evaluation.hpp"
#include "edt/harness/sampler.hpp"
#include "edt/harness/trainer.hpp"
#include "edt/masking/masking.hpp"
#include "edt/numerics/op_counter.hpp"
#include "edt/numerics/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/toy.hpp"

namespace fs = std::filesystem;
using namespace edt;
using arch::ModelConfig;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates named checks; the first failing one is reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok && failure_.empty()) failure_ = what;
  }
  Outcome done(const std::string& summary) const {
    if (!failure_.empty()) return {false, failure_};
    return {true, summary + " (" + std::to_string(count_) + " checks)"};
  }

 private:
  std::size_t count_ = 0;
  std::string failure_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

Outcome amm_properties() {
  Checks c;
  const double e = std::exp(1.0);
  for (std::size_t n : {2u, 4u, 8u, 16u}) {
    const amm::GridGeometry grid(n);
    const auto p = amm::AmmParams::for_grid(grid, 0.5);
    const auto m = amm::build_amm(grid, p);
    const auto dist = amm::distance_matrix(grid);
    const std::size_t t = grid.tokens();
    const std::string tag = "N=" + std::to_string(n) + ": ";
    c.expect(std::abs(p.radius - std::sqrt((n - 1.0) * (n - 1.0) + 4.0)) < 1e-15, tag + "default radius");
    for (std::size_t i = 0; i < t; ++i) {
      c.expect(std::abs(m.at(i, i) - 0.5 * e) <= 1e-15, tag + "diagonal is k*e");
      for (std::size_t r = 0; r < t; ++r) {
        const double v = m.at(i, r), d = dist[i * t + r];
        c.expect(v == m.at(r, i), tag + "symmetry");
        if (d > p.radius) {
          c.expect(v == 0.0, tag + "zero outside R");
        } else {
          // At d = d_max the cosine argument is pi/2, which rounds one ulp below 0.5.
          c.expect(v >= 0.5 - 1e-15 && v <= 0.5 * e + 1e-15, tag + "entry within [1/2, e/2]");
        }
        for (std::size_t s = 0; s < t; ++s) {
          const double d2 = dist[i * t + s];
          if (d < d2 && d2 <= p.radius) c.expect(v > m.at(i, s), tag + "strictly decreasing in distance");
        }
      }
    }
  }
  return c.done("symmetry, diagonal, range, monotonicity, cutoff for N in {2,4,8,16}");
}

Outcome amm_cost() {
  const amm::GridGeometry grid(16);
  const auto m = amm::build_amm(grid, amm::AmmParams::for_grid(grid));
  Rng rng(1);
  const auto scores = Tensor<float>::randn({1, 18, 256, 256}, rng);
  NoGradGuard ng;
  CountingScope scope;
  amm::modulate(scores, m);
  const auto macs = OpCounter::macs();
  return {macs == 1179648u, "18 heads x 256 x 256 modulation = " + std::to_string(macs) + " MACs (expected 1179648)"};
}

Outcome flops_oracle() {
  Checks c;
  Rng rng(2024);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 4 + rng.below(61), d = 8 + rng.below(57);
    arch::ParamStore<float> store;
    Rng init(n * 131 + d);
    arch::EdtBlock<float> block(store, "b", d, d % 2 == 0 ? 2 : 1, init);
    const auto x = Tensor<float>::randn({1, n, d}, init);
    const auto cond = Tensor<float>::randn({1, d}, init);
    NoGradGuard ng;
    CountingScope scope;
    block(x, cond);
    const std::string tag = "(n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")";
    c.expect(OpCounter::macs() == flops::block_flops(n, d), "block_flops vs instrumented " + tag);
    c.expect(store.count() == flops::block_params(d), "block_params vs counted " + tag);
  }
  return c.done("20 random (n, d): analytic MACs and parameters equal instrumented counts");
}

Outcome drop_bounds() {
  Checks c;
  for (std::uint64_t j = 1; j <= 10; ++j) {
    for (std::uint64_t d : {32u, 64u, 128u, 256u}) {
      c.expect(flops::conventional_drop_ratio(j * d, d).below_bound,
               "rho < 7j/(8j+48) at j=" + std::to_string(j) + " d=" + std::to_string(d));
      for (double r : {1.1, 1.25, 1.5, 1.75, 1.9}) {
        c.expect(flops::redesigned_drop_ratio(j * d, d, r).above_bound,
                 "rho > 1-0.4375r at j=" + std::to_string(j) + " d=" + std::to_string(d) + " r=" + fmt("%g", r));
      }
    }
  }
  const double rho = flops::conventional_drop_ratio(1024, 1024).rho;
  c.expect(std::abs(rho - 0.125) <= 0.005, "rho(j=1, d=1024) = " + fmt("%.5f", rho));
  return c.done("both bounds on the grid; rho(j=1, d=1024) = " + fmt("%.5f", rho));
}

Outcome small_accounting() {
  const auto r = flops::model_flops(ModelConfig::small());
  const double p = static_cast<double>(r.block_param_count), f = static_cast<double>(r.total_macs);
  const double dp = (p - 32.2e6) / 32.2e6, df = (f - 2.66e9) / 2.66e9;
  std::ostringstream os;
  os << "block params " << r.block_param_count << " (" << fmt("%+.1f%%", 100 * dp) << " vs 32.2M), forward MACs "
     << r.total_macs << " (" << fmt("%+.1f%%", 100 * df) << " vs 2.66G)";
  return {std::abs(dp) <= 0.15 && std::abs(df) <= 0.15, os.str()};
}

Outcome architecture_invariants() {
  Checks c;
  const auto cfg = ModelConfig::nano();
  c.expect(cfg.stage_tokens(1) * 4 == cfg.stage_tokens(0) && cfg.stage_tokens(2) * 4 == cfg.stage_tokens(1),
           "tokens quarter per down-sampling");
  arch::EdtModel<float> model(cfg, 3);
  Rng rng(4);
  const auto x = Tensor<float>::randn({2, 4, 16, 16}, rng);
  NoGradGuard ng;
  arch::Trace<float> trace;
  const auto out0 = model.forward(x, {10.0, 500.0}, {1, 8}, nullptr, &trace);
  c.expect(out0.shape() == x.shape(), "output shape equals input shape");
  for (const auto& [name, t] : trace) {
    if (name == "down1") c.expect(t.dim(1) == cfg.stage_tokens(1), "down1 token count");
    if (name == "down2") c.expect(t.dim(1) == cfg.stage_tokens(2), "down2 token count");
  }
  // Blocks are identities at init.
  for (std::size_t s = 0; s < arch::kStages; ++s) {
    const std::size_t d = cfg.stage_dims[s], n = cfg.stage_tokens(s);
    const auto tokens = Tensor<float>::randn({2, n, d}, rng);
    const auto cond = Tensor<float>::randn({2, d}, rng);
    for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b) {
      c.expect(bit_equal(model.block(s, b)(tokens, cond), tokens), "adaLN-Zero block identity at init");
    }
  }
  // AMM attach/detach on trained-like parameters.
  edt::testing::randomize_parameters(model.params(), 5, 0.1);
  std::vector<std::vector<float>> before;
  for (const auto& e : model.params().entries()) before.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  const auto plain = model.forward(x, {10.0, 500.0}, {1, 8});
  harness::attach_default_amm(model);
  const auto modulated = model.forward(x, {10.0, 500.0}, {1, 8});
  c.expect(!bit_equal(plain, modulated), "attached AMM changes the output");
  for (std::size_t k = 0; k < before.size(); ++k) {
    const auto& t = model.params().entries()[k].tensor;
    c.expect(std::memcmp(before[k].data(), t.data().data(), before[k].size() * sizeof(float)) == 0,
             "parameters untouched by attach");
  }
  model.detach_amm();
  c.expect(bit_equal(plain, model.forward(x, {10.0, 500.0}, {1, 8})), "detach restores the output bit-exactly");
  return c.done("shape laws, block identity at init, AMM attach/detach invariance");
}

Outcome gradient_check() {
  arch::EdtModel<double> model(edt::testing::two_block_config(), 1);
  edt::testing::randomize_parameters(model.params(), 2, 0.3);
  Rng rng(3);
  const auto x = Tensor<double>::randn({2, 2, 8, 8}, rng);
  const auto target = Tensor<double>::randn({2, 2, 8, 8}, rng);
  auto loss = [&] { return mse(model.forward(x, {15.0, 600.0}, {0, 3}), target); };
  const auto r = edt::testing::grad_check<double>(loss, model.params().tensors(), 1e-4, 1e-8);
  const bool ok = r.max_rel_error <= 1e-5 && r.checked == model.parameter_count();
  return {ok, std::to_string(r.checked) + " parameters, max relative error " + fmt("%.2e", r.max_rel_error) +
                  " (limit 1e-5)"};
}

Outcome masking_isolation() {
  Checks c;
  arch::EdtModel<double> model(ModelConfig::nano(), 11);
  edt::testing::randomize_parameters(model.params(), 12, 0.15);
  Rng rng(13);
  const auto x = Tensor<double>::randn({3, 4, 16, 16}, rng);
  const auto masks = masking::sample_token_masks(model.config(), model.config().mask, 3, rng);
  auto scramble = [](const std::vector<std::uint8_t>& mask, std::uint64_t seed) -> arch::TokenRewrite<double> {
    return [&mask, seed](const Tensor<double>& merged) {
      Rng r(seed);
      const std::size_t rows = merged.dim(0) * merged.dim(1), d = merged.dim(2);
      std::vector<double> v(merged.data().begin(), merged.data().end());
      for (std::size_t i = 0; i < rows; ++i) {
        if (!mask[i]) continue;
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = 5.0 * r.normal();
      }
      return Tensor<double>::from(merged.shape(), std::move(v));
    };
  };
  const arch::MergeRewrites<double> rewrites{scramble(masks.downsample1, 1), scramble(masks.downsample2, 2)};
  arch::Trace<double> ref, alt;
  {
    NoGradGuard ng;
    model.forward(x, {5.0, 300.0, 900.0}, {0, 4, 8}, &masks, &ref);
    model.forward(x, {5.0, 300.0, 900.0}, {0, 4, 8}, &masks, &alt, &rewrites);
  }
  c.expect(ref.size() == alt.size(), "trace lengths agree");
  bool downstream = false;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < ref.size() && i < alt.size(); ++i) {
    if (ref[i].first == "down1") downstream = true;
    if (!downstream || ref[i].first == "merged") continue;
    c.expect(bit_equal(ref[i].second, alt[i].second), "activation '" + ref[i].first + "' bit-identical");
    ++compared;
  }
  c.expect(compared >= 16, "enough downstream activations compared");

  // Realized fractions over many draws, for the full-size defaults and nano.
  double lo1 = 1, hi1 = 0, lo2 = 1, hi2 = 0;
  for (const auto& cfg : {ModelConfig::small(), ModelConfig::nano()}) {
    const auto& spec = cfg.mask;
    Rng mr(17);
    const std::size_t n1 = cfg.stage_tokens(1), n2 = cfg.stage_tokens(2);
    for (int draw = 0; draw < 2000; ++draw) {
      const auto m = masking::sample_token_masks(cfg, spec, 2, mr);
      for (std::size_t b = 0; b < 2; ++b) {
        std::size_t k1 = 0, k2 = 0;
        for (std::size_t i = 0; i < n1; ++i) k1 += m.downsample1[b * n1 + i];
        for (std::size_t i = 0; i < n2; ++i) k2 += m.downsample2[b * n2 + i];
        const double f1 = static_cast<double>(k1) / n1, f2 = static_cast<double>(k2) / n2;
        c.expect(f1 >= spec.stage1.low && f1 <= spec.stage1.high, "first-module fraction within range");
        c.expect(f2 >= spec.stage2.low && f2 <= spec.stage2.high, "second-module fraction within range");
        if (cfg == ModelConfig::small()) {
          lo1 = std::min(lo1, f1), hi1 = std::max(hi1, f1), lo2 = std::min(lo2, f2), hi2 = std::max(hi2, f2);
        }
      }
    }
  }
  return c.done(std::to_string(compared) + " downstream activations bit-identical; default-range fractions " +
                fmt("[%.3f, ", lo1) + fmt("%.3f] / ", hi1) + fmt("[%.3f, ", lo2) + fmt("%.3f]", hi2));
}

Outcome diffusion_statistics() {
  Checks c;
  const diffusion::NoiseSchedule sched;
  const std::size_t draws = 10000;
  Rng rng(21);
  for (std::size_t t : {1u, 100u, 500u, 1000u}) {
    const double x0 = 0.7;
    std::vector<std::size_t> ts(draws, t);
    const auto eps = Tensor<double>::randn({draws, 1}, rng);
    const auto xt = diffusion::forward_diffuse(Tensor<double>::full({draws, 1}, x0), ts, eps, sched);
    double mean = 0, sq = 0;
    for (double v : xt.data()) mean += v;
    mean /= draws;
    for (double v : xt.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (draws - 1));
    const double mu = std::sqrt(sched.alpha_bar(t)) * x0, sigma = std::sqrt(1 - sched.alpha_bar(t));
    c.expect(std::abs(mean - mu) <= 3 * sigma / std::sqrt(double(draws)), "mean within 3 sigma at t=" + std::to_string(t));
    c.expect(std::abs(sd - sigma) <= 3 * sigma / std::sqrt(2.0 * (draws - 1)), "std within 3 sigma at t=" + std::to_string(t));
  }
  arch::EdtModel<float> model(ModelConfig::nano(), 7);
  edt::testing::randomize_parameters(model.params(), 8, 0.05);
  const auto predict = diffusion::model_predictor(model);
  const auto x = Tensor<float>::randn({3, 4, 16, 16}, rng);
  const std::vector<double> t{20, 400, 990};
  const std::vector<std::size_t> y{1, 5, 7};
  NoGradGuard ng;
  c.expect(bit_equal(diffusion::cfg_predict(predict, x, t, y, model.null_class(), 1.0), predict(x, t, y)),
           "cfg with weight 1 bit-equal to the conditional prediction");
  diffusion::SamplerConfig sc{10, 2.0, 99};
  const auto a = diffusion::ddim_sample(predict, {3, 4, 16, 16}, y, model.null_class(), sched, sc);
  const auto b = diffusion::ddim_sample(predict, {3, 4, 16, 16}, y, model.null_class(), sched, sc);
  c.expect(bit_equal(a, b), "DDIM bit-reproducible under a fixed seed");
  return c.done("moments within 3 sigma over 1e4 draws, cfg(1) bit-equal, DDIM reproducible");
}

struct ToyRun {
  fs::path work;
  std::size_t iterations = 6000;
  std::size_t per_class = 32;
  std::size_t sample_steps = 50;
  double guidance = 1.0;
  std::size_t threads = 1;
};

Outcome toy_end_to_end(const ToyRun& opt) {
  Checks c;
  harness::RunConfig rc;
  rc.iterations = opt.iterations;
  rc.checkpoint_every = opt.iterations;
  rc.out_dir = opt.work / "run";
  rc.seed = 1;
  fs::remove_all(rc.out_dir);
  const auto start = std::chrono::steady_clock::now();
  harness::Trainer trainer(rc, opt.threads);
  trainer.run();
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  c.expect(opt.iterations >= 5000 && opt.iterations <= 20000, "iterations within 5k-20k");
  c.expect(minutes <= 30.0, "training within 30 minutes");

  const auto s = harness::summarize_losses(harness::read_loss_log(rc.out_dir / "loss.csv"));
  c.expect(s.full_ratio <= 0.5, "(a) smoothed L_full <= 50% of initial");
  c.expect(s.full_slope < 0.0 && s.masked_slope < 0.0, "(b) both smoothed losses decrease over the final third");

  const auto classes = rc.model.class_count;
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < classes; ++k) labels.insert(labels.end(), opt.per_class, k);
  const diffusion::SamplerConfig sc{opt.sample_steps, opt.guidance, 7};
  const diffusion::NoiseSchedule sched(rc.diffusion_steps);
  const auto trained = harness::generate_samples(trainer.model(), labels, sched, sc, opt.threads);
  const auto initial = arch::load_model<float>(trainer.checkpoint_dir(0));
  const auto untrained = harness::generate_samples(initial, labels, sched, sc, opt.threads);

  auto ref_spec = rc.data;
  ref_spec.seed = rc.data.seed + 1000;  // held out from training
  ref_spec.count = 64 * classes;
  const auto ref = harness::generate_dataset(ref_spec, opt.threads);
  const double h = harness::median_bandwidth({&ref.images});
  const auto rep_t = harness::evaluate(trained, labels, ref.images, ref.labels, classes, h);
  const auto rep_u = harness::evaluate(untrained, labels, ref.images, ref.labels, classes, h);
  c.expect(rep_t.overall.mmd * 2.0 <= rep_u.overall.mmd, "(c) MMD(trained) <= MMD(untrained) / 2");
  c.expect(rep_t.classes_nearest_own >= 6, "(d) >= 6 of 8 classes nearest to their own references");

  harness::write_samples(trained, labels, {{"steps", sc.steps}, {"cfg_scale", sc.guidance}, {"seed", sc.seed}},
                         opt.work / "samples_trained", false);
  std::ostringstream os;
  os << opt.iterations << " steps in " << fmt("%.1f", minutes) << " min; L_full ema " << fmt("%.4f", s.initial_full)
     << " -> " << fmt("%.4f", s.final_full) << " (" << fmt("%.1f%%", 100 * s.full_ratio)
     << "); final-third slopes " << fmt("%.2e", s.full_slope) << " / " << fmt("%.2e", s.masked_slope) << "; MMD "
     << fmt("%.4f", rep_t.overall.mmd) << " vs untrained " << fmt("%.4f", rep_u.overall.mmd) << "; "
     << rep_t.classes_nearest_own << "/8 classes nearest own";
  const auto out = c.done(os.str());
  return out.pass ? out : Outcome{false, out.detail + " | " + os.str()};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.insert(std::stoi(item));
    } else {
      for (int k = std::stoi(item.substr(0, dash)); k <= std::stoi(item.substr(dash + 1)); ++k) out.insert(k);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string criteria = "1-10";
  ToyRun toy;
  toy.work = fs::temp_directory_path() / "edt_acceptance";
  std::string work = toy.work.string();
  app.add_option("--criteria", criteria, "Comma-separated criteria or ranges, e.g. 1-9 or 10");
  app.add_option("--work", work, "Scratch directory for the end-to-end run");
  app.add_option("--iterations", toy.iterations, "Training steps for criterion 10");
  app.add_option("--sample-steps", toy.sample_steps, "DDIM steps for criterion 10");
  app.add_option("--cfg-scale", toy.guidance, "Guidance weight for criterion 10 samples");
  app.add_option("--threads", toy.threads, "Worker cap for sampling and dataset generation");
  CLI11_PARSE(app, argc, argv);
  toy.work = work;
  fs::create_directories(toy.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"AMM properties", amm_properties},
      {"AMM cost", amm_cost},
      {"FLOPs formula vs oracle", flops_oracle},
      {"drop-ratio bounds", drop_bounds},
      {"EDT-S accounting", small_accounting},
      {"architecture invariants", architecture_invariants},
      {"gradient check", gradient_check},
      {"masking isolation", masking_isolation},
      {"diffusion statistics", diffusion_statistics},
      {"toy end-to-end", [&] { return toy_end_to_end(toy); }},
  };
  int failures = 0;
  for (int k : parse_list(criteria)) {
    if (k < 1 || k > static_cast<int>(all.size())) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[k - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s [%s] %s (%.2fs)\n", k, o.pass ? "PASS" : "FAIL", all[k - 1].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
