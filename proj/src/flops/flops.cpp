#include "edt/flops/flops.hpp"

#include <iomanip>
#include <set>
#include <sstream>

#include "edt/amm/amm.hpp"
#include "edt/architecture/model.hpp"
#include "edt/error.hpp"
#include "edt/numerics/op_counter.hpp"

namespace edt::flops {

std::uint64_t block_flops(std::uint64_t n, std::uint64_t d) {
  if (n == 0 || d == 0) throw ArgumentError("block_flops: n and d must be positive");
  return 2 * n * n * d + 12 * n * d * d + 6 * d * d;
}

std::uint64_t block_params(std::uint64_t d) {
  if (d == 0) throw ArgumentError("block_params: d must be positive");
  return 18 * d * d;
}

std::uint64_t conventional_after_flops(std::uint64_t n, std::uint64_t d) {
  if (n == 0 || d == 0 || n % 4 != 0) {
    throw ArgumentError("conventional_after_flops: n must be a positive multiple of 4");
  }
  return n * n * d / 4 + 12 * n * d * d + 24 * d * d;
}

std::uint64_t conventional_after_params(std::uint64_t d) { return 72 * d * d; }

double redesigned_after_flops(double n, double d, double r) {
  return r * n * n * d / 8.0 + 3.0 * n * r * r * d * d + 6.0 * r * r * d * d;
}

ConventionalDrop conventional_drop_ratio(std::uint64_t n, std::uint64_t d) {
  ConventionalDrop out;
  out.j = static_cast<double>(n) / static_cast<double>(d);
  const double f = static_cast<double>(block_flops(n, d));
  out.rho = (f - static_cast<double>(conventional_after_flops(n, d))) / f;
  out.bound = 7.0 * out.j / (8.0 * out.j + 48.0);
  out.below_bound = out.rho < out.bound;
  return out;
}

RedesignedDrop redesigned_drop_ratio(std::uint64_t n, std::uint64_t d, double r) {
  if (!(r > 1.0 && r < 2.0)) throw ArgumentError("redesigned_drop_ratio: r must lie in (1, 2)");
  RedesignedDrop out;
  const double nn = static_cast<double>(n), dd = static_cast<double>(d);
  out.j = nn / dd;
  out.r = r;
  out.rho = 1.0 - redesigned_after_flops(nn, dd, r) / static_cast<double>(block_flops(n, d));
  out.approximation = 1.0 - (r * out.j + 24.0 * r * r) / (16.0 * out.j + 96.0);
  out.approximation_gap_bound = 48.0 * (r * r + 1.0) / (nn * (16.0 * out.j + 96.0));
  out.bound = 1.0 - 0.4375 * r;
  out.rounded_bound = 1.0 - 0.43 * r;
  out.bound_applies = out.j >= 1.0;
  out.above_bound = out.rho > out.bound;
  return out;
}

FlopsReport model_flops(const arch::ModelConfig& c) {
  c.validate();
  FlopsReport rep;
  const auto& dims = c.stage_dims;
  const std::uint64_t d0 = dims[0], pd = c.patch_dim(), ted = c.time_embed_dim;
  const std::uint64_t n0 = c.stage_tokens(0);

  std::vector<std::vector<bool>> schedule;
  if (c.amm.enabled) {
    schedule = c.amm.schedule;
    if (schedule.empty()) {
      const std::vector<std::size_t> counts{c.stage_blocks[3], c.stage_blocks[4]};
      schedule = amm::default_schedule(counts).stages;
    }
  }

  for (std::size_t s = 0; s < arch::kStages; ++s) {
    StageCost st;
    st.stage = s;
    st.tokens = c.stage_tokens(s);
    st.dim = dims[s];
    st.heads = c.stage_heads[s];
    st.blocks = c.stage_blocks[s];
    st.block_flops = block_flops(st.tokens, st.dim);
    st.block_params = block_params(st.dim);
    if (s >= arch::kEncoderStages && !schedule.empty()) {
      for (bool on : schedule[s - arch::kEncoderStages]) {
        if (on) st.amm_macs += st.heads * st.tokens * st.tokens;
      }
    }
    st.total_flops = st.blocks * st.block_flops + st.amm_macs;
    rep.block_macs += st.blocks * st.block_flops;
    rep.amm_macs += st.amm_macs;
    rep.block_param_count += st.blocks * st.block_params;
    rep.stages.push_back(st);
  }

  auto module = [&](std::string name, std::uint64_t macs, std::uint64_t params) {
    rep.modules.push_back({std::move(name), macs, params});
  };
  module("patch_embed", n0 * pd * d0, pd * d0 + d0 + d0 /* input mask token */);
  module("time_mlp", ted * d0 + d0 * d0, ted * d0 + d0 + d0 * d0 + d0);
  module("class_embed", 0, (c.class_count + 1) * d0);
  std::set<std::uint64_t> projected;
  for (std::size_t s = 1; s < arch::kStages; ++s) {
    const std::uint64_t d = dims[s];
    if (d != d0 && projected.insert(d).second) {
      module("cond_proj." + std::to_string(d), d0 * d, d0 * d + d);
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const std::uint64_t din = dims[k], dout = dims[k + 1], n_in = c.stage_tokens(k);
    module("down" + std::to_string(k + 1), din * 2 * din + (n_in / 4) * 4 * din * dout,
           din * 2 * din + 2 * din + 4 * din * dout + dout + dout /* mask token */);
    rep.drops.push_back({"down" + std::to_string(k + 1), n_in, din, dout,
                         redesigned_drop_ratio(n_in, din, static_cast<double>(dout) /
                                                              static_cast<double>(din))});
  }
  // Decoder side: up1 feeds skip1_3 (stage 1 resolution), up2 feeds skip0_4.
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t from = 2 + k, to = 3 + k;
    const std::uint64_t din = dims[from], dout = dims[to], n_in = c.stage_tokens(from);
    module("up" + std::to_string(k + 1), n_in * din * 4 * dout, din * 4 * dout + 4 * dout);
    const std::size_t enc = 1 - k;
    const std::uint64_t de = dims[enc], n = c.stage_tokens(to);
    module(k == 0 ? "skip1_3" : "skip0_4", de * 2 * de + n * (de + dout) * dout,
           de * 2 * de + 2 * de + (de + dout) * dout + dout);
  }
  const std::uint64_t d4 = dims[4];
  module("final", d4 * 2 * d4 + n0 * d4 * pd, d4 * 2 * d4 + 2 * d4 + d4 * pd + pd);

  std::uint64_t module_params = 0;
  for (const auto& m : rep.modules) {
    rep.module_macs += m.macs;
    module_params += m.params;
  }
  rep.total_macs = rep.block_macs + rep.amm_macs + rep.module_macs;
  rep.total_param_count = rep.block_param_count + module_params;
  return rep;
}

std::uint64_t measure_forward_macs(const arch::ModelConfig& config) {
  arch::EdtModel<float> model(config, 0);
  auto x = Tensor<float>::zeros({1, config.in_channels, config.image_size, config.image_size});
  NoGradGuard no_grad;
  CountingScope scope;
  model.forward(x, {1.0}, {0});
  return OpCounter::macs();
}

namespace {

std::string giga(std::uint64_t v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << static_cast<double>(v) / 1e9;
  return os.str();
}

}  // namespace

std::string format_table(const FlopsReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(7) << "stage" << std::right << std::setw(7) << "n" << std::setw(7)
     << "d" << std::setw(7) << "h" << std::setw(8) << "blocks" << std::setw(16) << "F/block"
     << std::setw(14) << "P/block" << std::setw(12) << "amm" << std::setw(17) << "stage MACs"
     << "\n";
  for (const auto& s : r.stages) {
    os << std::left << std::setw(7) << s.stage << std::right << std::setw(7) << s.tokens
       << std::setw(7) << s.dim << std::setw(7) << s.heads << std::setw(8) << s.blocks
       << std::setw(16) << s.block_flops << std::setw(14) << s.block_params << std::setw(12)
       << s.amm_macs << std::setw(17) << s.total_flops << "\n";
  }
  os << "\n" << std::left << std::setw(16) << "module" << std::right << std::setw(16) << "MACs"
     << std::setw(14) << "params" << "\n";
  for (const auto& m : r.modules) {
    os << std::left << std::setw(16) << m.name << std::right << std::setw(16) << m.macs
       << std::setw(14) << m.params << "\n";
  }
  os << "\n" << std::left << std::setw(8) << "merge" << std::right << std::setw(7) << "n"
     << std::setw(7) << "d" << std::setw(8) << "r" << std::setw(8) << "j" << std::setw(10)
     << "rho" << std::setw(10) << "approx" << std::setw(12) << "1-0.4375r" << std::setw(10)
     << "1-0.43r" << std::setw(10) << "holds" << "\n";
  for (const auto& d : r.drops) {
    os << std::left << std::setw(8) << d.name << std::right << std::setw(7) << d.tokens_in
       << std::setw(7) << d.dim_in << std::fixed << std::setprecision(4) << std::setw(8)
       << d.ratio.r << std::setw(8) << d.ratio.j << std::setw(10) << d.ratio.rho << std::setw(10)
       << d.ratio.approximation << std::setw(12) << d.ratio.bound << std::setw(10)
       << d.ratio.rounded_bound << std::setw(10)
       << (d.ratio.bound_applies ? (d.ratio.above_bound ? "yes" : "NO") : "n/a (j<1)") << "\n";
    os.unsetf(std::ios::fixed);
  }
  os << "\nblock MACs   " << r.block_macs << " (" << giga(r.block_macs) << " G)\n";
  os << "AMM MACs     " << r.amm_macs << "\n";
  os << "module MACs  " << r.module_macs << "\n";
  os << "total MACs   " << r.total_macs << " (" << giga(r.total_macs) << " G)\n";
  if (r.measured_macs) {
    os << "measured     " << *r.measured_macs
       << (*r.measured_macs == r.total_macs ? " (matches)" : " (MISMATCH)") << "\n";
  }
  os << "block params " << r.block_param_count << "\n";
  os << "total params " << r.total_param_count << "\n";
  return os.str();
}

std::string format_csv(const FlopsReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "kind,name,tokens,dim,heads,blocks,macs_per_block,params_per_block,amm_macs,macs,params,"
        "r,j,rho,approximation,bound,rounded_bound,bound_applies,above_bound\n";
  for (const auto& s : r.stages) {
    os << "stage,stage" << s.stage << "," << s.tokens << "," << s.dim << "," << s.heads << ","
       << s.blocks << "," << s.block_flops << "," << s.block_params << "," << s.amm_macs << ","
       << s.total_flops << "," << s.blocks * s.block_params << ",,,,,,,,\n";
  }
  for (const auto& m : r.modules) {
    os << "module," << m.name << ",,,,,,,," << m.macs << "," << m.params << ",,,,,,,,\n";
  }
  for (const auto& d : r.drops) {
    os << "drop," << d.name << "," << d.tokens_in << "," << d.dim_in << ",,,,,,,," << d.ratio.r
       << "," << d.ratio.j << "," << d.ratio.rho << "," << d.ratio.approximation << ","
       << d.ratio.bound << "," << d.ratio.rounded_bound << "," << d.ratio.bound_applies << ","
       << d.ratio.above_bound << "\n";
  }
  os << "total,blocks,,,,,,," << r.amm_macs << "," << r.block_macs << "," << r.block_param_count
     << ",,,,,,,,\n";
  os << "total,model,,,,,,,," << r.total_macs << "," << r.total_param_count << ",,,,,,,,\n";
  if (r.measured_macs) os << "total,measured,,,,,,,," << *r.measured_macs << ",,,,,,,,,\n";
  return os.str();
}

}  // namespace edt::flops
