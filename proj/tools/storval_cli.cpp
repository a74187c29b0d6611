#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "storval/config.hpp"
#include "storval/evaluation.hpp"
#include "storval/io.hpp"
#include "storval/markov.hpp"
#include "storval/priceseries.hpp"
#include "storval/sddp.hpp"
#include "storval/storage.hpp"

namespace fs = std::filesystem;
using namespace storval;
using io::json;

namespace {

struct Overrides {
  std::string config;
  std::optional<int> quadrature_points;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dump_lp;
};

/// Configuration with overrides applied plus the provenance stamp.
struct Context {
  RunConfig cfg;
  io::Provenance provenance;
  std::string config_arg;
};

Context load(const Overrides& o) {
  Context ctx;
  ctx.config_arg = o.config;
  ctx.cfg = load_config(o.config);
  RunConfig& cfg = ctx.cfg;
  std::string salt;
  if (o.quadrature_points) {
    if (*o.quadrature_points < 1 || *o.quadrature_points > kMaxQuadraturePoints) {
      throw ValidationError("--quadrature-points: must lie in [1, " + std::to_string(kMaxQuadraturePoints) + "]");
    }
    cfg.quadrature_points = *o.quadrature_points;
    salt += "|N=" + std::to_string(*o.quadrature_points);
  }
  if (o.iterations) {
    if (*o.iterations < 1) throw ValidationError("--iterations: must be at least 1");
    cfg.train.iterations = *o.iterations;
    salt += "|iterations=" + std::to_string(*o.iterations);
  }
  if (o.seed) {
    cfg.train.seed = *o.seed;
    salt += "|seed=" + std::to_string(*o.seed);
  }
  if (o.out) cfg.output = *o.out;
  ctx.provenance.config_hash = io::fnv1a_hex(cfg.text + salt);
  ctx.provenance.seed = cfg.train.seed;
  return ctx;
}

struct Model {
  OUParams params;
  std::vector<double> mean_curve;
};

Model load_model(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.model) return {cfg.model->params, cfg.model->mean_curve};
  const fs::path path = cfg.output / "calibration.json";
  if (!fs::exists(path)) {
    throw ValidationError("calibration artifacts not found at " + path.string() + "; run `storval calibrate --config " +
                          ctx.config_arg + "` first or add a model block to the configuration");
  }
  const io::Calibration cal = io::calibration_from_json(io::parse_json_file(path));
  if (cal.mean_curve.size() != static_cast<std::size_t>(cfg.horizon()) + 1) {
    throw ValidationError(path.string() + ": mean_curve has " + std::to_string(cal.mean_curve.size()) +
                          " values but the horizon needs " + std::to_string(cfg.horizon() + 1) +
                          "; rerun `storval calibrate`");
  }
  return {cal.params, cal.mean_curve};
}

MarkovChain make_chain(const RunConfig& cfg, const OUParams& params) {
  return build_chain(params, cfg.quadrature_points, cfg.horizon(), cfg.xi0, cfg.sampling);
}

void write(const fs::path& path, const std::string& content) {
  io::atomic_write(path, content);
  std::cout << "wrote " << path.string() << "\n";
}

CutPool load_cuts(const Context& ctx, const MarkovChain& chain) {
  const fs::path path = ctx.cfg.output / "cuts.json";
  if (!fs::exists(path)) {
    throw ValidationError("trained cuts not found at " + path.string() + "; run `storval train --config " +
                          ctx.config_arg + "` first");
  }
  const json j = io::parse_json_file(path);
  if (j.is_object() && j.contains("provenance") &&
      j["provenance"].value("config_hash", "") != ctx.provenance.config_hash) {
    std::cerr << "warning: " << path.string() << " was trained with a different configuration\n";
  }
  return io::cuts_from_json(j, chain, 2);
}

// ---- commands ---------------------------------------------------------------

int cmd_calibrate(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (!cfg.data_path) throw ValidationError("config: data.prices: required by calibrate");
  const PriceSeries series = load_prices(cfg.data_path->string(), cfg.columns);
  const Decomposition dec = decompose(series);
  const auto days = daily_series(series, dec.profile, cfg.daily);

  std::size_t first = 0;
  if (cfg.start_date) {
    const auto day = calendar::parse_day(*cfg.start_date);
    while (first < days.size() && days[first].day != day) ++first;
    if (first == days.size()) throw ValidationError("config: calibration.start_date: " + *cfg.start_date + " is not in the data");
  }
  const std::size_t needed = static_cast<std::size_t>(cfg.horizon()) + 1;
  if (days.size() - first < needed) {
    throw ValidationError("config: horizon: the data holds " + std::to_string(days.size() - first) +
                          " days from the start date but " + std::to_string(needed) + " are needed");
  }

  io::Calibration cal;
  cal.profile = dec.profile;
  cal.start_date = calendar::format_day(days[first].day);
  for (std::size_t k = 0; k < needed; ++k) cal.mean_curve.push_back(days[first + k].mean);
  // A degenerate regression is a property of the data, not of the inputs'
  // form, so it is reported as a runtime failure.
  try {
    const OUFit hourly = fit_ou(dec.residuals);
    if (cfg.granularity == OuGranularity::Hourly) {
      cal.params = hourly.params;
      cal.warning = hourly.warning;
    } else {
      std::vector<double> anchors;
      for (const auto& d : days) anchors.push_back(d.residual);
      const OUFit daily = fit_ou(anchors);
      cal.params = daily.params;
      cal.warning = daily.warning;
      cal.hourly = hourly.params;
    }
  } catch (const ValidationError& e) {
    throw NumericalError(e.what());
  }
  write(cfg.output / "calibration.json", io::dump(io::to_json(cal, ctx.provenance)));
  std::cout << "a = " << io::number(cal.params.a) << ", sigma = " << io::number(cal.params.sigma) << " ("
            << (cfg.granularity == OuGranularity::Daily ? "daily" : "hourly") << ")\n";
  if (cal.warning) std::cerr << "warning: " << *cal.warning << "\n";
  return 0;
}

int cmd_discretize(const Context& ctx) {
  const Model m = load_model(ctx);
  const MarkovChain chain = make_chain(ctx.cfg, m.params);
  write(ctx.cfg.output / "chain.json", io::dump(io::to_json(chain, ctx.provenance)));
  return 0;
}

void dump_lps(const fs::path& dir, const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools,
              const RunConfig& cfg) {
  fs::create_directories(dir);
  EngineOptions engine = cfg.train.engine;
  std::size_t count = 0;
  engine.lp_observer = [&](int t, std::size_t node, const lp::LinearProgram& program) {
    std::ostringstream os;
    const std::string name = "t" + std::to_string(t) + "_node" + std::to_string(node) + "_" + std::to_string(count++);
    lp::write_lp(os, program, name);
    io::atomic_write(dir / (name + ".lp"), os.str());
  };
  (void)forward_pass(spec, chain, pools, cfg.storage.initial_state(), cfg.train.seed, engine);
  std::cout << "wrote " << count << " stage LPs to " << dir.string() << "\n";
}

io::Valuation valuation_of(const StorageSpec& s, double phi) {
  io::Valuation v;
  v.phi = phi;
  v.psi = baseline_value(s);
  v.price = indifference_price_closed(v.phi, v.psi, s.rho, s.interest, s.horizon);
  v.rho = s.rho;
  v.horizon = s.horizon;
  v.interest = s.interest;
  return v;
}

int cmd_train(const Context& ctx, const std::optional<std::string>& dump_dir) {
  const RunConfig& cfg = ctx.cfg;
  const Model m = load_model(ctx);
  const MarkovChain chain = make_chain(cfg, m.params);
  const StorageSolution sol = solve_storage(cfg.storage, chain, m.mean_curve, cfg.train);

  write(cfg.output / "cuts.json", io::dump(io::to_json(sol.pools, ctx.provenance)));
  write(cfg.output / "report.csv", io::report_csv(sol.report, ctx.provenance));
  write(cfg.output / "valuation.json", io::dump(io::to_json(valuation_of(cfg.storage, sol.phi), ctx.provenance)));
  if (dump_dir) dump_lps(*dump_dir, sol.spec, chain, sol.pools, cfg);

  std::cout << "iterations: " << sol.report.iterations.size() << (sol.report.stalled ? " (stalled)" : "") << "\n"
            << "lower bound: " << io::number(sol.phi) << "\n"
            << "price: " << io::number(sol.price) << " EUR\n";
  return 0;
}

int cmd_value(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Model m = load_model(ctx);
  const MarkovChain chain = make_chain(cfg, m.params);
  const CutPool pools = load_cuts(ctx, chain);
  const io::Valuation v = valuation_of(cfg.storage, lower_bound(pools, cfg.storage.initial_state()));
  write(cfg.output / "valuation.json", io::dump(io::to_json(v, ctx.provenance)));
  std::cout << "phi: " << io::number(v.phi) << "\npsi: " << io::number(v.psi) << "\nprice: " << io::number(v.price)
            << " EUR\n";
  return 0;
}

std::string rho_tag(double rho) { return "rho" + io::number(rho); }

int cmd_simulate(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Model m = load_model(ctx);
  const MarkovChain chain = make_chain(cfg, m.params);
  const CutPool trained = load_cuts(ctx, chain);

  SimulationOptions so;
  so.mode = cfg.mode;
  so.scenarios = cfg.scenarios;
  so.seed = cfg.train.seed;
  so.keep_traces = false;
  so.engine = cfg.train.engine;

  json summary = json::array();
  for (double rho : cfg.simulation_rhos) {
    StorageSpec s = cfg.storage;
    s.rho = rho;
    StageProblemSpec spec = build_spec(s, chain, m.mean_curve);
    CutPool pools = trained;
    if (rho != cfg.storage.rho) {
      std::cout << "training for rho = " << io::number(rho) << "\n";
      StorageSolution sol = solve_storage(s, chain, m.mean_curve, cfg.train);
      spec = std::move(sol.spec);
      pools = std::move(sol.pools);
    }
    const SimulationResult res = simulate(s, spec, chain, pools, m.mean_curve, m.params, so);
    const auto& w = res.summary.wealth;
    write(cfg.output / ("wealth_" + rho_tag(rho) + ".csv"), io::wealth_csv(w, ctx.provenance));
    if (w.size() >= 2) {
      write(cfg.output / ("kde_" + rho_tag(rho) + ".csv"), io::kde_csv(kde(w, cfg.kde_bandwidth), ctx.provenance));
    }
    const double lb = lower_bound(pools, s.initial_state());
    const double p01 = quantile(w, 0.01);
    summary.push_back({{"rho", rho},
                       {"mode", to_string(cfg.mode)},
                       {"scenarios", res.summary.n},
                       {"lower_bound", lb},
                       {"mean_cost", res.summary.mean_cost},
                       {"se_cost", res.summary.se_cost},
                       {"mean_wealth", res.summary.mean_wealth()},
                       {"p01_wealth", p01}});
    std::cout << "rho " << io::number(rho) << ": mean cost " << io::number(res.summary.mean_cost) << " (SE "
              << io::number(res.summary.se_cost) << "), lower bound " << io::number(lb) << ", 1% wealth "
              << io::number(p01) << "\n";
  }
  write(cfg.output / "simulation.json",
        io::dump({{"runs", summary}, {"provenance", ctx.provenance.to_json()}}));
  return 0;
}

int cmd_sweep(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.sweeps.empty()) throw ValidationError("config: sweeps: no sweep blocks defined");
  const Model m = load_model(ctx);
  std::map<std::string, int> seen;
  for (const SweepBlock& block : cfg.sweeps) {
    SweepSettings st;
    st.storage = cfg.storage;
    st.params = m.params;
    st.mean_curve = m.mean_curve;
    st.xi0 = cfg.xi0;
    st.quadrature_points = cfg.quadrature_points;
    st.train = cfg.train;
    st.rhos = block.rhos;
    st.se_scenarios = block.se_scenarios;
    const auto rows = sweep(st, block.parameter, block.values);

    std::string name = std::string("sweep_") + to_string(block.parameter);
    if (const int k = seen[name]++; k > 0) name += "_" + std::to_string(k + 1);
    write(cfg.output / (name + ".csv"), io::sweep_csv(rows, ctx.provenance));
    for (const auto& r : rows) {
      std::cout << to_string(block.parameter) << " = " << io::number(r.value) << ", rho = " << io::number(r.rho)
                << ": price " << io::number(r.price) << " EUR\n";
    }
  }
  return 0;
}

std::optional<json> try_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return io::parse_json_file(p);
}

int cmd_report(const Context& ctx) {
  const fs::path dir = ctx.cfg.output;
  if (!fs::is_directory(dir)) {
    throw ValidationError("output directory " + dir.string() + " does not exist; run `storval train --config " +
                          ctx.config_arg + "` first");
  }
  std::ostringstream md;
  md << "# Storage valuation report\n\n"
     << "- configuration: `" << ctx.config_arg << "`\n"
     << "- config hash: `" << ctx.provenance.config_hash << "`\n"
     << "- seed: " << ctx.provenance.seed << "\n"
     << "- version: " << ctx.provenance.version << "\n\n";

  if (fs::exists(dir / "report.csv")) {
    std::ifstream in(dir / "report.csv");
    std::string line, last;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("iteration", 0) == 0) continue;
      last = line;
      ++rows;
    }
    md << "## Training\n\n";
    if (rows > 0) {
      const auto cells = detail::split_csv_line(last);
      md << "| iterations | lower bound | last forward cost | cuts |\n|---|---|---|---|\n"
         << "| " << rows << " | " << cells.at(1) << " | " << cells.at(2) << " | " << cells.at(3) << " |\n\n";
    } else {
      md << "report.csv holds no iterations\n\n";
    }
  }
  if (const auto v = try_json(dir / "valuation.json")) {
    md << "## Valuation\n\n| phi | psi | price (EUR) | rho | T | r |\n|---|---|---|---|---|---|\n"
       << "| " << io::number(v->at("phi").get<double>()) << " | " << io::number(v->at("psi").get<double>()) << " | "
       << io::number(v->at("price_eur").get<double>()) << " | " << io::number(v->at("rho").get<double>()) << " | "
       << v->at("T").get<int>() << " | " << io::number(v->at("r").get<double>()) << " |\n\n";
  }
  if (const auto s = try_json(dir / "simulation.json")) {
    md << "## Simulation\n\n| rho | mode | scenarios | mean cost | SE | lower bound | mean wealth | 1% wealth |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : s->at("runs")) {
      md << "| " << io::number(r.at("rho").get<double>()) << " | " << r.at("mode").get<std::string>() << " | "
         << r.at("scenarios").get<std::size_t>() << " | " << io::number(r.at("mean_cost").get<double>()) << " | "
         << io::number(r.at("se_cost").get<double>()) << " | " << io::number(r.at("lower_bound").get<double>())
         << " | " << io::number(r.at("mean_wealth").get<double>()) << " | "
         << io::number(r.at("p01_wealth").get<double>()) << " |\n";
    }
    md << "\n";
  }

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "report.md") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  md << "## Files\n\n| file | bytes |\n|---|---|\n";
  for (const auto& f : files) md << "| " << f.filename().string() << " | " << fs::file_size(f) << " |\n";

  io::atomic_write(dir / "report.md", md.str());
  std::cout << md.str();
  return 0;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "YAML run configuration")->required();
  cmd->add_option("--quadrature-points", o.quadrature_points, "override discretization.quadrature_points");
  cmd->add_option("--iterations", o.iterations, "override training.iterations");
  cmd->add_option("--seed", o.seed, "override training.seed");
  cmd->add_option("--out", o.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Electricity storage valuation by Markov-chain SDDP"};
  app.set_version_flag("--version", std::string(io::kVersion));
  app.require_subcommand(1);

  Overrides o;
  std::map<std::string, CLI::App*> cmds;
  const std::vector<std::pair<std::string, std::string>> specs = {
      {"calibrate", "fit the seasonal profile and residual process to price data"},
      {"discretize", "build the Markov chain and write chain.json"},
      {"train", "train cuts; writes cuts.json, report.csv and valuation.json"},
      {"value", "price the storage from trained cuts"},
      {"simulate", "evaluate the policy on simulated paths; writes wealth and KDE tables"},
      {"sweep", "retrain and price over the configured parameter sweeps"},
      {"report", "summarize the output directory as markdown"}};
  for (const auto& [name, help] : specs) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    cmds[name] = cmd;
  }
  cmds["train"]->add_option("--dump-lp", o.dump_lp, "write the stage LPs of one forward pass to this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Context ctx = load(o);
    if (cmds["calibrate"]->parsed()) return cmd_calibrate(ctx);
    if (cmds["discretize"]->parsed()) return cmd_discretize(ctx);
    if (cmds["train"]->parsed()) return cmd_train(ctx, o.dump_lp);
    if (cmds["value"]->parsed()) return cmd_value(ctx);
    if (cmds["simulate"]->parsed()) return cmd_simulate(ctx);
    if (cmds["sweep"]->parsed()) return cmd_sweep(ctx);
    return cmd_report(ctx);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
