// trom: simulate, estimate, predict and match with the threshold rank-order model.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trom/estimation.hpp"
#include "trom/io.hpp"
#include "trom/matching.hpp"
#include "trom/prediction.hpp"
#include "trom/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trom;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNotConverged = 2, kInternal = 3 };

struct Args {
  std::string config, data, out, params, market, assignment;
  std::string estimator = "threshold";
  bool latent = false;
};

fs::path output_dir(const Args& a) {
  if (const char* env = std::getenv("TROM_OUTPUT_DIR"); env && *env) return env;
  if (a.out.empty()) throw io::SchemaError("no output directory (use --out or TROM_OUTPUT_DIR)");
  return a.out;
}

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io::SchemaError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_file(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw io::SchemaError("cannot write " + p.string());
  return os;
}

void write_json(const fs::path& p, const json& j) {
  auto os = open_file(p);
  os << j.dump(2) << '\n';
}

Estimator parse_estimator(const std::string& s) {
  if (s == "threshold") return Estimator::threshold;
  if (s == "urn") return Estimator::urn;
  throw io::SchemaError("--estimator must be 'threshold' or 'urn'");
}

json design_to_json(const SimDesign& d) {
  json j;
  j["n"] = d.n;
  j["j"] = d.j;
  j["beta"] = std::vector<double>(d.beta.data(), d.beta.data() + d.beta.size());
  j["ranges"] = d.covariate_ranges;
  if (d.latent) {
    j["latent"] = {{"gamma", std::vector<double>(d.latent->gamma.data(),
                                                 d.latent->gamma.data() + d.latent->gamma.size())},
                   {"sigma2", d.latent->sigma2}};
  } else {
    j["latent"] = nullptr;
  }
  j["reps"] = d.reps;
  return j;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  const std::uint64_t seed = cfg.require_seed("simulate");
  if (!cfg.design) throw io::SchemaError("config: simulate needs a design block");
  const SimDesign& d = *cfg.design;
  const fs::path root = prepare_dir(output_dir(a));
  json reps = json::array();
  for (std::size_t r = 0; r < d.reps; ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "rep_%04zu", r + 1);
    const fs::path dir = d.reps > 1 ? prepare_dir(root / name) : root;
    const SimulatedData sim = generate(d, r);
    io::write_dataset(dir, sim.data);
    if (cfg.debug) io::write_eps(dir / "eps.csv", sim);
    reps.push_back(d.reps > 1 ? std::string(name) : std::string("."));
  }
  json manifest;
  manifest["spec_version"] = io::kSchemaVersion;
  manifest["seed"] = seed;
  manifest["design"] = design_to_json(d);
  manifest["replications"] = reps;
  write_json(root / "manifest.json", manifest);
  return kOk;
}

int cmd_fit(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  cfg.require_seed("fit");
  const auto files = io::read_dataset(a.data);
  const Estimator est = parse_estimator(a.estimator);
  const FitResult fit = est == Estimator::urn ? fit_urn(files.data, cfg.mle) : fit_mle(files.data, cfg.mle);
  json out = io::fit_to_json(fit, files.data);
  out["estimator"] = a.estimator;
  write_json(prepare_dir(output_dir(a)) / "fit.json", out);
  return fit.converged ? kOk : kNotConverged;
}

json em_trace_json(const EmFitResult& r) {
  json t = json::array();
  for (const auto& it : r.trace)
    t.push_back({{"iter", it.iter},
                 {"observed_loglik", it.observed_loglik},
                 {"delta", it.delta},
                 {"guard_shrink", it.guard_shrink}});
  return t;
}

int cmd_em_fit(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  cfg.require_seed("em-fit");
  const auto files = io::read_dataset(a.data);
  const EmFitResult r = em_fit(files.data, cfg.em);
  json out = io::fit_to_json(r.fit, files.data);
  out["estimator"] = "threshold-em";
  out["draws"] = cfg.em.draws;
  out["trace"] = em_trace_json(r);
  write_json(prepare_dir(output_dir(a)) / "fit.json", out);
  return r.fit.converged ? kOk : kNotConverged;
}

int cmd_bootstrap(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  const std::uint64_t seed = cfg.require_seed("bootstrap");
  const auto files = io::read_dataset(a.data);
  const ChoiceDataset& data = files.data;

  FitResult point;
  Refit refit;
  if (a.latent) {
    point = em_fit(data, cfg.em).fit;
    refit = [&cfg, &point](const ChoiceDataset& sample) {
      EmConfig c = cfg.em;
      c.initial = point.params;
      return em_fit(sample, c).fit;
    };
  } else {
    point = fit_mle(data, cfg.mle);
    refit = [&cfg, &point](const ChoiceDataset& sample) {
      MleConfig c = cfg.mle;
      c.initial = point.params.beta;
      c.starts = cfg.bootstrap.random_starts;
      return fit_mle(sample, c);
    };
  }
  const BootstrapResult boot = bootstrap_ci(data, point, refit, cfg.bootstrap.replicates,
                                            cfg.bootstrap.level, seed, cfg.threads);
  json out = io::fit_to_json(point, data);
  out["estimator"] = a.latent ? "threshold-em" : "threshold";
  io::add_intervals(out, boot);
  out["bootstrap"]["level"] = cfg.bootstrap.level;
  json reps = json::array();
  for (Eigen::Index r = 0; r < boot.replicates.rows(); ++r) {
    const Eigen::VectorXd row = boot.replicates.row(r).transpose();
    reps.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  out["replicates"] = reps;
  write_json(prepare_dir(output_dir(a)) / "bootstrap.json", out);
  return point.converged ? kOk : kNotConverged;
}

StudyConfig study_config(const io::RunConfig& cfg) {
  StudyConfig s;
  s.mle = cfg.mle;
  s.em = cfg.em;
  s.threads = cfg.threads;
  return s;
}

void write_timing(const fs::path& p, const ErrorTable& t) {
  auto os = open_file(p);
  os << "rep,seconds\n";
  for (std::size_t r = 0; r < t.seconds_per_rep.size(); ++r)
    os << r + 1 << ',' << io::format_double(t.seconds_per_rep[r]) << '\n';
}

int run_study(const Args& a, bool paired) {
  const io::RunConfig cfg = io::read_config(a.config);
  cfg.require_seed(paired ? "compare" : "mc-study");
  if (!cfg.design) throw io::SchemaError("config: study needs a design block");
  const ErrorTable t = paired ? compare_study(*cfg.design, study_config(cfg))
                              : mc_study(*cfg.design, parse_estimator(a.estimator), study_config(cfg));
  const fs::path dir = prepare_dir(output_dir(a));
  {
    auto os = open_file(dir / (paired ? "compare.csv" : "errors.csv"));
    write_error_table(os, t);
  }
  // Wall-clock times vary between runs and live apart from the error table.
  write_timing(dir / "timing.csv", t);
  std::cerr << t.reps << " replications, " << t.failures << " failed\n";
  return kOk;
}

// ---------------------------------------------------------------------------

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw io::SchemaError("missing params file " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw io::SchemaError(p.string() + ": " + e.what());
  }
}

int cmd_predict(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  if (a.params.empty()) throw io::SchemaError("predict needs --params");
  const json results = read_json_file(a.params);
  const ThresholdParams params = io::read_params(a.params);
  const auto files = io::read_dataset(a.data);
  const ChoiceDataset& data = files.data;
  params.check(data);
  const fs::path dir = prepare_dir(output_dir(a));

  {
    auto os = open_file(dir / "popularity.csv");
    io::write_csv_row(os, {"school_id", "expected_listers"});
    for (const auto& [school, v] : school_popularity(data, params))
      io::write_csv_row(os, {std::to_string(school), io::format_double(v)});
  }
  PredictMode mode;
  mode.tau = cfg.predict.tau;
  {
    auto len = open_file(dir / "expected_rol.csv");
    auto rols = open_file(dir / "predicted_rols.csv");
    io::write_csv_row(len, {"student_id", "expected_length", "predicted_length"});
    io::write_csv_row(rols, {"student_id", "rank", "school_id"});
    for (std::size_t i = 0; i < data.n_students(); ++i) {
      const Student& s = data.students[i];
      const NetUtilityIndex w = net_utility(data, i, params, plug_in_cost(s, params));
      const RankOrderedList rol = predicted_rol(s, w, mode);
      io::write_csv_row(len, {std::to_string(s.id), io::format_double(expected_rol_length(w)),
                              std::to_string(rol.length())});
      for (std::size_t r = 0; r < rol.length(); ++r)
        io::write_csv_row(rols, {std::to_string(s.id), std::to_string(r + 1),
                                 std::to_string(rol.ranked[r])});
    }
  }
  if (cfg.predict.margin) {
    Eigen::MatrixXd reps;
    const Eigen::MatrixXd* band = nullptr;
    if (results.contains("replicates") && !results.at("replicates").empty()) {
      const auto rows = results.at("replicates").get<std::vector<std::vector<double>>>();
      reps.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          reps(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      band = &reps;
    }
    const auto points = margin_grid(data, params, *cfg.predict.margin, band);
    auto os = open_file(dir / "margin.csv");
    io::write_csv_row(os, {"profile", cfg.predict.margin->varying, "prob", "lo", "hi"});
    for (const auto& p : points)
      io::write_csv_row(os, {p.profile, io::format_double(p.value), io::format_double(p.prob),
                             p.lo ? io::format_double(*p.lo) : "", p.hi ? io::format_double(*p.hi) : ""});
  }
  return kOk;
}

std::uint64_t lottery_seed(const io::RunConfig& cfg, const char* command) {
  return cfg.lottery_seed ? *cfg.lottery_seed : cfg.require_seed(command);
}

json assignment_summary(const Assignment& a, const Market& m) {
  std::map<std::string, std::size_t> via;
  for (Via v : a.via) ++via[to_string(v)];
  json j;
  j["students"] = m.students.size();
  j["rounds"] = a.rounds;
  j["via"] = via;
  j["duncan"] = duncan_index(a, m);
  return j;
}

void save_assignment(const fs::path& p, const Assignment& a, const Market& m) {
  auto os = open_file(p);
  io::write_assignment(os, a, m);
}

int cmd_da(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  const Market market = io::read_market(a.market, lottery_seed(cfg, "da"));
  const Assignment final = fallback_assign(run_da(market), market);
  const auto problems = check_assignment(final, market);
  if (!problems.empty()) throw std::logic_error("DA produced an invalid assignment: " + problems.front());
  const fs::path dir = prepare_dir(output_dir(a));
  save_assignment(dir / "assignment.csv", final, market);
  write_json(dir / "summary.json", assignment_summary(final, market));
  return kOk;
}

int cmd_counterfactual(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  if (!cfg.counterfactual) throw io::SchemaError("config: counterfactual needs a counterfactual block");
  if (a.params.empty()) throw io::SchemaError("counterfactual needs --params");
  const ThresholdParams params = io::read_params(a.params);
  const auto files = io::read_dataset(a.data);
  params.check(files.data);
  const Market market = io::read_market(a.market, lottery_seed(cfg, "counterfactual"));
  PredictMode mode;
  mode.tau = cfg.predict.tau;
  const CounterfactualResult r =
      counterfactual_run(files.data, params, cfg.counterfactual->edit, market, mode);
  const fs::path dir = prepare_dir(output_dir(a));
  save_assignment(dir / "baseline_assignment.csv", r.baseline_assignment, market);
  save_assignment(dir / "counterfactual_assignment.csv", r.counterfactual_assignment, market);
  json j;
  j["covariate"] = cfg.counterfactual->edit.covariate;
  j["value"] = cfg.counterfactual->edit.value;
  j["duncan_baseline"] = r.baseline;
  j["duncan_counterfactual"] = r.counterfactual;
  j["delta"] = r.counterfactual - r.baseline;
  write_json(dir / "summary.json", j);
  return kOk;
}

int cmd_check(const Args& a) {
  const io::RunConfig cfg = io::read_config(a.config);
  const Market market = io::read_market(a.market, lottery_seed(cfg, "check"));
  const Assignment asg = io::read_assignment(a.assignment, market);
  const auto problems = check_assignment(asg, market);
  for (const auto& p : problems) std::cout << "violation: " << p << '\n';
  // Stability only concerns the DA stage; fallback placements sit outside the lists.
  Assignment da = asg;
  for (std::size_t i = 0; i < da.via.size(); ++i)
    if (da.via[i] != Via::rol) {
      da.match[i].reset();
      da.via[i] = Via::unassigned;
      da.rank_position[i] = 0;
    }
  const auto blocking = blocking_pairs(market, da);
  std::cout << "capacity/consistency violations: " << problems.size() << '\n'
            << "blocking pairs: " << blocking.size() << '\n';
  return problems.empty() && blocking.empty() ? kOk : kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold rank-order model: simulation, estimation, prediction and matching"};
  app.require_subcommand(1);
  Args args;

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", args.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", args.out, "output directory (TROM_OUTPUT_DIR overrides)");
    return sub;
  };
  auto data_opt = [&](CLI::App* s) {
    s->add_option("-d,--data", args.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  };
  auto market_opt = [&](CLI::App* s) {
    s->add_option("-m,--market", args.market, "market directory")->required()->check(CLI::ExistingDirectory);
  };

  CLI::App* simulate = add("simulate", "generate synthetic datasets from a design");
  CLI::App* fit = add("fit", "maximum likelihood without latent cost");
  data_opt(fit);
  fit->add_option("-e,--estimator", args.estimator, "threshold or urn");
  CLI::App* em = add("em-fit", "Monte Carlo EM with a latent cost");
  data_opt(em);
  CLI::App* boot = add("bootstrap", "percentile bootstrap intervals");
  data_opt(boot);
  boot->add_flag("--latent", args.latent, "bootstrap the EM fit");
  CLI::App* study = add("mc-study", "Monte Carlo error table for one estimator");
  study->add_option("-e,--estimator", args.estimator, "threshold or urn");
  CLI::App* compare = add("compare", "paired threshold vs urn error table");
  CLI::App* predict = add("predict", "popularity, expected lists and margin grids");
  data_opt(predict);
  predict->add_option("-p,--params", args.params, "results file with a params block")->required();
  CLI::App* da = add("da", "deferred acceptance with fallback");
  market_opt(da);
  CLI::App* cf = add("counterfactual", "segregation before and after a covariate edit");
  data_opt(cf);
  market_opt(cf);
  cf->add_option("-p,--params", args.params, "results file with a params block")->required();
  CLI::App* check = add("check", "validate an assignment against its market");
  market_opt(check);
  check->add_option("-a,--assignment", args.assignment, "assignment.csv")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(args);
    if (*fit) return cmd_fit(args);
    if (*em) return cmd_em_fit(args);
    if (*boot) return cmd_bootstrap(args);
    if (*study) return run_study(args, false);
    if (*compare) return run_study(args, true);
    if (*predict) return cmd_predict(args);
    if (*da) return cmd_da(args);
    if (*cf) return cmd_counterfactual(args);
    if (*check) return cmd_check(args);
  } catch (const io::SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const EstimationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
