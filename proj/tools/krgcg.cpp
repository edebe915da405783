// Command-line front end: solve configured experiments, re-check stored
// results, evaluate KR norms and dump certificate grids.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "krgcg/experiment.hpp"
#include "krgcg/io.hpp"
#include "krgcg/kr_oracle.hpp"

namespace {

using krgcg::ExperimentConfig;
using nlohmann::json;

int solve(const std::string& path, const krgcg::Overrides& o) {
  const ExperimentConfig c = krgcg::apply_overrides(krgcg::config_from_json(krgcg::io::read_json_file(path)), o);
  if (c.dim() == 1) {
    const auto run = krgcg::run_experiment_dim<1>(c);
    std::cout << run.summary << '\n';
    return run.exit_code;
  }
  const auto run = krgcg::run_experiment_dim<2>(c);
  std::cout << run.summary << '\n';
  return run.exit_code;
}

struct Stored {
  ExperimentConfig config;
  json doc;
};

Stored load_result(const std::string& path, const krgcg::Overrides& o) {
  Stored s;
  s.doc = krgcg::io::read_json_file(path);
  if (!s.doc.is_object() || !s.doc.contains("config")) {
    throw krgcg::Error(krgcg::ErrorCode::config_invalid, path + ": result has no echoed config");
  }
  s.config = krgcg::apply_overrides(krgcg::config_from_json(s.doc["config"]), o);
  return s;
}

template <int Dim>
int check_dim(const Stored& s, std::optional<double> tol) {
  const auto prob = krgcg::build_problem<Dim>(s.config);
  const auto result = krgcg::result_from_json<Dim>(s.doc, s.config.kr);
  const auto reports = krgcg::make_reports(prob, result, tol.value_or(s.config.first_order_tol()));
  std::cout << krgcg::reports_to_json(reports).dump(2) << '\n';
  return reports.first_order.pass ? krgcg::exit_ok : krgcg::exit_report_failure;
}

template <int Dim>
int certify_dim(const Stored& s, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto prob = krgcg::build_problem<Dim>(s.config);
  const auto result = krgcg::result_from_json<Dim>(s.doc, s.config.kr);
  const auto [q, psi] = krgcg::certificate_csv(prob, result, s.config.output.q_grid, s.config.output.psi_grid);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw krgcg::Error(krgcg::ErrorCode::io_error, "cannot create " + out_dir);
  krgcg::io::write_text_file((fs::path(out_dir) / "q.csv").string(), q);
  krgcg::io::write_text_file((fs::path(out_dir) / "psi.csv").string(), psi);
  std::cout << "wrote " << (fs::path(out_dir) / "q.csv").string() << " and " << (fs::path(out_dir) / "psi.csv").string()
            << '\n';
  return krgcg::exit_ok;
}

template <int Dim>
int kr_norm_dim(const json& doc, const krgcg::KRParams& params) {
  const auto mu = krgcg::io::measure_from_json<Dim>(doc);
  std::cout << krgcg::io::kr_norm_to_json<Dim>(krgcg::kr_norm<Dim>(mu, params)).dump(2) << '\n';
  return krgcg::exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse measure reconstruction with Kantorovich-Rubinstein regularization"};
  app.require_subcommand(1);

  krgcg::Overrides overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  int max_iter = 0;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed for the maximizer perturbations");
    sub->add_option("--epsilon", epsilon, "stopping tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-iter", max_iter, "maximum number of outer iterations")->check(CLI::NonNegativeNumber);
  };

  std::string config_path;
  auto* solve_cmd = app.add_subcommand("solve", "run an experiment config and write all artifacts");
  solve_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
  add_overrides(solve_cmd);

  std::string result_path;
  std::optional<double> tol;
  auto* check_cmd = app.add_subcommand("check", "print first-order and assumption reports for a result");
  check_cmd->add_option("result", result_path, "result.json written by solve")->required();
  check_cmd->add_option("--tol", tol, "first-order tolerance (default 10 * epsilon)");
  add_overrides(check_cmd);

  std::string measure_path;
  krgcg::KRParams params;
  auto* kr_cmd = app.add_subcommand("kr-norm", "evaluate the KR norm of a measure");
  kr_cmd->add_option("measure", measure_path, "measure JSON: [{\"x\": [..], \"w\": w}, ...]")->required();
  kr_cmd->add_option("--alpha", params.alpha, "creation cost")->required();
  kr_cmd->add_option("--beta", params.beta, "fixed transport cost")->required();
  kr_cmd->add_option("--p", params.p, "distance exponent in (0, 1]")->required();

  auto* certify_cmd = app.add_subcommand("certify", "write q.csv and psi.csv for a result");
  certify_cmd->add_option("result", result_path, "result.json written by solve")->required();
  add_overrides(certify_cmd);

  CLI11_PARSE(app, argc, argv);

  auto collect = [&](CLI::App* sub) {
    if (sub->count("--out")) overrides.out = out_dir;
    if (sub->count("--seed")) overrides.seed = seed;
    if (sub->count("--epsilon")) overrides.epsilon = epsilon;
    if (sub->count("--max-iter")) overrides.max_iter = max_iter;
  };

  try {
    if (solve_cmd->parsed()) {
      collect(solve_cmd);
      return solve(config_path, overrides);
    }
    if (check_cmd->parsed()) {
      collect(check_cmd);
      const Stored s = load_result(result_path, overrides);
      return s.config.dim() == 1 ? check_dim<1>(s, tol) : check_dim<2>(s, tol);
    }
    if (certify_cmd->parsed()) {
      collect(certify_cmd);
      const std::string dir =
          overrides.out ? *overrides.out : std::filesystem::path(result_path).parent_path().string();
      const Stored s = load_result(result_path, {});
      const std::string target = dir.empty() ? "." : dir;
      return s.config.dim() == 1 ? certify_dim<1>(s, target) : certify_dim<2>(s, target);
    }
    if (kr_cmd->parsed()) {
      params.validate();
      const json doc = krgcg::io::read_json_file(measure_path);
      const std::size_t dim = doc.is_array() && !doc.empty() && doc[0].is_object() && doc[0].contains("x") &&
                                      doc[0]["x"].is_array()
                                  ? doc[0]["x"].size()
                                  : 1;
      if (dim == 2) return kr_norm_dim<2>(doc, params);
      return kr_norm_dim<1>(doc, params);
    }
  } catch (const krgcg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return krgcg::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return krgcg::exit_error;
  }
  return krgcg::exit_error;
}
