#include "koopman/cli.hpp"

#include "koopman/decomp.hpp"
#include "koopman/dictionary.hpp"
#include "koopman/errors.hpp"
#include "koopman/experiments.hpp"
#include "koopman/forecast.hpp"
#include "koopman/sampling.hpp"
#include "koopman/spectral.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace koopman::cli {

namespace {

using nlohmann::json;

json load_json(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw InvalidInput(std::string(what) + ": cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string(what) + ": failed to parse " + path + ": " + e.what());
  }
  return j;
}

/// --dictionary accepts inline JSON or @file.
json dictionary_json(const std::string& arg) {
  if (!arg.empty() && arg[0] == '@') return load_json(arg.substr(1), "dictionary");
  try {
    return json::parse(arg);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("dictionary: failed to parse inline JSON: ") + e.what());
  }
}

int run_fit(const std::string& snapshots_path, const std::string& method_name, const std::string& dict_arg,
            const std::string& out_path) {
  sampling::SnapshotSet snaps = sampling::read_snapshots(snapshots_path);
  dictionary::DictionarySpec spec = dictionary::parse_dictionary_spec(dictionary_json(dict_arg));
  decomp::Method method = decomp::method_from_string(method_name);

  decomp::KoopmanModel model;
  if (method == decomp::Method::dmd || method == decomp::Method::pidmd) {
    if (spec.type != "linear")
      throw InvalidInput("fit: " + method_name + " uses the linear dictionary; pass {\"type\":\"linear\"}");
    model = method == decomp::Method::dmd ? decomp::dmd(snaps.X, snaps.Y, snaps.weights)
                                          : decomp::pidmd_unitary(snaps.X, snaps.Y, snaps.weights);
  } else {
    dictionary::Features f = dictionary::assemble_features(spec, snaps);
    dictionary::GramPair gp = dictionary::gram(f.psi_x, f.psi_y, f.weights);
    model = method == decomp::Method::mpedmd ? decomp::mpedmd(gp) : decomp::edmd(gp);
  }
  model.dict = spec;
  model.meta = snaps.meta;
  decomp::write_model(model, out_path);
  if (!model.eig_reliable)
    std::cerr << "fit: warning: eigendecomposition is ill-conditioned; eigenpairs flagged unreliable\n";
  return 0;
}

/// Coefficients of a named observable within the model's dictionary; falls
/// back to projecting samples of the observable when snapshots are provided.
CVec resolve_coefficients(const decomp::KoopmanModel& model, const std::string& observable,
                          const std::string& coeffs_path, const std::string& snapshots_path) {
  const Index n = model.size();
  if (!coeffs_path.empty()) {
    std::ifstream in(coeffs_path);
    if (!in) throw InvalidInput("spectrum: cannot open " + coeffs_path);
    CVec out(n);
    double re, im;
    for (Index j = 0; j < n; ++j) {
      if (!(in >> re >> im)) throw InvalidInput("spectrum: coefficient file needs N lines of 're im'");
      out(j) = Complex(re, im);
    }
    return out;
  }
  if (observable.empty()) throw InvalidInput("spectrum: need --observable or --coeffs");

  const auto& spec = model.dict;
  if (spec.type == "delay" && (observable == spec.observable || observable == "first")) {
    CVec out = CVec::Zero(n);
    out(0) = 1.0;  // the base observable is the first delay element
    return out;
  }
  if (spec.type == "fourier" && observable == "exp-itheta") {
    CVec out = CVec::Zero(n);
    out(spec.kmax + 1) = 1.0;  // k = 1 element
    return out;
  }
  if (spec.type == "linear" && observable.size() == 2 && observable[0] == 'x') {
    const Index j = observable[1] - '1';
    if (j < 0 || j >= n) throw InvalidInput("spectrum: coordinate out of range");
    CVec out = CVec::Zero(n);
    out(j) = 1.0;
    return out;
  }
  if (snapshots_path.empty())
    throw InvalidInput("spectrum: observable '" + observable +
                       "' is not a dictionary element; pass --snapshots to project it");
  sampling::SnapshotSet snaps = sampling::read_snapshots(snapshots_path);
  dictionary::Features f = dictionary::assemble_features(spec, snaps);
  dictionary::Observable g = dictionary::builtin_observable(observable);
  CMat samples(f.psi_x.rows(), 1);
  for (Index i = 0; i < samples.rows(); ++i) samples(i, 0) = g(snaps.X.row(i));
  dictionary::GramPair gp = dictionary::gram(f.psi_x, f.psi_y, f.weights);
  return forecast::project_observable(gp, f.psi_x, f.weights, samples).col(0);
}

int run_spectrum(const std::string& model_path, const std::string& observable,
                 const std::string& coeffs_path, const std::string& snapshots_path,
                 const std::string& out_path, const std::string& cdf_path, Index grid) {
  decomp::KoopmanModel model = decomp::read_model(model_path);
  CVec ghat = resolve_coefficients(model, observable, coeffs_path, snapshots_path);
  spectral::SpectralMeasure mu = spectral::scalar_measure(model, ghat);
  spectral::write_measure_csv(mu, out_path);
  if (!cdf_path.empty()) spectral::write_cdf_csv(mu, grid, cdf_path);
  return 0;
}

int run_predict(const std::string& model_path, const std::string& snapshots_path,
                const std::string& observable, const std::string& x0_arg, long steps,
                const std::string& out_path) {
  decomp::KoopmanModel model = decomp::read_model(model_path);
  sampling::SnapshotSet snaps = sampling::read_snapshots(snapshots_path);
  dictionary::Features f = dictionary::assemble_features(model.dict, snaps);
  dictionary::GramPair gp = dictionary::gram(f.psi_x, f.psi_y, f.weights);

  dictionary::Observable g = dictionary::builtin_observable(observable);
  CMat samples(f.psi_x.rows(), 1);
  for (Index i = 0; i < samples.rows(); ++i) samples(i, 0) = g(snaps.X.row(i));
  forecast::KMD kmd = forecast::build_kmd(model, gp, f.psi_x, f.weights, samples);

  RVec x0;
  {
    std::vector<double> vals;
    std::stringstream ss(x0_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    if (vals.empty()) throw InvalidInput("predict: --x0 must be comma-separated floats");
    x0 = Eigen::Map<const RVec>(vals.data(), static_cast<Index>(vals.size()));
  }
  if (!f.eval_row)
    throw InvalidInput(
        "predict: the dictionary cannot be evaluated at new states (delay dictionary without a known "
        "system in the snapshot metadata)");
  CVec row = forecast::eigfun_row(model, f.eval_row(x0));

  std::ofstream out(out_path);
  if (!out) throw InvalidInput("predict: cannot write " + out_path);
  out << "n,re,im\n";
  char buf[96];
  for (long n = 0; n <= steps; ++n) {
    const Complex p = forecast::predict(kmd, row, n)(0);
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", n, p.real(), p.imag());
    out << buf;
  }
  return 0;
}

int run_impl(const std::vector<std::string>& args) {
  CLI::App app{"koopman-mp: measure-preserving Koopman spectral analysis"};
  app.require_subcommand(1);

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "run a catalog experiment from a JSON config");
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool check = false, print_schema = false;
  exp_cmd->add_option("--config", config_path, "experiment config (JSON)");
  exp_cmd->add_option("--out", out_dir, "output directory (default: config output_dir or '.')");
  exp_cmd->add_option("--seed", seed, "override the config seed");
  exp_cmd->add_option("--workers", workers, "concurrent sweep points")->check(CLI::PositiveNumber);
  exp_cmd->add_flag("--check", check, "exit 3 when an acceptance threshold fails");
  exp_cmd->add_flag("--schema", print_schema, "print the config schema and exit");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a Koopman matrix from snapshots");
  std::string snapshots_path, method = "mpedmd", dict_arg = R"({"type":"linear"})", model_out = "model.json";
  fit_cmd->add_option("--snapshots", snapshots_path, "snapshot file")->required();
  fit_cmd->add_option("--method", method, "dmd|edmd|pidmd|mpedmd");
  fit_cmd->add_option("--dictionary", dict_arg, "dictionary descriptor JSON (or @file)");
  fit_cmd->add_option("--out", model_out, "output model JSON");

  // spectrum
  auto* spec_cmd = app.add_subcommand("spectrum", "scalar spectral measure of a fitted model");
  std::string spec_model, spec_obs, spec_coeffs, spec_snaps, spec_out = "measure.csv", cdf_out;
  Index grid = 1000;
  spec_cmd->add_option("--model", spec_model, "model JSON")->required();
  spec_cmd->add_option("--observable", spec_obs, "builtin observable name");
  spec_cmd->add_option("--coeffs", spec_coeffs, "file with N lines 're im' of coefficients");
  spec_cmd->add_option("--snapshots", spec_snaps, "snapshots for projecting the observable");
  spec_cmd->add_option("--out", spec_out, "output measure CSV");
  spec_cmd->add_option("--cdf", cdf_out, "also write the cdf CSV here");
  spec_cmd->add_option("--grid", grid, "cdf grid points");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Koopman mode forecast of an observable");
  std::string pred_model, pred_snaps, pred_obs, pred_x0, pred_out = "prediction.csv";
  long steps = 100;
  pred_cmd->add_option("--model", pred_model, "model JSON")->required();
  pred_cmd->add_option("--snapshots", pred_snaps, "snapshots used for the fit")->required();
  pred_cmd->add_option("--observable", pred_obs, "builtin observable to forecast")->required();
  pred_cmd->add_option("--x0", pred_x0, "initial state, comma-separated")->required();
  pred_cmd->add_option("--steps", steps, "forecast horizon")->check(CLI::NonNegativeNumber);
  pred_cmd->add_option("--out", pred_out, "output CSV");

  std::vector<std::string> rargs(args.rbegin(), args.rend());
  try {
    app.parse(rargs);
  } catch (const CLI::ParseError& e) {
    // CLI11 prints help itself for --help (exit code 0).
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (exp_cmd->parsed()) {
    if (print_schema) {
      std::cout << experiments::config_schema().dump(2) << '\n';
      return 0;
    }
    if (config_path.empty()) {
      std::cerr << "experiment: --config is required\n";
      return 1;
    }
    json config = load_json(config_path, "config");
    experiments::RunOptions opts;
    opts.out_dir = !out_dir.empty()               ? out_dir
                   : config.contains("output_dir") ? config.at("output_dir").get<std::string>()
                                                    : std::string(".");
    opts.seed = seed;
    opts.workers = workers;
    experiments::Summary s = experiments::run_experiment(config, opts);
    std::cout << (s.pass ? "PASS " : "FAIL ") << config.at("experiment").get<std::string>() << '\n';
    if (check && !s.pass) return 3;
    return 0;
  }
  if (fit_cmd->parsed()) return run_fit(snapshots_path, method, dict_arg, model_out);
  if (spec_cmd->parsed())
    return run_spectrum(spec_model, spec_obs, spec_coeffs, spec_snaps, spec_out, cdf_out, grid);
  if (pred_cmd->parsed())
    return run_predict(pred_model, pred_snaps, pred_obs, pred_x0, steps, pred_out);
  return 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return run_impl(args);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace koopman::cli
