// tgpst: simulate / train / predict / evaluate / explain pipeline around the
// Tensor-GPST library. All tabular outputs are CSV with headers.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tgpst/io.hpp"
#include "tgpst/optimizer.hpp"
#include "tgpst/predictor.hpp"
#include "tgpst/simgen.hpp"

namespace {

using namespace tgpst;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct SplitIndices {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

// Seeded shuffle split; the library itself never splits.
SplitIndices make_split(Eigen::Index n, double fraction,
                        std::uint64_t split_seed) {
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(split_seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train =
      static_cast<Eigen::Index>(fraction * static_cast<double>(n));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.test.assign(idx.begin() + n_train, idx.end());
  return s;
}

Dataset subset(const Dataset& d, const std::vector<Eigen::Index>& idx) {
  Dataset out;
  out.tensors.reserve(idx.size());
  out.labels.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.tensors.push_back(d.tensors[static_cast<std::size_t>(idx[i])]);
    out.labels[static_cast<Eigen::Index>(i)] = d.labels[idx[i]];
  }
  return out;
}

Dataset load_dataset(const std::string& tensors_path,
                     const std::string& labels_path) {
  Dataset d;
  d.tensors = io::read_tensors(tensors_path);
  d.labels = io::read_labels(labels_path);
  d.validate();
  return d;
}

void write_csv_matrix(const std::string& path, const Matrix& m,
                      const std::string& index_name,
                      const std::vector<std::string>& col_names,
                      const std::vector<std::string>& row_names) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << index_name;
  for (const auto& c : col_names) os << ',' << c;
  os << "\r\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << row_names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      os << ',' << io::detail::f64_to_string(m(i, j));
    os << "\r\n";
  }
}

struct CliFitOptions {
  FitConfig fit;
  std::vector<double> lambda_grid;
  int cv_folds = 5;
  int threads = 0;
};

void add_fit_flags(CLI::App* cmd, CliFitOptions& o) {
  cmd->add_option("--lambda", o.fit.lambda, "TV penalty strength");
  cmd->add_option("--lambda-grid", o.lambda_grid,
                  "Candidate lambdas; selected by k-fold CV on test RMSE");
  cmd->add_option("--cv-folds", o.cv_folds, "Folds for --lambda-grid CV");
  cmd->add_option("--latent-h", o.fit.latent_h, "Latent height h");
  cmd->add_option("--latent-w", o.fit.latent_w, "Latent width w");
  cmd->add_option("--rank1", o.fit.rank1, "Rank r1 (default h)");
  cmd->add_option("--rank2", o.fit.rank2, "Rank r2 (default w)");
  cmd->add_option("--rank3", o.fit.rank3, "Rank r3 (default C)");
  cmd->add_option("--max-iter", o.fit.max_iter, "Max outer iterations");
  cmd->add_option("--step-init", o.fit.step_init, "Initial step size");
  cmd->add_option("--tol-param", o.fit.tol_param, "Relative parameter-change stop");
  cmd->add_option("--tol-loss", o.fit.tol_loss, "Relative loss-change stop");
  cmd->add_option("--seed", o.fit.seed, "Fit RNG seed");
  cmd->add_option("--val-fraction", o.fit.val_fraction,
                  "Held-out fraction for early stopping (0 disables)");
  cmd->add_option("--patience", o.fit.patience,
                  "Iterations without validation improvement before stopping");
  cmd->add_flag("--no-backtrack", [&o](std::int64_t) { o.fit.backtrack = false; },
                "Fixed-step mode (diagnostics)");
  cmd->add_flag("--no-warm-start", [&o](std::int64_t) { o.fit.warm_start = false; },
                "Random initialization instead of ALS warm start");
  cmd->add_flag("--baseline-gp", o.fit.baseline_gp,
                "Plain Tensor-GP: freeze A=I, B=I, lambda=0");
  cmd->add_option("--threads", o.threads, "Worker thread cap");
}

double cv_select_lambda(const Dataset& d, const CliFitOptions& o) {
  double best_lambda = o.lambda_grid.front();
  double best_rmse = std::numeric_limits<double>::infinity();
  const Eigen::Index n = d.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(o.fit.seed ^ 0x5f0dbeefULL);
  std::shuffle(idx.begin(), idx.end(), rng);

  for (double lambda : o.lambda_grid) {
    double sse = 0.0;
    Eigen::Index count = 0;
    for (int fold = 0; fold < o.cv_folds; ++fold) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<int>(i) % o.cv_folds == fold)
          te.push_back(idx[static_cast<std::size_t>(i)]);
        else
          tr.push_back(idx[static_cast<std::size_t>(i)]);
      }
      FitConfig cfg = o.fit;
      cfg.lambda = lambda;
      const Dataset train_fold = subset(d, tr);
      const Dataset test_fold = subset(d, te);
      auto [params, report] = fit(train_fold, cfg);
      const auto pred = predict(train_fold, test_fold.tensors, params);
      sse += (pred.mean - test_fold.labels).squaredNorm();
      count += test_fold.labels.size();
    }
    const double fold_rmse = std::sqrt(sse / static_cast<double>(count));
    if (fold_rmse < best_rmse) {
      best_rmse = fold_rmse;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

int run_simulate(Eigen::Index n, std::uint64_t seed, double noise_sd,
                 double signal_mean, const std::string& out_dir) {
  SimConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.noise_sd = noise_sd;
  cfg.signal_mean = signal_mean;
  cfg.validate();
  auto [dataset, gt] = generate(cfg);

  io::write_tensors(out_dir + "/tensors.tgpst", dataset.tensors);
  io::write_labels(out_dir + "/labels.txt", dataset.labels);
  io::write_model(out_dir + "/ground_truth_model.txt", gt.as_params());

  std::ostringstream echo;
  echo << "n=" << n << " seed=" << seed << " noise_sd=" << noise_sd
       << " signal_mean=" << signal_mean;
  std::ofstream manifest(out_dir + "/manifest.txt");
  if (!manifest) throw IoError("cannot open for writing: " + out_dir + "/manifest.txt");
  manifest << "config " << echo.str() << "\n";
  manifest << "config_hash " << fnv1a64(echo.str()) << "\n";
  manifest << "types";
  for (int t : gt.type_labels) manifest << ' ' << t;
  manifest << "\n";
  std::cout << "simulate: wrote " << n << " tensors ("
            << SimConfig::kHeight << "x" << SimConfig::kWidth << "x"
            << SimConfig::kChannels << ") to " << out_dir << "\n";
  return kExitOk;
}

int run_train(const std::string& tensors_path, const std::string& labels_path,
              const std::string& model_out, const std::string& report_out,
              CliFitOptions& o, double split_fraction,
              std::uint64_t split_seed) {
  Dataset d = load_dataset(tensors_path, labels_path);
  if (split_fraction > 0.0 && split_fraction < 1.0) {
    const auto s = make_split(d.size(), split_fraction, split_seed);
    d = subset(d, s.train);
    std::cout << "train: using " << d.size() << " samples (split "
              << split_fraction << ", seed " << split_seed << ")\n";
  }
  if (!o.lambda_grid.empty()) {
    o.fit.lambda = cv_select_lambda(d, o);
    std::cout << "train: lambda " << o.fit.lambda << " selected by "
              << o.cv_folds << "-fold CV\n";
  }
  auto [params, report] = fit(d, o.fit);

  std::ostringstream echo;
  echo << "lambda=" << o.fit.lambda << " h=" << params.latent_rows()
       << " w=" << params.latent_cols() << " seed=" << o.fit.seed
       << " max_iter=" << o.fit.max_iter << " baseline_gp="
       << (o.fit.baseline_gp ? 1 : 0);
  io::write_model(model_out, params, echo.str());

  if (!report_out.empty()) {
    std::ofstream os(report_out);
    if (!os) throw IoError("cannot open for writing: " + report_out);
    os << "iteration,loss,param_delta,step_size\r\n";
    for (std::size_t i = 0; i < report.loss_history.size(); ++i)
      os << (i + 1) << ',' << io::detail::f64_to_string(report.loss_history[i])
         << ',' << io::detail::f64_to_string(report.param_delta_history[i])
         << ',' << io::detail::f64_to_string(report.step_sizes[i]) << "\r\n";
  }

  const Eigen::Index zeros =
      (params.contraction.a.array() == 0.0).count();
  std::cout << "train: final loss "
            << report.loss_history.back() << ", iterations "
            << report.iterations_run << ", exact zeros in A " << zeros << "/"
            << params.contraction.a.size()
            << (report.converged ? " (converged)" : " (max-iter)") << "\n";
  if (report.baseline_frozen)
    std::cout << "train: baseline Tensor-GP, A and B frozen at identity\n";
  if (report.contraction_collapsed)
    std::cout << "train: warning: contraction collapsed (|A|_F = 0)\n";
  return kExitOk;
}

int run_predict(const std::string& model_path,
                const std::string& train_tensors,
                const std::string& train_labels,
                const std::string& tensors_path, const std::string& out_path) {
  const ModelParams p = io::read_model(model_path);
  const Dataset train = load_dataset(train_tensors, train_labels);
  const auto tensors = io::read_tensors(tensors_path);
  const auto pred = predict(train, tensors, p);

  std::ofstream os(out_path);
  if (!os) throw IoError("cannot open for writing: " + out_path);
  os << "index,mean,variance\r\n";
  for (Eigen::Index i = 0; i < pred.mean.size(); ++i)
    os << i << ',' << io::detail::f64_to_string(pred.mean[i]) << ','
       << io::detail::f64_to_string(pred.covariance(i, i)) << "\r\n";
  std::cout << "predict: wrote " << pred.mean.size() << " predictions to "
            << out_path << "\n";
  return kExitOk;
}

int finish_evaluate(const Vector& y_true, const Vector& y_pred,
                    double sigma_hat, double threshold,
                    const std::string& out_path);

int run_evaluate(const std::string& model_path,
                 const std::string& train_tensors,
                 const std::string& train_labels,
                 const std::string& tensors_path,
                 const std::string& labels_path,
                 const std::string& predictions_path, double threshold,
                 double split_fraction, std::uint64_t split_seed,
                 const std::string& out_path) {
  if (!predictions_path.empty()) {
    const Vector y_true = io::read_labels(labels_path);
    const Vector y_pred = io::read_labels(predictions_path);
    const double sigma_hat = std::max(rmse(y_true, y_pred), 1e-12);
    return finish_evaluate(y_true, y_pred, sigma_hat, threshold, out_path);
  }
  const ModelParams p = io::read_model(model_path);
  if (split_fraction > 0.0 && split_fraction < 1.0) {
    // Single-file mode: same seeded shuffle as `train --split`, evaluated
    // on the held-out complement.
    const Dataset full = load_dataset(tensors_path, labels_path);
    const auto s = make_split(full.size(), split_fraction, split_seed);
    const Dataset train = subset(full, s.train);
    const Dataset test = subset(full, s.test);
    const Vector y_pred = predict(train, test.tensors, p).mean;
    return finish_evaluate(test.labels, y_pred, p.sigma(), threshold,
                           out_path);
  }
  const Vector y_true = io::read_labels(labels_path);
  const Dataset train = load_dataset(train_tensors, train_labels);
  const auto tensors = io::read_tensors(tensors_path);
  const Vector y_pred = predict(train, tensors, p).mean;
  return finish_evaluate(y_true, y_pred, p.sigma(), threshold, out_path);
}

int finish_evaluate(const Vector& y_true, const Vector& y_pred,
                    double sigma_hat, double threshold,
                    const std::string& out_path) {
  const double m_rmse = rmse(y_true, y_pred);
  const double m_r2 = r_squared(y_true, y_pred);
  const double m_msll = msll(y_true, y_pred, sigma_hat);
  std::string tss_str = "NA";
  try {
    tss_str = io::detail::f64_to_string(tss(y_true, y_pred, threshold));
  } catch (const UndefinedMetricError&) {
  }

  std::ostringstream row;
  row << io::detail::f64_to_string(m_rmse) << ','
      << io::detail::f64_to_string(m_r2) << ','
      << io::detail::f64_to_string(m_msll) << ',' << tss_str;
  std::cout << "RMSE,R2,MSLL,TSS\n" << row.str() << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw IoError("cannot open for writing: " + out_path);
    os << "RMSE,R2,MSLL,TSS\r\n" << row.str() << "\r\n";
  }
  return kExitOk;
}

int run_explain(const std::string& model_path,
                const std::string& tensors_path,
                const std::string& labels_path, double map_threshold,
                const std::string& out_prefix) {
  const ModelParams p = io::read_model(model_path);
  const Dataset train = load_dataset(tensors_path, labels_path);
  const ExplainedVariation ev = explained_variation(train, p);

  const Eigen::Index C = ev.per_channel_pair.rows();
  std::vector<std::string> channel_names;
  for (Eigen::Index c = 0; c < C; ++c)
    channel_names.push_back("channel_" + std::to_string(c + 1));
  write_csv_matrix(out_prefix + "_channel_expvar.csv", ev.per_channel_pair,
                   "channel", channel_names, channel_names);

  const Eigen::Index h = p.latent_rows(), w = p.latent_cols();
  std::vector<std::string> map_names;
  for (Eigen::Index t = 0; t < w; ++t)
    for (Eigen::Index s = 0; s < h; ++s)
      map_names.push_back("W_" + std::to_string(s + 1) + "_" +
                          std::to_string(t + 1));
  write_csv_matrix(out_prefix + "_feature_map_expvar.csv",
                   ev.per_feature_map_pair, "feature_map", map_names,
                   map_names);

  // Nonzero feature maps: W_{s,t} = alpha_s^T beta_t with any |weight| above
  // the reporting threshold.
  std::ofstream os(out_prefix + "_feature_maps.csv");
  if (!os) throw IoError("cannot open for writing: " + out_prefix +
                         "_feature_maps.csv");
  os << "feature_map,row,col,weight\r\n";
  for (Eigen::Index s = 0; s < h; ++s)
    for (Eigen::Index t = 0; t < w; ++t) {
      const Matrix map = p.contraction.a.row(s).transpose() *
                         p.contraction.b.row(t);
      if (map.cwiseAbs().maxCoeff() < map_threshold) continue;
      for (Eigen::Index i = 0; i < map.rows(); ++i)
        for (Eigen::Index j = 0; j < map.cols(); ++j)
          if (std::abs(map(i, j)) >= map_threshold)
            os << "W_" << (s + 1) << "_" << (t + 1) << ',' << (i + 1) << ','
               << (j + 1) << ','
               << io::detail::f64_to_string(map(i, j)) << "\r\n";
    }
  std::cout << "explain: wrote " << out_prefix << "_channel_expvar.csv, "
            << out_prefix << "_feature_map_expvar.csv, " << out_prefix
            << "_feature_maps.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-GPST: GP regression on multi-channel image tensors "
               "with a learned TV-regularized contraction"};
  app.require_subcommand(1);

  // simulate
  Eigen::Index sim_n = 200;
  std::uint64_t sim_seed = 0;
  double sim_noise_sd = std::sqrt(0.3), sim_signal_mean = 4.0;
  std::string sim_out = ".";
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate the synthetic study");
  simulate_cmd->add_option("--n", sim_n, "Sample count")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--seed", sim_seed, "Generator seed");
  simulate_cmd->add_option("--noise-sd", sim_noise_sd, "Background pixel sd");
  simulate_cmd->add_option("--signal-mean", sim_signal_mean, "Signal block mean");
  simulate_cmd->add_option("--out-dir", sim_out, "Output directory");

  // train
  std::string tr_tensors, tr_labels, tr_model = "model.txt", tr_report;
  double tr_split = 0.0;
  std::uint64_t tr_split_seed = 0;
  CliFitOptions fit_opts;
  auto* train_cmd = app.add_subcommand("train", "Fit Tensor-GPST");
  train_cmd->add_option("--tensors", tr_tensors, "Training tensor file")->required();
  train_cmd->add_option("--labels", tr_labels, "Training label file")->required();
  train_cmd->add_option("--model-out", tr_model, "Fitted model path");
  train_cmd->add_option("--report-out", tr_report, "Loss-history CSV path");
  train_cmd->add_option("--split", tr_split,
                        "Train on this seeded-shuffle fraction of the data")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--split-seed", tr_split_seed, "Shuffle seed for --split");
  add_fit_flags(train_cmd, fit_opts);

  // predict
  std::string pr_model, pr_train_tensors, pr_train_labels, pr_tensors,
      pr_out = "predictions.csv";
  auto* predict_cmd = app.add_subcommand("predict", "Predictive mean/variance");
  predict_cmd->add_option("--model", pr_model, "Fitted model")->required();
  predict_cmd->add_option("--train-tensors", pr_train_tensors)->required();
  predict_cmd->add_option("--train-labels", pr_train_labels)->required();
  predict_cmd->add_option("--tensors", pr_tensors, "Test tensor file")->required();
  predict_cmd->add_option("--out", pr_out, "Prediction CSV");

  // evaluate
  std::string ev_model, ev_train_tensors, ev_train_labels, ev_tensors,
      ev_labels, ev_pred, ev_out;
  double ev_threshold = 0.0, ev_split = 0.0;
  std::uint64_t ev_split_seed = 0;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "RMSE/R2/MSLL/TSS");
  evaluate_cmd->add_option("--labels", ev_labels, "True labels")->required();
  evaluate_cmd->add_option("--model", ev_model, "Fitted model");
  evaluate_cmd->add_option("--train-tensors", ev_train_tensors);
  evaluate_cmd->add_option("--train-labels", ev_train_labels);
  evaluate_cmd->add_option("--tensors", ev_tensors, "Test tensor file");
  evaluate_cmd->add_option("--predictions", ev_pred,
                           "Precomputed predictions (skips the model)");
  evaluate_cmd->add_option("--threshold", ev_threshold, "TSS threshold");
  evaluate_cmd->add_option("--split", ev_split,
                           "Evaluate on the held-out complement of the seeded "
                           "train split of --tensors/--labels")
      ->check(CLI::Range(0.0, 1.0));
  evaluate_cmd->add_option("--split-seed", ev_split_seed, "Shuffle seed for --split");
  evaluate_cmd->add_option("--out", ev_out, "Metrics CSV");

  // explain
  std::string ex_model, ex_tensors, ex_labels, ex_prefix = "explain";
  double ex_threshold = 5e-3;
  auto* explain_cmd = app.add_subcommand("explain", "Explained variation + feature maps");
  explain_cmd->add_option("--model", ex_model)->required();
  explain_cmd->add_option("--tensors", ex_tensors, "Training tensor file")->required();
  explain_cmd->add_option("--labels", ex_labels, "Training label file")->required();
  explain_cmd->add_option("--map-threshold", ex_threshold,
                          "Feature-map reporting threshold");
  explain_cmd->add_option("--out-prefix", ex_prefix, "Output CSV prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (simulate_cmd->parsed())
      return run_simulate(sim_n, sim_seed, sim_noise_sd, sim_signal_mean,
                          sim_out);
    if (train_cmd->parsed()) {
      if (fit_opts.threads > 0) Eigen::setNbThreads(fit_opts.threads);
      return run_train(tr_tensors, tr_labels, tr_model, tr_report, fit_opts,
                       tr_split, tr_split_seed);
    }
    if (predict_cmd->parsed())
      return run_predict(pr_model, pr_train_tensors, pr_train_labels,
                         pr_tensors, pr_out);
    if (evaluate_cmd->parsed()) {
      const bool split_mode = ev_split > 0.0 && ev_split < 1.0;
      if (ev_pred.empty() && !split_mode &&
          (ev_model.empty() || ev_train_tensors.empty() ||
           ev_train_labels.empty() || ev_tensors.empty())) {
        std::cerr << "evaluate: need --predictions, --split, or --model with "
                     "--train-tensors/--train-labels/--tensors\n";
        return kExitValidation;
      }
      if (ev_pred.empty() && split_mode &&
          (ev_model.empty() || ev_tensors.empty())) {
        std::cerr << "evaluate: --split requires --model and --tensors\n";
        return kExitValidation;
      }
      return run_evaluate(ev_model, ev_train_tensors, ev_train_labels,
                          ev_tensors, ev_labels, ev_pred, ev_threshold,
                          ev_split, ev_split_seed, ev_out);
    }
    if (explain_cmd->parsed())
      return run_explain(ex_model, ex_tensors, ex_labels, ex_threshold,
                         ex_prefix);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
