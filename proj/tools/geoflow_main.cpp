#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geoflow/io.hpp"
#include "geoflow/uq.hpp"

namespace gf = geoflow;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string preset = "desk";
  std::string out_dir = ".";
  bool euclidean = false;
  std::optional<int> steps;
  std::optional<int> probes;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;

  std::string data_path, val_path, cond_path, checkpoint_path;
  std::string queries_path, gallery_path, scores_path;
  std::string checkpoint_euclidean_path;
  std::string mask_name = "joint";
  std::string mixture_name = "default";
  std::string direction = "i2t";
  std::string truth;  // "identity" or empty
  std::string axis, values_csv;
  std::string score_col, correct_col;
  int n_train = 4096, n_val = 512, n_test = 512;
  int n_samples = 0, per_cond = 1;
  int entropy_samples = 50;
  double entropy_kappa = 100.0;
  int bins = 10;
  int repeats = 10;
};

// Resolves preset/config file plus the command-line solver overrides.
gf::RunConfig resolve_config(const Options& o) {
  gf::RunConfig c = o.config_path.empty() ? gf::preset_config(o.preset)
                                          : gf::load_run_config(o.config_path);
  if (o.euclidean) c.geometry = gf::Geometry::Euclidean;
  if (o.steps) c.solver.n_steps = *o.steps;
  if (o.probes) c.solver.n_probes = *o.probes;
  if (o.lambda) c.solver.guidance = *o.lambda;
  if (o.seed) c.solver.seed = *o.seed;
  c.solver.geometry = c.geometry;
  c.net.validate();
  c.train.validate();
  c.solver.validate();
  return c;
}

void add_solver_flags(CLI::App* sub, Options& o) {
  sub->add_option("--steps", o.steps, "Euler steps");
  sub->add_option("--probes", o.probes, "Hutchinson probes per step");
  sub->add_option("--lambda", o.lambda, "guidance scale");
  sub->add_flag("--euclidean", o.euclidean, "Euclidean ablation geometry");
  sub->add_option("--seed", o.seed, "solver/run seed");
}

void add_config_flags(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "JSON config file");
  sub->add_option("--preset", o.preset, "desk or full")
      ->check(CLI::IsMember({"desk", "full"}));
}

std::string out_path(const Options& o, const std::string& name) {
  fs::create_directories(o.out_dir);
  return (fs::path(o.out_dir) / name).string();
}

gf::Checkpoint load_matching_checkpoint(const std::string& path,
                                        gf::RunConfig& c) {
  gf::Checkpoint ck = gf::load_checkpoint(path);
  if (ck.geometry != c.geometry) {
    const bool ck_euclid = ck.geometry == gf::Geometry::Euclidean;
    throw gf::ConfigError(std::string("checkpoint ") + path + " was trained with " +
                          gf::geometry_name(ck.geometry) + " geometry; " +
                          (ck_euclid ? "pass" : "drop") + " --euclidean");
  }
  c.net = ck.params.cfg;  // manifest reflects the trained architecture
  return ck;
}

gf::PairedMixture named_mixture(const std::string& name) {
  if (name == "default") return gf::default_mixture();
  if (name == "sharpness") return gf::sharpness_mixture();
  throw gf::ConfigError("unknown mixture \"" + name + "\" (default, sharpness)");
}

// The modality a mask conditions on, from either a paired or a plain file.
const gf::MatrixXd& conditioner_block(const gf::EmbeddingData& d, gf::MaskKind k) {
  if (!d.paired) return d.img;
  return k == gf::MaskKind::ImageToText ? d.img : d.txt;
}

const gf::MatrixXd& target_block(const gf::EmbeddingData& d, gf::MaskKind k) {
  if (!d.paired) return d.img;
  return k == gf::MaskKind::ImageToText ? d.txt : d.img;
}

std::vector<double> numeric_column(const gf::CsvData& csv, const std::string& col) {
  const int j = csv.column(col);
  std::vector<double> out;
  out.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    try {
      out.push_back(std::stod(row[j]));
    } catch (const std::exception&) {
      throw gf::DataError("non-numeric value \"" + row[j] + "\" in column " + col);
    }
  }
  return out;
}

std::vector<std::uint8_t> binary_column(const gf::CsvData& csv,
                                        const std::string& col) {
  std::vector<std::uint8_t> out;
  for (double v : numeric_column(csv, col)) {
    if (v != 0.0 && v != 1.0)
      throw gf::DataError("column " + col + " must be 0/1");
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::vector<double> parse_value_list(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string tok =
        csv.substr(start, comma == std::string::npos ? comma : comma - start);
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw gf::ConfigError("bad value \"" + tok + "\" in --values");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw gf::ConfigError("--values is empty");
  return out;
}

int run_synth_gen(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  const std::uint64_t seed = o.seed.value_or(7);
  c.train.seed = seed;  // generation seed, recorded via the manifest config
  const gf::PairedMixture mix = named_mixture(o.mixture_name);

  const std::vector<std::pair<std::string, int>> splits = {
      {"train.gfv", o.n_train}, {"val.gfv", o.n_val}, {"test.gfv", o.n_test}};
  std::vector<std::string> outputs;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    gf::Rng rng = gf::Rng(seed).fork(gf::rng_stream::kData, s);
    gf::MatrixXd img(3, splits[s].second), txt(3, splits[s].second);
    for (int i = 0; i < splits[s].second; ++i) {
      const gf::ProductPoint z = mix.sample_pair(rng);
      img.col(i) = z.image;
      txt.col(i) = z.text;
    }
    const std::string path = out_path(o, splits[s].first);
    gf::write_embeddings(path, img, &txt);
    outputs.push_back(splits[s].first);
  }
  gf::write_mixture_json(out_path(o, "mixture.json"), mix, seed);
  outputs.push_back("mixture.json");
  gf::write_manifest(out_path(o, "manifest.json"), "synth-gen", c, {}, outputs);
  std::printf("wrote %d/%d/%d pairs to %s\n", o.n_train, o.n_val, o.n_test,
              o.out_dir.c_str());
  return 0;
}

int run_train(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  if (o.seed) c.train.seed = *o.seed;
  const gf::EmbeddingData train = gf::read_embeddings(o.data_path);
  const gf::EmbeddingData val = gf::read_embeddings(o.val_path);
  if (!train.paired || !val.paired)
    throw gf::DataError("training and validation files must be paired");
  if (train.img.rows() != c.net.embed_dim)
    throw gf::ConfigError("net.embed_dim " + std::to_string(c.net.embed_dim) +
                          " does not match data dim " +
                          std::to_string(train.img.rows()));

  gf::Rng init_rng = gf::Rng(c.train.seed).fork(gf::rng_stream::kInit);
  gf::Trainer trainer(gf::init_params(c.net, init_rng), c.train, c.geometry);

  const std::string ckpt = out_path(o, "checkpoint.gfc");
  std::vector<std::vector<std::string>> step_rows, val_rows;
  const auto result = trainer.run(
      {train.img, train.txt}, {val.img, val.txt},
      [&](const gf::StepMetrics& m) {
        step_rows.push_back({std::to_string(m.step), gf::format_double(m.loss),
                             gf::format_double(m.lr),
                             gf::format_double(m.grad_norm),
                             gf::format_double(m.p_joint)});
      },
      [&](const gf::NetParams& p, int, double) {
        gf::save_checkpoint(ckpt, p, c.geometry, c.train.seed);
      },
      [&](int step, double loss, double best) {
        val_rows.push_back({std::to_string(step), gf::format_double(loss),
                            gf::format_double(best)});
        std::printf("step %6d  val %.6f  best %.6f\n", step, loss, best);
        std::fflush(stdout);
      });

  gf::write_csv(out_path(o, "train_metrics.csv"), "manifest.json",
                {"step", "loss", "lr", "grad_norm", "p_joint"}, step_rows);
  gf::write_csv(out_path(o, "val_metrics.csv"), "manifest.json",
                {"step", "val_loss", "best_val_loss"}, val_rows);
  gf::write_manifest(out_path(o, "manifest.json"), "train", c,
                     {o.data_path, o.val_path},
                     {"checkpoint.gfc", "train_metrics.csv", "val_metrics.csv"});
  std::printf("%s after %d steps, best validation %.6f\n",
              result.early_stopped ? "early stop" : "finished", result.steps_run,
              result.best_val);
  return 0;
}

int run_sample(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
  const gf::MaskKind kind = gf::mask_from_name(o.mask_name);

  gf::MatrixXd img, txt;
  std::vector<std::string> inputs = {o.checkpoint_path};
  if (kind == gf::MaskKind::Joint) {
    if (!o.cond_path.empty())
      throw gf::ConfigError("--cond is only meaningful for i2t/t2i");
    const int n = o.n_samples > 0 ? o.n_samples : 64;
    std::vector<std::uint64_t> tags(n);
    for (int i = 0; i < n; ++i) tags[i] = i;
    const gf::SampleBatch out = gf::sample(ck.params, kind, nullptr, n, c.solver, tags);
    img = out.img;
    txt = out.txt;
  } else {
    if (o.cond_path.empty())
      throw gf::ConfigError("i2t/t2i sampling needs --cond");
    inputs.push_back(o.cond_path);
    const gf::EmbeddingData data = gf::read_embeddings(o.cond_path);
    const gf::MatrixXd& src = conditioner_block(data, kind);
    if (src.rows() != ck.params.cfg.embed_dim)
      throw gf::ConfigError("conditioner dim does not match checkpoint");
    const Eigen::Index n = src.cols() * o.per_cond;
    gf::MatrixXd cond(src.rows(), n);
    std::vector<std::uint64_t> tags(n);
    for (Eigen::Index q = 0; q < src.cols(); ++q)
      for (int k = 0; k < o.per_cond; ++k) {
        cond.col(q * o.per_cond + k) = src.col(q);
        tags[q * o.per_cond + k] = static_cast<std::uint64_t>(q) * o.per_cond + k;
      }
    const gf::SampleBatch out = gf::sample(ck.params, kind, &cond, n, c.solver, tags);
    img = out.img;
    txt = out.txt;
  }

  gf::write_embeddings(out_path(o, "samples.gfv"), img, &txt);
  gf::write_manifest(out_path(o, "manifest.json"), "sample", c, inputs,
                     {"samples.gfv"});
  std::printf("wrote %lld %s samples\n", static_cast<long long>(img.cols()),
              gf::mask_name(kind).c_str());
  return 0;
}

int run_logp(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
  const gf::MaskKind kind = gf::mask_from_name(o.mask_name);
  const gf::EmbeddingData data = gf::read_embeddings(o.data_path);
  if (!data.paired) throw gf::DataError("logp needs a paired file");

  std::vector<std::uint64_t> ids(data.img.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const auto est = gf::log_density_batch(ck.params, kind, data.img, data.txt,
                                         c.solver, ids);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < est.size(); ++i)
    rows.push_back({std::to_string(i), gf::format_double(est[i].log_density),
                    gf::format_double(est[i].divergence_integral),
                    gf::format_double(est[i].base_log_density)});
  gf::write_csv(out_path(o, "logp.csv"), "manifest.json",
                {"id", "log_density", "divergence_integral", "base_log_density"},
                rows);
  gf::write_manifest(out_path(o, "manifest.json"), "logp", c,
                     {o.checkpoint_path, o.data_path}, {"logp.csv"});
  return 0;
}

int run_decompose(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
  const gf::EmbeddingData data = gf::read_embeddings(o.data_path);
  if (!data.paired) throw gf::DataError("decompose needs a paired file");

  std::vector<std::uint64_t> ids(data.img.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const auto rep = gf::decompose_batch(ck.params, data.img, data.txt, c.solver, ids);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < rep.size(); ++i)
    rows.push_back({std::to_string(i), gf::format_double(rep[i].joint_nll),
                    gf::format_double(rep[i].cond_t_given_i),
                    gf::format_double(rep[i].cond_i_given_t),
                    gf::format_double(rep[i].marg_i),
                    gf::format_double(rep[i].marg_t),
                    gf::format_double(rep[i].pmi),
                    gf::format_double(rep[i].epistemic_sum),
                    std::to_string(c.solver.n_steps),
                    std::to_string(c.solver.n_probes),
                    std::to_string(c.solver.seed)});
  gf::write_csv(out_path(o, "decompose.csv"), "manifest.json",
                {"id", "joint_nll", "cond_i2t", "cond_t2i", "marg_i", "marg_t",
                 "pmi", "epistemic_sum", "n_steps", "K", "seed"},
                rows);
  gf::write_manifest(out_path(o, "manifest.json"), "decompose", c,
                     {o.checkpoint_path, o.data_path}, {"decompose.csv"});
  return 0;
}

int run_entropy(const Options& o) {
  gf::RunConfig c = resolve_config(o);
  const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
  const gf::MaskKind kind = gf::mask_from_name(o.direction);
  if (kind == gf::MaskKind::Joint)
    throw gf::ConfigError("--direction must be i2t or t2i");

  const gf::EmbeddingData queries = gf::read_embeddings(o.queries_path);
  const gf::EmbeddingData gallery_file = gf::read_embeddings(o.gallery_path);
  const gf::MatrixXd& q = conditioner_block(queries, kind);
  const gf::MatrixXd& gallery = target_block(gallery_file, kind);

  std::vector<int> true_index;
  if (o.truth == "identity") {
    if (gallery.cols() < q.cols())
      throw gf::ConfigError("identity truth needs gallery at least as large as queries");
    for (Eigen::Index i = 0; i < q.cols(); ++i)
      true_index.push_back(static_cast<int>(i));
  } else if (!o.truth.empty()) {
    throw gf::ConfigError("unknown --truth mode \"" + o.truth + "\"");
  }

  const auto recs = gf::retrieval_entropy_pipeline(ck.params, kind, q, gallery,
                                                   true_index, o.entropy_samples,
                                                   o.entropy_kappa, c.solver);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::vector<std::string> row = {std::to_string(i),
                                    gf::format_double(recs[i].entropy),
                                    gf::format_double(recs[i].fano_r_min),
                                    std::to_string(recs[i].rank_of_true)};
    row.push_back(recs[i].rank_of_true < 0 ? "nan"
                  : recs[i].rank_of_true == 1 ? "1"
                                              : "0");
    rows.push_back(std::move(row));
  }
  gf::write_csv(out_path(o, "entropy.csv"), "manifest.json",
                {"id", "entropy", "fano_r_min", "rank_of_true", "correct"},
                rows);
  gf::write_manifest(out_path(o, "manifest.json"), "entropy", c,
                     {o.checkpoint_path, o.queries_path, o.gallery_path},
                     {"entropy.csv"});
  return 0;
}

int run_eval_calibration(const Options& o) {
  const gf::CsvData csv = gf::read_csv(o.scores_path);
  const auto scores = numeric_column(csv, o.score_col);
  const auto correct = binary_column(csv, o.correct_col);
  const gf::CalibrationReport rep = gf::calibration_report(scores, correct, o.bins);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t b = 0; b < rep.bin_count.size(); ++b)
    rows.push_back({std::to_string(b), std::to_string(rep.bin_count[b]),
                    gf::format_double(rep.bin_score_mean[b]),
                    gf::format_double(rep.bin_recall[b])});
  gf::write_csv(out_path(o, "calibration.csv"), "manifest.json",
                {"bin", "count", "mean_score", "recall"}, rows);
  gf::write_text_file(
      out_path(o, "calibration_summary.json"),
      std::string("{\"spearman\": ") +
          (rep.spearman ? gf::format_double(*rep.spearman) : "null") +
          ", \"r2\": " + gf::format_double(rep.r2) + ", \"degenerate_scores\": " +
          (rep.degenerate_scores ? "true" : "false") + "}\n");
  gf::write_manifest(out_path(o, "manifest.json"), "eval-calibration",
                     gf::preset_config("desk"), {o.scores_path},
                     {"calibration.csv", "calibration_summary.json"});
  if (rep.spearman)
    std::printf("spearman %.4f  r2 %.4f\n", *rep.spearman, rep.r2);
  else
    std::printf("spearman undefined (%s), r2 %.4f\n",
                rep.degenerate_scores ? "degenerate scores" : "constant bin recall",
                rep.r2);
  return 0;
}

int run_eval_selective(const Options& o) {
  const gf::CsvData csv = gf::read_csv(o.scores_path);
  const auto scores = numeric_column(csv, o.score_col);
  const auto correct = binary_column(csv, o.correct_col);
  const gf::SelectiveCurve curve = gf::selective_curve(scores, correct);

  std::vector<std::vector<std::string>> rows;
  for (const auto& pt : curve.points)
    rows.push_back({gf::format_double(pt.coverage), gf::format_double(pt.accuracy)});
  gf::write_csv(out_path(o, "selective.csv"), "manifest.json",
                {"coverage", "accuracy"}, rows);
  gf::write_text_file(out_path(o, "selective_summary.json"),
                      std::string("{\"ausac\": ") + gf::format_double(curve.ausac) +
                          "}\n");
  gf::write_manifest(out_path(o, "manifest.json"), "eval-selective",
                     gf::preset_config("desk"), {o.scores_path},
                     {"selective.csv", "selective_summary.json"});
  std::printf("ausac %.4f\n", curve.ausac);
  return 0;
}

// Mean joint log-density of a fixed evaluation set under one solver setting.
double mean_joint_logp(const gf::NetParams& p, const gf::EmbeddingData& data,
                       const gf::SolverConfig& solver) {
  std::vector<std::uint64_t> ids(data.img.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const auto est = gf::log_density_batch(p, gf::MaskKind::Joint, data.img,
                                         data.txt, solver, ids);
  double sum = 0.0;
  for (const auto& e : est) sum += e.log_density;
  return sum / est.size();
}

int run_ablate(const Options& o) {
  gf::RunConfig c = resolve_config(o);

  if (o.axis == "steps" || o.axis == "probes") {
    const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
    const gf::EmbeddingData data = gf::read_embeddings(o.data_path);
    if (!data.paired) throw gf::DataError("ablate needs a paired evaluation file");
    const std::string defaults = o.axis == "steps" ? "10,20,30,40,50" : "1,2,5";
    const auto values =
        parse_value_list(o.values_csv.empty() ? defaults : o.values_csv);

    std::vector<std::vector<std::string>> rows;
    for (double v : values) {
      const int iv = static_cast<int>(v);
      if (iv <= 0 || iv != v)
        throw gf::ConfigError("--values for this axis must be positive integers");
      for (int rep = 0; rep < o.repeats; ++rep) {
        gf::SolverConfig s = c.solver;
        if (o.axis == "steps")
          s.n_steps = iv;
        else
          s.n_probes = iv;
        s.seed = c.solver.seed + static_cast<std::uint64_t>(rep) + 1;
        rows.push_back({o.axis, std::to_string(iv), std::to_string(rep),
                        gf::format_double(mean_joint_logp(ck.params, data, s))});
      }
    }
    gf::write_csv(out_path(o, "ablate_" + o.axis + ".csv"), "manifest.json",
                  {"axis", "value", "repeat", "mean_log_p"}, rows);
    gf::write_manifest(out_path(o, "manifest.json"), "ablate", c,
                       {o.checkpoint_path, o.data_path},
                       {"ablate_" + o.axis + ".csv"});
    return 0;
  }

  if (o.axis == "lambda") {
    const gf::Checkpoint ck = load_matching_checkpoint(o.checkpoint_path, c);
    const gf::EmbeddingData data = gf::read_embeddings(o.data_path);
    if (!data.paired) throw gf::DataError("ablate needs a paired evaluation file");
    const auto values =
        parse_value_list(o.values_csv.empty() ? "0,1,2,3,4,5,7" : o.values_csv);

    std::vector<std::vector<std::string>> rows;
    for (double v : values) {
      if (v < 0) throw gf::ConfigError("guidance values must be nonnegative");
      for (int rep = 0; rep < o.repeats; ++rep) {
        gf::SolverConfig s = c.solver;
        s.guidance = v;
        s.seed = c.solver.seed + static_cast<std::uint64_t>(rep) + 1;
        const Eigen::Index n = data.img.cols();
        std::vector<std::uint64_t> tags(n);
        for (Eigen::Index i = 0; i < n; ++i) tags[i] = i;
        const gf::SampleBatch out = gf::sample(ck.params, gf::MaskKind::ImageToText,
                                               &data.img, n, s, tags);
        const double mean_cos =
            (out.txt.array() * data.txt.array()).colwise().sum().mean();
        rows.push_back({o.axis, gf::format_double(v), std::to_string(rep),
                        gf::format_double(mean_cos)});
      }
    }
    gf::write_csv(out_path(o, "ablate_lambda.csv"), "manifest.json",
                  {"axis", "value", "repeat", "mean_cos_to_truth"}, rows);
    gf::write_manifest(out_path(o, "manifest.json"), "ablate", c,
                       {o.checkpoint_path, o.data_path}, {"ablate_lambda.csv"});
    return 0;
  }

  if (o.axis == "geometry") {
    if (o.checkpoint_euclidean_path.empty())
      throw gf::ConfigError("ablate --axis geometry needs --checkpoint-euclidean");
    const gf::EmbeddingData queries = gf::read_embeddings(o.queries_path);
    const gf::EmbeddingData gallery_file = gf::read_embeddings(o.gallery_path);
    if (!queries.paired)
      throw gf::DataError("geometry ablation needs paired queries");
    const gf::MaskKind kind = gf::MaskKind::ImageToText;
    const gf::MatrixXd& q = conditioner_block(queries, kind);
    const gf::MatrixXd& gallery = target_block(gallery_file, kind);
    if (gallery.cols() < q.cols())
      throw gf::ConfigError("gallery must be at least as large as queries");
    std::vector<int> true_index(q.cols());
    for (std::size_t i = 0; i < true_index.size(); ++i)
      true_index[i] = static_cast<int>(i);

    std::vector<std::vector<std::string>> rows;
    const std::vector<std::pair<std::string, gf::Geometry>> arms = {
        {o.checkpoint_path, gf::Geometry::Riemannian},
        {o.checkpoint_euclidean_path, gf::Geometry::Euclidean}};
    for (const auto& [path, geom] : arms) {
      gf::RunConfig cg = c;
      cg.geometry = geom;
      cg.solver.geometry = geom;
      const gf::Checkpoint ck = load_matching_checkpoint(path, cg);
      const auto recs = gf::retrieval_entropy_pipeline(
          ck.params, kind, q, gallery, true_index, o.entropy_samples,
          o.entropy_kappa, cg.solver);
      std::vector<double> scores;
      std::vector<std::uint8_t> correct;
      double mean_h = 0.0;
      for (const auto& r : recs) {
        scores.push_back(r.entropy);
        correct.push_back(r.rank_of_true == 1 ? 1 : 0);
        mean_h += r.entropy / recs.size();
      }
      const gf::CalibrationReport rep =
          gf::calibration_report(scores, correct, o.bins);
      rows.push_back({gf::geometry_name(geom),
                      rep.spearman ? gf::format_double(*rep.spearman) : "nan",
                      gf::format_double(rep.r2), gf::format_double(mean_h)});
    }
    gf::write_csv(out_path(o, "ablate_geometry.csv"), "manifest.json",
                  {"geometry", "bin_spearman", "r2", "mean_entropy"}, rows);
    gf::write_manifest(out_path(o, "manifest.json"), "ablate", c,
                       {o.checkpoint_path, o.checkpoint_euclidean_path,
                        o.queries_path, o.gallery_path},
                       {"ablate_geometry.csv"});
    return 0;
  }

  throw gf::ConfigError("unknown --axis \"" + o.axis +
                        "\" (steps, probes, lambda, geometry)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spherical flow models over paired embeddings"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("synth-gen", "generate oracle mixture data");
  add_config_flags(gen, o);
  gen->add_option("--out-dir", o.out_dir, "output directory");
  gen->add_option("--mixture", o.mixture_name, "default or sharpness");
  gen->add_option("--train", o.n_train, "training pairs");
  gen->add_option("--val", o.n_val, "validation pairs");
  gen->add_option("--test", o.n_test, "test pairs");
  gen->add_option("--seed", o.seed, "generation seed");
  gen->callback([&]() { std::exit(run_synth_gen(o)); });

  auto* train = app.add_subcommand("train", "fit the velocity field");
  add_config_flags(train, o);
  train->add_option("--data", o.data_path, "paired training file")->required();
  train->add_option("--val", o.val_path, "paired validation file")->required();
  train->add_option("--out-dir", o.out_dir, "output directory");
  train->add_option("--seed", o.seed, "training seed");
  train->add_flag("--euclidean", o.euclidean, "Euclidean ablation geometry");
  train->callback([&]() { std::exit(run_train(o)); });

  auto* sample = app.add_subcommand("sample", "integrate the flow forward");
  add_config_flags(sample, o);
  add_solver_flags(sample, o);
  sample->add_option("--checkpoint", o.checkpoint_path)->required();
  sample->add_option("--mask", o.mask_name, "joint, i2t or t2i");
  sample->add_option("--cond", o.cond_path, "conditioner embeddings");
  sample->add_option("-n", o.n_samples, "joint sample count");
  sample->add_option("--per-cond", o.per_cond, "samples per conditioner");
  sample->add_option("--out-dir", o.out_dir, "output directory");
  sample->callback([&]() { std::exit(run_sample(o)); });

  auto* logp = app.add_subcommand("logp", "per-pair log-density");
  add_config_flags(logp, o);
  add_solver_flags(logp, o);
  logp->add_option("--checkpoint", o.checkpoint_path)->required();
  logp->add_option("--data", o.data_path, "paired evaluation file")->required();
  logp->add_option("--mask", o.mask_name, "joint, i2t or t2i");
  logp->add_option("--out-dir", o.out_dir, "output directory");
  logp->callback([&]() { std::exit(run_logp(o)); });

  auto* dec = app.add_subcommand("decompose", "chain-rule uncertainty readouts");
  add_config_flags(dec, o);
  add_solver_flags(dec, o);
  dec->add_option("--checkpoint", o.checkpoint_path)->required();
  dec->add_option("--data", o.data_path, "paired evaluation file")->required();
  dec->add_option("--out-dir", o.out_dir, "output directory");
  dec->callback([&]() { std::exit(run_decompose(o)); });

  auto* ent = app.add_subcommand("entropy", "retrieval-entropy readout");
  add_config_flags(ent, o);
  add_solver_flags(ent, o);
  ent->add_option("--checkpoint", o.checkpoint_path)->required();
  ent->add_option("--queries", o.queries_path, "query embeddings")->required();
  ent->add_option("--gallery", o.gallery_path, "gallery embeddings")->required();
  ent->add_option("--direction", o.direction, "i2t or t2i");
  ent->add_option("--samples", o.entropy_samples, "posterior samples per query");
  ent->add_option("--kappa", o.entropy_kappa, "kernel concentration");
  ent->add_option("--truth", o.truth, "identity: gallery row i is query i's target");
  ent->add_option("--out-dir", o.out_dir, "output directory");
  ent->callback([&]() { std::exit(run_entropy(o)); });

  auto* cal = app.add_subcommand("eval-calibration", "equal-frequency bins");
  cal->add_option("--scores", o.scores_path, "metric csv")->required();
  cal->add_option("--score-col", o.score_col)->required();
  cal->add_option("--correct-col", o.correct_col)->required();
  cal->add_option("--bins", o.bins, "bin count");
  cal->add_option("--out-dir", o.out_dir, "output directory");
  cal->callback([&]() { std::exit(run_eval_calibration(o)); });

  auto* sel = app.add_subcommand("eval-selective", "risk-coverage curve");
  sel->add_option("--scores", o.scores_path, "metric csv")->required();
  sel->add_option("--score-col", o.score_col)->required();
  sel->add_option("--correct-col", o.correct_col)->required();
  sel->add_option("--out-dir", o.out_dir, "output directory");
  sel->callback([&]() { std::exit(run_eval_selective(o)); });

  auto* abl = app.add_subcommand("ablate", "sweep one solver axis");
  add_config_flags(abl, o);
  add_solver_flags(abl, o);
  abl->add_option("--axis", o.axis, "steps, probes, lambda or geometry")->required();
  abl->add_option("--values", o.values_csv, "comma-separated sweep values");
  abl->add_option("--repeats", o.repeats, "probe-seed repeats per value");
  abl->add_option("--checkpoint", o.checkpoint_path);
  abl->add_option("--checkpoint-euclidean", o.checkpoint_euclidean_path);
  abl->add_option("--data", o.data_path, "paired evaluation file");
  abl->add_option("--queries", o.queries_path, "geometry axis: paired queries");
  abl->add_option("--gallery", o.gallery_path, "geometry axis: gallery file");
  abl->add_option("--samples", o.entropy_samples, "geometry axis: posterior samples");
  abl->add_option("--kappa", o.entropy_kappa, "geometry axis: kernel concentration");
  abl->add_option("--out-dir", o.out_dir, "output directory");
  abl->callback([&]() { std::exit(run_ablate(o)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const gf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gf::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const gf::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
