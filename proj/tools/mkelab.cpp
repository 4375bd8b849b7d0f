// mkelab: generate | run | sweep | theory | plot

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mkelab/config.hpp"
#include "mkelab/expansion.hpp"
#include "mkelab/mke.hpp"
#include "mkelab/svg.hpp"
#include "mkelab/sweep.hpp"
#include "mkelab/synthdata.hpp"
#include "mkelab/theory.hpp"

namespace fs = std::filesystem;
using namespace mkelab;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int exit_code(const Error& e) {
  switch (e.code()) {
    case Errc::usage:
    case Errc::config:
    case Errc::io:
    case Errc::split:
      return 1;
    default:
      return 2;
  }
}

std::string out_dir(const Globals& g) {
  std::string dir = g.out;
  if (dir.empty()) {
    const char* env = std::getenv("MKELAB_OUT");
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, fmt::format("cannot create output directory {}: {}", dir, ec.message()));
  return dir;
}

std::pair<ExperimentConfig, SweepSpec> load_config(const Globals& g) {
  ExperimentConfig cfg;
  SweepSpec spec = default_sweep();
  if (!g.config.empty()) apply_config(read_config_file(g.config), cfg, &spec);
  if (!g.overrides.empty()) {
    std::string text;
    for (const auto& o : g.overrides) text += o + "\n";
    apply_config(parse_config_text(text), cfg, &spec);
  }
  if (g.seed) cfg.base_seed = *g.seed;
  cfg.validate();
  return {cfg, spec};
}

void append_manifest(const std::string& dir, const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seeds"] = m.seeds;
  j["output_dir"] = m.output_dir;
  j["tool_version"] = m.tool_version;
  j["timestamp"] = m.timestamp;
  const std::string path = (fs::path(dir) / "manifest.jsonl").string();
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw Error(Errc::io, "cannot append to " + path);
  f << j.dump() << '\n';
}

std::vector<int> parse_split_flag(const std::string& s, int n) {
  std::vector<int> parts;
  try {
    parts = detail::parse_int_list("--split", s);
  } catch (const Error& e) {
    throw Error(Errc::usage, e.what());
  }
  if (parts.size() != 3) throw Error(Errc::usage, "--split expects n_l,n_u,n_test");
  if (parts[0] + parts[1] + parts[2] != n)
    throw Error(Errc::usage, fmt::format("--split sizes {}+{}+{} must sum to n={}", parts[0],
                                         parts[1], parts[2], n));
  return parts;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::optional<int> n;
  std::optional<double> noise;
  std::optional<double> scale;
  std::string split;
  std::string file;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  auto [cfg, spec] = load_config(g);
  if (a.n) cfg.data.n = *a.n;
  if (a.noise) cfg.data.noise_std = *a.noise;
  if (a.scale) cfg.data.scale = *a.scale;
  if (!a.split.empty()) {
    const auto s = parse_split_flag(a.split, cfg.data.n);
    cfg.data.n_labeled = s[0];
    cfg.data.n_unlabeled = s[1];
    cfg.data.n_test = s[2];
  } else if (cfg.data.n_labeled + cfg.data.n_unlabeled + cfg.data.n_test != cfg.data.n) {
    throw Error(Errc::usage, fmt::format("split sizes must sum to n={}; pass --split", cfg.data.n));
  }
  const std::uint64_t seed = cfg.base_seed;
  auto data = twomoon_generate(cfg.data.n, cfg.data.noise_std,
                               detail::derive_seed(seed, detail::tag_data), cfg.data.scale);
  auto parts = split(data, cfg.data.n_labeled, cfg.data.n_unlabeled, cfg.data.n_test,
                     detail::derive_seed(seed, detail::tag_split));
  const std::string path =
      a.file.empty() ? (fs::path(out_dir(g)) / "dataset.csv").string() : a.file;
  write_dataset_csv(path, data, parts.tags);
  if (!g.quiet)
    fmt::print("wrote {}: labeled {} unlabeled {} test {}\n", path, parts.labeled.size(),
               parts.unlabeled.size(), parts.test.size());
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_run(const Globals& g, bool save_models) {
  auto [cfg, spec] = load_config(g);
  const std::string dir = out_dir(g);
  ResultRow row{cfg.baseline, cfg.transform, cfg.label_mode, {}};
  if (save_models) {
    fs::create_directories(fs::path(dir) / "models");
    fs::create_directories(fs::path(dir) / "data");
  }
  for (int k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(k);
    try {
      SeedContext ctx = prepare_seed(cfg, seed);
      TrainedModel student{MLP({1, 2}, cfg.activation, 0), Modality::alpha, {}};
      row.seeds.push_back(run_baseline(ctx, cfg, &student));
      if (save_models) {
        const auto base = fs::path(dir);
        auto data = twomoon_generate(cfg.data.n, cfg.data.noise_std,
                                     detail::derive_seed(seed, detail::tag_data), cfg.data.scale);
        write_dataset_csv((base / "data" / fmt::format("seed{}.csv", seed)).string(), data,
                          ctx.split.tags);
        save_checkpoint((base / "models" / fmt::format("seed{}_um_teacher.ckpt", seed)).string(),
                        ctx.teacher);
        if (cfg.baseline != Baseline::um_teacher)
          save_checkpoint((base / "models" /
                           fmt::format("seed{}_{}.ckpt", seed, baseline_name(cfg.baseline)))
                              .string(),
                          student);
      }
    } catch (const Error& e) {
      SeedResult failed;
      failed.seed = seed;
      failed.error = e.what();
      row.seeds.push_back(failed);
      if (!g.quiet) fmt::print(stderr, "seed {} failed: {}\n", seed, e.what());
    }
  }
  write_text_file((fs::path(dir) / "results.csv").string(), results_csv({row}));
  append_manifest(dir, make_manifest("run", cfg, dir));
  if (!g.quiet)
    fmt::print("{} {} {}: teacher {:.4f} +- {:.4f}, student {:.4f} +- {:.4f} over {} seeds\n",
               baseline_name(cfg.baseline), cfg.transform.kind_name(),
               format_strength(cfg.transform.strength()), row.teacher_mean(), row.teacher_std(),
               row.student_mean(), row.student_std(), row.student_accs().size());
  return row.failed() ? 2 : 0;
}

// ---------------------------------------------------------------------------

int cmd_sweep(const Globals& g) {
  auto [cfg, spec] = load_config(g);
  if (spec.empty()) throw Error(Errc::usage, "sweep axes are empty");
  const std::string dir = out_dir(g);
  SweepOptions opt;
  opt.jobs = g.jobs;
  if (!g.quiet)
    opt.progress = [](int done, int total) { fmt::print(stderr, "seed {}/{} done\n", done, total); };
  const auto outcome = run_sweep(cfg, spec, (fs::path(dir) / "sweep_cache.csv").string(), opt);
  write_text_file((fs::path(dir) / "results.csv").string(), results_csv(outcome.rows));
  write_text_file((fs::path(dir) / "summary.csv").string(), summary_csv(outcome.rows));
  append_manifest(dir, make_manifest("sweep", cfg, dir));
  if (!g.quiet) {
    fmt::print("computed {} reused {}\n", outcome.computed, outcome.reused);
    for (const auto& r : outcome.rows)
      fmt::print("{:<15} {:<16} {:>4}  {:.4f} +- {:.4f}\n", baseline_name(r.baseline),
                 r.transform.kind_name(), format_strength(r.transform.strength()),
                 r.student_mean(), r.student_std());
  }
  return outcome.any_failed() ? 2 : 0;
}

// ---------------------------------------------------------------------------

struct TheoryArgs {
  std::string instance = "twomoon";
  int instances = 1;
  std::optional<double> radius;
  std::optional<double> a_bar;
  long samples = 2000;
  int max_class_points = 12;
  int draws = 16;
  std::string data;
  std::string teacher;
  std::string student;
  std::optional<double> err;
};

/// Per class, up to `m` indices of D_u in a seeded random order.
std::vector<int> subsample(const std::vector<int>& labels, int m, std::uint64_t seed) {
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(detail::derive_seed(seed, 0x5ab5ULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::map<int, int> taken;
  std::vector<int> out;
  for (int i : order)
    if (taken[labels[i]]++ < m) out.push_back(i);
  std::sort(out.begin(), out.end());
  return out;
}

TheoryRow twomoon_row(const ExperimentConfig& cfg, const TheoryArgs& a, std::uint64_t seed,
                      std::vector<std::string>& warnings) {
  SplitResult parts;
  if (!a.data.empty()) {
    const auto d = read_dataset_csv(a.data);
    parts = split_from_tags(d.samples, d.tags);
  } else {
    auto data = twomoon_generate(cfg.data.n, cfg.data.noise_std,
                                 detail::derive_seed(seed, detail::tag_data), cfg.data.scale);
    parts = split(data, cfg.data.n_labeled, cfg.data.n_unlabeled, cfg.data.n_test,
                  detail::derive_seed(seed, detail::tag_split));
  }
  if (parts.unlabeled.size() == 0) throw Error(Errc::usage, "theory needs a non-empty unlabeled split");
  if (!a.teacher.empty() && !fs::exists(a.teacher))
    throw Error(Errc::usage, "missing teacher checkpoint " + a.teacher);
  if (!a.student.empty() && !fs::exists(a.student))
    throw Error(Errc::usage, "missing student checkpoint " + a.student);
  TrainedModel teacher = a.teacher.empty() ? train_teacher(parts.labeled, cfg, seed)
                                           : load_checkpoint(a.teacher);
  TrainedModel student = [&] {
    if (!a.student.empty()) return load_checkpoint(a.student);
    ExperimentConfig sc = cfg;
    if (sc.baseline == Baseline::um_teacher) sc.baseline = Baseline::mm_student;
    const auto pseudo = pseudo_label(teacher, parts.unlabeled, cfg.label_mode);
    return train_student(pseudo, sc, seed, {&parts.unlabeled_oracle, &parts.labeled});
  }();

  const MisclassifiedSet mis = misclassified_set(teacher, parts.unlabeled, parts.unlabeled_oracle);
  const auto keep = subsample(parts.unlabeled_oracle.labels, a.max_class_points, seed);
  std::vector<Vec> pa, pb;
  std::vector<int> labels;
  std::map<int, int> local_of;
  for (int i : keep) {
    local_of[i] = static_cast<int>(pa.size());
    pa.push_back(Vec::Constant(1, parts.unlabeled.alpha(0, i)));
    pb.push_back(Vec::Constant(1, parts.unlabeled.beta(0, i)));
    labels.push_back(parts.unlabeled_oracle.labels[i]);
  }
  const double r = a.radius.value_or(0.15 * cfg.data.scale);
  const FinitePointSet alpha(pa, labels, r), beta(pb, labels, r);

  double a_bar = a.a_bar.value_or(mis.a_bar);
  if (!(a_bar > 0.0)) {
    a_bar = 1.0 / a.max_class_points;
    warnings.push_back(fmt::format("twomoon_{}: teacher makes no mistakes on D_u; a_bar set to {:.4f}",
                                   seed, a_bar));
  }
  EnumerationBudget budget;
  budget.samples = a.samples;
  budget.seed = seed;
  Subset restricted;
  for (int i : mis.indices)
    if (local_of.count(i)) restricted.push_back(local_of[i]);
  if (!restricted.empty()) budget.extra.push_back(restricted);

  TheoryRow row = theory_row({fmt::format("twomoon_{}", seed), alpha, beta, a_bar}, budget);
  row.err_teacher = 1.0 - evaluate(teacher, parts.test).accuracy;
  row.err_student = 1.0 - evaluate(student, parts.test).accuracy;
  Rng rng(detail::derive_seed(seed, 0x3055ULL));
  row.mu_hat = measure_mu(student, parts.unlabeled, cfg.transform, a.draws, rng);
  return row;
}

int cmd_theory(const Globals& g, const TheoryArgs& a) {
  auto [cfg, spec] = load_config(g);
  if (a.instances < 1) throw Error(Errc::usage, "--instances must be >= 1");
  const std::string dir = out_dir(g);
  std::vector<TheoryRow> rows;
  std::vector<std::string> warnings;
  for (int k = 0; k < a.instances; ++k) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(k);
    TheoryRow row;
    if (a.instance == "twomoon") {
      row = twomoon_row(cfg, a, seed, warnings);
    } else if (a.instance == "grid" || a.instance == "cluster") {
      EnumerationBudget budget;
      budget.samples = a.samples;
      budget.seed = seed;
      TheoryInstance inst = random_instance(a.instance, seed, a.a_bar.value_or(0.4));
      row = theory_row(inst, budget);
      if (a.err) row.err_teacher = *a.err;
    } else {
      throw Error(Errc::usage, "--instance must be twomoon, grid or cluster");
    }
    for (auto& w : fill_bounds(row)) warnings.push_back(std::move(w));
    if (!g.quiet)
      fmt::print("{}: c1 {:.4f} c2 {:.4f} c_prod {:.4f} (general subsets {:.4f}) lemma1 {}\n",
                 row.instance, row.c1_hat, row.c2_hat, row.c_prod_hat, row.c_general_hat,
                 row.lemma1_pass ? "pass" : "fail");
    rows.push_back(std::move(row));
  }
  const std::string path = (fs::path(dir) / "theory.csv").string();
  write_text_file(path, theory_csv(rows));
  RunManifest manifest = make_manifest("theory", cfg, dir);
  manifest.seeds.clear();
  for (int k = 0; k < a.instances; ++k)
    manifest.seeds.push_back(cfg.base_seed + static_cast<std::uint64_t>(k));
  append_manifest(dir, manifest);
  for (const auto& w : warnings) fmt::print(stderr, "warning: {}\n", w);
  if (!g.quiet) fmt::print("wrote {}\n", path);
  return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string data;
  std::vector<std::string> models;
  std::string title;
  bool no_timestamp = false;
};

int cmd_plot(const Globals& g, const PlotArgs& a) {
  if (a.models.empty()) throw Error(Errc::usage, "plot needs at least one --model checkpoint");
  for (const auto& m : a.models)
    if (!fs::exists(m)) throw Error(Errc::usage, "missing checkpoint " + m);
  const auto data = read_dataset_csv(a.data);
  const std::string dir = out_dir(g);
  for (const auto& m : a.models) {
    const auto model = load_checkpoint(m);
    PlotOptions opt;
    opt.title = a.title.empty() ? fs::path(m).stem().string() : a.title;
    if (!a.no_timestamp) opt.timestamp = utc_timestamp();
    const std::string path = (fs::path(dir) / (fs::path(m).stem().string() + ".svg")).string();
    write_text_file(path, render_plot_svg(model, data, opt));
    if (!g.quiet) fmt::print("wrote {}\n", path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Multimodal knowledge expansion lab on TwoMoon"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--out", g.out, "output directory (default $MKELAB_OUT or .)");
  app.add_option("--jobs", g.jobs, "sweep worker count")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "key=value config file");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "write a TwoMoon dataset CSV");
  gen->add_option("--n", ga.n, "sample count");
  gen->add_option("--noise", ga.noise, "noise standard deviation");
  gen->add_option("--scale", ga.scale, "arc geometry scale");
  gen->add_option("--split", ga.split, "n_l,n_u,n_test");
  gen->add_option("--file", ga.file, "output file (default <out>/dataset.csv)");

  bool save_models = false;
  auto* run = app.add_subcommand("run", "train one baseline over the configured seeds");
  run->add_flag("--save-models", save_models, "write datasets and checkpoints per seed");

  auto* sweep = app.add_subcommand("sweep", "transform x strength x baseline grid");

  TheoryArgs ta;
  auto* theory = app.add_subcommand("theory", "expansion estimates and bounds");
  theory->add_option("--instance", ta.instance, "twomoon, grid or cluster");
  theory->add_option("--instances", ta.instances, "number of instances (seeds)");
  theory->add_option("--radius", ta.radius, "neighborhood radius");
  theory->add_option("--a-bar", ta.a_bar, "subset measure limit");
  theory->add_option("--samples", ta.samples, "random subsets per class when not enumerable");
  theory->add_option("--max-class-points", ta.max_class_points, "points kept per class");
  theory->add_option("--draws", ta.draws, "perturbation draws for mu");
  theory->add_option("--data", ta.data, "dataset CSV");
  theory->add_option("--teacher", ta.teacher, "teacher checkpoint");
  theory->add_option("--student", ta.student, "student checkpoint");
  theory->add_option("--err", ta.err, "teacher error for synthetic instances");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "SVG of dataset and decision boundary");
  plot->add_option("--data", pa.data, "dataset CSV")->required();
  plot->add_option("--model", pa.models, "checkpoint (repeatable)");
  plot->add_option("--title", pa.title, "annotation title");
  plot->add_flag("--no-timestamp", pa.no_timestamp, "omit the timestamp comment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_generate(g, ga);
    if (*run) return cmd_run(g, save_models);
    if (*sweep) return cmd_sweep(g);
    if (*theory) return cmd_theory(g, ta);
    if (*plot) return cmd_plot(g, pa);
  } catch (const Error& e) {
    fmt::print(stderr, "mkelab: {}\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    fmt::print(stderr, "mkelab: {}\n", e.what());
    return 2;
  }
  return 1;
}
