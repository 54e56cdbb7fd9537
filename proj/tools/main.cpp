#include <CLI11.hpp>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "retmap/eval.hpp"
#include "retmap/pipeline.hpp"
#include "retmap/plot.hpp"
#include "retmap/synth.hpp"

namespace {

using namespace retmap;

ConfigMap load_config_or_empty(const std::string& path) {
  if (path.empty()) return {};
  return load_config(path);
}

EvalOptions eval_options_from(const ConfigMap& c) {
  EvalOptions o;
  o.r2_threshold = config_get(c, "r2_threshold", o.r2_threshold);
  std::string w = config_get(c, "dv_weighting", std::string("none"));
  if (w == "none")
    o.dv_weighting = DvWeighting::None;
  else if (w == "r2")
    o.dv_weighting = DvWeighting::R2;
  else
    throw InvalidArgument("unknown dv_weighting: " + w);
  o.raw_label = config_get(c, "raw_label", o.raw_label);
  o.reg_label = config_get(c, "reg_label", o.reg_label);
  return o;
}

// Output directory for one case: `out` itself for a single case, a
// per-case subdirectory when several run together.
std::filesystem::path case_out_dir(const std::filesystem::path& out,
                                   const std::string& case_path, bool multi) {
  if (!multi) return out;
  std::filesystem::path p(case_path);
  std::string name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  return out / name;
}

// Runs `work` over the cases, `jobs` at a time; buffered per-case output is
// printed in case order and the first failure (by case order) is rethrown.
void run_over_cases(const std::vector<std::string>& cases, int jobs,
                    const std::function<std::string(std::size_t)>& work) {
  const std::size_t n = cases.size();
  std::vector<std::string> output(n);
  std::vector<std::exception_ptr> failure(n);
  int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        output[i] = work(i);
      } catch (...) {
        failure[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            output[i] = work(i);
          } catch (...) {
            failure[i] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!output[i].empty()) std::cout << output[i];
  for (std::size_t i = 0; i < n; ++i)
    if (failure[i]) std::rethrow_exception(failure[i]);
}

struct FlattenArgs {
  std::vector<std::string> cases;
  int refine = 5;
  std::string weights = "clamped-cotan";
  bool plot = false;
};

void run_flatten(const FlattenArgs& a, int jobs, bool quiet) {
  run_over_cases(a.cases, jobs, [&](std::size_t i) {
    CaseDirectory dir{a.cases[i]};
    CaseManifest manifest = load_manifest(dir.manifest());
    verify_checksum(dir, manifest, "mesh.retmesh");
    CorticalMesh mesh = load_mesh(dir.mesh());

    InteriorWeights w = a.weights == "uniform" ? InteriorWeights::Uniform
                                               : InteriorWeights::ClampedCotan;
    DiskParameterization param = harmonic_disk_map(mesh, w);
    param = conformal_refine(mesh, param, a.refine);
    save_parameterization(dir.uv(), param);

    if (a.plot) {
      BeltramiField field = flattening_beltrami(mesh, param);
      std::vector<double> mu_abs(field.mu.size());
      for (std::size_t k = 0; k < field.mu.size(); ++k)
        mu_abs[k] = std::abs(field.mu[k]);
      write_text_file(dir.root / "flatten_mu.svg",
                      plot_disk_faces(param, mesh.faces, mu_abs));
    }
    write_case_manifest(dir, manifest.meta);

    if (quiet) return std::string();
    ConformalErrorStats stats = conformal_error(mesh, param);
    return a.cases[i] + ": mean|mu| " + format_double(stats.mean) + ", max|mu| " +
           format_double(stats.max) + ", flipped " +
           std::to_string(count_flipped(param.uv, mesh.faces)) + "\n";
  });
}

struct RegisterArgs {
  std::vector<std::string> cases;
  std::string template_dir;
  std::string out;
};

void run_register(const RegisterArgs& a, const ConfigMap& config_map, int jobs,
                  bool quiet) {
  RegistrationConfig config = registration_config_from(config_map);
  const bool multi = a.cases.size() > 1;
  run_over_cases(a.cases, jobs, [&](std::size_t i) {
    LoadedCase subject = load_case(CaseDirectory{a.cases[i]});
    LoadedCase templ = load_case(CaseDirectory{a.template_dir});
    RegistrationResult result = register_maps(subject.map, templ.map, config);
    std::filesystem::path out = case_out_dir(a.out, a.cases[i], multi);
    write_registration_outputs(out, subject.map, templ.map, result);
    if (quiet) return std::string();
    return a.cases[i] + ": iterations " +
           std::to_string(result.energy_trace.size() - 1) + ", converged " +
           (result.converged ? "yes" : "no") + ", energy " +
           format_double(result.energy_trace.back().total) + ", max|mu| " +
           format_double(result.final_mu_max) + ", flipped " +
           std::to_string(count_flipped(result.f, subject.map.mesh.faces)) + "\n";
  });
}

struct EvaluateArgs {
  std::string case_dir;
  std::string template_dir;
  std::string f_path;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a, const ConfigMap& config_map, bool quiet) {
  LoadedCase subject = load_case(CaseDirectory{a.case_dir});
  LoadedCase templ = load_case(CaseDirectory{a.template_dir});
  if (!subject.stimulus) throw IoError("case has no stimulus; cannot evaluate");
  if (!subject.bold) throw IoError("case has no BOLD series; cannot evaluate");

  DiskParameterization f = load_parameterization(a.f_path, subject.map.mesh);
  RegistrationResult result;
  result.f = f.uv;
  result.converged = true;
  result.final_mu_max =
      compute_beltrami(subject.map.mesh.faces, subject.map.param.uv, f.uv).max_abs();

  EvalReport report = evaluate_run(subject.map, templ.map, result,
                                   *subject.stimulus, *subject.bold,
                                   eval_options_from(config_map));
  std::filesystem::create_directories(a.out);
  std::filesystem::path out(a.out);
  write_text_file(out / "report.txt", emit_report(report, ReportFormat::Text));
  write_text_file(out / "report.csv", emit_report(report, ReportFormat::Csv));
  write_text_file(out / "report.svg", emit_report(report, ReportFormat::Svg));
  write_text_file(out / "report_detail.csv", emit_detail_csv(report));
  if (!quiet) std::cout << emit_report(report, ReportFormat::Text);
}

struct SynthArgs {
  std::string template_out;
  std::string subject_out;
  int vertices = 4921;
  double mu_max = 0.4;
  double noise_sd = 0.5;
  double ecc_min = 1.0;
  double ecc_max = 40.0;
  double wedge = 360.0;
  int bands = 1;
  double r2_base = 0.9;
  double r2_decay = 0.02;
  bool with_bold = false;
  double bold_noise_frac = 2.0;
  int stim_resolution = 32;
  int frames_per_sweep = 16;
  double tr = 1.0;
};

void write_template_case(const std::filesystem::path& root, const RetinotopicMap& map,
                         std::map<std::string, std::string> meta) {
  CaseDirectory dir{root};
  std::filesystem::create_directories(dir.root);
  save_mesh(dir.mesh(), map.mesh);
  save_parameterization(dir.uv(), map.param);
  save_prf_csv(dir.prf(), {map.visual, map.prf_size, map.variance_explained});
  meta["angle_convention"] = kAngleConventionMath;
  write_case_manifest(dir, meta);
}

void run_synth(const SynthArgs& a, std::uint64_t seed, bool quiet) {
  SyntheticSpec spec;
  spec.mesh_resolution = a.vertices;
  spec.ecc_min = a.ecc_min;
  spec.ecc_max = a.ecc_max;
  spec.wedge_deg = a.wedge;
  spec.bands = a.bands;
  spec.deformation_mu_max = a.mu_max;
  spec.visual_noise_sd = a.noise_sd;
  spec.r2_base = a.r2_base;
  spec.r2_decay = a.r2_decay;
  spec.seed = seed;

  RetinotopicMap templ = synth_template(spec);
  std::map<std::string, std::string> meta;
  meta["seed"] = std::to_string(seed);
  meta["tr"] = format_double(a.tr);
  write_template_case(a.template_out, templ, meta);

  SynthDeformation def =
      synth_deformation(templ.mesh, templ.param, a.mu_max, seed + 1);
  RetinotopicMap subject = synth_subject(templ, def, a.noise_sd, a.r2_base,
                                         a.r2_decay, seed + 2);

  CaseDirectory dir{a.subject_out};
  std::filesystem::create_directories(dir.root);
  save_mesh(dir.mesh(), subject.mesh);
  save_parameterization(dir.uv(), subject.param);
  save_prf_csv(dir.prf(), {subject.visual, subject.prf_size,
                           subject.variance_explained});
  save_deformation(dir.deformation(), def);

  if (a.with_bold) {
    Stimulus stim = synth_bar_stimulus(4, a.frames_per_sweep, 2.0 * a.ecc_max,
                                       a.stim_resolution, a.tr);
    save_stimulus(dir.stimulus(), stim);

    // Observed series come from the ground-truth template values at the
    // deformed positions, plus white noise scaled to each clean series.
    std::vector<TemplateSample> truth =
        interpolate_template(templ, def.deformed_uv);
    const int nv = subject.vertex_count();
    BoldSeries clean, noisy;
    clean.tr = noisy.tr = a.tr;
    clean.samples.resize(nv);
    noisy.samples.resize(nv);
    Rng rng(seed + 3);
    for (int i = 0; i < nv; ++i) {
      if (!truth[i].valid)
        throw SolverFailure("deformed vertex left the template domain");
      clean.samples[i] = predict_bold(stim, truth[i].visual.x(),
                                      truth[i].visual.y(), truth[i].prf_size,
                                      HRFParams{});
      const auto& c = clean.samples[i];
      double mean = 0.0;
      for (double v : c) mean += v;
      mean /= static_cast<double>(c.size());
      double var = 0.0;
      for (double v : c) var += (v - mean) * (v - mean);
      double sd = std::sqrt(var / static_cast<double>(c.size()));
      noisy.samples[i].resize(c.size());
      for (std::size_t t = 0; t < c.size(); ++t)
        noisy.samples[i][t] = c[t] + a.bold_noise_frac * sd * rng.normal();
    }
    save_bold_csv(dir.bold_clean(), clean);
    save_bold_csv(dir.bold(), noisy);
  }

  std::map<std::string, std::string> meta_s;
  meta_s["seed"] = std::to_string(seed);
  meta_s["tr"] = format_double(a.tr);
  meta_s["deformation_strength"] = format_double(def.achieved_mu_max);
  meta_s["visual_noise_sd"] = format_double(a.noise_sd);
  meta_s["angle_convention"] = kAngleConventionMath;
  write_case_manifest(dir, meta_s);

  if (!quiet)
    std::cout << "template: " << a.template_out << " (" << templ.vertex_count()
              << " vertices)\nsubject: " << a.subject_out << " (deformation "
              << format_double(def.achieved_mu_max) << ", noise "
              << format_double(a.noise_sd) << ")\n";
}

struct PredictArgs {
  std::string case_dir;
  std::string out;
};

void run_predict(const PredictArgs& a, bool quiet) {
  LoadedCase c = load_case(CaseDirectory{a.case_dir});
  if (!c.stimulus) throw IoError("case has no stimulus; cannot predict");
  const int nv = c.map.vertex_count();
  BoldSeries series;
  series.tr = c.stimulus->tr;
  series.samples.resize(nv);
  const std::size_t nt = static_cast<std::size_t>(c.stimulus->frame_count());
  for (int i = 0; i < nv; ++i) {
    // Vertices without a usable pRF produce an all-zero row.
    if (c.map.prf_size[i] > 0.0)
      series.samples[i] = predict_bold(*c.stimulus, c.map.visual[i].x(),
                                       c.map.visual[i].y(), c.map.prf_size[i],
                                       HRFParams{});
    else
      series.samples[i].assign(nt, 0.0);
  }
  save_bold_csv(a.out, series);
  if (!quiet)
    std::cout << a.out << ": " << nv << " series, " << nt << " samples each\n";
}

struct ReportArgs {
  std::string in;
  std::string format = "text";
  std::string out;
};

void run_report(const ReportArgs& a) {
  EvalReport report = parse_report_csv(read_text_file(a.in));
  std::string rendered = emit_report(report, parse_report_format(a.format));
  if (a.out.empty())
    std::cout << rendered;
  else
    write_text_file(a.out, rendered);
}

struct PipelineArgs {
  std::vector<std::string> cases;
  std::string template_dir;
  std::string out;
};

void run_pipeline_cmd(const PipelineArgs& a, const ConfigMap& config_map, int jobs,
                      bool quiet) {
  RegistrationConfig config = registration_config_from(config_map);
  EvalOptions eval_options = eval_options_from(config_map);
  const bool multi = a.cases.size() > 1;
  run_over_cases(a.cases, jobs, [&](std::size_t i) {
    std::filesystem::path out = case_out_dir(a.out, a.cases[i], multi);
    PipelineOutputs outputs =
        run_pipeline(CaseDirectory{a.cases[i]}, CaseDirectory{a.template_dir},
                     config, eval_options, out);
    if (quiet) return std::string();
    return a.cases[i] + ":\n" + emit_report(outputs.report, ReportFormat::Text);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quasiconformal registration toolkit for retinotopic maps"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string config_path;
  int jobs = 1;
  bool quiet = false;
  app.add_option("--seed", seed, "Seed for all generators");
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--jobs", jobs, "Parallel workers across case directories")
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress progress output");

  FlattenArgs flatten_args;
  auto* flatten_cmd =
      app.add_subcommand("flatten", "Compute unit-disk parameterizations");
  flatten_cmd->add_option("--case", flatten_args.cases, "Case directory")
      ->required()
      ->take_all();
  flatten_cmd->add_option("--refine", flatten_args.refine,
                          "Conformal refinement passes");
  flatten_cmd
      ->add_option("--weights", flatten_args.weights, "Interior weight scheme")
      ->check(CLI::IsMember({"clamped-cotan", "uniform"}));
  flatten_cmd->add_flag("--plot", flatten_args.plot,
                        "Write a per-face |mu| panel next to the result");

  RegisterArgs register_args;
  auto* register_cmd =
      app.add_subcommand("register", "Register cases to a template");
  register_cmd
      ->add_option("--subject,--case", register_args.cases, "Subject case directory")
      ->required()
      ->take_all();
  register_cmd
      ->add_option("--template", register_args.template_dir, "Template directory")
      ->required();
  register_cmd->add_option("--out", register_args.out, "Output directory")
      ->required();

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Evaluate a registered map against BOLD data");
  evaluate_cmd->add_option("--case", evaluate_args.case_dir, "Case directory")
      ->required();
  evaluate_cmd
      ->add_option("--template", evaluate_args.template_dir, "Template directory")
      ->required();
  evaluate_cmd->add_option("--f", evaluate_args.f_path, "Registered map (.retuv)")
      ->required();
  evaluate_cmd->add_option("--out", evaluate_args.out, "Output directory")
      ->required();

  SynthArgs synth_args;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic template/subject pair");
  synth_cmd
      ->add_option("--template-out", synth_args.template_out, "Template directory")
      ->required();
  synth_cmd->add_option("--subject-out", synth_args.subject_out, "Subject directory")
      ->required();
  synth_cmd->add_option("--vertices", synth_args.vertices, "Mesh vertex target");
  synth_cmd->add_option("--mu-max", synth_args.mu_max, "Deformation strength");
  synth_cmd->add_option("--noise-sd", synth_args.noise_sd,
                        "Visual coordinate noise SD (degrees)");
  synth_cmd->add_option("--ecc-min", synth_args.ecc_min, "Minimum eccentricity");
  synth_cmd->add_option("--ecc-max", synth_args.ecc_max, "Maximum eccentricity");
  synth_cmd->add_option("--wedge", synth_args.wedge, "Wedge span (degrees)");
  synth_cmd->add_option("--bands", synth_args.bands, "Mirrored angle bands");
  synth_cmd->add_option("--r2-base", synth_args.r2_base, "R^2 at zero eccentricity");
  synth_cmd->add_option("--r2-decay", synth_args.r2_decay, "R^2 decay per degree");
  synth_cmd->add_flag("--with-bold", synth_args.with_bold,
                      "Also generate stimulus and BOLD series");
  synth_cmd->add_option("--bold-noise-frac", synth_args.bold_noise_frac,
                        "BOLD noise SD as a fraction of each clean series SD");
  synth_cmd->add_option("--stim-resolution", synth_args.stim_resolution,
                        "Stimulus grid resolution");
  synth_cmd->add_option("--frames-per-sweep", synth_args.frames_per_sweep,
                        "Frames per bar sweep");
  synth_cmd->add_option("--tr", synth_args.tr, "Sampling interval (seconds)");

  PredictArgs predict_args;
  auto* predict_cmd =
      app.add_subcommand("predict-bold", "Predict BOLD series from a case's pRFs");
  predict_cmd->add_option("--case", predict_args.case_dir, "Case directory")
      ->required();
  predict_cmd->add_option("--out", predict_args.out, "Output CSV path")->required();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Render a saved report CSV");
  report_cmd->add_option("--in", report_args.in, "Report CSV path")->required();
  report_cmd->add_option("--format", report_args.format, "text, csv, or svg");
  report_cmd->add_option("--out", report_args.out, "Output path (default stdout)");

  PipelineArgs pipeline_args;
  auto* pipeline_cmd =
      app.add_subcommand("pipeline", "Flatten, register, and evaluate end to end");
  pipeline_cmd->add_option("--case,--subject", pipeline_args.cases, "Case directory")
      ->required()
      ->take_all();
  pipeline_cmd
      ->add_option("--template", pipeline_args.template_dir, "Template directory")
      ->required();
  pipeline_cmd->add_option("--out", pipeline_args.out, "Output directory")
      ->required();

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  std::string active = "cli";
  flatten_cmd->callback([&] {
    active = "flatten";
    run_flatten(flatten_args, jobs, quiet);
  });
  register_cmd->callback([&] {
    active = "register";
    run_register(register_args, load_config_or_empty(config_path), jobs, quiet);
  });
  evaluate_cmd->callback([&] {
    active = "evaluate";
    run_evaluate(evaluate_args, load_config_or_empty(config_path), quiet);
  });
  synth_cmd->callback([&] {
    active = "synth";
    run_synth(synth_args, seed, quiet);
  });
  predict_cmd->callback([&] {
    active = "predict-bold";
    run_predict(predict_args, quiet);
  });
  report_cmd->callback([&] {
    active = "report";
    run_report(report_args);
  });
  pipeline_cmd->callback([&] {
    active = "pipeline";
    run_pipeline_cmd(pipeline_args, load_config_or_empty(config_path), jobs, quiet);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const PipelineError& e) {
    std::cerr << "stage=" << e.stage() << " code=" << e.code()
              << " msg=" << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "stage=" << active << " code=" << e.code() << " msg=" << e.what()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "stage=" << active << " code=Unhandled msg=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
