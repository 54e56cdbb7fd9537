#include "retmap/pipeline.hpp"

#include <cmath>
#include <numbers>

#include "retmap/plot.hpp"
#include "retmap/synth.hpp"

namespace retmap {

namespace {

// Runs a stage and rebrands any toolkit error with the stage name.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e.code(), e.what());
  }
}

constexpr int kDefaultRefinePasses = 5;

}  // namespace

LoadedCase load_case(const CaseDirectory& dir, bool require_uv) {
  return stage("load", [&] {
    LoadedCase out;
    out.manifest = load_manifest(dir.manifest());

    verify_checksum(dir, out.manifest, "mesh.retmesh");
    out.map.mesh = load_mesh(dir.mesh());

    if (std::filesystem::exists(dir.uv())) {
      verify_checksum(dir, out.manifest, "uv.retuv");
      out.map.param = load_parameterization(dir.uv(), out.map.mesh);
    } else if (require_uv) {
      throw IoError(dir.uv().string() + " is required but absent");
    } else {
      DiskParameterization param = harmonic_disk_map(out.map.mesh);
      out.map.param = conformal_refine(out.map.mesh, param, kDefaultRefinePasses);
    }

    verify_checksum(dir, out.manifest, "prf.csv");
    PrfTable prf = load_prf_csv(
        dir.prf(),
        config_get(out.manifest.meta, "angle_convention",
                   std::string(kAngleConventionMath)));
    out.map.visual = std::move(prf.visual);
    out.map.prf_size = std::move(prf.prf_size);
    out.map.variance_explained = std::move(prf.variance_explained);
    check_map_invariants(out.map);

    if (std::filesystem::exists(dir.stimulus())) {
      verify_checksum(dir, out.manifest, "stimulus.retstim");
      out.stimulus = load_stimulus(dir.stimulus());
    }
    if (std::filesystem::exists(dir.bold())) {
      verify_checksum(dir, out.manifest, "bold.csv");
      double tr = out.stimulus ? out.stimulus->tr
                               : config_get(out.manifest.meta, "tr", 1.0);
      out.bold = load_bold_csv(dir.bold(), tr);
      if (out.bold->samples.size() !=
          static_cast<std::size_t>(out.map.mesh.vertex_count()))
        throw ParseError(dir.bold().string() + ": row count does not match mesh");
    }
    if (std::filesystem::exists(dir.deformation())) {
      verify_checksum(dir, out.manifest, "deformation.retdef");
      out.deformation = load_deformation(dir.deformation());
    }
    return out;
  });
}

void write_registration_outputs(const std::filesystem::path& out_dir,
                                const RetinotopicMap& subject,
                                const RetinotopicMap& templ,
                                const RegistrationResult& result) {
  std::filesystem::create_directories(out_dir);
  save_parameterization(out_dir / "f.retuv",
                        {result.f, subject.param.boundary_ids});

  AppliedRegistration applied = apply_registration(subject, templ, result.f);
  PrfTable table{applied.map.visual, applied.map.prf_size,
                 applied.map.variance_explained};
  save_prf_csv(out_dir / "registered_prf.csv", table);

  std::string trace = "iteration,data,smooth,total\n";
  for (std::size_t k = 0; k < result.energy_trace.size(); ++k) {
    const EnergyBreakdown& e = result.energy_trace[k];
    trace += std::to_string(k) + "," + format_double(e.data) + "," +
             format_double(e.smooth) + "," + format_double(e.total) + "\n";
  }
  write_text_file(out_dir / "energy_trace.csv", trace);

  ConfigMap summary;
  summary["iterations"] = std::to_string(result.energy_trace.size() - 1);
  summary["converged"] = result.converged ? "1" : "0";
  const EnergyBreakdown& last = result.energy_trace.back();
  summary["final_data_energy"] = format_double(last.data);
  summary["final_smooth_energy"] = format_double(last.smooth);
  summary["final_total_energy"] = format_double(last.total);
  summary["final_mu_max"] = format_double(result.final_mu_max);
  summary["flipped_triangles"] =
      std::to_string(count_flipped(result.f, subject.mesh.faces));
  write_text_file(out_dir / "summary.txt", serialize_config(summary));
}

namespace {

void write_panels(const std::filesystem::path& out_dir,
                  const RetinotopicMap& subject,
                  const RetinotopicMap& registered) {
  auto panel = [&](const RetinotopicMap& map, const std::string& prefix) {
    const std::size_t nv = map.visual.size();
    std::vector<double> ecc(nv), ang(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      ecc[i] = map.visual[i].norm();
      ang[i] = ecc[i] > 0.0 ? std::atan2(map.visual[i].y(), map.visual[i].x()) *
                                  180.0 / std::numbers::pi
                            : 0.0;
    }
    write_text_file(out_dir / (prefix + "_ecc.svg"),
                    plot_disk_map(map.param, map.mesh.faces, ecc,
                                  ColormapMode::Sequential));
    write_text_file(out_dir / (prefix + "_ang.svg"),
                    plot_disk_map(map.param, map.mesh.faces, ang,
                                  ColormapMode::Cyclic));
  };
  panel(subject, "raw");
  panel(registered, "registered");
}

}  // namespace

PipelineOutputs run_pipeline(const CaseDirectory& case_dir,
                             const CaseDirectory& template_dir,
                             const RegistrationConfig& config,
                             const EvalOptions& eval_options,
                             const std::filesystem::path& out_dir) {
  LoadedCase subject = load_case(case_dir);
  LoadedCase templ = load_case(template_dir);

  PipelineOutputs out;
  out.registration = stage("register", [&] {
    return register_maps(subject.map, templ.map, config);
  });
  stage("apply", [&] {
    write_registration_outputs(out_dir, subject.map, templ.map, out.registration);
    return 0;
  });

  out.report = stage("evaluate", [&] {
    if (!subject.stimulus)
      throw IoError("case has no stimulus; cannot evaluate BOLD fits");
    if (!subject.bold)
      throw IoError("case has no BOLD series; cannot evaluate fits");
    return evaluate_run(subject.map, templ.map, out.registration,
                        *subject.stimulus, *subject.bold, eval_options);
  });

  stage("report", [&] {
    write_text_file(out_dir / "report.txt", emit_report(out.report, ReportFormat::Text));
    write_text_file(out_dir / "report.csv", emit_report(out.report, ReportFormat::Csv));
    write_text_file(out_dir / "report.svg", emit_report(out.report, ReportFormat::Svg));
    write_text_file(out_dir / "report_detail.csv", emit_detail_csv(out.report));
    AppliedRegistration applied =
        apply_registration(subject.map, templ.map, out.registration.f);
    write_panels(out_dir, subject.map, applied.map);
    return 0;
  });
  return out;
}

}  // namespace retmap
