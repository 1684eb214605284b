//! Experiment harness: config-file parsing, convergence studies, physical
//! benchmarks, and the file outputs (CSV, SVG, VTK) with pass/fail monitors.
//!
//! [`run_experiment`] is the single entry point: it takes a parsed
//! [`ExperimentSpec`], creates the output directory, writes an
//! effective-configuration audit plus a realization table for every run, and
//! dispatches on the experiment kind.  Everything numerical lives in
//! [`studies`] and [`benchmarks`]; everything file-shaped in [`output`].

pub mod benchmarks;
pub mod config;
pub mod output;
pub mod studies;

pub use benchmarks::{
    run_cavity, run_channel, BenchmarkRun, CavityCase, CavityStudy, ChannelStudy, EnergyRow,
};
pub use config::{
    parse_config, parse_config_file, ConfigError, ExperimentKind, ExperimentSpec, RawConfig,
};
pub use output::{
    svg_line_chart, vtk_boundary, vtk_fields, vtk_mesh, MonitorCheck, Series,
};
pub use studies::{
    run_gamma_study, run_spatial_study, run_temporal_study, ConvergenceTable, GammaStudy,
    RateStudy,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::schemes::SchemeError;

use output::{fmt_num, projection_monitors, stability_monitor, write_text};

/// Anything that can go wrong between a config file and a finished
/// experiment directory.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// A scheme failure annotated with the study parameter it occurred at.
    #[error("run at {parameter}={value}: {source}")]
    Run {
        parameter: String,
        value: f64,
        source: SchemeError,
    },
    /// A scheme failure inside a named benchmark run.
    #[error("{label}: {source}")]
    Benchmark { label: String, source: SchemeError },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("writing {path:?}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Root directory for experiment output: the `SMHD_OUT` environment
/// variable if set, the working directory otherwise.  A spec's `run.out` is
/// created beneath it (or used verbatim when absolute).
pub fn output_root() -> PathBuf {
    std::env::var_os("SMHD_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// What an experiment left behind: where, which checks it ran, and a short
/// human-readable summary.
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub monitors: Vec<MonitorCheck>,
    pub summary: Vec<String>,
}

impl ExperimentReport {
    pub fn all_passed(&self) -> bool {
        self.monitors.iter().all(|c| c.passed)
    }
}

/// Relative energy-trajectory deviation allowed between the coupled and
/// penalty-projection algorithms on the benchmark problems.
pub const BENCHMARK_GAP_TOL: f64 = 0.02;

/// Allowed relative mass-flux imbalance of the channel's final mean flow.
pub const FLUX_BALANCE_TOL: f64 = 0.05;

/// Runs the experiment described by `spec` and writes all of its outputs.
///
/// Every experiment directory receives `effective-config.txt` (the full
/// round-trippable configuration actually used) and `realizations.txt` (one
/// row per stochastic realization: weight, data factor, parameters), so a
/// run can always be audited and reproduced.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    let dir = output_root().join(&spec.out_dir);
    std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    write_text(&dir.join("effective-config.txt"), &spec.emit_effective())?;

    let mut monitors = Vec::new();
    let mut summary = Vec::new();
    match spec.kind {
        ExperimentKind::GammaStudy => {
            let study = run_gamma_study(spec)?;
            write_text(&dir.join("realizations.txt"), &study.plan.audit_table())?;
            write_text(&dir.join("gamma_table.csv"), &study.table.to_csv())?;
            if spec.svg {
                let chart = svg_line_chart(
                    "mean-field gap vs penalty parameter",
                    "gamma",
                    "space-time H1 gap",
                    &table_series(&study.table),
                    true,
                    true,
                );
                write_text(&dir.join("gamma_gap.svg"), &chart)?;
            }
            for run in &study.runs {
                let label = format!("gamma={}", fmt_num(run.gamma));
                monitors.extend(projection_monitors(&label, &run.spp));
                monitors.push(stability_monitor(&label, &run.spp));
            }
            summary.push(study.table.render());
            summary.push(rate_summary("gap decay per gamma decade", &study.table));
        }
        ExperimentKind::TemporalStudy | ExperimentKind::SpatialStudy => {
            let (study, csv_name, title, x_label) = if spec.kind == ExperimentKind::TemporalStudy {
                (run_temporal_study(spec)?, "temporal_table.csv", "temporal convergence", "dt")
            } else {
                (run_spatial_study(spec)?, "spatial_table.csv", "spatial convergence", "h")
            };
            write_text(&dir.join("realizations.txt"), &study.plan.audit_table())?;
            write_text(&dir.join(csv_name), &study.table.to_csv())?;
            if spec.svg {
                let chart = svg_line_chart(
                    title,
                    x_label,
                    "space-time H1 error of the mean",
                    &table_series(&study.table),
                    true,
                    true,
                );
                write_text(&dir.join(format!("{}.svg", title.replace(' ', "_"))), &chart)?;
            }
            for run in &study.runs {
                let label = format!("{x_label}={}", fmt_num(run.value));
                monitors.extend(projection_monitors(&label, &run.output));
                monitors.push(stability_monitor(&label, &run.output));
            }
            summary.push(study.table.render());
            summary.push(rate_summary(&format!("{title} rate"), &study.table));
        }
        ExperimentKind::Channel => {
            let study = run_channel(spec)?;
            write_text(&dir.join("realizations.txt"), &study.plan.audit_table())?;
            write_text(&dir.join("channel_energy_coupled.csv"), &energy_csv(&study.coupled.energy))?;
            write_text(&dir.join("channel_energy_spp.csv"), &energy_csv(&study.spp.energy))?;
            write_text(
                &dir.join("channel_energy_compare.csv"),
                &compare_csv(&study.coupled.energy, &study.spp.energy),
            )?;
            if spec.snapshots {
                let mesh = study.mesh.as_ref();
                write_text(
                    &dir.join("channel_coupled.vtk"),
                    &vtk_fields(mesh, &study.coupled.final_u, &study.coupled.final_b),
                )?;
                write_text(
                    &dir.join("channel_spp.vtk"),
                    &vtk_fields(mesh, &study.spp.final_u, &study.spp.final_b),
                )?;
            }
            if spec.svg {
                let chart = svg_line_chart(
                    "channel mean energy",
                    "t",
                    "weighted mean of half-norm energies",
                    &energy_series(&[("coupled", &study.coupled.energy), ("spp", &study.spp.energy)]),
                    false,
                    false,
                );
                write_text(&dir.join("channel_energy.svg"), &chart)?;
            }
            monitors.extend(projection_monitors("channel spp", &study.spp.output));
            monitors.push(stability_monitor("channel", &study.spp.output));
            monitors.push(MonitorCheck::new(
                "channel: algorithm energy gap",
                study.energy_gap <= BENCHMARK_GAP_TOL,
                format!(
                    "max relative deviation {:.3e} (tol {BENCHMARK_GAP_TOL})",
                    study.energy_gap
                ),
            ));
            let imbalance = study.flux_imbalance();
            monitors.push(MonitorCheck::new(
                "channel: mass-flux balance",
                imbalance <= FLUX_BALANCE_TOL,
                format!(
                    "influx {:.5}, outflux {:.5}, relative imbalance {:.3e} (tol {FLUX_BALANCE_TOL})",
                    study.influx, study.outflux, imbalance
                ),
            ));
            summary.push(format!(
                "channel: final mean energy coupled {:.6}, spp {:.6}, trajectory gap {:.3e}",
                study.coupled.energy.last().unwrap().mean,
                study.spp.energy.last().unwrap().mean,
                study.energy_gap
            ));
        }
        ExperimentKind::Cavity => {
            let study = run_cavity(spec)?;
            write_text(&dir.join("realizations.txt"), &study.plan.audit_table())?;
            let mut finals = String::from("s,coupled,spp,gap\n");
            for case in &study.cases {
                let s_name = fmt_num(case.s);
                write_text(
                    &dir.join(format!("cavity_energy_s{s_name}_coupled.csv")),
                    &energy_csv(&case.coupled.energy),
                )?;
                write_text(
                    &dir.join(format!("cavity_energy_s{s_name}_spp.csv")),
                    &energy_csv(&case.spp.energy),
                )?;
                if spec.snapshots {
                    write_text(
                        &dir.join(format!("cavity_s{s_name}_spp.vtk")),
                        &vtk_fields(study.mesh.as_ref(), &case.spp.final_u, &case.spp.final_b),
                    )?;
                }
                finals.push_str(&format!(
                    "{s_name},{},{},{}\n",
                    fmt_num(case.coupled.energy.last().unwrap().mean),
                    fmt_num(case.spp.energy.last().unwrap().mean),
                    fmt_num(case.energy_gap)
                ));
                let label = format!("cavity s={s_name}");
                monitors.extend(projection_monitors(&label, &case.spp.output));
                monitors.push(stability_monitor(&label, &case.spp.output));
                monitors.push(MonitorCheck::new(
                    format!("{label}: algorithm energy gap"),
                    case.energy_gap <= BENCHMARK_GAP_TOL,
                    format!(
                        "max relative deviation {:.3e} (tol {BENCHMARK_GAP_TOL})",
                        case.energy_gap
                    ),
                ));
            }
            write_text(&dir.join("cavity_final_energy.csv"), &finals)?;
            if spec.svg {
                let series = vec![
                    Series {
                        label: "coupled".into(),
                        points: study
                            .cases
                            .iter()
                            .zip(study.final_energies(true))
                            .map(|(c, e)| (c.s, e))
                            .collect(),
                    },
                    Series {
                        label: "spp".into(),
                        points: study
                            .cases
                            .iter()
                            .zip(study.final_energies(false))
                            .map(|(c, e)| (c.s, e))
                            .collect(),
                    },
                ];
                let chart = svg_line_chart(
                    "cavity final mean energy vs coupling",
                    "s",
                    "final weighted mean energy",
                    &series,
                    true,
                    false,
                );
                write_text(&dir.join("cavity_final_energy.svg"), &chart)?;
            }
            for (coupled, name) in [(true, "coupled"), (false, "spp")] {
                if study.cases.len() > 1 {
                    let finals = study.final_energies(coupled);
                    monitors.push(MonitorCheck::new(
                        format!("cavity: {name} final energy monotone in s"),
                        study.monotone_in_s(coupled),
                        format!("finals {:?}", finals),
                    ));
                }
            }
            summary.push(format!(
                "cavity: final mean energies over s {:?}: coupled {:?}, spp {:?}",
                study.cases.iter().map(|c| c.s).collect::<Vec<_>>(),
                study.final_energies(true),
                study.final_energies(false),
            ));
        }
    }
    Ok(ExperimentReport { out_dir: dir, monitors, summary })
}

/// One chart series per table field, points at (parameter, error).
fn table_series(table: &ConvergenceTable) -> Vec<Series> {
    table
        .fields
        .iter()
        .enumerate()
        .map(|(k, name)| Series {
            label: name.clone(),
            points: table.rows.iter().map(|r| (r.value, r.errors[k])).collect(),
        })
        .collect()
}

fn rate_summary(what: &str, table: &ConvergenceTable) -> String {
    let per_field: Vec<String> = table
        .fields
        .iter()
        .map(|f| {
            let rates: Vec<String> =
                table.rates_for(f).iter().map(|r| format!("{r:.2}")).collect();
            format!("{f}: [{}]", rates.join(", "))
        })
        .collect();
    format!("{what} — {}", per_field.join("; "))
}

/// CSV of an energy history: per-realization energies then the two weighted
/// means, all in shortest-round-trip notation so reruns are byte-identical.
fn energy_csv(rows: &[EnergyRow]) -> String {
    let n = rows.first().map_or(0, |r| r.per_j.len());
    let mut out = String::from("t");
    for j in 1..=n {
        out.push_str(&format!(",e_{j}"));
    }
    out.push_str(",mean,mean_sq\n");
    for r in rows {
        out.push_str(&fmt_num(r.t));
        for e in &r.per_j {
            out.push(',');
            out.push_str(&fmt_num(*e));
        }
        out.push(',');
        out.push_str(&fmt_num(r.mean));
        out.push(',');
        out.push_str(&fmt_num(r.mean_sq));
        out.push('\n');
    }
    out
}

fn compare_csv(a: &[EnergyRow], b: &[EnergyRow]) -> String {
    let mut out = String::from("t,coupled,spp,abs_diff\n");
    for (ra, rb) in a.iter().zip(b) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_num(ra.t),
            fmt_num(ra.mean),
            fmt_num(rb.mean),
            fmt_num((ra.mean - rb.mean).abs())
        ));
    }
    out
}

fn energy_series(named: &[(&str, &[EnergyRow])]) -> Vec<Series> {
    named
        .iter()
        .map(|(name, rows)| Series {
            label: (*name).to_string(),
            points: rows.iter().map(|r| (r.t, r.mean)).collect(),
        })
        .collect()
}

/// Reads a config file if given, otherwise starts from an empty
/// configuration; applies `kind` and the `overrides` (each "section.key=value")
/// on top; and parses the result into a spec.
pub fn spec_from_sources(
    config_path: Option<&Path>,
    kind: ExperimentKind,
    overrides: &[(String, String)],
) -> Result<ExperimentSpec, HarnessError> {
    let mut raw = match config_path {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    raw.set("run.kind", kind.name())?;
    for (key, value) in overrides {
        raw.set(key, value)?;
    }
    Ok(ExperimentSpec::from_raw(raw)?)
}
