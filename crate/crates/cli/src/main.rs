//! Command-line interface for SnV spin-Hamiltonian analysis.
//!
//! Exit codes: 0 success, 1 validation or computation failure, 2 usage
//! errors (unknown subcommands or flags).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use snv_core::config::RunConfig;
use snv_core::dataset::{self, FileKind, TypedDataset};
use snv_core::fieldcal;
use snv_core::fit::{self, PipelineInput};
use snv_core::hamiltonian::{Basis, FieldSnV, SnVModel};
use snv_core::strain;
use snv_core::synthetic;
use snv_core::transitions::{self, RotationPlane};

mod selftest;

#[derive(Parser)]
#[command(
    name = "snv",
    about = "Spin-Hamiltonian modeling and spectroscopy analysis for SnV centers in diamond",
    version
)]
struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for result files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the manifold Hamiltonians at one field point.
    Eigen(EigenArgs),
    /// Transition observables at one field point.
    Observables(ObservablesArgs),
    /// Field-rotation map of the transition observables.
    Rotmap(RotmapArgs),
    /// Run the staged fitting pipeline on a dataset directory.
    Fit(FitArgs),
    /// Propagate the field-amplitude uncertainty through the pipeline.
    Uncertainty(UncertaintyArgs),
    /// Calibrate the field amplitude from a Hahn-echo trace.
    CalibrateField(CalibrateArgs),
    /// Fit stretched-exponential envelopes to a CPMG suite.
    FitCpmg(FitCpmgArgs),
    /// Project a strain-tensor grid onto the four SnV orientations.
    StrainMap(StrainMapArgs),
    /// Run the built-in oracle and invariant checks.
    Selftest(SelftestArgs),
    /// Write the bundled synthetic datasets and reference models.
    GenFixtures,
}

#[derive(Args)]
struct EigenArgs {
    /// Emitter model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Field magnitude, tesla.
    #[arg(long)]
    magnitude: f64,
    /// Polar angle in the defect frame, degrees.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Azimuth, degrees (bookkeeping).
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    /// Basis to report the Hamiltonian in: xy or so.
    #[arg(long, default_value = "xy")]
    basis: String,
}

#[derive(Args)]
struct ObservablesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
}

#[derive(Args)]
struct RotmapArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sweep plane: yz or xy.
    #[arg(long, default_value = "yz")]
    plane: String,
    /// Field magnitude, tesla.
    #[arg(long)]
    magnitude: f64,
    /// Angular step, degrees.
    #[arg(long, default_value_t = 2.0)]
    step: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Directory of dataset CSV files.
    #[arg(long)]
    pipeline: PathBuf,
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long)]
    pipeline: PathBuf,
    /// Relative field-amplitude error (overrides config).
    #[arg(long)]
    rel_error: Option<f64>,
    /// Grid edge length (overrides config).
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Echo trace CSV.
    #[arg(long)]
    echo: PathBuf,
}

#[derive(Args)]
struct FitCpmgArgs {
    /// CPMG suite CSV.
    #[arg(long)]
    suite: PathBuf,
    /// Stretching factor (frozen during fits).
    #[arg(long, default_value_t = 4.0)]
    xi: f64,
}

#[derive(Args)]
struct StrainMapArgs {
    /// Strain grid CSV.
    #[arg(long)]
    grid: PathBuf,
    /// Apply the reference rotation to every tensor before projection.
    #[arg(long)]
    pre_rotate: bool,
    /// Rotation angle about z, degrees (with --pre-rotate).
    #[arg(long, default_value_t = 90.0)]
    theta: f64,
    /// Rotation angle about y, degrees (with --pre-rotate).
    #[arg(long, default_value_t = 54.0)]
    phi: f64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Random parameter draws per oracle suite.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Seed of the draw generator.
    #[arg(long, default_value_t = 20240304)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {jobs} worker threads");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone();

    match cli.command {
        Command::Eigen(args) => eigen(&args, &config, out.as_deref()),
        Command::Observables(args) => observables(&args, &config, out.as_deref()),
        Command::Rotmap(args) => rotmap(&args, &config, out.as_deref()),
        Command::Fit(args) => fit_pipeline(&args, &config, out.as_deref()),
        Command::Uncertainty(args) => uncertainty(&args, &config, out.as_deref()),
        Command::CalibrateField(args) => calibrate(&args, &config, out.as_deref()),
        Command::FitCpmg(args) => fit_cpmg(&args, out.as_deref()),
        Command::StrainMap(args) => strain_map(&args, out.as_deref()),
        Command::Selftest(args) => selftest::run(args.draws, args.seed, out.as_deref()),
        Command::GenFixtures => gen_fixtures(&config, out.as_deref()),
    }
}

fn load_model(path: &Path) -> Result<SnVModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read model {}", path.display()))?;
    let model: SnVModel = serde_json::from_str(&text)
        .with_context(|| format!("invalid model file {}", path.display()))?;
    model.validate()?;
    if model.ground.lambda == 0.0 || model.excited.lambda == 0.0 {
        eprintln!(
            "warning: spin-orbit splitting is zero; doublet labels lose meaning in this regime"
        );
    }
    Ok(model)
}

fn emit(out: Option<&Path>, name: &str, content: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
            let path = dir.join(name);
            std::fs::write(&path, content)
                .with_context(|| format!("cannot write {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn parse_basis(name: &str) -> Result<Basis> {
    match name {
        "xy" => Ok(Basis::Xy),
        "so" => Ok(Basis::So),
        other => bail!("basis must be 'xy' or 'so', got '{other}'"),
    }
}

fn parse_plane(name: &str) -> Result<RotationPlane> {
    match name {
        "yz" => Ok(RotationPlane::Yz),
        "xy" => Ok(RotationPlane::Xy),
        other => bail!("plane must be 'yz' or 'xy', got '{other}'"),
    }
}

fn eigen(args: &EigenArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let model = load_model(&args.model)?;
    let basis = parse_basis(&args.basis)?;
    let field = FieldSnV::from_polar(args.magnitude, args.theta, args.phi);
    let ground = snv_core::hamiltonian::build_full_hamiltonian(
        &model.ground,
        &field,
        basis,
        &config.constants,
    )
    .eigenvalues();
    let excited = snv_core::hamiltonian::build_full_hamiltonian(
        &model.excited,
        &field,
        basis,
        &config.constants,
    )
    .eigenvalues();
    let report = serde_json::json!({
        "field": field,
        "basis": args.basis,
        "ground_energies_ghz": ground.0,
        "excited_energies_ghz": excited.0,
    });
    emit(out, "eigen.json", &format!("{:#}\n", report))
}

fn observables(args: &ObservablesArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let model = load_model(&args.model)?;
    let field = FieldSnV::from_polar(args.magnitude, args.theta, args.phi);
    let obs = transitions::observables(&model, &field, &config.constants);
    let report = serde_json::json!({
        "field": field,
        "observables": obs,
    });
    emit(out, "observables.json", &format!("{:#}\n", report))
}

fn rotmap(args: &RotmapArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let model = load_model(&args.model)?;
    let plane = parse_plane(&args.plane)?;
    if args.step.is_nan() || args.step <= 0.0 {
        bail!("step must be positive, got {}", args.step);
    }
    let mut grid = Vec::new();
    let mut theta = 0.0;
    while theta < 360.0 {
        grid.push(theta);
        theta += args.step;
    }
    let points =
        transitions::rotation_map(&model, args.magnitude, plane, &grid, &config.constants)?;
    let csv = dataset::write_rotation_map_csv(&points);
    emit(out, &format!("rotmap_{}.csv", args.plane), &csv)
}

/// Read every dataset CSV in a directory into a pipeline input.
fn load_pipeline_dir(dir: &Path) -> Result<PipelineInput> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read dataset directory {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .csv datasets found in {}", dir.display());
    }

    let mut input = PipelineInput::default();
    for path in &paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let Some(kind) = peek_kind(&text) else {
            bail!("{}: missing '# kind:' header", path.display());
        };
        match kind {
            FileKind::Odmr | FileKind::RotationMap | FileKind::Pl => {
                let parsed = dataset::parse_dataset_str(&path.display().to_string(), &text, kind)?;
                if let TypedDataset::Spectroscopy(d) = parsed {
                    input.push(d);
                }
            }
            // echo/cpmg/strain files may share the directory; they belong to
            // other subcommands
            _ => continue,
        }
    }
    Ok(input)
}

fn peek_kind(text: &str) -> Option<FileKind> {
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once(':') {
                if key.trim() == "kind" {
                    return FileKind::parse(value.trim());
                }
            }
        }
    }
    None
}

fn fit_pipeline(args: &FitArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let input = load_pipeline_dir(&args.pipeline)?;
    let result = fit::run_staged_pipeline(&input, &config.constants, &config.fit_options())?;
    let table = fit::format_summary(&result.summary);
    let json = serde_json::json!({
        "summary": result.summary,
        "stages": result.stages,
        "holdouts": result.holdouts,
        "models": result.models,
        "f_sources": {"low_strain": result.f_sources.0, "high_strain": result.f_sources.1},
    });
    emit(out, "fit_summary.json", &format!("{:#}\n", json))?;
    emit(out, "fit_summary.txt", &table)?;
    if out.is_some() {
        print!("{table}");
    }
    Ok(())
}

fn uncertainty(args: &UncertaintyArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let input = load_pipeline_dir(&args.pipeline)?;
    let rel_error = args.rel_error.unwrap_or(config.fit.rel_error);
    let grid_n = args.grid_n.unwrap_or(config.fit.grid_n);
    let report = fit::propagate_field_uncertainty(
        &input,
        &config.constants,
        &config.fit_options(),
        rel_error,
        grid_n,
    )?;
    print!("{}", fit::format_summary(&report.summary));
    if report.failures > 0 {
        println!("{} grid cells failed to converge", report.failures);
    }
    let json = serde_json::json!({
        "rel_error": rel_error,
        "grid_n": grid_n,
        "per_param_spread": report.per_param_spread,
        "summary": report.summary,
        "failures": report.failures,
        "cells": report.cells,
    });
    emit(out, "uncertainty.json", &format!("{:#}\n", json))
}

fn calibrate(args: &CalibrateArgs, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let parsed = dataset::parse_dataset(&args.echo, FileKind::Echo)?;
    let TypedDataset::Echo(trace) = parsed else {
        bail!("expected an echo dataset");
    };
    let fit = fieldcal::fit_echo_modulation(&trace, &config.constants)?;
    let corrected = fieldcal::corrected_field(
        fit.bath_frequency_mhz(),
        fit.bath_frequency_stderr_mhz(),
        trace.b_nominal,
        &config.constants,
    )?;
    let expected = fieldcal::expected_larmor(trace.b_nominal, &config.constants);
    let json = serde_json::json!({
        "b_nominal_t": trace.b_nominal,
        "expected_larmor_mhz": expected,
        "fit": fit,
        "b_corrected_t": corrected.b_corrected,
        "b_uncertainty_t": corrected.uncertainty,
    });
    emit(out, "field_calibration.json", &format!("{:#}\n", json))
}

fn fit_cpmg(args: &FitCpmgArgs, out: Option<&Path>) -> Result<()> {
    let parsed = dataset::parse_dataset(&args.suite, FileKind::Cpmg)?;
    let TypedDataset::Cpmg(traces) = parsed else {
        bail!("expected a cpmg dataset");
    };
    let mut per_n = Vec::new();
    let mut curves = String::from("n_pulses,time_ms,fit\n");
    for trace in &traces {
        let normalized = snv_core::coherence::normalize_decay(trace)?;
        let fit = snv_core::coherence::fit_stretched_exponential(&normalized, args.xi)?;
        for &(t, _) in &normalized.points {
            let value = snv_core::coherence::decay_model(t, fit.amplitude, fit.t2_ms, fit.xi);
            curves.push_str(&format!("{},{t},{value}\n", trace.n_pulses));
        }
        per_n.push(fit);
    }
    let pairs: Vec<(u32, f64)> = per_n.iter().map(|f| (f.n_pulses, f.t2_ms)).collect();
    let power_law = snv_core::coherence::fit_power_law(&pairs)?;
    for fit in &per_n {
        println!(
            "N = {:>3}: T2 = {:.6} ms, A = {:.4}",
            fit.n_pulses, fit.t2_ms, fit.amplitude
        );
    }
    println!(
        "T2 scaling: beta = {:.4} +- {:.4}",
        power_law.beta, power_law.beta_stderr
    );
    let json = serde_json::json!({
        "per_N": per_n.iter().map(|f| serde_json::json!({
            "N": f.n_pulses,
            "T2_ms": f.t2_ms,
            "A": f.amplitude,
        })).collect::<Vec<_>>(),
        "xi": args.xi,
        "beta": power_law.beta,
        "beta_err": power_law.beta_stderr,
    });
    emit(out, "cpmg_fit.json", &format!("{:#}\n", json))?;
    emit(out, "cpmg_curves.csv", &curves)
}

fn strain_map(args: &StrainMapArgs, out: Option<&Path>) -> Result<()> {
    let parsed = dataset::parse_dataset(&args.grid, FileKind::StrainGrid)?;
    let TypedDataset::StrainGrid(mut grid) = parsed else {
        bail!("expected a strain_grid dataset");
    };
    if args.pre_rotate {
        for point in &mut grid {
            point.tensor = strain::rotate_strain(&point.tensor, args.theta, args.phi);
        }
    }
    let chi = strain::StrainSusceptibilities::default();
    let entries = strain::strain_map(&grid, &chi)?;
    let csv = dataset::write_strain_map_csv(&entries);
    emit(out, "strain_map.csv", &csv)
}

fn gen_fixtures(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    let datasets = dir.join("datasets");
    let models_dir = dir.join("models");
    std::fs::create_dir_all(&datasets)?;
    std::fs::create_dir_all(&models_dir)?;

    let models = synthetic::reference_models();
    for (name, model) in &models {
        let path = models_dir.join(format!("{}.json", name.to_lowercase().replace('-', "")));
        std::fs::write(&path, format!("{:#}\n", serde_json::to_value(model)?))?;
        println!("wrote {}", path.display());
    }

    let input = synthetic::pipeline_fixture(&config.constants, true);
    for (emitter, sets) in &input.datasets {
        for dataset_entry in sets {
            let kind = match dataset_entry.kind {
                fit::DatasetKind::OdmrQubit => "odmr",
                fit::DatasetKind::AllowedSplit => "allowed",
                fit::DatasetKind::ForbiddenSplit => "forbidden",
                fit::DatasetKind::PlSplitting => "pl",
            };
            let name = format!("{}_{}.csv", kind, emitter.to_lowercase().replace('-', ""));
            let path = datasets.join(name);
            std::fs::write(&path, dataset::write_spectroscopy_csv(dataset_entry))?;
            println!("wrote {}", path.display());
        }
    }

    // echo traces pinned so the corrected fields land on 96.7 and 94.5 mT
    let expected = fieldcal::expected_larmor(0.1, &config.constants);
    let parallel = synthetic::synthetic_parallel_echo(0.967 * expected, 0.1, 256, 0.0, 1);
    std::fs::write(
        datasets.join("echo_parallel.csv"),
        dataset::write_echo_csv(&parallel),
    )?;
    let perpendicular =
        synthetic::synthetic_perpendicular_echo(0.945 * expected, 1.2, 0.1, 256, 0.0, 2);
    std::fs::write(
        datasets.join("echo_perpendicular.csv"),
        dataset::write_echo_csv(&perpendicular),
    )?;

    let suite = synthetic::synthetic_cpmg_suite(0.179, 0.95, &[1, 2, 4, 8, 16, 32, 64], 60, 0.0, 3);
    std::fs::write(
        datasets.join("cpmg_suite.csv"),
        dataset::write_cpmg_csv(&suite),
    )?;

    let cut = synthetic::strain_cut_fixture(101);
    std::fs::write(
        datasets.join("strain_cut.csv"),
        dataset::write_strain_grid_csv(&cut),
    )?;
    println!("wrote {}", datasets.join("echo_parallel.csv").display());
    println!(
        "wrote {}",
        datasets.join("echo_perpendicular.csv").display()
    );
    println!("wrote {}", datasets.join("cpmg_suite.csv").display());
    println!("wrote {}", datasets.join("strain_cut.csv").display());
    Ok(())
}
