//! Command implementations and their exit-code mapping.

use std::path::{Path, PathBuf};

use photonbuf::analysis::{self, NormalizationMode, TriggerGate};
use photonbuf::config::{self, ConfigError, ExperimentConfig};
use photonbuf::control::{DriveModel, ProgramDoc};
use photonbuf::io;
use photonbuf::pipeline::{self, PipelineError, PipelineOutput, SweepOutput};

use crate::manifest::{RunManifest, RunWriter};

/// Process exit codes: 0 success, 2 configuration/input error, 3 physics
/// validation error, 4 analysis error, 1 anything else.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Physics(String),
    Analysis(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Physics(_) => 3,
            CliError::Analysis(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Physics(m) | CliError::Analysis(m) | CliError::Other(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Analysis(_) => CliError::Analysis(e.to_string()),
            PipelineError::Optics(photonbuf::optics::OpticsError::ZeroPulses) => {
                CliError::Config(e.to_string())
            }
            PipelineError::BadSweep(_) => CliError::Config(e.to_string()),
            _ => CliError::Physics(e.to_string()),
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        match e {
            io::IoError::Parse { .. } => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(format!("{e:#}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("json: {e}"))
    }
}

pub fn load(config_path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = config::load_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

/// Physics gate shared by the simulating commands: refuse to run a
/// configuration whose program or budget is invalid.
fn require_runnable(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let report = cfg.physics_report();
    if !report.is_clean() {
        return Err(CliError::Physics(format!(
            "physics validation failed:\n  {}",
            report.violations.join("\n  ")
        )));
    }
    Ok(report.warnings)
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            CliError::Config("no output directory: pass --out or set output_dir in the config".into())
        })
}

fn emit_simulation_outputs(
    writer: &mut RunWriter,
    cfg: &ExperimentConfig,
    out: &PipelineOutput,
    hist_name: &str,
    events_name: &str,
    with_records: bool,
) -> Result<(), CliError> {
    writer.emit(hist_name, &io::histogram_csv(&out.histogram))?;
    writer.emit(
        &format!("{}.meta.json", hist_name.trim_end_matches(".csv")),
        &io::histogram_meta_json(&out.histogram)?,
    )?;
    writer.emit(events_name, &io::events_csv(&out.all_events_time_sorted()))?;
    if with_records {
        writer.emit("records.csv", &io::records_csv(&out.records))?;
    }
    let program = cfg.program().map_err(|e| CliError::Physics(e.to_string()))?;
    writer.emit(
        "program.json",
        &io::pretty_json(&ProgramDoc::from_program(&program))?,
    )?;
    if let DriveModel::Waveform(w) = &program.drive {
        writer.emit("waveform.csv", &io::waveform_csv(w))?;
    }
    Ok(())
}

/// `simulate`: one full run, emitting the histogram, event and record
/// dumps, the compiled program, and the manifest.
pub fn cmd_simulate(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = load(config_path, seed_override)?;
    let warnings = require_runnable(&cfg)?;
    let dir = output_dir(&cfg, out)?;

    let output = pipeline::run_pipeline(&cfg)?;

    let mut manifest = RunManifest::new("simulate", &cfg)?;
    manifest.warnings = warnings;
    manifest.stats = Some(serde_json::to_value(output.stats).map_err(anyhow::Error::from)?);
    let mut writer = RunWriter::new(&dir, manifest)?;
    writer.emit("config.resolved.toml", &cfg.to_toml_string()?)?;
    emit_simulation_outputs(&mut writer, &cfg, &output, "histogram.csv", "events.csv", true)?;
    Ok(writer.finish()?)
}

/// `sweep-storage`: one simulation per storage setting, then the combined
/// peak series, loss fit, and g2 table.
pub fn cmd_sweep_storage(
    config_path: &Path,
    k_list: &[u32],
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = load(config_path, seed_override)?;
    let warnings = require_runnable(&cfg)?;
    let dir = output_dir(&cfg, out)?;

    let sweep = pipeline::run_sweep(&cfg, k_list)?;

    let mut manifest = RunManifest::new("sweep-storage", &cfg)?;
    manifest.warnings = warnings;
    manifest.sweep =
        Some(serde_json::to_value(sweep.summary()).map_err(anyhow::Error::from)?);
    let mut writer = RunWriter::new(&dir, manifest)?;
    writer.emit("config.resolved.toml", &cfg.to_toml_string()?)?;

    for run in &sweep.runs {
        let name = format!("fig2a_hist_k{}.csv", run.k);
        writer.emit(&name, &io::histogram_csv(&run.histogram))?;
        writer.emit(
            &format!("fig2a_hist_k{}.meta.json", run.k),
            &io::histogram_meta_json(&run.histogram)?,
        )?;
    }

    writer.emit("fig2b_peaks.csv", &io::peak_series_csv(&sweep.peak_series))?;
    if let Ok(fit) = &sweep.loss_fit {
        let provenance = io::Provenance::new(&cfg)?
            .with_note(format!("fit over k >= {}", cfg.analysis.fit_min_k));
        writer.emit(
            "fig2b_lossfit.json",
            &io::pretty_json(&io::WithProvenance {
                result: *fit,
                provenance,
            })?,
        )?;
    }
    writer.emit("fig2c_g2.csv", &g2_table_csv(&sweep))?;
    Ok(writer.finish()?)
}

fn g2_table_csv(sweep: &SweepOutput) -> String {
    let mut s = String::from("k,g2,stderr,n_coincidences,n_a,n_b,n_triggers\n");
    for run in &sweep.runs {
        let g = &run.g2;
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            run.k, g.g2, g.stderr, g.n_coincidences, g.n_a, g.n_b, g.n_triggers
        ));
    }
    s
}

/// `validate`: aggregates schema, invariant, and program checks without
/// simulating. Violations are reported, never thrown.
pub fn cmd_validate(config_path: &Path) -> Result<(), CliError> {
    let cfg = config::load_config(config_path)?;
    let report = cfg.physics_report();
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if report.is_clean() {
        println!("ok: configuration is runnable");
        Ok(())
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Err(CliError::Physics(format!(
            "{} violation(s) found",
            report.violations.len()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// `g2`: re-analyzes an existing event dump.
pub fn cmd_g2(
    events_path: &Path,
    period_ps: f64,
    gate_center_ps: f64,
    gate_half_width_ps: f64,
    n_triggers: u64,
    format: OutputFormat,
) -> Result<String, CliError> {
    let text = io::read_file(events_path)?;
    let events = io::parse_events_csv(&text)?;
    let (a, b): (Vec<_>, Vec<_>) = events
        .iter()
        .partition(|e| e.channel == photonbuf::Channel::A);
    let gate = TriggerGate {
        period_ps,
        center_ps: gate_center_ps,
        half_width_ps: gate_half_width_ps,
    };
    let result = analysis::estimate_g2(&a, &b, period_ps, gate, n_triggers)
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok(match format {
        OutputFormat::Json => io::pretty_json(&result).map_err(io::IoError::from)?,
        OutputFormat::Csv => format!(
            "g2,stderr,n_coincidences,n_a,n_b,n_triggers\n{},{},{},{},{},{}\n",
            result.g2, result.stderr, result.n_coincidences, result.n_a, result.n_b,
            result.n_triggers
        ),
    })
}

/// `fit-loss`: re-fits an existing peak-series file.
pub fn cmd_fit_loss(
    peaks_path: &Path,
    min_k: u32,
    weighted: bool,
    format: OutputFormat,
) -> Result<String, CliError> {
    let text = io::read_file(peaks_path)?;
    let series = io::parse_peak_series_csv(&text, NormalizationMode::MaxPeak)?;
    let filtered = photonbuf::PeakSeries {
        entries: series
            .entries
            .iter()
            .copied()
            .filter(|e| e.k >= min_k)
            .collect(),
        normalization_mode: series.normalization_mode,
    };
    let fit = analysis::fit_loss_with(&filtered, analysis::FitOptions { weighted })
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok(match format {
        OutputFormat::Json => io::pretty_json(&fit).map_err(io::IoError::from)?,
        OutputFormat::Csv => format!(
            "slope_db_per_trip,intercept_db,residual_rms_db,n_points\n{},{},{},{}\n",
            fit.slope_db_per_trip, fit.intercept_db, fit.residual_rms_db, fit.n_points
        ),
    })
}

/// Parses "1,2,5", "1..5" / "1-5" (inclusive), or a mix of both.
pub fn parse_k_list(spec: &str) -> Result<Vec<u32>, CliError> {
    let mut ks = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let range = part.split_once("..").or_else(|| part.split_once('-'));
        if let Some((lo, hi)) = range {
            let lo: u32 = lo.trim().parse().map_err(|_| bad_k(part))?;
            let hi: u32 = hi.trim().parse().map_err(|_| bad_k(part))?;
            if hi < lo {
                return Err(bad_k(part));
            }
            ks.extend(lo..=hi);
        } else {
            ks.push(part.parse().map_err(|_| bad_k(part))?);
        }
    }
    if ks.is_empty() {
        return Err(CliError::Config(format!("empty k list: {spec:?}")));
    }
    Ok(ks)
}

fn bad_k(part: &str) -> CliError {
    CliError::Config(format!(
        "bad k spec {part:?}: expected an integer, 'a..b', or 'a-b'"
    ))
}
