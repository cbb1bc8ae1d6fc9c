//! Experiment configuration: a single strict-schema TOML document with
//! explicit defaults. Loading resolves every optional field so the echoed
//! config is a fixed point (re-loading the resolved form changes nothing),
//! and every parameter that ends up in the outputs is visible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::NormalizationMode;
use crate::control::{self, ControlProgram, GateSchedule, ValidationReport};
use crate::detection::DetectorModel;
use crate::optics::{positive_finite, BufferModel, SourceModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Control(#[from] control::ControlError),
}

/// Beamsplitter plus detector parameters for the measurement back-end.
/// The chain always models the two-detector arrangement; `splitter_ratio`
/// is the probability a photon routes to channel A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub splitter_ratio: f64,
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectorModel::default();
        Self {
            splitter_ratio: 0.5,
            efficiency: d.efficiency,
            jitter_sigma_ps: d.jitter_sigma_ps,
            dark_rate_hz: d.dark_rate_hz,
            dead_time_ps: d.dead_time_ps,
        }
    }
}

impl DetectionSection {
    pub fn detector(&self) -> DetectorModel {
        DetectorModel {
            efficiency: self.efficiency,
            jitter_sigma_ps: self.jitter_sigma_ps,
            dark_rate_hz: self.dark_rate_hz,
            dead_time_ps: self.dead_time_ps,
        }
    }
}

/// Switch program parameters. `capture_time_ps`, `gate_window_ps` and
/// `f3db_ghz` resolve against the source and buffer when left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub hold_round_trips: u32,
    pub capture_time_ps: Option<f64>,
    pub gate_window_ps: Option<f64>,
    /// 0 selects the ideal rectangular drive.
    pub edge_time_ps: f64,
    pub f3db_ghz: Option<f64>,
    /// Measured S21 magnitude curve (CSV: freq_ghz,s21_db); its -3 dB
    /// point sets the filter bandwidth when `f3db_ghz` is not given.
    /// Relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s21_csv_path: Option<PathBuf>,
    pub sample_step_ps: f64,
    /// Explicit release-gate center, for off-lattice experiments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub release_time_ps: Option<f64>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            hold_round_trips: 5,
            capture_time_ps: None,
            gate_window_ps: None,
            edge_time_ps: 10.0,
            f3db_ghz: None,
            s21_csv_path: None,
            sample_step_ps: 0.5,
            release_time_ps: None,
        }
    }
}

/// Histogram and estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bin_width_ps: f64,
    pub window_start_ps: Option<f64>,
    pub window_end_ps: Option<f64>,
    pub gate_half_width_ps: f64,
    pub normalization: NormalizationMode,
    /// Smallest round-trip index included in the loss fit.
    pub fit_min_k: u32,
    pub fit_weighted: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bin_width_ps: 1.0,
            window_start_ps: None,
            window_end_ps: None,
            gate_half_width_ps: 40.0,
            normalization: NormalizationMode::MaxPeak,
            fit_min_k: 1,
            fit_weighted: false,
        }
    }
}

/// The whole experiment: sources, chip, back-end, program, analysis, and
/// the run parameters. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_pulses: u64,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub source: SourceModel,
    #[serde(default)]
    pub buffer: BufferModel,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// A runnable configuration at the chip's published parameters.
    pub fn defaults(n_pulses: u64, master_seed: u64) -> Self {
        let mut cfg = Self {
            n_pulses,
            master_seed,
            output_dir: None,
            source: SourceModel::default(),
            buffer: BufferModel::default(),
            detection: DetectionSection::default(),
            control: ControlSection::default(),
            analysis: AnalysisSection::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Fills every optional field from its cross-section default:
    /// capture time from the pulse arrival phase, gate window from half a
    /// round trip, filter bandwidth from the electro-optic bandwidth, and
    /// the histogram window from one full repetition period.
    pub fn resolve(&mut self) {
        let period = self.source.repetition_period_ps;
        self.control
            .capture_time_ps
            .get_or_insert(self.source.pulse_epoch_ps.rem_euclid(period));
        self.control
            .gate_window_ps
            .get_or_insert(self.buffer.round_trip_time_ps / 2.0);
        self.control.f3db_ghz.get_or_insert(self.buffer.eo_bandwidth_ghz);
        self.analysis.window_start_ps.get_or_insert(0.0);
        self.analysis.window_end_ps.get_or_insert(period);
    }

    /// Hard schema/range errors (reject the config).
    pub fn invariant_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_pulses == 0 {
            errs.push("n_pulses must be >= 1".into());
        }
        errs.extend(self.source.invariant_errors());
        errs.extend(self.buffer.invariant_errors());
        errs.extend(self.detection.detector().invariant_errors());
        if !(0.0..=1.0).contains(&self.detection.splitter_ratio) {
            errs.push(format!(
                "detection.splitter_ratio must be in [0, 1], got {}",
                self.detection.splitter_ratio
            ));
        }
        if !positive_finite(self.analysis.bin_width_ps) {
            errs.push(format!(
                "analysis.bin_width_ps must be > 0, got {}",
                self.analysis.bin_width_ps
            ));
        }
        if !positive_finite(self.analysis.gate_half_width_ps) {
            errs.push(format!(
                "analysis.gate_half_width_ps must be > 0, got {}",
                self.analysis.gate_half_width_ps
            ));
        }
        if let (Some(t0), Some(t1)) = (self.analysis.window_start_ps, self.analysis.window_end_ps) {
            if t1.is_nan() || t0.is_nan() || t1 <= t0 {
                errs.push(format!("analysis window [{t0}, {t1}) is empty"));
            }
        }
        if self.control.edge_time_ps < 0.0 {
            errs.push(format!(
                "control.edge_time_ps must be >= 0, got {}",
                self.control.edge_time_ps
            ));
        }
        if !positive_finite(self.control.sample_step_ps) {
            errs.push(format!(
                "control.sample_step_ps must be > 0, got {}",
                self.control.sample_step_ps
            ));
        } else if self.control.edge_time_ps > 0.0
            && self.control.sample_step_ps > self.control.edge_time_ps / 4.0
        {
            errs.push(format!(
                "control.sample_step_ps = {} too coarse for a {} ps edge (need step <= edge/4)",
                self.control.sample_step_ps, self.control.edge_time_ps
            ));
        }
        if let Some(w) = self.control.gate_window_ps {
            if !positive_finite(w) {
                errs.push(format!("control.gate_window_ps must be > 0, got {w}"));
            }
        }
        errs
    }

    /// Non-fatal flags surfaced by `validate` and recorded in manifests.
    pub fn warnings(&self) -> Vec<String> {
        let mut warns = self.source.warnings();
        warns.extend(
            self.detection
                .detector()
                .warnings(self.buffer.round_trip_time_ps),
        );
        warns
    }

    /// Assembles the gate schedule described by the control section. Rule
    /// violations (oversized window, collision, off-lattice release, over
    /// capacity) are deliberately not rejected here; they surface through
    /// [`control::validate_program`] in [`Self::physics_report`].
    pub fn schedule(&self) -> GateSchedule {
        let period = self.source.repetition_period_ps;
        let capture = self
            .control
            .capture_time_ps
            .unwrap_or(self.source.pulse_epoch_ps.rem_euclid(period));
        let n = self.control.hold_round_trips;
        GateSchedule {
            capture_time_ps: capture,
            hold_round_trips: n,
            gate_window_ps: self
                .control
                .gate_window_ps
                .unwrap_or(self.buffer.round_trip_time_ps / 2.0),
            repetition_period_ps: period,
            round_trip_time_ps: self.buffer.round_trip_time_ps,
            release_time_ps: self
                .control
                .release_time_ps
                .unwrap_or(capture + n as f64 * self.buffer.round_trip_time_ps),
        }
    }

    /// Compiles the switch program (schedule plus drive waveform).
    pub fn program(&self) -> Result<ControlProgram, control::ControlError> {
        let f3db = self.control.f3db_ghz.unwrap_or(self.buffer.eo_bandwidth_ghz);
        ControlProgram::compile(
            self.schedule(),
            &self.buffer,
            self.control.edge_time_ps,
            f3db,
            self.control.sample_step_ps,
        )
    }

    /// Physics-level validation: loss-budget bookkeeping, run-assembly
    /// ordering, and the program timing rules.
    pub fn physics_report(&self) -> PhysicsReport {
        let mut violations = self.buffer.budget_violations();
        if self.buffer.round_trip_time_ps >= self.source.repetition_period_ps {
            violations.push(format!(
                "round-trip time {} ps must be shorter than the repetition period {} ps",
                self.buffer.round_trip_time_ps, self.source.repetition_period_ps
            ));
        }
        // Timing rules are checked on the schedule itself, so a program
        // whose waveform cannot even be synthesized still yields a report
        // instead of an error.
        let timing_view = ControlProgram {
            schedule: self.schedule(),
            edge_time_ps: self.control.edge_time_ps,
            f3db_ghz: self.control.f3db_ghz.unwrap_or(self.buffer.eo_bandwidth_ghz),
            drive: control::DriveModel::Ideal,
        };
        let report = control::validate_program(&timing_view, &self.source, &self.buffer);
        violations.extend(report.violations.iter().map(|v| v.to_string()));
        let program_report = Some(report);
        if self.analysis.gate_half_width_ps >= self.buffer.round_trip_time_ps / 2.0 {
            violations.push(format!(
                "analysis.gate_half_width_ps = {} ps overlaps neighbouring peaks (round trip {} ps)",
                self.analysis.gate_half_width_ps, self.buffer.round_trip_time_ps
            ));
        }
        PhysicsReport {
            violations,
            warnings: self.warnings(),
            program_report,
        }
    }

    /// Resolved histogram window.
    pub fn window(&self) -> (f64, f64) {
        (
            self.analysis.window_start_ps.unwrap_or(0.0),
            self.analysis
                .window_end_ps
                .unwrap_or(self.source.repetition_period_ps),
        )
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Resolves the filter bandwidth from a measured S21 curve when no
    /// explicit `f3db_ghz` is configured. Runs before [`Self::resolve`],
    /// so the extracted value lands in the resolved config and re-loading
    /// that config is a no-op.
    pub fn apply_s21_curve(&mut self) -> Result<(), ConfigError> {
        let Some(path) = &self.control.s21_csv_path else {
            return Ok(());
        };
        if self.control.f3db_ghz.is_some() {
            return Ok(()); // explicit bandwidth wins over the curve
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        self.control.f3db_ghz = Some(control::f3db_from_s21_csv(&text)?);
        Ok(())
    }
}

/// Aggregated physics validation for `validate`-style commands.
#[derive(Debug, Clone, Default)]
pub struct PhysicsReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub program_report: Option<ValidationReport>,
}

impl PhysicsReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parses, resolves, and range-checks a config file. A relative
/// `control.s21_csv_path` resolves against the config file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: ExperimentConfig = toml::from_str(&text)?;
    if let Some(rel) = &cfg.control.s21_csv_path {
        if rel.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.control.s21_csv_path = Some(dir.join(rel));
            }
        }
        cfg.apply_s21_curve()?;
    }
    cfg.resolve();
    let errs = cfg.invariant_errors();
    if !errs.is_empty() {
        return Err(ConfigError::Invalid(errs));
    }
    Ok(cfg)
}

/// Same as [`load_config`], from an in-memory document.
pub fn load_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text)?;
    cfg.resolve();
    let errs = cfg.invariant_errors();
    if !errs.is_empty() {
        return Err(ConfigError::Invalid(errs));
    }
    Ok(cfg)
}
