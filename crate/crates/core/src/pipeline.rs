//! End-to-end orchestration: source -> switch/loop -> beamsplitter ->
//! detectors -> folded histogram, plus the storage sweep that reproduces
//! the per-round-trip loss fit and the g2(0) table.
//!
//! Per-pulse randomness comes from the pulse's own stream, in a fixed draw
//! order (photon count, per-photon propagation, then per-exit splitter /
//! efficiency / jitter draws), so any worker count reproduces the same
//! microdata. Dark counts use one global stream per channel, and dead-time
//! filtering runs on the merged time-sorted click list.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    self, estimate_g2, AnalysisError, G2Result, LossFit, PeakSeries, TriggerGate,
};
use crate::config::ExperimentConfig;
use crate::control::ControlProgram;
use crate::detection::{
    apply_dead_time, build_histogram, dark_counts, Channel, DetectionError, DetectionEvent,
    DetectorModel, Histogram,
};
use crate::optics::{self, LossChain, OpticsError, PhotonRecord, PulsePhotonSampler, RunStats};
use crate::seed::{stream_rng, PulseRng, StreamDomain};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const PULSE_BATCH: u64 = 65_536;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
}

/// Everything one simulated acquisition produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<PhotonRecord>,
    pub stats: RunStats,
    pub events_a: Vec<DetectionEvent>,
    pub events_b: Vec<DetectionEvent>,
    /// Folded histogram over both channels.
    pub histogram: Histogram,
}

impl PipelineOutput {
    pub fn all_events_time_sorted(&self) -> Vec<DetectionEvent> {
        let mut all: Vec<DetectionEvent> =
            self.events_a.iter().chain(&self.events_b).copied().collect();
        all.sort_by(|x, y| x.time_ps.total_cmp(&y.time_ps));
        all
    }
}

struct PulseBatchOutput {
    records: Vec<PhotonRecord>,
    clicks_a: Vec<f64>,
    clicks_b: Vec<f64>,
    stats: RunStats,
}

/// Runs the full chain for `cfg.n_pulses` pulses with `cfg.master_seed`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput, PipelineError> {
    let program = cfg.program()?;
    run_pipeline_with_program(cfg, &program)
}

pub fn run_pipeline_with_program(
    cfg: &ExperimentConfig,
    program: &ControlProgram,
) -> Result<PipelineOutput, PipelineError> {
    let src = &cfg.source;
    let buf = &cfg.buffer;
    let det = cfg.detection.detector();
    let ratio = cfg.detection.splitter_ratio;
    let n_pulses = cfg.n_pulses;
    let seed = cfg.master_seed;

    if n_pulses == 0 {
        return Err(OpticsError::ZeroPulses.into());
    }
    let errs = det.invariant_errors();
    if !errs.is_empty() {
        return Err(DetectionError::InvalidModel(errs.join("; ")).into());
    }

    let sampler = PulsePhotonSampler::new(src)?;
    let chain = LossChain::from_buffer(buf)?;

    let n_batches = n_pulses.div_ceil(PULSE_BATCH);
    let batches: Vec<PulseBatchOutput> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * PULSE_BATCH;
            let hi = (lo + PULSE_BATCH).min(n_pulses);
            let mut out = PulseBatchOutput {
                records: Vec::new(),
                clicks_a: Vec::new(),
                clicks_b: Vec::new(),
                stats: RunStats::default(),
            };
            let mut exits = Vec::new();
            for p in lo..hi {
                let mut rng = PulseRng::new(seed, p);
                exits.clear();
                let before = out.records.len();
                optics::simulate_pulse(
                    src,
                    buf,
                    &chain,
                    program,
                    &sampler,
                    p,
                    &mut rng,
                    &mut out.records,
                    &mut out.stats,
                );
                exits.extend_from_slice(&out.records[before..]);
                detect_pulse_exits(&exits, &det, ratio, &mut rng, &mut out.clicks_a, &mut out.clicks_b);
            }
            out
        })
        .collect();

    let mut records = Vec::new();
    let mut clicks_a = Vec::new();
    let mut clicks_b = Vec::new();
    let mut stats = RunStats::default();
    for b in batches {
        records.extend(b.records);
        clicks_a.extend(b.clicks_a);
        clicks_b.extend(b.clicks_b);
        stats.merge(&b.stats);
    }

    let span = src.pulse_epoch_ps + n_pulses as f64 * src.repetition_period_ps;
    let events_a = finalize_channel(clicks_a, &det, span, seed, Channel::A);
    let events_b = finalize_channel(clicks_b, &det, span, seed, Channel::B);

    let mut all = Vec::with_capacity(events_a.len() + events_b.len());
    all.extend_from_slice(&events_a);
    all.extend_from_slice(&events_b);
    let histogram = build_histogram(
        &all,
        src.repetition_period_ps,
        cfg.analysis.bin_width_ps,
        cfg.window(),
        n_pulses,
    )?;

    Ok(PipelineOutput {
        records,
        stats,
        events_a,
        events_b,
        histogram,
    })
}

/// Splitter routing plus efficiency and jitter for the exits of one pulse,
/// drawing from the pulse's stream in photon order.
fn detect_pulse_exits<R: Rng + ?Sized>(
    exits: &[PhotonRecord],
    det: &DetectorModel,
    ratio: f64,
    rng: &mut R,
    clicks_a: &mut Vec<f64>,
    clicks_b: &mut Vec<f64>,
) {
    if exits.is_empty() {
        return;
    }
    let jitter = if det.jitter_sigma_ps > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma_ps).expect("sigma validated"))
    } else {
        None
    };
    for rec in exits {
        let to_a = rng.random::<f64>() < ratio;
        if det.efficiency >= 1.0 || rng.random::<f64>() < det.efficiency {
            let dt = jitter.as_ref().map_or(0.0, |n| n.sample(rng));
            let t = rec.exit_time_ps + dt;
            if to_a {
                clicks_a.push(t);
            } else {
                clicks_b.push(t);
            }
        }
    }
}

/// Adds the channel's dark-count process, sorts, and applies dead time.
fn finalize_channel(
    mut clicks: Vec<f64>,
    det: &DetectorModel,
    span_ps: f64,
    seed: u64,
    channel: Channel,
) -> Vec<DetectionEvent> {
    let domain = match channel {
        Channel::A => StreamDomain::DarkA,
        Channel::B => StreamDomain::DarkB,
    };
    let mut rng = stream_rng(seed, domain, 0);
    dark_counts(det, span_ps, &mut rng, &mut clicks);
    clicks.sort_by(f64::total_cmp);
    apply_dead_time(&clicks, det.dead_time_ps)
        .map(|t| DetectionEvent { channel, time_ps: t })
        .collect()
}

/// The trigger gate centered on storage peak `k`.
pub fn peak_gate(cfg: &ExperimentConfig, k: u32) -> TriggerGate {
    let period = cfg.source.repetition_period_ps;
    let capture = cfg
        .control
        .capture_time_ps
        .unwrap_or(cfg.source.pulse_epoch_ps.rem_euclid(period));
    TriggerGate {
        period_ps: period,
        center_ps: (capture + k as f64 * cfg.buffer.round_trip_time_ps).rem_euclid(period),
        half_width_ps: cfg.analysis.gate_half_width_ps,
    }
}

/// One storage setting of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub k: u32,
    pub histogram: Histogram,
    pub g2: G2Result,
    pub peak_raw_counts: f64,
    /// Count-weighted peak position (phase), if the gate saw any counts.
    pub peak_center_ps: Option<f64>,
    pub stats: RunStats,
}

/// Sweep output: per-k runs plus the combined peak series, loss fit, and
/// g2 table.
#[derive(Debug)]
pub struct SweepOutput {
    pub runs: Vec<SweepRun>,
    pub peak_series: PeakSeries,
    pub loss_fit: Result<LossFit, AnalysisError>,
}

/// Serializable sweep summary for manifests.
#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub k_list: Vec<u32>,
    pub loss_fit: Option<LossFit>,
    pub loss_fit_error: Option<String>,
    pub g2: Vec<G2Result>,
}

impl SweepOutput {
    pub fn summary(&self) -> SweepSummary {
        SweepSummary {
            k_list: self.runs.iter().map(|r| r.k).collect(),
            loss_fit: self.loss_fit.as_ref().ok().copied(),
            loss_fit_error: self.loss_fit.as_ref().err().map(|e| e.to_string()),
            g2: self.runs.iter().map(|r| r.g2).collect(),
        }
    }
}

/// Runs one simulation per storage setting in `k_list` (same master seed,
/// different hold), measures each run's release peak, fits the per-trip
/// loss over the combined series, and estimates g2(0) in each release gate.
///
/// Every k is validated against the buffer capacity before any simulation
/// starts.
pub fn run_sweep(cfg: &ExperimentConfig, k_list: &[u32]) -> Result<SweepOutput, PipelineError> {
    if k_list.is_empty() {
        return Err(PipelineError::BadSweep("k list is empty".into()));
    }
    for &k in k_list {
        if k > cfg.buffer.max_round_trips {
            return Err(PipelineError::BadSweep(format!(
                "k = {k} exceeds max_round_trips = {}",
                cfg.buffer.max_round_trips
            )));
        }
    }

    let mut runs = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut cfg_k = cfg.clone();
        cfg_k.control.hold_round_trips = k;
        // The release override only makes sense for a single hold value.
        cfg_k.control.release_time_ps = None;
        let output = run_pipeline(&cfg_k)?;
        let gate = peak_gate(&cfg_k, k);
        let g2 = estimate_g2(
            &output.events_a,
            &output.events_b,
            cfg.source.repetition_period_ps,
            gate,
            cfg.n_pulses,
        )?;
        let raw = analysis::gate_counts(
            &output.histogram,
            gate.center_ps,
            gate.half_width_ps,
            gate.period_ps,
        );
        let center = analysis::gate_center_of_mass(
            &output.histogram,
            gate.center_ps,
            gate.half_width_ps,
            gate.period_ps,
        );
        runs.push(SweepRun {
            k,
            histogram: output.histogram,
            g2,
            peak_raw_counts: raw,
            peak_center_ps: center,
            stats: output.stats,
        });
    }

    let raw: Vec<(u32, f64)> = runs.iter().map(|r| (r.k, r.peak_raw_counts)).collect();
    let peak_series = PeakSeries::from_raw(raw, cfg.analysis.normalization)?;
    let fit_input = PeakSeries {
        entries: peak_series
            .entries
            .iter()
            .copied()
            .filter(|e| e.k >= cfg.analysis.fit_min_k)
            .collect(),
        normalization_mode: peak_series.normalization_mode,
    };
    let loss_fit = analysis::fit_loss_with(
        &fit_input,
        analysis::FitOptions {
            weighted: cfg.analysis.fit_weighted,
        },
    );

    Ok(SweepOutput {
        runs,
        peak_series,
        loss_fit,
    })
}

/// Analytic expected histogram for the configured chain, including both
/// detectors' dark floors (the chain always models the two-channel
/// arrangement; splitting does not change the merged photon expectation).
pub fn expected_pipeline_histogram(
    cfg: &ExperimentConfig,
) -> Result<analysis::ExpectedHistogram, PipelineError> {
    let program = cfg.program()?;
    let det = cfg.detection.detector();
    let mut expected = analysis::expected_histogram(
        &cfg.source,
        &cfg.buffer,
        &program,
        &det,
        cfg.n_pulses,
        cfg.analysis.bin_width_ps,
        cfg.window(),
    )?;
    // Second detector's dark floor.
    let extra_dark = det.dark_rate_hz * cfg.analysis.bin_width_ps * 1e-12 * cfg.n_pulses as f64;
    for v in &mut expected.values {
        *v += extra_dark;
    }
    Ok(expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::run_experiment;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(30_000, 2024);
        cfg.source.mean_photon_number = 0.5;
        cfg.control.hold_round_trips = 3;
        cfg
    }

    #[test]
    fn pipeline_records_match_run_experiment() {
        // The detection stage draws after propagation within each pulse
        // stream, so the optics-only records must be identical.
        let cfg = small_config();
        let program = cfg.program().unwrap();
        let out = run_pipeline(&cfg).unwrap();
        let bare = run_experiment(&cfg.source, &cfg.buffer, &program, cfg.n_pulses, cfg.master_seed)
            .unwrap();
        assert_eq!(out.records, bare.records);
        assert_eq!(out.stats, bare.stats);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = small_config();
        let a = run_pipeline(&cfg).unwrap();
        let b = run_pipeline(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.events_a, b.events_a);
        assert_eq!(a.events_b, b.events_b);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn pipeline_output_is_worker_count_independent() {
        let cfg = small_config();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_pipeline(&cfg).unwrap());
        let two = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| run_pipeline(&cfg).unwrap());
        assert_eq!(one.records, two.records);
        assert_eq!(one.events_a, two.events_a);
        assert_eq!(one.events_b, two.events_b);
        assert_eq!(one.histogram, two.histogram);
    }

    #[test]
    fn sweep_single_k_equals_simulate() {
        let mut cfg = small_config();
        cfg.control.hold_round_trips = 4;
        let sweep = run_sweep(&cfg, &[4]).unwrap();
        let single = run_pipeline(&cfg).unwrap();
        assert_eq!(sweep.runs.len(), 1);
        assert_eq!(sweep.runs[0].histogram, single.histogram);
    }

    #[test]
    fn sweep_validates_ks_before_running() {
        let cfg = small_config();
        assert!(matches!(
            run_sweep(&cfg, &[1, 99]),
            Err(PipelineError::BadSweep(_))
        ));
        assert!(matches!(run_sweep(&cfg, &[]), Err(PipelineError::BadSweep(_))));
    }

    #[test]
    fn degenerate_sweep_reports_fit_error_but_g2() {
        let mut cfg = small_config();
        cfg.analysis.fit_min_k = 0;
        let sweep = run_sweep(&cfg, &[0]).unwrap();
        assert!(sweep.loss_fit.is_err());
        assert_eq!(sweep.runs[0].g2.n_triggers, cfg.n_pulses);
        let summary = sweep.summary();
        assert!(summary.loss_fit.is_none());
        assert!(summary.loss_fit_error.is_some());
    }

    #[test]
    fn vacuum_input_leaves_only_the_dark_floor() {
        let mut cfg = ExperimentConfig::defaults(1_000_000, 77);
        cfg.source.mean_photon_number = 0.0;
        cfg.detection.dark_rate_hz = 10_000.0;
        cfg.detection.dead_time_ps = 0.0;
        let out = run_pipeline(&cfg).unwrap();
        assert!(out.records.is_empty());
        // two channels, 10 kHz over 10 ms of acquisition
        let expected = 2.0 * 10_000.0 * (cfg.n_pulses as f64 * 1e-8);
        let total = out.histogram.total_counts() as f64;
        assert!(
            (total - expected).abs() < 5.0 * expected.sqrt(),
            "dark total {total} vs {expected}"
        );
        // flat floor: no bin should look like a peak
        let max_bin = *out.histogram.counts.iter().max().unwrap();
        assert!(max_bin < 10, "unexpected structure: max bin {max_bin}");
    }

    #[test]
    fn peak_sits_on_the_lattice() {
        let cfg = small_config();
        let sweep = run_sweep(&cfg, &[3]).unwrap();
        let center = sweep.runs[0].peak_center_ps.expect("peak has counts");
        let expected = 500.0 + 3.0 * 100.0;
        assert!(
            (center - expected).abs() <= cfg.analysis.bin_width_ps,
            "center {center} vs {expected}"
        );
    }
}
