//! Derived measurements: round-trip peak amplitudes, the dB-per-round-trip
//! loss fit, pulsed g2(0) with uncertainty, and a closed-form expected
//! histogram used as an oracle for the Monte Carlo engine.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::control::{circ_diff, ControlProgram};
use crate::detection::{DetectionEvent, DetectorModel, Histogram};
use crate::optics::{db_to_transmission, BufferModel, SourceKind, SourceModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("gate half-width {half_width_ps} ps overlaps neighbouring peaks (round trip {round_trip_ps} ps)")]
    OverlappingGates { half_width_ps: f64, round_trip_ps: f64 },
    #[error("histogram is empty; nothing to extract")]
    EmptyHistogram,
    #[error("normalization reference peak has no counts")]
    NormalizationEmpty,
    #[error("need at least 2 usable peaks for a loss fit, got {0}")]
    InsufficientPoints(usize),
    #[error("g2 is undefined: no in-gate singles on channel {0}")]
    UndefinedG2(&'static str),
    #[error("n_triggers must be >= 1")]
    NoTriggers,
    #[error("expected-histogram oracle unsupported: {0}")]
    UnsupportedOracle(String),
    #[error(transparent)]
    Detection(#[from] crate::detection::DetectionError),
    #[error(transparent)]
    Optics(#[from] crate::optics::OpticsError),
}

/// Which peak pins the normalized amplitude scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Normalize to the largest peak of the series.
    #[default]
    MaxPeak,
    /// Normalize to the first entry of the series.
    FirstPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub k: u32,
    pub raw_counts: f64,
    pub normalized_amplitude: f64,
}

/// Peak amplitudes per round-trip index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSeries {
    pub entries: Vec<PeakEntry>,
    pub normalization_mode: NormalizationMode,
}

impl PeakSeries {
    /// Builds a series from raw gate sums and applies the normalization.
    pub fn from_raw(
        raw: Vec<(u32, f64)>,
        mode: NormalizationMode,
    ) -> Result<Self, AnalysisError> {
        let reference = match mode {
            NormalizationMode::MaxPeak => raw.iter().map(|e| e.1).fold(0.0, f64::max),
            NormalizationMode::FirstPeak => raw.first().map(|e| e.1).unwrap_or(0.0),
        };
        if reference <= 0.0 {
            return Err(AnalysisError::NormalizationEmpty);
        }
        Ok(Self {
            entries: raw
                .into_iter()
                .map(|(k, c)| PeakEntry {
                    k,
                    raw_counts: c,
                    normalized_amplitude: c / reference,
                })
                .collect(),
            normalization_mode: mode,
        })
    }
}

/// Sum of histogram counts within `half_width` of phase `center` (circular
/// against the trigger period). Folding means a gate may wrap across the
/// window edges when the window spans a full period.
pub fn gate_counts(
    h: &Histogram,
    center_ps: f64,
    half_width_ps: f64,
    trigger_period_ps: f64,
) -> f64 {
    let mut sum = 0u64;
    for (i, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let phase = h.bin_center(i).rem_euclid(trigger_period_ps);
        if circ_diff(phase, center_ps, trigger_period_ps).abs() <= half_width_ps {
            sum += c;
        }
    }
    sum as f64
}

/// Count-weighted mean arrival phase within a gate, for locating peak
/// centers. Returns `None` when the gate is empty.
pub fn gate_center_of_mass(
    h: &Histogram,
    center_ps: f64,
    half_width_ps: f64,
    trigger_period_ps: f64,
) -> Option<f64> {
    let mut wsum = 0.0;
    let mut total = 0.0;
    for (i, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let phase = h.bin_center(i).rem_euclid(trigger_period_ps);
        let d = circ_diff(phase, center_ps, trigger_period_ps);
        if d.abs() <= half_width_ps {
            wsum += d * c as f64;
            total += c as f64;
        }
    }
    if total > 0.0 {
        Some((center_ps + wsum / total).rem_euclid(trigger_period_ps))
    } else {
        None
    }
}

/// Extracts per-round-trip peak amplitudes from a folded histogram.
///
/// For each k in 0..=k_max the raw counts are the bins within
/// `gate_half_width_ps` of the expected peak phase
/// `capture_time + k * round_trip` (folded), normalized per `mode`.
pub fn extract_peaks(
    h: &Histogram,
    buf: &BufferModel,
    capture_time_ps: f64,
    k_max: u32,
    gate_half_width_ps: f64,
    trigger_period_ps: f64,
    mode: NormalizationMode,
) -> Result<PeakSeries, AnalysisError> {
    if gate_half_width_ps >= buf.round_trip_time_ps / 2.0 {
        return Err(AnalysisError::OverlappingGates {
            half_width_ps: gate_half_width_ps,
            round_trip_ps: buf.round_trip_time_ps,
        });
    }
    if h.counts.is_empty() || h.total_counts() == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let raw: Vec<(u32, f64)> = (0..=k_max)
        .map(|k| {
            let center = capture_time_ps + k as f64 * buf.round_trip_time_ps;
            (
                k,
                gate_counts(h, center, gate_half_width_ps, trigger_period_ps),
            )
        })
        .collect();
    PeakSeries::from_raw(raw, mode)
}

/// Straight-line fit of peak decay in dB space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFit {
    pub slope_db_per_trip: f64,
    pub intercept_db: f64,
    pub residual_rms_db: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Weight points by raw counts instead of the plain least squares.
    pub weighted: bool,
}

/// Ordinary least squares of `-10 log10(A_k)` against `k`. Entries with
/// non-positive amplitude cannot be represented in dB and are excluded.
pub fn fit_loss(series: &PeakSeries) -> Result<LossFit, AnalysisError> {
    fit_loss_with(series, FitOptions::default())
}

pub fn fit_loss_with(series: &PeakSeries, opts: FitOptions) -> Result<LossFit, AnalysisError> {
    let pts: Vec<(f64, f64, f64)> = series
        .entries
        .iter()
        .filter(|e| e.raw_counts > 0.0 && e.normalized_amplitude > 0.0)
        .map(|e| {
            let w = if opts.weighted { e.raw_counts } else { 1.0 };
            (e.k as f64, -10.0 * e.normalized_amplitude.log10(), w)
        })
        .collect();
    if pts.len() < 2 {
        return Err(AnalysisError::InsufficientPoints(pts.len()));
    }

    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let ym = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / wsum;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::InsufficientPoints(1));
    }
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    Ok(LossFit {
        slope_db_per_trip: slope,
        intercept_db: intercept,
        residual_rms_db: (ss_res / pts.len() as f64).sqrt(),
        n_points: pts.len(),
    })
}

/// Pulsed second-order correlation at zero delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub g2: f64,
    pub stderr: f64,
    pub n_coincidences: u64,
    pub n_a: u64,
    pub n_b: u64,
    pub n_triggers: u64,
}

impl G2Result {
    /// `g2 = n_cc * n_triggers / (n_a * n_b)` with Poisson error
    /// propagation. Zero coincidences report g2 = 0 with the stderr an
    /// upper bound computed from one coincidence.
    pub fn from_counts(
        n_coincidences: u64,
        n_a: u64,
        n_b: u64,
        n_triggers: u64,
    ) -> Result<Self, AnalysisError> {
        if n_triggers == 0 {
            return Err(AnalysisError::NoTriggers);
        }
        if n_a == 0 {
            return Err(AnalysisError::UndefinedG2("A"));
        }
        if n_b == 0 {
            return Err(AnalysisError::UndefinedG2("B"));
        }
        let (na, nb, nt) = (n_a as f64, n_b as f64, n_triggers as f64);
        // summed smaller-first so the estimate is bit-identical under a
        // channel swap
        let (s_lo, s_hi) = if na <= nb { (na, nb) } else { (nb, na) };
        let rel = |cc: f64| (1.0 / cc + (1.0 / s_lo + 1.0 / s_hi)).sqrt();
        let (g2, stderr) = if n_coincidences == 0 {
            (0.0, nt / (na * nb) * rel(1.0))
        } else {
            let cc = n_coincidences as f64;
            let g2 = cc * nt / (na * nb);
            (g2, g2 * rel(cc))
        };
        Ok(Self {
            g2,
            stderr,
            n_coincidences,
            n_a,
            n_b,
            n_triggers,
        })
    }
}

/// Per-trigger in-gate counting shared by the event-stream estimator and the
/// batched pipeline: trigger attribution is recentered on the gate so a gate
/// straddling the fold boundary still pairs the right triggers.
#[derive(Debug, Clone, Copy)]
pub struct TriggerGate {
    pub period_ps: f64,
    pub center_ps: f64,
    pub half_width_ps: f64,
}

impl TriggerGate {
    /// `Some(trigger_index)` when the event falls inside the gate.
    pub fn classify(&self, time_ps: f64) -> Option<i64> {
        let shifted = time_ps - self.center_ps + self.period_ps / 2.0;
        let phase = shifted.rem_euclid(self.period_ps);
        if (phase - self.period_ps / 2.0).abs() <= self.half_width_ps {
            Some(shifted.div_euclid(self.period_ps) as i64)
        } else {
            None
        }
    }
}

/// Estimates pulsed g2(0) from the two channels of one acquisition.
///
/// Singles are in-gate event counts; a coincidence is a trigger with at
/// least one in-gate event on both channels.
pub fn estimate_g2(
    events_a: &[DetectionEvent],
    events_b: &[DetectionEvent],
    trigger_period_ps: f64,
    gate: TriggerGate,
    n_triggers: u64,
) -> Result<G2Result, AnalysisError> {
    if n_triggers == 0 {
        return Err(AnalysisError::NoTriggers);
    }
    debug_assert!((gate.period_ps - trigger_period_ps).abs() < 1e-9);
    let gate = TriggerGate {
        period_ps: trigger_period_ps,
        ..gate
    };

    let mut triggers_a: Vec<i64> = events_a
        .iter()
        .filter_map(|e| gate.classify(e.time_ps))
        .collect();
    let mut triggers_b: Vec<i64> = events_b
        .iter()
        .filter_map(|e| gate.classify(e.time_ps))
        .collect();
    let n_a = triggers_a.len() as u64;
    let n_b = triggers_b.len() as u64;

    triggers_a.sort_unstable();
    triggers_a.dedup();
    triggers_b.sort_unstable();
    triggers_b.dedup();
    let mut cc = 0u64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < triggers_a.len() && j < triggers_b.len() {
        match triggers_a[i].cmp(&triggers_b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                cc += 1;
                i += 1;
                j += 1;
            }
        }
    }
    G2Result::from_counts(cc, n_a, n_b, n_triggers)
}

/// Real-valued histogram of expected counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedHistogram {
    pub bin_width_ps: f64,
    pub t0_ps: f64,
    pub values: Vec<f64>,
    pub n_triggers: u64,
}

impl ExpectedHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.t0_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Expected counts within a circular gate, mirroring [`gate_counts`].
    pub fn gate_expectation(
        &self,
        center_ps: f64,
        half_width_ps: f64,
        trigger_period_ps: f64,
    ) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let phase = self.bin_center(*i).rem_euclid(trigger_period_ps);
                circ_diff(phase, center_ps, trigger_period_ps).abs() <= half_width_ps
            })
            .map(|(_, v)| v)
            .sum()
    }
}

/// Per-exit-path expected probabilities for one launched photon, following
/// the same encounter sequence as the Monte Carlo propagation but in
/// closed form. Index k is the number of completed round trips.
pub fn exit_probabilities(
    buf: &BufferModel,
    program: &ControlProgram,
) -> Result<Vec<f64>, AnalysisError> {
    let t_in = db_to_transmission(buf.input_coupling_loss_db)?;
    let t_rt = db_to_transmission(buf.round_trip_loss_db)?;
    let t_out = db_to_transmission(buf.output_coupling_loss_db)?;
    let sched = &program.schedule;
    let capture = sched.capture_time_ps;

    let cross_at = |k: u32| -> f64 {
        let t = capture + k as f64 * sched.round_trip_time_ps;
        let v = if sched.gate_open_at(t) { buf.v_pi_volts } else { 0.0 };
        crate::control::switch_transmission(v, buf.v_pi_volts, buf.switch_extinction_db).0
    };

    let mut probs = vec![0.0; buf.max_round_trips as usize + 1];
    let cross0 = cross_at(0);
    probs[0] = t_in * (1.0 - cross0) * t_out;
    let mut in_loop = t_in * cross0;
    for k in 1..=buf.max_round_trips {
        in_loop *= t_rt;
        let cross = cross_at(k);
        probs[k as usize] = in_loop * cross * t_out;
        in_loop *= 1.0 - cross;
    }
    Ok(probs)
}

/// Total probability that a launched photon exits the chip at all.
pub fn total_exit_probability(
    buf: &BufferModel,
    program: &ControlProgram,
) -> Result<f64, AnalysisError> {
    Ok(exit_probabilities(buf, program)?.iter().sum())
}

/// Closed-form expected histogram for an ideal-edge (rectangular) program.
///
/// Peak k carries `mean_photons * T_in * T_rt^k * T_out * efficiency *
/// n_pulses` (plus extinction leakage terms for partially closed gates),
/// spread over the bin grid with the Gaussian jitter kernel; dark counts
/// add a uniform floor of `dark_rate * bin_width * n_triggers`.
pub fn expected_histogram(
    src: &SourceModel,
    buf: &BufferModel,
    program: &ControlProgram,
    det: &DetectorModel,
    n_pulses: u64,
    bin_width_ps: f64,
    window: (f64, f64),
) -> Result<ExpectedHistogram, AnalysisError> {
    if !program.is_ideal() {
        return Err(AnalysisError::UnsupportedOracle(
            "filtered (non-rectangular) waveforms are not supported".into(),
        ));
    }
    let period = src.repetition_period_ps;
    let arrival_phase = src.pulse_epoch_ps.rem_euclid(period);
    if circ_diff(arrival_phase, program.schedule.capture_time_ps, period).abs() > 1e-9 {
        return Err(AnalysisError::UnsupportedOracle(
            "program capture gate is not aligned to the pulse arrival phase".into(),
        ));
    }

    let (t0, t1) = window;
    let n_bins = ((t1 - t0) / bin_width_ps).round() as usize;
    if n_bins == 0 || ((t1 - t0) - n_bins as f64 * bin_width_ps).abs() > 1e-6 * bin_width_ps {
        return Err(crate::detection::DetectionError::MisalignedWindow {
            t0,
            t1,
            bin_width: bin_width_ps,
        }
        .into());
    }

    let mean_photons = match src.kind {
        SourceKind::WeakCoherent => src.mean_photon_number,
        SourceKind::SingleFock => src.fock_n as f64,
    };
    let probs = exit_probabilities(buf, program)?;
    let dark_per_bin = det.dark_rate_hz * bin_width_ps * 1e-12 * n_pulses as f64;
    let mut values = vec![dark_per_bin; n_bins];

    let normal = if det.jitter_sigma_ps > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma_ps).expect("sigma > 0"))
    } else {
        None
    };

    for (k, &p_exit) in probs.iter().enumerate() {
        let mean = mean_photons * p_exit * det.efficiency * n_pulses as f64;
        if mean <= 0.0 {
            continue;
        }
        let center = (arrival_phase + k as f64 * buf.round_trip_time_ps).rem_euclid(period);
        match &normal {
            None => {
                // All mass lands in the bin containing the peak center,
                // including its period images that fold into the window.
                for image in [-1.0, 0.0, 1.0] {
                    let c = center + image * period;
                    let pos = c - t0;
                    if pos >= 0.0 && pos < t1 - t0 {
                        let idx = ((pos / bin_width_ps) as usize).min(n_bins - 1);
                        values[idx] += mean;
                    }
                }
            }
            Some(n) => {
                for (i, v) in values.iter_mut().enumerate() {
                    let lo = t0 + i as f64 * bin_width_ps;
                    let hi = lo + bin_width_ps;
                    let mut mass = 0.0;
                    for image in [-1.0, 0.0, 1.0] {
                        let c = center + image * period;
                        mass += n.cdf(hi - c) - n.cdf(lo - c);
                    }
                    *v += mean * mass;
                }
            }
        }
    }

    Ok(ExpectedHistogram {
        bin_width_ps,
        t0_ps: t0,
        values,
        n_triggers: n_pulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Channel;
    use approx::assert_relative_eq;

    fn synthetic_histogram(period: f64, bin: f64, peaks: &[(f64, u64)]) -> Histogram {
        let n = (period / bin).round() as usize;
        let mut counts = vec![0u64; n];
        for &(t, c) in peaks {
            let idx = ((t.rem_euclid(period)) / bin) as usize;
            counts[idx] += c;
        }
        Histogram {
            bin_width_ps: bin,
            t0_ps: 0.0,
            counts,
            n_triggers: 1,
        }
    }

    fn buf() -> BufferModel {
        BufferModel::default()
    }

    #[test]
    fn single_peak_normalizes_to_one() {
        let h = synthetic_histogram(10_000.0, 1.0, &[(600.0, 1234)]);
        let s = extract_peaks(&h, &buf(), 500.0, 3, 40.0, 10_000.0, NormalizationMode::MaxPeak)
            .unwrap();
        assert_eq!(s.entries.len(), 4);
        assert_eq!(s.entries[1].normalized_amplitude, 1.0);
        for k in [0usize, 2, 3] {
            assert_eq!(s.entries[k].raw_counts, 0.0);
        }
    }

    #[test]
    fn constructed_decay_recovers_amplitude_ratios() {
        // C_k = round(1e6 * 10^(-0.074 k)) for k = 0..5.
        let peaks: Vec<(f64, u64)> = (0..=5)
            .map(|k| {
                (
                    500.0 + 100.0 * k as f64,
                    (1e6 * 10f64.powf(-0.074 * k as f64)).round() as u64,
                )
            })
            .collect();
        let h = synthetic_histogram(10_000.0, 1.0, &peaks);
        let s = extract_peaks(&h, &buf(), 500.0, 5, 40.0, 10_000.0, NormalizationMode::MaxPeak)
            .unwrap();
        for k in 0..=5usize {
            let ratio = s.entries[k].normalized_amplitude / s.entries[0].normalized_amplitude;
            let expected = 10f64.powf(-0.074 * k as f64);
            assert!(
                (ratio - expected).abs() < 1e-4,
                "k={k}: ratio {ratio} vs {expected}"
            );
        }
    }

    #[test]
    fn overlapping_gates_and_empty_histograms_are_rejected() {
        let h = synthetic_histogram(10_000.0, 1.0, &[(600.0, 5)]);
        assert!(matches!(
            extract_peaks(&h, &buf(), 500.0, 3, 60.0, 10_000.0, NormalizationMode::MaxPeak),
            Err(AnalysisError::OverlappingGates { .. })
        ));
        let empty = synthetic_histogram(10_000.0, 1.0, &[]);
        assert!(matches!(
            extract_peaks(&empty, &buf(), 500.0, 3, 40.0, 10_000.0, NormalizationMode::MaxPeak),
            Err(AnalysisError::EmptyHistogram)
        ));
    }

    #[test]
    fn exact_geometric_series_fits_to_074_db() {
        let raw: Vec<(u32, f64)> = (0..=5)
            .map(|k| (k, 10f64.powf(-0.074 * k as f64)))
            .collect();
        let s = PeakSeries::from_raw(raw, NormalizationMode::MaxPeak).unwrap();
        let fit = fit_loss(&s).unwrap();
        assert_relative_eq!(fit.slope_db_per_trip, 0.74, max_relative = 1e-9);
        assert!(fit.residual_rms_db < 1e-9);
        assert_eq!(fit.n_points, 6);
    }

    #[test]
    fn flat_series_fits_to_zero_slope() {
        let s = PeakSeries::from_raw(
            vec![(0, 1.0), (1, 1.0), (2, 1.0)],
            NormalizationMode::MaxPeak,
        )
        .unwrap();
        let fit = fit_loss(&s).unwrap();
        assert_relative_eq!(fit.slope_db_per_trip, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_count_peaks_are_excluded_from_the_fit() {
        let s = PeakSeries::from_raw(
            vec![(0, 1.0), (1, 0.0), (2, 0.25)],
            NormalizationMode::MaxPeak,
        )
        .unwrap();
        let fit = fit_loss(&s).unwrap();
        assert_eq!(fit.n_points, 2);
        let starved = PeakSeries::from_raw(vec![(0, 1.0), (1, 0.0)], NormalizationMode::MaxPeak)
            .unwrap();
        assert!(matches!(
            fit_loss(&starved),
            Err(AnalysisError::InsufficientPoints(1))
        ));
    }

    #[test]
    fn fit_is_scale_invariant() {
        let raw: Vec<(u32, f64)> = (1..=5)
            .map(|k| (k, 4321.0 * 10f64.powf(-0.074 * k as f64)))
            .collect();
        let scaled: Vec<(u32, f64)> = raw.iter().map(|&(k, c)| (k, c * 37.5)).collect();
        let f1 = fit_loss(&PeakSeries::from_raw(raw, NormalizationMode::MaxPeak).unwrap()).unwrap();
        let f2 =
            fit_loss(&PeakSeries::from_raw(scaled, NormalizationMode::MaxPeak).unwrap()).unwrap();
        assert_relative_eq!(f1.slope_db_per_trip, f2.slope_db_per_trip, max_relative = 1e-12);
    }

    fn ev(channel: Channel, trigger: u64, phase: f64) -> DetectionEvent {
        DetectionEvent {
            channel,
            time_ps: trigger as f64 * 10_000.0 + phase,
        }
    }

    fn gate() -> TriggerGate {
        TriggerGate {
            period_ps: 10_000.0,
            center_ps: 500.0,
            half_width_ps: 40.0,
        }
    }

    #[test]
    fn g2_from_hand_counted_streams() {
        // A in triggers {0, 1}, B in {1, 2}: one coincidence over 4 triggers.
        let a = vec![ev(Channel::A, 0, 500.0), ev(Channel::A, 1, 490.0)];
        let b = vec![ev(Channel::B, 1, 510.0), ev(Channel::B, 2, 500.0)];
        let r = estimate_g2(&a, &b, 10_000.0, gate(), 4).unwrap();
        assert_eq!((r.n_a, r.n_b, r.n_coincidences), (2, 2, 1));
        assert_relative_eq!(r.g2, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.stderr, (1.0f64 + 0.5 + 0.5).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn g2_counts_singles_with_multiplicity() {
        // Two A events in one trigger gate count as two singles.
        let a = vec![ev(Channel::A, 0, 495.0), ev(Channel::A, 0, 505.0)];
        let b = vec![ev(Channel::B, 0, 500.0)];
        let r = estimate_g2(&a, &b, 10_000.0, gate(), 2).unwrap();
        assert_eq!((r.n_a, r.n_b, r.n_coincidences), (2, 1, 1));
        assert_relative_eq!(r.g2, 2.0 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn g2_out_of_gate_events_are_ignored() {
        let a = vec![ev(Channel::A, 0, 700.0)];
        let b = vec![ev(Channel::B, 0, 500.0)];
        assert!(matches!(
            estimate_g2(&a, &b, 10_000.0, gate(), 2),
            Err(AnalysisError::UndefinedG2("A"))
        ));
    }

    #[test]
    fn g2_zero_coincidences_uses_upper_bound_stderr() {
        let a = vec![ev(Channel::A, 0, 500.0)];
        let b = vec![ev(Channel::B, 1, 500.0)];
        let r = estimate_g2(&a, &b, 10_000.0, gate(), 4).unwrap();
        assert_eq!(r.g2, 0.0);
        assert_relative_eq!(r.stderr, 4.0 * 3.0f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn g2_is_channel_symmetric() {
        let a = vec![ev(Channel::A, 0, 500.0), ev(Channel::A, 3, 500.0)];
        let b = vec![
            ev(Channel::B, 0, 480.0),
            ev(Channel::B, 2, 520.0),
            ev(Channel::B, 3, 500.0),
        ];
        let r1 = estimate_g2(&a, &b, 10_000.0, gate(), 8).unwrap();
        let r2 = estimate_g2(&b, &a, 10_000.0, gate(), 8).unwrap();
        assert_eq!(r1.g2, r2.g2);
        assert_eq!(r1.stderr, r2.stderr);
        assert_eq!(r1.n_a, r2.n_b);
    }

    #[test]
    fn g2_gate_straddling_the_fold_boundary_pairs_correctly() {
        // Peak phase at 30 ps with jitter reaching back across the fold:
        // an A event 5 ps before the trigger and a B event 25 ps after it
        // belong to the same pulse.
        let gate = TriggerGate {
            period_ps: 10_000.0,
            center_ps: 30.0,
            half_width_ps: 40.0,
        };
        let a = vec![DetectionEvent {
            channel: Channel::A,
            time_ps: 5.0 * 10_000.0 - 5.0,
        }];
        let b = vec![DetectionEvent {
            channel: Channel::B,
            time_ps: 5.0 * 10_000.0 + 25.0,
        }];
        let r = estimate_g2(&a, &b, 10_000.0, gate, 10).unwrap();
        assert_eq!(r.n_coincidences, 1);
    }

    fn ideal_program(n: u32, buf: &BufferModel, src: &SourceModel) -> crate::control::ControlProgram {
        crate::control::ControlProgram::ideal(n, buf, src).unwrap()
    }

    #[test]
    fn vacuum_expectation_is_all_zero() {
        let src = SourceModel {
            mean_photon_number: 0.0,
            ..SourceModel::default()
        };
        let buf = buf();
        let det = crate::detection::DetectorModel {
            dark_rate_hz: 0.0,
            ..Default::default()
        };
        let program = ideal_program(3, &buf, &src);
        let e = expected_histogram(&src, &buf, &program, &det, 1_000, 1.0, (0.0, 10_000.0))
            .unwrap();
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn expected_peak_ratios_follow_the_loss_chain() {
        // Across holds of 0..5 round trips with an ideal switch, the
        // release peak scales as 10^(-0.074 k).
        let src = SourceModel::default();
        let buf = BufferModel {
            switch_extinction_db: f64::INFINITY,
            ..BufferModel::default()
        };
        let det = crate::detection::DetectorModel {
            dark_rate_hz: 0.0,
            ..Default::default()
        };
        let mut integrals = Vec::new();
        for n in 0..=5u32 {
            let program = ideal_program(n, &buf, &src);
            let e = expected_histogram(&src, &buf, &program, &det, 1_000_000, 1.0, (0.0, 10_000.0))
                .unwrap();
            let center = 500.0 + 100.0 * n as f64;
            integrals.push(e.gate_expectation(center, 40.0, 10_000.0));
        }
        for k in 0..=5usize {
            let ratio = integrals[k] / integrals[0];
            assert_relative_eq!(
                ratio,
                10f64.powf(-0.074 * k as f64),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn dark_floor_is_rate_width_triggers() {
        // 100 Hz * 1 ps * 1e6 triggers = 1e-4 expected counts per bin.
        let src = SourceModel {
            mean_photon_number: 0.0,
            ..SourceModel::default()
        };
        let buf = buf();
        let det = crate::detection::DetectorModel::default();
        let program = ideal_program(0, &buf, &src);
        let e = expected_histogram(&src, &buf, &program, &det, 1_000_000, 1.0, (0.0, 10_000.0))
            .unwrap();
        for v in &e.values {
            assert_relative_eq!(*v, 1e-4, max_relative = 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_filtered_programs() {
        let src = SourceModel::default();
        let buf = buf();
        let det = crate::detection::DetectorModel::default();
        let schedule = crate::control::build_schedule(3, &buf, &src).unwrap();
        let program =
            crate::control::ControlProgram::compile(schedule, &buf, 10.0, 40.0, 0.5).unwrap();
        assert!(matches!(
            expected_histogram(&src, &buf, &program, &det, 10, 1.0, (0.0, 10_000.0)),
            Err(AnalysisError::UnsupportedOracle(_))
        ));
    }

    #[test]
    fn total_exit_probability_matches_pure_loop_loss() {
        let src = SourceModel::default();
        let buf = BufferModel {
            input_coupling_loss_db: 0.0,
            output_coupling_loss_db: 0.0,
            switch_extinction_db: f64::INFINITY,
            ..BufferModel::default()
        };
        let program = ideal_program(5, &buf, &src);
        let p = total_exit_probability(&buf, &program).unwrap();
        assert_relative_eq!(p, 0.42657951880159267, max_relative = 1e-12);
    }
}
