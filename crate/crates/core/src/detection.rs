//! Measurement back-end: 50/50 beamsplitter for the two-detector
//! arrangement, SNSPD click generation (efficiency, Gaussian jitter, dark
//! counts, dead time), and trigger-synchronized histogramming.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{positive_finite, PhotonRecord};

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("splitter ratio must be in [0, 1], got {0}")]
    BadRatio(f64),
    #[error("invalid detector model: {0}")]
    InvalidModel(String),
    #[error("histogram window [{t0} ps, {t1} ps) is not a whole number of {bin_width} ps bins")]
    MisalignedWindow { t0: f64, t1: f64, bin_width: f64 },
    #[error("trigger period must be > 0, got {0} ps")]
    BadPeriod(f64),
    #[error("histogram grids differ; cannot merge")]
    GridMismatch,
}

/// Detector channel label in the two-detector arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::A => "A",
            Channel::B => "B",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Channel::A),
            "B" => Ok(Channel::B),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

/// Single-photon detector parameters. Defaults are typical nanowire-detector
/// values; the chip experiment reports none, so all four are assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 0.8,
            jitter_sigma_ps: 15.0,
            dark_rate_hz: 100.0,
            dead_time_ps: 50_000.0,
        }
    }
}

impl DetectorModel {
    pub fn invariant_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.efficiency) {
            errs.push(format!(
                "detector.efficiency must be in [0, 1], got {}",
                self.efficiency
            ));
        }
        for (name, v) in [
            ("detector.jitter_sigma_ps", self.jitter_sigma_ps),
            ("detector.dark_rate_hz", self.dark_rate_hz),
            ("detector.dead_time_ps", self.dead_time_ps),
        ] {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        errs
    }

    /// Jitter wider than a third of the round trip smears the peaks together.
    pub fn warnings(&self, round_trip_time_ps: f64) -> Vec<String> {
        if self.jitter_sigma_ps > round_trip_time_ps / 3.0 {
            vec![format!(
                "detector.jitter_sigma_ps = {} exceeds a third of the {} ps round trip; storage peaks will smear",
                self.jitter_sigma_ps, round_trip_time_ps
            )]
        } else {
            Vec::new()
        }
    }
}

/// One time-tagged detector click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub channel: Channel,
    pub time_ps: f64,
}

/// Routes each photon independently to A with probability `ratio`, else B.
/// No photon is duplicated or dropped.
pub fn beamsplit<R: Rng + ?Sized>(
    records: &[PhotonRecord],
    ratio: f64,
    rng: &mut R,
) -> Result<(Vec<PhotonRecord>, Vec<PhotonRecord>), DetectionError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DetectionError::BadRatio(ratio));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &rec in records {
        if rng.random::<f64>() < ratio {
            a.push(rec);
        } else {
            b.push(rec);
        }
    }
    Ok((a, b))
}

/// Turns photon arrivals into detector clicks on one channel.
///
/// Arrivals are sorted first, so the output does not depend on the input
/// order. Each photon clicks with probability `efficiency` at its arrival
/// time plus Gaussian jitter; dark counts arrive as a homogeneous Poisson
/// process over `[0, acquisition_span_ps]`; finally any event closer than
/// `dead_time_ps` to the previous surviving event is discarded.
pub fn detect<R: Rng + ?Sized>(
    arrival_times_ps: &[f64],
    det: &DetectorModel,
    acquisition_span_ps: f64,
    channel: Channel,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>, DetectionError> {
    let errs = det.invariant_errors();
    if !errs.is_empty() {
        return Err(DetectionError::InvalidModel(errs.join("; ")));
    }

    let mut arrivals = arrival_times_ps.to_vec();
    arrivals.sort_by(f64::total_cmp);

    let mut times = Vec::with_capacity(arrivals.len());
    click_photons(&arrivals, det, rng, &mut times);
    dark_counts(det, acquisition_span_ps, rng, &mut times);
    times.sort_by(f64::total_cmp);

    Ok(apply_dead_time(&times, det.dead_time_ps)
        .map(|t| DetectionEvent { channel, time_ps: t })
        .collect())
}

/// Efficiency and jitter stage, shared with the batched pipeline.
pub(crate) fn click_photons<R: Rng + ?Sized>(
    arrivals: &[f64],
    det: &DetectorModel,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    let jitter = if det.jitter_sigma_ps > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma_ps).expect("sigma validated"))
    } else {
        None
    };
    for &t in arrivals {
        if det.efficiency >= 1.0 || rng.random::<f64>() < det.efficiency {
            let dt = jitter.as_ref().map_or(0.0, |n| n.sample(rng));
            out.push(t + dt);
        }
    }
}

/// Homogeneous Poisson dark counts over `[0, span]`.
pub(crate) fn dark_counts<R: Rng + ?Sized>(
    det: &DetectorModel,
    span_ps: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    if det.dark_rate_hz <= 0.0 || span_ps <= 0.0 {
        return;
    }
    let rate_per_ps = det.dark_rate_hz * 1e-12;
    let exp = Exp::new(rate_per_ps).expect("rate validated");
    let mut t = exp.sample(rng);
    while t <= span_ps {
        out.push(t);
        t += exp.sample(rng);
    }
}

/// Drops events closer than `dead_time_ps` to the previous surviving event.
/// Input must be time-sorted.
pub(crate) fn apply_dead_time(
    sorted_times: &[f64],
    dead_time_ps: f64,
) -> impl Iterator<Item = f64> + '_ {
    let mut last_kept = f64::NEG_INFINITY;
    sorted_times.iter().copied().filter(move |&t| {
        if dead_time_ps > 0.0 && t - last_kept < dead_time_ps {
            false
        } else {
            last_kept = t;
            true
        }
    })
}

/// Trigger-synchronized arrival-time histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: f64,
    /// Window start relative to the pulse trigger.
    pub t0_ps: f64,
    pub counts: Vec<u64>,
    pub n_triggers: u64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.t0_ps + i as f64 * self.bin_width_ps
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.t0_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elementwise addition; histograms from disjoint pulse ranges merge
    /// associatively, enabling parallel accumulation.
    pub fn merge(&mut self, other: &Histogram) -> Result<(), DetectionError> {
        if self.counts.len() != other.counts.len()
            || (self.bin_width_ps - other.bin_width_ps).abs() > 1e-9
            || (self.t0_ps - other.t0_ps).abs() > 1e-9
        {
            return Err(DetectionError::GridMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_triggers += other.n_triggers;
        Ok(())
    }
}

fn checked_bin_count(t0: f64, t1: f64, bin_width: f64) -> Result<usize, DetectionError> {
    if !positive_finite(bin_width) || !(t1 - t0).is_finite() || t1 <= t0 {
        return Err(DetectionError::MisalignedWindow { t0, t1, bin_width });
    }
    let n = ((t1 - t0) / bin_width).round();
    if n < 1.0 || ((t1 - t0) - n * bin_width).abs() > 1e-6 * bin_width {
        return Err(DetectionError::MisalignedWindow { t0, t1, bin_width });
    }
    Ok(n as usize)
}

/// Folds each event time modulo the trigger period, offsets it into the
/// window `[t0, t1)`, and bins it. Events outside the window are dropped;
/// the sum of counts equals the number of events whose folded time lies in
/// the window.
pub fn build_histogram(
    events: &[DetectionEvent],
    trigger_period_ps: f64,
    bin_width_ps: f64,
    window: (f64, f64),
    n_triggers: u64,
) -> Result<Histogram, DetectionError> {
    if !positive_finite(trigger_period_ps) {
        return Err(DetectionError::BadPeriod(trigger_period_ps));
    }
    let (t0, t1) = window;
    let n_bins = checked_bin_count(t0, t1, bin_width_ps)?;
    let mut counts = vec![0u64; n_bins];
    let len = t1 - t0;
    for ev in events {
        let tau = ev.time_ps.rem_euclid(trigger_period_ps);
        let pos = tau - t0;
        if pos >= 0.0 && pos < len {
            let mut idx = (pos / bin_width_ps) as usize;
            if idx >= n_bins {
                idx = n_bins - 1;
            }
            counts[idx] += 1;
        }
    }
    Ok(Histogram {
        bin_width_ps,
        t0_ps: t0,
        counts,
        n_triggers,
    })
}
