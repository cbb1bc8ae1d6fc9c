//! Physical models and Monte Carlo propagation of photons from the pulsed
//! source through the switch and storage loop to the output port.
//!
//! Losses are photon-level Bernoulli channels: input coupling, a survival
//! draw per completed round trip, and output coupling. Routing at each
//! switch encounter follows the drive waveform held by the
//! [`ControlProgram`](crate::control::ControlProgram). Pulses are
//! temporally point-like; a pulse is an instant carrying `n` photons.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlProgram;
use crate::seed::PulseRng;

/// Pulses per parallel work item. Fixed so the pulse/stream pairing never
/// depends on the worker count.
const PULSE_BATCH: u64 = 65_536;

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("loss must be a finite value in dB, got {0}")]
    NonFiniteLoss(f64),
    #[error("loss must be >= 0 dB, got {0}")]
    NegativeLoss(f64),
    #[error("photon entry time {0} ps is outside the program's time span")]
    EntryOutsideProgram(f64),
    #[error("n_pulses must be >= 1")]
    ZeroPulses,
    #[error("program repetition period {program_ps} ps does not match source period {source_ps} ps")]
    PeriodMismatch { program_ps: f64, source_ps: f64 },
    #[error("round-trip time {round_trip_ps} ps must be shorter than the repetition period {period_ps} ps")]
    RoundTripVsPeriod { round_trip_ps: f64, period_ps: f64 },
    #[error("invalid source model: {0}")]
    InvalidSource(String),
}

/// True for finite, strictly positive values; rejects NaN and infinities.
pub(crate) fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Converts a loss in dB to a power transmission fraction in (0, 1].
///
/// Monotone decreasing; 0 dB maps to exactly 1.0.
pub fn db_to_transmission(loss_db: f64) -> Result<f64, OpticsError> {
    if !loss_db.is_finite() {
        return Err(OpticsError::NonFiniteLoss(loss_db));
    }
    if loss_db < 0.0 {
        return Err(OpticsError::NegativeLoss(loss_db));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Photon-number statistics of the pulsed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Heavily attenuated laser pulse; Poissonian photon number.
    WeakCoherent,
    /// Definite photon number per pulse.
    SingleFock,
}

/// Pulsed optical source at the chip input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Mean photon number per pulse (weak-coherent only).
    pub mean_photon_number: f64,
    /// Photon number per pulse (Fock only).
    pub fock_n: u32,
    pub repetition_period_ps: f64,
    /// Arrival time of the first pulse at the chip input.
    pub pulse_epoch_ps: f64,
    /// Metadata only; does not enter the simulation.
    pub wavelength_nm: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            kind: SourceKind::WeakCoherent,
            mean_photon_number: 0.1,
            fock_n: 1,
            repetition_period_ps: 10_000.0,
            // Keeps the default pass-through peak away from the fold
            // boundary of a one-period histogram window.
            pulse_epoch_ps: 500.0,
            wavelength_nm: 1550.0,
        }
    }
}

impl SourceModel {
    /// Hard invariant violations (reject the model).
    pub fn invariant_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !positive_finite(self.repetition_period_ps) {
            errs.push(format!(
                "source.repetition_period_ps must be > 0, got {}",
                self.repetition_period_ps
            ));
        }
        if self.mean_photon_number.is_nan() || self.mean_photon_number < 0.0 {
            errs.push(format!(
                "source.mean_photon_number must be >= 0, got {}",
                self.mean_photon_number
            ));
        }
        if !self.pulse_epoch_ps.is_finite() || self.pulse_epoch_ps < 0.0 {
            errs.push(format!(
                "source.pulse_epoch_ps must be finite and >= 0, got {}",
                self.pulse_epoch_ps
            ));
        }
        errs
    }

    /// Advisory flags (the run still proceeds).
    pub fn warnings(&self) -> Vec<String> {
        let mut warns = Vec::new();
        if self.kind == SourceKind::WeakCoherent && self.mean_photon_number > 1.0 {
            warns.push(format!(
                "source.mean_photon_number = {} is outside the weak regime (expected <= 1)",
                self.mean_photon_number
            ));
        }
        warns
    }

    /// Arrival time of pulse `index` at the chip input.
    pub fn pulse_time_ps(&self, index: u64) -> f64 {
        self.pulse_epoch_ps + index as f64 * self.repetition_period_ps
    }
}

/// Loop and switch physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferModel {
    pub round_trip_time_ps: f64,
    pub round_trip_loss_db: f64,
    pub input_coupling_loss_db: f64,
    pub output_coupling_loss_db: f64,
    /// Fiber-to-fiber insertion-loss budget the coupling split must fit in;
    /// the remainder is attributed to single-pass switch transit.
    pub insertion_loss_budget_db: f64,
    pub v_pi_volts: f64,
    /// Finite leakage of the nominally closed port. `inf` is an ideal switch.
    pub switch_extinction_db: f64,
    pub eo_bandwidth_ghz: f64,
    pub max_round_trips: u32,
}

impl Default for BufferModel {
    fn default() -> Self {
        Self {
            round_trip_time_ps: 100.0,
            round_trip_loss_db: 0.74,
            // The 6.2 dB budget split evenly over the two facets is an
            // assumption, not a measured split.
            input_coupling_loss_db: 2.73,
            output_coupling_loss_db: 2.73,
            insertion_loss_budget_db: 6.2,
            v_pi_volts: 3.0,
            switch_extinction_db: 30.0,
            eo_bandwidth_ghz: 40.0,
            max_round_trips: 14,
        }
    }
}

impl BufferModel {
    pub fn invariant_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !positive_finite(self.round_trip_time_ps) {
            errs.push(format!(
                "buffer.round_trip_time_ps must be > 0, got {}",
                self.round_trip_time_ps
            ));
        }
        for (name, v) in [
            ("buffer.round_trip_loss_db", self.round_trip_loss_db),
            ("buffer.input_coupling_loss_db", self.input_coupling_loss_db),
            ("buffer.output_coupling_loss_db", self.output_coupling_loss_db),
        ] {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!("{name} must be finite and >= 0 dB, got {v}"));
            }
        }
        if !positive_finite(self.v_pi_volts) {
            errs.push(format!("buffer.v_pi_volts must be > 0, got {}", self.v_pi_volts));
        }
        if self.switch_extinction_db < 0.0 || self.switch_extinction_db.is_nan() {
            errs.push(format!(
                "buffer.switch_extinction_db must be >= 0 dB, got {}",
                self.switch_extinction_db
            ));
        }
        if self.eo_bandwidth_ghz.is_nan() || self.eo_bandwidth_ghz <= 0.0 {
            errs.push(format!(
                "buffer.eo_bandwidth_ghz must be > 0, got {}",
                self.eo_bandwidth_ghz
            ));
        }
        errs
    }

    /// Physics-level violations against the configured loss budget.
    pub fn budget_violations(&self) -> Vec<String> {
        let sum = self.input_coupling_loss_db + self.output_coupling_loss_db;
        if sum > self.insertion_loss_budget_db + 1e-12 {
            vec![format!(
                "coupling losses sum to {sum:.3} dB, exceeding the {:.3} dB insertion-loss budget",
                self.insertion_loss_budget_db
            )]
        } else {
            Vec::new()
        }
    }
}

/// How a photon left the chip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathTag {
    /// Released through an open gate after the programmed hold.
    Stored,
    /// Escaped through the finite extinction of a closed gate.
    Leaked,
    /// Never captured; went straight through the bus.
    DirectPass,
}

impl PathTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathTag::Stored => "stored",
            PathTag::Leaked => "leaked",
            PathTag::DirectPass => "direct_pass",
        }
    }
}

/// A photon that made it to the chip output port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub origin_pulse_index: u64,
    pub exit_time_ps: f64,
    pub round_trips_completed: u32,
    pub path_tag: PathTag,
}

/// Where a photon was lost, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCause {
    InputCoupling,
    LoopAbsorption,
    OutputCoupling,
    /// Still circulating after `max_round_trips` encounters.
    Overflow,
}

/// Result of propagating one photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropagationOutcome {
    Exited(PhotonRecord),
    Lost(LossCause),
}

/// Draws the photon number carried by one pulse.
///
/// Weak-coherent sources are Poissonian in the mean photon number; Fock
/// sources are deterministic and consume no randomness.
pub fn sample_pulse_photons<R: Rng + ?Sized>(src: &SourceModel, rng: &mut R) -> u32 {
    match src.kind {
        SourceKind::SingleFock => src.fock_n,
        SourceKind::WeakCoherent => {
            if src.mean_photon_number == 0.0 {
                0
            } else {
                let dist = Poisson::new(src.mean_photon_number)
                    .expect("mean photon number validated > 0");
                dist.sample(rng) as u32
            }
        }
    }
}

pub(crate) struct PulsePhotonSampler {
    poisson: Option<Poisson<f64>>,
    fock_n: u32,
}

impl PulsePhotonSampler {
    pub(crate) fn new(src: &SourceModel) -> Result<Self, OpticsError> {
        match src.kind {
            SourceKind::SingleFock => Ok(Self { poisson: None, fock_n: src.fock_n }),
            SourceKind::WeakCoherent => {
                if src.mean_photon_number < 0.0 {
                    return Err(OpticsError::InvalidSource(format!(
                        "mean photon number {} < 0",
                        src.mean_photon_number
                    )));
                }
                let poisson = if src.mean_photon_number == 0.0 {
                    None
                } else {
                    Some(Poisson::new(src.mean_photon_number).map_err(|e| {
                        OpticsError::InvalidSource(format!("poisson: {e}"))
                    })?)
                };
                Ok(Self { poisson, fock_n: 0 })
            }
        }
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, kind: SourceKind, rng: &mut R) -> u32 {
        match kind {
            SourceKind::SingleFock => self.fock_n,
            SourceKind::WeakCoherent => match &self.poisson {
                Some(p) => p.sample(rng) as u32,
                None => 0,
            },
        }
    }
}

/// Survival transmissions resolved once per run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LossChain {
    pub input: f64,
    pub round_trip: f64,
    pub output: f64,
}

impl LossChain {
    pub fn from_buffer(buf: &BufferModel) -> Result<Self, OpticsError> {
        Ok(Self {
            input: db_to_transmission(buf.input_coupling_loss_db)?,
            round_trip: db_to_transmission(buf.round_trip_loss_db)?,
            output: db_to_transmission(buf.output_coupling_loss_db)?,
        })
    }
}

/// Propagates one photon that arrives at the chip input at `entry_time_ps`.
///
/// The photon sees input coupling, then the 2x2 switch once per loop
/// circulation. At every switch encounter the routing split is evaluated
/// from the drive waveform at the arrival instant; each completed loop
/// applies a round-trip survival draw. Switch transit time is folded into
/// the round-trip time.
pub fn propagate_photon<R: Rng + ?Sized>(
    buf: &BufferModel,
    program: &ControlProgram,
    entry_time_ps: f64,
    rng: &mut R,
) -> Result<PropagationOutcome, OpticsError> {
    if !entry_time_ps.is_finite() || entry_time_ps < 0.0 {
        return Err(OpticsError::EntryOutsideProgram(entry_time_ps));
    }
    let chain = LossChain::from_buffer(buf)?;
    Ok(propagate_with_chain(buf, &chain, program, 0, entry_time_ps, rng))
}

#[inline]
pub(crate) fn propagate_with_chain<R: Rng + ?Sized>(
    buf: &BufferModel,
    chain: &LossChain,
    program: &ControlProgram,
    pulse_index: u64,
    entry_time_ps: f64,
    rng: &mut R,
) -> PropagationOutcome {
    if !survives(chain.input, rng) {
        return PropagationOutcome::Lost(LossCause::InputCoupling);
    }

    // Capture encounter.
    let (cross, _bar) = program.routing_at(entry_time_ps, buf);
    if rng.random::<f64>() >= cross {
        // Bar path: straight through the bus.
        return exit_record(chain, rng, pulse_index, entry_time_ps, 0, PathTag::DirectPass);
    }

    // In the loop; one switch encounter per completed circulation.
    let mut trips = 0u32;
    loop {
        if trips >= buf.max_round_trips {
            return PropagationOutcome::Lost(LossCause::Overflow);
        }
        if !survives(chain.round_trip, rng) {
            return PropagationOutcome::Lost(LossCause::LoopAbsorption);
        }
        trips += 1;
        let exit_time = entry_time_ps + trips as f64 * buf.round_trip_time_ps;
        let (cross, _bar) = program.routing_at(exit_time, buf);
        if rng.random::<f64>() < cross {
            let tag = if program.gate_open_at(exit_time) {
                PathTag::Stored
            } else {
                PathTag::Leaked
            };
            return exit_record(chain, rng, pulse_index, exit_time, trips, tag);
        }
    }
}

#[inline]
fn exit_record<R: Rng + ?Sized>(
    chain: &LossChain,
    rng: &mut R,
    pulse_index: u64,
    exit_time_ps: f64,
    trips: u32,
    tag: PathTag,
) -> PropagationOutcome {
    if !survives(chain.output, rng) {
        return PropagationOutcome::Lost(LossCause::OutputCoupling);
    }
    PropagationOutcome::Exited(PhotonRecord {
        origin_pulse_index: pulse_index,
        exit_time_ps,
        round_trips_completed: trips,
        path_tag: tag,
    })
}

/// Accumulated per-run counters, mergeable across shards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub pulses: u64,
    pub photons_launched: u64,
    pub photons_exited: u64,
    pub lost_input_coupling: u64,
    pub lost_in_loop: u64,
    pub lost_output_coupling: u64,
    pub lost_overflow: u64,
}

impl RunStats {
    pub fn merge(&mut self, other: &RunStats) {
        self.pulses += other.pulses;
        self.photons_launched += other.photons_launched;
        self.photons_exited += other.photons_exited;
        self.lost_input_coupling += other.lost_input_coupling;
        self.lost_in_loop += other.lost_in_loop;
        self.lost_output_coupling += other.lost_output_coupling;
        self.lost_overflow += other.lost_overflow;
    }

    pub fn record_loss(&mut self, cause: LossCause) {
        match cause {
            LossCause::InputCoupling => self.lost_input_coupling += 1,
            LossCause::LoopAbsorption => self.lost_in_loop += 1,
            LossCause::OutputCoupling => self.lost_output_coupling += 1,
            LossCause::Overflow => self.lost_overflow += 1,
        }
    }
}

/// Output of [`run_experiment`]: the exit records in pulse order plus
/// loss diagnostics.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<PhotonRecord>,
    pub stats: RunStats,
}

fn check_run_assembly(
    src: &SourceModel,
    buf: &BufferModel,
    program: &ControlProgram,
    n_pulses: u64,
) -> Result<(), OpticsError> {
    if n_pulses == 0 {
        return Err(OpticsError::ZeroPulses);
    }
    let program_period = program.schedule.repetition_period_ps;
    if (program_period - src.repetition_period_ps).abs() > 1e-9 {
        return Err(OpticsError::PeriodMismatch {
            program_ps: program_period,
            source_ps: src.repetition_period_ps,
        });
    }
    if buf.round_trip_time_ps >= src.repetition_period_ps {
        return Err(OpticsError::RoundTripVsPeriod {
            round_trip_ps: buf.round_trip_time_ps,
            period_ps: src.repetition_period_ps,
        });
    }
    Ok(())
}

/// Simulates `n_pulses` source pulses through the buffer.
///
/// Deterministic for a fixed `master_seed`: each pulse draws from its own
/// stream derived from `(master_seed, pulse_index)`, so the merged record
/// stream (ordered by pulse index) is independent of how pulses are
/// scheduled over threads.
pub fn run_experiment(
    src: &SourceModel,
    buf: &BufferModel,
    program: &ControlProgram,
    n_pulses: u64,
    master_seed: u64,
) -> Result<ExperimentOutput, OpticsError> {
    check_run_assembly(src, buf, program, n_pulses)?;
    let sampler = PulsePhotonSampler::new(src)?;
    let chain = LossChain::from_buffer(buf)?;

    let n_batches = n_pulses.div_ceil(PULSE_BATCH);
    let batches: Vec<(Vec<PhotonRecord>, RunStats)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * PULSE_BATCH;
            let hi = (lo + PULSE_BATCH).min(n_pulses);
            let mut records = Vec::new();
            let mut stats = RunStats::default();
            for p in lo..hi {
                let mut rng = PulseRng::new(master_seed, p);
                simulate_pulse(
                    src, buf, &chain, program, &sampler, p, &mut rng, &mut records, &mut stats,
                );
            }
            (records, stats)
        })
        .collect();

    let mut records = Vec::new();
    let mut stats = RunStats::default();
    for (r, s) in batches {
        records.extend(r);
        stats.merge(&s);
    }
    Ok(ExperimentOutput { records, stats })
}

/// One pulse through source sampling and propagation. Exit records are
/// appended in photon order. Shared by [`run_experiment`] and the full
/// detection pipeline so both consume pulse streams identically.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_pulse<R: Rng + ?Sized>(
    src: &SourceModel,
    buf: &BufferModel,
    chain: &LossChain,
    program: &ControlProgram,
    sampler: &PulsePhotonSampler,
    pulse_index: u64,
    rng: &mut R,
    records: &mut Vec<PhotonRecord>,
    stats: &mut RunStats,
) {
    stats.pulses += 1;
    let n = sampler.sample(src.kind, rng);
    stats.photons_launched += n as u64;
    if n == 0 {
        return;
    }
    let entry = src.pulse_time_ps(pulse_index);
    for _ in 0..n {
        match propagate_with_chain(buf, chain, program, pulse_index, entry, rng) {
            PropagationOutcome::Exited(rec) => {
                stats.photons_exited += 1;
                records.push(rec);
            }
            PropagationOutcome::Lost(cause) => stats.record_loss(cause),
        }
    }
}

#[inline]
fn survives<R: Rng + ?Sized>(transmission: f64, rng: &mut R) -> bool {
    transmission >= 1.0 || rng.random::<f64>() < transmission
}
