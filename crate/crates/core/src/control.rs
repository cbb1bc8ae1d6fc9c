//! Switch gate scheduling and the electrical drive chain.
//!
//! A program holds the ideal gate timing (capture, hold N round trips,
//! release) plus the analog model of the comparator/amplifier chain:
//! rectangular gates with linear edge ramps, low-passed by a single-pole
//! filter at the electro-optic bandwidth.
//!
//! Switch convention: v = 0 is bar (the loop keeps circulating), v = Vpi
//! is cross (capture/release). Gates are centered on the pulse arrival
//! phase, so a captured photon meets the release gate dead center after
//! N round trips.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{positive_finite, BufferModel, SourceModel};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("requested {requested} round trips exceeds the buffer capacity of {max}")]
    CapacityExceeded { requested: u32, max: u32 },
    #[error("gate span {span_ps} ps collides with the next pulse (period {period_ps} ps)")]
    GateCollision { span_ps: f64, period_ps: f64 },
    #[error("gate window {window_ps} ps must be shorter than the round trip {round_trip_ps} ps")]
    WindowTooWide { window_ps: f64, round_trip_ps: f64 },
    #[error("edge time {edge_ps} ps must be positive and shorter than the gate window {window_ps} ps")]
    EdgeTooSlow { edge_ps: f64, window_ps: f64 },
    #[error("sample step {step_ps} ps too coarse for a {edge_ps} ps edge (need step <= edge/4)")]
    SampleStepTooCoarse { step_ps: f64, edge_ps: f64 },
    #[error("waveform grid is not uniform and strictly increasing")]
    NonUniformGrid,
    #[error("3 dB bandwidth must be > 0, got {0} GHz")]
    BadBandwidth(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

fn fold(t: f64, period: f64) -> f64 {
    t.rem_euclid(period)
}

/// Signed circular distance from `b` to `a`, in (-period/2, period/2].
pub(crate) fn circ_diff(a: f64, b: f64, period: f64) -> f64 {
    let d = fold(a - b, period);
    if d > period / 2.0 {
        d - period
    } else {
        d
    }
}

/// Ideal gate timing for one storage cycle, repeated every period.
///
/// `release_time_ps` is `capture_time_ps + N * round_trip` by construction;
/// [`GateSchedule::with_release_time`] can place it off-lattice so that
/// [`validate_program`] has something to catch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSchedule {
    pub capture_time_ps: f64,
    pub hold_round_trips: u32,
    pub gate_window_ps: f64,
    pub repetition_period_ps: f64,
    pub round_trip_time_ps: f64,
    pub release_time_ps: f64,
}

impl GateSchedule {
    pub fn with_release_time(mut self, release_time_ps: f64) -> Self {
        self.release_time_ps = release_time_ps;
        self
    }

    /// True when the ideal gate (capture or release) is open at `t`.
    pub fn gate_open_at(&self, t: f64) -> bool {
        if self.pass_through() {
            return false;
        }
        let half = self.gate_window_ps / 2.0;
        let p = self.repetition_period_ps;
        circ_diff(t, self.capture_time_ps, p).abs() < half
            || circ_diff(t, self.release_time_ps, p).abs() < half
    }

    /// Coincident capture and release cancel into a pass-through: the drive
    /// stays in the bar state and the pulse goes straight through the bus.
    pub fn pass_through(&self) -> bool {
        self.hold_round_trips == 0
            && (self.release_time_ps - self.capture_time_ps).abs() < 1e-9
    }

    fn gate_centers(&self) -> Vec<f64> {
        if self.pass_through() {
            Vec::new()
        } else if (self.release_time_ps - self.capture_time_ps).abs() < 1e-9 {
            vec![self.capture_time_ps]
        } else {
            vec![self.capture_time_ps, self.release_time_ps]
        }
    }
}

/// Builds the schedule for holding a pulse `n` round trips, with the default
/// gate window of half a round trip.
pub fn build_schedule(
    n: u32,
    buf: &BufferModel,
    src: &SourceModel,
) -> Result<GateSchedule, ControlError> {
    build_schedule_with_window(n, buf, src, buf.round_trip_time_ps / 2.0)
}

/// Builds a schedule with an explicit gate window.
pub fn build_schedule_with_window(
    n: u32,
    buf: &BufferModel,
    src: &SourceModel,
    gate_window_ps: f64,
) -> Result<GateSchedule, ControlError> {
    if n > buf.max_round_trips {
        return Err(ControlError::CapacityExceeded {
            requested: n,
            max: buf.max_round_trips,
        });
    }
    if !positive_finite(gate_window_ps) {
        return Err(ControlError::InvalidParam(format!(
            "gate window must be > 0 ps, got {gate_window_ps}"
        )));
    }
    if gate_window_ps >= buf.round_trip_time_ps {
        return Err(ControlError::WindowTooWide {
            window_ps: gate_window_ps,
            round_trip_ps: buf.round_trip_time_ps,
        });
    }
    let period = src.repetition_period_ps;
    let span = n as f64 * buf.round_trip_time_ps + gate_window_ps;
    if span >= period {
        return Err(ControlError::GateCollision {
            span_ps: span,
            period_ps: period,
        });
    }
    let capture = fold(src.pulse_epoch_ps, period);
    Ok(GateSchedule {
        capture_time_ps: capture,
        hold_round_trips: n,
        gate_window_ps,
        repetition_period_ps: period,
        round_trip_time_ps: buf.round_trip_time_ps,
        release_time_ps: capture + n as f64 * buf.round_trip_time_ps,
    })
}

/// Sampled analog drive over one repetition period.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveWaveform {
    /// Uniform grid of (time_ps, volts) covering [0, period).
    pub samples: Vec<(f64, f64)>,
    pub v_pi_volts: f64,
    pub sample_step_ps: f64,
}

impl DriveWaveform {
    fn check_grid(&self) -> Result<(), ControlError> {
        if self.samples.len() < 2 {
            return Err(ControlError::NonUniformGrid);
        }
        let dt = self.sample_step_ps;
        for w in self.samples.windows(2) {
            let d = w[1].0 - w[0].0;
            if d <= 0.0 || (d - dt).abs() > 1e-6 * dt {
                return Err(ControlError::NonUniformGrid);
            }
        }
        Ok(())
    }

    /// Linear interpolation on the periodic grid.
    pub fn voltage_at(&self, t: f64, period: f64) -> f64 {
        let tau = fold(t, period);
        let n = self.samples.len();
        let i = (tau / self.sample_step_ps) as usize;
        let (t0, v0) = self.samples[i.min(n - 1)];
        let (v1, t1) = if i + 1 < n {
            (self.samples[i + 1].1, self.samples[i + 1].0)
        } else {
            // wrap to the first sample, one period later
            (self.samples[0].1, self.samples[0].0 + period)
        };
        if t1 <= t0 {
            return v0;
        }
        let f = ((tau - t0) / (t1 - t0)).clamp(0.0, 1.0);
        v0 + f * (v1 - v0)
    }

    pub fn max_voltage(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Trapezoid amplitude at circular offset `d` from the gate center:
/// unity plateau of width `window - edge`, linear ramps of duration `edge`
/// centered on the nominal transitions (half-amplitude width = `window`).
fn trapezoid(d: f64, window: f64, edge: f64) -> f64 {
    let x = d.abs();
    let plateau_half = (window - edge) / 2.0;
    let foot_half = (window + edge) / 2.0;
    if x <= plateau_half {
        1.0
    } else if x < foot_half {
        (foot_half - x) / edge
    } else {
        0.0
    }
}

/// Renders the schedule's gates as a sampled trapezoid drive at `v_pi`
/// amplitude, each edge a linear ramp of `edge_time_ps`.
pub fn synthesize_waveform(
    sched: &GateSchedule,
    buf: &BufferModel,
    edge_time_ps: f64,
    sample_step_ps: f64,
) -> Result<DriveWaveform, ControlError> {
    if !positive_finite(edge_time_ps) {
        return Err(ControlError::InvalidParam(format!(
            "edge time must be > 0 ps for a sampled waveform, got {edge_time_ps}"
        )));
    }
    if edge_time_ps >= sched.gate_window_ps {
        return Err(ControlError::EdgeTooSlow {
            edge_ps: edge_time_ps,
            window_ps: sched.gate_window_ps,
        });
    }
    if !positive_finite(sample_step_ps) || sample_step_ps > edge_time_ps / 4.0 {
        return Err(ControlError::SampleStepTooCoarse {
            step_ps: sample_step_ps,
            edge_ps: edge_time_ps,
        });
    }
    let period = sched.repetition_period_ps;
    let n = (period / sample_step_ps).round() as usize;
    let centers = sched.gate_centers();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * sample_step_ps;
        let mut a: f64 = 0.0;
        for &c in &centers {
            a = a.max(trapezoid(
                circ_diff(t, c, period),
                sched.gate_window_ps,
                edge_time_ps,
            ));
        }
        samples.push((t, a * buf.v_pi_volts));
    }
    Ok(DriveWaveform {
        samples,
        v_pi_volts: buf.v_pi_volts,
        sample_step_ps,
    })
}

/// Single-pole low-pass with time constant 1/(2*pi*f3db), discretized
/// exactly (zero-order hold), so the step response matches the continuous
/// exponential on the grid. Unity DC gain, overshoot-free.
pub fn apply_bandwidth(wave: &DriveWaveform, f3db_ghz: f64) -> Result<DriveWaveform, ControlError> {
    if f3db_ghz.is_nan() || f3db_ghz <= 0.0 {
        return Err(ControlError::BadBandwidth(f3db_ghz));
    }
    wave.check_grid()?;
    let tau_ps = 1000.0 / (2.0 * std::f64::consts::PI * f3db_ghz);
    let alpha = 1.0 - (-wave.sample_step_ps / tau_ps).exp();
    let mut out = Vec::with_capacity(wave.samples.len());
    let mut y = wave.samples[0].1;
    for &(t, x) in &wave.samples {
        y += alpha * (x - y);
        out.push((t, y));
    }
    Ok(DriveWaveform {
        samples: out,
        v_pi_volts: wave.v_pi_volts,
        sample_step_ps: wave.sample_step_ps,
    })
}

/// Extracts the 3 dB bandwidth from a measured S21 magnitude curve.
///
/// Input: CSV with header `freq_ghz,s21_db` and rows sorted by frequency.
/// The curve is normalized to its first (lowest-frequency) point and the
/// -3 dB crossing located by linear interpolation. The drive-chain model
/// stays a single pole; a measured curve only tells it where to roll off.
pub fn f3db_from_s21_csv(text: &str) -> Result<f64, ControlError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("freq_ghz,s21_db")) {
            continue;
        }
        let (f, m) = line.split_once(',').ok_or_else(|| {
            ControlError::InvalidParam(format!("s21 line {}: expected freq_ghz,s21_db", i + 1))
        })?;
        let f: f64 = f.trim().parse().map_err(|e| {
            ControlError::InvalidParam(format!("s21 line {}: bad frequency: {e}", i + 1))
        })?;
        let m: f64 = m.trim().parse().map_err(|e| {
            ControlError::InvalidParam(format!("s21 line {}: bad magnitude: {e}", i + 1))
        })?;
        points.push((f, m));
    }
    if points.len() < 2 {
        return Err(ControlError::InvalidParam(
            "s21 curve needs at least 2 points".into(),
        ));
    }
    let reference = points[0].1;
    let mut prev = points[0];
    for &(f, m) in &points[1..] {
        if f <= prev.0 {
            return Err(ControlError::InvalidParam(
                "s21 frequencies must be strictly increasing".into(),
            ));
        }
        let (d_prev, d) = (prev.1 - reference, m - reference);
        if d <= -3.0 {
            let frac = (-3.0 - d_prev) / (d - d_prev);
            return Ok(prev.0 + frac * (f - prev.0));
        }
        prev = (f, m);
    }
    Err(ControlError::InvalidParam(
        "s21 curve never falls 3 dB below its low-frequency value".into(),
    ))
}

/// Routing split of the push-pull Mach-Zehnder switch at drive voltage `v`.
///
/// Ideal cross fraction is sin^2(pi v / (2 Vpi)); the finite extinction
/// floors the split at 10^(-extinction/10) from either rail while keeping
/// cross + bar = 1 exactly.
pub fn switch_transmission(v: f64, v_pi: f64, extinction_db: f64) -> (f64, f64) {
    let ideal = (std::f64::consts::PI * v / (2.0 * v_pi)).sin().powi(2);
    let floor = if extinction_db.is_infinite() {
        0.0
    } else {
        10f64.powf(-extinction_db / 10.0)
    };
    let cross = floor + (1.0 - 2.0 * floor) * ideal;
    (cross, 1.0 - cross)
}

/// The analog drive behind a program.
#[derive(Debug, Clone, PartialEq)]
pub enum DriveModel {
    /// Exact rectangular gates straight from the schedule.
    Ideal,
    /// Synthesized trapezoid after the bandwidth filter.
    Waveform(DriveWaveform),
}

/// A compiled switch program: the gate schedule plus its drive waveform.
/// Immutable and safe to share across parallel pulse simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProgram {
    pub schedule: GateSchedule,
    pub edge_time_ps: f64,
    pub f3db_ghz: f64,
    pub drive: DriveModel,
}

impl ControlProgram {
    /// Compiles a schedule into a runnable program.
    ///
    /// `edge_time_ps = 0` selects the ideal rectangular drive; otherwise the
    /// trapezoid is synthesized on `sample_step_ps` and low-passed at
    /// `f3db_ghz` (infinite bandwidth skips the filter).
    pub fn compile(
        schedule: GateSchedule,
        buf: &BufferModel,
        edge_time_ps: f64,
        f3db_ghz: f64,
        sample_step_ps: f64,
    ) -> Result<Self, ControlError> {
        let drive = if edge_time_ps == 0.0 {
            DriveModel::Ideal
        } else if schedule.pass_through() {
            // No gates to render; the drive is identically zero.
            DriveModel::Ideal
        } else {
            let wave = synthesize_waveform(&schedule, buf, edge_time_ps, sample_step_ps)?;
            let wave = if f3db_ghz.is_infinite() {
                wave
            } else {
                apply_bandwidth(&wave, f3db_ghz)?
            };
            DriveModel::Waveform(wave)
        };
        Ok(Self {
            schedule,
            edge_time_ps,
            f3db_ghz,
            drive,
        })
    }

    /// Ideal program (rectangular gates) for a hold of `n` round trips.
    pub fn ideal(n: u32, buf: &BufferModel, src: &SourceModel) -> Result<Self, ControlError> {
        let schedule = build_schedule(n, buf, src)?;
        Self::compile(schedule, buf, 0.0, f64::INFINITY, 0.5)
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self.drive, DriveModel::Ideal)
    }

    /// Drive voltage at time `t`.
    pub fn voltage_at(&self, t: f64, v_pi: f64) -> f64 {
        match &self.drive {
            DriveModel::Ideal => {
                if self.schedule.gate_open_at(t) {
                    v_pi
                } else {
                    0.0
                }
            }
            DriveModel::Waveform(w) => w.voltage_at(t, self.schedule.repetition_period_ps),
        }
    }

    /// (cross, bar) routing fractions seen by a photon arriving at `t`.
    pub fn routing_at(&self, t: f64, buf: &BufferModel) -> (f64, f64) {
        let v = self.voltage_at(t, buf.v_pi_volts);
        switch_transmission(v, buf.v_pi_volts, buf.switch_extinction_db)
    }

    /// Whether the ideal schedule has a gate open at `t` (used to tag
    /// released vs leaked exits; the physics uses [`Self::routing_at`]).
    pub fn gate_open_at(&self, t: f64) -> bool {
        self.schedule.gate_open_at(t)
    }
}

/// One rule violation found by [`validate_program`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    WindowExceedsRoundTrip { window_ps: f64, round_trip_ps: f64 },
    GateCollision { span_ps: f64, period_ps: f64 },
    OffLatticeRelease { offset_ps: f64 },
    EdgeSlowerThanWindow { edge_ps: f64, window_ps: f64 },
    PeriodMismatch { program_ps: f64, source_ps: f64 },
    ExceedsCapacity { hold: u32, max: u32 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::WindowExceedsRoundTrip { window_ps, round_trip_ps } => write!(
                f,
                "window exceeds round trip: gate window {window_ps} ps >= round trip {round_trip_ps} ps"
            ),
            Violation::GateCollision { span_ps, period_ps } => write!(
                f,
                "gate collision: storage span {span_ps} ps reaches into the next pulse (period {period_ps} ps)"
            ),
            Violation::OffLatticeRelease { offset_ps } => write!(
                f,
                "off-lattice release: release time is {offset_ps} ps away from the round-trip lattice"
            ),
            Violation::EdgeSlowerThanWindow { edge_ps, window_ps } => write!(
                f,
                "edge slower than window: edge {edge_ps} ps >= gate window {window_ps} ps"
            ),
            Violation::PeriodMismatch { program_ps, source_ps } => write!(
                f,
                "period mismatch: program repeats every {program_ps} ps, source every {source_ps} ps"
            ),
            Violation::ExceedsCapacity { hold, max } => write!(
                f,
                "hold of {hold} round trips exceeds the buffer capacity of {max}"
            ),
        }
    }
}

/// Validation outcome; an empty report means the program is runnable.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a program against the timing rules that make it runnable:
/// gate window inside one round trip, no collision with the next pulse,
/// release on the round-trip lattice, edges faster than the window, and
/// period agreement with the source.
pub fn validate_program(
    program: &ControlProgram,
    src: &SourceModel,
    buf: &BufferModel,
) -> ValidationReport {
    let mut v = Vec::new();
    let s = &program.schedule;

    if s.gate_window_ps >= s.round_trip_time_ps {
        v.push(Violation::WindowExceedsRoundTrip {
            window_ps: s.gate_window_ps,
            round_trip_ps: s.round_trip_time_ps,
        });
    }

    let hold_span = s.release_time_ps - s.capture_time_ps;
    if hold_span + s.gate_window_ps >= s.repetition_period_ps {
        v.push(Violation::GateCollision {
            span_ps: hold_span + s.gate_window_ps,
            period_ps: s.repetition_period_ps,
        });
    }

    let lattice = hold_span / s.round_trip_time_ps;
    let offset = (lattice - lattice.round()).abs() * s.round_trip_time_ps;
    if offset > 1e-6 {
        v.push(Violation::OffLatticeRelease { offset_ps: offset });
    }

    if program.edge_time_ps > 0.0 && program.edge_time_ps >= s.gate_window_ps {
        v.push(Violation::EdgeSlowerThanWindow {
            edge_ps: program.edge_time_ps,
            window_ps: s.gate_window_ps,
        });
    }

    if (s.repetition_period_ps - src.repetition_period_ps).abs() > 1e-9 {
        v.push(Violation::PeriodMismatch {
            program_ps: s.repetition_period_ps,
            source_ps: src.repetition_period_ps,
        });
    }

    if s.hold_round_trips > buf.max_round_trips {
        v.push(Violation::ExceedsCapacity {
            hold: s.hold_round_trips,
            max: buf.max_round_trips,
        });
    }

    ValidationReport { violations: v }
}

/// JSON document form of a program: the five timing/electrical scalars,
/// plus an optional explicit release time for off-lattice experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramDoc {
    pub capture_time_ps: f64,
    pub hold_round_trips: u32,
    pub gate_window_ps: f64,
    pub edge_time_ps: f64,
    pub f3db_ghz: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub release_time_ps: Option<f64>,
}

impl ProgramDoc {
    pub fn from_program(p: &ControlProgram) -> Self {
        let derived =
            p.schedule.capture_time_ps + p.schedule.hold_round_trips as f64 * p.schedule.round_trip_time_ps;
        let release = if (p.schedule.release_time_ps - derived).abs() > 1e-9 {
            Some(p.schedule.release_time_ps)
        } else {
            None
        };
        Self {
            capture_time_ps: p.schedule.capture_time_ps,
            hold_round_trips: p.schedule.hold_round_trips,
            gate_window_ps: p.schedule.gate_window_ps,
            edge_time_ps: p.edge_time_ps,
            f3db_ghz: p.f3db_ghz,
            release_time_ps: release,
        }
    }

    /// Compiles the document against a buffer and source (which supply the
    /// round-trip time, period, and Vpi).
    pub fn compile(
        &self,
        buf: &BufferModel,
        src: &SourceModel,
        sample_step_ps: f64,
    ) -> Result<ControlProgram, ControlError> {
        let mut schedule = GateSchedule {
            capture_time_ps: self.capture_time_ps,
            hold_round_trips: self.hold_round_trips,
            gate_window_ps: self.gate_window_ps,
            repetition_period_ps: src.repetition_period_ps,
            round_trip_time_ps: buf.round_trip_time_ps,
            release_time_ps: self.capture_time_ps
                + self.hold_round_trips as f64 * buf.round_trip_time_ps,
        };
        if let Some(r) = self.release_time_ps {
            schedule = schedule.with_release_time(r);
        }
        ControlProgram::compile(schedule, buf, self.edge_time_ps, self.f3db_ghz, sample_step_ps)
    }
}
