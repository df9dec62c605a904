//! Transient simulation of the series-nanowire readout circuit.
//!
//! Each of the N wires is a kinetic inductance `L_k` in series with a
//! switchable hotspot resistance, and every wire is shunted by an integrated
//! resistor `R_p`. The N blocks are chained, biased by an ideal current
//! source `I_b`, and the chain is in parallel with the load `R_L`:
//!
//! ```text
//!   I_out = R_p (N I_b - sum_i I_w_i) / (R_L + N R_p)        (node relation)
//!   V_i   = (I_b - I_out - I_w_i) R_p                         (block voltage)
//!   L_k dI_w_i/dt = V_i - I_w_i R_hs_i(t)                     (wire dynamics)
//! ```
//!
//! The hotspot is a two-state phenomenological model: after a switch event
//! the wire carries `R_hs` for a fixed `t_hs`, then returns to the
//! superconducting state. Since the load coupling is linear in the state,
//! `I_out` is eliminated algebraically before each Runge-Kutta stage and
//! the system integrates as an explicit piecewise-linear ODE; steps that
//! straddle a hotspot on/off boundary are subdivided at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters of a single nanowire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireParams {
    /// Kinetic inductance per wire, henries.
    pub kinetic_inductance: f64,
    /// Critical current, amperes.
    pub critical_current: f64,
    /// Resistance while the hotspot is open, ohms.
    pub hotspot_resistance: f64,
    /// Lifetime of the hotspot, seconds.
    pub hotspot_duration: f64,
    /// Fraction of `I_c` the current must recover above before the wire may
    /// re-fire. Kept for completeness; the re-fire path is not enabled and
    /// events on a hot wire are rejected instead.
    pub retrap_fraction: f64,
}

impl WireParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kinetic_inductance > 0.0) {
            return Err(Error::invalid("kinetic inductance must be > 0"));
        }
        if !(self.critical_current > 0.0) {
            return Err(Error::invalid("critical current must be > 0"));
        }
        if !(self.hotspot_resistance > 0.0) {
            return Err(Error::invalid("hotspot resistance must be > 0"));
        }
        if !(self.hotspot_duration > 0.0) {
            return Err(Error::invalid("hotspot duration must be > 0"));
        }
        if !(self.retrap_fraction > 0.0 && self.retrap_fraction <= 1.0) {
            return Err(Error::invalid("retrap fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for WireParams {
    /// Calibrated reference wire. `L_k` is fixed by requiring the band-passed
    /// four-photon pulse to decay with tau_1e = 5.6 ns (see the calibration
    /// test fixture); the hotspot pair is sized so a switched wire recovers
    /// to 90% bias within 20 ns.
    fn default() -> Self {
        Self {
            kinetic_inductance: 270.8e-9,
            critical_current: 10e-6,
            hotspot_resistance: 500.0,
            hotspot_duration: 250e-12,
            retrap_fraction: 0.5,
        }
    }
}

/// The full readout circuit: N identical wire blocks, shunts, bias and load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorCircuit {
    pub n_wires: usize,
    pub wire: WireParams,
    /// Shunt resistor integrated in parallel with each wire, ohms.
    pub shunt_resistance: f64,
    /// Readout load in parallel with the chain, ohms.
    pub load_resistance: f64,
    /// Bias current from the ideal source, amperes.
    pub bias_current: f64,
}

impl Default for DetectorCircuit {
    /// Reference four-wire device: `R_p` = 38 ohm, 50 ohm load,
    /// `I_b` = 8.8 uA against `I_c` = 10 uA (the 2.1 K operating point).
    fn default() -> Self {
        Self {
            n_wires: 4,
            wire: WireParams::default(),
            shunt_resistance: 38.0,
            load_resistance: 50.0,
            bias_current: 8.8e-6,
        }
    }
}

impl DetectorCircuit {
    pub fn validate(&self) -> Result<()> {
        self.wire.validate()?;
        if self.n_wires == 0 {
            return Err(Error::invalid("circuit needs at least one wire"));
        }
        if !(self.shunt_resistance > 0.0) {
            return Err(Error::invalid("shunt resistance must be > 0"));
        }
        if !(self.load_resistance > 0.0) {
            return Err(Error::invalid("load resistance must be > 0"));
        }
        if !(self.bias_current > 0.0 && self.bias_current < self.wire.critical_current) {
            return Err(Error::invalid(format!(
                "bias current must satisfy 0 < I_b < I_c (got I_b={}, I_c={})",
                self.bias_current, self.wire.critical_current
            )));
        }
        Ok(())
    }

    /// Largest integration step the solver accepts:
    /// `min(t_hs, L_k / (R_hs + R_p)) / 10`.
    pub fn max_stable_dt(&self) -> f64 {
        let tau_hot =
            self.wire.kinetic_inductance / (self.wire.hotspot_resistance + self.shunt_resistance);
        self.wire.hotspot_duration.min(tau_hot) / 10.0
    }

    fn node_output_current(&self, wire_currents: &[f64]) -> f64 {
        let sum: f64 = wire_currents.iter().sum();
        self.shunt_resistance * (self.n_wires as f64 * self.bias_current - sum)
            / (self.load_resistance + self.n_wires as f64 * self.shunt_resistance)
    }
}

/// A wire switching at a point in time (a detected photon, or a dark count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// Event time, seconds.
    pub time: f64,
    /// 0-based wire index.
    pub wire_index: usize,
}

impl SwitchEvent {
    pub fn new(time: f64, wire_index: usize) -> Self {
        Self { time, wire_index }
    }
}

/// Uniformly sampled output-voltage trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrace {
    dt: f64,
    samples: Vec<f64>,
    annotations: Vec<String>,
}

impl PulseTrace {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("trace dt must be > 0"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trace contains non-finite samples"));
        }
        Ok(Self { dt, samples, annotations: Vec::new() })
    }

    pub fn with_annotation(mut self, note: impl Into<String>) -> Self {
        self.annotations.push(note.into());
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 * self.dt
    }

    /// Index and value of the global maximum.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.samples
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub(crate) fn map_samples(&self, f: impl FnMut(&f64) -> f64) -> Self {
        Self {
            dt: self.dt,
            samples: self.samples.iter().map(f).collect(),
            annotations: self.annotations.clone(),
        }
    }

    pub(crate) fn replace_samples(&self, samples: Vec<f64>) -> Self {
        Self { dt: self.dt, samples, annotations: self.annotations.clone() }
    }
}

/// Transient result with the internal state kept alongside the output trace.
#[derive(Debug, Clone)]
pub struct TransientRecord {
    pub trace: PulseTrace,
    /// `wire_currents[i]` samples wire i at the same instants as the trace.
    pub wire_currents: Vec<Vec<f64>>,
    /// Current through the load at the same instants.
    pub output_current: Vec<f64>,
}

/// Integrates the readout circuit over `duration` and samples `V_out` every
/// `dt`. Events must be sorted by time; a wire must have cooled down before
/// it may be switched again.
pub fn simulate_transient(
    circuit: &DetectorCircuit,
    events: &[SwitchEvent],
    duration: f64,
    dt: f64,
) -> Result<PulseTrace> {
    simulate_transient_detailed(circuit, events, duration, dt).map(|r| r.trace)
}

/// Like [`simulate_transient`] but also records wire and load currents.
pub fn simulate_transient_detailed(
    circuit: &DetectorCircuit,
    events: &[SwitchEvent],
    duration: f64,
    dt: f64,
) -> Result<TransientRecord> {
    circuit.validate()?;
    if !(duration > 0.0 && dt > 0.0) {
        return Err(Error::invalid("duration and dt must be > 0"));
    }
    let max_dt = circuit.max_stable_dt();
    if dt > max_dt {
        return Err(Error::StepTooCoarse {
            dt,
            max_dt,
            reason: "dt must resolve min(t_hs, L_k/(R_hs+R_p))/10".into(),
        });
    }
    validate_events(circuit, events)?;

    let n = circuit.n_wires;
    let t_hs = circuit.wire.hotspot_duration;
    // Hotspot windows [start, start + t_hs) per event, plus the step-split
    // boundaries they induce.
    let mut boundaries: Vec<f64> = Vec::with_capacity(events.len() * 2);
    for e in events {
        boundaries.push(e.time);
        boundaries.push(e.time + t_hs);
    }
    boundaries.sort_by(f64::total_cmp);

    let n_steps = (duration / dt).round() as usize;
    let mut state: Vec<f64> = vec![circuit.bias_current; n];
    let mut wire_currents: Vec<Vec<f64>> = vec![Vec::with_capacity(n_steps + 1); n];
    let mut output_current: Vec<f64> = Vec::with_capacity(n_steps + 1);
    let mut samples: Vec<f64> = Vec::with_capacity(n_steps + 1);

    let mut resistance = vec![0.0; n];
    let active_resistance = |t: f64, resistance: &mut [f64]| {
        resistance.fill(0.0);
        for e in events {
            if e.time <= t && t < e.time + t_hs {
                resistance[e.wire_index] = circuit.wire.hotspot_resistance;
            }
        }
    };

    let record = |state: &[f64],
                      wire_currents: &mut Vec<Vec<f64>>,
                      output_current: &mut Vec<f64>,
                      samples: &mut Vec<f64>| {
        let i_out = circuit.node_output_current(state);
        for (i, w) in wire_currents.iter_mut().enumerate() {
            w.push(state[i]);
        }
        output_current.push(i_out);
        samples.push(i_out * circuit.load_resistance);
    };

    record(&state, &mut wire_currents, &mut output_current, &mut samples);

    let mut scratch = Rk4Scratch::new(n);
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = (step + 1) as f64 * dt;
        // Sub-split the step at hotspot boundaries so every RK4 stage sees a
        // constant resistance matrix.
        let mut a = t0;
        loop {
            let next_boundary = boundaries
                .iter()
                .copied()
                .find(|&b| b > a + 1e-30 && b < t1 - 1e-30);
            let b = next_boundary.unwrap_or(t1).min(t1);
            active_resistance(a, &mut resistance);
            rk4_step(circuit, &mut state, &resistance, b - a, &mut scratch);
            if b >= t1 {
                break;
            }
            a = b;
        }
        record(&state, &mut wire_currents, &mut output_current, &mut samples);
    }

    let mut trace = PulseTrace::new(dt, samples)?;
    for e in events {
        trace = trace.with_annotation(format!("event t={:.6e}s wire={}", e.time, e.wire_index));
    }
    Ok(TransientRecord { trace, wire_currents, output_current })
}

fn validate_events(circuit: &DetectorCircuit, events: &[SwitchEvent]) -> Result<()> {
    let t_hs = circuit.wire.hotspot_duration;
    let mut last_fire: Vec<Option<f64>> = vec![None; circuit.n_wires];
    let mut prev_time = f64::NEG_INFINITY;
    for e in events {
        if !(e.time >= 0.0) {
            return Err(Error::invalid(format!("event time {} must be >= 0", e.time)));
        }
        if e.time < prev_time {
            return Err(Error::invalid("events must be sorted by time"));
        }
        prev_time = e.time;
        if e.wire_index >= circuit.n_wires {
            return Err(Error::invalid(format!(
                "event wire index {} out of range (n_wires = {})",
                e.wire_index, circuit.n_wires
            )));
        }
        if let Some(t_prev) = last_fire[e.wire_index] {
            if e.time < t_prev + t_hs {
                return Err(Error::WireStillHot { time: e.time, wire: e.wire_index });
            }
        }
        last_fire[e.wire_index] = Some(e.time);
    }
    Ok(())
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// dI_w_i/dt with the node relation substituted in.
fn derivative(circuit: &DetectorCircuit, state: &[f64], resistance: &[f64], out: &mut [f64]) {
    let i_out = circuit.node_output_current(state);
    let i_chain = circuit.bias_current - i_out;
    for i in 0..state.len() {
        let v_block = (i_chain - state[i]) * circuit.shunt_resistance;
        out[i] = (v_block - state[i] * resistance[i]) / circuit.wire.kinetic_inductance;
    }
}

fn rk4_step(
    circuit: &DetectorCircuit,
    state: &mut [f64],
    resistance: &[f64],
    h: f64,
    s: &mut Rk4Scratch,
) {
    if h <= 0.0 {
        return;
    }
    let n = state.len();
    derivative(circuit, state, resistance, &mut s.k1);
    for i in 0..n {
        s.tmp[i] = state[i] + 0.5 * h * s.k1[i];
    }
    derivative(circuit, &s.tmp, resistance, &mut s.k2);
    for i in 0..n {
        s.tmp[i] = state[i] + 0.5 * h * s.k2[i];
    }
    derivative(circuit, &s.tmp, resistance, &mut s.k3);
    for i in 0..n {
        s.tmp[i] = state[i] + h * s.k3[i];
    }
    derivative(circuit, &s.tmp, resistance, &mut s.k4);
    for i in 0..n {
        state[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

/// Time from the trace peak to the first crossing of `peak / e`, with linear
/// interpolation between samples. The trace must contain a single pulse.
pub fn pulse_decay_time(trace: &PulseTrace) -> Result<f64> {
    let (peak_idx, peak) = trace
        .peak()
        .ok_or_else(|| Error::TraceAnalysis("empty trace".into()))?;
    if !(peak > 0.0) {
        return Err(Error::TraceAnalysis("no positive pulse in trace".into()));
    }
    let threshold = peak / std::f64::consts::E;
    let samples = trace.samples();
    for i in (peak_idx + 1)..samples.len() {
        if samples[i] <= threshold {
            let frac = (samples[i - 1] - threshold) / (samples[i - 1] - samples[i]);
            let t_cross = trace.time_at(i - 1) + frac * trace.dt();
            return Ok(t_cross - trace.time_at(peak_idx));
        }
    }
    Err(Error::TraceAnalysis(
        "trace ends before the pulse decays to peak/e".into(),
    ))
}

/// Static IV characteristic: superconducting below `I_c`, and all wires
/// latched onto their shunts above it, so the branch slope is `N * R_p`.
pub fn simulate_iv_curve(
    circuit: &DetectorCircuit,
    i_max: f64,
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    circuit.validate()?;
    if !(i_max > 0.0) {
        return Err(Error::invalid("i_max must be > 0"));
    }
    if n_points < 2 {
        return Err(Error::invalid("need at least two IV points"));
    }
    let i_c = circuit.wire.critical_current;
    let slope = circuit.n_wires as f64 * circuit.shunt_resistance;
    Ok((0..n_points)
        .map(|k| {
            let i = i_max * k as f64 / (n_points - 1) as f64;
            let v = if i <= i_c { 0.0 } else { (i - i_c) * slope };
            (i, v)
        })
        .collect())
}

/// Simulates one single-wire event and returns how long after the hotspot
/// clears the wire current takes to climb back to 90% of the bias current.
///
/// Streams the integration in two phases (hot, then recovering) with a step
/// matched to each phase's fastest time constant, so degenerate hotspot
/// parameters stay cheap.
pub fn recovery_time(circuit: &DetectorCircuit) -> Result<f64> {
    circuit.validate()?;
    let target = 0.9 * circuit.bias_current;
    let t_hs = circuit.wire.hotspot_duration;
    let n = circuit.n_wires;
    let mut state = vec![circuit.bias_current; n];
    let mut scratch = Rk4Scratch::new(n);

    // hot phase: wire 0 resistive over [0, t_hs)
    let mut resistance = vec![0.0; n];
    resistance[0] = circuit.wire.hotspot_resistance;
    let dt_hot = circuit.max_stable_dt() / 2.0;
    let hot_steps = (t_hs / dt_hot).ceil() as usize;
    let h = t_hs / hot_steps as f64;
    for _ in 0..hot_steps {
        rk4_step(circuit, &mut state, &resistance, h, &mut scratch);
    }

    if state[0] >= target {
        return Ok(0.0);
    }

    // recovery phase: superconducting everywhere; fastest mode is ~R_p/L_k
    resistance[0] = 0.0;
    let dt = circuit.wire.kinetic_inductance / circuit.shunt_resistance / 20.0;
    let r_slow = circuit.shunt_resistance * circuit.load_resistance
        / (circuit.load_resistance + n as f64 * circuit.shunt_resistance);
    let horizon = 40.0 * circuit.wire.kinetic_inductance / r_slow;
    let max_steps = (horizon / dt).ceil() as usize;
    let mut t = 0.0;
    let mut previous = state[0];
    for _ in 0..max_steps {
        rk4_step(circuit, &mut state, &resistance, dt, &mut scratch);
        t += dt;
        if state[0] >= target {
            let frac = (target - previous) / (state[0] - previous);
            return Ok(t - dt + frac * dt);
        }
        previous = state[0];
    }
    Err(Error::TraceAnalysis(
        "wire current did not recover within the simulated horizon".into(),
    ))
}
