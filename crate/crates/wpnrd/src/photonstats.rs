//! Photon sources, the efficiency chain, and click statistics.
//!
//! A photon in the waveguide registers on wire `i` with probability
//! `q_i = p_i * eta_int` and is otherwise lost (transmitted past the wires or
//! absorbed without a detection). The observable is the number of *distinct*
//! switched wires, so two photons landing on the same wire count once; this
//! same-wire pile-up is what limits P(n|n) on a finite wire array.
//!
//! [`detection_distribution`] evaluates the distribution exactly for a fixed
//! photon number by enumerating photon-to-wire assignments grouped
//! multinomially. [`poisson_mixture`] weights those columns with a Poisson
//! source. [`monte_carlo_run`] samples full shots instead; its random stream
//! is derived per shot from `(seed, shot_index)`, so results are bit-identical
//! however the shots are partitioned across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::absorption::WireProbabilityVector;
use crate::circuit::{DetectorCircuit, SwitchEvent};
use crate::error::{Error, Result};

/// Largest photon number the exact enumeration accepts.
pub const ENUMERATION_BOUND: usize = 12;

/// Where the quoted photon number is referenced: photons per pulse already in
/// the waveguide, or at the fiber input (coupling applies first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePlane {
    Waveguide,
    Fiber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Pulsed,
    Cw,
}

/// Photon source description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Mean photons per pulse (pulsed mode).
    pub mean_photons_per_pulse: f64,
    /// Pulse repetition rate, Hz (pulsed mode).
    pub repetition_rate: f64,
    /// Photon flux, photons/s (CW mode).
    pub photon_flux: f64,
    /// Counting gate that maps a CW flux to an effective per-shot mean,
    /// seconds (CW mode).
    pub counting_gate: f64,
    pub reference_plane: ReferencePlane,
}

impl SourceConfig {
    /// Pulsed source quoting photons per pulse in the waveguide.
    pub fn pulsed(mean_photons_per_pulse: f64, repetition_rate: f64) -> Self {
        Self {
            kind: SourceKind::Pulsed,
            mean_photons_per_pulse,
            repetition_rate,
            photon_flux: 0.0,
            counting_gate: 0.0,
            reference_plane: ReferencePlane::Waveguide,
        }
    }

    /// CW source with a counting gate.
    pub fn cw(photon_flux: f64, counting_gate: f64) -> Self {
        Self {
            kind: SourceKind::Cw,
            mean_photons_per_pulse: 0.0,
            repetition_rate: 0.0,
            photon_flux,
            counting_gate,
            reference_plane: ReferencePlane::Waveguide,
        }
    }

    pub fn at_fiber(mut self) -> Self {
        self.reference_plane = ReferencePlane::Fiber;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SourceKind::Pulsed => {
                if !(self.mean_photons_per_pulse >= 0.0) {
                    return Err(Error::invalid("mean photons per pulse must be >= 0"));
                }
                if !(self.repetition_rate > 0.0) {
                    return Err(Error::invalid("repetition rate must be > 0"));
                }
            }
            SourceKind::Cw => {
                if !(self.photon_flux >= 0.0) {
                    return Err(Error::invalid("photon flux must be >= 0"));
                }
                if !(self.counting_gate > 0.0) {
                    return Err(Error::invalid("counting gate must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// Mean photons per shot in the waveguide, after coupling when the
    /// source is quoted at the fiber.
    pub fn mean_photons_in_waveguide(&self, coupling: f64) -> f64 {
        let mu = match self.kind {
            SourceKind::Pulsed => self.mean_photons_per_pulse,
            SourceKind::Cw => self.photon_flux * self.counting_gate,
        };
        match self.reference_plane {
            ReferencePlane::Waveguide => mu,
            ReferencePlane::Fiber => mu * coupling,
        }
    }

    /// Duration of one counting window (the dark-count exposure per shot).
    pub fn shot_window(&self) -> f64 {
        match self.kind {
            SourceKind::Pulsed => 1.0 / self.repetition_rate,
            SourceKind::Cw => self.counting_gate,
        }
    }
}

impl Default for SourceConfig {
    /// Reference pulsed diode: 12 photons/pulse in the waveguide at 2 MHz.
    fn default() -> Self {
        Self::pulsed(12.0, 2e6)
    }
}

/// Fiber coupling, internal registration efficiency and dark counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyChain {
    /// Fiber-to-waveguide coupling probability.
    pub coupling: f64,
    /// Probability that an absorbed photon actually switches the wire.
    pub internal_efficiency: f64,
    /// Dark counts per second for the whole detector.
    pub dark_count_rate: f64,
}

impl EfficiencyChain {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::invalid("coupling must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.internal_efficiency) {
            return Err(Error::invalid("internal efficiency must lie in [0, 1]"));
        }
        if !(self.dark_count_rate >= 0.0) {
            return Err(Error::invalid("dark count rate must be >= 0"));
        }
        Ok(())
    }
}

impl Default for EfficiencyChain {
    /// TE reference chain: 17% coupling and the internal efficiency backed
    /// out of DQE = absorptance * eta_int = 0.24 at the 76% absorptance.
    fn default() -> Self {
        Self {
            coupling: 0.17,
            internal_efficiency: 0.316,
            dark_count_rate: 0.0,
        }
    }
}

/// Probability vector over the number of switched wires m = 0..=N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDistribution {
    probs: Vec<f64>,
}

impl DetectionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution must be non-empty"));
        }
        if probs.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::invalid("probabilities outside [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// P(m) for m = 0..=N.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_wires(&self) -> usize {
        self.probs.len() - 1
    }

    /// P(at least k wires switched).
    pub fn p_at_least(&self, k: usize) -> f64 {
        self.probs.iter().skip(k).sum()
    }

    /// Mean number of switched wires.
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }
}

/// Exact distribution of the number of distinct switched wires for a fixed
/// number of incident photons, by multinomially grouped enumeration of the
/// photon-to-wire assignments.
pub fn detection_distribution(
    n_incident: usize,
    wires: &WireProbabilityVector,
    internal_efficiency: f64,
) -> Result<DetectionDistribution> {
    if n_incident > ENUMERATION_BOUND {
        return Err(Error::EnumerationBound { n: n_incident, bound: ENUMERATION_BOUND });
    }
    if !(0.0..=1.0).contains(&internal_efficiency) {
        return Err(Error::invalid("internal efficiency must lie in [0, 1]"));
    }
    Ok(DetectionDistribution {
        probs: exact_level_probs(n_incident, &wires.registration_probs(internal_efficiency)),
    })
}

/// Core enumeration without the API photon-number bound (the Poisson mixture
/// needs columns beyond it; cost grows only polynomially with n).
fn exact_level_probs(n: usize, registration: &[f64]) -> Vec<f64> {
    let n_wires = registration.len();
    let p_loss: f64 = (1.0 - registration.iter().sum::<f64>()).max(0.0);
    let mut probs = vec![0.0; n_wires + 1];
    // walk wire by wire, assigning k of the remaining photons to each wire
    fn recurse(
        registration: &[f64],
        p_loss: f64,
        wire: usize,
        remaining: usize,
        partial: f64,
        distinct: usize,
        probs: &mut [f64],
    ) {
        if wire == registration.len() {
            probs[distinct] += partial * p_loss.powi(remaining as i32);
            return;
        }
        let q = registration[wire];
        // running binomial coefficient C(remaining, k)
        let mut binom = 1.0;
        let mut q_pow = 1.0;
        for k in 0..=remaining {
            if k > 0 {
                binom *= (remaining - k + 1) as f64 / k as f64;
                q_pow *= q;
            }
            let contribution = partial * binom * q_pow;
            if contribution > 0.0 || k == 0 {
                recurse(
                    registration,
                    p_loss,
                    wire + 1,
                    remaining - k,
                    contribution,
                    distinct + usize::from(k > 0),
                    probs,
                );
            }
        }
    }
    recurse(registration, p_loss, 0, n, 1.0, 0, &mut probs);
    probs
}

/// Smallest truncation `n_max` whose Poisson tail is below `tail` for the
/// given mean.
pub fn poisson_truncation(mu: f64, tail: f64) -> usize {
    if mu <= 0.0 {
        return 0;
    }
    let mut pmf = (-mu).exp();
    let mut cdf = pmf;
    let mut n = 0usize;
    while 1.0 - cdf > tail && n < 2000 {
        n += 1;
        pmf *= mu / n as f64;
        cdf += pmf;
    }
    n
}

/// Poisson-weighted mixture of [`detection_distribution`] over the incident
/// photon number, truncated at `n_max` (choose it with
/// [`poisson_truncation`] so the discarded tail is below 1e-9).
pub fn poisson_mixture(
    mu: f64,
    wires: &WireProbabilityVector,
    internal_efficiency: f64,
    n_max: usize,
) -> Result<DetectionDistribution> {
    if !(mu >= 0.0) {
        return Err(Error::invalid("mean photon number must be >= 0"));
    }
    if !(0.0..=1.0).contains(&internal_efficiency) {
        return Err(Error::invalid("internal efficiency must lie in [0, 1]"));
    }
    let registration = wires.registration_probs(internal_efficiency);
    let mut probs = vec![0.0; wires.n_wires() + 1];
    let mut pmf = (-mu).exp();
    for n in 0..=n_max {
        if n > 0 {
            pmf *= mu / n as f64;
        }
        if pmf > 0.0 {
            for (m, p) in exact_level_probs(n, &registration).iter().enumerate() {
                probs[m] += pmf * p;
            }
        }
    }
    // the discarded tail (below the caller's truncation tolerance) is left
    // out rather than folded back in: redistributing it would inject rounding
    // noise far larger than the deep-threshold rates this feeds
    Ok(DetectionDistribution { probs })
}

/// System quantum efficiency from the device efficiency and the coupling:
/// SQE = DQE * eta.
pub fn sqe_from_dqe(dqe: f64, coupling: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&dqe) && (0.0..=1.0).contains(&coupling));
    dqe * coupling
}

/// Device quantum efficiency of the model: the probability that a photon in
/// the waveguide registers on some wire, `(1 - p_transmit) * eta_int`.
pub fn dqe_from_model(wires: &WireProbabilityVector, internal_efficiency: f64) -> f64 {
    wires.absorption_total() * internal_efficiency
}

/// Monte Carlo tallies for one contiguous range of shots.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotTally {
    pub shots: u64,
    pub level_counts: Vec<u64>,
    /// Total photons that registered on some wire (before same-wire pile-up).
    pub registered_photons: u64,
    /// Per-shot switch events, kept only when trace synthesis is requested.
    pub shot_events: Option<Vec<Vec<SwitchEvent>>>,
}

impl ShotTally {
    fn empty(n_wires: usize, keep_events: bool) -> Self {
        Self {
            shots: 0,
            level_counts: vec![0; n_wires + 1],
            registered_photons: 0,
            shot_events: keep_events.then(Vec::new),
        }
    }

    /// Merges tallies of adjacent shot ranges; integer accumulators make the
    /// result independent of how shots were partitioned.
    pub fn merge(mut self, other: ShotTally) -> ShotTally {
        self.shots += other.shots;
        for (a, b) in self.level_counts.iter_mut().zip(&other.level_counts) {
            *a += b;
        }
        self.registered_photons += other.registered_photons;
        if let (Some(mine), Some(theirs)) = (self.shot_events.as_mut(), other.shot_events) {
            mine.extend(theirs);
        }
        self
    }
}

/// Aggregated Monte Carlo counting results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStatistics {
    pub shots: u64,
    /// Shots per number of switched wires, m = 0..=N.
    pub level_counts: Vec<u64>,
    /// Fraction of shots with at least k switched wires, k = 1..=N.
    pub threshold_rates: Vec<f64>,
    pub rng_seed: u64,
    /// Mean photons registered per shot (the mu_av observable).
    pub mean_detected_photons: f64,
    /// Mean number of switched wires per shot.
    pub mean_level: f64,
}

/// Monte Carlo result; `shot_events` is populated when trace synthesis was
/// requested.
#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub stats: CountStatistics,
    pub shot_events: Option<Vec<Vec<SwitchEvent>>>,
}

struct ShotSampler<'a> {
    cumulative_q: Vec<f64>,
    n_wires: usize,
    mu: f64,
    dark_mean: f64,
    seed: u64,
    _wires: &'a WireProbabilityVector,
}

impl<'a> ShotSampler<'a> {
    fn rng_for_shot(&self, index: u64) -> ChaCha8Rng {
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(&index.to_le_bytes());
        seed_bytes[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
        ChaCha8Rng::from_seed(seed_bytes)
    }

    fn sample_shot(&self, index: u64) -> (usize, u32, u64) {
        let mut rng = self.rng_for_shot(index);
        let mut mask: u32 = 0;
        let mut registered: u64 = 0;
        if self.mu > 0.0 {
            let n = Poisson::new(self.mu).expect("positive mean").sample(&mut rng) as u64;
            for _ in 0..n {
                let u: f64 = rng.gen();
                if let Some(w) = self.cumulative_q.iter().position(|&c| u < c) {
                    mask |= 1 << w;
                    registered += 1;
                }
            }
        }
        if self.dark_mean > 0.0 {
            let darks =
                Poisson::new(self.dark_mean).expect("positive mean").sample(&mut rng) as u64;
            for _ in 0..darks {
                let w = rng.gen_range(0..self.n_wires);
                mask |= 1 << w;
            }
        }
        (mask.count_ones() as usize, mask, registered)
    }
}

/// Deterministic kernel: tallies the half-open shot range
/// `[range.start, range.end)`. Merging tallies of any partition of
/// `0..shots` reproduces [`monte_carlo_run`] bit for bit.
pub fn tally_shots(
    range: std::ops::Range<u64>,
    source: &SourceConfig,
    wires: &WireProbabilityVector,
    chain: &EfficiencyChain,
    seed: u64,
    keep_events: bool,
) -> ShotTally {
    let sampler = make_sampler(source, wires, chain, seed);
    let mut tally = ShotTally::empty(sampler.n_wires, keep_events);
    for index in range {
        let (level, mask, registered) = sampler.sample_shot(index);
        tally.shots += 1;
        tally.level_counts[level] += 1;
        tally.registered_photons += registered;
        if let Some(events) = tally.shot_events.as_mut() {
            events.push(
                (0..sampler.n_wires)
                    .filter(|w| mask & (1 << w) != 0)
                    .map(|w| SwitchEvent::new(0.0, w))
                    .collect(),
            );
        }
    }
    tally
}

fn make_sampler<'a>(
    source: &SourceConfig,
    wires: &'a WireProbabilityVector,
    chain: &EfficiencyChain,
    seed: u64,
) -> ShotSampler<'a> {
    let q = wires.registration_probs(chain.internal_efficiency);
    let mut cumulative_q = Vec::with_capacity(q.len());
    let mut acc = 0.0;
    for qi in &q {
        acc += qi;
        cumulative_q.push(acc);
    }
    ShotSampler {
        cumulative_q,
        n_wires: wires.n_wires(),
        mu: source.mean_photons_in_waveguide(chain.coupling),
        dark_mean: chain.dark_count_rate * source.shot_window(),
        seed,
        _wires: wires,
    }
}

/// Samples `shots` source pulses through the efficiency chain and counts
/// switched wires. Shots are distributed over worker threads; the per-shot
/// random streams make the outcome independent of the partitioning.
pub fn monte_carlo_run(
    source: &SourceConfig,
    wires: &WireProbabilityVector,
    chain: &EfficiencyChain,
    circuit: &DetectorCircuit,
    shots: u64,
    seed: u64,
    synthesize_traces: bool,
) -> Result<MonteCarloRun> {
    source.validate()?;
    chain.validate()?;
    circuit.validate()?;
    if shots == 0 {
        return Err(Error::invalid("need at least one shot"));
    }
    if wires.n_wires() != circuit.n_wires {
        return Err(Error::invalid(format!(
            "absorption model has {} wires but the circuit has {}",
            wires.n_wires(),
            circuit.n_wires
        )));
    }
    if wires.n_wires() > 32 {
        return Err(Error::invalid("at most 32 wires supported"));
    }

    let chunk = 8192u64;
    let ranges: Vec<std::ops::Range<u64>> = (0..shots.div_ceil(chunk))
        .map(|c| (c * chunk)..((c + 1) * chunk).min(shots))
        .collect();
    // tally chunks in parallel, then merge in shot order so event lists and
    // counts come out identical to a sequential pass
    let mut partials: Vec<(u64, ShotTally)> = ranges
        .into_par_iter()
        .map(|r| (r.start, tally_shots(r, source, wires, chain, seed, synthesize_traces)))
        .collect();
    partials.sort_by_key(|(start, _)| *start);
    let tally = partials
        .into_iter()
        .map(|(_, t)| t)
        .fold(ShotTally::empty(wires.n_wires(), synthesize_traces), ShotTally::merge);
    let ShotTally { level_counts, registered_photons, shot_events, .. } = tally;

    let n = wires.n_wires();
    let threshold_rates: Vec<f64> = (1..=n)
        .map(|k| level_counts.iter().skip(k).sum::<u64>() as f64 / shots as f64)
        .collect();
    let mean_level = level_counts
        .iter()
        .enumerate()
        .map(|(m, &c)| m as f64 * c as f64)
        .sum::<f64>()
        / shots as f64;
    Ok(MonteCarloRun {
        stats: CountStatistics {
            shots,
            level_counts,
            threshold_rates,
            rng_seed: seed,
            mean_detected_photons: registered_photons as f64 / shots as f64,
            mean_level,
        },
        shot_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absorption::AbsorptionModel;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn paper_wires() -> WireProbabilityVector {
        AbsorptionModel::te_default().per_wire_probabilities().unwrap()
    }

    /// Independent oracle: inclusion-exclusion over wire subsets,
    /// P(hit set subset of S) = (q_S + q_loss)^n.
    fn inclusion_exclusion(n: usize, q: &[f64]) -> Vec<f64> {
        let nw = q.len();
        let loss = 1.0 - q.iter().sum::<f64>();
        let mut probs = vec![0.0; nw + 1];
        for s_mask in 0u32..(1 << nw) {
            let m = s_mask.count_ones() as usize;
            // sum over subsets T of S
            let mut t_mask = s_mask;
            loop {
                let q_t: f64 = (0..nw).filter(|i| t_mask & (1 << i) != 0).map(|i| q[i]).sum();
                let sign = if (m - t_mask.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
                probs[m] += sign * (q_t + loss).powi(n as i32);
                if t_mask == 0 {
                    break;
                }
                t_mask = (t_mask - 1) & s_mask;
            }
        }
        probs
    }

    #[test]
    fn zero_photons_give_level_zero() {
        let d = detection_distribution(0, &paper_wires(), 0.316).unwrap();
        assert_eq!(d.probs()[0], 1.0);
        assert!(close(d.probs().iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn two_photons_on_equal_wires_pile_up_a_quarter_of_the_time() {
        let d = detection_distribution(2, &WireProbabilityVector::equal(4), 1.0).unwrap();
        assert!(close(d.probs()[2], 0.75, 1e-12));
        assert!(close(d.probs()[1], 0.25, 1e-12));
    }

    #[test]
    fn unbalanced_design_slightly_lowers_the_diagonal() {
        let conditioned = paper_wires().conditioned_on_absorption().unwrap();
        let d = detection_distribution(2, &conditioned, 1.0).unwrap();
        assert!(close(d.probs()[2], 0.74, 0.005), "P(2|2) = {}", d.probs()[2]);
    }

    #[test]
    fn enumeration_matches_inclusion_exclusion_oracle() {
        let wires = paper_wires();
        let q = wires.registration_probs(0.316);
        for n in 0..=8 {
            let probs = exact_level_probs(n, &q);
            let oracle = inclusion_exclusion(n, &q);
            for m in 0..probs.len() {
                assert!(close(probs[m], oracle[m], 1e-12), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn enumeration_matches_direct_sampling_on_random_instances() {
        // brute-force equivalence on small random instances, 4 sigma gate
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..4 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..0.3)).collect();
            let total: f64 = raw.iter().sum();
            let scale = rng.gen_range(0.3..0.95) / total;
            let q: Vec<f64> = raw.iter().map(|p| p * scale).collect();
            let wires =
                WireProbabilityVector::new(q.clone(), 1.0 - q.iter().sum::<f64>()).unwrap();
            let n = 1 + case;
            let exact = detection_distribution(n, &wires, 1.0).unwrap();
            let shots = 1_000_000u64;
            let cumulative: Vec<f64> = q
                .iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let mut counts = [0u64; 5];
            for _ in 0..shots {
                let mut mask = 0u32;
                for _ in 0..n {
                    let u: f64 = rng.gen();
                    if let Some(w) = cumulative.iter().position(|&c| u < c) {
                        mask |= 1 << w;
                    }
                }
                counts[mask.count_ones() as usize] += 1;
            }
            for m in 0..=4 {
                let p = exact.probs()[m];
                let observed = counts[m] as f64 / shots as f64;
                let sigma = (p * (1.0 - p) / shots as f64).sqrt().max(1e-9);
                assert!(
                    (observed - p).abs() < 4.0 * sigma,
                    "case {case} m={m}: {observed} vs {p}"
                );
            }
        }
    }

    #[test]
    fn distribution_is_invariant_under_wire_permutation() {
        let wires = paper_wires();
        let mut shuffled_p = wires.p_wire().to_vec();
        shuffled_p.swap(0, 2);
        shuffled_p.swap(1, 3);
        let shuffled = WireProbabilityVector::new(shuffled_p, wires.p_transmit()).unwrap();
        for n in 0..=6 {
            let a = detection_distribution(n, &wires, 0.316).unwrap();
            let b = detection_distribution(n, &shuffled, 0.316).unwrap();
            for m in 0..a.probs().len() {
                assert!(close(a.probs()[m], b.probs()[m], 1e-12));
            }
        }
    }

    #[test]
    fn higher_internal_efficiency_dominates_stochastically() {
        let wires = paper_wires();
        for n in 1..=6 {
            let lo = detection_distribution(n, &wires, 0.3).unwrap();
            let hi = detection_distribution(n, &wires, 0.6).unwrap();
            for k in 1..=4 {
                assert!(hi.p_at_least(k) >= lo.p_at_least(k) - 1e-12);
            }
        }
    }

    #[test]
    fn photon_numbers_beyond_the_bound_are_rejected() {
        match detection_distribution(13, &paper_wires(), 0.316) {
            Err(Error::EnumerationBound { n: 13, bound: 12 }) => {}
            other => panic!("expected EnumerationBound, got {other:?}"),
        }
    }

    #[test]
    fn empty_source_mixture_is_level_zero() {
        let d = poisson_mixture(0.0, &paper_wires(), 0.316, 10).unwrap();
        assert!(close(d.probs()[0], 1.0, 1e-12));
    }

    #[test]
    fn mixture_matches_thinned_poisson_closed_form() {
        // independent oracle: thinning a Poisson source makes the per-wire
        // counts independent Poissons, so
        // P(level set = S) = prod_{i in S}(1-e^{-q_i mu}) prod_{not S} e^{-q_i mu}
        let wires = paper_wires();
        let eta = 0.316;
        let q = wires.registration_probs(eta);
        for &mu in &[0.05, 0.7, 2.3, 6.0] {
            let n_max = poisson_truncation(mu, 1e-12);
            let mixture = poisson_mixture(mu, &wires, eta, n_max).unwrap();
            let mut oracle = vec![0.0; 5];
            for mask in 0u32..16 {
                let mut prob = 1.0;
                for (i, &qi) in q.iter().enumerate() {
                    let p_hit = 1.0 - (-qi * mu).exp();
                    prob *= if mask & (1 << i) != 0 { p_hit } else { 1.0 - p_hit };
                }
                oracle[mask.count_ones() as usize] += prob;
            }
            for m in 0..=4 {
                assert!(
                    close(mixture.probs()[m], oracle[m], 1e-10),
                    "mu={mu} m={m}: {} vs {}",
                    mixture.probs()[m],
                    oracle[m]
                );
            }
        }
    }

    #[test]
    fn threshold_scaling_follows_mu_to_the_k() {
        let wires = paper_wires();
        let eta = 0.316;
        let mus: Vec<f64> = (0..7).map(|i| 1e-3 * 10f64.powf(i as f64 / 6.0)).collect();
        for k in 1..=4 {
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &mu in &mus {
                // the >=4 rate at mu = 1e-3 sits around 1e-17, so the tail
                // cut has to reach far beyond the 1e-9 normalization level
                let d = poisson_mixture(mu, &wires, eta, poisson_truncation(mu, 1e-20)).unwrap();
                let (x, y) = (mu.ln(), d.p_at_least(k).ln());
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            let n = mus.len() as f64;
            let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            assert!((slope - k as f64).abs() < 0.1, "k={k} slope={slope}");
        }
    }

    #[test]
    fn efficiency_chain_products() {
        assert!(close(sqe_from_dqe(0.24, 0.17), 0.0408, 1e-12));
        assert!(close(sqe_from_dqe(0.22, 0.148), 0.0326, 1e-4));
        assert_eq!(sqe_from_dqe(0.31, 1.0), 0.31);
    }

    #[test]
    fn dqe_follows_absorptance_times_internal_efficiency() {
        let wires = paper_wires();
        assert!(close(dqe_from_model(&wires, 0.316), 0.24, 1e-3));
        assert!(close(dqe_from_model(&wires, 1.0), 0.76, 0.005));
        let opaque = WireProbabilityVector::new(vec![0.0; 4], 1.0).unwrap();
        assert_eq!(dqe_from_model(&opaque, 0.9), 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_partition_invariant() {
        let wires = paper_wires();
        let chain = EfficiencyChain::default();
        let source = SourceConfig::pulsed(2.3, 2e6);
        let circuit = DetectorCircuit::default();
        let a = monte_carlo_run(&source, &wires, &chain, &circuit, 20_000, 7, false).unwrap();
        let b = monte_carlo_run(&source, &wires, &chain, &circuit, 20_000, 7, false).unwrap();
        assert_eq!(a.stats, b.stats);

        // explicit repartitioning: unequal split + single block
        let whole = tally_shots(0..20_000, &source, &wires, &chain, 7, false);
        let split = tally_shots(0..137, &source, &wires, &chain, 7, false)
            .merge(tally_shots(137..9000, &source, &wires, &chain, 7, false))
            .merge(tally_shots(9000..20_000, &source, &wires, &chain, 7, false));
        assert_eq!(whole, split);
        assert_eq!(whole.level_counts, a.stats.level_counts);
    }

    #[test]
    fn monte_carlo_matches_exact_mixture() {
        let wires = paper_wires();
        let chain = EfficiencyChain::default();
        let source = SourceConfig::pulsed(2.3, 2e6);
        let circuit = DetectorCircuit::default();
        let shots = 1_000_000u64;
        let run = monte_carlo_run(&source, &wires, &chain, &circuit, shots, 11, false).unwrap();
        let exact =
            poisson_mixture(2.3, &wires, chain.internal_efficiency, poisson_truncation(2.3, 1e-12))
                .unwrap();
        for k in 1..=4 {
            let p = exact.p_at_least(k);
            let sigma = (p * (1.0 - p) / shots as f64).sqrt();
            let observed = run.stats.threshold_rates[k - 1];
            assert!((observed - p).abs() < 4.0 * sigma, "k={k}: {observed} vs {p}");
        }
        // mean level tracks the mixture mean, detected mean sits above it
        assert!(close(run.stats.mean_level, exact.mean(), 4.0 * 1e-3));
        assert!(run.stats.mean_detected_photons > run.stats.mean_level);
        let detected_expected = 2.3 * dqe_from_model(&wires, chain.internal_efficiency);
        assert!(close(run.stats.mean_detected_photons, detected_expected, 0.01));
    }

    #[test]
    fn quiet_source_stays_at_level_zero() {
        let wires = paper_wires();
        let chain = EfficiencyChain { dark_count_rate: 0.0, ..EfficiencyChain::default() };
        let source = SourceConfig::pulsed(0.0, 2e6);
        let circuit = DetectorCircuit::default();
        let run = monte_carlo_run(&source, &wires, &chain, &circuit, 10_000, 3, false).unwrap();
        assert_eq!(run.stats.level_counts[0], 10_000);
        assert!(run.stats.threshold_rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn dark_counts_register_without_photons() {
        let wires = paper_wires();
        let chain = EfficiencyChain {
            dark_count_rate: 1e5,
            ..EfficiencyChain::default()
        };
        // 2 MHz repetition -> 0.05 expected darks per window
        let source = SourceConfig::pulsed(0.0, 2e6);
        let circuit = DetectorCircuit::default();
        let shots = 200_000u64;
        let run = monte_carlo_run(&source, &wires, &chain, &circuit, shots, 5, false).unwrap();
        let p_dark = 1.0 - (-0.05f64).exp();
        let observed = 1.0 - run.stats.level_counts[0] as f64 / shots as f64;
        let sigma = (p_dark * (1.0 - p_dark) / shots as f64).sqrt();
        assert!((observed - p_dark).abs() < 5.0 * sigma, "{observed} vs {p_dark}");
        // photons registered stays zero; darks are not photon detections
        assert_eq!(run.stats.mean_detected_photons, 0.0);
    }

    #[test]
    fn threshold_rates_are_monotone_in_k() {
        let wires = paper_wires();
        let chain = EfficiencyChain::default();
        let source = SourceConfig::pulsed(5.0, 2e6);
        let circuit = DetectorCircuit::default();
        let run = monte_carlo_run(&source, &wires, &chain, &circuit, 50_000, 9, false).unwrap();
        for pair in run.stats.threshold_rates.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        let total: u64 = run.stats.level_counts.iter().sum();
        assert_eq!(total, run.stats.shots);
    }

    #[test]
    fn fiber_referenced_source_applies_coupling_first() {
        let source = SourceConfig::pulsed(10.0, 2e6).at_fiber();
        assert!(close(source.mean_photons_in_waveguide(0.17), 1.7, 1e-12));
        let in_guide = SourceConfig::pulsed(10.0, 2e6);
        assert_eq!(in_guide.mean_photons_in_waveguide(0.17), 10.0);
    }

    #[test]
    fn cw_source_maps_flux_through_the_gate() {
        let source = SourceConfig::cw(1e9, 5e-9);
        assert!(close(source.mean_photons_in_waveguide(1.0), 5.0, 1e-12));
        assert_eq!(source.shot_window(), 5e-9);
    }

    #[test]
    fn synthesized_events_match_level_counts() {
        let wires = paper_wires();
        let chain = EfficiencyChain::default();
        let source = SourceConfig::pulsed(3.0, 2e6);
        let circuit = DetectorCircuit::default();
        let run = monte_carlo_run(&source, &wires, &chain, &circuit, 2000, 17, true).unwrap();
        let events = run.shot_events.unwrap();
        assert_eq!(events.len(), 2000);
        let mut counts = vec![0u64; 5];
        for shot in &events {
            counts[shot.len()] += 1;
            // distinct wires only
            let mut seen = std::collections::HashSet::new();
            for e in shot {
                assert!(seen.insert(e.wire_index));
                assert_eq!(e.time, 0.0);
            }
        }
        assert_eq!(counts, run.stats.level_counts);
    }
}
