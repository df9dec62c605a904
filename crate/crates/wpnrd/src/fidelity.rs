//! Photon-number-resolution quality metrics.
//!
//! Three views of the same question "how well does the number of switched
//! wires reproduce the number of incident photons":
//!
//! - [`pnr_matrix`] — exact conditional probabilities P(m|n) of m switched
//!   wires given n incident photons, delegated column-by-column to
//!   [`crate::photonstats::detection_distribution`].
//! - [`discrimination_fidelity`] — the probability that maximum-likelihood
//!   thresholding of the pulse-height histogram assigns the correct level,
//!   from the overlap of adjacent Gaussian peaks.
//! - [`fidelity_ledger`] — the multiplicative breakdown of P(n|n) into the
//!   efficiency factor, the wire-multiplexing factor (same-wire pile-up on
//!   equal wires), the unbalance correction for the real absorption profile,
//!   the signal-to-noise factor, and crosstalk (negligible, reported as 1).

use serde::{Deserialize, Serialize};

use crate::absorption::WireProbabilityVector;
use crate::error::{Error, Result};
use crate::photonstats;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4; // 2 sqrt(2 ln 2)

/// Conditional probabilities P(m|n), column n = incident photons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PnrMatrix {
    n_wires: usize,
    columns: Vec<Vec<f64>>,
}

impl PnrMatrix {
    pub fn n_wires(&self) -> usize {
        self.n_wires
    }

    /// Largest photon number covered (columns run n = 0..=n_max).
    pub fn n_max(&self) -> usize {
        self.columns.len() - 1
    }

    /// P(m | n).
    pub fn prob(&self, m: usize, n: usize) -> f64 {
        self.columns[n][m]
    }

    pub fn column(&self, n: usize) -> &[f64] {
        &self.columns[n]
    }
}

/// Exact P(m|n) for n = 0..=n_max incident photons.
pub fn pnr_matrix(
    wires: &WireProbabilityVector,
    internal_efficiency: f64,
    n_max: usize,
) -> Result<PnrMatrix> {
    let mut columns = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        columns.push(
            photonstats::detection_distribution(n, wires, internal_efficiency)?
                .probs()
                .to_vec(),
        );
    }
    Ok(PnrMatrix { n_wires: wires.n_wires(), columns })
}

/// Closed form for N equal wires at unit efficiency:
/// P(n|n) = N! / (N-n)! / N^n.
pub fn equal_wire_diagonal(n_wires: usize, n: usize) -> f64 {
    if n > n_wires {
        return 0.0;
    }
    let mut p = 1.0;
    for k in 0..n {
        p *= (n_wires - k) as f64 / n_wires as f64;
    }
    p
}

/// One pulse-height level: a Gaussian peak in the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakLevel {
    /// Peak centre, volts.
    pub center: f64,
    /// Full width at half maximum, volts.
    pub fwhm: f64,
    /// Prior probability of the level.
    pub weight: f64,
}

impl PeakLevel {
    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }
}

/// Gaussian peak model of the pulse-height histogram, one peak per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakModel {
    levels: Vec<PeakLevel>,
}

impl PeakModel {
    pub fn new(levels: Vec<PeakLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("peak model needs at least one level"));
        }
        let mut weight_sum = 0.0;
        for (i, level) in levels.iter().enumerate() {
            if !(level.fwhm > 0.0) {
                return Err(Error::invalid(format!("level {i} FWHM must be > 0")));
            }
            if !(level.weight >= 0.0) {
                return Err(Error::invalid(format!("level {i} weight must be >= 0")));
            }
            if i > 0 && !(level.center > levels[i - 1].center) {
                return Err(Error::invalid("peak centres must be strictly increasing"));
            }
            weight_sum += level.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "level weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(Self { levels })
    }

    /// Default model for `n_levels` pulse-height levels: unit spacing, equal
    /// priors, FWHM growing linearly by `fwhm_growth` from the first to the
    /// last level, and the base FWHM back-solved so the model's
    /// discrimination fidelity equals `target_fidelity`.
    pub fn calibrated(n_levels: usize, target_fidelity: f64, fwhm_growth: f64) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::invalid("need at least two levels"));
        }
        if !(0.0 < target_fidelity && target_fidelity < 1.0) {
            return Err(Error::invalid("target fidelity must lie in (0, 1)"));
        }
        let build = |f0: f64| -> PeakModel {
            let levels = (0..n_levels)
                .map(|m| PeakLevel {
                    center: m as f64,
                    fwhm: f0 * (1.0 + fwhm_growth * m as f64 / (n_levels - 1) as f64),
                    weight: 1.0 / n_levels as f64,
                })
                .collect();
            PeakModel { levels }
        };
        // Fidelity is monotone decreasing in the common width; bisect.
        let (mut lo, mut hi) = (1e-3, 3.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if discrimination_fidelity(&build(mid)) > target_fidelity {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(build(0.5 * (lo + hi)))
    }

    pub fn levels(&self) -> &[PeakLevel] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

impl Default for PeakModel {
    /// Five levels (0-4 photons), 0.97 discrimination fidelity, 20% FWHM
    /// growth from the lowest to the highest level.
    fn default() -> Self {
        Self::calibrated(5, 0.97, 0.2).expect("valid constants")
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Decision thresholds between adjacent levels: the crossing point of the
/// two weighted Gaussian likelihoods, restricted to the interval between
/// the centres.
pub fn ml_thresholds(peaks: &PeakModel) -> Vec<f64> {
    let levels = peaks.levels();
    let mut thresholds = Vec::with_capacity(levels.len() - 1);
    for pair in levels.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (sa, sb) = (a.sigma(), b.sigma());
        // w_a/s_a exp(-(x-c_a)^2 / 2 s_a^2) = w_b/s_b exp(-(x-c_b)^2 / 2 s_b^2)
        let qa = 0.5 / (sa * sa) - 0.5 / (sb * sb);
        let qb = b.center / (sb * sb) - a.center / (sa * sa);
        let wa = if a.weight > 0.0 { a.weight } else { f64::MIN_POSITIVE };
        let wb = if b.weight > 0.0 { b.weight } else { f64::MIN_POSITIVE };
        let qc = a.center * a.center / (2.0 * sa * sa) - b.center * b.center / (2.0 * sb * sb)
            + ((wa / sa) / (wb / sb)).ln();
        let root = if qa.abs() < 1e-300 {
            -qc / qb
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let r1 = (-qb + disc.sqrt()) / (2.0 * qa);
                let r2 = (-qb - disc.sqrt()) / (2.0 * qa);
                if r1 > a.center && r1 < b.center {
                    r1
                } else if r2 > a.center && r2 < b.center {
                    r2
                } else {
                    0.5 * (a.center + b.center)
                }
            } else {
                0.5 * (a.center + b.center)
            }
        };
        thresholds.push(root.clamp(a.center, b.center));
    }
    thresholds
}

/// Probability of assigning the correct level with maximum-likelihood
/// thresholds, weighted by the level priors.
pub fn discrimination_fidelity(peaks: &PeakModel) -> f64 {
    let thresholds = ml_thresholds(peaks);
    let levels = peaks.levels();
    let mut fidelity = 0.0;
    for (m, level) in levels.iter().enumerate() {
        let sigma = level.sigma();
        let upper = if m + 1 < levels.len() {
            normal_cdf((thresholds[m] - level.center) / sigma)
        } else {
            1.0
        };
        let lower = if m > 0 {
            normal_cdf((thresholds[m - 1] - level.center) / sigma)
        } else {
            0.0
        };
        fidelity += level.weight * (upper - lower);
    }
    fidelity
}

/// The multiplicative P(n|n) breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityLedger {
    /// Photon number the ledger is evaluated for.
    pub n: usize,
    /// Probability that all n photons register: DQE^n.
    pub efficiency: f64,
    /// Equal-wire same-wire pile-up factor: N!/((N-n)! N^n).
    pub multiplexing: f64,
    /// Correction from the unbalanced central/lateral absorption profile.
    pub unbalance: f64,
    /// Level-assignment fidelity from the peak overlap.
    pub signal_to_noise: f64,
    /// Spurious switching of neighbouring wires; negligible by design.
    pub crosstalk: f64,
}

impl FidelityLedger {
    /// Product of all factors: the end-to-end P(n|n) estimate.
    pub fn product(&self) -> f64 {
        self.efficiency * self.multiplexing * self.unbalance * self.signal_to_noise
            * self.crosstalk
    }
}

/// Builds the five-factor breakdown of P(n|n) for the given detector chain.
pub fn fidelity_ledger(
    wires: &WireProbabilityVector,
    internal_efficiency: f64,
    peaks: &PeakModel,
    n: usize,
) -> Result<FidelityLedger> {
    if n == 0 || n > wires.n_wires() {
        return Err(Error::invalid(format!(
            "ledger photon number must lie in 1..={}",
            wires.n_wires()
        )));
    }
    let dqe = photonstats::dqe_from_model(wires, internal_efficiency);
    let multiplexing = equal_wire_diagonal(wires.n_wires(), n);
    // Same-wire losses for the real absorption profile: P(n|n) conditioned on
    // all n photons being absorbed and registered.
    let conditioned = wires.conditioned_on_absorption()?;
    let p_diag = photonstats::detection_distribution(n, &conditioned, 1.0)?.probs()[n];
    Ok(FidelityLedger {
        n,
        efficiency: dqe.powi(n as i32),
        multiplexing,
        unbalance: p_diag / multiplexing,
        signal_to_noise: discrimination_fidelity(peaks),
        crosstalk: 1.0,
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

    #[test]
    fn equal_wires_unit_efficiency_diagonal() {
        let wires = WireProbabilityVector::equal(4);
        let matrix = pnr_matrix(&wires, 1.0, 4).unwrap();
        assert!(close(matrix.prob(2, 2), 0.75, 1e-12));
        // closed form N!/(N-n)!/N^n against enumeration for every n
        for n in 0..=4 {
            assert!(close(matrix.prob(n, n), equal_wire_diagonal(4, n), 1e-12));
        }
    }

    #[test]
    fn efficiency_only_number_matches_dqe_squared() {
        let wires = paper_wires();
        let dqe = photonstats::dqe_from_model(&wires, 0.316);
        assert!(close(dqe * dqe, 0.058, 1e-3));
    }

    #[test]
    fn full_model_diagonal_combines_both_factors() {
        // brute-force enumeration (via the exact distribution) of the full
        // chain: DQE^2 x conditioned same-wire factor
        let wires = paper_wires();
        let matrix = pnr_matrix(&wires, 0.316, 4).unwrap();
        let full = matrix.prob(2, 2);
        assert!(close(full, 0.0426, 1e-3), "P(2|2) = {full}");
        let dqe = photonstats::dqe_from_model(&wires, 0.316);
        let conditioned = wires.conditioned_on_absorption().unwrap();
        let same_wire =
            photonstats::detection_distribution(2, &conditioned, 1.0).unwrap().probs()[2];
        assert!(close(full, dqe * dqe * same_wire, 1e-12));
    }

    #[test]
    fn columns_are_stochastic_and_respect_bounds() {
        let wires = paper_wires();
        let matrix = pnr_matrix(&wires, 0.316, 8).unwrap();
        for n in 0..=8 {
            let col = matrix.column(n);
            assert!(close(col.iter().sum::<f64>(), 1.0, 1e-12));
            for m in 0..col.len() {
                if m > n.min(4) {
                    assert_eq!(col[m], 0.0, "P({m}|{n}) must vanish");
                }
            }
        }
    }

    #[test]
    fn matrix_columns_equal_detection_distribution() {
        let wires = paper_wires();
        let matrix = pnr_matrix(&wires, 0.316, 6).unwrap();
        for n in 0..=6 {
            let direct = photonstats::detection_distribution(n, &wires, 0.316).unwrap();
            assert_eq!(matrix.column(n), direct.probs());
        }
    }

    #[test]
    fn narrow_peaks_discriminate_perfectly() {
        let model = PeakModel::new(
            (0..5)
                .map(|m| PeakLevel { center: m as f64, fwhm: 1e-6, weight: 0.2 })
                .collect(),
        )
        .unwrap();
        assert!(discrimination_fidelity(&model) > 1.0 - 1e-12);
    }

    #[test]
    fn two_peaks_two_sigma_apart_give_standard_normal_tail() {
        // spacing of 2 sigma puts the midpoint threshold 1 sigma from each
        // centre: fidelity = Phi(1) = 0.8413
        let sigma = 1.0;
        let model = PeakModel::new(vec![
            PeakLevel { center: 0.0, fwhm: sigma * FWHM_PER_SIGMA, weight: 0.5 },
            PeakLevel { center: 2.0 * sigma, fwhm: sigma * FWHM_PER_SIGMA, weight: 0.5 },
        ])
        .unwrap();
        let thresholds = ml_thresholds(&model);
        assert!(close(thresholds[0], 1.0, 1e-9));
        assert!(close(discrimination_fidelity(&model), 0.8413, 5e-5));
    }

    #[test]
    fn default_model_hits_the_calibration_target() {
        let model = PeakModel::default();
        assert_eq!(model.n_levels(), 5);
        assert!(close(discrimination_fidelity(&model), 0.97, 1e-6));
        let first = model.levels()[0].fwhm;
        let last = model.levels()[4].fwhm;
        assert!(close(last / first, 1.2, 1e-9));
    }

    #[test]
    fn fidelity_is_monotone_in_width_and_affine_invariant() {
        let base = PeakModel::default();
        let wider = PeakModel::new(
            base.levels()
                .iter()
                .map(|l| PeakLevel { fwhm: l.fwhm * 1.5, ..*l })
                .collect(),
        )
        .unwrap();
        assert!(discrimination_fidelity(&wider) < discrimination_fidelity(&base));

        let scaled = PeakModel::new(
            base.levels()
                .iter()
                .map(|l| PeakLevel {
                    center: 3.0 * l.center + 10.0,
                    fwhm: 3.0 * l.fwhm,
                    weight: l.weight,
                })
                .collect(),
        )
        .unwrap();
        assert!(close(
            discrimination_fidelity(&scaled),
            discrimination_fidelity(&base),
            1e-12
        ));
    }

    #[test]
    fn ledger_reproduces_quoted_factors() {
        let wires = paper_wires();
        let ledger = fidelity_ledger(&wires, 0.316, &PeakModel::default(), 2).unwrap();
        assert!(close(ledger.efficiency, 0.0576, 1e-3));
        assert!(close(ledger.multiplexing, 0.75, 1e-12));
        assert!(close(ledger.multiplexing * ledger.unbalance, 0.74, 5e-3));
        assert!(close(ledger.signal_to_noise, 0.97, 1e-6));
        assert_eq!(ledger.crosstalk, 1.0);
    }

    #[test]
    fn ledger_degenerates_cleanly_at_unit_efficiency() {
        // unit internal efficiency, equal wires, vanishing peak widths:
        // everything except the multiplexing factor is 1
        let wires = WireProbabilityVector::equal(4);
        let narrow = PeakModel::new(
            (0..5)
                .map(|m| PeakLevel { center: m as f64, fwhm: 1e-9, weight: 0.2 })
                .collect(),
        )
        .unwrap();
        let ledger = fidelity_ledger(&wires, 1.0, &narrow, 2).unwrap();
        assert!(close(ledger.efficiency, 1.0, 1e-12));
        assert!(close(ledger.unbalance, 1.0, 1e-12));
        assert!(close(ledger.signal_to_noise, 1.0, 1e-9));
        assert!(close(ledger.multiplexing, 0.75, 1e-12));
    }

    #[test]
    fn unity_efficiency_paper_ledger_product() {
        // product for the unity-efficiency unbalanced case: 0.74 x 0.97
        let wires = paper_wires();
        let ledger = fidelity_ledger(&wires, 1.0, &PeakModel::default(), 2).unwrap();
        let product_without_efficiency =
            ledger.multiplexing * ledger.unbalance * ledger.signal_to_noise * ledger.crosstalk;
        assert!(close(product_without_efficiency, 0.718, 5e-3));
    }
}
