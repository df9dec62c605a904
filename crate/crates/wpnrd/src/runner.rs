//! Subcommand orchestration: each subcommand turns the experiment config
//! into deterministic CSV/JSON artifacts.
//!
//! Every artifact starts with (CSV) or embeds (JSON) a provenance stamp:
//! crate version, master seed, and the SHA-256 of the resolved config.
//! Re-running a subcommand with the same config produces byte-identical
//! files.

use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::absorption::{Polarization, WireGroup};
use crate::circuit::{self, SwitchEvent};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fidelity::{self, PeakLevel, PeakModel};
use crate::photonstats;
use crate::signalproc::{self, FilterSpec};

/// A parsed subcommand with its flags resolved.
#[derive(Debug, Clone)]
pub enum Subcommand {
    /// Absorption probabilities versus overlap length, both polarizations.
    Absorb { lengths_um: Option<Vec<f64>> },
    /// Static current-voltage characteristic.
    Iv { i_max_ua: f64, points: usize },
    /// Transient output pulse for a list of switch events.
    Pulse { events: Option<Vec<SwitchEvent>>, filtered: bool },
    /// Monte Carlo threshold rates over a mean-photon-number sweep.
    Mc { mus: Option<Vec<f64>>, shots: u64 },
    /// P(m|n) matrix and the fidelity ledger.
    Fidelity { n_max: usize, ledger_n: usize },
    /// Simulated pulse-height histogram with a multi-Gaussian fit.
    Histogram { shots: u64, bins: usize },
}

pub struct RunContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self { config, out_dir: out_dir.into() }
    }

    fn stamp(&self) -> String {
        format!(
            "wpnrd v{} seed={} config={}",
            env!("CARGO_PKG_VERSION"),
            self.config.seed,
            self.config.content_hash()
        )
    }

    fn meta(&self) -> serde_json::Value {
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "config": self.config.content_hash(),
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }
}

/// Executes one subcommand and returns the paths of the written artifacts.
pub fn run_subcommand(cmd: &Subcommand, ctx: &RunContext) -> Result<Vec<PathBuf>> {
    ctx.config.validate()?;
    match cmd {
        Subcommand::Absorb { lengths_um } => run_absorb(ctx, lengths_um.as_deref()),
        Subcommand::Iv { i_max_ua, points } => run_iv(ctx, *i_max_ua, *points),
        Subcommand::Pulse { events, filtered } => run_pulse(ctx, events.as_deref(), *filtered),
        Subcommand::Mc { mus, shots } => run_mc(ctx, mus.as_deref(), *shots),
        Subcommand::Fidelity { n_max, ledger_n } => run_fidelity(ctx, *n_max, *ledger_n),
        Subcommand::Histogram { shots, bins } => run_histogram(ctx, *shots, *bins),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

fn run_absorb(ctx: &RunContext, lengths_um: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let default_lengths: Vec<f64> = (0..=30).map(|k| k as f64 * 2.0).collect();
    let lengths = lengths_um.unwrap_or(&default_lengths);
    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push_str("length_um,pol,total,p_cent,p_lat,p_w1,p_w2,p_w3,p_w4,p_transmit\n");
    for pol in [Polarization::Te, Polarization::Tm] {
        for &length in lengths {
            if !(length >= 0.0) {
                return Err(Error::invalid(format!("negative length {length} um")));
            }
            let model = ctx.config.absorption_model(pol)?.with_length_cm(length * 1e-4)?;
            let wires = model.per_wire_probabilities()?;
            let p = wires.p_wire();
            csv.push_str(&format!(
                "{:.3},{},{},{},{},{},{},{},{},{}\n",
                length,
                pol,
                fmt(model.total_absorptance()),
                fmt(model.group_absorption_probability(WireGroup::Central)),
                fmt(model.group_absorption_probability(WireGroup::Lateral)),
                fmt(p[0]),
                fmt(p[1]),
                fmt(p[2]),
                fmt(p[3]),
                fmt(wires.p_transmit()),
            ));
        }
    }
    Ok(vec![ctx.write("absorb.csv", &csv)?])
}

fn run_iv(ctx: &RunContext, i_max_ua: f64, points: usize) -> Result<Vec<PathBuf>> {
    let circuit = ctx.config.detector_circuit();
    let curve = circuit::simulate_iv_curve(&circuit, i_max_ua * 1e-6, points)?;
    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push_str("i_ua,v_uv\n");
    for (i, v) in curve {
        csv.push_str(&format!("{},{}\n", fmt(i * 1e6), fmt(v * 1e6)));
    }
    Ok(vec![ctx.write("iv.csv", &csv)?])
}

fn run_pulse(ctx: &RunContext, events: Option<&[SwitchEvent]>, filtered: bool) -> Result<Vec<PathBuf>> {
    let circuit = ctx.config.detector_circuit();
    let default_events: Vec<SwitchEvent> =
        (0..circuit.n_wires).map(|w| SwitchEvent::new(0.0, w)).collect();
    let events = events.unwrap_or(&default_events);
    let trace = circuit::simulate_transient(
        &circuit,
        events,
        ctx.config.duration_seconds(),
        ctx.config.dt_seconds(),
    )?;
    let trace = if filtered {
        signalproc::apply_filters(&trace, &ctx.config.amplifier_filter()?)?
    } else {
        trace
    };
    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push_str("time_ns,v_out_uv\n");
    for (k, &v) in trace.samples().iter().enumerate() {
        csv.push_str(&format!("{:.4},{}\n", trace.time_at(k) * 1e9, fmt(v * 1e6)));
    }
    Ok(vec![ctx.write("pulse.csv", &csv)?])
}

fn run_mc(ctx: &RunContext, mus: Option<&[f64]>, shots: u64) -> Result<Vec<PathBuf>> {
    let config = &ctx.config;
    let wires = config.selected_absorption_model()?.per_wire_probabilities()?;
    let chain = config.efficiency_chain();
    let circuit = config.detector_circuit();
    let base_source = config.source()?;
    // default sweep: 25 log-spaced points over 1e-3 .. 1e1 photons/pulse
    let default_mus: Vec<f64> =
        (0..25).map(|k| 1e-3 * 10f64.powf(4.0 * k as f64 / 24.0)).collect();
    let mus = mus.unwrap_or(&default_mus);

    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push_str("mu,rate_ge1,rate_ge2,rate_ge3,rate_ge4\n");
    let mut rows = Vec::new();
    for &mu in mus {
        let mut source = base_source;
        source.kind = photonstats::SourceKind::Pulsed;
        source.mean_photons_per_pulse = mu;
        let run = photonstats::monte_carlo_run(
            &source, &wires, &chain, &circuit, shots, config.seed, false,
        )?;
        let r = &run.stats.threshold_rates;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(mu),
            fmt(r[0]),
            fmt(*r.get(1).unwrap_or(&0.0)),
            fmt(*r.get(2).unwrap_or(&0.0)),
            fmt(*r.get(3).unwrap_or(&0.0)),
        ));
        rows.push(json!({
            "mu": mu,
            "mean_detected_photons": run.stats.mean_detected_photons,
            "mean_level": run.stats.mean_level,
            "threshold_rates": run.stats.threshold_rates,
            "level_counts": run.stats.level_counts,
        }));
    }
    let dqe = photonstats::dqe_from_model(&wires, chain.internal_efficiency);
    let summary = json!({
        "meta": ctx.meta(),
        "shots_per_point": shots,
        "dqe": dqe,
        "sqe": photonstats::sqe_from_dqe(dqe, chain.coupling),
        "points": rows,
    });
    Ok(vec![
        ctx.write("mc.csv", &csv)?,
        ctx.write("mc_summary.json", &format!("{:#}\n", summary))?,
    ])
}

fn run_fidelity(ctx: &RunContext, n_max: usize, ledger_n: usize) -> Result<Vec<PathBuf>> {
    let config = &ctx.config;
    let wires = config.selected_absorption_model()?.per_wire_probabilities()?;
    let eta = config.efficiency_chain().internal_efficiency;
    let matrix = fidelity::pnr_matrix(&wires, eta, n_max)?;

    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push('m');
    for n in 0..=n_max {
        csv.push_str(&format!(",p_n{n}"));
    }
    csv.push('\n');
    for m in 0..=wires.n_wires() {
        csv.push_str(&m.to_string());
        for n in 0..=n_max {
            csv.push_str(&format!(",{}", fmt(matrix.prob(m, n))));
        }
        csv.push('\n');
    }

    let peaks = PeakModel::default();
    let ledger = fidelity::fidelity_ledger(&wires, eta, &peaks, ledger_n)?;
    let dqe = photonstats::dqe_from_model(&wires, eta);
    let report = json!({
        "meta": ctx.meta(),
        "ledger": ledger,
        "product": ledger.product(),
        "efficiency_only_diagonal": dqe.powi(ledger_n as i32),
        "full_model_diagonal": matrix.prob(ledger_n, ledger_n),
    });
    Ok(vec![
        ctx.write("fidelity_matrix.csv", &csv)?,
        ctx.write("fidelity_ledger.json", &format!("{:#}\n", report))?,
    ])
}

/// Pulse-height histogram pipeline.
///
/// Per shot the chain is linear, so the amplitude decomposes exactly into
/// the level's deterministic part plus a filtered-noise sample:
/// the canonical trace for a level (all electrically identical wires, events
/// at t = 0) runs once through amplifier band-pass, gain and scope low-pass,
/// and its fixed peak window is reused for every shot of that level, while
/// the per-shot scope noise runs through the same low-pass with its own
/// seeded stream.
fn run_histogram(ctx: &RunContext, shots: u64, bins: usize) -> Result<Vec<PathBuf>> {
    let config = &ctx.config;
    let wires = config.selected_absorption_model()?.per_wire_probabilities()?;
    let chain = config.efficiency_chain();
    let circuit = config.detector_circuit();
    let source = config.source()?;
    let window = 50e-12;

    let run = photonstats::monte_carlo_run(
        &source, &wires, &chain, &circuit, shots, config.seed, true,
    )?;
    let shot_events = run.shot_events.expect("synthesis requested");

    let amplitudes = synthesize_amplitudes(ctx, &shot_events, window)?;
    let hist = signalproc::build_histogram(&amplitudes, bins, window)?;

    // initialize the fit from the known level structure
    let base = canonical_level_amplitudes(ctx, window)?;
    let level0: Vec<f64> = shot_events
        .iter()
        .zip(&amplitudes)
        .filter(|(ev, _)| ev.is_empty())
        .map(|(_, &a)| a)
        .collect();
    let sigma0 = sample_sigma(&level0).unwrap_or(hist.bin_width() * 3.0);
    let total = shots as f64;
    let init_levels: Vec<PeakLevel> = base
        .iter()
        .enumerate()
        .map(|(m, &center)| PeakLevel {
            center,
            fwhm: 2.354_820_045 * sigma0,
            weight: run.stats.level_counts[m] as f64 / total,
        })
        .collect();
    let init = PeakModel::new(init_levels)?;
    let fit = signalproc::fit_multi_gaussian(&hist, circuit.n_wires + 1, Some(&init))?;

    let mut csv = format!("# {}\n", ctx.stamp());
    csv.push_str("bin_center_v,count\n");
    for i in 0..hist.n_bins() {
        csv.push_str(&format!("{},{}\n", fmt(hist.bin_center(i)), hist.counts()[i]));
    }

    let report = json!({
        "meta": ctx.meta(),
        "shots": shots,
        "level_counts": run.stats.level_counts,
        "mean_detected_photons": run.stats.mean_detected_photons,
        "fit": {
            "levels": fit.peaks.levels(),
            "residual_norm": fit.residual_norm,
            "iterations": fit.iterations,
        },
        "discrimination_fidelity": fidelity::discrimination_fidelity(&fit.peaks),
    });
    Ok(vec![
        ctx.write("histogram.csv", &csv)?,
        ctx.write("histogram_fit.json", &format!("{:#}\n", report))?,
    ])
}

/// Peak-window means of the noiseless chain output for 0..=N simultaneous
/// switches. The window position comes from the all-wires pulse and is
/// shared by every level (the scope reads a trigger-referenced window).
pub fn canonical_level_amplitudes(ctx: &RunContext, window: f64) -> Result<Vec<f64>> {
    let config = &ctx.config;
    let circuit = config.detector_circuit();
    let dt = config.dt_seconds();
    let duration = 40e-9f64.min(config.duration_seconds()).max(25e-9);
    let amplifier = config.amplifier_filter()?;
    let scope = config.scope_filter()?;
    let gain = config.gain_linear();

    let chain_of = |events: &[SwitchEvent]| -> Result<crate::circuit::PulseTrace> {
        let raw = circuit::simulate_transient(&circuit, events, duration, dt)?;
        let amplified = signalproc::apply_gain(&signalproc::apply_filters(&raw, &amplifier)?, gain);
        signalproc::apply_filters(&amplified, &scope)
    };

    let full_events: Vec<SwitchEvent> =
        (0..circuit.n_wires).map(|w| SwitchEvent::new(0.0, w)).collect();
    let reference = chain_of(&full_events)?;
    let (peak_idx, _) = reference.peak().expect("non-empty trace");
    let half = (window / 2.0 / dt).floor() as usize;

    let mut base = Vec::with_capacity(circuit.n_wires + 1);
    for m in 0..=circuit.n_wires {
        if m == 0 {
            base.push(0.0);
            continue;
        }
        let trace = chain_of(&full_events[..m])?;
        let lo = peak_idx.saturating_sub(half);
        let hi = (peak_idx + half).min(trace.len() - 1);
        let slice = &trace.samples()[lo..=hi];
        base.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    Ok(base)
}

/// Per-shot pulse amplitudes: canonical level amplitude plus a seeded
/// scope-noise sample shaped by the scope low-pass.
fn synthesize_amplitudes(
    ctx: &RunContext,
    shot_events: &[Vec<SwitchEvent>],
    window: f64,
) -> Result<Vec<f64>> {
    let config = &ctx.config;
    let dt = config.dt_seconds();
    let base = canonical_level_amplitudes(ctx, window)?;
    let sigma = config.noise_sigma_volts();
    let window_points = 2 * (window / 2.0 / dt).floor() as usize + 1;
    // the scope low-pass has exponential memory; give the noise stream a
    // warm-up long enough that the window sees stationary filtered noise
    let tau_lp = 1.0 / (2.0 * std::f64::consts::PI * config.filters.scope_low_pass_mhz * 1e6);
    let warmup = (10.0 * tau_lp / dt).ceil() as usize;
    let lp = FilterSpec::new(None, Some(config.filters.scope_low_pass_mhz * 1e6))?;

    let mut amplitudes = Vec::with_capacity(shot_events.len());
    for (index, events) in shot_events.iter().enumerate() {
        let level = events.len();
        let noise = if sigma > 0.0 {
            let mut rng = noise_rng(config.seed, index as u64);
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            let white: Vec<f64> =
                (0..warmup + window_points).map(|_| normal.sample(&mut rng)).collect();
            let trace = crate::circuit::PulseTrace::new(dt, white)?;
            let filtered = signalproc::apply_filters(&trace, &lp)?;
            let tail = &filtered.samples()[warmup..];
            tail.iter().sum::<f64>() / tail.len() as f64
        } else {
            0.0
        };
        amplitudes.push(base[level] + noise);
    }
    Ok(amplitudes)
}

fn noise_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&index.to_le_bytes());
    // distinct tag keeps this stream independent of the photon sampler
    bytes[16..24].copy_from_slice(&0x73636f_70655f6eu64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn sample_sigma(values: &[f64]) -> Option<f64> {
    if values.len() < 16 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var > 0.0).then(|| var.sqrt())
}
