//! Lyapunov candidates U0, U1 (both k-regimes) and V = U1 + U0^N, with
//! numerical verification of the dissipation inequalities through the
//! generic finite-difference generator.
//!
//! U0 tracks the boundary energies in bar variables with a small p.q cross
//! term that makes L U0 <= C - gamma_mix U0. U1 compensates H^n so that the
//! breather's fast oscillation is replaced by its averaged dissipation
//! -n kappa_k (gamma0 + gamma2) H^{n-1} E1^{2/k-1}; V adds a large power of
//! U0 to dominate the boundary-driven error terms.

use crate::chain::{apply_generator, hamiltonian, ChainParams, ChainState};
use crate::corrector::CorrectorSet;
use crate::effective::{to_bar, BarVariant};
use crate::error::{Error, Result};
use crate::fit::{line_fit, mean_stderr};
use crate::freeosc::{from_shell_coords, hf_energy};
use crate::integrate::{step, IntegratorConfig};
use crate::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// 3/2 < k < 2: U1 = H^n + (n/2)(g0+g2) H^{n-1} Psi, bars of the cutoff
    /// construction.
    KLow,
    /// k >= 2: U1 = H^n - Xi + n H^{n-1} sum_i g_i (Psi - 2 pbar_i Phi2),
    /// bars of the uncut construction.
    KHigh,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LyapunovConfig {
    /// Power in H^n (n >= 2).
    pub n: u32,
    /// Exponent of the U0 term in V = U1 + U0^{u0_power}.
    pub u0_power: u32,
    pub regime: Regime,
}

impl LyapunovConfig {
    pub fn new(k: f64, n: u32, u0_power: u32) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter("n must be >= 2".into()));
        }
        let regime = if k >= 2.0 {
            Regime::KHigh
        } else if k > 1.5 {
            Regime::KLow
        } else {
            return Err(Error::CorrectorUnbounded(k));
        };
        Ok(Self { n, u0_power, regime })
    }

    fn bar_variant(&self) -> BarVariant {
        match self.regime {
            Regime::KLow => BarVariant::Thm41,
            Regime::KHigh => BarVariant::Thm43,
        }
    }
}

/// gamma = min(1, gamma0, gamma2)/2, the cross-term coupling of U0.
pub fn gamma_mix(params: &ChainParams) -> f64 {
    0.5 * 1.0_f64.min(params.gamma0).min(params.gamma_n)
}

fn h0_effective(p: f64, q: f64, k: f64) -> f64 {
    0.5 * p * p + q.abs().powf(2.0 * k) / (2.0 * k) + 0.5 * q * q + 1.0
}

/// U0 = H0(pbar0, qbar0) + H0(pbar2, qbar2) + gamma (pbar0 qbar0 + pbar2 qbar2).
pub fn u0(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    cfg: &LyapunovConfig,
) -> Result<f64> {
    if params.n_sites != 3 {
        return Err(Error::InvalidParameter("Lyapunov machinery covers 3-site chains".into()));
    }
    let bar = to_bar(state, params, corr, cfg.bar_variant())?;
    let g = gamma_mix(params);
    let k = params.k;
    Ok(h0_effective(bar.pbar[0], bar.qbar[0], k)
        + h0_effective(bar.pbar[1], bar.qbar[1], k)
        + g * (bar.pbar[0] * bar.qbar[0] + bar.pbar[1] * bar.qbar[1]))
}

/// U1 in the regime recorded by the config.
pub fn u1(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    cfg: &LyapunovConfig,
) -> Result<f64> {
    if params.n_sites != 3 {
        return Err(Error::InvalidParameter("Lyapunov machinery covers 3-site chains".into()));
    }
    let k = params.k;
    match cfg.regime {
        Regime::KLow if k >= 2.0 => {
            return Err(Error::InvalidParameter("k_low regime needs k < 2".into()))
        }
        Regime::KHigh if k < 2.0 => {
            return Err(Error::InvalidParameter("k_high regime needs k >= 2".into()))
        }
        _ => {}
    }
    let n = cfg.n as f64;
    let h = hamiltonian(state, params);
    let psi = corr.psi()?.eval(state.p[1], state.q[1]);
    match cfg.regime {
        Regime::KLow => {
            Ok(h.powi(cfg.n as i32)
                + 0.5 * n * (params.gamma0 + params.gamma_n) * h.powi(cfg.n as i32 - 1) * psi)
        }
        Regime::KHigh => {
            let bar = to_bar(state, params, corr, BarVariant::Thm43)?;
            let phi2 = corr.phi2()?.eval(state.p[1], state.q[1]);
            let hn1 = h.powi(cfg.n as i32 - 1);
            let xi = n
                * hn1
                * (h0_effective(bar.pbar[0], bar.qbar[0], k)
                    + h0_effective(bar.pbar[1], bar.qbar[1], k));
            let corr_term = n
                * hn1
                * (params.gamma0 * (psi - 2.0 * bar.pbar[0] * phi2)
                    + params.gamma_n * (psi - 2.0 * bar.pbar[1] * phi2));
            Ok(h.powi(cfg.n as i32) - xi + corr_term)
        }
    }
}

/// V = U1 + U0^{u0_power}.
pub fn v_fn(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    cfg: &LyapunovConfig,
) -> Result<f64> {
    Ok(u1(state, params, corr, cfg)? + u0(state, params, corr, cfg)?.powi(cfg.u0_power as i32))
}

/// One evaluated sample of the dissipation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissipationSample {
    pub h: f64,
    pub e1: f64,
    pub lv: f64,
    pub lu0: f64,
    pub u0: f64,
    pub family: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissipationReport {
    pub samples: Vec<DissipationSample>,
    pub skipped: usize,
    /// Largest sampled H at which L V >= 0 (the fitted negativity threshold).
    pub negativity_threshold: f64,
    pub pass_negativity: bool,
    /// Envelope exponent of -L V on breather states vs n + 2/k - 2.
    pub envelope_exponent: f64,
    pub envelope_exponent_err: f64,
    pub predicted_exponent: f64,
    pub pass_envelope: bool,
    /// sup over samples of L U0 + gamma_mix U0, and its decade trend.
    pub u0_drift_sup: f64,
    pub pass_u0_drift: bool,
    /// Equal-temperature stationary average of L V (mean, batch stderr).
    pub stationary_mean: f64,
    pub stationary_stderr: f64,
    pub pass_stationary: bool,
    pub pass: bool,
}

/// Mixture sampler: breather states with E1 log-uniform over [10, 1e6],
/// boundary-loaded states, and Gibbs-like states at T = 1.
pub fn sample_states(
    params: &ChainParams,
    n_points: usize,
    seed: u64,
) -> Vec<(ChainState, String)> {
    let k = params.k;
    let mut rng = stream(seed, 0);
    let mut out = Vec::with_capacity(n_points);
    let per = n_points / 3;
    for i in 0..n_points {
        let family = match i / per.max(1) {
            0 => "breather",
            1 => "boundary",
            _ => "gibbs",
        };
        let mut s = ChainState::zeros(3);
        match family {
            "breather" => {
                let e1 = 10.0_f64.powf(1.0 + 5.0 * rng.gen::<f64>());
                let th = 2.0 * PI * rng.gen::<f64>();
                let (p1, q1) = from_shell_coords(th, e1, k);
                s.p[1] = p1;
                s.q[1] = q1;
                for i in [0usize, 2usize] {
                    s.p[i] = 0.7 * rng.sample::<f64, _>(StandardNormal);
                    s.q[i] = 0.7 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            "boundary" => {
                let e = 10.0_f64.powf(3.0 * rng.gen::<f64>());
                let th = 2.0 * PI * rng.gen::<f64>();
                let site = if rng.gen::<bool>() { 0 } else { 2 };
                let (p, q) = from_shell_coords(th, e, k);
                s.p[site] = p;
                s.q[site] = q;
                for i in 0..3 {
                    if i != site {
                        s.p[i] = 0.7 * rng.sample::<f64, _>(StandardNormal);
                        s.q[i] = 0.7 * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            _ => {
                for i in 0..3 {
                    s.p[i] = rng.sample::<f64, _>(StandardNormal);
                    s.q[i] = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        out.push((s, family.to_string()));
    }
    out
}

/// Smallest u0 exponent in 2..=10 for which L V < 0 on every sampled state
/// with H above `h_cap` and V keeps compact-level-set growth (V >= c H^n).
pub fn calibrate_u0_power(
    params: &ChainParams,
    corr: &CorrectorSet,
    n: u32,
    states: &[(ChainState, String)],
    h_cap: f64,
) -> Result<u32> {
    'powers: for npow in (n + 1)..=10 {
        let cfg = LyapunovConfig::new(params.k, n, npow)?;
        for (s, _) in states {
            let h = hamiltonian(s, params);
            let v = |st: &ChainState| v_fn(st, params, corr, &cfg).unwrap_or(f64::NAN);
            if h >= h_cap {
                match apply_generator(&v, s, params) {
                    Ok(lv) if lv < 0.0 => {}
                    Ok(_) => continue 'powers,
                    Err(_) => continue,
                }
            }
            if h >= 100.0 {
                let val = v_fn(s, params, corr, &cfg)?;
                if val < 1e-3 * h.powi(n as i32) {
                    continue 'powers;
                }
            }
        }
        return Ok(npow);
    }
    Err(Error::InvalidParameter("no u0 power up to 10 closes the inequality".into()))
}

/// Run the full dissipation verification.
pub fn verify_dissipation(
    params: &ChainParams,
    corr: &CorrectorSet,
    cfg: &LyapunovConfig,
    n_points: usize,
    seed: u64,
) -> Result<DissipationReport> {
    let states = sample_states(params, n_points, seed);
    let mut samples = Vec::with_capacity(states.len());
    let mut skipped = 0usize;
    let g = gamma_mix(params);
    for (s, family) in &states {
        let v = |st: &ChainState| v_fn(st, params, corr, cfg).unwrap_or(f64::NAN);
        let u = |st: &ChainState| u0(st, params, corr, cfg).unwrap_or(f64::NAN);
        let (lv, lu0) = match (apply_generator(&v, s, params), apply_generator(&u, s, params)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                skipped += 1;
                continue;
            }
        };
        samples.push(DissipationSample {
            h: hamiltonian(s, params),
            e1: 1.0 + hf_energy(s.p[1], s.q[1], params.k),
            lv,
            lu0,
            u0: u0(s, params, corr, cfg)?,
            family: family.clone(),
        });
    }

    // negativity threshold: largest H with L V >= 0
    let negativity_threshold = samples
        .iter()
        .filter(|s| s.lv >= 0.0)
        .map(|s| s.h)
        .fold(0.0_f64, f64::max);
    let h_max = samples.iter().map(|s| s.h).fold(0.0_f64, f64::max);
    let pass_negativity = negativity_threshold < 1e-3 * h_max;

    // breather envelope: bin by E1 decade, mean of -L V per bin, log-log fit
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for dec in 0..6 {
        let lo = 10.0_f64.powi(dec + 1);
        let hi = 10.0 * lo;
        let vals: Vec<f64> = samples
            .iter()
            .filter(|s| s.family == "breather" && s.e1 >= lo && s.e1 < hi && s.lv < 0.0)
            .map(|s| -s.lv)
            .collect();
        if vals.len() >= 3 && lo >= 1e3 {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            xs.push((lo * hi).sqrt());
            ys.push(mean);
        }
    }
    let fit = if xs.len() >= 3 {
        crate::fit::loglog_slope(&xs, &ys)
    } else {
        line_fit(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0])
    };
    let predicted_exponent = cfg.n as f64 + 2.0 / params.k - 2.0;
    let pass_envelope = (fit.slope - predicted_exponent).abs() <= 0.1;

    // U0 drift: sup of L U0 + g U0 with a no-growth decade trend
    let drift: Vec<(f64, f64)> = samples.iter().map(|s| (s.h, s.lu0 + g * s.u0)).collect();
    let u0_drift_sup = drift.iter().map(|&(_, d)| d).fold(f64::NEG_INFINITY, f64::max);
    let mut dec_max = vec![f64::NEG_INFINITY; 7];
    for &(h, d) in &drift {
        let idx = (h.max(1.0).log10().floor() as usize).min(6);
        dec_max[idx] = dec_max[idx].max(d);
    }
    let first = dec_max.iter().cloned().find(|x| x.is_finite()).unwrap_or(0.0);
    let last = dec_max.iter().rev().cloned().find(|x| x.is_finite()).unwrap_or(0.0);
    let pass_u0_drift = last <= 1.2 * first.abs().max(1.0) + first.max(0.0);

    // equal-temperature stationary average of L V
    let (stationary_mean, stationary_stderr) =
        stationary_lv_average(params, corr, cfg, seed.wrapping_add(1))?;
    let pass_stationary = stationary_mean.abs() <= 4.0 * stationary_stderr + 0.1;

    let pass = pass_negativity && pass_envelope && pass_u0_drift && pass_stationary;
    Ok(DissipationReport {
        samples,
        skipped,
        negativity_threshold,
        pass_negativity,
        envelope_exponent: fit.slope,
        envelope_exponent_err: fit.slope_stderr,
        predicted_exponent,
        pass_envelope,
        u0_drift_sup,
        pass_u0_drift,
        stationary_mean,
        stationary_stderr,
        pass_stationary,
        pass,
    })
}

/// Average L V along a long equal-temperature equilibrium run; the invariant
/// Gibbs measure makes the true expectation zero.
fn stationary_lv_average(
    params: &ChainParams,
    corr: &CorrectorSet,
    cfg: &LyapunovConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if (params.t0 - params.tn).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "stationary check needs equal temperatures".into(),
        ));
    }
    let icfg = IntegratorConfig::new(2e-3, 3000.0, 1, seed)?;
    let mut rng = stream(icfg.seed, 0);
    let mut state = ChainState::zeros(3);
    state.p[1] = 1.0;
    let mut scratch = vec![0.0; 3];
    let n_steps = (icfg.t_final / icfg.h) as usize;
    let burn = n_steps / 10;
    let sample_every = 500;
    let mut vals = Vec::new();
    for s in 0..n_steps {
        step(&mut state, params, icfg.h, &mut rng, &mut scratch);
        if s >= burn && s % sample_every == 0 {
            let v = |st: &ChainState| v_fn(st, params, corr, cfg).unwrap_or(f64::NAN);
            if let Ok(lv) = apply_generator(&v, &state, params) {
                vals.push(lv);
            }
        }
    }
    // batch means over the correlated series
    let nb = 16;
    let bs = vals.len() / nb;
    let batch_means: Vec<f64> =
        (0..nb).map(|b| vals[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64).collect();
    Ok(mean_stderr(&batch_means))
}
