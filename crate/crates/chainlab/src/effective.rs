//! The decoupling change of variables for the three-site chain and the
//! explicit remainder / noise-coefficient expressions, with trajectory-based
//! verification of the error bounds.
//!
//! Two variants: the cutoff construction valid for k > 3/2 (for k >= 2 it
//! degenerates to the simple shift pbar = p + Phi, qbar = q), and the
//! uncut construction for k >= 2 with qbar = q + Phi2 that has smaller
//! remainders at high middle energy. In bar variables the boundary pair
//! obeys d qbar = (pbar + R_q) dt + Sigma_q dw and
//! d pbar = (-V'(qbar) - qbar - gamma pbar + R_p) dt + Sigma_p dw.

use crate::chain::{hamiltonian, ChainParams, ChainState};
use crate::corrector::{cutoffs, CorrectorSet};
use crate::decay::breather_init;
use crate::error::{Error, Result};
use crate::freeosc::hf_energy;
use crate::integrate::step;
use crate::rng::stream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Cutoff exponent of the k < 2 construction (fixed).
pub const CUTOFF_ALPHA: f64 = 1.5;
/// Bound-sharpening exponent for the k < 2 range.
pub const DELTA: f64 = 1.0 / 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarVariant {
    /// k > 3/2; for k >= 2 the shift is pbar = p + Phi, qbar = q, for
    /// 3/2 < k < 2 the cutoff construction with alpha = 3/2.
    Thm41,
    /// k >= 2 (the theorem assumes k > 2; the k = 2 boundary stays bounded
    /// and is accepted so the k_high Lyapunov construction can use it).
    Thm43,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BarState {
    /// Boundary sites in chain order (site 0, site N).
    pub pbar: [f64; 2],
    pub qbar: [f64; 2],
    /// Ebar_i = 1 + H_f(pbar_i, qbar_i).
    pub ebar: [f64; 2],
    pub variant: BarVariant,
}

fn check_regime(variant: BarVariant, k: f64) -> Result<()> {
    match variant {
        BarVariant::Thm41 if k > 1.5 => Ok(()),
        BarVariant::Thm43 if k >= 2.0 => Ok(()),
        _ => Err(Error::InvalidParameter(format!(
            "variant {variant:?} needs {} , got k = {k}",
            if variant == BarVariant::Thm41 { "k > 3/2" } else { "k >= 2" }
        ))),
    }
}

fn check_three_site(params: &ChainParams) -> Result<()> {
    if params.n_sites != 3 {
        return Err(Error::InvalidParameter("bar variables are defined for 3 sites".into()));
    }
    Ok(())
}

/// Increasing smooth step derivatives (analytic). With A = exp(-1/(2-x)) and
/// B = exp(-1/(x-1)), the step is B/(A+B) on (1,2).
fn step_up_d1(x: f64) -> f64 {
    if x <= 1.0 || x >= 2.0 {
        return 0.0;
    }
    let a = (-1.0 / (2.0 - x)).exp();
    let b = (-1.0 / (x - 1.0)).exp();
    let ap = -a / (2.0 - x).powi(2);
    let bp = b / (x - 1.0).powi(2);
    (bp * (a + b) - b * (ap + bp)) / (a + b).powi(2)
}

fn step_up_d2(x: f64) -> f64 {
    if x <= 1.0 || x >= 2.0 {
        return 0.0;
    }
    let a = (-1.0 / (2.0 - x)).exp();
    let b = (-1.0 / (x - 1.0)).exp();
    let ap = -a / (2.0 - x).powi(2);
    let bp = b / (x - 1.0).powi(2);
    let app = a / (2.0 - x).powi(4) - 2.0 * a / (2.0 - x).powi(3);
    let bpp = b / (x - 1.0).powi(4) - 2.0 * b / (x - 1.0).powi(3);
    let s = a + b;
    let sp = ap + bp;
    let spp = app + bpp;
    ((bpp * s - b * spp) * s - 2.0 * sp * (bp * s - b * sp)) / s.powi(3)
}

struct Shifts {
    phi_p: f64,
    phi_q: [f64; 2],
}

fn shifts(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    variant: BarVariant,
) -> Result<Shifts> {
    let k = params.k;
    let (p1, q1) = (state.p[1], state.q[1]);
    let phi = corr.phi.eval(p1, q1);
    match variant {
        BarVariant::Thm41 if k >= 2.0 => Ok(Shifts { phi_p: phi, phi_q: [0.0, 0.0] }),
        BarVariant::Thm41 => {
            let phi2 = corr.phi2()?.eval(p1, q1);
            let e1 = 1.0 + hf_energy(p1, q1, k);
            let mut phi_q = [0.0, 0.0];
            for (slot, site) in [(0usize, 0usize), (1usize, 2usize)] {
                let ei = 1.0 + hf_energy(state.p[site], state.q[site], k);
                phi_q[slot] = cutoffs::smooth_step_up(e1 / ei.powf(CUTOFF_ALPHA)) * phi2;
            }
            Ok(Shifts { phi_p: phi, phi_q })
        }
        BarVariant::Thm43 => {
            let phi2 = corr.phi2()?.eval(p1, q1);
            Ok(Shifts { phi_p: phi, phi_q: [phi2, phi2] })
        }
    }
}

/// Apply the change of variables at a state.
pub fn to_bar(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    variant: BarVariant,
) -> Result<BarState> {
    check_three_site(params)?;
    check_regime(variant, params.k)?;
    let sh = shifts(state, params, corr, variant)?;
    let gammas = [params.gamma0, params.gamma_n];
    let mut pbar = [0.0; 2];
    let mut qbar = [0.0; 2];
    let mut ebar = [0.0; 2];
    for (slot, site) in [(0usize, 0usize), (1usize, 2usize)] {
        let phip = match variant {
            BarVariant::Thm41 if params.k >= 2.0 => sh.phi_p,
            _ => sh.phi_p - gammas[slot] * corr.phi2()?.eval(state.p[1], state.q[1]),
        };
        pbar[slot] = state.p[site] + phip;
        qbar[slot] = state.q[site] + sh.phi_q[slot];
        ebar[slot] = 1.0 + hf_energy(pbar[slot], qbar[slot], params.k);
    }
    Ok(BarState { pbar, qbar, ebar, variant })
}

/// Invert the change of variables given the (unchanged) middle coordinates.
/// The cutoff mode needs a short fixed-point iteration because the q-shift
/// depends on the boundary energy being reconstructed.
pub fn from_bar(
    bar: &BarState,
    middle: (f64, f64),
    params: &ChainParams,
    corr: &CorrectorSet,
) -> Result<ChainState> {
    check_regime(bar.variant, params.k)?;
    let k = params.k;
    let (p1, q1) = middle;
    let phi = corr.phi.eval(p1, q1);
    let gammas = [params.gamma0, params.gamma_n];
    let mut state = ChainState::zeros(3);
    state.p[1] = p1;
    state.q[1] = q1;
    for (slot, site) in [(0usize, 0usize), (1usize, 2usize)] {
        let phip = match bar.variant {
            BarVariant::Thm41 if k >= 2.0 => phi,
            _ => phi - gammas[slot] * corr.phi2()?.eval(p1, q1),
        };
        let p = bar.pbar[slot] - phip;
        let q = match bar.variant {
            BarVariant::Thm41 if k >= 2.0 => bar.qbar[slot],
            BarVariant::Thm43 => bar.qbar[slot] - corr.phi2()?.eval(p1, q1),
            BarVariant::Thm41 => {
                let phi2 = corr.phi2()?.eval(p1, q1);
                let e1 = 1.0 + hf_energy(p1, q1, k);
                let mut q = bar.qbar[slot];
                for _ in 0..60 {
                    let ei = 1.0 + hf_energy(p, q, k);
                    let next = bar.qbar[slot]
                        - cutoffs::smooth_step_up(e1 / ei.powf(CUTOFF_ALPHA)) * phi2;
                    if (next - q).abs() < 1e-15 * (1.0 + q.abs()) {
                        q = next;
                        break;
                    }
                    q = next;
                }
                q
            }
        };
        state.p[site] = p;
        state.q[site] = q;
    }
    Ok(state)
}

/// Remainder and noise coefficients of the bar dynamics at one state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RemainderSample {
    pub r_p: [f64; 2],
    pub r_q: [f64; 2],
    pub sigma_p: [f64; 2],
    pub sigma_q: [f64; 2],
    pub ebar: [f64; 2],
    /// E_1 = 1 + H_f(p_1, q_1) at the sampled state.
    pub e1: f64,
    pub h_total: f64,
}

/// Evaluate R_p, R_q, Sigma_p, Sigma_q from Ito's formula applied to the
/// corrector shifts, using analytic corrector partials. The generator acts
/// on Phi_p (a function of the middle pair alone) through transport only;
/// the cutoff factor of the k < 2 construction also feels the thermostat
/// second-order term through its boundary-momentum dependence.
pub fn remainders(
    state: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    variant: BarVariant,
) -> Result<RemainderSample> {
    check_three_site(params)?;
    check_regime(variant, params.k)?;
    let k = params.k;
    let (p1, q1) = (state.p[1], state.q[1]);
    let h1 = hf_energy(p1, q1, k);
    let phi = corr.phi.eval(p1, q1);
    let (dp_phi, _) = corr.phi.eval_partials(p1, q1);
    let d = state.q[0] + state.q[2] - 2.0 * q1;
    // R(P,Q) = Q psi(H_f): the cutoff source of the Phi equation
    let r_cut = q1 * cutoffs::smooth_step_down(h1);
    let vp = |q: f64| {
        if q == 0.0 {
            0.0
        } else {
            q.signum() * q.abs().powf(2.0 * k - 1.0)
        }
    };

    let bar = to_bar(state, params, corr, variant)?;
    let gammas = [params.gamma0, params.gamma_n];
    let sigmas = [params.sigma0(), params.sigma_n()];
    let temps = [params.t0, params.tn];
    let mut out = RemainderSample {
        r_p: [0.0; 2],
        r_q: [0.0; 2],
        sigma_p: [0.0; 2],
        sigma_q: [0.0; 2],
        ebar: bar.ebar,
        e1: 1.0 + h1,
        h_total: hamiltonian(state, params),
    };

    for (slot, site) in [(0usize, 0usize), (1usize, 2usize)] {
        let gamma = gammas[slot];
        let sigma = sigmas[slot];
        match variant {
            BarVariant::Thm41 if k >= 2.0 => {
                // Phi_p = Phi, Phi_q = 0
                out.r_q[slot] = -phi;
                out.r_p[slot] = gamma * phi + d * dp_phi + r_cut;
                out.sigma_p[slot] = sigma;
                out.sigma_q[slot] = 0.0;
            }
            BarVariant::Thm43 => {
                let phi2c = corr.phi2()?;
                let phi2 = phi2c.eval(p1, q1);
                let (dp_phi2, _) = phi2c.eval_partials(p1, q1);
                out.r_q[slot] = d * dp_phi2 + gamma * phi2;
                out.r_p[slot] = r_cut + d * (dp_phi - gamma * dp_phi2)
                    - (gamma * gamma - 1.0) * phi2
                    + vp(state.q[site] + phi2)
                    - vp(state.q[site]);
                out.sigma_p[slot] = sigma;
                out.sigma_q[slot] = 0.0;
            }
            BarVariant::Thm41 => {
                let phi2c = corr.phi2()?;
                let phi2 = phi2c.eval(p1, q1);
                let (dp_phi2, _) = phi2c.eval_partials(p1, q1);
                let (pi, qi) = (state.p[site], state.q[site]);
                let e1 = 1.0 + h1;
                let ei = 1.0 + hf_energy(pi, qi, k);
                let g = e1 / ei.powf(CUTOFF_ALPHA);
                let cut = cutoffs::smooth_step_up(g);
                let cut1 = step_up_d1(g);
                let cut2 = step_up_d2(g);
                let sig2 = sigma * sigma;
                // Ito on g = E1 / Ei^alpha
                let l_e1 = p1 * d;
                let l_ei = -gamma * pi * pi + pi * (q1 - qi) + 0.5 * sig2;
                let l_g = l_e1 / ei.powf(CUTOFF_ALPHA)
                    - CUTOFF_ALPHA * e1 * ei.powf(-CUTOFF_ALPHA - 1.0) * l_ei
                    + 0.5
                        * sig2
                        * CUTOFF_ALPHA
                        * (CUTOFF_ALPHA + 1.0)
                        * e1
                        * ei.powf(-CUTOFF_ALPHA - 2.0)
                        * pi
                        * pi;
                let dg_dpi = -CUTOFF_ALPHA * e1 * ei.powf(-CUTOFF_ALPHA - 1.0) * pi;
                let l_cut = cut1 * l_g + 0.5 * sig2 * cut2 * dg_dpi * dg_dpi;
                let l_phi2 = phi + d * dp_phi2;
                let phi_p = phi - gamma * phi2;
                let l_phi_p = (r_cut - q1) + d * dp_phi - gamma * l_phi2;
                let phi_q = cut * phi2;
                out.r_q[slot] = cut * l_phi2 + phi2 * l_cut - phi_p;
                out.r_p[slot] = vp(qi + phi_q) - vp(qi)
                    + phi_q
                    + gamma * phi_p
                    + l_phi_p
                    + q1;
                out.sigma_p[slot] = sigma;
                out.sigma_q[slot] = sigma * phi2 * cut1 * dg_dpi;
            }
        }
        // keep temps referenced for the thermostat bookkeeping check below
        let _ = temps[slot];
    }
    Ok(out)
}

/// Bound-normalized remainder ratios for one sample.
fn bound_ratios(r: &RemainderSample, variant: BarVariant, k: f64, delta: f64) -> Vec<f64> {
    let (e0, e2) = (r.ebar[0], r.ebar[1]);
    match variant {
        BarVariant::Thm41 => {
            let mut v = Vec::with_capacity(8);
            for slot in 0..2 {
                let ei = r.ebar[slot];
                let eo = r.ebar[1 - slot];
                v.push(r.r_p[slot].abs() / (e0 + e2).powf(0.5 - delta));
                v.push(
                    r.r_q[slot].abs()
                        / (ei.powf(0.5 / k - delta) + eo.powf(0.5 / k) / ei.powf(delta)),
                );
                v.push(r.sigma_p[slot].abs());
                v.push(r.sigma_q[slot].abs() * ei.sqrt());
            }
            v
        }
        BarVariant::Thm43 => {
            let h = r.h_total;
            let mut v = Vec::with_capacity(4);
            for slot in 0..2 {
                v.push(r.r_p[slot].abs() / ((e0 + e2).powi(2) * h.powf(1.5 / k - 1.0)));
                v.push(r.r_q[slot].abs() / ((e0 + e2) * h.powf(1.5 / k - 1.0)));
            }
            v
        }
    }
}

pub fn ratio_names(variant: BarVariant) -> Vec<String> {
    match variant {
        BarVariant::Thm41 => ["Rp0", "Rq0", "Sp0", "Sq0", "Rp2", "Rq2", "Sp2", "Sq2"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        BarVariant::Thm43 => {
            ["Rp0", "Rq0", "Rp2", "Rq2"].iter().map(|s| s.to_string()).collect()
        }
    }
}

/// Verdict of the no-growth test over a trajectory's remainder ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: BarVariant,
    pub delta: f64,
    pub ratio_names: Vec<String>,
    /// Decade edges of E_1 covered by the samples.
    pub decade_edges: Vec<f64>,
    /// decade_max[ratio][decade]
    pub decade_max: Vec<Vec<f64>>,
    pub sup_ratio: Vec<f64>,
    /// last-decade max <= 1.2 x first-decade max, per ratio
    pub pass_per_ratio: Vec<bool>,
    pub pass: bool,
}

/// Evaluate remainders along sampled states and test each normalized ratio
/// for growth across decades of middle energy E_1. Pass rule: the maximum
/// over the last covered decade is at most 1.2 times the maximum over the
/// first.
pub fn verify_error_bounds(
    samples: &[ChainState],
    params: &ChainParams,
    corr: &CorrectorSet,
    variant: BarVariant,
    delta: f64,
) -> Result<BoundReport> {
    let names = ratio_names(variant);
    let mut e1s = Vec::with_capacity(samples.len());
    let mut ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); names.len()];
    for s in samples {
        let r = remainders(s, params, corr, variant)?;
        let v = bound_ratios(&r, variant, params.k, delta);
        e1s.push(r.e1);
        for (col, val) in ratios.iter_mut().zip(v) {
            col.push(val);
        }
    }
    let lo = e1s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e1s.iter().cloned().fold(0.0_f64, f64::max);
    let d_lo = lo.log10().floor() as i32;
    let d_hi = hi.log10().ceil() as i32;
    let n_dec = (d_hi - d_lo).max(1) as usize;
    let decade_edges: Vec<f64> = (d_lo..=d_hi).map(|d| 10.0_f64.powi(d)).collect();

    let mut decade_max = vec![vec![0.0_f64; n_dec]; names.len()];
    for (i, &e1) in e1s.iter().enumerate() {
        let mut d = (e1.log10().floor() as i32 - d_lo) as usize;
        if d >= n_dec {
            d = n_dec - 1;
        }
        for (ri, col) in ratios.iter().enumerate() {
            decade_max[ri][d] = decade_max[ri][d].max(col[i]);
        }
    }

    let mut pass_per_ratio = Vec::with_capacity(names.len());
    let mut sup_ratio = Vec::with_capacity(names.len());
    for dm in &decade_max {
        let first = dm.iter().cloned().find(|&x| x > 0.0).unwrap_or(0.0);
        let last = dm.iter().rev().cloned().find(|&x| x > 0.0).unwrap_or(0.0);
        sup_ratio.push(dm.iter().cloned().fold(0.0_f64, f64::max));
        // identically-zero ratios (e.g. Sigma_q in the simple modes) pass
        pass_per_ratio.push(first == 0.0 || last <= 1.2 * first);
    }
    let pass = pass_per_ratio.iter().all(|&b| b);
    Ok(BoundReport {
        variant,
        delta,
        ratio_names: names,
        decade_edges,
        decade_max,
        sup_ratio,
        pass_per_ratio,
        pass,
    })
}

/// Short breather segments at fixed energy levels, pooled into one sample
/// set. A single decaying trajectory through [1e2, 1e6] is out of reach for
/// k > 2 (the decay time grows like H^{2-2/k}), so each level is simulated
/// just long enough for the boundary oscillators to settle on the fast
/// oscillation, then sampled.
pub fn breather_ladder_samples(
    params: &ChainParams,
    e_levels: &[f64],
    h: f64,
    seg_time: f64,
    burn_in: f64,
    stride: usize,
    seed: u64,
) -> Result<Vec<ChainState>> {
    let segs: Vec<Vec<ChainState>> = e_levels
        .par_iter()
        .enumerate()
        .map(|(li, &e_mid)| -> Result<Vec<ChainState>> {
            let mut rng = stream(seed, li as u64);
            let mut state = breather_init(params, e_mid);
            let mut scratch = vec![0.0; params.n_sites];
            let n_steps = (seg_time / h).round() as usize;
            let burn = (burn_in / h).round() as usize;
            let mut out = Vec::new();
            for s in 0..n_steps {
                step(&mut state, params, h, &mut rng, &mut scratch);
                if !state.is_finite() {
                    return Err(Error::BlowUp { t: s as f64 * h });
                }
                if s >= burn && (s - burn) % stride == 0 {
                    out.push(state.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(segs.into_iter().flatten().collect())
}

/// Micro-step regression oracle: estimate the drift of pbar and qbar from
/// many short stochastic trajectories and compare with the analytic
/// effective dynamics -V'(qbar) - qbar - gamma pbar + R_p (and pbar + R_q).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftCheck {
    pub measured_dp: [f64; 2],
    pub stderr_dp: [f64; 2],
    pub predicted_dp: [f64; 2],
    pub measured_dq: [f64; 2],
    pub stderr_dq: [f64; 2],
    pub predicted_dq: [f64; 2],
}

pub fn microstep_drift_check(
    state0: &ChainState,
    params: &ChainParams,
    corr: &CorrectorSet,
    variant: BarVariant,
    n_paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<DriftCheck> {
    let bar0 = to_bar(state0, params, corr, variant)?;
    let rem = remainders(state0, params, corr, variant)?;
    let k = params.k;
    let vp = |q: f64| {
        if q == 0.0 {
            0.0
        } else {
            q.signum() * q.abs().powf(2.0 * k - 1.0)
        }
    };
    let gammas = [params.gamma0, params.gamma_n];
    let mut predicted_dp = [0.0; 2];
    let mut predicted_dq = [0.0; 2];
    for slot in 0..2 {
        predicted_dp[slot] = -vp(bar0.qbar[slot]) - bar0.qbar[slot]
            - gammas[slot] * bar0.pbar[slot]
            + rem.r_p[slot];
        predicted_dq[slot] = bar0.pbar[slot] + rem.r_q[slot];
    }

    let n_steps = (horizon / dt).round() as usize;
    let chunks = 32usize;
    let per_chunk = n_paths / chunks;
    let sums: Vec<[f64; 8]> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| -> Result<[f64; 8]> {
            let mut rng = stream(seed, c);
            let mut acc = [0.0_f64; 8];
            let mut scratch = vec![0.0; params.n_sites];
            for _ in 0..per_chunk {
                let mut s = state0.clone();
                for _ in 0..n_steps {
                    step(&mut s, params, dt, &mut rng, &mut scratch);
                }
                let bar = to_bar(&s, params, corr, variant)?;
                for slot in 0..2 {
                    let dp = (bar.pbar[slot] - bar0.pbar[slot]) / horizon;
                    let dq = (bar.qbar[slot] - bar0.qbar[slot]) / horizon;
                    acc[4 * slot] += dp;
                    acc[4 * slot + 1] += dp * dp;
                    acc[4 * slot + 2] += dq;
                    acc[4 * slot + 3] += dq * dq;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let n = (per_chunk * chunks) as f64;
    let mut total = [0.0_f64; 8];
    for s in &sums {
        for i in 0..8 {
            total[i] += s[i];
        }
    }
    let mut out = DriftCheck {
        measured_dp: [0.0; 2],
        stderr_dp: [0.0; 2],
        predicted_dp,
        measured_dq: [0.0; 2],
        stderr_dq: [0.0; 2],
        predicted_dq,
    };
    for slot in 0..2 {
        let mean_p = total[4 * slot] / n;
        let var_p = (total[4 * slot + 1] / n - mean_p * mean_p).max(0.0);
        out.measured_dp[slot] = mean_p;
        out.stderr_dp[slot] = (var_p / n).sqrt();
        let mean_q = total[4 * slot + 2] / n;
        let var_q = (total[4 * slot + 3] / n - mean_q * mean_q).max(0.0);
        out.measured_dq[slot] = mean_q;
        out.stderr_dq[slot] = (var_q / n).sqrt();
    }
    Ok(out)
}

/// Trajectory accessor used by the CLI: rebuild states from a flat-state CSV
/// produced by `decay --dump-states`.
pub fn states_from_rows(rows: &[Vec<f64>], n_sites: usize) -> Result<Vec<ChainState>> {
    rows.iter()
        .map(|row| {
            if row.len() != 2 * n_sites + 1 {
                return Err(Error::InvalidParameter(format!(
                    "state row must have 1 + 2*{n_sites} columns, got {}",
                    row.len()
                )));
            }
            ChainState::from_flat(&row[1..])
        })
        .collect()
}
