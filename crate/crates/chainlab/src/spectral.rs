//! Approximate eigenfunctions of the weighted-space generator and
//! Monte-Carlo measurements of their residual scalings.
//!
//! The three-site family is
//! phi = C exp(-a0 Hb0 - a2 Hb2) chi(H1 / E), with Hb_i the boundary energy
//! evaluated at pbar_i = p_i + Phi(p1, q1) and chi a smooth bump supported on
//! [1, 2]. Applying the conjugated generator, the X_{H1} transport term and
//! the q1 (d_{p0} + d_{p2}) coupling term cancel exactly; the surviving terms
//! are evaluated here in closed form (with corrector partials from the
//! tables) and cross-checked against the finite-difference generator.
//!
//! The five-site family shifts sites 1 and 3 by Phi and Phi2 of the middle
//! oscillator; its residual is the R1..R5 decomposition of X_H H0(bar) plus
//! the mirrored H_r terms and the cutoff transport term.
//!
//! Norm estimates use importance sampling: the middle oscillator is drawn
//! uniformly in (theta, E) with the shell-coordinate Jacobian as weight, and
//! the boundary factors are drawn exactly from their Gibbs densities, so
//! they cancel against the integrand up to a constant. Numerator and
//! denominator share one sample stream (common random numbers), and the same
//! base sample is reused across ladder rungs.

use crate::chain::{ChainParams, ChainState};
use crate::corrector::{cutoffs, CorrectorSet};
use crate::error::{Error, Result};
use crate::fit::mean_stderr;
use crate::freeosc::{hf_energy, omega, radius_profile};
use crate::rng::stream;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ThreeSite,
    LongChain,
}

/// A quasi-eigenfunction configuration. The normalization constant is left
/// symbolic (C = 1 convention); every reported quantity is a ratio or a
/// scaling slope, which does not depend on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenfunctionSpec {
    pub variant: Variant,
    pub params: ChainParams,
    /// Shell energy E of the chi(H_mid / E) cutoff; supports are [E, 2E].
    pub e_shell: f64,
    /// Build phi* (exponents alpha_i^*, adjoint generator) instead of phi.
    pub starred: bool,
}

impl EigenfunctionSpec {
    pub fn new(variant: Variant, params: ChainParams, e_shell: f64, starred: bool) -> Result<Self> {
        match variant {
            Variant::ThreeSite if params.n_sites != 3 => {
                return Err(Error::InvalidParameter("three_site variant needs 3 sites".into()))
            }
            Variant::LongChain if params.n_sites != 5 => {
                return Err(Error::InvalidParameter("long_chain variant needs 5 sites".into()))
            }
            _ => {}
        }
        if e_shell < 3.0 {
            return Err(Error::InvalidParameter(format!(
                "shell energy must be >= 3 (disjoint ladder), got {e_shell}"
            )));
        }
        Ok(Self { variant, params, e_shell, starred })
    }

    /// Exponent coefficient used in the Gibbs factor of boundary `site`.
    fn a_exp(&self, site: usize) -> f64 {
        if self.starred {
            self.params.alpha_w_star(site)
        } else {
            self.params.alpha_w()
        }
    }

    fn check_tables(&self, corr: &CorrectorSet) -> Result<()> {
        if (corr.k - self.params.k).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "corrector table built for k = {}, spec has k = {}",
                corr.k, self.params.k
            )));
        }
        if self.variant == Variant::LongChain && corr.phi2.is_none() {
            return Err(Error::CorrectorUnbounded(corr.k));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub estimator: String,
}

fn v1_prime(q: f64, k: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q.signum() * q.abs().powf(2.0 * k - 1.0)
    }
}

/// Value of phi (or phi*) at a state; zero outside the chi support.
pub fn eval_phi(spec: &EigenfunctionSpec, corr: &CorrectorSet, state: &ChainState) -> Result<f64> {
    spec.check_tables(corr)?;
    let k = spec.params.k;
    let v1 = |q: f64| q.abs().powf(2.0 * k) / (2.0 * k);
    match spec.variant {
        Variant::ThreeSite => {
            let h1 = hf_energy(state.p[1], state.q[1], k);
            let chi = cutoffs::chi_bump(h1 / spec.e_shell);
            if chi == 0.0 {
                return Ok(0.0);
            }
            let phi = corr.phi.eval(state.p[1], state.q[1]);
            let hb = |i: usize| {
                let pb = state.p[i] + phi;
                0.5 * pb * pb + v1(state.q[i]) + 0.5 * state.q[i] * state.q[i]
            };
            Ok((-spec.a_exp(0) * hb(0) - spec.a_exp(2) * hb(2)).exp() * chi)
        }
        Variant::LongChain => {
            let hc = hf_energy(state.p[2], state.q[2], k);
            let chi = cutoffs::chi_bump(hc / spec.e_shell);
            if chi == 0.0 {
                return Ok(0.0);
            }
            let phi = corr.phi.eval(state.p[2], state.q[2]);
            let phi2 = corr.phi2()?.eval(state.p[2], state.q[2]);
            let (pb1, qb1) = (state.p[1] + phi, state.q[1] + phi2);
            let (pb3, qb3) = (state.p[3] + phi, state.q[3] + phi2);
            let h0 = 0.5 * (state.p[0].powi(2) + pb1 * pb1)
                + v1(state.q[0])
                + v1(qb1)
                + 0.5 * ((state.q[0] - qb1).powi(2) + qb1 * qb1);
            let hr = 0.5 * qb3 * qb3
                + 0.5 * (pb3 * pb3 + state.p[4].powi(2))
                + v1(qb3)
                + v1(state.q[4])
                + 0.5 * (state.q[4] - qb3).powi(2);
            Ok((-spec.a_exp(0) * h0 - spec.a_exp(4) * hr).exp() * chi)
        }
    }
}

/// The bracket pair (T_other, T_chi) such that the residual is
/// (T_other chi + T_chi chi') * exp(-sum a Hb). Factoring out chi keeps the
/// evaluation finite at the support edges where chi -> 0. `e_shell` is the
/// cutoff scale of the rung being evaluated.
fn residual_brackets(
    spec: &EigenfunctionSpec,
    corr: &CorrectorSet,
    state: &ChainState,
    e_shell: f64,
) -> Result<(f64, f64)> {
    let k = spec.params.k;
    let p = &spec.params;
    let sign = if spec.starred { -1.0 } else { 1.0 };
    match spec.variant {
        Variant::ThreeSite => {
            let (p1, q1) = (state.p[1], state.q[1]);
            let phi = corr.phi.eval(p1, q1);
            let (dp_phi, _) = corr.phi.eval_partials(p1, q1);
            let d = state.q[0] + state.q[2] - 2.0 * q1;
            let (a0, a2) = (spec.a_exp(0), spec.a_exp(2));
            let (pb0, pb2) = (state.p[0] + phi, state.p[2] + phi);
            let mut t_other = sign
                * (a0 * (v1_prime(state.q[0], k) + state.q[0]) * phi
                    + a2 * (v1_prime(state.q[2], k) + state.q[2]) * phi
                    - d * (a0 * pb0 + a2 * pb2) * dp_phi);
            // OU parts: gamma_i T_i a_i Phi ((alpha + alpha*) p_i + a_i Phi)
            for (site, gamma, temp, a) in
                [(0usize, p.gamma0, p.t0, a0), (2usize, p.gamma_n, p.tn, a2)]
            {
                let asum = p.alpha_w() + p.alpha_w_star(site);
                t_other += gamma * temp * a * phi * (asum * state.p[site] + a * phi);
            }
            let t_chi = sign * d * p1 / e_shell;
            Ok((t_other, t_chi))
        }
        Variant::LongChain => {
            let (p2, q2) = (state.p[2], state.q[2]);
            let phi = corr.phi.eval(p2, q2);
            let phi2c = corr.phi2()?;
            let phi2 = phi2c.eval(p2, q2);
            let (dp_phi, _) = corr.phi.eval_partials(p2, q2);
            let (dp_phi2, _) = phi2c.eval_partials(p2, q2);
            let d = state.q[1] + state.q[3] - 2.0 * q2;
            // X_H H0(bar) = R1 + ... + R5, with B the outer boundary site and
            // I the inner (corrected) site of the half-chain.
            let side = |p_b: f64, p_i: f64, q_b: f64, q_i: f64| {
                let (pb_i, qb_i) = (p_i + phi, q_i + phi2);
                let fb_i = v1_prime(qb_i, k);
                let r1 = -p_b * phi2;
                let r2 = (fb_i + 2.0 * qb_i - q_b) * d * dp_phi2;
                let r3 = pb_i * (fb_i - v1_prime(q_i, k));
                let r4 = pb_i * d * dp_phi;
                let r5 = 2.0 * pb_i * phi2;
                r1 + r2 + r3 + r4 + r5
            };
            let xh_h0 = side(state.p[0], state.p[1], state.q[0], state.q[1]);
            let xh_hr = side(state.p[4], state.p[3], state.q[4], state.q[3]);
            let t_other = sign * (-spec.a_exp(0) * xh_h0 - spec.a_exp(4) * xh_hr);
            let t_chi = sign * d * p2 / e_shell;
            Ok((t_other, t_chi))
        }
    }
}

/// Value of L~ phi (or L~* phi*) from the analytic surviving terms.
pub fn eval_residual(
    spec: &EigenfunctionSpec,
    corr: &CorrectorSet,
    state: &ChainState,
) -> Result<f64> {
    spec.check_tables(corr)?;
    let k = spec.params.k;
    let mid = if spec.variant == Variant::ThreeSite { 1 } else { 2 };
    let h_mid = hf_energy(state.p[mid], state.q[mid], k);
    let s = h_mid / spec.e_shell;
    let chi = cutoffs::chi_bump(s);
    let chi_d = cutoffs::chi_bump_deriv(s);
    if chi == 0.0 && chi_d == 0.0 {
        return Ok(0.0);
    }
    let (t_other, t_chi) = residual_brackets(spec, corr, state, spec.e_shell)?;
    let envelope = eval_phi(spec, corr, state)? / chi.max(f64::MIN_POSITIVE);
    // recompute the envelope without dividing when chi underflows
    let env = if chi > 1e-290 {
        envelope
    } else {
        return Ok(0.0);
    };
    Ok((t_other * chi + t_chi * chi_d) * env)
}

/// Ladder measurement: per-rung norm and residual-ratio estimates plus
/// log-log slope fits with batch-based standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderScaling {
    pub energies: Vec<f64>,
    pub norms: Vec<MCEstimate>,
    pub ratios: Vec<MCEstimate>,
    pub norm_slope: f64,
    pub norm_slope_stderr: f64,
    pub ratio_slope: f64,
    pub ratio_slope_stderr: f64,
    pub predicted_norm_slope: f64,
    pub predicted_ratio_slope: f64,
    pub rejection_acceptance: f64,
}

const N_BATCHES: usize = 16;

struct BatchAccum {
    phi2: Vec<f64>,
    res2: Vec<f64>,
    proposals: u64,
    accepts: u64,
}

fn sample_boundary_q(rng: &mut ChaCha12Rng, a: f64, k: f64, counters: &mut (u64, u64)) -> f64 {
    // target density ~ exp(-2a (q^2/2 + |q|^{2k}/(2k))): Gaussian proposal,
    // accept with exp(-2a |q|^{2k}/(2k)) <= 1
    let sd = 1.0 / (2.0 * a).sqrt();
    loop {
        counters.0 += 1;
        let q: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let acc = (-2.0 * a * q.abs().powf(2.0 * k) / (2.0 * k)).exp();
        if rng.gen::<f64>() < acc {
            counters.1 += 1;
            return q;
        }
        if counters.0 > 1000 && (counters.1 as f64) < 0.01 * counters.0 as f64 {
            // caller turns this into ProposalMismatch
            counters.1 = u64::MAX;
            return 0.0;
        }
    }
}

fn sample_coupled_q_pair(
    rng: &mut ChaCha12Rng,
    a: f64,
    k: f64,
    counters: &mut (u64, u64),
) -> (f64, f64) {
    // target ~ exp(-2a [((qb - qi)^2 + qi^2)/2 + V1(qb) + V1(qi)]) for the
    // (boundary, inner) pair of one half-chain
    let sd = 1.0 / (2.0 * a).sqrt();
    loop {
        counters.0 += 1;
        let qi: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let qb: f64 = qi + sd * rng.sample::<f64, _>(StandardNormal);
        let acc =
            (-2.0 * a * (qb.abs().powf(2.0 * k) + qi.abs().powf(2.0 * k)) / (2.0 * k)).exp();
        if rng.gen::<f64>() < acc {
            counters.1 += 1;
            return (qb, qi);
        }
        if counters.0 > 1000 && (counters.1 as f64) < 0.01 * counters.0 as f64 {
            counters.1 = u64::MAX;
            return (0.0, 0.0);
        }
    }
}

fn run_batch(
    spec_template: &EigenfunctionSpec,
    corr: &CorrectorSet,
    energies: &[f64],
    n_per_batch: usize,
    seed: u64,
    batch: u64,
) -> Result<BatchAccum> {
    let k = spec_template.params.k;
    let mut rng = stream(seed, batch);
    let nr = energies.len();
    let mut acc = BatchAccum {
        phi2: vec![0.0; nr],
        res2: vec![0.0; nr],
        proposals: 0,
        accepts: 0,
    };
    let mut counters = (0u64, 0u64);
    let mut state = ChainState::zeros(spec_template.params.n_sites);
    for _ in 0..n_per_batch {
        let theta = 2.0 * PI * rng.gen::<f64>();
        let s = 1.0 + rng.gen::<f64>();
        let r = radius_profile(theta, k);
        let om = omega(theta, k);
        // boundary draws, shared across rungs (common random numbers)
        match spec_template.variant {
            Variant::ThreeSite => {
                let a0 = spec_template.a_exp(0);
                let a2 = spec_template.a_exp(2);
                let pb0 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a0).sqrt();
                let pb2 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a2).sqrt();
                let q0 = sample_boundary_q(&mut rng, a0, k, &mut counters);
                let q2 = sample_boundary_q(&mut rng, a2, k, &mut counters);
                if counters.1 == u64::MAX {
                    return Err(Error::ProposalMismatch(
                        100.0 * counters.1 as f64 / counters.0 as f64,
                    ));
                }
                for (ri, &ee) in energies.iter().enumerate() {
                    let e = ee * s;
                    let p1 = e.sqrt() * r * theta.cos();
                    let q1 = e.powf(0.5 / k) * r * theta.sin();
                    let phi = corr.phi.eval_shell(theta, e);
                    state.p[0] = pb0 - phi;
                    state.p[2] = pb2 - phi;
                    state.q[0] = q0;
                    state.q[2] = q2;
                    state.p[1] = p1;
                    state.q[1] = q1;
                    let jac = e.powf(0.5 / k - 0.5) / om;
                    let chi = cutoffs::chi_bump(s);
                    let chi_d = cutoffs::chi_bump_deriv(s);
                    let (t_other, t_chi) = residual_brackets(spec_template, corr, &state, ee)?;
                    acc.phi2[ri] += chi * chi * jac * 2.0 * PI * ee;
                    let b = t_other * chi + t_chi * chi_d;
                    acc.res2[ri] += b * b * jac * 2.0 * PI * ee;
                }
            }
            Variant::LongChain => {
                let a0 = spec_template.a_exp(0);
                let a4 = spec_template.a_exp(4);
                let pb0 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a0).sqrt();
                let pb1 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a0).sqrt();
                let pb3 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a4).sqrt();
                let pb4 = rng.sample::<f64, _>(StandardNormal) / (2.0 * a4).sqrt();
                let (qb0, qb1) = sample_coupled_q_pair(&mut rng, a0, k, &mut counters);
                let (qb4, qb3) = sample_coupled_q_pair(&mut rng, a4, k, &mut counters);
                if counters.1 == u64::MAX {
                    return Err(Error::ProposalMismatch(
                        100.0 * counters.1 as f64 / counters.0 as f64,
                    ));
                }
                let phi2c = corr.phi2()?;
                for (ri, &ee) in energies.iter().enumerate() {
                    let e = ee * s;
                    let p2 = e.sqrt() * r * theta.cos();
                    let q2 = e.powf(0.5 / k) * r * theta.sin();
                    let phi = corr.phi.eval_shell(theta, e);
                    let phi2 = phi2c.eval_shell(theta, e);
                    state.p[2] = p2;
                    state.q[2] = q2;
                    state.p[0] = pb0;
                    state.q[0] = qb0;
                    state.p[4] = pb4;
                    state.q[4] = qb4;
                    state.p[1] = pb1 - phi;
                    state.q[1] = qb1 - phi2;
                    state.p[3] = pb3 - phi;
                    state.q[3] = qb3 - phi2;
                    let jac = e.powf(0.5 / k - 0.5) / om;
                    let chi = cutoffs::chi_bump(s);
                    let chi_d = cutoffs::chi_bump_deriv(s);
                    let (t_other, t_chi) = residual_brackets(spec_template, corr, &state, ee)?;
                    acc.phi2[ri] += chi * chi * jac * 2.0 * PI * ee;
                    let b = t_other * chi + t_chi * chi_d;
                    acc.res2[ri] += b * b * jac * 2.0 * PI * ee;
                }
            }
        }
    }
    acc.proposals = counters.0;
    acc.accepts = counters.1;
    Ok(acc)
}

/// Measure norm and residual-ratio scalings across a shell-energy ladder.
pub fn ladder_scaling(
    spec: &EigenfunctionSpec,
    corr: &CorrectorSet,
    energies: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<LadderScaling> {
    spec.check_tables(corr)?;
    if n_samples < 10_000 {
        return Err(Error::InvalidParameter("need at least 1e4 samples".into()));
    }
    let n_per_batch = n_samples / N_BATCHES;
    let batches: Vec<BatchAccum> = (0..N_BATCHES as u64)
        .into_par_iter()
        .map(|b| run_batch(spec, corr, energies, n_per_batch, seed, b))
        .collect::<Result<_>>()?;

    let nr = energies.len();
    let mut norms = Vec::with_capacity(nr);
    let mut ratios = Vec::with_capacity(nr);
    let mut batch_norm_slopes = Vec::with_capacity(N_BATCHES);
    let mut batch_ratio_slopes = Vec::with_capacity(N_BATCHES);
    for b in &batches {
        let ns: Vec<f64> =
            (0..nr).map(|i| (b.phi2[i] / n_per_batch as f64).sqrt()).collect();
        let rs: Vec<f64> = (0..nr).map(|i| (b.res2[i] / b.phi2[i]).sqrt()).collect();
        batch_norm_slopes.push(crate::fit::loglog_slope(energies, &ns).slope);
        batch_ratio_slopes.push(crate::fit::loglog_slope(energies, &rs).slope);
    }
    for i in 0..nr {
        let per_batch_norm: Vec<f64> =
            batches.iter().map(|b| (b.phi2[i] / n_per_batch as f64).sqrt()).collect();
        let per_batch_ratio: Vec<f64> =
            batches.iter().map(|b| (b.res2[i] / b.phi2[i]).sqrt()).collect();
        let (nm, nse) = mean_stderr(&per_batch_norm);
        let (rm, rse) = mean_stderr(&per_batch_ratio);
        norms.push(MCEstimate {
            mean: nm,
            stderr: nse,
            n_samples,
            estimator: "is-shell-uniform".into(),
        });
        ratios.push(MCEstimate {
            mean: rm,
            stderr: rse,
            n_samples,
            estimator: "is-shell-uniform-crn".into(),
        });
    }
    let (ns_mean, ns_se) = mean_stderr(&batch_norm_slopes);
    let (rs_mean, rs_se) = mean_stderr(&batch_ratio_slopes);

    let k = spec.params.k;
    let predicted_ratio_slope = match spec.variant {
        Variant::ThreeSite => 1.0 / k - 0.5,
        Variant::LongChain => (1.5 / k - 1.0_f64).max(0.5 / k - 0.5),
    };
    let proposals: u64 = batches.iter().map(|b| b.proposals).sum();
    let accepts: u64 = batches.iter().map(|b| b.accepts).sum();
    Ok(LadderScaling {
        energies: energies.to_vec(),
        norms,
        ratios,
        norm_slope: ns_mean,
        norm_slope_stderr: ns_se,
        ratio_slope: rs_mean,
        ratio_slope_stderr: rs_se,
        predicted_norm_slope: 0.25 + 0.25 / k,
        predicted_ratio_slope,
        rejection_acceptance: accepts as f64 / proposals as f64,
    })
}

/// Norm estimates at a single shell energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormEstimates {
    pub norm_phi: MCEstimate,
    pub norm_lphi: MCEstimate,
    pub ratio: MCEstimate,
}

pub fn estimate_norms(
    spec: &EigenfunctionSpec,
    corr: &CorrectorSet,
    n_samples: usize,
    seed: u64,
) -> Result<NormEstimates> {
    let ladder = ladder_scaling(spec, corr, &[spec.e_shell], n_samples, seed)?;
    let norm_phi = ladder.norms[0].clone();
    let ratio = ladder.ratios[0].clone();
    let lphi = MCEstimate {
        mean: norm_phi.mean * ratio.mean,
        stderr: norm_phi.mean * ratio.stderr + ratio.mean * norm_phi.stderr,
        n_samples,
        estimator: "product".into(),
    };
    Ok(NormEstimates { norm_phi, norm_lphi: lphi, ratio })
}

/// Fit of the five-site residual-ratio exponent across a ladder.
pub fn longchain_residual_scaling(
    params: &ChainParams,
    corr: &CorrectorSet,
    energies: &[f64],
    n_samples: usize,
    seed: u64,
    starred: bool,
) -> Result<LadderScaling> {
    if params.k <= 1.5 {
        return Err(Error::CorrectorUnbounded(params.k));
    }
    let spec = EigenfunctionSpec::new(Variant::LongChain, *params, energies[0], starred)?;
    ladder_scaling(&spec, corr, energies, n_samples, seed)
}

/// The standard acceptance ladder 3^17 .. 3^23. The paper's ladder is 3^n
/// from small n; measuring slopes needs rungs past the preasymptotic band
/// where the cutoff-derivative term still dominates.
pub fn default_ladder() -> Vec<f64> {
    (17..=23).map(|n| 3.0_f64.powi(n)).collect()
}
