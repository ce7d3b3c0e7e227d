//! Breather initialization, energy-decay runs against the predicted law, the
//! coupling-exponent recursion, and the spectral trichotomy classifier.
//!
//! For a chain of N+1 = 2n+1 sites the energy stored in the middle
//! oscillator dissipates like dH/dt ~ -(g0 + gN) kappa_{k,n} H^{2n/k+1-2n};
//! equivalently H^beta with beta = 2n(1 - 1/k) decays at the constant rate
//! (g0 + gN) n (2 - 2/k) kappa_{k,n}, with no free parameters.

use crate::chain::{site_energy, ChainParams, ChainState};
use crate::error::{Error, Result};
use crate::fit::{line_fit, LineFit};
use crate::freeosc::kappa;
use crate::integrate::{simulate, IntegratorConfig, Observable};
use crate::timeseries::TimeSeries;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayPrediction {
    pub k: f64,
    /// Half-chain depth: N+1 = 2n+1.
    pub n: usize,
    /// H^beta is the linearly decaying observable.
    pub beta: f64,
    /// Decay rate of H^beta per unit time.
    pub slope: f64,
    pub kappa: f64,
}

/// The parameter-free decay-law prediction.
pub fn predicted_decay(k: f64, n: usize, gamma0: f64, gamma_n: f64) -> Result<DecayPrediction> {
    if !(k > 1.0) {
        return Err(Error::InvalidParameter(format!("k must be > 1, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let kap = kappa(k, n)?.kappa;
    let beta = 2.0 * n as f64 * (1.0 - 1.0 / k);
    let slope = (gamma0 + gamma_n) * n as f64 * (2.0 - 2.0 / k) * kap;
    Ok(DecayPrediction { k, n, beta, slope, kappa: kap })
}

/// Load all of `e_mid` into the middle oscillator as kinetic energy
/// (the lower-middle site for even chains).
pub fn breather_init(params: &ChainParams, e_mid: f64) -> ChainState {
    let mut state = ChainState::zeros(params.n_sites);
    let mid = (params.n_sites - 1) / 2;
    state.p[mid] = (2.0 * e_mid).sqrt();
    state
}

pub fn middle_site(params: &ChainParams) -> usize {
    (params.n_sites - 1) / 2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRun {
    pub series: TimeSeries,
    pub prediction: DecayPrediction,
    pub fitted_slope: f64,
    pub fit_stderr: f64,
    /// Number of recorded points inside the breather window.
    pub window_len: usize,
}

/// Simulate a breather decay and fit the H^beta trend over the window where
/// the middle-site energy dominates the boundary energies by a factor 10.
pub fn run_decay(params: &ChainParams, e_mid: f64, cfg: &IntegratorConfig) -> Result<DecayRun> {
    let n = (params.n_sites - 1) / 2;
    let prediction = predicted_decay(params.k, n, params.gamma0, params.gamma_n)?;
    let beta = prediction.beta;
    let mid = middle_site(params);
    let last = params.last();

    let state0 = breather_init(params, e_mid);
    let observables = vec![
        Observable::total_energy(),
        Observable::energy_power(beta),
        Observable::site_energy(0),
        Observable::new("E_mid", move |s, p| site_energy(s, mid, p.k)),
        Observable::new("E_last", move |s, p| site_energy(s, last, p.k)),
    ];
    let series = simulate(&state0, params, cfg, &observables)?;

    let e0 = series.column("E0").unwrap();
    let em = series.column("E_mid").unwrap();
    let en = series.column("E_last").unwrap();
    let hb = series.column("H_beta").unwrap();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for i in 0..series.len() {
        if em[i] >= 10.0 * (e0[i] + en[i]) {
            ts.push(series.times[i]);
            ys.push(hb[i]);
        }
    }
    if ts.len() < 8 {
        return Err(Error::NoBreatherRegime);
    }
    let LineFit { slope, slope_stderr, .. } = line_fit(&ts, &ys);
    Ok(DecayRun {
        series,
        prediction,
        fitted_slope: -slope,
        fit_stderr: slope_stderr,
        window_len: ts.len(),
    })
}

/// Fast-oscillation amplitude recursion for homogeneous coupling of degree
/// 2l: beta_i = (2l-1)(beta_{i+1} - alpha) - alpha if beta_{i+1} > alpha,
/// else beta_{i+1} - 2 alpha, seeded with beta_n = 1/2. Returns
/// [beta_0, ..., beta_n] and gamma = 2 beta_0.
pub fn exponent_recursion(k: f64, l: usize, n: usize) -> Result<(Vec<f64>, f64)> {
    if !(k > 1.0) {
        return Err(Error::InvalidParameter(format!("k must be > 1, got {k}")));
    }
    if l == 0 || n == 0 {
        return Err(Error::InvalidParameter("l and n must be >= 1".into()));
    }
    let alpha = 0.5 - 0.5 / k;
    let mut betas = vec![0.0; n + 1];
    betas[n] = 0.5;
    for i in (0..n).rev() {
        let next = betas[i + 1];
        betas[i] = if next > alpha {
            (2.0 * l as f64 - 1.0) * (next - alpha) - alpha
        } else {
            next - 2.0 * alpha
        };
    }
    let gamma = 2.0 * betas[0];
    Ok((betas, gamma))
}

/// Spectral trichotomy of the model diffusion, driven by
/// gamma = 2n/k + 1 - 2n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumClass {
    /// gamma in (0, 1): compact resolvent.
    CompactResolvent,
    /// gamma = 0: no compact resolvent but a spectral gap.
    GapNoCompact,
    /// gamma < 0: essential spectrum reaches 0.
    EssentialAtZero,
}

impl std::fmt::Display for SpectrumClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SpectrumClass::CompactResolvent => "compact_resolvent",
            SpectrumClass::GapNoCompact => "gap_no_compact",
            SpectrumClass::EssentialAtZero => "essential_at_zero",
        };
        write!(f, "{s}")
    }
}

pub fn classify_spectrum(k: f64, n: usize) -> Result<SpectrumClass> {
    if !(k > 1.0) {
        return Err(Error::OutsideModelRegime(k));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let gamma = 2.0 * n as f64 / k + 1.0 - 2.0 * n as f64;
    Ok(if gamma.abs() < 1e-12 {
        SpectrumClass::GapNoCompact
    } else if gamma > 0.0 {
        SpectrumClass::CompactResolvent
    } else {
        SpectrumClass::EssentialAtZero
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::hamiltonian;
    use approx::assert_relative_eq;

    #[test]
    fn prediction_arithmetic() {
        let p = predicted_decay(2.0, 1, 1.3, 1.3).unwrap();
        assert_relative_eq!(p.beta, 1.0);
        assert_relative_eq!(p.slope, 2.6 * 0.63546991, epsilon = 1e-5);

        let p3 = predicted_decay(3.0, 1, 1.3, 1.3).unwrap();
        assert_relative_eq!(p3.beta, 4.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(p3.slope, 2.6 * (4.0 / 3.0) * 0.42363371, epsilon = 1e-5);

        // boundary degeneracy k -> 1+
        let p1 = predicted_decay(1.0 + 1e-9, 1, 1.3, 1.3).unwrap();
        assert!(p1.beta < 1e-8 && p1.slope < 1e-8);
    }

    #[test]
    fn breather_examples() {
        let params = ChainParams::symmetric(3, 2.0, 1.3, 1.0).unwrap();
        let s = breather_init(&params, 50.0);
        assert_eq!(s.q, vec![0.0; 3]);
        assert_relative_eq!(s.p[1], 10.0);
        assert_relative_eq!(hamiltonian(&s, &params), 50.0);

        let p5 = ChainParams::symmetric(5, 2.0, 1.3, 1.0).unwrap();
        let s5 = breather_init(&p5, 8.0);
        assert_relative_eq!(s5.p[2], 4.0);
        assert!(s5.p.iter().enumerate().all(|(i, &v)| i == 2 || v == 0.0));

        // even chain: lower-middle site
        let p4 = ChainParams::symmetric(4, 2.0, 1.3, 1.0).unwrap();
        let s4 = breather_init(&p4, 2.0);
        assert_relative_eq!(s4.p[1], 2.0);
    }

    #[test]
    fn recursion_examples() {
        let (betas, gamma) = exponent_recursion(2.0, 1, 1).unwrap();
        assert_relative_eq!(betas[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(gamma, 0.0, epsilon = 1e-14);

        let (betas, gamma) = exponent_recursion(2.0, 2, 1).unwrap();
        assert_relative_eq!(betas[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(gamma, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn recursion_linear_coupling_closed_form() {
        // l = 1: beta_0 = 1/2 - 2 n alpha
        for &k in &[1.5, 2.0, 2.7, 3.0] {
            let alpha = 0.5 - 0.5 / k;
            for n in 1..=5 {
                let (betas, _) = exponent_recursion(k, 1, n).unwrap();
                assert_relative_eq!(betas[0], 0.5 - 2.0 * n as f64 * alpha, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_spectrum(2.0, 1).unwrap(), SpectrumClass::GapNoCompact);
        assert_eq!(classify_spectrum(3.0, 1).unwrap(), SpectrumClass::EssentialAtZero);
        assert_eq!(classify_spectrum(4.0 / 3.0, 1).unwrap(), SpectrumClass::CompactResolvent);
        assert!(matches!(classify_spectrum(0.9, 1), Err(Error::OutsideModelRegime(_))));
        // consistency with the three-site theorems at n = 1
        assert_eq!(classify_spectrum(2.0, 1).unwrap(), SpectrumClass::GapNoCompact);
        for &k in &[2.5, 3.0, 5.0] {
            assert_eq!(classify_spectrum(k, 1).unwrap(), SpectrumClass::EssentialAtZero);
        }
    }

    #[test]
    fn zero_noise_control_has_zero_slope() {
        // frictionless, noiseless: H is conserved, the fitted slope vanishes
        let params = ChainParams::symmetric(3, 2.0, 1.3, 1.0).unwrap();
        let frictionless = ChainParams { gamma0: 0.0, gamma_n: 0.0, ..params };
        let cfg = IntegratorConfig::new(1e-3, 30.0, 20, 5).unwrap();
        let run = run_decay(&frictionless, 100.0, &cfg).unwrap();
        assert!(
            run.fitted_slope.abs() < 1e-6,
            "slope {} stderr {}",
            run.fitted_slope,
            run.fit_stderr
        );
    }

    #[test]
    fn no_breather_regime_error() {
        let params = ChainParams::symmetric(3, 2.0, 1.3, 1.0).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 5.0, 10, 5).unwrap();
        // tiny middle energy: dominance never reached
        assert!(matches!(run_decay(&params, 0.5, &cfg), Err(Error::NoBreatherRegime)));
    }
}
