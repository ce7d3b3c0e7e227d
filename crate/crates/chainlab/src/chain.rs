//! The oscillator chain: Hamiltonian, SDE drift, partial energies, and
//! numeric generator appliers for arbitrary scalar observables.
//!
//! The chain has N+1 sites with pinning |q|^{2k}/(2k), harmonic coupling
//! (q_i - q_{i-1})^2/2, and Langevin thermostats on the boundary momenta.

use crate::error::{Error, Result};
use crate::freeosc::{hf_energy, pinning_force};
use serde::{Deserialize, Serialize};

/// Model constants. Noise amplitudes sigma_i^2 = 2 gamma_i T_i are always
/// derived, never stored.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChainParams {
    pub n_sites: usize,
    pub k: f64,
    pub gamma0: f64,
    pub gamma_n: f64,
    pub t0: f64,
    pub tn: f64,
    /// Weight exponent of the flat-conjugated space L^2(e^{-beta H}).
    pub beta: f64,
}

impl ChainParams {
    pub fn new(
        n_sites: usize,
        k: f64,
        gamma0: f64,
        gamma_n: f64,
        t0: f64,
        tn: f64,
        beta: f64,
    ) -> Result<Self> {
        if n_sites < 3 {
            return Err(Error::InvalidParameter(format!("need at least 3 sites, got {n_sites}")));
        }
        if !(k > 1.0) {
            return Err(Error::InvalidParameter(format!("k must be > 1, got {k}")));
        }
        if !(gamma0 > 0.0 && gamma_n > 0.0) {
            return Err(Error::InvalidParameter("friction rates must be positive".into()));
        }
        if !(t0 > 0.0 && tn > 0.0) {
            return Err(Error::InvalidParameter("temperatures must be positive".into()));
        }
        // beta < 2 min(1/T0, 1/TN) keeps the conjugated OU operators dissipative
        let beta_max = 2.0 * (1.0 / t0).min(1.0 / tn);
        if !(beta > 0.0 && beta < beta_max) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, {beta_max}), got {beta}"
            )));
        }
        Ok(Self { n_sites, k, gamma0, gamma_n, t0, tn, beta })
    }

    /// Standard three-site parameters of the decay experiments
    /// (gamma = 1.3, T = 1 on both ends).
    pub fn symmetric(n_sites: usize, k: f64, gamma: f64, temp: f64) -> Result<Self> {
        Self::new(n_sites, k, gamma, gamma, temp, temp, 0.5 / temp)
    }

    pub fn sigma0(&self) -> f64 {
        (2.0 * self.gamma0 * self.t0).sqrt()
    }

    pub fn sigma_n(&self) -> f64 {
        (2.0 * self.gamma_n * self.tn).sqrt()
    }

    /// alpha_i = beta/2 (same for both thermostats).
    pub fn alpha_w(&self) -> f64 {
        self.beta / 2.0
    }

    /// alpha_i^* = 1/T_i - beta/2 for boundary index 0 or N.
    pub fn alpha_w_star(&self, site: usize) -> f64 {
        let t = if site == 0 { self.t0 } else { self.tn };
        1.0 / t - self.beta / 2.0
    }

    pub fn last(&self) -> usize {
        self.n_sites - 1
    }
}

/// Phase-space point of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ChainState {
    pub fn zeros(n_sites: usize) -> Self {
        Self { p: vec![0.0; n_sites], q: vec![0.0; n_sites] }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|x| x.is_finite())
    }

    /// Flat [p..., q...] layout for serialization.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.p.clone();
        v.extend_from_slice(&self.q);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 || flat.len() < 6 {
            return Err(Error::InvalidParameter("flat state must have even length >= 6".into()));
        }
        let n = flat.len() / 2;
        Ok(Self { p: flat[..n].to_vec(), q: flat[n..].to_vec() })
    }
}

/// Total Hamiltonian: sum of kinetic + pinning terms plus nearest-neighbor
/// coupling (q_i - q_{i-1})^2/2.
pub fn hamiltonian(state: &ChainState, params: &ChainParams) -> f64 {
    let k = params.k;
    let mut h = 0.0;
    for i in 0..params.n_sites {
        h += 0.5 * state.p[i] * state.p[i] + state.q[i].abs().powf(2.0 * k) / (2.0 * k);
    }
    for i in 1..params.n_sites {
        let d = state.q[i] - state.q[i - 1];
        h += 0.5 * d * d;
    }
    h
}

/// Per-site energy E_i = 1 + H_f(p_i, q_i).
pub fn site_energy(state: &ChainState, i: usize, k: f64) -> f64 {
    1.0 + hf_energy(state.p[i], state.q[i], k)
}

/// The named partial energies of the two chain decompositions, plus per-site
/// energies. For the 3-site split, H differs from H0+H1+H2 by the cross
/// terms q1^2 - q0 q1 - q2 q1 (an exact identity). For chains of 5 or more
/// sites, H0/Hc/Hr split off the middle oscillator H_c = H_f(p_2, q_2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartialEnergies {
    /// 3-site: H0, H1, H2 (boundary terms include q^2/2).
    pub three_site: Option<[f64; 3]>,
    /// 5+ sites: H0, Hc, Hr.
    pub long_chain: Option<[f64; 3]>,
    pub per_site: Vec<f64>,
}

pub fn partial_energies(state: &ChainState, params: &ChainParams) -> PartialEnergies {
    let k = params.k;
    let n = params.n_sites;
    let v1 = |q: f64| q.abs().powf(2.0 * k) / (2.0 * k);

    let three_site = if n == 3 {
        let h0 = 0.5 * state.p[0].powi(2) + v1(state.q[0]) + 0.5 * state.q[0].powi(2);
        let h1 = 0.5 * state.p[1].powi(2) + v1(state.q[1]);
        let h2 = 0.5 * state.p[2].powi(2) + v1(state.q[2]) + 0.5 * state.q[2].powi(2);
        Some([h0, h1, h2])
    } else {
        None
    };

    let long_chain = if n >= 5 {
        let h0 = 0.5 * (state.p[0].powi(2) + state.p[1].powi(2))
            + v1(state.q[0])
            + v1(state.q[1])
            + 0.5 * ((state.q[0] - state.q[1]).powi(2) + state.q[1].powi(2));
        let hc = 0.5 * state.p[2].powi(2) + v1(state.q[2]);
        let mut hr = 0.5 * state.q[3].powi(2);
        for i in 3..n {
            hr += 0.5 * state.p[i].powi(2) + v1(state.q[i]);
        }
        for i in 4..n {
            hr += 0.5 * (state.q[i] - state.q[i - 1]).powi(2);
        }
        Some([h0, hc, hr])
    } else {
        None
    };

    let per_site = (0..n).map(|i| site_energy(state, i, k)).collect();
    PartialEnergies { three_site, long_chain, per_site }
}

/// Deterministic drift of the SDE (Hamiltonian part plus boundary friction),
/// written into `out` as [dp..., dq...].
pub fn drift(state: &ChainState, params: &ChainParams, out: &mut [f64]) {
    drift_hamiltonian(state, params, out);
    let n = params.n_sites;
    out[0] -= params.gamma0 * state.p[0];
    out[n - 1] -= params.gamma_n * state.p[n - 1];
}

/// Frictionless (Liouville) part of the drift.
pub fn drift_hamiltonian(state: &ChainState, params: &ChainParams, out: &mut [f64]) {
    let n = params.n_sites;
    let k = params.k;
    for i in 0..n {
        let mut f = pinning_force(state.q[i], k);
        if i > 0 {
            f -= state.q[i] - state.q[i - 1];
        }
        if i < n - 1 {
            f -= state.q[i] - state.q[i + 1];
        }
        out[i] = f;
        out[n + i] = state.p[i];
    }
}

const FD_BASE_STEP: f64 = 1e-4;

fn fd_gradient_component(
    f: &dyn Fn(&ChainState) -> f64,
    state: &ChainState,
    coord: usize,
    n: usize,
) -> Result<f64> {
    let x = if coord < n { state.p[coord] } else { state.q[coord - n] };
    let h = FD_BASE_STEP * (1.0 + x.abs());
    let eval = |delta: f64| -> f64 {
        let mut s = state.clone();
        if coord < n {
            s.p[coord] += delta;
        } else {
            s.q[coord - n] += delta;
        }
        f(&s)
    };
    // central difference with two-level Richardson extrapolation
    let d1 = (eval(h) - eval(-h)) / (2.0 * h);
    let d2 = (eval(0.5 * h) - eval(-0.5 * h)) / h;
    let g = (4.0 * d2 - d1) / 3.0;
    if !g.is_finite() {
        return Err(Error::NotDifferentiable);
    }
    Ok(g)
}

fn fd_second_p(
    f: &dyn Fn(&ChainState) -> f64,
    state: &ChainState,
    site: usize,
) -> Result<f64> {
    // second differences divide by h^2, so the step is 10x the gradient step
    // to keep the roundoff part of the error near 1e-8 relative
    let h = 10.0 * FD_BASE_STEP * (1.0 + state.p[site].abs());
    let eval = |delta: f64| -> f64 {
        let mut s = state.clone();
        s.p[site] += delta;
        f(&s)
    };
    let f0 = f(state);
    let s1 = (eval(h) - 2.0 * f0 + eval(-h)) / (h * h);
    let s2 = (eval(0.5 * h) - 2.0 * f0 + eval(-0.5 * h)) / (0.25 * h * h);
    let s = (4.0 * s2 - s1) / 3.0;
    if !s.is_finite() {
        return Err(Error::NotDifferentiable);
    }
    Ok(s)
}

/// Apply the generator L = drift . grad + sum_{i in {0,N}} gamma_i T_i d^2_{p_i}
/// to a scalar observable by finite differences.
pub fn apply_generator(
    f: &dyn Fn(&ChainState) -> f64,
    state: &ChainState,
    params: &ChainParams,
) -> Result<f64> {
    let n = params.n_sites;
    let mut d = vec![0.0; 2 * n];
    drift(state, params, &mut d);
    let mut total = 0.0;
    for coord in 0..2 * n {
        if d[coord] != 0.0 {
            total += d[coord] * fd_gradient_component(f, state, coord, n)?;
        }
    }
    total += params.gamma0 * params.t0 * fd_second_p(f, state, 0)?;
    total += params.gamma_n * params.tn * fd_second_p(f, state, n - 1)?;
    if !total.is_finite() {
        return Err(Error::NotDifferentiable);
    }
    Ok(total)
}

/// The conjugated OU operator acting on boundary site `site` (0 or N):
/// L_OU = (a - a*) p d_p + d^2_p - a a* p^2 + a, or its adjoint with a and a*
/// swapped in the drift coefficient and the constant.
pub fn apply_ou(
    f: &dyn Fn(&ChainState) -> f64,
    state: &ChainState,
    params: &ChainParams,
    site: usize,
    starred: bool,
) -> Result<f64> {
    let n = params.n_sites;
    let a = params.alpha_w();
    let astar = params.alpha_w_star(site);
    let p = state.p[site];
    let dp = fd_gradient_component(f, state, site, n)?;
    let d2p = fd_second_p(f, state, site)?;
    let (drift_coef, constant) = if starred { (astar - a, astar) } else { (a - astar, a) };
    Ok(drift_coef * p * dp + d2p + (-a * astar * p * p + constant) * f(state))
}

/// Apply the flat-space conjugated generator
/// L~ = X_H + gamma_0 T_0 L_OU^0 + gamma_N T_N L_OU^N (or its adjoint, which
/// flips the sign of X_H and stars the OU parts).
pub fn apply_weighted_generator(
    f: &dyn Fn(&ChainState) -> f64,
    state: &ChainState,
    params: &ChainParams,
    starred: bool,
) -> Result<f64> {
    let n = params.n_sites;
    let mut d = vec![0.0; 2 * n];
    drift_hamiltonian(state, params, &mut d);
    let sign = if starred { -1.0 } else { 1.0 };
    let mut total = 0.0;
    for coord in 0..2 * n {
        if d[coord] != 0.0 {
            total += sign * d[coord] * fd_gradient_component(f, state, coord, n)?;
        }
    }
    total += params.gamma0 * params.t0 * apply_ou(f, state, params, 0, starred)?;
    total += params.gamma_n * params.tn * apply_ou(f, state, params, n - 1, starred)?;
    if !total.is_finite() {
        return Err(Error::NotDifferentiable);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params3() -> ChainParams {
        ChainParams::symmetric(3, 2.0, 1.3, 1.0).unwrap()
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_state(n: usize, scale: f64, seed: &mut u64) -> ChainState {
        ChainState {
            p: (0..n).map(|_| scale * (lcg(seed) - 0.5) * 2.0).collect(),
            q: (0..n).map(|_| scale * (lcg(seed) - 0.5) * 2.0).collect(),
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let params = params3();
        assert_eq!(hamiltonian(&ChainState::zeros(3), &params), 0.0);

        let mut s = ChainState::zeros(3);
        s.p[1] = std::f64::consts::SQRT_2;
        assert_relative_eq!(hamiltonian(&s, &params), 1.0);
    }

    #[test]
    fn hamiltonian_matches_term_by_term_sum() {
        // independent summation oracle
        let params = ChainParams::symmetric(5, 3.0, 1.3, 1.0).unwrap();
        let mut seed = 7_u64;
        for _ in 0..20 {
            let s = random_state(5, 1.5, &mut seed);
            let mut h = 0.0;
            for i in 0..5 {
                h += 0.5 * s.p[i] * s.p[i];
                h += s.q[i].abs().powf(6.0) / 6.0;
            }
            for i in 1..5 {
                h += 0.5 * (s.q[i] - s.q[i - 1]).powi(2);
            }
            assert_relative_eq!(hamiltonian(&s, &params), h, epsilon = 1e-14);
        }
    }

    #[test]
    fn drift_hand_example() {
        // 3 sites, q = (1,0,0), p = 0, k = 2
        let params = params3();
        let mut s = ChainState::zeros(3);
        s.q[0] = 1.0;
        let mut d = vec![0.0; 6];
        drift(&s, &params, &mut d);
        assert_relative_eq!(d[0], -2.0);
        assert_relative_eq!(d[1], 1.0);
        assert_relative_eq!(d[2], 0.0);
        assert_eq!(&d[3..6], &[0.0, 0.0, 0.0]);

        let z = ChainState::zeros(3);
        drift(&z, &params, &mut d);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hamiltonian_drift_conserves_h() {
        // drift . grad H = 0 at gamma = 0
        let params = params3();
        let mut seed = 3_u64;
        for _ in 0..50 {
            let s = random_state(3, 2.0, &mut seed);
            let mut d = vec![0.0; 6];
            drift_hamiltonian(&s, &params, &mut d);
            let h = 1e-6;
            let mut dot = 0.0;
            for c in 0..6 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                if c < 3 {
                    sp.p[c] += h;
                    sm.p[c] -= h;
                } else {
                    sp.q[c - 3] += h;
                    sm.q[c - 3] -= h;
                }
                dot += d[c] * (hamiltonian(&sp, &params) - hamiltonian(&sm, &params)) / (2.0 * h);
            }
            assert!(dot.abs() < 1e-7 * (1.0 + hamiltonian(&s, &params)));
        }
    }

    #[test]
    fn partial_energy_identity_three_site() {
        let params = params3();
        let mut seed = 11_u64;
        for _ in 0..50 {
            let s = random_state(3, 2.0, &mut seed);
            let pe = partial_energies(&s, &params);
            let [h0, h1, h2] = pe.three_site.unwrap();
            let cross = s.q[1] * s.q[1] - s.q[0] * s.q[1] - s.q[2] * s.q[1];
            assert_relative_eq!(
                hamiltonian(&s, &params),
                h0 + h1 + h2 + cross,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn partial_energy_identity_five_site() {
        let params = ChainParams::symmetric(5, 2.0, 1.3, 1.0).unwrap();
        let mut seed = 13_u64;
        for _ in 0..50 {
            let s = random_state(5, 2.0, &mut seed);
            let pe = partial_energies(&s, &params);
            let [h0, hc, hr] = pe.long_chain.unwrap();
            let cross = s.q[2] * s.q[2] - s.q[2] * (s.q[1] + s.q[3]);
            assert_relative_eq!(
                hamiltonian(&s, &params),
                h0 + hc + hr + cross,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn generator_on_hamiltonian() {
        // L H = g0 T0 + gN TN - g0 p0^2 - gN pN^2 (Ito on the total energy)
        let params = params3();
        let f = |s: &ChainState| hamiltonian(s, &params);
        let mut s = ChainState::zeros(3);
        s.q = vec![0.3, -0.8, 1.1];
        let expect = params.gamma0 * params.t0 + params.gamma_n * params.tn;
        assert_relative_eq!(
            apply_generator(&f, &s, &params).unwrap(),
            expect,
            max_relative = 1e-7
        );

        let mut seed = 17_u64;
        for _ in 0..1000 {
            let s = random_state(3, 1.5, &mut seed);
            let expect = params.gamma0 * params.t0 + params.gamma_n * params.tn
                - params.gamma0 * s.p[0] * s.p[0]
                - params.gamma_n * s.p[2] * s.p[2];
            let got = apply_generator(&f, &s, &params).unwrap();
            assert!(
                (got - expect).abs() < 1e-6 * (1.0 + expect.abs()),
                "got {got} expect {expect}"
            );
        }
    }

    #[test]
    fn generator_trivia() {
        let params = params3();
        let s = ChainState { p: vec![0.4, 1.0, -0.2], q: vec![0.1, 0.2, 0.3] };
        // constants are killed
        let c = |_: &ChainState| 42.0;
        assert!(apply_generator(&c, &s, &params).unwrap().abs() < 1e-9);
        // f = p0^2: L f = 2 p0 drift_p0 + 2 g0 T0
        let f = |s: &ChainState| s.p[0] * s.p[0];
        let mut d = vec![0.0; 6];
        drift(&s, &params, &mut d);
        let expect = 2.0 * s.p[0] * d[0] + 2.0 * params.gamma0 * params.t0;
        assert_relative_eq!(apply_generator(&f, &s, &params).unwrap(), expect, max_relative = 1e-7);
    }

    #[test]
    fn ou_kills_gibbs_factors() {
        // exp(-a H_i) is a 0-eigenfunction of L_OU^i; exp(-a* H_i) of the starred one
        let params = ChainParams::new(3, 2.0, 1.3, 1.3, 1.0, 0.7, 0.5).unwrap();
        let mut seed = 23_u64;
        for site in [0usize, 2usize] {
            for starred in [false, true] {
                let a = if starred { params.alpha_w_star(site) } else { params.alpha_w() };
                let f = move |s: &ChainState| {
                    let hi = 0.5 * s.p[site] * s.p[site]
                        + s.q[site].abs().powf(4.0) / 4.0
                        + 0.5 * s.q[site] * s.q[site];
                    (-a * hi).exp()
                };
                for _ in 0..25 {
                    let s = random_state(3, 1.0, &mut seed);
                    let v = apply_ou(&f, &s, &params, site, starred).unwrap();
                    assert!(v.abs() < 1e-7, "site {site} starred {starred}: {v}");
                }
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ChainParams::new(2, 2.0, 1.3, 1.3, 1.0, 1.0, 0.5).is_err());
        assert!(ChainParams::new(3, 1.0, 1.3, 1.3, 1.0, 1.0, 0.5).is_err());
        assert!(ChainParams::new(3, 2.0, 0.0, 1.3, 1.0, 1.0, 0.5).is_err());
        assert!(ChainParams::new(3, 2.0, 1.3, 1.3, 1.0, 1.0, 2.0).is_err());
        // beta exactly at the bound is rejected
        assert!(ChainParams::new(3, 2.0, 1.3, 1.3, 1.0, 2.0, 1.0).is_err());
        assert!(ChainParams::new(3, 2.0, 1.3, 1.3, 1.0, 2.0, 0.9).is_ok());
    }

    #[test]
    fn flat_roundtrip() {
        let s = ChainState { p: vec![1.0, 2.0, 3.0], q: vec![4.0, 5.0, 6.0] };
        assert_eq!(ChainState::from_flat(&s.to_flat()).unwrap(), s);
    }
}
