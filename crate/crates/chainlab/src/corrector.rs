//! Corrector functions Phi, Phi2, Psi as cutoff shell functions.
//!
//! Phi is the centered solution of X_{H_f} Phi = R(P,Q) - Q with
//! R(P,Q) = Q psi(H_f), so the source vanishes for H_f <= 1 and equals -Q for
//! H_f >= 2. Phi2 solves X_{H_f} Phi2 = Phi and Psi solves
//! X_{H_f} Psi = Phi^2 - kappa_k H_f^{2/k-1} + R'(H_f), where R' is chosen so
//! the source is centered on every shell (hence Psi = 0 near the origin).
//!
//! Since X_{H_f} preserves shells, each equation decouples: outside the
//! cutoff the solution is exactly homogeneous (one theta-profile plus a
//! scaling exponent); across the transition band [E_lo, E_hi] = [1, 2] we
//! tabulate per-shell solutions on a geometric energy grid and interpolate
//! linearly in log E.

use crate::error::{Error, Result};
use crate::freeosc::{hf_energy, omega, radius_profile, FreeOscParams};
use crate::profile::{shell_average, solve_poisson_on_shell, ThetaProfile, DEFAULT_GRID};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

pub const INNER_SHELLS: usize = 64;

/// Smooth cutoff machinery. All three cutoffs are C-infinity with the exact
/// formulas recorded here for reproducibility.
pub mod cutoffs {
    fn bump(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }

    /// psi: 1 for |x| <= 1, 0 for |x| >= 2.
    pub fn smooth_step_down(x: f64) -> f64 {
        let x = x.abs();
        let a = bump(2.0 - x);
        let b = bump(x - 1.0);
        if a + b == 0.0 {
            return if x <= 1.0 { 1.0 } else { 0.0 };
        }
        a / (a + b)
    }

    /// phi: 0 for x <= 1, 1 for x >= 2 (mirrored step).
    pub fn smooth_step_up(x: f64) -> f64 {
        1.0 - smooth_step_down(x)
    }

    /// chi: exp(4 - 1/((x-1)(2-x))) on (1,2), 0 elsewhere; max value 1 at x = 3/2.
    pub fn chi_bump(x: f64) -> f64 {
        if x <= 1.0 || x >= 2.0 {
            return 0.0;
        }
        let u = (x - 1.0) * (2.0 - x);
        (4.0 - 1.0 / u).exp()
    }

    /// d/dx of [`chi_bump`].
    pub fn chi_bump_deriv(x: f64) -> f64 {
        if x <= 1.0 || x >= 2.0 {
            return 0.0;
        }
        let u = (x - 1.0) * (2.0 - x);
        chi_bump(x) * (3.0 - 2.0 * x) / (u * u)
    }
}

/// A function on phase space given by a scaling exponent and a theta-profile
/// outside the cutoff, a per-shell table across the transition band, and 0
/// below it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffShellFunction {
    pub k: f64,
    /// Scaling exponent of the outer (homogeneous) region.
    pub alpha: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    /// Unit-normalized profile: value(theta, E) = E^alpha * outer(theta) for E >= e_hi.
    pub outer: ThetaProfile,
    outer_deriv: ThetaProfile,
    /// Geometric energy grid over [e_lo, e_hi].
    pub inner_energies: Vec<f64>,
    /// Per-shell values at the grid energies (not normalized).
    pub inner: Vec<ThetaProfile>,
    inner_deriv: Vec<ThetaProfile>,
    pub build_tolerance: f64,
}

fn fft_forward(data: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(data.len()).process(&mut buf);
    buf
}

fn fft_inverse_real(mut buf: Vec<Complex<f64>>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Solve omega(theta) E^{alpha_e} u'(theta) = src(theta) on the shell of
/// energy `e`, centered to zero time average. alpha_e = 1/2 - 1/(2k) is the
/// shell flow-speed exponent.
fn solve_on_shell(src: &[f64], k: f64, e: f64) -> Vec<f64> {
    let n = src.len();
    let speed = e.powf(0.5 - 0.5 / k);
    let g: Vec<f64> = (0..n)
        .map(|j| {
            let th = 2.0 * PI * j as f64 / n as f64;
            src[j] / (omega(th, k) * speed)
        })
        .collect();
    let mut spec = fft_forward(&g);
    spec[0] = Complex::new(0.0, 0.0);
    for m in 1..n {
        let freq = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
        if m == n / 2 {
            spec[m] = Complex::new(0.0, 0.0);
        } else {
            spec[m] /= Complex::new(0.0, freq);
        }
    }
    let mut u = fft_inverse_real(spec);
    // center: zero time average on the shell
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, v) in u.iter().enumerate() {
        let th = 2.0 * PI * j as f64 / n as f64;
        let w = omega(th, k);
        num += v / w;
        den += 1.0 / w;
    }
    let c = num / den;
    for v in &mut u {
        *v -= c;
    }
    u
}

fn geometric_grid(e_lo: f64, e_hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| e_lo * (e_hi / e_lo).powf(j as f64 / (n - 1) as f64))
        .collect()
}

impl CutoffShellFunction {
    fn assemble(
        k: f64,
        alpha: f64,
        outer: ThetaProfile,
        inner_energies: Vec<f64>,
        inner: Vec<ThetaProfile>,
    ) -> Result<Self> {
        let outer_deriv = outer.derivative();
        let inner_deriv = inner.iter().map(|p| p.derivative()).collect();
        Ok(Self {
            k,
            alpha,
            e_lo: inner_energies[0],
            e_hi: *inner_energies.last().unwrap(),
            outer,
            outer_deriv,
            inner_energies,
            inner,
            inner_deriv,
            build_tolerance: 1e-8,
        })
    }

    /// Rebuild spline/derivative tables after deserialization.
    pub fn rebuild(&mut self) {
        self.outer.rebuild_spline();
        for p in &mut self.inner {
            p.rebuild_spline();
        }
        self.outer_deriv = self.outer.derivative();
        self.inner_deriv = self.inner.iter().map(|p| p.derivative()).collect();
    }

    fn inner_bracket(&self, e: f64) -> (usize, f64) {
        let n = self.inner_energies.len();
        let t = (e / self.e_lo).ln() / (self.e_hi / self.e_lo).ln() * (n - 1) as f64;
        let j = (t.floor() as usize).min(n - 2);
        (j, t - j as f64)
    }

    /// Value at a phase-space point. Points inside the cutoff return 0.
    pub fn eval(&self, p: f64, q: f64) -> f64 {
        let e = hf_energy(p, q, self.k);
        if e <= self.e_lo {
            return 0.0;
        }
        let theta = match crate::freeosc::to_shell_coords(p, q, self.k) {
            Ok((t, _)) => t,
            Err(_) => return 0.0,
        };
        self.eval_shell(theta, e)
    }

    /// Value in shell coordinates.
    pub fn eval_shell(&self, theta: f64, e: f64) -> f64 {
        if e <= self.e_lo {
            0.0
        } else if e >= self.e_hi {
            e.powf(self.alpha) * self.outer.value_at(theta)
        } else {
            let (j, t) = self.inner_bracket(e);
            (1.0 - t) * self.inner[j].value_at(theta) + t * self.inner[j + 1].value_at(theta)
        }
    }

    /// (d/dP, d/dQ) at a phase-space point, by the chain rule through
    /// (theta, E) with spectral theta-derivatives of the profiles.
    pub fn eval_partials(&self, p: f64, q: f64) -> (f64, f64) {
        let k = self.k;
        let e = hf_energy(p, q, k);
        if e <= self.e_lo {
            return (0.0, 0.0);
        }
        let (theta, _) = match crate::freeosc::to_shell_coords(p, q, k) {
            Ok(te) => te,
            Err(_) => return (0.0, 0.0),
        };

        let (f_theta, f_e) = if e >= self.e_hi {
            (
                e.powf(self.alpha) * self.outer_deriv.value_at(theta),
                self.alpha * e.powf(self.alpha - 1.0) * self.outer.value_at(theta),
            )
        } else {
            let (j, t) = self.inner_bracket(e);
            let ft = (1.0 - t) * self.inner_deriv[j].value_at(theta)
                + t * self.inner_deriv[j + 1].value_at(theta);
            let dlog = (self.inner_energies[j + 1] / self.inner_energies[j]).ln();
            let fe = (self.inner[j + 1].value_at(theta) - self.inner[j].value_at(theta))
                / (e * dlog);
            (ft, fe)
        };

        let e_p = p;
        let e_q = if q == 0.0 {
            0.0
        } else {
            q.signum() * q.abs().powf(2.0 * k - 1.0)
        };
        let x = p / e.sqrt();
        let y = q / e.powf(0.5 / k);
        let r2 = x * x + y * y;
        let x_p = 1.0 / e.sqrt() - 0.5 * p * e.powf(-1.5) * e_p;
        let x_q = -0.5 * p * e.powf(-1.5) * e_q;
        let y_p = -(0.5 / k) * q * e.powf(-0.5 / k - 1.0) * e_p;
        let y_q = e.powf(-0.5 / k) - (0.5 / k) * q * e.powf(-0.5 / k - 1.0) * e_q;
        let th_p = (x * y_p - y * x_p) / r2;
        let th_q = (x * y_q - y * x_q) / r2;

        (f_theta * th_p + f_e * e_p, f_theta * th_q + f_e * e_q)
    }

    /// Time average of value^2 over the shell of energy `e`.
    pub fn shell_average_sq(&self, e: f64) -> f64 {
        let n = self.outer.grid_size();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            let th = 2.0 * PI * j as f64 / n as f64;
            let w = omega(th, self.k);
            let v = self.eval_shell(th, e);
            num += v * v / w;
            den += 1.0 / w;
        }
        num / den
    }
}

/// The corrector bundle for one value of k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorSet {
    pub k: f64,
    /// kappa_k computed as the shell average of the outer Phi profile squared.
    pub kappa_shell: f64,
    pub phi: CutoffShellFunction,
    /// Present only for k > 3/2 (boundedness regime).
    pub phi2: Option<CutoffShellFunction>,
    pub psi: Option<CutoffShellFunction>,
}

impl CorrectorSet {
    /// Build Phi (and Phi2, Psi when k > 3/2) on the default grids.
    pub fn build(k: f64) -> Result<Self> {
        Self::build_with_grid(k, DEFAULT_GRID)
    }

    pub fn build_with_grid(k: f64, m: usize) -> Result<Self> {
        let params = FreeOscParams::new(k)?;
        let k = params.k;
        let energies = geometric_grid(1.0, 2.0, INNER_SHELLS);

        // Phi: X Phi = (psi(E) - 1) Q; outer source is -Q.
        let src_outer = ThetaProfile::from_fn(0.5 / k, m, |t| -radius_profile(t, k) * t.sin())?;
        let outer_phi = solve_poisson_on_shell(&src_outer, k)?;
        let alpha_phi = outer_phi.alpha;
        let mut inner_phi = Vec::with_capacity(INNER_SHELLS);
        for &e in &energies {
            let factor = cutoffs::smooth_step_down(e) - 1.0;
            let src: Vec<f64> = (0..m)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / m as f64;
                    factor * e.powf(0.5 / k) * radius_profile(th, k) * th.sin()
                })
                .collect();
            inner_phi.push(ThetaProfile::new(alpha_phi, solve_on_shell(&src, k, e))?);
        }
        let phi =
            CutoffShellFunction::assemble(k, alpha_phi, outer_phi, energies.clone(), inner_phi)?;

        let kappa_shell = {
            let n = phi.outer.grid_size();
            let sq = ThetaProfile::from_fn(2.0 * alpha_phi, n, |t| {
                let v = phi.outer.value_at(t);
                v * v
            })?;
            shell_average(&sq, k)
        };

        if k <= 1.5 {
            return Ok(Self { k, kappa_shell, phi, phi2: None, psi: None });
        }

        // Phi2: X Phi2 = Phi, shell by shell.
        let outer_phi2 = solve_poisson_on_shell(&phi.outer, k)?;
        let alpha_phi2 = outer_phi2.alpha;
        let mut inner_phi2 = Vec::with_capacity(INNER_SHELLS);
        for (i, &e) in energies.iter().enumerate() {
            let src = phi.inner[i].values().to_vec();
            inner_phi2.push(ThetaProfile::new(alpha_phi2, solve_on_shell(&src, k, e))?);
        }
        let phi2 = CutoffShellFunction::assemble(
            k,
            alpha_phi2,
            outer_phi2,
            energies.clone(),
            inner_phi2,
        )?;

        // Psi: source Phi^2 - kappa E^{2/k-1} + R'(E); R' centers every shell,
        // so the per-shell source is just the centered Phi^2 profile.
        let sq_outer = ThetaProfile::from_fn(2.0 * alpha_phi, m, |t| {
            let v = phi.outer.value_at(t);
            v * v - kappa_shell
        })?;
        let outer_psi = solve_poisson_on_shell(&sq_outer, k)?;
        let alpha_psi = outer_psi.alpha;
        let mut inner_psi = Vec::with_capacity(INNER_SHELLS);
        for (i, &e) in energies.iter().enumerate() {
            let vals = phi.inner[i].values();
            let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, v) in sq.iter().enumerate() {
                let th = 2.0 * PI * j as f64 / m as f64;
                let w = omega(th, k);
                num += v / w;
                den += 1.0 / w;
            }
            let avg = num / den;
            let src: Vec<f64> = sq.iter().map(|v| v - avg).collect();
            inner_psi.push(ThetaProfile::new(alpha_psi, solve_on_shell(&src, k, e))?);
        }
        let psi =
            CutoffShellFunction::assemble(k, alpha_psi, outer_psi, energies, inner_psi)?;

        Ok(Self { k, kappa_shell, phi, phi2: Some(phi2), psi: Some(psi) })
    }

    /// R'(E) = kappa_k E^{2/k-1} - shell_average(Phi^2, E); vanishes for E >= E_hi.
    pub fn r_prime(&self, e: f64) -> f64 {
        self.kappa_shell * e.powf(2.0 / self.k - 1.0) - self.phi.shell_average_sq(e)
    }

    pub fn phi2(&self) -> Result<&CutoffShellFunction> {
        self.phi2.as_ref().ok_or(Error::CorrectorUnbounded(self.k))
    }

    pub fn psi(&self) -> Result<&CutoffShellFunction> {
        self.psi.as_ref().ok_or(Error::CorrectorUnbounded(self.k))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut set: CorrectorSet = serde_json::from_str(s)?;
        set.phi.rebuild();
        if let Some(p) = set.phi2.as_mut() {
            p.rebuild();
        }
        if let Some(p) = set.psi.as_mut() {
            p.rebuild();
        }
        Ok(set)
    }

    /// Content hash of the serialized tables (sha256 hex).
    pub fn content_hash(&self) -> Result<String> {
        let json = self.to_json()?;
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }
}

/// Spec-level constructors for the individual correctors.
pub fn corrector_phi(k: f64) -> Result<CutoffShellFunction> {
    Ok(CorrectorSet::build(k)?.phi)
}

pub fn corrector_phi2(k: f64) -> Result<CutoffShellFunction> {
    if k <= 1.5 {
        return Err(Error::CorrectorUnbounded(k));
    }
    Ok(CorrectorSet::build(k)?.phi2.unwrap())
}

pub fn corrector_psi(k: f64) -> Result<CutoffShellFunction> {
    if k <= 1.5 {
        return Err(Error::CorrectorUnbounded(k));
    }
    Ok(CorrectorSet::build(k)?.psi.unwrap())
}
