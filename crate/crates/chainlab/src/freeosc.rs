//! Free-oscillator geometry: shell coordinates, the conjugated circle
//! dynamics, the unit-energy periodic orbit and the constants kappa_{k,n}.
//!
//! The free oscillator is H_f(P,Q) = P^2/2 + |Q|^{2k}/(2k). Its Liouville
//! field X_{H_f} = P d_Q - Q|Q|^{2k-2} d_P preserves energy shells, and on
//! each shell it is conjugate to omega(theta) d_theta on the circle via
//! (P,Q) = (r(theta) cos theta, r(theta) sin theta) rescaled by the shell
//! energy. `k` is a real parameter, k = 1 is a harmonic test mode.

use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

/// Pinning homogeneity parameters of the free oscillator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreeOscParams {
    /// Pinning exponent: the on-site potential is |q|^{2k}/(2k).
    pub k: f64,
}

impl FreeOscParams {
    /// k > 1 is the production regime; k = 1 is accepted as a harmonic test mode.
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("k must be >= 1, got {k}")));
        }
        Ok(Self { k })
    }

    /// Period-scaling exponent alpha = 1/2 - 1/(2k).
    pub fn alpha(&self) -> f64 {
        0.5 - 0.5 / self.k
    }
}

/// Free-oscillator energy H_f(P,Q) = P^2/2 + |Q|^{2k}/(2k).
pub fn hf_energy(p: f64, q: f64, k: f64) -> f64 {
    0.5 * p * p + q.abs().powf(2.0 * k) / (2.0 * k)
}

/// Pinning force -V'(q) = -q|q|^{2k-2}, evaluated as -sign(q)|q|^{2k-1}.
pub fn pinning_force(q: f64, k: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        -q.signum() * q.abs().powf(2.0 * k - 1.0)
    }
}

/// Radial profile of the unit shell: the unique positive root of
/// r^2 cos^2(th)/2 + r^{2k}|sin(th)|^{2k}/(2k) = 1.
///
/// Safeguarded Newton with bisection fallback, |residual| < 1e-13.
pub fn radius_profile(theta: f64, k: f64) -> f64 {
    let c2 = theta.cos().powi(2) / 2.0;
    let s2k = theta.sin().abs().powf(2.0 * k) / (2.0 * k);
    let f = |r: f64| r * r * c2 + r.powf(2.0 * k) * s2k - 1.0;
    let fp = |r: f64| 2.0 * r * c2 + 2.0 * k * r.powf(2.0 * k - 1.0) * s2k;

    let (mut lo, mut hi) = (0.5_f64, 3.0_f64);
    let mut r = 1.4;
    for _ in 0..200 {
        let fr = f(r);
        if fr.abs() < 1e-13 {
            return r;
        }
        if fr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let step = fr / fp(r);
        let next = r - step;
        r = if next <= lo || next >= hi { 0.5 * (lo + hi) } else { next };
    }
    r
}

/// Angular speed of the conjugated circle flow:
/// omega(th) = cos^2(th) + r^{2k-2}(th) |sin(th)|^{2k}.
pub fn omega(theta: f64, k: f64) -> f64 {
    let r = radius_profile(theta, k);
    theta.cos().powi(2) + r.powf(2.0 * k - 2.0) * theta.sin().abs().powf(2.0 * k)
}

/// Shell coordinates (theta, E) of a phase-space point.
///
/// The rescaled point (P/E^{1/2}, Q/E^{1/(2k)}) lies on the unit shell and
/// theta is its polar angle in [0, 2pi).
pub fn to_shell_coords(p: f64, q: f64, k: f64) -> Result<(f64, f64)> {
    let e = hf_energy(p, q, k);
    if e <= 0.0 || !e.is_finite() {
        return Err(Error::UndefinedShellCoordinates);
    }
    let x = p / e.sqrt();
    let y = q / e.powf(0.5 / k);
    let mut theta = y.atan2(x);
    if theta < 0.0 {
        theta += 2.0 * std::f64::consts::PI;
    }
    Ok((theta, e))
}

/// Inverse of [`to_shell_coords`].
pub fn from_shell_coords(theta: f64, e: f64, k: f64) -> (f64, f64) {
    let r = radius_profile(theta, k);
    let p = e.sqrt() * r * theta.cos();
    let q = e.powf(0.5 / k) * r * theta.sin();
    (p, q)
}

/// Area element of shell coordinates: dP dQ = J(theta, E) dtheta dE with
/// J = E^{1/(2k) - 1/2} / omega(theta) (energy-time is a canonical pair).
pub fn shell_jacobian(theta: f64, e: f64, k: f64) -> f64 {
    e.powf(0.5 / k - 0.5) / omega(theta, k)
}

/// Period of the unit-energy orbit by quadrature: tau = int_0^{2pi} dtheta/omega.
///
/// The integrand is periodic and C^[2k], so the trapezoid rule converges
/// spectrally fast; M = 2^14 leaves the error far below 1e-12.
pub fn free_period(k: f64) -> f64 {
    let m = 1 << 14;
    let mut sum = 0.0;
    for j in 0..m {
        let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
        sum += 1.0 / omega(th, k);
    }
    sum * 2.0 * std::f64::consts::PI / m as f64
}

/// The unit-energy free orbit sampled uniformly in time over one period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitSample {
    pub k: f64,
    /// Period from the quadrature route.
    pub tau: f64,
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Max |H_f - 1| along the recorded samples.
    pub energy_error: f64,
    /// Return time measured by the ODE integration (independent of `tau`).
    pub return_time: f64,
}

fn rk4_step(p: &mut f64, q: &mut f64, h: f64, k: f64) {
    let (p0, q0) = (*p, *q);
    let k1p = pinning_force(q0, k);
    let k1q = p0;
    let k2p = pinning_force(q0 + 0.5 * h * k1q, k);
    let k2q = p0 + 0.5 * h * k1p;
    let k3p = pinning_force(q0 + 0.5 * h * k2q, k);
    let k3q = p0 + 0.5 * h * k2p;
    let k4p = pinning_force(q0 + h * k3q, k);
    let k4q = p0 + h * k3p;
    *p = p0 + h * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0;
    *q = q0 + h * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0;
}

/// Integrate the free oscillator from (sqrt 2, 0) over one period, recording
/// `m_t` uniform time samples. Also measures the ODE return time: the first
/// upward crossing of q = 0 near tau.
pub fn free_orbit(k: f64, m_t: usize) -> OrbitSample {
    let tau = free_period(k);
    let sub = 16;
    let h = tau / (m_t * sub) as f64;
    let mut p = std::f64::consts::SQRT_2;
    let mut q = 0.0_f64;
    let mut times = Vec::with_capacity(m_t);
    let mut ps = Vec::with_capacity(m_t);
    let mut qs = Vec::with_capacity(m_t);
    let mut energy_error = 0.0_f64;
    for i in 0..m_t {
        times.push(i as f64 * h * sub as f64);
        ps.push(p);
        qs.push(q);
        energy_error = energy_error.max((hf_energy(p, q, k) - 1.0).abs());
        for _ in 0..sub {
            rk4_step(&mut p, &mut q, h, k);
        }
    }
    // Refine the return time with Newton on q(t) (q' = p), starting from tau.
    let mut t = tau;
    let (mut pr, mut qr) = (p, q);
    for _ in 0..50 {
        let dt = -qr / pr;
        if dt.abs() < 1e-14 * tau {
            break;
        }
        let steps = 8;
        for _ in 0..steps {
            rk4_step(&mut pr, &mut qr, dt / steps as f64, k);
        }
        t += dt;
    }
    OrbitSample { k, tau, times, p: ps, q: qs, energy_error, return_time: t }
}

/// kappa_{k,n}: variance of the zero-mean (2n-1)-fold periodic antiderivative
/// of the unit-orbit position.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KappaResult {
    pub k: f64,
    pub n: usize,
    pub kappa: f64,
    /// Spectral-tail estimate of the truncation error.
    pub stderr_estimate: f64,
}

/// Compute kappa_{k,n} from the Fourier series of the orbit position.
///
/// With q~(t) = sum_m c_m e^{i 2 pi m t / tau}, the m-th coefficient of the
/// antiderivative chain is c_m / (i 2 pi m / tau)^{2n-1}; the mean is dropped
/// at every stage, and the variance is the sum of squared moduli of the
/// nonzero modes (two-sided). Real-series convention: variance =
/// 2 sum_{m>=1} |c_m|^2 for the one-sided coefficients of a real signal.
pub fn kappa(k: f64, n: usize) -> Result<KappaResult> {
    if !(k >= 1.0) {
        return Err(Error::InvalidParameter(format!("k must be >= 1, got {k}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let m_t = 1 << 14;
    let orbit = free_orbit(k, m_t);
    let mut buf: Vec<Complex<f64>> =
        orbit.q.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m_t).process(&mut buf);

    let omega0 = 2.0 * std::f64::consts::PI / orbit.tau;
    let ord = (2 * n - 1) as i32;
    let mut kappa = 0.0;
    let mut tail = 0.0;
    // modes 1..m_t/2; the orbit is real so negative modes double the positive ones
    for m in 1..m_t / 2 {
        let c = buf[m] / m_t as f64;
        let denom = (m as f64 * omega0).powi(ord);
        let contrib = 2.0 * (c.norm_sqr()) / (denom * denom);
        kappa += contrib;
        if m >= m_t / 4 {
            tail += contrib;
        }
    }
    Ok(KappaResult { k, n, kappa, stderr_estimate: tail.max(orbit.energy_error) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hf_energy_examples() {
        assert_relative_eq!(hf_energy(std::f64::consts::SQRT_2, 0.0, 2.0), 1.0);
        let q = (2.0_f64 * 3.0).powf(1.0 / 6.0);
        assert_relative_eq!(hf_energy(0.0, q, 3.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(hf_energy(1.0, 1.0, 2.0), 0.75);
    }

    #[test]
    fn radius_profile_examples() {
        // at theta = 0 the equation reduces to r^2/2 = 1
        for &k in &[1.5, 2.0, 3.0, 4.0] {
            assert_relative_eq!(radius_profile(0.0, k), std::f64::consts::SQRT_2, epsilon = 1e-12);
        }
        // theta = pi/2, k = 3: r = 6^{1/6}
        assert_relative_eq!(
            radius_profile(std::f64::consts::FRAC_PI_2, 3.0),
            6.0_f64.powf(1.0 / 6.0),
            epsilon = 1e-12
        );
        // harmonic test mode: circle of radius sqrt 2
        for j in 0..8 {
            let th = j as f64 * 0.7853981633974483;
            assert_relative_eq!(radius_profile(th, 1.0), std::f64::consts::SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn radius_residual_small_everywhere() {
        for &k in &[1.2, 1.75, 2.0, 3.0, 5.0] {
            for j in 0..256 {
                let th = 2.0 * std::f64::consts::PI * j as f64 / 256.0;
                let r = radius_profile(th, k);
                let res = r * r * th.cos().powi(2) / 2.0
                    + r.powf(2.0 * k) * th.sin().abs().powf(2.0 * k) / (2.0 * k)
                    - 1.0;
                assert!(res.abs() < 1e-12, "k={k} th={th} res={res}");
            }
        }
    }

    #[test]
    fn omega_examples() {
        assert_relative_eq!(omega(0.0, 2.0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(omega(0.0, 3.0), 1.0, epsilon = 1e-13);
        // (2k)^{1 - 1/k} at theta = pi/2
        assert_relative_eq!(omega(std::f64::consts::FRAC_PI_2, 2.0), 2.0, epsilon = 1e-12);
        for j in 0..16 {
            let th = j as f64 * 0.4;
            assert_relative_eq!(omega(th, 1.0), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shell_coords_roundtrip() {
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for &k in &[1.5, 2.0, 3.0] {
            for _ in 0..1000 {
                let p = 4.0 * (next() - 0.5);
                let q = 4.0 * (next() - 0.5);
                if hf_energy(p, q, k) < 1e-6 {
                    continue;
                }
                let (th, e) = to_shell_coords(p, q, k).unwrap();
                let (p2, q2) = from_shell_coords(th, e, k);
                let scale = (p * p + q * q).sqrt();
                assert!(((p - p2).powi(2) + (q - q2).powi(2)).sqrt() < 1e-10 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn shell_coords_examples() {
        let (th, e) = to_shell_coords(std::f64::consts::SQRT_2, 0.0, 2.0).unwrap();
        assert_relative_eq!(th, 0.0, epsilon = 1e-14);
        assert_relative_eq!(e, 1.0, epsilon = 1e-14);

        // at E = 9, theta must equal the polar angle of the rescaled unit-shell point
        let k = 2.0;
        let (p, q) = from_shell_coords(1.234, 9.0, k);
        let (th2, e2) = to_shell_coords(p, q, k).unwrap();
        assert_relative_eq!(e2, 9.0, epsilon = 1e-12);
        let y = q / 9.0_f64.powf(0.25);
        let x = p / 3.0;
        assert_relative_eq!(th2, y.atan2(x), epsilon = 1e-12);

        assert!(matches!(
            to_shell_coords(0.0, 0.0, 2.0),
            Err(Error::UndefinedShellCoordinates)
        ));
    }

    #[test]
    fn period_matches_ode_return_time() {
        // k = 1: analytic 2 pi
        assert_relative_eq!(free_period(1.0), 2.0 * std::f64::consts::PI, epsilon = 1e-11);
        for &k in &[1.75, 2.0, 3.0] {
            let orbit = free_orbit(k, 1 << 12);
            assert!(
                (orbit.tau - orbit.return_time).abs() < 1e-9 * orbit.tau,
                "k={k}: tau={} return={}",
                orbit.tau,
                orbit.return_time
            );
            assert!(orbit.energy_error < 1e-10, "k={k}: energy error {}", orbit.energy_error);
        }
    }

    #[test]
    fn kappa_harmonic_analytic() {
        // q~ = sqrt2 sin t, antiderivative -sqrt2 cos t, variance 1
        let r = kappa(1.0, 1).unwrap();
        assert_relative_eq!(r.kappa, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kappa_paper_values() {
        assert_relative_eq!(kappa(2.0, 1).unwrap().kappa, 0.63546991, epsilon = 1e-6);
        assert_relative_eq!(kappa(3.0, 1).unwrap().kappa, 0.42363371, epsilon = 1e-6);
    }

    #[test]
    fn jacobian_matches_determinant() {
        // |det d(P,Q)/d(theta,E)| by finite differences
        let k = 2.7;
        for &(th, e) in &[(0.3, 1.7), (2.1, 4.0), (4.4, 0.6)] {
            let h = 1e-6;
            let (p1, q1) = from_shell_coords(th + h, e, k);
            let (p0, q0) = from_shell_coords(th - h, e, k);
            let (p3, q3) = from_shell_coords(th, e + h, k);
            let (p2, q2) = from_shell_coords(th, e - h, k);
            let det = ((p1 - p0) / (2.0 * h)) * ((q3 - q2) / (2.0 * h))
                - ((p3 - p2) / (2.0 * h)) * ((q1 - q0) / (2.0 * h));
            assert_relative_eq!(det.abs(), shell_jacobian(th, e, k), epsilon = 1e-6);
        }
    }
}
