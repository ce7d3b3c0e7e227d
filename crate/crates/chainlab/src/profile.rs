//! Periodic profiles on the unit shell.
//!
//! A `ThetaProfile` represents a function on the circle by M uniform samples
//! together with a scaling exponent: the full phase-space function is
//! value(theta, E) = E^alpha * profile(theta). Evaluation between nodes uses
//! a periodic cubic spline; theta-derivatives use spectral differentiation
//! (M is a power of two in this crate).

use crate::error::{Error, Result};
use crate::freeosc::omega;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_GRID: usize = 2048;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaProfile {
    /// The function scales like H_f^alpha.
    pub alpha: f64,
    values: Vec<f64>,
    /// Second derivatives of the periodic cubic spline (computed on build).
    #[serde(skip)]
    spline_m: Vec<f64>,
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

/// Second derivatives of the periodic cubic spline on a uniform grid.
///
/// The cyclic tridiagonal system (h/6, 2h/3, h/6) * m = d2y/h is circulant,
/// so it diagonalizes in Fourier space.
fn periodic_spline_m(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let h = 2.0 * PI / n as f64;
    let mut rhs = vec![0.0; n];
    for j in 0..n {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        rhs[j] = (values[jp] - 2.0 * values[j] + values[jm]) / h;
    }
    let mut spec = fft_forward(&rhs);
    for (m, c) in spec.iter_mut().enumerate() {
        let w = 2.0 * PI * m as f64 / n as f64;
        let lambda = h * (2.0 + w.cos()) / 3.0;
        *c /= lambda;
    }
    fft_inverse_real(spec)
}

impl ThetaProfile {
    /// Build from raw samples (theta_j = 2 pi j / M). Requires M >= 256.
    pub fn new(alpha: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 256 {
            return Err(Error::InvalidParameter(format!(
                "profile grid must have at least 256 points, got {}",
                values.len()
            )));
        }
        let spline_m = periodic_spline_m(&values);
        Ok(Self { alpha, values, spline_m })
    }

    /// Sample a function of theta on the default grid.
    pub fn from_fn(alpha: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..m).map(|j| f(2.0 * PI * j as f64 / m as f64)).collect();
        Self::new(alpha, values)
    }

    /// Rebuild the spline table (needed after deserialization).
    pub fn rebuild_spline(&mut self) {
        self.spline_m = periodic_spline_m(&self.values);
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cubic-spline evaluation at arbitrary theta (periodic).
    pub fn value_at(&self, theta: f64) -> f64 {
        let n = self.values.len();
        let h = 2.0 * PI / n as f64;
        let x = theta.rem_euclid(2.0 * PI) / h;
        let j = (x.floor() as usize).min(n - 1);
        let t = x - j as f64;
        let jp = (j + 1) % n;
        let (y0, y1) = (self.values[j], self.values[jp]);
        let (m0, m1) = (self.spline_m[j], self.spline_m[jp]);
        let u = 1.0 - t;
        y0 * u + y1 * t + h * h / 6.0 * ((u * u * u - u) * m0 + (t * t * t - t) * m1)
    }

    /// d/dtheta by spectral differentiation; the result keeps `alpha` (the
    /// scaling bookkeeping of partials is done by the caller).
    pub fn derivative(&self) -> ThetaProfile {
        let n = self.values.len();
        let mut spec = fft_forward(&self.values);
        for m in 0..n {
            let freq = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            let f = if m == n / 2 { 0.0 } else { freq };
            spec[m] *= Complex::new(0.0, f);
        }
        let values = fft_inverse_real(spec);
        let spline_m = periodic_spline_m(&values);
        ThetaProfile { alpha: self.alpha, values, spline_m }
    }

    /// Trigonometric upsampling to `factor * M` points (zero padding).
    pub fn upsample(&self, factor: usize) -> Vec<f64> {
        let n = self.values.len();
        let nn = n * factor;
        let spec = fft_forward(&self.values);
        let mut big = vec![Complex::new(0.0, 0.0); nn];
        for m in 0..=n / 2 {
            big[m] = spec[m];
        }
        for m in 1..n / 2 {
            big[nn - m] = spec[n - m];
        }
        // split the Nyquist mode symmetrically
        big[n / 2] *= 0.5;
        big[nn - n / 2] = big[n / 2].conj();
        let mut out = fft_inverse_real(big);
        for v in &mut out {
            *v *= factor as f64;
        }
        out
    }
}

/// Normalized time average over one orbit of the unit shell:
/// (int profile/omega dtheta) / (int dtheta/omega). Linear in the profile.
pub fn shell_average(profile: &ThetaProfile, k: f64) -> f64 {
    let n = profile.grid_size();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..n {
        let th = 2.0 * PI * j as f64 / n as f64;
        let w = omega(th, k);
        num += profile.values()[j] / w;
        den += 1.0 / w;
    }
    num / den
}

/// Solve X_{H_f} phi = psi on the unit shell: omega(theta) phi'(theta) =
/// psi(theta), with phi centered to zero time average.
///
/// Requires the source to average out to zero (within 1e-8 of its RMS).
/// The output exponent is alpha + 1/(2k) - 1/2.
pub fn solve_poisson_on_shell(psi: &ThetaProfile, k: f64) -> Result<ThetaProfile> {
    let n = psi.grid_size();
    let rms = (psi.values().iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let avg = shell_average(psi, k);
    if avg.abs() > 1e-8 * rms.max(1.0) {
        return Err(Error::SourceNotCentered(avg));
    }

    // g = psi / omega must integrate to zero over theta; antidifferentiate
    // spectrally, then recenter in the time average.
    let g: Vec<f64> = (0..n)
        .map(|j| {
            let th = 2.0 * PI * j as f64 / n as f64;
            psi.values()[j] / omega(th, k)
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
    let u = fft_inverse_real(spec);
    let mut out = ThetaProfile::new(psi.alpha + 0.5 / k - 0.5, u)?;
    let c = shell_average(&out, k);
    for v in &mut out.values {
        *v -= c;
    }
    out.rebuild_spline();
    Ok(out)
}
