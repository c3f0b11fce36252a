//! The free flow `e^{it d^2/dx^2}`: spectral evolution on the periodic grid,
//! the explicit point-source kernel, boundary traces of free evolutions, and
//! the `L^4_t C_x` norm of the linear flow.
//!
//! Fourier convention: `ghat(k) = (2 pi)^{-1/2} integral e^{-ikx} g(x) dx`,
//! so a mode `e^{ikx}` evolves to `e^{ikx - ik^2 t}` and the point source
//! evolves to `k(t, x) = (4 pi |t|)^{-1/2} exp(i x^2/(4t) - i pi/4 sign t)`.

use crate::domain::field::WaveField;
use crate::domain::grid::{SpatialGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::fft;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

/// Value of the free kernel `(e^{it d^2/dx^2} delta)(x)` for `t != 0`.
pub fn kernel_at(t: f64, x: f64) -> Result<Complex64> {
    if t == 0.0 {
        return Err(Error::SingularKernel);
    }
    let amp = 1.0 / (4.0 * PI * t.abs()).sqrt();
    let phase = x * x / (4.0 * t) - FRAC_PI_4 * t.signum();
    Ok(Complex64::from_polar(amp, phase))
}

/// Apply the Fourier multiplier `e^{-ik^2 t}` mode-wise; exactly
/// norm-preserving and a one-parameter group up to roundoff.
pub fn evolve_free(f: &WaveField, t: f64) -> WaveField {
    if t == 0.0 {
        return f.clone();
    }
    let grid = f.grid();
    let mut modes = f.to_modes();
    apply_free_multiplier(&mut modes, grid, t);
    WaveField::from_modes(grid, &modes).expect("unitary step keeps samples finite")
}

pub(crate) fn apply_free_multiplier(modes: &mut [Complex64], grid: SpatialGrid, t: f64) {
    for (m, c) in modes.iter_mut().enumerate() {
        let k = grid.wavenumber(m);
        *c *= Complex64::from_polar(1.0, -k * k * t);
    }
}

/// One Gaussian component `A exp(-(x - c)^2 / (4a))`; `a` may be complex
/// (chirped data) as long as `Re a > 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianTerm {
    pub amplitude: Complex64,
    pub width: Complex64,
    pub center: f64,
}

impl GaussianTerm {
    pub fn real(amplitude: f64, width: f64, center: f64) -> Result<Self> {
        Self::new(
            Complex64::new(amplitude, 0.0),
            Complex64::new(width, 0.0),
            center,
        )
    }

    pub fn new(amplitude: Complex64, width: Complex64, center: f64) -> Result<Self> {
        if !(width.re > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!(
                "gaussian width must have positive real part, got {width}"
            )));
        }
        Ok(Self {
            amplitude,
            width,
            center,
        })
    }

    pub fn evaluate(&self, x: f64) -> Complex64 {
        let d = x - self.center;
        self.amplitude * (-(d * d) / (4.0 * self.width)).exp()
    }

    /// Closed-form free evolution `A sqrt(a/(a+it)) exp(-(x-c)^2/(4(a+it)))`.
    ///
    /// `a + it` stays in the right half-plane, so the principal square roots
    /// give the branch that is continuous in `t` and equals one at `t = 0`.
    pub fn free_evolution_at(&self, x: f64, t: f64) -> Complex64 {
        let a = self.width;
        let ait = a + Complex64::new(0.0, t);
        let d = x - self.center;
        self.amplitude * (a.sqrt() / ait.sqrt()) * (-(d * d) / (4.0 * ait)).exp()
    }
}

/// Initial data given as a finite sum of (possibly chirped, displaced)
/// Gaussians; its free evolution is known in closed form, which removes one
/// error source from solver studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticData {
    pub terms: Vec<GaussianTerm>,
}

impl AnalyticData {
    pub fn gaussian(amplitude: f64, width: f64) -> Result<Self> {
        Ok(Self {
            terms: vec![GaussianTerm::real(amplitude, width, 0.0)?],
        })
    }

    pub fn evaluate(&self, x: f64) -> Complex64 {
        self.terms.iter().map(|g| g.evaluate(x)).sum()
    }

    pub fn free_evolution_at(&self, x: f64, t: f64) -> Complex64 {
        self.terms.iter().map(|g| g.free_evolution_at(x, t)).sum()
    }

    pub fn sample(&self, grid: SpatialGrid) -> Result<WaveField> {
        WaveField::from_fn(grid, |x| self.evaluate(x))
    }

    pub fn scale_amplitude(&self, factor: Complex64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|g| GaussianTerm {
                    amplitude: factor * g.amplitude,
                    ..*g
                })
                .collect(),
        }
    }

    /// Data conjugation, `psi_0 -> conj(psi_0)`.
    pub fn conj(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|g| GaussianTerm {
                    amplitude: g.amplitude.conj(),
                    width: g.width.conj(),
                    center: g.center,
                })
                .collect(),
        }
    }

    /// The rescaling `x -> sqrt(lambda) psi_0(lambda x)` applied exactly to
    /// the Gaussian parameters.
    pub fn rescale(&self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!(
                "rescale requires lambda > 0, got {lambda}"
            )));
        }
        Ok(Self {
            terms: self
                .terms
                .iter()
                .map(|g| GaussianTerm {
                    amplitude: lambda.sqrt() * g.amplitude,
                    width: g.width / (lambda * lambda),
                    center: g.center / lambda,
                })
                .collect(),
        })
    }
}

/// Free boundary trace of a centered Gaussian, `A (a/(a+it))^{1/2}` with the
/// principal branch. Ground truth for solver tests.
pub fn gaussian_free_trace(a_width: f64, amplitude: Complex64, t: f64) -> Result<Complex64> {
    let term = GaussianTerm::new(amplitude, Complex64::new(a_width, 0.0), 0.0)?;
    Ok(term.free_evolution_at(0.0, t))
}

/// `(e^{it d^2/dx^2} f0)(x0)` at each time node, by band-limited evaluation
/// of the spectral free flow.
pub fn free_trace(f0: &WaveField, times: &TimeGrid, x0: f64) -> Result<Vec<Complex64>> {
    let grid = f0.grid();
    if !grid.contains(x0) {
        return Err(Error::Domain(format!(
            "trace point {x0} lies outside [-{l}, {l})",
            l = grid.half_width()
        )));
    }
    let modes = f0.to_modes();
    let n = grid.n_points() as f64;
    // phase factors (-1)^m e^{i k x0} of the interpolant, fixed over time
    let eval: Vec<Complex64> = (0..grid.n_points())
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * Complex64::from_polar(1.0, grid.wavenumber(m) * x0) / n
        })
        .collect();
    Ok(times
        .nodes()
        .map(|t| {
            let mut acc = Complex64::ZERO;
            for (m, c) in modes.iter().enumerate() {
                let k = grid.wavenumber(m);
                acc += c * eval[m] * Complex64::from_polar(1.0, -k * k * t);
            }
            acc
        })
        .collect())
}

/// Windowed `L^4_t C_x` norm of the linear flow with a dispersive-decay tail
/// estimate fitted on the last decade of nodes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct L4cNorm {
    /// `(sum_n w_n dt (sup_x |e^{it_n d^2} f0|)^4)^{1/4}` over the window
    /// (trapezoid weights).
    pub value: f64,
    /// Estimated contribution of `[T, infinity)` assuming `sup_x ~ c/sqrt(t)`.
    pub tail_estimate: f64,
}

/// Grid sup of the free evolution at each node.
pub fn free_sup_series(f0: &WaveField, times: &TimeGrid) -> Vec<f64> {
    let grid = f0.grid();
    let modes = f0.to_modes();
    times
        .nodes()
        .map(|t| {
            let mut m = modes.clone();
            apply_free_multiplier(&mut m, grid, t);
            fft::ifft_inplace(&mut m);
            m.iter().map(|v| v.norm()).fold(0.0, f64::max)
        })
        .collect()
}

/// Trapezoid quadrature of `series^4` over the time nodes.
pub fn l4_time_quadrature(series: &[f64], dt: f64) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let sum = fft::kahan_sum(series.iter().enumerate().map(|(i, s)| {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        w * s.powi(4)
    }));
    dt * sum
}

pub fn linear_l4c_norm(f0: &WaveField, times: &TimeGrid) -> L4cNorm {
    let sups = free_sup_series(f0, times);
    let value = l4_time_quadrature(&sups, times.dt()).powf(0.25);

    // fit sup ~ c / sqrt(t) on the last decade of nodes
    let n = times.len();
    let start = (9 * n) / 10;
    let mut c = 0.0f64;
    let mut count = 0usize;
    for i in start.max(1)..n {
        c += sups[i] * times.node(i).sqrt();
        count += 1;
    }
    let tail_estimate = if count == 0 || times.t_final() == 0.0 {
        0.0
    } else {
        let c = c / count as f64;
        // integral of (c/sqrt(t))^4 over [T, infinity) = c^4 / T
        (c.powi(4) / times.t_final()).powf(0.25)
    };
    L4cNorm {
        value,
        tail_estimate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(20.0, 2048).unwrap()
    }

    fn gaussian_field(amp: f64) -> WaveField {
        AnalyticData::gaussian(amp, 0.25)
            .unwrap()
            .sample(grid())
            .unwrap()
    }

    #[test]
    fn kernel_value_at_one() {
        let k = kernel_at(1.0, 0.0).unwrap();
        assert!((k.re - 0.19947114).abs() < 5e-9);
        assert!((k.im + 0.19947114).abs() < 5e-9);
    }

    #[test]
    fn kernel_identities_hold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut t: f64 = rng.random::<f64>() * 20.0 - 10.0;
            if t == 0.0 {
                t = 0.1;
            }
            let k = kernel_at(t, 0.0).unwrap();
            let km = kernel_at(-t, 0.0).unwrap();
            assert!((k.conj() - km).norm() < 1e-12);
            assert!((km - Complex64::I * t.signum() * k).norm() < 1e-12);
        }
        // conj(k(t,0)) = k(-t,0) at the named sample
        let t = 0.37;
        assert!((kernel_at(t, 0.0).unwrap().conj() - kernel_at(-t, 0.0).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn kernel_modulus_is_x_independent() {
        let k = kernel_at(2.0, 5.0).unwrap();
        assert!((k.norm() - 1.0 / (8.0 * PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kernel_rejects_t_zero() {
        assert!(matches!(kernel_at(0.0, 1.0), Err(Error::SingularKernel)));
    }

    #[test]
    fn evolve_identity_at_t_zero() {
        let f = gaussian_field(1.0);
        let g = evolve_free(&f, 0.0);
        assert_eq!(f.l2_distance(&g).unwrap(), 0.0);
    }

    #[test]
    fn plane_wave_is_an_eigenfunction() {
        // k = 2 is an exact mode of a grid with L = 4 pi
        let g = SpatialGrid::new(4.0 * PI, 256).unwrap();
        let f = WaveField::from_fn(g, |x| Complex64::from_polar(1.0, 2.0 * x)).unwrap();
        let evolved = evolve_free(&f, 0.5);
        let phase = Complex64::from_polar(1.0, -2.0); // e^{-ik^2 t} = e^{-2i}
        for (v, x) in evolved.values().iter().zip(g.points()) {
            let expect = phase * Complex64::from_polar(1.0, 2.0 * x);
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn gaussian_free_evolution_matches_closed_form() {
        let f = gaussian_field(1.0);
        let evolved = evolve_free(&f, 1.0);
        let data = AnalyticData::gaussian(1.0, 0.25).unwrap();
        let mut max_err = 0.0f64;
        for (v, x) in evolved.values().iter().zip(grid().points()) {
            max_err = max_err.max((v - data.free_evolution_at(x, 1.0)).norm());
        }
        assert!(max_err < 1e-8, "max abs error {max_err}");
    }

    #[test]
    fn unitarity_and_group_law() {
        let f = gaussian_field(1.3);
        let m0 = f.mass();
        for t in [0.1, 1.0, 7.3, -2.4] {
            let e = evolve_free(&f, t);
            assert!((e.mass() - m0).abs() <= 1e-13 * m0);
            let back = evolve_free(&e, -t);
            assert!(back.l2_distance(&f).unwrap() <= 1e-12 * m0.sqrt());
        }
        let two_step = evolve_free(&evolve_free(&f, 0.7), 0.5);
        let one_step = evolve_free(&f, 1.2);
        assert!(two_step.l2_distance(&one_step).unwrap() < 1e-12);
    }

    #[test]
    fn free_trace_zero_data() {
        let times = TimeGrid::new(1.0, 16).unwrap();
        let tr = free_trace(&WaveField::zero(grid()), &times, 0.0).unwrap();
        assert!(tr.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn free_trace_matches_gaussian_oracle() {
        let f = gaussian_field(1.0);
        let times = TimeGrid::new(2.0, 64).unwrap();
        let tr = free_trace(&f, &times, 0.0).unwrap();
        for (n, t) in times.nodes().enumerate() {
            let oracle = gaussian_free_trace(0.25, Complex64::ONE, t).unwrap();
            assert!(
                (tr[n] - oracle).norm() < 1e-8,
                "node {n}: {} vs {oracle}",
                tr[n]
            );
        }
        // |a(1)| = 17^{-1/4}
        let a1 = gaussian_free_trace(0.25, Complex64::ONE, 1.0).unwrap();
        assert!((a1.norm() - 17f64.powf(-0.25)).abs() < 1e-12);
    }

    #[test]
    fn free_trace_respects_time_reversal_on_real_even_data() {
        let f = gaussian_field(0.8);
        let times = TimeGrid::new(1.5, 12).unwrap();
        let fwd = free_trace(&f, &times, 0.0).unwrap();
        for (n, t) in times.nodes().enumerate() {
            let back = AnalyticData::gaussian(0.8, 0.25)
                .unwrap()
                .free_evolution_at(0.0, -t);
            assert!((fwd[n].conj() - back).norm() < 1e-10);
        }
    }

    #[test]
    fn free_trace_consistent_with_interpolated_evolution() {
        let f = gaussian_field(1.0);
        let times = TimeGrid::new(1.0, 4).unwrap();
        let x0 = 0.4137;
        let tr = free_trace(&f, &times, x0).unwrap();
        for (n, t) in times.nodes().enumerate() {
            let direct = evolve_free(&f, t).interpolate_at(x0);
            assert!((tr[n] - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn free_trace_rejects_outside_domain() {
        let times = TimeGrid::new(1.0, 4).unwrap();
        assert!(free_trace(&gaussian_field(1.0), &times, 25.0).is_err());
    }

    #[test]
    fn gaussian_trace_basics() {
        let a = gaussian_free_trace(0.25, Complex64::ONE, 0.0).unwrap();
        assert!((a - Complex64::ONE).norm() < 1e-15);
        // (1 + 4i)^{-1/2} by direct complex arithmetic
        let expect = Complex64::new(1.0, 4.0).powf(-0.5);
        let got = gaussian_free_trace(0.25, Complex64::ONE, 1.0).unwrap();
        assert!((got - expect).norm() < 1e-14);
        // dispersive decay
        let mut last = f64::INFINITY;
        for t in [0.0, 1.0, 2.0, 4.0] {
            let v = gaussian_free_trace(0.25, Complex64::ONE, t).unwrap().norm();
            assert!(v <= last + 1e-15);
            last = v;
        }
        assert!(gaussian_free_trace(-1.0, Complex64::ONE, 0.5).is_err());
    }

    #[test]
    fn l4c_norm_zero_data_and_homogeneity() {
        let times = TimeGrid::new(2.0, 128).unwrap();
        let zero = linear_l4c_norm(&WaveField::zero(grid()), &times);
        assert_eq!(zero.value, 0.0);
        let one = linear_l4c_norm(&gaussian_field(1.0), &times).value;
        let two = linear_l4c_norm(&gaussian_field(2.0), &times).value;
        assert!((two - 2.0 * one).abs() < 1e-12 * two);
    }

    #[test]
    fn l4c_norm_stable_under_time_refinement() {
        let f = gaussian_field(1.0);
        let coarse = linear_l4c_norm(&f, &TimeGrid::new(8.0, 8 * 256).unwrap()).value;
        let fine = linear_l4c_norm(&f, &TimeGrid::new(8.0, 8 * 1024).unwrap()).value;
        assert!(
            (coarse - fine).abs() < 0.01 * fine,
            "coarse {coarse} vs fine {fine}"
        );
    }
}
