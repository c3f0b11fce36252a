//! Fresnel-type tail integrals and the complex error function, used for the
//! exact product-integration moments of the oscillatory kernel
//! `tau^{-1/2} e^{i b / tau}`.
//!
//! Everything reduces to `I_nu(A) = integral_A^inf v^{-nu} e^{i v^2} dv`
//! for `nu in {0, 2, 4}`, which is evaluated through `erfc` on the ray
//! `arg z = -pi/4` (Taylor series for small |z|, Lentz continued fraction
//! otherwise) or through an integration-by-parts expansion when `A` is large
//! enough that the erfc route would cancel catastrophically.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_4, PI};

/// Complex error function complement for `Re z >= 0` (extended to the left
/// half-plane by the reflection `erfc(-z) = 2 - erfc(z)`).
pub fn erfc(z: Complex64) -> Complex64 {
    if z.re < 0.0 {
        return 2.0 - erfc(-z);
    }
    if z.norm() < 3.0 {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

/// Taylor series `erf(z) = (2/sqrt(pi)) sum (-1)^n z^{2n+1} / (n! (2n+1))`,
/// adequate to ~1e-13 for |z| <= 3.
fn erf_series(z: Complex64) -> Complex64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    for n in 1..120 {
        term *= -z2 / n as f64;
        let contrib = term / (2 * n + 1) as f64;
        sum += contrib;
        if contrib.norm() < 1e-18 * sum.norm().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / PI.sqrt()
}

/// Laplace continued fraction
/// `sqrt(pi) e^{z^2} erfc(z) = 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))`,
/// evaluated by modified Lentz iteration. Valid for `Re z > 0`.
fn erfc_continued_fraction(z: Complex64) -> Complex64 {
    // small enough to be negligible, large enough that its square stays
    // normal inside the complex division
    const TINY: f64 = 1e-30;
    let mut f = Complex64::new(TINY, 0.0);
    let mut c = f;
    let mut d = Complex64::ZERO;
    for k in 0..200 {
        let (a, b) = if k == 0 {
            (Complex64::ONE, z)
        } else {
            (Complex64::new(k as f64 / 2.0, 0.0), z)
        };
        d = b + a * d;
        if d.norm() < TINY {
            d = Complex64::new(TINY, 0.0);
        }
        c = b + a / c;
        if c.norm() < TINY {
            c = Complex64::new(TINY, 0.0);
        }
        d = d.inv();
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
    }
    f * (-z * z).exp() / PI.sqrt()
}

/// `integral_A^inf e^{i v^2} dv` for real `A >= 0`.
///
/// Equal to `(sqrt(pi)/2) e^{i pi/4} erfc(A e^{-i pi/4})`; on that ray
/// `e^{-z^2}` is unimodular, so the continued fraction neither overflows nor
/// underflows.
pub fn fresnel_tail(a: f64) -> Complex64 {
    debug_assert!(a >= 0.0);
    let z = a * Complex64::from_polar(1.0, -FRAC_PI_4);
    0.5 * PI.sqrt() * Complex64::from_polar(1.0, FRAC_PI_4) * erfc(z)
}

// Crossover between the two evaluation routes: the erfc route cancels two
// O(1/A) terms down to O(1/A^3), losing ~2 eps A^4 in relative accuracy,
// while the integration-by-parts expansion truncates at ~60/A^8. The routes
// are balanced near A = 28 at ~1.5e-10 relative, which is far below the
// absolute scale of any assembled weight.
const ASYMPTOTIC_SWITCH: f64 = 28.0;

/// `I_2(A) = integral_A^inf v^{-2} e^{i v^2} dv`.
fn i2(a: f64) -> Complex64 {
    let e = Complex64::from_polar(1.0, a * a);
    if a >= ASYMPTOTIC_SWITCH {
        let inv2 = 1.0 / (a * a);
        let series = Complex64::new(0.0, 0.5) / a.powi(3)
            * (Complex64::ONE
                + inv2
                    * (Complex64::new(0.0, -1.5)
                        + inv2
                            * (Complex64::new(-15.0 / 4.0, 0.0)
                                + inv2 * Complex64::new(0.0, 105.0 / 8.0))));
        e * series
    } else {
        e / a + 2.0 * Complex64::I * fresnel_tail(a)
    }
}

/// `I_4(A) = integral_A^inf v^{-4} e^{i v^2} dv`.
fn i4(a: f64) -> Complex64 {
    let e = Complex64::from_polar(1.0, a * a);
    if a >= ASYMPTOTIC_SWITCH {
        let inv2 = 1.0 / (a * a);
        let series = Complex64::new(0.0, 0.5) / a.powi(5)
            * (Complex64::ONE
                + inv2
                    * (Complex64::new(0.0, -2.5)
                        + inv2
                            * (Complex64::new(-35.0 / 4.0, 0.0)
                                + inv2 * Complex64::new(0.0, 315.0 / 8.0))));
        e * series
    } else {
        e * Complex64::new(1.0 / (3.0 * a.powi(3)), 2.0 / (3.0 * a))
            - (4.0 / 3.0) * fresnel_tail(a)
    }
}

/// `G0(t; b) = integral_0^t tau^{-1/2} e^{i b / tau} d tau`, the singular
/// moment of the oscillatory kernel. `b = 0` reduces to the Abel moment
/// `2 sqrt(t)`.
pub fn osc_moment_g0(t: f64, b: f64) -> Complex64 {
    debug_assert!(t >= 0.0 && b >= 0.0);
    if t == 0.0 {
        return Complex64::ZERO;
    }
    if b == 0.0 {
        return Complex64::new(2.0 * t.sqrt(), 0.0);
    }
    let a = (b / t).sqrt();
    2.0 * b.sqrt() * i2(a)
}

/// `G1(t; b) = integral_0^t tau^{1/2} e^{i b / tau} d tau`; `b = 0` gives
/// `(2/3) t^{3/2}`.
pub fn osc_moment_g1(t: f64, b: f64) -> Complex64 {
    debug_assert!(t >= 0.0 && b >= 0.0);
    if t == 0.0 {
        return Complex64::ZERO;
    }
    if b == 0.0 {
        return Complex64::new(2.0 / 3.0 * t.powf(1.5), 0.0);
    }
    let a = (b / t).sqrt();
    2.0 * b.powf(1.5) * i4(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson on [a, b]; test oracle only.
    fn simpson<F: Fn(f64) -> Complex64 + Copy>(f: F, a: f64, b: f64, n: usize) -> Complex64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn erfc_matches_statrs_on_real_axis() {
        for x in [-2.5f64, -1.0, -0.3, 0.0, 0.2, 0.9, 1.7, 2.9, 3.5, 6.0] {
            let ours = erfc(Complex64::new(x, 0.0));
            let reference = statrs::function::erf::erfc(x);
            // statrs itself is only ~1e-11 accurate on parts of the axis
            assert!(
                (ours.re - reference).abs() < 2e-11 + 1e-11 * reference.abs(),
                "erfc({x}) = {} vs {reference}",
                ours.re
            );
            assert!(ours.im.abs() < 1e-15);
        }
    }

    #[test]
    fn erfc_conjugate_symmetry() {
        let z = Complex64::new(1.3, -0.9);
        assert!((erfc(z.conj()) - erfc(z).conj()).norm() < 1e-14);
    }

    #[test]
    fn erfc_branches_agree_at_the_seam() {
        // radius 3 on the -pi/4 ray: both the Taylor series and the continued
        // fraction should be accurate there
        for r in [2.8f64, 2.95, 3.05, 3.3] {
            let z = r * Complex64::from_polar(1.0, -FRAC_PI_4);
            let taylor = 1.0 - erf_series(z);
            let cf = erfc_continued_fraction(z);
            assert!(
                (taylor - cf).norm() < 1e-11 * cf.norm().max(1e-12),
                "seam mismatch at r = {r}: {taylor} vs {cf}"
            );
        }
    }

    #[test]
    fn fresnel_tail_at_zero_is_the_full_integral() {
        // integral_0^inf e^{iv^2} dv = (sqrt(pi)/2) e^{i pi/4}
        let full = fresnel_tail(0.0);
        let expect = 0.5 * PI.sqrt() * Complex64::from_polar(1.0, FRAC_PI_4);
        assert!((full - expect).norm() < 1e-14);
    }

    #[test]
    fn fresnel_tail_matches_quadrature() {
        // integral_A^B e^{iv^2} dv = tail(A) - tail(B) against Simpson
        for (a, b) in [(0.5f64, 2.0f64), (1.0, 3.0), (2.0, 4.0)] {
            let oracle = simpson(|v| Complex64::from_polar(1.0, v * v), a, b, 40_000);
            let ours = fresnel_tail(a) - fresnel_tail(b);
            assert!(
                (ours - oracle).norm() < 1e-10,
                "[{a},{b}]: {ours} vs {oracle}"
            );
        }
    }

    #[test]
    fn g0_matches_quadrature_at_moderate_phase() {
        // phase b/tau <= 80 over the integration range: direct quadrature in
        // sigma = sqrt(tau) converges
        for (t, b) in [(1.0f64, 0.5f64), (0.5, 2.0), (2.0, 10.0)] {
            let oracle = simpson(
                |sigma| 2.0 * Complex64::from_polar(1.0, b / (sigma * sigma)),
                (b / 80.0f64).sqrt().min(0.9 * t.sqrt()),
                t.sqrt(),
                400_000,
            );
            // the truncated head [0, sigma_min] is bounded by parts
            let sigma_min = (b / 80.0f64).sqrt().min(0.9 * t.sqrt());
            let head_bound = 2.0 * sigma_min.powi(3) / b;
            let ours = osc_moment_g0(t, b);
            assert!(
                (ours - oracle).norm() < 1e-8 + 1.2 * head_bound,
                "G0({t}, {b}) = {ours} vs {oracle} (head bound {head_bound})"
            );
        }
    }

    #[test]
    fn g0_segment_differences_match_quadrature() {
        // segment [t1, t2] away from the singularity: plain Simpson works
        let (t1, t2, b) = (0.5f64, 1.0f64, 3.0f64);
        let oracle = simpson(
            |tau| Complex64::from_polar(1.0 / tau.sqrt(), b / tau),
            t1,
            t2,
            200_000,
        );
        let ours = osc_moment_g0(t2, b) - osc_moment_g0(t1, b);
        assert!((ours - oracle).norm() < 1e-10, "{ours} vs {oracle}");
    }

    #[test]
    fn g1_segment_differences_match_quadrature() {
        let (t1, t2, b) = (0.25f64, 0.75f64, 2.0f64);
        let oracle = simpson(
            |tau| Complex64::from_polar(tau.sqrt(), b / tau),
            t1,
            t2,
            200_000,
        );
        let ours = osc_moment_g1(t2, b) - osc_moment_g1(t1, b);
        assert!((ours - oracle).norm() < 1e-10, "{ours} vs {oracle}");
    }

    #[test]
    fn moments_recover_abel_limits_as_b_vanishes() {
        let t = 0.7;
        let g0 = osc_moment_g0(t, 1e-14);
        assert!((g0 - Complex64::new(2.0 * t.sqrt(), 0.0)).norm() < 1e-6);
        let g1 = osc_moment_g1(t, 1e-14);
        assert!((g1 - Complex64::new(2.0 / 3.0 * t.powf(1.5), 0.0)).norm() < 1e-6);
    }

    #[test]
    fn asymptotic_and_erfc_branches_agree_at_the_switch() {
        for a in [26.0f64, 27.9, 28.1, 31.0] {
            let e = Complex64::from_polar(1.0, a * a);
            let erfc_route = e / a + 2.0 * Complex64::I * fresnel_tail(a);
            let inv2 = 1.0 / (a * a);
            let asym = e * Complex64::new(0.0, 0.5) / a.powi(3)
                * (Complex64::ONE
                    + inv2
                        * (Complex64::new(0.0, -1.5)
                            + inv2
                                * (Complex64::new(-15.0 / 4.0, 0.0)
                                    + inv2 * Complex64::new(0.0, 105.0 / 8.0))));
            assert!(
                (erfc_route - asym).norm() < 1e-9 * asym.norm(),
                "I2 branches disagree at A = {a}: {erfc_route} vs {asym}"
            );
        }
    }

    #[test]
    fn g0_is_suppressed_deep_in_the_oscillatory_regime() {
        // |G0(t; b)| ~ t^{3/2}/b for b/t large
        let (t, b) = (0.01f64, 100.0f64);
        let g0 = osc_moment_g0(t, b);
        let scale = t.powf(1.5) / b;
        assert!(g0.norm() < 3.0 * scale);
        assert!(g0.norm() > 0.1 * scale);
    }
}
