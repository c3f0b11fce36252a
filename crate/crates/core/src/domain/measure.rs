//! Coupling measures: finitely many weighted atoms plus an optional
//! integrable density `g_eps(x) = g(x/eps)/eps` sampled on a grid.

use crate::domain::grid::SpatialGrid;
use crate::error::{Error, Result};
use crate::fft::kahan_sum;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Closed-form base profiles with unit integral, plus tabulated profiles
/// loaded from two-column text files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Profile {
    /// `g = 1` on `[-1/2, 1/2]`.
    Box,
    /// Standard normal density.
    Gaussian,
    /// `2 N(x; -1/2, 1/2) - N(x; 1/2, 1/2)`: unit integral but not
    /// nonnegative, so `|g|` integrates to more than one.
    SignedTwoBump,
    /// Piecewise-linear table `(x, g(x))`, renormalized to unit integral.
    Tabulated {
        name: String,
        x: Vec<f64>,
        g: Vec<f64>,
    },
}

fn normal_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

impl Profile {
    pub fn name(&self) -> &str {
        match self {
            Profile::Box => "box",
            Profile::Gaussian => "gaussian",
            Profile::SignedTwoBump => "signed-two-bump",
            Profile::Tabulated { name, .. } => name,
        }
    }

    /// Base profile value `g(x)` (before the `eps` rescaling).
    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            Profile::Box => {
                if (-0.5..=0.5).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Gaussian => normal_density(x, 0.0, 1.0),
            Profile::SignedTwoBump => {
                2.0 * normal_density(x, -0.5, 0.5) - normal_density(x, 0.5, 0.5)
            }
            Profile::Tabulated { x: xs, g, .. } => {
                if xs.is_empty() || x < xs[0] || x > *xs.last().unwrap() {
                    return 0.0;
                }
                let i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                    Ok(i) => return g[i],
                    Err(i) => i,
                };
                let (x0, x1) = (xs[i - 1], xs[i]);
                let w = (x - x0) / (x1 - x0);
                g[i - 1] * (1.0 - w) + g[i] * w
            }
        }
    }

    /// Load a tabulated profile: two whitespace-separated columns `(x, g)`,
    /// `#` comments, strictly increasing abscissae. The table is renormalized
    /// so its trapezoid integral is exactly one.
    pub fn from_file(path: &Path) -> Result<Profile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ProfileFile(format!("{}: {e}", path.display())))?;
        let mut xs = Vec::new();
        let mut gs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| {
                    Error::ProfileFile(format!("{}:{}: expected two columns", path.display(), lineno + 1))
                })?
                .parse()
                .map_err(|e| Error::ProfileFile(format!("{}:{}: {e}", path.display(), lineno + 1)))
            };
            xs.push(parse(cols.next())?);
            gs.push(parse(cols.next())?);
        }
        if xs.len() < 2 {
            return Err(Error::ProfileFile(format!(
                "{}: need at least two rows",
                path.display()
            )));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ProfileFile(format!(
                "{}: abscissae must be strictly increasing",
                path.display()
            )));
        }
        let mut integral = 0.0;
        for i in 1..xs.len() {
            integral += 0.5 * (gs[i - 1] + gs[i]) * (xs[i] - xs[i - 1]);
        }
        if integral.abs() < 1e-12 {
            return Err(Error::ProfileFile(format!(
                "{}: table integrates to ~0, cannot renormalize",
                path.display()
            )));
        }
        for g in &mut gs {
            *g /= integral;
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "tabulated".into());
        Ok(Profile::Tabulated { name, x: xs, g: gs })
    }
}

/// Grid samples of `g_eps(x) = g(x/eps)/eps` together with the recorded
/// discrete integrals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySamples {
    pub grid: SpatialGrid,
    pub profile: String,
    pub epsilon: f64,
    pub values: Vec<f64>,
    /// `dx sum g_eps`
    pub integral: f64,
    /// `dx sum |g_eps|`
    pub abs_integral: f64,
}

/// Sample `g_eps` on `grid`. Fails when `eps < 4 dx`, where the samples would
/// no longer resolve the profile.
///
/// The box profile is sampled by exact cell averages so that its discrete
/// integral is exactly one; smooth profiles are sampled pointwise, which for
/// resolved widths is accurate to spectral precision.
pub fn sample_g_eps(profile: &Profile, epsilon: f64, grid: SpatialGrid) -> Result<DensitySamples> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let dx = grid.dx();
    if epsilon < 4.0 * dx {
        return Err(Error::UnderResolvedProfile { epsilon, dx });
    }
    let values: Vec<f64> = match profile {
        Profile::Box => {
            // cell average of (1/eps) 1_{[-eps/2, eps/2]}
            let half = 0.5 * epsilon;
            grid.points()
                .map(|x| {
                    let lo = (x - 0.5 * dx).max(-half);
                    let hi = (x + 0.5 * dx).min(half);
                    ((hi - lo).max(0.0) / dx) / epsilon
                })
                .collect()
        }
        _ => grid
            .points()
            .map(|x| profile.evaluate(x / epsilon) / epsilon)
            .collect(),
    };
    let integral = dx * kahan_sum(values.iter().copied());
    let abs_integral = dx * kahan_sum(values.iter().map(|v| v.abs()));
    Ok(DensitySamples {
        grid,
        profile: profile.name().to_string(),
        epsilon,
        values,
        integral,
        abs_integral,
    })
}

/// A point of the coupling measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Finitely many atoms plus an optional density; represents the measure
/// `mu = sum c_j delta_{x_j} + g_eps dx`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingMeasure {
    atoms: Vec<Atom>,
    density: Option<DensitySamples>,
}

impl CouplingMeasure {
    /// The point coupling: a single unit atom at the origin.
    pub fn delta() -> Self {
        Self {
            atoms: vec![Atom {
                location: 0.0,
                weight: 1.0,
            }],
            density: None,
        }
    }

    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
        }
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(a.location.is_finite() && a.weight.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite atom".into()));
            }
        }
        for (i, a) in atoms.iter().enumerate() {
            for b in &atoms[i + 1..] {
                if a.location == b.location {
                    return Err(Error::InvalidMeasure(format!(
                        "duplicate atom location {}",
                        a.location
                    )));
                }
            }
        }
        Ok(Self {
            atoms,
            density: None,
        })
    }

    pub fn from_density(density: DensitySamples) -> Self {
        Self {
            atoms: Vec::new(),
            density: Some(density),
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&DensitySamples> {
        self.density.as_ref()
    }

    pub fn is_purely_atomic(&self) -> bool {
        self.density.is_none()
    }

    /// Total variation `sum |c_j| + dx sum |g_eps|`.
    pub fn total_variation(&self) -> f64 {
        let atomic: f64 = self.atoms.iter().map(|a| a.weight.abs()).sum();
        atomic + self.density.as_ref().map_or(0.0, |d| d.abs_integral)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(20.0, 2048).unwrap()
    }

    #[test]
    fn box_profile_at_eps_tenth() {
        let g = grid();
        let d = sample_g_eps(&Profile::Box, 0.1, g).unwrap();
        // interior node: x = 0 is a node, value 1/eps = 10
        let j0 = g.n_points() / 2;
        assert!((d.values[j0] - 10.0).abs() < 1e-12);
        // far outside the support
        let j_far = g.n_points() / 4;
        assert_eq!(d.values[j_far], 0.0);
        // cell averages integrate exactly
        assert!((d.integral - 1.0).abs() < 1e-12);
        assert!((d.abs_integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eps_one_recovers_base_profile() {
        let g = grid();
        let d = sample_g_eps(&Profile::Gaussian, 1.0, g).unwrap();
        for (j, x) in g.points().enumerate().step_by(97) {
            let expect = normal_density(x, 0.0, 1.0);
            assert!((d.values[j] - expect).abs() < 1e-14);
        }
        assert!((d.integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signed_two_bump_integrals() {
        let g = grid();
        let d = sample_g_eps(&Profile::SignedTwoBump, 0.5, g).unwrap();
        assert!((d.integral - 1.0).abs() < 1e-10);
        // quadrature oracle for |g| on a fine Simpson mesh
        let n = 200_001usize;
        let (a, b) = (-6.0f64, 6.0f64);
        let h = (b - a) / (n - 1) as f64;
        let f = |x: f64| Profile::SignedTwoBump.evaluate(x).abs();
        let mut s = f(a) + f(b);
        for i in 1..n - 1 {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        let l1 = s * h / 3.0;
        assert!(l1 > 1.0, "signed profile must have |g| integral > 1");
        // the grid sum of |g_eps| is kink-limited to O(dx^2 / eps^2)
        assert!(
            (d.abs_integral - l1).abs() < 1e-3,
            "{} vs oracle {l1}",
            d.abs_integral
        );
        // the profile really changes sign
        assert!(Profile::SignedTwoBump.evaluate(0.5) < 0.0);
        assert!(Profile::SignedTwoBump.evaluate(-0.5) > 0.0);
    }

    #[test]
    fn under_resolved_profile_is_refused() {
        let g = grid();
        let err = sample_g_eps(&Profile::Box, g.dx(), g);
        assert!(matches!(err, Err(Error::UnderResolvedProfile { .. })));
    }

    #[test]
    fn atoms_must_be_distinct() {
        let atoms = vec![
            Atom {
                location: 0.0,
                weight: 1.0,
            },
            Atom {
                location: 0.0,
                weight: -1.0,
            },
        ];
        assert!(CouplingMeasure::from_atoms(atoms).is_err());
    }

    #[test]
    fn total_variation_combines_atoms_and_density() {
        let g = grid();
        let d = sample_g_eps(&Profile::SignedTwoBump, 0.5, g).unwrap();
        let abs = d.abs_integral;
        let mut m = CouplingMeasure::from_atoms(vec![
            Atom {
                location: 1.0,
                weight: -2.0,
            },
            Atom {
                location: 0.0,
                weight: 0.5,
            },
        ])
        .unwrap();
        m.density = Some(d);
        assert!((m.total_variation() - (2.5 + abs)).abs() < 1e-12);
        assert!(m.total_variation().is_finite());
    }

    #[test]
    fn tabulated_profile_round_trip() {
        let dir = std::env::temp_dir().join("pointnls_profile_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tent.txt");
        // tent of height 2 on [-1/2, 1/2]: integral already 1, with comments
        std::fs::write(
            &path,
            "# tent profile\n-0.5 0.0\n0.0 2.0 # apex\n0.5 0.0\n",
        )
        .unwrap();
        let p = Profile::from_file(&path).unwrap();
        assert!((p.evaluate(0.0) - 2.0).abs() < 1e-12);
        assert!((p.evaluate(0.25) - 1.0).abs() < 1e-12);
        assert_eq!(p.evaluate(0.75), 0.0);
        let d = sample_g_eps(&p, 0.5, grid()).unwrap();
        assert!((d.integral - 1.0).abs() < 2e-2);
    }
}
