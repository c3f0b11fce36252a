//! Boundary-trace Volterra solver for purely atomic couplings.
//!
//! For `mu = sum_j c_j delta_{x_j}` the field restricted to the atoms closes
//! into the system
//!
//! ```text
//! phi_i(t) = a_i(t) - i sum_j c_j integral_0^t k(t-s, x_i-x_j) |phi_j|^2 phi_j(s) ds
//! ```
//!
//! with `a_i` the free trace at atom `i`. The memory kernel has modulus
//! `(4 pi (t-s))^{-1/2}`; the solver integrates it exactly against a
//! piecewise-linear interpolant of the cubic term (product integration) and
//! resolves the implicit node by damped fixed-point iteration.

use crate::domain::field::WaveField;
use crate::domain::grid::TimeGrid;
use crate::domain::measure::CouplingMeasure;
use crate::domain::trace::BoundaryTrace;
use crate::error::{Error, Result};
use crate::fft;
use crate::fresnel::{osc_moment_g0, osc_moment_g1};
use crate::propagator::{free_trace, l4_time_quadrature, AnalyticData};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

/// Product-integration weights for the Abel kernel `(t_n - s)^{-1/2}`:
/// integrating a piecewise-linear interpolant `P` gives
/// `integral_0^{t_n} (t_n-s)^{-1/2} P(s) ds = sum_m w_{n,m} P(t_m)` exactly.
#[derive(Debug, Clone)]
pub struct AbelWeights {
    h: f64,
    cl: Vec<f64>,
    cr: Vec<f64>,
}

/// Cancellation-free hat moments over `u in [g-1, g]` of `u^{-1/2}`:
/// `Cl = (2 delta / 3)(2 - r delta)` on the node farther from the
/// singularity, `Cr = (2 delta / 3)(1 + r delta)` on the nearer one, with
/// `r = sqrt(g)` and `delta = 1/(sqrt(g) + sqrt(g-1))`.
fn abel_hat_moments(g: usize) -> (f64, f64) {
    let r = (g as f64).sqrt();
    let q = ((g - 1) as f64).sqrt();
    let delta = 1.0 / (r + q);
    let rd = r * delta;
    let cl = 2.0 * delta / 3.0 * (2.0 - rd);
    let cr = 2.0 * delta / 3.0 * (1.0 + rd);
    (cl, cr)
}

impl AbelWeights {
    pub fn new(n_max: usize, h: f64) -> Self {
        let sqrt_h = h.sqrt();
        let mut cl = Vec::with_capacity(n_max);
        let mut cr = Vec::with_capacity(n_max);
        for g in 1..=n_max {
            let (l, r) = abel_hat_moments(g);
            cl.push(sqrt_h * l);
            cr.push(sqrt_h * r);
        }
        Self { h, cl, cr }
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Weight applied to `P(t_{n-g})`, the left node of the gap-`g`
    /// subinterval.
    pub fn left(&self, g: usize) -> f64 {
        self.cl[g - 1]
    }

    /// Weight applied to `P(t_{n-g+1})`.
    pub fn right(&self, g: usize) -> f64 {
        self.cr[g - 1]
    }

    /// Assembled row `w_{n,m}` for `m = 0..=n`.
    pub fn row(&self, n: usize) -> Vec<f64> {
        assert!(n >= 1 && n <= self.cl.len());
        let mut w = vec![0.0; n + 1];
        for g in 1..=n {
            w[n - g] += self.left(g);
            w[n - g + 1] += self.right(g);
        }
        w
    }
}

/// Exact moments of the singular weight over each subinterval:
/// `(integral (t_n-s)^{-1/2} ds, integral (t_n-s)^{-1/2} s ds)` over
/// `[t_m, t_{m+1}]` for `m = 0..n-1`. Assembling them against hat functions
/// yields [`AbelWeights`].
pub fn abel_moments(n: usize, h: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1 && h > 0.0);
    let t_n = n as f64 * h;
    (0..n)
        .map(|m| {
            let g = n - m;
            let r = (g as f64).sqrt();
            let q = ((g - 1) as f64).sqrt();
            let delta = 1.0 / (r + q);
            // K0 = integral tau^{-1/2}, K1 = integral tau^{1/2}, tau = t_n - s
            let k0 = 2.0 * h.sqrt() * delta;
            let k1 = 2.0 / 3.0 * h.powf(1.5) * delta * (2.0 * g as f64 - 1.0 + r * q);
            (k0, t_n * k0 - k1)
        })
        .collect()
}

/// Hat moments of the full oscillatory kernel factor `tau^{-1/2} e^{ib/tau}`
/// over the gap-`g` subinterval; `b = d^2/4` for atom separation `d`.
fn oscillatory_hat_moments(g: usize, h: f64, b: f64) -> (Complex64, Complex64) {
    let t_hi = g as f64 * h;
    let t_lo = (g - 1) as f64 * h;
    let k0 = osc_moment_g0(t_hi, b) - osc_moment_g0(t_lo, b);
    let k1 = osc_moment_g1(t_hi, b) - osc_moment_g1(t_lo, b);
    let cl = (k1 - t_lo * k0) / h;
    let cr = (t_hi * k0 - k1) / h;
    (cl, cr)
}

/// All hat rows applied to the samples `q[m]` of a function vanishing at
/// zero: `row(n) = sum_{g=1..n} cl(g) q[n-g] + cr(g) q[n-g+1]`, evaluated
/// for every `n` at once by linear convolution.
fn hat_rows_applied(cl: &[f64], cr: &[f64], q: &[f64]) -> Vec<f64> {
    let n_max = q.len() - 1;
    let len = (2 * (n_max + 2)).next_power_of_two();
    let mut qa = vec![Complex64::ZERO; len];
    for (m, &v) in q.iter().enumerate() {
        qa[m] = Complex64::from(v);
    }
    fft::fft_inplace(&mut qa);
    let spread = |w: &[f64]| {
        // weight of gap g sits at index g
        let mut wa = vec![Complex64::ZERO; len];
        for (g, &v) in w.iter().enumerate().take(n_max + 1) {
            wa[g + 1] = Complex64::from(v);
        }
        fft::fft_inplace(&mut wa);
        wa
    };
    let cl_hat = spread(cl);
    let cr_hat = spread(cr);
    let mut acl = qa.clone();
    for (a, b) in acl.iter_mut().zip(&cl_hat) {
        *a *= b;
    }
    fft::ifft_inplace(&mut acl);
    let mut acr = qa;
    for (a, b) in acr.iter_mut().zip(&cr_hat) {
        *a *= b;
    }
    fft::ifft_inplace(&mut acr);
    // q[0] = 0 makes the out-of-range g = n + 1 term of the cr sum vanish
    (0..=n_max)
        .map(|n| acl[n].re + acr[n + 1].re)
        .collect()
}

/// Number of starting-correction nodes (`t_0 .. t_{START_NODES-1}`).
pub(crate) const START_NODES: usize = 4;

/// Correction weights at the first [`START_NODES`] nodes that cancel the hat
/// rule's defect on `sqrt(s)` and `s^{3/2}` for every row while keeping
/// `{1, s}` exact. The solution leaves `t = 0` with a `sqrt(t)` expansion;
/// without the corrections the product integration drops below second order
/// and the departure layer dominates the sup error.
///
/// Monomials with nonsingular curvature (`s^2`, `s^{5/2}`, ...) are
/// deliberately not corrected: their defects are spread over the whole row,
/// and forcing them onto the starting nodes produces weights that grow with
/// `t` and destabilize the late-time solution.
fn abel_start_corrections(cl: &[f64], cr: &[f64], h: f64, n_max: usize) -> Vec<[f64; START_NODES]> {
    let basis_powers = [1usize, 3]; // u^p with u = sqrt(s)
    let conditions = [0usize, 1, 2, 3];
    let rows: Vec<Vec<f64>> = basis_powers
        .iter()
        .map(|&p| {
            let q: Vec<f64> = (0..=n_max)
                .map(|m| (m as f64 * h).sqrt().powi(p as i32))
                .collect();
            hat_rows_applied(cl, cr, &q)
        })
        .collect();
    // exact values of integral (t - s)^{-1/2} s^{p/2} ds for p = 1, 3, 5
    let exact = |p: usize, t: f64| -> f64 {
        match p {
            1 => std::f64::consts::FRAC_PI_2 * t,
            3 => 3.0 * std::f64::consts::PI / 8.0 * t * t,
            _ => unreachable!(),
        }
    };
    // columns of the inverse of the generalized Vandermonde system
    // sum_j c_j u_j^p = rhs_p over the conditions, u_j = sqrt(j)
    let u: Vec<f64> = (0..START_NODES).map(|j| (j as f64).sqrt()).collect();
    let unit_columns: Vec<Vec<f64>> = basis_powers
        .iter()
        .map(|&p| {
            let rhs: Vec<f64> = conditions
                .iter()
                .map(|&c| if c == p { 1.0 } else { 0.0 })
                .collect();
            solve_power_system(&u, &conditions, &rhs)
        })
        .collect();
    (1..=n_max)
        .map(|n| {
            let t_n = n as f64 * h;
            let mut c = [0.0; START_NODES];
            for (bi, &p) in basis_powers.iter().enumerate() {
                let scale = h.sqrt().powi(p as i32);
                let defect = (exact(p, t_n) - rows[bi][n]) / scale;
                for j in 0..START_NODES {
                    c[j] += unit_columns[bi][j] * defect;
                }
            }
            c
        })
        .collect()
}

/// Solve `sum_j c_j u_j^{p_i} = rhs_i` by Gaussian elimination with partial
/// pivoting.
fn solve_power_system(u: &[f64], powers: &[usize], rhs: &[f64]) -> Vec<f64> {
    let n = u.len();
    assert!(powers.len() == n && rhs.len() == n);
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (i, &p) in powers.iter().enumerate() {
        for j in 0..n {
            a[i][j] = u[j].powi(p as i32);
        }
        a[i][n] = rhs[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    let mut c = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = a[row][n];
        for k in row + 1..n {
            acc -= a[row][k] * c[k];
        }
        c[row] = acc / a[row][row];
    }
    c
}

/// Per-pair weight table; complex to cover the oscillatory off-diagonal
/// kernels, real-valued in the diagonal case `b = 0`.
struct PairTable {
    cl: Vec<Complex64>,
    cr: Vec<Complex64>,
    /// `v[0] = cr(1)` (the implicit node), `v[g] = cl(g) + cr(g+1)`: the
    /// settled history is a discrete convolution in `v` plus an endpoint
    /// correction at `m = 0`.
    v: Vec<Complex64>,
    /// Correction weights `c_j(n)` at the first [`START_NODES`] nodes from
    /// [`abel_start_corrections`], indexed by `n - 1`. Only the diagonal
    /// kernel carries them: the oscillatory kernels' phase already
    /// suppresses the departure layer to the same order.
    start_c: Vec<[f64; START_NODES]>,
}

impl PairTable {
    fn new(n_max: usize, h: f64, b: f64) -> Self {
        let gaps = n_max + 1;
        let (cl, cr): (Vec<Complex64>, Vec<Complex64>) = if b == 0.0 {
            let w = AbelWeights::new(gaps, h);
            (
                (1..=gaps).map(|g| Complex64::from(w.left(g))).collect(),
                (1..=gaps).map(|g| Complex64::from(w.right(g))).collect(),
            )
        } else {
            (1..=gaps)
                .map(|g| oscillatory_hat_moments(g, h, b))
                .unzip()
        };
        let mut v = Vec::with_capacity(n_max + 1);
        v.push(cr[0]);
        for g in 1..=n_max {
            v.push(cl[g - 1] + cr[g]);
        }
        // tiny grids cannot host the correction nodes
        let start_c = if b == 0.0 && n_max >= START_NODES - 1 {
            let cl_re: Vec<f64> = cl.iter().map(|c| c.re).collect();
            let cr_re: Vec<f64> = cr.iter().map(|c| c.re).collect();
            abel_start_corrections(&cl_re, &cr_re, h, n_max)
        } else {
            Vec::new()
        };
        Self {
            cl,
            cr,
            v,
            start_c,
        }
    }

    fn left(&self, g: usize) -> Complex64 {
        self.cl[g - 1]
    }

    fn right(&self, g: usize) -> Complex64 {
        self.cr[g - 1]
    }

    /// Quadrature row for a starting target `n < START_NODES`, where the
    /// corrected samples are still unknowns of the coupled start. `f` holds
    /// the samples at nodes `0..START_NODES`.
    fn start_row(&self, n: usize, f: &[Complex64; START_NODES]) -> Complex64 {
        let mut acc = self.left(n) * f[0];
        for g in 1..n {
            // hat assembly over the subinterval at gap g
            acc += (self.right(g + 1) + self.left(g)) * f[n - g];
        }
        acc += self.right(1) * f[n];
        acc + self.start_correction(n, f)
    }

    /// Departure-layer correction to the settled history at node `n`; zero
    /// for the oscillatory kernels. All referenced samples are settled once
    /// `n >= START_NODES`.
    fn start_correction(&self, n: usize, f: &[Complex64]) -> Complex64 {
        match self.start_c.get(n - 1) {
            Some(c) => c
                .iter()
                .zip(f)
                .map(|(&cj, &fj)| cj * fj)
                .sum(),
            None => Complex64::ZERO,
        }
    }

    /// Settled history `cl(n) F[0] + sum_{m=1}^{n-1} v[n-m] F[m]` by direct
    /// summation, without the starting correction.
    fn known_direct(&self, n: usize, f: &[Complex64]) -> Complex64 {
        let mut acc = self.left(n) * f[0];
        for m in 1..n {
            acc += self.v[n - m] * f[m];
        }
        acc
    }
}

/// Initial data for the trace solver. The free trace of analytic data is
/// evaluated in closed form, which removes one quadrature error source from
/// convergence studies.
#[derive(Debug, Clone)]
pub enum InitialData {
    Analytic(AnalyticData),
    Grid(WaveField),
}

impl InitialData {
    pub fn free_trace_series(&self, times: &TimeGrid, x: f64) -> Result<Vec<Complex64>> {
        match self {
            InitialData::Analytic(data) => Ok(times
                .nodes()
                .map(|t| data.free_evolution_at(x, t))
                .collect()),
            InitialData::Grid(field) => free_trace(field, times, x),
        }
    }

    pub fn sample(&self, grid: crate::domain::grid::SpatialGrid) -> Result<WaveField> {
        match self {
            InitialData::Analytic(data) => data.sample(grid),
            InitialData::Grid(field) => {
                if field.grid() != grid {
                    return Err(Error::IncompatibleGrids("initial data sample".into()));
                }
                Ok(field.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceSolveOptions {
    /// Fixed-point stopping threshold on successive iterates.
    pub tolerance: f64,
    /// Iteration budget per relaxation level.
    pub max_iter: usize,
    /// Evaluate the settled history by block FFT convolution instead of
    /// direct summation; agrees with the direct path to 1e-10.
    pub fast_history: bool,
}

impl Default for TraceSolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 200,
            fast_history: false,
        }
    }
}

fn kernel_prefactor() -> Complex64 {
    Complex64::from_polar(1.0 / (4.0 * PI).sqrt(), -FRAC_PI_4)
}

fn cubic(phi: Complex64) -> Complex64 {
    phi.norm_sqr() * phi
}

/// Block-FFT evaluation of the running convolutions `sum_m v[n-m] F[m]`.
/// When the stepper enters a new block of `block` nodes, the contribution of
/// all settled samples before the block is pushed forward with one FFT
/// convolution per pair; inside the block only a short direct tail remains.
struct FastHistory {
    block: usize,
    pre: Vec<Vec<Complex64>>,
    block_start: usize,
}

impl FastHistory {
    fn new(n_pairs: usize, block: usize) -> Self {
        Self {
            block,
            pre: vec![Vec::new(); n_pairs],
            block_start: usize::MAX,
        }
    }

    fn advance<'a>(
        &mut self,
        n: usize,
        pairs: impl Iterator<Item = (&'a PairTable, &'a [Complex64])>,
    ) {
        let n0 = (n / self.block) * self.block;
        if n0 == self.block_start {
            return;
        }
        self.block_start = n0;
        for (p, (table, f)) in pairs.enumerate() {
            if n0 == 0 {
                self.pre[p] = vec![Complex64::ZERO; self.block];
                continue;
            }
            let len = (2 * n0 + self.block).next_power_of_two();
            let mut fa = vec![Complex64::ZERO; len];
            fa[..n0].copy_from_slice(&f[..n0]);
            let mut va = vec![Complex64::ZERO; len];
            let v_take = (n0 + self.block).min(table.v.len());
            va[..v_take].copy_from_slice(&table.v[..v_take]);
            fft::fft_inplace(&mut fa);
            fft::fft_inplace(&mut va);
            for (a, b) in fa.iter_mut().zip(&va) {
                *a *= b;
            }
            fft::ifft_inplace(&mut fa);
            self.pre[p] = (0..self.block)
                .map(|r| fa.get(n0 + r).copied().unwrap_or(Complex64::ZERO))
                .collect();
        }
    }

    /// Settled history at node `n` for pair `p`; matches
    /// `PairTable::known_direct` exactly in exact arithmetic.
    fn known(&self, p: usize, n: usize, table: &PairTable, f: &[Complex64]) -> Complex64 {
        let n0 = self.block_start;
        let mut acc = self.pre[p][n - n0];
        for m in n0.max(1)..n {
            acc += table.v[n - m] * f[m];
        }
        if n0 == 0 {
            acc += table.left(n) * f[0];
        } else {
            // the convolution charged F[0] with v[n] = cl(n) + cr(n+1)
            acc -= table.right(n + 1) * f[0];
        }
        acc
    }
}

/// Solve the boundary-trace system on `times` for a purely atomic measure.
pub fn solve_trace(
    data: &InitialData,
    measure: &CouplingMeasure,
    times: &TimeGrid,
    opts: &TraceSolveOptions,
) -> Result<BoundaryTrace> {
    if !measure.is_purely_atomic() {
        return Err(Error::InvalidMeasure(
            "the trace solver handles purely atomic measures; densities belong to the concentrated solver".into(),
        ));
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let atoms = measure.atoms();
    let n_atoms = atoms.len();
    let n_steps = times.n_steps();
    let h = times.dt();

    let locations: Vec<f64> = atoms.iter().map(|a| a.location).collect();
    if n_atoms == 0 {
        return BoundaryTrace::new(*times, locations, Vec::new());
    }

    let free: Vec<Vec<Complex64>> = locations
        .iter()
        .map(|&x| data.free_trace_series(times, x))
        .collect::<Result<_>>()?;

    // weight tables keyed (exactly) by the phase parameter b = d^2/4
    let mut table_of_b: BTreeMap<u64, usize> = BTreeMap::new();
    let mut tables: Vec<PairTable> = Vec::new();
    let mut pair_table: Vec<usize> = Vec::with_capacity(n_atoms * n_atoms);
    for i in 0..n_atoms {
        for j in 0..n_atoms {
            let d = (locations[i] - locations[j]).abs();
            let b = d * d / 4.0;
            let idx = *table_of_b.entry(b.to_bits()).or_insert_with(|| {
                tables.push(PairTable::new(n_steps, h, b));
                tables.len() - 1
            });
            pair_table.push(idx);
        }
    }

    let kappa = kernel_prefactor();
    let mut phi: Vec<Vec<Complex64>> = free
        .iter()
        .map(|a| {
            let mut s = vec![Complex64::ZERO; times.len()];
            s[0] = a[0];
            s
        })
        .collect();
    let mut f_samples: Vec<Vec<Complex64>> = phi
        .iter()
        .map(|s| {
            let mut f = vec![Complex64::ZERO; times.len()];
            f[0] = cubic(s[0]);
            f
        })
        .collect();

    let mut fast = opts
        .fast_history
        .then(|| FastHistory::new(n_atoms * n_atoms, 256));

    // The first nodes are solved as one coupled system: the starting
    // corrections tie them to samples up to node START_NODES - 1, and the
    // coupling restores full order through the sqrt(t) departure layer.
    {
        let n_start = n_steps.min(START_NODES - 1);
        let apply_map = |guess: &[Complex64], out: &mut Vec<Complex64>| {
            // guess[(r - 1) * n_atoms + j] holds the node-r iterate of atom j
            out.clear();
            for r in 1..=n_start {
                for i in 0..n_atoms {
                    let mut forcing = Complex64::ZERO;
                    for (j, atom) in atoms.iter().enumerate() {
                        let table = &tables[pair_table[i * n_atoms + j]];
                        let mut f = [Complex64::ZERO; START_NODES];
                        f[0] = f_samples[j][0];
                        for k in 1..=n_start {
                            f[k] = cubic(guess[(k - 1) * n_atoms + j]);
                        }
                        forcing += atom.weight * table.start_row(r, &f);
                    }
                    out.push(free[i][r] - Complex64::I * kappa * forcing);
                }
            }
        };
        let predictor: Vec<Complex64> = (1..=n_start)
            .flat_map(|_| (0..n_atoms).map(|i| phi[i][0]))
            .collect();
        let value = damped_fixed_point(&predictor, apply_map, opts).ok_or(
            Error::StepSizeTooLarge {
                node: 1,
                time: times.node(1),
            },
        )?;
        for r in 1..=n_start {
            for i in 0..n_atoms {
                phi[i][r] = value[(r - 1) * n_atoms + i];
                f_samples[i][r] = cubic(phi[i][r]);
            }
        }
    }

    let mut known = vec![Complex64::ZERO; n_atoms * n_atoms];
    for n in START_NODES..=n_steps {
        for i in 0..n_atoms {
            for j in 0..n_atoms {
                let p = i * n_atoms + j;
                let table = &tables[pair_table[p]];
                let settled = if let Some(fast) = fast.as_mut() {
                    if i == 0 && j == 0 {
                        let tables_ref = &tables;
                        let pair_table_ref = &pair_table;
                        let f_ref = &f_samples;
                        fast.advance(
                            n,
                            (0..n_atoms * n_atoms).map(move |q| {
                                (
                                    &tables_ref[pair_table_ref[q]],
                                    f_ref[q % n_atoms].as_slice(),
                                )
                            }),
                        );
                    }
                    fast.known(p, n, table, &f_samples[j])
                } else {
                    table.known_direct(n, &f_samples[j])
                };
                known[p] = settled + table.start_correction(n, &f_samples[j]);
            }
        }

        let predictor: Vec<Complex64> = (0..n_atoms)
            .map(|i| 2.0 * phi[i][n - 1] - phi[i][n - 2])
            .collect();

        let apply_map = |guess: &[Complex64], out: &mut Vec<Complex64>| {
            out.clear();
            for i in 0..n_atoms {
                let mut forcing = Complex64::ZERO;
                for (j, atom) in atoms.iter().enumerate() {
                    let table = &tables[pair_table[i * n_atoms + j]];
                    let hist = known[i * n_atoms + j] + table.right(1) * cubic(guess[j]);
                    forcing += atom.weight * hist;
                }
                out.push(free[i][n] - Complex64::I * kappa * forcing);
            }
        };

        let value = damped_fixed_point(&predictor, apply_map, opts).ok_or(
            Error::StepSizeTooLarge {
                node: n,
                time: times.node(n),
            },
        )?;
        for i in 0..n_atoms {
            phi[i][n] = value[i];
            f_samples[i][n] = cubic(value[i]);
        }
    }

    BoundaryTrace::new(*times, locations, phi)
}

/// Picard iteration from `predictor` with relaxation halving on divergence;
/// `None` when the iteration budget is exhausted at maximal damping.
fn damped_fixed_point(
    predictor: &[Complex64],
    apply_map: impl Fn(&[Complex64], &mut Vec<Complex64>),
    opts: &TraceSolveOptions,
) -> Option<Vec<Complex64>> {
    let mut omega = 1.0f64;
    while omega >= 1.0 / 64.0 {
        let mut guess = predictor.to_vec();
        let mut image = Vec::with_capacity(predictor.len());
        let mut best_res = f64::INFINITY;
        for _ in 0..opts.max_iter {
            apply_map(&guess, &mut image);
            let res = guess
                .iter()
                .zip(&image)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            if res <= opts.tolerance {
                return Some(image);
            }
            if res > 4.0 * best_res {
                break; // diverging under this relaxation; damp harder
            }
            best_res = best_res.min(res);
            for (g, im) in guess.iter_mut().zip(&image) {
                *g = (1.0 - omega) * *g + omega * im;
            }
        }
        omega *= 0.5;
    }
    None
}

/// Solve backward from an endpoint field: returns the trace on `[0, T]` of
/// the solution with `psi(T) = endpoint`. Uses the symmetry
/// `psi(t) -> conj(psi(T - t))`, which maps the backward problem to a
/// forward solve from `conj(endpoint)`.
pub fn solve_backward(
    endpoint: &WaveField,
    measure: &CouplingMeasure,
    times: &TimeGrid,
    opts: &TraceSolveOptions,
) -> Result<BoundaryTrace> {
    let forward = solve_trace(&InitialData::Grid(endpoint.conj()), measure, times, opts)?;
    let n = times.n_steps();
    let series = (0..forward.n_atoms())
        .map(|j| {
            (0..times.len())
                .map(|m| forward.value(j, n - m).conj())
                .collect()
        })
        .collect();
    BoundaryTrace::new(
        *times,
        (0..forward.n_atoms())
            .map(|j| forward.location(j))
            .collect(),
        series,
    )
}

/// Apply the corrected diagonal quadrature rows to given cubic samples:
/// returns `integral_0^{t_n} (t_n - s)^{-1/2} F(s) ds` for every node.
/// Exposed for convergence studies of the rule itself.
#[doc(hidden)]
pub fn abel_rule_applied(h: f64, f: &[Complex64]) -> Vec<Complex64> {
    let n_max = f.len() - 1;
    let table = PairTable::new(n_max, h, 0.0);
    (0..=n_max)
        .map(|n| {
            if n == 0 {
                Complex64::ZERO
            } else if n < START_NODES {
                let mut buf = [Complex64::ZERO; START_NODES];
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = f.get(k).copied().unwrap_or(Complex64::ZERO);
                }
                table.start_row(n, &buf)
            } else {
                table.known_direct(n, f) + table.start_correction(n, f) + table.right(1) * f[n]
            }
        })
        .collect()
}

/// Trapezoid quadrature of `|phi|^4` over the trace window.
pub fn spacetime_l4(trace: &BoundaryTrace, atom: usize) -> f64 {
    let mods: Vec<f64> = trace.series(atom).iter().map(|v| v.norm()).collect();
    l4_time_quadrature(&mods, trace.times().dt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::measure::Atom;
    use crate::propagator::gaussian_free_trace;

    fn delta() -> CouplingMeasure {
        CouplingMeasure::delta()
    }

    fn gaussian(amplitude: f64) -> InitialData {
        InitialData::Analytic(AnalyticData::gaussian(amplitude, 0.25).unwrap())
    }

    /// Simpson quadrature of a complex integrand; test oracle only.
    fn simpson<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, n: usize) -> Complex64 {
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
    fn single_interval_moment() {
        let m = abel_moments(1, 0.01);
        assert_eq!(m.len(), 1);
        assert!((m[0].0 - 0.2).abs() < 1e-15, "2 sqrt(h) = 0.2");
    }

    #[test]
    fn weight_rows_sum_to_two_sqrt_t() {
        let h = 1.0 / 64.0;
        let w = AbelWeights::new(64, h);
        let sum: f64 = w.row(64).iter().sum();
        assert!((sum - 2.0).abs() < 1e-12, "sum {sum}");
        for n in [1usize, 7, 33] {
            let sum: f64 = w.row(n).iter().sum();
            let expect = 2.0 * (n as f64 * h).sqrt();
            assert!((sum - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn weights_are_nonnegative() {
        let w = AbelWeights::new(512, 1.0 / 128.0);
        for n in [1usize, 2, 100, 512] {
            assert!(w.row(n).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn weights_are_exact_on_linear_data() {
        // sum_m w_{n,m} t_m = integral (t_n-s)^{-1/2} s ds = (4/3) t_n^{3/2}
        let h = 1.0 / 128.0;
        let n = 128;
        let w = AbelWeights::new(n, h);
        let got: f64 = w
            .row(n)
            .iter()
            .enumerate()
            .map(|(m, &wm)| wm * m as f64 * h)
            .sum();
        assert!((got - 4.0 / 3.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn abel_moments_match_quadrature_oracle() {
        let h = 0.03;
        let n = 17;
        let t_n = n as f64 * h;
        let moments = abel_moments(n, h);
        let m0_total: f64 = moments.iter().map(|m| m.0).sum();
        let m1_total: f64 = moments.iter().map(|m| m.1).sum();
        assert!((m0_total - 2.0 * t_n.sqrt()).abs() < 1e-13);
        assert!((m1_total - 4.0 / 3.0 * t_n.powf(1.5)).abs() < 1e-13);
        // one interior subinterval against plain Simpson (smooth away from
        // the singular endpoint)
        let (lo, hi) = (5.0 * h, 6.0 * h);
        let m0_oracle = simpson(
            |s| Complex64::from((t_n - s).powf(-0.5)),
            lo,
            hi,
            20_000,
        )
        .re;
        let m1_oracle = simpson(
            |s| Complex64::from(s * (t_n - s).powf(-0.5)),
            lo,
            hi,
            20_000,
        )
        .re;
        assert!((moments[5].0 - m0_oracle).abs() < 1e-12);
        assert!((moments[5].1 - m1_oracle).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_moments_match_quadrature_on_interior_subintervals() {
        let h = 1.0 / 64.0;
        let b = 0.16;
        for g in [3usize, 10, 40] {
            let (cl, cr) = oscillatory_hat_moments(g, h, b);
            let t_lo = (g - 1) as f64 * h;
            let t_hi = g as f64 * h;
            let cl_oracle = simpson(
                |tau| Complex64::from_polar(1.0 / tau.sqrt(), b / tau) * ((tau - t_lo) / h),
                t_lo,
                t_hi,
                200_000,
            );
            let cr_oracle = simpson(
                |tau| Complex64::from_polar(1.0 / tau.sqrt(), b / tau) * ((t_hi - tau) / h),
                t_lo,
                t_hi,
                200_000,
            );
            assert!((cl - cl_oracle).norm() < 1e-9, "gap {g}: {cl} vs {cl_oracle}");
            assert!((cr - cr_oracle).norm() < 1e-9, "gap {g}: {cr} vs {cr_oracle}");
        }
    }

    #[test]
    fn corrected_rows_are_exact_on_sqrt_powers() {
        // every assembled row integrates {1, sqrt(s), s, s^{3/2}} exactly
        // against the Abel weight
        let h = 0.05;
        let table = PairTable::new(64, h, 0.0);
        for n in [1usize, 2, 3, 4, 10, 64] {
            let t_n = n as f64 * h;
            let len = n.max(START_NODES - 1) + 1;
            for (f, exact, label) in [
                (vec![Complex64::ONE; len], 2.0 * t_n.sqrt(), "1"),
                (
                    (0..len)
                        .map(|m| Complex64::from((m as f64 * h).sqrt()))
                        .collect::<Vec<_>>(),
                    t_n * std::f64::consts::FRAC_PI_2,
                    "sqrt",
                ),
                (
                    (0..len).map(|m| Complex64::from(m as f64 * h)).collect(),
                    4.0 / 3.0 * t_n.powf(1.5),
                    "linear",
                ),
                (
                    (0..len)
                        .map(|m| Complex64::from((m as f64 * h).powf(1.5)))
                        .collect(),
                    3.0 * std::f64::consts::PI / 8.0 * t_n * t_n,
                    "s^{3/2}",
                ),
            ] {
                let quad = if n < START_NODES {
                    table.start_row(n, &[f[0], f[1], f[2], f[3]])
                } else {
                    table.known_direct(n, &f)
                        + table.start_correction(n, &f)
                        + table.right(1) * f[n]
                };
                assert!(
                    (quad.re - exact).abs() < 1e-12 && quad.im.abs() < 1e-15,
                    "n = {n}, basis {label}: {} vs {exact}",
                    quad.re
                );
            }
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let times = TimeGrid::new(1.0, 64).unwrap();
        let tr = solve_trace(
            &gaussian(0.0),
            &delta(),
            &times,
            &TraceSolveOptions::default(),
        )
        .unwrap();
        assert!(tr.series(0).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn small_amplitude_trace_is_the_free_trace() {
        // |phi - a| = O(A^3) for amplitude A
        let times = TimeGrid::new(1.0, 256).unwrap();
        let opts = TraceSolveOptions {
            tolerance: 1e-13,
            ..Default::default()
        };
        let tr = solve_trace(&gaussian(1e-3), &delta(), &times, &opts).unwrap();
        let mut max_dev = 0.0f64;
        for (n, t) in times.nodes().enumerate() {
            let a = gaussian_free_trace(0.25, Complex64::new(1e-3, 0.0), t).unwrap();
            max_dev = max_dev.max((tr.value(0, n) - a).norm());
        }
        assert!(max_dev <= 1e-8, "deviation {max_dev}");
        assert!(max_dev > 1e-12, "the cubic correction should be visible");
    }

    #[test]
    fn self_convergence_order_at_least_1_5() {
        // errors against a refined run of the same equation, observed order
        // as the least-squares slope over the step triple
        let opts = TraceSolveOptions {
            tolerance: 1e-12,
            ..Default::default()
        };
        let data = gaussian(2.0);
        let solve = |steps: usize| {
            solve_trace(&data, &delta(), &TimeGrid::new(2.0, steps).unwrap(), &opts).unwrap()
        };
        let reference = solve(4096);
        let steps = [256usize, 512, 1024];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&s| {
                let run = solve(s);
                let stride = 4096 / s;
                (0..=s)
                    .map(|n| (run.value(0, n) - reference.value(0, n * stride)).norm())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let order = crate::diagnostics::log_log_slope(
            &steps.map(|s| 2.0 / s as f64),
            &[errs[0], errs[1], errs[2]],
        );
        assert!(order >= 1.5, "observed order {order} (errors {errs:?})");
    }

    #[test]
    fn two_atom_linearization_matches_quadrature_oracle() {
        // phi_i = a_i - i sum_j c_j integral_0^t k(t-s, x_i-x_j) |a_j|^2 a_j ds
        // + O(A^5); exercises the oscillatory off-diagonal moments end to end
        let amp = 1e-3;
        let atoms = vec![
            Atom {
                location: 0.0,
                weight: 1.0,
            },
            Atom {
                location: 0.8,
                weight: 0.5,
            },
        ];
        let measure = CouplingMeasure::from_atoms(atoms.clone()).unwrap();
        let times = TimeGrid::new(0.5, 128).unwrap();
        let data = AnalyticData::gaussian(amp, 0.25).unwrap();
        let opts = TraceSolveOptions {
            tolerance: 1e-15,
            ..Default::default()
        };
        let tr =
            solve_trace(&InitialData::Analytic(data.clone()), &measure, &times, &opts).unwrap();

        let t = 0.5;
        let n = times.n_steps();
        for i in 0..2 {
            let xi = atoms[i].location;
            let mut correction = Complex64::ZERO;
            let mut head_bound = 0.0f64;
            for atom in &atoms {
                let d: f64 = xi - atom.location;
                let b = d * d / 4.0;
                // in u = sqrt(t - s) the integrand 2u k(u^2, d) F(t - u^2) has
                // constant modulus |F| / sqrt(pi); for b > 0 restrict to the
                // phase-resolved range and bound the truncated head by parts
                let u_min: f64 = if b == 0.0 { 0.0 } else { 0.02 };
                let f_sup = (amp as f64).powi(3);
                if b > 0.0 {
                    head_bound += atom.weight.abs() * u_min.powi(3) / b * f_sup;
                }
                let integrand = |u: f64| -> Complex64 {
                    if u == 0.0 {
                        // limit of 2u k(u^2, 0) F: modulus 1/sqrt(pi)
                        let a0 = data.free_evolution_at(atom.location, t);
                        return Complex64::from_polar(1.0 / PI.sqrt(), -FRAC_PI_4)
                            * a0.norm_sqr()
                            * a0;
                    }
                    let s = t - u * u;
                    let a_j = data.free_evolution_at(atom.location, s);
                    let f = a_j.norm_sqr() * a_j;
                    let phase = if b == 0.0 { 0.0 } else { b / (u * u) };
                    Complex64::from_polar(1.0 / PI.sqrt(), phase - FRAC_PI_4) * f
                };
                correction += atom.weight * simpson(integrand, u_min, t.sqrt(), 400_000);
            }
            let expect = data.free_evolution_at(xi, t) - Complex64::I * correction;
            let got = tr.value(0usize.max(i), n);
            let err = (got - expect).norm();
            let tol = 2e-12 + 2.0 * head_bound + 1e-4 * amp.powi(3);
            assert!(
                err < tol,
                "atom {i}: err {err} vs tol {tol} (got {got}, oracle {expect})"
            );
        }
    }

    #[test]
    fn fast_history_agrees_with_direct() {
        let times = TimeGrid::new(2.0, 700).unwrap();
        let data = gaussian(1.5);
        let opts = |fast| TraceSolveOptions {
            tolerance: 1e-12,
            fast_history: fast,
            ..Default::default()
        };
        let direct = solve_trace(&data, &delta(), &times, &opts(false)).unwrap();
        let fast = solve_trace(&data, &delta(), &times, &opts(true)).unwrap();
        let sup = direct.sup_distance(&fast).unwrap();
        assert!(sup <= 1e-10, "fast vs direct sup distance {sup}");
    }

    #[test]
    fn fast_history_agrees_with_direct_for_two_atoms() {
        let atoms = vec![
            Atom {
                location: -0.3,
                weight: 0.7,
            },
            Atom {
                location: 0.5,
                weight: 0.4,
            },
        ];
        let measure = CouplingMeasure::from_atoms(atoms).unwrap();
        let times = TimeGrid::new(1.0, 300).unwrap();
        let data = gaussian(1.0);
        let opts = |fast| TraceSolveOptions {
            tolerance: 1e-12,
            fast_history: fast,
            ..Default::default()
        };
        let direct = solve_trace(&data, &measure, &times, &opts(false)).unwrap();
        let fast = solve_trace(&data, &measure, &times, &opts(true)).unwrap();
        assert!(direct.sup_distance(&fast).unwrap() <= 1e-10);
    }

    #[test]
    fn spacetime_l4_trivial_and_oracle() {
        let times = TimeGrid::new(1.0, 100).unwrap();
        let zeros = BoundaryTrace::new(times, vec![0.0], vec![vec![Complex64::ZERO; 101]]).unwrap();
        assert_eq!(spacetime_l4(&zeros, 0), 0.0);

        let ones = BoundaryTrace::new(times, vec![0.0], vec![vec![Complex64::ONE; 101]]).unwrap();
        assert!((spacetime_l4(&ones, 0) - 1.0).abs() < 1e-14);

        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let series: Vec<Complex64> = (0..101)
            .map(|_| Complex64::new(rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let tr = BoundaryTrace::new(times, vec![0.0], vec![series.clone()]).unwrap();
        let dt = times.dt();
        let mut oracle = 0.0;
        for (n, v) in series.iter().enumerate() {
            let w = if n == 0 || n == 100 { 0.5 } else { 1.0 };
            oracle += w * dt * v.norm().powi(4);
        }
        assert!((spacetime_l4(&tr, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn backward_solve_zero_and_conjugation_symmetry() {
        let times = TimeGrid::new(1.0, 128).unwrap();
        let grid = crate::domain::grid::SpatialGrid::new(20.0, 2048).unwrap();
        let opts = TraceSolveOptions {
            tolerance: 1e-11,
            ..Default::default()
        };

        let zero = solve_backward(&WaveField::zero(grid), &delta(), &times, &opts).unwrap();
        assert!(zero.series(0).iter().all(|v| v.norm() == 0.0));

        // for real data, conj(psi(T - t)) solves the same problem, so the
        // backward trace from psi_0 mirrors the forward trace exactly
        let data = AnalyticData::gaussian(1.0, 0.25).unwrap();
        let fwd =
            solve_trace(&InitialData::Analytic(data.clone()), &delta(), &times, &opts).unwrap();
        let field = data.sample(grid).unwrap();
        let bwd = solve_backward(&field, &delta(), &times, &opts).unwrap();
        let n = times.n_steps();
        let endpoint_val = field.interpolate_at(0.0);
        assert!((bwd.value(0, n) - endpoint_val).norm() < 1e-10);
        let mut max_dev = 0.0f64;
        for m in 0..=n {
            max_dev = max_dev.max((bwd.value(0, n - m) - fwd.value(0, m).conj()).norm());
        }
        assert!(max_dev < 1e-7, "conjugation symmetry deviation {max_dev}");
    }
}
