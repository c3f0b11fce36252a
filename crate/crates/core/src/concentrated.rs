//! Strang-split spectral solver for the cubic NLS with an `eps`-concentrated
//! (or arbitrary sampled) coupling density.
//!
//! One step is `K(dt/2) N(dt) K(dt/2)`: a half free step, the exact
//! nonlinear phase rotation `psi -> psi exp(-i g_eps |psi|^2 dt)` (exact
//! because the rotation leaves `|psi|` invariant), and another half free
//! step. Both substeps preserve the discrete mass to roundoff.

use crate::domain::field::{interpolate_modes, WaveField};
use crate::domain::grid::{SpatialGrid, TimeGrid};
use crate::domain::measure::{sample_g_eps, DensitySamples, Profile};
use crate::domain::trace::BoundaryTrace;
use crate::domain::trajectory::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::fft;
use crate::propagator::apply_free_multiplier;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStepConfig {
    /// Integration step; the recording grid's `dt` must be a multiple.
    pub dt: f64,
    /// Fraction of the Nyquist band kept when sampling the trace (the
    /// cubic term's spectral support under the 2/3 rule). The dynamics are
    /// never filtered, so mass stays exactly conserved.
    pub dealias_fraction: f64,
    /// Record a full field snapshot every this many recording nodes.
    pub sample_stride: usize,
    /// Abort when the boundary amplitude exceeds this threshold.
    pub boundary_threshold: f64,
}

impl SplitStepConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            dealias_fraction: 2.0 / 3.0,
            sample_stride: 8,
            // the interaction region radiates dispersively; at desk-scale
            // domains the far tail sits well below this while anything that
            // would distort an L^2 comparison sits well above it
            boundary_threshold: 1e-3,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "dealias fraction must lie in (0, 1], got {}",
                self.dealias_fraction
            )));
        }
        if self.sample_stride == 0 {
            return Err(Error::Domain("sample stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One Strang step on a fresh copy of the field.
pub fn strang_step(f: &WaveField, g_eps: &[f64], dt: f64) -> Result<WaveField> {
    let grid = f.grid();
    if g_eps.len() != grid.n_points() {
        return Err(Error::IncompatibleGrids(
            "density samples do not match the field grid".into(),
        ));
    }
    let mut values = f.values().to_vec();
    strang_step_inplace(&mut values, grid, g_eps, dt);
    WaveField::new(grid, values)
}

fn strang_step_inplace(values: &mut [Complex64], grid: SpatialGrid, g_eps: &[f64], dt: f64) {
    half_kinetic(values, grid, dt);
    for (v, &g) in values.iter_mut().zip(g_eps) {
        let phase = -g * v.norm_sqr() * dt;
        *v *= Complex64::from_polar(1.0, phase);
    }
    half_kinetic(values, grid, dt);
}

fn half_kinetic(values: &mut [Complex64], grid: SpatialGrid, dt: f64) {
    fft::fft_inplace(values);
    apply_free_multiplier(values, grid, 0.5 * dt);
    fft::ifft_inplace(values);
}

/// Band-limited evaluation at `x = 0` through the dealias mask.
fn filtered_origin_value(values: &[Complex64], grid: SpatialGrid, fraction: f64) -> Complex64 {
    let modes = fft::fft(values);
    let cutoff = fraction * grid.nyquist();
    let masked: Vec<Complex64> = modes
        .iter()
        .enumerate()
        .map(|(m, &c)| {
            if grid.wavenumber(m).abs() <= cutoff {
                c
            } else {
                Complex64::ZERO
            }
        })
        .collect();
    interpolate_modes(&masked, grid, 0.0)
}

/// Integrate on `times` with density samples `g_eps`; records the mass and
/// sup series at every node, the filtered trace at the origin, and field
/// snapshots every `sample_stride` nodes.
pub fn solve_with_density(
    f0: &WaveField,
    density: &DensitySamples,
    times: &TimeGrid,
    cfg: &SplitStepConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let grid = f0.grid();
    if density.grid != grid {
        return Err(Error::IncompatibleGrids(
            "density grid does not match the field grid".into(),
        ));
    }
    let node_dt = times.dt();
    let substeps = (node_dt / cfg.dt).round().max(1.0) as usize;
    if ((node_dt / substeps as f64) - cfg.dt).abs() > 1e-9 * cfg.dt {
        return Err(Error::Domain(format!(
            "recording step {node_dt} is not an integer multiple of dt = {}",
            cfg.dt
        )));
    }
    let dt = node_dt / substeps as f64;

    let mut values = f0.values().to_vec();
    let mut mass_series = Vec::with_capacity(times.len());
    let mut sup_series = Vec::with_capacity(times.len());
    let mut trace = Vec::with_capacity(times.len());
    let mut sample_indices = Vec::new();
    let mut fields = Vec::new();
    let mut max_boundary = 0.0f64;

    for node in 0..times.len() {
        if node > 0 {
            for _ in 0..substeps {
                strang_step_inplace(&mut values, grid, &density.values, dt);
            }
        }
        let field = WaveField::new(grid, values.clone())?;
        mass_series.push(field.mass());
        sup_series.push(field.sup_norm());
        trace.push(filtered_origin_value(&values, grid, cfg.dealias_fraction));
        let boundary = field.boundary_amplitude();
        max_boundary = max_boundary.max(boundary);
        if boundary > cfg.boundary_threshold {
            return Err(Error::TruncationDomain {
                amplitude: boundary,
                threshold: cfg.boundary_threshold,
                time: times.node(node),
            });
        }
        if node % cfg.sample_stride == 0 || node == times.len() - 1 {
            sample_indices.push(node);
            fields.push(field);
        }
    }

    let record = TrajectoryRecord {
        config: serde_json::json!({
            "solver": "strang-split",
            "grid": { "half_width": grid.half_width(), "n_points": grid.n_points() },
            "time": { "t_final": times.t_final(), "n_steps": times.n_steps() },
            "dt": dt,
            "substeps_per_node": substeps,
            "dealias_fraction": cfg.dealias_fraction,
            "profile": density.profile,
            "epsilon": density.epsilon,
            "density_integral": density.integral,
        }),
        times: *times,
        sample_indices,
        fields,
        trace: Some(BoundaryTrace::new(*times, vec![0.0], vec![trace])?),
        mass_series,
        sup_series,
        max_boundary_amplitude: max_boundary,
    };
    record.validate()?;
    Ok(record)
}

/// Sample `g_eps` from a profile (with the resolution guard) and integrate.
pub fn solve_concentrated(
    f0: &WaveField,
    profile: &Profile,
    epsilon: f64,
    times: &TimeGrid,
    cfg: &SplitStepConfig,
) -> Result<TrajectoryRecord> {
    let density = sample_g_eps(profile, epsilon, f0.grid())?;
    solve_with_density(f0, &density, times, cfg)
}

/// One row of the `eps -> 0` convergence study.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsStudyRow {
    pub epsilon: f64,
    /// `max over sampled t` of the `L^2` distance to the reference run.
    pub sup_l2_distance: f64,
    pub mass_drift: f64,
    pub boundary_amplitude: f64,
}

/// Compare concentrated runs against a reference trajectory (the point
/// coupling solved by trace reconstruction) at the reference's sampled
/// nodes. `initial_perturbation_scale` optionally displaces the initial
/// data by `scale * eps` times a fixed unit-mass bump, exercising studies
/// where the concentrated run starts close to, but not at, the limit data.
pub fn eps_convergence_study(
    f0: &WaveField,
    profile: &Profile,
    eps_list: &[f64],
    reference: &TrajectoryRecord,
    times: &TimeGrid,
    cfg: &SplitStepConfig,
    initial_perturbation_scale: f64,
) -> Result<Vec<EpsStudyRow>> {
    if reference.times != *times {
        return Err(Error::IncompatibleGrids(
            "reference trajectory uses a different time grid".into(),
        ));
    }
    let grid = f0.grid();
    if reference.fields.iter().any(|f| f.grid() != grid) {
        return Err(Error::IncompatibleGrids(
            "reference trajectory uses a different spatial grid".into(),
        ));
    }
    let bump = unit_mass_bump(grid)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let data = if initial_perturbation_scale != 0.0 {
            f0.add_scaled(
                &bump,
                Complex64::from(initial_perturbation_scale * eps),
            )?
        } else {
            f0.clone()
        };
        let run = solve_concentrated(&data, profile, eps, times, cfg)?;
        let mut sup = 0.0f64;
        for (pos, &node) in reference.sample_indices.iter().enumerate() {
            let run_pos = run
                .sample_indices
                .iter()
                .position(|&m| m == node)
                .ok_or_else(|| {
                    Error::IncompatibleGrids(
                        "reference sample nodes are not sampled by the study run".into(),
                    )
                })?;
            sup = sup.max(reference.fields[pos].l2_distance(&run.fields[run_pos])?);
        }
        rows.push(EpsStudyRow {
            epsilon: eps,
            sup_l2_distance: sup,
            mass_drift: run.mass_drift(),
            boundary_amplitude: run.max_boundary_amplitude,
        });
    }
    Ok(rows)
}

fn unit_mass_bump(grid: SpatialGrid) -> Result<WaveField> {
    let raw = WaveField::from_fn(grid, |x| Complex64::new((-(x - 0.7) * (x - 0.7)).exp(), 0.0))?;
    let norm = raw.mass().sqrt();
    raw.map(|v| v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{evolve_free, AnalyticData};

    fn grid() -> SpatialGrid {
        SpatialGrid::new(20.0, 1024).unwrap()
    }

    fn gaussian(amp: f64, g: SpatialGrid) -> WaveField {
        AnalyticData::gaussian(amp, 0.25).unwrap().sample(g).unwrap()
    }

    #[test]
    fn zero_density_reduces_to_the_free_flow() {
        let f = gaussian(1.0, grid());
        let g_eps = vec![0.0; f.grid().n_points()];
        let stepped = strang_step(&f, &g_eps, 0.01).unwrap();
        let free = evolve_free(&f, 0.01);
        assert!(stepped.l2_distance(&free).unwrap() < 1e-13);
    }

    #[test]
    fn constant_field_follows_the_phase_ode() {
        // on the torus with constant g the equation reduces to
        // psi(t) = psi0 e^{-i g |psi0|^2 t}, which the scheme solves exactly
        let g = grid();
        let psi0 = Complex64::new(0.8, 0.3);
        let f = WaveField::from_fn(g, |_| psi0).unwrap();
        let coupling = 0.37;
        let g_eps = vec![coupling; g.n_points()];
        let dt = 0.05;
        let mut cur = f.clone();
        for _ in 0..20 {
            cur = strang_step(&cur, &g_eps, dt).unwrap();
        }
        let t = 1.0;
        let expect = psi0 * Complex64::from_polar(1.0, -coupling * psi0.norm_sqr() * t);
        for v in cur.values() {
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn strang_local_order_is_at_least_cubic() {
        // single step vs two half steps: the defect scales like dt^3
        let g = SpatialGrid::new(20.0, 2048).unwrap();
        let f = gaussian(1.0, g);
        let density = sample_g_eps(&Profile::Gaussian, 0.5, g).unwrap();
        let defect = |dt: f64| {
            let one = strang_step(&f, &density.values, dt).unwrap();
            let half = strang_step(
                &strang_step(&f, &density.values, dt / 2.0).unwrap(),
                &density.values,
                dt / 2.0,
            )
            .unwrap();
            one.l2_distance(&half).unwrap()
        };
        let dts = [0.08, 0.04, 0.02, 0.01];
        let defects: Vec<f64> = dts.iter().map(|&dt| defect(dt)).collect();
        // log-log slope
        let mut slopes = Vec::new();
        for i in 1..dts.len() {
            slopes.push((defects[i - 1] / defects[i]).log2());
        }
        let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
        assert!(slope >= 2.8, "local order slope {slope} ({defects:?})");
    }

    #[test]
    fn mass_is_exactly_conserved() {
        let g = grid();
        let f = gaussian(1.0, g);
        let times = TimeGrid::new(1.0, 64).unwrap();
        let cfg = SplitStepConfig {
            boundary_threshold: 0.01,
            ..SplitStepConfig::new(times.dt() / 4.0)
        };
        let record =
            solve_concentrated(&f, &Profile::SignedTwoBump, 0.5, &times, &cfg).unwrap();
        assert!(record.mass_drift() <= 1e-12, "drift {}", record.mass_drift());
    }

    #[test]
    fn zero_data_gives_a_zero_trajectory() {
        let g = grid();
        let times = TimeGrid::new(0.5, 32).unwrap();
        let cfg = SplitStepConfig::new(times.dt());
        let record =
            solve_concentrated(&WaveField::zero(g), &Profile::Box, 0.4, &times, &cfg).unwrap();
        assert!(record.sup_series.iter().all(|&s| s == 0.0));
        assert!(record
            .trace
            .unwrap()
            .series(0)
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    #[test]
    fn global_self_convergence_is_second_order() {
        // the box edges populate every mode, so the step must stay in the
        // resonance-free regime dt k_max^2 < pi for clean second order
        let g = SpatialGrid::new(20.0, 1024).unwrap();
        let f = gaussian(1.0, g);
        let times = TimeGrid::new(0.5, 8).unwrap();
        let solve = |substeps: usize| {
            let dt = times.dt() / substeps as f64;
            assert!(dt * g.nyquist().powi(2) < std::f64::consts::PI);
            let cfg = SplitStepConfig {
                sample_stride: times.n_steps(),
                boundary_threshold: 0.1,
                ..SplitStepConfig::new(dt)
            };
            let rec = solve_concentrated(&f, &Profile::Box, 0.2, &times, &cfg).unwrap();
            rec.fields.last().unwrap().clone()
        };
        let coarse = solve(256);
        let mid = solve(512);
        let fine = solve(1024);
        let d1 = coarse.l2_distance(&mid).unwrap();
        let d2 = mid.l2_distance(&fine).unwrap();
        let order = (d1 / d2).log2();
        assert!(order >= 1.9, "observed order {order} ({d1}, {d2})");
    }

    #[test]
    fn time_reversal_round_trip() {
        let g = grid();
        let f = gaussian(1.0, g);
        let times = TimeGrid::new(1.0, 128).unwrap();
        let cfg = SplitStepConfig {
            boundary_threshold: 0.1,
            ..SplitStepConfig::new(times.dt() / 2.0)
        };
        let density = sample_g_eps(&Profile::Box, 0.2, g).unwrap();
        let fwd = solve_with_density(&f, &density, &times, &cfg).unwrap();
        let turned = fwd.fields.last().unwrap().conj();
        let back = solve_with_density(&turned, &density, &times, &cfg).unwrap();
        let recovered = back.fields.last().unwrap().conj();
        let d = recovered.l2_distance(&f).unwrap();
        assert!(d <= 1e-8, "time-reversal defect {d}");
    }

    #[test]
    fn resolution_guard_refuses_thin_profiles() {
        let g = grid(); // dx = 40/1024
        let f = gaussian(1.0, g);
        let times = TimeGrid::new(0.5, 32).unwrap();
        let cfg = SplitStepConfig::new(times.dt());
        let err = solve_concentrated(&f, &Profile::Box, 2.0 * g.dx(), &times, &cfg);
        assert!(matches!(err, Err(Error::UnderResolvedProfile { .. })));
    }

    #[test]
    fn boundary_threshold_aborts() {
        let g = SpatialGrid::new(2.0, 64).unwrap(); // tiny box, fast spread
        let f = gaussian(1.0, g);
        let times = TimeGrid::new(4.0, 64).unwrap();
        let cfg = SplitStepConfig {
            boundary_threshold: 1e-8,
            ..SplitStepConfig::new(times.dt() / 8.0)
        };
        let err = solve_concentrated(&f, &Profile::Box, 0.5, &times, &cfg);
        assert!(matches!(err, Err(Error::TruncationDomain { .. })));
    }

    #[test]
    fn eps_study_self_comparison_is_zero() {
        let g = grid();
        let f = gaussian(0.5, g);
        let times = TimeGrid::new(0.5, 64).unwrap();
        let cfg = SplitStepConfig {
            sample_stride: 16,
            ..SplitStepConfig::new(times.dt())
        };
        let reference = solve_concentrated(&f, &Profile::Box, 0.3, &times, &cfg).unwrap();
        let rows =
            eps_convergence_study(&f, &Profile::Box, &[0.3], &reference, &times, &cfg, 0.0)
                .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].sup_l2_distance < 1e-14);
    }
}
