//! Subcommand implementations. Every run is deterministic given its config;
//! artifacts are CSV/JSON plus binary field snapshots, all hashed into the
//! manifest.

use crate::artifacts::{field_csv, ArtifactWriter, Csv, CsvField};
use crate::config::ExperimentConfig;
use anyhow::bail;
use num_complex::Complex64;
use pointnls_core::concentrated::{
    eps_convergence_study, solve_with_density, SplitStepConfig,
};
use pointnls_core::diagnostics::{
    check_kernel_identities, check_lipschitz_dependence, check_mass_conservation,
    check_scaling_symmetry, check_spacetime_bound, forcing_difference_decay, high_freq_tail,
    log_log_slope, CheckReport,
};
use pointnls_core::domain::measure::{sample_g_eps, CouplingMeasure};
use pointnls_core::domain::trace::BoundaryTrace;
use pointnls_core::domain::trajectory::{write_field_binary, TrajectoryRecord};
use pointnls_core::propagator::{evolve_free, kernel_at};
use pointnls_core::reconstruction::{
    mode_l2_norm, scattering_state, scattering_state_via_endpoint, DuhamelAccumulator,
};
use pointnls_core::volterra::{solve_backward, solve_trace, spacetime_l4, InitialData};
use pointnls_core::{SpatialGrid, TimeGrid, WaveField};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub fn validate(config: &ExperimentConfig) -> anyhow::Result<String> {
    let derived = config.validate()?;
    let mut out = String::new();
    out.push_str("configuration is valid\n");
    out.push_str(&format!("  dx                      = {}\n", derived.dx));
    out.push_str(&format!("  node dt                 = {}\n", derived.node_dt));
    out.push_str(&format!(
        "  concentrated dt         = {} ({} substeps per node)\n",
        derived.concentrated_dt, derived.substeps_per_node
    ));
    out.push_str(&format!("  nyquist |k|             = {}\n", derived.nyquist));
    out.push_str(&format!(
        "  resolution floor (4 dx) = {}\n",
        derived.resolution_floor_epsilon
    ));
    out.push_str(&format!(
        "  resonance dt k_max^2    = {}\n",
        derived.resonance_parameter
    ));
    Ok(out)
}

/// Trace solve + Duhamel reconstruction for the configured atomic coupling.
pub fn solve_delta(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    let data = config.analytic_data()?;
    let measure = config.coupling_measure(grid)?;
    if !measure.is_purely_atomic() {
        bail!("[coupling] solve-delta requires an atomic coupling; use solve-concentrated for densities");
    }
    let opts = config.solve_options();
    let trace = solve_trace(&InitialData::Analytic(data.clone()), &measure, &times, &opts)?;

    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    writer.write("trace.csv", &csv)?;

    let f0 = data.sample(grid)?;
    let acc = DuhamelAccumulator::new(&f0, &trace, &measure)?;
    let stride = config.concentrated.sample_stride;
    let mut diag = Csv::new("t,mass,rel_mass_drift");
    let mut index = Csv::new("sample,t,sup_amplitude,boundary_amplitude,csv,bin");
    let mass0 = f0.mass();
    let mut io_error: Option<anyhow::Error> = None;
    let mut samples: Vec<(usize, WaveField)> = Vec::new();
    acc.run(times.n_steps(), |node, y, disperse| {
        if io_error.is_some() {
            return;
        }
        let modes: Vec<Complex64> = y.iter().zip(disperse).map(|(a, b)| a * b).collect();
        let mass = mode_l2_norm(grid, &modes).powi(2);
        diag.row(&[
            CsvField::Float(times.node(node)),
            CsvField::Float(mass),
            CsvField::Float(if mass0 > 0.0 {
                (mass - mass0).abs() / mass0
            } else {
                0.0
            }),
        ]);
        if node % stride == 0 || node == times.n_steps() {
            match WaveField::from_modes(grid, &modes) {
                Ok(field) => samples.push((node, field)),
                Err(e) => io_error = Some(e.into()),
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    for (i, (node, field)) in samples.iter().enumerate() {
        let t = times.node(*node);
        let csv_name = format!("fields/field_{i:06}.csv");
        let bin_name = format!("fields/field_{i:06}.bin");
        writer.write(&csv_name, &field_csv(field))?;
        let mut bin = Vec::new();
        write_field_binary(field, t, &mut bin)?;
        writer.write(&bin_name, &bin)?;
        index.row(&[
            CsvField::Int(i as i64),
            CsvField::Float(t),
            CsvField::Float(field.sup_norm()),
            CsvField::Float(field.boundary_amplitude()),
            CsvField::Str(&csv_name),
            CsvField::Str(&bin_name),
        ]);
    }
    writer.write("diagnostics.csv", &diag.into_bytes())?;
    writer.write("fields_index.csv", &index.into_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(())
}

fn split_step_config(config: &ExperimentConfig, dt: f64) -> SplitStepConfig {
    SplitStepConfig {
        dt,
        dealias_fraction: config.concentrated.dealias_fraction,
        sample_stride: config.concentrated.sample_stride,
        boundary_threshold: config.concentrated.boundary_threshold,
    }
}

pub fn solve_concentrated(
    config: &ExperimentConfig,
    writer: &mut ArtifactWriter,
) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    if config.coupling.kind != "density" {
        bail!("[coupling] solve-concentrated requires kind = \"density\"");
    }
    let measure = config.coupling_measure(grid)?;
    let density = measure.density().expect("density coupling");
    let f0 = config.analytic_data()?.sample(grid)?;
    let cfg = split_step_config(config, derived.concentrated_dt);
    let record = solve_with_density(&f0, density, &times, &cfg)?;

    let mut csv = Vec::new();
    record
        .trace
        .as_ref()
        .expect("concentrated runs record the origin trace")
        .write_csv(&mut csv)?;
    writer.write("trace.csv", &csv)?;

    let mut diag = Csv::new("t,mass,rel_mass_drift,sup_amplitude");
    let mass0 = record.mass_series[0];
    for (n, (&mass, &sup)) in record
        .mass_series
        .iter()
        .zip(&record.sup_series)
        .enumerate()
    {
        diag.row(&[
            CsvField::Float(times.node(n)),
            CsvField::Float(mass),
            CsvField::Float(if mass0 > 0.0 {
                (mass - mass0).abs() / mass0
            } else {
                0.0
            }),
            CsvField::Float(sup),
        ]);
    }
    writer.write("diagnostics.csv", &diag.into_bytes())?;

    let mut index = Csv::new("sample,t,boundary_amplitude,csv,bin");
    for (i, (&node, field)) in record
        .sample_indices
        .iter()
        .zip(&record.fields)
        .enumerate()
    {
        let t = times.node(node);
        let csv_name = format!("fields/field_{i:06}.csv");
        let bin_name = format!("fields/field_{i:06}.bin");
        writer.write(&csv_name, &field_csv(field))?;
        let mut bin = Vec::new();
        write_field_binary(field, t, &mut bin)?;
        writer.write(&bin_name, &bin)?;
        index.row(&[
            CsvField::Int(i as i64),
            CsvField::Float(t),
            CsvField::Float(field.boundary_amplitude()),
            CsvField::Str(&csv_name),
            CsvField::Str(&bin_name),
        ]);
    }
    writer.write("fields_index.csv", &index.into_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(())
}

/// Reference trajectory for eps studies: the point-coupling solution,
/// reconstructed on the same grid and sampled at the same nodes the
/// concentrated runs record.
fn delta_reference(
    config: &ExperimentConfig,
    grid: SpatialGrid,
    times: &TimeGrid,
) -> anyhow::Result<TrajectoryRecord> {
    let data = config.analytic_data()?;
    let opts = config.solve_options();
    let measure = CouplingMeasure::delta();
    let trace = solve_trace(&InitialData::Analytic(data.clone()), &measure, times, &opts)?;
    let f0 = data.sample(grid)?;
    let acc = DuhamelAccumulator::new(&f0, &trace, &measure)?;
    let stride = config.concentrated.sample_stride;
    let mut sample_indices = Vec::new();
    let mut fields = Vec::new();
    let mut mass_series = Vec::with_capacity(times.len());
    let mut sup_series = Vec::with_capacity(times.len());
    let mut max_boundary = 0.0f64;
    let mut failure: Option<pointnls_core::Error> = None;
    acc.run(times.n_steps(), |node, y, disperse| {
        if failure.is_some() {
            return;
        }
        let modes: Vec<Complex64> = y.iter().zip(disperse).map(|(a, b)| a * b).collect();
        mass_series.push(mode_l2_norm(grid, &modes).powi(2));
        match WaveField::from_modes(grid, &modes) {
            Ok(field) => {
                sup_series.push(field.sup_norm());
                max_boundary = max_boundary.max(field.boundary_amplitude());
                if node % stride == 0 || node == times.n_steps() {
                    sample_indices.push(node);
                    fields.push(field);
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(TrajectoryRecord {
        config: serde_json::json!({"solver": "trace+reconstruction"}),
        times: *times,
        sample_indices,
        fields,
        trace: Some(trace),
        mass_series,
        sup_series,
        max_boundary_amplitude: max_boundary,
    })
}

pub fn converge_eps(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    let profile = config.profile()?;
    let reference = delta_reference(config, grid, &times)?;
    let f0 = config.analytic_data()?.sample(grid)?;
    let cfg = split_step_config(config, derived.concentrated_dt);
    let rows = eps_convergence_study(
        &f0,
        &profile,
        &config.studies.eps_sweep,
        &reference,
        &times,
        &cfg,
        config.studies.eps_initial_perturbation,
    )?;
    let mut csv = Csv::new("epsilon,sup_t_L2_distance,mass_drift,boundary_mass");
    for row in &rows {
        csv.row(&[
            CsvField::Float(row.epsilon),
            CsvField::Float(row.sup_l2_distance),
            CsvField::Float(row.mass_drift),
            CsvField::Float(row.boundary_amplitude),
        ]);
    }
    writer.write("eps_study.csv", &csv.into_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(())
}

pub fn self_converge(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let data = config.analytic_data()?;
    let measure = CouplingMeasure::delta();
    let opts = config.solve_options();
    let t_final = config.time.t_final;
    let sweep = &config.studies.h_sweep;
    if sweep.len() < 2 {
        bail!("[studies] h_sweep needs at least two entries");
    }
    let finest = *sweep.iter().max().unwrap();
    let ref_steps = finest * 4;
    let solve = |steps: usize| -> anyhow::Result<BoundaryTrace> {
        Ok(solve_trace(
            &InitialData::Analytic(data.clone()),
            &measure,
            &TimeGrid::new(t_final, steps)?,
            &opts,
        )?)
    };
    let reference = solve(ref_steps)?;
    let runs: Vec<(usize, BoundaryTrace)> = sweep
        .par_iter()
        .map(|&steps| solve(steps).map(|tr| (steps, tr)))
        .collect::<anyhow::Result<_>>()?;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    let mut csv = Csv::new("n_steps,h,sup_error_vs_reference,pair_order");
    let mut prev: Option<f64> = None;
    for (steps, tr) in &runs {
        let stride = ref_steps / steps;
        let mut sup = 0.0f64;
        for n in 0..=*steps {
            sup = sup.max((tr.value(0, n) - reference.value(0, n * stride)).norm());
        }
        let h = t_final / *steps as f64;
        let order = prev.map(|p| (p / sup).log2());
        csv.row(&[
            CsvField::Int(*steps as i64),
            CsvField::Float(h),
            CsvField::Float(sup),
            match order {
                Some(o) => CsvField::Float(o),
                None => CsvField::Str(""),
            },
        ]);
        hs.push(h);
        errs.push(sup);
        prev = Some(sup);
    }
    writer.write("self_convergence.csv", &csv.into_bytes())?;
    let summary = serde_json::json!({
        "reference_n_steps": ref_steps,
        "observed_order_least_squares": log_log_slope(&hs, &errs),
    });
    writer.write(
        "self_convergence_summary.json",
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    writer.finalize(config, &derived)?;
    Ok(())
}

pub fn scattering(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let data = config.analytic_data()?;
    let measure = config.coupling_measure(grid)?;
    if !measure.is_purely_atomic() {
        bail!("[coupling] scattering extraction requires an atomic coupling");
    }
    let opts = config.solve_options();
    let times = config.time_grid()?;
    let t_need = 2.0 * config
        .studies
        .scattering_times
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    if times.t_final() < t_need {
        bail!(
            "[time] t_final = {} but the scattering study needs the trace on [0, {t_need}]",
            times.t_final()
        );
    }
    let trace = solve_trace(&InitialData::Analytic(data.clone()), &measure, &times, &opts)?;
    let f0 = data.sample(grid)?;
    let mut csv = Csv::new(
        "extraction_time,cauchy_defect,defect_over_initial_norm,cross_route_distance,boundary_amplitude_at_t,psi_plus_csv,psi_plus_bin",
    );
    let norm0 = f0.l2_norm();
    for (i, &t_ex) in config.studies.scattering_times.iter().enumerate() {
        let state = scattering_state(&f0, &trace, &measure, t_ex)?;
        let alt = scattering_state_via_endpoint(&f0, &trace, &measure, t_ex)?;
        let cross = state.field.l2_distance(&alt)?;
        let at_t = pointnls_core::reconstruction::reconstruct(&f0, &trace, &measure, t_ex)?;
        let csv_name = format!("psi_plus_{i:02}.csv");
        let bin_name = format!("psi_plus_{i:02}.bin");
        writer.write(&csv_name, &field_csv(&state.field))?;
        let mut bin = Vec::new();
        write_field_binary(&state.field, t_ex, &mut bin)?;
        writer.write(&bin_name, &bin)?;
        csv.row(&[
            CsvField::Float(t_ex),
            CsvField::Float(state.cauchy_defect),
            CsvField::Float(if norm0 > 0.0 {
                state.cauchy_defect / norm0
            } else {
                0.0
            }),
            CsvField::Float(cross),
            CsvField::Float(at_t.boundary_amplitude()),
            CsvField::Str(&csv_name),
            CsvField::Str(&bin_name),
        ]);
    }
    writer.write("scattering.csv", &csv.into_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(())
}

pub fn sweep(config: &ExperimentConfig, writer: &mut ArtifactWriter) -> anyhow::Result<()> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    let measure = CouplingMeasure::delta();
    let opts = config.solve_options();
    let base = config.analytic_data()?;

    let run_amp = |amp: f64| -> anyhow::Result<(f64, f64, f64, f64)> {
        let data = base
            .scale_amplitude(Complex64::from(amp / config.data.amplitude.max(1e-300)));
        let trace = solve_trace(&InitialData::Analytic(data.clone()), &measure, &times, &opts)?;
        let lhs = spacetime_l4(&trace, 0);
        let f0 = data.sample(grid)?;
        let sups = pointnls_core::propagator::free_sup_series(&f0, &times);
        let rhs = pointnls_core::propagator::l4_time_quadrature(&sups, times.dt());
        Ok((amp, lhs, rhs, f0.mass()))
    };

    let rows: Vec<(f64, f64, f64, f64)> = config
        .studies
        .amplitude_sweep
        .par_iter()
        .map(|&a| run_amp(a))
        .collect::<anyhow::Result<_>>()?;
    let mut csv = Csv::new(
        "amplitude,mass,spacetime_l4,linear_l4c4,stb_ratio,strichartz_ratio,bounded",
    );
    for &(amp, lhs, rhs, mass) in &rows {
        let m2 = mass * mass;
        csv.row(&[
            CsvField::Float(amp),
            CsvField::Float(mass),
            CsvField::Float(lhs),
            CsvField::Float(rhs),
            CsvField::Float(if m2 > 0.0 { lhs / m2 } else { 0.0 }),
            CsvField::Float(if m2 > 0.0 { rhs / m2 } else { 0.0 }),
            CsvField::Str(if lhs <= rhs * (1.0 + config.checks.slack) {
                "true"
            } else {
                "false"
            }),
        ]);
    }
    writer.write("amplitude_sweep.csv", &csv.into_bytes())?;

    // small-data regime: spacetime_l4 scales like A^4
    let small: Vec<(f64, f64)> = config
        .checks
        .small_data_amplitudes
        .par_iter()
        .map(|&a| run_amp(a).map(|(amp, lhs, _, _)| (amp, lhs)))
        .collect::<anyhow::Result<_>>()?;
    let mut csv = Csv::new("amplitude,spacetime_l4,quartic_ratio_vs_prev");
    for (i, &(amp, lhs)) in small.iter().enumerate() {
        let ratio = if i > 0 {
            let (pa, pl) = small[i - 1];
            Some(lhs / pl / (amp / pa).powi(4))
        } else {
            None
        };
        csv.row(&[
            CsvField::Float(amp),
            CsvField::Float(lhs),
            match ratio {
                Some(r) => CsvField::Float(r),
                None => CsvField::Str(""),
            },
        ]);
    }
    writer.write("small_data.csv", &csv.into_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(())
}

/// All diagnostics as one deterministic suite; returns the reports.
pub fn check_suite(
    config: &ExperimentConfig,
    writer: &mut ArtifactWriter,
) -> anyhow::Result<Vec<CheckReport>> {
    let derived = config.validate()?;
    let grid = config.spatial_grid()?;
    let times = config.time_grid()?;
    let data = config.analytic_data()?;
    let opts = config.solve_options();
    let delta = CouplingMeasure::delta();
    let slack = config.checks.slack;
    let mut reports: Vec<CheckReport> = Vec::new();

    // kernel identities at seeded sample points
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples: Vec<f64> = (0..100)
        .map(|_| {
            let t = rng.random::<f64>() * 20.0 - 10.0;
            if t == 0.0 {
                0.5
            } else {
                t
            }
        })
        .collect();
    reports.push(check_kernel_identities(&samples));
    let k10 = kernel_at(1.0, 0.0).expect("t != 0");
    reports.push(CheckReport::one_sided(
        "kernel-value",
        (k10 - Complex64::new(0.19947114, -0.19947114)).norm(),
        5e-9,
        0.0,
    ));

    // free flow: unitarity and group law
    let f0 = data.sample(grid)?;
    let mass0 = f0.mass();
    let mut drift = 0.0f64;
    let mut inversion = 0.0f64;
    for t in [0.3, 1.0, 4.7] {
        let e = evolve_free(&f0, t);
        drift = drift.max((e.mass() - mass0).abs() / mass0.max(1e-300));
        inversion = inversion.max(
            evolve_free(&e, -t).l2_distance(&f0)? / mass0.max(1e-300).sqrt(),
        );
    }
    reports.push(CheckReport::one_sided("free-unitarity", drift, 1e-13, 0.0));
    reports.push(CheckReport::one_sided(
        "free-group-law",
        inversion,
        1e-12,
        0.0,
    ));

    // product-integration weight identity
    let weights = pointnls_core::volterra::AbelWeights::new(64, 1.0 / 64.0);
    let sum: f64 = weights.row(64).iter().sum();
    reports.push(CheckReport::one_sided(
        "abel-weight-sum",
        (sum - 2.0).abs(),
        1e-12,
        0.0,
    ));

    // spacetime bound on the configured data and window
    let data_init = InitialData::Analytic(data.clone());
    let trace = solve_trace(&data_init, &delta, &times, &opts)?;
    let stb = check_spacetime_bound(&data_init, grid, &trace, slack)?;
    reports.push(stb.check.clone());

    // linear-regime saturation at small amplitude
    let small = InitialData::Analytic(
        data.scale_amplitude(Complex64::from(1e-3 / config.data.amplitude.max(1e-300))),
    );
    let small_trace = solve_trace(&small, &delta, &times, &opts)?;
    let small_stb = check_spacetime_bound(&small, grid, &small_trace, slack)?;
    let ratio = small_stb.spacetime_l4 / small_stb.linear_l4c4.max(1e-300);
    reports.push(CheckReport::one_sided(
        "linear-saturation-upper",
        ratio,
        1.0,
        0.0,
    ));
    reports.push(CheckReport::one_sided(
        "linear-saturation-lower",
        0.97,
        ratio,
        0.0,
    ));

    // concentrated mass conservation (scheme-exact)
    let cgrid = SpatialGrid::new(grid.half_width(), config.checks.concentrated_n_points)
        .map_err(|e| anyhow::anyhow!("[checks] {e}"))?;
    let cdx = cgrid.dx();
    let ctimes = TimeGrid::new(0.5, 64).map_err(|e| anyhow::anyhow!("{e}"))?;
    let csub = (ctimes.dt() / (config.concentrated.dt_factor * cdx * cdx))
        .ceil()
        .max(1.0);
    let ccfg = SplitStepConfig {
        boundary_threshold: 0.1,
        ..split_step_config(config, ctimes.dt() / csub)
    };
    let cfield = data.sample(cgrid)?;
    let cdensity = sample_g_eps(&pointnls_core::Profile::Box, 0.4, cgrid)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let crecord = solve_with_density(&cfield, &cdensity, &ctimes, &ccfg)?;
    reports.push(check_mass_conservation(&crecord, 1e-12));

    // time reversal of the concentrated run
    let turned = crecord.fields.last().expect("sampled fields").conj();
    let back = solve_with_density(&turned, &cdensity, &ctimes, &ccfg)?;
    let recovered = back.fields.last().expect("sampled fields").conj();
    reports.push(CheckReport::one_sided(
        "time-reversal-concentrated",
        recovered.l2_distance(&cfield)?,
        1e-8,
        0.0,
    ));

    // reconstruction mass conservation at two step sizes
    let mgrid = SpatialGrid::new(grid.half_width(), config.checks.delta_mass_n_points)
        .map_err(|e| anyhow::anyhow!("[checks] {e}"))?;
    let msteps = &config.checks.delta_mass_steps;
    if msteps.len() < 2 {
        bail!("[checks] delta_mass_steps needs two entries");
    }
    let mdrift = |steps: usize| -> anyhow::Result<f64> {
        let mtimes = TimeGrid::new(1.0, steps).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mtrace = solve_trace(&data_init, &delta, &mtimes, &opts)?;
        let mf0 = data.sample(mgrid)?;
        let rec = pointnls_core::reconstruction::reconstruct(&mf0, &mtrace, &delta, 1.0)?;
        Ok((rec.mass() - mf0.mass()).abs() / mf0.mass())
    };
    let drift_coarse = mdrift(msteps[0])?;
    let drift_fine = mdrift(msteps[1])?;
    let mut mass_rec = CheckReport::one_sided("mass-conservation-reconstruction", drift_coarse, 1e-3, 0.0);
    mass_rec.refinement_trend = Some(vec![drift_coarse, drift_fine]);
    reports.push(mass_rec);
    reports.push(CheckReport::one_sided(
        "mass-drift-refinement",
        2.0 * drift_fine,
        drift_coarse,
        0.3,
    ));

    // frequency tails of the evolved configured data
    let evolved = evolve_free(&f0, times.t_final());
    let mut tails = Vec::new();
    for &cutoff in &config.checks.frequency_cutoffs {
        tails.push(high_freq_tail(&evolved, cutoff).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    let worst_increase = tails
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    let mut tail_check = CheckReport::one_sided("frequency-tail-monotone", worst_increase, 0.0, 0.0);
    tail_check.refinement_trend = Some(tails.clone());
    reports.push(tail_check);
    reports.push(CheckReport::one_sided(
        "frequency-tail-smallness",
        tails.last().copied().unwrap_or(0.0),
        1e-8 * evolved.l2_norm().max(1e-300),
        0.0,
    ));

    // Lipschitz dependence across perturbation scales
    let lip = check_lipschitz_dependence(
        &f0,
        &delta,
        &times,
        &opts,
        &config.studies.lipschitz_scales,
        config.seed,
    )?;
    reports.push(lip.check.clone());

    // scaling covariance
    reports.push(check_scaling_symmetry(&data, 2.0, &times, &opts)?);

    // uniqueness surrogate: tolerance insensitivity
    let loose = solve_trace(
        &data_init,
        &delta,
        &times,
        &pointnls_core::volterra::TraceSolveOptions {
            tolerance: 1e-8,
            ..opts
        },
    )?;
    let tight = solve_trace(
        &data_init,
        &delta,
        &times,
        &pointnls_core::volterra::TraceSolveOptions {
            tolerance: 1e-10,
            ..opts
        },
    )?;
    reports.push(CheckReport::one_sided(
        "uniqueness-surrogate",
        loose.sup_distance(&tight)?,
        1e-6,
        0.0,
    ));

    // small-data homogeneity: spacetime L4 scales like A^4
    let amps = &config.checks.small_data_amplitudes;
    let values: Vec<f64> = amps
        .par_iter()
        .map(|&a| -> anyhow::Result<f64> {
            let d = InitialData::Analytic(
                data.scale_amplitude(Complex64::from(a / config.data.amplitude.max(1e-300))),
            );
            let tr = solve_trace(&d, &delta, &times, &opts)?;
            Ok(spacetime_l4(&tr, 0))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut worst_dev = 0.0f64;
    for i in 1..amps.len() {
        let predicted = values[i - 1] * (amps[i] / amps[i - 1]).powi(4);
        worst_dev = worst_dev.max((values[i] / predicted - 1.0).abs());
    }
    reports.push(CheckReport::one_sided(
        "small-data-homogeneity",
        worst_dev,
        0.05,
        0.0,
    ));

    // scattering: Cauchy defect decreases, two extraction routes agree
    let ex_times = &config.checks.scattering_extraction_times;
    let t_need = 2.0 * ex_times.iter().cloned().fold(0.0f64, f64::max);
    let sc_steps = (t_need / times.dt()).round() as usize;
    let sc_times = TimeGrid::new(t_need, sc_steps).map_err(|e| anyhow::anyhow!("{e}"))?;
    let sc_trace = solve_trace(&data_init, &delta, &sc_times, &opts)?;
    let mut defects = Vec::new();
    for &t_ex in ex_times {
        defects.push(scattering_state(&f0, &sc_trace, &delta, t_ex)?.cauchy_defect);
    }
    let worst_ratio = defects
        .windows(2)
        .map(|w| w[1] / w[0].max(1e-300))
        .fold(0.0f64, f64::max);
    let mut sc_check = CheckReport::one_sided("scattering-defect-decrease", worst_ratio, 1.0, 0.0);
    sc_check.refinement_trend = Some(defects);
    reports.push(sc_check);
    let st = scattering_state(&f0, &sc_trace, &delta, ex_times[0])?;
    let alt = scattering_state_via_endpoint(&f0, &sc_trace, &delta, ex_times[0])?;
    reports.push(CheckReport::one_sided(
        "scattering-cross-path",
        st.field.l2_distance(&alt)?,
        1e-10,
        0.0,
    ));

    // fast history equals direct summation
    let fast = solve_trace(
        &data_init,
        &delta,
        &times,
        &pointnls_core::volterra::TraceSolveOptions {
            fast_history: true,
            ..opts
        },
    )?;
    reports.push(CheckReport::one_sided(
        "fast-history-equality",
        fast.sup_distance(&trace)?,
        1e-10,
        0.0,
    ));

    // trace round trip through reconstruction and the backward solve; its
    // floor is the reconstruction's band-limit tail, so it gets its own grid
    let rt_grid = SpatialGrid::new(grid.half_width(), config.checks.round_trip_n_points)
        .map_err(|e| anyhow::anyhow!("[checks] {e}"))?;
    let rt_f0 = data.sample(rt_grid)?;
    let endpoint =
        pointnls_core::reconstruction::reconstruct(&rt_f0, &trace, &delta, times.t_final())?;
    let back_trace = solve_backward(&endpoint, &delta, &times, &opts)?;
    reports.push(CheckReport::one_sided(
        "trace-round-trip",
        back_trace.sup_distance(&trace)?,
        5.0 * config.checks.round_trip_tolerance,
        0.0,
    ));

    // forcing-difference decay over the configured eps pair
    let fd = forcing_difference_decay(
        &f0,
        &trace,
        &delta,
        &pointnls_core::Profile::Box,
        &config.checks.forcing_eps,
        config.checks.forcing_cutoff,
    )?;
    let mut worst = 0.0f64;
    for w in fd.windows(2) {
        worst = worst.max(w[1].sup_low_freq_l2 / w[0].sup_low_freq_l2.max(1e-300));
        worst = worst.max(w[1].l4t_l4_geps / w[0].l4t_l4_geps.max(1e-300));
    }
    reports.push(CheckReport::one_sided(
        "forcing-difference-decay",
        worst,
        1.0,
        0.0,
    ));

    // eps convergence toward the point coupling
    let reference = delta_reference(config, grid, &times)?;
    let study_cfg = SplitStepConfig {
        boundary_threshold: 0.1,
        ..split_step_config(config, derived.concentrated_dt)
    };
    let rows = eps_convergence_study(
        &f0,
        &pointnls_core::Profile::Box,
        &config.checks.eps_monotone,
        &reference,
        &times,
        &study_cfg,
        0.0,
    )?;
    let mut worst = 0.0f64;
    for w in rows.windows(2) {
        worst = worst.max(w[1].sup_l2_distance / w[0].sup_l2_distance.max(1e-300));
    }
    let mut eps_check = CheckReport::one_sided("eps-convergence-monotone", worst, 1.0, 0.0);
    eps_check.refinement_trend = Some(rows.iter().map(|r| r.sup_l2_distance).collect());
    reports.push(eps_check);

    // artifacts
    let mut jsonl = String::new();
    for r in &reports {
        jsonl.push_str(&r.to_json_line());
        jsonl.push('\n');
    }
    writer.write("checks.jsonl", jsonl.as_bytes())?;
    let mut table = String::new();
    table.push_str(&format!(
        "{:<34} {:>14} {:>14} {:>14}  {}\n",
        "check", "lhs", "rhs", "margin", "pass"
    ));
    for r in &reports {
        table.push_str(&format!(
            "{:<34} {:>14.6e} {:>14.6e} {:>14.6e}  {}\n",
            r.name,
            r.lhs,
            r.rhs,
            r.margin,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    writer.write("checks_summary.txt", table.as_bytes())?;
    writer.finalize(config, &derived)?;
    Ok(reports)
}

/// Thin wrapper so tests can run a named subcommand end to end.
pub fn run_subcommand(
    name: &str,
    config: &ExperimentConfig,
    writer: &mut ArtifactWriter,
) -> anyhow::Result<Option<Vec<CheckReport>>> {
    match name {
        "solve-delta" => solve_delta(config, writer).map(|_| None),
        "solve-concentrated" => solve_concentrated(config, writer).map(|_| None),
        "converge-eps" => converge_eps(config, writer).map(|_| None),
        "self-converge" => self_converge(config, writer).map(|_| None),
        "scattering" => scattering(config, writer).map(|_| None),
        "sweep" => sweep(config, writer).map(|_| None),
        "check-suite" => check_suite(config, writer).map(Some),
        other => bail!("unknown subcommand {other}"),
    }
}
