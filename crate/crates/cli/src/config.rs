//! Experiment configuration: a single TOML file drives every subcommand.
//! Nothing is applied silently; the parsed, effective values are echoed into
//! the run manifest.

use anyhow::{bail, Context};
use pointnls_core::domain::measure::{Atom, CouplingMeasure, Profile};
use pointnls_core::propagator::{AnalyticData, GaussianTerm};
use pointnls_core::volterra::TraceSolveOptions;
use pointnls_core::{SpatialGrid, TimeGrid};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the only randomness in the suite: Lipschitz perturbation
    /// directions and kernel-identity sample points.
    pub seed: u64,
    pub grid: GridSection,
    pub time: TimeSection,
    pub data: DataSection,
    pub coupling: CouplingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub concentrated: ConcentratedSection,
    #[serde(default)]
    pub studies: StudiesSection,
    #[serde(default)]
    pub checks: ChecksSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub half_width: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "gaussian" | "bimodal" | "odd"
    pub family: String,
    pub amplitude: f64,
    /// Gaussian shape parameter `a` in `exp(-(x-c)^2 / (4a))`.
    pub width: f64,
    #[serde(default)]
    pub center: f64,
    /// Bump separation for the bimodal and odd families.
    #[serde(default)]
    pub separation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// "delta" | "atoms" | "density" | "zero"
    pub kind: String,
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub profile_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tolerance: f64,
    pub max_iter: usize,
    pub fast_history: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 200,
            fast_history: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentratedSection {
    /// Integration step as a multiple of dx^2; keeps the splitting below
    /// the resonance threshold `dt k_max^2 < pi` when < ~0.3.
    pub dt_factor: f64,
    pub dealias_fraction: f64,
    pub sample_stride: usize,
    pub boundary_threshold: f64,
}

impl Default for ConcentratedSection {
    fn default() -> Self {
        Self {
            dt_factor: 0.2,
            dealias_fraction: 2.0 / 3.0,
            sample_stride: 8,
            boundary_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudiesSection {
    pub eps_sweep: Vec<f64>,
    /// n_steps values for the time self-convergence study.
    pub h_sweep: Vec<usize>,
    pub amplitude_sweep: Vec<f64>,
    pub scattering_times: Vec<f64>,
    pub lipschitz_scales: Vec<f64>,
    /// Initial-data perturbation scale for the eps study (0 = identical
    /// initial data).
    pub eps_initial_perturbation: f64,
}

impl Default for StudiesSection {
    fn default() -> Self {
        Self {
            eps_sweep: vec![0.4, 0.2, 0.1, 0.05],
            h_sweep: vec![256, 512, 1024],
            amplitude_sweep: vec![1e-3, 0.5, 1.0, 2.0, 4.0],
            scattering_times: vec![4.0, 8.0, 16.0],
            lipschitz_scales: vec![1e-3, 1e-4, 1e-5],
            eps_initial_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    /// Slack for one-sided inequality checks.
    pub slack: f64,
    /// Grid for the concentrated-solver checks (kept moderate: its step is
    /// tied to dx^2).
    pub concentrated_n_points: usize,
    /// Grid and steps for the reconstruction mass audit; the drift floor
    /// scales with 1/n_points.
    pub delta_mass_n_points: usize,
    pub delta_mass_steps: Vec<usize>,
    pub scattering_extraction_times: Vec<f64>,
    pub forcing_eps: Vec<f64>,
    pub forcing_cutoff: f64,
    pub eps_monotone: Vec<f64>,
    pub frequency_cutoffs: Vec<f64>,
    pub small_data_amplitudes: Vec<f64>,
    /// Nominal pipeline accuracy for the trace round trip; the check allows
    /// five times this value.
    pub round_trip_tolerance: f64,
    /// Grid for the round-trip check; the reconstruction floor scales with
    /// 1/n_points.
    pub round_trip_n_points: usize,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            slack: 1e-2,
            concentrated_n_points: 2048,
            delta_mass_n_points: 32768,
            delta_mass_steps: vec![256, 512],
            scattering_extraction_times: vec![1.0, 2.0],
            forcing_eps: vec![0.4, 0.2],
            forcing_cutoff: 8.0,
            eps_monotone: vec![0.4, 0.2],
            frequency_cutoffs: vec![2.0, 4.0, 8.0, 16.0],
            small_data_amplitudes: vec![1e-3, 2e-3, 4e-3],
            round_trip_tolerance: 2e-4,
            round_trip_n_points: 16384,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
}

/// Everything derived from a valid configuration, resolved once.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedQuantities {
    pub dx: f64,
    pub node_dt: f64,
    pub concentrated_dt: f64,
    pub substeps_per_node: usize,
    pub nyquist: f64,
    pub resolution_floor_epsilon: f64,
    pub resonance_parameter: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn spatial_grid(&self) -> anyhow::Result<SpatialGrid> {
        Ok(SpatialGrid::new(self.grid.half_width, self.grid.n_points)
            .map_err(|e| anyhow::anyhow!("[grid] {e}"))?)
    }

    pub fn time_grid(&self) -> anyhow::Result<TimeGrid> {
        Ok(TimeGrid::new(self.time.t_final, self.time.n_steps)
            .map_err(|e| anyhow::anyhow!("[time] {e}"))?)
    }

    pub fn analytic_data(&self) -> anyhow::Result<AnalyticData> {
        analytic_family(
            &self.data.family,
            self.data.amplitude,
            self.data.width,
            self.data.center,
            self.data.separation,
        )
    }

    pub fn coupling_measure(&self, grid: SpatialGrid) -> anyhow::Result<CouplingMeasure> {
        match self.coupling.kind.as_str() {
            "delta" => Ok(CouplingMeasure::delta()),
            "zero" => Ok(CouplingMeasure::zero()),
            "atoms" => {
                if self.coupling.atoms.is_empty() {
                    bail!("[coupling] kind = \"atoms\" requires a non-empty atoms list");
                }
                let atoms = self
                    .coupling
                    .atoms
                    .iter()
                    .map(|&(location, weight)| Atom { location, weight })
                    .collect();
                Ok(CouplingMeasure::from_atoms(atoms).map_err(|e| anyhow::anyhow!("[coupling] {e}"))?)
            }
            "density" => {
                let eps = self
                    .coupling
                    .epsilon
                    .ok_or_else(|| anyhow::anyhow!("[coupling] density requires epsilon"))?;
                let profile = self.profile()?;
                let density = pointnls_core::domain::measure::sample_g_eps(&profile, eps, grid)
                    .map_err(|e| anyhow::anyhow!("[coupling] {e}"))?;
                Ok(CouplingMeasure::from_density(density))
            }
            other => bail!("[coupling] unknown kind {other:?}"),
        }
    }

    pub fn profile(&self) -> anyhow::Result<Profile> {
        let name = self
            .coupling
            .profile
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("[coupling] a profile name is required"))?;
        profile_by_name(name, self.coupling.profile_file.as_deref())
    }

    pub fn solve_options(&self) -> TraceSolveOptions {
        TraceSolveOptions {
            tolerance: self.solver.tolerance,
            max_iter: self.solver.max_iter,
            fast_history: self.solver.fast_history,
        }
    }

    pub fn derived(&self) -> anyhow::Result<DerivedQuantities> {
        let grid = self.spatial_grid()?;
        let times = self.time_grid()?;
        let dx = grid.dx();
        let raw_dt = self.concentrated.dt_factor * dx * dx;
        let substeps = (times.dt() / raw_dt).ceil().max(1.0) as usize;
        let concentrated_dt = times.dt() / substeps as f64;
        Ok(DerivedQuantities {
            dx,
            node_dt: times.dt(),
            concentrated_dt,
            substeps_per_node: substeps,
            nyquist: grid.nyquist(),
            resolution_floor_epsilon: 4.0 * dx,
            resonance_parameter: concentrated_dt * grid.nyquist() * grid.nyquist(),
        })
    }

    /// Static validation; lists every violated guard with its field.
    pub fn validate(&self) -> anyhow::Result<DerivedQuantities> {
        let grid = self.spatial_grid()?;
        self.time_grid()?;
        let derived = self.derived()?;
        self.analytic_data()?;
        if !(self.solver.tolerance > 0.0) {
            bail!("[solver] tolerance must be > 0");
        }
        if !(self.concentrated.dealias_fraction > 0.0 && self.concentrated.dealias_fraction <= 1.0)
        {
            bail!("[concentrated] dealias_fraction must lie in (0, 1]");
        }
        if !(self.concentrated.dt_factor > 0.0) {
            bail!("[concentrated] dt_factor must be > 0");
        }
        if self.concentrated.sample_stride == 0 {
            bail!("[concentrated] sample_stride must be >= 1");
        }
        self.coupling_measure(grid)
            .context("[coupling] invalid coupling")?;
        if self.coupling.kind == "density" {
            let eps = self.coupling.epsilon.unwrap_or(0.0);
            if eps < derived.resolution_floor_epsilon {
                bail!(
                    "[coupling] under-resolved profile: epsilon = {eps} but the grid requires epsilon >= 4 dx = {}",
                    derived.resolution_floor_epsilon
                );
            }
        }
        for &eps in &self.studies.eps_sweep {
            if eps < derived.resolution_floor_epsilon {
                bail!(
                    "[studies] eps_sweep entry {eps} is under-resolved on this grid (needs >= {})",
                    derived.resolution_floor_epsilon
                );
            }
        }
        for &steps in &self.studies.h_sweep {
            if steps == 0 {
                bail!("[studies] h_sweep entries must be >= 1");
            }
        }
        Ok(derived)
    }
}

pub fn profile_by_name(name: &str, file: Option<&str>) -> anyhow::Result<Profile> {
    match name {
        "box" => Ok(Profile::Box),
        "gaussian" => Ok(Profile::Gaussian),
        "signed-two-bump" => Ok(Profile::SignedTwoBump),
        "file" => {
            let path = file
                .ok_or_else(|| anyhow::anyhow!("[coupling] profile = \"file\" requires profile_file"))?;
            Ok(Profile::from_file(Path::new(path))
                .map_err(|e| anyhow::anyhow!("[coupling] {e}"))?)
        }
        other => bail!("[coupling] unknown profile {other:?}"),
    }
}

pub fn analytic_family(
    family: &str,
    amplitude: f64,
    width: f64,
    center: f64,
    separation: f64,
) -> anyhow::Result<AnalyticData> {
    if !(width > 0.0 && width.is_finite()) {
        bail!("[data] width must be > 0");
    }
    if !amplitude.is_finite() {
        bail!("[data] amplitude must be finite");
    }
    let term = |amp: f64, c: f64| {
        GaussianTerm::new(
            num_complex::Complex64::new(amp, 0.0),
            num_complex::Complex64::new(width, 0.0),
            c,
        )
        .map_err(|e| anyhow::anyhow!("[data] {e}"))
    };
    let terms = match family {
        "gaussian" => vec![term(amplitude, center)?],
        "bimodal" => {
            let sep = if separation > 0.0 { separation } else { 4.0 };
            vec![
                term(amplitude, center - sep / 2.0)?,
                term(amplitude, center + sep / 2.0)?,
            ]
        }
        "odd" => {
            let sep = if separation > 0.0 { separation } else { 2.0 };
            vec![
                term(amplitude, center - sep / 2.0)?,
                term(-amplitude, center + sep / 2.0)?,
            ]
        }
        other => bail!("[data] unknown family {other:?}"),
    };
    Ok(AnalyticData { terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[grid]
half_width = 20.0
n_points = 2048
[time]
t_final = 1.0
n_steps = 256
[data]
family = "gaussian"
amplitude = 1.0
width = 0.25
[coupling]
kind = "delta"
[output]
directory = "out"
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        let derived = cfg.validate().unwrap();
        assert!((derived.dx - 40.0 / 2048.0).abs() < 1e-15);
        assert!(derived.resonance_parameter < std::f64::consts::PI);
    }

    #[test]
    fn power_of_two_guard() {
        let text = MINIMAL.replace("n_points = 2048", "n_points = 100");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("power of two"), "{err}");
    }

    #[test]
    fn under_resolved_epsilon_guard() {
        let text = MINIMAL.replace(
            "kind = \"delta\"",
            "kind = \"density\"\nprofile = \"box\"\nepsilon = 0.0195",
        );
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("under-resolved"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\n[solver]\nbogus = 1\n");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }
}
