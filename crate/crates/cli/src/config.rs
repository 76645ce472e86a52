//! Model configuration files (TOML). Unknown keys are rejected and every physical
//! parameter is range-checked; errors carry the dotted path of the offending field.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use fermigap::fock::DENSE_LIMIT;
use fermigap::lattice::{build_torus, SiteGraph};
use fermigap::model::Model;
use fermigap::normalorder::{density_density, nearest_neighbour_kernel, NormalOrderedOperator};
use fermigap::onebody::{apply_flux, build_hopping, Disorder, FluxSpec, HoppingProfile, HoppingSpec, OneBodyOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lattice: LatticeConfig,
    pub onebody: OneBodyConfig,
    pub interaction: InteractionConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    pub dims: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Internal states per site.
    pub spin: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { dims: 1, l: 2, spin: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    NearestNeighbour { t: f64 },
    Exponential { t: f64, decay: f64, range: Option<f64> },
    Power { t: f64, power: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    pub strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxConfig {
    pub phi1: f64,
    pub phi2: f64,
    #[serde(default = "one")]
    pub range: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneBodyConfig {
    pub profile: ProfileConfig,
    pub mu: f64,
    pub staggered: f64,
    pub dimerization: f64,
    pub disorder: Option<DisorderConfig>,
    pub flux: Option<FluxConfig>,
}

impl Default for OneBodyConfig {
    fn default() -> Self {
        OneBodyConfig {
            profile: ProfileConfig::NearestNeighbour { t: 1.0 },
            mu: 0.0,
            staggered: 0.5,
            dimerization: 0.0,
            disorder: None,
            flux: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `sum_{x,x'} v(x,x') n_x n_x'` with `v = 1/2` on nearest-neighbour pairs.
    NearestNeighbour,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub kernel: KernelKind,
    pub g_re: f64,
    pub g_im: f64,
    /// Largest total grade `nbar + m` the interaction may carry.
    pub grade_cap: usize,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig {
            kernel: KernelKind::NearestNeighbour,
            g_re: 0.02,
            g_im: 0.0,
            grade_cap: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub beta: Vec<f64>,
    /// Overrides `rho = gap / 2`.
    pub rho: Option<f64>,
    /// Number of points of the uniform grid on `[0, beta)`.
    pub tau_points: usize,
    /// Real couplings for `gap-scan`.
    pub g_grid: Vec<f64>,
    pub certify: bool,
    pub n_slices: Vec<usize>,
    pub tolerance: f64,
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            beta: vec![10.0],
            rho: None,
            tau_points: 16,
            g_grid: vec![0.0, 0.02, 0.05],
            certify: true,
            n_slices: vec![4, 8, 16],
            tolerance: 1e-8,
            output_dir: None,
        }
    }
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| key_path(text, s.start)).unwrap_or_else(|| "<root>".into());
            err(&path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.l.pow(self.lattice.dims as u32) * self.lattice.spin
    }

    pub fn coupling(&self) -> Complex64 {
        Complex64::new(self.interaction.g_re, self.interaction.g_im)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let lat = &self.lattice;
        if !(1..=3).contains(&lat.dims) {
            return Err(err("lattice.dims", format!("must be 1, 2 or 3 (got {})", lat.dims)));
        }
        if !(2..=64).contains(&lat.l) {
            return Err(err("lattice.L", format!("must lie in 2..=64 (got {})", lat.l)));
        }
        if !(1..=2).contains(&lat.spin) {
            return Err(err("lattice.spin", format!("must be 1 or 2 (got {})", lat.spin)));
        }
        if self.n_sites() > 4096 {
            return Err(err("lattice.L", format!("{} sites exceed the one-body limit of 4096", self.n_sites())));
        }

        let ob = &self.onebody;
        match ob.profile {
            ProfileConfig::NearestNeighbour { t } => finite("onebody.profile.t", t)?,
            ProfileConfig::Exponential { t, decay, range } => {
                finite("onebody.profile.t", t)?;
                positive("onebody.profile.decay", decay)?;
                if let Some(r) = range {
                    positive("onebody.profile.range", r)?;
                }
            }
            ProfileConfig::Power { t, power } => {
                finite("onebody.profile.t", t)?;
                positive("onebody.profile.power", power)?;
            }
        }
        finite("onebody.mu", ob.mu)?;
        finite("onebody.staggered", ob.staggered)?;
        if !(ob.dimerization.abs() <= 1.0) {
            return Err(err("onebody.dimerization", "must lie in [-1, 1]"));
        }
        if let Some(d) = ob.disorder {
            if !(d.strength >= 0.0 && d.strength.is_finite()) {
                return Err(err("onebody.disorder.strength", "must be finite and >= 0"));
            }
        }
        if let Some(f) = ob.flux {
            finite("onebody.flux.phi1", f.phi1)?;
            finite("onebody.flux.phi2", f.phi2)?;
            if lat.dims != 2 {
                return Err(err("onebody.flux", "flux needs a two-dimensional torus (lattice.dims = 2)"));
            }
            if f.range == 0 || 2 * f.range >= lat.l {
                return Err(err("onebody.flux.range", format!("need 1 <= range < L/2 (L = {})", lat.l)));
            }
            if !matches!(ob.profile, ProfileConfig::NearestNeighbour { .. }) && f.range < lat.l / 2 {
                return Err(err("onebody.flux", "flux needs a finite-range hopping profile"));
            }
        }

        let int = &self.interaction;
        finite("interaction.g_re", int.g_re)?;
        finite("interaction.g_im", int.g_im)?;
        if int.kernel == KernelKind::NearestNeighbour && int.grade_cap < 4 {
            return Err(err(
                "interaction.grade_cap",
                format!("the density-density kernel has grade 4 (cap {})", int.grade_cap),
            ));
        }

        let run = &self.run;
        if run.beta.is_empty() {
            return Err(err("run.beta", "needs at least one value"));
        }
        for (i, &b) in run.beta.iter().enumerate() {
            if !(b > 0.0 && b <= 1e4) {
                return Err(err(&format!("run.beta[{i}]"), format!("must lie in (0, 1e4] (got {b})")));
            }
        }
        if let Some(r) = run.rho {
            positive("run.rho", r)?;
        }
        if !(2..=4096).contains(&run.tau_points) {
            return Err(err("run.tau_points", "must lie in 2..=4096"));
        }
        for (i, &g) in run.g_grid.iter().enumerate() {
            finite(&format!("run.g_grid[{i}]"), g)?;
        }
        for (i, &n) in run.n_slices.iter().enumerate() {
            if !(3..=64).contains(&n) {
                return Err(err(&format!("run.n_slices[{i}]"), format!("must lie in 3..=64 (got {n})")));
            }
        }
        if !(run.tolerance > 0.0 && run.tolerance < 1.0) {
            return Err(err("run.tolerance", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Fails unless the Fock space fits the dense many-body solver.
    pub fn require_fock(&self) -> Result<(), ConfigError> {
        if self.n_sites() > DENSE_LIMIT {
            return Err(err(
                "lattice.L",
                format!("{} sites exceed the many-body limit of {DENSE_LIMIT}", self.n_sites()),
            ));
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<Arc<SiteGraph>, ConfigError> {
        let ext = vec![self.lattice.l; self.lattice.dims];
        build_torus(&ext, self.lattice.spin)
            .map(Arc::new)
            .map_err(|e| err("lattice", e.to_string()))
    }

    pub fn one_body(&self) -> Result<OneBodyOperator, ConfigError> {
        let ob = &self.onebody;
        let profile = match ob.profile {
            ProfileConfig::NearestNeighbour { t } => HoppingProfile::nearest_neighbour(t),
            ProfileConfig::Exponential { t, decay, range } => HoppingProfile::Exponential { t, decay, range },
            ProfileConfig::Power { t, power } => HoppingProfile::Power { t, power },
        };
        let mut spec = HoppingSpec::new(profile);
        spec.mu = ob.mu;
        spec.staggered = ob.staggered;
        spec.dimerization = ob.dimerization;
        spec.disorder = ob.disorder.map(|d| Disorder {
            strength: d.strength,
            seed: d.seed,
        });
        let h = build_hopping(self.graph()?, &spec).map_err(|e| err("onebody", e.to_string()))?;
        match ob.flux {
            Some(f) => apply_flux(
                &h,
                &FluxSpec {
                    phi1: f.phi1,
                    phi2: f.phi2,
                    range: f.range,
                },
            )
            .map_err(|e| err("onebody.flux", e.to_string())),
            None => Ok(h),
        }
    }

    pub fn interaction_unit(&self, graph: Arc<SiteGraph>) -> Result<NormalOrderedOperator, ConfigError> {
        match self.interaction.kernel {
            KernelKind::NearestNeighbour => {
                let v = nearest_neighbour_kernel(&graph);
                density_density(graph, &v, Complex64::new(1.0, 0.0)).map_err(|e| err("interaction.kernel", e.to_string()))
            }
            KernelKind::None => Ok(NormalOrderedOperator::zero(graph)),
        }
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        self.require_fock()?;
        let h = self.one_body()?;
        let v = self.interaction_unit(h.graph().clone())?;
        Model::new(h, v).map_err(|e| err("interaction", e.to_string()))
    }
}

fn finite(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(err(path, "must be finite"))
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(path, format!("must be positive and finite (got {v})")))
    }
}

/// Dotted key path of the entry whose value starts at byte `pos`: the enclosing
/// `[table]` header plus the key on that line.
fn key_path(text: &str, pos: usize) -> String {
    let before = &text[..pos.min(text.len())];
    let table = before
        .lines()
        .filter_map(|l| {
            let t = l.trim();
            t.strip_prefix('[').and_then(|r| r.strip_suffix(']')).map(str::to_string)
        })
        .last();
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().map(str::trim).filter(|k| !k.is_empty() && !k.starts_with('['));
    match (table, key) {
        (Some(t), Some(k)) => format!("{t}.{k}"),
        (Some(t), None) => t,
        (None, Some(k)) => k.to_string(),
        (None, None) => "<root>".into(),
    }
}
