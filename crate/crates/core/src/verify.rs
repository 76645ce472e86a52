//! Named verification suites, one per acceptance criterion. Each suite returns a list of
//! scalar checks against explicit limits; the CLI and the acceptance test both run them.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlations::{decay_fit, theorem2_verify_with_alpha, Propagator};
use crate::covariance::{alpha_saturation, det_bound_sample, random_det_input, CovarianceKernel};
use crate::error::{invalid, Result};
use crate::fock::{self, FockBasis};
use crate::grassmann::{truncated_from_generating, z_trotter_grassmann, z_trotter_trace, TrotterSpec};
use crate::lattice::{build_torus, ring, SiteGraph};
use crate::linalg::{self, c, CMatrix, ZERO};
use crate::model::{chain_model, pair_model, Model};
use crate::normalorder::{self, density_density, nearest_neighbour_kernel};
use crate::onebody::{
    apply_flux, build_hopping, ct_alpha_bound, derivative_identity_residual, gauge_transform, one_body_gap,
    residual_phase_max, seam_gauge, CtBoundParams, FluxSpec, HoppingProfile, HoppingSpec, OneBodyOperator,
};
use crate::par::{self, Execution};
use crate::spectra::{certify_by_continuation, eigensystem, gap_and_simplicity, ContinuationOptions};
use crate::treeexp::{audit, series_bound, series_sum};

/// How a check's value is compared with its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            relation: Relation::AtMost,
            passed: value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            relation: Relation::AtLeast,
            passed: value >= limit,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Result of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: usize,
    pub suite: String,
    pub title: String,
    pub checks: Vec<Check>,
    /// Set when the suite aborted before finishing its checks.
    pub error: Option<String>,
    /// Wall time; not serialized so reports stay byte-identical across runs.
    #[serde(skip)]
    pub seconds: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One summary line: status, id, title, and the first failing check or the check count.
    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let detail = if let Some(e) = &self.error {
            format!("error: {e}")
        } else if let Some(f) = self.failures().next() {
            let rel = match f.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            format!(
                "{} of {} checks failed; first: {} = {:.6e} (need {rel} {:.3e})",
                self.failures().count(),
                self.checks.len(),
                f.name,
                f.value,
                f.limit
            )
        } else {
            format!("{} checks", self.checks.len())
        };
        format!(
            "{status} [{:>2}] {:<10} {} ({:.1} s): {detail}",
            self.id, self.suite, self.title, self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub exec: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 20240917,
            exec: Execution::default(),
        }
    }
}

type SuiteFn = fn(&VerifyOptions) -> Result<Vec<Check>>;

pub struct Criterion {
    pub id: usize,
    pub suite: &'static str,
    pub title: &'static str,
    run: SuiteFn,
}

pub const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, suite: "car", title: "CAR exactness", run: car },
    Criterion { id: 2, suite: "free", title: "free-fermion consistency", run: free_fermion },
    Criterion { id: 3, suite: "covariance", title: "covariance vs two-point oracle", run: covariance_oracle },
    Criterion { id: 4, suite: "detbound", title: "determinant bound", run: det_bound },
    Criterion { id: 5, suite: "gap", title: "gap persistence", run: gap_persistence },
    Criterion { id: 6, suite: "decay", title: "correlation decay inequality", run: decay },
    Criterion { id: 7, suite: "deficit", title: "gap deficit scaling", run: deficit },
    Criterion { id: 8, suite: "trotter", title: "Grassmann-Trotter identity", run: trotter },
    Criterion { id: 9, suite: "cayley", title: "tree combinatorics", run: cayley },
    Criterion { id: 10, suite: "ct", title: "Combes-Thomas chain", run: combes_thomas },
    Criterion { id: 11, suite: "gauge", title: "gauge and flux", run: gauge },
];

/// Suite names accepted by [`suite_ids`], `all` included.
pub fn suite_names() -> Vec<&'static str> {
    CRITERIA.iter().map(|c| c.suite).chain(["all"]).collect()
}

pub fn suite_ids(name: &str) -> Option<Vec<usize>> {
    if name == "all" {
        return Some(CRITERIA.iter().map(|c| c.id).collect());
    }
    CRITERIA.iter().find(|c| c.suite == name).map(|c| vec![c.id])
}

/// Runs criterion `id` (1-based); errors become a failed outcome.
pub fn run_criterion(id: usize, opts: &VerifyOptions) -> Result<Outcome> {
    let crit = CRITERIA
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| invalid("criterion", format!("no criterion {id}")))?;
    let start = Instant::now();
    let (checks, error) = match (crit.run)(opts) {
        Ok(checks) => (checks, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    Ok(Outcome {
        id,
        suite: crit.suite.to_string(),
        title: crit.title.to_string(),
        checks,
        error,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<Vec<Outcome>> {
    let ids = suite_ids(name).ok_or_else(|| {
        invalid("suite", format!("unknown suite `{name}` (expected one of {})", suite_names().join(", ")))
    })?;
    ids.into_iter().map(|id| run_criterion(id, opts)).collect()
}

/// Gapped chain shared by several suites.
pub fn gapped_chain(l: usize) -> Result<Model> {
    chain_model(l, 1.0, 0.8, 0.3)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

fn car(_: &VerifyOptions) -> Result<Vec<Check>> {
    let basis = FockBasis::new(6)?;
    let (plus, minus) = fock::car_ops(&basis);
    let id = CMatrix::identity(basis.dim(), basis.dim());
    let zero = CMatrix::zeros(basis.dim(), basis.dim());
    let (mut mixed, mut same) = (0.0f64, 0.0f64);
    let mut integral = true;
    for x in 0..6 {
        integral &= plus[x].iter().chain(minus[x].iter()).all(|z| z.im == 0.0 && z.re.fract() == 0.0);
        for y in 0..6 {
            let target = if x == y { &id } else { &zero };
            mixed = mixed.max(linalg::max_abs_diff(&anticommutator(&minus[x], &plus[y]), target));
            same = same
                .max(linalg::max_abs(&anticommutator(&plus[x], &plus[y])))
                .max(linalg::max_abs(&anticommutator(&minus[x], &minus[y])));
        }
    }
    Ok(vec![
        Check::flag("integer entries", integral),
        Check::at_most("{c-_x, c+_y} - delta", mixed, 0.0),
        Check::at_most("{c+_x, c+_y}, {c-_x, c-_y}", same, 0.0),
    ])
}

fn random_hermitian_kernel(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let mut k = CMatrix::zeros(n, n);
    for x in 0..n {
        k[(x, x)] = c(rng.gen_range(-1.0..1.0), 0.0);
        for y in x + 1..n {
            let z = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            k[(x, y)] = z;
            k[(y, x)] = z.conj();
        }
    }
    k
}

fn free_fermion(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut rng = rng_for(opts.seed, 2);
    let kernels: Vec<CMatrix> = (1..=8).map(|n| random_hermitian_kernel(n, &mut rng)).collect();
    let rows = par::map_slice(opts.exec, &kernels, |k| -> Result<(f64, f64)> {
        let n = k.nrows();
        let graph = Arc::new(SiteGraph::complete(n)?);
        let h = OneBodyOperator::new(graph, k.clone(), true)?;
        let basis = FockBasis::new(n)?;
        let hf = fock::second_quantize_quadratic(&h, &basis)?;
        let one = linalg::hermitian_eigenvalues(k);
        let many = linalg::hermitian_eigenvalues(&hf);
        let subset: Vec<f64> = (0..1u64 << n)
            .map(|s| (0..n).filter(|&x| s >> x & 1 == 1).map(|x| one[x]).sum())
            .collect();
        let spectrum = linalg::spectra_distance(&many, &subset);
        let mut trace = 0.0f64;
        for beta in [1.0, 10.0] {
            let tr = linalg::trace(&(&hf * c(-beta, 0.0)).exp()).re;
            let prod: f64 = one.iter().map(|e| 1.0 + (-beta * e).exp()).product();
            trace = trace.max((tr - prod).abs() / prod);
        }
        Ok((trace, spectrum))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    for (i, (trace, spectrum)) in rows.into_iter().enumerate() {
        checks.push(Check::at_most(format!("|L|={} trace rel. error", i + 1), trace, 1e-10));
        checks.push(Check::at_most(format!("|L|={} subset-sum spectrum", i + 1), spectrum, 1e-9));
    }
    Ok(checks)
}

fn covariance_oracle(_: &VerifyOptions) -> Result<Vec<Check>> {
    let model = pair_model(0.7, 0.4, -0.3, 1.0)?;
    let beta = 2.0;
    let kernel = CovarianceKernel::new(model.h0(), beta)?;
    let prop = Propagator::from_model(&model, ZERO)?;
    let basis = model.basis();
    let mut worst = 0.0f64;
    for x in 0..2 {
        for y in 0..2 {
            let pair = prop.pair(&fock::creation(basis, x), &fock::annihilation(basis, y), beta)?;
            for k in 0..32 {
                let tau = k as f64 * beta / 32.0;
                let diff = (pair.truncated(tau)? - kernel.kernel(0.0, y, tau, x)).norm();
                worst = worst.max(diff);
            }
        }
    }
    Ok(vec![Check::at_most("max |<c+_x(tau); c-_y> - C|", worst, 1e-10)])
}

fn det_bound(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let model = gapped_chain(6)?;
    let cov = CovarianceKernel::new(model.h0(), 4.0)?;
    let samples = par::map_range(opts.exec, 10_000, |i| {
        let mut rng = rng_for(opts.seed, 4_000_000 + i as u64);
        let size = 2 + i % 5;
        let vertices = rng.gen_range(1..=size + 2);
        det_bound_sample(&cov, &random_det_input(&cov, size, size, vertices, &mut rng))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let violations = samples.iter().filter(|s| !s.pass).count();
    let worst = samples.iter().map(|s| s.abs_det / s.bound).fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("violations of |det| <= 2^(nubar+nu)", violations as f64, 0.0),
        Check::at_most("max |det| / bound", worst, 1.0),
    ])
}

/// `alpha_rho` at `rho = gap / 2` and `beta = beta_gaps / gap`, and the coupling threshold
/// `1 / (alpha ||V_unit||_3)`.
struct Threshold {
    rho: f64,
    beta: f64,
    alpha: f64,
    g_max: f64,
}

fn threshold(model: &Model, beta_gaps: f64, exec: Execution) -> Result<Threshold> {
    let gap = model.one_body_gap()?;
    let rho = gap / 2.0;
    let beta = beta_gaps / gap;
    let alpha = CovarianceKernel::new(model.h0(), beta)?.alpha_rho(rho, exec)?.alpha;
    let g_max = 1.0 / (alpha * model.v_unit().norm_local(3.0));
    Ok(Threshold {
        rho,
        beta,
        alpha,
        g_max,
    })
}

fn gap_persistence(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for l in [4, 6, 8] {
        let model = gapped_chain(l)?;
        let th = threshold(&model, 40.0, opts.exec)?;
        let cont = ContinuationOptions {
            rho: Some(th.rho),
            ..ContinuationOptions::default()
        };
        let size = 0.9 * th.g_max;
        for (label, g) in [("real", c(size, 0.0)), ("phase pi/3", Complex64::from_polar(size, PI / 3.0))] {
            let rep = certify_by_continuation(&model, g, &cont, opts.exec)?;
            let tag = format!("L={l} {label} g={size:.3e}");
            checks.push(Check::flag(format!("{tag} certified"), rep.certified));
            checks.push(Check::flag(format!("{tag} E0 simple"), rep.simple));
            checks.push(Check::at_least(format!("{tag} Re-gap - rho"), rep.gap - th.rho, -1e-8));
        }
        checks.push(Check::at_most(
            format!("L={l} alpha ||gV||_3"),
            th.alpha * model.v_unit().norm_local(3.0) * size,
            1.0 - 1e-12,
        ));
    }
    Ok(checks)
}

fn decay(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let model = gapped_chain(6)?;
    let th = threshold(&model, 10.0, opts.exec)?;
    let g = c(0.5 * th.g_max, 0.0);
    let cont = ContinuationOptions {
        rho: Some(th.rho),
        ..ContinuationOptions::default()
    };
    let rep = certify_by_continuation(&model, g, &cont, opts.exec)?;
    let mut checks = vec![Check::flag("L=6 model certified", rep.certified)];
    let graph = model.graph().clone();
    let pairs = [
        ("n0/n0", normalorder::density(graph.clone(), 0)?, normalorder::density(graph.clone(), 0)?),
        ("c+0/c-3", normalorder::creation(graph.clone(), 0)?, normalorder::annihilation(graph.clone(), 3)?),
    ];
    let taus: Vec<f64> = (0..16).map(|k| k as f64 * th.beta / 16.0).collect();
    let prop = Propagator::from_model(&model, g)?;
    let measured = gap_and_simplicity(prop.eigensystem())?.gap;
    let fit_beta = 80.0 / measured;
    let fit_taus: Vec<f64> = (0..=64).map(|k| k as f64 * fit_beta / 128.0).collect();
    for (label, a, b) in &pairs {
        let rep = theorem2_verify_with_alpha(&model, g, a, b, &taus, th.beta, th.rho, th.alpha, opts.exec)?;
        checks.push(Check::at_most(format!("{label} max lhs/rhs over 16 tau"), rep.max_ratio, 1.0));
        let af = fock::second_quantize(a, model.basis())?;
        let bf = fock::second_quantize(b, model.basis())?;
        let samples = prop.pair(&af, &bf, fit_beta)?.sweep(&fit_taus, opts.exec)?;
        let fit = decay_fit(&samples)?;
        checks.push(Check::at_least(format!("{label} decay rate"), fit.rate, measured - 0.05));
    }
    Ok(checks)
}

fn many_body_gap(model: &Model, g: Complex64) -> Result<f64> {
    Ok(gap_and_simplicity(&eigensystem(&model.hamiltonian(g), true)?)?.gap)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn deficit(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let model = gapped_chain(6)?;
    let gs = [0.005, 0.01, 0.02, 0.04];
    let grid: Vec<f64> = std::iter::once(0.0).chain(gs).collect();
    let gaps = par::map_slice(opts.exec, &grid, |&g| many_body_gap(&model, c(g, 0.0)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let deficits: Vec<f64> = gaps[1..].iter().map(|g| (gaps[0] - g).abs()).collect();
    let mut checks: Vec<Check> = deficits
        .iter()
        .zip(gs)
        .map(|(d, g)| Check::at_least(format!("deficit at g={g} is nonzero"), *d, 1e-14))
        .collect();
    checks.push(Check::at_least("log-log slope", log_log_slope(&gs, &deficits), 1.0));
    Ok(checks)
}

fn trotter(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let model = pair_model(0.7, 0.4, -0.1, 1.0)?;
    let g = c(0.3, 0.0);
    let (beta, t) = (1.0, 0.4);
    let graph = model.graph().clone();
    let a = normalorder::density(graph.clone(), 0)?;
    let b = normalorder::density(graph, 1)?;
    let mut checks = Vec::new();
    for n in [4, 8, 16] {
        let mut worst = 0.0f64;
        for (r, s) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            let spec = TrotterSpec::new(n, beta, t, c(r, 0.0), c(s, 0.0))?;
            let tr = z_trotter_trace(&model, g, &a, &b, &spec)?;
            let gr = z_trotter_grassmann(&model, g, &a, &b, &spec, opts.exec)?;
            worst = worst.max((tr - gr).norm() / tr.norm().max(1.0));
        }
        checks.push(Check::at_most(format!("N={n} |Z_grassmann - Z_trace|"), worst, 1e-8));
    }
    let prop = Propagator::from_model(&model, g)?;
    let af = fock::second_quantize(&a, model.basis())?;
    let bf = fock::second_quantize(&b, model.basis())?;
    let ns = [8, 16, 32, 64];
    let errors = ns
        .iter()
        .map(|&n| -> Result<f64> {
            let snapped = TrotterSpec::new(n, beta, t, ZERO, ZERO)?.snapped_t();
            let approx = truncated_from_generating(&model, g, &a, &b, t, beta, n)?;
            Ok((approx - prop.truncated(&af, &bf, snapped, beta)?).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    for (w, n) in errors.windows(2).zip(ns) {
        let ratio = w[0] / w[1];
        checks.push(Check::at_least(format!("error ratio N={n}/{}", 2 * n), ratio, 1.5));
        checks.push(Check::at_most(format!("error ratio N={n}/{}", 2 * n), ratio, 2.5));
    }
    Ok(checks)
}

fn cayley(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let au = audit(7, 6, opts.seed)?;
    let count_failures = |v: &[(usize, u64, u64)]| v.iter().filter(|(_, a, b)| a != b).count() as f64;
    let mut checks = vec![
        Check::at_most("tree counts r<=7 off r^(r-2)", count_failures(&au.tree_counts), 0.0),
        Check::at_most(
            format!("Cayley degree-sequence failures ({} sequences)", au.cayley_sequences),
            au.cayley_failures as f64,
            0.0,
        ),
        Check::at_most("directed counts r<=6 off 2^(r-1) r^(r-2)", count_failures(&au.directed_counts), 0.0),
        Check::at_most("binomial resummation failures", au.binomial_failures as f64, 0.0),
        Check::at_most("max prod d_q / 2^(p+1)", au.am_gm_max_ratio, 1.0),
        Check::at_most("path decomposition failures", au.path_decomposition_failures as f64, 0.0),
        Check::at_most("path triangle lhs/rhs", au.triangle_max_ratio, 1.0 + 1e-12),
    ];
    for (alpha, nv) in [(0.5, 0.0), (0.3, 0.5), (0.2, 1.0), (1.0, 0.2)] {
        let sum = series_sum(alpha, nv, 1.0, 1.0, 0)?;
        let partial: f64 = (0..400).map(|p| series_bound(p, alpha, nv, 1.0, 1.0)).sum();
        checks.push(Check::at_most(
            format!("series_sum vs partial sums (alpha={alpha}, |V|={nv})"),
            (sum - partial).abs() / partial,
            1e-14,
        ));
        let prefactor = 2.0 * alpha / (1.0 - alpha * nv);
        checks.push(Check::at_most(
            format!("series_sum vs 2 alpha/(1 - alpha |V|) (alpha={alpha}, |V|={nv})"),
            (sum - prefactor).abs() / prefactor,
            1e-14,
        ));
    }
    Ok(checks)
}

fn combes_thomas(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let z = c(0.1, 0.2);
    for l in [6, 8] {
        let model = gapped_chain(l)?;
        for n in [1, 2] {
            for y in [2, l / 2] {
                let r = derivative_identity_residual(model.h0(), 0, y, z, n, 1e-3)?;
                checks.push(Check::at_most(format!("L={l} n={n} y={y} derivative residual"), r, 1e-5));
            }
        }
    }
    let h8 = gapped_chain(8)?.h0().clone();
    let gap = one_body_gap(h8.spectrum()?);
    let rho = gap / 2.0;
    let beta = 20.0 / gap;
    let sat = alpha_saturation(&h8, rho, beta, 0.01, opts.exec)?;
    checks.push(Check::at_most("alpha(2 beta) vs alpha(beta) rel. change", sat.relative_change, 0.01));
    let params = |h: &OneBodyOperator, c_fit: f64| CtBoundParams {
        rho,
        eps: gap / 4.0,
        nu: 4.0,
        k_nu: h.power_envelope(4.0),
        n: 1,
        c_fit,
    };
    let c_fit = sat.alpha_beta / ct_alpha_bound(&h8, &params(&h8, 1.0))?;
    for l in [16, 32] {
        let h = gapped_chain_h0(l)?;
        let alpha = CovarianceKernel::new(&h, beta)?.alpha_rho(rho, opts.exec)?.alpha;
        let bound = ct_alpha_bound(&h, &params(&h, c_fit))?;
        checks.push(Check::at_least(format!("L={l} ct bound / alpha"), bound / alpha, 1.0));
    }
    Ok(checks)
}

/// The one-body part of [`gapped_chain`], for sizes beyond the Fock guard.
pub fn gapped_chain_h0(l: usize) -> Result<OneBodyOperator> {
    let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
    spec.staggered = 0.8;
    spec.dimerization = 0.3;
    build_hopping(Arc::new(ring(l)?), &spec)
}

fn torus_h0(l: usize, staggered: f64) -> Result<OneBodyOperator> {
    let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
    spec.staggered = staggered;
    build_hopping(Arc::new(build_torus(&[l, l], 1)?), &spec)
}

fn gauge(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let flux = FluxSpec {
        phi1: 0.7,
        phi2: -1.3,
        range: 1,
    };
    let ls = [8usize, 16, 32];
    let rows = par::map_slice(opts.exec, &ls, |&l| -> Result<(f64, f64)> {
        let h = apply_flux(&torus_h0(l, 0.5)?, &flux)?;
        let nu = seam_gauge(h.graph(), &flux)?;
        let moved = gauge_transform(&h, &nu)?;
        let dist = linalg::spectra_distance(
            &linalg::hermitian_eigenvalues(h.kernel()),
            &linalg::hermitian_eigenvalues(moved.kernel()),
        );
        Ok((dist, residual_phase_max(&h, &flux, &nu)? * l as f64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let c_fit = rows[0].1;
    for (&l, (dist, scaled)) in ls.iter().zip(&rows) {
        checks.push(Check::at_most(format!("L={l} one-body spectra distance"), *dist, 1e-10));
        checks.push(Check::at_most(format!("L={l} |phi'|_inf L (fitted at L=8)"), *scaled, c_fit * (1.0 + 1e-9)));
    }

    // Many-body part on a 3x3 torus, the largest square torus within the dense Fock guard.
    let h = torus_h0(3, 1.0)?;
    let v = density_density(h.graph().clone(), &nearest_neighbour_kernel(h.graph()), c(1.0, 0.0))?;
    let g = c(0.05, 0.0);
    let phis: Vec<(f64, f64)> = (0..16).map(|k| ((k / 4) as f64 * PI / 2.0, (k % 4) as f64 * PI / 2.0)).collect();
    let rows = par::map_slice(opts.exec, &phis, |&(phi1, phi2)| -> Result<(f64, f64)> {
        let flux = FluxSpec { phi1, phi2, range: 1 };
        let hf = apply_flux(&h, &flux)?;
        let nu = seam_gauge(hf.graph(), &flux)?;
        let direct = Model::new(hf.clone(), v.clone())?;
        let moved = Model::new(gauge_transform(&hf, &nu)?, v.clone())?;
        let e1 = linalg::hermitian_eigenvalues(&direct.hamiltonian(g));
        let e2 = linalg::hermitian_eigenvalues(&moved.hamiltonian(g));
        let e0 = e1[0];
        let gap = e1.iter().find(|&&e| e > e0 + 1e-9).map_or(0.0, |e| e - e0);
        Ok((linalg::spectra_distance(&e1, &e2), gap))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let covariance = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.1), hi.max(r.1)));
    checks.push(Check::at_most("3x3 many-body spectra, flux vs gauge-transformed", covariance, 1e-10));
    checks.push(Check::at_least("3x3 min many-body gap over 4x4 flux grid", lo, 1e-3));
    checks.push(Check::at_most("3x3 many-body gap spread over 4x4 flux grid", hi - lo, 1e-8));
    Ok(checks)
}
