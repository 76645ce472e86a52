//! One-particle Hamiltonians on a [`SiteGraph`].
//!
//! Besides construction and diagonalisation this module carries the decay machinery
//! for resolvent kernels: twisted (distance-conjugated) operators, the derivative
//! representation of off-diagonal resolvent entries, the Schur test and the
//! resulting bound on the covariance decay constant.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{k_zeta, SiteGraph};
use crate::linalg::{self, c, CMatrix, HermitianEigen, I, ZERO};

/// Tolerance used for the hermiticity flag.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A one-body kernel `h(x, x')` together with its graph.
#[derive(Debug, Clone)]
pub struct OneBodyOperator {
    graph: Arc<SiteGraph>,
    kernel: CMatrix,
    hermitian: bool,
    spectrum: OnceLock<OneBodySpectrum>,
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian kernel.
#[derive(Debug, Clone)]
pub struct OneBodySpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl OneBodySpectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `v_k(x)`.
    #[inline]
    pub fn vector(&self, k: usize, x: usize) -> Complex64 {
        self.eigenvectors[(x, k)]
    }
}

impl OneBodyOperator {
    pub fn new(graph: Arc<SiteGraph>, kernel: CMatrix, require_hermitian: bool) -> Result<Self> {
        let n = graph.n_sites();
        if kernel.nrows() != n || kernel.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: kernel.nrows(),
            });
        }
        if kernel.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("kernel", "non-finite entry"));
        }
        let defect = linalg::hermiticity_defect(&kernel);
        let hermitian = defect <= HERMITIAN_TOL;
        if require_hermitian && !hermitian {
            return Err(Error::NotHermitian { deviation: defect });
        }
        Ok(OneBodyOperator {
            graph,
            kernel,
            hermitian,
            spectrum: OnceLock::new(),
        })
    }

    pub fn graph(&self) -> &Arc<SiteGraph> {
        &self.graph
    }

    pub fn kernel(&self) -> &CMatrix {
        &self.kernel
    }

    pub fn n_sites(&self) -> usize {
        self.graph.n_sites()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Spectral decomposition, computed once and cached.
    pub fn spectrum(&self) -> Result<&OneBodySpectrum> {
        if !self.hermitian {
            return Err(Error::NotHermitian {
                deviation: linalg::hermiticity_defect(&self.kernel),
            });
        }
        Ok(self.spectrum.get_or_init(|| {
            let HermitianEigen { values, vectors } = linalg::hermitian_eigen(&self.kernel);
            OneBodySpectrum {
                eigenvalues: values,
                eigenvectors: vectors,
            }
        }))
    }

    pub fn operator_norm(&self) -> f64 {
        match self.spectrum() {
            Ok(s) => s
                .eigenvalues
                .iter()
                .map(|e| e.abs())
                .fold(0.0, f64::max),
            Err(_) => linalg::operator_norm(&self.kernel),
        }
    }

    fn with_kernel(&self, kernel: CMatrix) -> Self {
        let hermitian = linalg::hermiticity_defect(&kernel) <= HERMITIAN_TOL.max(
            1e-13 * linalg::max_abs(&kernel),
        );
        OneBodyOperator {
            graph: self.graph.clone(),
            kernel,
            hermitian,
            spectrum: OnceLock::new(),
        }
    }

    /// `K_nu = max |h(x,x')| (1 + d(x,x'))^nu`, the smallest constant of a power envelope.
    pub fn power_envelope(&self, nu: f64) -> f64 {
        let n = self.n_sites();
        let mut k = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                let d = self.graph.distance(x, y);
                k = k.max(self.kernel[(x, y)].norm() * (1.0 + d).powf(nu));
            }
        }
        k
    }

    /// Smallest `C` with `|h(x,x')| <= C e^{-rate d(x,x')}`.
    pub fn exponential_envelope(&self, rate: f64) -> f64 {
        let n = self.n_sites();
        let mut k = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                let d = self.graph.distance(x, y);
                k = k.max(self.kernel[(x, y)].norm() * (rate * d).exp());
            }
        }
        k
    }

    /// Largest distance carrying a nonzero amplitude.
    pub fn range(&self) -> f64 {
        let n = self.n_sites();
        let mut r = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                if self.kernel[(x, y)].norm() > 0.0 {
                    r = r.max(self.graph.distance(x, y));
                }
            }
        }
        r
    }
}

/// Distance dependence of the hopping amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoppingProfile {
    /// `amplitudes[d - 1]` is the hopping at distance `d`; beyond the table it is zero.
    Table { amplitudes: Vec<(f64, f64)> },
    /// `t e^{-decay (d - 1)}` up to distance `range` (unbounded when `None`).
    Exponential {
        t: f64,
        decay: f64,
        range: Option<f64>,
    },
    /// `t (1 + d)^{-power}`.
    Power { t: f64, power: f64 },
}

impl HoppingProfile {
    pub fn nearest_neighbour(t: f64) -> Self {
        HoppingProfile::Table {
            amplitudes: vec![(t, 0.0)],
        }
    }

    fn amplitude(&self, d: f64) -> Complex64 {
        if d <= 0.0 {
            return ZERO;
        }
        match self {
            HoppingProfile::Table { amplitudes } => {
                let idx = d.round() as usize;
                if (d - idx as f64).abs() > 1e-12 || idx == 0 || idx > amplitudes.len() {
                    ZERO
                } else {
                    let (re, im) = amplitudes[idx - 1];
                    c(re, im)
                }
            }
            HoppingProfile::Exponential { t, decay, range } => match range {
                Some(r) if d > *r => ZERO,
                _ => c(t * (-decay * (d - 1.0)).exp(), 0.0),
            },
            HoppingProfile::Power { t, power } => c(t * (1.0 + d).powf(-power), 0.0),
        }
    }

    fn is_real(&self) -> bool {
        match self {
            HoppingProfile::Table { amplitudes } => amplitudes.iter().all(|a| a.1 == 0.0),
            _ => true,
        }
    }
}

/// Independent uniform on-site disorder in `[-strength, strength]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disorder {
    pub strength: f64,
    pub seed: u64,
}

/// Parameters of a one-body model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoppingSpec {
    pub profile: HoppingProfile,
    /// Sublattice potential `+staggered` on even, `-staggered` on odd cells.
    #[serde(default)]
    pub staggered: f64,
    /// Nearest-neighbour bond modulation `t (1 + dimerization (-1)^i)` along axis 0.
    #[serde(default)]
    pub dimerization: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub disorder: Option<Disorder>,
}

impl HoppingSpec {
    pub fn new(profile: HoppingProfile) -> Self {
        HoppingSpec {
            profile,
            staggered: 0.0,
            dimerization: 0.0,
            mu: 0.0,
            disorder: None,
        }
    }
}

/// Builds `h(x,x') = t(d(x,x'))` (spin diagonal) plus on-site terms and `-mu` on the diagonal.
///
/// Dimerisation and the staggered potential need torus labels; on a bare metric graph
/// they are rejected.
pub fn build_hopping(graph: Arc<SiteGraph>, spec: &HoppingSpec) -> Result<OneBodyOperator> {
    let n = graph.n_sites();
    let needs_labels = spec.staggered != 0.0 || spec.dimerization != 0.0;
    let labels = graph.labels();
    if needs_labels && labels.is_none() {
        return Err(invalid(
            "onebody",
            "staggered potential and dimerization need a torus graph",
        ));
    }
    if spec.dimerization.abs() > 1.0 {
        return Err(invalid("dimerization", "must lie in [-1, 1]"));
    }
    let extents = graph.torus_extents().map(|e| e.to_vec());

    let mut kernel = CMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if let Some(l) = labels {
                if l[x].spin != l[y].spin {
                    continue;
                }
            }
            let d = graph.distance(x, y);
            let mut amp = spec.profile.amplitude(d);
            if spec.dimerization != 0.0 && (d - 1.0).abs() < 1e-12 {
                let (lx, ly) = (&labels.unwrap()[x], &labels.unwrap()[y]);
                let ext0 = extents.as_ref().unwrap()[0];
                let along_axis0 = lx.coords[1..] == ly.coords[1..];
                if along_axis0 {
                    // bond (i, i+1 mod L) carries the sign of its left end
                    let (a, b) = (lx.coords[0], ly.coords[0]);
                    let left = if (a + 1) % ext0 == b { a } else { b };
                    let sign = if left % 2 == 0 { 1.0 } else { -1.0 };
                    amp *= 1.0 + spec.dimerization * sign;
                }
            }
            kernel[(x, y)] += amp;
        }
    }
    if let Some(l) = labels {
        for x in 0..n {
            let parity = l[x].coords.iter().sum::<usize>() % 2;
            let v = if parity == 0 { spec.staggered } else { -spec.staggered };
            kernel[(x, x)] += c(v, 0.0);
        }
    }
    if let Some(dis) = spec.disorder {
        let mut rng = ChaCha8Rng::seed_from_u64(dis.seed);
        for x in 0..n {
            let w: f64 = rng.gen_range(-1.0..=1.0);
            kernel[(x, x)] += c(dis.strength * w, 0.0);
        }
    }
    for x in 0..n {
        kernel[(x, x)] -= c(spec.mu, 0.0);
    }
    OneBodyOperator::new(graph, kernel, spec.profile.is_real())
}

/// Half-width of the largest symmetric window around zero that is free of spectrum.
pub fn one_body_gap(spectrum: &OneBodySpectrum) -> f64 {
    one_body_gap_of(&spectrum.eigenvalues)
}

pub fn one_body_gap_of(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .map(|e| e.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Magnetic fluxes threading the two cycles of a torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxSpec {
    pub phi1: f64,
    pub phi2: f64,
    /// Hopping range of the kernel the flux is applied to.
    pub range: usize,
}

/// Seam-crossing indicator along one axis, coordinates `1..=L`.
///
/// `-1` for a hop from the first `r` columns into the last `r` columns, `+1` for the
/// reverse hop, `0` otherwise. The sign is fixed by `u h u* = h'` with `u` multiplying by
/// `e^{-i nu(x)}`.
pub fn seam_indicator(y: usize, y_prime: usize, l: usize, r: usize) -> f64 {
    let low = |v: usize| (1..=r).contains(&v);
    let high = |v: usize| (l - r + 1..=l).contains(&v);
    if low(y_prime) && high(y) {
        -1.0
    } else if low(y) && high(y_prime) {
        1.0
    } else {
        0.0
    }
}

fn torus_axes(graph: &SiteGraph) -> Result<(Vec<usize>, &[crate::lattice::SiteLabel])> {
    let ext = graph
        .torus_extents()
        .ok_or_else(|| invalid("graph", "flux threading needs a torus"))?;
    if ext.len() > 2 {
        return Err(invalid("graph", "flux threading is defined for 1D and 2D tori"));
    }
    Ok((ext.to_vec(), graph.labels().unwrap()))
}

/// Flux phase `phi(x, x')` of the hop from `x'` to `x`.
pub fn flux_phase(graph: &SiteGraph, flux: &FluxSpec, x: usize, x_prime: usize) -> Result<f64> {
    let (ext, labels) = torus_axes(graph)?;
    let phis = [flux.phi1, flux.phi2];
    let mut phase = 0.0;
    for (axis, &l) in ext.iter().enumerate() {
        let y = labels[x].coords[axis] + 1;
        let yp = labels[x_prime].coords[axis] + 1;
        phase += phis[axis] * seam_indicator(y, yp, l, flux.range);
    }
    Ok(phase)
}

/// `h^phi(x,x') = h(x,x') e^{i phi(x,x')}`.
pub fn apply_flux(h: &OneBodyOperator, flux: &FluxSpec) -> Result<OneBodyOperator> {
    let graph = h.graph();
    let (ext, _) = torus_axes(graph)?;
    for &l in &ext {
        if 2 * flux.range >= l {
            return Err(invalid("flux.range", format!("need r < L/2, got r = {} with L = {l}", flux.range)));
        }
    }
    if h.range() > flux.range as f64 + 1e-12 {
        // finite range along the sup-norm is what the construction needs; the graph
        // distance is an upper bound for it
        let n = h.n_sites();
        let labels = graph.labels().unwrap();
        for x in 0..n {
            for y in 0..n {
                if h.kernel()[(x, y)].norm() == 0.0 {
                    continue;
                }
                let sup = ext
                    .iter()
                    .enumerate()
                    .map(|(a, &l)| {
                        let d = labels[x].coords[a].abs_diff(labels[y].coords[a]);
                        d.min(l - d)
                    })
                    .max()
                    .unwrap_or(0);
                if sup > flux.range {
                    return Err(invalid("flux.range", "kernel range exceeds r"));
                }
            }
        }
    }
    let n = h.n_sites();
    let mut k = h.kernel().clone();
    for x in 0..n {
        for y in 0..n {
            let phase = flux_phase(graph, flux, x, y)?;
            if phase != 0.0 {
                k[(x, y)] *= (I * phase).exp();
            }
        }
    }
    Ok(h.with_kernel(k))
}

/// `h'(x,x') = e^{-i nu(x)} h(x,x') e^{i nu(x')}`.
pub fn gauge_transform(h: &OneBodyOperator, nu: &[f64]) -> Result<OneBodyOperator> {
    let n = h.n_sites();
    if nu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: nu.len(),
        });
    }
    let mut k = h.kernel().clone();
    for x in 0..n {
        for y in 0..n {
            k[(x, y)] *= (I * (nu[y] - nu[x])).exp();
        }
    }
    Ok(h.with_kernel(k))
}

/// Gauge function `nu(x) = sum_i phi_i (1 - 2 x_i / L) chi(1 <= x_i <= L/2)` that spreads
/// the seam phase evenly over half the torus.
pub fn seam_gauge(graph: &SiteGraph, flux: &FluxSpec) -> Result<Vec<f64>> {
    let (ext, labels) = torus_axes(graph)?;
    let phis = [flux.phi1, flux.phi2];
    Ok(labels
        .iter()
        .map(|lab| {
            ext.iter()
                .enumerate()
                .map(|(axis, &l)| {
                    let xi = (lab.coords[axis] + 1) as f64;
                    if xi <= l as f64 / 2.0 {
                        phis[axis] * (1.0 - 2.0 * xi / l as f64)
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect())
}

/// Largest residual phase `|phi'(x,x')|` over the support of `h`, with
/// `phi' = phi - nu(x) + nu(x')` reduced to `(-pi, pi]`.
pub fn residual_phase_max(h: &OneBodyOperator, flux: &FluxSpec, nu: &[f64]) -> Result<f64> {
    let n = h.n_sites();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x == y || h.kernel()[(x, y)].norm() == 0.0 {
                continue;
            }
            let raw = flux_phase(h.graph(), flux, x, y)? - nu[x] + nu[y];
            let wrapped = raw - std::f64::consts::TAU * (raw / std::f64::consts::TAU).round();
            worst = worst.max(wrapped.abs());
        }
    }
    Ok(worst)
}

/// `h^{x0,kappa} = e^{i kappa d(., x0)} h e^{-i kappa d(., x0)}`.
pub fn twisted_operator(h: &OneBodyOperator, x0: usize, kappa: f64) -> OneBodyOperator {
    h.with_kernel(twisted_kernel(h, x0, kappa))
}

fn twisted_kernel(h: &OneBodyOperator, x0: usize, kappa: f64) -> CMatrix {
    let g = h.graph();
    let n = h.n_sites();
    let mut k = h.kernel().clone();
    for x in 0..n {
        for y in 0..n {
            let phase = kappa * (g.distance(x, x0) - g.distance(y, x0));
            k[(x, y)] *= (I * phase).exp();
        }
    }
    k
}

fn resolvent_entry(kernel: &CMatrix, z: Complex64, x: usize, y: usize) -> Result<Complex64> {
    let n = kernel.nrows();
    let m = CMatrix::identity(n, n) * z - kernel;
    let lu = m.lu();
    let mut e = linalg::CVector::zeros(n);
    e[y] = linalg::ONE;
    let col = lu
        .solve(&e)
        .ok_or_else(|| Error::NoConvergence("resolvent is singular".into()))?;
    Ok(col[x])
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Central difference of order `n` with accuracy `O(step^2)`, refined once by Richardson.
fn central_derivative(f: &dyn Fn(f64) -> Result<Complex64>, n: usize, step: f64) -> Result<Complex64> {
    let stencil = |h: f64| -> Result<Complex64> {
        let mut acc = ZERO;
        for k in 0..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let at = (n as f64 / 2.0 - k as f64) * h;
            acc += f(at)? * (sign * binomial(n, k));
        }
        Ok(acc / h.powi(n as i32))
    };
    let coarse = stencil(step)?;
    let fine = stencil(step / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// `| R(x,y) - d(x,y)^{-n} (i d/dkappa)^n R^{x,kappa}(x,y) |_{kappa=0} |` with
/// `R = (z - h)^{-1}`, the kappa-derivative taken by finite differences.
///
/// The twisted entry is `e^{-i kappa d(x,y)} R(x,y)`, so `(i d/dkappa)^n` returns
/// `d^n R(x,y)` exactly.
pub fn derivative_identity_residual(
    h: &OneBodyOperator,
    x: usize,
    y: usize,
    z: Complex64,
    n: usize,
    step: f64,
) -> Result<f64> {
    if x == y {
        return Err(invalid("y", "must differ from x"));
    }
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if let Ok(spec) = h.spectrum() {
        let dist = spec
            .eigenvalues
            .iter()
            .map(|e| (z - e).norm())
            .fold(f64::INFINITY, f64::min);
        if dist <= 1e-8 * (1.0 + h.operator_norm()) {
            return Err(invalid("z", "lies on the spectrum"));
        }
    }
    let direct = resolvent_entry(h.kernel(), z, x, y)?;
    let f = |kappa: f64| resolvent_entry(&twisted_kernel(h, x, kappa), z, x, y);
    let deriv = central_derivative(&f, n, step)?;
    let d = h.graph().distance(x, y);
    let predicted = deriv * I.powi(n as i32) / d.powi(n as i32);
    Ok((direct - predicted).norm())
}

/// `sqrt( sup_x sum_x' |h(x,x')| * sup_x' sum_x |h(x,x')| )`.
pub fn schur_norm(kernel: &CMatrix) -> f64 {
    let rows = kernel
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let cols = kernel
        .column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    (rows * cols).sqrt()
}

/// Schur bound on `||d^p/dkappa^p h^{x,kappa}||`, using `|h^{(p)}(x,x')| <= d(x,x')^p |h(x,x')|`.
pub fn twisted_derivative_schur(h: &OneBodyOperator, p: usize) -> f64 {
    let g = h.graph();
    let n = h.n_sites();
    let mut k = CMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            k[(x, y)] = c(g.distance(x, y).powi(p as i32) * h.kernel()[(x, y)].norm(), 0.0);
        }
    }
    schur_norm(&k)
}

fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for mut rest in compositions(n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Upper bound on `||d^n/dkappa^n (z - h^{x,kappa})^{-1}||` from repeated resolvent
/// identities: a sum over compositions `p_1 + ... + p_j = n` of
/// `n!/prod p_i! ||R||^{j+1} prod ||h^{(p_i)}||`, with `||R|| <= 1/dist(z, spectrum)`.
pub fn resolvent_derivative_bound(h: &OneBodyOperator, z: Complex64, n: usize) -> Result<f64> {
    let spec = h.spectrum()?;
    let dist = spec
        .eigenvalues
        .iter()
        .map(|e| (z - e).norm())
        .fold(f64::INFINITY, f64::min);
    if dist <= 0.0 {
        return Err(invalid("z", "lies on the spectrum"));
    }
    let r = 1.0 / dist;
    let norms: Vec<f64> = (0..=n).map(|p| twisted_derivative_schur(h, p)).collect();
    let fact = |k: usize| (1..=k).fold(1.0, |a, i| a * i as f64);
    Ok(compositions(n)
        .into_iter()
        .map(|comp| {
            let coeff = fact(n) / comp.iter().map(|&p| fact(p)).product::<f64>();
            coeff * r.powi(comp.len() as i32 + 1) * comp.iter().map(|&p| norms[p]).product::<f64>()
        })
        .sum())
}

/// Size-dependent part `sqrt(k(2n)) k(nu - n)^n eps^{-n-1}` of the decay-constant bound.
pub fn ct_chain_factor(graph: &SiteGraph, eps: f64, nu: f64, n: usize) -> f64 {
    k_zeta(graph, 2.0 * n as f64).sqrt() * k_zeta(graph, nu - n as f64).powi(n as i32) * eps.powi(-(n as i32) - 1)
}

/// Arguments of [`ct_alpha_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtBoundParams {
    pub rho: f64,
    pub eps: f64,
    pub nu: f64,
    pub k_nu: f64,
    pub n: usize,
    pub c_fit: f64,
}

/// `C sqrt(k(2n)) k(nu-n)^n eps^{-n-1}` after checking the gap, envelope and order
/// preconditions. A spectral value exactly at `±(rho + eps)` counts as a violation.
pub fn ct_alpha_bound(h: &OneBodyOperator, p: &CtBoundParams) -> Result<f64> {
    let spec = h.spectrum()?;
    let norm = h.operator_norm();
    if !(p.eps > 0.0 && p.rho > 0.0) {
        return Err(invalid("rho/eps", "must be positive"));
    }
    if p.eps >= norm || p.rho >= norm {
        return Err(Error::GapPrecondition(format!(
            "need eps, rho < ||h|| = {norm}"
        )));
    }
    let gap = one_body_gap(spec);
    if gap <= p.rho + p.eps {
        return Err(Error::GapPrecondition(format!(
            "spectrum meets [-{0}, {0}] (one-body gap {gap})",
            p.rho + p.eps
        )));
    }
    if p.n == 0 || p.n as f64 >= p.nu {
        return Err(invalid("n", format!("need 1 <= n < nu = {}", p.nu)));
    }
    let envelope = h.power_envelope(p.nu);
    if envelope > p.k_nu * (1.0 + 1e-12) {
        return Err(Error::Hypothesis(format!(
            "|h| exceeds K_nu (1+d)^-nu: need K_nu >= {envelope}"
        )));
    }
    Ok(p.c_fit * ct_chain_factor(h.graph(), p.eps, p.nu, p.n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_torus, ring};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn chain(l: usize, spec: HoppingSpec) -> OneBodyOperator {
        build_hopping(Arc::new(ring(l).unwrap()), &spec).unwrap()
    }

    #[test]
    fn two_site_ring() {
        // on a 2-ring both neighbours coincide, so the table entry appears once
        let h = chain(2, HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0)));
        assert_eq!(h.kernel()[(0, 1)], c(1.0, 0.0));
        assert_eq!(h.kernel()[(0, 0)], ZERO);
        let s = h.spectrum().unwrap();
        assert_relative_eq!(s.eigenvalues[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(s.eigenvalues[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn staggered_only() {
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(0.0));
        spec.staggered = 0.7;
        let h = chain(6, spec);
        let s = h.spectrum().unwrap();
        for e in &s.eigenvalues[..3] {
            assert_relative_eq!(*e, -0.7, epsilon = 1e-14);
        }
        for e in &s.eigenvalues[3..] {
            assert_relative_eq!(*e, 0.7, epsilon = 1e-14);
        }
        assert_relative_eq!(one_body_gap(s), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn dimerized_chain_gap_matches_band_formula() {
        // independent oracle: Bloch bands of the two-site unit cell, E = ±|t1 + t2 e^{ik}|
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
        spec.dimerization = 0.5;
        let h = chain(8, spec);
        let s = h.spectrum().unwrap();
        let (t1, t2) = (1.5f64, 0.5f64);
        let mut bands = Vec::new();
        for m in 0..4 {
            let k = std::f64::consts::TAU * m as f64 / 4.0;
            let e = (t1 * t1 + t2 * t2 + 2.0 * t1 * t2 * k.cos()).sqrt();
            bands.push(e);
            bands.push(-e);
        }
        assert!(linalg::spectra_distance(&s.eigenvalues, &bands) < 1e-12);
        assert_relative_eq!(one_body_gap(s), 1.0, epsilon = 1e-12);
        // residual and orthonormality invariants
        let hv = h.kernel() * &s.eigenvectors;
        for k in 0..8 {
            let r = (hv.column(k) - s.eigenvectors.column(k) * c(s.eigenvalues[k], 0.0)).norm();
            assert!(r < 1e-10 * h.operator_norm());
        }
        let gram = s.eigenvectors.adjoint() * &s.eigenvectors;
        assert!(linalg::max_abs_diff(&gram, &CMatrix::identity(8, 8)) < 1e-10);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(one_body_gap_of(&[-1.0, 2.0]), 1.0);
        assert_eq!(one_body_gap_of(&[-0.5, -0.2, 0.3]), 0.2);
        assert_eq!(one_body_gap_of(&[-1.0, 0.0, 1.0]), 0.0);
    }

    #[test]
    fn non_hermitian_rejected_when_required() {
        let g = Arc::new(ring(3).unwrap());
        let mut k = CMatrix::zeros(3, 3);
        k[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(
            OneBodyOperator::new(g.clone(), k.clone(), true),
            Err(Error::NotHermitian { .. })
        ));
        let h = OneBodyOperator::new(g, k, false).unwrap();
        assert!(!h.is_hermitian());
        assert!(h.spectrum().is_err());
    }

    #[test]
    fn disorder_is_reproducible() {
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
        spec.disorder = Some(Disorder { strength: 0.3, seed: 9 });
        let a = chain(6, spec.clone());
        let b = chain(6, spec);
        assert_eq!(a.kernel(), b.kernel());
        assert!(a.kernel()[(0, 0)].re.abs() <= 0.3);
    }

    fn square_torus(l: usize) -> OneBodyOperator {
        let g = Arc::new(build_torus(&[l, l], 0).unwrap());
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
        spec.staggered = 0.8;
        build_hopping(g, &spec).unwrap()
    }

    #[test]
    fn zero_flux_is_identity() {
        let h = square_torus(4);
        let f = FluxSpec { phi1: 0.0, phi2: 0.0, range: 1 };
        assert_eq!(apply_flux(&h, &f).unwrap().kernel(), h.kernel());
        let f = FluxSpec { phi1: 0.3, phi2: 0.0, range: 2 };
        assert!(apply_flux(&h, &f).is_err());
    }

    #[test]
    fn seam_gauge_spectrum_and_phase() {
        for l in [6, 8] {
            let h = square_torus(l);
            let f = FluxSpec { phi1: 2.0, phi2: 1.1, range: 1 };
            let hphi = apply_flux(&h, &f).unwrap();
            assert!(hphi.is_hermitian());
            let nu = seam_gauge(h.graph(), &f).unwrap();
            let hprime = gauge_transform(&hphi, &nu).unwrap();
            let a = &hphi.spectrum().unwrap().eigenvalues;
            let b = &hprime.spectrum().unwrap().eigenvalues;
            assert!(linalg::spectra_distance(a, b) < 1e-10);
            let phase = residual_phase_max(&h, &f, &nu).unwrap();
            // every bond carries at most 2 phi_max / L after the gauge
            assert!(phase <= 2.0 * 2.0 / l as f64 + 1e-12, "phase {phase}");
            // the kernel phase agrees with the bookkeeping
            let n = h.n_sites();
            for x in 0..n {
                for y in 0..n {
                    let hv = h.kernel()[(x, y)];
                    if x != y && hv.norm() > 0.0 {
                        let ratio = hprime.kernel()[(x, y)] / hv;
                        assert!(ratio.arg().abs() <= phase + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_gauge_is_identity() {
        let h = square_torus(4);
        let nu = vec![0.37; h.n_sites()];
        let g = gauge_transform(&h, &nu).unwrap();
        assert!(linalg::max_abs_diff(g.kernel(), h.kernel()) < 1e-15);
    }

    #[test]
    fn twisting_preserves_spectrum() {
        let mut spec = HoppingSpec::new(HoppingProfile::Exponential { t: 1.0, decay: 1.0, range: None });
        spec.staggered = 1.0;
        let h = chain(8, spec);
        assert_eq!(twisted_operator(&h, 2, 0.0).kernel(), h.kernel());
        let t = twisted_operator(&h, 2, 0.7);
        let d = linalg::spectra_distance(
            &h.spectrum().unwrap().eigenvalues,
            &t.spectrum().unwrap().eigenvalues,
        );
        assert!(d < 1e-10);
    }

    #[test]
    fn twisted_derivative_below_schur_bound() {
        // finite-difference derivative of the twisted kernel vs the Schur bound on d |h|
        let mut spec = HoppingSpec::new(HoppingProfile::Exponential { t: 1.0, decay: 0.8, range: None });
        spec.staggered = 0.5;
        let h = chain(8, spec);
        let kappa = 0.3;
        let step = 1e-5;
        let plus = twisted_operator(&h, 0, kappa + step);
        let minus = twisted_operator(&h, 0, kappa - step);
        let deriv = (plus.kernel() - minus.kernel()) / c(2.0 * step, 0.0);
        assert!(linalg::operator_norm(&deriv) <= twisted_derivative_schur(&h, 1) + 1e-6);
    }

    #[test]
    fn derivative_identity_holds() {
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
        spec.staggered = 0.6;
        let h = chain(6, spec);
        let z = c(0.0, 3.0);
        let r1 = derivative_identity_residual(&h, 0, 2, z, 1, 1e-3).unwrap();
        assert!(r1 < 1e-6, "n=1 residual {r1}");
        let r2 = derivative_identity_residual(&h, 0, 3, z, 2, 1e-3).unwrap();
        assert!(r2 < 1e-5, "n=2 residual {r2}");
        assert!(derivative_identity_residual(&h, 1, 1, z, 1, 1e-3).is_err());
    }

    #[test]
    fn derivative_identity_on_decoupled_sites() {
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(0.0));
        spec.staggered = 1.0;
        let h = chain(4, spec);
        let r = derivative_identity_residual(&h, 0, 1, c(0.2, 1.0), 1, 1e-3).unwrap();
        assert!(r < 1e-14);
    }

    #[test]
    fn schur_norm_examples() {
        assert_eq!(schur_norm(&CMatrix::identity(5, 5)), 1.0);
        let m = CMatrix::from_row_slice(2, 2, &[ZERO, c(1.0, 0.0), c(1.0, 0.0), ZERO]);
        assert_eq!(schur_norm(&m), 1.0);
        assert_relative_eq!(linalg::operator_norm(&m), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ct_bound_on_decoupled_sites() {
        let g = Arc::new(SiteGraph::complete(3).unwrap().clone());
        let mut k = CMatrix::zeros(3, 3);
        k[(0, 0)] = c(2.0, 0.0);
        k[(1, 1)] = c(-2.0, 0.0);
        k[(2, 2)] = c(3.0, 0.0);
        let h = OneBodyOperator::new(g, k, true).unwrap();
        let single = OneBodyOperator::new(
            Arc::new(SiteGraph::single_site()),
            CMatrix::from_element(1, 1, c(-2.0, 0.0)),
            true,
        )
        .unwrap();
        let p = CtBoundParams { rho: 1.0, eps: 0.5, nu: 3.0, k_nu: 2.0, n: 1, c_fit: 1.7 };
        let b = ct_alpha_bound(&single, &p).unwrap();
        assert_relative_eq!(b, 1.7 * 0.5f64.powi(-2), epsilon = 1e-12);
        // n >= nu rejected, gap violations rejected
        assert!(ct_alpha_bound(&single, &CtBoundParams { n: 3, ..p }).is_err());
        assert!(ct_alpha_bound(&single, &CtBoundParams { rho: 1.5, ..p }).is_err());
        assert!(ct_alpha_bound(&h, &CtBoundParams { k_nu: 1.0, ..p }).is_err());
        assert!(ct_alpha_bound(&h, &CtBoundParams { k_nu: 3.0, ..p }).is_ok());
        // boundary attainment counts as a violation
        assert!(ct_alpha_bound(&h, &CtBoundParams { rho: 1.5, eps: 0.5, ..p }).is_err());
    }

    #[test]
    fn ct_bound_decreasing_in_eps() {
        let mut spec = HoppingSpec::new(HoppingProfile::Exponential { t: 0.5, decay: 1.0, range: None });
        spec.staggered = 1.5;
        let h = chain(8, spec);
        let k_nu = h.power_envelope(3.0);
        let mut last = f64::INFINITY;
        for eps in [0.05, 0.1, 0.2, 0.3] {
            let b = ct_alpha_bound(
                &h,
                &CtBoundParams { rho: 0.2, eps, nu: 3.0, k_nu, n: 1, c_fit: 1.0 },
            )
            .unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn resolvent_decay_bound_pointwise() {
        let mut spec = HoppingSpec::new(HoppingProfile::Exponential { t: 0.6, decay: 1.2, range: None });
        spec.staggered = 1.2;
        let h = chain(10, spec);
        let gap = one_body_gap(h.spectrum().unwrap());
        let (rho, eps) = (0.3 * gap, 0.3 * gap);
        let norm = h.operator_norm();
        // rectangle contour sides, sampled
        let half = eps.sqrt();
        let mut zs = Vec::new();
        for k in 0..=16 {
            let y = -half + 2.0 * half * k as f64 / 16.0;
            zs.push(c(-(rho + eps / 2.0), y));
            zs.push(c(-(norm + eps), y));
            let xr = -(rho + eps / 2.0) - (norm + eps / 2.0 - rho) * k as f64 / 16.0;
            zs.push(c(xr, half));
            zs.push(c(xr, -half));
        }
        for n in [1usize, 2] {
            for &z in &zs {
                let bound = resolvent_derivative_bound(&h, z, n).unwrap();
                for y in 1..10 {
                    let r = resolvent_entry(h.kernel(), z, 0, y).unwrap().norm();
                    let d = h.graph().distance(0, y);
                    assert!(r <= bound / d.powi(n as i32) * (1.0 + 1e-10));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn schur_dominates_operator_norm(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let m = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            prop_assert!(schur_norm(&m) >= linalg::operator_norm(&m) * (1.0 - 1e-12));
        }

        #[test]
        fn random_gauge_preserves_spectrum(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0));
            spec.disorder = Some(Disorder { strength: 1.0, seed });
            let h = chain(7, spec);
            let nu: Vec<f64> = (0..7).map(|_| rng.gen_range(0.0..6.3)).collect();
            let g = gauge_transform(&h, &nu).unwrap();
            let d = linalg::spectra_distance(&h.spectrum().unwrap().eigenvalues, &g.spectrum().unwrap().eigenvalues);
            prop_assert!(d < 1e-10);
        }
    }
}
