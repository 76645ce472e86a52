//! Many-body eigenstructure: clustered eigenvalues with spectral projectors, gap and
//! simplicity, and certification of the ground-state gap by continuation in `g`.
//!
//! The non-Hermitian path triangularises `H = Q T Q*`, reorders the Schur form so
//! eigenvalue clusters are contiguous, and block-diagonalises `T` with a unit upper
//! block-triangular similarity `S`. The projector of cluster `j` is
//! `Q S[:, j] S^{-1}[j, :] Q*`, which never assumes diagonalisability.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::FockMatrix;
use crate::linalg::{self, c, CMatrix, ONE, ZERO};
use crate::model::Model;
use crate::par::{self, Execution};

/// Relative clustering tolerance (times the Frobenius norm of `H`).
pub const CLUSTER_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct Cluster {
    /// Mean of the member eigenvalues.
    pub value: Complex64,
    pub multiplicity: usize,
    left: CMatrix,
    right: CMatrix,
}

impl Cluster {
    /// `P = left * right`.
    pub fn projector(&self) -> CMatrix {
        &self.left * &self.right
    }

    pub fn projector_trace(&self) -> Complex64 {
        linalg::trace(&(&self.right * &self.left))
    }

    /// Factors of the projector (`n x b` and `b x n`).
    pub fn factors(&self) -> (&CMatrix, &CMatrix) {
        (&self.left, &self.right)
    }
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Eigenvalues sorted by real part (ties by imaginary part).
    pub eigenvalues: Vec<Complex64>,
    /// Clusters ordered by the real part of their value.
    pub clusters: Vec<Cluster>,
    pub hermitian: bool,
    pub tolerance: f64,
    /// Frobenius norm of `H`.
    pub scale: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn ground(&self) -> &Cluster {
        &self.clusters[0]
    }

    /// Largest violations of `sum P = 1`, `P^2 = P` and `[H, P] = 0` (the last relative to `||H||`).
    pub fn projector_defects(&self, h: &CMatrix) -> (f64, f64, f64) {
        let n = self.dim();
        let mut sum = CMatrix::zeros(n, n);
        let (mut idem, mut comm) = (0.0f64, 0.0f64);
        for cl in &self.clusters {
            let p = cl.projector();
            idem = idem.max(linalg::max_abs_diff(&(&p * &p), &p));
            comm = comm.max(linalg::max_abs_diff(&(h * &p), &(&p * h)) / self.scale.max(1e-300));
            sum += p;
        }
        (
            linalg::max_abs_diff(&sum, &CMatrix::identity(n, n)),
            idem,
            comm,
        )
    }
}

fn cmp_complex(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// Eigenvalues, clusters and projectors of `h`.
pub fn eigensystem(h: &FockMatrix, hermitian: bool) -> Result<EigenSystem> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(invalid("H", "must be square and nonempty"));
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("H", "non-finite entry"));
    }
    let scale = h.norm();
    let tolerance = CLUSTER_TOL * scale.max(f64::MIN_POSITIVE);
    if hermitian {
        let defect = linalg::hermiticity_defect(h);
        if defect > 1e-10 * scale.max(1.0) {
            return Err(Error::NotHermitian { deviation: defect });
        }
        hermitian_system(h, tolerance, scale)
    } else {
        general_system(h, tolerance, scale)
    }
}

fn hermitian_system(h: &CMatrix, tolerance: f64, scale: f64) -> Result<EigenSystem> {
    let eig = linalg::hermitian_eigen(h);
    let n = eig.values.len();
    let mut clusters = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || eig.values[k] - eig.values[k - 1] > tolerance {
            let cols = eig.vectors.columns(start, k - start).into_owned();
            let mean = eig.values[start..k].iter().sum::<f64>() / (k - start) as f64;
            clusters.push(Cluster {
                value: c(mean, 0.0),
                multiplicity: k - start,
                right: cols.adjoint(),
                left: cols,
            });
            start = k;
        }
    }
    Ok(EigenSystem {
        eigenvalues: eig.values.iter().map(|&e| c(e, 0.0)).collect(),
        clusters,
        hermitian: true,
        tolerance,
        scale,
    })
}

/// Unitary `G` with first column `(a, b) / |(a, b)|`.
fn rotation(a: Complex64, b: Complex64) -> [[Complex64; 2]; 2] {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / r, b / r);
    [[a, -b.conj()], [b, a.conj()]]
}

/// `T <- G* T G` on rows/columns `k, k+1` and `Q <- Q G`.
fn apply_rotation(t: &mut CMatrix, q: &mut CMatrix, k: usize, g: [[Complex64; 2]; 2]) {
    let n = t.nrows();
    for col in 0..n {
        let (x, y) = (t[(k, col)], t[(k + 1, col)]);
        t[(k, col)] = g[0][0].conj() * x + g[1][0].conj() * y;
        t[(k + 1, col)] = g[0][1].conj() * x + g[1][1].conj() * y;
    }
    for row in 0..n {
        let (x, y) = (t[(row, k)], t[(row, k + 1)]);
        t[(row, k)] = x * g[0][0] + y * g[1][0];
        t[(row, k + 1)] = x * g[0][1] + y * g[1][1];
        let (x, y) = (q[(row, k)], q[(row, k + 1)]);
        q[(row, k)] = x * g[0][0] + y * g[1][0];
        q[(row, k + 1)] = x * g[0][1] + y * g[1][1];
    }
    t[(k + 1, k)] = ZERO;
}

/// Complex Schur form `H = Q T Q*` with `T` upper triangular.
pub fn complex_schur(h: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let n = h.nrows();
    let schur = nalgebra::linalg::Schur::try_new(h.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::NoConvergence("Schur iteration cap reached".into()))?;
    let (mut q, mut t) = schur.unpack();
    let small = 1e-14 * h.norm().max(f64::MIN_POSITIVE);
    // split any remaining 2x2 bumps with a rotation onto an eigenvector
    for k in 0..n.saturating_sub(1) {
        if t[(k + 1, k)].norm() > small {
            let (a, b, cc, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let tr = a + d;
            let disc = ((a - d) * (a - d) + b * cc * 4.0).sqrt();
            let lambda = (tr + disc) * 0.5;
            let (x, y) = if (lambda - d).norm() >= (lambda - a).norm() {
                (lambda - d, cc)
            } else {
                (b, lambda - a)
            };
            apply_rotation(&mut t, &mut q, k, rotation(x, y));
        }
        for row in k + 1..n {
            if t[(row, k)].norm() <= small {
                t[(row, k)] = ZERO;
            }
        }
    }
    for row in 1..n {
        for col in 0..row {
            if t[(row, col)].norm() > 1e-10 * h.norm().max(1.0) {
                return Err(Error::NoConvergence("Schur form is not triangular".into()));
            }
            t[(row, col)] = ZERO;
        }
    }
    Ok((q, t))
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

/// Solves `A X - X B = C` for upper triangular `A`, `B` with disjoint spectra.
fn sylvester_upper(a: &CMatrix, b: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let (m, p) = rhs.shape();
    let mut x = CMatrix::zeros(m, p);
    for col in 0..p {
        let mut r: Vec<Complex64> = (0..m).map(|i| rhs[(i, col)]).collect();
        for k in 0..col {
            let bkc = b[(k, col)];
            if bkc != ZERO {
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri += x[(i, k)] * bkc;
                }
            }
        }
        let shift = b[(col, col)];
        for i in (0..m).rev() {
            let mut acc = r[i];
            for j in i + 1..m {
                acc -= a[(i, j)] * x[(j, col)];
            }
            let piv = a[(i, i)] - shift;
            if piv.norm() == 0.0 {
                return Err(Error::NoConvergence("clusters share an eigenvalue".into()));
            }
            x[(i, col)] = acc / piv;
        }
    }
    Ok(x)
}

fn general_system(h: &CMatrix, tolerance: f64, scale: f64) -> Result<EigenSystem> {
    let n = h.nrows();
    let (mut q, mut t) = complex_schur(h)?;
    let diag: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();

    // cluster by transitive closure of |lambda_i - lambda_j| <= tol
    let mut parent: Vec<usize> = (0..n).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].re.total_cmp(&diag[b].re));
    for (ii, &i) in order.iter().enumerate() {
        for &j in &order[ii + 1..] {
            if diag[j].re - diag[i].re > tolerance {
                break;
            }
            if (diag[i] - diag[j]).norm() <= tolerance {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut reps: Vec<usize> = roots.clone();
    reps.sort_unstable();
    reps.dedup();
    let mean = |r: usize| -> Complex64 {
        let members: Vec<Complex64> = (0..n).filter(|&i| roots[i] == r).map(|i| diag[i]).collect();
        members.iter().sum::<Complex64>() / members.len() as f64
    };
    let mut cluster_values: Vec<(usize, Complex64)> = reps.iter().map(|&r| (r, mean(r))).collect();
    cluster_values.sort_by(|a, b| cmp_complex(&a.1, &b.1));
    let rank = |root: usize| cluster_values.iter().position(|&(r, _)| r == root).unwrap();
    let mut labels: Vec<usize> = roots.iter().map(|&r| rank(r)).collect();

    // bubble the diagonal into cluster order with adjacent swaps
    let mut swapped = true;
    while swapped {
        swapped = false;
        for k in 0..n.saturating_sub(1) {
            if labels[k] > labels[k + 1] {
                let (t11, t12, t22) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k + 1)]);
                apply_rotation(&mut t, &mut q, k, rotation(t12, t22 - t11));
                t[(k, k)] = t22;
                t[(k + 1, k + 1)] = t11;
                labels.swap(k, k + 1);
                swapped = true;
            }
        }
    }

    // block boundaries
    let mut bounds = vec![0];
    for k in 1..n {
        if labels[k] != labels[k - 1] {
            bounds.push(k);
        }
    }
    bounds.push(n);
    let nb = bounds.len() - 1;
    let block = |i: usize| bounds[i]..bounds[i + 1];

    // S unit upper block triangular with T S = S diag(T_jj)
    let mut s = CMatrix::identity(n, n);
    for j in 1..nb {
        let bj = block(j);
        let tjj = t.view((bj.start, bj.start), (bj.len(), bj.len())).into_owned();
        for i in (0..j).rev() {
            let bi = block(i);
            let mut rhs = CMatrix::zeros(bi.len(), bj.len());
            for l in i + 1..=j {
                let bl = block(l);
                let til = t.view((bi.start, bl.start), (bi.len(), bl.len()));
                let slj = s.view((bl.start, bj.start), (bl.len(), bj.len()));
                rhs -= til * slj;
            }
            let tii = t.view((bi.start, bi.start), (bi.len(), bi.len())).into_owned();
            let x = sylvester_upper(&tii, &tjj, &rhs)?;
            s.view_mut((bi.start, bj.start), (bi.len(), bj.len())).copy_from(&x);
        }
    }
    let s_inv = linalg::inverse(&s)?;
    let qs = &q * &s;
    let sinv_qh = &s_inv * q.adjoint();
    let clusters = (0..nb)
        .map(|j| {
            let bj = block(j);
            Cluster {
                value: cluster_values[j].1,
                multiplicity: bj.len(),
                left: qs.columns(bj.start, bj.len()).into_owned(),
                right: sinv_qh.rows(bj.start, bj.len()).into_owned(),
            }
        })
        .collect();
    let mut eigenvalues = diag;
    eigenvalues.sort_by(cmp_complex);
    Ok(EigenSystem {
        eigenvalues,
        clusters,
        hermitian: false,
        tolerance,
        scale,
    })
}

/// Ground-state data of an eigensystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCore {
    pub e0: Complex64,
    pub simple: bool,
    pub gap: f64,
}

/// `E_0` (minimal real part), simplicity (projector trace 1), and `Re E_1 - Re E_0` for
/// the next cluster.
pub fn gap_and_simplicity(eig: &EigenSystem) -> Result<GapCore> {
    if eig.clusters.len() < 2 {
        return Err(Error::GapPrecondition(
            "a single eigenvalue cluster: H is a multiple of the identity".into(),
        ));
    }
    let g = eig.ground();
    let simple = g.multiplicity == 1 && (g.projector_trace() - ONE).norm() < 1e-6;
    Ok(GapCore {
        e0: g.value,
        simple,
        gap: eig.clusters[1].value.re - g.value.re,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub g: Complex64,
    pub e0: Complex64,
    pub simple: bool,
    pub gap: f64,
    pub certified: bool,
    /// Radius parameter used for the certification circle `|z - E_0| = rho / 2`.
    pub rho: f64,
    pub steps: usize,
    /// Why certification failed, if it did.
    pub diagnostics: Option<String>,
}

/// Controls for [`certify_by_continuation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    /// Explicit `rho`; defaults to `rho_fraction` times the one-body gap.
    pub rho: Option<f64>,
    pub rho_fraction: f64,
    /// Initial number of points on the circle (doubled until the maximum moves < 1%).
    pub circle_points: usize,
    /// Fraction of the Neumann-series step limit actually taken.
    pub safety: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            rho: None,
            rho_fraction: 0.5,
            circle_points: 32,
            safety: 0.5,
            min_step: 1e-8,
            max_steps: 10_000,
        }
    }
}

/// `||(z - H)^{-1}|| = 1 / sigma_min(z - H)` at `m` equally spaced points of the circle.
pub fn circle_resolvent_norms(h: &CMatrix, center: Complex64, radius: f64, m: usize, exec: Execution) -> Vec<f64> {
    let n = h.nrows();
    par::map_range(exec, m, |k| {
        let phi = std::f64::consts::TAU * k as f64 / m as f64;
        let z = center + Complex64::from_polar(radius, phi);
        let a = CMatrix::identity(n, n) * z - h;
        1.0 / linalg::min_singular_value(&a)
    })
}

/// Supremum of the resolvent norm on the circle, doubling the sampling until the maximum
/// changes by less than 1%, then refining around the maximiser.
pub fn circle_resolvent_sup(h: &CMatrix, center: Complex64, radius: f64, points: usize, exec: Execution) -> f64 {
    let mut m = points.max(8);
    let mut best = circle_resolvent_norms(h, center, radius, m, exec)
        .into_iter()
        .fold(0.0, f64::max);
    loop {
        let next = circle_resolvent_norms(h, center, radius, 2 * m, exec)
            .into_iter()
            .fold(0.0, f64::max);
        m *= 2;
        let done = (next - best).abs() <= 0.01 * best || m >= 1024;
        best = best.max(next);
        if done {
            break;
        }
    }
    // local refinement near the maximiser on the final grid
    let vals = circle_resolvent_norms(h, center, radius, m, exec);
    let (kmax, _) = vals
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let n = h.nrows();
    let step = std::f64::consts::TAU / m as f64;
    let local = par::map_range(exec, 17, |j| {
        let phi = (kmax as f64 + (j as f64 - 8.0) / 8.0) * step;
        let z = center + Complex64::from_polar(radius, phi);
        1.0 / linalg::min_singular_value(&(CMatrix::identity(n, n) * z - h))
    });
    local.into_iter().fold(best, f64::max)
}

fn report_at(model: &Model, g: Complex64) -> Result<(EigenSystem, GapCore)> {
    let h = model.hamiltonian(g);
    let eig = eigensystem(&h, model.is_hermitian_at(g))?;
    let core = gap_and_simplicity(&eig)?;
    Ok((eig, core))
}

/// Walks `g` from 0 to `g_target` on a straight line. At each accepted point the step is
/// bounded by `safety / (sup_{|z - E_0| = rho/2} ||(z - H_g)^{-1}|| * ||V||)`, which keeps the
/// circle in the resolvent set along the step, so the Riesz projector inside stays of rank
/// one. The new eigensystem is then computed directly and `E_0` must remain simple and
/// inside the previous circle.
pub fn certify_by_continuation(model: &Model, g_target: Complex64, opts: &ContinuationOptions, exec: Execution) -> Result<GapReport> {
    let gap1 = model.one_body_gap()?;
    if gap1 <= 0.0 {
        return Err(Error::GapPrecondition("free model has no one-body gap".into()));
    }
    let rho = opts.rho.unwrap_or(opts.rho_fraction * gap1);
    if !(rho > 0.0) {
        return Err(invalid("rho", "must be positive"));
    }
    let v_norm = model.v_operator_norm();
    let (_, mut core) = report_at(model, c(0.0, 0.0))?;
    let mut report = GapReport {
        g: g_target,
        e0: core.e0,
        simple: core.simple,
        gap: core.gap,
        certified: false,
        rho,
        steps: 0,
        diagnostics: None,
    };
    if !core.simple {
        report.diagnostics = Some("free ground state is degenerate".into());
        return Ok(report);
    }
    let total = g_target.norm();
    let dir = if total > 0.0 { g_target / total } else { ZERO };
    let mut s = 0.0;
    while s < total {
        if report.steps >= opts.max_steps {
            report.diagnostics = Some(format!("step budget exhausted at |g| = {s:e}"));
            return Ok(report);
        }
        let g = dir * s;
        let h = model.hamiltonian(g);
        let sup = circle_resolvent_sup(&h, core.e0, rho / 2.0, opts.circle_points, exec);
        let limit = if v_norm > 0.0 { opts.safety / (sup * v_norm) } else { f64::INFINITY };
        let step = limit.min(total - s);
        if step < opts.min_step {
            report.diagnostics = Some(format!(
                "step underflow at |g| = {s:e}: resolvent sup {sup:e}, allowed step {limit:e}"
            ));
            return Ok(report);
        }
        let next = if step >= total - s { total } else { s + step };
        let (_, new_core) = report_at(model, dir * next)?;
        if !new_core.simple || (new_core.e0 - core.e0).norm() >= rho / 2.0 {
            report.e0 = new_core.e0;
            report.simple = new_core.simple;
            report.gap = new_core.gap;
            report.diagnostics = Some(format!("ground eigenvalue left the circle at |g| = {next:e}"));
            return Ok(report);
        }
        core = new_core;
        s = next;
        report.steps += 1;
    }
    report.e0 = core.e0;
    report.simple = core.simple;
    report.gap = core.gap;
    report.certified = true;
    Ok(report)
}

/// Gap reports over a grid of couplings; with `certify` each point runs the continuation.
pub fn gap_scan(model: &Model, grid: &[Complex64], certify: Option<&ContinuationOptions>, exec: Execution) -> Result<Vec<GapReport>> {
    let rows = par::map_slice(exec, grid, |&g| -> Result<GapReport> {
        match certify {
            Some(opts) => certify_by_continuation(model, g, opts, Execution::Sequential),
            None => {
                let (_, core) = report_at(model, g)?;
                Ok(GapReport {
                    g,
                    e0: core.e0,
                    simple: core.simple,
                    gap: core.gap,
                    certified: false,
                    rho: 0.0,
                    steps: 0,
                    diagnostics: None,
                })
            }
        }
    });
    rows.into_iter().collect()
}
