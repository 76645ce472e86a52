//! Thermal and ground-state truncated correlations on Fock space, decay-rate fits and the
//! exponential-decay bounds for `<A(tau); B>`.
//!
//! Evolution uses the block spectral decomposition `H = W diag(T_j) W^{-1}` from
//! [`crate::spectra`], so one decomposition serves every `tau`. With `H` shifted by its
//! ground eigenvalue the exponentials `e^{-tau (T_j - E_0)}` never grow for
//! `0 <= tau <= beta`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::error::{invalid, Error, Result};
use crate::fock::{self, FockMatrix};
use crate::lattice::time_distance;
use crate::linalg::{self, c, CMatrix, ZERO};
use crate::model::Model;
use crate::normalorder::NormalOrderedOperator;
use crate::par::{self, Execution};
use crate::spectra::{self, EigenSystem};

/// Relative Hermiticity tolerance used when the caller does not say.
const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Thermal,
    GroundLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSample {
    pub tau: f64,
    pub value: Complex64,
    /// Inverse temperature; infinite for ground-state samples.
    pub beta: f64,
    pub which: Which,
}

/// `e^{-tau H}` for many `tau` from one block spectral decomposition.
#[derive(Debug, Clone)]
pub struct Propagator {
    eig: EigenSystem,
    /// Columns are the right factors of all clusters, in cluster order.
    w: CMatrix,
    /// Rows are the left factors, so `w_inv * w = 1`.
    w_inv: CMatrix,
    offsets: Vec<usize>,
    /// `T_j - E_0` restricted to each cluster.
    blocks: Vec<CMatrix>,
    shift: Complex64,
}

impl Propagator {
    /// Detects Hermiticity from the matrix itself.
    pub fn new(h: &FockMatrix) -> Result<Self> {
        let herm = linalg::hermiticity_defect(h) <= HERMITIAN_TOL * h.norm().max(1.0);
        Self::with_hermiticity(h, herm)
    }

    pub fn with_hermiticity(h: &FockMatrix, hermitian: bool) -> Result<Self> {
        let eig = spectra::eigensystem(h, hermitian)?;
        let n = eig.dim();
        let shift = eig.ground().value;
        let mut w = CMatrix::zeros(n, n);
        let mut w_inv = CMatrix::zeros(n, n);
        let mut offsets = Vec::with_capacity(eig.clusters.len());
        let mut blocks = Vec::with_capacity(eig.clusters.len());
        let mut off = 0;
        for cl in &eig.clusters {
            let (left, right) = cl.factors();
            let b = cl.multiplicity;
            w.columns_mut(off, b).copy_from(left);
            w_inv.rows_mut(off, b).copy_from(right);
            let mut t = right * h * left;
            for k in 0..b {
                t[(k, k)] -= shift;
            }
            offsets.push(off);
            blocks.push(t);
            off += b;
        }
        Ok(Propagator {
            eig,
            w,
            w_inv,
            offsets,
            blocks,
            shift,
        })
    }

    pub fn from_model(model: &Model, g: Complex64) -> Result<Self> {
        Self::with_hermiticity(&model.hamiltonian(g), model.is_hermitian_at(g))
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    /// The ground eigenvalue `E_0` subtracted from `H` before exponentiating.
    pub fn shift(&self) -> Complex64 {
        self.shift
    }

    /// `W^{-1} A W`: `A` in the block spectral basis.
    pub fn to_spectral(&self, a: &CMatrix) -> CMatrix {
        &self.w_inv * a * &self.w
    }

    fn block_exps(&self, tau: f64) -> Vec<CMatrix> {
        self.blocks
            .iter()
            .map(|t| {
                if t.nrows() == 1 {
                    CMatrix::from_element(1, 1, (-t[(0, 0)] * tau).exp())
                } else {
                    (t * c(-tau, 0.0)).exp()
                }
            })
            .collect()
    }

    /// `diag(E_j) * m` for block-diagonal `E`.
    fn left_block_mul(&self, e: &[CMatrix], m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(m.nrows(), m.ncols());
        for (j, ej) in e.iter().enumerate() {
            let (off, b) = (self.offsets[j], ej.nrows());
            out.rows_mut(off, b).copy_from(&(ej * m.rows(off, b)));
        }
        out
    }

    /// `e^{-tau (H - E_0)}` as a dense matrix.
    pub fn evolution(&self, tau: f64) -> CMatrix {
        let e = self.block_exps(tau);
        &self.w * self.left_block_mul(&e, &self.w_inv)
    }

    /// `tr e^{-beta (H - E_0)}`, checked for conditioning.
    pub fn shifted_partition(&self, beta: f64) -> Result<Complex64> {
        let z: Complex64 = self.block_exps(beta).iter().map(linalg::trace).sum();
        if !(z.norm() >= 1e-12 * self.dim() as f64) || !z.re.is_finite() {
            return Err(Error::IllConditioned(z.norm()));
        }
        Ok(z)
    }

    /// `ln Z_{beta H}`, with the principal branch for the shifted part.
    pub fn log_partition(&self, beta: f64) -> Result<Complex64> {
        Ok(self.shifted_partition(beta)?.ln() - self.shift * beta)
    }

    fn expectation_spectral(&self, a_s: &CMatrix, beta: f64, z: Complex64) -> Complex64 {
        let e = self.block_exps(beta);
        let mut acc = ZERO;
        for (j, ej) in e.iter().enumerate() {
            let (off, b) = (self.offsets[j], ej.nrows());
            acc += linalg::trace(&(ej * a_s.view((off, off), (b, b))));
        }
        acc / z
    }

    pub fn thermal_expectation(&self, a: &CMatrix, beta: f64) -> Result<Complex64> {
        check_beta(beta)?;
        let z = self.shifted_partition(beta)?;
        Ok(self.expectation_spectral(&self.to_spectral(a), beta, z))
    }

    /// Prepares `A` and `B` for repeated evaluation over a time grid.
    pub fn pair(&self, a: &CMatrix, b: &CMatrix, beta: f64) -> Result<PreparedPair<'_>> {
        check_beta(beta)?;
        check_dims(self.dim(), a)?;
        check_dims(self.dim(), b)?;
        let z = self.shifted_partition(beta)?;
        let a_s = self.to_spectral(a);
        let b_s = self.to_spectral(b);
        let mean_a = self.expectation_spectral(&a_s, beta, z);
        let mean_b = self.expectation_spectral(&b_s, beta, z);
        Ok(PreparedPair {
            prop: self,
            a_s,
            b_s,
            beta,
            z,
            mean_a,
            mean_b,
        })
    }

    pub fn truncated(&self, a: &CMatrix, b: &CMatrix, tau: f64, beta: f64) -> Result<Complex64> {
        self.pair(a, b, beta)?.truncated(tau)
    }

    /// `tr(P_0 A e^{-tau (H - E_0)} (1 - P_0) B P_0)`.
    pub fn truncated_ground(&self, a: &CMatrix, b: &CMatrix, tau: f64) -> Result<Complex64> {
        check_dims(self.dim(), a)?;
        check_dims(self.dim(), b)?;
        if !(tau >= 0.0) {
            return Err(invalid("tau", "must be non-negative"));
        }
        let core = spectra::gap_and_simplicity(&self.eig)?;
        if !core.simple {
            return Err(Error::NotSimple(format!("{}", core.e0)));
        }
        let (l0, r0) = self.eig.ground().factors();
        let row = r0 * a * &self.w;
        let col = &self.w_inv * b * l0;
        let e = self.block_exps(tau);
        let mut acc = ZERO;
        for (j, ej) in e.iter().enumerate().skip(1) {
            let (off, bsz) = (self.offsets[j], ej.nrows());
            let v = ej * col.rows(off, bsz);
            acc += (row.columns(off, bsz) * v)[(0, 0)];
        }
        Ok(acc)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta", "must be positive and finite"));
    }
    Ok(())
}

fn check_dims(n: usize, a: &CMatrix) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    Ok(())
}

/// Two observables in the spectral basis together with `Z` and their expectations.
#[derive(Debug, Clone)]
pub struct PreparedPair<'a> {
    prop: &'a Propagator,
    a_s: CMatrix,
    b_s: CMatrix,
    beta: f64,
    z: Complex64,
    mean_a: Complex64,
    mean_b: Complex64,
}

impl PreparedPair<'_> {
    pub fn means(&self) -> (Complex64, Complex64) {
        (self.mean_a, self.mean_b)
    }

    /// `<A(tau) B>` via `tr(e^{-(beta - tau) H} A e^{-tau H} B) / Z`.
    pub fn correlation(&self, tau: f64) -> Result<Complex64> {
        if !(0.0..=self.beta).contains(&tau) {
            return Err(invalid("tau", format!("must lie in [0, {}]", self.beta)));
        }
        let m1 = self.prop.left_block_mul(&self.prop.block_exps(self.beta - tau), &self.a_s);
        let m2 = self.prop.left_block_mul(&self.prop.block_exps(tau), &self.b_s);
        let tr: Complex64 = m1.iter().zip(m2.transpose().iter()).map(|(x, y)| x * y).sum();
        Ok(tr / self.z)
    }

    pub fn truncated(&self, tau: f64) -> Result<Complex64> {
        Ok(self.correlation(tau)? - self.mean_a * self.mean_b)
    }

    pub fn sweep(&self, taus: &[f64], exec: Execution) -> Result<Vec<CorrelationSample>> {
        par::map_slice(exec, taus, |&tau| {
            self.truncated(tau).map(|value| CorrelationSample {
                tau,
                value,
                beta: self.beta,
                which: Which::Thermal,
            })
        })
        .into_iter()
        .collect()
    }
}

/// `tr(e^{-beta H} A) / tr(e^{-beta H})`.
pub fn thermal_expectation(h: &FockMatrix, a: &CMatrix, beta: f64) -> Result<Complex64> {
    Propagator::new(h)?.thermal_expectation(a, beta)
}

/// `<A(tau) B> - <A><B>` with `A(tau) = e^{tau H} A e^{-tau H}`.
pub fn truncated(h: &FockMatrix, a: &CMatrix, b: &CMatrix, tau: f64, beta: f64) -> Result<Complex64> {
    Propagator::new(h)?.truncated(a, b, tau, beta)
}

/// Ground-state truncated correlation; the propagator's eigenvalues are already shifted so `E_0 = 0`.
pub fn truncated_ground(prop: &Propagator, a: &CMatrix, b: &CMatrix, tau: f64) -> Result<Complex64> {
    prop.truncated_ground(a, b, tau)
}

/// Ground-state samples on a grid of non-negative times.
pub fn ground_sweep(prop: &Propagator, a: &CMatrix, b: &CMatrix, taus: &[f64], exec: Execution) -> Result<Vec<CorrelationSample>> {
    par::map_slice(exec, taus, |&tau| {
        prop.truncated_ground(a, b, tau).map(|value| CorrelationSample {
            tau,
            value,
            beta: f64::INFINITY,
            which: Which::GroundLimit,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    /// Root-mean-square residual of the log fit.
    pub residual: f64,
    pub used: usize,
}

/// Least-squares fit of `ln |value| = ln P - rate * d(0, tau)` over samples with
/// `tau <= beta / 2` and `|value| > 1e-12`.
pub fn decay_fit(samples: &[CorrelationSample]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.value.norm() > 1e-12 && s.tau >= 0.0 && (s.beta.is_infinite() || s.tau <= s.beta / 2.0))
        .map(|s| {
            let d = if s.beta.is_finite() { time_distance(0.0, s.tau, s.beta) } else { s.tau };
            (d, s.value.norm().ln())
        })
        .collect();
    if pts.len() < 4 {
        return Err(Error::TooFewSamples(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("samples", "all times coincide"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - icept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit {
        rate: -slope,
        prefactor: icept.exp(),
        residual,
        used: pts.len(),
    })
}

/// Determinant constant of the covariance of a self-adjoint one-body operator.
pub const DELTA: f64 = 2.0;

/// `Standard` uses `alpha` and norms at `h = 1 + delta`; `Tilde` uses
/// `alpha / delta^2` and norms at `h = 2 delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    Standard,
    Tilde,
}

impl BoundVariant {
    pub fn weight(self) -> f64 {
        match self {
            BoundVariant::Standard => 1.0 + DELTA,
            BoundVariant::Tilde => 2.0 * DELTA,
        }
    }

    pub fn alpha(self, alpha: f64) -> f64 {
        match self {
            BoundVariant::Standard => alpha,
            BoundVariant::Tilde => alpha / (DELTA * DELTA),
        }
    }
}

/// Right-hand sides of the two decay bounds at one `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Rhs {
    /// Bound on `|<A(tau); B>|`.
    pub decay1: f64,
    /// Bound on the difference from the free value.
    pub decay2: f64,
}

/// `|||A||| ||B|| 2a / (1 - a ||V||) e^{-rho d(0,tau)}` and the same with the extra
/// `a ||V||`; `swapped` uses `||A|| |||B|||` instead.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_rhs(
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    v: &NormalOrderedOperator,
    alpha: f64,
    rho: f64,
    tau: f64,
    beta: f64,
    variant: BoundVariant,
    swapped: bool,
) -> Result<Theorem2Rhs> {
    let h = variant.weight();
    let al = variant.alpha(alpha);
    let nv = v.norm_local(h);
    let q = al * nv;
    if !(q < 1.0) {
        return Err(Error::Hypothesis(format!("alpha ||V||_{h} = {q} is not below 1")));
    }
    let norms = if swapped {
        a.norm_local(h) * b.norm_total(h)
    } else {
        a.norm_total(h) * b.norm_local(h)
    };
    let decay = (-rho * time_distance(0.0, tau, beta)).exp();
    let decay1 = norms * 2.0 * al / (1.0 - q) * decay;
    Ok(Theorem2Rhs {
        decay1,
        decay2: decay1 * al * nv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Row {
    pub tau: f64,
    pub value: Complex64,
    pub free_value: Complex64,
    /// `|<A(tau); B>_H|`
    pub lhs1: f64,
    /// `|<A(tau); B>_H - <A(tau); B>_{H_0}|`
    pub lhs2: f64,
    pub standard: Theorem2Rhs,
    pub swapped: Theorem2Rhs,
    /// Absent when the tilde hypothesis fails.
    pub tilde: Option<Theorem2Rhs>,
    pub tilde_swapped: Option<Theorem2Rhs>,
}

impl Theorem2Row {
    /// Largest `lhs / rhs` across every bound evaluated at this time.
    pub fn max_ratio(&self) -> f64 {
        let mut bounds = vec![self.standard, self.swapped];
        bounds.extend(self.tilde);
        bounds.extend(self.tilde_swapped);
        bounds
            .iter()
            .map(|r| ratio(self.lhs1, r.decay1).max(ratio(self.lhs2, r.decay2)))
            .fold(0.0, f64::max)
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 1e-13 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub g: Complex64,
    pub beta: f64,
    pub rho: f64,
    pub alpha: f64,
    /// `||V||_3` at coupling `g`.
    pub norm_v: f64,
    pub rows: Vec<Theorem2Row>,
    pub max_ratio: f64,
    pub holds: bool,
}

/// Evaluates both sides of the decay bounds at every `tau` of the grid.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_verify(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    taus: &[f64],
    beta: f64,
    rho: f64,
    exec: Execution,
) -> Result<Theorem2Report> {
    let alpha = CovarianceKernel::new(model.h0(), beta)?.alpha_rho(rho, exec)?.alpha;
    theorem2_verify_with_alpha(model, g, a, b, taus, beta, rho, alpha, exec)
}

/// As [`theorem2_verify`] with a precomputed `alpha_rho`.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_verify_with_alpha(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    taus: &[f64],
    beta: f64,
    rho: f64,
    alpha: f64,
    exec: Execution,
) -> Result<Theorem2Report> {
    let v = model.interaction(g);
    let a_f = fock::second_quantize(a, model.basis())?;
    let b_f = fock::second_quantize(b, model.basis())?;
    let prop = Propagator::from_model(model, g)?;
    let free = Propagator::from_model(model, c(0.0, 0.0))?;
    let pair = prop.pair(&a_f, &b_f, beta)?;
    let free_pair = free.pair(&a_f, &b_f, beta)?;
    let rows: Vec<Theorem2Row> = par::map_slice(exec, taus, |&tau| -> Result<Theorem2Row> {
        let value = pair.truncated(tau)?;
        let free_value = free_pair.truncated(tau)?;
        let rhs = |variant, swapped| theorem2_rhs(a, b, &v, alpha, rho, tau, beta, variant, swapped);
        Ok(Theorem2Row {
            tau,
            value,
            free_value,
            lhs1: value.norm(),
            lhs2: (value - free_value).norm(),
            standard: rhs(BoundVariant::Standard, false)?,
            swapped: rhs(BoundVariant::Standard, true)?,
            tilde: rhs(BoundVariant::Tilde, false).ok(),
            tilde_swapped: rhs(BoundVariant::Tilde, true).ok(),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let max_ratio = rows.iter().map(Theorem2Row::max_ratio).fold(0.0, f64::max);
    Ok(Theorem2Report {
        g,
        beta,
        rho,
        alpha,
        norm_v: v.norm_local(BoundVariant::Standard.weight()),
        rows,
        max_ratio,
        holds: max_ratio <= 1.0,
    })
}

/// Taylor coefficients of `g -> <A(tau); B>_{H_0 + g V}` at `g = 0` and root-test radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticityReport {
    pub contour_radius: f64,
    pub coefficients: Vec<Complex64>,
    /// `(|a_0| / |a_n|)^{1/n}` for each significant `n >= 1`.
    pub root_test: Vec<(usize, f64)>,
    /// Smallest root-test radius, infinite when every coefficient beyond `a_0` vanishes.
    pub radius_estimate: f64,
}

/// Taylor coefficients from the trapezoid rule on `|g| = contour_radius`:
/// `a_n = (1/M) sum_k f(r w^k) w^{-nk} / r^n`, `w = e^{2 pi i / M}`.
#[allow(clippy::too_many_arguments)]
pub fn analyticity(
    model: &Model,
    a: &CMatrix,
    b: &CMatrix,
    tau: f64,
    beta: f64,
    contour_radius: f64,
    points: usize,
    max_order: usize,
    exec: Execution,
) -> Result<AnalyticityReport> {
    if !(contour_radius > 0.0) || points <= 2 * max_order {
        return Err(invalid("contour", "need a positive radius and more than 2 * max_order points"));
    }
    let values: Vec<Complex64> = par::map_range(exec, points, |k| -> Result<Complex64> {
        let g = Complex64::from_polar(contour_radius, std::f64::consts::TAU * k as f64 / points as f64);
        Propagator::from_model(model, g)?.truncated(a, b, tau, beta)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let coefficients: Vec<Complex64> = (0..=max_order)
        .map(|n| {
            let s: Complex64 = values
                .iter()
                .enumerate()
                .map(|(k, f)| f * Complex64::from_polar(1.0, -std::f64::consts::TAU * (n * k) as f64 / points as f64))
                .sum();
            s / points as f64 / contour_radius.powi(n as i32)
        })
        .collect();
    let a0 = coefficients[0].norm();
    let floor = 1e-12 * values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let root_test: Vec<(usize, f64)> = coefficients
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(n, an)| an.norm() * contour_radius.powi(*n as i32) > floor)
        .map(|(n, an)| (n, (a0 / an.norm()).powf(1.0 / n as f64)))
        .collect();
    let radius_estimate = root_test.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(AnalyticityReport {
        contour_radius,
        coefficients,
        root_test,
        radius_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::fermi;
    use crate::fock::FockBasis;
    use crate::lattice::SiteGraph;
    use crate::normalorder::{self, density};
    use crate::onebody::OneBodyOperator;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn two_site(t: f64, eps: f64) -> OneBodyOperator {
        let graph = Arc::new(SiteGraph::complete(2).unwrap());
        let k = CMatrix::from_row_slice(2, 2, &[c(eps, 0.0), c(t, 0.0), c(t, 0.0), c(-eps, 0.0)]);
        OneBodyOperator::new(graph, k, true).unwrap()
    }

    fn brute_truncated(h: &CMatrix, a: &CMatrix, b: &CMatrix, tau: f64, beta: f64) -> Complex64 {
        let rho = (h * c(-beta, 0.0)).exp();
        let z = linalg::trace(&rho);
        let at = (h * c(tau, 0.0)).exp() * a * (h * c(-tau, 0.0)).exp();
        linalg::trace(&(&rho * at * b)) / z - linalg::trace(&(&rho * a)) / z * linalg::trace(&(&rho * b)) / z
    }

    #[test]
    fn identity_and_single_level() {
        let graph = Arc::new(SiteGraph::single_site());
        let h0 = OneBodyOperator::new(graph, CMatrix::from_element(1, 1, c(0.7, 0.0)), true).unwrap();
        let basis = FockBasis::new(1).unwrap();
        let h = fock::second_quantize_quadratic(&h0, &basis).unwrap();
        let id = CMatrix::identity(2, 2);
        assert_relative_eq!(thermal_expectation(&h, &id, 3.0).unwrap().re, 1.0, epsilon = 1e-14);
        let n = fock::number(&basis, 0);
        let expect = (-3.0f64 * 0.7).exp() / (1.0 + (-3.0f64 * 0.7).exp());
        assert_relative_eq!(thermal_expectation(&h, &n, 3.0).unwrap().re, expect, epsilon = 1e-14);
        assert_relative_eq!(expect, fermi(0.7, 3.0), epsilon = 1e-15);
        assert!(truncated(&h, &n, &id, 0.4, 3.0).unwrap().norm() < 1e-14);
    }

    #[test]
    fn matches_dense_exponentials_hermitian_and_not() {
        let model = crate::model::chain_model(4, 1.0, 0.6, 0.2).unwrap();
        let basis = model.basis();
        let a = fock::number(basis, 0) + fock::creation(basis, 1) * c(0.3, 0.1);
        let b = fock::annihilation(basis, 2) + fock::number(basis, 3);
        for g in [c(0.0, 0.0), c(0.3, 0.0), c(0.2, 0.15)] {
            let h = model.hamiltonian(g);
            let prop = Propagator::from_model(&model, g).unwrap();
            for tau in [0.0, 0.7, 1.9] {
                let got = prop.truncated(&a, &b, tau, 2.5).unwrap();
                let want = brute_truncated(&h, &a, &b, tau, 2.5);
                assert!((got - want).norm() < 1e-10, "g={g} tau={tau}: {got} vs {want}");
            }
            let e = prop.evolution(0.8);
            let direct = ((&h - CMatrix::identity(16, 16) * prop.shift()) * c(-0.8, 0.0)).exp();
            assert!(linalg::max_abs_diff(&e, &direct) < 1e-10);
        }
    }

    #[test]
    fn expectation_is_time_invariant_and_variance_positive() {
        let model = crate::model::chain_model(4, 1.0, 0.5, 0.0).unwrap();
        let prop = Propagator::from_model(&model, c(0.4, 0.0)).unwrap();
        let basis = model.basis();
        let a = fock::creation(basis, 0) + fock::number(basis, 1);
        let id = CMatrix::identity(16, 16);
        let mean = prop.thermal_expectation(&a, 2.0).unwrap();
        let pair = prop.pair(&a, &id, 2.0).unwrap();
        for tau in [0.0, 0.5, 1.5] {
            assert!((pair.correlation(tau).unwrap() - mean).norm() < 1e-12);
        }
        let var = prop.truncated(&a.adjoint(), &a, 0.0, 2.0).unwrap();
        assert!(var.im.abs() < 1e-12 && var.re >= 0.0);
    }

    #[test]
    fn free_two_point_function_is_the_covariance() {
        let h0 = two_site(0.8, 0.5);
        let beta = 3.0;
        let basis = FockBasis::new(2).unwrap();
        let h = fock::second_quantize_quadratic(&h0, &basis).unwrap();
        let cov = CovarianceKernel::new(&h0, beta).unwrap();
        let prop = Propagator::new(&h).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let pair = prop
                    .pair(&fock::creation(&basis, x), &fock::annihilation(&basis, y), beta)
                    .unwrap();
                for k in 0..8 {
                    let tau = beta * k as f64 / 8.0;
                    let got = pair.truncated(tau).unwrap();
                    assert!((got - cov.kernel(0.0, y, tau, x)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ground_limit_and_lemma_construction() {
        let model = crate::model::chain_model(4, 1.0, 0.8, 0.0).unwrap();
        let g = c(0.1, 0.0);
        let prop = Propagator::from_model(&model, g).unwrap();
        let basis = model.basis();
        let a = fock::number(basis, 0);
        let b = fock::number(basis, 2) + fock::number(basis, 0);
        let core = spectra::gap_and_simplicity(prop.eigensystem()).unwrap();
        let beta = 40.0 / core.gap;
        for tau in [0.0, 0.5, 2.0] {
            let ground = prop.truncated_ground(&a, &b, tau).unwrap();
            let thermal = prop.truncated(&a, &b, tau, beta).unwrap();
            assert!((ground - thermal).norm() < 1e-6);
        }
        let id = CMatrix::identity(16, 16);
        assert!(prop.truncated_ground(&id, &b, 0.3).unwrap().norm() < 1e-12);
        assert!(prop.truncated_ground(&a, &id, 0.3).unwrap().norm() < 1e-12);

        // A = |r_0><l_j|, B = |r_j><l_0| isolates a single excited level
        let eig = prop.eigensystem();
        let (l0, r0) = eig.ground().factors();
        let j = eig.clusters.iter().position(|cl| cl.multiplicity == 1 && cl.value.re > eig.ground().value.re).unwrap();
        let (lj, rj) = eig.clusters[j].factors();
        let a_j = l0 * rj;
        let b_j = lj * r0;
        let ej = eig.clusters[j].value - eig.ground().value;
        for tau in [0.0, 0.3, 1.1] {
            let v = prop.truncated_ground(&a_j, &b_j, tau).unwrap();
            assert!((v - (-ej * tau).exp()).norm() < 1e-10);
        }
    }

    #[test]
    fn degenerate_ground_is_rejected() {
        let h0 = two_site(0.0, 0.0);
        let basis = FockBasis::new(2).unwrap();
        let h = fock::second_quantize_quadratic(&h0, &basis).unwrap();
        let prop = Propagator::new(&h).unwrap();
        let n = fock::number(&basis, 0);
        assert!(prop.truncated_ground(&n, &n, 0.1).is_err());
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let samples: Vec<CorrelationSample> = (0..20)
            .map(|k| {
                let tau = k as f64 * 0.2;
                CorrelationSample {
                    tau,
                    value: c(3.0 * (-2.0 * tau).exp(), 0.0),
                    beta: 10.0,
                    which: Which::Thermal,
                }
            })
            .collect();
        let fit = decay_fit(&samples).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!((fit.prefactor - 3.0).abs() < 1e-6);
        assert!(decay_fit(&samples[..3]).is_err());
    }

    #[test]
    fn free_chain_decay_rate() {
        let model = crate::model::chain_model(4, 1.0, 0.7, 0.0).unwrap();
        let rho = model.one_body_gap().unwrap();
        let basis = model.basis();
        let prop = Propagator::from_model(&model, c(0.0, 0.0)).unwrap();
        let a = fock::creation(basis, 0);
        let b = fock::annihilation(basis, 0);
        let beta = 40.0 / rho;
        let taus: Vec<f64> = (0..32).map(|k| beta / 2.0 * k as f64 / 32.0).collect();
        let s = prop.pair(&a, &b, beta).unwrap().sweep(&taus, Execution::Sequential).unwrap();
        let fit = decay_fit(&s).unwrap();
        assert!(fit.rate >= rho - 0.05, "{fit:?} rho={rho}");
    }

    #[test]
    fn rhs_vanishes_without_interaction() {
        let model = crate::model::chain_model(4, 1.0, 0.8, 0.0).unwrap();
        let graph = model.graph().clone();
        let n0 = density(graph.clone(), 0).unwrap();
        let report = theorem2_verify(
            &model,
            c(0.0, 0.0),
            &n0,
            &n0,
            &[0.0, 0.5, 1.0],
            4.0,
            0.4,
            Execution::Sequential,
        )
        .unwrap();
        for row in &report.rows {
            assert_eq!(row.standard.decay2, 0.0);
            assert!(row.lhs2 < 1e-13);
        }
        assert!(report.holds);
        let v = normalorder::density_density(graph.clone(), &normalorder::nearest_neighbour_kernel(&graph), c(1.0, 0.0)).unwrap();
        assert!(theorem2_rhs(&n0, &n0, &v, 1.0, 0.1, 0.0, 1.0, BoundVariant::Standard, false).is_err());
        let tilde = theorem2_rhs(&n0, &n0, &v.scale(c(1e-4, 0.0)), 1.0, 0.1, 0.5, 1.0, BoundVariant::Tilde, false).unwrap();
        let std = theorem2_rhs(&n0, &n0, &v.scale(c(1e-4, 0.0)), 1.0, 0.1, 0.5, 1.0, BoundVariant::Standard, false).unwrap();
        assert!(tilde.decay1 > 0.0 && std.decay1 > 0.0);
    }

    #[test]
    fn taylor_coefficients_of_a_known_function() {
        // at g = 0 on the free model with V = 0 the function is constant in g
        let graph = Arc::new(crate::lattice::ring(3).unwrap());
        let h0 = crate::onebody::build_hopping(
            graph.clone(),
            &crate::onebody::HoppingSpec::new(crate::onebody::HoppingProfile::nearest_neighbour(1.0)),
        )
        .unwrap();
        let v = normalorder::density_density(graph.clone(), &normalorder::nearest_neighbour_kernel(&graph), c(1.0, 0.0)).unwrap();
        let model = Model::new(h0, v).unwrap();
        let basis = model.basis();
        let n0 = fock::number(basis, 0);
        let rep = analyticity(&model, &n0, &n0, 0.3, 2.0, 0.05, 32, 6, Execution::Sequential).unwrap();
        let direct0 = Propagator::from_model(&model, c(0.0, 0.0)).unwrap().truncated(&n0, &n0, 0.3, 2.0).unwrap();
        assert!((rep.coefficients[0] - direct0).norm() < 1e-12);
        let h = 1e-4;
        let fp = Propagator::from_model(&model, c(h, 0.0)).unwrap().truncated(&n0, &n0, 0.3, 2.0).unwrap();
        let fm = Propagator::from_model(&model, c(-h, 0.0)).unwrap().truncated(&n0, &n0, 0.3, 2.0).unwrap();
        assert!((rep.coefficients[1] - (fp - fm) / (2.0 * h)).norm() < 1e-6);
        assert!(rep.radius_estimate > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn truncation_kills_identity(seed in 0u64..1000, tau in 0.0f64..2.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let model = crate::model::chain_model(3, 1.0, 0.5, 0.0).unwrap();
            let g = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2));
            let prop = Propagator::from_model(&model, g).unwrap();
            let a = CMatrix::from_fn(8, 8, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let id = CMatrix::identity(8, 8);
            prop_assert!(prop.truncated(&a, &id, tau, 2.0).unwrap().norm() < 1e-11);
            prop_assert!(prop.truncated(&id, &a, tau, 2.0).unwrap().norm() < 1e-11);
        }
    }
}
