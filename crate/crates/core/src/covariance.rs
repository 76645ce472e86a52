//! The fermionic covariance of a one-body Hamiltonian and its decay constants.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{time_distance, SiteGraph};
use crate::linalg::{self, c, CMatrix, ZERO};
use crate::onebody::{OneBodyOperator, OneBodySpectrum};
use crate::par::Execution;
use crate::quadrature;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fermi function `(1 + e^{beta E})^{-1}`.
pub fn fermi(e: f64, beta: f64) -> f64 {
    (-softplus(beta * e)).exp()
}

/// `1_{tau<=0} f(E) e^{-tau E} - 1_{tau>0} f(-E) e^{-tau E}`, evaluated in log space.
pub fn scalar_cov(tau: f64, e: f64, beta: f64) -> f64 {
    if tau <= 0.0 {
        (-softplus(beta * e) - tau * e).exp()
    } else {
        -(-softplus(-beta * e) - tau * e).exp()
    }
}

/// Reduces `tau` into `(-beta, beta]` by the antiperiodicity of the covariance,
/// returning the reduced time and the accumulated sign.
pub fn reduce_time(tau: f64, beta: f64) -> (f64, f64) {
    let mut t = tau;
    let mut sign = 1.0;
    while t > beta {
        t -= beta;
        sign = -sign;
    }
    while t <= -beta {
        t += beta;
        sign = -sign;
    }
    (t, sign)
}

/// Evaluator of `C(tau,x;tau',x') = C(tau - tau', h)_{x,x'}`.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    spectrum: OneBodySpectrum,
    graph: Arc<SiteGraph>,
    beta: f64,
}

impl CovarianceKernel {
    pub fn new(h: &OneBodyOperator, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", "must be positive and finite"));
        }
        Ok(CovarianceKernel {
            spectrum: h.spectrum()?.clone(),
            graph: h.graph().clone(),
            beta,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn graph(&self) -> &Arc<SiteGraph> {
        &self.graph
    }

    pub fn spectrum(&self) -> &OneBodySpectrum {
        &self.spectrum
    }

    pub fn n_sites(&self) -> usize {
        self.spectrum.dim()
    }

    /// `C(tau,x;tau',x')`. Time differences outside `(-beta, beta]` are folded back
    /// antiperiodically.
    pub fn kernel(&self, tau: f64, x: usize, tau_prime: f64, x_prime: usize) -> Complex64 {
        let (u, sign) = reduce_time(tau - tau_prime, self.beta);
        let mut acc = ZERO;
        for (k, &e) in self.spectrum.eigenvalues.iter().enumerate() {
            acc += self.spectrum.vector(k, x)
                * self.spectrum.vector(k, x_prime).conj()
                * scalar_cov(u, e, self.beta);
        }
        acc * sign
    }

    /// The full matrix `C(u, h)` for a time difference `u`.
    pub fn matrix(&self, u: f64) -> CMatrix {
        let (u, sign) = reduce_time(u, self.beta);
        let v = &self.spectrum.eigenvectors;
        let mut scaled = v.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            let s = sign * scalar_cov(u, self.spectrum.eigenvalues[k], self.beta);
            col.iter_mut().for_each(|z| *z *= s);
        }
        scaled * v.adjoint()
    }

    /// Computes `alpha_rho^±`.
    ///
    /// `C` depends on `tau - tau'` only and the time metric is translation invariant,
    /// so the supremum over `tau` is attained at every `tau`; the integral runs over
    /// `u = tau - tau'` in `[-beta, beta]` with panel breaks at the jump `u = 0` and at
    /// the kinks `u = ±beta/2` of `d(0, u)`.
    pub fn alpha_rho(&self, rho: f64, exec: Execution) -> Result<AlphaReport> {
        self.alpha_rho_with(rho, exec, &AlphaQuadrature::default())
    }

    pub fn alpha_rho_with(
        &self,
        rho: f64,
        exec: Execution,
        q: &AlphaQuadrature,
    ) -> Result<AlphaReport> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(invalid("rho", "must be non-negative"));
        }
        let n = self.n_sites();
        let beta = self.beta;
        let breaks = [-beta, -beta / 2.0, 0.0, beta / 2.0, beta];
        let integral = quadrature::integrate_vec(
            exec,
            &breaks,
            q.order,
            q.initial_subpanels,
            q.max_subpanels,
            q.rel_tol,
            |u| {
                // left-continuous at the jump: the node set never contains u = 0 exactly
                let m = self.matrix(u);
                let weight = (rho * time_distance(0.0, u, beta)).exp();
                let mut out = vec![0.0; 2 * n];
                for x in 0..n {
                    for y in 0..n {
                        let a = m[(x, y)].norm() * weight;
                        out[x] += a;
                        out[n + y] += a;
                    }
                }
                out
            },
        );
        let alpha_plus = integral.values[..n].iter().cloned().fold(0.0, f64::max);
        let alpha_minus = integral.values[n..].iter().cloned().fold(0.0, f64::max);
        Ok(AlphaReport {
            rho,
            alpha_plus,
            alpha_minus,
            alpha: alpha_plus.max(alpha_minus),
            beta,
            quadrature_error_estimate: integral.error,
            converged: integral.converged,
        })
    }
}

/// Quadrature controls for [`CovarianceKernel::alpha_rho_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaQuadrature {
    pub order: usize,
    pub initial_subpanels: usize,
    pub max_subpanels: usize,
    pub rel_tol: f64,
}

impl Default for AlphaQuadrature {
    fn default() -> Self {
        AlphaQuadrature {
            order: 16,
            initial_subpanels: 4,
            max_subpanels: 512,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub rho: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub alpha: f64,
    pub beta: f64,
    pub quadrature_error_estimate: f64,
    /// False when the last panel doubling changed the result by more than the tolerance.
    pub converged: bool,
}

/// `alpha_rho` at `beta` and `2 beta`; a relative change above `tol` signals that
/// `rho` is not below the decay rate set by the one-body gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub alpha_beta: f64,
    pub alpha_2beta: f64,
    pub relative_change: f64,
    pub saturated: bool,
}

pub fn alpha_saturation(
    h: &OneBodyOperator,
    rho: f64,
    beta: f64,
    tol: f64,
    exec: Execution,
) -> Result<SaturationReport> {
    let a1 = CovarianceKernel::new(h, beta)?.alpha_rho(rho, exec)?.alpha;
    let a2 = CovarianceKernel::new(h, 2.0 * beta)?.alpha_rho(rho, exec)?.alpha;
    let relative_change = (a2 - a1).abs() / a1;
    Ok(SaturationReport {
        alpha_beta: a1,
        alpha_2beta: a2,
        relative_change,
        saturated: relative_change < tol,
    })
}

/// Closed form of `alpha_0` for a single level at energy `e`: `2 tanh(beta |e| / 2) / |e|`.
pub fn single_level_alpha0(e: f64, beta: f64) -> f64 {
    if e == 0.0 {
        return 2.0 * beta / 2.0;
    }
    2.0 * (beta * e.abs() / 2.0).tanh() / e.abs()
}

/// One determinant-bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetSample {
    pub abs_det: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Vertex data for a determinant sample: `q_bar[mu]`, `q[mu]` index the vertex of each
/// row / column, `times[vertex]` its time and `y_bar`, `y` the sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DetInput {
    pub m: CMatrix,
    pub times: Vec<f64>,
    pub q_bar: Vec<usize>,
    pub y_bar: Vec<usize>,
    pub q: Vec<usize>,
    pub y: Vec<usize>,
}

fn check_gram(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid("M", "must be square"));
    }
    if linalg::hermiticity_defect(m) > 1e-12 {
        return Err(Error::NotCorrelationMatrix("not Hermitian".into()));
    }
    for i in 0..m.nrows() {
        if (m[(i, i)] - c(1.0, 0.0)).norm() > 1e-12 {
            return Err(Error::NotCorrelationMatrix(format!("diagonal entry {i} is not 1")));
        }
    }
    if linalg::hermitian_eigenvalues(m).first().is_some_and(|&e| e < -1e-12) {
        return Err(Error::NotCorrelationMatrix("negative eigenvalue".into()));
    }
    Ok(())
}

/// `|det Gamma|` with `Gamma_{mu_bar, mu} = M_{q(mu_bar), q(mu)} C(tau_q(mu_bar), y_mu_bar; tau_q(mu), y_mu)`,
/// against the bound `2^{nu_bar + nu}`. The determinant is zero when the sizes differ.
pub fn det_bound_sample(cov: &CovarianceKernel, input: &DetInput) -> Result<DetSample> {
    check_gram(&input.m)?;
    let p = input.m.nrows();
    if input.times.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: input.times.len(),
        });
    }
    if input.q_bar.len() != input.y_bar.len() || input.q.len() != input.y.len() {
        return Err(invalid("det input", "vertex and site lists differ in length"));
    }
    let n = cov.n_sites();
    if input.q_bar.iter().chain(&input.q).any(|&v| v >= p)
        || input.y_bar.iter().chain(&input.y).any(|&s| s >= n)
    {
        return Err(invalid("det input", "vertex or site index out of range"));
    }
    let (nb, nu) = (input.q_bar.len(), input.q.len());
    let bound = 2f64.powi((nb + nu) as i32);
    if nb != nu {
        return Ok(DetSample {
            abs_det: 0.0,
            bound,
            pass: true,
        });
    }
    let gamma = CMatrix::from_fn(nb, nu, |i, j| {
        let (a, b) = (input.q_bar[i], input.q[j]);
        input.m[(a, b)] * cov.kernel(input.times[a], input.y_bar[i], input.times[b], input.y[j])
    });
    let abs_det = linalg::determinant(&gamma).norm();
    Ok(DetSample {
        abs_det,
        bound,
        pass: abs_det <= bound,
    })
}

/// Random determinant-bound input: `vertices` vertices with uniform times in
/// `[0, beta)`, `M` the Gram matrix of random complex unit vectors, uniform sites
/// and vertex assignments.
pub fn random_det_input<R: Rng>(
    cov: &CovarianceKernel,
    nu_bar: usize,
    nu: usize,
    vertices: usize,
    rng: &mut R,
) -> DetInput {
    let p = vertices.max(1);
    let dim = p.max(2);
    let vecs: Vec<Vec<Complex64>> = (0..p)
        .map(|_| {
            let v: Vec<Complex64> = (0..dim)
                .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / norm).collect()
        })
        .collect();
    let mut m = CMatrix::from_fn(p, p, |i, j| {
        vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a.conj() * b).sum()
    });
    for i in 0..p {
        m[(i, i)] = c(1.0, 0.0);
    }
    let n = cov.n_sites();
    let beta = cov.beta();
    DetInput {
        m,
        times: (0..p).map(|_| rng.gen_range(0.0..beta)).collect(),
        q_bar: (0..nu_bar).map(|_| rng.gen_range(0..p)).collect(),
        y_bar: (0..nu_bar).map(|_| rng.gen_range(0..n)).collect(),
        q: (0..nu).map(|_| rng.gen_range(0..p)).collect(),
        y: (0..nu).map(|_| rng.gen_range(0..n)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ring;
    use crate::onebody::{build_hopping, HoppingProfile, HoppingSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(e: f64) -> OneBodyOperator {
        OneBodyOperator::new(
            Arc::new(SiteGraph::single_site()),
            CMatrix::from_element(1, 1, c(e, 0.0)),
            true,
        )
        .unwrap()
    }

    fn gapped_chain(l: usize) -> OneBodyOperator {
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(0.4));
        spec.staggered = 1.0;
        build_hopping(Arc::new(ring(l).unwrap()), &spec).unwrap()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(scalar_cov(0.0, 0.0, 3.0), 0.5);
        let (e, b, t) = (0.7, 2.0, -0.4);
        assert_relative_eq!(scalar_cov(t, e, b), (-t * e).exp() / (1.0 + (b * e).exp()), epsilon = 1e-15);
        assert_relative_eq!(fermi(0.3, 2.0) * (2.0 * 0.3f64).exp(), fermi(-0.3, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn antiperiodic_and_bounded_on_grid() {
        let beta = 3.0;
        for i in 1..=30 {
            let tau = beta * i as f64 / 30.0;
            for e in [-200.0, -5.0, -0.3, 0.0, 0.3, 5.0, 200.0] {
                let a = scalar_cov(tau - beta, e, beta);
                let b = scalar_cov(tau, e, beta);
                assert!((a + b).abs() <= 1e-14 * (1.0 + a.abs()), "tau={tau} e={e}");
            }
        }
        for beta in [1.0, 10.0, 100.0] {
            for i in -40..=40 {
                let tau = beta * i as f64 / 40.0;
                for e in [-7.0, -0.01, 0.0, 0.01, 7.0] {
                    let v = scalar_cov(tau, e, beta);
                    assert!(v.is_finite() && v.abs() <= 1.0, "{tau} {e} {beta}");
                }
            }
        }
    }

    #[test]
    fn kernel_examples() {
        let k = CovarianceKernel::new(&single(0.8), 2.0).unwrap();
        assert_relative_eq!(k.kernel(0.5, 0, 0.5, 0).re, fermi(0.8, 2.0), epsilon = 1e-15);
        let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(0.0));
        spec.staggered = 1.0;
        let h = build_hopping(Arc::new(ring(4).unwrap()), &spec).unwrap();
        let k = CovarianceKernel::new(&h, 2.0).unwrap();
        assert_eq!(k.kernel(0.3, 0, 0.1, 1), ZERO);
    }

    #[test]
    fn kernel_matches_matrix_function() {
        let h = gapped_chain(6);
        let beta = 4.0;
        let k = CovarianceKernel::new(&h, beta).unwrap();
        // independent oracle: C(u) = -f(-h) e^{-u h} for u > 0 via the Hermitian functional calculus
        let eig = linalg::hermitian_eigen(h.kernel());
        for &u in &[0.3, 1.7, 3.9] {
            let direct = linalg::hermitian_function(&eig, |e| c(-fermi(-e, beta) * (-u * e).exp(), 0.0));
            assert!(linalg::max_abs_diff(&direct, &k.matrix(u)) < 1e-12);
            let direct = linalg::hermitian_function(&eig, |e| c(fermi(e, beta) * (u * e).exp(), 0.0));
            assert!(linalg::max_abs_diff(&direct, &k.matrix(-u)) < 1e-12);
            assert!((k.kernel(u, 1, 0.0, 4) - k.matrix(u)[(1, 4)]).norm() < 1e-13);
        }
    }

    #[test]
    fn alpha_single_level_closed_form() {
        for (e, beta) in [(1.0, 30.0), (0.5, 8.0), (-2.0, 5.0)] {
            let k = CovarianceKernel::new(&single(e), beta).unwrap();
            let r = k.alpha_rho(0.0, Execution::Sequential).unwrap();
            assert!(r.converged);
            assert_relative_eq!(r.alpha, single_level_alpha0(e, beta), max_relative = 1e-8);
            assert_eq!(r.alpha, r.alpha_plus.max(r.alpha_minus));
        }
    }

    #[test]
    fn alpha_monotone_in_rho_and_saturates() {
        let h = gapped_chain(6);
        let gap = crate::onebody::one_body_gap(h.spectrum().unwrap());
        let k = CovarianceKernel::new(&h, 20.0 / gap).unwrap();
        let mut last = 0.0;
        for rho in [0.0, 0.1, 0.3, 0.5] {
            let a = k.alpha_rho(rho * gap, Execution::Parallel).unwrap().alpha;
            assert!(a >= last);
            last = a;
        }
        let s = alpha_saturation(&h, 0.5 * gap, 20.0 / gap, 1e-2, Execution::Parallel).unwrap();
        assert!(s.saturated, "{s:?}");
        // above the gap the weight outgrows the covariance and alpha keeps growing with beta
        let s = alpha_saturation(&h, 1.2 * gap, 20.0 / gap, 1e-2, Execution::Parallel).unwrap();
        assert!(!s.saturated && s.alpha_2beta > s.alpha_beta);
    }

    #[test]
    fn det_bound_examples() {
        let h = gapped_chain(6);
        let k = CovarianceKernel::new(&h, 5.0).unwrap();
        let one = DetInput {
            m: CMatrix::identity(1, 1),
            times: vec![1.0],
            q_bar: vec![0],
            y_bar: vec![2],
            q: vec![0],
            y: vec![3],
        };
        let s = det_bound_sample(&k, &one).unwrap();
        assert!(s.pass && s.abs_det <= 1.0 && s.bound == 4.0);
        let unbalanced = DetInput {
            q_bar: vec![0, 0],
            y_bar: vec![1, 2],
            ..one.clone()
        };
        assert_eq!(det_bound_sample(&k, &unbalanced).unwrap().abs_det, 0.0);
        let bad = DetInput {
            m: CMatrix::from_element(1, 1, c(2.0, 0.0)),
            ..one
        };
        assert!(det_bound_sample(&k, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn det_bound_never_violated(seed in 0u64..u64::MAX, size in 2usize..=6) {
            let h = gapped_chain(6);
            let k = CovarianceKernel::new(&h, 7.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vertices = rng.gen_range(1..=size);
            let input = random_det_input(&k, size, size, vertices, &mut rng);
            let s = det_bound_sample(&k, &input).unwrap();
            prop_assert!(s.pass, "{s:?}");
        }
    }
}
