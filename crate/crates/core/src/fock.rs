//! Fermionic Fock space on occupation bitstrings.
//!
//! Basis state `s` has site `x` occupied when bit `x` is set. `c+_x` flips bit `x` with
//! the sign `(-1)^{#occupied sites below x}`, so `c+_{x_1} .. c+_{x_k} |0>` with
//! `x_1 < .. < x_k` is the bitstring with sign `+1`.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{c, CMatrix, CVector, ONE, ZERO};
use crate::normalorder::{mask_sites, NormalOrderedOperator, SetForm};
use crate::onebody::OneBodyOperator;
use crate::par::{self, Execution};

/// Largest site count for dense Fock matrices.
pub const DENSE_LIMIT: usize = 12;
/// Largest site count for matrix-free application.
pub const SPARSE_LIMIT: usize = 14;

/// Dense operator on the `2^n`-dimensional Fock space.
pub type FockMatrix = CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockBasis {
    n_sites: usize,
}

impl FockBasis {
    /// Basis for dense matrices (`n <= 12`).
    pub fn new(n_sites: usize) -> Result<Self> {
        Self::with_limit(n_sites, DENSE_LIMIT)
    }

    /// Basis for matrix-free products (`n <= 14`).
    pub fn sparse(n_sites: usize) -> Result<Self> {
        Self::with_limit(n_sites, SPARSE_LIMIT)
    }

    fn with_limit(n_sites: usize, limit: usize) -> Result<Self> {
        if n_sites > limit {
            return Err(Error::DimensionGuard {
                sites: n_sites,
                limit,
            });
        }
        Ok(FockBasis { n_sites })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }
}

/// `c+_x |s>` as `(sign, state)`, or `None` if `x` is occupied.
#[inline]
pub fn create(x: usize, s: u64) -> Option<(f64, u64)> {
    if s >> x & 1 == 1 {
        return None;
    }
    Some((below_sign(x, s), s | 1 << x))
}

/// `c-_x |s>` as `(sign, state)`, or `None` if `x` is empty.
#[inline]
pub fn annihilate(x: usize, s: u64) -> Option<(f64, u64)> {
    if s >> x & 1 == 0 {
        return None;
    }
    Some((below_sign(x, s), s & !(1 << x)))
}

#[inline]
fn below_sign(x: usize, s: u64) -> f64 {
    if (s & ((1u64 << x) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `c+_{M asc} c-_{N asc} |s>` for bit masks `M`, `N`.
pub fn apply_set_monomial(bar: &[usize], unbar: &[usize], s: u64) -> Option<(f64, u64)> {
    let mut sign = 1.0;
    let mut state = s;
    for &x in unbar.iter().rev() {
        let (sg, st) = annihilate(x, state)?;
        sign *= sg;
        state = st;
    }
    for &x in bar.iter().rev() {
        let (sg, st) = create(x, state)?;
        sign *= sg;
        state = st;
    }
    Some((sign, state))
}

fn single(basis: &FockBasis, x: usize, raise: bool) -> FockMatrix {
    let d = basis.dim();
    let mut m = FockMatrix::zeros(d, d);
    for s in 0..d as u64 {
        let r = if raise { create(x, s) } else { annihilate(x, s) };
        if let Some((sign, t)) = r {
            m[(t as usize, s as usize)] = c(sign, 0.0);
        }
    }
    m
}

pub fn creation(basis: &FockBasis, x: usize) -> FockMatrix {
    single(basis, x, true)
}

pub fn annihilation(basis: &FockBasis, x: usize) -> FockMatrix {
    single(basis, x, false)
}

/// `(c+_x, c-_x)` for every site.
pub fn car_ops(basis: &FockBasis) -> (Vec<FockMatrix>, Vec<FockMatrix>) {
    let n = basis.n_sites();
    (
        (0..n).map(|x| creation(basis, x)).collect(),
        (0..n).map(|x| annihilation(basis, x)).collect(),
    )
}

/// `n_x`.
pub fn number(basis: &FockBasis, x: usize) -> FockMatrix {
    let d = basis.dim();
    FockMatrix::from_fn(d, d, |i, j| {
        if i == j && i >> x & 1 == 1 {
            ONE
        } else {
            ZERO
        }
    })
}

/// `(-1)^{N}`.
pub fn parity(basis: &FockBasis) -> FockMatrix {
    let d = basis.dim();
    FockMatrix::from_fn(d, d, |i, j| {
        if i != j {
            ZERO
        } else if i.count_ones() % 2 == 0 {
            ONE
        } else {
            -ONE
        }
    })
}

fn check_sites(basis: &FockBasis, n: usize) -> Result<()> {
    if basis.n_sites() != n {
        return Err(Error::DimensionMismatch {
            expected: basis.n_sites(),
            found: n,
        });
    }
    Ok(())
}

/// `H_0 = sum h(x,x') c+_x c-_x'`.
pub fn second_quantize_quadratic(h: &OneBodyOperator, basis: &FockBasis) -> Result<FockMatrix> {
    check_sites(basis, h.n_sites())?;
    let n = h.n_sites();
    let d = basis.dim();
    let mut m = FockMatrix::zeros(d, d);
    for s in 0..d as u64 {
        for y in 0..n {
            let Some((s1, t1)) = annihilate(y, s) else { continue };
            for x in 0..n {
                let hxy = h.kernel()[(x, y)];
                if hxy == ZERO {
                    continue;
                }
                if let Some((s2, t2)) = create(x, t1) {
                    m[(t2 as usize, s as usize)] += hxy * (s1 * s2);
                }
            }
        }
    }
    Ok(m)
}

/// Sparse bit-kernel representation of `N(A)`: one `(bar, unbar, weight)` term per set pair.
#[derive(Debug, Clone)]
pub struct FockTerms {
    n_sites: usize,
    terms: Vec<(Vec<usize>, Vec<usize>, Complex64)>,
}

impl FockTerms {
    pub fn new(op: &NormalOrderedOperator) -> Result<Self> {
        let w = op.to_set_form()?;
        Ok(Self::from_set_form(op.n_sites(), &w))
    }

    pub fn from_set_form(n_sites: usize, w: &SetForm) -> Self {
        FockTerms {
            n_sites,
            terms: w
                .iter()
                .map(|(&(m, n), &v)| (mask_sites(m), mask_sites(n), v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `N(A) v` without forming the matrix.
    pub fn apply(&self, basis: &FockBasis, v: &CVector) -> Result<CVector> {
        check_sites(basis, self.n_sites)?;
        let d = basis.dim();
        let mut out = CVector::zeros(d);
        for s in 0..d {
            if v[s] == ZERO {
                continue;
            }
            for (bar, unbar, w) in &self.terms {
                if let Some((sign, t)) = apply_set_monomial(bar, unbar, s as u64) {
                    out[t as usize] += w * v[s] * sign;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self, basis: &FockBasis, exec: Execution) -> Result<FockMatrix> {
        check_sites(basis, self.n_sites)?;
        if basis.n_sites() > DENSE_LIMIT {
            return Err(Error::DimensionGuard {
                sites: basis.n_sites(),
                limit: DENSE_LIMIT,
            });
        }
        let d = basis.dim();
        let cols = par::map_range(exec, d, |s| {
            let mut col: Vec<(usize, Complex64)> = Vec::new();
            for (bar, unbar, w) in &self.terms {
                if let Some((sign, t)) = apply_set_monomial(bar, unbar, s as u64) {
                    col.push((t as usize, w * sign));
                }
            }
            col
        });
        let mut m = FockMatrix::zeros(d, d);
        for (s, col) in cols.into_iter().enumerate() {
            for (t, v) in col {
                m[(t, s)] += v;
            }
        }
        Ok(m)
    }
}

/// `N(A)` as a dense Fock matrix.
pub fn second_quantize(op: &NormalOrderedOperator, basis: &FockBasis) -> Result<FockMatrix> {
    check_sites(basis, op.n_sites())?;
    FockTerms::new(op)?.to_dense(basis, Execution::Parallel)
}

/// The unique normal-ordered family with `N(extract(A)) = A`, including `a_{0,0}`.
///
/// Works on the set form: with `|S> = c+_{S asc} |0>`,
/// `<S|A|T> = sum_{R subset of S and T} w_{S\R, T\R} <S| c+_{S\R} c-_{T\R} |T>`,
/// so `w_{S,T}` follows recursively from smaller pairs.
pub fn normal_order_extract(
    a: &FockMatrix,
    graph: std::sync::Arc<crate::lattice::SiteGraph>,
    max_grade: (usize, usize),
) -> Result<NormalOrderedOperator> {
    let n = graph.n_sites();
    let basis = FockBasis::new(n)?;
    let d = basis.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.nrows(),
        });
    }
    let element = |s: u64, t: u64, m: u64, nn: u64| -> f64 {
        // <S| c+_M c-_N |T>
        match apply_set_monomial(&mask_sites(m), &mask_sites(nn), t) {
            Some((sign, st)) if st == s => sign,
            _ => 0.0,
        }
    };
    let mut pairs: Vec<(u64, u64)> = (0..d as u64)
        .flat_map(|s| (0..d as u64).map(move |t| (s, t)))
        .collect();
    pairs.sort_by_key(|&(s, t)| (s & t).count_ones());
    let mut w: HashMap<(u64, u64), Complex64> = HashMap::with_capacity(pairs.len());
    for (s, t) in pairs {
        let common = s & t;
        let mut acc = a[(s as usize, t as usize)];
        // proper nonempty subsets R of S and T, enumerated as submasks of `common`
        let mut r = common;
        while r != 0 {
            if let Some(&wr) = w.get(&(s & !r, t & !r)) {
                if wr != ZERO {
                    acc -= wr * element(s, t, s & !r, t & !r);
                }
            }
            r = (r - 1) & common;
        }
        let diag = element(s, t, s, t);
        let val = acc / diag;
        if val.norm() > 0.0 {
            w.insert((s, t), val);
        }
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let set: SetForm = w
        .into_iter()
        .filter(|(_, v)| v.norm() > 1e-14 * scale.max(1.0))
        .collect();
    NormalOrderedOperator::from_set_form(graph, &set, max_grade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ring, SiteGraph};
    use crate::linalg;
    use crate::normalorder::{self, density_density, nearest_neighbour_kernel, CoeffTensor};
    use crate::onebody::{build_hopping, HoppingProfile, HoppingSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn anti(a: &FockMatrix, b: &FockMatrix) -> FockMatrix {
        a * b + b * a
    }

    #[test]
    fn car_relations_exact() {
        let basis = FockBasis::new(4).unwrap();
        let (cp, cm) = car_ops(&basis);
        let id = FockMatrix::identity(16, 16);
        let zero = FockMatrix::zeros(16, 16);
        for x in 0..4 {
            for y in 0..4 {
                assert_eq!(anti(&cp[x], &cm[y]), if x == y { id.clone() } else { zero.clone() });
                assert_eq!(anti(&cp[x], &cp[y]), zero);
                assert_eq!(anti(&cm[x], &cm[y]), zero);
            }
            assert_eq!(&cp[x] * &cp[x], zero);
            assert_eq!(cm[x], cp[x].adjoint());
        }
        let b1 = FockBasis::new(1).unwrap();
        let n = creation(&b1, 0) * annihilation(&b1, 0);
        assert_eq!(n, FockMatrix::from_diagonal(&CVector::from_vec(vec![ZERO, ONE])));
        assert!(FockBasis::new(13).is_err());
        assert!(FockBasis::sparse(14).is_ok());
    }

    #[test]
    fn quadratic_examples() {
        let g1 = Arc::new(SiteGraph::single_site());
        let h = OneBodyOperator::new(g1, CMatrix::from_element(1, 1, c(0.7, 0.0)), true).unwrap();
        let m = second_quantize_quadratic(&h, &FockBasis::new(1).unwrap()).unwrap();
        assert_eq!(m, FockMatrix::from_diagonal(&CVector::from_vec(vec![ZERO, c(0.7, 0.0)])));
        let h = build_hopping(Arc::new(ring(2).unwrap()), &HoppingSpec::new(HoppingProfile::nearest_neighbour(1.0))).unwrap();
        let m = second_quantize_quadratic(&h, &FockBasis::new(2).unwrap()).unwrap();
        let e = linalg::hermitian_eigenvalues(&m);
        assert!(linalg::spectra_distance(&e, &[-1.0, 0.0, 0.0, 1.0]) < 1e-14);
        assert!(second_quantize_quadratic(&h, &FockBasis::new(3).unwrap()).is_err());
    }

    #[test]
    fn random_quadratic_subset_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let k = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let k = (&k + k.adjoint()) * c(0.5, 0.0);
        let h = OneBodyOperator::new(Arc::new(SiteGraph::complete(n).unwrap()), k, true).unwrap();
        let basis = FockBasis::new(n).unwrap();
        let m = second_quantize_quadratic(&h, &basis).unwrap();
        let ev = &h.spectrum().unwrap().eigenvalues;
        let sums: Vec<f64> = (0..1u64 << n)
            .map(|s| (0..n).filter(|&i| s >> i & 1 == 1).map(|i| ev[i]).sum())
            .collect();
        assert!(linalg::spectra_distance(&linalg::hermitian_eigenvalues(&m), &sums) < 1e-9);
        // grade (1,1) coincides with the quadratic route
        let via = second_quantize(&normalorder::quadratic(&h).unwrap(), &basis).unwrap();
        assert!(linalg::max_abs_diff(&via, &m) < 1e-14);
    }

    #[test]
    fn density_density_two_sites() {
        let graph = Arc::new(ring(2).unwrap());
        let basis = FockBasis::new(2).unwrap();
        let g = c(0.3, -0.2);
        let op = density_density(graph.clone(), &nearest_neighbour_kernel(&graph), g).unwrap();
        let m = second_quantize(&op, &basis).unwrap();
        let direct = number(&basis, 0) * number(&basis, 1) * (g * 2.0);
        assert!(linalg::max_abs_diff(&m, &direct) < 1e-15);
        let zero = normalorder::NormalOrderedOperator::zero(graph);
        assert_eq!(second_quantize(&zero, &basis).unwrap(), FockMatrix::zeros(4, 4));
    }

    #[test]
    fn density_density_ring_hermitian_and_direct() {
        let graph = Arc::new(ring(5).unwrap());
        let basis = FockBasis::new(5).unwrap();
        let v = nearest_neighbour_kernel(&graph);
        let op = density_density(graph.clone(), &v, c(0.7, 0.0)).unwrap();
        let m = second_quantize(&op, &basis).unwrap();
        assert!(linalg::hermiticity_defect(&m) == 0.0);
        let mut direct = FockMatrix::zeros(32, 32);
        for x in 0..5 {
            for y in 0..5 {
                if v[x * 5 + y] != 0.0 {
                    direct += number(&basis, x) * number(&basis, y) * c(0.7 * v[x * 5 + y], 0.0);
                }
            }
        }
        assert!(linalg::max_abs_diff(&m, &direct) < 1e-14);
        let p = parity(&basis);
        assert!(linalg::max_abs_diff(&(&p * &m), &(&m * &p)) == 0.0);
    }

    #[test]
    fn extract_examples() {
        let graph = Arc::new(ring(2).unwrap());
        let basis = FockBasis::new(2).unwrap();
        let id = normal_order_extract(&FockMatrix::identity(4, 4), graph.clone(), (2, 2)).unwrap();
        assert_eq!(id.constant(), ONE);
        assert_eq!(id.grades().count(), 1);
        let nn = number(&basis, 0) * number(&basis, 1);
        let op = normal_order_extract(&nn, graph, (2, 2)).unwrap();
        assert_eq!(op.grades().count(), 1);
        let t = op.grade(2, 2).unwrap();
        assert_eq!(t.l1(), 4.0);
        assert_eq!(t.data().iter().filter(|z| z.norm() == 1.0).count(), 4);
    }

    #[test]
    fn sparse_apply_matches_dense() {
        let graph = Arc::new(ring(6).unwrap());
        let basis = FockBasis::new(6).unwrap();
        let op = normalorder::tests_support::random_even(graph, 11);
        let dense = second_quantize(&op, &basis).unwrap();
        let terms = FockTerms::new(&op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = CVector::from_fn(64, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let diff = (&dense * &v - terms.apply(&basis, &v).unwrap()).norm();
        assert!(diff < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn extract_roundtrip(seed in 0u64..u64::MAX) {
            let graph = Arc::new(ring(4).unwrap());
            let basis = FockBasis::new(4).unwrap();
            let op = normalorder::tests_support::random_even(graph.clone(), seed);
            let m = second_quantize(&op, &basis).unwrap();
            let back = normal_order_extract(&m, graph, (2, 2)).unwrap();
            prop_assert_eq!(back.grades().count(), op.grades().count());
            for (k, t) in op.grades() {
                let b = back.grade(k.0, k.1).unwrap();
                for (x, y) in t.data().iter().zip(b.data()) {
                    prop_assert!((x - y).norm() < 1e-12);
                }
            }
            // evenness matches parity commutation
            let p = parity(&basis);
            prop_assert!(linalg::max_abs_diff(&(&p * &m), &(&m * &p)) < 1e-12);
        }

        #[test]
        fn odd_operator_anticommutes_with_parity(seed in 0u64..1000) {
            let graph = Arc::new(ring(3).unwrap());
            let basis = FockBasis::new(3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut raw = CoeffTensor::zeros(2, 1, 3).unwrap();
            for x in 0..3 { for y in 0..3 { for z in 0..3 {
                raw.set(&[x, y], &[z], c(rng.gen_range(-1.0..1.0), 0.0));
            }}}
            let mut op = normalorder::NormalOrderedOperator::zero(graph);
            op.add_raw(&raw).unwrap();
            prop_assert!(!op.is_even());
            let m = second_quantize(&op, &basis).unwrap();
            let p = parity(&basis);
            prop_assert!(linalg::max_abs_diff(&(&p * &m), &(-(&m * &p))) < 1e-12);
        }
    }
}
