//! Finite Grassmann algebras over time-slice/site generators, the Gaussian linear
//! functional with a covariance table, and the Lie-Trotter generating function
//! `Z_N(r, s)` evaluated both as a Fock trace and as a Grassmann integral.
//!
//! Generator `(bar, j, x)` has index `j n + x` when barred and `N n + j n + x`
//! otherwise, so the canonical order is (bar flag, slice, site) with every barred
//! generator first. The normal-ordered monomial `c+_{M} c-_{N}` at slice `j` maps to
//! `abar_{j,M} a_{j,N}` with both site lists ascending.
//!
//! The Gaussian functional pairs `abar_{j,x}` with `a_{j',x'}` through the free
//! time-ordered two-point function `<T c+_x(tau_j) c-_x'(tau_j')>`, which is
//! `C(tau_j', x'; tau_j, x)`. Equal slices take the `tau <= 0` branch, matching the
//! creators-left order inside each normal-ordered factor.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceKernel;
use crate::error::{invalid, Error, Result};
use crate::fock::{self, FockMatrix};
use crate::linalg::{self, c, CMatrix, ONE, ZERO};
use crate::model::Model;
use crate::normalorder::{mask_sites, NormalOrderedOperator};
use crate::par::{self, Execution};

/// Words of the generator bitset; at most `64 * WORDS` generators.
const WORDS: usize = 4;
pub const MAX_GENERATORS: usize = 64 * WORDS;
/// Largest number of monomials a product expansion may visit.
pub const MAX_EXPANSION: u64 = 1 << 21;

/// A set of generators in canonical order.
pub type Monomial = [u64; WORDS];

fn bit(m: &Monomial, i: usize) -> bool {
    m[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(m: &mut Monomial, i: usize) {
    m[i / 64] |= 1 << (i % 64);
}

fn overlaps(a: &Monomial, b: &Monomial) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

fn union(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = *a;
    for (o, y) in out.iter_mut().zip(b) {
        *o |= y;
    }
    out
}

fn degree(m: &Monomial) -> usize {
    m.iter().map(|w| w.count_ones() as usize).sum()
}

/// Number of generators of `m` strictly above index `i`.
fn count_above(m: &Monomial, i: usize) -> u32 {
    let (w, b) = (i / 64, i % 64);
    let mut n = if b == 63 { 0 } else { (m[w] >> (b + 1)).count_ones() };
    for word in &m[w + 1..] {
        n += word.count_ones();
    }
    n
}

fn indices(m: &Monomial) -> Vec<usize> {
    let mut out = Vec::with_capacity(degree(m));
    for (w, &word) in m.iter().enumerate() {
        let mut x = word;
        while x != 0 {
            let t = x.trailing_zeros() as usize;
            out.push(64 * w + t);
            x &= x - 1;
        }
    }
    out
}

/// Sign of reordering the word `a b` into canonical order.
fn merge_sign(a: &Monomial, b: &Monomial) -> f64 {
    let inv: u32 = indices(b).iter().map(|&g| count_above(a, g)).sum();
    if inv % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Generators `abar_j(x)`, `a_j(x)` for `N` slices over `n` sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generators {
    pub n_slices: usize,
    pub n_sites: usize,
}

impl Generators {
    pub fn new(n_slices: usize, n_sites: usize) -> Result<Self> {
        if n_slices == 0 || n_sites == 0 {
            return Err(invalid("generators", "need at least one slice and one site"));
        }
        if 2 * n_slices * n_sites > MAX_GENERATORS {
            return Err(Error::ExpansionGuard(format!(
                "{} generators exceed {MAX_GENERATORS}",
                2 * n_slices * n_sites
            )));
        }
        Ok(Generators { n_slices, n_sites })
    }

    pub fn count(&self) -> usize {
        2 * self.slots()
    }

    /// Number of `(slice, site)` pairs.
    pub fn slots(&self) -> usize {
        self.n_slices * self.n_sites
    }

    pub fn index(&self, bar: bool, slice: usize, site: usize) -> usize {
        debug_assert!(slice < self.n_slices && site < self.n_sites);
        let slot = slice * self.n_sites + site;
        if bar {
            slot
        } else {
            self.slots() + slot
        }
    }

    /// `(bar, slice, site)` of a generator index.
    pub fn decode(&self, i: usize) -> (bool, usize, usize) {
        let bar = i < self.slots();
        let slot = if bar { i } else { i - self.slots() };
        (bar, slot / self.n_sites, slot % self.n_sites)
    }
}

/// Polynomial in the generators, with monomials in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrassmannPoly {
    gens: Generators,
    terms: BTreeMap<Monomial, Complex64>,
}

impl GrassmannPoly {
    pub fn zero(gens: Generators) -> Self {
        GrassmannPoly {
            gens,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(gens: Generators, v: Complex64) -> Self {
        let mut p = Self::zero(gens);
        p.add_term(&[], v).expect("empty word");
        p
    }

    pub fn generator(gens: Generators, bar: bool, slice: usize, site: usize) -> Self {
        let mut p = Self::zero(gens);
        p.add_term(&[gens.index(bar, slice, site)], ONE).expect("single generator");
        p
    }

    pub fn generators(&self) -> Generators {
        self.gens
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    /// Adds `v` times the word `g_{i_1} ... g_{i_k}` (any order); repeated generators give zero.
    pub fn add_term(&mut self, word: &[usize], v: Complex64) -> Result<()> {
        let mut mono = [0u64; WORDS];
        let mut sign = 1.0;
        for &i in word {
            if i >= self.gens.count() {
                return Err(invalid("word", format!("generator {i} out of range")));
            }
            if bit(&mono, i) {
                return Ok(());
            }
            if count_above(&mono, i) % 2 == 1 {
                sign = -sign;
            }
            set_bit(&mut mono, i);
        }
        self.add_mono(mono, v * sign);
        Ok(())
    }

    fn add_mono(&mut self, m: Monomial, v: Complex64) {
        if v == ZERO {
            return;
        }
        let e = self.terms.entry(m).or_insert(ZERO);
        *e += v;
        if *e == ZERO {
            self.terms.remove(&m);
        }
    }

    pub fn coefficient(&self, word_sorted: &[usize]) -> Complex64 {
        let mut m = [0u64; WORDS];
        for &i in word_sorted {
            set_bit(&mut m, i);
        }
        self.terms.get(&m).copied().unwrap_or(ZERO)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (&m, &v) in &other.terms {
            out.add_mono(m, v);
        }
        Ok(out)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::zero(self.gens);
        for (&m, &v) in &self.terms {
            out.add_mono(m, v * s);
        }
        out
    }

    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = Self::zero(self.gens);
        for (a, &va) in &self.terms {
            for (b, &vb) in &other.terms {
                if overlaps(a, b) {
                    continue;
                }
                out.add_mono(union(a, b), va * vb * merge_sign(a, b));
            }
        }
        Ok(out)
    }

    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|m| degree(m) % 2 == 0)
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.gens != other.gens {
            return Err(invalid("poly", "generator sets differ"));
        }
        Ok(())
    }

    /// `sum w_{M,N} abar_{j,M} a_{j,N}` for a normal-ordered operator.
    pub fn from_operator(gens: Generators, op: &NormalOrderedOperator, slice: usize) -> Result<Self> {
        if op.n_sites() != gens.n_sites {
            return Err(Error::DimensionMismatch {
                expected: gens.n_sites,
                found: op.n_sites(),
            });
        }
        if slice >= gens.n_slices {
            return Err(invalid("slice", "out of range"));
        }
        let mut p = Self::zero(gens);
        for ((mset, nset), w) in op.to_set_form()? {
            let mut word: Vec<usize> = mask_sites(mset).iter().map(|&x| gens.index(true, slice, x)).collect();
            word.extend(mask_sites(nset).iter().map(|&x| gens.index(false, slice, x)));
            p.add_term(&word, w)?;
        }
        Ok(p)
    }
}

pub fn gr_multiply(p: &GrassmannPoly, q: &GrassmannPoly) -> Result<GrassmannPoly> {
    p.multiply(q)
}

pub fn gr_add(p: &GrassmannPoly, q: &GrassmannPoly) -> Result<GrassmannPoly> {
    p.add(q)
}

/// Pairings `int abar_{j,x} a_{j',x'} dmu`, indexed by slots `j n + x` and `j' n + x'`.
#[derive(Debug, Clone)]
pub struct CovarianceTable {
    gens: Generators,
    table: CMatrix,
}

impl CovarianceTable {
    pub fn new(gens: Generators, table: CMatrix) -> Result<Self> {
        if table.nrows() != gens.slots() || table.ncols() != gens.slots() {
            return Err(Error::DimensionMismatch {
                expected: gens.slots(),
                found: table.nrows(),
            });
        }
        Ok(CovarianceTable { gens, table })
    }

    /// `C(tau_j', x'; tau_j, x)` at `tau_j = j beta / N`.
    pub fn trotter(kernel: &CovarianceKernel, n_slices: usize) -> Result<Self> {
        let gens = Generators::new(n_slices, kernel.n_sites())?;
        let eps = kernel.beta() / n_slices as f64;
        let n = gens.n_sites;
        let table = CMatrix::from_fn(gens.slots(), gens.slots(), |p, q| {
            let (j, x) = (p / n, p % n);
            let (jp, xp) = (q / n, q % n);
            kernel.kernel(jp as f64 * eps, xp, j as f64 * eps, x)
        });
        Ok(CovarianceTable { gens, table })
    }

    pub fn generators(&self) -> Generators {
        self.gens
    }

    pub fn pairing(&self, bar_slot: usize, slot: usize) -> Complex64 {
        self.table[(bar_slot, slot)]
    }

    /// `int abar_{k_1} .. abar_{k_m} a_{l_1} .. a_{l_m} dmu = (-1)^{m(m-1)/2} det Gamma` for a
    /// canonically ordered monomial; unbalanced monomials integrate to zero.
    pub fn integrate_monomial(&self, m: &Monomial) -> Complex64 {
        let idx = indices(m);
        let slots = self.gens.slots();
        let split = idx.partition_point(|&i| i < slots);
        let (bars, unbars) = idx.split_at(split);
        if bars.len() != unbars.len() {
            return ZERO;
        }
        let k = bars.len();
        if k == 0 {
            return ONE;
        }
        let gamma = CMatrix::from_fn(k, k, |a, b| self.table[(bars[a], unbars[b] - slots)]);
        let sign = if (k * (k - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        linalg::determinant(&gamma) * sign
    }
}

/// Linear extension of the monomial rule.
pub fn gaussian_integral(p: &GrassmannPoly, cov: &CovarianceTable) -> Result<Complex64> {
    if p.gens != cov.gens {
        return Err(invalid("covariance", "generator sets differ"));
    }
    Ok(p.terms.iter().map(|(m, &v)| v * cov.integrate_monomial(m)).sum())
}

/// Pair-expansion oracle: sum over perfect matchings of the word with the sign of the
/// matching permutation; pairs `(abar, a)` contribute the covariance, `(a, abar)` its
/// negative, and like pairs vanish.
pub fn wick_integral(p: &GrassmannPoly, cov: &CovarianceTable) -> Result<Complex64> {
    fn rec(word: &[usize], slots: usize, cov: &CovarianceTable) -> Complex64 {
        if word.is_empty() {
            return ONE;
        }
        let first = word[0];
        let mut acc = ZERO;
        for k in 1..word.len() {
            let second = word[k];
            let pair = match (first < slots, second < slots) {
                (true, false) => cov.table[(first, second - slots)],
                (false, true) => -cov.table[(second, first - slots)],
                _ => continue,
            };
            let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<usize> = word[1..k].iter().chain(&word[k + 1..]).copied().collect();
            acc += pair * sign * rec(&rest, slots, cov);
        }
        acc
    }
    if p.gens != cov.gens {
        return Err(invalid("covariance", "generator sets differ"));
    }
    let slots = cov.gens.slots();
    Ok(p.terms
        .iter()
        .map(|(m, &v)| {
            let w = indices(m);
            if w.len() % 2 == 1 {
                ZERO
            } else {
                v * rec(&w, slots, cov)
            }
        })
        .sum())
}

/// Slice count, temperature, insertion time and source strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrotterSpec {
    pub n_slices: usize,
    pub beta: f64,
    pub t: f64,
    pub r: Complex64,
    pub s: Complex64,
}

impl TrotterSpec {
    pub fn new(n_slices: usize, beta: f64, t: f64, r: Complex64, s: Complex64) -> Result<Self> {
        let spec = TrotterSpec {
            n_slices,
            beta,
            t,
            r,
            s,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slices < 3 {
            return Err(invalid("n_slices", "need at least 3 slices"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", "must be positive and finite"));
        }
        if !(self.t > 0.0 && self.t < self.beta) {
            return Err(invalid("t", "must lie in (0, beta)"));
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.beta / self.n_slices as f64
    }

    /// `floor((t / beta)(N - 2))`.
    pub fn k(&self) -> usize {
        (self.t / self.beta * (self.n_slices - 2) as f64).floor() as usize
    }

    /// Euclidean time actually separating the insertions, `(k + 1) beta / N`.
    pub fn snapped_t(&self) -> f64 {
        (self.k() + 1) as f64 * self.eps()
    }

    pub fn with_sources(&self, r: Complex64, s: Complex64) -> Self {
        TrotterSpec { r, s, ..*self }
    }

    /// What sits at slice `j`.
    fn slot(&self, j: usize) -> Slot {
        if j == 0 {
            Slot::B
        } else if j == self.k() + 1 {
            Slot::A
        } else {
            Slot::Interaction
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Interaction,
    A,
    B,
}

/// `Z_0 = prod_k (1 + e^{-beta E_k})`, the free Fock trace.
pub fn free_partition(model: &Model, beta: f64) -> Result<f64> {
    let spec = model.h0().spectrum()?;
    Ok(spec
        .eigenvalues
        .iter()
        .map(|&e| {
            let x = -beta * e;
            if x > 0.0 {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        })
        .sum::<f64>()
        .exp())
}

/// `tr Gamma_N(r, s)` with `Gamma_N = e^{-eps H_0} O_{N-1} ... e^{-eps H_0} O_0`, `O_0 = 1 + sB`,
/// `O_{k+1} = 1 + rA` and `O_j = 1 - eps g V` otherwise.
pub fn z_trotter_trace(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    spec: &TrotterSpec,
) -> Result<Complex64> {
    spec.validate()?;
    let basis = model.basis();
    let dim = basis.dim();
    let eps = spec.eps();
    let e = free_propagator(model, eps);
    let id = CMatrix::identity(dim, dim);
    let a_f = fock::second_quantize(a, basis)?;
    let b_f = fock::second_quantize(b, basis)?;
    let v_step = &e * (&id - model.v_fock() * (g * eps));
    let a_step = &e * (&id + a_f * spec.r);
    let b_step = &e * (&id + b_f * spec.s);
    let mut gamma = b_step;
    for j in 1..spec.n_slices {
        let step = match spec.slot(j) {
            Slot::A => &a_step,
            _ => &v_step,
        };
        gamma = step * gamma;
    }
    let z = linalg::trace(&gamma);
    if !(z.norm() > 1e-300) || !z.re.is_finite() {
        return Err(Error::IllConditioned(z.norm()));
    }
    Ok(z)
}

fn free_propagator(model: &Model, eps: f64) -> FockMatrix {
    let eig = linalg::hermitian_eigen(model.h0_fock());
    linalg::hermitian_function(&eig, |x| c((-eps * x).exp(), 0.0))
}

fn slice_polys(
    gens: Generators,
    v: &NormalOrderedOperator,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    spec: &TrotterSpec,
) -> Result<Vec<GrassmannPoly>> {
    let one = GrassmannPoly::scalar(gens, ONE);
    (0..spec.n_slices)
        .map(|j| {
            let (op, w) = match spec.slot(j) {
                Slot::Interaction => (v, -g * spec.eps()),
                Slot::A => (a, spec.r),
                Slot::B => (b, spec.s),
            };
            one.add(&GrassmannPoly::from_operator(gens, op, j)?.scale(w))
        })
        .collect()
}

fn check_grassmann_inputs(model: &Model, a: &NormalOrderedOperator, b: &NormalOrderedOperator) -> Result<()> {
    if !model.v_unit().is_even() {
        return Err(Error::OddInteraction);
    }
    let n = model.graph().n_sites();
    for op in [a, b] {
        if op.n_sites() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: op.n_sites(),
            });
        }
    }
    Ok(())
}

/// `Z_0 int dmu prod_{j=N-1..0} P_j` with the slice polynomials in operator order,
/// expanded depth-first so that no intermediate polynomial is stored.
pub fn z_trotter_grassmann(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    spec: &TrotterSpec,
    exec: Execution,
) -> Result<Complex64> {
    spec.validate()?;
    check_grassmann_inputs(model, a, b)?;
    let kernel = CovarianceKernel::new(model.h0(), spec.beta)?;
    let cov = CovarianceTable::trotter(&kernel, spec.n_slices)?;
    let gens = cov.generators();
    let polys = slice_polys(gens, model.v_unit(), g, a, b, spec)?;
    // operator order: slice N-1 leftmost
    let factors: Vec<Vec<(Monomial, Complex64)>> = polys
        .iter()
        .rev()
        .map(|p| p.terms().map(|(m, &v)| (*m, v)).collect())
        .collect();
    let total = factors
        .iter()
        .try_fold(1u64, |acc, f| acc.checked_mul(f.len() as u64))
        .unwrap_or(u64::MAX);
    if total > MAX_EXPANSION {
        return Err(Error::ExpansionGuard(format!(
            "{total} monomials exceed the limit of {MAX_EXPANSION}"
        )));
    }
    // split the first few factors into independent prefixes
    let mut prefixes: Vec<(Monomial, Complex64)> = vec![([0; WORDS], ONE)];
    let mut depth = 0;
    while depth < factors.len() && prefixes.len() < 256 {
        prefixes = extend(&prefixes, &factors[depth]);
        depth += 1;
    }
    let rest = &factors[depth..];
    let parts = par::map_slice(exec, &prefixes, |&(m, v)| {
        let mut acc = ZERO;
        expand(&cov, rest, m, v, &mut acc);
        acc
    });
    let integral: Complex64 = parts.into_iter().sum();
    Ok(integral * free_partition(model, spec.beta)?)
}

fn extend(prefixes: &[(Monomial, Complex64)], factor: &[(Monomial, Complex64)]) -> Vec<(Monomial, Complex64)> {
    let mut out = Vec::with_capacity(prefixes.len() * factor.len());
    for (m, v) in prefixes {
        for (f, w) in factor {
            if !overlaps(m, f) {
                out.push((union(m, f), v * w * merge_sign(m, f)));
            }
        }
    }
    out
}

fn expand(cov: &CovarianceTable, rest: &[Vec<(Monomial, Complex64)>], m: Monomial, v: Complex64, acc: &mut Complex64) {
    match rest.split_first() {
        None => *acc += v * cov.integrate_monomial(&m),
        Some((factor, tail)) => {
            for (f, w) in factor {
                if !overlaps(&m, f) {
                    expand(cov, tail, union(&m, f), v * w * merge_sign(&m, f), acc);
                }
            }
        }
    }
}

/// Reference evaluation: multiplies the slice polynomials out in full, then integrates.
pub fn z_trotter_grassmann_naive(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    spec: &TrotterSpec,
) -> Result<Complex64> {
    spec.validate()?;
    check_grassmann_inputs(model, a, b)?;
    let kernel = CovarianceKernel::new(model.h0(), spec.beta)?;
    let cov = CovarianceTable::trotter(&kernel, spec.n_slices)?;
    let polys = slice_polys(cov.generators(), model.v_unit(), g, a, b, spec)?;
    let mut prod = GrassmannPoly::scalar(cov.generators(), ONE);
    for p in polys.iter().rev() {
        prod = prod.multiply(p)?;
        if prod.len() as u64 > MAX_EXPANSION {
            return Err(Error::ExpansionGuard(format!("{} monomials", prod.len())));
        }
    }
    Ok(gaussian_integral(&prod, &cov)? * free_partition(model, spec.beta)?)
}

/// `Z(1,1)/Z(0,0) - Z(1,0) Z(0,1) / Z(0,0)^2` from Trotter traces, exact because `Z_N` is
/// affine in each source. The result approximates `<A(t'); B>` at the snapped time
/// `t' = (k + 1) beta / N`.
pub fn truncated_from_generating(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    t: f64,
    beta: f64,
    n_slices: usize,
) -> Result<Complex64> {
    let spec = TrotterSpec::new(n_slices, beta, t, ZERO, ZERO)?;
    let z = |r: f64, s: f64| z_trotter_trace(model, g, a, b, &spec.with_sources(c(r, 0.0), c(s, 0.0)));
    let z00 = z(0.0, 0.0)?;
    if z00.norm() < 1e-12 * free_partition(model, beta)? {
        return Err(Error::IllConditioned(z00.norm()));
    }
    let (z11, z10, z01) = (z(1.0, 1.0)?, z(1.0, 0.0)?, z(0.0, 1.0)?);
    Ok(z11 / z00 - z10 * z01 / (z00 * z00))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrotterRow {
    pub n_slices: usize,
    pub z_trace: Complex64,
    pub z_grassmann: Complex64,
    pub diff: f64,
    pub snapped_t: f64,
}

/// Trace and Grassmann evaluations of `Z_N(r, s)` over a list of slice counts.
#[allow(clippy::too_many_arguments)]
pub fn trotter_convergence(
    model: &Model,
    g: Complex64,
    a: &NormalOrderedOperator,
    b: &NormalOrderedOperator,
    template: &TrotterSpec,
    ns: &[usize],
    exec: Execution,
) -> Result<Vec<TrotterRow>> {
    ns.iter()
        .map(|&n| {
            let spec = TrotterSpec {
                n_slices: n,
                ..*template
            };
            let z_trace = z_trotter_trace(model, g, a, b, &spec)?;
            let z_grassmann = z_trotter_grassmann(model, g, a, b, &spec, exec)?;
            Ok(TrotterRow {
                n_slices: n,
                z_trace,
                z_grassmann,
                diff: (z_trace - z_grassmann).norm(),
                snapped_t: spec.snapped_t(),
            })
        })
        .collect()
}
