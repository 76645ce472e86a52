//! Normal-ordered operators: antisymmetric coefficient tensors per grade `(m_bar, m)`,
//! the local and total norms, and the set-indexed form.
//!
//! An operator is `A = sum (m_bar! m!)^{-1} sum a(x_bar; x) c+_{x_bar_1}..c+_{x_bar_m_bar} c-_{x_1}..c-_{x_m}`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::lattice::SiteGraph;
use crate::linalg::{c, CMatrix, ZERO};
use crate::onebody::OneBodyOperator;

/// Largest number of dense tensor entries a single grade may allocate.
pub const TENSOR_ENTRY_LIMIT: usize = 1 << 24;

/// Default grade cap for builders.
pub const DEFAULT_MAX_GRADE: (usize, usize) = (2, 2);

/// Dense coefficient tensor on `Lambda^{m_bar} x Lambda^m`, row-major with the barred
/// slots first.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor {
    nbar: usize,
    m: usize,
    n_sites: usize,
    data: Vec<Complex64>,
}

impl CoeffTensor {
    pub fn zeros(nbar: usize, m: usize, n_sites: usize) -> Result<Self> {
        let len = n_sites
            .checked_pow((nbar + m) as u32)
            .filter(|&l| l <= TENSOR_ENTRY_LIMIT)
            .ok_or_else(|| {
                Error::ExpansionGuard(format!("grade ({nbar},{m}) on {n_sites} sites is too large"))
            })?;
        Ok(CoeffTensor {
            nbar,
            m,
            n_sites,
            data: vec![ZERO; len],
        })
    }

    pub fn grade(&self) -> (usize, usize) {
        (self.nbar, self.m)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    fn offset(&self, slots: impl Iterator<Item = usize>) -> usize {
        slots.fold(0, |acc, s| acc * self.n_sites + s)
    }

    pub fn get(&self, bar: &[usize], unbar: &[usize]) -> Complex64 {
        debug_assert_eq!((bar.len(), unbar.len()), (self.nbar, self.m));
        self.data[self.offset(bar.iter().chain(unbar).copied())]
    }

    pub fn set(&mut self, bar: &[usize], unbar: &[usize], v: Complex64) {
        let o = self.offset(bar.iter().chain(unbar).copied());
        self.data[o] = v;
    }

    pub fn add(&mut self, bar: &[usize], unbar: &[usize], v: Complex64) {
        let o = self.offset(bar.iter().chain(unbar).copied());
        self.data[o] += v;
    }

    /// Decodes a flat index into its slot tuple.
    pub fn slots(&self, mut flat: usize) -> Vec<usize> {
        let k = self.nbar + self.m;
        let mut out = vec![0; k];
        for i in (0..k).rev() {
            out[i] = flat % self.n_sites;
            flat /= self.n_sites;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| *z == ZERO)
    }

    /// `|a|_1`, the sum of all absolute values.
    pub fn l1(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).sum()
    }

    /// `|a|_{1,inf}`: the larger of the sums with the first barred or the first unbarred
    /// slot pinned, maximised over the pinned site. A grade without slots reduces to `|a|`.
    pub fn l1_inf(&self) -> f64 {
        if self.nbar + self.m == 0 {
            return self.data[0].norm();
        }
        let block = self.data.len() / self.n_sites;
        let first_bar = if self.nbar > 0 {
            (0..self.n_sites)
                .map(|x| self.data[x * block..(x + 1) * block].iter().map(|z| z.norm()).sum::<f64>())
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let first_unbar = if self.m > 0 {
            let mut pinned = vec![0.0; self.n_sites];
            for (flat, z) in self.data.iter().enumerate() {
                let slot = self.slots(flat)[self.nbar];
                pinned[slot] += z.norm();
            }
            pinned.into_iter().fold(0.0, f64::max)
        } else {
            0.0
        };
        first_bar.max(first_unbar)
    }

    fn scaled(&self, s: Complex64) -> Self {
        CoeffTensor {
            data: self.data.iter().map(|z| z * s).collect(),
            ..self.clone()
        }
    }

    /// Largest deviation from the antisymmetry relations under adjacent transpositions.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for flat in 0..self.data.len() {
            let slots = self.slots(flat);
            for block in [(0, self.nbar), (self.nbar, self.nbar + self.m)] {
                for i in block.0..block.1.saturating_sub(1) {
                    let mut sw = slots.clone();
                    sw.swap(i, i + 1);
                    let other = self.data[self.offset(sw.into_iter())];
                    worst = worst.max((self.data[flat] + other).norm());
                }
            }
        }
        worst
    }
}

/// All permutations of `0..k` with their signs.
pub fn signed_permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, sign: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if rest.is_empty() {
            out.push((prefix.clone(), sign));
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            // moving element i to the front costs i transpositions
            let s = if i % 2 == 0 { sign } else { -sign };
            rec(prefix, rest, s, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..k).collect(), 1.0, &mut out);
    out
}

/// Sign of the permutation sorting `seq`, or `None` when `seq` repeats an entry.
pub fn sort_sign(seq: &[usize]) -> Option<f64> {
    let mut sign = 1.0;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            match seq[i].cmp(&seq[j]) {
                std::cmp::Ordering::Equal => return None,
                std::cmp::Ordering::Greater => sign = -sign,
                std::cmp::Ordering::Less => {}
            }
        }
    }
    Some(sign)
}

/// Projection onto the antisymmetric part: the signed average over permutations of the
/// barred and unbarred slots separately.
pub fn antisymmetrize(raw: &CoeffTensor) -> CoeffTensor {
    let (nbar, m) = raw.grade();
    let pb = signed_permutations(nbar);
    let pu = signed_permutations(m);
    let norm = (pb.len() * pu.len()) as f64;
    let mut out = raw.clone();
    for flat in 0..raw.data.len() {
        let slots = raw.slots(flat);
        let (bar, unbar) = slots.split_at(nbar);
        let mut acc = ZERO;
        for (p, sp) in &pb {
            for (q, sq) in &pu {
                let b: Vec<usize> = p.iter().map(|&i| bar[i]).collect();
                let u: Vec<usize> = q.iter().map(|&i| unbar[i]).collect();
                acc += raw.get(&b, &u) * (sp * sq);
            }
        }
        out.data[flat] = acc / norm;
    }
    out
}

/// Set-indexed weights `w_{M,N}` with `M`, `N` encoded as bit masks over the site order.
pub type SetForm = BTreeMap<(u64, u64), Complex64>;

pub fn mask_sites(mask: u64) -> Vec<usize> {
    (0..64).filter(|&i| mask >> i & 1 == 1).collect()
}

/// An operator in normal-ordered form.
#[derive(Debug, Clone)]
pub struct NormalOrderedOperator {
    graph: Arc<SiteGraph>,
    coeffs: BTreeMap<(usize, usize), CoeffTensor>,
    max_grade: (usize, usize),
}

impl NormalOrderedOperator {
    pub fn zero(graph: Arc<SiteGraph>) -> Self {
        Self::with_max_grade(graph, DEFAULT_MAX_GRADE)
    }

    pub fn with_max_grade(graph: Arc<SiteGraph>, max_grade: (usize, usize)) -> Self {
        NormalOrderedOperator {
            graph,
            coeffs: BTreeMap::new(),
            max_grade,
        }
    }

    pub fn graph(&self) -> &Arc<SiteGraph> {
        &self.graph
    }

    pub fn n_sites(&self) -> usize {
        self.graph.n_sites()
    }

    pub fn max_grade(&self) -> (usize, usize) {
        self.max_grade
    }

    /// Nonzero grades and their tensors.
    pub fn grades(&self) -> impl Iterator<Item = (&(usize, usize), &CoeffTensor)> {
        self.coeffs.iter()
    }

    pub fn grade(&self, nbar: usize, m: usize) -> Option<&CoeffTensor> {
        self.coeffs.get(&(nbar, m))
    }

    /// `a_{0,0}`.
    pub fn constant(&self) -> Complex64 {
        self.grade(0, 0).map_or(ZERO, |t| t.data[0])
    }

    fn check_grade(&self, t: &CoeffTensor) -> Result<()> {
        let (nb, m) = t.grade();
        if t.n_sites != self.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites(),
                found: t.n_sites,
            });
        }
        if nb > self.max_grade.0 || m > self.max_grade.1 {
            return Err(Error::ExpansionGuard(format!(
                "grade ({nb},{m}) exceeds the cap {:?}",
                self.max_grade
            )));
        }
        Ok(())
    }

    /// Adds an antisymmetric tensor to its grade. Non-antisymmetric input is rejected.
    pub fn add_tensor(&mut self, t: CoeffTensor) -> Result<()> {
        self.check_grade(&t)?;
        let scale = t.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if t.antisymmetry_defect() > 1e-12 * scale.max(1.0) {
            return Err(invalid("tensor", "not antisymmetric; use add_raw"));
        }
        self.accumulate(t);
        Ok(())
    }

    /// Antisymmetrizes `raw` and adds it.
    pub fn add_raw(&mut self, raw: &CoeffTensor) -> Result<()> {
        self.check_grade(raw)?;
        self.accumulate(antisymmetrize(raw));
        Ok(())
    }

    fn accumulate(&mut self, t: CoeffTensor) {
        let key = t.grade();
        match self.coeffs.get_mut(&key) {
            Some(existing) => {
                for (a, b) in existing.data.iter_mut().zip(&t.data) {
                    *a += b;
                }
            }
            None => {
                self.coeffs.insert(key, t);
            }
        }
        self.coeffs.retain(|_, t| !t.is_zero());
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::with_max_grade(self.graph.clone(), self.max_grade);
        for t in self.coeffs.values() {
            out.accumulate(t.scaled(s));
        }
        out
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        if other.n_sites() != self.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites(),
                found: other.n_sites(),
            });
        }
        let cap = (
            self.max_grade.0.max(other.max_grade.0),
            self.max_grade.1.max(other.max_grade.1),
        );
        let mut out = Self::with_max_grade(self.graph.clone(), cap);
        for t in self.coeffs.values().chain(other.coeffs.values()) {
            out.accumulate(t.clone());
        }
        Ok(out)
    }

    /// Even: every nonzero grade has `m_bar + m` even.
    pub fn is_even(&self) -> bool {
        self.coeffs.keys().all(|(a, b)| (a + b) % 2 == 0)
    }

    /// `||A||_h = sum (m_bar! m!)^{-1} |a|_{1,inf} h^{m_bar+m}`.
    pub fn norm_local(&self, h: f64) -> f64 {
        self.weighted_sum(h, CoeffTensor::l1_inf)
    }

    /// `|||A|||_h = sum (m_bar! m!)^{-1} |a|_1 h^{m_bar+m}`.
    pub fn norm_total(&self, h: f64) -> f64 {
        self.weighted_sum(h, CoeffTensor::l1)
    }

    fn weighted_sum(&self, h: f64, f: impl Fn(&CoeffTensor) -> f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(&(nb, m), t)| f(t) * h.powi((nb + m) as i32) / (factorial(nb) * factorial(m)))
            .sum()
    }

    /// Set-indexed weights `w_{M,N} = a(sorted M; sorted N)` over injective tuples.
    pub fn to_set_form(&self) -> Result<SetForm> {
        let n = self.n_sites();
        if n > 64 {
            return Err(invalid("graph", "set form supports at most 64 sites"));
        }
        let mut out = SetForm::new();
        for (&(nb, m), t) in &self.coeffs {
            for mset in subsets_of_size(n, nb) {
                let bar = mask_sites(mset);
                for nset in subsets_of_size(n, m) {
                    let unbar = mask_sites(nset);
                    let w = t.get(&bar, &unbar);
                    if w != ZERO {
                        *out.entry((mset, nset)).or_insert(ZERO) += w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::to_set_form`]; grades beyond `max_grade` are rejected.
    pub fn from_set_form(
        graph: Arc<SiteGraph>,
        weights: &SetForm,
        max_grade: (usize, usize),
    ) -> Result<Self> {
        let n = graph.n_sites();
        let mut tensors: BTreeMap<(usize, usize), CoeffTensor> = BTreeMap::new();
        for (&(mset, nset), &w) in weights {
            if w == ZERO {
                continue;
            }
            if (mset | nset) >> n.min(63) > 0 && n < 64 {
                return Err(invalid("weights", "set mask exceeds the site count"));
            }
            let bar = mask_sites(mset);
            let unbar = mask_sites(nset);
            let key = (bar.len(), unbar.len());
            if key.0 > max_grade.0 || key.1 > max_grade.1 {
                return Err(Error::ExpansionGuard(format!(
                    "grade {key:?} exceeds the cap {max_grade:?}"
                )));
            }
            if !tensors.contains_key(&key) {
                tensors.insert(key, CoeffTensor::zeros(key.0, key.1, n)?);
            }
            let t = tensors.get_mut(&key).unwrap();
            for (p, sp) in signed_permutations(key.0) {
                let b: Vec<usize> = p.iter().map(|&i| bar[i]).collect();
                for (q, sq) in signed_permutations(key.1) {
                    let u: Vec<usize> = q.iter().map(|&i| unbar[i]).collect();
                    t.set(&b, &u, w * (sp * sq));
                }
            }
        }
        let mut op = Self::with_max_grade(graph, max_grade);
        for t in tensors.into_values() {
            op.accumulate(t);
        }
        Ok(op)
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// All bit masks over `n` sites with exactly `k` bits set, ascending.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    fn rec(start: usize, n: usize, k: usize, mask: u64, out: &mut Vec<u64>) {
        if k == 0 {
            out.push(mask);
            return;
        }
        for i in start..n {
            if n - i < k {
                break;
            }
            rec(i + 1, n, k - 1, mask | 1 << i, out);
        }
    }
    rec(0, n, k, 0, &mut out);
    out
}

/// `g sum_{x,x'} v(x,x') n_x n_x'` in normal-ordered form: a grade-(2,2) part
/// `a(x,y;y,x) = -a(x,y;x,y) = g (v(x,y) + v(y,x))` for `x != y`, plus `g v(x,x)` at
/// grade (1,1) from `n_x^2 = n_x`.
pub fn density_density(graph: Arc<SiteGraph>, v: &[f64], g: Complex64) -> Result<NormalOrderedOperator> {
    let n = graph.n_sites();
    if v.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: v.len(),
        });
    }
    for x in 0..n {
        for y in 0..n {
            if (v[x * n + y] - v[y * n + x]).abs() > 1e-14 {
                return Err(invalid("v", format!("not symmetric at ({x},{y})")));
            }
        }
    }
    let mut quartic = CoeffTensor::zeros(2, 2, n)?;
    let mut quadratic = CoeffTensor::zeros(1, 1, n)?;
    for x in 0..n {
        if v[x * n + x] != 0.0 {
            quadratic.set(&[x], &[x], g * v[x * n + x]);
        }
        for y in 0..n {
            if x != y && v[x * n + y] != 0.0 {
                let w = g * (v[x * n + y] + v[y * n + x]);
                quartic.set(&[x, y], &[y, x], w);
                quartic.set(&[x, y], &[x, y], -w);
            }
        }
    }
    let mut op = NormalOrderedOperator::zero(graph);
    op.add_tensor(quartic)?;
    op.add_tensor(quadratic)?;
    Ok(op)
}

/// Unit nearest-neighbour pair kernel: `v(x,y) = 1` when `d(x,y) = 1`.
pub fn nearest_neighbour_kernel(graph: &SiteGraph) -> Vec<f64> {
    let n = graph.n_sites();
    let mut v = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            if (graph.distance(x, y) - 1.0).abs() < 1e-12 {
                v[x * n + y] = 1.0;
            }
        }
    }
    v
}

/// `sum h(x,x') c+_x c-_x'` as a grade-(1,1) operator.
pub fn quadratic(h: &OneBodyOperator) -> Result<NormalOrderedOperator> {
    let n = h.n_sites();
    let mut t = CoeffTensor::zeros(1, 1, n)?;
    for x in 0..n {
        for y in 0..n {
            t.set(&[x], &[y], h.kernel()[(x, y)]);
        }
    }
    let mut op = NormalOrderedOperator::zero(h.graph().clone());
    op.accumulate(t);
    Ok(op)
}

/// `sum a(x,x') c+_x c-_x'` for an explicit kernel.
pub fn quadratic_from_kernel(graph: Arc<SiteGraph>, kernel: &CMatrix) -> Result<NormalOrderedOperator> {
    let n = graph.n_sites();
    if kernel.nrows() != n || kernel.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: kernel.nrows(),
        });
    }
    let mut t = CoeffTensor::zeros(1, 1, n)?;
    for x in 0..n {
        for y in 0..n {
            t.set(&[x], &[y], kernel[(x, y)]);
        }
    }
    let mut op = NormalOrderedOperator::zero(graph);
    op.accumulate(t);
    Ok(op)
}

/// `n_x = c+_x c-_x`.
pub fn density(graph: Arc<SiteGraph>, x: usize) -> Result<NormalOrderedOperator> {
    monomial(graph, &[x], &[x])
}

/// `c+_x`.
pub fn creation(graph: Arc<SiteGraph>, x: usize) -> Result<NormalOrderedOperator> {
    monomial(graph, &[x], &[])
}

/// `c-_x`.
pub fn annihilation(graph: Arc<SiteGraph>, x: usize) -> Result<NormalOrderedOperator> {
    monomial(graph, &[], &[x])
}

/// The identity operator (`a_{0,0} = 1`).
pub fn identity(graph: Arc<SiteGraph>) -> Result<NormalOrderedOperator> {
    monomial(graph, &[], &[])
}

/// `c+_{bar_1} .. c+_{bar_k} c-_{unbar_1} .. c-_{unbar_l}` for distinct sites.
pub fn monomial(graph: Arc<SiteGraph>, bar: &[usize], unbar: &[usize]) -> Result<NormalOrderedOperator> {
    let n = graph.n_sites();
    if bar.iter().chain(unbar).any(|&x| x >= n) {
        return Err(invalid("site", "out of range"));
    }
    let cap = (bar.len().max(DEFAULT_MAX_GRADE.0), unbar.len().max(DEFAULT_MAX_GRADE.1));
    let mut op = NormalOrderedOperator::with_max_grade(graph, cap);
    let (Some(sb), Some(su)) = (sort_sign(bar), sort_sign(unbar)) else {
        return Ok(op);
    };
    let mask = |s: &[usize]| s.iter().fold(0u64, |m, &x| m | 1 << x);
    let mut w = SetForm::new();
    w.insert((mask(bar), mask(unbar)), c(sb * su, 0.0));
    op = NormalOrderedOperator::from_set_form(op.graph.clone(), &w, cap)?;
    Ok(op)
}
