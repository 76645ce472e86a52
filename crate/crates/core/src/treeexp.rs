//! Tree combinatorics behind the convergent expansion: spanning trees of the complete
//! graph by Prüfer sequences, their orientations, incidence numbers, the decomposition
//! along the path joining the two external vertices, and the resulting series bound.
//!
//! Vertices are `0..r`; the external vertices `p+1`, `p+2` of an `r = p+2` tree are
//! `r-2` and `r-1`.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::time_distance;

/// Largest vertex count accepted by the enumerators (`9^7` Prüfer sequences).
pub const MAX_VERTICES: usize = 9;

/// Tree with edges `(parent, child)` given as unordered pairs when undirected.
pub type Edge = (usize, usize);

/// Decodes a Prüfer sequence of length `r - 2` into the edges of a spanning tree of `K_r`.
pub fn prufer_decode(seq: &[usize], r: usize) -> Result<Vec<Edge>> {
    if r < 2 {
        return if seq.is_empty() { Ok(Vec::new()) } else { Err(invalid("seq", "too long")) };
    }
    if seq.len() != r - 2 || seq.iter().any(|&v| v >= r) {
        return Err(invalid("seq", format!("need {} entries below {r}", r - 2)));
    }
    let mut degree = vec![1usize; r];
    for &v in seq {
        degree[v] += 1;
    }
    let mut edges = Vec::with_capacity(r - 1);
    for &v in seq {
        let leaf = (0..r).find(|&u| degree[u] == 1).unwrap();
        edges.push((leaf.min(v), leaf.max(v)));
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let rest: Vec<usize> = (0..r).filter(|&u| degree[u] == 1).collect();
    edges.push((rest[0], rest[1]));
    Ok(edges)
}

/// Prüfer sequence of a spanning tree of `K_r`.
pub fn prufer_encode(edges: &[Edge], r: usize) -> Result<Vec<usize>> {
    let mut adj = adjacency(edges, r)?;
    let mut seq = Vec::with_capacity(r.saturating_sub(2));
    for _ in 0..r.saturating_sub(2) {
        let leaf = (0..r).find(|&u| adj[u].len() == 1).unwrap();
        let nb = adj[leaf][0];
        seq.push(nb);
        adj[leaf].clear();
        adj[nb].retain(|&w| w != leaf);
    }
    Ok(seq)
}

fn adjacency(edges: &[Edge], r: usize) -> Result<Vec<Vec<usize>>> {
    let mut adj = vec![Vec::new(); r];
    for &(a, b) in edges {
        if a >= r || b >= r || a == b {
            return Err(invalid("edges", format!("bad edge ({a},{b})")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    Ok(adj)
}

fn check_r(r: usize) -> Result<()> {
    if r == 0 || r > MAX_VERTICES {
        return Err(Error::ExpansionGuard(format!(
            "tree enumeration needs 1 <= r <= {MAX_VERTICES}, got {r}"
        )));
    }
    Ok(())
}

/// Streams all `r^{r-2}` spanning trees of `K_r` in lexicographic Prüfer order.
pub fn enumerate_trees(r: usize) -> Result<impl Iterator<Item = Vec<Edge>>> {
    check_r(r)?;
    let len = r.saturating_sub(2);
    let total = (r as u64).pow(len as u32);
    Ok((0..total).map(move |mut idx| {
        let mut seq = vec![0usize; len];
        for slot in seq.iter_mut().rev() {
            *slot = (idx % r as u64) as usize;
            idx /= r as u64;
        }
        prufer_decode(&seq, r).expect("valid Prüfer sequence")
    }))
}

/// A spanning tree of `K_r` with one orientation per edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedTree {
    pub r: usize,
    /// Ordered pairs `(q, q')`: the line leaves `q` and enters `q'`.
    pub edges: Vec<Edge>,
}

impl DirectedTree {
    pub fn new(r: usize, edges: Vec<Edge>) -> Result<Self> {
        let t = DirectedTree { r, edges };
        t.validate()?;
        Ok(t)
    }

    /// Spanning tree (connected, `r - 1` edges), one orientation per pair.
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.edges.len() != self.r - 1 {
            return Err(invalid("tree", "needs r - 1 edges"));
        }
        let mut pairs: Vec<Edge> = self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        pairs.dedup();
        if pairs.len() != self.edges.len() {
            return Err(invalid("tree", "an unordered pair appears twice"));
        }
        let adj = adjacency(&self.edges, self.r)?;
        let mut seen = vec![false; self.r];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("tree", "not connected"));
        }
        Ok(())
    }

    pub fn undirected(&self) -> Vec<Edge> {
        self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
    }
}

/// Streams the `2^{r-1} r^{r-2}` directed trees; bit `i` of the orientation mask reverses edge `i`.
pub fn enumerate_directed(r: usize) -> Result<impl Iterator<Item = DirectedTree>> {
    let trees = enumerate_trees(r)?;
    Ok(trees.flat_map(move |edges| {
        let m = edges.len();
        (0..1u64 << m).map(move |mask| DirectedTree {
            r,
            edges: edges
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| if mask >> i & 1 == 1 { (b, a) } else { (a, b) })
                .collect(),
        })
    }))
}

/// Per-vertex incoming (`theta`), outgoing (`theta_bar`) and total (`d`) line counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incidence {
    pub theta: Vec<usize>,
    pub theta_bar: Vec<usize>,
    pub d: Vec<usize>,
}

pub fn incidence(t: &DirectedTree) -> Incidence {
    let mut theta = vec![0; t.r];
    let mut theta_bar = vec![0; t.r];
    for &(from, to) in &t.edges {
        theta_bar[from] += 1;
        theta[to] += 1;
    }
    let d = theta.iter().zip(&theta_bar).map(|(a, b)| a + b).collect();
    Incidence { theta, theta_bar, d }
}

/// Degree sequence of an undirected tree.
pub fn degrees(edges: &[Edge], r: usize) -> Vec<usize> {
    let mut d = vec![0; r];
    for &(a, b) in edges {
        d[a] += 1;
        d[b] += 1;
    }
    d
}

fn factorial_u128(k: usize) -> u128 {
    (1..=k as u128).product()
}

/// Enumerated and closed-form counts of trees with a prescribed degree sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CayleyCheck {
    pub degrees: Vec<usize>,
    pub enumerated: u64,
    /// `(r-2)! / prod (d_q - 1)!`
    pub formula: u64,
    /// `(1/p!) prod d_q!`
    pub weight: f64,
    /// `prod d_q / #trees`
    pub weight_from_count: f64,
}

impl CayleyCheck {
    pub fn holds(&self) -> bool {
        self.enumerated == self.formula && (self.weight - self.weight_from_count).abs() <= 1e-12 * self.weight
    }
}

fn check_degree_sequence(r: usize, d: &[usize]) -> Result<()> {
    if d.len() != r || d.iter().any(|&x| x == 0) || d.iter().sum::<usize>() != 2 * (r - 1) {
        return Err(invalid("degrees", "need r entries >= 1 summing to 2(r-1)"));
    }
    Ok(())
}

fn cayley_formula(r: usize, d: &[usize]) -> u64 {
    let num = factorial_u128(r.saturating_sub(2));
    let den: u128 = d.iter().map(|&x| factorial_u128(x - 1)).product();
    (num / den) as u64
}

fn cayley_from_count(r: usize, d: &[usize], enumerated: u64) -> CayleyCheck {
    let p = r.saturating_sub(2);
    let weight = d.iter().map(|&x| factorial_u128(x) as f64).product::<f64>() / factorial_u128(p) as f64;
    let prod_d: f64 = d.iter().map(|&x| x as f64).product();
    CayleyCheck {
        degrees: d.to_vec(),
        enumerated,
        formula: cayley_formula(r, d),
        weight,
        weight_from_count: if enumerated > 0 { prod_d / enumerated as f64 } else { f64::INFINITY },
    }
}

pub fn cayley_count_check(r: usize, d: &[usize]) -> Result<CayleyCheck> {
    check_r(r)?;
    check_degree_sequence(r, d)?;
    let count = enumerate_trees(r)?.filter(|t| degrees(t, r) == d).count() as u64;
    Ok(cayley_from_count(r, d, count))
}

/// All degree sequences (`d_q >= 1`, sum `2(r-1)`) in lexicographic order.
pub fn degree_sequences(r: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for v in 1..=left.saturating_sub(slots - 1) {
            cur.push(v);
            rec(left - v, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if r == 1 {
        return vec![vec![0]];
    }
    rec(2 * (r - 1), r, &mut Vec::new(), &mut out);
    out
}

/// Cayley checks for every degree sequence on `r` vertices from one enumeration pass.
pub fn cayley_all(r: usize) -> Result<Vec<CayleyCheck>> {
    check_r(r)?;
    if r < 2 {
        return Ok(Vec::new());
    }
    let mut hist: HashMap<Vec<usize>, u64> = HashMap::new();
    for t in enumerate_trees(r)? {
        *hist.entry(degrees(&t, r)).or_default() += 1;
    }
    Ok(degree_sequences(r)
        .into_iter()
        .map(|d| {
            let n = hist.get(&d).copied().unwrap_or(0);
            cayley_from_count(r, &d, n)
        })
        .collect())
}

/// The path from `r-2` to `r-1` and the rooted forests hanging off its vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathForest {
    /// Path vertices from `r-2` to `r-1`.
    pub path: Vec<usize>,
    /// For each path vertex, the other vertices of the subtree attached there.
    pub forests: Vec<Vec<usize>>,
    /// Edges of each forest, with their orientation from the tree.
    pub forest_edges: Vec<Vec<Edge>>,
}

impl PathForest {
    pub fn path_len(&self) -> usize {
        self.path.len() - 1
    }

    /// `sum |V_s| + (|P| + 1)`, which must equal `r`.
    pub fn vertex_count(&self) -> usize {
        self.forests.iter().map(Vec::len).sum::<usize>() + self.path.len()
    }
}

pub fn path_forest_decompose(t: &DirectedTree) -> Result<PathForest> {
    t.validate()?;
    if t.r < 2 {
        return Err(invalid("tree", "needs at least the two external vertices"));
    }
    let r = t.r;
    let adj = adjacency(&t.edges, r)?;
    let (start, end) = (r - 2, r - 1);
    let mut prev = vec![usize::MAX; r];
    let mut queue = VecDeque::from([start]);
    prev[start] = start;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if prev[w] == usize::MAX {
                prev[w] = v;
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![end];
    while *path.last().unwrap() != start {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    let on_path: Vec<bool> = (0..r).map(|v| path.contains(&v)).collect();
    let mut owner = vec![usize::MAX; r];
    for (s, &root) in path.iter().enumerate() {
        owner[root] = s;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !on_path[w] && owner[w] == usize::MAX {
                    owner[w] = s;
                    stack.push(w);
                }
            }
        }
    }
    let mut forests = vec![Vec::new(); path.len()];
    for v in 0..r {
        if !on_path[v] {
            forests[owner[v]].push(v);
        }
    }
    let mut forest_edges = vec![Vec::new(); path.len()];
    for &(a, b) in &t.edges {
        if on_path[a] && on_path[b] {
            continue;
        }
        let s = if on_path[a] { owner[b] } else { owner[a] };
        forest_edges[s].push((a, b));
    }
    Ok(PathForest {
        path,
        forests,
        forest_edges,
    })
}

/// `(d(tau_{r-2}, tau_{r-1}), sum over path lines of d(tau_q, tau_q'))`.
pub fn path_triangle_check(t: &DirectedTree, times: &[f64], beta: f64) -> Result<(f64, f64)> {
    if times.len() != t.r {
        return Err(Error::DimensionMismatch {
            expected: t.r,
            found: times.len(),
        });
    }
    let pf = path_forest_decompose(t)?;
    let lhs = time_distance(times[t.r - 2], times[t.r - 1], beta);
    let rhs = pf
        .path
        .windows(2)
        .map(|w| time_distance(times[w[0]], times[w[1]], beta))
        .sum();
    Ok((lhs, rhs))
}

/// `(sum_theta C(m, theta) delta^{m - theta}, (1 + delta)^m)` in exact integer arithmetic.
pub fn binomial_resummation(m: u32, delta: u64) -> (u128, u128) {
    let mut sum = 0u128;
    let mut binom = 1u128;
    for theta in 0..=m {
        sum += binom * (delta as u128).pow(m - theta);
        binom = binom * (m - theta) as u128 / (theta + 1) as u128;
    }
    (sum, (1 + delta as u128).pow(m))
}

/// Largest `prod d_q / 2^{p+1}` over all degree sequences on `r = p + 2` vertices.
pub fn am_gm_max_ratio(r: usize) -> f64 {
    let p = r.saturating_sub(2);
    degree_sequences(r)
        .iter()
        .map(|d| d.iter().map(|&x| x as f64).product::<f64>() / 2f64.powi(p as i32 + 1))
        .fold(0.0, f64::max)
}

/// `(2 alpha)^{p+1} ||V||^p |||A||| ||B||`, the bound on the order-`p` term.
pub fn series_bound(p: usize, alpha: f64, norm_v: f64, norm_a_total: f64, norm_b_local: f64) -> f64 {
    (2.0 * alpha).powi(p as i32 + 1) * norm_v.powi(p as i32) * norm_a_total * norm_b_local
}

/// `sum_{p >= from} series_bound(p, ..)` in closed form; the geometric ratio is `2 alpha ||V||`.
pub fn series_sum(alpha: f64, norm_v: f64, norm_a_total: f64, norm_b_local: f64, from_p: usize) -> Result<f64> {
    let q = 2.0 * alpha * norm_v;
    if q >= 1.0 {
        return Err(Error::Hypothesis(format!("2 alpha ||V|| = {q} is not below 1")));
    }
    Ok(series_bound(from_p, alpha, norm_v, norm_a_total, norm_b_local) / (1.0 - q))
}

/// Counts and identity checks over the combinatorial layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinatoricsAudit {
    pub tree_counts: Vec<(usize, u64, u64)>,
    pub directed_counts: Vec<(usize, u64, u64)>,
    pub cayley_failures: usize,
    pub cayley_sequences: usize,
    pub binomial_failures: usize,
    pub am_gm_max_ratio: f64,
    pub path_decomposition_failures: usize,
    pub triangle_max_ratio: f64,
}

impl CombinatoricsAudit {
    pub fn passed(&self) -> bool {
        self.tree_counts.iter().all(|&(_, a, b)| a == b)
            && self.directed_counts.iter().all(|&(_, a, b)| a == b)
            && self.cayley_failures == 0
            && self.binomial_failures == 0
            && self.am_gm_max_ratio <= 1.0
            && self.path_decomposition_failures == 0
            && self.triangle_max_ratio <= 1.0 + 1e-12
    }
}

/// Runs the exhaustive checks: tree counts and Cayley sequences for `r <= max_r`, directed
/// counts for `r <= max_directed`, binomial and AM-GM steps for `r <= 8`, path
/// decompositions over all `r = 8` trees, and triangle inequalities on `r = 6` directed
/// trees with pseudo-random times.
pub fn audit(max_r: usize, max_directed: usize, seed: u64) -> Result<CombinatoricsAudit> {
    use rand::{Rng, SeedableRng};
    let mut tree_counts = Vec::new();
    let mut cayley_failures = 0;
    let mut cayley_sequences = 0;
    for r in 1..=max_r {
        tree_counts.push((r, enumerate_trees(r)?.count() as u64, (r as u64).pow(r.saturating_sub(2) as u32)));
        for chk in cayley_all(r)? {
            cayley_sequences += 1;
            if !chk.holds() {
                cayley_failures += 1;
            }
        }
    }
    let mut directed_counts = Vec::new();
    for r in 1..=max_directed {
        let n = enumerate_directed(r)?.count() as u64;
        directed_counts.push((r, n, (1u64 << (r - 1)) * (r as u64).pow(r.saturating_sub(2) as u32)));
    }
    let binomial_failures = (0..=12u32)
        .filter(|&m| {
            let (a, b) = binomial_resummation(m, 2);
            a != b
        })
        .count();
    let am_gm = (2..=8).map(am_gm_max_ratio).fold(0.0, f64::max);
    let mut path_failures = 0;
    for edges in enumerate_trees(8)? {
        let t = DirectedTree { r: 8, edges };
        let pf = path_forest_decompose(&t)?;
        if pf.vertex_count() != 8 || pf.path[0] != 6 || *pf.path.last().unwrap() != 7 {
            path_failures += 1;
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let beta = 1.0;
    let mut tri = 0.0f64;
    for t in enumerate_directed(6)? {
        let times: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..beta)).collect();
        let (lhs, rhs) = path_triangle_check(&t, &times, beta)?;
        if rhs > 0.0 {
            tri = tri.max(lhs / rhs);
        } else if lhs > 0.0 {
            tri = f64::INFINITY;
        }
    }
    Ok(CombinatoricsAudit {
        tree_counts,
        directed_counts,
        cayley_failures,
        cayley_sequences,
        binomial_failures,
        am_gm_max_ratio: am_gm,
        path_decomposition_failures: path_failures,
        triangle_max_ratio: tri,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tree_counts() {
        assert_eq!(enumerate_trees(2).unwrap().count(), 1);
        assert_eq!(enumerate_trees(3).unwrap().count(), 3);
        assert_eq!(enumerate_trees(4).unwrap().count(), 16);
        assert!(enumerate_trees(10).is_err());
    }

    #[test]
    fn directed_counts_match_orientation_enumeration() {
        assert_eq!(enumerate_directed(2).unwrap().count(), 2);
        // independent oracle: orient every edge of every tree by brute force over pairs
        let mut brute = 0;
        for edges in enumerate_trees(3).unwrap() {
            for a in [false, true] {
                for b in [false, true] {
                    let e = [(edges[0], a), (edges[1], b)]
                        .iter()
                        .map(|&((x, y), f)| if f { (y, x) } else { (x, y) })
                        .collect::<Vec<_>>();
                    assert!(DirectedTree::new(3, e).is_ok());
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 12);
        assert_eq!(enumerate_directed(3).unwrap().count(), 12);
        for t in enumerate_directed(5).unwrap() {
            t.validate().unwrap();
            let inc = incidence(&t);
            for q in 0..5 {
                assert_eq!(inc.theta[q] + inc.theta_bar[q], inc.d[q]);
            }
        }
    }

    #[test]
    fn incidence_examples() {
        let path = DirectedTree::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let inc = incidence(&path);
        assert_eq!(inc.theta, vec![0, 1, 1]);
        assert_eq!(inc.theta_bar, vec![1, 1, 0]);
        let star = DirectedTree::new(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(incidence(&star).theta_bar[0], 3);
        let t = DirectedTree::new(7, prufer_decode(&[3, 3, 0, 6, 2], 7).unwrap()).unwrap();
        assert_eq!(incidence(&t).d.iter().sum::<usize>(), 12);
        assert!(DirectedTree::new(3, vec![(0, 1), (1, 0)]).is_err());
        assert!(DirectedTree::new(4, vec![(0, 1), (1, 0), (2, 3)]).is_err());
    }

    #[test]
    fn cayley_examples() {
        let c = cayley_count_check(3, &[1, 2, 1]).unwrap();
        assert_eq!((c.enumerated, c.formula), (1, 1));
        let c = cayley_count_check(4, &[3, 1, 1, 1]).unwrap();
        assert_eq!((c.enumerated, c.formula), (1, 1));
        assert!(c.holds());
        for c in cayley_all(5).unwrap() {
            assert!(c.holds(), "{c:?}");
        }
        assert!(cayley_count_check(4, &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn path_forest_examples() {
        let t = DirectedTree::new(2, vec![(0, 1)]).unwrap();
        let pf = path_forest_decompose(&t).unwrap();
        assert_eq!(pf.path, vec![0, 1]);
        assert!(pf.forests.iter().all(Vec::is_empty));
        // star at the first external vertex, p = 3
        let star = DirectedTree::new(5, vec![(3, 0), (3, 1), (3, 2), (3, 4)]).unwrap();
        let pf = path_forest_decompose(&star).unwrap();
        assert_eq!(pf.path_len(), 1);
        assert_eq!(pf.forests[0].len(), 3);
        assert_eq!(pf.vertex_count(), 5);
    }

    #[test]
    fn binomial_and_am_gm() {
        for m in 0..=12 {
            let (a, b) = binomial_resummation(m, 2);
            assert_eq!(a, b);
        }
        for r in 2..=8 {
            assert!(am_gm_max_ratio(r) <= 1.0);
        }
    }

    #[test]
    fn series_examples() {
        assert_eq!(series_bound(2, 0.3, 0.0, 2.0, 3.0), 0.0);
        assert_relative_eq!(series_bound(0, 0.3, 0.0, 2.0, 3.0), 2.0 * 0.3 * 6.0);
        let (a, v, na, nb) = (0.4, 0.5, 3.0, 2.0);
        let direct: f64 = (0..400).map(|p| series_bound(p, a, v, na, nb)).sum();
        assert_relative_eq!(series_sum(a, v, na, nb, 0).unwrap(), direct, max_relative = 1e-14);
        let direct1: f64 = (1..400).map(|p| series_bound(p, a, v, na, nb)).sum();
        assert_relative_eq!(series_sum(a, v, na, nb, 1).unwrap(), direct1, max_relative = 1e-14);
        assert!(series_sum(1.0, 0.5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn small_audit_passes() {
        let a = audit(6, 5, 1).unwrap();
        assert!(a.passed(), "{a:?}");
    }

    proptest! {
        #[test]
        fn prufer_roundtrip(r in 2usize..=7, raw in proptest::collection::vec(0usize..7, 5)) {
            let seq: Vec<usize> = raw.into_iter().take(r - 2).map(|v| v % r).collect();
            let edges = prufer_decode(&seq, r).unwrap();
            prop_assert_eq!(prufer_encode(&edges, r).unwrap(), seq);
        }
    }
}
