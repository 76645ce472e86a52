//! Finite site sets with a metric.
//!
//! A [`SiteGraph`] stores the full distance table; tori are built with the graph
//! distance of the nearest-neighbour lattice. Spin copies of a site sit at distance
//! zero from each other and inherit the spatial distance to every other site.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Coordinates and internal label of a site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteLabel {
    pub coords: Vec<usize>,
    pub spin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteGraph {
    n_sites: usize,
    distances: Vec<f64>,
    labels: Option<Vec<SiteLabel>>,
    extents: Option<Vec<usize>>,
}

impl SiteGraph {
    /// Builds a graph from an explicit distance table (row-major, `n × n`).
    pub fn from_distances(n_sites: usize, distances: Vec<f64>) -> Result<Self> {
        if n_sites == 0 {
            return Err(invalid("n_sites", "must be positive"));
        }
        if distances.len() != n_sites * n_sites {
            return Err(invalid(
                "distances",
                format!("expected {} entries", n_sites * n_sites),
            ));
        }
        let g = SiteGraph {
            n_sites,
            distances,
            labels: None,
            extents: None,
        };
        g.validate_metric()?;
        Ok(g)
    }

    /// A single isolated site.
    pub fn single_site() -> Self {
        SiteGraph {
            n_sites: 1,
            distances: vec![0.0],
            labels: None,
            extents: None,
        }
    }

    /// `n` sites with no spatial structure, all pairwise distances one.
    pub fn complete(n: usize) -> Result<Self> {
        let mut d = vec![1.0; n * n];
        for i in 0..n {
            d[i * n + i] = 0.0;
        }
        Self::from_distances(n, d)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    #[inline]
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.distances[x * self.n_sites + y]
    }

    pub fn labels(&self) -> Option<&[SiteLabel]> {
        self.labels.as_deref()
    }

    /// Linear extents of the torus, if the graph was built as one.
    pub fn torus_extents(&self) -> Option<&[usize]> {
        self.extents.as_deref()
    }

    pub fn spin_states(&self) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|s| s.spin + 1).max().unwrap_or(1))
            .unwrap_or(1)
    }

    fn validate_metric(&self) -> Result<()> {
        let n = self.n_sites;
        for x in 0..n {
            if self.distance(x, x) != 0.0 {
                return Err(invalid("distances", format!("d({x},{x}) != 0")));
            }
            for y in 0..n {
                let d = self.distance(x, y);
                if !d.is_finite() || d < 0.0 {
                    return Err(invalid("distances", format!("d({x},{y}) = {d}")));
                }
                if (d - self.distance(y, x)).abs() > 1e-12 {
                    return Err(invalid("distances", format!("d({x},{y}) not symmetric")));
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if self.distance(x, z) > self.distance(x, y) + self.distance(y, z) + 1e-12 {
                        return Err(invalid(
                            "distances",
                            format!("triangle inequality fails on ({x},{y},{z})"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Site index for torus coordinates and spin (row-major, spin fastest).
    pub fn torus_index(&self, coords: &[usize], spin: usize) -> Option<usize> {
        let ext = self.extents.as_ref()?;
        if coords.len() != ext.len() {
            return None;
        }
        let spins = self.spin_states();
        let mut idx = 0;
        for (c, l) in coords.iter().zip(ext) {
            if c >= l {
                return None;
            }
            idx = idx * l + c;
        }
        Some(idx * spins + spin)
    }
}

/// Builds the `dims`-dimensional torus with `extents[i]` sites along axis `i` and
/// `spin_states` internal states per site (0 means spinless).
pub fn build_torus(extents: &[usize], spin_states: usize) -> Result<SiteGraph> {
    if extents.is_empty() {
        return Err(invalid("L", "at least one dimension is required"));
    }
    if let Some(&l) = extents.iter().find(|&&l| l < 2) {
        return Err(invalid("L", format!("every extent must be >= 2, got {l}")));
    }
    let spins = spin_states.max(1);
    let n_cells: usize = extents.iter().product();
    let n = n_cells * spins;

    let mut cells = Vec::with_capacity(n_cells);
    for mut idx in 0..n_cells {
        let mut coords = vec![0; extents.len()];
        for axis in (0..extents.len()).rev() {
            coords[axis] = idx % extents[axis];
            idx /= extents[axis];
        }
        cells.push(coords);
    }
    let cell_distance = |a: &[usize], b: &[usize]| -> f64 {
        a.iter()
            .zip(b)
            .zip(extents)
            .map(|((&p, &q), &l)| {
                let d = p.abs_diff(q);
                d.min(l - d)
            })
            .sum::<usize>() as f64
    };

    let mut distances = vec![0.0; n * n];
    for (ca, a) in cells.iter().enumerate() {
        for (cb, b) in cells.iter().enumerate() {
            let d = cell_distance(a, b);
            for sa in 0..spins {
                for sb in 0..spins {
                    distances[(ca * spins + sa) * n + cb * spins + sb] = d;
                }
            }
        }
    }
    let labels = cells
        .iter()
        .flat_map(|c| {
            (0..spins).map(move |s| SiteLabel {
                coords: c.clone(),
                spin: s,
            })
        })
        .collect();
    Ok(SiteGraph {
        n_sites: n,
        distances,
        labels: Some(labels),
        extents: Some(extents.to_vec()),
    })
}

/// Ring of `l` sites.
pub fn ring(l: usize) -> Result<SiteGraph> {
    build_torus(&[l], 0)
}

/// Distance on the circle of circumference `beta`.
pub fn time_distance(tau: f64, tau_prime: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    let r = (tau - tau_prime).abs().rem_euclid(beta);
    r.min(beta - r)
}

/// Summability constant `sup_x sum_y (1 + d(x,y))^(-zeta)`.
pub fn k_zeta(graph: &SiteGraph, zeta: f64) -> f64 {
    let n = graph.n_sites();
    (0..n)
        .map(|x| {
            (0..n)
                .map(|y| (1.0 + graph.distance(x, y)).powf(-zeta))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Same sum, minimised over the base point.
pub fn k_zeta_min(graph: &SiteGraph, zeta: f64) -> f64 {
    let n = graph.n_sites();
    (0..n)
        .map(|x| {
            (0..n)
                .map(|y| (1.0 + graph.distance(x, y)).powf(-zeta))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn bfs_torus_distance(extents: &[usize], from: usize, to: usize) -> usize {
        let n: usize = extents.iter().product();
        let decode = |mut i: usize| {
            let mut c = vec![0; extents.len()];
            for a in (0..extents.len()).rev() {
                c[a] = i % extents[a];
                i /= extents[a];
            }
            c
        };
        let encode = |c: &[usize]| c.iter().zip(extents).fold(0, |acc, (x, l)| acc * l + x);
        let mut dist = vec![usize::MAX; n];
        dist[from] = 0;
        let mut q = VecDeque::from([from]);
        while let Some(v) = q.pop_front() {
            let c = decode(v);
            for a in 0..extents.len() {
                for step in [1, extents[a] - 1] {
                    let mut nb = c.clone();
                    nb[a] = (nb[a] + step) % extents[a];
                    let w = encode(&nb);
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        q.push_back(w);
                    }
                }
            }
        }
        dist[to]
    }

    #[test]
    fn ring_wraps_around() {
        let g = ring(4).unwrap();
        assert_eq!(g.n_sites(), 4);
        assert_eq!(g.distance(0, 3), 1.0);
        assert_eq!(build_torus(&[3, 3], 0).unwrap().n_sites(), 9);
    }

    #[test]
    fn torus_matches_bfs() {
        let ext = [4, 4];
        let g = build_torus(&ext, 0).unwrap();
        let a = g.torus_index(&[0, 0], 0).unwrap();
        let b = g.torus_index(&[2, 2], 0).unwrap();
        assert_eq!(g.distance(a, b), 4.0);
        for x in 0..16 {
            for y in 0..16 {
                assert_eq!(g.distance(x, y), bfs_torus_distance(&ext, x, y) as f64);
            }
        }
        let ext = [5, 3, 2];
        let g = build_torus(&ext, 0).unwrap();
        for x in 0..30 {
            for y in 0..30 {
                assert_eq!(g.distance(x, y), bfs_torus_distance(&ext, x, y) as f64);
            }
        }
    }

    #[test]
    fn rejects_degenerate_extent() {
        assert!(build_torus(&[1], 0).is_err());
        assert!(build_torus(&[4, 1], 0).is_err());
    }

    #[test]
    fn spin_copies_at_distance_zero() {
        let g = build_torus(&[4], 2).unwrap();
        assert_eq!(g.n_sites(), 8);
        assert_eq!(g.distance(0, 1), 0.0);
        assert_eq!(g.distance(0, 3), 1.0);
        assert_eq!(g.distance(1, 7), 1.0);
        // large zeta keeps only distance-zero terms: the site and its spin partner
        assert_relative_eq!(k_zeta(&g, 200.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn time_distance_examples() {
        assert_relative_eq!(time_distance(0.1, 0.9, 1.0), 0.2, epsilon = 1e-12);
        assert_eq!(time_distance(0.3, 0.3, 2.0), 0.0);
        assert_relative_eq!(time_distance(0.0, 0.5, 1.0), 0.5);
    }

    #[test]
    fn k_zeta_examples() {
        assert_eq!(k_zeta(&SiteGraph::single_site(), 1.0), 1.0);
        let g = ring(3).unwrap();
        assert_relative_eq!(k_zeta(&g, 1.0), 2.0, epsilon = 1e-14);
        let g = build_torus(&[6, 4], 0).unwrap();
        for zeta in [0.5, 1.0, 2.5] {
            assert_relative_eq!(k_zeta(&g, zeta), k_zeta_min(&g, zeta), epsilon = 1e-12);
        }
    }

    #[test]
    fn from_distances_rejects_non_metric() {
        assert!(SiteGraph::from_distances(3, vec![0., 1., 5., 1., 0., 1., 5., 1., 0.]).is_err());
        assert!(SiteGraph::from_distances(2, vec![0., 1., 2., 0.]).is_err());
        assert!(SiteGraph::complete(4).is_ok());
    }

    proptest! {
        #[test]
        fn k_zeta_decreasing(z1 in 0.1f64..5.0, dz in 0.01f64..3.0, l in 2usize..12) {
            let g = ring(l).unwrap();
            prop_assert!(k_zeta(&g, z1 + dz) <= k_zeta(&g, z1) + 1e-14);
            prop_assert!(k_zeta(&g, z1) >= 1.0);
        }

        #[test]
        fn time_distance_is_a_metric(a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
            let beta = 3.0;
            let d = |x, y| time_distance(x, y, beta);
            prop_assert!(d(a, b) >= 0.0 && d(a, b) <= beta / 2.0 + 1e-12);
            prop_assert!((d(a, b) - d(b, a)).abs() < 1e-12);
            prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
        }
    }
}
