//! Interacting models `H(g) = H_0 + g V` on a Fock space.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fock::{self, FockBasis, FockMatrix};
use crate::lattice::{ring, SiteGraph};
use crate::linalg::{self, c};
use crate::normalorder::{density_density, nearest_neighbour_kernel, NormalOrderedOperator};
use crate::onebody::{build_hopping, one_body_gap, HoppingProfile, HoppingSpec, OneBodyOperator};

/// A one-body Hamiltonian, an interaction at unit coupling and their Fock matrices.
#[derive(Debug, Clone)]
pub struct Model {
    h0: OneBodyOperator,
    v_unit: NormalOrderedOperator,
    basis: FockBasis,
    h0_fock: FockMatrix,
    v_fock: FockMatrix,
}

impl Model {
    pub fn new(h0: OneBodyOperator, v_unit: NormalOrderedOperator) -> Result<Self> {
        if h0.n_sites() != v_unit.n_sites() {
            return Err(invalid("interaction", "lives on a different site set"));
        }
        if v_unit.constant() != linalg::ZERO {
            return Err(invalid("interaction", "v_{0,0} must vanish"));
        }
        let basis = FockBasis::new(h0.n_sites())?;
        let h0_fock = fock::second_quantize_quadratic(&h0, &basis)?;
        let v_fock = fock::second_quantize(&v_unit, &basis)?;
        Ok(Model {
            h0,
            v_unit,
            basis,
            h0_fock,
            v_fock,
        })
    }

    pub fn graph(&self) -> &Arc<SiteGraph> {
        self.h0.graph()
    }

    pub fn h0(&self) -> &OneBodyOperator {
        &self.h0
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn h0_fock(&self) -> &FockMatrix {
        &self.h0_fock
    }

    /// `V` at `g = 1`.
    pub fn v_unit(&self) -> &NormalOrderedOperator {
        &self.v_unit
    }

    pub fn v_fock(&self) -> &FockMatrix {
        &self.v_fock
    }

    /// The interaction at coupling `g`.
    pub fn interaction(&self, g: Complex64) -> NormalOrderedOperator {
        self.v_unit.scale(g)
    }

    /// `H_0 + g V`.
    pub fn hamiltonian(&self, g: Complex64) -> FockMatrix {
        &self.h0_fock + &self.v_fock * g
    }

    pub fn one_body_gap(&self) -> Result<f64> {
        Ok(one_body_gap(self.h0.spectrum()?))
    }

    /// Fock operator norm of the unit interaction.
    pub fn v_operator_norm(&self) -> f64 {
        if linalg::hermiticity_defect(&self.v_fock) == 0.0 {
            linalg::hermitian_eigenvalues(&self.v_fock)
                .iter()
                .map(|e| e.abs())
                .fold(0.0, f64::max)
        } else {
            linalg::operator_norm(&self.v_fock)
        }
    }

    /// `H(g)` is Hermitian iff `g` is real and `V` is self-adjoint.
    pub fn is_hermitian_at(&self, g: Complex64) -> bool {
        g.im == 0.0 && linalg::hermiticity_defect(&self.v_fock) <= 1e-13
    }
}

/// Ring of length `l` with nearest-neighbour hopping `t`, staggered potential `±delta`
/// and dimerization, carrying a nearest-neighbour density-density interaction at unit
/// coupling.
pub fn chain_model(l: usize, t: f64, staggered: f64, dimerization: f64) -> Result<Model> {
    let graph = Arc::new(ring(l)?);
    let mut spec = HoppingSpec::new(HoppingProfile::nearest_neighbour(t));
    spec.staggered = staggered;
    spec.dimerization = dimerization;
    let h0 = build_hopping(graph.clone(), &spec)?;
    let v = density_density(graph.clone(), &nearest_neighbour_kernel(&graph), c(1.0, 0.0))?;
    Model::new(h0, v)
}

/// Two sites with energies `e0`, `e1`, hopping `t` and the interaction `v n_0 n_1` at unit coupling.
pub fn pair_model(t: f64, e0: f64, e1: f64, v: f64) -> Result<Model> {
    let graph = Arc::new(SiteGraph::complete(2)?);
    let k = linalg::CMatrix::from_row_slice(2, 2, &[c(e0, 0.0), c(t, 0.0), c(t, 0.0), c(e1, 0.0)]);
    let h0 = OneBodyOperator::new(graph.clone(), k, true)?;
    let interaction = density_density(graph, &[0.0, v / 2.0, v / 2.0, 0.0], c(1.0, 0.0))?;
    Model::new(h0, interaction)
}
