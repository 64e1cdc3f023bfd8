use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;

use super::element::{corner_stress_operators, BMatrix};
use super::PA_PER_MPA;

/// Plane-strain stress state in Pa. Out-of-plane shears vanish.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StressTensor2D {
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub sigma_zz: f64,
    pub tau_xy: f64,
}

impl StressTensor2D {
    /// Builds the tensor from in-plane components, closing `σzz = ν(σxx + σyy)`.
    pub fn plane_strain(sigma_xx: f64, sigma_yy: f64, tau_xy: f64, poisson_ratio: f64) -> Self {
        StressTensor2D {
            sigma_xx,
            sigma_yy,
            sigma_zz: poisson_ratio * (sigma_xx + sigma_yy),
            tau_xy,
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        StressTensor2D {
            sigma_xx: self.sigma_xx * k,
            sigma_yy: self.sigma_yy * k,
            sigma_zz: self.sigma_zz * k,
            tau_xy: self.tau_xy * k,
        }
    }

    pub fn von_mises(&self) -> f64 {
        von_mises(self)
    }
}

/// Equivalent (von Mises) stress.
pub fn von_mises(t: &StressTensor2D) -> f64 {
    let d1 = t.sigma_xx - t.sigma_yy;
    let d2 = t.sigma_yy - t.sigma_zz;
    let d3 = t.sigma_zz - t.sigma_xx;
    (0.5 * (d1 * d1 + d2 * d2 + d3 * d3 + 6.0 * t.tau_xy * t.tau_xy)).sqrt()
}

/// Linear map from the global displacement vector to the averaged nodal
/// stress at one node. Each contributing element adds a `[σxx, σyy, τxy]`
/// operator and its Poisson ratio for the out-of-plane component.
#[derive(Debug, Clone)]
pub struct NodalStressOperator {
    node: usize,
    parts: Vec<(BMatrix, [usize; 8], f64)>,
}

impl NodalStressOperator {
    pub fn new(mesh: &Mesh, node: usize) -> Self {
        let mut parts = Vec::new();
        for (e, conn) in mesh.elements.iter().enumerate() {
            let Some(corner) = conn.iter().position(|&n| n == node) else {
                continue;
            };
            let material = &mesh.materials[mesh.element_material[e]];
            let ops = corner_stress_operators(&mesh.element_coords(e), material);
            let dofs = [0, 1, 2, 3].map(|k| conn[k]).map(|n| [2 * n, 2 * n + 1]);
            let dofs: [usize; 8] = std::array::from_fn(|i| dofs[i / 2][i % 2]);
            parts.push((ops[corner], dofs, material.poisson_ratio));
        }
        NodalStressOperator { node, parts }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Stress in Pa for displacements `u` in mm.
    pub fn apply(&self, u: &[f64]) -> StressTensor2D {
        if self.parts.is_empty() {
            return StressTensor2D::default();
        }
        let mut acc = StressTensor2D::default();
        for (op, dofs, nu) in &self.parts {
            let mut s = [0.0; 3];
            for (r, out) in s.iter_mut().enumerate() {
                *out = dofs
                    .iter()
                    .enumerate()
                    .map(|(c, &d)| op[(r, c)] * u[d])
                    .sum();
            }
            acc.sigma_xx += s[0];
            acc.sigma_yy += s[1];
            acc.sigma_zz += nu * (s[0] + s[1]);
            acc.tau_xy += s[2];
        }
        acc.scaled(PA_PER_MPA / self.parts.len() as f64)
    }
}

/// Nodal stresses in Pa: Gauss-point stresses extrapolated to element
/// corners and averaged over the elements sharing each node.
pub fn recover_stress(mesh: &Mesh, u: &[f64]) -> Vec<StressTensor2D> {
    let mut acc = vec![StressTensor2D::default(); mesh.node_count()];
    let mut count = vec![0usize; mesh.node_count()];
    for (e, conn) in mesh.elements.iter().enumerate() {
        let material = &mesh.materials[mesh.element_material[e]];
        let ops = corner_stress_operators(&mesh.element_coords(e), material);
        let ue: [f64; 8] = std::array::from_fn(|i| u[2 * conn[i / 2] + i % 2]);
        for (k, &n) in conn.iter().enumerate() {
            let mut s = [0.0; 3];
            for (r, out) in s.iter_mut().enumerate() {
                *out = (0..8).map(|c| ops[k][(r, c)] * ue[c]).sum();
            }
            let t = &mut acc[n];
            t.sigma_xx += s[0];
            t.sigma_yy += s[1];
            t.sigma_zz += material.poisson_ratio * (s[0] + s[1]);
            t.tau_xy += s[2];
            count[n] += 1;
        }
    }
    acc.iter()
        .zip(&count)
        .map(|(t, &c)| {
            if c == 0 {
                *t
            } else {
                t.scaled(PA_PER_MPA / c as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniaxial_shear_and_hydrostatic_identities() {
        let s = -3.5e3;
        let uni = StressTensor2D {
            sigma_xx: s,
            ..Default::default()
        };
        assert!((von_mises(&uni) - s.abs()).abs() < 1e-12 * s.abs());
        let shear = StressTensor2D {
            tau_xy: s,
            ..Default::default()
        };
        assert!((von_mises(&shear) - 3f64.sqrt() * s.abs()).abs() < 1e-12 * s.abs());
        let hydro = StressTensor2D {
            sigma_xx: s,
            sigma_yy: s,
            sigma_zz: s,
            tau_xy: 0.0,
        };
        assert_eq!(von_mises(&hydro), 0.0);
    }

    #[test]
    fn plane_strain_closure() {
        let t = StressTensor2D::plane_strain(2.0, 4.0, 1.0, 0.25);
        assert_eq!(t.sigma_zz, 1.5);
    }
}
