use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;

use super::assembly::PrescribedDof;

/// Rigid circular indenter. `depth` arguments measure how far the lowest
/// point of the circle sits below the undeformed surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indenter {
    pub diameter_mm: f64,
    pub center_x_mm: f64,
}

impl Indenter {
    pub fn radius(&self) -> f64 {
        self.diameter_mm / 2.0
    }

    /// Height of the indenter's lower profile above its lowest point at
    /// horizontal position `x`, or `None` outside its footprint.
    pub fn profile_lift(&self, x: f64) -> Option<f64> {
        let r = self.radius();
        let dx = x - self.center_x_mm;
        (dx.abs() <= r).then(|| r - (r * r - dx * dx).max(0.0).sqrt())
    }

    /// Vertical gap between the undeformed flat surface at `x` and the
    /// indenter lowered by `depth`. Negative means penetration.
    pub fn gap(&self, x: f64, depth: f64) -> Option<f64> {
        self.profile_lift(x).map(|lift| lift - depth)
    }
}

/// How the contact set is chosen at each indenter position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactModel {
    /// Every node penetrated on the undeformed surface is pinned to the
    /// indenter profile, whatever the sign of its contact force.
    Geometric,
    /// Starts from the geometric set, then releases nodes the indenter would
    /// have to pull on and adds nodes the deformed surface pushes into the
    /// indenter, until neither happens.
    #[default]
    Unilateral,
}

/// Frictionless contact constraints: every surface node the indenter
/// reaches gets its vertical displacement prescribed to the indenter
/// profile; horizontal DOFs stay free.
pub fn contact_active_set(mesh: &Mesh, indenter: &Indenter, depth: f64) -> Vec<PrescribedDof> {
    mesh.surface_nodes
        .iter()
        .filter_map(|&n| {
            let gap = indenter.gap(mesh.nodes[n][0], depth)?;
            (gap <= 0.0).then_some(PrescribedDof::new(2 * n + 1, gap))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_is_zero_at_center_for_zero_depth() {
        let ind = Indenter {
            diameter_mm: 1.0,
            center_x_mm: 0.0,
        };
        assert_eq!(ind.gap(0.0, 0.0), Some(0.0));
        assert!(ind.gap(0.6, 0.0).is_none());
        assert!((ind.gap(0.3, 0.1).unwrap() - (0.5 - 0.4 - 0.1)).abs() < 1e-15);
    }
}
