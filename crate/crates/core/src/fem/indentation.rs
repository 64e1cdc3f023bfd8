//! Time-stepped indentation.
//!
//! Each step is an independent static solve with the contact set rebuilt
//! from the indenter position. Only surface nodes under the indenter
//! footprint can ever be in contact, so the model factors the stiffness once
//! with the bottom fixed and precomputes the response to a unit vertical
//! force at each such node. A step then reduces to a small dense solve for
//! the contact forces that close the gaps of the active nodes, which is the
//! same linear system as eliminating the prescribed displacements directly.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afferent::{AfferentType, PerAfferent};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::EnvelopeCholesky;

use super::assembly::{assemble_stiffness, StiffnessSystem};
use super::contact::{ContactModel, Indenter};
use super::stress::{NodalStressOperator, StressTensor2D};

/// Indenter geometry plus the displacement history it follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndenterSpec {
    pub diameter_mm: f64,
    pub center_x_mm: f64,
    /// Static depth added to every sample of the displacement trace.
    pub pre_indentation_mm: f64,
    pub dt_ms: f64,
    /// Indentation depth per step in mm, positive into the skin.
    pub displacement_mm: Vec<f64>,
}

impl IndenterSpec {
    pub fn indenter(&self) -> Indenter {
        Indenter {
            diameter_mm: self.diameter_mm,
            center_x_mm: self.center_x_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_mm.is_finite() && self.diameter_mm > 0.0) {
            return Err(Error::validation(
                "indenter.diameter_mm",
                "must be finite and > 0",
            ));
        }
        if !self.center_x_mm.is_finite() {
            return Err(Error::validation("indenter.center_x_mm", "must be finite"));
        }
        if !self.pre_indentation_mm.is_finite() {
            return Err(Error::validation(
                "indenter.pre_indentation_mm",
                "must be finite",
            ));
        }
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return Err(Error::validation(
                "indenter.dt_ms",
                "must be finite and > 0",
            ));
        }
        if self.displacement_mm.is_empty() {
            return Err(Error::validation(
                "indenter.displacement_mm",
                "trace is empty",
            ));
        }
        if let Some(k) = self.displacement_mm.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        Ok(())
    }
}

/// Von Mises stress history at one sampling node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressTrace {
    pub afferent: AfferentType,
    pub node_id: usize,
    pub dt_ms: f64,
    /// Pa, one value per step.
    pub values: Vec<f64>,
}

impl StressTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.values.len().saturating_sub(1) as f64 * self.dt_ms
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# afferent,node,dt_ms\n");
        let _ = writeln!(out, "# {},{},{}", self.afferent, self.node_id, self.dt_ms);
        out.push_str("t_ms,sigma_pa\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", k as f64 * self.dt_ms, v);
        }
        out
    }

    /// Parses [`StressTrace::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<StressTrace> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing {what}"),
            })
        };
        // Free-form comment lines may precede the header.
        loop {
            let (_, line) = next("header")?;
            if line.trim() == "# afferent,node,dt_ms" {
                break;
            }
            if !line.starts_with('#') {
                return Err(Error::Parse {
                    line: 0,
                    reason: "missing `# afferent,node,dt_ms` header".into(),
                });
            }
        }
        let (idx, meta) = next("metadata line")?;
        let meta_err = || Error::Parse {
            line: idx + 1,
            reason: "expected `# <afferent>,<node>,<dt_ms>`".into(),
        };
        let fields: Vec<&str> = meta.trim_start_matches('#').trim().split(',').collect();
        if fields.len() != 3 {
            return Err(meta_err());
        }
        let afferent: AfferentType = fields[0].parse().map_err(|_| meta_err())?;
        let node_id: usize = fields[1].trim().parse().map_err(|_| meta_err())?;
        let dt_ms: f64 = fields[2].trim().parse().map_err(|_| meta_err())?;
        next("column header")?;
        let mut values = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .nth(1)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    reason: "expected `t_ms,sigma_pa`".into(),
                })?;
            values.push(v);
        }
        Ok(StressTrace {
            afferent,
            node_id,
            dt_ms,
            values,
        })
    }
}

/// Surface deflection (positive downward) sampled along x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflectionProfile {
    pub x_mm: Vec<f64>,
    pub deflection_mm: Vec<f64>,
}

impl DeflectionProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_mm,deflection_mm\n");
        for (x, d) in self.x_mm.iter().zip(&self.deflection_mm) {
            let _ = writeln!(out, "{x},{d}");
        }
        out
    }

    pub fn max_deflection(&self) -> f64 {
        self.deflection_mm
            .iter()
            .fold(f64::NEG_INFINITY, |m, &d| m.max(d))
    }

    /// Deflection at `x`, interpolated between samples.
    pub fn at(&self, x: f64) -> Option<f64> {
        interpolate(&self.x_mm, &self.deflection_mm, x)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > *xs.last()? {
        return None;
    }
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return Some(ys[0]);
    }
    if i == xs.len() {
        return Some(ys[xs.len() - 1]);
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    Some(ys[i - 1] + t * (ys[i] - ys[i - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndentationOptions {
    pub contact: ContactModel,
    /// Record a surface deflection profile at every step.
    pub record_deflection: bool,
    pub deflection_interval_mm: f64,
}

impl Default for IndentationOptions {
    fn default() -> Self {
        IndentationOptions {
            contact: ContactModel::default(),
            record_deflection: false,
            deflection_interval_mm: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndentationResult {
    pub traces: PerAfferent<StressTrace>,
    /// One profile per step when requested, otherwise empty.
    pub deflection: Vec<DeflectionProfile>,
}

/// Precomputed contact compliance for one mesh and indenter footprint.
#[derive(Debug)]
pub struct IndentationModel<'m> {
    mesh: &'m Mesh,
    indenter: Indenter,
    contact: ContactModel,
    /// Surface nodes inside the footprint, ordered by x.
    candidates: Vec<usize>,
    /// Full displacement field for a unit upward force at each candidate.
    unit_fields: Vec<Vec<f64>>,
    /// Vertical displacement of candidate `i` under unit load at `j`.
    compliance: DMatrix<f64>,
    /// Nodal stress (Pa) at each afferent node per unit load at each candidate.
    unit_stress: PerAfferent<Vec<StressTensor2D>>,
    solves: HashMap<Vec<usize>, Cholesky<f64, Dyn>>,
}

impl<'m> IndentationModel<'m> {
    pub fn new(mesh: &'m Mesh, indenter: Indenter) -> Result<Self> {
        let system = assemble_stiffness(mesh)?;
        Self::with_system(mesh, &system, indenter)
    }

    pub fn with_system(
        mesh: &'m Mesh,
        system: &StiffnessSystem,
        indenter: Indenter,
    ) -> Result<Self> {
        let n = mesh.dof_count();
        let mut fixed = vec![false; n];
        for &b in &mesh.bottom_nodes {
            fixed[2 * b] = true;
            fixed[2 * b + 1] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&d| !fixed[d]).collect();
        let mut local = vec![usize::MAX; n];
        for (i, &d) in free.iter().enumerate() {
            local[d] = i;
        }
        let chol = EnvelopeCholesky::factor(&system.matrix, &free).map_err(|e| match e {
            Error::Singular { context } => Error::Singular {
                context: format!("{context}; bottom boundary fixed"),
            },
            other => other,
        })?;

        let candidates: Vec<usize> = mesh
            .surface_nodes
            .iter()
            .copied()
            .filter(|&s| indenter.profile_lift(mesh.nodes[s][0]).is_some())
            .filter(|&s| !fixed[2 * s + 1])
            .collect();

        let unit_fields: Vec<Vec<f64>> = candidates
            .par_iter()
            .map(|&s| {
                let mut rhs = vec![0.0; free.len()];
                rhs[local[2 * s + 1]] = 1.0;
                chol.solve_in_place(&mut rhs);
                let mut u = vec![0.0; n];
                for (i, &d) in free.iter().enumerate() {
                    u[d] = rhs[i];
                }
                u
            })
            .collect();

        let m = candidates.len();
        let mut compliance = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                compliance[(i, j)] = unit_fields[j][2 * candidates[i] + 1];
            }
        }
        // Symmetric by reciprocity; remove round-off asymmetry.
        let compliance = (&compliance + compliance.transpose()) * 0.5;

        let unit_stress = mesh.afferent_nodes.map(|_, &node| {
            let op = NodalStressOperator::new(mesh, node);
            unit_fields.iter().map(|u| op.apply(u)).collect()
        });

        Ok(IndentationModel {
            mesh,
            indenter,
            contact: ContactModel::default(),
            candidates,
            unit_fields,
            compliance,
            unit_stress,
            solves: HashMap::new(),
        })
    }

    pub fn candidate_nodes(&self) -> &[usize] {
        &self.candidates
    }

    pub fn with_contact(mut self, contact: ContactModel) -> Self {
        self.contact = contact;
        self
    }

    pub fn contact_model(&self) -> ContactModel {
        self.contact
    }

    /// Contact forces (N/mm, positive upward) for indentation `depth`, keyed
    /// by candidate index.
    fn contact_forces(&mut self, depth: f64) -> Result<Vec<(usize, f64)>> {
        let gaps: Vec<Option<f64>> = self
            .candidates
            .iter()
            .map(|&s| self.indenter.gap(self.mesh.nodes[s][0], depth))
            .collect();
        let mut active: Vec<usize> = (0..gaps.len())
            .filter(|&i| matches!(gaps[i], Some(g) if g <= 0.0))
            .collect();
        if self.contact == ContactModel::Geometric {
            let lambda = self.solve_active(&active, &gaps)?;
            return Ok(active.into_iter().zip(lambda).collect());
        }

        // Each pass either releases tensile nodes or adds penetrating ones;
        // the bound only guards against cycling.
        let max_iter = 4 * self.candidates.len() + 8;
        for _ in 0..max_iter {
            let lambda = self.solve_active(&active, &gaps)?;
            let scale = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tol = 1e-12 * scale;
            // Release only the most tensile node; releasing all at once can
            // oscillate.
            let worst = active
                .iter()
                .zip(&lambda)
                .filter(|(_, &f)| f > tol)
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(&i, _)| i);
            if let Some(worst) = worst {
                active.retain(|&i| i != worst);
                continue;
            }
            let gap_scale = gaps
                .iter()
                .flatten()
                .fold(0.0f64, |m, g| m.max(g.abs()))
                .max(1e-12);
            let mut entering = Vec::new();
            for (i, g) in gaps.iter().enumerate() {
                let Some(g) = *g else { continue };
                if active.contains(&i) {
                    continue;
                }
                let uy: f64 = active
                    .iter()
                    .zip(&lambda)
                    .map(|(&j, &f)| self.compliance[(i, j)] * f)
                    .sum();
                if uy > g + 1e-12 * gap_scale {
                    entering.push(i);
                }
            }
            if entering.is_empty() {
                return Ok(active.into_iter().zip(lambda).collect());
            }
            active.extend(entering);
            active.sort_unstable();
        }
        Err(Error::NotConverged {
            residual: f64::NAN,
            tolerance: 0.0,
            context: format!("contact set did not settle at depth {depth} mm"),
        })
    }

    fn solve_active(&mut self, active: &[usize], gaps: &[Option<f64>]) -> Result<Vec<f64>> {
        if active.is_empty() {
            return Ok(Vec::new());
        }
        if !self.solves.contains_key(active) {
            let sub = DMatrix::from_fn(active.len(), active.len(), |r, c| {
                self.compliance[(active[r], active[c])]
            });
            let chol = Cholesky::new(sub).ok_or_else(|| Error::Singular {
                context: format!(
                    "contact compliance for active nodes {:?}",
                    self.active_nodes(active)
                ),
            })?;
            self.solves.insert(active.to_vec(), chol);
        }
        let rhs =
            DVector::from_iterator(active.len(), active.iter().map(|&i| gaps[i].unwrap_or(0.0)));
        Ok(self.solves[active].solve(&rhs).iter().copied().collect())
    }

    fn active_nodes(&self, active: &[usize]) -> Vec<usize> {
        active.iter().map(|&i| self.candidates[i]).collect()
    }

    /// Full displacement field (mm) at indentation `depth`.
    pub fn displacement(&mut self, depth: f64) -> Result<Vec<f64>> {
        let forces = self.contact_forces(depth)?;
        let mut u = vec![0.0; self.mesh.dof_count()];
        for (i, f) in forces {
            for (ud, xd) in u.iter_mut().zip(&self.unit_fields[i]) {
                *ud += f * xd;
            }
        }
        Ok(u)
    }

    /// Nodal stress tensors (Pa) at the afferent nodes.
    pub fn afferent_stress(&mut self, depth: f64) -> Result<PerAfferent<StressTensor2D>> {
        let forces = self.contact_forces(depth)?;
        Ok(self.unit_stress.map(|_, unit| {
            let mut t = StressTensor2D::default();
            for &(i, f) in &forces {
                let s = unit[i];
                t.sigma_xx += f * s.sigma_xx;
                t.sigma_yy += f * s.sigma_yy;
                t.sigma_zz += f * s.sigma_zz;
                t.tau_xy += f * s.tau_xy;
            }
            t
        }))
    }

    /// Steps through `spec.displacement_mm`. The spec's indenter must be the
    /// one this model was built for; `options.contact` is ignored in favour
    /// of the model's own contact model.
    pub fn run(
        &mut self,
        spec: &IndenterSpec,
        options: &IndentationOptions,
    ) -> Result<IndentationResult> {
        spec.validate()?;
        if spec.indenter() != self.indenter {
            return Err(Error::validation(
                "indenter",
                "spec indenter differs from the model's",
            ));
        }
        if options.record_deflection
            && !(options.deflection_interval_mm.is_finite() && options.deflection_interval_mm > 0.0)
        {
            return Err(Error::validation(
                "deflection_interval_mm",
                "must be finite and > 0",
            ));
        }
        let steps = spec.displacement_mm.len();
        let mut values: PerAfferent<Vec<f64>> = PerAfferent::from_fn(|_| Vec::with_capacity(steps));
        let mut deflection = Vec::new();
        for (k, &d) in spec.displacement_mm.iter().enumerate() {
            let depth = spec.pre_indentation_mm + d;
            let stress = self.afferent_stress(depth).map_err(|e| e.at_step(k))?;
            for a in AfferentType::ALL {
                let vm = stress[a].von_mises();
                if !vm.is_finite() {
                    return Err(Error::NonFinite { step: k });
                }
                values[a].push(vm);
            }
            if options.record_deflection {
                let u = self.displacement(depth).map_err(|e| e.at_step(k))?;
                deflection.push(self.deflection_profile(&u, options.deflection_interval_mm));
            }
        }
        let traces = PerAfferent::from_fn(|a| StressTrace {
            afferent: a,
            node_id: self.mesh.afferent_nodes[a],
            dt_ms: spec.dt_ms,
            values: std::mem::take(&mut values[a]),
        });
        Ok(IndentationResult { traces, deflection })
    }

    /// Surface deflection sampled every `interval` mm outward from the
    /// indenter center, within the domain.
    pub fn deflection_profile(&self, u: &[f64], interval: f64) -> DeflectionProfile {
        let xs: Vec<f64> = self
            .mesh
            .surface_nodes
            .iter()
            .map(|&n| self.mesh.nodes[n][0])
            .collect();
        let ys: Vec<f64> = self
            .mesh
            .surface_nodes
            .iter()
            .map(|&n| -u[2 * n + 1])
            .collect();
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let c = self.indenter.center_x_mm;
        let k_lo = ((lo - c) / interval).ceil() as i64;
        let k_hi = ((hi - c) / interval).floor() as i64;
        let x_mm: Vec<f64> = (k_lo..=k_hi).map(|k| c + k as f64 * interval).collect();
        let deflection_mm = x_mm
            .iter()
            .map(|&x| interpolate(&xs, &ys, x).unwrap_or(0.0))
            .collect();
        DeflectionProfile {
            x_mm,
            deflection_mm,
        }
    }
}

pub fn run_indentation(
    mesh: &Mesh,
    spec: &IndenterSpec,
    options: &IndentationOptions,
) -> Result<IndentationResult> {
    // Fail on bad input before paying for the factorization.
    spec.validate()?;
    IndentationModel::new(mesh, spec.indenter())?
        .with_contact(options.contact)
        .run(spec, options)
}
