use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

use super::element::element_stiffness;

/// Global stiffness matrix, two DOFs per node ordered `(u_x, u_y)`.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    pub matrix: CsrMatrix,
}

impl StiffnessSystem {
    pub fn dof_count(&self) -> usize {
        self.matrix.dim()
    }
}

/// Fixed value for one global DOF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrescribedDof {
    pub dof: usize,
    pub value: f64,
}

impl PrescribedDof {
    pub fn new(dof: usize, value: f64) -> Self {
        PrescribedDof { dof, value }
    }
}

pub fn assemble_stiffness(mesh: &Mesh) -> Result<StiffnessSystem> {
    let mut triplets = Vec::with_capacity(mesh.element_count() * 64);
    for (e, conn) in mesh.elements.iter().enumerate() {
        let material = &mesh.materials[mesh.element_material[e]];
        let ke = element_stiffness(&mesh.element_coords(e), material).map_err(|err| match err {
            Error::InvertedElement { det, .. } => Error::InvertedElement { element: e, det },
            other => other,
        })?;
        let dofs: Vec<usize> = conn.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        for (a, &ra) in dofs.iter().enumerate() {
            for (b, &cb) in dofs.iter().enumerate() {
                triplets.push((ra, cb, ke[(a, b)]));
            }
        }
    }
    Ok(StiffnessSystem {
        matrix: CsrMatrix::from_triplets(mesh.dof_count(), &triplets),
    })
}

/// Solves `K u = f` with prescribed displacements eliminated. `loads`
/// defaults to zero.
pub fn solve_step(
    system: &StiffnessSystem,
    constraints: &[PrescribedDof],
    loads: Option<&[f64]>,
) -> Result<Vec<f64>> {
    ConstrainedSolver::new(system).solve(constraints, loads)
}

/// Reuses the factorization while the constrained DOF set is unchanged.
#[derive(Debug)]
pub struct ConstrainedSolver<'a> {
    system: &'a StiffnessSystem,
    cache: Option<Factorization>,
}

#[derive(Debug)]
struct Factorization {
    constrained: Vec<usize>,
    free: Vec<usize>,
    chol: EnvelopeCholesky,
}

pub(crate) const RESIDUAL_TOLERANCE: f64 = 1e-8;

fn describe(constrained: &[usize]) -> String {
    const SHOWN: usize = 12;
    let head: Vec<String> = constrained
        .iter()
        .take(SHOWN)
        .map(|d| d.to_string())
        .collect();
    let more = constrained.len().saturating_sub(SHOWN);
    if more > 0 {
        format!(
            "{} constrained dofs: {} … (+{more})",
            constrained.len(),
            head.join(" ")
        )
    } else {
        format!("{} constrained dofs: {}", constrained.len(), head.join(" "))
    }
}

impl<'a> ConstrainedSolver<'a> {
    pub fn new(system: &'a StiffnessSystem) -> Self {
        ConstrainedSolver {
            system,
            cache: None,
        }
    }

    pub fn solve(
        &mut self,
        constraints: &[PrescribedDof],
        loads: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let n = self.system.dof_count();
        let mut prescribed: Vec<Option<f64>> = vec![None; n];
        for c in constraints {
            if c.dof >= n {
                return Err(Error::validation(
                    "constraints",
                    format!("dof {} out of range", c.dof),
                ));
            }
            if !c.value.is_finite() {
                return Err(Error::validation(
                    "constraints",
                    format!("dof {} has non-finite value", c.dof),
                ));
            }
            match prescribed[c.dof] {
                Some(v) if v != c.value => {
                    return Err(Error::validation(
                        "constraints",
                        format!("dof {} prescribed twice with different values", c.dof),
                    ))
                }
                _ => prescribed[c.dof] = Some(c.value),
            }
        }
        let constrained: Vec<usize> = (0..n).filter(|&d| prescribed[d].is_some()).collect();
        if let Some(f) = loads {
            if f.len() != n {
                return Err(Error::validation(
                    "loads",
                    format!("expected {n} entries, got {}", f.len()),
                ));
            }
        }

        let stale = self
            .cache
            .as_ref()
            .is_none_or(|c| c.constrained != constrained);
        if stale {
            let free: Vec<usize> = (0..n).filter(|&d| prescribed[d].is_none()).collect();
            let chol =
                EnvelopeCholesky::factor(&self.system.matrix, &free).map_err(|e| match e {
                    Error::Singular { context } => Error::Singular {
                        context: format!("{context}; {}", describe(&constrained)),
                    },
                    other => other,
                })?;
            self.cache = Some(Factorization {
                constrained: constrained.clone(),
                free,
                chol,
            });
        }
        let fact = self.cache.as_ref().expect("factorization cached above");

        let k = &self.system.matrix;
        let rhs: Vec<f64> = fact
            .free
            .iter()
            .map(|&d| {
                let f = loads.map_or(0.0, |l| l[d]);
                let coupling: f64 = k
                    .row(d)
                    .filter_map(|(c, v)| prescribed[c].map(|u| v * u))
                    .sum();
                f - coupling
            })
            .collect();
        let uf = fact.chol.solve(&rhs);

        let mut u = vec![0.0; n];
        for d in 0..n {
            if let Some(v) = prescribed[d] {
                u[d] = v;
            }
        }
        for (i, &d) in fact.free.iter().enumerate() {
            u[d] = uf[i];
        }

        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm > 0.0 {
            let res_norm = fact
                .free
                .iter()
                .zip(&rhs)
                .map(|(&d, &b)| {
                    let ku: f64 = k
                        .row(d)
                        .filter(|(c, _)| prescribed[*c].is_none())
                        .map(|(c, v)| v * u[c])
                        .sum();
                    (ku - b).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            let rel = res_norm / rhs_norm;
            if !(rel <= RESIDUAL_TOLERANCE) {
                return Err(Error::NotConverged {
                    residual: rel,
                    tolerance: RESIDUAL_TOLERANCE,
                    context: describe(&constrained),
                });
            }
        }
        Ok(u)
    }
}

/// Nodal forces `K u` (reactions at constrained DOFs when no loads act).
pub fn internal_forces(system: &StiffnessSystem, u: &[f64]) -> Vec<f64> {
    system.matrix.mul_vec(u)
}
