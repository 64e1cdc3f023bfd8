//! Bilinear isoparametric quadrilateral in plane strain.

use nalgebra::{Matrix2, Matrix3, SMatrix};

use crate::error::{Error, Result};
use crate::mesh::MaterialLayer;

pub(crate) type BMatrix = SMatrix<f64, 3, 8>;
pub type ElementMatrix = SMatrix<f64, 8, 8>;

const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Plane-strain constitutive matrix mapping `[εxx, εyy, γxy]` to
/// `[σxx, σyy, τxy]`, in the units of the elastic modulus.
pub fn constitutive_matrix(material: &MaterialLayer) -> Matrix3<f64> {
    let e = material.elastic_modulus_mpa;
    let nu = material.poisson_ratio;
    let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Matrix3::new(
        c * (1.0 - nu),
        c * nu,
        0.0,
        c * nu,
        c * (1.0 - nu),
        0.0,
        0.0,
        0.0,
        c * (1.0 - 2.0 * nu) / 2.0,
    )
}

fn gauss_points() -> [(f64, f64); 4] {
    let g = 1.0 / 3f64.sqrt();
    CORNERS.map(|(a, b)| (a * g, b * g))
}

/// Strain-displacement matrix and Jacobian determinant at `(ξ, η)`.
pub(crate) fn strain_displacement(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> (BMatrix, f64) {
    let dn_dxi = CORNERS.map(|(a, b)| a * (1.0 + b * eta) / 4.0);
    let dn_deta = CORNERS.map(|(a, b)| b * (1.0 + a * xi) / 4.0);
    let mut j = Matrix2::<f64>::zeros();
    for k in 0..4 {
        j[(0, 0)] += dn_dxi[k] * coords[k][0];
        j[(0, 1)] += dn_dxi[k] * coords[k][1];
        j[(1, 0)] += dn_deta[k] * coords[k][0];
        j[(1, 1)] += dn_deta[k] * coords[k][1];
    }
    let det = j.determinant();
    let inv = Matrix2::new(j[(1, 1)], -j[(0, 1)], -j[(1, 0)], j[(0, 0)]) / det;
    let mut b = BMatrix::zeros();
    for k in 0..4 {
        let dx = inv[(0, 0)] * dn_dxi[k] + inv[(0, 1)] * dn_deta[k];
        let dy = inv[(1, 0)] * dn_dxi[k] + inv[(1, 1)] * dn_deta[k];
        b[(0, 2 * k)] = dx;
        b[(1, 2 * k + 1)] = dy;
        b[(2, 2 * k)] = dy;
        b[(2, 2 * k + 1)] = dx;
    }
    (b, det)
}

/// Element stiffness by 2×2 Gauss quadrature (unit thickness).
pub fn element_stiffness(
    coords: &[[f64; 2]; 4],
    material: &MaterialLayer,
) -> Result<ElementMatrix> {
    let d = constitutive_matrix(material);
    let mut k = ElementMatrix::zeros();
    for (xi, eta) in gauss_points() {
        let (b, det) = strain_displacement(coords, xi, eta);
        if !(det > 0.0) {
            return Err(Error::InvertedElement {
                element: usize::MAX,
                det,
            });
        }
        k += b.transpose() * d * b * det;
    }
    Ok(k)
}

/// Operators giving `[σxx, σyy, τxy]` at each corner from the element
/// displacement vector: Gauss-point stresses extrapolated bilinearly.
pub(crate) fn corner_stress_operators(
    coords: &[[f64; 2]; 4],
    material: &MaterialLayer,
) -> [BMatrix; 4] {
    let d = constitutive_matrix(material);
    let gauss_ops: Vec<BMatrix> = gauss_points()
        .iter()
        .map(|&(xi, eta)| d * strain_displacement(coords, xi, eta).0)
        .collect();
    let s3 = 3f64.sqrt();
    CORNERS.map(|(xc, yc)| {
        let mut op = BMatrix::zeros();
        for (g, &(xg, yg)) in CORNERS.iter().enumerate() {
            let w = (1.0 + xg * xc * s3) * (1.0 + yg * yc * s3) / 4.0;
            op += gauss_ops[g] * w;
        }
        op
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    #[test]
    fn unit_square_matches_textbook_matrix() {
        let k = element_stiffness(&UNIT, &MaterialLayer::new("m", 1.0, 0.0)).unwrap();
        // Closed-form bilinear square, E = 1, ν = 0, unit thickness.
        let (k1, k2, k3, k4, k5, k6, k7, k8) =
            (0.5, 0.125, -0.25, -0.125, -0.25, -0.125, 0.0, 0.125);
        let expected = [
            [k1, k2, k3, k4, k5, k6, k7, k8],
            [k2, k1, k8, k7, k6, k5, k4, k3],
            [k3, k8, k1, k6, k7, k4, k5, k2],
            [k4, k7, k6, k1, k8, k3, k2, k5],
            [k5, k6, k7, k8, k1, k2, k3, k4],
            [k6, k5, k4, k3, k2, k1, k8, k7],
            [k7, k4, k5, k2, k3, k8, k1, k6],
            [k8, k3, k2, k5, k4, k7, k6, k1],
        ];
        for i in 0..8 {
            for j in 0..8 {
                assert!(
                    (k[(i, j)] - expected[i][j]).abs() < 1e-14,
                    "({i},{j}) {}",
                    k[(i, j)]
                );
            }
        }
    }

    #[test]
    fn rigid_translations_are_in_the_null_space() {
        let coords = [[0.0, 0.0], [1.3, 0.1], [1.1, 0.9], [-0.2, 1.2]];
        let k = element_stiffness(&coords, &MaterialLayer::new("m", 2.0, 0.45)).unwrap();
        let ux = SMatrix::<f64, 8, 1>::from_fn(|i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let uy = SMatrix::<f64, 8, 1>::from_fn(|i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
        assert!((k * ux).amax() < 1e-13);
        assert!((k * uy).amax() < 1e-13);
        assert!((k - k.transpose()).amax() < 1e-14);
    }

    #[test]
    fn clockwise_element_rejected() {
        let cw = [UNIT[0], UNIT[3], UNIT[2], UNIT[1]];
        assert!(element_stiffness(&cw, &MaterialLayer::new("m", 1.0, 0.3)).is_err());
    }

    #[test]
    fn corner_extrapolation_reproduces_constant_stress() {
        let coords = [[0.0, 0.0], [2.0, 0.2], [1.8, 1.5], [0.1, 1.0]];
        let mat = MaterialLayer::new("m", 1.0, 0.0);
        // u = 0.01·x: εxx = 0.01 → σxx = 0.01 with ν = 0.
        let u = SMatrix::<f64, 8, 1>::from_fn(|i, _| {
            if i % 2 == 0 {
                0.01 * coords[i / 2][0]
            } else {
                0.0
            }
        });
        for op in corner_stress_operators(&coords, &mat) {
            let s = op * u;
            assert!((s[0] - 0.01).abs() < 1e-15 && s[1].abs() < 1e-15 && s[2].abs() < 1e-15);
        }
    }
}
