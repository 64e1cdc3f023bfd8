mod support;

use std::time::Instant;

use afferentsim::fem::{
    assemble_stiffness, contact_active_set, internal_forces, recover_stress, run_indentation,
    solve_step, ContactModel, IndentationModel, IndentationOptions, Indenter, IndenterSpec,
    PrescribedDof, StressTensor2D,
};
use afferentsim::mesh::{build_mesh, GeometrySpec, MaterialLayer, Mesh};
use afferentsim::PerAfferent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

/// 4×4 elements on the unit square, graded toward the origin, interior
/// nodes jittered.
fn patch_mesh(material: MaterialLayer) -> Mesh {
    let grid = [0.0, 0.12, 0.3, 0.58, 1.0];
    let jitter = [
        [0.0; 2],
        [0.031, -0.017],
        [-0.022, 0.026],
        [0.014, 0.019],
        [-0.027, -0.011],
    ];
    let mut nodes = Vec::new();
    for (j, &y) in grid.iter().enumerate() {
        for (i, &x) in grid.iter().enumerate() {
            let interior = (1..4).contains(&i) && (1..4).contains(&j);
            let d = if interior {
                jitter[(i + 2 * j) % 5]
            } else {
                [0.0; 2]
            };
            nodes.push([x + d[0], y + d[1] - 1.0]);
        }
    }
    let id = |i: usize, j: usize| j * 5 + i;
    let mut elements = Vec::new();
    for j in 0..4 {
        for i in 0..4 {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mesh = Mesh {
        nodes,
        element_material: vec![0; elements.len()],
        elements,
        materials: vec![material],
        surface_nodes: (0..5).map(|i| id(i, 4)).collect(),
        bottom_nodes: (0..5).map(|i| id(i, 0)).collect(),
        afferent_nodes: PerAfferent::new(id(2, 2), id(2, 2), id(2, 2)),
    };
    mesh.check_jacobians().unwrap();
    mesh
}

#[test]
fn patch_test_reproduces_constant_strain() {
    let start = Instant::now();
    let (e, nu) = (2.0, 0.3);
    let mesh = patch_mesh(MaterialLayer::new("patch", e, nu));
    let field = |p: [f64; 2]| {
        [
            1e-3 * (1.0 + 2.0 * p[0] + 3.0 * p[1]),
            1e-3 * (-1.0 + 0.5 * p[0] - 1.5 * p[1]),
        ]
    };
    let boundary: Vec<usize> = (0..mesh.node_count())
        .filter(|&n| {
            let [x, y] = mesh.nodes[n];
            x == 0.0 || x == 1.0 || y == 0.0 || y == -1.0
        })
        .collect();
    let cons: Vec<PrescribedDof> = boundary
        .iter()
        .flat_map(|&n| {
            let u = field(mesh.nodes[n]);
            [
                PrescribedDof::new(2 * n, u[0]),
                PrescribedDof::new(2 * n + 1, u[1]),
            ]
        })
        .collect();
    let system = assemble_stiffness(&mesh).unwrap();
    let u = solve_step(&system, &cons, None).unwrap();

    let u_scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for n in 0..mesh.node_count() {
        let want = field(mesh.nodes[n]);
        for c in 0..2 {
            assert!((u[2 * n + c] - want[c]).abs() <= 1e-9 * u_scale, "node {n}");
        }
    }
    let want = plane_strain_stress(e, nu, 2e-3, -1.5e-3, 3.5e-3).map(|s| s * 1e6);
    let s_scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (n, s) in recover_stress(&mesh, &u).iter().enumerate() {
        let got = [s.sigma_xx, s.sigma_yy, s.sigma_zz, s.tau_xy];
        for k in 0..4 {
            assert!(
                (got[k] - want[k]).abs() <= 1e-9 * s_scale,
                "node {n} component {k}"
            );
        }
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

/// Homogeneous block wide and deep enough to stand in for a half-plane. The
/// stacked layers share one material and only serve to coarsen rows with
/// depth.
fn half_plane_mesh(e: f64, nu: f64, h: f64) -> Mesh {
    let layers = vec![1.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 36.0];
    let spec = GeometrySpec {
        domain_width_mm: 200.0,
        surface_element_mm: h,
        coarsening: 100.0,
        growth_ratio: 1.15,
        fine_half_width_mm: 1.0,
        afferent_depth_mm: PerAfferent::new(1.0, 1.0, 1.0),
        layer_thickness_mm: layers,
    };
    let materials = vec![MaterialLayer::new("half-plane", e, nu); spec.layer_thickness_mm.len()];
    build_mesh(&spec, &materials).unwrap()
}

#[test]
fn line_load_settlement_matches_flamant() {
    let (e, nu, h, p) = (1.0, 0.3, 0.1, 1e-3);
    let mesh = half_plane_mesh(e, nu, h);
    assert!(mesh.element_count() <= 5000, "{}", mesh.element_count());
    let system = assemble_stiffness(&mesh).unwrap();
    let center = *mesh
        .surface_nodes
        .iter()
        .find(|&&n| mesh.nodes[n][0] == 0.0)
        .unwrap();
    let mut loads = vec![0.0; mesh.dof_count()];
    loads[2 * center + 1] = -p;
    let cons: Vec<PrescribedDof> = mesh
        .bottom_nodes
        .iter()
        .flat_map(|&n| {
            [
                PrescribedDof::new(2 * n, 0.0),
                PrescribedDof::new(2 * n + 1, 0.0),
            ]
        })
        .collect();
    let u = solve_step(&system, &cons, Some(&loads)).unwrap();
    let settlement = |x: f64| {
        let n = *mesh
            .surface_nodes
            .iter()
            .find(|&&n| (mesh.nodes[n][0] - x).abs() < 1e-9)
            .unwrap();
        -u[2 * n + 1]
    };
    let r_ref = 3.0 * h;
    for k in 4..=10 {
        let r = k as f64 * h;
        let got = settlement(r_ref) - settlement(r);
        let want = flamant_settlement_difference(p, e, nu, r_ref, r);
        assert!(rel_err(got, want) < 0.05, "r = {r}: {got} vs {want}");
    }
}

#[test]
fn von_mises_is_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (sxx, syy, txy): (f64, f64, f64) = (
            rng.random_range(-1e4..1e4),
            rng.random_range(-1e4..1e4),
            rng.random_range(-1e4..1e4),
        );
        let nu = rng.random_range(0.0..0.49);
        let base = StressTensor2D::plane_strain(sxx, syy, txy, nu);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (a, b, c) = rotate(sxx, syy, txy, theta);
        let rotated = StressTensor2D {
            sigma_xx: a,
            sigma_yy: b,
            sigma_zz: base.sigma_zz,
            tau_xy: c,
        };
        let want = von_mises_principal(sxx, syy, base.sigma_zz, txy);
        assert!(rel_err(base.von_mises(), want) <= 1e-10);
        assert!(rel_err(rotated.von_mises(), want) <= 1e-10);
    }
}

fn default_mesh() -> Mesh {
    build_mesh(
        &GeometrySpec::default(),
        &MaterialLayer::soft_tissue_layers(),
    )
    .unwrap()
}

fn bottom_fixed(mesh: &Mesh) -> Vec<PrescribedDof> {
    mesh.bottom_nodes
        .iter()
        .flat_map(|&n| {
            [
                PrescribedDof::new(2 * n, 0.0),
                PrescribedDof::new(2 * n + 1, 0.0),
            ]
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn compliance_path_matches_direct_solve_for_geometric_contact() {
    let mesh = default_mesh();
    let system = assemble_stiffness(&mesh).unwrap();
    let indenter = Indenter {
        diameter_mm: 1.0,
        center_x_mm: 0.0,
    };
    let mut model = IndentationModel::with_system(&mesh, &system, indenter)
        .unwrap()
        .with_contact(ContactModel::Geometric);
    for depth in [0.005, 0.02, 0.05] {
        let fast = model.displacement(depth).unwrap();
        let mut cons = bottom_fixed(&mesh);
        cons.extend(contact_active_set(&mesh, &indenter, depth));
        let direct = solve_step(&system, &cons, None).unwrap();
        let scale = max_abs(&direct);
        for (a, b) in fast.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9 * scale, "depth {depth}");
        }
    }
}

#[test]
fn unilateral_contact_satisfies_contact_conditions() {
    let mesh = default_mesh();
    let system = assemble_stiffness(&mesh).unwrap();
    let indenter = Indenter {
        diameter_mm: 1.0,
        center_x_mm: 0.0,
    };
    let mut model = IndentationModel::with_system(&mesh, &system, indenter).unwrap();
    assert_eq!(model.contact_model(), ContactModel::Unilateral);
    for depth in [0.01, 0.05, 0.3] {
        let u = model.displacement(depth).unwrap();
        let f = internal_forces(&system, &u);
        let u_scale = max_abs(&u);
        let f_scale = mesh
            .surface_nodes
            .iter()
            .fold(0.0f64, |m, &n| m.max(f[2 * n + 1].abs()));
        let mut active = Vec::new();
        for &n in &mesh.surface_nodes {
            let (uy, fy) = (u[2 * n + 1], f[2 * n + 1]);
            assert!(fy <= 1e-9 * f_scale, "pulling force at node {n}");
            assert!(
                f[2 * n].abs() <= 1e-9 * f_scale,
                "friction force at node {n}"
            );
            match indenter.gap(mesh.nodes[n][0], depth) {
                Some(g) => {
                    assert!(uy <= g + 1e-9 * u_scale, "penetration at node {n}");
                    if (uy - g).abs() <= 1e-9 * u_scale && fy < -1e-9 * f_scale {
                        active.push(PrescribedDof::new(2 * n + 1, g));
                    } else {
                        assert!(fy.abs() <= 1e-9 * f_scale, "force on a separated node {n}");
                    }
                }
                None => assert!(fy.abs() <= 1e-9 * f_scale),
            }
        }
        assert!(!active.is_empty());
        let mut cons = bottom_fixed(&mesh);
        cons.extend(active);
        let direct = solve_step(&system, &cons, None).unwrap();
        for (a, b) in u.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9 * u_scale, "depth {depth}");
        }
    }
}

#[test]
fn pinned_active_set_response_is_linear() {
    let mesh = default_mesh();
    let system = assemble_stiffness(&mesh).unwrap();
    let indenter = Indenter {
        diameter_mm: 1.0,
        center_x_mm: 0.0,
    };
    let contact = contact_active_set(&mesh, &indenter, 0.04);
    let solve = |k: f64| {
        let mut cons = bottom_fixed(&mesh);
        cons.extend(
            contact
                .iter()
                .map(|c| PrescribedDof::new(c.dof, k * c.value)),
        );
        recover_stress(&mesh, &solve_step(&system, &cons, None).unwrap())
    };
    let (one, two) = (solve(1.0), solve(2.0));
    let scale = one.iter().fold(0.0f64, |m, s| m.max(s.von_mises()));
    for (a, b) in one.iter().zip(&two) {
        assert!((2.0 * a.von_mises() - b.von_mises()).abs() <= 1e-9 * scale);
    }
}

fn spec(displacement_mm: Vec<f64>) -> IndenterSpec {
    IndenterSpec {
        diameter_mm: 1.0,
        center_x_mm: 0.0,
        pre_indentation_mm: 0.0,
        dt_ms: 0.5,
        displacement_mm,
    }
}

#[test]
fn zero_trace_gives_zero_stress() {
    let mesh = default_mesh();
    let r = run_indentation(&mesh, &spec(vec![0.0; 20]), &IndentationOptions::default()).unwrap();
    for (_, t) in r.traces.iter() {
        assert!(t.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn constant_indentation_gives_constant_stress() {
    let mesh = default_mesh();
    let r = run_indentation(&mesh, &spec(vec![0.03; 10]), &IndentationOptions::default()).unwrap();
    for (_, t) in r.traces.iter() {
        assert!(t.values[0] > 0.0);
        assert!(t.values.iter().all(|&v| v == t.values[0]));
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mesh = default_mesh();
    let trace: Vec<f64> = (0..200).map(|k| 0.02 * (0.3 * k as f64).sin()).collect();
    let options = IndentationOptions {
        record_deflection: true,
        ..IndentationOptions::default()
    };
    let a = run_indentation(&mesh, &spec(trace.clone()), &options).unwrap();
    let b = run_indentation(&mesh, &spec(trace), &options).unwrap();
    assert_eq!(a, b);
}

#[test]
fn probe_deflection_peaks_near_one_mm_and_decays() {
    let mesh = default_mesh();
    let mut model = IndentationModel::new(
        &mesh,
        Indenter {
            diameter_mm: 0.05,
            center_x_mm: 0.0,
        },
    )
    .unwrap();
    let u = model.displacement(1.0).unwrap();
    let profile = model.deflection_profile(&u, 0.5);
    let max = profile.max_deflection();
    assert!((0.9..=1.1).contains(&max), "{max}");
    let right: Vec<f64> = profile
        .x_mm
        .iter()
        .zip(&profile.deflection_mm)
        .filter(|(x, _)| **x >= 0.0 && **x <= 5.0)
        .map(|(_, d)| *d)
        .collect();
    assert_eq!(right.len(), 11);
    assert!(right.windows(2).all(|w| w[1] < w[0]), "{right:?}");
    assert!(profile.at(5.0).unwrap() < profile.at(1.0).unwrap());
}

#[test]
fn zero_indentation_gives_flat_profile() {
    let mesh = default_mesh();
    let model_indenter = Indenter {
        diameter_mm: 0.05,
        center_x_mm: 0.0,
    };
    let mut model = IndentationModel::new(&mesh, model_indenter).unwrap();
    let u = model.displacement(0.0).unwrap();
    assert!(model
        .deflection_profile(&u, 0.5)
        .deflection_mm
        .iter()
        .all(|&d| d == 0.0));
}

#[test]
fn stress_trace_csv_round_trips() {
    let mesh = default_mesh();
    let trace: Vec<f64> = (0..30).map(|k| 0.01 * (0.5 * k as f64).sin()).collect();
    let r = run_indentation(&mesh, &spec(trace), &IndentationOptions::default()).unwrap();
    let text = format!("# run stamp\n{}", r.traces.sa.to_csv());
    assert_eq!(
        afferentsim::fem::StressTrace::from_csv(&text).unwrap(),
        r.traces.sa
    );
}
