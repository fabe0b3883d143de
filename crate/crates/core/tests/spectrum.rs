use std::f64::consts::PI;
use std::fmt::Write;

use maxshape::eigen::{divergence_certificate, solve_gevp, EigenSelection};
use maxshape::fem::{apply_dirichlet, assemble_forms, DofMap};
use maxshape::kinematics::DeformationField;
use maxshape::mesh::{generate_unit_square, parse_msh, Mesh};
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;

fn spectrum(mesh: &Mesh, q: &DeformationField, nev: usize, tol: f64) -> Vec<f64> {
    let dofs = DofMap::new(mesh);
    let forms = assemble_forms(mesh, &dofs, q).unwrap();
    let reduced = apply_dirichlet(&forms, &dofs);
    let mut sel = EigenSelection::new(0).with_tol(tol);
    sel.nev = nev;
    let pairs = solve_gevp(&reduced, &dofs, &sel, None).unwrap();
    for p in &pairs {
        assert!(divergence_certificate(&reduced, &dofs, &p.u) <= 1e-6);
    }
    pairs.iter().map(|p| p.lambda).collect()
}

fn undeformed(mesh: &Mesh) -> DeformationField {
    DeformationField::zeros(mesh.n_vertices())
}

#[test]
fn lowest_eigenvalues_of_the_unit_square() {
    let mesh = generate_unit_square(16);
    let ev = spectrum(&mesh, &undeformed(&mesh), 5, 1e-8);
    for (got, k) in ev.iter().zip([1.0, 1.0, 2.0, 4.0, 4.0]) {
        let exact = k * PI * PI;
        assert!((got - exact).abs() <= 0.02 * exact, "{got} vs {exact}");
    }
}

#[test]
fn eigenvalue_error_decays_quadratically() {
    let coarse = generate_unit_square(8);
    let fine = coarse.refine_uniform();
    let exact = 2.0 * PI * PI;
    let err = |m: &Mesh| (spectrum(m, &undeformed(m), 6, 1e-10)[2] - exact).abs();
    let ratio = err(&coarse) / err(&fine);
    assert!(ratio >= 3.0, "ratio {ratio}");
}

#[test]
fn rigid_motions_leave_the_spectrum_unchanged() {
    let mesh = generate_unit_square(6);
    let base = spectrum(&mesh, &undeformed(&mesh), 6, 1e-10);
    let shifted = DeformationField::from_fn(mesh.n_vertices(), |_| Vector2::new(0.3, -1.7));
    let (s, c) = 0.4f64.sin_cos();
    let rotation = Matrix2::new(c, -s, s, c) - Matrix2::identity();
    let rotated = DeformationField::affine(&mesh, rotation, Vector2::new(0.1, 0.2));
    for q in [shifted, rotated] {
        for (a, b) in spectrum(&mesh, &q, 6, 1e-10).iter().zip(&base) {
            assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn dilation_scales_eigenvalues(s in -0.1f64..0.3, cx in -1.0f64..2.0, cy in -1.0f64..2.0) {
        let mesh = generate_unit_square(6);
        let base = spectrum(&mesh, &undeformed(&mesh), 6, 1e-9);
        let center = Vector2::new(cx, cy);
        let q = DeformationField::from_fn(mesh.n_vertices(), |v| (mesh.vertices()[v] - center) * s);
        let scaled = spectrum(&mesh, &q, 6, 1e-9);
        for (a, b) in scaled.iter().zip(&base) {
            let expected = b / (1.0 + s).powi(2);
            prop_assert!((a - expected).abs() <= 1e-6 * expected, "{} vs {}", a, expected);
        }
    }
}

fn to_msh(mesh: &Mesh) -> String {
    let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.n_vertices());
    for (i, x) in mesh.vertices().iter().enumerate() {
        // sparse, shuffled ids
        let _ = writeln!(s, "{} {:e} {:e} 0", 10 * i + 7, x.x, x.y);
    }
    s.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(s, "{}", mesh.n_triangles() + 1);
    let _ = writeln!(s, "1 15 2 0 1 7");
    for (i, t) in mesh.triangles().iter().enumerate() {
        // reversed orientation; the parser must fix it
        let _ = writeln!(s, "{} 2 2 0 1 {} {} {}", i + 2, 10 * t[0] + 7, 10 * t[2] + 7, 10 * t[1] + 7);
    }
    s.push_str("$EndElements\n");
    s
}

#[test]
fn msh_import_reproduces_the_generated_mesh_spectrum() {
    let mesh = generate_unit_square(6);
    let imported = parse_msh(&to_msh(&mesh)).unwrap();
    assert_eq!(imported.n_vertices(), mesh.n_vertices());
    assert_eq!(imported.n_edges(), mesh.n_edges());
    let a = spectrum(&mesh, &undeformed(&mesh), 6, 1e-10);
    let b = spectrum(&imported, &undeformed(&imported), 6, 1e-10);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * x);
    }
}

#[test]
fn l_shaped_domain_has_no_spurious_modes() {
    // unit square minus its upper-right quarter: a non-convex domain whose
    // first Maxwell eigenfunction is singular at the re-entrant corner
    let full = generate_unit_square(8);
    let keep: Vec<[usize; 3]> = full
        .triangles()
        .iter()
        .enumerate()
        .filter(|(t, _)| {
            let c = full.centroid(*t);
            !(c.x > 0.5 && c.y > 0.5)
        })
        .map(|(_, t)| *t)
        .collect();
    let mesh = Mesh::from_triangles(full.vertices().to_vec(), keep).unwrap();
    let ev = spectrum(&mesh, &undeformed(&mesh), 6, 1e-9);
    assert!(ev.iter().all(|l| *l > 1.0));
    for w in ev.windows(2) {
        assert!(w[0] <= w[1]);
    }
    // the L-shape (-1,1)² \ [0,1)² has first Maxwell eigenvalue 1.47562;
    // halving the size multiplies it by 4
    assert!((ev[0] - 4.0 * 1.47562).abs() < 0.1 * 4.0 * 1.47562, "{}", ev[0]);
}
