use std::f64::consts::PI;

use cutstokes::geometry::{classify, Circle, ElementTag, FnLevelSet, LevelSet};
use cutstokes::mesh::{BoundingBox, Mesh, UniformMeshParams};
use cutstokes::quadrature::{cut_rules, cut_rules_on, CutMethod};
use proptest::prelude::*;

fn box_mesh(n: usize) -> Mesh {
    UniformMeshParams::new(BoundingBox::centered_square(1.5), n).build().unwrap()
}

fn total(mesh: &Mesh, phi: &dyn LevelSet, method: CutMethod, degree: usize) -> (f64, f64) {
    let cls = classify(mesh, phi).unwrap();
    let mut vol = 0.0;
    let mut arc = 0.0;
    for &t in &cls.active {
        let r = cut_rules(mesh, t, phi, method, degree).unwrap();
        vol += r.volume.measure();
        arc += r.surface.measure();
    }
    (vol, arc)
}

#[test]
fn circle_exact_disk_area_and_circumference() {
    let mesh = box_mesh(16);
    let phi = Circle::new([0.0, 0.0], 1.0);
    let (vol, arc) = total(&mesh, &phi, CutMethod::CircleExact, 4);
    assert!((vol - PI).abs() <= 1e-10, "area {vol}");
    assert!((arc - 2.0 * PI).abs() <= 1e-10, "arc {arc}");
}

#[test]
fn odd_moment_of_the_centered_circle_vanishes() {
    let mesh = box_mesh(16);
    let phi = Circle::new([0.0, 0.0], 1.0);
    let cls = classify(&mesh, &phi).unwrap();
    let moment: f64 = cls
        .cut
        .iter()
        .map(|&t| cut_rules(&mesh, t, &phi, CutMethod::CircleExact, 4).unwrap().surface.integrate(|p| p[0]))
        .sum();
    assert!(moment.abs() <= 1e-10);
    for &t in &cls.cut {
        let s = cut_rules(&mesh, t, &phi, CutMethod::CircleExact, 4).unwrap().surface;
        for (p, n) in s.points.iter().zip(&s.normals) {
            assert!((n[0] * p[0] + n[1] * p[1] - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn subtriangulated_disk_area_converges_at_least_quadratically() {
    let mesh = box_mesh(16);
    let phi = FnLevelSet::new(|p| p[0].hypot(p[1]) - 1.0).with_gradient(|p| {
        let r = p[0].hypot(p[1]);
        [p[0] / r, p[1] / r]
    });
    let errors: Vec<f64> = (0..=6)
        .map(|depth| (total(&mesh, &phi, CutMethod::Subtriangulate { depth }, 4).0 - PI).abs())
        .collect();
    let order = (errors[0] / errors[6]).log2() / 6.0;
    assert!(order >= 2.0, "errors {errors:?}, order {order}");
}

#[test]
fn backends_agree_on_cut_cells() {
    let mesh = box_mesh(8);
    let phi = Circle::new([0.0, 0.0], 1.0);
    let cls = classify(&mesh, &phi).unwrap();
    for &t in &cls.cut {
        let f = |p: [f64; 2]| p[0] * p[0] * p[1] * p[1];
        let exact = cut_rules(&mesh, t, &phi, CutMethod::CircleExact, 6).unwrap().volume.integrate(f);
        let sub = cut_rules(&mesh, t, &phi, CutMethod::Subtriangulate { depth: 8 }, 6).unwrap().volume.integrate(f);
        assert!((exact - sub).abs() <= 1e-8, "triangle {t}: {exact} vs {sub}");
    }
    assert!(cls.tags.iter().any(|&t| t == ElementTag::Cut));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_invariant_under_vertex_relabeling(
        x0 in -1.5..1.5f64, y0 in -1.5..1.5f64,
        dx in 0.1..0.6f64, dy in 0.1..0.6f64, skew in -0.3..0.3f64,
        rot in 0usize..3,
    ) {
        let tri = [[x0, y0], [x0 + dx, y0], [x0 + skew, y0 + dy]];
        let relabeled = [tri[rot], tri[(rot + 1) % 3], tri[(rot + 2) % 3]];
        let phi = Circle::new([0.0, 0.0], 1.0);
        for method in [CutMethod::CircleExact, CutMethod::Subtriangulate { depth: 3 }] {
            let a = cut_rules_on(tri, 0, &phi, method, 4).unwrap();
            let b = cut_rules_on(relabeled, 0, &phi, method, 4).unwrap();
            prop_assert!((a.volume.measure() - b.volume.measure()).abs() <= 1e-14);
            prop_assert!(a.volume.weights.iter().all(|&w| w >= 0.0));
        }
    }
}
