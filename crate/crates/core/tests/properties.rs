mod common;

use std::sync::Arc;

use cutstokes::analysis::builtin_case_disk;
use cutstokes::forms::{Discretization, FormParams};
use cutstokes::geometry::Circle;
use cutstokes::mesh::{BoundingBox, UniformMeshParams};
use cutstokes::quadrature::CutMethod;
use cutstokes::spaces::ElementPair;
use cutstokes::stability::{compute_beta, compute_c0, compute_theta, trace_constant, ExtensionOperator, InteriorNorm};
use proptest::prelude::*;

fn disc(pair: ElementPair, n: usize, scale: f64, shift: [f64; 2]) -> Discretization {
    let mesh = UniformMeshParams::new(BoundingBox::centered_square(1.5 * scale), n)
        .with_shift([shift[0] * scale, shift[1] * scale])
        .build()
        .unwrap();
    Discretization::new(mesh, Arc::new(Circle::new([0.0, 0.0], scale)), pair, CutMethod::CircleExact).unwrap()
}

fn pair_strategy() -> impl Strategy<Value = ElementPair> {
    prop::sample::select(ElementPair::ALL.to_vec())
}

fn shift_strategy() -> impl Strategy<Value = [f64; 2]> {
    (-0.09..0.09f64, -0.09..0.09f64).prop_map(|(x, y)| [x, y])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn constants_are_invariant_under_scaling(pair in pair_strategy(), shift in shift_strategy(), scale in 0.1..10.0f64) {
        let a = disc(pair, 8, 1.0, shift);
        let b = disc(pair, 8, scale, shift);
        let params = FormParams::default();
        let pairs = [
            (compute_theta(&a, InteriorNorm::Seminorm).unwrap().value, compute_theta(&b, InteriorNorm::Seminorm).unwrap().value),
            (compute_beta(&a, InteriorNorm::Seminorm).unwrap().value, compute_beta(&b, InteriorNorm::Seminorm).unwrap().value),
            (compute_c0(&a, &params).unwrap(), compute_c0(&b, &params).unwrap()),
            (trace_constant(&a).unwrap(), trace_constant(&b).unwrap()),
        ];
        for (x, y) in pairs {
            prop_assert!(common::relative_gap(x, y) <= 1e-8, "{} vs {}", x, y);
        }
    }

    #[test]
    fn shrinking_the_velocity_space_cannot_raise_theta(shift in shift_strategy(), keep in 0.5..0.95f64, seed in any::<u64>()) {
        let d = disc(ElementPair::TaylorHood, 8, 1.0, shift);
        let vi = common::mask(&d.sys.velocity_interior_mask());
        let qi = common::mask(&d.sys.pressure_interior);
        let n = d.sys.velocity.n_dofs;
        let h1 = common::dense(&d.asm.velocity.h1_interior());
        let mut g2 = nalgebra::DMatrix::zeros(2 * n, 2 * n);
        g2.view_mut((0, 0), (n, n)).copy_from(&h1);
        g2.view_mut((n, n), (n, n)).copy_from(&h1);
        let b = common::dense(&d.asm.b_interior);
        let m = common::select(&common::dense(&d.asm.pressure.mass_interior), &qi, &qi);
        let ones = nalgebra::DMatrix::from_element(qi.len(), 1, 1.0);
        let theta = |v: &[usize]| {
            let s = common::schur(&common::select(&b, &qi, v), &common::select(&g2, v, v));
            common::deflated(&s, &m, &(&m * &ones))[0].max(0.0).sqrt()
        };
        let mut state = seed | 1;
        let sub: Vec<usize> = vi.iter().copied().filter(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 1000.0 < keep
        }).collect();
        prop_assert!(theta(&sub) <= theta(&vi) * (1.0 + 1e-10));
    }

    #[test]
    fn assembled_forms_respect_constants(pair in pair_strategy(), shift in shift_strategy()) {
        let d = disc(pair, 8, 1.0, shift);
        let sys = d.saddle_system(FormParams::default(), &builtin_case_disk().load);
        prop_assert!(sys.a.asymmetry() <= 1e-13 * sys.a.max_abs());
        let ones = vec![1.0; d.sys.n_pressure()];
        let bt1 = sys.b.tr_mul_vec(&ones);
        prop_assert!(bt1.iter().all(|v| v.abs() <= 1e-12 * sys.b.max_abs()));
        let j1 = sys.j.mul_vec(&ones);
        prop_assert!(j1.iter().all(|v| v.abs() <= 1e-14 * sys.j.max_abs()));
    }

    #[test]
    fn c0_grows_with_eta(pair in pair_strategy(), shift in shift_strategy()) {
        let d = disc(pair, 8, 1.0, shift);
        let c: Vec<f64> = [1.0, 5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&eta| compute_c0(&d, &FormParams { eta, ..FormParams::default() }).unwrap())
            .collect();
        prop_assert!(c.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs()), "{:?}", c);
    }

    #[test]
    fn extension_ratios_stay_below_the_constant(pair in pair_strategy(), shift in shift_strategy(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let d = disc(pair, 8, 1.0, shift);
        let ext = ExtensionOperator::build(&d).unwrap();
        let bound = ext.constant(&d).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let q: Vec<f64> = (0..ext.source_dofs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assert!(ext.ratio(&d, &q) <= bound * (1.0 + 1e-9));
        }
    }
}

proptest! {
    #[test]
    fn disk_velocity_is_solenoidal(r in 0.0..1.5f64, t in 0.0..std::f64::consts::TAU) {
        let case = builtin_case_disk();
        let g = (case.velocity_gradient)([r * t.cos(), r * t.sin()]);
        prop_assert!((g[0][0] + g[1][1]).abs() <= 1e-12);
    }

    #[test]
    fn disk_velocity_vanishes_on_the_circle(t in 0.0..std::f64::consts::TAU) {
        let u = (builtin_case_disk().velocity)([t.cos(), t.sin()]);
        prop_assert!(u[0].abs() <= 1e-10 && u[1].abs() <= 1e-10);
    }

    #[test]
    fn disk_load_is_consistent(x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let case = builtin_case_disk();
        let (lap, gp, f) = ((case.velocity_laplacian)([x, y]), (case.pressure_gradient)([x, y]), (case.load)([x, y]));
        for c in 0..2 {
            prop_assert!((f[c] - (-lap[c] + gp[c])).abs() <= 1e-12);
        }
    }
}
