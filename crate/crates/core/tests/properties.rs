//! Property tests for the algebraic invariants.

use proptest::prelude::*;
use thermostat_lab::geom::{dot, project_to_sphere};
use thermostat_lab::micro::{thermostat_rhs, uniform_grid, DriverPath};
use thermostat_lab::rough::RoughPathGrid;
use thermostat_lab::stats::estimator::Accumulator;

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, len).prop_filter("nonzero", |v| dot(v, v) > 1e-6)
}

fn piecewise_linear(dim: usize, pieces: usize) -> impl Strategy<Value = DriverPath> {
    proptest::collection::vec(
        (0.01f64..0.2, proptest::collection::vec(-1.0f64..1.0, dim)),
        pieces,
    )
    .prop_map(move |steps| {
        let mut value = vec![0.0; dim];
        let mut path = DriverPath::new(dim, 0.0, &value);
        let mut t = 0.0;
        for (dt, dv) in steps {
            t += dt;
            for (v, d) in value.iter_mut().zip(&dv) {
                *v += d;
            }
            path.push(t, &value);
        }
        path
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent_and_feasible(x in nonzero_vec(6), u_total in 0.1f64..10.0) {
        let y = project_to_sphere(&x, u_total).unwrap();
        prop_assert!((dot(&y, &y) - u_total).abs() / u_total < 1e-13);
        let z = project_to_sphere(&y, u_total).unwrap();
        for (a, b) in y.iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn thermostat_field_is_tangent(x in nonzero_vec(6), eps in 0.0f64..2.0) {
        let u_total = 1.7;
        let p = project_to_sphere(&x, u_total).unwrap();
        let n_hat = [1.0, 0.0];
        let mut out = vec![0.0; 6];
        thermostat_rhs(&p, eps, &n_hat, u_total, &mut out).unwrap();
        let denom = dot(&p, &p).sqrt() * dot(&out, &out).sqrt();
        if denom > 0.0 {
            prop_assert!(dot(&p, &out).abs() / denom < 1e-12);
        }
    }

    #[test]
    fn lift_satisfies_chen_and_symmetry(path in piecewise_linear(2, 30), (a, b, c) in (0usize..9, 0usize..9, 0usize..9)) {
        let grid = uniform_grid(0.0, path.end_time(), 9);
        let lift = RoughPathGrid::canonical_lift(&path, &grid).unwrap();
        let scale = lift.level2_scale().max(1e-9);

        let mut idx = [a, b, c];
        idx.sort_unstable();
        let defect = lift.chen_defect(idx[0], idx[1], idx[2]).unwrap();
        for x in &defect {
            prop_assert!(x.abs() < 1e-12 * scale);
        }

        let (i, j) = (idx[0], idx[2]);
        let w = lift.level1(i, j);
        let ww = lift.level2(i, j);
        for r in 0..2 {
            for s in 0..2 {
                let sym = ww[r * 2 + s] + ww[s * 2 + r];
                prop_assert!((sym - w[r] * w[s]).abs() < 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn rescaled_driver_agrees_pointwise(path in piecewise_linear(2, 30), eps in 0.05f64..1.0, frac in 0.0f64..1.0) {
        let horizon = eps * eps * path.end_time();
        prop_assume!(horizon > 0.0);
        let scaled = path.rescale(eps, horizon).unwrap();
        let t = frac * horizon;
        let direct = path.value_at(t / (eps * eps)).unwrap();
        let via = scaled.value_at(t).unwrap();
        for (x, y) in direct.iter().zip(&via) {
            prop_assert!((eps * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulator_merge_is_associative(xs in proptest::collection::vec(-100.0f64..100.0, 3..60), split in 0usize..60) {
        let split = split.min(xs.len());
        let mut whole = Accumulator::new();
        let mut left = Accumulator::new();
        let mut right = Accumulator::new();
        for (i, &x) in xs.iter().enumerate() {
            whole.push(x);
            if i < split {
                left.push(x);
            } else {
                right.push(x);
            }
        }
        let merged = left.merge(&right);
        prop_assert_eq!(merged.count(), whole.count());
        prop_assert!((merged.mean() - whole.mean()).abs() < 1e-12 * whole.mean().abs().max(1.0));
        if whole.count() > 1 {
            prop_assert!((merged.variance() - whole.variance()).abs() < 1e-10 * whole.variance().max(1.0));
        }
    }
}
