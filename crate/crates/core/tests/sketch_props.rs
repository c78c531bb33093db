use actf_core::bench::{mann_whitney_z, relative_errors};
use actf_core::rng::{derive_seed, rng_for, streams};
use actf_core::sketch::{compact_bilinear, count_sketch, exact_bilinear, SketchPlan, Which};
use actf_core::Tensor;
use proptest::prelude::*;
use rand::Rng as _;

fn vector(len: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, len).prop_map(Tensor::vector)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.dot(b).unwrap()
}

proptest! {
    #[test]
    fn compact_bilinear_is_linear_in_each_factor(
        (x, y, z) in (1usize..24).prop_flat_map(|c| (vector(c), vector(c), vector(c))),
        d in 1usize..64,
        seed in any::<u64>(),
        alpha in -4.0f64..4.0,
    ) {
        let plan = SketchPlan::new(x.len(), d, seed).unwrap();
        let base = compact_bilinear(&x, &y, &plan).unwrap();
        let scaled = compact_bilinear(&x.map(|v| alpha * v), &y, &plan).unwrap();
        for (s, b) in scaled.data().iter().zip(base.data()) {
            prop_assert!((s - alpha * b).abs() < 1e-9);
        }
        let sum = Tensor::vector(y.data().iter().zip(z.data()).map(|(a, b)| a + b).collect());
        let lhs = compact_bilinear(&x, &sum, &plan).unwrap();
        let xz = compact_bilinear(&x, &z, &plan).unwrap();
        for ((l, b), c) in lhs.data().iter().zip(base.data()).zip(xz.data()) {
            prop_assert!((l - (b + c)).abs() < 1e-9);
        }
    }

    #[test]
    fn count_sketch_is_linear(
        (x, y) in (1usize..40).prop_flat_map(|c| (vector(c), vector(c))),
        d in 1usize..32,
        seed in any::<u64>(),
        which in prop_oneof![Just(Which::First), Just(Which::Second)],
    ) {
        let plan = SketchPlan::new(x.len(), d, seed).unwrap();
        let sum = Tensor::vector(x.data().iter().zip(y.data()).map(|(a, b)| 2.0 * a - b).collect());
        let lhs = count_sketch(&sum, which, &plan).unwrap();
        let (sx, sy) = (count_sketch(&x, which, &plan).unwrap(), count_sketch(&y, which, &plan).unwrap());
        for ((l, a), b) in lhs.data().iter().zip(sx.data()).zip(sy.data()) {
            prop_assert!((l - (2.0 * a - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn outer_product_inner_product_identity(
        (x, y, u, v) in (1usize..20).prop_flat_map(|c| (vector(c), vector(c), vector(c), vector(c))),
    ) {
        let lhs = dot(&exact_bilinear(&x, &u).unwrap(), &exact_bilinear(&y, &v).unwrap());
        prop_assert!((lhs - dot(&x, &y) * dot(&u, &v)).abs() < 1e-10);
    }

    #[test]
    fn exact_bilinear_is_row_major(x in vector(5), y in vector(5)) {
        let b = exact_bilinear(&x, &y).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert_eq!(b.data()[i * 5 + j], x.data()[i] * y.data()[j]);
            }
        }
    }
}

fn unit_draw(c: usize, rng: &mut impl rand::Rng) -> Tensor<f64> {
    Tensor::from_fn(&[c], |_| rng.random_range(0.0..1.0))
}

#[test]
fn count_sketch_preserves_inner_products_on_average() {
    let (c, d, pairs) = (128, 1024, 200);
    let mut rng = rng_for(11, streams::DATA);
    let mut total = 0.0;
    for i in 0..pairs {
        let plan = SketchPlan::new(c, d, derive_seed(11, i)).unwrap();
        let (x, y) = (unit_draw(c, &mut rng), unit_draw(c, &mut rng));
        let exact = dot(&x, &y);
        let est = dot(
            &count_sketch(&x, Which::First, &plan).unwrap(),
            &count_sketch(&y, Which::First, &plan).unwrap(),
        );
        total += (est - exact).abs() / exact;
    }
    let mean = total / pairs as f64;
    assert!(mean < 0.05, "mean relative error {mean}");
}

#[test]
fn compact_bilinear_is_unbiased_across_plans() {
    let (c, d) = (16, 64);
    let mut rng = rng_for(5, streams::DATA);
    let mut draw = || Tensor::from_fn(&[c], |_| rng.random_range(-1.0..1.0));
    let (x, y, u, v) = (draw(), draw(), draw(), draw());
    let exact = dot(&x, &u) * dot(&y, &v);
    let estimates: Vec<f64> = (0..800)
        .map(|i| {
            let plan = SketchPlan::new(c, d, derive_seed(77, i)).unwrap();
            dot(&compact_bilinear(&x, &y, &plan).unwrap(), &compact_bilinear(&u, &v, &plan).unwrap())
        })
        .collect();
    let stats = |n: usize| {
        let s = &estimates[..n];
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    };
    let (m50, se50) = stats(50);
    let (m800, se800) = stats(800);
    assert!((m50 - exact).abs() < 4.0 * se50, "{m50} vs {exact} (se {se50})");
    assert!((m800 - exact).abs() < 4.0 * se800, "{m800} vs {exact} (se {se800})");
    assert!(se800 < se50 / 2.0, "se {se50} -> {se800}");
}

#[test]
fn sketch_error_shrinks_as_dimension_grows() {
    let dims = [256, 1024, 4096];
    let errs: Vec<Vec<f64>> = dims.iter().map(|&d| relative_errors(64, d, 100, 3).unwrap()).collect();
    for k in 0..2 {
        let z = mann_whitney_z(&errs[k], &errs[k + 1]);
        assert!(z > 2.0, "d={} vs d={}: z = {z}", dims[k], dims[k + 1]);
    }
}
