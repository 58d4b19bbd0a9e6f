use grkan::backward::{backward_blocked, backward_naive, CombineMode, ExecutionPlan};
use grkan::rational::forward_tensor;
use grkan::verify::{rounding_experiment_in, RoundingShape};
use grkan::{ActivationTensor, GroupLayout, GroupRationalParams, Shape3};
use proptest::prelude::*;

struct Oracle {
    y: Vec<f64>,
    d_x: Vec<f64>,
    d_a: Vec<f64>,
    d_b: Vec<f64>,
    // sums of |term| per output, used to scale tolerances
    mag_a: Vec<f64>,
    mag_b: Vec<f64>,
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Direct evaluation from powers; no Horner, no shared code with the crate.
#[allow(clippy::too_many_arguments)]
fn oracle(x: &[f64], up: &[f64], d: usize, groups: usize, a: &[f64], b: &[f64], na: usize, nb: usize) -> Oracle {
    let d_g = d / groups;
    let mut o = Oracle {
        y: vec![0.0; x.len()],
        d_x: vec![0.0; x.len()],
        d_a: vec![0.0; groups * na],
        d_b: vec![0.0; groups * nb],
        mag_a: vec![0.0; groups * na],
        mag_b: vec![0.0; groups * nb],
    };
    for (e, (&xv, &u)) in x.iter().zip(up).enumerate() {
        let g = (e % d) / d_g;
        let ga = &a[g * na..(g + 1) * na];
        let gb = &b[g * nb..(g + 1) * nb];
        let p: f64 = (0..na).map(|i| ga[i] * xv.powi(i as i32)).sum();
        let dp: f64 = (1..na).map(|i| i as f64 * ga[i] * xv.powi(i as i32 - 1)).sum();
        let big_a: f64 = (0..nb).map(|j| gb[j] * xv.powi(j as i32 + 1)).sum();
        let da: f64 = (0..nb).map(|j| (j + 1) as f64 * gb[j] * xv.powi(j as i32)).sum();
        let q = 1.0 + big_a.abs();
        o.y[e] = p / q;
        o.d_x[e] = u * (dp / q - p * sgn(big_a) * da / (q * q));
        for i in 0..na {
            let t = u * xv.powi(i as i32) / q;
            o.d_a[g * na + i] += t;
            o.mag_a[g * na + i] += t.abs();
        }
        for j in 0..nb {
            let t = -u * p * sgn(big_a) * xv.powi(j as i32 + 1) / (q * q);
            o.d_b[g * nb + j] += t;
            o.mag_b[g * nb + j] += t.abs();
        }
    }
    o
}

#[derive(Debug, Clone)]
struct Case {
    batch: usize,
    seq: usize,
    d: usize,
    groups: usize,
    block: usize,
    na: usize,
    nb: usize,
    x: Vec<f64>,
    up: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..4, 1usize..6, 1usize..5, prop::sample::select(vec![1usize, 2, 4]), 1usize..5, 1usize..4)
        .prop_flat_map(|(batch, seq, width, groups, na, nb)| {
            let d = width * groups;
            let rows = batch * seq;
            let blocks: Vec<usize> = (1..=rows).filter(|s| rows % s == 0).collect();
            (
                Just((batch, seq, d, groups, na, nb)),
                prop::sample::select(blocks),
                prop::collection::vec(-2.0f64..2.0, rows * d),
                prop::collection::vec(-1.0f64..1.0, rows * d),
                prop::collection::vec(-1.0f64..1.0, groups * na),
                prop::collection::vec(-1.0f64..1.0, groups * nb),
            )
        })
        .prop_map(|((batch, seq, d, groups, na, nb), block, x, up, a, b)| Case {
            batch,
            seq,
            d,
            groups,
            block,
            na,
            nb,
            x,
            up,
            a,
            b,
        })
}

type Inputs<T> = (ActivationTensor<T>, ActivationTensor<T>, GroupRationalParams<T>, GroupLayout);

fn inputs<T: grkan::Real>(c: &Case) -> Inputs<T> {
    let shape = Shape3::new(c.batch, c.seq, c.d);
    let cast = |v: &[f64]| v.iter().map(|&z| T::from_f64(z)).collect::<Vec<_>>();
    (
        ActivationTensor::new(shape, cast(&c.x)).unwrap(),
        ActivationTensor::new(shape, cast(&c.up)).unwrap(),
        GroupRationalParams::new(c.groups, c.na, c.nb, cast(&c.a), cast(&c.b)).unwrap(),
        GroupLayout::new(c.d, c.groups).unwrap(),
    )
}

fn close(got: &[f64], want: &[f64], scale: &[f64], tol: f64) -> bool {
    got.iter().zip(want).zip(scale).all(|((g, w), s)| (g - w).abs() <= tol * s.max(1e-300))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn strategies_match_oracle(c in case()) {
        let o = oracle(&c.x, &c.up, c.d, c.groups, &c.a, &c.b, c.na, c.nb);
        let (x, up, p, layout) = inputs::<f64>(&c);
        let y = forward_tensor(&x, &p, &layout).unwrap();
        let y_scale: Vec<f64> = o.y.iter().map(|v| v.abs().max(1.0)).collect();
        prop_assert!(close(y.data(), &o.y, &y_scale, 1e-12));

        let naive = backward_naive(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, c.block).unwrap()).unwrap();
        let blocked = backward_blocked(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, c.block).unwrap()).unwrap();
        let dx_scale: Vec<f64> = o.d_x.iter().map(|v| v.abs().max(1.0)).collect();
        for g in [&naive, &blocked] {
            prop_assert!(close(g.d_a.data(), &o.d_a, &o.mag_a, 1e-12));
            prop_assert!(close(g.d_b.data(), &o.d_b, &o.mag_b, 1e-12));
            prop_assert!(close(g.d_x.data(), &o.d_x, &dx_scale, 1e-12));
        }
    }

    #[test]
    fn input_gradient_is_strategy_independent(c in case()) {
        let (x, up, p, layout) = inputs::<f32>(&c);
        let naive = backward_naive(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, c.block).unwrap()).unwrap();
        let blocked = backward_blocked(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, c.block).unwrap()).unwrap();
        let bits = |t: &ActivationTensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&naive.d_x), bits(&blocked.d_x));
    }

    #[test]
    fn combine_modes_agree(c in case()) {
        let (x, up, p, layout) = inputs::<f64>(&c);
        let plan = ExecutionPlan::blocked(x.shape(), layout, c.block).unwrap();
        let ordered = backward_blocked(&x, &up, &p, &plan).unwrap();
        let scatter = backward_blocked(&x, &up, &p, &plan.with_combine_mode(CombineMode::UnorderedScatter)).unwrap();
        let o = oracle(&c.x, &c.up, c.d, c.groups, &c.a, &c.b, c.na, c.nb);
        prop_assert!(close(scatter.d_a.data(), ordered.d_a.data(), &o.mag_a, 1e-12));
        prop_assert!(close(scatter.d_b.data(), ordered.d_b.data(), &o.mag_b, 1e-12));
        prop_assert!(ordered.d_x == scatter.d_x);
    }

    #[test]
    fn zero_denominator_is_the_polynomial(c in case()) {
        let zeros = vec![0.0; c.b.len()];
        let o = oracle(&c.x, &c.up, c.d, c.groups, &c.a, &zeros, c.na, c.nb);
        let (x, _, _, layout) = inputs::<f64>(&c);
        let p = GroupRationalParams::new(c.groups, c.na, c.nb, c.a.clone(), zeros).unwrap();
        let y = forward_tensor(&x, &p, &layout).unwrap();
        let scale: Vec<f64> = o.y.iter().map(|v| v.abs().max(1.0)).collect();
        prop_assert!(close(y.data(), &o.y, &scale, 1e-13));
    }
}

#[test]
fn blocked_error_below_naive_at_two_to_the_24() {
    // 1024 · 64 · 256 = 2^24 elements per instance
    let shape = RoundingShape { batch: 1024, seq: 64, dim: 256, groups: 8, num_coeffs: 6, den_coeffs: 4 };
    let r = rounding_experiment_in::<f32>(shape, 20, 11, 256).unwrap();
    assert!(r.mae_da_blocked <= r.mae_da_naive, "{r:?}");
    assert!(r.mae_db_blocked <= r.mae_db_naive, "{r:?}");
}

#[test]
fn blocked_error_below_naive_every_pass_at_two_to_the_20() {
    // 64 · 64 · 256 = 2^20 elements per instance
    let shape = RoundingShape { batch: 64, seq: 64, dim: 256, groups: 8, num_coeffs: 6, den_coeffs: 4 };
    let r = rounding_experiment_in::<f32>(shape, 8, 13, 256).unwrap();
    assert!(r.per_pass_dominance(), "{:?}", r.per_pass);
}
