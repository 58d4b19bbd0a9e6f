//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::time::{Duration, Instant};

use grkan::access::{instrumented_backward, predict_accesses_blocked, predict_accesses_naive, FlopsConfig};
use grkan::backward::{backward_blocked, backward_naive, ExecutionPlan};
use grkan::bench::{cmd_bench, cmd_flops, BenchConfig, FlopsRow, StrategyChoice};
use grkan::stats::Summary;
use grkan::train::{train_smoke, TrainConfig};
use grkan::verify::{
    layer_gradient_check, max_rel_error, normal_instance, oracle_backward, random_layer_instance,
    random_strategy_instance, rounding_experiment, RoundingShape,
};
use grkan::{GroupLayout, Precision, Strategy};

struct Outcome {
    passed: bool,
    detail: String,
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let elapsed = t0.elapsed();
    let in_time = elapsed < budget;
    let passed = out.passed && in_time;
    println!(
        "criterion {id} [{name}]: {} ({}; {:.1}s of {:.0}s budget)",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    passed
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut failing = Vec::new();
    for i in 0..50u64 {
        let (layer, x, up) = random_layer_instance(1000 + i).expect("instance");
        let r = layer_gradient_check(&layer, &x, &up, 1e-6, 1e-6).expect("check");
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        skipped += r.non_smooth_skips.len();
        if r.max_rel_error > 1e-6 {
            failing.push(i);
        }
    }
    Outcome {
        passed: failing.is_empty(),
        detail: format!(
            "50 instances, {checked} coordinates, {skipped} kink skips, max rel error {worst:.2e}, failing {failing:?}"
        ),
    }
}

fn strategy_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for i in 0..20u64 {
        let (x, up, p, layout, s) = random_strategy_instance::<f64>(2000 + i).expect("instance");
        let o = oracle_backward(&x, &up, &p, &layout).unwrap();
        let n = backward_naive(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, s).unwrap()).unwrap();
        let b = backward_blocked(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, s).unwrap()).unwrap();
        for g in [&n, &b] {
            worst = worst
                .max(max_rel_error(g.d_a.data(), o.d_a.data()))
                .max(max_rel_error(g.d_b.data(), o.d_b.data()))
                .max(max_rel_error(g.d_x.data(), o.d_x.data()));
        }
        bitwise &= n.d_x == b.d_x;

        let (x, up, p, layout, s) = random_strategy_instance::<f32>(2000 + i).expect("instance");
        let n = backward_naive(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, s).unwrap()).unwrap();
        let b = backward_blocked(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, s).unwrap()).unwrap();
        bitwise &= n.d_x.data().iter().zip(b.d_x.data()).all(|(a, c)| a.to_bits() == c.to_bits());
    }
    Outcome {
        passed: worst <= 1e-12 && bitwise,
        detail: format!(
            "20 instances, max rel error vs oracle {worst:.2e}, d_x bitwise equal in f32 and f64: {bitwise}"
        ),
    }
}

fn access_exactness() -> Outcome {
    // (B, N, d, S_block, d_g), all with S_block | B·N
    let configs = [
        (2usize, 4usize, 16usize, 8usize, 8usize),
        (1, 1, 1, 1, 1),
        (1, 8, 8, 4, 2),
        (2, 3, 12, 6, 4),
        (4, 4, 16, 16, 16),
        (3, 5, 10, 5, 5),
        (2, 8, 32, 4, 8),
        (8, 2, 24, 16, 3),
        (1, 6, 6, 3, 1),
        (4, 16, 64, 32, 8),
        (2, 2, 8, 1, 2),
        (5, 4, 20, 10, 4),
    ];
    let coeffs = 10u64;
    let mut ok = true;
    let mut first = String::new();
    for (i, &(b, n, d, s, d_g)) in configs.iter().enumerate() {
        let elems = (b * n * d) as u64;
        let hand_naive = 3 * (coeffs + 1) * elems;
        let hand_blocked = 3 * elems + 3 * coeffs * ((b * n / s) * (d / d_g)) as u64;
        let shape = RoundingShape { batch: b, seq: n, dim: d, groups: d / d_g, num_coeffs: 6, den_coeffs: 4 };
        let (x, up, p) = normal_instance::<f32>(&shape, 3000 + i as u64).unwrap();
        let layout = GroupLayout::new(d, d / d_g).unwrap();
        let (_, rn) = instrumented_backward(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, s).unwrap()).unwrap();
        let (_, rb) =
            instrumented_backward(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, s).unwrap()).unwrap();
        let pn = predict_accesses_naive(b as u64, n as u64, d as u64, coeffs).unwrap();
        let pb = predict_accesses_blocked(b as u64, n as u64, d as u64, s as u64, d_g as u64, coeffs).unwrap();
        ok &= rn.total == hand_naive && pn == hand_naive && rb.total == hand_blocked && pb == hand_blocked;
        ok &= rn.coverage_exact && rb.coverage_exact;
        if i == 0 {
            ok &= hand_naive == 4224 && hand_blocked == 444;
            first = format!("(2,4,16,8,8): naive {} blocked {}", rn.total, rb.total);
        }
    }
    Outcome { passed: ok, detail: format!("{} configurations exact, {first}", configs.len()) }
}

fn rounding_reduction() -> Outcome {
    let r = rounding_experiment(RoundingShape::DESK, 20, 42).expect("experiment");
    let ci = r.ci95_half_widths.unwrap_or([f64::NAN; 4]);
    Outcome {
        passed: r.ratio_da() <= 0.1 && r.ratio_db() <= 0.1,
        detail: format!(
            "d_a naive {:.3e}±{:.1e} blocked {:.3e}±{:.1e} ratio {:.3e}; d_b naive {:.3e}±{:.1e} blocked {:.3e}±{:.1e} ratio {:.3e}",
            r.mae_da_naive,
            ci[0],
            r.mae_da_blocked,
            ci[1],
            r.ratio_da(),
            r.mae_db_naive,
            ci[2],
            r.mae_db_blocked,
            ci[3],
            r.ratio_db()
        ),
    }
}

fn flops_fixtures() -> Outcome {
    let f = |row, cfg: FlopsConfig| cmd_flops(row, &cfg).unwrap();
    let cfg = |d_in, d_out| FlopsConfig { d_in, d_out, ..Default::default() };
    // (computed, hand substitution)
    let cases: Vec<(u64, u64)> = vec![
        // 21·192 + 2·192·768
        (f(FlopsRow::Grkan, FlopsConfig { m: 5, n: 4, groups: 8, ..cfg(192, 768) }).flops, 4_032 + 294_912),
        // 21·768 + 2·768·3072
        (f(FlopsRow::Grkan, FlopsConfig { m: 5, n: 4, groups: 8, ..cfg(768, 3072) }).flops, 16_128 + 4_718_592),
        // 192·768 + 768 + 5 + 4·8
        (f(FlopsRow::Grkan, FlopsConfig { m: 5, n: 4, groups: 8, ..cfg(192, 768) }).params, 147_456 + 768 + 5 + 32),
        (f(FlopsRow::Mlp, cfg(1, 1)).flops, 2),
        // 8·3072 + 2·768·3072
        (f(FlopsRow::Mlp, FlopsConfig { func_flops: 8, ..cfg(768, 3072) }).flops, 24_576 + 4_718_592),
        (f(FlopsRow::Mlp, cfg(768, 3072)).params, 2_359_296 + 3_072),
        // bracket at K=3, G=5: 256.5 + 10 - 7.5 + 3 = 262; 4·2 + 6·262
        (f(FlopsRow::Kan, FlopsConfig { func_flops: 4, spline_order: 3, intervals: 5, ..cfg(2, 3) }).flops, 8 + 1_572),
        // K=G=0 collapses the bracket to 3: 7·4 + 3·20
        (f(FlopsRow::Kan, FlopsConfig { func_flops: 7, ..cfg(4, 5) }).flops, 28 + 60),
        // 6·(5 + 3 + 3) + 3
        (f(FlopsRow::Kan, FlopsConfig { spline_order: 3, intervals: 5, ..cfg(2, 3) }).params, 69),
        // K=1, G=1: 9·2.5 + 2 - 2.5 + 3 = 25
        (f(FlopsRow::Kan, FlopsConfig { spline_order: 1, intervals: 1, ..cfg(1, 1) }).flops, 25),
    ];
    let bad: Vec<usize> = cases.iter().enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i).collect();
    Outcome { passed: bad.is_empty(), detail: format!("{} fixtures, mismatches {bad:?}", cases.len()) }
}

fn performance() -> Outcome {
    let out = std::env::temp_dir().join(format!("grkan-acceptance-bench-{}.json", std::process::id()));
    let cfg = BenchConfig {
        strategy: StrategyChoice::Both,
        precision: Precision::Single,
        repeats: 20,
        warmup: 2,
        output_path: Some(out.clone()),
        ..BenchConfig::default()
    };
    let report = cmd_bench(&cfg).expect("bench");
    std::fs::remove_file(out).ok();
    let summary = |s| {
        let t = report.timing(s).expect("timing");
        Summary::of(&t.wall_times)
    };
    let naive = summary(Strategy::NaiveAtomic);
    let blocked = summary(Strategy::BlockedReduction);
    let workers = rayon::current_num_threads();
    Outcome {
        passed: blocked.mean < naive.mean && blocked.strictly_below(&naive),
        detail: format!(
            "shape {}x{}x{}, {workers} worker(s), naive {:.3}s [{:.3}, {:.3}], blocked {:.3}s [{:.3}, {:.3}], ratio {:.2}",
            cfg.batch,
            cfg.seqlen,
            cfg.dim,
            naive.mean,
            naive.lower(),
            naive.upper(),
            blocked.mean,
            blocked.lower(),
            blocked.upper(),
            naive.mean / blocked.mean
        ),
    }
}

fn training_smoke() -> Outcome {
    let r = train_smoke(&TrainConfig::default()).expect("training");
    Outcome {
        passed: r.reduction() >= 0.9,
        detail: format!(
            "{} steps, loss {:.4e} -> {:.4e}, reduction {:.2}%",
            r.config.steps,
            r.initial_loss(),
            r.final_loss(),
            100.0 * r.reduction()
        ),
    }
}

fn determinism() -> Outcome {
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let worker_counts = [1usize, 4, max];
    let shape = RoundingShape { batch: 8, seq: 64, dim: 256, groups: 8, num_coeffs: 6, den_coeffs: 4 };
    let (x, up, p) = normal_instance::<f32>(&shape, 5000).unwrap();
    let layout = GroupLayout::new(256, 8).unwrap();
    let plan = ExecutionPlan::blocked(x.shape(), layout, 16).unwrap();
    let reference = backward_blocked(&x, &up, &p, &plan).unwrap();

    let (layer, lx, lup) = random_layer_instance(5001).unwrap();
    let layer_ref = layer.backward_with(&lx, &lup, 2, Some(1)).unwrap();

    let mut same = true;
    let mut runs = 0;
    for &w in &worker_counts {
        for _ in 0..5 {
            let g = backward_blocked(&x, &up, &p, &plan.with_workers(Some(w))).unwrap();
            same &= g.bitwise_eq(&reference);
            let lg = layer.backward_with(&lx, &lup, 2, Some(w)).unwrap();
            same &= lg.rational.bitwise_eq(&layer_ref.rational)
                && lg.d_weight.data().iter().zip(layer_ref.d_weight.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                && lg.d_bias.iter().zip(&layer_ref.d_bias).all(|(a, b)| a.to_bits() == b.to_bits());
            runs += 1;
        }
    }
    Outcome { passed: same, detail: format!("{runs} runs over workers {worker_counts:?}, bitwise identical: {same}") }
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        run(1, "gradient correctness", min(1), gradient_correctness),
        run(2, "strategy equivalence", min(1), strategy_equivalence),
        run(3, "access-model exactness", min(1), access_exactness),
        run(4, "rounding-error reduction", min(10), rounding_reduction),
        run(5, "FLOPs estimators", Duration::from_secs(1), flops_fixtures),
        run(6, "performance property", min(15), performance),
        run(7, "training smoke", min(2), training_smoke),
        run(8, "determinism", min(5), determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
