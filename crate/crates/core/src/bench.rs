//! Benchmark, verification-suite and cost-table drivers behind the CLI.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::access::{
    flops_grkan, flops_kan, flops_mlp, instrumented_backward, params_grkan, params_kan, params_mlp,
    predict_accesses_blocked, predict_accesses_naive, AccessReport, FlopsConfig,
};
use crate::backward::{backward, backward_blocked, backward_naive, ExecutionPlan, Strategy};
use crate::dump::write_tensor;
use crate::error::{GrkanError, Result};
use crate::rational::{forward_tensor, GroupLayout, GroupRationalParams};
use crate::real::{Precision, Real};
use crate::stats::Summary;
use crate::tensor::ActivationTensor;
use crate::verify::{
    layer_gradient_check, max_rel_error, normal_instance, oracle_backward, random_layer_instance,
    random_strategy_instance, rounding_experiment, RoundingShape,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Maps an error to the CLI exit-code contract.
pub fn exit_code_for(err: &GrkanError) -> i32 {
    match err {
        GrkanError::AccumulationOverflow(_) | GrkanError::PartialCoverage(_) => EXIT_ASSERTION,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Naive,
    Blocked,
    Both,
}

impl StrategyChoice {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::Naive => vec![Strategy::NaiveAtomic],
            StrategyChoice::Blocked => vec![Strategy::BlockedReduction],
            StrategyChoice::Both => vec![Strategy::NaiveAtomic, Strategy::BlockedReduction],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch: usize,
    pub seqlen: usize,
    pub dim: usize,
    pub groups: usize,
    pub num_coeffs: usize,
    pub den_coeffs: usize,
    pub block_size: usize,
    pub strategy: StrategyChoice,
    pub precision: Precision,
    pub seed: u64,
    pub repeats: usize,
    pub warmup: usize,
    pub output_format: OutputFormat,
    pub output_path: Option<PathBuf>,
    pub workers: Option<usize>,
    pub instrument: bool,
    pub include_forward: bool,
    pub dump: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: 1024,
            seqlen: 197,
            dim: 768,
            groups: 8,
            num_coeffs: 6,
            den_coeffs: 4,
            block_size: ExecutionPlan::DEFAULT_BLOCK_SIZE,
            strategy: StrategyChoice::Both,
            precision: Precision::Single,
            seed: 0,
            repeats: 100,
            warmup: 5,
            output_format: OutputFormat::Json,
            output_path: None,
            workers: None,
            instrument: false,
            include_forward: false,
            dump: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.batch, "batch"),
            (self.seqlen, "seqlen"),
            (self.dim, "dim"),
            (self.groups, "groups"),
            (self.num_coeffs, "num_coeffs"),
            (self.block_size, "block_size"),
            (self.repeats, "repeats"),
        ] {
            if v == 0 {
                return Err(GrkanError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.workers == Some(0) {
            return Err(GrkanError::InvalidConfig("workers must be positive".into()));
        }
        GroupLayout::new(self.dim, self.groups)?;
        Ok(())
    }

    fn rounding_shape(&self) -> RoundingShape {
        RoundingShape {
            batch: self.batch,
            seq: self.seqlen,
            dim: self.dim,
            groups: self.groups,
            num_coeffs: self.num_coeffs,
            den_coeffs: self.den_coeffs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: Strategy,
    /// Per-repeat wall-clock durations in seconds.
    pub wall_times: Vec<f64>,
    pub mean: f64,
    pub ci95_half_width: Option<f64>,
    /// `B·N·d / mean`.
    pub elements_per_second: f64,
    pub access_report: Option<AccessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub timestamp: u64,
    pub config: BenchConfig,
    pub elements: usize,
    pub throughput_definition: String,
    pub timings: Vec<StrategyTiming>,
    /// Naive mean over blocked mean, when both ran.
    pub speedup_blocked_vs_naive: Option<f64>,
}

impl BenchReport {
    pub fn timing(&self, strategy: Strategy) -> Option<&StrategyTiming> {
        self.timings.iter().find(|t| t.strategy == strategy)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GrkanError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| GrkanError::Format(e.to_string()))
    }

    /// One row per repeat.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt_err = |e: csv::Error| GrkanError::Format(e.to_string());
        w.write_record([
            "timestamp",
            "strategy",
            "precision",
            "batch",
            "seqlen",
            "dim",
            "groups",
            "block_size",
            "repeat",
            "seconds",
            "elements_per_second",
        ])
        .map_err(fmt_err)?;
        let c = &self.config;
        for t in &self.timings {
            for (i, secs) in t.wall_times.iter().enumerate() {
                w.write_record([
                    self.timestamp.to_string(),
                    t.strategy.to_string(),
                    c.precision.to_string(),
                    c.batch.to_string(),
                    c.seqlen.to_string(),
                    c.dim.to_string(),
                    c.groups.to_string(),
                    c.block_size.to_string(),
                    i.to_string(),
                    format!("{secs:e}"),
                    format!("{:e}", self.elements as f64 / secs),
                ])
                .map_err(fmt_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| GrkanError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| GrkanError::Format(e.to_string()))
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Csv => self.to_csv(),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn time_strategy<T: Real>(
    cfg: &BenchConfig,
    x: &ActivationTensor<T>,
    up: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<StrategyTiming> {
    let run = || -> Result<()> {
        if cfg.include_forward {
            std::hint::black_box(forward_tensor(x, params, &plan.layout)?);
        }
        std::hint::black_box(backward(x, up, params, plan)?);
        Ok(())
    };
    for _ in 0..cfg.warmup {
        run()?;
    }
    let mut wall_times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let t0 = Instant::now();
        run()?;
        wall_times.push(t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let s = Summary::of(&wall_times);
    let access_report = if cfg.instrument { Some(instrumented_backward(x, up, params, plan)?.1) } else { None };
    Ok(StrategyTiming {
        strategy: plan.strategy,
        elements_per_second: x.shape().len() as f64 / s.mean,
        mean: s.mean,
        ci95_half_width: s.ci95_half_width,
        wall_times,
        access_report,
    })
}

fn bench_in<T: Real>(cfg: &BenchConfig) -> Result<BenchReport> {
    let shape = cfg.rounding_shape();
    let (x, up, params) = normal_instance::<T>(&shape, cfg.seed)?;
    if let Some(path) = &cfg.dump {
        let mut f = BufWriter::new(File::create(path)?);
        write_tensor(&mut f, &x)?;
        f.flush()?;
    }
    let layout = GroupLayout::new(cfg.dim, cfg.groups)?;
    let ts = shape.tensor_shape();
    let timings = crate::backward::with_workers(cfg.workers, || {
        cfg.strategy
            .strategies()
            .into_iter()
            .map(|s| {
                let plan = ExecutionPlan::for_strategy(s, ts, layout, cfg.block_size)?.with_workers(None);
                time_strategy(cfg, &x, &up, &params, &plan)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mean_of = |s: Strategy| timings.iter().find(|t| t.strategy == s).map(|t| t.mean);
    let speedup = match (mean_of(Strategy::NaiveAtomic), mean_of(Strategy::BlockedReduction)) {
        (Some(n), Some(b)) => Some(n / b),
        _ => None,
    };
    Ok(BenchReport {
        timestamp: unix_now(),
        config: cfg.clone(),
        elements: ts.len(),
        throughput_definition: "elements/second = B*N*d / mean wall time of one backward pass; \
one image corresponds to one N x d slice"
            .into(),
        timings,
        speedup_blocked_vs_naive: speedup,
    })
}

/// Warmup passes, then timed repeats of each selected strategy. Data
/// generation, dumps and instrumentation stay outside the timed region.
pub fn cmd_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let report = match cfg.precision {
        Precision::Single => bench_in::<f32>(cfg)?,
        Precision::Double => bench_in::<f64>(cfg)?,
    };
    emit(&report.render(cfg.output_format)?, cfg.output_path.as_deref())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Grad,
    Oracle,
    Access,
    Rounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub scale: Scale,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
}

impl VerifyReport {
    fn new(suite: Suite, scale: Scale, assertions: Vec<Assertion>) -> Self {
        let passed = assertions.iter().all(|a| a.passed);
        Self { suite, scale, passed, assertions }
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_PASS
        } else {
            EXIT_ASSERTION
        }
    }
}

fn assertion(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Assertion {
    Assertion { name: name.into(), passed, detail: detail.into() }
}

pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-6;
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Finite-difference checks of every layer gradient on random instances.
pub fn grad_suite(instances: usize, seed: u64) -> Result<Vec<Assertion>> {
    (0..instances)
        .map(|i| {
            let (layer, x, up) = random_layer_instance(seed.wrapping_add(i as u64))?;
            let r = layer_gradient_check(&layer, &x, &up, GRAD_STEP, GRAD_TOLERANCE)?;
            let worst = r.failures.first().map(|f| format!(", first failure {}", f.label)).unwrap_or_default();
            Ok(assertion(
                format!("grad instance {i}"),
                r.max_rel_error <= GRAD_TOLERANCE,
                format!(
                    "shape {:?} groups {} checked {} skipped {} max rel {:.3e}{worst}",
                    x.shape(),
                    layer.layout.num_groups(),
                    r.checked,
                    r.non_smooth_skips.len(),
                    r.max_rel_error
                ),
            ))
        })
        .collect()
}

fn strategy_bitwise_dx<T: Real>(seed: u64) -> Result<bool> {
    let (x, up, params, layout, block) = random_strategy_instance::<T>(seed)?;
    let n = backward_naive(&x, &up, &params, &ExecutionPlan::naive(x.shape(), layout, block)?)?;
    let b = backward_blocked(&x, &up, &params, &ExecutionPlan::blocked(x.shape(), layout, block)?)?;
    Ok(n.d_x == b.d_x)
}

/// Both strategies against the double-precision oracle, plus bitwise `d_x`
/// agreement in both precisions.
pub fn oracle_suite(instances: usize, seed: u64) -> Result<Vec<Assertion>> {
    (0..instances)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let (x, up, params, layout, block) = random_strategy_instance::<f64>(s)?;
            let o = oracle_backward(&x, &up, &params, &layout)?;
            let n = backward_naive(&x, &up, &params, &ExecutionPlan::naive(x.shape(), layout, block)?)?;
            let b = backward_blocked(&x, &up, &params, &ExecutionPlan::blocked(x.shape(), layout, block)?)?;
            let mut worst = 0.0f64;
            for g in [&n, &b] {
                worst = worst
                    .max(max_rel_error(g.d_a.data(), o.d_a.data()))
                    .max(max_rel_error(g.d_b.data(), o.d_b.data()))
                    .max(max_rel_error(g.d_x.data(), o.d_x.data()));
            }
            let bit64 = n.d_x == b.d_x;
            let bit32 = strategy_bitwise_dx::<f32>(s)?;
            Ok(assertion(
                format!("oracle instance {i}"),
                worst <= ORACLE_TOLERANCE && bit64 && bit32,
                format!("shape {:?} block {block} max rel {worst:.3e} bitwise d_x f64 {bit64} f32 {bit32}", x.shape()),
            ))
        })
        .collect()
}

/// `(B, N, d, S_block, d_g)` configurations whose blocked grid tiles exactly.
pub const ACCESS_CONFIGS: [(usize, usize, usize, usize, usize); 12] = [
    (2, 4, 16, 8, 8),
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

/// Instrumented totals of both strategies against the closed forms, exactly.
pub fn access_suite(configs: &[(usize, usize, usize, usize, usize)], seed: u64) -> Result<Vec<Assertion>> {
    configs
        .iter()
        .enumerate()
        .map(|(i, &(b, n, d, s, d_g))| {
            let shape = RoundingShape { batch: b, seq: n, dim: d, groups: d / d_g, num_coeffs: 6, den_coeffs: 4 };
            let (x, up, params) = normal_instance::<f64>(&shape, seed.wrapping_add(i as u64))?;
            let layout = GroupLayout::new(d, d / d_g)?;
            let coeffs = params.coefficient_count() as u64;
            let (b64, n64, d64) = (b as u64, n as u64, d as u64);
            let want_naive = predict_accesses_naive(b64, n64, d64, coeffs)?;
            let want_blocked = predict_accesses_blocked(b64, n64, d64, s as u64, d_g as u64, coeffs)?;
            let (_, rn) = instrumented_backward(&x, &up, &params, &ExecutionPlan::naive(x.shape(), layout, s)?)?;
            let (_, rb) = instrumented_backward(&x, &up, &params, &ExecutionPlan::blocked(x.shape(), layout, s)?)?;
            let ok = rn.total == want_naive
                && rb.total == want_blocked
                && rn.coverage_exact
                && rb.coverage_exact
                && rn.rmw_atomic == coeffs * b64 * n64 * d64
                && rb.rmw_atomic == coeffs * ((b * n / s) * (d / d_g)) as u64;
            Ok(assertion(
                format!("access ({b},{n},{d},{s},{d_g})"),
                ok,
                format!("naive {} predicted {want_naive}; blocked {} predicted {want_blocked}", rn.total, rb.total),
            ))
        })
        .collect()
}

pub const ROUNDING_RATIO_BOUND: f64 = 0.1;

/// Mean blocked MAE at most a tenth of the naive MAE, for both gradients.
pub fn rounding_suite(shape: RoundingShape, passes: usize, seed: u64) -> Result<Vec<Assertion>> {
    let r = rounding_experiment(shape, passes, seed)?;
    Ok(vec![
        assertion(
            "rounding d_a ratio",
            r.ratio_da() <= ROUNDING_RATIO_BOUND,
            format!("naive {:.4e} blocked {:.4e} ratio {:.4e}", r.mae_da_naive, r.mae_da_blocked, r.ratio_da()),
        ),
        assertion(
            "rounding d_b ratio",
            r.ratio_db() <= ROUNDING_RATIO_BOUND,
            format!("naive {:.4e} blocked {:.4e} ratio {:.4e}", r.mae_db_naive, r.mae_db_blocked, r.ratio_db()),
        ),
    ])
}

pub fn cmd_verify(suite: Suite, scale: Scale, seed: u64, output: Option<&Path>) -> Result<VerifyReport> {
    let assertions = match (suite, scale) {
        (Suite::Grad, Scale::Desk) => grad_suite(50, seed)?,
        (Suite::Grad, Scale::Paper) => grad_suite(500, seed)?,
        (Suite::Oracle, Scale::Desk) => oracle_suite(20, seed)?,
        (Suite::Oracle, Scale::Paper) => oracle_suite(200, seed)?,
        (Suite::Access, Scale::Desk) => access_suite(&ACCESS_CONFIGS, seed)?,
        (Suite::Access, Scale::Paper) => {
            let mut cfgs = ACCESS_CONFIGS.to_vec();
            cfgs.extend([(16, 197, 768, 197, 96), (32, 64, 256, 256, 32)]);
            access_suite(&cfgs, seed)?
        }
        (Suite::Rounding, Scale::Desk) => rounding_suite(RoundingShape::DESK, 20, seed)?,
        (Suite::Rounding, Scale::Paper) => rounding_suite(RoundingShape::FULL, 5, seed)?,
    };
    let report = VerifyReport::new(suite, scale, assertions);
    let text = serde_json::to_string_pretty(&report).map_err(|e| GrkanError::Format(e.to_string()))?;
    if let Some(p) = output {
        emit(&text, Some(p))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopsRow {
    Mlp,
    Kan,
    Grkan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsCounts {
    pub row: FlopsRow,
    pub params: u64,
    pub flops: u64,
}

/// Parameter count and FLOPs of one cost-table row.
pub fn cmd_flops(row: FlopsRow, cfg: &FlopsConfig) -> Result<FlopsCounts> {
    let (params, flops) = match row {
        FlopsRow::Mlp => (params_mlp(cfg)?, flops_mlp(cfg)?),
        FlopsRow::Kan => (params_kan(cfg)?, flops_kan(cfg)?),
        FlopsRow::Grkan => (params_grkan(cfg)?, flops_grkan(cfg)?),
    };
    Ok(FlopsCounts { row, params, flops })
}

/// Instrumented runs return exactly the gradients of plain runs.
pub fn instrumentation_is_transparent<T: Real>(seed: u64) -> Result<bool> {
    let (x, up, params, layout, block) = random_strategy_instance::<T>(seed)?;
    for s in [Strategy::NaiveAtomic, Strategy::BlockedReduction] {
        let plan = ExecutionPlan::for_strategy(s, x.shape(), layout, block)?;
        let plain = backward(&x, &up, &params, &plan)?;
        let (inst, _) = instrumented_backward(&x, &up, &params, &plan)?;
        if !plain.bitwise_eq(&inst) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BenchConfig {
        BenchConfig {
            batch: 2,
            seqlen: 8,
            dim: 16,
            groups: 2,
            block_size: 4,
            repeats: 3,
            warmup: 1,
            instrument: true,
            output_path: Some(std::env::temp_dir().join(format!("grkan-bench-{}.json", std::process::id()))),
            ..BenchConfig::default()
        }
    }

    #[test]
    fn defaults_mirror_experiment_shape() {
        let c = BenchConfig::default();
        assert_eq!((c.batch, c.seqlen, c.dim, c.groups, c.num_coeffs, c.den_coeffs), (1024, 197, 768, 8, 6, 4));
        assert_eq!((c.repeats, c.warmup), (100, 5));
    }

    #[test]
    fn indivisible_dim_is_layout_mismatch() {
        let c = BenchConfig { dim: 7, groups: 2, ..tiny_config() };
        let err = cmd_bench(&c).unwrap_err();
        assert!(err.to_string().contains("layout mismatch"));
        assert_eq!(exit_code_for(&err), EXIT_USAGE);
    }

    #[test]
    fn bench_report_contents() {
        let c = tiny_config();
        let r = cmd_bench(&c).unwrap();
        std::fs::remove_file(c.output_path.as_ref().unwrap()).ok();
        assert_eq!(r.timings.len(), 2);
        for t in &r.timings {
            assert_eq!(t.wall_times.len(), 3);
            assert!(t.wall_times.iter().all(|&w| w > 0.0));
            assert!(t.ci95_half_width.is_some());
            assert!(t.access_report.as_ref().unwrap().matches_prediction());
        }
        assert!(r.speedup_blocked_vs_naive.is_some());
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let c = BenchConfig { output_path: None, ..tiny_config() };
        let r = bench_in::<f64>(&c).unwrap();
        let text = r.to_json().unwrap();
        let back = BenchReport::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn csv_has_one_row_per_repeat() {
        let c = BenchConfig { output_path: None, strategy: StrategyChoice::Blocked, ..tiny_config() };
        let csv = bench_in::<f32>(&c).unwrap().to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 3);
    }

    #[test]
    fn flops_rows() {
        let g = FlopsConfig { d_in: 768, d_out: 3072, m: 5, n: 4, groups: 8, ..Default::default() };
        assert_eq!(cmd_flops(FlopsRow::Grkan, &g).unwrap().flops, 16_128 + 4_718_592);
        let m = FlopsConfig { d_in: 1, d_out: 1, ..Default::default() };
        assert_eq!(cmd_flops(FlopsRow::Mlp, &m).unwrap().flops, 2);
    }

    #[test]
    fn small_suites_pass() {
        assert!(grad_suite(3, 1).unwrap().iter().all(|a| a.passed));
        assert!(oracle_suite(3, 1).unwrap().iter().all(|a| a.passed));
        assert!(access_suite(&ACCESS_CONFIGS[..3], 1).unwrap().iter().all(|a| a.passed));
    }

    #[test]
    fn instrumentation_does_not_change_results() {
        assert!(instrumentation_is_transparent::<f32>(4).unwrap());
        assert!(instrumentation_is_transparent::<f64>(5).unwrap());
    }
}
