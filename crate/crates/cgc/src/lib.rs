//! Config parsing and command implementations behind the `cgc` binary.
//!
//! Configs are flat dotted-key text files, one `key = value` per line with
//! `#` comments. `--set key=value` overrides are applied last. Unknown keys
//! are rejected by name. The `seed` key is mandatory but may come from the
//! `CGC_SEED` environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use condgrad::constraints::{ConstraintKind, ConstraintSpec};
use condgrad::harness::{
    run_experiment, DatasetSpec, ExperimentConfig, HarnessError, OptimizerKind, SyntheticKind,
};
use condgrad::optim::ScheduleMode;
use condgrad::verify::{check_lmo, check_pathnorm, gap_bench, Mutation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "out",
    "dataset.kind",
    "dataset.n",
    "dataset.dir",
    "dataset.train_limit",
    "dataset.test_limit",
    "net.layers",
    "constraint.kind",
    "constraint.lambda",
    "constraint.eps",
    "constraint.tol",
    "constraint.incidence",
    "optim.kind",
    "optim.iters",
    "optim.batch",
    "optim.eval_every",
    "schedule.mode",
    "schedule.eta0",
    "schedule.burn_in",
];

/// Raw key/value view of a config file plus overrides, all keys validated.
pub fn read_keys(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            insert_checked(&mut map, k.trim(), v.trim())?;
        }
    }
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set '{item}': expected KEY=VALUE")))?;
        insert_checked(&mut map, k.trim(), v.trim())?;
    }
    Ok(map)
}

fn insert_checked(
    map: &mut BTreeMap<String, String>,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    if !KNOWN_KEYS.contains(&key) {
        return Err(ConfigError(format!("unknown key '{key}'")));
    }
    map.insert(key.to_string(), value.to_string());
    Ok(())
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| ConfigError(format!("{key} = '{raw}': {e}"))),
    }
}

/// Seed from the config or the CGC_SEED environment fallback.
pub fn resolve_seed(map: &BTreeMap<String, String>) -> Result<u64, ConfigError> {
    if let Some(seed) = parse::<u64>(map, "seed")? {
        return Ok(seed);
    }
    if let Ok(raw) = std::env::var("CGC_SEED") {
        return raw
            .parse::<u64>()
            .map_err(|e| ConfigError(format!("CGC_SEED = '{raw}': {e}")));
    }
    Err(ConfigError(
        "missing mandatory key 'seed' (or CGC_SEED in the environment)".into(),
    ))
}

/// Assemble a full experiment config from the key/value view.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[String],
    out_flag: Option<&Path>,
) -> Result<ExperimentConfig, ConfigError> {
    let map = read_keys(path, overrides)?;
    let seed = resolve_seed(&map)?;

    let dataset = match map.get("dataset.kind").map(String::as_str) {
        None | Some("gaussian_blobs") | Some("two_spirals") => {
            let kind: SyntheticKind = map
                .get("dataset.kind")
                .map(String::as_str)
                .unwrap_or("gaussian_blobs")
                .parse()
                .map_err(ConfigError)?;
            let n = parse::<usize>(&map, "dataset.n")?.unwrap_or(500);
            DatasetSpec::Synthetic { kind, n }
        }
        Some("mnist") | Some("idx") => {
            let dir = map.get("dataset.dir").ok_or_else(|| {
                ConfigError("dataset.dir is required for IDX datasets".into())
            })?;
            DatasetSpec::Idx {
                dir: PathBuf::from(dir),
                train_limit: parse::<usize>(&map, "dataset.train_limit")?.unwrap_or(1000),
                test_limit: parse::<usize>(&map, "dataset.test_limit")?.unwrap_or(1000),
            }
        }
        Some(other) => {
            return Err(ConfigError(format!(
                "dataset.kind = '{other}': expected gaussian_blobs, two_spirals, mnist or idx"
            )))
        }
    };

    let layers_raw = map
        .get("net.layers")
        .ok_or_else(|| ConfigError("missing mandatory key 'net.layers'".into()))?;
    let layers: Vec<usize> = layers_raw
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| ConfigError(format!("net.layers entry '{t}': {e}")))
        })
        .collect::<Result<_, _>>()?;

    let optimizer = parse::<OptimizerKind>(&map, "optim.kind")?.unwrap_or(OptimizerKind::Cg);

    let constraint = match map.get("constraint.kind") {
        None => None,
        Some(raw) => {
            let kind: ConstraintKind = raw.parse().map_err(ConfigError)?;
            let lambda = parse::<f64>(&map, "constraint.lambda")?.ok_or_else(|| {
                ConfigError("constraint.lambda is required with constraint.kind".into())
            })?;
            if lambda <= 0.0 {
                return Err(ConfigError(format!(
                    "constraint.lambda = {lambda}: must be positive"
                )));
            }
            if kind == ConstraintKind::TVBall {
                match map.get("constraint.incidence").map(String::as_str) {
                    Some("net") => {}
                    Some(other) => {
                        return Err(ConfigError(format!(
                            "constraint.incidence = '{other}': only 'net' is supported"
                        )))
                    }
                    None => {
                        return Err(ConfigError(
                            "constraint.kind = TVBall needs constraint.incidence = net (the incidence matrix source)"
                                .into(),
                        ))
                    }
                }
            }
            let mut spec = ConstraintSpec::new(kind, lambda);
            if let Some(eps) = parse::<f64>(&map, "constraint.eps")? {
                spec.eps = eps;
            }
            if let Some(tol) = parse::<f64>(&map, "constraint.tol")? {
                spec.tol = tol;
            }
            Some(spec)
        }
    };
    if matches!(
        optimizer,
        OptimizerKind::Cg | OptimizerKind::Pgd | OptimizerKind::PathCg
    ) && constraint.is_none()
    {
        return Err(ConfigError(format!(
            "missing mandatory key 'constraint.kind' for optim.kind = {:?}",
            optimizer
        )));
    }

    let schedule_mode = match map
        .get("schedule.mode")
        .map(String::as_str)
        .unwrap_or("burn_in_then_decay")
    {
        "constant" => ScheduleMode::Constant,
        "burn_in_then_decay" => ScheduleMode::BurnInThenDecay,
        other => {
            return Err(ConfigError(format!(
                "schedule.mode = '{other}': expected constant or burn_in_then_decay"
            )))
        }
    };
    let eta0 = parse::<f64>(&map, "schedule.eta0")?.unwrap_or(0.9);
    if !(0.0 < eta0 && eta0 < 1.0) {
        return Err(ConfigError(format!(
            "schedule.eta0 = {eta0}: must lie in (0,1)"
        )));
    }

    let out = out_flag
        .map(Path::to_path_buf)
        .or_else(|| map.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(ExperimentConfig {
        dataset,
        layers,
        constraint,
        optimizer,
        schedule_mode,
        eta0,
        burn_in: parse::<usize>(&map, "schedule.burn_in")?,
        iters: parse::<usize>(&map, "optim.iters")?.unwrap_or(100),
        batch: parse::<usize>(&map, "optim.batch")?.unwrap_or(32),
        eval_every: parse::<usize>(&map, "optim.eval_every")?.unwrap_or(0),
        seed,
        out,
    })
}

fn runtime_exit(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

pub fn cmd_train(
    config: Option<&Path>,
    overrides: &[String],
    out_flag: Option<&Path>,
) -> i32 {
    let cfg = match parse_config(config, overrides, out_flag) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            println!("run complete");
            println!("  final train error    {:.4}", summary.final_train_err);
            println!("  final test error     {:.4}", summary.final_test_err);
            println!(
                "  final constraint R(W) {:.6}",
                summary.final_constraint_value
            );
            println!("  wall time            {:.1} ms", summary.total_wall_ms);
            println!("  metrics              {}", summary.csv_path.display());
            println!("  summary              {}", summary.summary_path.display());
            if cfg.iters == 0 {
                println!("  note: optim.iters = 0, nothing was trained");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            runtime_exit(&e)
        }
    }
}

pub fn cmd_check_lmo(config: Option<&Path>, overrides: &[String], kind: Option<&str>) -> i32 {
    let map = match read_keys(config, overrides) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let seed = match resolve_seed(&map) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    match check_lmo(seed, kind, Mutation::None) {
        Ok(report) => {
            for s in &report.suites {
                println!("{}", s.line());
            }
            if report.all_pass() {
                EXIT_OK
            } else {
                EXIT_VERIFY
            }
        }
        Err(e) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn cmd_check_pathnorm(config: Option<&Path>, overrides: &[String]) -> i32 {
    let map = match read_keys(config, overrides) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let seed = match resolve_seed(&map) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let report = check_pathnorm(seed);
    for s in &report.suites {
        println!("{}", s.line());
    }
    if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

pub fn cmd_gap_bench(config: Option<&Path>, overrides: &[String]) -> i32 {
    let map = match read_keys(config, overrides) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let seed = match resolve_seed(&map) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let report = gap_bench(seed, &[1e-1, 1e-2, 1e-3]);
    println!("eps        iterations");
    for row in &report.rows {
        println!("{:<10} {}", row.eps, row.iterations);
    }
    println!(
        "fitted exponent of iterations vs 1/eps: {:.3}",
        report.exponent
    );
    let ok = report.monotone && report.exponent <= 1.3;
    if !report.monotone {
        println!("FAIL: iteration counts are not monotone in accuracy");
    }
    if report.exponent > 1.3 {
        println!("FAIL: exponent {} exceeds 1.3", report.exponent);
    }
    if ok {
        println!("gap-bench PASS");
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}
