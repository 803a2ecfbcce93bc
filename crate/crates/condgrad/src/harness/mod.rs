//! Datasets, experiment orchestration, and the independent brute-force
//! oracles used by the verification suites.

pub mod idx;
pub mod oracle;
pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::{ConstraintKind, ConstraintSpec};
use crate::linalg::l2_norm;
use crate::network::{
    classification_error, path_norm, save_net, Batch, FeedForwardNet, NetworkError,
};
use crate::optim::{
    constraint_value, path_cg, train_cg, train_pgd, train_sgd, OptimError, RunMetrics,
    ScheduleMode, StepSchedule, TrainOptions,
};
pub use synth::{synthetic_dataset, SyntheticKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },
    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },
    #[error("image file has {images} samples but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Train/test batches plus the per-feature normalization that produced
/// them (shift, scale applied as (x − shift)·scale).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: Batch,
    pub test: Batch,
    pub normalization: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    Synthetic { kind: SyntheticKind, n: usize },
    /// IDX files named like the public MNIST distribution under `dir`;
    /// a seeded subset of the given sizes is selected (0 = all).
    Idx {
        dir: PathBuf,
        train_limit: usize,
        test_limit: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Cg,
    Sgd,
    Pgd,
    PathCg,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cg" => Ok(OptimizerKind::Cg),
            "sgd" => Ok(OptimizerKind::Sgd),
            "pgd" => Ok(OptimizerKind::Pgd),
            "path_cg" => Ok(OptimizerKind::PathCg),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub layers: Vec<usize>,
    pub constraint: Option<ConstraintSpec>,
    pub optimizer: OptimizerKind,
    pub schedule_mode: ScheduleMode,
    pub eta0: f64,
    /// Burn-in length in iterations; `None` means one epoch, ⌈N/B⌉.
    pub burn_in: Option<usize>,
    pub iters: usize,
    pub batch: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub final_train_err: f64,
    pub final_test_err: f64,
    pub final_constraint_value: f64,
    pub total_wall_ms: f64,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

fn subset(batch: &Batch, limit: usize, rng: &mut ChaCha8Rng) -> Batch {
    if limit == 0 || limit >= batch.len() {
        return batch.clone();
    }
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.shuffle(rng);
    idx.truncate(limit);
    batch.select(&idx)
}

/// Per-feature min-max to [0,1] using train statistics (constant features
/// pass through unchanged).
fn minmax_normalize(train: &mut Batch, test: &mut Batch) -> Vec<(f64, f64)> {
    let d = train.inputs.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..train.len() {
        for j in 0..d {
            let x = train.inputs[(i, j)];
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    let norm: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let span = hi[j] - lo[j];
            if span > 0.0 {
                (lo[j], 1.0 / span)
            } else {
                (0.0, 1.0)
            }
        })
        .collect();
    for batch in [train, test] {
        for i in 0..batch.len() {
            for j in 0..d {
                let x = batch.inputs[(i, j)];
                batch.inputs[(i, j)] = (x - norm[j].0) * norm[j].1;
            }
        }
    }
    norm
}

pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, HarnessError> {
    match spec {
        DatasetSpec::Synthetic { kind, n } => Ok(synthetic_dataset(*kind, *n, seed)),
        DatasetSpec::Idx {
            dir,
            train_limit,
            test_limit,
        } => {
            let full_train = idx::load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let full_test = idx::load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d_855);
            let mut train = subset(&full_train, *train_limit, &mut rng);
            let mut test = subset(&full_test, *test_limit, &mut rng);
            let normalization = minmax_normalize(&mut train, &mut test);
            Ok(Dataset {
                name: dir.display().to_string(),
                train,
                test,
                normalization,
            })
        }
    }
}

/// Scale a freshly initialized net strictly inside the constraint ball:
/// uniformly for the 1-homogeneous kinds, per-layer geometric for the
/// path norm (which is homogeneous of degree depth).
pub fn rescale_into_ball(
    net: &mut FeedForwardNet,
    spec: &ConstraintSpec,
    for_path_cg: bool,
) {
    if for_path_cg {
        let pn = path_norm(net);
        if pn > 0.0 {
            let c = (spec.lambda / (2.0 * pn)).powf(1.0 / net.depth() as f64);
            for w in net.weights_mut() {
                for x in w.data_mut() {
                    *x *= c;
                }
            }
        }
        return;
    }
    let r = constraint_value(spec, net, None);
    if r > spec.lambda / 2.0 {
        let c = spec.lambda / (2.0 * r);
        for w in net.weights_mut() {
            for x in w.data_mut() {
                *x *= c;
            }
        }
    }
}

/// Build the dataset and network, run the configured optimizer, and write
/// `metrics.csv`, `summary.json` and `net.txt` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let started = Instant::now();
    let data = build_dataset(&cfg.dataset, cfg.seed)?;
    if cfg.layers.len() < 2 {
        return Err(HarnessError::Config(
            "net.layers needs at least input and output sizes".into(),
        ));
    }
    if cfg.layers[0] != data.train.inputs.cols() {
        return Err(HarnessError::Config(format!(
            "net.layers[0] = {} does not match the dataset feature dim {}",
            cfg.layers[0],
            data.train.inputs.cols()
        )));
    }
    let classes = *cfg.layers.last().unwrap();
    if let Some(&bad) = data
        .train
        .labels
        .iter()
        .chain(data.test.labels.iter())
        .find(|&&y| y >= classes)
    {
        return Err(HarnessError::Config(format!(
            "label {bad} outside the {classes}-class output layer"
        )));
    }
    match (cfg.optimizer, &cfg.constraint) {
        (OptimizerKind::Cg | OptimizerKind::Pgd | OptimizerKind::PathCg, None) => {
            return Err(HarnessError::Config(format!(
                "optimizer {:?} requires constraint.kind",
                cfg.optimizer
            )))
        }
        (OptimizerKind::PathCg, Some(spec)) if spec.kind != ConstraintKind::PathNormBall => {
            return Err(HarnessError::Config(
                "path_cg only trains under constraint.kind = PathNormBall".into(),
            ))
        }
        (OptimizerKind::Cg, Some(spec)) if spec.kind == ConstraintKind::PathNormBall => {
            return Err(HarnessError::Config(
                "PathNormBall training uses optim.kind = path_cg".into(),
            ))
        }
        _ => {}
    }

    let mut net = FeedForwardNet::random(cfg.layers.clone(), cfg.seed ^ 0x6e65_7431);
    if let Some(spec) = &cfg.constraint {
        if matches!(cfg.optimizer, OptimizerKind::Cg | OptimizerKind::PathCg) {
            rescale_into_ball(&mut net, spec, cfg.optimizer == OptimizerKind::PathCg);
        }
    }

    let n = data.train.len();
    let batch = cfg.batch.max(1);
    let burn_in = cfg.burn_in.unwrap_or(n.div_ceil(batch));
    let schedule = match cfg.schedule_mode {
        ScheduleMode::Constant => StepSchedule::constant(cfg.eta0),
        ScheduleMode::BurnInThenDecay => StepSchedule::burn_in_then_decay(cfg.eta0, burn_in),
    };
    let opts = TrainOptions {
        iters: cfg.iters,
        batch_size: batch,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
        schedule,
    };

    let (net, metrics): (FeedForwardNet, RunMetrics) = match cfg.optimizer {
        OptimizerKind::Cg => train_cg(
            &net,
            &data.train,
            &data.test,
            cfg.constraint.as_ref().unwrap(),
            &opts,
        )?,
        OptimizerKind::Pgd => train_pgd(
            &net,
            &data.train,
            &data.test,
            cfg.constraint.as_ref().unwrap(),
            &opts,
        )?,
        OptimizerKind::Sgd => train_sgd(&net, &data.train, &data.test, cfg.constraint.as_ref(), &opts)?,
        OptimizerKind::PathCg => path_cg(
            &net,
            &data.train,
            &data.test,
            cfg.constraint.as_ref().unwrap().lambda,
            &opts,
        )?,
    };

    std::fs::create_dir_all(&cfg.out)?;
    let csv_path = cfg.out.join("metrics.csv");
    let mut csv = Vec::new();
    metrics.write_csv(&mut csv)?;
    std::fs::write(&csv_path, csv)?;
    save_net(&net, &cfg.out.join("net.txt"))?;

    let final_train_err = classification_error(&net, &data.train)?;
    let final_test_err = classification_error(&net, &data.test)?;
    let final_constraint_value = cfg
        .constraint
        .as_ref()
        .map(|s| constraint_value(s, &net, None))
        .unwrap_or_else(|| l2_norm(net.params().as_slice()));
    let total_wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let summary_path = cfg.out.join("summary.json");
    let summary_json = serde_json::json!({
        "final_train_err": final_train_err,
        "final_test_err": final_test_err,
        "final_constraint_value": final_constraint_value,
        "total_wall_ms": total_wall_ms,
    });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary_json)?)?;

    Ok(ExperimentSummary {
        final_train_err,
        final_test_err,
        final_constraint_value,
        total_wall_ms,
        csv_path,
        summary_path,
    })
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.into())
    }
}

/// Path to the bundled handwritten-digits IDX directory, if the repo data
/// is present relative to the workspace.
pub fn bundled_digits_dir() -> Option<PathBuf> {
    let candidates = [
        Path::new("data/digits").to_path_buf(),
        Path::new("../data/digits").to_path_buf(),
        Path::new("../../data/digits").to_path_buf(),
    ];
    candidates
        .into_iter()
        .find(|p| p.join("train-images-idx3-ubyte").exists())
}

/// Preferred real-image dataset directory: real MNIST when present
/// (data/mnist or $CGC_MNIST_DIR), else the bundled digits export.
pub fn default_image_data_dir() -> Option<PathBuf> {
    if let Ok(dir) = std::env::var("CGC_MNIST_DIR") {
        let p = PathBuf::from(dir);
        if p.join("train-images-idx3-ubyte").exists() {
            return Some(p);
        }
    }
    for cand in ["data/mnist", "../data/mnist", "../../data/mnist"] {
        let p = PathBuf::from(cand);
        if p.join("train-images-idx3-ubyte").exists() {
            return Some(p);
        }
    }
    bundled_digits_dir()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::ScheduleMode;

    fn blob_config(out: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                kind: SyntheticKind::GaussianBlobs,
                n: 100,
            },
            layers: vec![2, 8, 3],
            constraint: Some(ConstraintSpec::new(ConstraintKind::FrobeniusBall, 4.0)),
            optimizer: OptimizerKind::Cg,
            schedule_mode: ScheduleMode::BurnInThenDecay,
            eta0: 0.85,
            burn_in: None,
            iters: 40,
            batch: 16,
            eval_every: 20,
            seed: 77,
            out,
        }
    }

    #[test]
    fn experiment_writes_csv_summary_and_net() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = blob_config(dir.path().join("run"));
        let summary = run_experiment(&cfg).unwrap();
        assert!(summary.csv_path.exists());
        assert!(summary.summary_path.exists());
        assert!(cfg.out.join("net.txt").exists());
        let text = std::fs::read_to_string(&summary.summary_path).unwrap();
        for key in [
            "final_train_err",
            "final_test_err",
            "final_constraint_value",
            "total_wall_ms",
        ] {
            assert!(text.contains(key), "summary missing {key}");
        }
        assert!(summary.final_constraint_value <= 4.0 * (1.0 + 1e-8));
    }

    #[test]
    fn zero_iteration_experiment_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = blob_config(dir.path().join("run"));
        cfg.iters = 0;
        let summary = run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(&summary.csv_path).unwrap();
        assert_eq!(
            text.trim(),
            "iter,loss,train_err,test_err,constraint_value,eta,wall_ms"
        );
    }

    #[test]
    fn rerun_is_byte_identical_outside_wall_ms() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = blob_config(dir.path().join("a"));
        let cfg_b = ExperimentConfig {
            out: dir.path().join("b"),
            ..cfg_a.clone()
        };
        let sa = run_experiment(&cfg_a).unwrap();
        let sb = run_experiment(&cfg_b).unwrap();
        let strip = |p: &Path| {
            std::fs::read_to_string(p)
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_else(|| l.to_string()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&sa.csv_path), strip(&sb.csv_path));
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = blob_config(dir.path().join("run"));
        cfg.layers = vec![5, 8, 3];
        assert!(matches!(
            run_experiment(&cfg),
            Err(HarnessError::Config(_))
        ));
        let mut cfg = blob_config(dir.path().join("run2"));
        cfg.constraint = None;
        assert!(matches!(
            run_experiment(&cfg),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn paired_sgd_run_exceeds_lambda_that_path_cg_respects() {
        // pilot: unconstrained SGD, read its final path norm
        let data = synthetic_dataset(SyntheticKind::GaussianBlobs, 100, 5);
        let net = FeedForwardNet::random(vec![2, 8, 3], 123);
        let opts = TrainOptions {
            iters: 150,
            batch_size: 16,
            seed: 5,
            eval_every: 0,
            schedule: StepSchedule::constant(0.4),
        };
        let log_spec = ConstraintSpec::new(ConstraintKind::PathNormBall, 1.0);
        let (_, pilot) = train_sgd(&net, &data.train, &data.test, Some(&log_spec), &opts).unwrap();
        let sgd_final = pilot.records.last().unwrap().constraint_value;
        let lambda = 0.8 * sgd_final;
        assert!(lambda > 0.0);

        let mut start = net.clone();
        let spec = ConstraintSpec::new(ConstraintKind::PathNormBall, lambda);
        rescale_into_ball(&mut start, &spec, true);
        let (_, constrained) = path_cg(&start, &data.train, &data.test, lambda, &opts).unwrap();
        for r in &constrained.records {
            assert!(r.constraint_value <= lambda * (1.0 + 1e-8));
        }
        // rerunning SGD from the same rescaled start still ends above λ
        let (_, rerun) = train_sgd(&start, &data.train, &data.test, Some(&log_spec), &opts).unwrap();
        assert!(
            rerun.records.last().unwrap().constraint_value > lambda,
            "SGD stayed under λ; pilot procedure needs a harder run"
        );
    }
}
