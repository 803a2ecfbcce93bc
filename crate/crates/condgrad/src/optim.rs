//! Optimizer loops — plain SGD, projected gradient, conditional gradient,
//! and the layer-wise path-norm variant — plus step schedules and the
//! stationarity gap diagnostic.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::{
    lmo_frobenius, lmo_group_l1_inf, lmo_l1, lmo_linf, lmo_nuclear, lmo_pathnorm_layer, lmo_tv,
    node_potentials, project_frobenius, project_l1, project_linf, tv_norm, ConstraintError,
    ConstraintKind, ConstraintSpec, LmoResult,
};
use crate::harness::oracle::jacobi_nuclear_norm;
use crate::linalg::{dot, l2_norm, Matrix, ParamBlock};
use crate::network::{
    classification_error, compute_gammas, incidence_matrix, loss_and_gradient, path_norm, Batch,
    FeedForwardNet, IncidenceMatrix, NetworkError,
};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("initial iterate is infeasible: R(W0) = {value} exceeds λ = {lambda}; rescale the initialization to start inside the ball")]
    InfeasibleStart { value: f64, lambda: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Constant,
    BurnInThenDecay,
}

/// Two-phase step schedule: a burn-in phase with a constant combination
/// weight, then a decay phase where the weight on the oracle point falls
/// off like 1/t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub mode: ScheduleMode,
    pub eta0: f64,
    pub burn_in_iters: usize,
}

impl StepSchedule {
    pub fn constant(eta0: f64) -> Self {
        assert!(eta0 > 0.0 && eta0 < 1.0, "eta0 must lie in (0,1)");
        Self {
            mode: ScheduleMode::Constant,
            eta0,
            burn_in_iters: 0,
        }
    }

    pub fn burn_in_then_decay(eta0: f64, burn_in_iters: usize) -> Self {
        assert!(eta0 > 0.0 && eta0 < 1.0, "eta0 must lie in (0,1)");
        Self {
            mode: ScheduleMode::BurnInThenDecay,
            eta0,
            burn_in_iters,
        }
    }

    /// η_t for the convex-combination update: the weight on the oracle
    /// point is 1−eta0 during burn-in and (1−eta0)·burn_in/t afterwards.
    pub fn eta(&self, t: usize) -> f64 {
        match self.mode {
            ScheduleMode::Constant => self.eta0,
            ScheduleMode::BurnInThenDecay => {
                if t < self.burn_in_iters {
                    self.eta0
                } else {
                    let b = self.burn_in_iters.max(1) as f64;
                    let tt = (t as f64).max(b);
                    1.0 - (1.0 - self.eta0) * b / tt
                }
            }
        }
    }

    /// Learning rate for the additive (SGD/PGD) updates: eta0 during
    /// burn-in, then decaying like 1/t.
    pub fn learning_rate(&self, t: usize) -> f64 {
        match self.mode {
            ScheduleMode::Constant => self.eta0,
            ScheduleMode::BurnInThenDecay => {
                if t < self.burn_in_iters {
                    self.eta0
                } else {
                    let b = self.burn_in_iters.max(1) as f64;
                    self.eta0 * b / (t as f64).max(b)
                }
            }
        }
    }
}

/// W ← η·W + (1−η)·s. A step size outside (0,1) is clamped just inside the
/// open interval and logged.
pub fn cg_step(w: &ParamBlock, s: &ParamBlock, eta: f64) -> ParamBlock {
    assert_eq!(w.len(), s.len(), "iterate and direction shape mismatch");
    let eta = if !(0.0..=1.0).contains(&eta) || eta == 0.0 || eta == 1.0 {
        let clamped = eta.clamp(1e-12, 1.0 - 1e-12);
        log::warn!("cg_step: step {eta} outside (0,1), clamped to {clamped}");
        clamped
    } else {
        eta
    };
    let mut out = w.clone();
    for (o, (wi, si)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(w.as_slice().iter().zip(s.as_slice().iter()))
    {
        *o = eta * wi + (1.0 - eta) * si;
    }
    out
}

/// W ← W − η·g.
pub fn sgd_step(w: &ParamBlock, g: &ParamBlock, eta: f64) -> ParamBlock {
    assert_eq!(w.len(), g.len(), "iterate and gradient shape mismatch");
    let mut out = w.clone();
    for (o, (wi, gi)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(w.as_slice().iter().zip(g.as_slice().iter()))
    {
        *o = wi - eta * gi;
    }
    out
}

/// Gradient step followed by Euclidean projection. Only the Frobenius, ℓ1
/// and ℓ∞ balls have practical projections; the other kinds are the reason
/// the conditional-gradient path exists and are rejected here.
pub fn pgd_step(
    w: &ParamBlock,
    g: &ParamBlock,
    eta: f64,
    spec: &ConstraintSpec,
) -> Result<ParamBlock, OptimError> {
    let moved = sgd_step(w, g, eta);
    let flat = moved.as_slice();
    let projected: Vec<f64> = match spec.kind {
        ConstraintKind::FrobeniusBall => {
            let m = Matrix::from_vec(1, flat.len(), flat.to_vec());
            project_frobenius(&m, spec.lambda).data().to_vec()
        }
        ConstraintKind::L1Ball => project_l1(flat, spec.lambda),
        ConstraintKind::LInfBall => project_linf(flat, spec.lambda),
        kind => {
            return Err(ConstraintError::Unsupported {
                kind,
                reason: "no practical projection exists for this ball; use the conditional-gradient loop, whose oracle only solves a linear subproblem",
            }
            .into())
        }
    };
    let mut out = moved.clone();
    out.as_mut_slice().copy_from_slice(&projected);
    Ok(out)
}

/// ⟨g, W − s⟩ with the oracle point s, clamped at zero against
/// floating-point noise. Zero exactly at constrained stationary points.
pub fn fw_gap(g: &ParamBlock, w: &ParamBlock, s: &ParamBlock) -> f64 {
    let diff: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(s.as_slice().iter())
        .map(|(a, b)| a - b)
        .collect();
    dot(g.as_slice(), &diff).unwrap().max(0.0)
}

/// One metrics row. The loss and train error describe the minibatch at the
/// pre-step iterate; the constraint value describes the post-step iterate.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub iter: usize,
    pub loss: f64,
    pub train_err: f64,
    pub test_err: Option<f64>,
    pub constraint_value: f64,
    pub eta: f64,
    pub wall_ms: f64,
    pub fw_gap: Option<f64>,
    pub dead_paths: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub records: Vec<MetricsRecord>,
}

impl RunMetrics {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,loss,train_err,test_err,constraint_value,eta,wall_ms")?;
        for r in &self.records {
            let test = r.test_err.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                r.iter, r.loss, r.train_err, test, r.constraint_value, r.eta, r.wall_ms
            )?;
        }
        Ok(())
    }
}

/// Knobs shared by every training loop.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate test error every this many iterations (0 = final only).
    pub eval_every: usize,
    pub schedule: StepSchedule,
}

struct Minibatcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Minibatcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: 0,
            batch: batch.max(1).min(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next minibatch of indices; reshuffles at each epoch boundary and
    /// keeps the last short batch.
    fn next(&mut self) -> Vec<usize> {
        if self.pos == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = if end == self.order.len() { 0 } else { end };
        out
    }
}

/// R(W) for the given kind, evaluated on the network's parameters.
pub fn constraint_value(
    spec: &ConstraintSpec,
    net: &FeedForwardNet,
    inc: Option<&IncidenceMatrix>,
) -> f64 {
    let params = net.params();
    let flat = params.as_slice();
    match spec.kind {
        ConstraintKind::FrobeniusBall => l2_norm(flat),
        ConstraintKind::L1Ball => flat.iter().map(|x| x.abs()).sum(),
        ConstraintKind::LInfBall => flat.iter().map(|x| x.abs()).fold(0.0, f64::max),
        ConstraintKind::GroupL1InfBall => net
            .weights()
            .iter()
            .map(|w| w.data().iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        ConstraintKind::NuclearBall => net
            .weights()
            .iter()
            .map(jacobi_nuclear_norm)
            .fold(0.0, f64::max),
        ConstraintKind::TVBall => {
            let owned;
            let a = match inc {
                Some(a) => a,
                None => {
                    owned = incidence_matrix(net);
                    &owned
                }
            };
            tv_norm(flat, a)
        }
        ConstraintKind::PathNormBall => path_norm(net),
    }
}

/// Dispatch the per-kind oracle on a full network gradient. Matrix-shaped
/// kinds act per layer (each layer gets its own λ ball); flat kinds act on
/// the whole parameter vector. TV gradients are pre-projected onto the row
/// space of the incidence matrix, where the oracle is bounded.
pub fn lmo_for_net(
    spec: &ConstraintSpec,
    g: &ParamBlock,
    inc: Option<&IncidenceMatrix>,
    seed: u64,
) -> Result<LmoResult, ConstraintError> {
    match spec.kind {
        ConstraintKind::FrobeniusBall => {
            let m = Matrix::from_vec(1, g.len(), g.as_slice().to_vec());
            Ok(reshape_like(lmo_frobenius(&m, spec.lambda), g))
        }
        ConstraintKind::L1Ball => Ok(reshape_like(lmo_l1(g.as_slice(), spec.lambda), g)),
        ConstraintKind::LInfBall => Ok(reshape_like(lmo_linf(g.as_slice(), spec.lambda), g)),
        ConstraintKind::GroupL1InfBall => Ok(lmo_group_l1_inf(&g.to_matrices(), spec.lambda)),
        ConstraintKind::NuclearBall => {
            let mut mats = Vec::with_capacity(g.num_layers());
            let mut objective = 0.0;
            let mut all_degenerate = true;
            for j in 0..g.num_layers() {
                let r = lmo_nuclear(&g.layer_matrix(j), spec.lambda, spec.tol, seed + j as u64)?;
                objective += r.objective;
                all_degenerate &= r.degenerate;
                mats.push(r.direction.layer_matrix(0));
            }
            Ok(LmoResult {
                direction: ParamBlock::from_matrices(&mats),
                objective,
                degenerate: all_degenerate,
                dead_paths: 0,
            })
        }
        ConstraintKind::TVBall => {
            let a = inc.expect("TV dispatch needs the incidence matrix");
            let (y, _) = node_potentials(g.as_slice(), a);
            let mut projected = ParamBlock::zeros_like(g);
            projected
                .as_mut_slice()
                .copy_from_slice(&a.apply_transpose(&y));
            lmo_tv(&projected, a, spec.lambda, spec.eps)
        }
        ConstraintKind::PathNormBall => Err(ConstraintError::Unsupported {
            kind: ConstraintKind::PathNormBall,
            reason: "the joint path-norm ball is unbounded; use the layer-wise path_cg loop",
        }),
    }
}

fn reshape_like(mut r: LmoResult, like: &ParamBlock) -> LmoResult {
    let mut direction = ParamBlock::zeros_like(like);
    direction
        .as_mut_slice()
        .copy_from_slice(r.direction.as_slice());
    r.direction = direction;
    r
}

/// Conditional-gradient training: per minibatch, a linear minimization
/// over the constraint set followed by W ← η·W + (1−η)·s. Every iterate
/// stays feasible because the feasible set is convex.
pub fn train_cg(
    net0: &FeedForwardNet,
    train: &Batch,
    test: &Batch,
    spec: &ConstraintSpec,
    opts: &TrainOptions,
) -> Result<(FeedForwardNet, RunMetrics), OptimError> {
    let inc = (spec.kind == ConstraintKind::TVBall).then(|| incidence_matrix(net0));
    let r0 = constraint_value(spec, net0, inc.as_ref());
    if r0 > spec.lambda * (1.0 + 1e-9) {
        return Err(OptimError::InfeasibleStart {
            value: r0,
            lambda: spec.lambda,
        });
    }
    let mut net = net0.clone();
    let mut metrics = RunMetrics::default();
    let mut batcher = Minibatcher::new(train.len(), opts.batch_size, opts.seed);
    let clock = Instant::now();
    for t in 0..opts.iters {
        let batch = train.select(&batcher.next());
        let (loss, grads) = loss_and_gradient(&net, &batch)?;
        let train_err = classification_error(&net, &batch)?;
        let g = ParamBlock::from_matrices(&grads);
        let s = lmo_for_net(spec, &g, inc.as_ref(), opts.seed.wrapping_add(t as u64))?;
        let w = net.params();
        let gap = fw_gap(&g, &w, &s.direction);
        let eta = opts.schedule.eta(t);
        net.set_params(&cg_step(&w, &s.direction, eta));
        metrics.records.push(MetricsRecord {
            iter: t,
            loss,
            train_err,
            test_err: eval_test(&net, test, t, opts)?,
            constraint_value: constraint_value(spec, &net, inc.as_ref()),
            eta,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            fw_gap: Some(gap),
            dead_paths: s.dead_paths,
        });
    }
    Ok((net, metrics))
}

/// Layer-wise conditional gradient under the path-norm ball. Within one
/// iteration the layers are updated sequentially, input side first; the γ
/// table is recomputed from the partially updated weights before each
/// layer's oracle call, so the per-layer ball ‖Γ W_j‖₂ ≤ λ always reflects
/// the frozen value of the other layers and feasibility is preserved
/// exactly. The batch gradient is computed once per iteration.
pub fn path_cg(
    net0: &FeedForwardNet,
    train: &Batch,
    test: &Batch,
    lambda: f64,
    opts: &TrainOptions,
) -> Result<(FeedForwardNet, RunMetrics), OptimError> {
    assert!(lambda > 0.0, "lambda must be positive");
    let pn0 = path_norm(net0);
    if pn0 > lambda * (1.0 + 1e-9) {
        return Err(OptimError::InfeasibleStart {
            value: pn0,
            lambda,
        });
    }
    let mut net = net0.clone();
    let mut metrics = RunMetrics::default();
    let mut batcher = Minibatcher::new(train.len(), opts.batch_size, opts.seed);
    let clock = Instant::now();
    for t in 0..opts.iters {
        let batch = train.select(&batcher.next());
        let (loss, grads) = loss_and_gradient(&net, &batch)?;
        let train_err = classification_error(&net, &batch)?;
        let eta = opts.schedule.eta(t);
        let mut dead = 0usize;
        let mut gap_sum = 0.0;
        for j in 0..net.depth() {
            let gammas = compute_gammas(&net);
            let gamma_sqrt: Vec<f64> = gammas.gamma_edge(j).iter().map(|g| g.sqrt()).collect();
            let s = lmo_pathnorm_layer(grads[j].data(), &gamma_sqrt, lambda);
            dead += s.dead_paths;
            let w_j = ParamBlock::from_matrix(&net.weights()[j]);
            let g_j = ParamBlock::from_matrix(&grads[j]);
            gap_sum += fw_gap(&g_j, &w_j, &reshape_like(s.clone(), &w_j).direction);
            let stepped = cg_step(&w_j, &reshape_like(s, &w_j).direction, eta);
            net.weights_mut()[j]
                .data_mut()
                .copy_from_slice(stepped.as_slice());
        }
        metrics.records.push(MetricsRecord {
            iter: t,
            loss,
            train_err,
            test_err: eval_test(&net, test, t, opts)?,
            constraint_value: path_norm(&net),
            eta,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            fw_gap: Some(gap_sum),
            dead_paths: dead,
        });
    }
    Ok((net, metrics))
}

/// Plain SGD baseline. No constraint is enforced; when `log_spec` is
/// given, R(W_t) is still recorded so constrained and unconstrained runs
/// can be compared on the same axis.
pub fn train_sgd(
    net0: &FeedForwardNet,
    train: &Batch,
    test: &Batch,
    log_spec: Option<&ConstraintSpec>,
    opts: &TrainOptions,
) -> Result<(FeedForwardNet, RunMetrics), OptimError> {
    let inc = log_spec
        .filter(|s| s.kind == ConstraintKind::TVBall)
        .map(|_| incidence_matrix(net0));
    let mut net = net0.clone();
    let mut metrics = RunMetrics::default();
    let mut batcher = Minibatcher::new(train.len(), opts.batch_size, opts.seed);
    let clock = Instant::now();
    for t in 0..opts.iters {
        let batch = train.select(&batcher.next());
        let (loss, grads) = loss_and_gradient(&net, &batch)?;
        let train_err = classification_error(&net, &batch)?;
        let g = ParamBlock::from_matrices(&grads);
        let eta = opts.schedule.learning_rate(t);
        net.set_params(&sgd_step(&net.params(), &g, eta));
        metrics.records.push(MetricsRecord {
            iter: t,
            loss,
            train_err,
            test_err: eval_test(&net, test, t, opts)?,
            constraint_value: log_spec
                .map(|s| constraint_value(s, &net, inc.as_ref()))
                .unwrap_or(f64::NAN),
            eta,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            fw_gap: None,
            dead_paths: 0,
        });
    }
    Ok((net, metrics))
}

/// Projected gradient training for the kinds that admit a projection.
pub fn train_pgd(
    net0: &FeedForwardNet,
    train: &Batch,
    test: &Batch,
    spec: &ConstraintSpec,
    opts: &TrainOptions,
) -> Result<(FeedForwardNet, RunMetrics), OptimError> {
    if !spec.kind.has_projection() {
        return Err(ConstraintError::Unsupported {
            kind: spec.kind,
            reason: "no practical projection exists for this ball; use the conditional-gradient loop, whose oracle only solves a linear subproblem",
        }
        .into());
    }
    let mut net = net0.clone();
    let mut metrics = RunMetrics::default();
    let mut batcher = Minibatcher::new(train.len(), opts.batch_size, opts.seed);
    let clock = Instant::now();
    for t in 0..opts.iters {
        let batch = train.select(&batcher.next());
        let (loss, grads) = loss_and_gradient(&net, &batch)?;
        let train_err = classification_error(&net, &batch)?;
        let g = ParamBlock::from_matrices(&grads);
        let eta = opts.schedule.learning_rate(t);
        let stepped = pgd_step(&net.params(), &g, eta, spec)?;
        net.set_params(&stepped);
        metrics.records.push(MetricsRecord {
            iter: t,
            loss,
            train_err,
            test_err: eval_test(&net, test, t, opts)?,
            constraint_value: constraint_value(spec, &net, None),
            eta,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            fw_gap: None,
            dead_paths: 0,
        });
    }
    Ok((net, metrics))
}

fn eval_test(
    net: &FeedForwardNet,
    test: &Batch,
    t: usize,
    opts: &TrainOptions,
) -> Result<Option<f64>, OptimError> {
    let due = (opts.eval_every > 0 && (t + 1) % opts.eval_every == 0) || t + 1 == opts.iters;
    if due && !test.is_empty() {
        Ok(Some(classification_error(net, test)?))
    } else {
        Ok(None)
    }
}
