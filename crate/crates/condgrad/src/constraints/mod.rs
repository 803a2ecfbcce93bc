//! The constraint catalogue: for every feasible set {W : R(W) ≤ λ} a linear
//! minimization oracle, and a Euclidean projection where one is practical.
//!
//! All oracles are pure functions. A zero gradient makes every feasible
//! point optimal; oracles then return a zero direction with the
//! `degenerate` flag set instead of erroring, so training loops can carry
//! on. Argmax ties break toward the lowest index throughout.

mod maxflow;
mod tv;

pub use tv::{lmo_tv, node_potentials, tv_dual_solve, tv_feasibility, tv_norm, TvDualSolution};

use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{dot, l2_norm, power_method, LinalgError, Matrix, ParamBlock};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error(transparent)]
    PowerMethod(#[from] LinalgError),
    #[error("{kind:?}: {reason}")]
    Unsupported {
        kind: ConstraintKind,
        reason: &'static str,
    },
    #[error("gradient has a circulation component (residual {residual:.3e}); the oracle is unbounded along it — project the gradient onto the row space of the incidence matrix first")]
    KernelComponent { residual: f64 },
    #[error("scaling dual is unbounded: the zero demand admits every multiple")]
    UnboundedDual,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// The feasible-set families the library knows how to handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    FrobeniusBall,
    NuclearBall,
    L1Ball,
    LInfBall,
    GroupL1InfBall,
    TVBall,
    PathNormBall,
}

impl ConstraintKind {
    pub fn has_projection(self) -> bool {
        matches!(
            self,
            ConstraintKind::FrobeniusBall | ConstraintKind::L1Ball | ConstraintKind::LInfBall
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::FrobeniusBall => "FrobeniusBall",
            ConstraintKind::NuclearBall => "NuclearBall",
            ConstraintKind::L1Ball => "L1Ball",
            ConstraintKind::LInfBall => "LInfBall",
            ConstraintKind::GroupL1InfBall => "GroupL1InfBall",
            ConstraintKind::TVBall => "TVBall",
            ConstraintKind::PathNormBall => "PathNormBall",
        }
    }
}

impl FromStr for ConstraintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "FrobeniusBall" | "frobenius" => Ok(ConstraintKind::FrobeniusBall),
            "NuclearBall" | "nuclear" => Ok(ConstraintKind::NuclearBall),
            "L1Ball" | "l1" => Ok(ConstraintKind::L1Ball),
            "LInfBall" | "linf" => Ok(ConstraintKind::LInfBall),
            "GroupL1InfBall" | "group" => Ok(ConstraintKind::GroupL1InfBall),
            "TVBall" | "tv" => Ok(ConstraintKind::TVBall),
            "PathNormBall" | "pathnorm" => Ok(ConstraintKind::PathNormBall),
            other => Err(format!("unknown constraint kind '{other}'")),
        }
    }
}

/// A feasible set R(W) ≤ λ plus the accuracy knobs of its oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub lambda: f64,
    /// Accuracy for iterative oracles (TV dual solve).
    pub eps: f64,
    /// Power-method tolerance (nuclear oracle).
    pub tol: f64,
}

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind, lambda: f64) -> Self {
        assert!(lambda > 0.0, "lambda must be positive");
        Self {
            kind,
            lambda,
            eps: 1e-6,
            tol: 1e-10,
        }
    }
}

/// Output of a linear minimization oracle: a feasible direction and the
/// attained inner product ⟨g, direction⟩.
#[derive(Debug, Clone)]
pub struct LmoResult {
    pub direction: ParamBlock,
    pub objective: f64,
    /// The gradient was zero (every feasible point minimizes); the
    /// direction returned is 0.
    pub degenerate: bool,
    /// Coordinates dropped because their γ entry vanished while the
    /// gradient there did not.
    pub dead_paths: usize,
}

impl LmoResult {
    pub fn degenerate(direction: ParamBlock) -> Self {
        Self {
            direction,
            objective: 0.0,
            degenerate: true,
            dead_paths: 0,
        }
    }
}

/// s = −λ·g/‖g‖_F, the Frobenius-ball oracle.
pub fn lmo_frobenius(g: &Matrix, lambda: f64) -> LmoResult {
    assert!(lambda > 0.0);
    let norm = l2_norm(g.data());
    if norm == 0.0 {
        return LmoResult::degenerate(ParamBlock::from_matrix(&Matrix::zeros(
            g.rows(),
            g.cols(),
        )));
    }
    let direction = g.scale(-lambda / norm);
    LmoResult {
        direction: ParamBlock::from_matrix(&direction),
        objective: -lambda * norm,
        degenerate: false,
        dead_paths: 0,
    }
}

/// Radial projection onto {‖z‖_F ≤ λ}; interior points pass through.
pub fn project_frobenius(z: &Matrix, lambda: f64) -> Matrix {
    assert!(lambda > 0.0);
    let norm = l2_norm(z.data());
    if norm <= lambda {
        z.clone()
    } else {
        z.scale(lambda / norm)
    }
}

/// Rank-1 nuclear-ball oracle −λ·u vᵀ built from the top singular pair of
/// the gradient; needs only a power iteration, never a full decomposition.
pub fn lmo_nuclear(
    g: &Matrix,
    lambda: f64,
    tol: f64,
    seed: u64,
) -> Result<LmoResult, ConstraintError> {
    assert!(lambda > 0.0);
    if g.is_zero() {
        return Ok(LmoResult::degenerate(ParamBlock::from_matrix(
            &Matrix::zeros(g.rows(), g.cols()),
        )));
    }
    let triple = power_method(g, tol, 500_000, seed)?;
    let direction = Matrix::outer(&triple.u, &triple.v, -lambda);
    let objective = dot(g.data(), direction.data()).unwrap();
    Ok(LmoResult {
        direction: ParamBlock::from_matrix(&direction),
        objective,
        degenerate: false,
        dead_paths: 0,
    })
}

fn argmax_abs(g: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in g.iter().enumerate() {
        match best {
            Some(b) if x.abs() <= g[b].abs() => {}
            _ if x != 0.0 => best = Some(i),
            _ => {}
        }
    }
    best
}

/// ℓ1-ball oracle: −λ·sign(g_{j*})·e_{j*} at the max-magnitude coordinate.
pub fn lmo_l1(g: &[f64], lambda: f64) -> LmoResult {
    assert!(lambda > 0.0);
    match argmax_abs(g) {
        None => LmoResult::degenerate(ParamBlock::from_flat(vec![0.0; g.len()])),
        Some(j) => {
            let mut dir = vec![0.0; g.len()];
            dir[j] = -lambda * g[j].signum();
            LmoResult {
                direction: ParamBlock::from_flat(dir),
                objective: -lambda * g[j].abs(),
                degenerate: false,
                dead_paths: 0,
            }
        }
    }
}

/// Euclidean projection onto {‖w‖₁ ≤ λ}: soft-threshold with the pivot
/// found by sorting the magnitudes (O(d log d)).
pub fn project_l1(z: &[f64], lambda: f64) -> Vec<f64> {
    assert!(lambda > 0.0);
    let l1: f64 = z.iter().map(|x| x.abs()).sum();
    if l1 <= lambda {
        return z.to_vec();
    }
    let mut mags: Vec<f64> = z.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - lambda) / (k + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    z.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// ℓ∞-ball oracle: +λ wherever the gradient is negative, −λ otherwise.
pub fn lmo_linf(g: &[f64], lambda: f64) -> LmoResult {
    assert!(lambda > 0.0);
    let dir: Vec<f64> = g
        .iter()
        .map(|&x| if x < 0.0 { lambda } else { -lambda })
        .collect();
    let objective = -lambda * g.iter().map(|x| x.abs()).sum::<f64>();
    LmoResult {
        direction: ParamBlock::from_flat(dir),
        objective,
        degenerate: g.iter().all(|&x| x == 0.0),
        dead_paths: 0,
    }
}

/// Coordinate-wise clamp to [−λ, λ] (gradient clipping).
pub fn project_linf(z: &[f64], lambda: f64) -> Vec<f64> {
    assert!(lambda > 0.0);
    z.iter().map(|&x| x.clamp(-lambda, lambda)).collect()
}

/// Oracle for {max_i ‖W_i‖₁ ≤ λ}: the objective decouples, so each layer
/// independently places −λ·sign at its max-magnitude entry — one updated
/// element per layer. All-zero layers contribute a zero block.
pub fn lmo_group_l1_inf(g: &[Matrix], lambda: f64) -> LmoResult {
    assert!(lambda > 0.0);
    let mut mats = Vec::with_capacity(g.len());
    let mut objective = 0.0;
    let mut any = false;
    for gi in g {
        let mut di = Matrix::zeros(gi.rows(), gi.cols());
        if let Some(j) = argmax_abs(gi.data()) {
            di.data_mut()[j] = -lambda * gi.data()[j].signum();
            objective -= lambda * gi.data()[j].abs();
            any = true;
        }
        mats.push(di);
    }
    LmoResult {
        direction: ParamBlock::from_matrices(&mats),
        objective,
        degenerate: !any,
        dead_paths: 0,
    }
}

/// Oracle for {‖ΓW‖₂ ≤ λ} with diagonal Γ: substituting u = ΓW reduces it
/// to a Euclidean-ball oracle, giving −λ·Γ⁻²g/‖Γ⁻¹g‖₂. Coordinates with a
/// zero γ entry but nonzero gradient are unbounded; they are zeroed and
/// counted in `dead_paths`.
pub fn lmo_pathnorm_layer(g: &[f64], gamma: &[f64], lambda: f64) -> LmoResult {
    assert!(lambda > 0.0);
    assert_eq!(
        g.len(),
        gamma.len(),
        "gamma diagonal must match the gradient length"
    );
    let mut dead = 0usize;
    // Scaled evaluation of Γ⁻¹g to postpone overflow on tiny γ entries.
    let mut ratio_max = 0.0f64;
    for (&ge, &ga) in g.iter().zip(gamma.iter()) {
        if ga > 0.0 {
            ratio_max = ratio_max.max(ge.abs() / ga);
        } else if ge != 0.0 {
            dead += 1;
        }
    }
    if ratio_max == 0.0 {
        let mut r = LmoResult::degenerate(ParamBlock::from_flat(vec![0.0; g.len()]));
        r.dead_paths = dead;
        return r;
    }
    let scaled: Vec<f64> = g
        .iter()
        .zip(gamma.iter())
        .map(|(&ge, &ga)| if ga > 0.0 { ge / ga / ratio_max } else { 0.0 })
        .collect();
    let scaled_norm = l2_norm(&scaled);
    let dir: Vec<f64> = scaled
        .iter()
        .zip(gamma.iter())
        .map(|(&u, &ga)| {
            if ga > 0.0 {
                -lambda * u / (ga * scaled_norm)
            } else {
                0.0
            }
        })
        .collect();
    let objective = -lambda * ratio_max * scaled_norm;
    LmoResult {
        direction: ParamBlock::from_flat(dir),
        objective,
        degenerate: false,
        dead_paths: dead,
    }
}
