//! Total-variation machinery for networks: the TV norm ‖AW‖₁, the
//! unit-capacity transshipment feasibility test, the dual linear program
//! solved by projected subgradient, and the TV-ball linear minimization
//! oracle.
//!
//! Conventions. `A` is the node-edge incidence matrix (+1 source, −1
//! target); edge vectors follow the canonical edge order. The scaling LP
//! asks for the largest β with Af = βg over f ∈ [0,1]^E; its dual on node
//! potentials v reads
//!
//!   minimize Σ_e max(0, (Aᵀv)_e)   subject to   gᵀv = 1,
//!
//! whose optimum equals β by strong duality. The LMO over {‖AW‖₁ ≤ λ} is
//! recovered from the dual multipliers of its own equality system: node
//! potentials y with Aᵀy = g. Centering y per component, the optimum value
//! is −λ·max_C (max y − min y)/2 and an optimal direction routes λ/2 units
//! from the minimum-potential node to the maximum-potential node.

use crate::constraints::maxflow::Dinic;
use crate::constraints::{ConstraintError, LmoResult};
use crate::linalg::{dot, solve_dense, Matrix, ParamBlock};
use crate::network::IncidenceMatrix;

/// ‖AW‖₁ — the anisotropic TV norm of edge values `w`.
pub fn tv_norm(w: &[f64], a: &IncidenceMatrix) -> f64 {
    a.apply(w).iter().map(|x| x.abs()).sum()
}

/// Does some f ∈ [0,1]^E satisfy Af = βg? Decided by max-flow on the
/// auxiliary network: a source feeds nodes with positive demand βg_v, a
/// sink drains the negative ones, original edges keep unit capacity.
pub fn tv_feasibility(beta: f64, g: &[f64], a: &IncidenceMatrix) -> bool {
    assert!(beta >= 0.0, "beta must be nonnegative");
    assert_eq!(g.len(), a.num_nodes(), "demand vector length mismatch");
    if beta == 0.0 {
        return true;
    }
    let n = a.num_nodes();
    let total: f64 = g.iter().sum();
    let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    if (beta * total).abs() > 1e-9 * beta * scale {
        return false; // demands do not conserve flow
    }
    let mut dinic = Dinic::new(n + 2);
    let (source, sink) = (n, n + 1);
    let mut supply = 0.0;
    for (v, &gv) in g.iter().enumerate() {
        let d = beta * gv;
        if d > 0.0 {
            dinic.add_edge(source, v, d);
            supply += d;
        } else if d < 0.0 {
            dinic.add_edge(v, sink, -d);
        }
    }
    for &(s, t) in a.edges() {
        dinic.add_edge(s, t, 1.0);
    }
    let flow = dinic.max_flow(source, sink);
    flow >= supply - 1e-9 * supply.max(1.0)
}

/// Output of [`tv_dual_solve`]: near-optimal node multipliers on the
/// hyperplane gᵀv = 1, the attained objective (≈ the scaling-LP optimum β),
/// and the subgradient iteration count.
#[derive(Debug, Clone)]
pub struct TvDualSolution {
    pub multipliers: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn dual_objective(v: &[f64], a: &IncidenceMatrix) -> f64 {
    a.apply_transpose(v)
        .iter()
        .map(|d| d.max(0.0))
        .sum()
}

/// Largest β with Af = βg feasible, found by bisection on the feasibility
/// test. `tol` is absolute.
fn beta_star_by_bisection(g: &[f64], a: &IncidenceMatrix, tol: f64) -> f64 {
    // Net outflow of v is capped by its out-degree, net inflow by its
    // in-degree; that bounds every feasible β.
    let mut outdeg = vec![0.0f64; a.num_nodes()];
    let mut indeg = vec![0.0f64; a.num_nodes()];
    for &(s, t) in a.edges() {
        outdeg[s] += 1.0;
        indeg[t] += 1.0;
    }
    let mut hi = f64::INFINITY;
    for (v, &gv) in g.iter().enumerate() {
        if gv > 0.0 {
            hi = hi.min(outdeg[v] / gv);
        } else if gv < 0.0 {
            hi = hi.min(indeg[v] / -gv);
        }
    }
    debug_assert!(hi.is_finite());
    if hi <= 0.0 || !tv_feasibility(tol.min(hi * 0.5).max(1e-15), g, a) {
        // Even tiny multiples are unroutable.
        return 0.0;
    }
    if tv_feasibility(hi, g, a) {
        return hi;
    }
    let (mut lo, mut hi) = (0.0f64, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if tv_feasibility(mid, g, a) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

const DUAL_MAX_ITERS: usize = 500_000;

/// Solve the dual LP min Σ_e max(0,(Aᵀv)_e) s.t. gᵀv = 1 by projected
/// subgradient with Polyak steps and iterate averaging; the step target
/// comes from bisecting the primal feasibility test. The returned value
/// matches the scaling-LP optimum within `eps`.
pub fn tv_dual_solve(
    g: &[f64],
    a: &IncidenceMatrix,
    eps: f64,
) -> Result<TvDualSolution, ConstraintError> {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(g.len(), a.num_nodes(), "demand vector length mismatch");
    let g_norm_sq = dot(g, g).unwrap();
    if g_norm_sq == 0.0 {
        return Err(ConstraintError::UnboundedDual);
    }
    let target = beta_star_by_bisection(g, a, 0.1 * eps);

    let mut v: Vec<f64> = g.iter().map(|x| x / g_norm_sq).collect();
    let mut best = dual_objective(&v, a);
    let mut best_v = v.clone();
    let mut avg = vec![0.0f64; v.len()];
    let mut iterations = 0usize;
    while best > target + 0.5 * eps && iterations < DUAL_MAX_ITERS {
        iterations += 1;
        let drops = a.apply_transpose(&v);
        // Subgradient of Σ max(0, ·): sum of incidence columns with a
        // strictly positive drop.
        let active: Vec<f64> = drops.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut h = a.apply(&active);
        let gh: f64 = dot(g, &h).unwrap();
        for (hi, gi) in h.iter_mut().zip(g.iter()) {
            *hi -= gh / g_norm_sq * gi;
        }
        let h_sq: f64 = dot(&h, &h).unwrap();
        let f_cur = dual_objective(&v, a);
        if h_sq <= 1e-30 {
            break; // stationary on the hyperplane
        }
        let step = (f_cur - target).max(0.25 * eps) / h_sq;
        for (vi, hi) in v.iter_mut().zip(h.iter()) {
            *vi -= step * hi;
        }
        // Numerical re-projection onto gᵀv = 1.
        let gv: f64 = dot(g, &v).unwrap();
        for (vi, gi) in v.iter_mut().zip(g.iter()) {
            *vi += (1.0 - gv) / g_norm_sq * gi;
        }
        let f_new = dual_objective(&v, a);
        if f_new < best {
            best = f_new;
            best_v.copy_from_slice(&v);
        }
        for (ai, vi) in avg.iter_mut().zip(v.iter()) {
            *ai += vi;
        }
        if iterations % 64 == 0 {
            let mut mean: Vec<f64> = avg.iter().map(|x| x / iterations as f64).collect();
            let gm: f64 = dot(g, &mean).unwrap();
            for (mi, gi) in mean.iter_mut().zip(g.iter()) {
                *mi += (1.0 - gm) / g_norm_sq * gi;
            }
            let f_mean = dual_objective(&mean, a);
            if f_mean < best {
                best = f_mean;
                best_v.copy_from_slice(&mean);
            }
        }
    }
    if best > target + eps {
        log::warn!(
            "tv_dual_solve stopped at {best} (target {target}) after {iterations} iterations"
        );
    }
    Ok(TvDualSolution {
        multipliers: best_v,
        value: best,
        iterations,
    })
}

/// Least-squares node potentials y with Aᵀy = g, one node per component
/// pinned to zero. Returns (y, ‖Aᵀy − g‖_∞); a large residual means g has a
/// circulation (kernel) component and the potentials do not exist.
pub fn node_potentials(g: &[f64], a: &IncidenceMatrix) -> (Vec<f64>, f64) {
    assert_eq!(g.len(), a.num_edges(), "edge vector length mismatch");
    let n = a.num_nodes();
    let comps = a.components();
    let ncomp = comps.iter().max().map_or(0, |m| m + 1);
    let mut pinned = vec![false; n];
    let mut seen = vec![false; ncomp];
    for v in 0..n {
        if !seen[comps[v]] {
            seen[comps[v]] = true;
            pinned[v] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| !pinned[v]).collect();
    let index_of: Vec<Option<usize>> = {
        let mut m = vec![None; n];
        for (i, &v) in free.iter().enumerate() {
            m[v] = Some(i);
        }
        m
    };
    // Graph Laplacian restricted to the free nodes.
    let mut lap = Matrix::zeros(free.len(), free.len());
    for &(s, t) in a.edges() {
        if let Some(i) = index_of[s] {
            lap[(i, i)] += 1.0;
        }
        if let Some(j) = index_of[t] {
            lap[(j, j)] += 1.0;
        }
        if let (Some(i), Some(j)) = (index_of[s], index_of[t]) {
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
        }
    }
    let rhs_full = a.apply(g);
    let rhs: Vec<f64> = free.iter().map(|&v| rhs_full[v]).collect();
    let mut y = vec![0.0; n];
    if !free.is_empty() {
        let sol = solve_dense(&lap, &rhs).expect("pinned Laplacian is nonsingular");
        for (&v, x) in free.iter().zip(sol) {
            y[v] = x;
        }
    }
    let resid = a
        .apply_transpose(&y)
        .iter()
        .zip(g.iter())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    (y, resid)
}

/// Undirected BFS path between two nodes; each step is (edge index,
/// +1 forward / −1 backward).
fn bfs_path(a: &IncidenceMatrix, from: usize, to: usize) -> Vec<(usize, f64)> {
    let n = a.num_nodes();
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for (e, &(s, t)) in a.edges().iter().enumerate() {
        adj[s].push((t, e, 1.0));
        adj[t].push((s, e, -1.0));
    }
    let mut prev: Vec<Option<(usize, usize, f64)>> = vec![None; n];
    let mut visited = vec![false; n];
    visited[from] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(w, e, sign) in &adj[u] {
            if !visited[w] {
                visited[w] = true;
                prev[w] = Some((u, e, sign));
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = to;
    while cur != from {
        let (p, e, sign) = prev[cur].expect("endpoints lie in one component");
        path.push((e, sign));
        cur = p;
    }
    path.reverse();
    path
}

/// Linear minimization over the TV ball {W : ‖AW‖₁ ≤ λ}.
///
/// The gradient must lie in the row space of A; a circulation component
/// makes the problem unbounded and is rejected. The direction routes λ/2
/// units between the extreme-potential nodes, so ‖AW‖₁ = λ exactly and the
/// objective attains the LP optimum −λ·max_C (max y − min y)/2.
pub fn lmo_tv(
    g: &ParamBlock,
    a: &IncidenceMatrix,
    lambda: f64,
    eps: f64,
) -> Result<LmoResult, ConstraintError> {
    assert!(lambda > 0.0, "lambda must be positive");
    assert!(eps > 0.0, "eps must be positive");
    if g.len() != a.num_edges() {
        return Err(ConstraintError::DimensionMismatch(format!(
            "gradient has {} entries but the graph has {} edges",
            g.len(),
            a.num_edges()
        )));
    }
    let g_flat = g.as_slice();
    let g_max = g_flat.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if g_max == 0.0 {
        return Ok(LmoResult::degenerate(ParamBlock::zeros_like(g)));
    }
    let (y, resid) = node_potentials(g_flat, a);
    if resid > 1e-7 * g_max.max(1.0) {
        return Err(ConstraintError::KernelComponent { residual: resid });
    }
    let comps = a.components();
    let ncomp = comps.iter().max().map_or(0, |m| m + 1);
    let mut lo = vec![(f64::INFINITY, 0usize); ncomp];
    let mut hi = vec![(f64::NEG_INFINITY, 0usize); ncomp];
    for (v, &c) in comps.iter().enumerate() {
        if y[v] < lo[c].0 {
            lo[c] = (y[v], v);
        }
        if y[v] > hi[c].0 {
            hi[c] = (y[v], v);
        }
    }
    let mut best_comp = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for c in 0..ncomp {
        let spread = hi[c].0 - lo[c].0;
        if spread > best_spread {
            best_spread = spread;
            best_comp = c;
        }
    }
    if best_spread <= 1e-15 * g_max.max(1.0) {
        return Ok(LmoResult::degenerate(ParamBlock::zeros_like(g)));
    }
    let (_, node_min) = lo[best_comp];
    let (_, node_max) = hi[best_comp];
    let mut direction = ParamBlock::zeros_like(g);
    {
        let w = direction.as_mut_slice();
        for (e, sign) in bfs_path(a, node_min, node_max) {
            w[e] += sign * lambda / 2.0;
        }
    }
    let objective = dot(g_flat, direction.as_slice()).unwrap();
    Ok(LmoResult {
        direction,
        objective,
        degenerate: false,
        dead_paths: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line3() -> IncidenceMatrix {
        IncidenceMatrix::from_edges(3, vec![(0, 1), (1, 2)])
    }

    #[test]
    fn tv_norm_line_graph() {
        let a = line3();
        assert_eq!(tv_norm(&[1.0, 1.0], &a), 2.0);
        assert_eq!(tv_norm(&[0.0, 0.0], &a), 0.0);
    }

    #[test]
    fn tv_norm_positive_homogeneity() {
        let a = IncidenceMatrix::from_edges(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let w = [0.3, -1.1, 0.7, 0.2];
        let base = tv_norm(&w, &a);
        for c in [0.0, 0.5, 2.0, 7.5] {
            let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
            assert!((tv_norm(&scaled, &a) - c * base).abs() < 1e-12);
        }
    }

    #[test]
    fn feasibility_zero_beta() {
        let a = line3();
        assert!(tv_feasibility(0.0, &[5.0, -1.0, 3.0], &a));
    }

    #[test]
    fn feasibility_unit_chain() {
        let a = line3();
        // one unit in at node 0, out at node 2: route along both edges
        assert!(tv_feasibility(1.0, &[1.0, 0.0, -1.0], &a));
        assert!(!tv_feasibility(1.5, &[1.0, 0.0, -1.0], &a));
    }

    #[test]
    fn feasibility_rejects_unconserved_demand() {
        let a = line3();
        assert!(!tv_feasibility(1.0, &[1.0, 0.0, 0.0], &a));
    }

    #[test]
    fn dual_solve_single_edge() {
        let a = IncidenceMatrix::from_edges(2, vec![(0, 1)]);
        let sol = tv_dual_solve(&[1.0, -1.0], &a, 1e-8).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-8, "beta* should be 1, got {}", sol.value);
        let gv = sol.multipliers[0] - sol.multipliers[1];
        assert!((gv - 1.0).abs() < 1e-9, "constraint gᵀv = 1 violated");
    }

    #[test]
    fn dual_solve_scaling_law() {
        let a = line3();
        let base = tv_dual_solve(&[1.0, 0.0, -1.0], &a, 1e-7).unwrap();
        let scaled = tv_dual_solve(&[2.0, 0.0, -2.0], &a, 1e-7).unwrap();
        assert!((scaled.value - base.value / 2.0).abs() < 1e-6);
    }

    #[test]
    fn dual_solve_zero_demand_is_unbounded() {
        let a = line3();
        assert!(matches!(
            tv_dual_solve(&[0.0, 0.0, 0.0], &a, 1e-6),
            Err(ConstraintError::UnboundedDual)
        ));
    }

    #[test]
    fn potentials_recover_row_space_gradients() {
        let a = IncidenceMatrix::from_edges(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]);
        let y_true = [0.5, -1.0, 2.0, 0.0];
        let g = a.apply_transpose(&y_true);
        let (_, resid) = node_potentials(&g, &a);
        assert!(resid < 1e-9);
    }

    #[test]
    fn lmo_tv_rejects_circulations() {
        // cycle 0→1→2→0: the all-ones edge vector is a circulation
        let a = IncidenceMatrix::from_edges(3, vec![(0, 1), (1, 2), (2, 0)]);
        let g = ParamBlock::from_flat(vec![1.0, 1.0, 1.0]);
        assert!(matches!(
            lmo_tv(&g, &a, 1.0, 1e-6),
            Err(ConstraintError::KernelComponent { .. })
        ));
    }

    #[test]
    fn lmo_tv_zero_gradient_is_degenerate() {
        let a = line3();
        let g = ParamBlock::from_flat(vec![0.0, 0.0]);
        let r = lmo_tv(&g, &a, 1.0, 1e-6).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn lmo_tv_line_graph_exact() {
        let a = line3();
        // potentials y = (1, 0, -1) give g = Aᵀy = (1, 1)
        let g = ParamBlock::from_flat(vec![1.0, 1.0]);
        let lambda = 2.0;
        let r = lmo_tv(&g, &a, lambda, 1e-8).unwrap();
        assert!(tv_norm(r.direction.as_slice(), &a) <= lambda * (1.0 + 1e-9));
        // optimum is -λ·(max y - min y)/2 = -2
        assert!((r.objective + 2.0).abs() < 1e-10, "objective {}", r.objective);
    }

    #[test]
    fn lmo_tv_lambda_homogeneity() {
        let a = IncidenceMatrix::from_edges(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let y = [1.0, -0.3, 0.4, -2.0];
        let g = ParamBlock::from_flat(a.apply_transpose(&y));
        let r1 = lmo_tv(&g, &a, 1.0, 1e-8).unwrap();
        let r2 = lmo_tv(&g, &a, 2.0, 1e-8).unwrap();
        assert!((r2.objective - 2.0 * r1.objective).abs() < 1e-10);
    }
}
