//! Oracle-equivalence suites: every closed-form oracle is replayed against
//! an independent brute-force computation and the worst deviation is
//! reported. These back the `check-lmo`, `check-pathnorm` and `gap-bench`
//! commands and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{
    lmo_group_l1_inf, lmo_l1, lmo_linf, lmo_nuclear, lmo_pathnorm_layer, tv_dual_solve,
    ConstraintKind, LmoResult,
};
use crate::harness::oracle::{
    brute_force_lmo, brute_force_lp, brute_force_path_norm, ellipsoid_lmo_pgd,
    jacobi_eigenvalues, jacobi_sigma_max, LpProblem,
};
use crate::linalg::{dot, l2_norm, Matrix, ParamBlock};
use crate::network::{
    compute_gammas, forward, path_norm, rescale_node, Batch, FeedForwardNet, IncidenceMatrix,
};

/// Deliberate defects that the suites must catch; used to test the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Drop the sign factor from the ℓ1 oracle (assign −λ regardless of
    /// the gradient's sign at the chosen coordinate).
    L1SignBug,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteReport {
    fn from_worst(name: &'static str, trials: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            trials,
            worst,
            tolerance,
            pass: worst <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{:10} {} worst deviation {:.3e} (tolerance {:.1e}, {} trials)",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance,
            self.trials
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.suites.iter().all(|s| s.pass)
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

const LMO_KINDS: [&str; 6] = ["l1", "linf", "group", "nuclear", "frobenius", "pathnorm"];

/// Run the oracle-equivalence suites. `only` restricts to one kind name;
/// `mutation` injects a known defect (for validating the suites).
pub fn check_lmo(seed: u64, only: Option<&str>, mutation: Mutation) -> Result<VerifyReport, String> {
    if let Some(k) = only {
        if !LMO_KINDS.contains(&k) && k != "tv" {
            return Err(format!(
                "unknown kind '{k}'; expected one of {LMO_KINDS:?} or tv"
            ));
        }
    }
    let wanted = |name: &str| only.map_or(true, |k| k == name);
    let mut report = VerifyReport::default();
    if wanted("l1") {
        report.suites.push(suite_l1(seed, mutation));
    }
    if wanted("linf") {
        report.suites.push(suite_linf(seed));
    }
    if wanted("group") {
        report.suites.push(suite_group(seed));
    }
    if wanted("nuclear") {
        report.suites.push(suite_nuclear(seed, 50, 10));
    }
    if wanted("frobenius") {
        report.suites.push(suite_frobenius(seed));
    }
    if wanted("pathnorm") {
        report.suites.push(suite_pathnorm(seed));
    }
    if wanted("tv") {
        report.suites.push(suite_tv_small(seed));
    }
    Ok(report)
}

fn suite_l1(seed: u64, mutation: Mutation) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let lambda = 1.5;
    let mut worst = 0.0f64;
    let trials = 1000;
    for t in 0..trials {
        let d = 2 + t % 5;
        let g = rand_vec(&mut rng, d);
        let mut fast = lmo_l1(&g, lambda);
        if mutation == Mutation::L1SignBug {
            // replicate the naive formula: −λ at the argmax coordinate,
            // ignoring the gradient's sign there
            let j = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let mut dir = vec![0.0; d];
            dir[j] = -lambda;
            let objective = dot(&g, &dir).unwrap();
            fast = LmoResult {
                direction: ParamBlock::from_flat(dir),
                objective,
                degenerate: false,
                dead_paths: 0,
            };
        }
        let slow = brute_force_lmo(
            &ParamBlock::from_flat(g.clone()),
            ConstraintKind::L1Ball,
            lambda,
            0,
        );
        worst = worst.max((fast.objective - slow.objective).abs());
        let r: f64 = fast.direction.as_slice().iter().map(|x| x.abs()).sum();
        worst = worst.max((r - lambda).max(0.0) / lambda);
    }
    SuiteReport::from_worst("l1", trials, worst, 1e-12)
}

fn suite_linf(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);
    let lambda = 0.9;
    let mut worst = 0.0f64;
    let trials = 1000;
    for t in 0..trials {
        let d = 2 + t % 5;
        let g = rand_vec(&mut rng, d);
        let fast = lmo_linf(&g, lambda);
        let slow = brute_force_lmo(
            &ParamBlock::from_flat(g.clone()),
            ConstraintKind::LInfBall,
            lambda,
            0,
        );
        worst = worst.max((fast.objective - slow.objective).abs());
        let r = fast
            .direction
            .as_slice()
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        worst = worst.max((r - lambda).max(0.0) / lambda);
    }
    SuiteReport::from_worst("linf", trials, worst, 1e-12)
}

fn suite_group(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
    let lambda = 1.2;
    let mut worst = 0.0f64;
    let trials = 1000;
    for t in 0..trials {
        let shapes: &[(usize, usize)] = match t % 3 {
            0 => &[(1, 3), (1, 3)],
            1 => &[(2, 1), (1, 2), (1, 2)],
            _ => &[(1, 2), (2, 2)],
        };
        let mats: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| Matrix::from_vec(r, c, rand_vec(&mut rng, r * c)))
            .collect();
        let fast = lmo_group_l1_inf(&mats, lambda);
        let slow = brute_force_lmo(
            &ParamBlock::from_matrices(&mats),
            ConstraintKind::GroupL1InfBall,
            lambda,
            0,
        );
        worst = worst.max((fast.objective - slow.objective).abs());
        let r = (0..fast.direction.num_layers())
            .map(|j| {
                fast.direction
                    .layer_slice(j)
                    .iter()
                    .map(|x| x.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        worst = worst.max((r - lambda).max(0.0) / lambda);
    }
    SuiteReport::from_worst("group", trials, worst, 1e-12)
}

/// Nuclear oracle versus the Jacobi eigensolver: objective −λσ₁, nuclear
/// norm of the direction exactly λ, rank 1.
pub fn suite_nuclear(seed: u64, trials: usize, dim: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44);
    let lambda = 2.0;
    let mut worst = 0.0f64;
    for t in 0..trials {
        let g = Matrix::from_vec(dim, dim, rand_vec(&mut rng, dim * dim));
        let sigma1 = jacobi_sigma_max(&g);
        let r = lmo_nuclear(&g, lambda, 1e-13, seed.wrapping_add(t as u64)).unwrap();
        worst = worst.max((r.objective + lambda * sigma1).abs() / (lambda * sigma1));
        let dir = r.direction.layer_matrix(0);
        let gram = dir.transpose().matmul(&dir);
        let mut eigs = jacobi_eigenvalues(&gram);
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let nuclear: f64 = eigs.iter().map(|e| e.max(0.0).sqrt()).sum();
        worst = worst.max((nuclear - lambda).abs() / lambda);
        // rank 1: every singular value after the first vanishes
        let sigma2 = eigs.get(1).copied().unwrap_or(0.0).max(0.0).sqrt();
        worst = worst.max(sigma2 / lambda);
    }
    SuiteReport::from_worst("nuclear", trials, worst, 1e-6)
}

fn suite_frobenius(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let lambda = 1.3;
    let mut worst = 0.0f64;
    let trials = 40;
    for t in 0..trials {
        let d = 2 + t % 2;
        let g = rand_vec(&mut rng, d);
        let fast = crate::constraints::lmo_frobenius(
            &Matrix::from_vec(1, d, g.clone()),
            lambda,
        );
        let resolution = if d == 2 { 40_000 } else { 700 };
        let slow = brute_force_lmo(
            &ParamBlock::from_flat(g.clone()),
            ConstraintKind::FrobeniusBall,
            lambda,
            resolution,
        );
        // grid bound: λ‖g‖·(angle step)²/2
        let step = 2.0 * std::f64::consts::PI / resolution as f64;
        let bound = lambda * l2_norm(&g) * step * step;
        let dev = (fast.objective - slow.objective).abs() - bound;
        worst = worst.max(dev.max(0.0) / lambda);
    }
    SuiteReport::from_worst("frobenius", trials, worst, 1e-9)
}

fn suite_pathnorm(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x66);
    let lambda = 1.1;
    let mut worst = 0.0f64;
    let trials = 25;
    for _ in 0..trials {
        let d = 4;
        let g = rand_vec(&mut rng, d);
        let gamma: Vec<f64> = (0..d).map(|_| 0.3 + rng.gen::<f64>() * 2.0).collect();
        let fast = lmo_pathnorm_layer(&g, &gamma, lambda);
        let slow_dir = ellipsoid_lmo_pgd(&g, &gamma, lambda, 150_000);
        let slow = dot(&g, &slow_dir).unwrap();
        worst = worst.max((fast.objective - slow).abs() / (1.0 + slow.abs()));
    }
    SuiteReport::from_worst("pathnorm", trials, worst, 1e-8)
}

/// Directed connected graph templates on ≤ 5 nodes (≤ 7 edges each).
pub fn tv_templates() -> Vec<IncidenceMatrix> {
    vec![
        IncidenceMatrix::from_edges(2, vec![(0, 1)]),
        IncidenceMatrix::from_edges(3, vec![(0, 1), (1, 2)]),
        IncidenceMatrix::from_edges(3, vec![(0, 1), (1, 2), (2, 0)]),
        IncidenceMatrix::from_edges(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]),
        IncidenceMatrix::from_edges(4, vec![(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]),
        IncidenceMatrix::from_edges(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]),
        IncidenceMatrix::from_edges(5, vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (1, 4)]),
        IncidenceMatrix::from_edges(
            5,
            vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 3)],
        ),
    ]
}

/// Conserved random node demands (sum zero per component) that are
/// routable in some positive multiple.
pub fn random_tv_demand(a: &IncidenceMatrix, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // push random flow through the edges and read off the node imbalance
    let f: Vec<f64> = (0..a.num_edges()).map(|_| rng.gen::<f64>()).collect();
    a.apply(&f)
}

/// The scaling LP solved exactly: max β s.t. Af = βg, f ∈ [0,1].
pub fn tv_scaling_lp(a: &IncidenceMatrix, g: &[f64]) -> Result<f64, String> {
    let ne = a.num_edges();
    let nn = a.num_nodes();
    let dense = a.to_dense();
    let mut eq_lhs = Vec::with_capacity(nn);
    for v in 0..nn {
        let mut row: Vec<f64> = (0..ne).map(|e| dense[(v, e)]).collect();
        row.push(-g[v]);
        eq_lhs.push(row);
    }
    let mut maximize = vec![0.0; ne];
    maximize.push(1.0);
    let mut lower = vec![0.0; ne];
    lower.push(0.0);
    let mut upper = vec![1.0; ne];
    // β is bounded by the degree argument; a loose box keeps the LP compact
    upper.push(1e3);
    let p = LpProblem {
        maximize,
        eq_lhs,
        eq_rhs: vec![0.0; nn],
        lower,
        upper,
    };
    brute_force_lp(&p)
        .map(|(_, v)| v)
        .map_err(|e| e.to_string())
}

fn suite_tv_small(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let mut worst = 0.0f64;
    let mut trials = 0;
    let eps = 1e-6;
    for a in tv_templates() {
        for _ in 0..2 {
            let g = random_tv_demand(&a, &mut rng);
            if g.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-3 {
                continue;
            }
            trials += 1;
            let lp = tv_scaling_lp(&a, &g).expect("scaling LP is feasible");
            let dual = tv_dual_solve(&g, &a, eps).unwrap();
            worst = worst.max((dual.value - lp).abs());
        }
    }
    SuiteReport::from_worst("tv", trials, worst, eps)
}

/// Exact LMO value over {‖AW‖₁ ≤ λ} by brute-force LP on a spanning-tree
/// parameterization (tree edge values + signed node imbalances).
pub fn tv_lmo_lp(
    a: &IncidenceMatrix,
    g_edge: &[f64],
    lambda: f64,
) -> Result<f64, String> {
    let nn = a.num_nodes();
    // BFS spanning forest
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nn];
    for (e, &(s, t)) in a.edges().iter().enumerate() {
        adj[s].push((t, e));
        adj[t].push((s, e));
    }
    let mut tree = Vec::new();
    let mut visited = vec![false; nn];
    for root in 0..nn {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(w, e) in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    tree.push(e);
                    queue.push_back(w);
                }
            }
        }
    }
    let nt = tree.len();
    let nvars = nt + 2 * nn + 1; // tree weights, z⁺, z⁻, budget slack
    let dense = a.to_dense();
    // A_tree·w − z⁺ + z⁻ = 0 per node, Σ(z⁺+z⁻) + slack = λ
    let mut eq_lhs = Vec::with_capacity(nn + 1);
    for v in 0..nn {
        let mut row = vec![0.0; nvars];
        for (k, &e) in tree.iter().enumerate() {
            row[k] = dense[(v, e)];
        }
        row[nt + v] = -1.0;
        row[nt + nn + v] = 1.0;
        eq_lhs.push(row);
    }
    let mut budget = vec![0.0; nvars];
    for j in nt..nt + 2 * nn {
        budget[j] = 1.0;
    }
    budget[nvars - 1] = 1.0;
    eq_lhs.push(budget);
    let mut eq_rhs = vec![0.0; nn];
    eq_rhs.push(lambda);
    // maximize −gᵀw  (the LP enumerator maximizes)
    let mut maximize = vec![0.0; nvars];
    for (k, &e) in tree.iter().enumerate() {
        maximize[k] = -g_edge[e];
    }
    let mut lower = vec![-10.0 * lambda; nt];
    lower.extend(vec![0.0; 2 * nn + 1]);
    let mut upper = vec![10.0 * lambda; nt];
    upper.extend(vec![lambda; 2 * nn]);
    upper.push(lambda);
    let p = LpProblem {
        maximize,
        eq_lhs,
        eq_rhs,
        lower,
        upper,
    };
    brute_force_lp(&p)
        .map(|(_, v)| -v)
        .map_err(|e| e.to_string())
}

/// One row of the gap benchmark: accuracy target and the subgradient
/// iterations needed to reach it, summed over the template graphs.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub eps: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GapBenchReport {
    pub rows: Vec<GapRow>,
    /// Fitted exponent p of iterations ≈ C·(1/eps)^p.
    pub exponent: f64,
    pub monotone: bool,
}

/// Sweep the dual-solve accuracy and fit the growth of iteration counts
/// against 1/eps on seeded 5-node graphs.
pub fn gap_bench(seed: u64, eps_list: &[f64]) -> GapBenchReport {
    assert!(eps_list.len() >= 2);
    let graphs: Vec<IncidenceMatrix> = tv_templates()
        .into_iter()
        .filter(|a| a.num_nodes() == 5)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x99);
    let demands: Vec<(usize, Vec<f64>)> = graphs
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            (0..3)
                .map(|_| (i, random_tv_demand(a, &mut rng)))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let mut total = 0usize;
        for (i, g) in &demands {
            let sol = tv_dual_solve(g, &graphs[*i], eps).unwrap();
            total += sol.iterations;
        }
        rows.push(GapRow {
            eps,
            iterations: total.max(1),
        });
    }
    // least-squares slope of log(iters) against log(1/eps)
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.eps).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.iterations as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let exponent = if den > 0.0 { num / den } else { 0.0 };
    let mut monotone = true;
    for w in rows.windows(2) {
        // eps_list is expected largest→smallest; iterations must not drop
        if w[1].eps < w[0].eps && w[1].iterations < w[0].iterations {
            monotone = false;
        }
    }
    GapBenchReport {
        rows,
        exponent,
        monotone,
    }
}

/// Path-norm machinery checks: dynamic program vs enumeration, the
/// per-layer γ identity, and invariance under node rescaling.
pub fn check_pathnorm(seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xaa);
    let mut report = VerifyReport::default();

    let mut worst_dp = 0.0f64;
    let mut worst_gamma = 0.0f64;
    let trials = 100;
    for t in 0..trials {
        let sizes: Vec<usize> = match t % 4 {
            0 => vec![2, 3, 2],
            1 => vec![3, 4, 4, 2],
            2 => vec![4, 4, 4, 4],
            _ => vec![2, 2, 3, 1],
        };
        let net = FeedForwardNet::random(sizes, seed.wrapping_add(t as u64));
        let sq = brute_force_path_norm(&net);
        let pn = path_norm(&net);
        worst_dp = worst_dp.max((pn * pn - sq).abs() / sq.max(1e-300));
        let gammas = compute_gammas(&net);
        for j in 0..net.depth() {
            let via = gammas.path_norm_sq_via_layer(&net, j);
            worst_gamma = worst_gamma.max((via - sq).abs() / sq.max(1e-300));
        }
    }
    report
        .suites
        .push(SuiteReport::from_worst("dp_vs_enum", trials, worst_dp, 1e-10));
    report.suites.push(SuiteReport::from_worst(
        "gamma_identity",
        trials,
        worst_gamma,
        1e-10,
    ));

    let mut worst_rescale = 0.0f64;
    let net = FeedForwardNet::random(vec![3, 5, 4, 2], seed ^ 0xbb);
    let pn0 = path_norm(&net);
    for &c in &[0.5, 2.0, 10.0] {
        let scaled = rescale_node(&net, 1, 2, c).unwrap();
        worst_rescale = worst_rescale.max((path_norm(&scaled) - pn0).abs() / pn0);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 3);
            let b = Batch::new(Matrix::from_vec(1, 3, x), vec![0]).unwrap();
            let out0 = forward(&net, &b).unwrap();
            let out1 = forward(&scaled, &b).unwrap();
            for (p, q) in out0.last().unwrap().data().iter().zip(out1.last().unwrap().data()) {
                worst_rescale = worst_rescale.max((p - q).abs());
            }
        }
    }
    report.suites.push(SuiteReport::from_worst(
        "rescale_invariance",
        3,
        worst_rescale,
        1e-9,
    ));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{lmo_tv, tv_norm};

    #[test]
    fn stock_suites_pass() {
        let report = check_lmo(42, None, Mutation::None).unwrap();
        for s in &report.suites {
            assert!(s.pass, "{}", s.line());
        }
    }

    #[test]
    fn injected_sign_bug_fails_the_l1_suite() {
        let report = check_lmo(42, Some("l1"), Mutation::L1SignBug).unwrap();
        assert!(!report.all_pass(), "mutation went undetected");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(check_lmo(1, Some("spectral"), Mutation::None).is_err());
    }

    #[test]
    fn pathnorm_suites_pass() {
        assert!(check_pathnorm(7).all_pass());
    }

    #[test]
    fn gap_bench_exponent_and_monotonicity() {
        let report = gap_bench(3, &[1e-1, 1e-2, 1e-3]);
        assert!(report.monotone, "iterations not monotone in accuracy");
        assert!(
            report.exponent <= 1.3,
            "fitted exponent {} exceeds the linear-rate bound",
            report.exponent
        );
        assert!(gap_bench(3, &[1e-1, 1e-2, 1e-3]).exponent == report.exponent);
    }

    #[test]
    fn lmo_tv_matches_tree_lp_on_small_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for a in tv_templates().into_iter().filter(|a| a.num_nodes() <= 4) {
            for _ in 0..2 {
                let y = rand_vec(&mut rng, a.num_nodes());
                let g = a.apply_transpose(&y);
                if l2_norm(&g) < 1e-6 {
                    continue;
                }
                let lambda = 1.7;
                let fast = lmo_tv(&ParamBlock::from_flat(g.clone()), &a, lambda, 1e-8).unwrap();
                let slow = tv_lmo_lp(&a, &g, lambda).unwrap();
                assert!(
                    (fast.objective - slow).abs() <= 1e-6 * (1.0 + slow.abs()),
                    "lmo {} vs lp {}",
                    fast.objective,
                    slow
                );
                assert!(tv_norm(fast.direction.as_slice(), &a) <= lambda * (1.0 + 1e-9));
            }
        }
    }
}
