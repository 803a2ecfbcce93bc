//! Independent brute-force oracles. Each oracle deliberately avoids the
//! code path of the operation it checks: Jacobi sweeps instead of power
//! iteration, explicit path enumeration instead of the γ recursion, vertex
//! enumeration instead of closed-form oracles, basic-solution enumeration
//! instead of duality arguments.

use thiserror::Error;

use crate::constraints::{ConstraintKind, LmoResult};
use crate::linalg::{dot, l2_norm, solve_dense, Matrix, ParamBlock};
use crate::network::FeedForwardNet;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "jacobi needs a square symmetric matrix");
    let mut a = sym.clone();
    let frob = l2_norm(a.data()).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-14 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Top singular value of `m`, via Jacobi on MᵀM.
pub fn jacobi_sigma_max(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m);
    jacobi_eigenvalues(&gram)
        .into_iter()
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

/// Nuclear norm (sum of singular values) of `m`, via Jacobi on MᵀM.
pub fn jacobi_nuclear_norm(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m);
    jacobi_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .sum()
}

/// Exhaustive linear minimization over small balls: vertex enumeration for
/// the polytopes, a dense direction grid for the Frobenius ball
/// (`resolution` grid steps per angle, dimension ≤ 3).
pub fn brute_force_lmo(
    g: &ParamBlock,
    kind: ConstraintKind,
    lambda: f64,
    resolution: usize,
) -> LmoResult {
    let flat = g.as_slice();
    let d = flat.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |point: Vec<f64>, obj: f64| {
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((point, obj));
        }
    };
    match kind {
        ConstraintKind::L1Ball => {
            for j in 0..d {
                for sign in [-1.0, 1.0] {
                    let mut p = vec![0.0; d];
                    p[j] = sign * lambda;
                    let obj = dot(flat, &p).unwrap();
                    consider(p, obj);
                }
            }
        }
        ConstraintKind::LInfBall => {
            assert!(d <= 20, "vertex enumeration limited to 20 dims");
            for mask in 0..(1usize << d) {
                let p: Vec<f64> = (0..d)
                    .map(|j| if mask >> j & 1 == 1 { lambda } else { -lambda })
                    .collect();
                let obj = dot(flat, &p).unwrap();
                consider(p, obj);
            }
        }
        ConstraintKind::GroupL1InfBall => {
            // Vertices of a product of per-layer ℓ1 balls: mixed-radix
            // enumeration over (coordinate, sign) choices per layer.
            let shapes: Vec<usize> = g.shapes().iter().map(|(r, c)| r * c).collect();
            let radix: Vec<usize> = shapes.iter().map(|&s| 2 * s).collect();
            let total: usize = radix.iter().product();
            assert!(total <= 1 << 20, "group vertex enumeration too large");
            for mut code in 0..total {
                let mut p = vec![0.0; d];
                let mut offset = 0;
                for (li, &s) in shapes.iter().enumerate() {
                    let choice = code % radix[li];
                    code /= radix[li];
                    let (j, sign) = (choice / 2, if choice % 2 == 0 { 1.0 } else { -1.0 });
                    p[offset + j] = sign * lambda;
                    offset += s;
                }
                let obj = dot(flat, &p).unwrap();
                consider(p, obj);
            }
        }
        ConstraintKind::FrobeniusBall => {
            assert!(d >= 1 && d <= 3, "grid search limited to 3 dims");
            assert!(resolution >= 4, "grid needs a few steps");
            match d {
                1 => {
                    consider(vec![lambda], flat[0] * lambda);
                    consider(vec![-lambda], -flat[0] * lambda);
                }
                2 => {
                    for i in 0..resolution {
                        let th = 2.0 * std::f64::consts::PI * i as f64 / resolution as f64;
                        let p = vec![lambda * th.cos(), lambda * th.sin()];
                        let obj = dot(flat, &p).unwrap();
                        consider(p, obj);
                    }
                }
                _ => {
                    for i in 0..resolution {
                        let th = std::f64::consts::PI * i as f64 / (resolution - 1) as f64;
                        for k in 0..resolution {
                            let ph = 2.0 * std::f64::consts::PI * k as f64 / resolution as f64;
                            let p = vec![
                                lambda * th.sin() * ph.cos(),
                                lambda * th.sin() * ph.sin(),
                                lambda * th.cos(),
                            ];
                            let obj = dot(flat, &p).unwrap();
                            consider(p, obj);
                        }
                    }
                }
            }
        }
        other => panic!("brute_force_lmo does not handle {other:?}"),
    }
    let (point, objective) = best.expect("ball has vertices");
    let mut direction = ParamBlock::zeros_like(g);
    direction.as_mut_slice().copy_from_slice(&point);
    LmoResult {
        direction,
        objective,
        degenerate: false,
        dead_paths: 0,
    }
}

/// Squared path norm by explicit enumeration of every input→output path.
/// Exponential in depth; use only on desk-sized nets.
pub fn brute_force_path_norm(net: &FeedForwardNet) -> f64 {
    fn recurse(net: &FeedForwardNet, layer: usize, node: usize, prod: f64, acc: &mut f64) {
        if layer == net.depth() {
            *acc += prod * prod;
            return;
        }
        let w = &net.weights()[layer];
        for next in 0..w.rows() {
            recurse(net, layer + 1, next, prod * w[(next, node)], acc);
        }
    }
    let mut acc = 0.0;
    for start in 0..net.input_dim() {
        recurse(net, 0, start, 1.0, &mut acc);
    }
    acc
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("infeasible linear program")]
    Infeasible,
}

/// maximize c·x subject to Ex = d and lower ≤ x ≤ upper.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub maximize: Vec<f64>,
    pub eq_lhs: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Exact optimum of a tiny box-constrained LP by enumerating basic
/// solutions: every vertex has all but rank(E) variables at a bound.
pub fn brute_force_lp(p: &LpProblem) -> Result<(Vec<f64>, f64), LpError> {
    let n = p.maximize.len();
    assert!(n <= 12, "basic-solution enumeration is for tiny LPs");
    assert!(p.lower.len() == n && p.upper.len() == n);
    assert!(p.eq_lhs.iter().all(|row| row.len() == n));

    // Row-reduce [E | d] to find an independent subsystem and detect
    // inconsistency.
    let mut rows: Vec<Vec<f64>> = p
        .eq_lhs
        .iter()
        .zip(p.eq_rhs.iter())
        .map(|(r, &b)| {
            let mut v = r.clone();
            v.push(b);
            v
        })
        .collect();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut pivot_cols: Vec<usize> = Vec::new();
    for col in 0..n {
        let Some(best) = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r[col].abs() > 1e-10)
            .max_by(|a, b| a.1[col].abs().partial_cmp(&b.1[col].abs()).unwrap())
            .map(|(i, _)| i)
        else {
            continue;
        };
        let pivot_row = rows.swap_remove(best);
        for r in rows.iter_mut() {
            let f = r[col] / pivot_row[col];
            if f != 0.0 {
                for (x, px) in r.iter_mut().zip(pivot_row.iter()) {
                    *x -= f * px;
                }
            }
        }
        kept.push(pivot_row);
        pivot_cols.push(col);
    }
    for r in &rows {
        let coeff_norm: f64 = r[..n].iter().map(|x| x.abs()).sum();
        if coeff_norm <= 1e-9 && r[n].abs() > 1e-9 {
            return Err(LpError::Infeasible);
        }
    }
    let rank = kept.len();

    let feas_tol = 1e-9;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut basis: Vec<usize> = Vec::new();
    enumerate_subsets(n, rank, &mut basis, &mut |basis: &[usize]| {
        let non_basis: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
        let mut sys = Matrix::zeros(rank, rank);
        for (i, row) in kept.iter().enumerate() {
            for (k, &j) in basis.iter().enumerate() {
                sys[(i, k)] = row[j];
            }
        }
        for mask in 0..(1usize << non_basis.len()) {
            let mut x = vec![0.0; n];
            for (bit, &j) in non_basis.iter().enumerate() {
                x[j] = if mask >> bit & 1 == 1 {
                    p.upper[j]
                } else {
                    p.lower[j]
                };
            }
            let rhs: Vec<f64> = kept
                .iter()
                .map(|row| {
                    let mut b = row[n];
                    for &j in &non_basis {
                        b -= row[j] * x[j];
                    }
                    b
                })
                .collect();
            if rank > 0 {
                match solve_dense(&sys, &rhs) {
                    Some(sol) => {
                        for (k, &j) in basis.iter().enumerate() {
                            x[j] = sol[k];
                        }
                    }
                    None => return, // singular basis, vertices covered elsewhere
                }
            }
            let feasible = (0..n)
                .all(|j| x[j] >= p.lower[j] - feas_tol && x[j] <= p.upper[j] + feas_tol);
            if !feasible {
                continue;
            }
            // Verify against the original equalities, not just the reduced ones.
            let ok = p
                .eq_lhs
                .iter()
                .zip(p.eq_rhs.iter())
                .all(|(row, &b)| (dot(row, &x).unwrap() - b).abs() <= 1e-7);
            if !ok {
                continue;
            }
            let val = dot(&p.maximize, &x).unwrap();
            if best.as_ref().map_or(true, |(_, bv)| val > *bv) {
                best = Some((x, val));
            }
        }
    });
    best.ok_or(LpError::Infeasible)
}

fn enumerate_subsets(n: usize, k: usize, prefix: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if prefix.len() == k {
        f(prefix);
        return;
    }
    let start = prefix.last().map_or(0, |&x| x + 1);
    for j in start..n {
        prefix.push(j);
        enumerate_subsets(n, k, prefix, f);
        prefix.pop();
    }
}

/// Euclidean projection onto {w : ‖Γw‖₂ ≤ λ} for diagonal Γ, by bisection
/// on the Lagrange multiplier of the quadratic subproblem.
fn project_ellipsoid(z: &[f64], gamma: &[f64], lambda: f64) -> Vec<f64> {
    let scaled_norm = |mu: f64| -> f64 {
        z.iter()
            .zip(gamma.iter())
            .map(|(&zi, &gi)| {
                let wi = zi / (1.0 + mu * gi * gi);
                (gi * wi) * (gi * wi)
            })
            .sum::<f64>()
            .sqrt()
    };
    if scaled_norm(0.0) <= lambda {
        return z.to_vec();
    }
    let mut hi = 1.0;
    while scaled_norm(hi) > lambda {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if scaled_norm(mid) > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    z.iter()
        .zip(gamma.iter())
        .map(|(&zi, &gi)| zi / (1.0 + mu * gi * gi))
        .collect()
}

/// Linear minimization over the ellipsoid {‖Γw‖₂ ≤ λ} by projected
/// gradient iteration — the slow independent check for the closed form.
pub fn ellipsoid_lmo_pgd(g: &[f64], gamma: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let gnorm = l2_norm(g).max(f64::MIN_POSITIVE);
    let gmax = gamma.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let step = lambda / (gnorm * gmax * gmax);
    let mut w = vec![0.0; g.len()];
    for _ in 0..iters {
        let moved: Vec<f64> = w.iter().zip(g.iter()).map(|(wi, gi)| wi - step * gi).collect();
        w = project_ellipsoid(&moved, gamma, lambda);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_diagonal_matrix() {
        let m = Matrix::diag(&[3.0, -1.0, 2.0]);
        let mut eigs = jacobi_eigenvalues(&m);
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eigs[0] + 1.0).abs() < 1e-12);
        assert!((eigs[1] - 2.0).abs() < 1e-12);
        assert!((eigs[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_sigma_of_known_matrix() {
        // singular values of [[3,0],[4,0]] are (5, 0)
        let m = Matrix::from_rows(&[&[3.0, 0.0], &[4.0, 0.0]]);
        assert!((jacobi_sigma_max(&m) - 5.0).abs() < 1e-10);
        assert!((jacobi_nuclear_norm(&m) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn brute_lmo_l1_closed_form_cases() {
        let g = ParamBlock::from_flat(vec![1.0, 0.0, 0.0]);
        let r = brute_force_lmo(&g, ConstraintKind::L1Ball, 2.0, 0);
        assert_eq!(r.direction.as_slice(), &[-2.0, 0.0, 0.0]);
        assert_eq!(r.objective, -2.0);
    }

    #[test]
    fn brute_lmo_linf_vertex_count_is_exhaustive() {
        // d = 3 → 8 vertices; the minimum matches -λ‖g‖₁
        let g = ParamBlock::from_flat(vec![0.5, -2.0, 1.0]);
        let r = brute_force_lmo(&g, ConstraintKind::LInfBall, 1.0, 0);
        assert!((r.objective + 3.5).abs() < 1e-12);
    }

    #[test]
    fn brute_lmo_frobenius_grid_near_optimum() {
        let g = ParamBlock::from_flat(vec![3.0, 4.0]);
        let r = brute_force_lmo(&g, ConstraintKind::FrobeniusBall, 1.0, 20_000);
        // optimum is -λ‖g‖ = -5, grid within O(1/resolution)
        assert!((r.objective + 5.0).abs() < 1e-6);
    }

    #[test]
    fn path_enumeration_line_graph() {
        let net = FeedForwardNet::new(
            vec![1, 1, 1],
            vec![
                Matrix::from_vec(1, 1, vec![2.0]),
                Matrix::from_vec(1, 1, vec![3.0]),
            ],
        )
        .unwrap();
        assert_eq!(brute_force_path_norm(&net), 36.0);
    }

    #[test]
    fn path_enumeration_counts_paths() {
        // all-ones 2-2-1 net has 4 paths, each product 1
        let net = FeedForwardNet::new(
            vec![2, 2, 1],
            vec![
                Matrix::from_vec(2, 2, vec![1.0; 4]),
                Matrix::from_vec(1, 2, vec![1.0; 2]),
            ],
        )
        .unwrap();
        assert_eq!(brute_force_path_norm(&net), 4.0);
    }

    #[test]
    fn lp_single_edge_scaling_instance() {
        // max β s.t. f = β, -f = -β, f ∈ [0,1], β ∈ [0,10]
        let p = LpProblem {
            maximize: vec![0.0, 1.0],
            eq_lhs: vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
            eq_rhs: vec![0.0, 0.0],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 10.0],
        };
        let (x, v) = brute_force_lp(&p).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "beta* = 1, got {v}");
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_detects_infeasible_equalities() {
        let p = LpProblem {
            maximize: vec![1.0, 1.0],
            eq_lhs: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            eq_rhs: vec![1.0, 2.0],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert!(matches!(brute_force_lp(&p), Err(LpError::Infeasible)));
    }

    #[test]
    fn lp_degenerate_objective_is_zero() {
        let p = LpProblem {
            maximize: vec![0.0, 0.0],
            eq_lhs: vec![vec![1.0, 1.0]],
            eq_rhs: vec![1.0],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let (_, v) = brute_force_lp(&p).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn lp_box_infeasible_equalities() {
        let p = LpProblem {
            maximize: vec![1.0],
            eq_lhs: vec![vec![1.0]],
            eq_rhs: vec![5.0],
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert!(matches!(brute_force_lp(&p), Err(LpError::Infeasible)));
    }

    #[test]
    fn ellipsoid_projection_stays_feasible_and_fixes_interior() {
        let gamma = [2.0, 1.0, 0.5];
        let inside = [0.1, 0.1, 0.1];
        assert_eq!(project_ellipsoid(&inside, &gamma, 1.0), inside.to_vec());
        let outside = [5.0, -3.0, 2.0];
        let p = project_ellipsoid(&outside, &gamma, 1.0);
        let val: f64 = p
            .iter()
            .zip(gamma.iter())
            .map(|(w, g)| (w * g) * (w * g))
            .sum::<f64>()
            .sqrt();
        assert!((val - 1.0).abs() < 1e-9);
    }
}
