//! Feedforward ReLU networks: forward/backward passes, the path-norm
//! machinery (per-node γ factors computed by dynamic programming), node
//! rescaling, and the node-edge incidence matrix.
//!
//! Networks carry no biases. Edges are ordered canonically: layer-major,
//! then (target, source) lexicographic within a layer — which is exactly
//! the row-major flattening of each weight matrix. Incidence columns,
//! γ diagonals, and flattened gradients all share this order.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::linalg::{Matrix, ParamBlock};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("node ({layer}, {node}) is not a hidden node")]
    NotHidden { layer: usize, node: usize },
    #[error("rescale constant must be positive, got {0}")]
    BadScale(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// A minibatch: one sample per row plus class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self, NetworkError> {
        if inputs.rows() != labels.len() {
            return Err(NetworkError::DimensionMismatch(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch of the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let dim = self.inputs.cols();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs: Matrix::from_vec(indices.len(), dim, data),
            labels,
        }
    }
}

/// Layered ReLU network without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
}

impl FeedForwardNet {
    /// Build from explicit weight matrices; `weights[j]` maps layer-j
    /// activations to layer-(j+1) pre-activations.
    pub fn new(layer_sizes: Vec<usize>, weights: Vec<Matrix>) -> Result<Self, NetworkError> {
        if layer_sizes.len() < 2 {
            return Err(NetworkError::DimensionMismatch(
                "a network needs at least two layers".into(),
            ));
        }
        if weights.len() != layer_sizes.len() - 1 {
            return Err(NetworkError::DimensionMismatch(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                layer_sizes.len()
            )));
        }
        for (j, w) in weights.iter().enumerate() {
            if w.rows() != layer_sizes[j + 1] || w.cols() != layer_sizes[j] {
                return Err(NetworkError::DimensionMismatch(format!(
                    "weights[{j}] is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    layer_sizes[j + 1],
                    layer_sizes[j]
                )));
            }
            if w.data().iter().any(|x| !x.is_finite()) {
                return Err(NetworkError::DimensionMismatch(format!(
                    "weights[{j}] contains non-finite entries"
                )));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
        })
    }

    pub fn zeros(layer_sizes: Vec<usize>) -> Self {
        let weights = (0..layer_sizes.len() - 1)
            .map(|j| Matrix::zeros(layer_sizes[j + 1], layer_sizes[j]))
            .collect();
        Self {
            layer_sizes,
            weights,
        }
    }

    /// Seeded Gaussian initialization, mean 0, std 1/sqrt(fan-in).
    pub fn random(layer_sizes: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..layer_sizes.len() - 1)
            .map(|j| {
                let (rows, cols) = (layer_sizes[j + 1], layer_sizes[j]);
                let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).unwrap();
                let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
                Matrix::from_vec(rows, cols, data)
            })
            .collect();
        Self {
            layer_sizes,
            weights,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    /// Number of weight matrices (edge layers).
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_nodes(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn num_edges(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    pub fn params(&self) -> ParamBlock {
        ParamBlock::from_matrices(&self.weights)
    }

    pub fn set_params(&mut self, p: &ParamBlock) {
        assert_eq!(p.num_layers(), self.weights.len());
        for (j, w) in self.weights.iter_mut().enumerate() {
            w.data_mut().copy_from_slice(p.layer_slice(j));
        }
    }

    /// Global node index of node `n` in layer `l` (layer-major numbering).
    pub fn node_index(&self, layer: usize, node: usize) -> usize {
        self.layer_sizes[..layer].iter().sum::<usize>() + node
    }
}

/// Activations for every layer; `layers[0]` is the input, the last entry
/// holds raw logits (no ReLU on the output layer).
pub fn forward(net: &FeedForwardNet, batch: &Batch) -> Result<Vec<Matrix>, NetworkError> {
    if batch.inputs.cols() != net.input_dim() {
        return Err(NetworkError::DimensionMismatch(format!(
            "batch dim {} vs net input dim {}",
            batch.inputs.cols(),
            net.input_dim()
        )));
    }
    let mut acts = Vec::with_capacity(net.depth() + 1);
    acts.push(batch.inputs.clone());
    let last = net.depth() - 1;
    for (j, w) in net.weights.iter().enumerate() {
        let mut z = acts[j].matmul_nt(w);
        if j != last {
            for x in z.data_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
        acts.push(z);
    }
    Ok(acts)
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row_start = i * out.cols();
        let row = &mut out.data_mut()[row_start..row_start + logits.cols()];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch and its exact gradient,
/// one matrix per weight layer.
pub fn loss_and_gradient(
    net: &FeedForwardNet,
    batch: &Batch,
) -> Result<(f64, Vec<Matrix>), NetworkError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    for &y in &batch.labels {
        if y >= net.output_dim() {
            return Err(NetworkError::LabelOutOfRange {
                label: y,
                classes: net.output_dim(),
            });
        }
    }
    let acts = forward(net, batch)?;
    let logits = acts.last().unwrap();
    let probs = softmax_rows(logits);
    let n = batch.len() as f64;

    let mut loss = 0.0;
    let mut delta = probs; // becomes dL/dz for the output layer
    for (i, &y) in batch.labels.iter().enumerate() {
        let p = delta[(i, y)];
        loss -= (p.max(1e-300)).ln();
        delta[(i, y)] -= 1.0;
    }
    loss /= n;
    for x in delta.data_mut() {
        *x /= n;
    }

    let mut grads = vec![Matrix::zeros(0, 0); net.depth()];
    for j in (0..net.depth()).rev() {
        grads[j] = delta.matmul_tn(&acts[j]);
        if j > 0 {
            let mut da = delta.matmul(&net.weights[j]);
            // ReLU mask from the stored (post-activation) values.
            for (x, a) in da.data_mut().iter_mut().zip(acts[j].data().iter()) {
                if *a <= 0.0 {
                    *x = 0.0;
                }
            }
            delta = da;
        }
    }
    Ok((loss, grads))
}

/// Fraction of misclassified samples under argmax decoding.
pub fn classification_error(net: &FeedForwardNet, batch: &Batch) -> Result<f64, NetworkError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    let acts = forward(net, batch)?;
    let logits = acts.last().unwrap();
    let mut wrong = 0usize;
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / batch.len() as f64)
}

/// Per-node path products: γ_in(v) sums squared weight products over paths
/// from the input layer to v, γ_out(v) over paths from v to the output
/// layer. γ of an edge u→v is γ_in(u)·γ_out(v) — the squared norm of all
/// paths through the edge, excluding the edge's own weight.
#[derive(Debug, Clone)]
pub struct GammaTable {
    gamma_in: Vec<Vec<f64>>,
    gamma_out: Vec<Vec<f64>>,
}

impl GammaTable {
    pub fn gamma_in(&self, layer: usize, node: usize) -> f64 {
        self.gamma_in[layer][node]
    }

    pub fn gamma_out(&self, layer: usize, node: usize) -> f64 {
        self.gamma_out[layer][node]
    }

    /// γ_e for every edge of weight layer `j`, in canonical edge order.
    pub fn gamma_edge(&self, j: usize) -> Vec<f64> {
        let sources = &self.gamma_in[j];
        let targets = &self.gamma_out[j + 1];
        let mut out = Vec::with_capacity(sources.len() * targets.len());
        for &gt in targets {
            for &gs in sources {
                out.push(gs * gt);
            }
        }
        out
    }

    /// Squared path norm, evaluated as Σ_e γ_e w_e² over one weight layer.
    pub fn path_norm_sq_via_layer(&self, net: &FeedForwardNet, j: usize) -> f64 {
        let gammas = self.gamma_edge(j);
        gammas
            .iter()
            .zip(net.weights()[j].data().iter())
            .map(|(g, w)| g * w * w)
            .sum()
    }
}

/// Forward/backward dynamic programs for the γ factors; O(|E|) total.
pub fn compute_gammas(net: &FeedForwardNet) -> GammaTable {
    let l = net.layer_sizes.len();
    let mut gamma_in: Vec<Vec<f64>> = Vec::with_capacity(l);
    gamma_in.push(vec![1.0; net.layer_sizes[0]]);
    for (j, w) in net.weights.iter().enumerate() {
        let prev = &gamma_in[j];
        let mut cur = vec![0.0; w.rows()];
        for (t, c) in cur.iter_mut().enumerate() {
            let row = w.row(t);
            *c = row
                .iter()
                .zip(prev.iter())
                .map(|(wv, g)| g * wv * wv)
                .sum();
        }
        gamma_in.push(cur);
    }
    let mut gamma_out: Vec<Vec<f64>> = vec![Vec::new(); l];
    gamma_out[l - 1] = vec![1.0; *net.layer_sizes.last().unwrap()];
    for j in (0..net.weights.len()).rev() {
        let w = &net.weights[j];
        let next = &gamma_out[j + 1];
        let mut cur = vec![0.0; w.cols()];
        for t in 0..w.rows() {
            let row = w.row(t);
            let gt = next[t];
            for (s, wv) in row.iter().enumerate() {
                cur[s] += gt * wv * wv;
            }
        }
        gamma_out[j] = cur;
    }
    GammaTable {
        gamma_in,
        gamma_out,
    }
}

/// ℓ2 path norm: square root of the sum, over all input→output paths, of
/// the squared product of edge weights along the path. Computed by the
/// forward γ recursion, never by path enumeration.
pub fn path_norm(net: &FeedForwardNet) -> f64 {
    let mut gamma = vec![1.0; net.layer_sizes[0]];
    for w in &net.weights {
        let mut next = vec![0.0; w.rows()];
        for (t, c) in next.iter_mut().enumerate() {
            let row = w.row(t);
            *c = row
                .iter()
                .zip(gamma.iter())
                .map(|(wv, g)| g * wv * wv)
                .sum();
        }
        gamma = next;
    }
    gamma.iter().sum::<f64>().sqrt()
}

/// Multiply the incoming weights of a hidden node by `c` and divide its
/// outgoing weights by `c`. Leaves the network function unchanged (ReLU is
/// positively homogeneous) and returns a new net.
pub fn rescale_node(
    net: &FeedForwardNet,
    layer: usize,
    node: usize,
    c: f64,
) -> Result<FeedForwardNet, NetworkError> {
    if c <= 0.0 || !c.is_finite() {
        return Err(NetworkError::BadScale(c));
    }
    if layer == 0 || layer + 1 >= net.layer_sizes.len() || node >= net.layer_sizes[layer] {
        return Err(NetworkError::NotHidden { layer, node });
    }
    let mut out = net.clone();
    let w_in = &mut out.weights[layer - 1];
    for s in 0..w_in.cols() {
        w_in[(node, s)] *= c;
    }
    let w_out = &mut out.weights[layer];
    for t in 0..w_out.rows() {
        w_out[(t, node)] /= c;
    }
    Ok(out)
}

/// Node-edge incidence structure: one column per edge with +1 at the source
/// node and -1 at the target node. Columns follow the canonical edge order;
/// rows follow layer-major node numbering.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    num_nodes: usize,
    edges: Vec<(usize, usize)>, // (source, target) global node indices
}

impl IncidenceMatrix {
    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        for &(s, t) in &edges {
            assert!(s < num_nodes && t < num_nodes, "edge endpoint out of range");
            assert_ne!(s, t, "self-loops are not representable");
        }
        Self { num_nodes, edges }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// A·w — net outflow per node for edge values `w`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.edges.len(), "edge vector length mismatch");
        let mut out = vec![0.0; self.num_nodes];
        for (&(s, t), &we) in self.edges.iter().zip(w.iter()) {
            out[s] += we;
            out[t] -= we;
        }
        out
    }

    /// Aᵀ·y — per-edge potential drop y_source − y_target.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.num_nodes, "node vector length mismatch");
        self.edges.iter().map(|&(s, t)| y[s] - y[t]).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes, self.edges.len());
        for (e, &(s, t)) in self.edges.iter().enumerate() {
            m[(s, e)] = 1.0;
            m[(t, e)] = -1.0;
        }
        m
    }

    /// Connected components of the underlying undirected graph, as a
    /// component id per node.
    pub fn components(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(s, t) in &self.edges {
            adj[s].push(t);
            adj[t].push(s);
        }
        let mut comp = vec![usize::MAX; self.num_nodes];
        let mut next = 0;
        for start in 0..self.num_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = next;
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Incidence matrix of the network in canonical edge order.
pub fn incidence_matrix(net: &FeedForwardNet) -> IncidenceMatrix {
    let mut edges = Vec::with_capacity(net.num_edges());
    for (j, w) in net.weights.iter().enumerate() {
        for t in 0..w.rows() {
            for s in 0..w.cols() {
                edges.push((net.node_index(j, s), net.node_index(j + 1, t)));
            }
        }
    }
    IncidenceMatrix::from_edges(net.num_nodes(), edges)
}

/// Serialize to the text format: a `layers:` line, then per weight layer a
/// `weights[j]:` header followed by one whitespace-separated row per line.
pub fn save_net(net: &FeedForwardNet, path: &Path) -> Result<(), NetworkError> {
    let mut out = String::new();
    out.push_str("layers:");
    for s in &net.layer_sizes {
        let _ = write!(out, " {s}");
    }
    out.push('\n');
    for (j, w) in net.weights.iter().enumerate() {
        let _ = writeln!(out, "weights[{j}]:");
        for r in 0..w.rows() {
            let row: Vec<String> = w.row(r).iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_net(path: &Path) -> Result<FeedForwardNet, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| NetworkError::Parse("empty network file".into()))?;
    let sizes_str = header
        .strip_prefix("layers:")
        .ok_or_else(|| NetworkError::Parse(format!("expected 'layers:' line, got '{header}'")))?;
    let layer_sizes: Vec<usize> = sizes_str
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| NetworkError::Parse(format!("bad layer size '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    let mut weights = Vec::new();
    for j in 0..layer_sizes.len().saturating_sub(1) {
        let head = lines
            .next()
            .ok_or_else(|| NetworkError::Parse(format!("missing weights[{j}] header")))?;
        if head.trim() != format!("weights[{j}]:") {
            return Err(NetworkError::Parse(format!(
                "expected 'weights[{j}]:', got '{head}'"
            )));
        }
        let (rows, cols) = (layer_sizes[j + 1], layer_sizes[j]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| NetworkError::Parse(format!("truncated weights[{j}]")))?;
            for t in line.split_whitespace() {
                data.push(
                    t.parse::<f64>()
                        .map_err(|_| NetworkError::Parse(format!("bad weight '{t}'")))?,
                );
            }
        }
        if data.len() != rows * cols {
            return Err(NetworkError::Parse(format!(
                "weights[{j}] has {} values, expected {}",
                data.len(),
                rows * cols
            )));
        }
        weights.push(Matrix::from_vec(rows, cols, data));
    }
    FeedForwardNet::new(layer_sizes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line_net(w1: f64, w2: f64) -> FeedForwardNet {
        FeedForwardNet::new(
            vec![1, 1, 1],
            vec![
                Matrix::from_vec(1, 1, vec![w1]),
                Matrix::from_vec(1, 1, vec![w2]),
            ],
        )
        .unwrap()
    }

    fn random_net(sizes: &[usize], seed: u64) -> FeedForwardNet {
        FeedForwardNet::random(sizes.to_vec(), seed)
    }

    #[test]
    fn forward_identity_chain() {
        let net = line_net(1.0, 1.0);
        let batch = Batch::new(Matrix::from_vec(1, 1, vec![2.0]), vec![0]).unwrap();
        let acts = forward(&net, &batch).unwrap();
        assert_eq!(acts.last().unwrap().data(), &[2.0]);
    }

    #[test]
    fn forward_relu_kills_negative() {
        let net = line_net(1.0, 1.0);
        let batch = Batch::new(Matrix::from_vec(1, 1, vec![-2.0]), vec![0]).unwrap();
        let acts = forward(&net, &batch).unwrap();
        assert_eq!(acts.last().unwrap().data(), &[0.0]);
    }

    #[test]
    fn forward_zero_net() {
        let net = FeedForwardNet::zeros(vec![3, 4, 2]);
        let batch = Batch::new(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]), vec![1]).unwrap();
        let acts = forward(&net, &batch).unwrap();
        assert!(acts.last().unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_dimension_mismatch() {
        let net = FeedForwardNet::zeros(vec![3, 2]);
        let batch = Batch::new(Matrix::from_vec(1, 2, vec![1.0, 2.0]), vec![0]).unwrap();
        assert!(matches!(
            forward(&net, &batch),
            Err(NetworkError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_net_loss_is_ln_k() {
        let net = FeedForwardNet::zeros(vec![4, 2]);
        let batch = Batch::new(
            Matrix::from_vec(3, 4, vec![1.0; 12]),
            vec![0, 1, 0],
        )
        .unwrap();
        let (loss, _) = loss_and_gradient(&net, &batch).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_errors() {
        let net = FeedForwardNet::zeros(vec![2, 2]);
        let batch = Batch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(matches!(
            loss_and_gradient(&net, &batch),
            Err(NetworkError::EmptyBatch)
        ));
    }

    #[test]
    fn duplicated_samples_leave_loss_and_grad_unchanged() {
        let net = random_net(&[3, 4, 2], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
        let batch = Batch::new(Matrix::from_vec(2, 3, data.clone()), vec![0, 1]).unwrap();
        let doubled = Batch::new(
            Matrix::from_vec(4, 3, [data.clone(), data].concat()),
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let (l1, g1) = loss_and_gradient(&net, &batch).unwrap();
        let (l2, g2) = loss_and_gradient(&net, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2.iter()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences, the independent gradient oracle.
    fn finite_diff_grad(net: &FeedForwardNet, batch: &Batch, h: f64) -> Vec<Matrix> {
        let mut grads = Vec::new();
        for j in 0..net.depth() {
            let w = &net.weights()[j];
            let mut g = Matrix::zeros(w.rows(), w.cols());
            for idx in 0..w.rows() * w.cols() {
                let mut plus = net.clone();
                plus.weights_mut()[j].data_mut()[idx] += h;
                let mut minus = net.clone();
                minus.weights_mut()[j].data_mut()[idx] -= h;
                let (lp, _) = loss_and_gradient(&plus, batch).unwrap();
                let (lm, _) = loss_and_gradient(&minus, batch).unwrap();
                g.data_mut()[idx] = (lp - lm) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 3-layer net with <= 50 weights.
        let net = random_net(&[3, 4, 3], 17);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<f64> = (0..15).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let batch = Batch::new(Matrix::from_vec(5, 3, data), vec![0, 1, 2, 1, 0]).unwrap();
        let (_, analytic) = loss_and_gradient(&net, &batch).unwrap();
        let numeric = finite_diff_grad(&net, &batch, 1e-5);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            for (x, y) in a.data().iter().zip(n.data().iter()) {
                assert!(
                    (x - y).abs() <= 1e-6,
                    "gradient deviates: analytic {x} vs numeric {y}"
                );
            }
        }
    }

    #[test]
    fn path_norm_line_graph() {
        let net = line_net(2.0, 3.0);
        let pn = path_norm(&net);
        assert!((pn * pn - 36.0).abs() < 1e-12);
    }

    #[test]
    fn path_norm_zero_net() {
        assert_eq!(path_norm(&FeedForwardNet::zeros(vec![2, 3, 2])), 0.0);
    }

    #[test]
    fn path_norm_matches_enumeration() {
        use crate::harness::oracle::brute_force_path_norm;
        for seed in 0..100 {
            let sizes = match seed % 4 {
                0 => vec![2, 2, 1],
                1 => vec![3, 4, 2],
                2 => vec![2, 3, 3, 2],
                _ => vec![4, 4, 4, 4],
            };
            let net = random_net(&sizes, seed);
            let sq = brute_force_path_norm(&net);
            let pn = path_norm(&net);
            assert!(
                (pn * pn - sq).abs() <= 1e-10 * sq.max(1e-300),
                "DP {} vs enumeration {}",
                pn * pn,
                sq
            );
        }
    }

    #[test]
    fn gammas_line_graph() {
        let net = line_net(2.0, 3.0);
        let g = compute_gammas(&net);
        assert_eq!(g.gamma_edge(0), vec![9.0]); // excludes own weight: w2^2
        assert_eq!(g.gamma_edge(1), vec![4.0]); // w1^2
    }

    #[test]
    fn gammas_zero_net() {
        let g = compute_gammas(&FeedForwardNet::zeros(vec![2, 2, 2]));
        assert!(g.gamma_edge(0).iter().all(|&x| x == 0.0));
        assert!(g.gamma_edge(1).iter().all(|&x| x == 0.0));
        // Single weight layer: every edge has gamma 1 (empty products).
        let g1 = compute_gammas(&FeedForwardNet::zeros(vec![2, 3]));
        assert!(g1.gamma_edge(0).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn gamma_layer_identity() {
        for seed in 0..100 {
            let net = random_net(&[2, 3, 2], seed + 1000);
            let pn_sq = path_norm(&net).powi(2);
            let g = compute_gammas(&net);
            for j in 0..net.depth() {
                let via_layer = g.path_norm_sq_via_layer(&net, j);
                assert!(
                    (via_layer - pn_sq).abs() <= 1e-10 * pn_sq.max(1e-300),
                    "layer {j}: {via_layer} vs {pn_sq}"
                );
            }
        }
    }

    #[test]
    fn rescale_identity_when_c_is_one() {
        let net = random_net(&[2, 3, 2], 9);
        let scaled = rescale_node(&net, 1, 0, 1.0).unwrap();
        assert_eq!(net, scaled);
    }

    #[test]
    fn rescale_rejects_non_hidden_and_bad_scale() {
        let net = random_net(&[2, 3, 2], 9);
        assert!(matches!(
            rescale_node(&net, 0, 0, 2.0),
            Err(NetworkError::NotHidden { .. })
        ));
        assert!(matches!(
            rescale_node(&net, 2, 0, 2.0),
            Err(NetworkError::NotHidden { .. })
        ));
        assert!(matches!(
            rescale_node(&net, 1, 0, 0.0),
            Err(NetworkError::BadScale(_))
        ));
        assert!(matches!(
            rescale_node(&net, 1, 0, -1.0),
            Err(NetworkError::BadScale(_))
        ));
    }

    #[test]
    fn rescale_preserves_outputs_and_path_norm() {
        let net = random_net(&[3, 5, 4, 2], 31);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for &c in &[0.5, 2.0, 10.0] {
            let scaled = rescale_node(&net, 1, 2, c).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let b = Batch::new(Matrix::from_vec(1, 3, x), vec![0]).unwrap();
                let a = forward(&net, &b).unwrap();
                let s = forward(&scaled, &b).unwrap();
                for (x, y) in a.last().unwrap().data().iter().zip(s.last().unwrap().data()) {
                    assert!((x - y).abs() < 1e-9, "forward changed under rescale");
                }
            }
            let pn0 = path_norm(&net);
            let pn1 = path_norm(&scaled);
            assert!((pn0 - pn1).abs() <= 1e-9 * pn0.max(1e-300));
        }
    }

    #[test]
    fn incidence_line_graph() {
        let net = line_net(1.0, 1.0);
        let inc = incidence_matrix(&net);
        let dense = inc.to_dense();
        assert_eq!(dense.rows(), 3);
        assert_eq!(dense.cols(), 2);
        assert_eq!(dense.data(), &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn incidence_columns_sum_to_zero() {
        let net = random_net(&[2, 2, 1], 4);
        let inc = incidence_matrix(&net);
        assert_eq!(inc.num_nodes(), 5);
        assert_eq!(inc.num_edges(), 6);
        let dense = inc.to_dense();
        for e in 0..dense.cols() {
            let col_sum: f64 = (0..dense.rows()).map(|i| dense[(i, e)]).sum();
            assert_eq!(col_sum, 0.0);
        }
    }

    #[test]
    fn net_round_trips_through_text_file() {
        let net = random_net(&[3, 4, 2], 55);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        save_net(&net, &path).unwrap();
        let loaded = load_net(&path).unwrap();
        assert_eq!(net, loaded);
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "layers: 2 2\nweights[0]:\n1.0\n").unwrap();
        assert!(matches!(load_net(&path), Err(NetworkError::Parse(_))));
    }
}
