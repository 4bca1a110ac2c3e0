//! Shared test oracles.
//!
//! Two independent reference routes live here and are frozen: a 64-bit
//! reference network with central finite differences for gradient checking,
//! and a brute-force threshold-sweep clustering oracle. Neither shares code
//! with the library implementations they validate; they only agree on the
//! documented conventions (parameter layout, mutual reachability definition,
//! lambda cap, stability accounting, tie rules).

#![allow(dead_code)]

use rkd_core::nn::{MlpModel, Tensor};
use rkd_core::rng::stream;

use rand::Rng;

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle.
// ---------------------------------------------------------------------------

/// Reference network holding the same parameter values as an `MlpModel` but
/// evaluating everything in f64: ReLU hidden layers, raw logit outputs, the
/// canonical flat layout (per layer: row-major weights, then biases).
pub struct RefNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl RefNet {
    pub fn from_model(model: &MlpModel) -> RefNet {
        RefNet {
            sizes: model.layer_sizes().to_vec(),
            params: model.flatten().values().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn nudge(&mut self, idx: usize, delta: f64) {
        self.params[idx] += delta;
    }

    pub fn param(&self, idx: usize) -> f64 {
        self.params[idx]
    }

    /// Logits for one input row, and the smallest |pre-activation| seen on
    /// any hidden unit (for ReLU-kink screening).
    fn forward_row(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut act = x.to_vec();
        let mut offset = 0usize;
        let mut margin = f64::INFINITY;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0f64; fan_out];
            for o in 0..fan_out {
                let mut acc = b[o];
                for i in 0..fan_in {
                    acc += w[o * fan_in + i] * act[i];
                }
                z[o] = acc;
            }
            if l + 1 < layers {
                for &v in &z {
                    margin = margin.min(v.abs());
                }
                act = z.iter().map(|&v| v.max(0.0)).collect();
            } else {
                act = z;
            }
        }
        (act, margin)
    }

    /// Smallest |hidden pre-activation| across the batch.
    pub fn hidden_margin(&self, batch: &Tensor) -> f64 {
        let mut margin = f64::INFINITY;
        for row in batch.rows_iter() {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let (_, m) = self.forward_row(&x);
            margin = margin.min(m);
        }
        margin
    }

    pub fn ce_loss(&self, batch: &Tensor, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, &y) in batch.rows_iter().zip(labels) {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let (z, _) = self.forward_row(&x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[y];
        }
        total / batch.n_rows() as f64
    }

    pub fn kl_loss(&self, batch: &Tensor, teacher: &Tensor, temperature: f64) -> f64 {
        let mut total = 0.0;
        for (row, trow) in batch.rows_iter().zip(teacher.rows_iter()) {
            let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let (z, _) = self.forward_row(&x);
            let m = z.iter().map(|&v| v / temperature).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|&v| (v / temperature - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (c, &tv) in trow.iter().enumerate() {
                let tc = tv as f64;
                if tc > 0.0 {
                    let log_p = z[c] / temperature - m - sum.ln();
                    total += tc * (tc.ln() - log_p);
                }
            }
        }
        total / batch.n_rows() as f64
    }
}

/// Central finite difference of `eval` along parameter `idx`.
pub fn fd_gradient(net: &mut RefNet, idx: usize, mut eval: impl FnMut(&RefNet) -> f64) -> f64 {
    let h = 1e-5 * net.param(idx).abs().max(1.0);
    net.nudge(idx, h);
    let plus = eval(net);
    net.nudge(idx, -2.0 * h);
    let minus = eval(net);
    net.nudge(idx, h);
    (plus - minus) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// One random gradient-check instance: a small model, a batch, labels and a
/// valid teacher distribution. Instances whose hidden pre-activations sit
/// within 1e-3 of a ReLU kink are redrawn, since finite differences are
/// meaningless at non-differentiable points.
pub struct GradInstance {
    pub model: MlpModel,
    pub batch: Tensor,
    pub labels: Vec<usize>,
    pub teacher: Tensor,
    pub temperature: f32,
}

pub fn gen_grad_instance(seed: u64, index: u64) -> GradInstance {
    const SHAPES: &[&[usize]] = &[
        &[3, 5, 2],
        &[4, 8, 3],
        &[6, 10, 4],
        &[5, 7, 7, 3],
        &[2, 4, 2],
    ];
    for attempt in 0..200u64 {
        let tag = index * 1000 + attempt;
        let mut rng = stream(seed, "grad-instance", tag);
        let sizes = SHAPES[rng.random_range(0..SHAPES.len())];
        let model = rkd_core::nn::init_mlp(sizes, seed.wrapping_add(tag)).unwrap();
        let n = rng.random_range(1..=8usize);
        let d = sizes[0];
        let classes = *sizes.last().unwrap();
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let batch = Tensor::new(n, d, data).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut teacher = Vec::with_capacity(n * classes);
        for _ in 0..n {
            let raw: Vec<f64> = (0..classes)
                .map(|_| -rng.random_range(1e-9f64..1.0).ln())
                .collect();
            let sum: f64 = raw.iter().sum();
            teacher.extend(raw.iter().map(|&v| (v / sum) as f32));
        }
        let teacher = Tensor::new(n, classes, teacher).unwrap();
        let temperature = [1.0f32, 2.0, 4.0][rng.random_range(0..3)];

        let refnet = RefNet::from_model(&model);
        if refnet.hidden_margin(&batch) > 1e-3 {
            return GradInstance {
                model,
                batch,
                labels,
                teacher,
                temperature,
            };
        }
    }
    panic!("no instance with a safe ReLU margin after 200 attempts");
}

/// Worst relative error between analytic and finite-difference gradients for
/// both losses on one instance.
pub fn check_instance_gradients(inst: &GradInstance) -> (f64, f64) {
    let mut net = RefNet::from_model(&inst.model);

    let analytic_ce =
        rkd_core::nn::cross_entropy_backward(&inst.model, &inst.batch, &inst.labels).unwrap();
    let mut worst_ce = 0.0f64;
    for j in 0..net.param_count() {
        let fd = fd_gradient(&mut net, j, |n| n.ce_loss(&inst.batch, &inst.labels));
        worst_ce = worst_ce.max(relative_error(analytic_ce.values[j] as f64, fd));
    }

    let analytic_kl = rkd_core::nn::kl_divergence_backward(
        &inst.model,
        &inst.batch,
        &inst.teacher,
        inst.temperature,
    )
    .unwrap();
    let mut worst_kl = 0.0f64;
    let t = inst.temperature as f64;
    for j in 0..net.param_count() {
        let fd = fd_gradient(&mut net, j, |n| n.kl_loss(&inst.batch, &inst.teacher, t));
        worst_kl = worst_kl.max(relative_error(analytic_kl.values[j] as f64, fd));
    }
    (worst_ce, worst_kl)
}

// ---------------------------------------------------------------------------
// Brute-force clustering oracle.
// ---------------------------------------------------------------------------
//
// Shared conventions with the library implementation (documented contract,
// not shared code):
//   - core distance: distance to the (Q-1)-th nearest other point;
//   - d_mr(a,b) = max(core_a, core_b, |a-b|), f64 from the f32 inputs;
//   - lambda(t) = 1/t for t > 0; lambda(0) = cap where cap = 2 / d_min over
//     the positive pairwise mutual reachability values (1.0 if none exist);
//   - a cluster's members are the points of its birth component;
//   - root of the hierarchy is a candidate cluster (born at lambda = 0);
//   - child clusters need >= Q points; stability is the sum over points of
//     (exit lambda - birth lambda), accumulated from the top of the
//     hierarchy downward;
//   - Excess of Mass: children replace the parent only when their combined
//     value is strictly greater;
//   - fewer than Q points in total: everything is noise;
//   - final labels are renumbered 0,1,... in order of first point occurrence.
//
// The oracle never builds an MST or a dendrogram: connectivity is decided by
// breadth-first search over the full threshold graph at every step.

struct OracleCluster {
    birth_points: Vec<usize>,
    stability: f64,
    children: Vec<usize>,
}

pub fn oracle_hdbscan_1d(scores: &[f32], min_cluster_size: usize) -> Vec<i32> {
    assert!(min_cluster_size >= 2);
    let n = scores.len();
    if n < min_cluster_size {
        return vec![-1; n];
    }
    let pts: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
    let dmr = mutual_reachability(&pts, min_cluster_size);
    let cap = lambda_cap(&dmr);

    let mut clusters: Vec<OracleCluster> = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    let root = condense(all, 0.0, &dmr, min_cluster_size, cap, &mut clusters);
    let (_, selected) = eom_select(&clusters, root);

    labels_from_selection(n, &clusters, &selected)
}

fn mutual_reachability(pts: &[f64], q: usize) -> Vec<Vec<f64>> {
    let n = pts.len();
    let m = q - 1; // nearest-other rank for the core distance
    let mut core = vec![0.0f64; n];
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (pts[i] - pts[j]).abs())
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        core[i] = d[m - 1];
    }
    let mut dmr = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                dmr[i][j] = core[i].max(core[j]).max((pts[i] - pts[j]).abs());
            }
        }
    }
    dmr
}

fn lambda_cap(dmr: &[Vec<f64>]) -> f64 {
    let mut min_pos = f64::INFINITY;
    for (i, row) in dmr.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            if j > i && d > 0.0 {
                min_pos = min_pos.min(d);
            }
        }
    }
    if min_pos.is_finite() {
        2.0 / min_pos
    } else {
        1.0
    }
}

fn lambda_at(height: f64, cap: f64) -> f64 {
    if height > 0.0 {
        1.0 / height
    } else {
        cap
    }
}

/// Components of `pts` keeping only edges with d_mr strictly below `limit`.
fn components_below(pts: &[usize], limit: f64, dmr: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; pts.len()];
    let mut out = Vec::new();
    for start in 0..pts.len() {
        if seen[start] {
            continue;
        }
        let mut comp = vec![pts[start]];
        let mut queue = vec![start];
        seen[start] = true;
        while let Some(u) = queue.pop() {
            for v in 0..pts.len() {
                if !seen[v] && dmr[pts[u]][pts[v]] < limit {
                    seen[v] = true;
                    comp.push(pts[v]);
                    queue.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Smallest pairwise d_mr value at which `pts` forms a single component.
fn connectivity_threshold(pts: &[usize], dmr: &[Vec<f64>]) -> f64 {
    let mut candidates: Vec<f64> = Vec::new();
    for (a, &i) in pts.iter().enumerate() {
        for &j in pts.iter().skip(a + 1) {
            candidates.push(dmr[i][j]);
        }
    }
    candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());
    candidates.dedup();
    for &t in &candidates {
        if connected_at(pts, t, dmr) {
            return t;
        }
    }
    unreachable!("the largest pairwise value always connects the set");
}

fn connected_at(pts: &[usize], t: f64, dmr: &[Vec<f64>]) -> bool {
    let mut seen = vec![false; pts.len()];
    let mut queue = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop() {
        for v in 0..pts.len() {
            if !seen[v] && dmr[pts[u]][pts[v]] <= t {
                seen[v] = true;
                count += 1;
                queue.push(v);
            }
        }
    }
    count == pts.len()
}

/// Walks one cluster from its birth component downward, accumulating
/// stability and recursing into true splits. Returns the cluster index.
fn condense(
    birth_points: Vec<usize>,
    lambda_birth: f64,
    dmr: &[Vec<f64>],
    q: usize,
    cap: f64,
    clusters: &mut Vec<OracleCluster>,
) -> usize {
    let idx = clusters.len();
    clusters.push(OracleCluster {
        birth_points: birth_points.clone(),
        stability: 0.0,
        children: Vec::new(),
    });

    let mut current = birth_points;
    loop {
        let h = connectivity_threshold(&current, dmr);
        let lambda_split = lambda_at(h, cap);
        let parts = components_below(&current, h, dmr);
        let mut big: Vec<Vec<usize>> = parts.into_iter().filter(|p| p.len() >= q).collect();
        match big.len() {
            0 => {
                // The whole component dissolves here.
                clusters[idx].stability +=
                    current.len() as f64 * (lambda_split - lambda_birth);
                break;
            }
            1 => {
                // The cluster persists through the shrink; stragglers exit.
                let keep = big.pop().unwrap();
                clusters[idx].stability +=
                    (current.len() - keep.len()) as f64 * (lambda_split - lambda_birth);
                current = keep;
            }
            _ => {
                // True split: this cluster ends, each big part is born.
                clusters[idx].stability +=
                    current.len() as f64 * (lambda_split - lambda_birth);
                let children: Vec<usize> = big
                    .into_iter()
                    .map(|p| condense(p, lambda_split, dmr, q, cap, clusters))
                    .collect();
                clusters[idx].children = children;
                break;
            }
        }
    }
    idx
}

/// Excess of Mass: returns (value, selected cluster indices) for the subtree.
/// Children win only with strictly greater combined value.
fn eom_select(clusters: &[OracleCluster], idx: usize) -> (f64, Vec<usize>) {
    let node = &clusters[idx];
    if node.children.is_empty() {
        return (node.stability, vec![idx]);
    }
    let mut child_value = 0.0f64;
    let mut child_sel = Vec::new();
    for &c in &node.children {
        let (v, s) = eom_select(clusters, c);
        child_value += v;
        child_sel.extend(s);
    }
    if child_value > node.stability {
        (child_value, child_sel)
    } else {
        (node.stability, vec![idx])
    }
}

fn labels_from_selection(n: usize, clusters: &[OracleCluster], selected: &[usize]) -> Vec<i32> {
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for &c in selected {
        for &p in &clusters[c].birth_points {
            owner[p] = Some(c);
        }
    }
    let mut next = 0i32;
    let mut rename: std::collections::HashMap<usize, i32> = std::collections::HashMap::new();
    let mut labels = vec![-1i32; n];
    for p in 0..n {
        if let Some(c) = owner[p] {
            let id = *rename.entry(c).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
            labels[p] = id;
        }
    }
    labels
}

/// Canonical renumbering so two labelings can be compared up to renaming.
pub fn canonical_labels(labels: &[i32]) -> Vec<i32> {
    let mut rename: std::collections::HashMap<i32, i32> = std::collections::HashMap::new();
    let mut next = 0i32;
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                *rename.entry(l).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            }
        })
        .collect()
}

/// Random score sets for the equivalence sweep: mixtures of tight groups,
/// uniform spread, and exact duplicates, the shapes the defense actually sees.
pub fn gen_score_set(seed: u64, index: u64) -> Vec<f32> {
    let mut rng = stream(seed, "score-set", index);
    let n = rng.random_range(2..=8usize);
    let style = rng.random_range(0..4u32);
    (0..n)
        .map(|_| match style {
            0 => rng.random_range(-1.0f32..1.0),
            1 => {
                // Two tight groups.
                let center = if rng.random_range(0..2u32) == 0 { 0.9 } else { 0.1 };
                center + rng.random_range(-0.02f32..0.02)
            }
            2 => {
                // Few distinct values, duplicates likely.
                let v = [0.0f32, 0.25, 0.5, 0.75, 1.0];
                v[rng.random_range(0..v.len())]
            }
            _ => rng.random_range(0.0f32..0.05),
        })
        .collect()
}
