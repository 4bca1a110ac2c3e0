//! HDBSCAN over a 1-D score set.
//!
//! Pipeline: mutual reachability distances -> exact Prim MST -> single
//! linkage dendrogram -> condensed cluster tree -> Excess of Mass selection.
//!
//! Conventions (shared with the brute-force test oracle):
//!   - core distance: distance to the (min_cluster_size - 1)-th nearest
//!     other point; d_mr(a,b) = max(core_a, core_b, |a - b|), all in f64;
//!   - merges at exactly equal heights collapse into one multiway dendrogram
//!     node, so the hierarchy is permutation-invariant even under ties;
//!   - lambda(t) = 1/t, and lambda at height 0 is 2 / (smallest positive
//!     pairwise d_mr), or 1.0 when every pair coincides;
//!   - the hierarchy root is a candidate cluster born at lambda = 0, so a
//!     homogeneous cohort yields one all-points cluster instead of noise;
//!   - a cluster's members are the points of its birth component;
//!   - stability = sum over points of (exit lambda - birth lambda),
//!     accumulated walking the hierarchy downward;
//!   - Excess of Mass keeps the parent unless the children's combined value
//!     is strictly greater;
//!   - fewer than min_cluster_size points: all noise;
//!   - labels are renumbered contiguously by first point occurrence.

use crate::error::{Error, Result};

/// Cluster labels for each score; -1 marks noise.
pub fn hdbscan_1d(scores: &[f32], min_cluster_size: usize) -> Result<Vec<i32>> {
    if min_cluster_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "min_cluster_size must be at least 2, got {min_cluster_size}"
        )));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite score {bad}"
        )));
    }
    let n = scores.len();
    if n < min_cluster_size {
        return Ok(vec![-1; n]);
    }

    let dmr = mutual_reachability(scores, min_cluster_size);
    let cap = lambda_cap(&dmr, n);
    let edges = prim_mst(&dmr, n);
    let (nodes, root) = build_dendrogram(n, edges);
    let mut tree = Vec::new();
    let root_cluster = condense(&nodes, root, 0.0, min_cluster_size, cap, &mut tree);
    let selected = eom_select(&tree, root_cluster);

    let mut labels = vec![-1i32; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for &c in &selected {
        for &p in &tree[c].birth_points {
            owner[p] = Some(c);
        }
    }
    let mut rename: std::collections::HashMap<usize, i32> = std::collections::HashMap::new();
    let mut next = 0i32;
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
    Ok(labels)
}

/// Flat n x n mutual reachability matrix.
fn mutual_reachability(scores: &[f32], q: usize) -> Vec<f64> {
    let n = scores.len();
    let pts: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
    let rank = q - 1;
    let mut core = vec![0.0f64; n];
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (pts[i] - pts[j]).abs())
            .collect();
        d.sort_by(f64::total_cmp);
        core[i] = d[rank - 1];
    }
    let mut dmr = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = core[i].max(core[j]).max((pts[i] - pts[j]).abs());
            dmr[i * n + j] = d;
            dmr[j * n + i] = d;
        }
    }
    dmr
}

/// Lambda assigned to height zero: twice the largest finite lambda any pair
/// can produce, so zero-height merges always dominate, or 1.0 for a fully
/// degenerate (all duplicates) set.
fn lambda_cap(dmr: &[f64], n: usize) -> f64 {
    let mut min_pos = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dmr[i * n + j];
            if d > 0.0 {
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

/// Exact O(n^2) Prim over the dense matrix. Ties pick the lowest-index
/// frontier point, which is deterministic but irrelevant to the final
/// labels: equal-height merges collapse into one dendrogram node anyway.
fn prim_mst(dmr: &[f64], n: usize) -> Vec<(f64, usize, usize)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = dmr[j];
        from[j] = 0;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut u = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (u == usize::MAX || best[j] < best[u]) {
                u = j;
            }
        }
        edges.push((best[u], from[u], u));
        in_tree[u] = true;
        for j in 0..n {
            if !in_tree[j] && dmr[u * n + j] < best[j] {
                best[j] = dmr[u * n + j];
                from[j] = u;
            }
        }
    }
    edges
}

struct DendroNode {
    /// Merge height; leaves carry 0 but are never read as internal nodes.
    height: f64,
    children: Vec<usize>,
    /// Sorted point set of the component this node represents.
    points: Vec<usize>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        self.parent[rb] = ra;
        ra
    }
}

/// Single-linkage dendrogram with multiway nodes: all MST edges of exactly
/// equal weight merge in one step, producing one node per resulting
/// component. Returns (nodes, root id); leaves occupy ids 0..n.
fn build_dendrogram(n: usize, mut edges: Vec<(f64, usize, usize)>) -> (Vec<DendroNode>, usize) {
    let mut nodes: Vec<DendroNode> = (0..n)
        .map(|p| DendroNode {
            height: 0.0,
            children: Vec::new(),
            points: vec![p],
        })
        .collect();
    if n == 1 {
        return (nodes, 0);
    }
    edges.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));

    let mut uf = UnionFind::new(n);
    // Current dendrogram node of each union-find root.
    let mut node_of: Vec<usize> = (0..n).collect();

    let mut i = 0usize;
    while i < edges.len() {
        let w = edges[i].0;
        let mut level = Vec::new();
        while i < edges.len() && edges[i].0 == w {
            level.push(edges[i]);
            i += 1;
        }
        // Roots (and their nodes) present before this level merges anything.
        let mut pre: Vec<(usize, usize)> = Vec::new(); // (pre_root, node id)
        for &(_, a, b) in &level {
            for x in [a, b] {
                let r = uf.find(x);
                if !pre.iter().any(|&(pr, _)| pr == r) {
                    pre.push((r, node_of[r]));
                }
            }
        }
        for &(_, a, b) in &level {
            uf.union(a, b);
        }
        // Group the pre-level nodes by the component they ended up in.
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new(); // (post_root, node ids)
        for &(pre_root, node) in &pre {
            let post = uf.find(pre_root);
            match groups.iter_mut().find(|(r, _)| *r == post) {
                Some((_, list)) => list.push(node),
                None => groups.push((post, vec![node])),
            }
        }
        for (post_root, mut children) in groups {
            debug_assert!(children.len() >= 2, "an MST edge always joins two components");
            children.sort_unstable();
            let mut points = Vec::new();
            for &c in &children {
                points.extend_from_slice(&nodes[c].points);
            }
            points.sort_unstable();
            let id = nodes.len();
            nodes.push(DendroNode {
                height: w,
                children,
                points,
            });
            node_of[post_root] = id;
        }
    }
    let root = node_of[uf.find(0)];
    (nodes, root)
}

struct Cluster {
    birth_points: Vec<usize>,
    stability: f64,
    children: Vec<usize>,
}

/// Condensed-tree walk from one dendrogram node. The cluster keeps its
/// birth lambda while it merely sheds sub-Q fragments; it ends at a true
/// split (two or more fragments of size >= Q) or when everything dissolves.
fn condense(
    nodes: &[DendroNode],
    node_id: usize,
    lambda_birth: f64,
    q: usize,
    cap: f64,
    tree: &mut Vec<Cluster>,
) -> usize {
    let idx = tree.len();
    tree.push(Cluster {
        birth_points: nodes[node_id].points.clone(),
        stability: 0.0,
        children: Vec::new(),
    });

    let mut current = node_id;
    loop {
        let node = &nodes[current];
        let size = node.points.len();
        let lambda_split = lambda_at(node.height, cap);
        let big: Vec<usize> = node
            .children
            .iter()
            .copied()
            .filter(|&c| nodes[c].points.len() >= q)
            .collect();
        match big.len() {
            0 => {
                tree[idx].stability += size as f64 * (lambda_split - lambda_birth);
                break;
            }
            1 => {
                let keep = big[0];
                let kept = nodes[keep].points.len();
                tree[idx].stability += (size - kept) as f64 * (lambda_split - lambda_birth);
                current = keep;
            }
            _ => {
                tree[idx].stability += size as f64 * (lambda_split - lambda_birth);
                let children: Vec<usize> = big
                    .into_iter()
                    .map(|c| condense(nodes, c, lambda_split, q, cap, tree))
                    .collect();
                tree[idx].children = children;
                break;
            }
        }
    }
    idx
}

/// Excess of Mass, bottom-up. Returns the selected cluster indices under
/// `idx`; the parent wins unless its children are strictly more stable.
fn eom_select(tree: &[Cluster], idx: usize) -> Vec<usize> {
    fn walk(tree: &[Cluster], idx: usize) -> (f64, Vec<usize>) {
        let node = &tree[idx];
        if node.children.is_empty() {
            return (node.stability, vec![idx]);
        }
        let mut value = 0.0f64;
        let mut sel = Vec::new();
        for &c in &node.children {
            let (v, s) = walk(tree, c);
            value += v;
            sel.extend(s);
        }
        if value > node.stability {
            (value, sel)
        } else {
            (node.stability, vec![idx])
        }
    }
    walk(tree, idx).1
}
