//! Exact HDBSCAN.
//!
//! Core distances at `min_samples` (the point itself counts as its first
//! neighbour), Prim's minimum spanning tree over mutual-reachability
//! distances with an O(n²) scan, single-linkage merge tree, condensed tree at
//! `min_cluster_size`, then excess-of-mass selection with the root excluded.
//! When nothing is selected and there are at least `min_cluster_size` points,
//! every point forms one cluster.

use crate::cluster::{canonical_labels, validate_points, ClusterAlgo, ClusterModel, ClusterParams};
use crate::corpus::EmbeddingMatrix;
use crate::error::Result;
use crate::par::{self, Exec};
use crate::vector;

/// Below this many points the per-iteration Prim scans stay on one thread.
const PAR_PRIM_THRESHOLD: usize = 512;

pub fn hdbscan(points: &EmbeddingMatrix, params: &ClusterParams) -> Result<ClusterModel> {
    hdbscan_with(points, params, Exec::default())
}

pub fn hdbscan_with(points: &EmbeddingMatrix, params: &ClusterParams, exec: Exec) -> Result<ClusterModel> {
    params.validate()?;
    validate_points(points)?;
    let labels = hdbscan_labels(points, params.min_cluster_size, params.effective_min_samples(), exec);
    Ok(ClusterModel::from_labels(ClusterAlgo::Hdbscan, params.clone(), points, &labels))
}

/// Per-row labels (`None` = noise), numbered by first appearance.
pub fn hdbscan_labels(
    points: &EmbeddingMatrix,
    min_cluster_size: usize,
    min_samples: usize,
    exec: Exec,
) -> Vec<Option<usize>> {
    let n = points.count();
    if n == 0 || n < min_cluster_size {
        return vec![None; n];
    }
    let k = min_samples.clamp(1, n);
    let core = core_distances(points, k, exec);
    let mst = prim_mst(points, &core, exec);
    let merges = single_linkage(n, mst);
    let tree = CondensedTree::build(n, &merges, min_cluster_size);
    let selected = tree.select_eom();
    let raw = tree.label_points(&selected);
    if raw.iter().all(Option::is_none) {
        return vec![Some(0); n];
    }
    canonical_labels(&raw)
}

fn core_distances(points: &EmbeddingMatrix, k: usize, exec: Exec) -> Vec<f64> {
    let n = points.count();
    par::map_range(exec, n, |i| {
        let a = points.row(i);
        let mut d: Vec<f64> = (0..n).map(|j| vector::euclidean(a, points.row(j))).collect();
        let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
        *kth
    })
}

#[derive(Clone, Copy)]
struct Slot {
    best: f64,
    from: usize,
    done: bool,
}

/// Prim's algorithm from vertex 0. Ties pick the lowest vertex index.
fn prim_mst(points: &EmbeddingMatrix, core: &[f64], exec: Exec) -> Vec<(usize, usize, f64)> {
    let n = points.count();
    let exec = if n >= PAR_PRIM_THRESHOLD { exec } else { Exec::Sequential };
    let mut slots = vec![
        Slot {
            best: f64::INFINITY,
            from: 0,
            done: false,
        };
        n
    ];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0usize;
    slots[0].done = true;
    for _ in 1..n {
        let cur_row = points.row(current);
        let cur_core = core[current];
        par::for_each_mut(exec, &mut slots, |j, s| {
            if s.done {
                return;
            }
            let d = vector::euclidean(cur_row, points.row(j))
                .max(cur_core)
                .max(core[j]);
            if d < s.best {
                s.best = d;
                s.from = current;
            }
        });
        let slots_ref = &slots;
        let (next, w) = par::argmin(exec, n, |j| (!slots_ref[j].done).then_some(slots_ref[j].best))
            .expect("graph is complete");
        edges.push((slots[next].from, next, w));
        slots[next].done = true;
        current = next;
    }
    edges
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

/// Kruskal-style merge tree over the MST. Node `n + i` is the i-th merge.
fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    let mut size = vec![1usize; total];
    let mut merges = Vec::with_capacity(n - 1);
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let next = parent[x];
            parent[x] = root;
            x = next;
        }
        root
    }
    for (a, b, d) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + merges.len();
        size[node] = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        merges.push(Merge {
            left: ra,
            right: rb,
            dist: d,
            size: size[node],
        });
    }
    merges
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Child {
    Point(usize),
    Cluster(usize),
}

#[derive(Debug, Clone, Copy)]
struct CondensedEdge {
    parent: usize,
    child: Child,
    lambda: f64,
    size: usize,
}

/// Condensed cluster tree. Cluster 0 is the root.
struct CondensedTree {
    n_points: usize,
    n_clusters: usize,
    edges: Vec<CondensedEdge>,
}

fn lambda_of(dist: f64) -> f64 {
    if dist > 0.0 {
        1.0 / dist
    } else {
        f64::INFINITY
    }
}

fn bfs(merges: &[Merge], n: usize, root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut frontier = vec![root];
    while !frontier.is_empty() {
        out.extend_from_slice(&frontier);
        frontier = frontier
            .iter()
            .filter(|&&x| x >= n)
            .flat_map(|&x| [merges[x - n].left, merges[x - n].right])
            .collect();
    }
    out
}

impl CondensedTree {
    fn build(n: usize, merges: &[Merge], min_cluster_size: usize) -> Self {
        let root = 2 * n - 2;
        let size_of = |x: usize| if x < n { 1 } else { merges[x - n].size };
        let mut relabel = vec![0usize; 2 * n - 1];
        let mut ignore = vec![false; 2 * n - 1];
        let mut next_label = 1usize;
        let mut edges = Vec::with_capacity(2 * n);

        for node in bfs(merges, n, root) {
            if node < n || ignore[node] {
                continue;
            }
            let m = merges[node - n];
            let lambda = lambda_of(m.dist);
            let (lc, rc) = (size_of(m.left), size_of(m.right));
            let parent = relabel[node];
            let spill = |child: usize, edges: &mut Vec<CondensedEdge>, ignore: &mut [bool]| {
                for sub in bfs(merges, n, child) {
                    if sub < n {
                        edges.push(CondensedEdge {
                            parent,
                            child: Child::Point(sub),
                            lambda,
                            size: 1,
                        });
                    }
                    ignore[sub] = true;
                }
            };
            if lc >= min_cluster_size && rc >= min_cluster_size {
                for (child, count) in [(m.left, lc), (m.right, rc)] {
                    relabel[child] = next_label;
                    edges.push(CondensedEdge {
                        parent,
                        child: Child::Cluster(next_label),
                        lambda,
                        size: count,
                    });
                    next_label += 1;
                }
            } else if lc < min_cluster_size && rc < min_cluster_size {
                spill(m.left, &mut edges, &mut ignore);
                spill(m.right, &mut edges, &mut ignore);
            } else if lc < min_cluster_size {
                relabel[m.right] = parent;
                spill(m.left, &mut edges, &mut ignore);
            } else {
                relabel[m.left] = parent;
                spill(m.right, &mut edges, &mut ignore);
            }
        }
        Self {
            n_points: n,
            n_clusters: next_label,
            edges,
        }
    }

    fn select_eom(&self) -> Vec<bool> {
        let k = self.n_clusters;
        let mut birth = vec![0.0f64; k];
        let mut children = vec![Vec::new(); k];
        for e in &self.edges {
            if let Child::Cluster(c) = e.child {
                birth[c] = e.lambda;
                children[e.parent].push(c);
            }
        }
        let mut stability = vec![0.0f64; k];
        for e in &self.edges {
            let b = birth[e.parent];
            let excess = if e.lambda == b { 0.0 } else { e.lambda - b };
            stability[e.parent] += excess * e.size as f64;
        }
        let mut selected = vec![false; k];
        for c in (1..k).rev() {
            let subtree: f64 = children[c].iter().map(|&ch| stability[ch]).sum();
            if subtree > stability[c] {
                stability[c] = subtree;
            } else {
                selected[c] = true;
                let mut stack = children[c].clone();
                while let Some(d) = stack.pop() {
                    selected[d] = false;
                    stack.extend_from_slice(&children[d]);
                }
            }
        }
        selected
    }

    /// Each point takes the nearest selected ancestor of the cluster it left.
    fn label_points(&self, selected: &[bool]) -> Vec<Option<usize>> {
        let mut cluster_parent = vec![None; self.n_clusters];
        let mut point_parent = vec![0usize; self.n_points];
        for e in &self.edges {
            match e.child {
                Child::Cluster(c) => cluster_parent[c] = Some(e.parent),
                Child::Point(p) => point_parent[p] = e.parent,
            }
        }
        point_parent
            .iter()
            .map(|&start| {
                let mut c = start;
                loop {
                    if selected[c] {
                        return Some(c);
                    }
                    c = cluster_parent[c]?;
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(centers: &[[f32; 2]], per: usize, radius: f32, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = EmbeddingMatrix::new(2);
        for (b, c) in centers.iter().enumerate() {
            for i in 0..per {
                let r = radius * rng.random::<f32>().sqrt();
                let t = rng.random::<f32>() * std::f32::consts::TAU;
                m.push(format!("b{b}_{i:03}"), &[c[0] + r * t.cos(), c[1] + r * t.sin()])
                    .unwrap();
            }
        }
        m
    }

    #[test]
    fn two_blobs_are_recovered() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 10.0]], 20, 0.1, 7);
        let labels = hdbscan_labels(&pts, 5, 5, Exec::Sequential);
        assert!(labels[..20].iter().all(|&l| l == Some(0)));
        assert!(labels[20..].iter().all(|&l| l == Some(1)));
    }

    #[test]
    fn fewer_points_than_min_cluster_size_are_all_noise() {
        let pts = blobs(&[[0.0, 0.0]], 3, 0.1, 1);
        assert_eq!(hdbscan_labels(&pts, 5, 5, Exec::Sequential), vec![None; 3]);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = EmbeddingMatrix::from_rows(2, (0..10).map(|i| (format!("p{i}"), vec![1.0, 1.0]))).unwrap();
        assert_eq!(hdbscan_labels(&pts, 5, 5, Exec::Sequential), vec![Some(0); 10]);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 250, 1.0, 3);
        assert_eq!(
            hdbscan_labels(&pts, 5, 5, Exec::Sequential),
            hdbscan_labels(&pts, 5, 5, Exec::Parallel)
        );
    }

    #[test]
    fn far_point_is_noise() {
        let mut pts = blobs(&[[0.0, 0.0], [10.0, 10.0]], 20, 0.1, 11);
        pts.push("far", &[100.0, -100.0]).unwrap();
        let labels = hdbscan_labels(&pts, 5, 5, Exec::Sequential);
        assert_eq!(labels[40], None);
        assert_eq!(labels.iter().flatten().max(), Some(&1));
    }

    #[test]
    fn mst_has_n_minus_one_edges_and_spans() {
        let pts = blobs(&[[0.0, 0.0]], 30, 1.0, 5);
        let core = core_distances(&pts, 3, Exec::Sequential);
        let mst = prim_mst(&pts, &core, Exec::Sequential);
        assert_eq!(mst.len(), 29);
        let merges = single_linkage(30, mst);
        assert_eq!(merges.last().unwrap().size, 30);
    }
}
