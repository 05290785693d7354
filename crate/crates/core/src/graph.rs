//! Pair graphs over the image collection and kinematic camera trees.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::retrieval::SimilarityMatrix;

/// Undirected pair graph. Edges are stored as `(a, b)` with `a < b`, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneGraph {
    pub n: usize,
    pub keyframes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl SceneGraph {
    pub fn new(n: usize, keyframes: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::Invalid(alloc::format!("invalid edge ({a}, {b}) for {n} images")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if keyframes.iter().any(|&k| k >= n) {
            return Err(Error::Invalid("keyframe id out of range".into()));
        }
        Ok(SceneGraph {
            n,
            keyframes,
            edges: set.into_iter().collect(),
        })
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Component label per node.
    pub fn components(&self) -> Vec<usize> {
        components_of(self.n, &self.edges)
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.components().iter().all(|&c| c == 0)
    }

    /// Edges incident to `node`.
    pub fn edges_at(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(move |&(a, b)| a == node || b == node)
    }
}

fn components_of(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Greedy farthest-point sampling under `d(i, j) = 1 - S_ij`.
///
/// The first keyframe minimizes the row sum of `S`; every later pick maximizes
/// its distance to the closest already chosen keyframe. Ties go to the lowest
/// id. Selecting every image returns them in ascending order.
pub fn select_keyframes_fps(s: &SimilarityMatrix, count: usize) -> Result<Vec<usize>> {
    let n = s.n();
    if count < 1 || count > n {
        return Err(Error::BadCount {
            got: count,
            min: 1,
            max: n,
        });
    }
    if count == n {
        return Ok((0..n).collect());
    }
    let mut seed = 0;
    let mut best = f64::INFINITY;
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| s.get(i, j)).sum();
        if sum < best {
            best = sum;
            seed = i;
        }
    }
    let mut chosen = vec![seed];
    let mut taken = vec![false; n];
    taken[seed] = true;
    let mut min_dist: Vec<f64> = (0..n).map(|j| 1.0 - s.get(seed, j)).collect();
    while chosen.len() < count {
        let mut pick = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for j in 0..n {
            if !taken[j] && min_dist[j] > far {
                far = min_dist[j];
                pick = j;
            }
        }
        taken[pick] = true;
        chosen.push(pick);
        for j in 0..n {
            min_dist[j] = min_dist[j].min(1.0 - s.get(pick, j));
        }
    }
    Ok(chosen)
}

/// Options for [`build_graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphParams {
    pub keyframes: usize,
    pub neighbors: usize,
    /// Restrict kNN candidates to non-keyframes.
    pub knn_exclude_keyframes: bool,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            keyframes: 20,
            neighbors: 10,
            knn_exclude_keyframes: false,
        }
    }
}

/// Keyframe clique plus, for every other image, its most similar keyframe and
/// its `k` most similar images. Disconnected results are repaired by adding
/// the highest-similarity cross-component edge until one component remains.
pub fn build_graph(s: &SimilarityMatrix, params: GraphParams) -> Result<SceneGraph> {
    let n = s.n();
    if n == 0 {
        return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
    }
    let keyframes = select_keyframes_fps(s, params.keyframes)?;
    let mut is_key = vec![false; n];
    for &k in &keyframes {
        is_key[k] = true;
    }
    let mut edges = BTreeSet::new();
    for (x, &a) in keyframes.iter().enumerate() {
        for &b in &keyframes[x + 1..] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    // ties -> lowest id: stable sort over ascending ids with descending score
    let ranked = |i: usize, filter: &dyn Fn(usize) -> bool| -> Vec<usize> {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i && filter(j)).collect();
        cand.sort_by(|&a, &b| s.get(i, b).partial_cmp(&s.get(i, a)).unwrap());
        cand
    };
    for i in 0..n {
        if is_key[i] {
            continue;
        }
        if let Some(&kf) = ranked(i, &|j| is_key[j]).first() {
            edges.insert((i.min(kf), i.max(kf)));
        }
        let knn = if params.knn_exclude_keyframes {
            ranked(i, &|j| !is_key[j])
        } else {
            ranked(i, &|_| true)
        };
        for &j in knn.iter().take(params.neighbors) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
    repair_connectivity(n, &mut edges, |a, b| s.get(a, b));
    SceneGraph::new(n, keyframes, edges)
}

/// Adds the best-scoring cross-component edge until the graph is connected.
fn repair_connectivity(n: usize, edges: &mut Vec<(usize, usize)>, score: impl Fn(usize, usize) -> f64) {
    loop {
        let comp = components_of(n, edges);
        if comp.iter().all(|&c| c == 0) {
            return;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in a + 1..n {
                if comp[a] == comp[b] {
                    continue;
                }
                let v = score(a, b);
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two components");
        edges.push((a, b));
    }
}

/// Every pair of images.
pub fn complete_graph(n: usize) -> SceneGraph {
    let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
    SceneGraph::new(n, (0..n).collect(), edges).expect("valid complete graph")
}

/// Connects each image to its `w` successors in input order.
pub fn local_window_graph(n: usize, w: usize) -> SceneGraph {
    let w = w.max(1);
    let edges = (0..n).flat_map(|a| (a + 1..n.min(a + w + 1)).map(move |b| (a, b)));
    SceneGraph::new(n, vec![0], edges).expect("valid window graph")
}

/// `edge_budget` distinct uniformly random pairs, then random repair edges
/// until connected.
pub fn random_graph(n: usize, edge_budget: usize, seed: u64) -> SceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_edges = n * n.saturating_sub(1) / 2;
    let mut set = BTreeSet::new();
    while set.len() < edge_budget.min(max_edges) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<(usize, usize)> = set.into_iter().collect();
    loop {
        let comp = components_of(n, &edges);
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if comp[a] != comp[b] {
            edges.push((a.min(b), a.max(b)));
        }
    }
    SceneGraph::new(n, vec![0], edges).expect("valid random graph")
}

/// How the kinematic tree is derived from pair statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeMode {
    Star,
    Mst,
    HclustSim,
    HclustCorr,
    /// Every camera is parametrized independently.
    None,
}

impl TreeMode {
    pub fn name(&self) -> &'static str {
        match self {
            TreeMode::Star => "star",
            TreeMode::Mst => "mst",
            TreeMode::HclustSim => "hclust-sim",
            TreeMode::HclustCorr => "hclust-corr",
            TreeMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "star" => TreeMode::Star,
            "mst" => TreeMode::Mst,
            "hclust-sim" => TreeMode::HclustSim,
            "hclust-corr" => TreeMode::HclustCorr,
            "none" => TreeMode::None,
            _ => return None,
        })
    }
}

/// Rooted camera tree. Each node stores a pose relative to its parent (the
/// root stores its absolute pose) and an optical-axis offset used by the
/// rotation-center reparametrization.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    root: usize,
    parent: Vec<Option<usize>>,
    stored: Vec<Pose>,
    offsets: Vec<f64>,
    mode: TreeMode,
}

impl KinematicTree {
    pub fn from_parts(root: usize, parent: Vec<Option<usize>>, stored: Vec<Pose>, offsets: Vec<f64>, mode: TreeMode) -> Result<Self> {
        let n = parent.len();
        if stored.len() != n || offsets.len() != n {
            return Err(Error::ShapeMismatch);
        }
        if n == 0 {
            return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
        }
        if mode == TreeMode::None {
            if parent.iter().any(|p| p.is_some()) {
                return Err(Error::Invalid("independent parametrization has no parents".into()));
            }
        } else {
            if root >= n {
                return Err(Error::MissingNode(root));
            }
            if parent[root].is_some() {
                return Err(Error::Invalid("root must not have a parent".into()));
            }
            for k in 0..n {
                let mut cur = k;
                let mut steps = 0;
                while let Some(p) = parent[cur] {
                    if p >= n {
                        return Err(Error::MissingNode(p));
                    }
                    cur = p;
                    steps += 1;
                    if steps > n {
                        return Err(Error::CycleDetected(k));
                    }
                }
                if cur != root {
                    return Err(Error::Invalid(alloc::format!("node {k} is not attached to root {root}")));
                }
            }
        }
        Ok(KinematicTree {
            root,
            parent,
            stored,
            offsets,
            mode,
        })
    }

    /// Tree with identity relative poses and zero offsets.
    pub fn with_parents(root: usize, parent: Vec<Option<usize>>, mode: TreeMode) -> Result<Self> {
        let n = parent.len();
        Self::from_parts(root, parent, vec![Pose::identity(); n], vec![0.0; n], mode)
    }

    pub fn independent(n: usize) -> Self {
        Self::with_parents(0, vec![None; n], TreeMode::None).expect("valid independent tree")
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn mode(&self) -> TreeMode {
        self.mode
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn stored_pose(&self, k: usize) -> &Pose {
        &self.stored[k]
    }

    pub fn set_stored_pose(&mut self, k: usize, pose: Pose) {
        self.stored[k] = pose;
    }

    pub fn axis_offset(&self, k: usize) -> f64 {
        self.offsets[k]
    }

    pub fn set_axis_offsets(&mut self, offsets: Vec<f64>) {
        assert_eq!(offsets.len(), self.len());
        self.offsets = offsets;
    }

    /// Directed `(child, parent)` edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
            .collect()
    }

    /// Node order in which every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut children = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (c, p) in self.parent.iter().enumerate() {
            match p {
                Some(p) => children[*p].push(c),
                None => roots.push(c),
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue: VecDeque<usize> = roots.into();
        while let Some(u) = queue.pop_front() {
            order.push(u);
            queue.extend(children[u].iter().copied());
        }
        order
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        (0..self.len())
            .map(|mut k| {
                let mut d = 0;
                while let Some(p) = self.parent[k] {
                    k = p;
                    d += 1;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }
}

/// Builds the camera tree from weighted pairs `(a, b, weight)`.
///
/// `star` and `mst` root the tree at the graph's first keyframe. The
/// hierarchical modes merge, at each step, the two clusters joined by the
/// largest total weight (ties to the lowest representative pair); the
/// representative of the second cluster becomes a child of the first one's,
/// where the first cluster is the one holding the lower representative id.
pub fn build_kinematic_tree(graph: &SceneGraph, pair_stats: &[(usize, usize, f64)], mode: TreeMode) -> Result<KinematicTree> {
    let n = graph.n;
    let root = graph.keyframes.first().copied().unwrap_or(0);
    match mode {
        TreeMode::None => Ok(KinematicTree::independent(n)),
        TreeMode::Star => {
            let parent = (0..n).map(|k| if k == root { None } else { Some(root) }).collect();
            KinematicTree::with_parents(root, parent, mode)
        }
        TreeMode::Mst => {
            let parent = max_spanning_tree(n, pair_stats, root)?;
            KinematicTree::with_parents(root, parent, mode)
        }
        TreeMode::HclustSim | TreeMode::HclustCorr => {
            let (root, parent) = hierarchical_tree(n, pair_stats)?;
            KinematicTree::with_parents(root, parent, mode)
        }
    }
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

fn max_spanning_tree(n: usize, stats: &[(usize, usize, f64)], root: usize) -> Result<Vec<Option<usize>>> {
    let mut edges: Vec<(usize, usize, f64)> = stats.iter().map(|&(a, b, w)| (a.min(b), a.max(b), w)).filter(|e| e.0 != e.1).collect();
    edges.sort_by(|x, y| y.2.partial_cmp(&x.2).unwrap().then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut uf: Vec<usize> = (0..n).collect();
    let mut adj = vec![Vec::new(); n];
    let mut used = 0;
    for (a, b, _) in edges {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            adj[a].push(b);
            adj[b].push(a);
            used += 1;
        }
    }
    if used + 1 != n {
        return Err(Error::Disconnected);
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let mut next = adj[u].clone();
        next.sort_unstable();
        for v in next {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    Ok(parent)
}

fn hierarchical_tree(n: usize, stats: &[(usize, usize, f64)]) -> Result<(usize, Vec<Option<usize>>)> {
    // clusters are keyed by their representative, which is always the lowest
    // member id
    let mut weight: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(a, b, w) in stats {
        if a != b {
            *weight.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    let mut alive: BTreeSet<usize> = (0..n).collect();
    let mut parent = vec![None; n];
    while alive.len() > 1 {
        let mut best: Option<((usize, usize), f64)> = None;
        for (&key, &w) in &weight {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((key, w));
            }
        }
        let ((a, b), _) = best.ok_or(Error::Disconnected)?;
        parent[b] = Some(a);
        alive.remove(&b);
        // fold b's links into a
        let moved: Vec<((usize, usize), f64)> = weight
            .iter()
            .filter(|(&(x, y), _)| x == b || y == b)
            .map(|(&k, &w)| (k, w))
            .collect();
        for (k, w) in moved {
            weight.remove(&k);
            let other = if k.0 == b { k.1 } else { k.0 };
            if other != a {
                *weight.entry((a.min(other), a.max(other))).or_insert(0.0) += w;
            }
        }
    }
    let root = *alive.iter().next().unwrap_or(&0);
    Ok((root, parent))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_from(n: usize, f: impl Fn(usize, usize) -> f64) -> SimilarityMatrix {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = if i == j { 1.0 } else { f(i.min(j), i.max(j)) };
            }
        }
        SimilarityMatrix::new(n, v).unwrap()
    }

    fn random_sim(n: usize, seed: u64) -> SimilarityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(0.0..1.0);
                vals[i * n + j] = v;
                vals[j * n + i] = v;
            }
            vals[i * n + i] = 1.0;
        }
        SimilarityMatrix::new(n, vals).unwrap()
    }

    #[test]
    fn fps_counts() {
        let s = random_sim(6, 1);
        assert_eq!(select_keyframes_fps(&s, 6).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(select_keyframes_fps(&s, 1).unwrap().len(), 1);
        assert!(matches!(select_keyframes_fps(&s, 0), Err(Error::BadCount { .. })));
        assert!(matches!(select_keyframes_fps(&s, 7), Err(Error::BadCount { .. })));
    }

    #[test]
    fn fps_picks_distinct_image_over_duplicate() {
        // 0 and 1 are near duplicates, 2 is far from both
        let s = sim_from(3, |a, b| match (a, b) {
            (0, 1) => 0.95,
            _ => 0.1,
        });
        let k = select_keyframes_fps(&s, 2).unwrap();
        // exhaustive oracle: the chosen pair must maximize the pairwise distance
        let best = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(a, b)| 1.0 - s.get(a, b))
            .fold(f64::MIN, f64::max);
        assert!((1.0 - s.get(k[0], k[1]) - best).abs() < 1e-15);
        assert!(k.contains(&2));
        assert!(k.contains(&0) ^ k.contains(&1));
    }

    #[test]
    fn small_graphs() {
        let s = random_sim(3, 2);
        let g = build_graph(&s, GraphParams { keyframes: 3, neighbors: 10, knn_exclude_keyframes: false }).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 2)]);
        let one = sim_from(1, |_, _| 0.0);
        let g = build_graph(&one, GraphParams { keyframes: 1, neighbors: 10, knn_exclude_keyframes: false }).unwrap();
        assert!(g.edges.is_empty());
        assert!(g.is_connected());
    }

    #[test]
    fn hundred_images_edge_bound() {
        let s = random_sim(100, 3);
        let g = build_graph(&s, GraphParams::default()).unwrap();
        assert!(g.is_connected());
        assert!(g.edges.len() <= 190 + 80 * 11, "{}", g.edges.len());
    }

    #[test]
    fn block_diagonal_gets_repaired() {
        // three blocks with zero cross similarity
        let s = sim_from(12, |a, b| if a / 4 == b / 4 { 0.9 } else { 0.0 });
        let g = build_graph(&s, GraphParams { keyframes: 1, neighbors: 2, knn_exclude_keyframes: true }).unwrap();
        assert!(g.is_connected());
    }

    #[test]
    fn tree_modes_for_two_nodes() {
        let g = SceneGraph::new(2, vec![0], [(0, 1)]).unwrap();
        for mode in [TreeMode::Star, TreeMode::Mst, TreeMode::HclustSim, TreeMode::HclustCorr] {
            let t = build_kinematic_tree(&g, &[(0, 1, 1.0)], mode).unwrap();
            assert_eq!(t.edges(), vec![(1, 0)]);
        }
    }

    #[test]
    fn star_shares_root() {
        let g = complete_graph(5);
        let t = build_kinematic_tree(&g, &[], TreeMode::Star).unwrap();
        let e = t.edges();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|&(_, p)| p == t.root()));
    }

    #[test]
    fn hclust_uniform_complete_graph() {
        // Hand simulation on K8 with unit weights: (0,1) merges first (tie ->
        // lowest pair); afterwards {0,1} has weight 2 towards every singleton,
        // so it absorbs 2, then 3, ... each as a child of representative 0.
        let g = complete_graph(8);
        let stats: Vec<(usize, usize, f64)> = g.edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
        let t = build_kinematic_tree(&g, &stats, TreeMode::HclustCorr).unwrap();
        assert_eq!(t.root(), 0);
        assert_eq!(t.parents(), &[None, Some(0), Some(0), Some(0), Some(0), Some(0), Some(0), Some(0)]);
        assert!(t.depth() <= 3);
    }

    #[test]
    fn hclust_balanced_pairs() {
        // strong pair links, medium links between pairs of pairs, weak links
        // between the halves: merges happen bottom-up and give depth 3
        let mut stats = vec![];
        for k in 0..4 {
            stats.push((2 * k, 2 * k + 1, 10.0));
        }
        stats.push((1, 2, 3.0));
        stats.push((5, 6, 3.0));
        stats.push((3, 4, 1.0));
        let g = SceneGraph::new(8, vec![0], stats.iter().map(|&(a, b, _)| (a, b))).unwrap();
        let t = build_kinematic_tree(&g, &stats, TreeMode::HclustCorr).unwrap();
        assert_eq!(t.parents(), &[None, Some(0), Some(0), Some(2), Some(0), Some(4), Some(4), Some(6)]);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn disconnected_stats_fail() {
        let g = SceneGraph::new(3, vec![0], [(0, 1)]).unwrap();
        assert_eq!(build_kinematic_tree(&g, &[(0, 1, 1.0)], TreeMode::Mst), Err(Error::Disconnected));
        assert_eq!(build_kinematic_tree(&g, &[(0, 1, 1.0)], TreeMode::HclustCorr), Err(Error::Disconnected));
    }

    #[test]
    fn window_and_random_graphs_connected() {
        assert!(local_window_graph(10, 2).is_connected());
        assert_eq!(local_window_graph(5, 1).edges, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        let g = random_graph(30, 20, 4);
        assert!(g.is_connected());
        assert_eq!(complete_graph(6).edges.len(), 15);
    }
}
