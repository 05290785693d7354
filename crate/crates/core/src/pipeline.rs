//! End-to-end reconstruction from per-image tokens and pair predictions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::PointMap;
use crate::graph::{build_graph, build_kinematic_tree, complete_graph, local_window_graph, random_graph, GraphParams, SceneGraph, TreeMode};
use crate::local::{canonicalize_view, CanonicalView, MatchSet, PairPrediction};
use crate::optim::{build_terms, init_from_pairs, init_random, optimize, OptimConfig, SceneState, TraceEntry};
use crate::retrieval::{retrieve, FeatureMap, RetrievalConfig, SimilarityMatrix};
use crate::synth::{render_pair, simulate_view, NoiseConfig, SynthScene, ViewData, MATCH_STRIDE};

/// How image pairs are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GraphMode {
    #[default]
    Retrieval,
    Complete,
    /// Each image with its `w` successors in input order, `w` sized to match
    /// the retrieval graph's edge count.
    LocalWindow,
    /// As many uniformly random pairs as the retrieval graph has edges.
    Random,
}

impl GraphMode {
    pub fn name(&self) -> &'static str {
        match self {
            GraphMode::Retrieval => "retrieval",
            GraphMode::Complete => "complete",
            GraphMode::LocalWindow => "local-window",
            GraphMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [GraphMode::Retrieval, GraphMode::Complete, GraphMode::LocalWindow, GraphMode::Random]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub graph_mode: GraphMode,
    pub graph: GraphParams,
    pub retrieval: RetrievalConfig,
    pub tree_mode: TreeMode,
    pub anchor_spacing: usize,
    pub optim: OptimConfig,
    /// Start from random poses instead of chaining pairwise alignments.
    pub random_init: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            graph_mode: GraphMode::Retrieval,
            graph: GraphParams::default(),
            retrieval: RetrievalConfig::default(),
            tree_mode: TreeMode::HclustCorr,
            anchor_spacing: 8,
            optim: OptimConfig::default(),
            random_init: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_spacing == 0 {
            return Err(Error::Invalid("anchor spacing must be positive".into()));
        }
        if self.graph.keyframes == 0 {
            return Err(Error::Invalid("at least one keyframe is required".into()));
        }
        self.optim.validate()
    }
}

/// Scene graph for `n` images under the configured mode, together with the
/// retrieval similarities when they were computed.
pub fn select_pairs(tokens: &[FeatureMap], cfg: &PipelineConfig) -> Result<(SceneGraph, Option<SimilarityMatrix>)> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
    }
    if n == 1 {
        return Ok((SceneGraph::new(1, alloc::vec![0], [])?, None));
    }
    let s = retrieve(tokens, &RetrievalConfig { seed: cfg.seed, ..cfg.retrieval })?;
    let params = GraphParams {
        keyframes: cfg.graph.keyframes.min(n),
        ..cfg.graph
    };
    let retrieval_graph = build_graph(&s, params)?;
    let budget = retrieval_graph.edges.len();
    let graph = match cfg.graph_mode {
        GraphMode::Retrieval => retrieval_graph,
        GraphMode::Complete => complete_graph(n),
        GraphMode::LocalWindow => local_window_graph(n, budget.div_ceil(n)),
        GraphMode::Random => random_graph(n, budget, cfg.seed),
    };
    Ok((graph, Some(s)))
}

/// Reconstruction result.
#[derive(Clone, Debug)]
pub struct Solution {
    pub state: SceneState,
    pub trace: Vec<TraceEntry>,
    /// Loss of the kept state under the last stage's objective, which may be
    /// below the trace's last entry.
    pub final_loss: f64,
}

fn find_prediction<'p>(predictions: &'p [PairPrediction], a: usize, b: usize) -> Option<&'p PairPrediction> {
    predictions.iter().find(|p| (p.edge.0.min(p.edge.1), p.edge.0.max(p.edge.1)) == (a, b))
}

/// Canonicalizes every view, builds the camera tree, initializes and runs
/// both optimization stages.
///
/// `monocular[k]` is only consulted for images without any edge.
pub fn solve(graph: &SceneGraph, similarity: Option<&SimilarityMatrix>, predictions: &[PairPrediction], monocular: &[Option<&PointMap>], cfg: &PipelineConfig) -> Result<Solution> {
    cfg.validate()?;
    let n = graph.n;
    if monocular.len() != n {
        return Err(Error::ShapeMismatch);
    }
    for p in predictions {
        p.validate()?;
    }
    let views: Vec<CanonicalView> = (0..n)
        .map(|k| canonicalize_view(graph, predictions, k, monocular[k], cfg.anchor_spacing))
        .collect::<Result<_>>()?;

    let mut on_graph: Vec<&PairPrediction> = Vec::with_capacity(graph.edges.len());
    for &(a, b) in &graph.edges {
        on_graph.push(find_prediction(predictions, a, b).ok_or(Error::MissingPrediction(a, b))?);
    }
    let counts: Vec<(usize, usize, f64)> = on_graph.iter().map(|p| (p.edge.0, p.edge.1, p.matches.len() as f64)).collect();
    let stats: Vec<(usize, usize, f64)> = match (cfg.tree_mode, similarity) {
        (TreeMode::Mst | TreeMode::HclustSim, Some(s)) => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b, s.get(a, b)))).collect(),
        _ => counts,
    };
    let tree = if n == 1 {
        crate::graph::KinematicTree::independent(1)
    } else {
        build_kinematic_tree(graph, &stats, cfg.tree_mode)?
    };

    let matches: Vec<&MatchSet> = on_graph.iter().map(|p| &p.matches).collect();
    let terms = build_terms(&views, &matches)?;
    let optim = OptimConfig { seed: cfg.seed, ..cfg.optim.clone() };
    let mut state = if cfg.random_init {
        init_random(views, tree, &optim)?
    } else {
        init_from_pairs(graph, tree, predictions, views, &optim)?
    };
    let trace = optimize(&mut state, &terms, &optim)?;
    let (final_loss, _) = state.loss(&terms, &optim);
    Ok(Solution { state, trace, final_loss })
}

/// Simulated inputs for a synthetic scene: per-image data, the selected
/// graph and one prediction per graph edge.
#[derive(Clone, Debug)]
pub struct SyntheticInput {
    pub views: Vec<ViewData>,
    pub graph: SceneGraph,
    pub similarity: Option<SimilarityMatrix>,
    pub predictions: Vec<PairPrediction>,
    /// Hidden outlier flags of each prediction's matches.
    pub outliers: Vec<Vec<bool>>,
}

pub fn prepare_synthetic(scene: &SynthScene, noise: &NoiseConfig, cfg: &PipelineConfig) -> Result<SyntheticInput> {
    let views: Vec<ViewData> = (0..scene.len()).map(|k| simulate_view(scene, k, noise)).collect::<Result<_>>()?;
    let tokens: Vec<FeatureMap> = views.iter().map(|v| v.tokens.clone()).collect();
    let (graph, similarity) = select_pairs(&tokens, cfg)?;
    let mut predictions = Vec::with_capacity(graph.edges.len());
    let mut outliers = Vec::with_capacity(graph.edges.len());
    for &edge in &graph.edges {
        let sim = render_pair(scene, edge, noise, MATCH_STRIDE)?;
        predictions.push(sim.prediction);
        outliers.push(sim.outliers);
    }
    Ok(SyntheticInput {
        views,
        graph,
        similarity,
        predictions,
        outliers,
    })
}

/// Simulates and reconstructs a synthetic scene.
pub fn run_synthetic(scene: &SynthScene, noise: &NoiseConfig, cfg: &PipelineConfig) -> Result<(Solution, SyntheticInput)> {
    let input = prepare_synthetic(scene, noise, cfg)?;
    let mono: Vec<Option<&PointMap>> = input.views.iter().map(|v| Some(&v.monocular)).collect();
    let sol = solve(&input.graph, input.similarity.as_ref(), &input.predictions, &mono, cfg)?;
    Ok((sol, input))
}
