//! The subcommands, as library functions over paths.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use sfm_core::eval::{ate, maa, registration_rate, rra_rta, Trajectory};
use sfm_core::geometry::PointMap;
use sfm_core::graph::{SceneGraph, TreeMode};
use sfm_core::local::PairPrediction;
use sfm_core::pipeline::{prepare_synthetic, select_pairs, solve, GraphMode, Solution};
use sfm_core::retrieval::{retrieve, FeatureMap, RetrievalConfig, SimilarityMatrix};
use sfm_core::synth::{generate_scene_with, ViewData};

use crate::bundle::{TensorBundle, MANIFEST};
use crate::config::RunConfig;
use crate::convert::{
    pair_from_bundle, pair_to_bundle, similarity_from_bundle, similarity_to_bundle, state_from_bundle, state_to_bundle, view_from_bundle, view_to_bundle, StateSummary,
};
use crate::error::{CliError, Result};
use crate::ply::{write_ply, PlyFormat, Vertex};
use crate::text::{parse_graph, parse_trajectory, write_graph, write_intrinsics, write_report, write_trace, write_trajectory};

pub const IMAGES: &str = "images";
pub const PAIRS: &str = "pairs";
pub const GRAPH: &str = "graph.txt";
pub const SIMILARITY: &str = "similarity";
pub const GT_TRAJECTORY: &str = "gt_trajectory.txt";
pub const GT_INTRINSICS: &str = "gt_intrinsics.txt";
pub const CONFIG: &str = "config.txt";
pub const TRAJECTORY: &str = "trajectory.txt";
pub const INTRINSICS: &str = "intrinsics.txt";
pub const TRACE: &str = "trace.txt";
pub const CLOUD: &str = "cloud.ply";
pub const STATE: &str = "state";
pub const SUMMARY: &str = "summary.txt";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

pub fn image_dir(root: &Path, k: usize) -> PathBuf {
    root.join(IMAGES).join(format!("{k:04}"))
}

pub fn pair_dir(root: &Path, (a, b): (usize, usize)) -> PathBuf {
    root.join(PAIRS).join(format!("{a:04}_{b:04}"))
}

/// Bundle directories under `dir` in name order; a missing `dir` is empty.
fn bundle_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let p = entry.map_err(CliError::io(dir))?.path();
        if p.join(MANIFEST).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Simulates a scene and writes per-image bundles, one pair bundle per
/// graph edge, the graph, the similarity matrix and the ground truth.
/// Returns the number of pair bundles written.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<usize> {
    cfg.validate().map_err(CliError::Invalid)?;
    if out.join(IMAGES).exists() || out.join(PAIRS).exists() {
        return Err(CliError::Invalid(format!("{} already holds a scene", out.display())));
    }
    let scene = generate_scene_with(&cfg.scene)?;
    let input = prepare_synthetic(&scene, &cfg.noise, &cfg.pipeline)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    for v in &input.views {
        view_to_bundle(v)?.write(&image_dir(out, v.image))?;
    }
    for p in &input.predictions {
        pair_to_bundle(p)?.write(&pair_dir(out, p.edge))?;
    }
    if let Some(s) = &input.similarity {
        similarity_to_bundle(s)?.write(&out.join(SIMILARITY))?;
    }
    write_file(&out.join(GRAPH), write_graph(&input.graph))?;
    write_file(&out.join(GT_TRAJECTORY), write_trajectory(&Trajectory::from_poses(&scene.gt_poses())))?;
    let focals: Vec<f64> = scene.cameras.iter().map(|c| c.intrinsics.focal).collect();
    write_file(&out.join(GT_INTRINSICS), write_intrinsics(&focals, &vec![(cfg.scene.width, cfg.scene.height); scene.len()]))?;
    write_file(&out.join(CONFIG), cfg.to_text())?;
    info!("synth: {} images, {} pairs", input.views.len(), input.predictions.len());
    Ok(input.predictions.len())
}

/// Per-image bundles of an input directory, ids `0..n` in order.
pub fn load_views(input: &Path) -> Result<Vec<ViewData>> {
    let images = input.join(IMAGES);
    if !images.is_dir() {
        return Err(CliError::Io { path: images, source: std::io::ErrorKind::NotFound.into() });
    }
    let dirs = bundle_dirs(&images)?;
    if dirs.is_empty() {
        return Err(CliError::Invalid(format!("no image bundles under {}", input.join(IMAGES).display())));
    }
    let mut views = Vec::with_capacity(dirs.len());
    for (k, d) in dirs.iter().enumerate() {
        let v = view_from_bundle(&TensorBundle::read(d)?)?;
        if v.image != k {
            return Err(CliError::Invalid(format!("{}: image ids must run 0..n in order", d.display())));
        }
        views.push(v);
    }
    Ok(views)
}

pub fn load_pairs(input: &Path) -> Result<Vec<PairPrediction>> {
    bundle_dirs(&input.join(PAIRS))?.iter().map(|d| pair_from_bundle(&TensorBundle::read(d)?)).collect()
}

fn tokens(views: &[ViewData]) -> Vec<FeatureMap> {
    views.iter().map(|v| v.tokens.clone()).collect()
}

/// Builds the scene graph of an input directory under `cfg`'s graph mode.
pub fn graph(input: &Path, cfg: &RunConfig) -> Result<(SceneGraph, Option<SimilarityMatrix>)> {
    cfg.validate().map_err(CliError::Invalid)?;
    let views = load_views(input)?;
    Ok(select_pairs(&tokens(&views), &cfg.pipeline)?)
}

/// Writes the graph of [`graph`] to `out` and its similarity matrix, when
/// retrieval ran, to the bundle `similarity_out`.
pub fn graph_to_files(input: &Path, cfg: &RunConfig, out: &Path, similarity_out: Option<&Path>) -> Result<SceneGraph> {
    let (g, s) = graph(input, cfg)?;
    write_file(out, write_graph(&g))?;
    if let (Some(dir), Some(s)) = (similarity_out, &s) {
        similarity_to_bundle(s)?.write(dir)?;
    }
    Ok(g)
}

#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    /// Graph file; defaults to the input's `graph.txt`, else retrieval.
    pub graph: Option<PathBuf>,
    /// Similarity bundle; defaults to the input's `similarity/` bundle.
    pub similarity: Option<PathBuf>,
    pub ascii_ply: bool,
    /// Leaves wall-clock timings out of every output.
    pub deterministic: bool,
}

fn existing(explicit: &Option<PathBuf>, fallback: PathBuf) -> Option<PathBuf> {
    explicit.clone().or_else(|| fallback.exists().then_some(fallback))
}

/// Reconstructs an input directory and returns the solution with the
/// summary written to `out/state`.
pub fn solve_dir(input: &Path, cfg: &RunConfig, opts: &SolveOptions, out: &Path) -> Result<(Solution, StateSummary)> {
    cfg.validate().map_err(CliError::Invalid)?;
    let start = Instant::now();
    let views = load_views(input)?;
    let n = views.len();
    let predictions = load_pairs(input)?;
    let mut similarity = match existing(&opts.similarity, input.join(SIMILARITY)) {
        Some(dir) => Some(similarity_from_bundle(&TensorBundle::read(&dir)?)?),
        None => None,
    };
    let graph = match existing(&opts.graph, input.join(GRAPH)) {
        Some(path) => parse_graph(&read_text(&path)?, &path)?,
        None => {
            let (g, s) = select_pairs(&tokens(&views), &cfg.pipeline)?;
            // repair leaves every built graph connected
            assert!(g.is_connected(), "scene graph disconnected after repair");
            similarity = similarity.or(s);
            g
        }
    };
    if graph.n != n {
        return Err(CliError::Invalid(format!("graph has {} nodes for {n} images", graph.n)));
    }
    if similarity.is_none() && n > 1 && matches!(cfg.pipeline.tree_mode, TreeMode::Mst | TreeMode::HclustSim) {
        let rc = RetrievalConfig { seed: cfg.pipeline.seed, ..cfg.pipeline.retrieval };
        similarity = Some(retrieve(&tokens(&views), &rc)?);
    }
    if similarity.as_ref().is_some_and(|s| s.n() != n) {
        return Err(CliError::Invalid(format!("similarity matrix does not cover {n} images")));
    }
    if !graph.is_connected() {
        return Err(CliError::Core(sfm_core::Error::Disconnected));
    }
    let mono: Vec<Option<&PointMap>> = views.iter().map(|v| Some(&v.monocular)).collect();
    let sol = solve(&graph, similarity.as_ref(), &predictions, &mono, &cfg.pipeline)?;

    let state = &sol.state;
    let poses = state.trajectory();
    let cloud = |dense| -> Result<Vec<[f64; 4]>> { Ok(state.point_cloud(dense)?.iter().map(|(x, c)| [x.x, x.y, x.z, *c]).collect()) };
    let summary = StateSummary {
        poses: poses
            .entries()
            .iter()
            .map(|(_, p)| {
                let p = p.expect("solved cameras are registered");
                let q = p.quaternion_wxyz();
                [q[0], q[1], q[2], q[3], p.translation.x, p.translation.y, p.translation.z]
            })
            .collect(),
        focals: state.focals(),
        sizes: state.views.iter().map(|v| (v.width(), v.height())).collect(),
        cloud: cloud(false)?,
        dense_cloud: cloud(true)?,
    };
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_file(&out.join(TRAJECTORY), write_trajectory(&poses))?;
    write_file(&out.join(INTRINSICS), write_intrinsics(&summary.focals, &summary.sizes))?;
    write_file(&out.join(TRACE), write_trace(&sol.trace))?;
    state_to_bundle(&summary)?.write(&out.join(STATE))?;
    let format = if opts.ascii_ply { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    write_file(&out.join(CLOUD), write_ply(&vertices(&summary.cloud), format))?;
    let mut report = vec![
        ("images".to_string(), n as f64),
        ("edges".to_string(), graph.edges.len() as f64),
        ("final_loss".to_string(), sol.final_loss),
    ];
    if !opts.deterministic {
        report.push(("seconds".to_string(), start.elapsed().as_secs_f64()));
    }
    write_file(&out.join(SUMMARY), write_report(&report))?;
    info!("solve: {n} images, {} edges, {} points", graph.edges.len(), summary.cloud.len());
    Ok((sol, summary))
}

fn vertices(rows: &[[f64; 4]]) -> Vec<Vertex> {
    rows.iter().map(|r| Vertex::from_point([r[0], r[1], r[2]], r[3])).collect()
}

/// Thresholds reported by [`eval`], in degrees.
pub const EVAL_THRESHOLDS: [u32; 3] = [5, 15, 30];

/// Key-value metrics of `est` against `gt`, over the ground-truth ids.
pub fn eval(est: &Trajectory, gt: &Trajectory) -> Vec<(String, f64)> {
    let est = est.aligned_to(gt);
    let mut out = vec![
        ("cameras".to_string(), gt.len() as f64),
        ("reg".to_string(), registration_rate(&est)),
        ("ate".to_string(), ate(&est, gt).unwrap_or(f64::NAN)),
    ];
    for tau in EVAL_THRESHOLDS {
        let (r, t) = rra_rta(&est, gt, tau as f64);
        out.push((format!("rra@{tau}"), r));
        out.push((format!("rta@{tau}"), t));
    }
    out.push(("maa@30".to_string(), maa(&est, gt, 30)));
    out
}

pub fn eval_files(est: &Path, gt: &Path) -> Result<Vec<(String, f64)>> {
    let e = parse_trajectory(&read_text(est)?, est)?;
    let g = parse_trajectory(&read_text(gt)?, gt)?;
    Ok(eval(&e, &g))
}

/// Writes the sparse (anchor) or dense cloud of a solved state bundle.
pub fn export_ply(state: &Path, out: &Path, format: PlyFormat, dense: bool) -> Result<usize> {
    let s = state_from_bundle(&TensorBundle::read(state)?)?;
    let rows = if dense { &s.dense_cloud } else { &s.cloud };
    write_file(out, write_ply(&vertices(rows), format))?;
    Ok(rows.len())
}

/// Mean mAA@30 of each graph mode over `seeds`, each seed simulating its own
/// scene and solving it once per mode.
pub fn compare_graph_modes(cfg: &RunConfig, modes: &[GraphMode], seeds: &[u64]) -> Result<Vec<(GraphMode, Vec<f64>)>> {
    cfg.validate().map_err(CliError::Invalid)?;
    let mut out: Vec<(GraphMode, Vec<f64>)> = modes.iter().map(|&m| (m, Vec::new())).collect();
    for &seed in seeds {
        let mut c = cfg.clone();
        c.set("seed", &seed.to_string()).map_err(CliError::Invalid)?;
        let scene = generate_scene_with(&c.scene)?;
        let gt = Trajectory::from_poses(&scene.gt_poses());
        for (mode, scores) in out.iter_mut() {
            let p = sfm_core::pipeline::PipelineConfig { graph_mode: *mode, ..c.pipeline.clone() };
            let (sol, _) = sfm_core::pipeline::run_synthetic(&scene, &c.noise, &p)?;
            let score = maa(&sol.state.trajectory(), &gt, 30);
            info!("graph modes: seed {seed} {} maa@30 {score:.3}", mode.name());
            scores.push(score);
        }
    }
    Ok(out)
}
