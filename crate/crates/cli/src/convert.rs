//! Core types to and from tensor bundles.

use sfm_core::geometry::PointMap;
use sfm_core::linalg::Vec3;
use sfm_core::local::{Match, MatchSet, PairPrediction};
use sfm_core::retrieval::{FeatureMap, SimilarityMatrix};
use sfm_core::synth::ViewData;

use crate::bundle::TensorBundle;
use crate::error::{CliError, Result};

fn push_pointmap(b: &mut TensorBundle, name: &str, pm: &PointMap) -> Result<()> {
    b.push_f32(name, &[pm.height, pm.width, 3], pm.points.iter().flat_map(|p| [p.x, p.y, p.z]))?;
    b.push_f32(&format!("{name}_conf"), &[pm.height, pm.width], pm.confidence.iter().copied())
}

fn read_pointmap(b: &TensorBundle, name: &str, frame: usize) -> Result<PointMap> {
    let pts = b.require(name, 3)?;
    let conf = b.require(&format!("{name}_conf"), 2)?;
    let (h, w) = (pts.shape[0], pts.shape[1]);
    if pts.shape[2] != 3 || conf.shape != [h, w] {
        return Err(CliError::Invalid(format!("pointmap {name:?} has inconsistent shapes")));
    }
    let v = pts.data.to_f64();
    let points = v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    Ok(PointMap::new(w, h, frame, points, conf.data.to_f64())?)
}

fn push_features(b: &mut TensorBundle, name: &str, fm: &FeatureMap) -> Result<()> {
    b.push_f32(name, &[fm.h, fm.w, fm.dim], fm.data.iter().copied())
}

fn read_features(b: &TensorBundle, name: &str) -> Result<FeatureMap> {
    let a = b.require(name, 3)?;
    Ok(FeatureMap::new(a.shape[0], a.shape[1], a.shape[2], a.data.to_f64())?)
}

fn meta_usize(b: &TensorBundle, key: &str) -> Result<usize> {
    b.meta(key).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::Invalid(format!("bundle lacks numeric metadata {key:?}")))
}

/// Per-image bundle: retrieval tokens and the monocular pointmap.
pub fn view_to_bundle(v: &ViewData) -> Result<TensorBundle> {
    let mut b = TensorBundle::new();
    b.set_meta("kind", "image")?;
    b.set_meta("image", v.image)?;
    push_features(&mut b, "tokens", &v.tokens)?;
    push_pointmap(&mut b, "monocular", &v.monocular)?;
    Ok(b)
}

pub fn view_from_bundle(b: &TensorBundle) -> Result<ViewData> {
    let image = meta_usize(b, "image")?;
    Ok(ViewData {
        image,
        tokens: read_features(b, "tokens")?,
        monocular: read_pointmap(b, "monocular", image)?,
    })
}

pub fn pair_to_bundle(p: &PairPrediction) -> Result<TensorBundle> {
    let mut b = TensorBundle::new();
    b.set_meta("kind", "pair")?;
    b.set_meta("a", p.edge.0)?;
    b.set_meta("b", p.edge.1)?;
    push_pointmap(&mut b, "view_a", &p.view_a)?;
    push_pointmap(&mut b, "view_b_in_a", &p.view_b_in_a)?;
    push_pointmap(&mut b, "view_b", &p.view_b)?;
    push_pointmap(&mut b, "view_a_in_b", &p.view_a_in_b)?;
    push_features(&mut b, "features_a", &p.features_a)?;
    push_features(&mut b, "features_b", &p.features_b)?;
    let m = &p.matches.pairs;
    b.push_f32("matches", &[m.len(), 5], m.iter().flat_map(|m| [m.a[0], m.a[1], m.b[0], m.b[1], m.conf]))?;
    Ok(b)
}

pub fn pair_from_bundle(b: &TensorBundle) -> Result<PairPrediction> {
    let edge = (meta_usize(b, "a")?, meta_usize(b, "b")?);
    let view_a = read_pointmap(b, "view_a", edge.0)?;
    let view_b = read_pointmap(b, "view_b", edge.1)?;
    let m = b.require("matches", 2)?;
    if m.shape[1] != 5 {
        return Err(CliError::Invalid("matches must have 5 columns".into()));
    }
    let pairs = m.data.to_f64().chunks_exact(5).map(|c| Match { a: [c[0], c[1]], b: [c[2], c[3]], conf: c[4] }).collect();
    let matches = MatchSet::new(edge, pairs, (view_a.width, view_a.height), (view_b.width, view_b.height))?;
    let p = PairPrediction {
        edge,
        view_b_in_a: read_pointmap(b, "view_b_in_a", edge.0)?,
        view_a_in_b: read_pointmap(b, "view_a_in_b", edge.1)?,
        view_a,
        view_b,
        features_a: read_features(b, "features_a")?,
        features_b: read_features(b, "features_b")?,
        matches,
    };
    p.validate()?;
    Ok(p)
}

pub fn similarity_to_bundle(s: &SimilarityMatrix) -> Result<TensorBundle> {
    let mut b = TensorBundle::new();
    b.set_meta("kind", "similarity")?;
    b.push_f32("similarity", &[s.n(), s.n()], s.values().iter().copied())?;
    Ok(b)
}

pub fn similarity_from_bundle(b: &TensorBundle) -> Result<SimilarityMatrix> {
    let a = b.require("similarity", 2)?;
    if a.shape[0] != a.shape[1] {
        return Err(CliError::Invalid("similarity matrix must be square".into()));
    }
    Ok(SimilarityMatrix::new(a.shape[0], a.data.to_f64())?)
}

/// Solved state: poses, focals, image sizes and the sparse and dense clouds
/// as `x y z confidence` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSummary {
    /// `qw qx qy qz tx ty tz` per camera.
    pub poses: Vec<[f64; 7]>,
    pub focals: Vec<f64>,
    pub sizes: Vec<(usize, usize)>,
    pub cloud: Vec<[f64; 4]>,
    pub dense_cloud: Vec<[f64; 4]>,
}

pub fn state_to_bundle(s: &StateSummary) -> Result<TensorBundle> {
    let n = s.poses.len();
    if s.focals.len() != n || s.sizes.len() != n {
        return Err(CliError::Invalid("state arrays disagree on the camera count".into()));
    }
    let mut b = TensorBundle::new();
    b.set_meta("kind", "state")?;
    b.push_f64("poses", &[n, 7], s.poses.iter().flatten().copied())?;
    b.push_f32("focals", &[n], s.focals.iter().copied())?;
    b.push_f32("sizes", &[n, 2], s.sizes.iter().flat_map(|&(w, h)| [w as f64, h as f64]))?;
    b.push_f32("cloud", &[s.cloud.len(), 4], s.cloud.iter().flatten().copied())?;
    b.push_f32("dense_cloud", &[s.dense_cloud.len(), 4], s.dense_cloud.iter().flatten().copied())?;
    Ok(b)
}

fn rows<const N: usize>(b: &TensorBundle, name: &str) -> Result<Vec<[f64; N]>> {
    let a = b.require(name, 2)?;
    if a.shape[1] != N {
        return Err(CliError::Invalid(format!("array {name:?} must have {N} columns")));
    }
    Ok(a.data.to_f64().chunks_exact(N).map(|c| c.try_into().unwrap()).collect())
}

pub fn state_from_bundle(b: &TensorBundle) -> Result<StateSummary> {
    Ok(StateSummary {
        poses: rows::<7>(b, "poses")?,
        focals: b.require("focals", 1)?.data.to_f64(),
        sizes: rows::<2>(b, "sizes")?.iter().map(|r| (r[0] as usize, r[1] as usize)).collect(),
        cloud: rows::<4>(b, "cloud")?,
        dense_cloud: rows::<4>(b, "dense_cloud")?,
    })
}
