//! Per-view and per-pair processing ahead of global optimization: reciprocal
//! feature matching, canonical pointmap aggregation, focal estimation and
//! anchor-depth grids.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{PointMap, DEPTH_EPS};
use crate::graph::SceneGraph;
use crate::linalg::{median, Vec3};
use crate::retrieval::FeatureMap;

/// One correspondence between pixel `a` of the first image of an edge and
/// pixel `b` of the second. Pixels are `(i, j)` and may be sub-pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub conf: f64,
}

/// Correspondences for one edge `(first, second)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub edge: (usize, usize),
    pub pairs: Vec<Match>,
}

impl MatchSet {
    /// Validates pixel bounds (`[0, W-1] x [0, H-1]`), confidences and
    /// duplicates against the image sizes of both views.
    pub fn new(edge: (usize, usize), pairs: Vec<Match>, size_a: (usize, usize), size_b: (usize, usize)) -> Result<Self> {
        let inside = |p: [f64; 2], (w, h): (usize, usize)| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64;
        let mut seen = BTreeSet::new();
        for m in &pairs {
            if !inside(m.a, size_a) || !inside(m.b, size_b) {
                return Err(Error::Invalid(alloc::format!("match pixel out of bounds on edge {edge:?}")));
            }
            if !(m.conf.is_finite() && m.conf >= 0.0) {
                return Err(Error::Invalid("match confidence must be finite and non-negative".into()));
            }
            let key = [m.a[0].to_bits(), m.a[1].to_bits(), m.b[0].to_bits(), m.b[1].to_bits()];
            if !seen.insert(key) {
                return Err(Error::Invalid("duplicate match".into()));
            }
        }
        Ok(MatchSet { edge, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Output of the pairwise predictor for edge `(a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub edge: (usize, usize),
    /// Pixels of `a` in `a`'s frame.
    pub view_a: PointMap,
    /// Pixels of `b` in `a`'s frame.
    pub view_b_in_a: PointMap,
    /// Pixels of `b` in `b`'s frame.
    pub view_b: PointMap,
    /// Pixels of `a` in `b`'s frame.
    pub view_a_in_b: PointMap,
    pub features_a: FeatureMap,
    pub features_b: FeatureMap,
    pub matches: MatchSet,
}

impl PairPrediction {
    /// Checks frame tags and shapes.
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.edge;
        let frames_ok = self.view_a.frame == a && self.view_b_in_a.frame == a && self.view_b.frame == b && self.view_a_in_b.frame == b;
        if !frames_ok || self.matches.edge != self.edge {
            return Err(Error::Invalid(alloc::format!("inconsistent frame tags on edge {:?}", self.edge)));
        }
        if !self.view_a.same_shape(&self.view_a_in_b) || !self.view_b.same_shape(&self.view_b_in_a) {
            return Err(Error::ShapeMismatch);
        }
        Ok(())
    }

    /// Own-frame pointmap of `view`, which must be an endpoint of the edge.
    pub fn own(&self, view: usize) -> Option<&PointMap> {
        if view == self.edge.0 {
            Some(&self.view_a)
        } else if view == self.edge.1 {
            Some(&self.view_b)
        } else {
            None
        }
    }

    /// Pointmap of `view`'s pixels expressed in the other endpoint's frame.
    pub fn cross(&self, view: usize) -> Option<&PointMap> {
        if view == self.edge.0 {
            Some(&self.view_a_in_b)
        } else if view == self.edge.1 {
            Some(&self.view_b_in_a)
        } else {
            None
        }
    }
}

fn nearest(map: &FeatureMap, q: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (t, f) in map.tokens().enumerate() {
        let d: f64 = f.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
        if d < best_d {
            best_d = d;
            best = t;
        }
    }
    best
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0)
}

/// Maximum number of A->B->A hops per seed.
pub const FAST_NN_MAX_ITERS: usize = 10;

/// Reciprocal nearest-neighbour matching started from a `spacing`-pixel grid
/// of seeds in `da`. Each seed hops A->B->A until it reaches a mutual pair or
/// runs out of iterations; converged pairs are kept once. Confidence is the
/// cosine of the two features mapped to `[0, 1]`.
pub fn fast_reciprocal_nn(da: &FeatureMap, db: &FeatureMap, spacing: usize, edge: (usize, usize)) -> Result<MatchSet> {
    if da.dim != db.dim {
        return Err(Error::DimensionMismatch { expected: da.dim, got: db.dim });
    }
    let spacing = spacing.max(1);
    let mut found = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut j = spacing / 2;
    while j < da.h {
        let mut i = spacing / 2;
        while i < da.w {
            let mut a = j * da.w + i;
            for _ in 0..FAST_NN_MAX_ITERS {
                let b = nearest(db, da.token(a));
                let back = nearest(da, db.token(b));
                if back == a {
                    if found.insert((a, b)) {
                        pairs.push(Match {
                            a: [(a % da.w) as f64, (a / da.w) as f64],
                            b: [(b % db.w) as f64, (b / db.w) as f64],
                            conf: (1.0 + cosine(da.token(a), db.token(b))) / 2.0,
                        });
                    }
                    break;
                }
                a = back;
            }
            i += spacing;
        }
        j += spacing;
    }
    MatchSet::new(edge, pairs, (da.w, da.h), (db.w, db.h))
}

/// Per-pixel confidence-weighted average of own-frame estimates. Pixels with
/// zero total confidence fall back to the plain mean; the output confidence
/// is the mean input confidence.
pub fn canonical_pointmap(estimates: &[&PointMap]) -> Result<PointMap> {
    let first = estimates.first().ok_or(Error::EmptyEstimates)?;
    if estimates.iter().any(|e| !e.same_shape(first) || e.frame != first.frame) {
        return Err(Error::ShapeMismatch);
    }
    let n = first.points.len();
    let k = estimates.len() as f64;
    let mut points = Vec::with_capacity(n);
    let mut conf = Vec::with_capacity(n);
    for p in 0..n {
        let wsum: f64 = estimates.iter().map(|e| e.confidence[p]).sum();
        let x = if wsum > 0.0 {
            estimates.iter().map(|e| e.points[p] * e.confidence[p]).sum::<Vec3>() / wsum
        } else {
            estimates.iter().map(|e| e.points[p]).sum::<Vec3>() / k
        };
        points.push(x);
        conf.push(wsum / k);
    }
    PointMap::new(first.width, first.height, first.frame, points, conf)
}

/// Number of reweighting iterations used by [`estimate_focal_weiszfeld`].
pub const WEISZFELD_ITERS: usize = 10;

fn focal_terms(pm: &PointMap) -> Vec<([f64; 2], [f64; 2])> {
    let (cx, cy) = (pm.width as f64 / 2.0, pm.height as f64 / 2.0);
    let mut terms = Vec::with_capacity(pm.points.len());
    for j in 0..pm.height {
        for i in 0..pm.width {
            let x = pm.point(i, j);
            if x.z > DEPTH_EPS {
                terms.push(([i as f64 - cx, j as f64 - cy], [x.x / x.z, x.y / x.z]));
            }
        }
    }
    terms
}

/// Sum of pixel distances `|p - f q|` minimized by [`estimate_focal_weiszfeld`].
pub fn focal_objective(pm: &PointMap, focal: f64) -> f64 {
    focal_terms(pm)
        .iter()
        .map(|(p, q)| libm::hypot(p[0] - focal * q[0], p[1] - focal * q[1]))
        .sum()
}

/// Focal length best explaining the pointmap under a centered pinhole model,
/// by iteratively reweighted least squares from the closed-form L2 estimate.
pub fn estimate_focal_weiszfeld(pm: &PointMap) -> Result<f64> {
    Ok(*weiszfeld_trace(pm, WEISZFELD_ITERS)?.last().unwrap())
}

/// Focal estimates after initialization and after each iteration.
pub fn weiszfeld_trace(pm: &PointMap, iters: usize) -> Result<Vec<f64>> {
    let terms = focal_terms(pm);
    if terms.len() < 10 {
        return Err(Error::DegenerateGeometry("fewer than ten points in front of the camera"));
    }
    if terms.iter().all(|(_, q)| q[0] * q[0] + q[1] * q[1] < 1e-16) {
        return Err(Error::DegenerateGeometry("all points lie on the optical axis"));
    }
    let solve = |w: &dyn Fn(&([f64; 2], [f64; 2])) -> f64| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for t in &terms {
            let wt = w(t);
            num += wt * (t.0[0] * t.1[0] + t.0[1] * t.1[1]);
            den += wt * (t.1[0] * t.1[0] + t.1[1] * t.1[1]);
        }
        num / den
    };
    let mut f = solve(&|_| 1.0);
    let mut trace = vec![f];
    for _ in 0..iters {
        let cur = f;
        f = solve(&|(p, q)| 1.0 / libm::hypot(p[0] - cur * q[0], p[1] - cur * q[1]).max(1e-8));
        trace.push(f);
    }
    Ok(trace)
}

/// Coarse grid of depth variables with frozen per-pixel ratios to them.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub spacing: usize,
    pub width: usize,
    pub height: usize,
    pub cols: usize,
    pub rows: usize,
    pub anchor_depths: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchor_depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_depths.is_empty()
    }

    /// Anchor cell of integer pixel `(i, j)`.
    #[inline]
    pub fn anchor_of(&self, i: usize, j: usize) -> usize {
        (j / self.spacing) * self.cols + i / self.spacing
    }

    /// Pixel holding the anchor of cell `(u, v)`.
    pub fn anchor_pixel(&self, u: usize, v: usize) -> (usize, usize) {
        let h = self.spacing / 2;
        ((u * self.spacing + h).min(self.width - 1), (v * self.spacing + h).min(self.height - 1))
    }

    /// `o_ij * Z_anchor(ij)` for every pixel, using the given anchor depths.
    pub fn reconstruct(&self, anchor_depths: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(self.offsets[j * self.width + i] * anchor_depths[self.anchor_of(i, j)]);
            }
        }
        out
    }
}

/// Samples the anchor depth at the center of every `spacing`-sized cell and
/// stores every pixel's depth as a ratio to its cell's anchor.
pub fn build_anchor_grid(depth: &[f64], width: usize, height: usize, spacing: usize) -> Result<AnchorGrid> {
    if depth.len() != width * height || width == 0 || height == 0 {
        return Err(Error::ShapeMismatch);
    }
    if spacing == 0 {
        return Err(Error::Invalid("anchor spacing must be positive".into()));
    }
    if let Some(&z) = depth.iter().find(|&&z| !(z > 0.0)) {
        return Err(Error::NonPositiveDepth(z));
    }
    let cols = width.div_ceil(spacing);
    let rows = height.div_ceil(spacing);
    let mut grid = AnchorGrid {
        spacing,
        width,
        height,
        cols,
        rows,
        anchor_depths: vec![0.0; cols * rows],
        offsets: vec![0.0; width * height],
    };
    for v in 0..rows {
        for u in 0..cols {
            let (i, j) = grid.anchor_pixel(u, v);
            grid.anchor_depths[v * cols + u] = depth[j * width + i];
        }
    }
    for j in 0..height {
        for i in 0..width {
            let a = grid.anchor_depths[grid.anchor_of(i, j)];
            grid.offsets[j * width + i] = depth[j * width + i] / a;
        }
    }
    Ok(grid)
}

/// Depth at a sub-pixel location by bilinear interpolation of inverse depth,
/// which is exact on planar surfaces.
pub fn interpolate_depth(depth: &[f64], width: usize, height: usize, pixel: [f64; 2]) -> f64 {
    let axis = |x: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let x = x.clamp(0.0, (n - 1) as f64);
        let x0 = (libm::floor(x) as usize).min(n - 2);
        (x0, x0 + 1, x - x0 as f64)
    };
    let (i0, i1, ti) = axis(pixel[0], width);
    let (j0, j1, tj) = axis(pixel[1], height);
    let inv = |i: usize, j: usize| 1.0 / depth[j * width + i];
    let top = inv(i0, j0) * (1.0 - ti) + inv(i1, j0) * ti;
    let bottom = inv(i0, j1) * (1.0 - ti) + inv(i1, j1) * ti;
    1.0 / (top * (1.0 - tj) + bottom * tj)
}

/// Aggregated per-view reconstruction feeding the global optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalView {
    pub image: usize,
    pub pointmap: PointMap,
    pub depth: Vec<f64>,
    pub focal: f64,
    pub anchors: AnchorGrid,
}

impl CanonicalView {
    pub fn from_pointmap(image: usize, pointmap: PointMap, anchor_spacing: usize) -> Result<Self> {
        let depth = pointmap.depths();
        let focal = estimate_focal_weiszfeld(&pointmap)?;
        let anchors = build_anchor_grid(&depth, pointmap.width, pointmap.height, anchor_spacing)?;
        Ok(CanonicalView {
            image,
            pointmap,
            depth,
            focal,
            anchors,
        })
    }

    pub fn width(&self) -> usize {
        self.pointmap.width
    }

    pub fn height(&self) -> usize {
        self.pointmap.height
    }

    pub fn median_depth(&self) -> f64 {
        median(&self.depth).unwrap_or(1.0)
    }

    /// Canonical depth at a sub-pixel location.
    pub fn depth_at(&self, pixel: [f64; 2]) -> f64 {
        interpolate_depth(&self.depth, self.width(), self.height(), pixel)
    }
}

/// Gathers all own-frame estimates of `view` from the predictions on its
/// edges and aggregates them.
///
/// The predictor emits each pair in its own arbitrary scale, so estimates are
/// first brought to the median depth of the first one. A view without any
/// edge falls back to `monocular`, when supplied.
pub fn canonicalize_view(
    graph: &SceneGraph,
    predictions: &[PairPrediction],
    view: usize,
    monocular: Option<&PointMap>,
    anchor_spacing: usize,
) -> Result<CanonicalView> {
    let mut estimates: Vec<PointMap> = Vec::new();
    for (a, b) in graph.edges_at(view) {
        let pred = predictions
            .iter()
            .find(|p| (p.edge.0.min(p.edge.1), p.edge.0.max(p.edge.1)) == (a, b))
            .ok_or(Error::MissingPrediction(a, b))?;
        estimates.push(pred.own(view).expect("edge contains view").clone());
    }
    if estimates.is_empty() {
        let mono = monocular.ok_or(Error::EmptyEstimates)?;
        return CanonicalView::from_pointmap(view, mono.clone(), anchor_spacing);
    }
    let reference = median(&estimates[0].depths()).unwrap_or(1.0);
    for e in estimates.iter_mut().skip(1) {
        let m = median(&e.depths()).unwrap_or(reference);
        if m > 0.0 {
            let k = reference / m;
            e.points.iter_mut().for_each(|p| *p *= k);
        }
    }
    let refs: Vec<&PointMap> = estimates.iter().collect();
    let canon = canonical_pointmap(&refs)?;
    CanonicalView::from_pointmap(view, canon, anchor_spacing)
}
