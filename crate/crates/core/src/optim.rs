//! Two-stage global optimization of cameras and depths.
//!
//! Stage one moves each canonical pointmap rigidly (with scale) so matched 3D
//! points meet. Stage two refines poses, scales, focals and anchor depths by
//! minimizing a robust reprojection error. Both run plain Adam with a cosine
//! learning-rate decay on exact reverse-mode gradients.
//!
//! Parameters live in one flat vector: per camera a raw quaternion and a
//! translation (relative to the tree parent), then log pre-scales, log focals
//! (one if shared) and log anchor depths.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Real, Subtape, Tape, Var};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::{inverse_reproject, CameraParams, Intrinsics, Pose, DEPTH_EPS};
use crate::graph::{KinematicTree, SceneGraph};
use crate::linalg::{median, umeyama, Similarity, Vec3};
use crate::local::{CanonicalView, MatchSet, PairPrediction};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub coarse_iters: usize,
    pub refine_iters: usize,
    pub coarse_lr: f64,
    pub refine_lr: f64,
    pub coarse_exponent: f64,
    pub refine_exponent: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Smoothing inside both norms so they stay differentiable at zero.
    pub rho_eps: f64,
    pub shared_focal: bool,
    pub freeze_depth: bool,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            coarse_iters: 300,
            refine_iters: 300,
            coarse_lr: 0.07,
            refine_lr: 0.014,
            coarse_exponent: 1.5,
            refine_exponent: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rho_eps: 1e-8,
            shared_focal: true,
            freeze_depth: false,
            seed: 0,
        }
    }
}

impl OptimConfig {
    /// The refinement exponent may exceed 1 (up to 2, the quadratic case)
    /// only to support the robustness ablation.
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = pos(self.coarse_lr)
            && pos(self.refine_lr)
            && pos(self.coarse_exponent)
            && self.refine_exponent > 0.0
            && self.refine_exponent <= 2.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && pos(self.adam_eps)
            && pos(self.rho_eps);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("optimizer settings out of range".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Refine,
}

/// One side of a match with everything needed to rebuild its depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Endpoint {
    pub pixel: [f64; 2],
    pub anchor: u32,
    /// Ratio of the canonical depth at `pixel` to its anchor's depth.
    pub offset: f64,
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub a: Endpoint,
    pub b: Endpoint,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTerms {
    pub a: usize,
    pub b: usize,
    pub terms: Vec<Term>,
}

fn endpoint(view: &CanonicalView, pixel: [f64; 2]) -> Endpoint {
    let g = &view.anchors;
    let i = (libm::round(pixel[0]) as usize).min(g.width - 1);
    let j = (libm::round(pixel[1]) as usize).min(g.height - 1);
    let anchor = g.anchor_of(i, j);
    let depth = view.depth_at(pixel);
    Endpoint {
        pixel,
        anchor: anchor as u32,
        offset: depth / g.anchor_depths[anchor],
        depth,
    }
}

/// Freezes per-match data against the canonical views.
pub fn build_terms(views: &[CanonicalView], matches: &[&MatchSet]) -> Result<Vec<EdgeTerms>> {
    let mut out = Vec::with_capacity(matches.len());
    for ms in matches {
        let (a, b) = ms.edge;
        if a >= views.len() || b >= views.len() {
            return Err(Error::MissingNode(a.max(b)));
        }
        let terms = ms
            .pairs
            .iter()
            .map(|m| Term {
                a: endpoint(&views[a], m.a),
                b: endpoint(&views[b], m.b),
                q: m.conf,
            })
            .collect();
        out.push(EdgeTerms { a, b, terms });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    n: usize,
    shared_focal: bool,
    anchor_start: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(views: &[CanonicalView], shared_focal: bool) -> Self {
        let n = views.len();
        let mut k = 8 * n + if shared_focal { 1 } else { n };
        let mut anchor_start = Vec::with_capacity(n);
        for v in views {
            anchor_start.push(k);
            k += v.anchors.len();
        }
        Layout {
            n,
            shared_focal,
            anchor_start,
            total: k,
        }
    }

    fn pose(&self, k: usize) -> usize {
        7 * k
    }

    fn sigma(&self, k: usize) -> usize {
        7 * self.n + k
    }

    fn focal(&self, k: usize) -> usize {
        8 * self.n + if self.shared_focal { 0 } else { k }
    }

    fn focal_count(&self) -> usize {
        if self.shared_focal {
            1
        } else {
            self.n
        }
    }

    fn anchor(&self, k: usize, a: usize) -> usize {
        self.anchor_start[k] + a
    }
}

/// Which parameter class an index of the parameter vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Pose,
    LogScale,
    LogFocal,
    LogAnchorDepth,
}

/// Camera quantities derived from the parameters, in the form used by the
/// loss terms: `world = a * v + b` lifts a camera-frame point, `m * x + t`
/// maps a world point back into the camera frame.
#[derive(Clone, Copy, Debug)]
struct Block<T> {
    a: [T; 9],
    b: [T; 3],
    m: [T; 9],
    t: [T; 3],
    f: T,
    inv_f: T,
}

type Rigid<T> = ([T; 9], [T; 3]);

fn quat_to_rot<T: Real>(q: &[T]) -> [T; 9] {
    let s = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / s, q[1] / s, q[2] / s, q[3] / s);
    let two = |v: T| v * 2.0;
    [
        -two(y * y + z * z) + 1.0,
        two(x * y - w * z),
        two(x * z + w * y),
        two(x * y + w * z),
        -two(x * x + z * z) + 1.0,
        two(y * z - w * x),
        two(x * z - w * y),
        two(y * z + w * x),
        -two(x * x + y * y) + 1.0,
    ]
}

fn matmul<T: Real>(a: &[T; 9], b: &[T; 9]) -> [T; 9] {
    core::array::from_fn(|k| {
        let (r, c) = (k / 3, k % 3);
        a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c]
    })
}

fn matvec<T: Real>(a: &[T; 9], v: &[T; 3]) -> [T; 3] {
    core::array::from_fn(|r| a[3 * r] * v[0] + a[3 * r + 1] * v[1] + a[3 * r + 2] * v[2])
}

fn matvec_f<T: Real>(a: &[T; 9], v: &[f64; 3]) -> [T; 3] {
    core::array::from_fn(|r| a[3 * r] * v[0] + a[3 * r + 1] * v[1] + a[3 * r + 2] * v[2])
}

fn transpose<T: Real>(a: &[T; 9]) -> [T; 9] {
    [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]
}

fn rigid_to_pose(r: &Rigid<f64>) -> Pose {
    let m = nalgebra::Matrix3::from_row_slice(&r.0);
    let rot = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
    Pose::new(rot, Vec3::new(r.1[0], r.1[1], r.1[2]))
}

/// Everything the optimizer changes, plus the fixed per-view data it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub views: Vec<CanonicalView>,
    pub tree: KinematicTree,
    pub freeze_depth: bool,
    stage: Stage,
    layout: Layout,
    params: Vec<f64>,
    medians: Vec<f64>,
    order: Vec<usize>,
}

impl SceneState {
    /// State reproducing the given world poses and scales in the coarse
    /// stage. Focals start at the canonical ones (their geometric mean when
    /// shared) and anchor depths at the canonical depths.
    pub fn new(views: Vec<CanonicalView>, tree: KinematicTree, world: &[Pose], sigmas: &[f64], shared_focal: bool, freeze_depth: bool) -> Result<Self> {
        let n = views.len();
        if n == 0 {
            return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
        }
        if tree.len() != n || world.len() != n || sigmas.len() != n {
            return Err(Error::ShapeMismatch);
        }
        if let Some(&s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(alloc::format!("scale must be positive, got {s}")));
        }
        let layout = Layout::new(&views, shared_focal);
        let mut params = vec![0.0; layout.total];
        for (k, s) in sigmas.iter().enumerate() {
            params[layout.sigma(k)] = libm::log(*s);
        }
        if shared_focal {
            params[layout.focal(0)] = views.iter().map(|v| libm::log(v.focal)).sum::<f64>() / n as f64;
        } else {
            for (k, v) in views.iter().enumerate() {
                params[layout.focal(k)] = libm::log(v.focal);
            }
        }
        for (k, v) in views.iter().enumerate() {
            for (a, z) in v.anchors.anchor_depths.iter().enumerate() {
                params[layout.anchor(k, a)] = libm::log(*z);
            }
        }
        let medians = views.iter().map(|v| v.median_depth()).collect();
        let order = tree.topological_order();
        let mut state = SceneState {
            views,
            tree,
            freeze_depth,
            stage: Stage::Coarse,
            layout,
            params,
            medians,
            order,
        };
        state.normalize();
        state.set_world_poses(world);
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn shared_focal(&self) -> bool {
        self.layout.shared_focal
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_class(&self, idx: usize) -> ParamClass {
        let n = self.layout.n;
        if idx < 7 * n {
            ParamClass::Pose
        } else if idx < 8 * n {
            ParamClass::LogScale
        } else if idx < 8 * n + self.layout.focal_count() {
            ParamClass::LogFocal
        } else {
            ParamClass::LogAnchorDepth
        }
    }

    /// Index of the first log anchor depth of camera `k`.
    pub fn anchor_param(&self, k: usize, anchor: usize) -> usize {
        self.layout.anchor(k, anchor)
    }

    /// Index of camera `k`'s log pre-scale.
    pub fn scale_param(&self, k: usize) -> usize {
        self.layout.sigma(k)
    }

    /// Renormalizes quaternions and shifts log pre-scales so the smallest
    /// scale is exactly one.
    pub fn normalize(&mut self) {
        let n = self.layout.n;
        for k in 0..n {
            let p = self.layout.pose(k);
            let q = &mut self.params[p..p + 4];
            let s = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
            if s > 0.0 {
                q.iter_mut().for_each(|v| *v /= s);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
        let s0 = self.layout.sigma(0);
        let min = self.params[s0..s0 + n].iter().cloned().fold(f64::INFINITY, f64::min);
        self.params[s0..s0 + n].iter_mut().for_each(|v| *v -= min);
    }

    /// Focal of camera `k` in the current stage.
    pub fn focal(&self, k: usize) -> f64 {
        match self.stage {
            Stage::Coarse => self.views[k].focal,
            Stage::Refine => libm::exp(self.params[self.layout.focal(k)]),
        }
    }

    pub fn focals(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.focal(k)).collect()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        let s0 = self.layout.sigma(0);
        let min = self.params[s0..s0 + self.len()].iter().cloned().fold(f64::INFINITY, f64::min);
        libm::exp(self.params[self.layout.sigma(k)] - min)
    }

    fn axis_offsets(&self, focal: &dyn Fn(usize) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| self.medians[k] * focal(k) / self.views[k].focal).collect()
    }

    fn world_rigids<T: Real>(&self, x: &[T], offsets: &[T]) -> Vec<Rigid<T>> {
        let zero = T::cst(0.0);
        let mut out: Vec<Rigid<T>> = vec![([zero; 9], [zero; 3]); self.len()];
        for &k in &self.order {
            let p = self.layout.pose(k);
            let r = quat_to_rot(&x[p..p + 4]);
            let tau = [x[p + 4], x[p + 5], x[p + 6]];
            out[k] = match self.tree.parent(k) {
                None => (r, [tau[0], tau[1], tau[2] + offsets[k]]),
                Some(par) => {
                    let (rp, tp) = out[par];
                    let tp = [tp[0], tp[1], tp[2] - offsets[par]];
                    let rt = matvec(&r, &tp);
                    (matmul(&r, &rp), [rt[0] + tau[0], rt[1] + tau[1], rt[2] + tau[2] + offsets[k]])
                }
            };
        }
        out
    }

    fn blocks<T: Real>(&self, x: &[T]) -> Vec<Block<T>> {
        let n = self.len();
        let focals: Vec<T> = (0..n)
            .map(|k| match self.stage {
                Stage::Coarse => T::cst(self.views[k].focal),
                Stage::Refine => x[self.layout.focal(k)].exp(),
            })
            .collect();
        let offsets: Vec<T> = (0..n).map(|k| focals[k] * (self.medians[k] / self.views[k].focal)).collect();
        let rigids = self.world_rigids(x, &offsets);
        let s0 = self.layout.sigma(0);
        let kmin = (0..n)
            .min_by(|&a, &b| x[s0 + a].value().partial_cmp(&x[s0 + b].value()).unwrap())
            .unwrap();
        (0..n)
            .map(|k| {
                let sigma = (x[s0 + k] - x[s0 + kmin]).exp();
                let inv_sigma = (x[s0 + kmin] - x[s0 + k]).exp();
                let (r, t) = rigids[k];
                let rt = transpose(&r);
                let a: [T; 9] = core::array::from_fn(|i| rt[i] * inv_sigma);
                let at = matvec(&a, &t);
                Block {
                    a,
                    b: [-at[0], -at[1], -at[2]],
                    m: core::array::from_fn(|i| r[i] * sigma),
                    t,
                    f: focals[k],
                    inv_f: T::cst(1.0) / focals[k],
                }
            })
            .collect()
    }

    /// World-to-camera rigid pose of camera `k` (scale excluded).
    pub fn world_pose(&self, k: usize) -> Pose {
        self.world_poses()[k]
    }

    pub fn world_poses(&self) -> Vec<Pose> {
        let offsets = self.axis_offsets(&|k| self.focal(k));
        self.world_rigids(&self.params, &offsets).iter().map(rigid_to_pose).collect()
    }

    /// Rewrites the stored relative poses so that the world poses equal
    /// `world` under the current focals and axis offsets.
    pub fn set_world_poses(&mut self, world: &[Pose]) {
        let offsets = self.axis_offsets(&|k| self.focal(k));
        let tz = |k: usize| Pose::translation_z(offsets[k]);
        for k in 0..self.len() {
            let q = match self.tree.parent(k) {
                None => tz(k).inverse().compose(&world[k]),
                Some(p) => tz(k).inverse().compose(&world[k]).compose(&world[p].inverse()).compose(&tz(p)),
            };
            let p = self.layout.pose(k);
            let w = q.quaternion_wxyz();
            self.params[p..p + 4].copy_from_slice(&w);
            self.params[p + 4..p + 7].copy_from_slice(q.translation.as_slice());
        }
        self.sync_tree();
    }

    /// Copies stored poses and axis offsets into the kinematic tree.
    pub fn sync_tree(&mut self) {
        let offsets = self.axis_offsets(&|k| self.focal(k));
        for k in 0..self.len() {
            let p = self.layout.pose(k);
            let x = &self.params[p..p + 7];
            self.tree.set_stored_pose(k, Pose::from_raw([x[0], x[1], x[2], x[3]], [x[4], x[5], x[6]]));
        }
        self.tree.set_axis_offsets(offsets);
    }

    /// Switches to refinement, keeping world poses fixed while the axis
    /// offsets follow the refinable focals.
    pub fn enter_refine(&mut self) {
        if self.stage == Stage::Refine {
            return;
        }
        let world = self.world_poses();
        self.stage = Stage::Refine;
        self.set_world_poses(&world);
    }

    pub fn camera(&self, k: usize) -> Result<CameraParams> {
        let v = &self.views[k];
        let intr = Intrinsics::new(self.focal(k), v.width() as u32, v.height() as u32)?;
        CameraParams::new(intr, self.world_pose(k), self.sigma(k))
    }

    /// Current depth of camera `k` at a (sub-)pixel.
    pub fn depth_at(&self, k: usize, pixel: [f64; 2]) -> f64 {
        let v = &self.views[k];
        if self.stage == Stage::Coarse || self.freeze_depth {
            return v.depth_at(pixel);
        }
        let e = endpoint(v, pixel);
        let is_integral = libm::floor(pixel[0]) == pixel[0] && libm::floor(pixel[1]) == pixel[1];
        let offset = if is_integral {
            v.anchors.offsets[pixel[1] as usize * v.width() + pixel[0] as usize]
        } else {
            e.offset
        };
        offset * libm::exp(self.params[self.layout.anchor(k, e.anchor as usize)])
    }

    /// World point of pixel `pixel` of camera `k` under the current state.
    pub fn constrained_point(&self, k: usize, pixel: [f64; 2]) -> Result<Vec3> {
        if k >= self.len() {
            return Err(Error::MissingNode(k));
        }
        let v = &self.views[k];
        if !(pixel[0] >= 0.0 && pixel[1] >= 0.0 && pixel[0] <= (v.width() - 1) as f64 && pixel[1] <= (v.height() - 1) as f64) {
            return Err(Error::Invalid("pixel out of bounds".into()));
        }
        inverse_reproject(&self.camera(k)?, pixel, self.depth_at(k, pixel))
    }

    /// Camera poses in the world frame with the scale folded into the
    /// translation, so optical centers are in world units.
    pub fn trajectory(&self) -> Trajectory {
        let poses: Vec<Pose> = self
            .world_poses()
            .iter()
            .enumerate()
            .map(|(k, p)| Pose::new(p.rotation, p.translation / self.sigma(k)))
            .collect();
        Trajectory::from_poses(&poses)
    }

    /// Constrained points at anchor pixels (or every pixel when `dense`),
    /// with the canonical confidence of each pixel.
    pub fn point_cloud(&self, dense: bool) -> Result<Vec<(Vec3, f64)>> {
        let mut out = Vec::new();
        for (k, v) in self.views.iter().enumerate() {
            let g = &v.anchors;
            let pixels: Vec<(usize, usize)> = if dense {
                (0..v.height()).flat_map(|j| (0..v.width()).map(move |i| (i, j))).collect()
            } else {
                (0..g.rows).flat_map(|r| (0..g.cols).map(move |c| (c, r))).map(|(c, r)| g.anchor_pixel(c, r)).collect()
            };
            for (i, j) in pixels {
                let x = self.constrained_point(k, [i as f64, j as f64])?;
                out.push((x, v.pointmap.confidence[j * v.width() + i]));
            }
        }
        Ok(out)
    }

    /// Loss value and number of skipped terms at the current parameters.
    pub fn loss(&self, terms: &[EdgeTerms], cfg: &OptimConfig) -> (f64, usize) {
        self.loss_at(&self.params, terms, cfg)
    }

    /// Loss value and number of skipped terms at arbitrary parameters.
    pub fn loss_at(&self, x: &[f64], terms: &[EdgeTerms], cfg: &OptimConfig) -> (f64, usize) {
        let blocks = self.blocks(x);
        let mut total = 0.0;
        let mut skipped = 0;
        for e in terms {
            let (v, s) = match self.stage {
                Stage::Coarse => self.coarse_edge(&blocks[e.a], &blocks[e.b], e, cfg),
                Stage::Refine => {
                    let depth = |k: usize| {
                        move |p: &Endpoint| -> f64 {
                            if self.freeze_depth {
                                p.depth
                            } else {
                                p.offset * libm::exp(x[self.layout.anchor(k, p.anchor as usize)])
                            }
                        }
                    };
                    self.refine_edge(&blocks[e.a], &blocks[e.b], &mut depth(e.a), &mut depth(e.b), e, cfg)
                }
            };
            total += v;
            skipped += s;
        }
        (total, skipped)
    }

    /// Loss, its gradient with respect to every parameter, and the number
    /// of skipped terms.
    pub fn loss_and_gradient(&self, terms: &[EdgeTerms], cfg: &OptimConfig) -> (f64, Vec<f64>, usize) {
        let tape = Tape::with_capacity(self.params.len() + 64 * self.len());
        let x: Vec<Var> = self.params.iter().map(|&v| tape.var(v)).collect();
        let blocks = self.blocks(&x);
        let refine_depth = self.stage == Stage::Refine && !self.freeze_depth;
        let anchors: Vec<Vec<Var>> = if refine_depth {
            (0..self.len())
                .map(|k| (0..self.views[k].anchors.len()).map(|a| x[self.layout.anchor(k, a)].exp()).collect())
                .collect()
        } else {
            Vec::new()
        };
        let mut adj = vec![0.0; tape.len()];
        let sub = Subtape::new();
        let mut total = 0.0;
        let mut skipped = 0;
        for e in terms {
            sub.reset();
            let ba = import_block(&sub, &blocks[e.a]);
            let bb = import_block(&sub, &blocks[e.b]);
            let (v, s) = match self.stage {
                Stage::Coarse => self.coarse_edge(&ba, &bb, e, cfg),
                Stage::Refine => {
                    let mut cache_a: Vec<Option<Var>> = vec![None; if refine_depth { anchors[e.a].len() } else { 0 }];
                    let mut cache_b: Vec<Option<Var>> = vec![None; if refine_depth { anchors[e.b].len() } else { 0 }];
                    let sub = &sub;
                    let anchors = &anchors;
                    let mut depth_a = |p: &Endpoint| -> Var {
                        if !refine_depth {
                            return Var::constant(p.depth);
                        }
                        let z = *cache_a[p.anchor as usize].get_or_insert_with(|| sub.import(anchors[e.a][p.anchor as usize]));
                        z * p.offset
                    };
                    let mut depth_b = |p: &Endpoint| -> Var {
                        if !refine_depth {
                            return Var::constant(p.depth);
                        }
                        let z = *cache_b[p.anchor as usize].get_or_insert_with(|| sub.import(anchors[e.b][p.anchor as usize]));
                        z * p.offset
                    };
                    self.refine_edge(&ba, &bb, &mut depth_a, &mut depth_b, e, cfg)
                }
            };
            sub.accumulate(v, 1.0, &mut adj);
            total += v.value();
            skipped += s;
        }
        tape.backprop(&mut adj);
        adj.truncate(self.params.len());
        (total, adj, skipped)
    }

    fn coarse_edge<T: Real>(&self, ba: &Block<T>, bb: &Block<T>, e: &EdgeTerms, cfg: &OptimConfig) -> (T, usize) {
        let (va, vb) = (&self.views[e.a], &self.views[e.b]);
        let ray = |v: &CanonicalView, p: &Endpoint| -> [f64; 3] {
            let (cx, cy) = (v.width() as f64 / 2.0, v.height() as f64 / 2.0);
            [p.depth * (p.pixel[0] - cx) / v.focal, p.depth * (p.pixel[1] - cy) / v.focal, p.depth]
        };
        let eps2 = cfg.rho_eps * cfg.rho_eps;
        let half = cfg.coarse_exponent / 2.0;
        let mut total = T::cst(0.0);
        let mut skipped = 0;
        for term in &e.terms {
            if term.a.depth <= DEPTH_EPS || term.b.depth <= DEPTH_EPS {
                skipped += 1;
                continue;
            }
            let xa = matvec_f(&ba.a, &ray(va, &term.a));
            let xb = matvec_f(&bb.a, &ray(vb, &term.b));
            let d: [T; 3] = core::array::from_fn(|i| xa[i] + ba.b[i] - xb[i] - bb.b[i]);
            let n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps2;
            total = total + n2.powf(half) * term.q;
        }
        (total, skipped)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine_edge<T: Real>(
        &self,
        ba: &Block<T>,
        bb: &Block<T>,
        depth_a: &mut dyn FnMut(&Endpoint) -> T,
        depth_b: &mut dyn FnMut(&Endpoint) -> T,
        e: &EdgeTerms,
        cfg: &OptimConfig,
    ) -> (T, usize) {
        let (va, vb) = (&self.views[e.a], &self.views[e.b]);
        let center = |v: &CanonicalView| (v.width() as f64 / 2.0, v.height() as f64 / 2.0);
        let (ca, cb) = (center(va), center(vb));
        let eps2 = cfg.rho_eps * cfg.rho_eps;
        let half = cfg.refine_exponent / 2.0;
        let mut total = T::cst(0.0);
        let mut skipped = 0;
        // lift `p` from camera `from`, project into `to`, compare with `target`
        let residual = |from: &Block<T>, c_from: (f64, f64), z: T, p: &Endpoint, to: &Block<T>, c_to: (f64, f64), target: &Endpoint| -> Option<T> {
            let v = [z * from.inv_f * (p.pixel[0] - c_from.0), z * from.inv_f * (p.pixel[1] - c_from.1), z];
            let lifted = matvec(&from.a, &v);
            let w: [T; 3] = core::array::from_fn(|i| lifted[i] + from.b[i]);
            let u = matvec(&to.m, &w);
            let u: [T; 3] = core::array::from_fn(|i| u[i] + to.t[i]);
            if !(u[2].value() > DEPTH_EPS) {
                return None;
            }
            let rx = -(to.f * u[0] / u[2]) + (target.pixel[0] - c_to.0);
            let ry = -(to.f * u[1] / u[2]) + (target.pixel[1] - c_to.1);
            Some((rx * rx + ry * ry + eps2).powf(half))
        };
        for term in &e.terms {
            let za = depth_a(&term.a);
            let zb = depth_b(&term.b);
            match residual(bb, cb, zb, &term.b, ba, ca, &term.a) {
                Some(r) => total = total + r * term.q,
                None => skipped += 1,
            }
            match residual(ba, ca, za, &term.a, bb, cb, &term.b) {
                Some(r) => total = total + r * term.q,
                None => skipped += 1,
            }
        }
        (total, skipped)
    }
}

fn import_block<'s, 'o>(sub: &'s Subtape<'o>, b: &Block<Var<'o>>) -> Block<Var<'s>> {
    Block {
        a: b.a.map(|v| sub.import(v)),
        b: b.b.map(|v| sub.import(v)),
        m: b.m.map(|v| sub.import(v)),
        t: b.t.map(|v| sub.import(v)),
        f: sub.import(b.f),
        inv_f: sub.import(b.inv_f),
    }
}

/// First-order optimizer with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / (libm::sqrt(self.v[i] / c2) + self.eps);
        }
    }
}

/// Learning rate at step `t` of `total`, decaying from `base` to zero.
pub fn cosine_lr(base: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 + libm::cos(core::f64::consts::PI * t as f64 / total as f64)) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub stage: u8,
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub skipped: usize,
}

/// Lower is better: fewer skipped terms first, then the loss itself.
fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Runs one stage and leaves the state at the best iterate visited, which
/// keeps Adam's sign-sized first steps from undoing an already exact start.
fn run_stage(state: &mut SceneState, terms: &[EdgeTerms], cfg: &OptimConfig, stage: u8, iters: usize, lr: f64, trace: &mut Vec<TraceEntry>) -> Result<()> {
    let mut adam = Adam::new(state.params.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut best: Option<((usize, f64), Vec<f64>)> = None;
    for iter in 0..iters {
        let (loss, grad, skipped) = state.loss_and_gradient(terms, cfg);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { stage, iter });
        }
        if best.as_ref().is_none_or(|(key, _)| better((skipped, loss), *key)) {
            best = Some(((skipped, loss), state.params.clone()));
        }
        let rate = cosine_lr(lr, iter, iters);
        trace.push(TraceEntry {
            stage,
            iter,
            lr: rate,
            loss,
            skipped,
        });
        adam.step(&mut state.params, &grad, rate);
        state.normalize();
    }
    if let Some((key, params)) = best {
        let (loss, skipped) = state.loss(terms, cfg);
        if !loss.is_finite() || better(key, (skipped, loss)) {
            state.params = params;
        }
    }
    Ok(())
}

/// Runs the coarse stage (if the state is still in it) and then refinement,
/// returning one trace entry per iteration. Single-view scenes are returned
/// untouched apart from the stage switch.
pub fn optimize(state: &mut SceneState, terms: &[EdgeTerms], cfg: &OptimConfig) -> Result<Vec<TraceEntry>> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.coarse_iters + cfg.refine_iters);
    if state.len() <= 1 {
        state.enter_refine();
        state.sync_tree();
        return Ok(trace);
    }
    if state.stage == Stage::Coarse {
        run_stage(state, terms, cfg, 1, cfg.coarse_iters, cfg.coarse_lr, &mut trace)?;
        state.enter_refine();
    }
    run_stage(state, terms, cfg, 2, cfg.refine_iters, cfg.refine_lr, &mut trace)?;
    state.sync_tree();
    Ok(trace)
}

/// Scaled rigid transform taking `n`'s canonical frame to `m`'s, estimated
/// from one pair prediction.
///
/// The prediction expresses `n`'s pixels in both frames, so canonical points
/// of `n` at matched pixels align with the cross-frame map at the same
/// pixels. A least-squares scale then brings the pair's own map of `m` onto
/// `m`'s canonical map.
pub fn relative_from_pair(pred: &PairPrediction, n: usize, m: usize, views: &[CanonicalView]) -> Result<Similarity> {
    let cross = pred.cross(n).ok_or(Error::MissingPrediction(n, m))?;
    let own_m = pred.own(m).ok_or(Error::MissingPrediction(n, m))?;
    let (vn, vm) = (&views[n], &views[m]);
    let forward = pred.edge.0 == n;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    let mut seen = alloc::collections::BTreeSet::new();
    for mt in &pred.matches.pairs {
        let y = if forward { mt.a } else { mt.b };
        let i = (libm::round(y[0]) as usize).min(vn.width() - 1);
        let j = (libm::round(y[1]) as usize).min(vn.height() - 1);
        let k = j * vn.width() + i;
        let wt = mt.conf * cross.confidence[k];
        if wt > 0.0 && seen.insert(k) {
            src.push(vn.pointmap.points[k]);
            dst.push(cross.points[k]);
            w.push(wt);
        }
    }
    if src.len() < 3 {
        return Err(Error::TooFewMatches(n, m));
    }
    let s1 = umeyama(&src, &dst, Some(&w)).map_err(|_| Error::TooFewMatches(n, m))?;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, x) in own_m.points.iter().enumerate() {
        let c = own_m.confidence[k].max(1e-12);
        num += c * x.dot(&vm.pointmap.points[k]);
        den += c * x.norm_squared();
    }
    let s2 = if den > 0.0 { num / den } else { 1.0 };
    Ok(Similarity {
        scale: s1.scale * s2,
        rotation: s1.rotation,
        translation: s1.translation * s2,
    })
}

/// Initial state from relative transforms chained along a maximum spanning
/// tree of the scene graph (weights: match counts).
pub fn init_from_pairs(graph: &SceneGraph, tree: KinematicTree, predictions: &[PairPrediction], views: Vec<CanonicalView>, cfg: &OptimConfig) -> Result<SceneState> {
    let n = views.len();
    if graph.n != n {
        return Err(Error::ShapeMismatch);
    }
    let index: BTreeMap<(usize, usize), usize> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.edge.0.min(p.edge.1), p.edge.0.max(p.edge.1)), i))
        .collect();
    let mut edges: Vec<(usize, usize, usize)> = graph
        .edges
        .iter()
        .map(|&(a, b)| index.get(&(a, b)).map(|&i| (a, b, predictions[i].matches.len())).ok_or(Error::MissingPrediction(a, b)))
        .collect::<Result<_>>()?;
    edges.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    // Kruskal
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b, _) in &edges {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra.max(rb)] = ra.min(rb);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut world = vec![Pose::identity(); n];
    let mut sigma = vec![1.0; n];
    let mut done = vec![false; n];
    let root = tree.root();
    for start in core::iter::once(root).chain(0..n) {
        if done[start] {
            continue;
        }
        done[start] = true;
        let mut queue = alloc::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if done[v] {
                    continue;
                }
                done[v] = true;
                let pred = &predictions[index[&(u.min(v), u.max(v))]];
                let rel = match relative_from_pair(pred, u, v, &views) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("initialization of edge ({u}, {v}) falls back to identity: {e}");
                        Similarity::identity()
                    }
                };
                sigma[v] = rel.scale * sigma[u];
                let r = rel.rotation * world[u].rotation;
                let t = rel.rotation * world[u].translation * rel.scale + rel.translation;
                world[v] = Pose::new(r, t);
                queue.push_back(v);
            }
        }
    }
    SceneState::new(views, tree, &world, &sigma, cfg.shared_focal, cfg.freeze_depth)
}

/// Initial state with uniformly random rotations and translations drawn at
/// the scale of the scene depth.
pub fn init_random(views: Vec<CanonicalView>, tree: KinematicTree, cfg: &OptimConfig) -> Result<SceneState> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = median(&views.iter().map(|v| v.median_depth()).collect::<Vec<_>>()).unwrap_or(1.0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let world: Vec<Pose> = (0..views.len())
        .map(|_| {
            let q = Quaternion::new(normal(), normal(), normal(), normal());
            let t = Vec3::new(normal(), normal(), normal()) * scale;
            Pose::new(UnitQuaternion::from_quaternion(q), t)
        })
        .collect();
    let sigma: Vec<f64> = (0..views.len()).map(|_| rng.random_range(0.5..2.0)).collect();
    SceneState::new(views, tree, &world, &sigma, cfg.shared_focal, cfg.freeze_depth)
}
