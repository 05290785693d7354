//! Synthetic scenes and a simulated pairwise predictor.
//!
//! Scenes are analytic (planes, boxes, spheres) so depth, visibility and
//! correspondences are exact. Simulated predictions carry everything a real
//! predictor dump would: four pointmaps with confidences, dense features and
//! matches, with an unknown per-pair scale and optional noise and outliers.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{CameraParams, Intrinsics, PointMap, Pose, DEPTH_EPS};
use crate::linalg::Vec3;
use crate::local::{Match, MatchSet, PairPrediction};
use crate::retrieval::FeatureMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SceneKind {
    Plane,
    Sphere,
    /// Room interior with boxes standing on the floor; every surface is
    /// planar, which keeps sub-pixel depth interpolation exact.
    #[default]
    Boxes,
    /// Room interior with spheres.
    Blobs,
}

impl SceneKind {
    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Plane => "plane",
            SceneKind::Sphere => "sphere",
            SceneKind::Boxes => "boxes",
            SceneKind::Blobs => "blobs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SceneKind::Plane, SceneKind::Sphere, SceneKind::Boxes, SceneKind::Blobs]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub n_views: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// All optical centers coincide; views differ by rotation only.
    pub pure_rotation: bool,
    /// Angular extent of the camera arc around the scene center, degrees.
    pub arc_degrees: f64,
    /// Present cameras in a random order instead of along the arc.
    pub shuffle: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            kind: SceneKind::Boxes,
            n_views: 6,
            seed: 0,
            width: 64,
            height: 48,
            focal: 60.0,
            pure_rotation: false,
            arc_degrees: 50.0,
            shuffle: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of the log depth factor.
    pub depth_noise: f64,
    pub match_outlier_rate: f64,
    /// 0: confidences carry no information, 1: they track the noise.
    pub confidence_fidelity: f64,
    /// Standard deviation of additive feature noise.
    pub feature_noise: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            depth_noise: 0.0,
            match_outlier_rate: 0.0,
            confidence_fidelity: 1.0,
            feature_noise: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth_noise >= 0.0
            && self.depth_noise.is_finite()
            && (0.0..1.0).contains(&self.match_outlier_rate)
            && (0.0..=1.0).contains(&self.confidence_fidelity)
            && self.feature_noise >= 0.0
            && self.feature_noise.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("noise rates out of range".into()))
        }
    }

    fn is_noiseless(&self) -> bool {
        self.depth_noise == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Primitive {
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64, inside: bool },
    Cuboid { min: Vec3, max: Vec3, inside: bool },
}

/// Ray hit: distance along the ray and the planar facet (or curved patch) id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub facet: u32,
}

/// Union of analytic primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    prims: Vec<(Primitive, u32)>,
}

impl Surface {
    /// Nearest hit with `t > 1e-9` along `origin + t * dir`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, facet: u32| {
            if t > 1e-9 && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, facet });
            }
        };
        for (prim, base) in &self.prims {
            match *prim {
                Primitive::Plane { normal, offset } => {
                    let den = normal.dot(dir);
                    if den.abs() > 1e-15 {
                        consider((offset - normal.dot(origin)) / den, *base);
                    }
                }
                Primitive::Sphere { center, radius, inside } => {
                    let oc = origin - center;
                    let a = dir.norm_squared();
                    let b = oc.dot(dir);
                    let c = oc.norm_squared() - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let s = libm::sqrt(disc);
                        consider(if inside { (-b + s) / a } else { (-b - s) / a }, *base);
                    }
                }
                Primitive::Cuboid { min, max, inside } => {
                    let (mut t_in, mut t_out) = (f64::NEG_INFINITY, f64::INFINITY);
                    let (mut f_in, mut f_out) = (0u32, 0u32);
                    let mut miss = false;
                    for k in 0..3 {
                        if dir[k].abs() < 1e-300 {
                            if origin[k] < min[k] || origin[k] > max[k] {
                                miss = true;
                            }
                            continue;
                        }
                        let (t0, t1) = ((min[k] - origin[k]) / dir[k], (max[k] - origin[k]) / dir[k]);
                        let (near, far, fn_, ff) = if t0 < t1 {
                            (t0, t1, 2 * k as u32, 2 * k as u32 + 1)
                        } else {
                            (t1, t0, 2 * k as u32 + 1, 2 * k as u32)
                        };
                        if near > t_in {
                            t_in = near;
                            f_in = fn_;
                        }
                        if far < t_out {
                            t_out = far;
                            f_out = ff;
                        }
                    }
                    if !miss && t_in <= t_out {
                        if inside {
                            consider(t_out, base + f_out);
                        } else {
                            consider(t_in, base + f_in);
                        }
                    }
                }
            }
        }
        best
    }

    fn room() -> Vec<(Primitive, u32)> {
        vec![(
            Primitive::Cuboid {
                min: Vec3::new(-7.0, -4.0, -7.0),
                max: Vec3::new(7.0, 1.5, 7.0),
                inside: true,
            },
            0,
        )]
    }

    fn generate(kind: SceneKind, rng: &mut ChaCha8Rng) -> Self {
        let mut prims = Vec::new();
        match kind {
            SceneKind::Plane => prims.push((
                Primitive::Plane {
                    normal: Vec3::new(0.05, -0.1, 1.0).normalize(),
                    offset: 2.0,
                },
                0,
            )),
            SceneKind::Sphere => prims.push((
                Primitive::Sphere {
                    center: Vec3::zeros(),
                    radius: 8.0,
                    inside: true,
                },
                0,
            )),
            SceneKind::Boxes => {
                prims.extend(Self::room());
                let layout = [
                    (Vec3::new(-1.0, 0.2, -0.8), Vec3::new(1.2, 1.3, 1.2)),
                    (Vec3::new(0.5, -0.6, 0.0), Vec3::new(1.0, 2.1, 1.1)),
                    (Vec3::new(-2.6, 0.5, 1.6), Vec3::new(1.1, 1.0, 0.9)),
                    (Vec3::new(1.8, 0.0, 2.4), Vec3::new(1.3, 1.5, 1.0)),
                ];
                for (k, (corner, size)) in layout.iter().enumerate() {
                    let jitter = Vec3::new(rng.random_range(-0.2..0.2), 0.0, rng.random_range(-0.2..0.2));
                    let min = corner + jitter;
                    let mut max = min + size;
                    max.y = 1.5;
                    prims.push((Primitive::Cuboid { min, max, inside: false }, 6 + 6 * k as u32));
                }
            }
            SceneKind::Blobs => {
                prims.extend(Self::room());
                for k in 0..4 {
                    let center = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.8), rng.random_range(-1.0..2.5));
                    let radius = rng.random_range(0.4..0.8);
                    prims.push((Primitive::Sphere { center, radius, inside: false }, 6 + k));
                }
            }
        }
        Surface { prims }
    }
}

/// Ground-truth cameras (σ = 1) and the surface they observe.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub config: SceneConfig,
    pub cameras: Vec<CameraParams>,
    pub surface: Surface,
}

fn look_at(center: &Vec3, forward: &Vec3, roll: f64) -> Pose {
    let z = forward.normalize();
    let x = Vec3::new(0.0, 1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    let rows = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let r = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), roll) * UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rows));
    Pose::new(r, -(r * center))
}

/// Scene with the default configuration for the given kind and size.
pub fn generate_scene(kind: SceneKind, n_views: usize, seed: u64) -> Result<SynthScene> {
    generate_scene_with(&SceneConfig {
        kind,
        n_views,
        seed,
        ..SceneConfig::default()
    })
}

/// Cameras on a jittered arc at distance ~4 around the scene center, all
/// looking at it; with `pure_rotation` they share one center and pan instead.
pub fn generate_scene_with(cfg: &SceneConfig) -> Result<SynthScene> {
    if cfg.n_views == 0 {
        return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
    }
    if cfg.width < 2 || cfg.height < 2 || !(cfg.focal > 0.0) {
        return Err(Error::Invalid("image size and focal must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let surface = Surface::generate(cfg.kind, &mut rng);
    let intr = Intrinsics::new(cfg.focal, cfg.width as u32, cfg.height as u32)?;
    let n = cfg.n_views;
    let arc = cfg.arc_degrees.to_radians();
    let step = if n > 1 { arc / (n - 1) as f64 } else { 0.0 };
    let shared_center = Vec3::new(0.0, -0.6, -4.0);
    let mut cameras = Vec::with_capacity(n);
    for k in 0..n {
        let yaw = -arc / 2.0 + step * k as f64 + rng.random_range(-0.25..0.25) * step;
        let pitch = rng.random_range(0.05..0.2);
        let roll = rng.random_range(-0.05..0.05);
        let forward = Vec3::new(libm::sin(yaw) * libm::cos(pitch), libm::sin(pitch), libm::cos(yaw) * libm::cos(pitch));
        let center = if cfg.pure_rotation {
            shared_center
        } else {
            let r = rng.random_range(3.7..4.3);
            Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0) - forward * r
        };
        cameras.push(CameraParams::new(intr, look_at(&center, &forward, roll), 1.0)?);
    }
    if cfg.shuffle {
        for k in (1..n).rev() {
            cameras.swap(k, rng.random_range(0..=k));
        }
    }
    Ok(SynthScene {
        config: cfg.clone(),
        cameras,
        surface,
    })
}

/// Exact per-pixel rendering of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRender {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub facet: Vec<u32>,
    /// World points; own-frame point of pixel `(i, j)` is
    /// `depth * ((i - cx)/f, (j - cy)/f, 1)`.
    pub world: Vec<Vec3>,
}

impl SynthScene {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn gt_poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| c.pose).collect()
    }

    fn ray(&self, view: usize, pixel: [f64; 2]) -> (Vec3, Vec3) {
        let cam = &self.cameras[view];
        let (cx, cy) = cam.intrinsics.principal_point();
        let f = cam.intrinsics.focal;
        let d = cam.pose.rotation.inverse() * Vec3::new((pixel[0] - cx) / f, (pixel[1] - cy) / f, 1.0);
        (cam.pose.center(), d)
    }

    pub fn render(&self, view: usize) -> Result<ViewRender> {
        let (w, h) = (self.config.width, self.config.height);
        let mut depth = Vec::with_capacity(w * h);
        let mut facet = Vec::with_capacity(w * h);
        let mut world = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                let (o, d) = self.ray(view, [i as f64, j as f64]);
                let hit = self.surface.intersect(&o, &d).ok_or(Error::DegenerateGeometry("pixel ray escapes the scene"))?;
                depth.push(hit.t);
                facet.push(hit.facet);
                world.push(o + d * hit.t);
            }
        }
        Ok(ViewRender {
            width: w,
            height: h,
            depth,
            facet,
            world,
        })
    }

    /// Sub-pixel location of world point `x` in `view` if it is in front of
    /// the camera, inside the image and not occluded.
    pub fn visible_at(&self, view: usize, x: &Vec3) -> Option<[f64; 2]> {
        let cam = &self.cameras[view];
        let u = cam.to_camera(x);
        if u.z <= DEPTH_EPS {
            return None;
        }
        let (cx, cy) = cam.intrinsics.principal_point();
        let f = cam.intrinsics.focal;
        let p = [f * u.x / u.z + cx, f * u.y / u.z + cy];
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w - 1.0 && p[1] <= h - 1.0) {
            return None;
        }
        let (o, d) = self.ray(view, p);
        let hit = self.surface.intersect(&o, &d)?;
        (hit.t >= u.z * (1.0 - 1e-9)).then_some(p)
    }

    /// Fraction of `a`'s pixels whose surface point is visible in `b`.
    pub fn overlap(&self, a: usize, b: usize) -> Result<f64> {
        let r = self.render(a)?;
        let seen = r.world.iter().filter(|x| self.visible_at(b, x).is_some()).count();
        Ok(seen as f64 / r.world.len() as f64)
    }
}

fn mix(seed: u64, a: u64, b: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ salt.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random Fourier encoding of world positions shared by all views.
struct Encoder {
    freqs: Vec<Vec3>,
}

impl Encoder {
    fn new(seed: u64, dim: usize, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = dim / 2;
        let freqs = (0..k)
            .map(|i| {
                let scale = lo * libm::pow(hi / lo, i as f64 / (k.max(2) - 1) as f64);
                let d = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                d.normalize() * scale
            })
            .collect();
        Encoder { freqs }
    }

    fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    fn encode(&self, x: &Vec3, noise: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        for f in &self.freqs {
            let phase = f.dot(x);
            for v in [libm::sin(phase), libm::cos(phase)] {
                let e: f64 = if noise > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                out.push(v + noise * e);
            }
        }
    }
}

/// Dimension of the dense per-pixel features.
pub const PIXEL_FEATURE_DIM: usize = 16;
/// Dimension and patch size of the per-image retrieval tokens.
pub const TOKEN_DIM: usize = 16;
pub const TOKEN_PATCH: usize = 8;

/// Per-image data: retrieval tokens and a monocular pointmap.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewData {
    pub image: usize,
    pub tokens: FeatureMap,
    pub monocular: PointMap,
}

/// A simulated prediction with its hidden per-match outlier flags.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPair {
    pub prediction: PairPrediction,
    pub outliers: Vec<bool>,
    pub gauge: f64,
}

fn noisy_own_points(render: &ViewRender, cam: &CameraParams, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<f64>) {
    let (cx, cy) = cam.intrinsics.principal_point();
    let f = cam.intrinsics.focal;
    let mut pts = Vec::with_capacity(render.depth.len());
    let mut conf = Vec::with_capacity(render.depth.len());
    for (k, &z) in render.depth.iter().enumerate() {
        let (i, j) = ((k % render.width) as f64, (k / render.width) as f64);
        let (factor, c) = if noise.is_noiseless() {
            (1.0, 1.0)
        } else {
            let e: f64 = StandardNormal.sample(rng);
            // fidelity 1: confidence falls with the drawn error; 0: constant
            (libm::exp(noise.depth_noise * e), 1.0 / (1.0 + noise.confidence_fidelity * e * e))
        };
        let z = z * factor;
        pts.push(Vec3::new(z * (i - cx) / f, z * (j - cy) / f, z));
        conf.push(c);
    }
    (pts, conf)
}

fn same_facet(render: &ViewRender, p: [f64; 2], facet: u32) -> bool {
    let (w, h) = (render.width, render.height);
    let i0 = (libm::floor(p[0]) as usize).min(w - 2);
    let j0 = (libm::floor(p[1]) as usize).min(h - 2);
    [(i0, j0), (i0 + 1, j0), (i0, j0 + 1), (i0 + 1, j0 + 1)]
        .iter()
        .all(|&(i, j)| render.facet[j * w + i] == facet)
}

/// Default stride of the seed grid used for ground-truth matches.
pub const MATCH_STRIDE: usize = 8;

/// Per-image tokens and monocular pointmap with its own random gauge.
pub fn simulate_view(scene: &SynthScene, view: usize, noise: &NoiseConfig) -> Result<ViewData> {
    noise.validate()?;
    let render = scene.render(view)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(scene.config.seed, view as u64, u64::MAX, 1));
    let gauge = rng.random_range(0.7..1.4);
    let (mut pts, conf) = noisy_own_points(&render, &scene.cameras[view], noise, &mut rng);
    pts.iter_mut().for_each(|p| *p *= gauge);
    let monocular = PointMap::new(render.width, render.height, view, pts, conf)?;

    let enc = Encoder::new(mix(scene.config.seed, 0, 0, 2), TOKEN_DIM, 0.15, 2.5);
    let (tw, th) = (render.width.div_ceil(TOKEN_PATCH), render.height.div_ceil(TOKEN_PATCH));
    let mut data = Vec::with_capacity(tw * th * enc.dim());
    for v in 0..th {
        for u in 0..tw {
            let i = (u * TOKEN_PATCH + TOKEN_PATCH / 2).min(render.width - 1);
            let j = (v * TOKEN_PATCH + TOKEN_PATCH / 2).min(render.height - 1);
            enc.encode(&render.world[j * render.width + i], noise.feature_noise, &mut rng, &mut data);
        }
    }
    Ok(ViewData {
        image: view,
        tokens: FeatureMap::new(th, tw, enc.dim(), data)?,
        monocular,
    })
}

/// Simulated prediction for `edge`, failing with `NoOverlap` when no
/// ground-truth correspondence survives the visibility checks.
pub fn simulate_pair(scene: &SynthScene, edge: (usize, usize), noise: &NoiseConfig) -> Result<SimulatedPair> {
    simulate_pair_with(scene, edge, noise, MATCH_STRIDE)
}

pub fn simulate_pair_with(scene: &SynthScene, edge: (usize, usize), noise: &NoiseConfig, stride: usize) -> Result<SimulatedPair> {
    let sim = render_pair(scene, edge, noise, stride)?;
    if sim.prediction.matches.is_empty() {
        return Err(Error::NoOverlap(edge.0, edge.1));
    }
    Ok(sim)
}

/// Like [`simulate_pair_with`] but also returns pairs without matches.
pub fn render_pair(scene: &SynthScene, edge: (usize, usize), noise: &NoiseConfig, stride: usize) -> Result<SimulatedPair> {
    noise.validate()?;
    let (a, b) = edge;
    if a == b || a >= scene.len() || b >= scene.len() {
        return Err(Error::MissingNode(a.max(b)));
    }
    let stride = stride.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(scene.config.seed, a as u64, b as u64, 3));
    let gauge = rng.random_range(0.7..1.4);
    let (ra, rb) = (scene.render(a)?, scene.render(b)?);
    let (ca, cb) = (&scene.cameras[a], &scene.cameras[b]);
    let (w, h) = (ra.width, ra.height);

    let (pa, conf_a) = noisy_own_points(&ra, ca, noise, &mut rng);
    let (pb, conf_b) = noisy_own_points(&rb, cb, noise, &mut rng);
    // own frame -> other frame, rigid part only; the gauge scales everything
    let a_to_b = cb.pose.compose(&ca.pose.inverse());
    let b_to_a = a_to_b.inverse();
    let scaled = |v: &[Vec3], map: Option<&Pose>| -> Vec<Vec3> { v.iter().map(|p| map.map_or(*p, |m| m.transform(p)) * gauge).collect() };
    let view_a = PointMap::new(w, h, a, scaled(&pa, None), conf_a.clone())?;
    let view_a_in_b = PointMap::new(w, h, b, scaled(&pa, Some(&a_to_b)), conf_a)?;
    let view_b = PointMap::new(w, h, b, scaled(&pb, None), conf_b.clone())?;
    let view_b_in_a = PointMap::new(w, h, a, scaled(&pb, Some(&b_to_a)), conf_b)?;

    let mut pairs: Vec<Match> = Vec::new();
    let mut seen = alloc::collections::BTreeSet::new();
    let mut push = |m: Match, pairs: &mut Vec<Match>| {
        let key = [m.a[0].to_bits(), m.a[1].to_bits(), m.b[0].to_bits(), m.b[1].to_bits()];
        if seen.insert(key) {
            pairs.push(m);
        }
    };
    for (render_from, other, render_other, forward) in [(&ra, b, &rb, true), (&rb, a, &ra, false)] {
        let mut j = stride / 2;
        while j < h {
            let mut i = stride / 2;
            while i < w {
                let k = j * w + i;
                let x = render_from.world[k];
                if let Some(p) = scene.visible_at(other, &x) {
                    if same_facet(render_other, p, render_from.facet[k]) {
                        let q = [i as f64, j as f64];
                        let (ma, mb) = if forward { (q, p) } else { (p, q) };
                        push(Match { a: ma, b: mb, conf: 1.0 }, &mut pairs);
                    }
                }
                i += stride;
            }
            j += stride;
        }
    }
    let mut flagged: Vec<(Match, bool)> = pairs.into_iter().map(|m| (m, false)).collect();
    if noise.match_outlier_rate > 0.0 {
        let q_out = 1.0 - 0.95 * noise.confidence_fidelity;
        for (m, flag) in flagged.iter_mut() {
            if rng.random::<f64>() < noise.match_outlier_rate {
                *flag = true;
                m.a = [rng.random_range(0..w) as f64, rng.random_range(0..h) as f64];
                m.b = [rng.random_range(0..w) as f64, rng.random_range(0..h) as f64];
                m.conf = q_out;
            }
        }
        // a random replacement may collide with an existing pair
        let mut keep = alloc::collections::BTreeSet::new();
        flagged.retain(|(m, _)| keep.insert([m.a[0].to_bits(), m.a[1].to_bits(), m.b[0].to_bits(), m.b[1].to_bits()]));
    }
    let (pairs, outliers): (Vec<Match>, Vec<bool>) = flagged.into_iter().unzip();

    let enc = Encoder::new(mix(scene.config.seed, 0, 0, 4), PIXEL_FEATURE_DIM, 0.5, 12.0);
    let features = |r: &ViewRender, rng: &mut ChaCha8Rng| -> Result<FeatureMap> {
        let mut data = Vec::with_capacity(r.world.len() * enc.dim());
        for x in &r.world {
            enc.encode(x, noise.feature_noise, rng, &mut data);
        }
        FeatureMap::new(r.height, r.width, enc.dim(), data)
    };
    let features_a = features(&ra, &mut rng)?;
    let features_b = features(&rb, &mut rng)?;
    let matches = MatchSet::new(edge, pairs, (w, h), (w, h))?;
    let prediction = PairPrediction {
        edge,
        view_a,
        view_b_in_a,
        view_b,
        view_a_in_b,
        features_a,
        features_b,
        matches,
    };
    prediction.validate()?;
    Ok(SimulatedPair {
        prediction,
        outliers,
        gauge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::umeyama;

    #[test]
    fn single_view_and_determinism() {
        let s = generate_scene(SceneKind::Boxes, 1, 3).unwrap();
        assert_eq!(s.len(), 1);
        let a = generate_scene(SceneKind::Blobs, 5, 42).unwrap();
        let b = generate_scene(SceneKind::Blobs, 5, 42).unwrap();
        assert_eq!(a, b);
        let pa = simulate_pair(&a, (0, 1), &NoiseConfig { depth_noise: 0.02, ..Default::default() }).unwrap();
        let pb = simulate_pair(&b, (0, 1), &NoiseConfig { depth_noise: 0.02, ..Default::default() }).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn orbit_views_overlap() {
        let s = generate_scene(SceneKind::Boxes, 8, 1).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    let o = s.overlap(a, b).unwrap();
                    assert!(o >= 0.2, "overlap {a}->{b} = {o}");
                }
            }
        }
    }

    #[test]
    fn every_pixel_sees_the_surface_in_front() {
        for kind in [SceneKind::Boxes, SceneKind::Blobs] {
            for (pure_rotation, arc_degrees) in [(false, 50.0), (false, 360.0), (true, 50.0)] {
                for seed in 0..3 {
                    let cfg = SceneConfig { kind, n_views: 6, seed, pure_rotation, arc_degrees, ..Default::default() };
                    let s = generate_scene_with(&cfg).unwrap();
                    for k in 0..s.len() {
                        let r = s.render(k).unwrap();
                        assert!(r.depth.iter().all(|z| z.is_finite() && *z > 0.0), "{kind:?} seed {seed} view {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_pair_is_exact() {
        let s = generate_scene(SceneKind::Boxes, 4, 5).unwrap();
        let sim = simulate_pair(&s, (0, 2), &NoiseConfig::default()).unwrap();
        let p = &sim.prediction;
        let ra = s.render(0).unwrap();
        for (k, x) in p.view_a.points.iter().enumerate() {
            assert!((x.z / sim.gauge - ra.depth[k]).abs() < 1e-12 * ra.depth[k]);
        }
        assert!(p.matches.len() > 20);
        assert!(sim.outliers.iter().all(|o| !o));
        let rb = s.render(2).unwrap();
        for m in &p.matches.pairs {
            // whichever endpoint is integral is the seed; the other is its projection
            let (x, other, q) = if m.a[0].fract() == 0.0 && m.a[1].fract() == 0.0 {
                (ra.world[m.a[1] as usize * 64 + m.a[0] as usize], 2, m.b)
            } else {
                (rb.world[m.b[1] as usize * 64 + m.b[0] as usize], 0, m.a)
            };
            let y = s.visible_at(other, &x).unwrap();
            assert!((y[0] - q[0]).abs() < 1e-9 && (y[1] - q[1]).abs() < 1e-9);
        }
        // the cross-frame map is the own-frame map moved rigidly
        let sim_t = umeyama(&p.view_a.points, &p.view_a_in_b.points, None).unwrap();
        assert!((sim_t.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn outlier_fraction_is_binomial() {
        let s = generate_scene(SceneKind::Boxes, 3, 9).unwrap();
        let noise = NoiseConfig {
            match_outlier_rate: 0.2,
            ..Default::default()
        };
        let sim = simulate_pair_with(&s, (0, 1), &noise, 2).unwrap();
        let n = sim.outliers.len();
        assert!(n >= 500, "only {n} matches");
        let k = sim.outliers.iter().filter(|&&o| o).count() as f64;
        let (mean, sd) = (0.2 * n as f64, libm::sqrt(n as f64 * 0.16));
        assert!((k - mean).abs() < 4.0 * sd, "{k} outliers of {n}");
    }

    #[test]
    fn pure_rotation_cross_maps_have_no_translation() {
        let s = generate_scene_with(&SceneConfig {
            pure_rotation: true,
            ..Default::default()
        })
        .unwrap();
        let p = simulate_pair(&s, (0, 3), &NoiseConfig::default()).unwrap().prediction;
        let t = umeyama(&p.view_b.points, &p.view_b_in_a.points, None).unwrap();
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn view_data_shapes() {
        let s = generate_scene(SceneKind::Plane, 2, 0).unwrap();
        let v = simulate_view(&s, 1, &NoiseConfig::default()).unwrap();
        assert_eq!((v.tokens.w, v.tokens.h, v.tokens.dim), (8, 6, TOKEN_DIM));
        assert_eq!(v.monocular.frame, 1);
    }
}
