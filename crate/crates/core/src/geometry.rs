//! Pinhole cameras, scaled world-to-camera poses and pointmaps.
//!
//! Pixel coordinates are `(i, j)` with `i` along the image width and `j`
//! along the height. A world point `x` is seen by camera `n` at
//! `K_n (R_n sigma_n x + t_n)` followed by the perspective division.

use alloc::vec::Vec;
use nalgebra::{Matrix4, Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::graph::KinematicTree;
use crate::linalg::Vec3;

/// Smallest camera-frame depth accepted by [`reproject`].
pub const DEPTH_EPS: f64 = 1e-9;

/// Square-pixel pinhole intrinsics with the principal point at the image center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(focal: f64, width: u32, height: u32) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Invalid(alloc::format!("focal must be positive, got {focal}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("image dimensions must be at least 1".into()));
        }
        Ok(Intrinsics { focal, width, height })
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn with_focal(self, focal: f64) -> Self {
        Intrinsics { focal, ..self }
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`, renormalizing.
    pub fn from_raw(q: [f64; 4], t: [f64; 3]) -> Self {
        Pose {
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])),
            translation: Vec3::new(t[0], t[1], t[2]),
        }
    }

    pub fn translation_z(z: f64) -> Self {
        Pose::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, z))
    }

    /// Raw `(w, x, y, z)` quaternion components.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Renormalizes the quaternion so accumulated drift stays bounded.
    pub fn renormalized(&self) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(self.rotation.into_inner()),
            translation: self.translation,
        }
    }

    /// Optical center in world coordinates (for `sigma = 1`).
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }
}

/// A camera with intrinsics, world-to-camera pose and per-camera scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraParams {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub sigma: f64,
}

impl CameraParams {
    pub fn new(intrinsics: Intrinsics, pose: Pose, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(alloc::format!("sigma must be positive, got {sigma}")));
        }
        Ok(CameraParams {
            intrinsics,
            pose,
            sigma,
        })
    }

    /// World point to camera-frame coordinates `R sigma x + t`.
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.pose.transform(&(x * self.sigma))
    }
}

/// Projects a world point onto the image plane of `cam`.
pub fn reproject(cam: &CameraParams, x: &Vec3) -> Result<[f64; 2]> {
    let p = cam.to_camera(x);
    if !(p.z > DEPTH_EPS) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    let (cx, cy) = cam.intrinsics.principal_point();
    let f = cam.intrinsics.focal;
    Ok([f * p.x / p.z + cx, f * p.y / p.z + cy])
}

/// Lifts pixel `(i, j)` at camera-frame depth `depth` back to world coordinates.
pub fn inverse_reproject(cam: &CameraParams, pixel: [f64; 2], depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let (cx, cy) = cam.intrinsics.principal_point();
    let f = cam.intrinsics.focal;
    let local = Vec3::new(depth * (pixel[0] - cx) / f, depth * (pixel[1] - cy) / f, depth);
    Ok(cam.pose.inverse().transform(&local) / cam.sigma)
}

/// `T~ raw`, where `T~` translates along the optical axis by the median
/// canonical depth rescaled to the current focal.
pub fn reparametrized_pose(raw: &Pose, median_canonical_depth: f64, focal: f64, canonical_focal: f64) -> Pose {
    let offset = median_canonical_depth * focal / canonical_focal;
    Pose::translation_z(offset).compose(raw)
}

/// World-to-camera pose of `cam_id` obtained by chaining relative poses from
/// the root of `tree`.
///
/// Each stored pose `Q_n` is wrapped by the node's axis offset `T~_n`: the root
/// yields `T~_r Q_r` and a child of `p` yields `T~_c Q_c T~_p^-1 P_p`. With all
/// offsets at zero this is the plain product of relative poses.
pub fn compose_world_pose(tree: &KinematicTree, cam_id: usize) -> Result<Pose> {
    let n = tree.len();
    if cam_id >= n {
        return Err(Error::MissingNode(cam_id));
    }
    let mut path = Vec::new();
    let mut cur = cam_id;
    loop {
        path.push(cur);
        if path.len() > n {
            return Err(Error::CycleDetected(cam_id));
        }
        match tree.parent(cur) {
            Some(p) if p >= n => return Err(Error::MissingNode(p)),
            Some(p) => cur = p,
            None => break,
        }
    }
    let offset = |k: usize| Pose::translation_z(tree.axis_offset(k));
    let root = *path.last().unwrap();
    let mut pose = offset(root).compose(tree.stored_pose(root));
    for w in path.windows(2).rev() {
        let (child, parent) = (w[0], w[1]);
        let rel = offset(child)
            .compose(tree.stored_pose(child))
            .compose(&offset(parent).inverse());
        pose = rel.compose(&pose);
    }
    Ok(pose)
}

/// Grid of 3D points, one per pixel, expressed in camera `frame`'s coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub frame: usize,
    pub points: Vec<Vec3>,
    pub confidence: Vec<f64>,
}

impl PointMap {
    pub fn new(width: usize, height: usize, frame: usize, points: Vec<Vec3>, confidence: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 || points.len() != n || confidence.len() != n {
            return Err(Error::ShapeMismatch);
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid("pointmap contains non-finite points".into()));
        }
        if confidence.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Invalid("confidence must be finite and non-negative".into()));
        }
        Ok(PointMap {
            width,
            height,
            frame,
            points,
            confidence,
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Vec3 {
        self.points[self.index(i, j)]
    }

    pub fn depths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.z).collect()
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}
