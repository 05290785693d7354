//! Small dense linear-algebra helpers shared across modules.

use alloc::vec::Vec;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Scaled rigid transform `x -> scale * rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x * self.scale + self.translation
    }
}

/// Weighted least-squares similarity (Umeyama) mapping `src` onto `dst`.
///
/// Minimizes `sum_i w_i |s R src_i + t - dst_i|^2`. Reflections are removed
/// through the sign of the determinant. Fails when the weighted source cloud
/// has (near) zero spread or its covariance has rank below two.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], weights: Option<&[f64]>) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..src.len()).map(w).sum();
    if src.len() < 3 || wsum <= 0.0 {
        return Err(Error::DegenerateConfiguration("fewer than three weighted points"));
    }
    let mut mu_s = Vec3::zeros();
    let mut mu_d = Vec3::zeros();
    for i in 0..src.len() {
        mu_s += src[i] * w(i);
        mu_d += dst[i] * w(i);
    }
    mu_s /= wsum;
    mu_d /= wsum;

    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for i in 0..src.len() {
        let a = src[i] - mu_s;
        let b = dst[i] - mu_d;
        cov += b * a.transpose() * w(i);
        var_s += a.norm_squared() * w(i);
    }
    cov /= wsum;
    var_s /= wsum;
    if var_s <= 1e-300 {
        return Err(Error::DegenerateConfiguration("coincident source points"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let smax = sv.max();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if smax <= 0.0 || sorted[1] <= 1e-12 * smax {
        return Err(Error::DegenerateConfiguration("collinear points"));
    }
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        // flip the axis of the smallest singular value
        let k = (0..3)
            .min_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap())
            .unwrap();
        s[(k, k)] = -1.0;
    }
    let r = u * s * v_t;
    let trace_ds: f64 = (0..3).map(|k| sv[k] * s[(k, k)]).sum();
    let scale = trace_ds / var_s;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Median of a slice of finite values (mean of the two middle values for even
/// lengths). Returns `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}
