//! Trajectory accuracy metrics: similarity-aligned ATE, pairwise relative
//! rotation/translation accuracy, mAA and registration rate.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::{umeyama, Similarity, Vec3};

/// Per-camera world-to-camera poses; `None` marks an unregistered camera.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(usize, Option<Pose>)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(usize, Option<Pose>)>) -> Result<Self> {
        let mut seen = alloc::collections::BTreeSet::new();
        for (id, _) in &entries {
            if !seen.insert(*id) {
                return Err(Error::Invalid(alloc::format!("duplicate camera id {id}")));
            }
        }
        Ok(Trajectory { entries })
    }

    /// All cameras registered, ids `0..poses.len()`.
    pub fn from_poses(poses: &[Pose]) -> Self {
        Trajectory {
            entries: poses.iter().copied().map(Some).enumerate().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, Option<Pose>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Pose> {
        self.entries.iter().find(|(i, _)| *i == id).and_then(|(_, p)| p.as_ref())
    }

    /// The same trajectory restricted to `reference`'s ids, in its order;
    /// ids missing here become unregistered.
    pub fn aligned_to(&self, reference: &Trajectory) -> Trajectory {
        let map: BTreeMap<usize, Option<Pose>> = self.entries.iter().copied().collect();
        Trajectory {
            entries: reference.entries.iter().map(|(id, _)| (*id, map.get(id).copied().flatten())).collect(),
        }
    }

    /// Applies a similarity to the world frame: a world point `x` becomes
    /// `s R x + t`, and poses follow so camera-frame directions are kept.
    pub fn transformed(&self, sim: &Similarity) -> Trajectory {
        let entries = self
            .entries
            .iter()
            .map(|(id, p)| {
                let p = p.map(|p| {
                    let c = sim.apply(&p.center());
                    let r = p.rotation * sim.rotation.inverse();
                    Pose::new(r, -(r * c))
                });
                (*id, p)
            })
            .collect();
        Trajectory { entries }
    }
}

/// Closed-form least-squares similarity mapping estimated centers onto
/// ground-truth ones.
pub fn procrustes_align(est_centers: &[Vec3], gt_centers: &[Vec3]) -> Result<Similarity> {
    umeyama(est_centers, gt_centers, None)
}

fn common_centers(est: &Trajectory, gt: &Trajectory) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut e = Vec::new();
    let mut g = Vec::new();
    for (id, p) in gt.entries() {
        if let (Some(p), Some(q)) = (p, est.get(*id)) {
            e.push(q.center());
            g.push(p.center());
        }
    }
    (e, g)
}

/// RMS distance of points from their centroid.
pub fn rms_spread(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let mu = points.iter().sum::<Vec3>() / n;
    libm::sqrt(points.iter().map(|p| (p - mu).norm_squared()).sum::<f64>() / n)
}

/// Mean distance between ground-truth centers and estimated centers after
/// `sim`, divided by the ground-truth spread.
pub fn ate_with(est: &Trajectory, gt: &Trajectory, sim: &Similarity) -> Result<f64> {
    let (e, g) = common_centers(est, gt);
    let d = rms_spread(&g);
    if e.is_empty() || d <= 0.0 {
        return Err(Error::DegenerateConfiguration("ground-truth centers have no spread"));
    }
    let total: f64 = e.iter().zip(&g).map(|(a, b)| (sim.apply(a) - b).norm()).sum();
    Ok(total / e.len() as f64 / d)
}

/// Normalized average translation error over cameras registered in both.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let (e, g) = common_centers(est, gt);
    if e.len() < 3 {
        return Err(Error::DegenerateConfiguration("fewer than three common cameras"));
    }
    let sim = procrustes_align(&e, &g)?;
    ate_with(est, gt, &sim)
}

/// Direction used for the relative translation error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RtaMode {
    /// Translation of the relative pose `t_j - R_ij t_i`.
    #[default]
    Translation,
    /// Baseline between camera centers, `c_j - c_i`.
    Centers,
}

fn direction_scale(t: &Trajectory) -> f64 {
    let centers: Vec<Vec3> = t.entries().iter().filter_map(|(_, p)| p.map(|p| p.center())).collect();
    let spread = rms_spread(&centers);
    if spread > 0.0 {
        return spread;
    }
    // coincident centers: fall back to their distance from the origin so
    // round-off in t = -R c still counts as zero
    let n = centers.len().max(1) as f64;
    libm::sqrt(centers.iter().map(|c| c.norm_squared()).sum::<f64>() / n)
}

fn relative(pi: &Pose, pj: &Pose, mode: RtaMode) -> (nalgebra::UnitQuaternion<f64>, Vec3) {
    let r = pj.rotation * pi.rotation.inverse();
    let t = match mode {
        RtaMode::Translation => pj.translation - r * pi.translation,
        RtaMode::Centers => pj.center() - pi.center(),
    };
    (r, t)
}

fn direction_error_deg(a: &Vec3, b: &Vec3, eps_a: f64, eps_b: f64) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    match (na <= eps_a, nb <= eps_b) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 90.0,
        _ => libm::acos((a.dot(b) / (na * nb)).clamp(-1.0, 1.0)).to_degrees(),
    }
}

/// Rotation and translation-direction errors in degrees for every unordered
/// pair of ground-truth-registered cameras; `None` when the estimate lacks
/// either camera.
pub fn pair_errors(est: &Trajectory, gt: &Trajectory, mode: RtaMode) -> Vec<Option<(f64, f64)>> {
    let ids: Vec<(usize, Pose)> = gt.entries().iter().filter_map(|(id, p)| p.map(|p| (*id, p))).collect();
    let eps_gt = 1e-9 * direction_scale(gt);
    let eps_est = 1e-9 * direction_scale(est);
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let (ia, ga) = ids[a];
            let (ib, gb) = ids[b];
            let err = match (est.get(ia), est.get(ib)) {
                (Some(ea), Some(eb)) => {
                    let (rg, tg) = relative(&ga, &gb, mode);
                    let (re, te) = relative(ea, eb, mode);
                    Some((re.angle_to(&rg).to_degrees(), direction_error_deg(&te, &tg, eps_est, eps_gt)))
                }
                _ => None,
            };
            out.push(err);
        }
    }
    out
}

fn accuracies(errors: &[Option<(f64, f64)>], tau: f64) -> (f64, f64) {
    if errors.is_empty() {
        return (0.0, 0.0);
    }
    let n = errors.len() as f64;
    let rot = errors.iter().filter(|e| e.is_some_and(|(r, _)| r < tau)).count() as f64;
    let tra = errors.iter().filter(|e| e.is_some_and(|(_, t)| t < tau)).count() as f64;
    (100.0 * rot / n, 100.0 * tra / n)
}

/// Percentages of pairs with relative rotation and translation errors below
/// `tau` degrees.
pub fn rra_rta(est: &Trajectory, gt: &Trajectory, tau: f64) -> (f64, f64) {
    rra_rta_with(est, gt, tau, RtaMode::Translation)
}

pub fn rra_rta_with(est: &Trajectory, gt: &Trajectory, tau: f64, mode: RtaMode) -> (f64, f64) {
    accuracies(&pair_errors(est, gt, mode), tau)
}

/// Area under `min(RRA, RTA)` for integer thresholds `1..=tau_max`, in `[0, 1]`.
pub fn maa(est: &Trajectory, gt: &Trajectory, tau_max: u32) -> f64 {
    let errors = pair_errors(est, gt, RtaMode::Translation);
    if tau_max == 0 {
        return 0.0;
    }
    let sum: f64 = (1..=tau_max)
        .map(|t| {
            let (r, tr) = accuracies(&errors, t as f64);
            r.min(tr) / 100.0
        })
        .sum();
    sum / tau_max as f64
}

/// Percentage of registered cameras; 0 for an empty trajectory.
pub fn registration_rate(traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    100.0 * traj.entries().iter().filter(|(_, p)| p.is_some()).count() as f64 / traj.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let c = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let r = UnitQuaternion::from_scaled_axis(axis);
        Pose::new(r, -(r * c))
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        Trajectory::from_poses(&(0..n).map(|_| random_pose(rng)).collect::<Vec<_>>())
    }

    fn random_sim(rng: &mut ChaCha8Rng) -> Similarity {
        Similarity {
            scale: rng.random_range(0.1..10.0),
            rotation: UnitQuaternion::from_scaled_axis(Vec3::new(rng.random_range(-3.0..3.0), 0.4, rng.random_range(-1.0..1.0))),
            translation: Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), 1.0),
        }
    }

    #[test]
    fn procrustes_scale_example() {
        let gt = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 4.0, 0.0), Vec3::new(0.0, 0.0, 6.0)];
        let est: Vec<Vec3> = gt.iter().map(|p| p * 0.5).collect();
        let s = procrustes_align(&est, &gt).unwrap();
        assert!((s.scale - 2.0).abs() < 1e-12);
        assert!(s.rotation.angle() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
    }

    #[test]
    fn ate_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let gt = random_traj(&mut rng, 7);
            assert!(ate(&gt, &gt).unwrap() < 1e-12);
            let est = gt.transformed(&random_sim(&mut rng));
            assert!(ate(&est, &gt).unwrap() < 1e-9);
            // estimated trajectory perturbed, then moved by a gauge
            let noisy = Trajectory::from_poses(
                &(0..7)
                    .map(|k| {
                        let p = *gt.get(k).unwrap();
                        Pose::new(p.rotation, p.translation + Vec3::new(0.1, -0.05, 0.02) * k as f64)
                    })
                    .collect::<Vec<_>>(),
            );
            let a = ate(&noisy, &gt).unwrap();
            let b = ate(&noisy.transformed(&random_sim(&mut rng)), &gt).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ate_single_perturbation_before_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_traj(&mut rng, 10);
        let centers: Vec<Vec3> = (0..10).map(|k| gt.get(k).unwrap().center()).collect();
        let d = rms_spread(&centers);
        let mut poses: Vec<Pose> = (0..10).map(|k| *gt.get(k).unwrap()).collect();
        let p = poses[3];
        let c = p.center() + Vec3::new(0.0, 0.1 * d, 0.0);
        poses[3] = Pose::new(p.rotation, -(p.rotation * c));
        let est = Trajectory::from_poses(&poses);
        let unaligned = ate_with(&est, &gt, &Similarity::identity()).unwrap();
        assert!((unaligned - 0.01).abs() < 1e-9);
    }

    #[test]
    fn accuracies_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_traj(&mut rng, 5);
        assert_eq!(rra_rta(&gt, &gt, 5.0), (100.0, 100.0));
        assert!((maa(&gt, &gt, 30) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_rotation_counts_as_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = Vec3::new(1.0, 2.0, -0.5);
        let poses: Vec<Pose> = (0..6)
            .map(|_| {
                let r = UnitQuaternion::from_scaled_axis(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.1));
                Pose::new(r, -(r * c))
            })
            .collect();
        let gt = Trajectory::from_poses(&poses);
        assert_eq!(rra_rta(&gt, &gt, 1.0), (100.0, 100.0));
    }

    #[test]
    fn ten_degree_rotation_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_traj(&mut rng, 5);
        let poses: Vec<Pose> = (0..5)
            .map(|k| {
                let p = gt.get(k).unwrap();
                let axis = nalgebra::Unit::new_normalize(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0));
                let d = UnitQuaternion::from_axis_angle(&axis, 10f64.to_radians());
                Pose::new(d * p.rotation, p.translation)
            })
            .collect();
        let est = Trajectory::from_poses(&poses);
        // brute-force oracle with rotation matrices
        let mut below = 0;
        let mut total = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                let m = |t: &Trajectory, k| t.get(k).unwrap().rotation.to_rotation_matrix().into_inner();
                let rel_e = m(&est, j) * m(&est, i).transpose();
                let rel_g = m(&gt, j) * m(&gt, i).transpose();
                let c = (((rel_e * rel_g.transpose()).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
                if libm::acos(c).to_degrees() < 5.0 {
                    below += 1;
                }
                total += 1;
            }
        }
        let (rra, _) = rra_rta(&est, &gt, 5.0);
        assert!((rra - 100.0 * below as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let a = random_traj(&mut rng, 5);
            let b = random_traj(&mut rng, 5);
            for tau in [5.0, 15.0, 60.0] {
                assert_eq!(rra_rta(&a, &b, tau), rra_rta(&b, &a, tau));
            }
        }
    }

    #[test]
    fn unregistered_pairs_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_traj(&mut rng, 4);
        let mut entries = gt.entries().to_vec();
        entries[2].1 = None;
        let est = Trajectory::new(entries.clone()).unwrap();
        assert_eq!(registration_rate(&est), 75.0);
        assert_eq!(rra_rta(&est, &gt, 5.0), (50.0, 50.0));
        assert_eq!(registration_rate(&Trajectory::default()), 0.0);
        assert_eq!(registration_rate(&gt), 100.0);
        let missing = Trajectory::new(entries[..3].to_vec()).unwrap().aligned_to(&gt);
        assert_eq!(registration_rate(&missing), 50.0);
    }

    #[test]
    fn maa_bounded_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let a = random_traj(&mut rng, 4);
            let b = random_traj(&mut rng, 4);
            let mut prev = -1.0;
            for t in 1..=30 {
                let m = maa(&a, &b, t);
                let (r, tr) = rra_rta(&a, &b, t as f64);
                assert!(m <= r.min(tr) / 100.0 + 1e-12);
                assert!(m >= prev - 1e-15);
                prev = m;
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Trajectory::new(alloc::vec![(1, None), (1, None)]).is_err());
    }
}
