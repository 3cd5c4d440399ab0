//! Evaluation: Chamfer distance, pose errors and rigid alignment.

use std::collections::HashMap;

use nalgebra::SVD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Quaternion, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Mean distance from each predicted point to the nearest target point.
    pub precision: f64,
    /// Mean distance from each target point to the nearest predicted point.
    pub coverage: f64,
    pub total: f64,
}

/// Exact nearest-neighbor index over a uniform hash grid.
pub struct NearestNeighbors<'a> {
    points: &'a [Vec3],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NearestNeighbors<'a> {
    /// Rings searched before falling back to a full scan.
    const MAX_RING: i64 = 2;

    pub fn new(points: &'a [Vec3]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = (hi - lo).max();
        let cell = if points.is_empty() || !(span > 0.0) {
            1.0
        } else {
            // about two points per occupied cell for surface-like clouds
            (span / (points.len() as f64 / 2.0).sqrt().max(1.0)).max(span * 1e-6)
        };
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut nn = Self { points, cell, buckets: HashMap::new() };
        for (i, p) in points.iter().enumerate() {
            buckets.entry(nn.key(p)).or_default().push(i);
        }
        nn.buckets = buckets;
        nn
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / self.cell).floor() as i64)
    }

    /// Index of and distance to the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        let consider = |i: usize, best: &mut (usize, f64)| {
            let d = (self.points[i] - q).norm();
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        let k = self.key(q);
        for r in 0..=Self::MAX_RING {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in b {
                                consider(i, &mut best);
                            }
                        }
                    }
                }
            }
            // every point outside rings 0..=r is at least r cells away
            if best.1 < r as f64 * self.cell {
                return best;
            }
        }
        for i in 0..self.points.len() {
            consider(i, &mut best);
        }
        best
    }
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let nn = NearestNeighbors::new(to);
    let d: Vec<f64> = from.par_iter().map(|p| nn.nearest(p).1).collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Chamfer distance with non-squared Euclidean distances.
pub fn chamfer(pred: &[Vec3], gt: &[Vec3]) -> Result<ChamferReport> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs two nonempty point sets".into()));
    }
    let precision = mean_nearest(pred, gt);
    let coverage = mean_nearest(gt, pred);
    Ok(ChamferReport { precision, coverage, total: precision + coverage })
}

/// Translates a cloud to its centroid and scales it to unit bounding-box
/// diagonal.
pub fn normalize_cloud(points: &[Vec3]) -> Vec<Vec3> {
    if points.is_empty() {
        return Vec::new();
    }
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let diag = (hi - lo).norm();
    let s = if diag > 0.0 { 1.0 / diag } else { 1.0 };
    points.iter().map(|p| (p - c) * s).collect()
}

/// Chamfer distance between the two normalized clouds, times 100.
pub fn chamfer_normalized_x100(pred: &[Vec3], gt: &[Vec3]) -> Result<ChamferReport> {
    let r = chamfer(&normalize_cloud(pred), &normalize_cloud(gt))?;
    Ok(ChamferReport { precision: 100.0 * r.precision, coverage: 100.0 * r.coverage, total: 100.0 * r.total })
}

/// Rotation angle, in degrees, between the rotations of two quaternions.
pub fn pose_angle(q1: &Quaternion, q2: &Quaternion) -> Result<f64> {
    let (n1, n2) = (q1.norm(), q2.norm());
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::InvalidInput("pose angle needs nonzero quaternions".into()));
    }
    let c = (q1.dot(q2) / (n1 * n2)).abs().min(1.0);
    Ok(2.0 * c.acos().to_degrees())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub per_sample: Vec<f64>,
    /// Fraction of errors at most 30 degrees.
    pub accuracy_30: f64,
    pub median_deg: f64,
}

pub fn pose_metrics(errors: &[f64]) -> Result<PoseReport> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("pose metrics need at least one error".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidInput("pose errors must not be NaN".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let hits = errors.iter().filter(|&&e| e <= 30.0).count();
    Ok(PoseReport { per_sample: errors.to_vec(), accuracy_30: hits as f64 / n as f64, median_deg: median })
}

/// `x ↦ scale · R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quaternion,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self { rotation: Quaternion::IDENTITY, translation: Vec3::zeros(), scale: 1.0 }
    }
}

impl RigidTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * self.rotation.rotate(x) + self.translation
    }

    pub fn apply_all(&self, xs: &[Vec3]) -> Vec<Vec3> {
        let r = self.rotation.rotation_matrix();
        xs.iter().map(|x| self.scale * (r * x) + self.translation).collect()
    }
}

/// Least-squares rigid (optionally similarity) fit of `src[i]` onto `dst[i]`,
/// with reflections corrected.
pub fn kabsch(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate("kabsch needs at least 3 correspondences".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Mat3::zeros();
    let mut spread = Mat3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        h += (d - cd) * a.transpose();
        spread += a * a.transpose();
        var_src += a.norm_squared();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("correspondences are collinear or coincident".into()));
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = if with_scale {
        let sigma = svd.singular_values;
        (sigma[0] * d[(0, 0)] + sigma[1] * d[(1, 1)] + sigma[2] * d[(2, 2)]) / var_src
    } else {
        1.0
    };
    let rotation = Quaternion::from_rotation_matrix(&r);
    let translation = cd - scale * (rotation.rotation_matrix() * cs);
    Ok(RigidTransform { rotation, translation, scale })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rms: f64,
    /// rms before the first iteration and after every accepted one.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn matched_rms(moved: &[Vec3], nn: &NearestNeighbors<'_>, dst: &[Vec3]) -> (f64, Vec<Vec3>) {
    let found: Vec<(usize, f64)> = moved.par_iter().map(|p| nn.nearest(p)).collect();
    let ss: f64 = found.iter().map(|(_, d)| d * d).sum();
    ((ss / moved.len() as f64).sqrt(), found.iter().map(|(i, _)| dst[*i]).collect())
}

/// Iterative closest point from `init`. An iteration that would increase the
/// rms is rejected, so the trace never goes up.
pub fn icp_from(
    src: &[Vec3],
    dst: &[Vec3],
    init: RigidTransform,
    max_iters: usize,
    tol: f64,
    with_scale: bool,
) -> Result<IcpResult> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(Error::Degenerate("ICP needs at least 3 points in each cloud".into()));
    }
    let nn = NearestNeighbors::new(dst);
    let mut transform = init;
    let (mut rms, mut matched) = matched_rms(&transform.apply_all(src), &nn, dst);
    let mut trace = vec![rms];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let next = kabsch(src, &matched, with_scale)?;
        let (next_rms, next_matched) = matched_rms(&next.apply_all(src), &nn, dst);
        if next_rms > rms {
            break;
        }
        let gain = rms - next_rms;
        transform = next;
        rms = next_rms;
        matched = next_matched;
        trace.push(rms);
        if gain < tol {
            break;
        }
    }
    Ok(IcpResult { transform, rms, trace, iterations })
}

pub fn icp_align(src: &[Vec3], dst: &[Vec3], max_iters: usize, tol: f64, with_scale: bool) -> Result<IcpResult> {
    icp_from(src, dst, RigidTransform::default(), max_iters, tol, with_scale)
}

/// The 24 proper rotations mapping the cube onto itself.
pub fn cube_rotations() -> Vec<Quaternion> {
    let mut out = Vec::with_capacity(24);
    let axes = [0usize, 1, 2];
    for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        for signs in 0..8u32 {
            let mut m = Mat3::zeros();
            for r in axes {
                let s = if signs >> r & 1 == 1 { -1.0 } else { 1.0 };
                m[(r, perm[r])] = s;
            }
            if m.determinant() > 0.0 {
                out.push(Quaternion::from_rotation_matrix(&m));
            }
        }
    }
    out
}

/// ICP started from each cube symmetry about the two centroids; the run with
/// the lowest final rms wins (first one on ties).
pub fn icp_multistart(src: &[Vec3], dst: &[Vec3], max_iters: usize, tol: f64, with_scale: bool) -> Result<IcpResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::Degenerate("ICP needs nonempty clouds".into()));
    }
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / src.len() as f64;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / dst.len() as f64;
    let runs = cube_rotations()
        .into_iter()
        .map(|q| {
            let init = RigidTransform { rotation: q, translation: cd - q.rotate(&cs), scale: 1.0 };
            icp_from(src, dst, init, max_iters, tol, with_scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.rms < runs[best].rms {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("24 runs"))
}

/// Reflection through the camera-depth plane, `diag(1, 1, -1)`.
pub fn depth_mirror() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))
}

/// Alignment of a fitted cloud onto the ground-truth frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalAlignment {
    /// Maps (possibly mirrored) fitted points onto the ground truth.
    pub transform: RigidTransform,
    /// Whether the fitted cloud was reflected by [`depth_mirror`] first.
    pub mirrored: bool,
    pub rms: f64,
}

impl CanonicalAlignment {
    pub fn apply(&self, pts: &[Vec3]) -> Vec<Vec3> {
        let m = depth_mirror();
        if self.mirrored {
            self.transform.apply_all(&pts.iter().map(|p| m * p).collect::<Vec<_>>())
        } else {
            self.transform.apply_all(pts)
        }
    }

    /// A fitted world-to-camera rotation expressed in the ground-truth frame.
    ///
    /// For a mirrored fit the camera is reflected through its depth axis as
    /// well, which leaves orthographic silhouettes unchanged and keeps the
    /// composite a proper rotation.
    pub fn pose_in_target_frame(&self, fitted: &Quaternion) -> Quaternion {
        let ra = self.transform.rotation.rotation_matrix();
        let rf = fitted.rotation_matrix();
        let m = depth_mirror();
        let r = if self.mirrored { m * rf * m * ra.transpose() } else { rf * ra.transpose() };
        Quaternion::from_rotation_matrix(&r)
    }
}

/// Multistart ICP of `fitted` onto `target`; with `allow_mirror` the
/// depth-mirrored fit is tried as well and the lower rms wins.
pub fn canonical_alignment(
    fitted: &[Vec3],
    target: &[Vec3],
    allow_mirror: bool,
    max_iters: usize,
    tol: f64,
) -> Result<CanonicalAlignment> {
    let plain = icp_multistart(fitted, target, max_iters, tol, false)?;
    let mut best = CanonicalAlignment { transform: plain.transform, mirrored: false, rms: plain.rms };
    if allow_mirror {
        let m = depth_mirror();
        let flipped: Vec<Vec3> = fitted.iter().map(|p| m * p).collect();
        let r = icp_multistart(&flipped, target, max_iters, tol, false)?;
        if r.rms < best.rms {
            best = CanonicalAlignment { transform: r.transform, mirrored: true, rms: r.rms };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(from: &[Vec3], to: &[Vec3]) -> f64 {
        let mut s = 0.0;
        for p in from {
            let mut m = f64::INFINITY;
            for q in to {
                m = m.min((q - p).norm());
            }
            s += m;
        }
        s / from.len() as f64
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn chamfer_closed_forms() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0)];
        let b = vec![Vec3::new(1.0, 0.0, 0.0)];
        let r = chamfer(&a, &b).unwrap();
        assert_eq!((r.precision, r.coverage, r.total), (1.0, 1.0, 2.0));
        let c = cloud(&mut ChaCha8Rng::seed_from_u64(1), 50);
        assert_eq!(chamfer(&c, &c).unwrap().total, 0.0);
        assert!(chamfer(&[], &c).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..5 {
            let a = cloud(&mut rng, 500);
            let mut b = cloud(&mut rng, 300);
            // clustered outliers exercise the full-scan fallback
            b.push(Vec3::new(30.0, 0.0, 0.0));
            let r = chamfer(&a, &b).unwrap();
            assert_eq!(r.precision, brute(&a, &b));
            assert_eq!(r.coverage, brute(&b, &a));
        }
    }

    #[test]
    fn chamfer_swap_and_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = cloud(&mut rng, 200);
        let b = cloud(&mut rng, 150);
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        assert_eq!((ab.precision, ab.coverage), (ba.coverage, ba.precision));
        let t = RigidTransform {
            rotation: Quaternion::new(0.3, -0.5, 0.2, 0.7).normalize(),
            translation: Vec3::new(3.0, -1.0, 2.0),
            scale: 1.0,
        };
        let moved = chamfer(&t.apply_all(&a), &t.apply_all(&b)).unwrap();
        assert!((moved.total - ab.total).abs() <= 1e-9 * ab.total);
    }

    #[test]
    fn normalized_chamfer_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let a = cloud(&mut rng, 100);
        let b = cloud(&mut rng, 100);
        let big_a: Vec<Vec3> = a.iter().map(|p| p * 7.0 + Vec3::new(1.0, 2.0, 3.0)).collect();
        let big_b: Vec<Vec3> = b.iter().map(|p| p * 7.0 + Vec3::new(1.0, 2.0, 3.0)).collect();
        let x = chamfer_normalized_x100(&a, &b).unwrap().total;
        let y = chamfer_normalized_x100(&big_a, &big_b).unwrap().total;
        assert!((x - y).abs() < 1e-9 * x);
        let n = normalize_cloud(&a);
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &n {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        assert!(((hi - lo).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_angle_cases() {
        let q = Quaternion::new(0.2, 0.4, -0.1, 0.8).normalize();
        assert_eq!(pose_angle(&q, &q).unwrap(), 0.0);
        assert_eq!(pose_angle(&q, &-q).unwrap(), 0.0);
        let z90 = Quaternion::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        assert!((pose_angle(&Quaternion::IDENTITY, &z90).unwrap() - 90.0).abs() < 1e-12);
        assert!(pose_angle(&Quaternion::new(0.0, 0.0, 0.0, 0.0), &q).is_err());
    }

    #[test]
    fn pose_metrics_cases() {
        let r = pose_metrics(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((r.accuracy_30, r.median_deg), (1.0, 0.0));
        let r = pose_metrics(&[10.0, 20.0, 40.0, 50.0]).unwrap();
        assert_eq!((r.accuracy_30, r.median_deg), (0.5, 30.0));
        let r = pose_metrics(&[30.0, 31.0, 5.0]).unwrap();
        assert_eq!((r.accuracy_30, r.median_deg), (2.0 / 3.0, 30.0));
    }

    #[test]
    fn pose_metrics_match_sort_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for n in 1..30 {
            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..180.0)).collect();
            let mut s = e.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
            let r = pose_metrics(&e).unwrap();
            assert_eq!(r.median_deg, want);
            assert_eq!(r.accuracy_30, e.iter().filter(|&&x| x <= 30.0).count() as f64 / n as f64);
        }
    }

    #[test]
    fn kabsch_recovers_exact_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let src = cloud(&mut rng, 20);
        let id = kabsch(&src, &src, false).unwrap();
        assert!(pose_angle(&id.rotation, &Quaternion::IDENTITY).unwrap() < 1e-6);
        for _ in 0..10 {
            let t = RigidTransform {
                rotation: Quaternion::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize(),
                translation: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                scale: 1.0,
            };
            let dst = t.apply_all(&src);
            let got = kabsch(&src, &dst, false).unwrap();
            let err = (got.rotation.rotation_matrix() - t.rotation.rotation_matrix()).abs().max();
            assert!(err < 1e-10, "{err}");
            assert!((got.translation - t.translation).norm() < 1e-10);
            let scaled = RigidTransform { scale: 2.5, ..t };
            let got = kabsch(&src, &scaled.apply_all(&src), true).unwrap();
            assert!((got.scale - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn kabsch_beats_random_transforms_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let src = cloud(&mut rng, 30);
        let t = RigidTransform {
            rotation: Quaternion::new(0.9, 0.1, 0.3, -0.2).normalize(),
            translation: Vec3::new(0.5, 0.0, -0.3),
            scale: 1.0,
        };
        let dst: Vec<Vec3> = t
            .apply_all(&src)
            .iter()
            .map(|p| p + Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)))
            .collect();
        let residual = |x: &RigidTransform| -> f64 {
            x.apply_all(&src).iter().zip(&dst).map(|(a, b)| (a - b).norm_squared()).sum()
        };
        let best = residual(&kabsch(&src, &dst, false).unwrap());
        for _ in 0..100 {
            let probe = RigidTransform {
                rotation: (t.rotation
                    * Quaternion::new(
                        1.0,
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                    ))
                .normalize(),
                translation: t.translation
                    + Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
                scale: 1.0,
            };
            assert!(best <= residual(&probe));
        }
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch(&line, &line, false), Err(Error::Degenerate(_))));
        assert!(kabsch(&line[..2], &line[..2], false).is_err());
    }

    #[test]
    fn kabsch_never_returns_a_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let src = cloud(&mut rng, 10);
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        let t = kabsch(&src, &dst, false).unwrap();
        assert!((t.rotation.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icp_identity_and_small_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let src = cloud(&mut rng, 300);
        let r = icp_align(&src, &src, 10, 1e-12, false).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(pose_angle(&r.transform.rotation, &Quaternion::IDENTITY).unwrap() < 1e-6);
        let axis = Vec3::new(rng.gen(), rng.gen(), rng.gen()).normalize();
        let q = Quaternion::from_axis_angle(&axis, 20f64.to_radians());
        let dst: Vec<Vec3> = src.iter().map(|p| q.rotate(p)).collect();
        let r = icp_align(&src, &dst, 50, 1e-12, false).unwrap();
        assert!(pose_angle(&r.transform.rotation, &q).unwrap() < 0.1);
        assert!(r.iterations <= 50);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cube_group_has_24_distinct_rotations() {
        let g = cube_rotations();
        assert_eq!(g.len(), 24);
        for i in 0..24 {
            for j in 0..i {
                assert!(pose_angle(&g[i], &g[j]).unwrap() > 1.0);
            }
        }
    }

    #[test]
    fn mirrored_alignment_maps_poses_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let truth: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.3)))
            .collect();
        let r_true = Quaternion::new(0.8, 0.2, -0.4, 0.1).normalize();
        let m = depth_mirror();
        // a fit that recovered the mirror image, with poses that reproduce the same silhouettes
        let fitted: Vec<Vec3> = truth.iter().map(|p| m * p).collect();
        let fitted_pose = Quaternion::from_rotation_matrix(&(m * r_true.rotation_matrix() * m));
        let a = canonical_alignment(&fitted, &truth, true, 50, 1e-12).unwrap();
        assert!(a.mirrored);
        assert!(a.rms < 1e-9);
        let back = a.pose_in_target_frame(&fitted_pose);
        assert!(pose_angle(&back, &r_true).unwrap() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pose_angle_is_a_pseudometric(a in proptest::array::uniform4(-1.0f64..1.0), b in proptest::array::uniform4(-1.0f64..1.0), c in proptest::array::uniform4(-1.0f64..1.0)) {
            let (a, b, c) = (Quaternion::from_array(a), Quaternion::from_array(b), Quaternion::from_array(c));
            prop_assume!(a.norm() > 0.1 && b.norm() > 0.1 && c.norm() > 0.1);
            let ab = pose_angle(&a, &b).unwrap();
            prop_assert!((ab - pose_angle(&b, &a).unwrap()).abs() <= 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(ab <= pose_angle(&a, &c).unwrap() + pose_angle(&c, &b).unwrap() + 1e-9);
        }
    }
}
