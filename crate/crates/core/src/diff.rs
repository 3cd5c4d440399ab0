//! Hand-written adjoints of every render stage and a finite-difference
//! harness to check them.
//!
//! The clip uses the subgradient 1 strictly inside `(0, 1)` and 0 elsewhere.
//! Quaternion gradients are ambient 4-vectors of the map `q ↦ R(q / |q|)`;
//! keeping quaternions on the unit sphere is the optimizer's job.

use rayon::prelude::*;

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, GridPoint, GridSpec, Mat3, Pose, SizeParams, Vec3};
use crate::render::{
    background_signal, cell_signal, forward, DensityModel, Modality, Projection, RenderOptions, TerminationVolume,
    Trace, SIGNAL_EPS,
};
use crate::splat::{convolve_axis, density_basic, trilinear_corners, GridGaussian, Volume};

/// Gradients of a scalar loss with respect to everything a render depends on.
///
/// Per-point entries are zero for points that did not take part in the
/// render (dropped out or behind the camera). `d_sigmas` is filled for
/// isotropic points on the basic path; the fast path treats the shared width
/// as a fixed hyperparameter and reports zero. `d_cov_diag` and
/// `d_cov_orientation` are filled for full-covariance points.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub d_positions: Vec<Vec3>,
    pub d_scales: Vec<f64>,
    pub d_sigmas: Vec<f64>,
    pub d_cov_diag: Vec<[f64; 3]>,
    pub d_cov_orientation: Vec<[f64; 4]>,
    pub d_colors: Vec<Rgb>,
    pub d_rotation: [f64; 4],
    pub d_translation: Vec3,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_positions: vec![Vec3::zeros(); n],
            d_scales: vec![0.0; n],
            d_sigmas: vec![0.0; n],
            d_cov_diag: vec![[0.0; 3]; n],
            d_cov_orientation: vec![[0.0; 4]; n],
            d_colors: vec![[0.0; 3]; n],
            d_rotation: [0.0; 4],
            d_translation: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_scales.iter().all(|x| x.is_finite())
            && self.d_sigmas.iter().all(|x| x.is_finite())
            && self.d_cov_diag.iter().flatten().all(|x| x.is_finite())
            && self.d_cov_orientation.iter().flatten().all(|x| x.is_finite())
            && self.d_colors.iter().flatten().all(|x| x.is_finite())
            && self.d_rotation.iter().all(|x| x.is_finite())
            && self.d_translation.iter().all(|x| x.is_finite())
    }
}

/// Gradient with respect to the shape part of [`SizeParams`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SizeGradient {
    pub d_sigma: f64,
    pub d_diag: [f64; 3],
    pub d_orientation: [f64; 4],
}

/// Pulls `dL/dΣ` back onto the size parametrization.
pub fn size_vjp(size: &SizeParams, d_cov: &Mat3) -> SizeGradient {
    let h = (d_cov + d_cov.transpose()) * 0.5;
    match *size {
        SizeParams::Isotropic { sigma, .. } => SizeGradient { d_sigma: 2.0 * sigma * h.trace(), ..Default::default() },
        SizeParams::FullCov { diag, orientation, .. } => {
            let q = orientation.rotation_matrix();
            let local = q.transpose() * h * q;
            let d2 = Mat3::from_diagonal(&Vec3::new(diag[0] * diag[0], diag[1] * diag[1], diag[2] * diag[2]));
            SizeGradient {
                d_sigma: 0.0,
                d_diag: [0, 1, 2].map(|i| 2.0 * diag[i] * local[(i, i)]),
                d_orientation: orientation.rotation_matrix_vjp(&(2.0 * h * q * d2)),
            }
        }
    }
}

/// Gradients of [`crate::splat::splat_basic`] in grid units.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients {
    pub d_positions: Vec<Vec3>,
    pub d_scales: Vec<f64>,
    pub d_sizes: Vec<SizeGradient>,
}

#[derive(Clone, Copy, Debug)]
struct PointAdjoint {
    center: Vec3,
    scale: f64,
    cov: Mat3,
    color: Rgb,
}

#[inline]
fn clip_grad(pre: f64) -> f64 {
    if pre > 0.0 && pre < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Cell range, per axis, outside of which `exp(-½ dᵀPd)` underflows.
fn support_box(g: &GridGaussian, dims: [usize; 3]) -> Option<[(usize, usize); 3]> {
    let cov = g.precision.try_inverse()?;
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        let reach = (1500.0 * cov[(a, a)].max(0.0)).sqrt();
        let lo = (g.center[a] - reach).floor().max(0.0);
        let hi = (g.center[a] + reach).ceil() + 1.0;
        if hi <= 0.0 || lo >= dims[a] as f64 {
            return None;
        }
        out[a] = (lo as usize, (hi.min(dims[a] as f64)) as usize);
    }
    Some(out)
}

/// Adjoint of one Gaussian's contribution to the density (`h`) and to the
/// color numerators (`numer`).
fn basic_point_adjoint(g: &GridGaussian, color: &Rgb, h: &Volume, numer: Option<&[Volume; 3]>) -> PointAdjoint {
    let mut adj = PointAdjoint { center: Vec3::zeros(), scale: 0.0, cov: Mat3::zeros(), color: [0.0; 3] };
    let Some(b) = support_box(g, h.dims) else { return adj };
    let mut g_prec = Mat3::zeros();
    for k1 in b[0].0..b[0].1 {
        for k2 in b[1].0..b[1].1 {
            for k3 in b[2].0..b[2].1 {
                let idx = h.index(k1, k2, k3);
                let mut a = h.data[idx];
                let mut gn = [0.0; 3];
                if let Some(n) = numer {
                    for c in 0..3 {
                        gn[c] = n[c].data[idx];
                        a += color[c] * gn[c];
                    }
                }
                if a == 0.0 && gn == [0.0; 3] {
                    continue;
                }
                let m = Vec3::new(k1 as f64, k2 as f64, k3 as f64);
                let e = g.unit_density(&m);
                if e == 0.0 {
                    continue;
                }
                let f = g.scale * e;
                let d = m - g.center;
                adj.scale += a * e;
                adj.center += (a * f) * (g.precision * d);
                g_prec += (-0.5 * a * f) * (d * d.transpose());
                for c in 0..3 {
                    adj.color[c] += gn[c] * f;
                }
            }
        }
    }
    adj.cov = -(g.precision * g_prec * g.precision);
    adj
}

/// Adjoint of the basic splat with respect to grid-space points, given the
/// gradient `cotangent` with respect to the clipped occupancy.
pub fn vjp_splat_basic(points: &[GridPoint], grid: &GridSpec, cotangent: &Volume) -> Result<SplatGradients> {
    if cotangent.dims != grid.dims {
        return Err(Error::ShapeMismatch(format!("cotangent {:?} vs grid {:?}", cotangent.dims, grid.dims)));
    }
    let gaussians: Vec<GridGaussian> = points.iter().map(GridGaussian::from_point).collect();
    let pre = density_basic(&gaussians, grid.dims);
    let mut h = cotangent.clone();
    for (v, p) in h.data.iter_mut().zip(&pre.data) {
        *v *= clip_grad(*p);
    }
    let adj: Vec<PointAdjoint> = gaussians.par_iter().map(|g| basic_point_adjoint(g, &[0.0; 3], &h, None)).collect();
    Ok(SplatGradients {
        d_positions: adj.iter().map(|a| a.center).collect(),
        d_scales: adj.iter().map(|a| a.scale).collect(),
        d_sizes: points.iter().zip(&adj).map(|(p, a)| size_vjp(&p.size, &a.cov)).collect(),
    })
}

/// Adjoint of [`crate::render::ray_termination`].
///
/// Uses the backward recursion `C[k] = g[k] o[k] + (1 - o[k]) C[k+1]` with
/// `C[D] = g[D]`, giving `dL/do[u] = T[u] (g[u] - C[u+1])` without any
/// division, so fully opaque cells need no special casing.
pub fn vjp_ray_termination(occ: &Volume, cotangent: &TerminationVolume) -> Result<Volume> {
    let [d1, d2, d3] = occ.dims;
    if cotangent.dims != [d1, d2, d3 + 1] {
        return Err(Error::ShapeMismatch(format!("cotangent {:?} vs occupancy {:?}", cotangent.dims, occ.dims)));
    }
    let mut out = Volume::zeros(occ.dims);
    let mut t = vec![0.0; d3];
    for k1 in 0..d1 {
        for k2 in 0..d2 {
            let mut acc = 1.0;
            for (k3, tv) in t.iter_mut().enumerate() {
                *tv = acc;
                acc *= 1.0 - occ.get(k1, k2, k3);
            }
            let mut c = cotangent.get(k1, k2, d3);
            for k3 in (0..d3).rev() {
                let o = occ.get(k1, k2, k3);
                let g = cotangent.get(k1, k2, k3);
                out.set(k1, k2, k3, t[k3] * (g - c));
                c = g * o + (1.0 - o) * c;
            }
        }
    }
    Ok(out)
}

/// Gradients with respect to the pre-clip density and the color numerators.
struct VolumeCotangents {
    pre: Volume,
    numer: Option<[Volume; 3]>,
}

fn composite_adjoint(trace: &Trace, cot: &Projection) -> VolumeCotangents {
    let pre = &trace.pre;
    let numer = trace.numer.as_ref();
    let d3 = pre.dims[2];
    let modality = trace.modality;
    let ch = modality.channels();
    let b = &trace.bounds;
    let bg_y = background_signal(modality, d3, trace.background);
    let mut g_pre = Volume::zeros(pre.dims);
    let mut g_num = (modality == Modality::Color).then(|| [0, 1, 2].map(|_| Volume::zeros(pre.dims)));
    if b.is_empty() {
        return VolumeCotangents { pre: g_pre, numer: g_num };
    }
    let depth = b.hi[2] - b.lo[2];
    let mut trans = vec![0.0; depth];
    let mut ys = vec![[0.0; 3]; depth];
    for k1 in b.lo[0]..b.hi[0] {
        for k2 in b.lo[1]..b.hi[1] {
            let gp = cot.pixel(k1, k2);
            let dot = |y: &Rgb| (0..ch).map(|c| gp[c] * y[c]).sum::<f64>();
            let mut t = 1.0;
            for j in 0..depth {
                let k3 = b.lo[2] + j;
                let idx = pre.index(k1, k2, k3);
                trans[j] = t;
                ys[j] = cell_signal(modality, k3, d3, idx, pre, numer);
                t *= 1.0 - pre.data[idx].clamp(0.0, 1.0);
            }
            let mut c = dot(&bg_y);
            for j in (0..depth).rev() {
                let k3 = b.lo[2] + j;
                let idx = pre.index(k1, k2, k3);
                let p = pre.data[idx];
                let o = p.clamp(0.0, 1.0);
                let g = dot(&ys[j]);
                let d_occ = trans[j] * (g - c);
                c = g * o + (1.0 - o) * c;
                let mut h = clip_grad(p) * d_occ;
                if let Some(gn) = g_num.as_mut() {
                    let r = o * trans[j];
                    if r != 0.0 {
                        let s = p.max(SIGNAL_EPS);
                        let mut gy_dot_y = 0.0;
                        for ci in 0..3 {
                            let gy = gp[ci] * r;
                            gn[ci].data[idx] = gy / s;
                            gy_dot_y += gy * ys[j][ci];
                        }
                        if p > SIGNAL_EPS {
                            h -= gy_dot_y / s;
                        }
                    }
                }
                g_pre.data[idx] = h;
            }
        }
    }
    VolumeCotangents { pre: g_pre, numer: g_num }
}

/// Backward pass for a forward trace.
pub(crate) fn backward(
    trace: &Trace,
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    cot: &Projection,
) -> RenderGradients {
    let mut out = RenderGradients::zeros(trace.n_total);
    if trace.points.is_empty() {
        return out;
    }
    let vc = composite_adjoint(trace, cot);

    let adjoints: Vec<PointAdjoint> = match &trace.model {
        DensityModel::Basic(gaussians) => gaussians
            .par_iter()
            .zip(&trace.points)
            .map(|(g, p)| basic_point_adjoint(g, &p.color, &vc.pre, vc.numer.as_ref()))
            .collect(),
        DensityModel::Fast(kernels) => {
            // The zero-padded convolution with a symmetric kernel is self-adjoint.
            let spread = |mut v: Volume| {
                let mut bounds = trace.bounds;
                for axis in [0, 1, 2] {
                    convolve_axis(&mut v, &kernels[axis], axis, &mut bounds);
                }
                v
            };
            let gs = spread(vc.pre);
            let gn = vc.numer.map(|n| n.map(spread));
            trace
                .points
                .iter()
                .map(|p| {
                    let mut adj =
                        PointAdjoint { center: Vec3::zeros(), scale: 0.0, cov: Mat3::zeros(), color: [0.0; 3] };
                    for (cell, w, dw) in trilinear_corners(&p.grid, gs.dims) {
                        let idx = gs.index(cell[0], cell[1], cell[2]);
                        let mut a = gs.data[idx];
                        if let Some(n) = &gn {
                            for c in 0..3 {
                                a += p.color[c] * n[c].data[idx];
                                adj.color[c] += p.scale * w * n[c].data[idx];
                            }
                        }
                        adj.scale += w * a;
                        adj.center += (p.scale * a) * dw;
                    }
                    adj
                })
                .collect()
        }
    };

    let basic = matches!(trace.model, DensityModel::Basic(_));
    let r = trace.rotation;
    let mut d_rot = Mat3::zeros();
    for (p, adj) in trace.points.iter().zip(&adjoints) {
        let i = p.index;
        let mut d_cam = p.jac.transpose() * adj.center;
        if basic {
            let gc = (adj.cov + adj.cov.transpose()) * 0.5;
            let g_cam_cov = p.jac.transpose() * gc * p.jac;
            d_cam += cam.jacobian_vjp(grid, &p.cam, &(2.0 * gc * p.jac * p.cam_cov));
            d_rot += 2.0 * g_cam_cov * r * p.world_cov;
            let sg = size_vjp(&cloud.sizes[i], &(r.transpose() * g_cam_cov * r));
            out.d_sigmas[i] = sg.d_sigma;
            out.d_cov_diag[i] = sg.d_diag;
            out.d_cov_orientation[i] = sg.d_orientation;
        }
        out.d_positions[i] = r.transpose() * d_cam;
        d_rot += d_cam * p.world.transpose();
        out.d_translation += d_cam;
        out.d_scales[i] = adj.scale;
        out.d_colors[i] = adj.color;
    }
    out.d_rotation = pose.rotation.rotation_matrix_vjp(&d_rot);
    out
}

/// Gradient of `<cotangent, render(...)>` with respect to the cloud and pose.
pub fn vjp_render(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
    keep: Option<&[bool]>,
    cotangent: &Projection,
) -> Result<RenderGradients> {
    let trace = forward(cloud, pose, cam, grid, opts, keep)?;
    if !trace.projection.same_shape(cotangent) {
        return Err(Error::ShapeMismatch(format!(
            "cotangent {:?}x{} vs projection {:?}x{}",
            cotangent.dims, cotangent.channels, trace.projection.dims, trace.projection.channels
        )));
    }
    Ok(backward(&trace, cloud, pose, cam, grid, cotangent))
}

/// True if any pre-clip density value of the render lies within `margin` of
/// the clip's upper kink at 1.
///
/// The lower clip bound is never active since densities are nonnegative.
pub fn near_clip_kink(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
    margin: f64,
) -> Result<bool> {
    let trace = forward(cloud, pose, cam, grid, opts, None)?;
    Ok(trace.pre.data.iter().any(|v| (v - 1.0).abs() < margin))
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `‖analytic − numeric‖∞ / ‖numeric‖∞`, or the absolute error when the
    /// numeric gradient vanishes.
    pub max_rel_err: f64,
    /// Coordinate with the largest absolute discrepancy.
    pub worst_coordinate: usize,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` of a scalar
/// function, compared against `analytic`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64, tolerance: f64) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "analytic gradient must match the input length");
    let mut probe = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect();
    let mut worst = (0, 0.0f64);
    let mut scale = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = (a - n).abs();
        if e > worst.1 || e.is_nan() {
            worst = (i, e);
        }
        scale = scale.max(n.abs());
    }
    let max_rel_err = if scale > 0.0 { worst.1 / scale } else { worst.1 };
    FdReport { max_rel_err, worst_coordinate: worst.0, numeric, passed: max_rel_err <= tolerance }
}

/// Independently checked parameter groups of a render.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Positions,
    Scales,
    Sigmas,
    Covariance,
    Colors,
    Rotation,
    Translation,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Positions,
        ParamGroup::Scales,
        ParamGroup::Sigmas,
        ParamGroup::Covariance,
        ParamGroup::Colors,
        ParamGroup::Rotation,
        ParamGroup::Translation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Positions => "positions",
            ParamGroup::Scales => "scales",
            ParamGroup::Sigmas => "sigmas",
            ParamGroup::Covariance => "covariance",
            ParamGroup::Colors => "colors",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Translation => "translation",
        }
    }
}

/// Flattened view of one parameter group: current values, analytic
/// gradient and the finite-difference step.
struct GroupView {
    values: Vec<f64>,
    analytic: Vec<f64>,
    step: f64,
}

fn group_view(
    group: ParamGroup,
    cloud: &PointCloud,
    pose: &Pose,
    grads: &RenderGradients,
    opts: &RenderOptions,
) -> Option<GroupView> {
    let n = cloud.len();
    let rel = 1e-4;
    match group {
        ParamGroup::Positions => Some(GroupView {
            values: cloud.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
            analytic: grads.d_positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
            step: rel,
        }),
        ParamGroup::Scales => {
            let max = cloud.sizes.iter().map(|s| s.scale()).fold(0.0, f64::max);
            Some(GroupView {
                values: cloud.sizes.iter().map(|s| s.scale()).collect(),
                analytic: grads.d_scales.clone(),
                step: rel * max.max(1e-3),
            })
        }
        ParamGroup::Sigmas => {
            if opts.path != crate::render::SplatPath::Basic {
                return None;
            }
            let idx: Vec<usize> = (0..n).filter(|&i| matches!(cloud.sizes[i], SizeParams::Isotropic { .. })).collect();
            if idx.is_empty() {
                return None;
            }
            let values: Vec<f64> = idx
                .iter()
                .map(|&i| match cloud.sizes[i] {
                    SizeParams::Isotropic { sigma, .. } => sigma,
                    SizeParams::FullCov { .. } => unreachable!(),
                })
                .collect();
            let step = rel * values.iter().cloned().fold(0.0, f64::max);
            Some(GroupView { analytic: idx.iter().map(|&i| grads.d_sigmas[i]).collect(), values, step })
        }
        ParamGroup::Covariance => {
            let idx: Vec<usize> = (0..n).filter(|&i| matches!(cloud.sizes[i], SizeParams::FullCov { .. })).collect();
            if idx.is_empty() {
                return None;
            }
            let mut values = Vec::new();
            let mut analytic = Vec::new();
            let mut largest = 0.0f64;
            for &i in &idx {
                let SizeParams::FullCov { diag, orientation, .. } = cloud.sizes[i] else { unreachable!() };
                values.extend(diag);
                values.extend(orientation.to_array());
                analytic.extend(grads.d_cov_diag[i]);
                analytic.extend(grads.d_cov_orientation[i]);
                largest = diag.iter().cloned().fold(largest, f64::max);
            }
            // diag entries and unit quaternion components differ in scale; a
            // step relative to the smaller of the two keeps both well resolved
            Some(GroupView { values, analytic, step: rel * largest.min(1.0) })
        }
        ParamGroup::Colors => {
            let colors = cloud.colors.as_ref().filter(|_| opts.modality == Modality::Color)?;
            Some(GroupView {
                values: colors.iter().flatten().copied().collect(),
                analytic: grads.d_colors.iter().flatten().copied().collect(),
                step: rel,
            })
        }
        ParamGroup::Rotation => Some(GroupView {
            values: pose.rotation.to_array().to_vec(),
            analytic: grads.d_rotation.to_vec(),
            step: rel,
        }),
        ParamGroup::Translation => Some(GroupView {
            values: pose.translation.iter().copied().collect(),
            analytic: grads.d_translation.iter().copied().collect(),
            step: rel,
        }),
    }
}

fn apply_group(group: ParamGroup, cloud: &mut PointCloud, pose: &mut Pose, x: &[f64]) {
    match group {
        ParamGroup::Positions => {
            for (i, p) in cloud.positions.iter_mut().enumerate() {
                *p = Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            }
        }
        ParamGroup::Scales => {
            for (s, v) in cloud.sizes.iter_mut().zip(x) {
                match s {
                    SizeParams::Isotropic { scale, .. } | SizeParams::FullCov { scale, .. } => *scale = *v,
                }
            }
        }
        ParamGroup::Sigmas => {
            let mut it = x.iter();
            for s in cloud.sizes.iter_mut() {
                if let SizeParams::Isotropic { sigma, .. } = s {
                    *sigma = *it.next().expect("sigma count");
                }
            }
        }
        ParamGroup::Covariance => {
            let mut chunks = x.chunks(7);
            for s in cloud.sizes.iter_mut() {
                if let SizeParams::FullCov { diag, orientation, .. } = s {
                    let c = chunks.next().expect("covariance count");
                    *diag = [c[0], c[1], c[2]];
                    *orientation = crate::geom::Quaternion::new(c[3], c[4], c[5], c[6]);
                }
            }
        }
        ParamGroup::Colors => {
            if let Some(colors) = cloud.colors.as_mut() {
                for (i, c) in colors.iter_mut().enumerate() {
                    *c = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
                }
            }
        }
        ParamGroup::Rotation => pose.rotation = crate::geom::Quaternion::new(x[0], x[1], x[2], x[3]),
        ParamGroup::Translation => pose.translation = Vec3::new(x[0], x[1], x[2]),
    }
}

/// Finite-difference result for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub step: f64,
    pub report: FdReport,
}

/// Checks [`vjp_render`] against central differences of
/// `<cotangent, render(...)>` for every parameter group the render depends
/// on. Groups that do not apply (no full-covariance points, no colors, shared
/// width on the fast path) are omitted.
pub fn check_render_gradients(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
    cotangent: &Projection,
    tolerance: f64,
) -> Result<Vec<GroupReport>> {
    let grads = vjp_render(cloud, pose, cam, grid, opts, None, cotangent)?;
    let mut out = Vec::new();
    for group in ParamGroup::ALL {
        let Some(view) = group_view(group, cloud, pose, &grads, opts) else { continue };
        let mut failure = None;
        let f = |x: &[f64]| -> f64 {
            let mut c = cloud.clone();
            let mut p = *pose;
            apply_group(group, &mut c, &mut p, x);
            match crate::render::render(&c, &p, cam, grid, opts, None) {
                Ok(img) => img.data.iter().zip(&cotangent.data).map(|(a, b)| a * b).sum(),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        };
        let report = finite_diff_check(f, &view.values, &view.analytic, view.step, tolerance);
        if let Some(e) = failure {
            return Err(e);
        }
        out.push(GroupReport { group, step: view.step, report });
    }
    Ok(out)
}

/// Random render setups for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceSpec {
    pub n_points: usize,
    pub grid: GridSpec,
    pub camera: CameraModel,
    pub opts: RenderOptions,
    /// Minimum distance of any pre-clip value from 1.
    pub clip_margin: f64,
    /// Minimum distance, in cells, of fast-path grid positions from cell planes.
    pub plane_margin: f64,
}

impl InstanceSpec {
    pub fn new(opts: RenderOptions, camera: CameraModel) -> Self {
        Self { n_points: 5, grid: GridSpec::cubic(16), camera, opts, clip_margin: 1e-3, plane_margin: 0.02 }
    }
}

/// A sampled render together with a random image cotangent.
#[derive(Clone, Debug)]
pub struct Instance {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub cotangent: Projection,
}

fn random_quaternion<R: rand::Rng>(rng: &mut R) -> crate::geom::Quaternion {
    let mut g = || rng.sample::<f64, _>(rand_distr::StandardNormal);
    crate::geom::Quaternion::new(g(), g(), g(), g()).normalize()
}

/// Samples instances until one avoids the clip kink (and, on the fast path,
/// the trilinear kinks at cell planes). Basic-path instances mix isotropic
/// and full-covariance points.
pub fn sample_instance<R: rand::Rng>(rng: &mut R, spec: &InstanceSpec) -> Result<Instance> {
    let fast = spec.opts.path == crate::render::SplatPath::Fast;
    let persp = matches!(spec.camera, CameraModel::Perspective { .. });
    for _ in 0..1000 {
        let n = spec.n_points;
        let positions: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)))
            .collect();
        let shared = rng.gen_range(0.05..0.09);
        let sizes: Vec<SizeParams> = (0..n)
            .map(|i| {
                let scale = rng.gen_range(0.15..0.6);
                if fast {
                    SizeParams::Isotropic { scale, sigma: shared }
                } else if i % 2 == 1 {
                    SizeParams::FullCov {
                        scale,
                        diag: [rng.gen_range(0.04..0.1), rng.gen_range(0.04..0.1), rng.gen_range(0.04..0.1)],
                        orientation: random_quaternion(rng),
                    }
                } else {
                    SizeParams::Isotropic { scale, sigma: rng.gen_range(0.05..0.09) }
                }
            })
            .collect();
        let colors = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::new(positions, sizes).with_colors(colors);
        let t = if persp {
            Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 2.0 + rng.gen_range(-0.1..0.1))
        } else {
            Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05))
        };
        let pose = Pose::new(random_quaternion(rng), t);
        if near_clip_kink(&cloud, &pose, &spec.camera, &spec.grid, &spec.opts, spec.clip_margin)? {
            continue;
        }
        if fast {
            let pts = crate::geom::camera_transform(&cloud.positions, &cloud.sizes, &pose, &spec.camera, &spec.grid);
            let near_plane =
                pts.iter().flatten().any(|p| p.position.iter().any(|v| (v - v.round()).abs() < spec.plane_margin));
            if near_plane {
                continue;
            }
        }
        let mut cotangent = Projection::zeros([spec.grid.dims[0], spec.grid.dims[1]], spec.opts.modality);
        cotangent.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        return Ok(Instance { cloud, pose, cotangent });
    }
    Err(Error::Degenerate("could not sample a kink-free instance".into()))
}
