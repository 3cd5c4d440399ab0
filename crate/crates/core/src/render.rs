//! Occlusion reasoning and projection: the full point cloud → image map.
//!
//! Occupancies along each ray (axis 3, index 0 nearest the camera) are
//! turned into termination probabilities with one extra background cell, and
//! the image is the termination-weighted sum of a per-cell signal. Image row
//! is grid axis 1 and image column is grid axis 2.

use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, GridPoint, GridSpec, Mat3, Pose, Vec3};
use crate::splat::{
    axis_kernels, canonical_order, clip_unit, density_fast, Bounds, GridGaussian, Kernel1D, Volume, DEFAULT_TRUNCATION,
};

/// Denominator floor for the normalized signal.
pub const SIGNAL_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[serde(alias = "sil")]
    Silhouette,
    Depth,
    Color,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Color => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplatPath {
    Basic,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub modality: Modality,
    pub path: SplatPath,
    /// Color of rays that reach the background cell (color modality only).
    pub background: Rgb,
    /// Kernel truncation, in sigmas, for the fast path.
    pub truncation: f64,
}

impl RenderOptions {
    pub fn new(modality: Modality, path: SplatPath) -> Self {
        Self { modality, path, background: [0.0; 3], truncation: DEFAULT_TRUNCATION }
    }
}

/// A rendered view: `rows × cols × channels`, channel fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub dims: [usize; 2],
    pub channels: usize,
    pub modality: Modality,
    pub data: Vec<f64>,
}

impl Projection {
    pub fn zeros(dims: [usize; 2], modality: Modality) -> Self {
        let channels = modality.channels();
        Self { dims, channels, modality, data: vec![0.0; dims[0] * dims[1] * channels] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.dims[1] + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Projection) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }
}

/// Termination probabilities, `D1 × D2 × (D3 + 1)`; the last cell of each
/// ray is the background.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminationVolume {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl TerminationVolume {
    pub fn get(&self, k1: usize, k2: usize, k3: usize) -> f64 {
        self.data[(k1 * self.dims[1] + k2) * self.dims[2] + k3]
    }

    fn ray(&self, k1: usize, k2: usize) -> &[f64] {
        let n = self.dims[2];
        let s = (k1 * self.dims[1] + k2) * n;
        &self.data[s..s + n]
    }
}

/// Per-cell normalized signal, `D1 × D2 × D3 × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalVolume {
    pub dims: [usize; 3],
    pub data: Vec<Rgb>,
}

impl SignalVolume {
    pub fn get(&self, k1: usize, k2: usize, k3: usize) -> Rgb {
        self.data[(k1 * self.dims[1] + k2) * self.dims[2] + k3]
    }
}

/// `r[k] = o[k] Π_{u<k} (1 - o[u])`, background `Π_u (1 - o[u])`.
pub fn ray_termination(occ: &Volume) -> TerminationVolume {
    let [d1, d2, d3] = occ.dims;
    let mut data = Vec::with_capacity(d1 * d2 * (d3 + 1));
    for k1 in 0..d1 {
        for k2 in 0..d2 {
            let mut t = 1.0;
            for k3 in 0..d3 {
                let o = occ.get(k1, k2, k3);
                data.push(o * t);
                t *= 1.0 - o;
            }
            data.push(t);
        }
    }
    TerminationVolume { dims: [d1, d2, d3 + 1], data }
}

/// What each termination cell contributes to the image.
#[derive(Clone, Copy, Debug)]
pub enum ProjectionSignal<'a> {
    Silhouette,
    Depth,
    Color { signal: &'a SignalVolume, background: Rgb },
}

/// `p = Σ_k r[k] y[k]` over the ray including its background cell.
pub fn project(term: &TerminationVolume, signal: ProjectionSignal<'_>) -> Projection {
    let [d1, d2, n] = term.dims;
    let d3 = n - 1;
    let modality = match signal {
        ProjectionSignal::Silhouette => Modality::Silhouette,
        ProjectionSignal::Depth => Modality::Depth,
        ProjectionSignal::Color { signal, .. } => {
            assert_eq!(signal.dims, [d1, d2, d3], "signal volume does not match termination volume");
            Modality::Color
        }
    };
    let mut out = Projection::zeros([d1, d2], modality);
    for k1 in 0..d1 {
        for k2 in 0..d2 {
            let r = term.ray(k1, k2);
            let base = (k1 * d2 + k2) * out.channels;
            match signal {
                ProjectionSignal::Silhouette => {
                    out.data[base] = r[..d3].iter().sum();
                }
                ProjectionSignal::Depth => {
                    out.data[base] = r.iter().enumerate().map(|(k, v)| v * (k + 1) as f64 / d3 as f64).sum();
                }
                ProjectionSignal::Color { signal, background } => {
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for (k3, rv) in r[..d3].iter().enumerate() {
                            acc += rv * signal.get(k1, k2, k3)[c];
                        }
                        out.data[base + c] = acc + r[d3] * background[c];
                    }
                }
            }
        }
    }
    out
}

fn signal_key(g: &GridGaussian, color: &Rgb) -> Vec<u64> {
    let mut k: Vec<u64> = g.center.iter().map(|v| v.to_bits()).collect();
    k.push(g.scale.to_bits());
    k.extend(g.precision.iter().map(|v| v.to_bits()));
    k.extend(color.iter().map(|v| v.to_bits()));
    k
}

/// Pre-clip density together with the color numerators `Σ y_i f_i`.
pub(crate) fn density_basic_with_signal(
    gaussians: &[GridGaussian],
    colors: &[Rgb],
    dims: [usize; 3],
) -> (Volume, [Volume; 3]) {
    use rayon::prelude::*;
    let order = canonical_order(gaussians.len(), |i| signal_key(&gaussians[i], &colors[i]));
    let sorted: Vec<(GridGaussian, Rgb)> = order.iter().map(|&i| (gaussians[i], colors[i])).collect();
    let slab = dims[1] * dims[2];
    let mut packed = vec![[0.0f64; 4]; dims[0] * slab];
    if slab > 0 {
        packed.par_chunks_mut(slab).enumerate().for_each(|(k1, out)| {
            for k2 in 0..dims[1] {
                for k3 in 0..dims[2] {
                    let m = Vec3::new(k1 as f64, k2 as f64, k3 as f64);
                    let mut acc = [0.0; 4];
                    for (g, y) in &sorted {
                        let f = g.scale * g.unit_density(&m);
                        acc[0] += f;
                        acc[1] += y[0] * f;
                        acc[2] += y[1] * f;
                        acc[3] += y[2] * f;
                    }
                    out[k2 * dims[2] + k3] = acc;
                }
            }
        });
    }
    let pick = |c: usize| Volume::from_data(dims, packed.iter().map(|a| a[c]).collect());
    (pick(0), [pick(1), pick(2), pick(3)])
}

/// `y(m) = Σ y_i f_i(m) / max(Σ f_i(m), ε)` on every cell.
pub fn signal_volume(points: &[GridPoint], values: &[Rgb], grid: &GridSpec) -> SignalVolume {
    assert_eq!(points.len(), values.len(), "one signal value per point");
    let gaussians: Vec<GridGaussian> = points.iter().map(GridGaussian::from_point).collect();
    let (den, num) = density_basic_with_signal(&gaussians, values, grid.dims);
    let data = (0..den.len())
        .map(|i| {
            let s = den.data[i].max(SIGNAL_EPS);
            [num[0].data[i] / s, num[1].data[i] / s, num[2].data[i] / s]
        })
        .collect();
    SignalVolume { dims: grid.dims, data }
}

/// One kept, in-front point as seen from the current view.
#[derive(Clone, Debug)]
pub(crate) struct ViewPoint {
    pub index: usize,
    pub world: Vec3,
    pub cam: Vec3,
    pub grid: Vec3,
    /// `d grid / d cam` at the point.
    pub jac: Mat3,
    pub world_cov: Mat3,
    /// `R Σ_world Rᵀ`.
    pub cam_cov: Mat3,
    pub scale: f64,
    pub color: Rgb,
}

pub(crate) enum DensityModel {
    Basic(Vec<GridGaussian>),
    Fast([Kernel1D; 3]),
}

/// Everything the backward pass needs from a forward render.
pub(crate) struct Trace {
    pub points: Vec<ViewPoint>,
    pub n_total: usize,
    pub rotation: Mat3,
    pub model: DensityModel,
    pub pre: Volume,
    pub numer: Option<[Volume; 3]>,
    pub bounds: Bounds,
    pub modality: Modality,
    pub background: Rgb,
    pub projection: Projection,
}

/// Kernel widths in cells for the fast path. Perspective lateral widths are
/// taken at the middle of the depth range.
pub(crate) fn fast_sigma_cells(sigma_world: f64, cam: &CameraModel, grid: &GridSpec) -> [f64; 3] {
    let s = grid.cells_per_unit();
    match *cam {
        CameraModel::Orthographic => [sigma_world * s.x, sigma_world * s.y, sigma_world * s.z],
        CameraModel::Perspective { focal, near, far } => {
            let z = 0.5 * (near + far);
            [
                sigma_world * focal / z * s.x,
                sigma_world * focal / z * s.y,
                sigma_world * grid.dims[2] as f64 / (far - near),
            ]
        }
    }
}

pub(crate) fn forward(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
    keep: Option<&[bool]>,
) -> Result<Trace> {
    let n = cloud.len();
    if cloud.sizes.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} positions but {} sizes", cloud.sizes.len())));
    }
    if let Some(k) = keep {
        if k.len() != n {
            return Err(Error::ShapeMismatch(format!("keep mask has {} entries for {n} points", k.len())));
        }
    }
    let colors = match (opts.modality, &cloud.colors) {
        (Modality::Color, None) => return Err(Error::MissingColors),
        (_, c) => c.as_ref(),
    };
    let shared_sigma = match opts.path {
        SplatPath::Fast if n > 0 => Some(cloud.shared_sigma().ok_or(Error::HeterogeneousSigma)?),
        _ => None,
    };

    let rotation = pose.rotation.rotation_matrix();
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        if keep.is_some_and(|k| !k[i]) {
            continue;
        }
        let world = cloud.positions[i];
        let cam_pt = rotation * world + pose.translation;
        let Some((g, jac)) = cam.to_grid(grid, &cam_pt) else { continue };
        let (world_cov, cam_cov) = match opts.path {
            SplatPath::Basic => {
                let wc = cloud.sizes[i].covariance();
                (wc, rotation * wc * rotation.transpose())
            }
            SplatPath::Fast => (Mat3::zeros(), Mat3::zeros()),
        };
        points.push(ViewPoint {
            index: i,
            world,
            cam: cam_pt,
            grid: g,
            jac,
            world_cov,
            cam_cov,
            scale: cloud.sizes[i].scale(),
            color: colors.map_or([0.0; 3], |c| c[i]),
        });
    }

    let want_signal = opts.modality == Modality::Color;
    let (model, pre, numer, bounds) = match opts.path {
        SplatPath::Basic => {
            let gaussians: Vec<GridGaussian> = points
                .iter()
                .map(|p| GridGaussian::new(p.grid, p.scale, &(p.jac * p.cam_cov * p.jac.transpose())))
                .collect();
            let (pre, numer) = if want_signal {
                let cols: Vec<Rgb> = points.iter().map(|p| p.color).collect();
                let (d, n) = density_basic_with_signal(&gaussians, &cols, grid.dims);
                (d, Some(n))
            } else {
                (crate::splat::density_basic(&gaussians, grid.dims), None)
            };
            let bounds = if points.is_empty() { Bounds::empty() } else { Bounds::full(grid.dims) };
            (DensityModel::Basic(gaussians), pre, numer, bounds)
        }
        SplatPath::Fast => {
            let sigma = shared_sigma.unwrap_or(1.0);
            let kernels = axis_kernels(fast_sigma_cells(sigma, cam, grid), opts.truncation);
            let pos: Vec<Vec3> = points.iter().map(|p| p.grid).collect();
            let w: Vec<f64> = points.iter().map(|p| p.scale).collect();
            let (pre, bounds) = density_fast(&pos, &w, &kernels, grid.dims);
            let numer = want_signal.then(|| {
                [0, 1, 2].map(|c| {
                    let wc: Vec<f64> = points.iter().map(|p| p.scale * p.color[c]).collect();
                    density_fast(&pos, &wc, &kernels, grid.dims).0
                })
            });
            (DensityModel::Fast(kernels), pre, numer, bounds)
        }
    };

    let projection = composite(&pre, numer.as_ref(), &bounds, opts.modality, opts.background);
    Ok(Trace {
        points,
        n_total: n,
        rotation,
        model,
        pre,
        numer,
        bounds,
        modality: opts.modality,
        background: opts.background,
        projection,
    })
}

/// Value of the projected signal at depth cell `k3` (0-based) of a ray.
#[inline]
pub(crate) fn cell_signal(
    modality: Modality,
    k3: usize,
    d3: usize,
    idx: usize,
    pre: &Volume,
    numer: Option<&[Volume; 3]>,
) -> Rgb {
    match modality {
        Modality::Silhouette => [1.0, 0.0, 0.0],
        Modality::Depth => [(k3 + 1) as f64 / d3 as f64, 0.0, 0.0],
        Modality::Color => {
            let num = numer.expect("color render without numerators");
            let s = pre.data[idx].max(SIGNAL_EPS);
            [num[0].data[idx] / s, num[1].data[idx] / s, num[2].data[idx] / s]
        }
    }
}

pub(crate) fn background_signal(modality: Modality, d3: usize, background: Rgb) -> Rgb {
    match modality {
        Modality::Silhouette => [0.0; 3],
        Modality::Depth => [(d3 + 1) as f64 / d3 as f64, 0.0, 0.0],
        Modality::Color => background,
    }
}

/// Clip, ray termination and projection fused per ray; only the `bounds`
/// box is visited since occupancy is zero elsewhere.
fn composite(pre: &Volume, numer: Option<&[Volume; 3]>, bounds: &Bounds, modality: Modality, bg: Rgb) -> Projection {
    let [d1, d2, d3] = pre.dims;
    let mut out = Projection::zeros([d1, d2], modality);
    let ch = out.channels;
    let bg_y = background_signal(modality, d3, bg);
    for k1 in 0..d1 {
        for k2 in 0..d2 {
            let base = (k1 * d2 + k2) * ch;
            let inside = !bounds.is_empty()
                && (bounds.lo[0]..bounds.hi[0]).contains(&k1)
                && (bounds.lo[1]..bounds.hi[1]).contains(&k2);
            let mut acc = [0.0; 3];
            let mut t = 1.0;
            if inside {
                for k3 in bounds.lo[2]..bounds.hi[2] {
                    let idx = pre.index(k1, k2, k3);
                    let o = pre.data[idx].clamp(0.0, 1.0);
                    if o == 0.0 {
                        continue;
                    }
                    let r = o * t;
                    let y = cell_signal(modality, k3, d3, idx, pre, numer);
                    for c in 0..ch {
                        acc[c] += r * y[c];
                    }
                    t *= 1.0 - o;
                }
            }
            for c in 0..ch {
                out.data[base + c] = acc[c] + t * bg_y[c];
            }
        }
    }
    out
}

/// Renders `cloud` from `pose`: camera transform, splatting, clip, ray
/// termination and projection. Points whose `keep` flag is false are left
/// out; perspective points behind the camera are dropped.
pub fn render(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
    keep: Option<&[bool]>,
) -> Result<Projection> {
    Ok(forward(cloud, pose, cam, grid, opts, keep)?.projection)
}

/// Occupancy volume for a view, without projecting it.
pub fn occupancy(
    cloud: &PointCloud,
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
) -> Result<Volume> {
    Ok(clip_unit(&forward(cloud, pose, cam, grid, opts, None)?.pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quaternion, SizeParams};
    use crate::splat::splat_basic;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> Volume {
        Volume::from_data([1, 1, values.len()], values.to_vec())
    }

    #[test]
    fn termination_closed_forms() {
        assert_eq!(ray_termination(&column(&[0.0, 0.0])).data, vec![0.0, 0.0, 1.0]);
        assert_eq!(ray_termination(&column(&[1.0, 0.5])).data, vec![1.0, 0.0, 0.0]);
        assert_eq!(ray_termination(&column(&[0.5, 0.5])).data, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn projection_modalities() {
        let empty = ray_termination(&column(&[0.0, 0.0]));
        assert_eq!(project(&empty, ProjectionSignal::Silhouette).data, vec![0.0]);
        assert_eq!(project(&empty, ProjectionSignal::Depth).data, vec![1.5]);
        let front = ray_termination(&column(&[1.0, 0.0]));
        assert_eq!(project(&front, ProjectionSignal::Depth).data, vec![0.5]);
        assert_eq!(project(&front, ProjectionSignal::Silhouette).data, vec![1.0]);
        let sig = SignalVolume { dims: [1, 1, 2], data: vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]] };
        let p = project(&front, ProjectionSignal::Color { signal: &sig, background: [0.0; 3] });
        assert_eq!(p.data, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_opaque_cell_depth_is_exact() {
        for d3 in [1usize, 4, 7] {
            for k in 0..d3 {
                let mut occ = vec![0.0; d3];
                occ[k] = 1.0;
                let p = project(&ray_termination(&column(&occ)), ProjectionSignal::Depth);
                assert_eq!(p.data[0], (k + 1) as f64 / d3 as f64);
            }
        }
    }

    #[test]
    fn signal_volume_cases() {
        let g = GridSpec::cubic(6);
        let p =
            GridPoint { position: Vec3::new(2.0, 3.0, 2.5), size: SizeParams::Isotropic { scale: 0.5, sigma: 1.0 } };
        let s = signal_volume(&[p], &[[0.2, 0.4, 0.9]], &g);
        for v in &s.data {
            for c in 0..3 {
                assert!((v[c] - [0.2, 0.4, 0.9][c]).abs() < 1e-14);
            }
        }
        let a =
            GridPoint { position: Vec3::new(2.0, 3.0, 2.0), size: SizeParams::Isotropic { scale: 1.0, sigma: 1.0 } };
        let b = GridPoint { position: Vec3::new(4.0, 3.0, 2.0), ..a };
        let s = signal_volume(&[a, b], &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], &g);
        let mid = s.get(3, 3, 2);
        assert!((mid[0] - 0.5).abs() < 1e-14 && (mid[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn signal_volume_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSpec::cubic(7);
        let pts: Vec<GridPoint> = (0..9)
            .map(|_| GridPoint {
                position: Vec3::new(rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0), rng.gen_range(0.0..7.0)),
                size: SizeParams::Isotropic { scale: rng.gen_range(0.1..1.0), sigma: rng.gen_range(0.7..2.0) },
            })
            .collect();
        let vals: Vec<Rgb> = (0..9).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let s = signal_volume(&pts, &vals, &g);
        for k1 in 0..7 {
            for k2 in 0..7 {
                for k3 in 0..7 {
                    let m = Vec3::new(k1 as f64, k2 as f64, k3 as f64);
                    let mut num = [0.0; 3];
                    let mut den = 0.0;
                    for (p, y) in pts.iter().zip(&vals) {
                        let SizeParams::Isotropic { scale, sigma } = p.size else { unreachable!() };
                        let f = scale * (-(m - p.position).norm_squared() / (2.0 * sigma * sigma)).exp();
                        den += f;
                        for c in 0..3 {
                            num[c] += y[c] * f;
                        }
                    }
                    let got = s.get(k1, k2, k3);
                    for c in 0..3 {
                        assert!((got[c] - num[c] / den.max(SIGNAL_EPS)).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    fn opts(m: Modality, p: SplatPath) -> RenderOptions {
        RenderOptions::new(m, p)
    }

    #[test]
    fn empty_cloud_renders_background() {
        let g = GridSpec::cubic(8);
        for path in [SplatPath::Basic, SplatPath::Fast] {
            let img = render(
                &PointCloud::empty(),
                &Pose::default(),
                &CameraModel::Orthographic,
                &g,
                &opts(Modality::Silhouette, path),
                None,
            )
            .unwrap();
            assert!(img.data.iter().all(|&v| v == 0.0));
            let img = render(
                &PointCloud::empty(),
                &Pose::default(),
                &CameraModel::Orthographic,
                &g,
                &opts(Modality::Depth, path),
                None,
            )
            .unwrap();
            assert!(img.data.iter().all(|&v| v == 9.0 / 8.0));
        }
    }

    #[test]
    fn centered_point_gives_central_disc() {
        let g = GridSpec::cubic(32);
        let cloud = PointCloud::isotropic(vec![Vec3::zeros()], 1.0, 0.05);
        let img = render(
            &cloud,
            &Pose::default(),
            &CameraModel::Orthographic,
            &g,
            &opts(Modality::Silhouette, SplatPath::Basic),
            None,
        )
        .unwrap();
        let peak = img.pixel(16, 16)[0];
        assert!(peak > 0.99);
        let mut best = (0, 0, 0.0);
        for r in 0..32 {
            for c in 0..32 {
                if img.pixel(r, c)[0] > best.2 {
                    best = (r, c, img.pixel(r, c)[0]);
                }
            }
        }
        assert_eq!((best.0, best.1), (16, 16));
        assert!(img.pixel(16, 10)[0] < 0.1);
        // silhouette is symmetric about the center cell
        for d in 1..10 {
            assert!((img.pixel(16 - d, 16)[0] - img.pixel(16 + d, 16)[0]).abs() < 1e-12);
            assert!((img.pixel(16, 16 - d)[0] - img.pixel(16, 16 + d)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_path_rejects_mixed_sigma() {
        let g = GridSpec::cubic(8);
        let cloud = PointCloud::new(
            vec![Vec3::zeros(), Vec3::zeros()],
            vec![SizeParams::Isotropic { scale: 1.0, sigma: 0.1 }, SizeParams::Isotropic { scale: 1.0, sigma: 0.2 }],
        );
        let err = render(
            &cloud,
            &Pose::default(),
            &CameraModel::Orthographic,
            &g,
            &opts(Modality::Silhouette, SplatPath::Fast),
            None,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "fast path requires shared sigma");
    }

    #[test]
    fn fused_pipeline_matches_stagewise_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = GridSpec::new([10, 12, 9], [1.0; 3]);
        let pos: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let cols: Vec<Rgb> = (0..12).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::isotropic(pos.clone(), 0.6, 0.08).with_colors(cols.clone());
        let pose = Pose::new(Quaternion::new(0.9, 0.1, -0.3, 0.2).normalize(), Vec3::new(0.01, -0.02, 0.0));
        let cam = CameraModel::Orthographic;
        let pts: Vec<GridPoint> = crate::geom::camera_transform(&cloud.positions, &cloud.sizes, &pose, &cam, &g)
            .into_iter()
            .map(|p| p.unwrap())
            .collect();
        let term = ray_termination(&splat_basic(&pts, &g));
        let sig = signal_volume(&pts, &cols, &g);
        for (m, ps) in [
            (Modality::Silhouette, ProjectionSignal::Silhouette),
            (Modality::Depth, ProjectionSignal::Depth),
            (Modality::Color, ProjectionSignal::Color { signal: &sig, background: [0.0; 3] }),
        ] {
            let want = project(&term, ps);
            let got = render(&cloud, &pose, &cam, &g, &opts(m, SplatPath::Basic), None).unwrap();
            let err = want.data.iter().zip(&got.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{m:?}: {err}");
        }
    }

    #[test]
    fn keep_mask_removes_points() {
        let g = GridSpec::cubic(16);
        let cloud = PointCloud::isotropic(vec![Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.2, 0.1, 0.0)], 1.0, 0.05);
        let o = opts(Modality::Silhouette, SplatPath::Fast);
        let masked =
            render(&cloud, &Pose::default(), &CameraModel::Orthographic, &g, &o, Some(&[true, false])).unwrap();
        let only =
            render(&cloud.select(&[true, false]), &Pose::default(), &CameraModel::Orthographic, &g, &o, None).unwrap();
        assert_eq!(masked, only);
    }

    #[test]
    fn perspective_drops_points_behind_camera() {
        let g = GridSpec::cubic(16);
        let cam = CameraModel::perspective();
        let cloud = PointCloud::isotropic(vec![Vec3::new(0.0, 0.0, -3.0)], 1.0, 0.05);
        let pose = Pose::new(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, 2.0));
        let img = render(&cloud, &pose, &cam, &g, &opts(Modality::Silhouette, SplatPath::Basic), None).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn termination_sums_to_one(values in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let t = ray_termination(&column(&values));
            let s: f64 = t.data.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(t.data.iter().all(|&r| r >= 0.0));
        }

        #[test]
        fn opaque_front_cell_hides_what_is_behind(values in proptest::collection::vec(0.0f64..=1.0, 3..20), i in 0usize..18, j in 0usize..18) {
            let n = values.len();
            let (i, j) = (i % n, j % n);
            prop_assume!(i != j);
            let (near, far) = (i.min(j), i.max(j));
            let mut a = values.clone();
            a[near] = 1.0;
            let mut b = a.clone();
            // swapping two cells behind the opaque one
            if far + 1 < n {
                b.swap(far, far + 1);
                let pa = project(&ray_termination(&column(&a)), ProjectionSignal::Silhouette);
                let pb = project(&ray_termination(&column(&b)), ProjectionSignal::Silhouette);
                prop_assert_eq!(pa, pb);
            }
        }

        #[test]
        fn silhouette_is_monotone_in_occupancy(values in proptest::collection::vec(0.0f64..=1.0, 1..20), k in 0usize..20, bump in 0.0f64..1.0) {
            let k = k % values.len();
            let mut up = values.clone();
            up[k] = (up[k] + bump).min(1.0);
            let a = project(&ray_termination(&column(&values)), ProjectionSignal::Silhouette).data[0];
            let b = project(&ray_termination(&column(&up)), ProjectionSignal::Silhouette).data[0];
            prop_assert!(b >= a - 1e-15);
        }
    }
}
