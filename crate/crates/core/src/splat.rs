//! Point-to-volume conversion.
//!
//! Two routes produce the occupancy volume `clip(Σ c_i exp(-½ dᵀ Σ_i⁻¹ d))`:
//! the `basic` path evaluates every Gaussian at every cell (O(N·V)) and
//! supports per-point covariances; the `fast` path scatters points
//! trilinearly onto the grid and blurs with one shared separable kernel
//! (O(N + V·taps)).
//!
//! Cell `(k1, k2, k3)` is evaluated at grid coordinate `(k1, k2, k3)`.
//! Sums over points run in a canonical point order so the output does not
//! depend on how the caller ordered the points.

use rayon::prelude::*;

use crate::geom::{GridPoint, GridSpec, Mat3, Vec3};

/// Dense scalar grid, row-major with axis 1 slowest and axis 3 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_data(dims: [usize; 3], data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2], "volume data does not match dims");
        Self { dims, data }
    }

    #[inline]
    pub fn index(&self, k1: usize, k2: usize, k3: usize) -> usize {
        (k1 * self.dims[1] + k2) * self.dims[2] + k3
    }

    #[inline]
    pub fn get(&self, k1: usize, k2: usize, k3: usize) -> f64 {
        self.data[self.index(k1, k2, k3)]
    }

    #[inline]
    pub fn set(&mut self, k1: usize, k2: usize, k3: usize, v: f64) {
        let i = self.index(k1, k2, k3);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Volume) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }
}

/// Elementwise `max(0, min(1, v))`.
pub fn clip_unit(v: &Volume) -> Volume {
    Volume { dims: v.dims, data: v.data.iter().map(|x| x.clamp(0.0, 1.0)).collect() }
}

/// Half-open box of cells outside of which a volume is known to be zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Bounds {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Bounds {
    pub fn empty() -> Self {
        Self { lo: [usize::MAX; 3], hi: [0; 3] }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: dims }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.lo[a] >= self.hi[a])
    }

    pub fn include(&mut self, k: [usize; 3]) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(k[a]);
            self.hi[a] = self.hi[a].max(k[a] + 1);
        }
    }

    fn expand(&mut self, axis: usize, radius: usize, dim: usize) {
        if self.is_empty() {
            return;
        }
        self.lo[axis] = self.lo[axis].saturating_sub(radius);
        self.hi[axis] = (self.hi[axis] + radius).min(dim);
    }
}

/// Symmetric, un-normalized 1D Gaussian kernel with unit peak.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D {
    pub taps: Vec<f64>,
    pub center: usize,
    pub sigma: f64,
    pub truncation: f64,
}

impl Kernel1D {
    pub fn radius(&self) -> usize {
        self.center
    }
}

/// Taps `exp(-(j - c)² / 2σ²)` truncated at `truncation · σ` cells; a
/// truncation radius below one cell gives the single-tap identity kernel.
pub fn gaussian_kernel_1d(sigma_cells: f64, truncation: f64) -> Kernel1D {
    assert!(sigma_cells > 0.0, "kernel sigma must be positive");
    assert!(truncation > 0.0, "kernel truncation must be positive");
    let reach = truncation * sigma_cells;
    let radius = if reach < 1.0 { 0 } else { reach.ceil() as usize };
    let inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
    let taps = (0..2 * radius + 1)
        .map(|j| {
            let d = j as f64 - radius as f64;
            (-d * d * inv).exp()
        })
        .collect();
    Kernel1D { taps, center: radius, sigma: sigma_cells, truncation }
}

pub const DEFAULT_TRUNCATION: f64 = 3.0;

/// Gaussian in grid units, ready for dense evaluation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GridGaussian {
    pub center: Vec3,
    pub scale: f64,
    pub precision: Mat3,
}

impl GridGaussian {
    pub fn new(center: Vec3, scale: f64, covariance: &Mat3) -> Self {
        let precision = covariance.try_inverse().expect("grid-space covariance must be invertible");
        Self { center, scale, precision: (precision + precision.transpose()) * 0.5 }
    }

    pub fn from_point(p: &GridPoint) -> Self {
        Self::new(p.position, p.size.scale(), &p.size.covariance())
    }

    /// `exp(-½ dᵀ P d)` for `d = m - center`; zero once the exponent underflows.
    #[inline]
    pub fn unit_density(&self, m: &Vec3) -> f64 {
        let d = m - self.center;
        let p = &self.precision;
        let q = p[(0, 0)] * d.x * d.x
            + p[(1, 1)] * d.y * d.y
            + p[(2, 2)] * d.z * d.z
            + 2.0 * (p[(0, 1)] * d.x * d.y + p[(0, 2)] * d.x * d.z + p[(1, 2)] * d.y * d.z);
        if q > 1500.0 {
            0.0
        } else {
            (-0.5 * q).exp()
        }
    }
}

/// Point indices sorted by their bit patterns, so sums taken in this order
/// are independent of input order.
pub(crate) fn canonical_order<F>(n: usize, key: F) -> Vec<usize>
where
    F: Fn(usize) -> Vec<u64>,
{
    let keys: Vec<Vec<u64>> = (0..n).map(&key).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    order
}

fn gaussian_key(g: &GridGaussian) -> Vec<u64> {
    let mut k: Vec<u64> = g.center.iter().map(|v| v.to_bits()).collect();
    k.push(g.scale.to_bits());
    k.extend(g.precision.iter().map(|v| v.to_bits()));
    k
}

/// Pre-clip density of the basic path.
pub(crate) fn density_basic(gaussians: &[GridGaussian], dims: [usize; 3]) -> Volume {
    let order = canonical_order(gaussians.len(), |i| gaussian_key(&gaussians[i]));
    let sorted: Vec<GridGaussian> = order.iter().map(|&i| gaussians[i]).collect();
    let mut vol = Volume::zeros(dims);
    let slab = dims[1] * dims[2];
    if sorted.is_empty() || slab == 0 {
        return vol;
    }
    vol.data.par_chunks_mut(slab).enumerate().for_each(|(k1, out)| {
        for k2 in 0..dims[1] {
            for k3 in 0..dims[2] {
                let m = Vec3::new(k1 as f64, k2 as f64, k3 as f64);
                let mut acc = 0.0;
                for g in &sorted {
                    acc += g.scale * g.unit_density(&m);
                }
                out[k2 * dims[2] + k3] = acc;
            }
        }
    });
    vol
}

/// Occupancy by direct per-point evaluation. Supports isotropic and full
/// covariances per point.
pub fn splat_basic(points: &[GridPoint], grid: &GridSpec) -> Volume {
    let gaussians: Vec<GridGaussian> = points.iter().map(GridGaussian::from_point).collect();
    clip_unit(&density_basic(&gaussians, grid.dims))
}

/// Trilinear corners of a grid position: `(cell, weight, d weight / d g)`.
/// Corners outside the grid are omitted.
pub(crate) fn trilinear_corners(g: &Vec3, dims: [usize; 3]) -> impl Iterator<Item = ([usize; 3], f64, Vec3)> {
    let base = [g.x.floor(), g.y.floor(), g.z.floor()];
    let frac = [g.x - base[0], g.y - base[1], g.z - base[2]];
    (0..8usize).filter_map(move |c| {
        let mut cell = [0usize; 3];
        let mut w = [0.0; 3];
        let mut dw = [0.0; 3];
        for a in 0..3 {
            let bit = (c >> (2 - a)) & 1;
            let k = base[a] + bit as f64;
            if k < 0.0 || k >= dims[a] as f64 {
                return None;
            }
            cell[a] = k as usize;
            if bit == 0 {
                w[a] = 1.0 - frac[a];
                dw[a] = -1.0;
            } else {
                w[a] = frac[a];
                dw[a] = 1.0;
            }
        }
        let weight = w[0] * w[1] * w[2];
        let grad = Vec3::new(dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]);
        Some((cell, weight, grad))
    })
}

fn scatter_key(p: &Vec3, s: f64) -> Vec<u64> {
    vec![p.x.to_bits(), p.y.to_bits(), p.z.to_bits(), s.to_bits()]
}

/// Scatters weighted points into `vol`, growing `bounds` to cover touched cells.
pub(crate) fn scatter_into(vol: &mut Volume, positions: &[Vec3], weights: &[f64], bounds: &mut Bounds) {
    let order = canonical_order(positions.len(), |i| scatter_key(&positions[i], weights[i]));
    for i in order {
        for (cell, w, _) in trilinear_corners(&positions[i], vol.dims) {
            let idx = vol.index(cell[0], cell[1], cell[2]);
            vol.data[idx] += w * weights[i];
            bounds.include(cell);
        }
    }
}

/// Distributes each point's scale over its eight neighboring cells.
pub fn trilinear_scatter(positions: &[Vec3], scales: &[f64], grid: &GridSpec) -> Volume {
    assert_eq!(positions.len(), scales.len());
    let mut vol = Volume::zeros(grid.dims);
    let mut bounds = Bounds::empty();
    scatter_into(&mut vol, positions, scales, &mut bounds);
    vol
}

/// In-place zero-padded convolution along `axis`, restricted to `bounds`.
/// `bounds` grows by the kernel radius along `axis`.
pub(crate) fn convolve_axis(vol: &mut Volume, kernel: &Kernel1D, axis: usize, bounds: &mut Bounds) {
    if bounds.is_empty() || kernel.taps.len() == 1 && kernel.taps[0] == 1.0 {
        return;
    }
    let dims = vol.dims;
    let strides = vol.strides();
    let (lo, hi) = (bounds.lo[axis], bounds.hi[axis]);
    let r = kernel.radius();
    let out_lo = lo.saturating_sub(r);
    let out_hi = (hi + r).min(dims[axis]);
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (a0, a1) = (others[0], others[1]);
    let taps = &kernel.taps;

    let line = |data: &mut [f64], base: usize, buf: &mut Vec<f64>| {
        let s = strides[axis];
        buf.clear();
        buf.extend((lo..hi).map(|k| data[base + k * s]));
        for k in out_lo..out_hi {
            // input index i = k + j - r must lie in [lo, hi)
            let j_min = (lo + r).saturating_sub(k);
            let j_max = (hi + r - k).min(taps.len());
            let mut acc = 0.0;
            for j in j_min..j_max {
                acc += taps[j] * buf[k + j - r - lo];
            }
            data[base + k * s] = acc;
        }
    };

    let mut buf = Vec::with_capacity(hi - lo);
    for i0 in bounds.lo[a0]..bounds.hi[a0] {
        for i1 in bounds.lo[a1]..bounds.hi[a1] {
            let base = i0 * strides[a0] + i1 * strides[a1];
            line(&mut vol.data, base, &mut buf);
        }
    }
    bounds.expand(axis, r, dims[axis]);
}

/// Per-axis shared kernels for the fast path.
pub(crate) fn axis_kernels(sigma_cells: [f64; 3], truncation: f64) -> [Kernel1D; 3] {
    sigma_cells.map(|s| gaussian_kernel_1d(s, truncation))
}

/// Scatter + separable blur without the clip. Returns the density and the box
/// outside of which it is zero.
pub(crate) fn density_fast(
    positions: &[Vec3],
    scales: &[f64],
    kernels: &[Kernel1D; 3],
    dims: [usize; 3],
) -> (Volume, Bounds) {
    let mut vol = Volume::zeros(dims);
    let mut bounds = Bounds::empty();
    scatter_into(&mut vol, positions, scales, &mut bounds);
    for axis in [2, 1, 0] {
        convolve_axis(&mut vol, &kernels[axis], axis, &mut bounds);
    }
    (vol, bounds)
}

/// Occupancy via trilinear scatter and three 1D convolutions sharing one
/// isotropic `sigma_cells`, followed by the clip.
pub fn splat_fast(positions: &[Vec3], scales: &[f64], shared_sigma_cells: f64, grid: &GridSpec) -> Volume {
    splat_fast_anisotropic(positions, scales, [shared_sigma_cells; 3], grid)
}

/// [`splat_fast`] with a separate kernel width per grid axis, for grids whose
/// cells are not cubes in world units.
pub fn splat_fast_anisotropic(positions: &[Vec3], scales: &[f64], sigma_cells: [f64; 3], grid: &GridSpec) -> Volume {
    assert_eq!(positions.len(), scales.len());
    let kernels = axis_kernels(sigma_cells, DEFAULT_TRUNCATION);
    let (vol, _) = density_fast(positions, scales, &kernels, grid.dims);
    clip_unit(&vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SizeParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iso(p: Vec3, scale: f64, sigma: f64) -> GridPoint {
        GridPoint { position: p, size: SizeParams::Isotropic { scale, sigma } }
    }

    /// Literal triple loop over cells and points, written independently of
    /// the library's evaluation order and precision handling.
    fn brute_force(points: &[GridPoint], dims: [usize; 3]) -> Volume {
        let mut v = Volume::zeros(dims);
        for k1 in 0..dims[0] {
            for k2 in 0..dims[1] {
                for k3 in 0..dims[2] {
                    let m = Vec3::new(k1 as f64, k2 as f64, k3 as f64);
                    let mut s = 0.0;
                    for p in points {
                        let inv = p.size.covariance().try_inverse().unwrap();
                        let d = m - p.position;
                        s += p.size.scale() * (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
                    }
                    v.set(k1, k2, k3, s.clamp(0.0, 1.0));
                }
            }
        }
        v
    }

    #[test]
    fn empty_cloud_is_zero() {
        let g = GridSpec::cubic(8);
        assert!(splat_basic(&[], &g).data.iter().all(|&v| v == 0.0));
        assert!(splat_fast(&[], &[], 1.0, &g).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_at_cell_center_peaks_at_its_scale() {
        let g = GridSpec::cubic(8);
        let v = splat_basic(&[iso(Vec3::new(3.0, 4.0, 5.0), 0.7, 1.0)], &g);
        assert_eq!(v.get(3, 4, 5), 0.7);
        assert!((v.get(4, 4, 5) - 0.7 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((v.get(4, 5, 5) - 0.7 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn basic_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [8, 8, 8];
        let mut points = Vec::new();
        for i in 0..20 {
            let pos = Vec3::new(rng.gen_range(-1.0..9.0), rng.gen_range(-1.0..9.0), rng.gen_range(-1.0..9.0));
            let scale = rng.gen_range(0.0..0.2);
            if i % 2 == 0 {
                points.push(iso(pos, scale, rng.gen_range(0.5..2.0)));
            } else {
                let q = crate::geom::Quaternion::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
                points.push(GridPoint {
                    position: pos,
                    size: SizeParams::FullCov {
                        scale,
                        diag: [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)],
                        orientation: q,
                    },
                });
            }
        }
        let got = splat_basic(&points, &GridSpec::cubic(8));
        let want = brute_force(&points, dims);
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn kernel_shapes() {
        let k = gaussian_kernel_1d(1e-6, 3.0);
        assert_eq!(k.taps, vec![1.0]);
        let k = gaussian_kernel_1d(1.0, 3.0);
        assert_eq!(k.taps.len(), 7);
        assert_eq!(k.center, 3);
        assert_eq!(k.taps[3], 1.0);
        assert!((k.taps[2] - 0.6065306597126334).abs() < 1e-15);
        for j in 0..7 {
            assert_eq!(k.taps[j], k.taps[6 - j]);
        }
        assert_eq!(gaussian_kernel_1d(0.3, 3.0).taps.len(), 1);
        assert_eq!(gaussian_kernel_1d(1.5, 3.0).taps.len(), 2 * 5 + 1);
    }

    #[test]
    fn separable_kernel_product_matches_dense_gaussian() {
        let sigma = 1.3;
        let k = gaussian_kernel_1d(sigma, 3.0);
        let r = k.center as i64;
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    let prod = k.taps[(a + r) as usize] * k.taps[(b + r) as usize] * k.taps[(c + r) as usize];
                    let d2 = (a * a + b * b + c * c) as f64;
                    let dense = (-d2 / (2.0 * sigma * sigma)).exp();
                    assert!((prod - dense).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn trilinear_cases() {
        let g = GridSpec::cubic(4);
        let v = trilinear_scatter(&[Vec3::new(1.0, 2.0, 3.0)], &[0.8], &g);
        assert_eq!(v.get(1, 2, 3), 0.8);
        assert_eq!(v.sum(), 0.8);
        let v = trilinear_scatter(&[Vec3::new(1.5, 2.0, 1.0)], &[1.0], &g);
        assert_eq!(v.get(1, 2, 1), 0.5);
        assert_eq!(v.get(2, 2, 1), 0.5);
    }

    #[test]
    fn trilinear_mass_matches_weight_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = GridSpec::cubic(10);
        let pos: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen_range(-2.0..11.0), rng.gen_range(-2.0..11.0), rng.gen_range(-2.0..11.0)))
            .collect();
        let scales: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v = trilinear_scatter(&pos, &scales, &g);
        // Enumerate the 8 weights per point independently and keep in-grid ones.
        let mut expected = 0.0;
        for (p, s) in pos.iter().zip(&scales) {
            let f = [p.x - p.x.floor(), p.y - p.y.floor(), p.z - p.z.floor()];
            for c in 0..8 {
                let mut w = *s;
                let mut inside = true;
                for a in 0..3 {
                    let bit = (c >> a) & 1;
                    let k = p[a].floor() + bit as f64;
                    inside &= (0.0..10.0).contains(&k);
                    w *= if bit == 1 { f[a] } else { 1.0 - f[a] };
                }
                if inside {
                    expected += w;
                }
            }
            let interior = (0..3).all(|a| p[a] >= 1.0 && p[a] <= 8.0);
            if interior {
                let one = trilinear_scatter(&[*p], &[*s], &g).sum();
                assert!((one - s).abs() < 1e-12);
            }
        }
        assert!((v.sum() - expected).abs() < 1e-9);
    }

    #[test]
    fn fast_single_point_is_truncated_bump() {
        let g = GridSpec::cubic(12);
        let v = splat_fast(&[Vec3::new(6.0, 5.0, 4.0)], &[0.9], 1.0, &g);
        for k1 in 0..12 {
            for k2 in 0..12 {
                for k3 in 0..12 {
                    let d = [k1 as f64 - 6.0, k2 as f64 - 5.0, k3 as f64 - 4.0];
                    let inside = d.iter().all(|x| x.abs() <= 3.0);
                    let want =
                        if inside { 0.9 * (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / 2.0).exp() } else { 0.0 };
                    assert!((v.get(k1, k2, k3) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn restricted_convolution_matches_full_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dims = [9, 11, 13];
        let pos: Vec<Vec3> = (0..15)
            .map(|_| Vec3::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..12.0)))
            .collect();
        let w: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..1.0)).collect();
        let kernels = axis_kernels([1.1, 0.8, 1.7], 3.0);
        let (fast, _) = density_fast(&pos, &w, &kernels, dims);
        let mut full = Volume::zeros(dims);
        let mut b = Bounds::empty();
        scatter_into(&mut full, &pos, &w, &mut b);
        let mut fb = Bounds::full(dims);
        for axis in [2, 1, 0] {
            convolve_axis(&mut full, &kernels[axis], axis, &mut fb);
        }
        assert!(fast.max_abs_diff(&full) < 1e-15);
    }

    #[test]
    fn clip_behaviour() {
        let v = Volume::from_data([1, 1, 4], vec![0.0, 1.7, -0.2, 0.4]);
        let c = clip_unit(&v);
        assert_eq!(c.data, vec![0.0, 1.0, 0.0, 0.4]);
        assert_eq!(clip_unit(&c), c);
    }

    #[test]
    fn translation_equivariance_basic() {
        let g = GridSpec::cubic(10);
        let pts = vec![iso(Vec3::new(4.25, 3.5, 5.0), 0.4, 1.0), iso(Vec3::new(5.0, 4.75, 3.5), 0.3, 1.5)];
        let shifted: Vec<GridPoint> =
            pts.iter().map(|p| GridPoint { position: p.position + Vec3::new(1.0, 0.0, 0.0), size: p.size }).collect();
        let a = splat_basic(&pts, &g);
        let b = splat_basic(&shifted, &g);
        for k1 in 0..9 {
            for k2 in 0..10 {
                for k3 in 0..10 {
                    assert_eq!(a.get(k1, k2, k3), b.get(k1 + 1, k2, k3));
                }
            }
        }
    }

    #[test]
    fn fast_error_shrinks_with_resolution() {
        // Same world-space cloud and sigma at two resolutions.
        let world = [Vec3::new(0.05, -0.1, 0.02), Vec3::new(-0.07, 0.04, 0.11)];
        let sigma_world = 0.08;
        let mut errs = Vec::new();
        for d in [16usize, 32] {
            let g = GridSpec::cubic(d);
            let pos: Vec<Vec3> = world.iter().map(|w| (w + Vec3::repeat(0.5)) * d as f64).collect();
            let s = sigma_world * d as f64;
            let pts: Vec<GridPoint> = pos.iter().map(|p| iso(*p, 0.2, s)).collect();
            let basic = splat_basic(&pts, &g);
            let fast = splat_fast(&pos, &[0.2, 0.2], s, &g);
            errs.push(basic.max_abs_diff(&fast));
        }
        assert!(errs[1] < errs[0], "{errs:?}");
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_invariance(seed in 0u64..1000, rot in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GridSpec::cubic(8);
            let pts: Vec<GridPoint> = (0..7).map(|_| iso(
                Vec3::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0)),
                rng.gen_range(0.0..0.5), rng.gen_range(0.5..2.0))).collect();
            let mut perm = pts.clone();
            perm.rotate_left(rot);
            prop_assert_eq!(splat_basic(&pts, &g), splat_basic(&perm, &g));
            let pos: Vec<Vec3> = pts.iter().map(|p| p.position).collect();
            let sc: Vec<f64> = pts.iter().map(|p| p.size.scale()).collect();
            let mut ppos = pos.clone();
            let mut psc = sc.clone();
            ppos.rotate_left(rot);
            psc.rotate_left(rot);
            prop_assert_eq!(splat_fast(&pos, &sc, 1.2, &g), splat_fast(&ppos, &psc, 1.2, &g));
        }

        #[test]
        fn adding_a_point_never_decreases_density(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| GridGaussian::new(
                Vec3::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0)),
                rng.gen_range(0.0..1.0), &(Mat3::identity() * rng.gen_range(0.3..3.0)));
            let base: Vec<GridGaussian> = (0..5).map(|_| mk(&mut rng)).collect();
            let mut more = base.clone();
            more.push(mk(&mut rng));
            let a = density_basic(&base, [6, 6, 6]);
            let b = density_basic(&more, [6, 6, 6]);
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!(y >= x);
            }
        }
    }
}
