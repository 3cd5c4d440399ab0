//! Geometric primitives: quaternions, poses, camera models, grid conventions
//! and covariance transport.
//!
//! Conventions used throughout the crate:
//! - quaternions are stored as `(w, x, y, z)` and multiplied with the Hamilton
//!   convention; frames are right-handed and positive angles are
//!   counterclockwise;
//! - a [`Pose`] maps world coordinates to camera coordinates,
//!   `x_cam = R(q) x + t`;
//! - the camera looks along `+z`; after the camera transform, axis 3 of the
//!   grid is depth and grid index 0 is nearest to the camera;
//! - grid index `k` along axis `i` sits at world coordinate
//!   `(k / D_i - 0.5) * extent_i`, so continuous grid coordinates are
//!   `g_i = (x_i / extent_i + 0.5) * D_i`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n * s;
        Self::new(c, a.x, a.y, a.z)
    }

    /// Unit quaternion of a proper rotation matrix.
    pub fn from_rotation_matrix(m: &Mat3) -> Self {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        let q = uq.quaternion();
        Self::new(q.w, q.i, q.j, q.k)
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns `self / |self|`. A zero quaternion yields NaNs; callers that
    /// accept user input should go through [`Quaternion::try_normalize`].
    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn try_normalize(&self) -> Option<Self> {
        let n = self.norm();
        (n.is_finite() && n > 0.0).then(|| Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn inverse(&self) -> Self {
        let n2 = self.norm_squared();
        let c = self.conjugate();
        Self::new(c.w / n2, c.x / n2, c.y / n2, c.z / n2)
    }

    /// Rotation matrix of `self / |self|`.
    ///
    /// The entries are quadratic in the components, so `q` and `-q` give
    /// bit-identical matrices.
    pub fn rotation_matrix(&self) -> Mat3 {
        let q = self.normalize();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotates `v` by the rotation this quaternion represents.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation_matrix() * v
    }

    /// Pulls a gradient with respect to `rotation_matrix()` back onto the raw
    /// (not necessarily unit) quaternion components `(w, x, y, z)`.
    ///
    /// Normalization is part of the differentiated map, so the result is
    /// orthogonal to `self`.
    pub fn rotation_matrix_vjp(&self, grad: &Mat3) -> [f64; 4] {
        let n = self.norm();
        let q = self.normalize();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        let g = |r: usize, c: usize| grad[(r, c)];
        let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
        let dx = 2.0
            * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
                - 2.0 * x * g(2, 2));
        let dy = 2.0
            * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
                - 2.0 * y * g(2, 2));
        let dz = 2.0
            * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
                + y * g(1, 2)
                + x * g(2, 0)
                + y * g(2, 1));
        // d(q/|q|)/dq = (I - n n^T) / |q|
        let dn = [dw, dx, dy, dz];
        let qa = q.to_array();
        let proj: f64 = dn.iter().zip(qa.iter()).map(|(a, b)| a * b).sum();
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (dn[i] - proj * qa[i]) / n;
        }
        out
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self { rotation: Quaternion::IDENTITY, translation: Vec3::zeros() }
    }
}

impl Pose {
    pub fn new(rotation: Quaternion, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// Camera orbiting the origin. The world up axis is `x` (image rows);
    /// azimuth turns the object about it, elevation tilts the camera about
    /// its lateral axis. Angles in degrees.
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, translation: Vec3) -> Self {
        let az = Quaternion::from_axis_angle(&Vec3::x(), azimuth_deg.to_radians());
        let el = Quaternion::from_axis_angle(&Vec3::y(), elevation_deg.to_radians());
        Self::new(el * az, translation)
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation.rotate(x) + self.translation
    }
}

/// Camera intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CameraModel {
    Orthographic,
    Perspective { focal: f64, near: f64, far: f64 },
}

impl CameraModel {
    pub const DEFAULT_FOCAL: f64 = 1.875;
    pub const DEFAULT_NEAR: f64 = 1.0;
    pub const DEFAULT_FAR: f64 = 3.0;

    pub fn perspective() -> Self {
        CameraModel::Perspective { focal: Self::DEFAULT_FOCAL, near: Self::DEFAULT_NEAR, far: Self::DEFAULT_FAR }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            CameraModel::Orthographic => Ok(()),
            CameraModel::Perspective { focal, near, far } => {
                if !(focal > 0.0 && focal.is_finite()) {
                    return Err("camera.focal: must be positive".into());
                }
                if !(near > 0.0 && near.is_finite()) {
                    return Err("camera.near: must be positive".into());
                }
                if !(far > near && far.is_finite()) {
                    return Err("camera.far: must exceed camera.near".into());
                }
                Ok(())
            }
        }
    }

    /// Camera-space depth at which perspective lateral scales are evaluated
    /// when a single shared kernel is needed.
    pub fn reference_depth(&self) -> Option<f64> {
        match *self {
            CameraModel::Orthographic => None,
            CameraModel::Perspective { near, far, .. } => Some(0.5 * (near + far)),
        }
    }

    /// Maps a camera-space point into continuous grid coordinates and returns
    /// the Jacobian `d grid / d camera`. `None` for perspective points on or
    /// behind the camera plane.
    pub fn to_grid(&self, grid: &GridSpec, p: &Vec3) -> Option<(Vec3, Mat3)> {
        let s = grid.cells_per_unit();
        match *self {
            CameraModel::Orthographic => {
                let g = Vec3::new(
                    (p.x / grid.extent[0] + 0.5) * grid.dims[0] as f64,
                    (p.y / grid.extent[1] + 0.5) * grid.dims[1] as f64,
                    (p.z / grid.extent[2] + 0.5) * grid.dims[2] as f64,
                );
                Some((g, Mat3::from_diagonal(&s)))
            }
            CameraModel::Perspective { focal, near, far } => {
                if p.z <= 0.0 {
                    return None;
                }
                let inv_z = 1.0 / p.z;
                let u = p.x * focal * inv_z;
                let v = p.y * focal * inv_z;
                let depth_scale = grid.dims[2] as f64 / (far - near);
                let g = Vec3::new(
                    (u / grid.extent[0] + 0.5) * grid.dims[0] as f64,
                    (v / grid.extent[1] + 0.5) * grid.dims[1] as f64,
                    (p.z - near) * depth_scale,
                );
                let a = s.x * focal * inv_z;
                let b = s.y * focal * inv_z;
                let jac = Mat3::new(a, 0.0, -a * p.x * inv_z, 0.0, b, -b * p.y * inv_z, 0.0, 0.0, depth_scale);
                Some((g, jac))
            }
        }
    }

    /// Gradient of `<G, J(p)>` with respect to the camera-space point, where
    /// `J` is the Jacobian returned by [`CameraModel::to_grid`].
    pub(crate) fn jacobian_vjp(&self, grid: &GridSpec, p: &Vec3, g: &Mat3) -> Vec3 {
        match *self {
            CameraModel::Orthographic => Vec3::zeros(),
            CameraModel::Perspective { focal, .. } => {
                let s = grid.cells_per_unit();
                let inv_z = 1.0 / p.z;
                let a = s.x * focal;
                let b = s.y * focal;
                let iz2 = inv_z * inv_z;
                let iz3 = iz2 * inv_z;
                Vec3::new(
                    -a * iz2 * g[(0, 2)],
                    -b * iz2 * g[(1, 2)],
                    -a * iz2 * g[(0, 0)] + 2.0 * a * p.x * iz3 * g[(0, 2)] - b * iz2 * g[(1, 1)]
                        + 2.0 * b * p.y * iz3 * g[(1, 2)],
                )
            }
        }
    }
}

/// Discretization of the canonical camera-aligned cube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub extent: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], extent: [f64; 3]) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "grid dimensions must be positive");
        assert!(extent.iter().all(|&e| e > 0.0), "grid extent must be positive");
        Self { dims, extent }
    }

    /// `d`³ cells over the unit cube.
    pub fn cubic(d: usize) -> Self {
        Self::new([d, d, d], [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells_per_unit(&self) -> Vec3 {
        Vec3::new(
            self.dims[0] as f64 / self.extent[0],
            self.dims[1] as f64 / self.extent[1],
            self.dims[2] as f64 / self.extent[2],
        )
    }

    /// World coordinate of index `k` along `axis`.
    pub fn cell_coordinate(&self, axis: usize, k: usize) -> f64 {
        (k as f64 / self.dims[axis] as f64 - 0.5) * self.extent[axis]
    }

    /// Inverse of the orthographic grid map.
    pub fn grid_to_world(&self, g: &Vec3) -> Vec3 {
        Vec3::new(
            (g.x / self.dims[0] as f64 - 0.5) * self.extent[0],
            (g.y / self.dims[1] as f64 - 0.5) * self.extent[1],
            (g.z / self.dims[2] as f64 - 0.5) * self.extent[2],
        )
    }
}

/// Per-point size parameters: amplitude `scale` plus the Gaussian shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeParams {
    Isotropic {
        scale: f64,
        sigma: f64,
    },
    /// `diag` holds standard deviations along the principal axes given by
    /// `orientation`: `Σ = R diag(diag²) Rᵀ`.
    FullCov {
        scale: f64,
        diag: [f64; 3],
        orientation: Quaternion,
    },
}

impl SizeParams {
    pub fn scale(&self) -> f64 {
        match *self {
            SizeParams::Isotropic { scale, .. } | SizeParams::FullCov { scale, .. } => scale,
        }
    }

    pub fn covariance(&self) -> Mat3 {
        match *self {
            SizeParams::Isotropic { sigma, .. } => Mat3::identity() * (sigma * sigma),
            SizeParams::FullCov { diag, orientation, .. } => {
                let r = orientation.rotation_matrix();
                let d = Mat3::from_diagonal(&Vec3::new(diag[0] * diag[0], diag[1] * diag[1], diag[2] * diag[2]));
                r * d * r.transpose()
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            SizeParams::Isotropic { scale, sigma } => {
                if !(scale >= 0.0) {
                    return Err(format!("scale must be nonnegative, got {scale}"));
                }
                if !(sigma > 0.0) {
                    return Err(format!("sigma must be positive, got {sigma}"));
                }
            }
            SizeParams::FullCov { scale, diag, orientation } => {
                if !(scale >= 0.0) {
                    return Err(format!("scale must be nonnegative, got {scale}"));
                }
                if diag.iter().any(|d| !(*d > 0.0)) {
                    return Err(format!("covariance diagonal must be positive, got {diag:?}"));
                }
                if orientation.try_normalize().is_none() {
                    return Err("covariance orientation must be a nonzero quaternion".into());
                }
            }
        }
        Ok(())
    }

    /// Builds size parameters from an arbitrary covariance, re-symmetrizing
    /// and clamping eigenvalues to `EIGEN_FLOOR`.
    pub fn from_covariance(scale: f64, cov: &Mat3) -> Self {
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut v = eig.eigenvectors;
        if v.determinant() < 0.0 {
            v.set_column(2, &(-v.column(2)));
        }
        let diag = [0, 1, 2].map(|i| eig.eigenvalues[i].max(EIGEN_FLOOR).sqrt());
        SizeParams::FullCov { scale, diag, orientation: Quaternion::from_rotation_matrix(&v) }
    }
}

const EIGEN_FLOOR: f64 = 1e-12;

/// Transports a point's size through the pose rotation followed by the local
/// Jacobian of the grid map: `Σ' = J R Σ Rᵀ Jᵀ`.
///
/// Isotropic input stays isotropic when the combined map is a scaled rotation.
pub fn transform_covariance(size: &SizeParams, pose: &Pose, local_jacobian: &Mat3) -> SizeParams {
    let j = local_jacobian * pose.rotation.rotation_matrix();
    if let SizeParams::Isotropic { scale, sigma } = *size {
        let jjt = j * j.transpose();
        let s2 = jjt.trace() / 3.0;
        let off = (jjt - Mat3::identity() * s2).abs().max();
        if off <= 1e-12 * s2 {
            return SizeParams::Isotropic { scale, sigma: sigma * s2.sqrt() };
        }
    }
    let cov = j * size.covariance() * j.transpose();
    SizeParams::from_covariance(size.scale(), &cov)
}

/// A point expressed in continuous grid coordinates with its grid-space size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub position: Vec3,
    pub size: SizeParams,
}

/// Maps world points and sizes into grid coordinates for the given view.
/// Entries are `None` for perspective points behind the camera.
pub fn camera_transform(
    positions: &[Vec3],
    sizes: &[SizeParams],
    pose: &Pose,
    cam: &CameraModel,
    grid: &GridSpec,
) -> Vec<Option<GridPoint>> {
    assert_eq!(positions.len(), sizes.len(), "positions and sizes differ in length");
    let r = pose.rotation.rotation_matrix();
    positions
        .iter()
        .zip(sizes)
        .map(|(x, s)| {
            let xc = r * x + pose.translation;
            cam.to_grid(grid, &xc).map(|(g, jac)| GridPoint { position: g, size: transform_covariance(s, pose, &jac) })
        })
        .collect()
}
