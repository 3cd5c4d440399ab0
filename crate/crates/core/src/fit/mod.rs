//! Multi-view fitting: losses, schedules, the optimizer and the fitting loop.
//!
//! Shape parameters are shared by all views. In pose-free mode every view
//! owns `K` pose candidates; each step only the candidate whose render best
//! matches the target receives gradient, and a per-view student rotation is
//! distilled from that winner.

mod adam;
mod loss;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use loss::{hindsight_select, mse_loss, quat_distill_loss};
pub use schedule::{dropout_mask, schedule_eval, ScheduleConfig, Schedules};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::diff::backward;
use crate::error::{Error, Result};
use crate::geom::{CameraModel, GridSpec, Pose, Quaternion, SizeParams, Vec3};
use crate::render::{forward, Modality, Projection, RenderOptions, SplatPath};
use crate::splat::DEFAULT_TRUNCATION;

/// How the per-point Gaussian width is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// Shared width following the linear schedule.
    Schedule,
    /// Per-point learned log-width (basic path only).
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Isotropic,
    /// Learned per-point axis lengths and orientation (basic path only).
    Full,
}

/// Stream ids of the seeded random generators.
const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_VIEWS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_points: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    /// Learning rate for pose candidates and students; `lr` when absent.
    pub pose_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub path: SplatPath,
    pub supervised: bool,
    pub seed: u64,
    pub schedules: ScheduleConfig,
    pub sigma_mode: SigmaMode,
    pub covariance: CovarianceMode,
    /// Amplitude of every point at initialization.
    pub point_scale: f64,
    pub learn_scales: bool,
    /// Initial positions are uniform in a cube of this half-width.
    pub init_radius: f64,
    /// Camera translation used for every pose candidate in pose-free mode.
    pub translation: [f64; 3],
    /// Candidate azimuths in degrees about the up axis; evenly spread when absent.
    pub candidate_azimuths: Option<Vec<f64>>,
    /// Standard deviation, in degrees, of the random rotation composed with
    /// each initial candidate.
    pub init_jitter_deg: f64,
    pub distill_weight: f64,
    /// Flip the teacher's sign when it points away from the student, so `q`
    /// and `-q` count as the same rotation.
    pub canonicalize_teacher_sign: bool,
    /// Random subset of views used per step; all views when absent.
    pub views_per_step: Option<usize>,
    pub background: [f64; 3],
    pub truncation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            n_points: 200,
            k: 4,
            steps: 1000,
            lr: adam.lr,
            pose_lr: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            path: SplatPath::Fast,
            supervised: false,
            seed: 0,
            schedules: ScheduleConfig::default(),
            sigma_mode: SigmaMode::Schedule,
            covariance: CovarianceMode::Isotropic,
            point_scale: 0.5,
            learn_scales: false,
            init_radius: 0.25,
            translation: [0.0; 3],
            candidate_azimuths: None,
            init_jitter_deg: 10.0,
            distill_weight: 1.0,
            canonicalize_teacher_sign: true,
            views_per_step: None,
            background: [0.0; 3],
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.lr > 0.0) || self.pose_lr.is_some_and(|l| !(l > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps >= 0.0) {
            return bad("adam parameters out of range".into());
        }
        if !(self.point_scale > 0.0 && self.point_scale <= 1.0) {
            return bad(format!("point_scale must lie in (0, 1], got {}", self.point_scale));
        }
        let s = &self.schedules;
        if !(s.sigma_start > 0.0 && s.sigma_end > 0.0) {
            return bad("schedule widths must be positive".into());
        }
        if ![s.dropout_start, s.dropout_end].iter().all(|d| (0.0..=1.0).contains(d)) {
            return bad("dropout fractions must lie in [0, 1]".into());
        }
        if self.path == SplatPath::Fast
            && (self.sigma_mode == SigmaMode::Learned || self.covariance == CovarianceMode::Full)
        {
            return bad("learned widths and full covariances need the basic path".into());
        }
        if let Some(a) = &self.candidate_azimuths {
            if a.len() != self.k {
                return bad(format!("{} candidate azimuths for K = {}", a.len(), self.k));
            }
        }
        if self.views_per_step == Some(0) {
            return bad("views_per_step must be at least 1".into());
        }
        if !(self.truncation > 0.0) {
            return bad("truncation must be positive".into());
        }
        Ok(())
    }
}

/// One target image and, for supervised fitting, its camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub target: Projection,
    pub pose: Option<Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub views: Vec<View>,
    pub modality: Modality,
    pub camera: CameraModel,
    pub grid: GridSpec,
}

impl ViewSet {
    fn validate(&self, supervised: bool) -> Result<()> {
        let need = if supervised { 1 } else { 2 };
        if self.views.len() < need {
            return Err(Error::InvalidInput(format!("need at least {need} views, got {}", self.views.len())));
        }
        let dims = [self.grid.dims[0], self.grid.dims[1]];
        for (i, v) in self.views.iter().enumerate() {
            if v.target.dims != dims || v.target.channels != self.modality.channels() {
                return Err(Error::ShapeMismatch(format!(
                    "view {i} is {:?}x{}, expected {dims:?}x{}",
                    v.target.dims,
                    v.target.channels,
                    self.modality.channels()
                )));
            }
            if supervised && v.pose.is_none() {
                return Err(Error::InvalidInput(format!("view {i} has no pose for supervised fitting")));
            }
        }
        self.camera.validate().map_err(Error::InvalidInput)
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Sum over the step's views of the hindsight (or supervised) loss.
    pub loss: f64,
    pub views: Vec<usize>,
    /// Selected candidate per view of this step; empty when supervised.
    pub selected: Vec<usize>,
    /// All candidate losses per view of this step; one entry when supervised.
    pub candidate_losses: Vec<Vec<f64>>,
    pub student_loss: f64,
    pub dropout: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub cloud: PointCloud,
    /// Ground-truth poses when supervised, otherwise each view's best candidate
    /// scored without dropout after the last step.
    pub poses: Vec<Pose>,
    pub candidates: Vec<Vec<Pose>>,
    pub students: Vec<Quaternion>,
    pub history: Vec<StepRecord>,
}

impl FitResult {
    /// Loss trace as CSV; selected candidates of a step are `;`-separated.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,hindsight_loss,selected_candidate,student_loss,dropout,sigma\n");
        for r in &self.history {
            let sel: Vec<String> = r.selected.iter().map(|k| k.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.loss,
                sel.join(";"),
                r.student_loss,
                r.dropout,
                r.sigma
            ));
        }
        s
    }
}

/// Per-point parameter block: raw position (3), scale logit, log-width,
/// log axis lengths (3), orientation (4), color (3).
const BLOCK: usize = 15;
const P_POS: usize = 0;
const P_SCALE: usize = 3;
const P_SIGMA: usize = 4;
const P_DIAG: usize = 5;
const P_ORIENT: usize = 8;
const P_COLOR: usize = 12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn random_rotation(rng: &mut ChaCha8Rng, std_deg: f64) -> Quaternion {
    if std_deg == 0.0 {
        return Quaternion::IDENTITY;
    }
    let v = Vec3::new(
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
    ) * std_deg.to_radians();
    match v.try_normalize(0.0) {
        Some(axis) => Quaternion::from_axis_angle(&axis, v.norm()),
        None => Quaternion::IDENTITY,
    }
}

struct Model<'a> {
    cfg: &'a FitConfig,
    half: Vec3,
    color: bool,
}

impl Model<'_> {
    fn cloud(&self, theta: &[f64], sigma: f64) -> PointCloud {
        let n = theta.len() / BLOCK;
        let mut positions = Vec::with_capacity(n);
        let mut sizes = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for b in theta.chunks(BLOCK) {
            positions.push(Vec3::new(
                self.half.x * b[P_POS].tanh(),
                self.half.y * b[P_POS + 1].tanh(),
                self.half.z * b[P_POS + 2].tanh(),
            ));
            let scale = if self.cfg.learn_scales { sigmoid(b[P_SCALE]) } else { self.cfg.point_scale };
            sizes.push(match (self.cfg.covariance, self.cfg.sigma_mode) {
                (CovarianceMode::Full, _) => SizeParams::FullCov {
                    scale,
                    diag: [b[P_DIAG].exp(), b[P_DIAG + 1].exp(), b[P_DIAG + 2].exp()],
                    orientation: Quaternion::new(b[P_ORIENT], b[P_ORIENT + 1], b[P_ORIENT + 2], b[P_ORIENT + 3]),
                },
                (CovarianceMode::Isotropic, SigmaMode::Learned) => {
                    SizeParams::Isotropic { scale, sigma: b[P_SIGMA].exp() }
                }
                (CovarianceMode::Isotropic, SigmaMode::Schedule) => SizeParams::Isotropic { scale, sigma },
            });
            colors.push([b[P_COLOR], b[P_COLOR + 1], b[P_COLOR + 2]]);
        }
        let cloud = PointCloud::new(positions, sizes);
        if self.color {
            cloud.with_colors(colors)
        } else {
            cloud
        }
    }

    /// Adds the render gradients, pulled back through the parametrization, to `out`.
    fn accumulate(&self, theta: &[f64], g: &crate::diff::RenderGradients, out: &mut [f64]) {
        for (i, (b, o)) in theta.chunks(BLOCK).zip(out.chunks_mut(BLOCK)).enumerate() {
            for a in 0..3 {
                let t = b[P_POS + a].tanh();
                o[P_POS + a] += g.d_positions[i][a] * self.half[a] * (1.0 - t * t);
            }
            if self.cfg.learn_scales {
                let s = sigmoid(b[P_SCALE]);
                o[P_SCALE] += g.d_scales[i] * s * (1.0 - s);
            }
            match (self.cfg.covariance, self.cfg.sigma_mode) {
                (CovarianceMode::Full, _) => {
                    for a in 0..3 {
                        o[P_DIAG + a] += g.d_cov_diag[i][a] * b[P_DIAG + a].exp();
                    }
                    for a in 0..4 {
                        o[P_ORIENT + a] += g.d_cov_orientation[i][a];
                    }
                }
                (CovarianceMode::Isotropic, SigmaMode::Learned) => o[P_SIGMA] += g.d_sigmas[i] * b[P_SIGMA].exp(),
                (CovarianceMode::Isotropic, SigmaMode::Schedule) => {}
            }
            if self.color {
                for c in 0..3 {
                    o[P_COLOR + c] += g.d_colors[i][c];
                }
            }
        }
    }
}

fn normalize_quaternions(theta: &mut [f64], chunk: usize, offset: usize) {
    for b in theta.chunks_mut(chunk) {
        let q = Quaternion::new(b[offset], b[offset + 1], b[offset + 2], b[offset + 3]);
        let q = q.try_normalize().unwrap_or(Quaternion::IDENTITY);
        b[offset..offset + 4].copy_from_slice(&q.to_array());
    }
}

fn quat_at(v: &[f64], i: usize) -> Quaternion {
    Quaternion::new(v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i + 3])
}

/// Initial pose candidates of one view: evenly spread (or configured)
/// azimuths about the up axis, each composed with a random jitter.
fn initial_candidates(cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Vec<Quaternion> {
    (0..cfg.k)
        .map(|k| {
            let az = match &cfg.candidate_azimuths {
                Some(a) => a[k],
                None => 360.0 * k as f64 / cfg.k as f64,
            };
            let base = Pose::orbit(az, 0.0, Vec3::zeros()).rotation;
            (random_rotation(rng, cfg.init_jitter_deg) * base).normalize()
        })
        .collect()
}

/// Fits a point cloud (and, unless supervised, per-view poses) to `views`.
pub fn fit_views(views: &ViewSet, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    views.validate(cfg.supervised)?;
    let grid = views.grid;
    let extent = grid.extent.iter().cloned().fold(0.0, f64::max);
    let schedules = Schedules { total_steps: cfg.steps, extent, config: cfg.schedules };
    let opts = RenderOptions {
        modality: views.modality,
        path: cfg.path,
        background: cfg.background,
        truncation: cfg.truncation,
    };
    let model = Model {
        cfg,
        half: Vec3::new(0.5 * grid.extent[0], 0.5 * grid.extent[1], 0.5 * grid.extent[2]),
        color: views.modality == Modality::Color,
    };

    let mut init = stream(cfg.seed, STREAM_INIT);
    let mut masks = stream(cfg.seed, STREAM_MASK);
    let mut view_rng = stream(cfg.seed, STREAM_VIEWS);

    let n = cfg.n_points;
    let sigma0 = schedule_eval(&schedules, 0).1;
    let mut theta = vec![0.0; n * BLOCK];
    for b in theta.chunks_mut(BLOCK) {
        for a in 0..3 {
            let p = init.gen_range(-cfg.init_radius..=cfg.init_radius);
            b[P_POS + a] = (p / model.half[a]).clamp(-0.999, 0.999).atanh();
        }
        b[P_SCALE] = if cfg.point_scale < 1.0 { logit(cfg.point_scale) } else { 10.0 };
        b[P_SIGMA] = sigma0.ln();
        for a in 0..3 {
            b[P_DIAG + a] = sigma0.ln();
        }
        let q = random_rotation(&mut init, 180.0);
        b[P_ORIENT..P_ORIENT + 4].copy_from_slice(&q.to_array());
        b[P_COLOR..P_COLOR + 3].copy_from_slice(&[0.5; 3]);
    }

    let n_views = views.views.len();
    let k = if cfg.supervised { 0 } else { cfg.k };
    // candidates (K per view) followed by one student per view
    let mut poses = Vec::with_capacity(4 * n_views * (k + 1));
    if !cfg.supervised {
        for _ in 0..n_views {
            for q in initial_candidates(cfg, &mut init) {
                poses.extend(q.to_array());
            }
        }
        for _ in 0..n_views {
            poses.extend(random_rotation(&mut init, cfg.init_jitter_deg).to_array());
        }
    }
    let student_base = n_views * k;
    let translation = Vec3::from(cfg.translation);

    let adam_cfg = AdamConfig { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let mut shape_opt = Adam::new(adam_cfg, theta.len());
    let mut pose_opt = Adam::new(AdamConfig { lr: cfg.pose_lr.unwrap_or(cfg.lr), ..adam_cfg }, poses.len());

    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (dropout, sigma) = schedule_eval(&schedules, step);
        let cloud = model.cloud(&theta, sigma);
        let active: Vec<usize> = match cfg.views_per_step {
            Some(m) if m < n_views => rand::seq::index::sample(&mut view_rng, n_views, m).into_vec(),
            _ => (0..n_views).collect(),
        };
        let view_masks: Vec<Vec<bool>> = active.iter().map(|_| dropout_mask(n, dropout, &mut masks)).collect();

        let mut g_theta = vec![0.0; theta.len()];
        let mut g_pose = vec![0.0; poses.len()];
        let mut record = StepRecord {
            step,
            loss: 0.0,
            views: active.clone(),
            selected: Vec::new(),
            candidate_losses: Vec::new(),
            student_loss: 0.0,
            dropout,
            sigma,
        };

        for (&v, mask) in active.iter().zip(&view_masks) {
            let view = &views.views[v];
            let candidate_poses: Vec<Pose> = if cfg.supervised {
                vec![view.pose.expect("validated")]
            } else {
                (0..k).map(|c| Pose::new(quat_at(&poses, v * k + c), translation)).collect()
            };
            let traces = candidate_poses
                .par_iter()
                .map(|p| forward(&cloud, p, &views.camera, &grid, &opts, Some(mask)))
                .collect::<Result<Vec<_>>>()?;
            let scored = traces.iter().map(|t| mse_loss(&t.projection, &view.target)).collect::<Result<Vec<_>>>()?;
            let losses: Vec<f64> = scored.iter().map(|s| s.0).collect();
            let diverged = || Error::NonFiniteLoss { step, state: Box::new(cloud.clone()) };
            let (best, value) = match hindsight_select(&losses) {
                Ok(sel) if sel.1.is_finite() => sel,
                Ok(_) | Err(Error::NonFiniteCandidateLoss) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            let grads = backward(&traces[best], &cloud, &candidate_poses[best], &views.camera, &grid, &scored[best].1);
            if !grads.is_finite() {
                return Err(diverged());
            }
            model.accumulate(&theta, &grads, &mut g_theta);
            record.loss += value;
            record.candidate_losses.push(losses);

            if !cfg.supervised {
                record.selected.push(best);
                let slot = v * k + best;
                for a in 0..4 {
                    g_pose[4 * slot + a] += grads.d_rotation[a];
                }
                let student = quat_at(&poses, student_base + v);
                let mut teacher = quat_at(&poses, slot);
                if cfg.canonicalize_teacher_sign && student.dot(&teacher) < 0.0 {
                    teacher = -teacher;
                }
                let (ls, gs) = quat_distill_loss(&student, &teacher)?;
                record.student_loss += ls;
                for a in 0..4 {
                    g_pose[4 * (student_base + v) + a] += cfg.distill_weight * gs[a];
                }
            }
        }

        shape_opt.step(&mut theta, &g_theta);
        if cfg.covariance == CovarianceMode::Full {
            for b in theta.chunks_mut(BLOCK) {
                let q = Quaternion::new(b[P_ORIENT], b[P_ORIENT + 1], b[P_ORIENT + 2], b[P_ORIENT + 3]);
                b[P_ORIENT..P_ORIENT + 4].copy_from_slice(&q.try_normalize().unwrap_or_default().to_array());
            }
        }
        if !poses.is_empty() {
            pose_opt.step(&mut poses, &g_pose);
            normalize_quaternions(&mut poses, 4, 0);
        }
        history.push(record);
    }

    let sigma = schedule_eval(&schedules, cfg.steps).1;
    let cloud = model.cloud(&theta, sigma);
    let candidates: Vec<Vec<Pose>> =
        (0..n_views).map(|v| (0..k).map(|c| Pose::new(quat_at(&poses, v * k + c), translation)).collect()).collect();
    let final_poses = if cfg.supervised {
        views.views.iter().map(|v| v.pose.expect("validated")).collect()
    } else {
        let mut out = Vec::with_capacity(n_views);
        for (v, cands) in candidates.iter().enumerate() {
            let losses = cands
                .par_iter()
                .map(|p| {
                    let img = forward(&cloud, p, &views.camera, &grid, &opts, None)?.projection;
                    Ok(mse_loss(&img, &views.views[v].target)?.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(cands[hindsight_select(&losses)?.0]);
        }
        out
    };
    let students = (0..if cfg.supervised { 0 } else { n_views }).map(|v| quat_at(&poses, student_base + v)).collect();
    Ok(FitResult { cloud, poses: final_poses, candidates, students, history })
}

/// Renders the views of `cloud` from `poses` with the given setup.
pub fn render_views(
    cloud: &PointCloud,
    poses: &[Pose],
    camera: &CameraModel,
    grid: &GridSpec,
    opts: &RenderOptions,
) -> Result<Vec<Projection>> {
    poses.iter().map(|p| crate::render::render(cloud, p, camera, grid, opts, None)).collect()
}
