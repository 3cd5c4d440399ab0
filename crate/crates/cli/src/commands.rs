use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffsplat::diff::{check_render_gradients, sample_instance, InstanceSpec, ParamGroup};
use diffsplat::fit::{fit_views, FitConfig, View, ViewSet};
use diffsplat::io::{self, CameraFile, Manifest, ManifestView, PlyDefaults};
use diffsplat::metrics::{
    canonical_alignment, chamfer, chamfer_normalized_x100, icp_multistart, pose_angle, pose_metrics, RigidTransform,
};
use diffsplat::{CameraModel, Error, GridSpec, Modality, PointCloud, Pose, RenderOptions, SplatPath, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{AlignArgs, BenchArgs, CameraArg, Command, EvalArgs, FitArgs, GradcheckArgs, RenderArgs, SynthArgs};

pub enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Render(a) => render(a),
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Align(a) => align(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
    }
}

fn grid_of(d: usize) -> std::result::Result<GridSpec, Failure> {
    if d == 0 {
        return Err(Failure::Usage("--grid must be at least 1".into()));
    }
    Ok(GridSpec::cubic(d))
}

fn camera_of(c: CameraArg) -> CameraModel {
    match c {
        CameraArg::Ortho => CameraModel::Orthographic,
        CameraArg::Persp => CameraModel::perspective(),
    }
}

fn ply_defaults(sigma: f64) -> std::result::Result<PlyDefaults, Failure> {
    if !(sigma > 0.0) {
        return Err(Failure::Usage("--sigma must be positive".into()));
    }
    Ok(PlyDefaults { sigma, ..Default::default() })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn render(a: RenderArgs) -> Outcome {
    let cloud = io::read_ply(&a.cloud, &ply_defaults(a.sigma)?)?;
    let cam = io::read_camera(&a.camera)?;
    let grid = grid_of(a.grid)?;
    let opts = RenderOptions::new(a.modality.into(), a.path.into());
    let t = Instant::now();
    let img = diffsplat::render(&cloud, &cam.pose(), &cam.model(), &grid, &opts, None)?;
    eprintln!("rendered {} points in {:.3} ms", cloud.len(), t.elapsed().as_secs_f64() * 1e3);
    io::write_image(&a.out, &img)?;
    Ok(())
}

fn parse_range(s: &str, flag: &str) -> std::result::Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("{flag} expects 'lo,hi', got '{s}'"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn synth(a: SynthArgs) -> Outcome {
    if a.views == 0 {
        return Err(Failure::Usage("--views must be at least 1".into()));
    }
    let elev = parse_range(&a.elev_range, "--elev-range")?;
    let azim = parse_range(&a.azim_range, "--azim-range")?;
    let cloud = io::read_ply(&a.cloud, &ply_defaults(a.sigma)?)?;
    let grid = grid_of(a.grid)?;
    let camera = camera_of(a.camera);
    let modality: Modality = a.modality.into();
    let opts = RenderOptions::new(modality, a.path.into());
    let translation = match camera {
        CameraModel::Orthographic => Vec3::zeros(),
        CameraModel::Perspective { .. } => Vec3::new(0.0, 0.0, a.distance),
    };
    let ext = if modality == Modality::Depth { "pfm" } else { "png" };
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut views = Vec::with_capacity(a.views);
    for i in 0..a.views {
        let az = sample_range(&mut rng, azim);
        let el = sample_range(&mut rng, elev);
        let pose = Pose::orbit(az, el, translation);
        let img = diffsplat::render(&cloud, &pose, &camera, &grid, &opts, None)?;
        let view = ManifestView {
            image: format!("view_{i:03}.{ext}"),
            camera: format!("view_{i:03}.json"),
            azimuth_deg: az,
            elevation_deg: el,
        };
        io::write_image(&a.out.join(&view.image), &img)?;
        io::write_camera(&a.out.join(&view.camera), &CameraFile::new(&pose, &camera))?;
        views.push(view);
    }
    let manifest = Manifest {
        format_version: io::FORMAT_VERSION,
        modality,
        grid: grid.into(),
        camera: camera.into(),
        seed: a.seed,
        views,
    };
    io::write_manifest(&a.out, &manifest)?;
    Ok(())
}

fn pose_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("pose_{i:03}.json"))
}

fn quat_json(q: &diffsplat::Quaternion) -> Value {
    json!(q.to_array())
}

fn fit(a: FitArgs) -> Outcome {
    let loaded = io::read_views(&a.views)?;
    let mut cfg = match &a.config {
        Some(p) => io::read_fit_config(p)?,
        None => FitConfig::default(),
    };
    cfg.supervised |= a.supervised;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let camera: CameraModel = loaded.manifest.camera.into();
    let views = ViewSet {
        views: loaded
            .images
            .into_iter()
            .zip(&loaded.cameras)
            .map(|(target, c)| View { target, pose: cfg.supervised.then(|| c.pose()) })
            .collect(),
        modality: loaded.manifest.modality,
        camera,
        grid: loaded.manifest.grid()?,
    };
    fs::create_dir_all(&a.out)?;
    let t = Instant::now();
    let result = match fit_views(&views, &cfg) {
        Ok(r) => r,
        Err(Error::NonFiniteLoss { step, state }) => {
            let dump = a.out.join(format!("state_step{step}.json"));
            fs::write(&dump, io::cloud_to_json(&state))?;
            return Err(Failure::Domain(format!(
                "non-finite loss at step {step}; state written to {}",
                dump.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    io::write_ply(&a.out.join("cloud.ply"), &result.cloud)?;
    for (i, pose) in result.poses.iter().enumerate() {
        io::write_camera(&pose_file(&a.out, i), &CameraFile::new(pose, &camera))?;
    }
    fs::write(a.out.join("loss.csv"), result.loss_csv())?;
    fs::write(a.out.join("config.json"), io::fit_config_to_json(&cfg))?;
    if !cfg.supervised {
        let per_view: Vec<Value> = result
            .candidates
            .iter()
            .zip(&result.students)
            .map(|(c, s)| json!({"candidates": c.iter().map(|p| quat_json(&p.rotation)).collect::<Vec<_>>(), "student": quat_json(s)}))
            .collect();
        let text = pretty(&json!({"format_version": io::FORMAT_VERSION, "views": per_view}));
        fs::write(a.out.join("candidates.json"), text)?;
    }
    if let Some(last) = result.history.last() {
        eprintln!("fit {} steps in {:.1} s, final loss {:.6}", cfg.steps, t.elapsed().as_secs_f64(), last.loss);
    }
    Ok(())
}

fn transform_json(t: &RigidTransform) -> Value {
    json!({
        "rotation": quat_json(&t.rotation),
        "translation": [t.translation.x, t.translation.y, t.translation.z],
        "scale": t.scale,
    })
}

const ICP_ITERS: usize = 50;
const ICP_TOL: f64 = 1e-10;

fn eval(a: EvalArgs) -> Outcome {
    let defaults = PlyDefaults::default();
    let pred = io::read_ply(&a.pred, &defaults)?;
    let gt = io::read_ply(&a.gt, &defaults)?;
    let mut report = json!({"format_version": io::FORMAT_VERSION});
    let alignment = if a.align {
        let al = canonical_alignment(&pred.positions, &gt.positions, a.mirror, ICP_ITERS, ICP_TOL)?;
        let mut t = transform_json(&al.transform);
        t["mirrored"] = json!(al.mirrored);
        t["rms"] = json!(al.rms);
        report["alignment"] = t;
        Some(al)
    } else {
        None
    };
    let positions = match &alignment {
        Some(al) => al.apply(&pred.positions),
        None => pred.positions.clone(),
    };
    let raw = chamfer(&positions, &gt.positions)?;
    let norm = chamfer_normalized_x100(&positions, &gt.positions)?;
    report["chamfer"] = json!({
        "precision": raw.precision,
        "coverage": raw.coverage,
        "total": raw.total,
        "total_x100_normalized": norm.total,
    });
    if let (Some(pose_dir), Some(views_dir)) = (&a.pred_poses, &a.gt_views) {
        let manifest = io::read_manifest(views_dir)?;
        let mut errors = Vec::with_capacity(manifest.views.len());
        for (i, v) in manifest.views.iter().enumerate() {
            let truth = io::read_camera(&views_dir.join(&v.camera))?.pose().rotation;
            let fitted = io::read_camera(&pose_file(pose_dir, i))?.pose().rotation;
            let fitted = match &alignment {
                Some(al) => al.pose_in_target_frame(&fitted),
                None => fitted,
            };
            errors.push(pose_angle(&fitted, &truth)?);
        }
        let pm = pose_metrics(&errors)?;
        report["pose"] =
            json!({"accuracy_30": pm.accuracy_30, "median_deg": pm.median_deg, "per_sample": pm.per_sample});
    }
    emit(a.out.as_deref(), &pretty(&report))
}

fn align(a: AlignArgs) -> Outcome {
    let defaults = PlyDefaults::default();
    let src = io::read_ply(&a.src, &defaults)?;
    let dst = io::read_ply(&a.dst, &defaults)?;
    let mut out = if a.mirror {
        let al = canonical_alignment(&src.positions, &dst.positions, true, a.max_iters, a.tol)?;
        let mut v = transform_json(&al.transform);
        v["mirrored"] = json!(al.mirrored);
        v["rms"] = json!(al.rms);
        v
    } else {
        let r = icp_multistart(&src.positions, &dst.positions, a.max_iters, a.tol, a.scale)?;
        let mut v = transform_json(&r.transform);
        v["mirrored"] = json!(false);
        v["rms"] = json!(r.rms);
        v["iterations"] = json!(r.iterations);
        v["rms_trace"] = json!(r.trace);
        v
    };
    out["format_version"] = json!(io::FORMAT_VERSION);
    emit(a.out.as_deref(), &pretty(&out))
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if a.instances == 0 || a.points == 0 {
        return Err(Failure::Usage("--instances and --points must be at least 1".into()));
    }
    let opts = RenderOptions::new(a.modality.into(), a.path.into());
    let mut spec = InstanceSpec::new(opts, camera_of(a.camera));
    spec.n_points = a.points;
    spec.grid = grid_of(a.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst: Vec<Option<(f64, usize)>> = vec![None; ParamGroup::ALL.len()];
    for _ in 0..a.instances {
        let inst = sample_instance(&mut rng, &spec)?;
        let reports =
            check_render_gradients(&inst.cloud, &inst.pose, &spec.camera, &spec.grid, &opts, &inst.cotangent, a.tol)?;
        for r in reports {
            let slot = ParamGroup::ALL.iter().position(|g| *g == r.group).expect("known group");
            let e = r.report.max_rel_err;
            worst[slot] = Some(match worst[slot] {
                Some((m, c)) => (if e > m || e.is_nan() { e } else { m }, c + 1),
                None => (e, 1),
            });
        }
    }
    let mut groups = Vec::new();
    let mut failed = Vec::new();
    for (g, w) in ParamGroup::ALL.iter().zip(&worst) {
        if let Some((err, count)) = w {
            let ok = *err <= a.tol;
            if !ok {
                failed.push(g.name());
            }
            groups.push(json!({"group": g.name(), "max_rel_err": err, "instances": count, "passed": ok}));
        }
    }
    let report = json!({
        "format_version": io::FORMAT_VERSION,
        "modality": Modality::from(a.modality),
        "path": SplatPath::from(a.path),
        "camera": io::CameraSpec::from(camera_of(a.camera)),
        "grid": a.grid,
        "points": a.points,
        "instances": a.instances,
        "seed": a.seed,
        "tol": a.tol,
        "passed": failed.is_empty(),
        "groups": groups,
    });
    emit(a.out.as_deref(), &pretty(&report))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Domain(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

/// Rough working-set size of one render: the float volumes it allocates
/// plus per-point records.
fn memory_estimate(path: SplatPath, n: usize, v: usize) -> usize {
    let volumes = match path {
        SplatPath::Basic => 3,
        SplatPath::Fast => 4,
    };
    volumes * v * 8 + n * 256
}

fn bench(a: BenchArgs) -> Outcome {
    if a.repeats == 0 || a.n.is_empty() || a.path.is_empty() {
        return Err(Failure::Usage("--repeats, --n and --path must be non-empty".into()));
    }
    let grid = grid_of(a.grid)?;
    let sigma = 1.5 / a.grid as f64;
    let pose = Pose::default();
    let mut csv = String::from("path,n,v,wall_ms,peak_bytes_estimate\n");
    for &n in &a.n {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let positions: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-0.35..0.35), rng.gen_range(-0.35..0.35), rng.gen_range(-0.35..0.35)))
            .collect();
        let cloud = PointCloud::isotropic(positions, 0.5, sigma);
        for &p in &a.path {
            let path: SplatPath = p.into();
            let opts = RenderOptions::new(Modality::Silhouette, path);
            let mut best = f64::INFINITY;
            for _ in 0..a.repeats {
                let t = Instant::now();
                let img = diffsplat::render(&cloud, &pose, &CameraModel::Orthographic, &grid, &opts, None)?;
                std::hint::black_box(&img);
                best = best.min(t.elapsed().as_secs_f64() * 1e3);
            }
            let name = match path {
                SplatPath::Basic => "basic",
                SplatPath::Fast => "fast",
            };
            csv.push_str(&format!("{name},{n},{},{best:.3},{}\n", grid.len(), memory_estimate(path, n, grid.len())));
        }
    }
    emit(a.out.as_deref(), &csv)
}
