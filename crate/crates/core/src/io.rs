//! Readers and writers: ASCII PLY clouds, PNG/PFM images, camera and
//! manifest JSON, raw volume dumps and fit configs.
//!
//! Every JSON schema carries `"format_version": 1`; binary data is
//! little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::geom::{CameraModel, GridSpec, Pose, Quaternion, SizeParams, Vec3};
use crate::render::{Modality, Projection};
use crate::splat::Volume;

pub const FORMAT_VERSION: u32 = 1;

fn label(path: &Path) -> String {
    path.display().to_string()
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: label(path), source }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(file_error(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_error(path))
}

fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(file_error(path))
}

// ---------------------------------------------------------------- PLY

/// Values used for vertex properties a PLY file does not declare.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyDefaults {
    pub sigma: f64,
    pub scale: f64,
    pub color: Rgb,
}

impl Default for PlyDefaults {
    fn default() -> Self {
        Self { sigma: 0.02, scale: 1.0, color: [1.0; 3] }
    }
}

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

const FULL_COV_PROPS: [&str; 7] = ["cov_d0", "cov_d1", "cov_d2", "cov_qw", "cov_qx", "cov_qy", "cov_qz"];

/// ASCII PLY text for `cloud`. Floats are written as 32-bit values in their
/// shortest round-trip form; colors are quantized to 8 bits.
pub fn ply_to_string(cloud: &PointCloud) -> String {
    let full = cloud.sizes.iter().any(|s| matches!(s, SizeParams::FullCov { .. }));
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment format_version {FORMAT_VERSION}");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z", "scale"] {
        let _ = writeln!(s, "property float {p}");
    }
    if full {
        for p in FULL_COV_PROPS {
            let _ = writeln!(s, "property float {p}");
        }
    } else {
        s.push_str("property float sigma\n");
    }
    if cloud.colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(s, "property uchar {p}");
        }
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let mut fields: Vec<String> =
            [p.x, p.y, p.z, cloud.sizes[i].scale()].iter().map(|v| (*v as f32).to_string()).collect();
        match (full, cloud.sizes[i]) {
            (false, SizeParams::Isotropic { sigma, .. }) => fields.push((sigma as f32).to_string()),
            (_, SizeParams::Isotropic { sigma, .. }) => {
                fields.extend([sigma, sigma, sigma, 1.0, 0.0, 0.0, 0.0].iter().map(|v| (*v as f32).to_string()))
            }
            (_, SizeParams::FullCov { diag, orientation, .. }) => {
                fields.extend(diag.iter().chain(orientation.to_array().iter()).map(|v| (*v as f32).to_string()))
            }
        }
        if let Some(c) = &cloud.colors {
            fields.extend(c[i].iter().map(|v| quantize(*v).to_string()));
        }
        s.push_str(&fields.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, ply_to_string(cloud))?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum PlyType {
    Float,
    Int,
    UChar,
}

/// Parses ASCII PLY text; `source` names the input in error messages.
pub fn parse_ply(text: &str, source: &str, defaults: &PlyDefaults) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse { path: source.to_string(), line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    if !matches!(lines.next(), Some((_, "ply"))) {
        return Err(err(1, "missing 'ply' magic".into()));
    }
    let mut vertex_count = None;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => return Err(err(n, format!("unsupported format '{other}', expected ascii 1.0"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let c: usize = count.parse().map_err(|_| err(n, format!("bad element count '{count}'")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(c);
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(err(n, "list properties are not supported on vertices".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let t = match *ty {
                        "float" | "float32" | "double" | "float64" => PlyType::Float,
                        "uchar" | "uint8" => PlyType::UChar,
                        "char" | "int8" | "short" | "int16" | "ushort" | "uint16" | "int" | "int32" | "uint"
                        | "uint32" => PlyType::Int,
                        other => return Err(err(n, format!("unknown property type '{other}'"))),
                    };
                    props.push((name.to_string(), t));
                }
            }
            ["end_header"] => {
                header_end = Some(n);
                break;
            }
            _ => return Err(err(n, format!("unexpected header line '{line}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| err(text.lines().count(), "missing end_header".into()))?;
    let count = vertex_count.ok_or_else(|| err(header_end, "no vertex element".into()))?;
    let find = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(err(header_end, "vertex element needs x, y and z".into())),
    };
    let i_scale = find("scale");
    let i_sigma = find("sigma");
    let i_cov: Option<Vec<usize>> = FULL_COV_PROPS.iter().map(|p| find(p)).collect();
    let i_rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut positions = Vec::with_capacity(count);
    let mut sizes = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for v in 0..count {
        let (n, line) =
            lines.next().ok_or_else(|| err(header_end + v + 1, format!("expected {count} vertices, found {v}")))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != props.len() {
            return Err(err(n, format!("expected {} values, found {}", props.len(), tok.len())));
        }
        let mut vals = Vec::with_capacity(tok.len());
        for (t, (name, ty)) in tok.iter().zip(&props) {
            let value = match ty {
                PlyType::Float => t.parse::<f32>().map(f64::from).ok(),
                PlyType::Int => t.parse::<i64>().map(|x| x as f64).ok(),
                PlyType::UChar => t.parse::<u8>().map(|x| x as f64 / 255.0).ok(),
            };
            vals.push(value.ok_or_else(|| err(n, format!("bad value '{t}' for property '{name}'")))?);
        }
        positions.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
        let scale = i_scale.map_or(defaults.scale, |i| vals[i]);
        let size = match &i_cov {
            Some(c) => SizeParams::FullCov {
                scale,
                diag: [vals[c[0]], vals[c[1]], vals[c[2]]],
                orientation: Quaternion::new(vals[c[3]], vals[c[4]], vals[c[5]], vals[c[6]]),
            },
            None => SizeParams::Isotropic { scale, sigma: i_sigma.map_or(defaults.sigma, |i| vals[i]) },
        };
        size.validate().map_err(|m| err(n, m))?;
        sizes.push(size);
        colors.push(i_rgb.map_or(defaults.color, |c| [vals[c[0]], vals[c[1]], vals[c[2]]]));
    }
    Ok(PointCloud::new(positions, sizes).with_colors(colors))
}

pub fn read_ply(path: &Path, defaults: &PlyDefaults) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: label(path),
        line: 1,
        message: "file is not ASCII text (binary PLY is not supported)".into(),
    })?;
    parse_ply(&text, &label(path), defaults)
}

// ---------------------------------------------------------------- images

/// Encodes a 1- or 3-channel projection as 8-bit PNG with
/// `round(255 · clamp(p, 0, 1))`, halves rounding up.
pub fn encode_png(img: &Projection) -> Result<Vec<u8>> {
    use image::{ExtendedColorType, ImageEncoder};
    let [rows, cols] = img.dims;
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    let color = match img.channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::InvalidInput(format!("cannot encode {c}-channel image as PNG"))),
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(&bytes, cols as u32, rows as u32, color)?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &Projection) -> Result<()> {
    write_bytes(path, encode_png(img)?)?;
    Ok(())
}

/// Decodes a PNG into values `q / 255`. Grayscale files give one channel,
/// anything else three.
pub fn decode_png(bytes: &[u8], modality: Modality) -> Result<Projection> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = if modality.channels() == 1 {
        img.to_luma8().into_raw().into_iter().map(|q| q as f64 / 255.0).collect()
    } else {
        img.to_rgb8().into_raw().into_iter().map(|q| q as f64 / 255.0).collect()
    };
    Ok(Projection { dims: [rows, cols], channels: modality.channels(), modality, data })
}

pub fn read_png(path: &Path, modality: Modality) -> Result<Projection> {
    decode_png(&read_bytes(path)?, modality)
}

/// Little-endian PFM (`Pf` gray, `PF` color), rows stored bottom-up.
pub fn encode_pfm(img: &Projection) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidInput(format!("cannot encode {c}-channel image as PFM"))),
    };
    let [rows, cols] = img.dims;
    let mut out = format!("{magic}\n{cols} {rows}\n-1.0\n").into_bytes();
    let row_len = cols * img.channels;
    for r in (0..rows).rev() {
        for v in &img.data[r * row_len..(r + 1) * row_len] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, img: &Projection) -> Result<()> {
    write_bytes(path, encode_pfm(img)?)?;
    Ok(())
}

pub fn decode_pfm(bytes: &[u8], source: &str, modality: Modality) -> Result<Projection> {
    let err = |line: usize, message: String| Error::Parse { path: source.to_string(), line, message };
    // three newline-terminated header lines
    let mut pos = 0;
    let mut header = Vec::new();
    for line in 1..=3 {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| err(line, "truncated header".into()))?;
        header.push(String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string());
        pos += end + 1;
    }
    let channels = match header[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(err(1, format!("bad magic '{m}'"))),
    };
    if channels != modality.channels() {
        return Err(err(1, format!("{channels}-channel file for {modality:?}")));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(2, format!("bad size '{t}'"))))
        .collect::<Result<_>>()?;
    let [cols, rows] = dims[..] else { return Err(err(2, "expected width and height".into())) };
    let scale: f64 = header[2].parse().map_err(|_| err(3, format!("bad scale '{}'", header[2])))?;
    let little = scale < 0.0;
    let row_len = cols * channels;
    let body = &bytes[pos..];
    if body.len() != rows * row_len * 4 {
        return Err(err(3, format!("expected {} data bytes, found {}", rows * row_len * 4, body.len())));
    }
    let mut data = vec![0.0; rows * row_len];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_row, c) = (i / row_len, i % row_len);
        data[(rows - 1 - file_row) * row_len + c] = v as f64;
    }
    Ok(Projection { dims: [rows, cols], channels, modality, data })
}

pub fn read_pfm(path: &Path, modality: Modality) -> Result<Projection> {
    decode_pfm(&read_bytes(path)?, &label(path), modality)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Writes PNG or PFM depending on the file extension.
pub fn write_image(path: &Path, img: &Projection) -> Result<()> {
    match extension(path).as_str() {
        "png" => write_png(path, img),
        "pfm" => write_pfm(path, img),
        e => Err(Error::InvalidInput(format!("unsupported image extension '{e}' (use .png or .pfm)"))),
    }
}

pub fn read_image(path: &Path, modality: Modality) -> Result<Projection> {
    match extension(path).as_str() {
        "png" => read_png(path, modality),
        "pfm" => read_pfm(path, modality),
        e => Err(Error::InvalidInput(format!("unsupported image extension '{e}' (use .png or .pfm)"))),
    }
}

// ---------------------------------------------------------------- JSON

fn default_version() -> u32 {
    FORMAT_VERSION
}

/// Deserializes `text`, reporting the JSON path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str, source: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = if path == "." { String::new() } else { format!(" at '{path}'") };
        Error::Schema { path: source.to_string(), message: format!("{inner}{field}") }
    })
}

fn check_version(v: u32, source: &str) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Schema {
            path: source.to_string(),
            message: format!("unsupported format_version {v} at 'format_version', expected {FORMAT_VERSION}"),
        });
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CameraSpec {
    #[serde(rename = "ortho")]
    Ortho,
    #[serde(rename = "persp")]
    Persp { focal: f64, near: f64, far: f64 },
}

impl From<CameraModel> for CameraSpec {
    fn from(c: CameraModel) -> Self {
        match c {
            CameraModel::Orthographic => CameraSpec::Ortho,
            CameraModel::Perspective { focal, near, far } => CameraSpec::Persp { focal, near, far },
        }
    }
}

impl From<CameraSpec> for CameraModel {
    fn from(c: CameraSpec) -> Self {
        match c {
            CameraSpec::Ortho => CameraModel::Orthographic,
            CameraSpec::Persp { focal, near, far } => CameraModel::Perspective { focal, near, far },
        }
    }
}

/// A camera pose plus its projection model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    #[serde(default = "default_version")]
    pub format_version: u32,
    /// `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub camera: CameraSpec,
}

impl CameraFile {
    pub fn new(pose: &Pose, camera: &CameraModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            rotation: pose.rotation.to_array(),
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            camera: (*camera).into(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(Quaternion::from_array(self.rotation), Vec3::from(self.translation))
    }

    pub fn model(&self) -> CameraModel {
        self.camera.into()
    }
}

pub fn camera_to_json(file: &CameraFile) -> String {
    to_json(file)
}

pub fn parse_camera(text: &str, source: &str) -> Result<CameraFile> {
    let f: CameraFile = parse_json(text, source)?;
    check_version(f.format_version, source)?;
    let schema = |message: String| Error::Schema { path: source.to_string(), message };
    if Quaternion::from_array(f.rotation).try_normalize().is_none() {
        return Err(schema("rotation must be a nonzero quaternion at 'rotation'".into()));
    }
    if f.rotation.iter().chain(&f.translation).any(|v| !v.is_finite()) {
        return Err(schema("pose values must be finite".into()));
    }
    f.model().validate().map_err(|m| schema(format!("{m} at 'camera'")))?;
    Ok(f)
}

pub fn read_camera(path: &Path) -> Result<CameraFile> {
    parse_camera(&read_text(path)?, &label(path))
}

pub fn write_camera(path: &Path, file: &CameraFile) -> Result<()> {
    write_bytes(path, camera_to_json(file))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub dims: [usize; 3],
    pub layout: String,
}

const VOLUME_LAYOUT: &str = "k1-slowest";

/// Sidecar path of a raw volume dump: `name.raw` → `name.json`.
pub fn volume_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Raw little-endian `f32` cells, first index slowest, plus a JSON sidecar.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_bytes(path, bytes)?;
    let header = VolumeHeader { format_version: FORMAT_VERSION, dims: vol.dims, layout: VOLUME_LAYOUT.into() };
    write_bytes(&volume_sidecar(path), to_json(&header))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let side = volume_sidecar(path);
    let header: VolumeHeader = parse_json(&read_text(&side)?, &label(&side))?;
    check_version(header.format_version, &label(&side))?;
    if header.layout != VOLUME_LAYOUT {
        return Err(Error::Schema {
            path: label(&side),
            message: format!("unknown layout '{}' at 'layout'", header.layout),
        });
    }
    let bytes = read_bytes(path)?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::Parse {
            path: label(path),
            line: 1,
            message: format!("expected {} bytes, found {}", 4 * n, bytes.len()),
        });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(Volume::from_data(header.dims, data))
}

/// Fit config JSON; an optional `format_version` must be 1.
pub fn parse_fit_config(text: &str, source: &str) -> Result<FitConfig> {
    let mut value: serde_json::Value = parse_json(text, source)?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(v) = obj.remove("format_version") {
            let v = v.as_u64().ok_or_else(|| Error::Schema {
                path: source.to_string(),
                message: "format_version must be an integer at 'format_version'".into(),
            })?;
            check_version(v as u32, source)?;
        }
    }
    let cfg: FitConfig = parse_json(&value.to_string(), source)?;
    cfg.validate().map_err(|e| Error::Schema { path: source.to_string(), message: e.to_string() })?;
    Ok(cfg)
}

pub fn read_fit_config(path: &Path) -> Result<FitConfig> {
    parse_fit_config(&read_text(path)?, &label(path))
}

pub fn fit_config_to_json(cfg: &FitConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("serializable");
    v.as_object_mut().expect("object").insert("format_version".into(), FORMAT_VERSION.into());
    to_json(&v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub dims: [usize; 3],
    pub extent: [f64; 3],
}

impl From<GridSpec> for GridFile {
    fn from(g: GridSpec) -> Self {
        Self { dims: g.dims, extent: g.extent }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub image: String,
    pub camera: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// Index of a synthetic view set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub modality: Modality,
    pub grid: GridFile,
    pub camera: CameraSpec,
    pub seed: u64,
    pub views: Vec<ManifestView>,
}

impl Manifest {
    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.grid;
        if g.dims.contains(&0) || g.extent.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Schema {
                path: "manifest".into(),
                message: "grid dims and extent must be positive at 'grid'".into(),
            });
        }
        Ok(GridSpec::new(g.dims, g.extent))
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    write_bytes(&dir.join(MANIFEST_NAME), to_json(m))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let m: Manifest = parse_json(&read_text(&path)?, &label(&path))?;
    check_version(m.format_version, &label(&path))?;
    m.grid()?;
    Ok(m)
}

/// A view directory loaded from its manifest.
pub struct LoadedViews {
    pub manifest: Manifest,
    pub images: Vec<Projection>,
    pub cameras: Vec<CameraFile>,
}

pub fn read_views(dir: &Path) -> Result<LoadedViews> {
    let manifest = read_manifest(dir)?;
    let mut images = Vec::with_capacity(manifest.views.len());
    let mut cameras = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        images.push(read_image(&dir.join(&v.image), manifest.modality)?);
        cameras.push(read_camera(&dir.join(&v.camera))?);
    }
    Ok(LoadedViews { manifest, images, cameras })
}

/// Full-precision JSON dump of a cloud, used for diagnostics.
pub fn cloud_to_json(cloud: &PointCloud) -> String {
    #[derive(Serialize)]
    struct Dump<'a> {
        format_version: u32,
        positions: Vec<[f64; 3]>,
        sizes: Vec<serde_json::Value>,
        colors: &'a Option<Vec<Rgb>>,
    }
    let sizes = cloud
        .sizes
        .iter()
        .map(|s| match *s {
            SizeParams::Isotropic { scale, sigma } => serde_json::json!({"scale": scale, "sigma": sigma}),
            SizeParams::FullCov { scale, diag, orientation } => {
                serde_json::json!({"scale": scale, "diag": diag, "orientation": orientation.to_array()})
            }
        })
        .collect();
    to_json(&Dump {
        format_version: FORMAT_VERSION,
        positions: cloud.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        sizes,
        colors: &cloud.colors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pos = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let sizes =
            (0..n).map(|_| SizeParams::Isotropic { scale: rng.gen(), sigma: rng.gen_range(0.001..0.1) }).collect();
        PointCloud::new(pos, sizes).with_colors((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
    }

    #[test]
    fn ply_single_vertex_round_trip_is_exact() {
        let cloud = PointCloud::new(
            vec![Vec3::new(0.25, -0.125, 0.5)],
            vec![SizeParams::Isotropic { scale: 0.75, sigma: 0.03125 }],
        )
        .with_colors(vec![[1.0, 0.0, 128.0 / 255.0]]);
        let back = parse_ply(&ply_to_string(&cloud), "mem", &PlyDefaults::default()).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ply_defaults_for_missing_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let d = PlyDefaults { sigma: 0.04, ..Default::default() };
        let c = parse_ply(text, "mem", &d).unwrap();
        assert_eq!(c.sizes[1], SizeParams::Isotropic { scale: 1.0, sigma: 0.04 });
        assert_eq!(c.colors.unwrap()[0], [1.0; 3]);
        assert_eq!(c.positions[1], Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn ply_errors_name_the_line() {
        let d = PlyDefaults::default();
        let bad_format = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        let e = parse_ply(bad_format, "a.ply", &d).unwrap_err().to_string();
        assert!(e.starts_with("a.ply:2:"), "{e}");
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let e = parse_ply(short, "b.ply", &d).unwrap_err().to_string();
        assert!(e.contains("expected 3 vertices, found 1"), "{e}");
        let wrong = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0\n";
        let e = parse_ply(wrong, "c.ply", &d).unwrap_err().to_string();
        assert!(e.starts_with("c.ply:8:"), "{e}");
        assert!(parse_ply("hello\n", "d.ply", &d).is_err());
    }

    #[test]
    fn ply_second_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let cloud = random_cloud(&mut rng, 10_000);
        let first = ply_to_string(&cloud);
        let back = parse_ply(&first, "mem", &PlyDefaults::default()).unwrap();
        let second = ply_to_string(&back);
        assert_eq!(first, second);
        for (a, b) in cloud.positions.iter().zip(&back.positions) {
            for i in 0..3 {
                assert_eq!(a[i] as f32, b[i] as f32);
            }
        }
    }

    #[test]
    fn ply_full_covariance_round_trip() {
        let cloud = PointCloud::new(
            vec![Vec3::new(0.1, 0.2, 0.3), Vec3::zeros()],
            vec![
                SizeParams::FullCov {
                    scale: 0.5,
                    diag: [0.0625, 0.125, 0.25],
                    orientation: Quaternion::new(0.5, 0.5, 0.5, 0.5),
                },
                SizeParams::Isotropic { scale: 1.0, sigma: 0.25 },
            ],
        );
        let text = ply_to_string(&cloud);
        let back = parse_ply(&text, "mem", &PlyDefaults::default()).unwrap();
        assert_eq!(back.sizes[0], cloud.sizes[0]);
        assert_eq!(back.sizes[1].covariance(), cloud.sizes[1].covariance());
    }

    fn img(dims: [usize; 2], channels: usize, data: Vec<f64>) -> Projection {
        let modality = if channels == 1 { Modality::Silhouette } else { Modality::Color };
        Projection { dims, channels, modality, data }
    }

    #[test]
    fn png_quantization_rounds_half_up() {
        let half = img([2, 3], 1, vec![0.5; 6]);
        let back = decode_png(&encode_png(&half).unwrap(), Modality::Silhouette).unwrap();
        assert!(back.data.iter().all(|&v| v == 128.0 / 255.0));
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
    }

    #[test]
    fn png_round_trip_within_one_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for ch in [1, 3] {
            let a = img([7, 5], ch, (0..35 * ch).map(|_| rng.gen()).collect());
            let m = a.modality;
            let b = decode_png(&encode_png(&a).unwrap(), m).unwrap();
            assert_eq!((b.dims, b.channels), (a.dims, a.channels));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
            let again = encode_png(&b).unwrap();
            assert_eq!(again, encode_png(&decode_png(&again, m).unwrap()).unwrap());
        }
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for ch in [1, 3] {
            let a = img([4, 6], ch, (0..24 * ch).map(|_| (rng.gen::<f32>() * 3.0) as f64).collect());
            let bytes = encode_pfm(&a).unwrap();
            let b = decode_pfm(&bytes, "mem", a.modality).unwrap();
            assert_eq!(a, b);
            assert_eq!(encode_pfm(&b).unwrap(), bytes);
        }
        // bottom-up: the first stored row is the last image row
        let a = img([2, 1], 1, vec![1.0, 2.0]);
        let bytes = encode_pfm(&a).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes([body[0], body[1], body[2], body[3]]), 2.0);
    }

    #[test]
    fn camera_json_round_trip_and_errors() {
        let pose = Pose::new(Quaternion::new(0.5, -0.5, 0.5, 0.5), Vec3::new(0.0, 0.1, 2.0));
        let f = CameraFile::new(&pose, &CameraModel::perspective());
        let text = camera_to_json(&f);
        let back = parse_camera(&text, "cam.json").unwrap();
        assert_eq!(back, f);
        assert_eq!(back.pose(), pose);
        let o = parse_camera(r#"{"rotation":[1,0,0,0],"translation":[0,0,0],"camera":{"kind":"ortho"}}"#, "c").unwrap();
        assert_eq!(o.model(), CameraModel::Orthographic);
        let e = parse_camera(r#"{"rotation":[1,0,0],"translation":[0,0,0],"camera":{"kind":"ortho"}}"#, "c")
            .unwrap_err()
            .to_string();
        assert!(e.contains("rotation"), "{e}");
        let e = parse_camera(
            r#"{"rotation":[1,0,0,0],"translation":[0,0,0],"camera":{"kind":"persp","focal":1,"near":2,"far":1}}"#,
            "c",
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("far"), "{e}");
        let e = parse_camera(
            r#"{"format_version":2,"rotation":[1,0,0,0],"translation":[0,0,0],"camera":{"kind":"ortho"}}"#,
            "c",
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("format_version"), "{e}");
        let e =
            parse_camera(r#"{"rotation":[1,0,0,0],"translation":[0,0,0],"camera":{"kind":"ortho"},"extra":1}"#, "c")
                .unwrap_err()
                .to_string();
        assert!(e.contains("extra"), "{e}");
    }

    #[test]
    fn volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("occ.raw");
        let v = Volume::from_data([2, 3, 4], (0..24).map(|i| i as f64 * 0.25).collect());
        write_volume(&p, &v).unwrap();
        assert_eq!(read_volume(&p).unwrap(), v);
        let side: serde_json::Value = serde_json::from_str(&read_text(&volume_sidecar(&p)).unwrap()).unwrap();
        assert_eq!(side["layout"], "k1-slowest");
        assert_eq!(read_bytes(&p).unwrap()[4..8], 0.25f32.to_le_bytes());
    }

    #[test]
    fn fit_config_json() {
        let cfg = parse_fit_config(r#"{"format_version":1,"n_points":12,"K":4,"steps":10,"lr":0.001,"path":"fast","supervised":true,"seed":7,"schedules":{"sigma_end":0.02}}"#, "f").unwrap();
        assert_eq!((cfg.n_points, cfg.steps, cfg.seed), (12, 10, 7));
        assert_eq!(cfg.schedules.sigma_end, 0.02);
        assert_eq!(cfg.schedules.dropout_start, 0.9);
        assert_eq!(parse_fit_config(&fit_config_to_json(&cfg), "f").unwrap(), cfg);
        let e = parse_fit_config(r#"{"schedules":{"sigma_edn":0.02}}"#, "f").unwrap_err().to_string();
        assert!(e.contains("schedules") && e.contains("sigma_edn"), "{e}");
        let e = parse_fit_config(r#"{"K":"four"}"#, "f").unwrap_err().to_string();
        assert!(e.contains("'K'"), "{e}");
    }
}
