//! Deterministic sample and dataset generation.
//!
//! Each sample draws its own ChaCha8 stream from
//! `SHA-256(master_seed_le ‖ index_le)`, so every output byte depends only on
//! the master seed, the index and the configuration. Samples are generated
//! in parallel and the manifest is written last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{optimize_alignment, AffineParams, AlignConfig, AlignmentProblem, AlignmentReport};
use crate::camera::{rig_from_json, rig_to_json, sample_camera, CameraRig, CameraSampling};
use crate::headmodel::{
    builtin_head, landmarks3d, load_asset, mesh_to_density, sample_params, synthesize_mesh, AssetPaths, ClassTable,
    HeadParams, TemplateAsset,
};
use crate::imageio::{decode_ppm, encode_ppm, read_file, write_file, RgbImage};
use crate::raster::{project_landmarks, rasterize, ClassMap, DepthMap, Landmark2d};
use crate::volume::{render_depth_map, render_rgb, DepthWeights, MarchConfig};
use crate::{json, Error, Result, Vec3};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Per-sample digest record, written after the sample's other files.
pub const SAMPLE_DIGESTS_FILE: &str = "digests.json";

pub const RGB_FILE: &str = "rgb.pnm";
pub const DEPTH_VOL_FILE: &str = "depth_vol.pfm";
pub const DEPTH_MESH_FILE: &str = "depth_mesh.pfm";
pub const SEG_FILE: &str = "seg.pgm";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const CAMERA_FILE: &str = "camera.json";
pub const PARAMS_FILE: &str = "params.json";
pub const ALIGN_FILE: &str = "align.json";

/// Square size or explicit `[width, height]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Square(usize),
    Pair([usize; 2]),
}

impl Resolution {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Resolution::Square(n) => (n, n),
            Resolution::Pair([w, h]) => (w, h),
        }
    }
}

/// Where the template head comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AssetSource {
    Builtin { n_beta: usize, n_psi: usize, subdivision: usize },
    /// Directory with the conventional file names of [`AssetPaths::in_dir`].
    Paths { dir: PathBuf },
}

impl Default for AssetSource {
    fn default() -> Self {
        AssetSource::Builtin { n_beta: 10, n_psi: 10, subdivision: 4 }
    }
}

impl AssetSource {
    pub fn load(&self) -> Result<TemplateAsset> {
        match self {
            AssetSource::Builtin { n_beta, n_psi, subdivision } => {
                if *subdivision > 6 {
                    return Err(Error::Config("builtin subdivision above 6 is not supported".into()));
                }
                Ok(builtin_head(*n_beta, *n_psi, *subdivision))
            }
            AssetSource::Paths { dir } => {
                let mut paths = AssetPaths::in_dir(dir);
                paths.class_table = paths.class_table.filter(|p| p.exists());
                paths.basis = paths.basis.filter(|p| p.exists());
                load_asset(&paths)
            }
        }
    }
}

/// Magnitude of the seeded similarity applied to the mesh before it becomes
/// the density field. All zero means identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HiddenTransform {
    /// Scale uniform on `[1 − scale_max, 1 + scale_max]`.
    pub scale_max: f64,
    /// Rotation angle uniform on `[0, rot_max_deg]` about a uniform axis.
    pub rot_max_deg: f64,
    /// Translation of uniform direction and length uniform on `[0, trans_max_m]`.
    pub trans_max_m: f64,
}

impl HiddenTransform {
    pub fn is_identity(&self) -> bool {
        self.scale_max == 0.0 && self.rot_max_deg == 0.0 && self.trans_max_m == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_max >= 0.0 && self.scale_max < 1.0) {
            return Err(Error::Config("hidden_transform.scale_max must be in [0, 1)".into()));
        }
        if !(self.rot_max_deg >= 0.0 && self.rot_max_deg <= 180.0) {
            return Err(Error::Config("hidden_transform.rot_max_deg must be in [0, 180]".into()));
        }
        if !(self.trans_max_m >= 0.0 && self.trans_max_m.is_finite()) {
            return Err(Error::Config("hidden_transform.trans_max_m must be nonnegative".into()));
        }
        Ok(())
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if let Some(u) = v.try_normalize(1e-12) {
            return u;
        }
    }
}

/// Draws a similarity transform: scale, axis, angle, direction, length.
pub fn sample_hidden_transform<R: Rng + ?Sized>(rng: &mut R, cfg: &HiddenTransform) -> AffineParams {
    if cfg.is_identity() {
        return AffineParams::identity();
    }
    let scale = 1.0 + cfg.scale_max * rng.random_range(-1.0..=1.0);
    let axis = Unit::new_unchecked(unit_direction(rng));
    let angle = cfg.rot_max_deg.to_radians() * rng.random_range(0.0..=1.0);
    let dir = unit_direction(rng);
    let length = cfg.trans_max_m * rng.random_range(0.0..=1.0);
    AffineParams { a: Rotation3::from_axis_angle(&axis, angle).matrix() * scale, b: dir * length }
}

/// Stand-in generator density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub shell_width: f64,
    pub sigma0: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { shell_width: 0.01, sigma0: 400.0 }
    }
}

/// Ray marching for the volumetric annotations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleMarch {
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    /// Level-set threshold for alignment; overrides `align.alpha` when set.
    pub alpha: Option<f64>,
    pub stratified: bool,
    pub opacity_threshold: f64,
    pub depth_weights: DepthWeights,
}

impl Default for SampleMarch {
    fn default() -> Self {
        let m = MarchConfig::default();
        Self {
            n_samples: m.n_samples,
            t_near: m.t_near,
            t_far: m.t_far,
            alpha: None,
            stratified: m.stratified,
            opacity_threshold: m.opacity_threshold,
            depth_weights: m.depth_weights,
        }
    }
}

impl SampleMarch {
    /// Per-sample march; `seed` keys the stratified jitter.
    pub fn march(&self, seed: u64) -> MarchConfig {
        MarchConfig {
            t_near: self.t_near,
            t_far: self.t_far,
            n_samples: self.n_samples,
            stratified: self.stratified,
            seed,
            opacity_threshold: self.opacity_threshold,
            depth_weights: self.depth_weights,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub master_seed: u64,
    pub resolution: Resolution,
    /// Pose coefficients drawn per sample.
    pub n_theta: usize,
    /// Camera distribution; its width and height are replaced by `resolution`.
    pub camera: CameraSampling,
    pub density: DensityConfig,
    pub march: SampleMarch,
    pub align: AlignConfig,
    /// Run the alignment stage at all.
    pub alignment: bool,
    /// Render the radiance stand-in image.
    pub rgb: bool,
    pub hidden_transform: HiddenTransform,
    pub asset: AssetSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            master_seed: 0,
            resolution: Resolution::Square(512),
            n_theta: 0,
            camera: CameraSampling::default(),
            density: DensityConfig::default(),
            march: SampleMarch::default(),
            align: AlignConfig::default(),
            alignment: true,
            rgb: false,
            hidden_transform: HiddenTransform::default(),
            asset: AssetSource::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution.dims();
        if w == 0 || h == 0 {
            return Err(Error::Config("resolution must be at least 1x1".into()));
        }
        self.camera.validate()?;
        if !(self.density.shell_width > 0.0 && self.density.sigma0 > 0.0) {
            return Err(Error::Config("density shell_width and sigma0 must be positive".into()));
        }
        if let Some(a) = self.march.alpha {
            if !(a > 0.0) {
                return Err(Error::Config("march.alpha must be positive".into()));
            }
        }
        self.march.march(0).validate()?;
        self.align_config().validate()?;
        self.hidden_transform.validate()
    }

    pub fn camera_sampling(&self) -> CameraSampling {
        let (width, height) = self.resolution.dims();
        CameraSampling { width, height, ..self.camera.clone() }
    }

    pub fn align_config(&self) -> AlignConfig {
        let mut a = self.align.clone();
        if let Some(alpha) = self.march.alpha {
            a.alpha = alpha;
        }
        a
    }

    /// SHA-256 over the canonical JSON of the config and the format version.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("synthface-dataset-v{FORMAT_VERSION}\n"));
        h.update(json::to_string_pretty(self));
        hex::encode(h.finalize())
    }

    /// Parses JSON and applies `key.path=value` overrides (values are JSON,
    /// falling back to a bare string).
    pub fn from_json_with_overrides(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = match text {
            Some(t) => serde_json::from_str::<serde_json::Value>(t).map_err(|e| Error::Config(format!("config JSON: {e}")))?,
            None => serde_json::to_value(Self::default()).expect("config serializes"),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

/// `SHA-256(master_seed_le ‖ index_le)`.
pub fn sample_seed(master_seed: u64, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Everything produced for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationBundle {
    pub index: u64,
    pub seed: [u8; 32],
    pub rgb: Option<RgbImage>,
    pub depth_vol: DepthMap,
    pub depth_mesh: DepthMap,
    pub seg: ClassMap,
    pub landmarks2d: Vec<Landmark2d>,
    pub landmarks3d: Vec<Vec3>,
    pub camera: CameraRig,
    pub params: HeadParams,
    pub hidden_transform: AffineParams,
    pub alignment: Option<AlignmentReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkFile {
    landmarks2d: Vec<Landmark2d>,
    landmarks3d: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    index: u64,
    seed: String,
    params: HeadParams,
    /// Rows of `[A|b]`.
    hidden_transform: [f64; 12],
}

fn generated<T>(r: Result<T>, what: &str) -> T {
    r.unwrap_or_else(|e| panic!("{what} failed on validated inputs: {e}"))
}

/// Random draws of one sample, in stream order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    pub seed: [u8; 32],
    pub params: HeadParams,
    pub camera: CameraRig,
    pub hidden: AffineParams,
    /// Keys the stratified march jitter.
    pub march_seed: u64,
}

pub fn draw_sample(master_seed: u64, index: u64, asset: &TemplateAsset, cfg: &DatasetConfig) -> Result<SampleDraw> {
    let seed = sample_seed(master_seed, index);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let params = sample_params(&mut rng, asset.n_beta(), asset.n_psi(), cfg.n_theta);
    let camera = sample_camera(&mut rng, &cfg.camera_sampling())?;
    let hidden = sample_hidden_transform(&mut rng, &cfg.hidden_transform);
    let march_seed = rng.random::<u64>();
    Ok(SampleDraw { seed, params, camera, hidden, march_seed })
}

pub fn generate_sample(master_seed: u64, index: u64, asset: &TemplateAsset, cfg: &DatasetConfig) -> Result<AnnotationBundle> {
    cfg.validate()?;
    let SampleDraw { seed, params, camera, hidden, march_seed } = draw_sample(master_seed, index, asset, cfg)?;

    let mesh = synthesize_mesh(asset, &params)?;
    let field = mesh_to_density(&hidden.apply_mesh(&mesh), cfg.density.shell_width, cfg.density.sigma0)?;
    let march = cfg.march.march(march_seed);
    let depth_vol = generated(render_depth_map(&field, &camera, &march), "volumetric render").quantized();
    let rgb = if cfg.rgb {
        Some(generated(render_rgb(&field, &camera, &march), "rgb render").to_image())
    } else {
        None
    };

    let align_cfg = cfg.align_config();
    let (transform, alignment) = if !cfg.alignment {
        (AffineParams::identity(), None)
    } else if hidden == AffineParams::identity() {
        let problem = AlignmentProblem::new(&mesh, &field, &camera, &align_cfg)?;
        let id = AffineParams::identity();
        (id, Some(AlignmentReport::evaluated(&id, &problem.evaluate(&id))))
    } else {
        let (t, report) = optimize_alignment(&mesh, &field, &camera, &align_cfg)?;
        if !report.converged {
            log::warn!("sample {index}: alignment stopped before converging");
        }
        (t, Some(report))
    };

    let aligned = transform.apply_mesh(&mesh);
    let raster = rasterize(&aligned, &camera);
    let landmarks2d = project_landmarks(&aligned, &camera, &raster.depth);
    Ok(AnnotationBundle {
        index,
        seed,
        rgb,
        depth_vol,
        depth_mesh: raster.depth.quantized(),
        seg: raster.classes,
        landmarks2d,
        landmarks3d: landmarks3d(&aligned),
        camera,
        params,
        hidden_transform: hidden,
        alignment,
    })
}

impl AnnotationBundle {
    /// File name and content of every output, in a fixed order.
    pub fn encode_files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut out = Vec::new();
        if let Some(rgb) = &self.rgb {
            out.push((RGB_FILE, encode_ppm(rgb)));
        }
        out.push((DEPTH_VOL_FILE, self.depth_vol.encode_pfm()));
        out.push((DEPTH_MESH_FILE, self.depth_mesh.encode_pfm()));
        out.push((SEG_FILE, self.seg.encode_pgm()));
        let lm = LandmarkFile {
            landmarks2d: self.landmarks2d.clone(),
            landmarks3d: self.landmarks3d.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        out.push((LANDMARKS_FILE, json::to_string_pretty(&lm).into_bytes()));
        out.push((CAMERA_FILE, rig_to_json(&self.camera).into_bytes()));
        let params = ParamsFile {
            index: self.index,
            seed: hex::encode(self.seed),
            params: self.params.clone(),
            hidden_transform: self.hidden_transform.to_array(),
        };
        out.push((PARAMS_FILE, json::to_string_pretty(&params).into_bytes()));
        if let Some(report) = &self.alignment {
            out.push((ALIGN_FILE, json::to_string_pretty(report).into_bytes()));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let dims = (self.camera.width, self.camera.height);
        let mut all = vec![
            ("depth_vol", (self.depth_vol.width, self.depth_vol.height)),
            ("depth_mesh", (self.depth_mesh.width, self.depth_mesh.height)),
            ("seg", (self.seg.width, self.seg.height)),
        ];
        if let Some(rgb) = &self.rgb {
            all.push(("rgb", (rgb.width, rgb.height)));
        }
        for (name, d) in all {
            if d != dims {
                return Err(Error::Validation(format!(
                    "{name} is {}x{} but the camera is {}x{}",
                    d.0, d.1, dims.0, dims.1
                )));
            }
        }
        if self.landmarks2d.len() != self.landmarks3d.len() {
            return Err(Error::Validation("2D and 3D landmark counts differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    /// Relative to the dataset root.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: u64,
    pub seed: String,
    pub files: Vec<FileDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset_id: String,
    pub generator: String,
    pub config_fingerprint: String,
    pub master_seed: u64,
    pub n_samples: usize,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDigests {
    config_fingerprint: String,
    entry: ManifestEntry,
}

pub fn sample_dir_name(index: u64) -> String {
    format!("{index:08}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes one bundle under `root` and returns its manifest entry.
pub fn write_bundle(root: &Path, bundle: &AnnotationBundle, fingerprint: &str) -> Result<ManifestEntry> {
    let dir_name = sample_dir_name(bundle.index);
    let dir = root.join(&dir_name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    for (name, bytes) in bundle.encode_files() {
        write_file(&dir.join(name), &bytes)?;
        files.push(FileDigest { path: format!("{dir_name}/{name}"), sha256: sha256_hex(&bytes) });
    }
    let entry = ManifestEntry { index: bundle.index, seed: hex::encode(bundle.seed), files };
    let record = SampleDigests { config_fingerprint: fingerprint.to_string(), entry: entry.clone() };
    write_file(&dir.join(SAMPLE_DIGESTS_FILE), json::to_string_pretty(&record).as_bytes())?;
    Ok(entry)
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))
}

fn verify_entry(root: &Path, entry: &ManifestEntry) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for f in &entry.files {
        let path = root.join(&f.path);
        let bytes = read_file(&path)?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Digest { path });
        }
        let name = Path::new(&f.path).file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        out.insert(name, bytes);
    }
    Ok(out)
}

/// Optional checks applied by [`read_bundle`].
#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions<'a> {
    /// Every listed file must match its digest.
    pub entry: Option<&'a ManifestEntry>,
    /// Every ClassMap value must be a declared class.
    pub class_table: Option<&'a ClassTable>,
    pub landmark_count: Option<usize>,
}

impl<'a> ReadOptions<'a> {
    /// Class table and landmark count of `asset`.
    pub fn for_asset(asset: &'a TemplateAsset) -> Self {
        Self { entry: None, class_table: Some(&asset.topology.class_table), landmark_count: Some(asset.topology.landmarks.len()) }
    }

    pub fn with_entry(self, entry: &'a ManifestEntry) -> Self {
        Self { entry: Some(entry), ..self }
    }
}

/// Reads the bundle in `root/NNNNNNNN`.
pub fn read_bundle(root: &Path, index: u64, opts: &ReadOptions) -> Result<AnnotationBundle> {
    let entry = opts.entry;
    let dir = root.join(sample_dir_name(index));
    let mut files = match entry {
        Some(e) => verify_entry(root, e)?,
        None => BTreeMap::new(),
    };
    let mut take = |name: &str, required: bool| -> Result<Option<(Vec<u8>, PathBuf)>> {
        let path = dir.join(name);
        if let Some(b) = files.remove(name) {
            return Ok(Some((b, path)));
        }
        if entry.is_some() || (!required && !path.exists()) {
            return if required { Err(Error::Validation(format!("manifest does not list {name}"))) } else { Ok(None) };
        }
        Ok(Some((read_file(&path)?, path)))
    };
    let req = |o: Option<(Vec<u8>, PathBuf)>| o.expect("required files are always returned");

    let rgb = match take(RGB_FILE, false)? {
        Some((b, p)) => Some(decode_ppm(&b, &p)?),
        None => None,
    };
    let (b, p) = req(take(DEPTH_VOL_FILE, true)?);
    let depth_vol = DepthMap::decode_pfm(&b, &p)?;
    let (b, p) = req(take(DEPTH_MESH_FILE, true)?);
    let depth_mesh = DepthMap::decode_pfm(&b, &p)?;
    let (b, p) = req(take(SEG_FILE, true)?);
    let seg = ClassMap::decode_pgm(&b, &p)?;
    let (b, p) = req(take(LANDMARKS_FILE, true)?);
    let lm: LandmarkFile = parse_json(&b, &p)?;
    let (b, p) = req(take(CAMERA_FILE, true)?);
    let text = String::from_utf8(b).map_err(|_| Error::parse(&p, "byte 0", "camera file is not UTF-8"))?;
    let camera = rig_from_json(&text)?;
    let (b, p) = req(take(PARAMS_FILE, true)?);
    let params: ParamsFile = parse_json(&b, &p)?;
    let alignment = match take(ALIGN_FILE, false)? {
        Some((b, p)) => Some(parse_json::<AlignmentReport>(&b, &p)?),
        None => None,
    };

    let seed_bytes = hex::decode(&params.seed)
        .ok()
        .and_then(|v| <[u8; 32]>::try_from(v).ok())
        .ok_or_else(|| Error::Validation("params seed is not 32 hex-encoded bytes".into()))?;
    if params.index != index {
        return Err(Error::Validation(format!("params index {} does not match directory {index}", params.index)));
    }
    let bundle = AnnotationBundle {
        index,
        seed: seed_bytes,
        rgb,
        depth_vol,
        depth_mesh,
        seg,
        landmarks2d: lm.landmarks2d,
        landmarks3d: lm.landmarks3d.iter().map(|p| Vec3::from(*p)).collect(),
        camera,
        params: params.params,
        hidden_transform: AffineParams::from_array(&params.hidden_transform),
        alignment,
    };
    bundle.validate()?;
    if let Some(table) = opts.class_table {
        bundle.seg.validate(table)?;
    }
    if let Some(n) = opts.landmark_count {
        if bundle.landmarks2d.len() != n {
            return Err(Error::Validation(format!("bundle has {} landmarks, asset embeds {n}", bundle.landmarks2d.len())));
        }
    }
    Ok(bundle)
}

/// Entry of an already complete sample with matching config, if every
/// digest still verifies.
fn reusable_entry(root: &Path, index: u64, fingerprint: &str, seed: &[u8; 32]) -> Option<ManifestEntry> {
    let path = root.join(sample_dir_name(index)).join(SAMPLE_DIGESTS_FILE);
    let bytes = std::fs::read(&path).ok()?;
    let record: SampleDigests = serde_json::from_slice(&bytes).ok()?;
    if record.config_fingerprint != fingerprint || record.entry.seed != hex::encode(seed) || record.entry.index != index {
        return None;
    }
    verify_entry(root, &record.entry).ok()?;
    Some(record.entry)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerateStats {
    pub generated: usize,
    pub reused: usize,
}

/// Generates every sample under `out`, reusing complete ones, then writes
/// the manifest. `threads = None` uses rayon's default pool size.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path, threads: Option<usize>) -> Result<(Manifest, GenerateStats)> {
    cfg.validate()?;
    let asset = cfg.asset.load()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let fingerprint = cfg.fingerprint();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(ManifestEntry, bool)>> = pool.install(|| {
        (0..cfg.n_samples as u64)
            .into_par_iter()
            .map(|index| {
                let seed = sample_seed(cfg.master_seed, index);
                if let Some(entry) = reusable_entry(out, index, &fingerprint, &seed) {
                    return Ok((entry, false));
                }
                let bundle = generate_sample(cfg.master_seed, index, &asset, cfg)?;
                Ok((write_bundle(out, &bundle, &fingerprint)?, true))
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut stats = GenerateStats::default();
    for r in results {
        let (entry, fresh) = r?;
        if fresh {
            stats.generated += 1;
        } else {
            stats.reused += 1;
        }
        samples.push(entry);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dataset_id: fingerprint_id(&fingerprint, cfg.master_seed),
        generator: format!("synthface {}", env!("CARGO_PKG_VERSION")),
        config_fingerprint: fingerprint,
        master_seed: cfg.master_seed,
        n_samples: cfg.n_samples,
        samples,
    };
    write_file(&out.join(MANIFEST_FILE), json::to_string_pretty(&manifest).as_bytes())?;
    Ok((manifest, stats))
}

fn fingerprint_id(fingerprint: &str, master_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint.as_bytes());
    h.update(master_seed.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let manifest: Manifest = parse_json(&read_file(&path)?, &path)?;
    if manifest.samples.len() != manifest.n_samples {
        return Err(Error::Validation(format!(
            "manifest lists {} samples but declares {}",
            manifest.samples.len(),
            manifest.n_samples
        )));
    }
    Ok(manifest)
}

/// Checks every digest in the manifest.
pub fn verify_dataset(root: &Path) -> Result<Manifest> {
    let manifest = read_manifest(root)?;
    for entry in &manifest.samples {
        verify_entry(root, entry)?;
    }
    Ok(manifest)
}
