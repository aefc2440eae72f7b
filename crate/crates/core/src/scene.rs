//! Gaussian scene model, its on-disk format, and a procedural forest
//! generator.
//!
//! Scene file layout: one line of JSON (the header, terminated by `\n`)
//! followed by little-endian `f32` arrays, one per field, in this order:
//! means (3n), rotations as `w,x,y,z` (4n), scales (3n), opacities (n),
//! albedo (3n), transfer (n·k) and, when `has_baked` is set, baked radiance
//! (n·3·k, channel-major per Gaussian). `k = (degree+1)²`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::{self, coeff_count, Direction, ShCoeffs};

pub const SCENE_FORMAT_VERSION: u32 = 1;
const SCENE_MAGIC: &str = "splatnav-scene";

/// Default opacity cutoff for the collision point cloud.
pub const DEFAULT_ALPHA_MIN: f32 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f32; 3],
    /// Unit quaternion `w, x, y, z`.
    pub rotation: [f32; 4],
    pub scale: [f32; 3],
    pub opacity: f32,
    pub albedo: [f32; 3],
    /// Transfer coefficients, one channel.
    pub transfer: Vec<f32>,
    /// View-independent baked radiance, three channels.
    pub baked: Option<Vec<f32>>,
}

impl Gaussian {
    pub fn mean(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation.map(|v| v as f64);
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::new(
            self.scale[0] as f64,
            self.scale[1] as f64,
            self.scale[2] as f64,
        ));
        let m = r * s;
        let cov = m * m.transpose();
        // exact symmetry
        (cov + cov.transpose()) * 0.5
    }

    /// Rotation-frame axis of the smallest scale, flipped into the upper
    /// hemisphere.
    pub fn normal(&self) -> Direction {
        let mut axis = 0;
        for i in 1..3 {
            if self.scale[i] < self.scale[axis] {
                axis = i;
            }
        }
        let mut n: Vector3<f64> = self.rotation_matrix().column(axis).into();
        if n.z < 0.0 {
            n = -n;
        }
        Direction::normalize(n).unwrap_or_else(|| Direction::from_spherical(0.0, 0.0))
    }

    pub fn transfer_sh(&self, degree: usize) -> ShCoeffs {
        ShCoeffs::from_vec(degree, 1, self.transfer.iter().map(|&v| v as f64).collect())
            .expect("transfer coefficients validated at construction")
    }

    pub fn baked_sh(&self, degree: usize) -> Option<ShCoeffs> {
        self.baked.as_ref().map(|b| {
            ShCoeffs::from_vec(degree, 3, b.iter().map(|&v| v as f64).collect())
                .expect("baked coefficients validated at construction")
        })
    }

    fn validate(&self, index: usize, degree: usize) -> Result<()> {
        let bad = |message: String| Err(Error::InvalidGaussian { index, message });
        let all_finite = self
            .mean
            .iter()
            .chain(&self.rotation)
            .chain(&self.scale)
            .chain(&self.albedo)
            .chain(&self.transfer)
            .chain(self.baked.iter().flatten())
            .all(|v| v.is_finite())
            && self.opacity.is_finite();
        if !all_finite {
            return bad("non-finite value".into());
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if let Some(s) = self.scale.iter().find(|&&s| s <= 0.0) {
            return bad(format!("scale {s} is not positive"));
        }
        if let Some(a) = self.albedo.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("albedo {a} outside [0, 1]"));
        }
        let qn = self.rotation.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-3 {
            return bad(format!("rotation quaternion has norm {qn}"));
        }
        let k = coeff_count(degree);
        if self.transfer.len() != k {
            return bad(format!("expected {k} transfer coefficients, got {}", self.transfer.len()));
        }
        if let Some(b) = &self.baked {
            if b.len() != 3 * k {
                return bad(format!("expected {} baked coefficients, got {}", 3 * k, b.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] as f64 + self.max[0] as f64),
            0.5 * (self.min[1] as f64 + self.max[1] as f64),
            0.5 * (self.min[2] as f64 + self.max[2] as f64),
        )
    }

    fn grow(&mut self, p: [f32; 3]) {
        for i in 0..3 {
            self.min[i] = self.min[i].min(p[i]);
            self.max[i] = self.max[i].max(p[i]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub name: String,
    pub seed: u64,
    pub version: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    degree: usize,
    gaussians: Vec<Gaussian>,
    bounds: Aabb,
    ground_z: f32,
    pub metadata: SceneMetadata,
}

impl SceneModel {
    /// Validates every invariant. Baked radiance must be present on all
    /// Gaussians or on none.
    pub fn new(
        degree: usize,
        gaussians: Vec<Gaussian>,
        bounds: Aabb,
        ground_z: f32,
        metadata: SceneMetadata,
    ) -> Result<Self> {
        sh::check_degree(degree)?;
        if gaussians.is_empty() {
            return Err(Error::input("scene has no gaussians"));
        }
        let has_baked = gaussians[0].baked.is_some();
        for (i, g) in gaussians.iter().enumerate() {
            g.validate(i, degree)?;
            if g.baked.is_some() != has_baked {
                return Err(Error::InvalidGaussian {
                    index: i,
                    message: "baked radiance must be present on all gaussians or none".into(),
                });
            }
            if !bounds.contains(g.mean) {
                return Err(Error::InvalidGaussian {
                    index: i,
                    message: format!("center {:?} outside scene bounds", g.mean),
                });
            }
        }
        Ok(SceneModel {
            degree,
            gaussians,
            bounds,
            ground_z,
            metadata,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn ground_z(&self) -> f32 {
        self.ground_z
    }

    pub fn has_baked(&self) -> bool {
        self.gaussians[0].baked.is_some()
    }

    /// Applies `f` to every Gaussian and recomputes tight bounds.
    pub fn map_gaussians(&self, f: impl Fn(&Gaussian) -> Gaussian) -> Result<SceneModel> {
        let gaussians: Vec<Gaussian> = self.gaussians.iter().map(f).collect();
        let mut bounds = Aabb {
            min: gaussians[0].mean,
            max: gaussians[0].mean,
        };
        for g in &gaussians {
            bounds.grow(g.mean);
        }
        SceneModel::new(self.degree, gaussians, bounds, self.ground_z, self.metadata.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    format: String,
    version: u32,
    degree: usize,
    count: usize,
    has_baked: bool,
    bounds: Aabb,
    ground_z: f32,
    name: String,
    seed: u64,
}

pub fn save_scene(scene: &SceneModel, path: &Path) -> Result<()> {
    let bytes = encode_scene(scene)?;
    write_atomically(path, &bytes)
}

/// Writes through a sibling temporary file so readers never see a partial
/// file; the temporary is removed when anything fails.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let res = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn encode_scene(scene: &SceneModel) -> Result<Vec<u8>> {
    let header = SceneHeader {
        format: SCENE_MAGIC.into(),
        version: SCENE_FORMAT_VERSION,
        degree: scene.degree,
        count: scene.gaussians.len(),
        has_baked: scene.has_baked(),
        bounds: scene.bounds,
        ground_z: scene.ground_z,
        name: scene.metadata.name.clone(),
        seed: scene.metadata.seed,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    let gs = &scene.gaussians;
    let mut put = |vals: &mut dyn Iterator<Item = f32>| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(&mut gs.iter().flat_map(|g| g.mean));
    put(&mut gs.iter().flat_map(|g| g.rotation));
    put(&mut gs.iter().flat_map(|g| g.scale));
    put(&mut gs.iter().map(|g| g.opacity));
    put(&mut gs.iter().flat_map(|g| g.albedo));
    put(&mut gs.iter().flat_map(|g| g.transfer.iter().copied()));
    if scene.has_baked() {
        put(&mut gs.iter().flat_map(|g| g.baked.iter().flatten().copied()));
    }
    Ok(out)
}

pub fn load_scene(path: &Path) -> Result<SceneModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_scene(&bytes).map_err(|e| e.with_path(path))
}

/// Splits a `header\n` + binary payload buffer.
pub(crate) fn split_header<'a, H: serde::de::DeserializeOwned>(bytes: &'a [u8]) -> Result<(H, &'a [u8], u64)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse_at(bytes.len() as u64, "missing header terminator"))?;
    let header: H = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
        path: None,
        line: Some(1),
        offset: Some(e.column().saturating_sub(1) as u64),
        message: format!("bad header: {e}"),
    })?;
    Ok((header, &bytes[nl + 1..], nl as u64 + 1))
}

/// Sequential little-endian f32 reader that reports absolute byte offsets.
pub(crate) struct F32Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> F32Reader<'a> {
    pub(crate) fn new(data: &'a [u8], base: u64) -> Self {
        F32Reader { data, pos: 0, base }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let need = n * 4;
        if self.data.len() - self.pos < need {
            return Err(Error::parse_at(
                self.base + self.data.len() as u64,
                format!(
                    "truncated {what} array: need {need} bytes at offset {}, have {}",
                    self.base + self.pos as u64,
                    self.data.len() - self.pos
                ),
            ));
        }
        let out = self.data[self.pos..self.pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += need;
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::parse_at(
                self.base + self.pos as u64,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneModel> {
    let (h, body, base): (SceneHeader, _, _) = split_header(bytes)?;
    if h.format != SCENE_MAGIC {
        return Err(Error::parse_at(0, format!("not a scene file (format {:?})", h.format)));
    }
    if h.version != SCENE_FORMAT_VERSION {
        return Err(Error::Version {
            found: h.version,
            expected: SCENE_FORMAT_VERSION,
        });
    }
    sh::check_degree(h.degree)?;
    let n = h.count;
    let k = coeff_count(h.degree);
    let mut r = F32Reader::new(body, base);
    let means = r.take(3 * n, "mean")?;
    let rots = r.take(4 * n, "rotation")?;
    let scales = r.take(3 * n, "scale")?;
    let opac = r.take(n, "opacity")?;
    let albedo = r.take(3 * n, "albedo")?;
    let transfer = r.take(k * n, "transfer")?;
    let baked = if h.has_baked {
        Some(r.take(3 * k * n, "baked")?)
    } else {
        None
    };
    r.finish()?;
    let gaussians = (0..n)
        .map(|i| Gaussian {
            mean: [means[3 * i], means[3 * i + 1], means[3 * i + 2]],
            rotation: [rots[4 * i], rots[4 * i + 1], rots[4 * i + 2], rots[4 * i + 3]],
            scale: [scales[3 * i], scales[3 * i + 1], scales[3 * i + 2]],
            opacity: opac[i],
            albedo: [albedo[3 * i], albedo[3 * i + 1], albedo[3 * i + 2]],
            transfer: transfer[k * i..k * (i + 1)].to_vec(),
            baked: baked.as_ref().map(|b| b[3 * k * i..3 * k * (i + 1)].to_vec()),
        })
        .collect();
    SceneModel::new(
        h.degree,
        gaussians,
        h.bounds,
        h.ground_z,
        SceneMetadata {
            name: h.name,
            seed: h.seed,
            version: h.version,
        },
    )
}

/// Gaussian centers, in scene order, skipping those with opacity below
/// `alpha_min`.
pub fn extract_point_cloud(scene: &SceneModel, alpha_min: Option<f32>) -> Vec<Vector3<f64>> {
    scene
        .gaussians
        .iter()
        .filter(|g| alpha_min.map_or(true, |a| g.opacity >= a))
        .map(Gaussian::mean)
        .collect()
}

/// How transfer coefficients are initialized for generated scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferInit {
    /// Clamped-cosine lobe about the Gaussian normal.
    #[default]
    CosineLobe,
    /// `d = (1, 0, 0, ...)`.
    UnitDc,
}

/// Transfer vector for `g` under the chosen initializer.
pub fn init_transfer(g: &Gaussian, degree: usize, init: TransferInit) -> Vec<f32> {
    match init {
        TransferInit::CosineLobe => sh::clamped_cosine_lobe(degree, g.normal())
            .as_slice()
            .iter()
            .map(|&v| v as f32)
            .collect(),
        TransferInit::UnitDc => {
            let mut d = vec![0.0; coeff_count(degree)];
            d[0] = 1.0;
            d
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    /// Horizontal extent `[min_x, min_y, max_x, max_y]`.
    pub area: [f32; 4],
    pub n_trees: usize,
    pub degree: usize,
    pub trunk_height: [f32; 2],
    pub trunk_radius: [f32; 2],
    /// Vertical spacing of stacked trunk Gaussians; must stay below twice
    /// the collision height tolerance so a level flight always meets one.
    pub trunk_spacing: f32,
    pub canopy_radius: [f32; 2],
    pub canopy_blobs: [usize; 2],
    pub ground_spacing: f32,
    pub border_margin: f32,
    pub min_tree_separation: f32,
    pub transfer_init: TransferInit,
    pub trunk_palette: Vec<[f32; 3]>,
    pub canopy_palette: Vec<[f32; 3]>,
    pub ground_palette: Vec<[f32; 3]>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            area: [0.0, 0.0, 60.0, 60.0],
            n_trees: 50,
            degree: 2,
            trunk_height: [3.5, 6.0],
            trunk_radius: [0.12, 0.22],
            trunk_spacing: 0.3,
            canopy_radius: [1.2, 2.2],
            canopy_blobs: [20, 36],
            ground_spacing: 1.0,
            border_margin: 1.0,
            min_tree_separation: 1.5,
            transfer_init: TransferInit::CosineLobe,
            trunk_palette: vec![[0.36, 0.25, 0.16], [0.30, 0.22, 0.15], [0.42, 0.33, 0.24]],
            canopy_palette: vec![[0.18, 0.42, 0.12], [0.25, 0.50, 0.16], [0.14, 0.34, 0.10]],
            ground_palette: vec![[0.40, 0.36, 0.22], [0.33, 0.40, 0.20], [0.45, 0.40, 0.30]],
        }
    }
}

impl ForestParams {
    pub fn square(size: f32, n_trees: usize) -> Self {
        ForestParams {
            area: [0.0, 0.0, size, size],
            n_trees,
            ..Default::default()
        }
    }
}

fn quat_about_z(yaw: f64) -> [f32; 4] {
    let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f32; 4] {
    // Uniform rotation (Shoemake).
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    let q = UnitQuaternion::from_quaternion(q);
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn jitter_color(rng: &mut ChaCha8Rng, palette: &[[f32; 3]]) -> [f32; 3] {
    let base = palette[rng.gen_range(0..palette.len())];
    let k: f32 = rng.gen_range(0.85..1.15);
    base.map(|c| (c * k).clamp(0.0, 1.0))
}

fn finish_gaussian(mut g: Gaussian, degree: usize, init: TransferInit) -> Gaussian {
    g.transfer = init_transfer(&g, degree, init);
    let k = coeff_count(degree);
    let mut baked = vec![0.0f32; 3 * k];
    for ch in 0..3 {
        baked[ch * k] = (g.albedo[ch] as f64 / sh::Y00) as f32;
    }
    g.baked = Some(baked);
    g
}

/// Procedural forest: a ground sheet of flat Gaussians, trunks of stacked
/// vertical Gaussians and canopies of clustered isotropic Gaussians.
/// Deterministic in `(seed, params)`.
pub fn gen_forest(seed: u64, params: &ForestParams) -> Result<SceneModel> {
    let [x0, y0, x1, y1] = params.area;
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::input("forest area is degenerate"));
    }
    let deg = params.degree;
    sh::check_degree(deg)?;
    let init = params.transfer_init;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussians = Vec::new();
    let ground_z = 0.0f32;

    let spacing = params.ground_spacing;
    let nx = ((x1 - x0) / spacing).floor().max(0.0) as usize + 1;
    let ny = ((y1 - y0) / spacing).floor().max(0.0) as usize + 1;
    for j in 0..ny {
        for i in 0..nx {
            let px = (x0 + i as f32 * spacing).min(x1);
            let py = (y0 + j as f32 * spacing).min(y1);
            let s = spacing * rng.gen_range(0.55..0.7);
            let g = Gaussian {
                mean: [px, py, ground_z],
                rotation: quat_about_z(rng.gen_range(0.0..std::f64::consts::PI)),
                scale: [s, s * rng.gen_range(0.8..1.0), 0.02],
                opacity: rng.gen_range(0.9..1.0),
                albedo: jitter_color(&mut rng, &params.ground_palette),
                transfer: Vec::new(),
                baked: None,
            };
            gaussians.push(finish_gaussian(g, deg, init));
        }
    }

    let margin = params.border_margin.max(0.5);
    let mut trunks: Vec<[f32; 2]> = Vec::with_capacity(params.n_trees);
    if params.n_trees > 0 && (x1 - x0 <= 2.0 * margin || y1 - y0 <= 2.0 * margin) {
        return Err(Error::input("forest area too small for the border margin"));
    }
    const PLACEMENT_ATTEMPTS: usize = 200;
    let sep2 = params.min_tree_separation.powi(2);
    for _ in 0..params.n_trees {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let pos = [
                rng.gen_range(x0 + margin..=x1 - margin),
                rng.gen_range(y0 + margin..=y1 - margin),
            ];
            if trunks
                .iter()
                .all(|t| (t[0] - pos[0]).powi(2) + (t[1] - pos[1]).powi(2) >= sep2)
            {
                placed = Some(pos);
                break;
            }
        }
        let pos = placed.ok_or(Error::SceneTooDense {
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        trunks.push(pos);

        let height: f32 = rng.gen_range(params.trunk_height[0]..=params.trunk_height[1]);
        let radius: f32 = rng.gen_range(params.trunk_radius[0]..=params.trunk_radius[1]);
        let trunk_color = jitter_color(&mut rng, &params.trunk_palette);
        let mut z = 0.5 * params.trunk_spacing;
        while z < height {
            let g = Gaussian {
                mean: [pos[0], pos[1], z],
                rotation: quat_about_z(rng.gen_range(0.0..std::f64::consts::TAU)),
                scale: [0.6 * radius, radius, params.trunk_spacing],
                opacity: 0.97,
                albedo: trunk_color.map(|c| (c * rng.gen_range(0.9..1.1f32)).clamp(0.0, 1.0)),
                transfer: Vec::new(),
                baked: None,
            };
            gaussians.push(finish_gaussian(g, deg, init));
            z += params.trunk_spacing;
        }

        let crown: f32 = rng.gen_range(params.canopy_radius[0]..=params.canopy_radius[1]);
        let center = [pos[0], pos[1], height + 0.4 * crown];
        let blobs = rng.gen_range(params.canopy_blobs[0]..=params.canopy_blobs[1]);
        for _ in 0..blobs {
            // rejection sample inside an oblate ellipsoid
            let off = loop {
                let v: [f32; 3] = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                if v.iter().map(|c| c * c).sum::<f32>() <= 1.0 {
                    break v;
                }
            };
            let mean = [
                (center[0] + off[0] * crown).clamp(x0, x1),
                (center[1] + off[1] * crown).clamp(y0, y1),
                center[2] + off[2] * 0.7 * crown,
            ];
            let s: f32 = rng.gen_range(0.35..0.6);
            let filler = rng.gen_bool(0.1);
            let g = Gaussian {
                mean,
                rotation: random_quat(&mut rng),
                scale: [s, s, s],
                opacity: if filler {
                    rng.gen_range(0.05..0.25)
                } else {
                    rng.gen_range(0.6..0.95)
                },
                albedo: jitter_color(&mut rng, &params.canopy_palette),
                transfer: Vec::new(),
                baked: None,
            };
            gaussians.push(finish_gaussian(g, deg, init));
        }
    }

    let mut bounds = Aabb {
        min: [x0, y0, ground_z],
        max: [x1, y1, ground_z],
    };
    for g in &gaussians {
        bounds.grow(g.mean);
    }
    SceneModel::new(
        deg,
        gaussians,
        bounds,
        ground_z,
        SceneMetadata {
            name: format!("forest-{seed}-{}", params.n_trees),
            seed,
            version: SCENE_FORMAT_VERSION,
        },
    )
}

/// Trunk base positions of a generated forest (Gaussians whose center is the
/// lowest of a trunk stack).
pub fn trunk_positions(scene: &SceneModel, trunk_spacing: f32) -> Vec<[f32; 2]> {
    let first = 0.5 * trunk_spacing;
    scene
        .gaussians
        .iter()
        .filter(|g| g.mean[2] == first && g.scale[2] == trunk_spacing)
        .map(|g| [g.mean[0], g.mean[1]])
        .collect()
}
