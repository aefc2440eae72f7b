//! Relightable shading.
//!
//! Each Gaussian's color is `ρ ⊙ Σ_m L^m · O^m · d^m`: a global SH light
//! `L`, an occlusion vector `O` interpolated from a probe grid, and the
//! Gaussian's own transfer vector `d`. The light can be edited (rotated about
//! +z, scaled, tinted) without touching geometry, which is what makes
//! photometric randomization cheap.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubemap::{self, Face, FACE_COUNT};
use crate::error::{Error, Result};
use crate::image_io::Panorama;
use crate::render::{self, CubeDepth};
use crate::scene::{self, SceneModel};
use crate::sh::{self, coeff_count, Direction, ShCoeffs};
use crate::world::SpatialIndex;

/// `B_00` of a probe that sees the whole sphere, `∫ Y_00 dΩ = 2√π`.
pub const FULL_SPHERE_DC: f64 = 2.0 * 1.772_453_850_905_516;

/// Global environment light, three channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvLight {
    pub coeffs: ShCoeffs,
    pub name: String,
}

impl EnvLight {
    pub fn new(coeffs: ShCoeffs, name: impl Into<String>) -> Result<Self> {
        if coeffs.channels() != 3 {
            return Err(Error::input("environment light needs three channels"));
        }
        Ok(EnvLight {
            coeffs,
            name: name.into(),
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.degree()
    }

    /// Uniform white radiance `radiance` from every direction.
    pub fn uniform(degree: usize, radiance: f64) -> Self {
        EnvLight {
            coeffs: ShCoeffs::constant(degree, 3, radiance * FULL_SPHERE_DC),
            name: "uniform".into(),
        }
    }

    /// Procedural daylight: sky gradient, dim ground and a soft sun lobe.
    pub fn default_sky(degree: usize) -> Self {
        let pano = sky_panorama(64, 128);
        let mut light = panorama_to_sh(&pano, degree).expect("generated panorama is valid");
        light.name = "default-sky".into();
        light
    }
}

/// Synthetic daylight panorama used as the scenes' original illumination.
pub fn sky_panorama(height: usize, width: usize) -> Panorama {
    let sun = Direction::from_spherical(50f64.to_radians(), 30f64.to_radians()).vector();
    let mut data = Vec::with_capacity(3 * width * height);
    for row in 0..height {
        for col in 0..width {
            let d = equirect_direction(col, row, width, height).vector();
            let rgb = if d.z >= 0.0 {
                let t = d.z;
                let sky = [
                    0.85 * (1.0 - t) + 0.45 * t,
                    0.88 * (1.0 - t) + 0.62 * t,
                    0.90 * (1.0 - t) + 0.95 * t,
                ];
                let s = d.dot(&sun).max(0.0).powi(32) * 6.0;
                [sky[0] + s, sky[1] + 0.95 * s, sky[2] + 0.85 * s]
            } else {
                [0.30, 0.28, 0.22]
            };
            data.extend(rgb.iter().map(|&v| v as f32));
        }
    }
    Panorama {
        width,
        height,
        data,
    }
}

/// Rotation, intensity and tint applied to a light, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightEdit {
    /// Rotation about +z, radians.
    pub rotation: f64,
    pub intensity: f64,
    pub tint: [f64; 3],
}

impl Default for LightEdit {
    fn default() -> Self {
        LightEdit::IDENTITY
    }
}

impl LightEdit {
    pub const IDENTITY: LightEdit = LightEdit {
        rotation: 0.0,
        intensity: 1.0,
        tint: [1.0, 1.0, 1.0],
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Named presets for the variant strip: original, overcast, dusk, morning.
    pub fn preset(name: &str) -> Option<LightEdit> {
        Some(match name {
            "original" => Self::IDENTITY,
            "overcast" => LightEdit {
                rotation: 0.0,
                intensity: 0.65,
                tint: [0.92, 0.96, 1.05],
            },
            "dusk" => LightEdit {
                rotation: 150f64.to_radians(),
                intensity: 0.4,
                tint: [0.85, 0.9, 1.15],
            },
            "morning" => LightEdit {
                rotation: -60f64.to_radians(),
                intensity: 1.15,
                tint: [1.15, 1.0, 0.82],
            },
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 4] = ["original", "overcast", "dusk", "morning"];
}

/// `tint ⊙ s · rotate_z(L, θ)`.
pub fn edit_light(light: &EnvLight, edit: &LightEdit) -> Result<EnvLight> {
    if !(edit.intensity >= 0.0) || !edit.intensity.is_finite() {
        return Err(Error::input(format!("intensity {} must be >= 0", edit.intensity)));
    }
    if edit.tint.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::input(format!("tint {:?} must be >= 0", edit.tint)));
    }
    if !edit.rotation.is_finite() {
        return Err(Error::input("rotation must be finite"));
    }
    if edit.is_identity() {
        return Ok(light.clone());
    }
    let mut c = light.coeffs.rotate_z(edit.rotation);
    for ch in 0..3 {
        let k = edit.intensity * edit.tint[ch];
        for v in c.channel_mut(ch) {
            *v *= k;
        }
    }
    Ok(EnvLight {
        coeffs: c,
        name: format!("{}+edit", light.name),
    })
}

/// Center direction of equirectangular pixel `(col, row)`: row 0 is the
/// zenith, column 0 starts at azimuth 0 and azimuth grows with the column.
pub fn equirect_direction(col: usize, row: usize, width: usize, height: usize) -> Direction {
    let theta = PI * (row as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (col as f64 + 0.5) / width as f64;
    Direction::from_spherical(theta, phi)
}

/// Projects an equirectangular radiance map onto SH. Each pixel is weighted
/// by the exact solid angle of its latitude band, so the weights sum to 4π.
pub fn panorama_to_sh(pano: &Panorama, degree: usize) -> Result<EnvLight> {
    sh::check_degree(degree)?;
    if pano.height == 0 || pano.width != 2 * pano.height {
        return Err(Error::input(format!(
            "panorama must be 2:1, got {}x{}",
            pano.width, pano.height
        )));
    }
    if let Some(v) = pano.data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::input(format!("panorama pixel value {v} is negative or non-finite")));
    }
    let (w, h) = (pano.width, pano.height);
    let k = coeff_count(degree);
    let mut acc = vec![[0.0f64; 3]; k];
    let mut basis = vec![0.0; k];
    for row in 0..h {
        let t0 = PI * row as f64 / h as f64;
        let t1 = PI * (row + 1) as f64 / h as f64;
        let d_omega = 2.0 * PI / w as f64 * (t0.cos() - t1.cos());
        for col in 0..w {
            let d = equirect_direction(col, row, w, h).vector();
            sh::basis_into(degree, d.x, d.y, d.z, &mut basis);
            let px = &pano.data[3 * (row * w + col)..3 * (row * w + col) + 3];
            for (a, y) in acc.iter_mut().zip(&basis) {
                for ch in 0..3 {
                    a[ch] += px[ch] as f64 * y * d_omega;
                }
            }
        }
    }
    let mut data = vec![0.0; 3 * k];
    for ch in 0..3 {
        for i in 0..k {
            data[ch * k + i] = acc[i][ch];
        }
    }
    EnvLight::new(ShCoeffs::from_vec(degree, 3, data)?, "panorama")
}

/// Literal shading product `ρ ⊙ Σ_m L^m O^m d^m`, unclamped.
pub fn shade(albedo: [f64; 3], light: &EnvLight, occlusion: &ShCoeffs, transfer: &ShCoeffs) -> Result<[f64; 3]> {
    let deg = light.degree();
    for other in [occlusion.degree(), transfer.degree()] {
        if other != deg {
            return Err(Error::DegreeMismatch {
                left: deg,
                right: other,
            });
        }
    }
    if occlusion.channels() != 1 || transfer.channels() != 1 {
        return Err(Error::input("occlusion and transfer are single-channel"));
    }
    let o = occlusion.channel(0);
    let d = transfer.channel(0);
    let mut out = [0.0; 3];
    for (ch, slot) in out.iter_mut().enumerate() {
        let l = light.coeffs.channel(ch);
        let s: f64 = (0..l.len()).map(|m| l[m] * o[m] * d[m]).sum();
        *slot = albedo[ch] * s;
    }
    Ok(out)
}

/// Constant factors applied to the three shading inputs. The defaults make
/// a white Lambertian splat under unit uniform radiance with full visibility
/// come out as 1: the occlusion factor maps full visibility to `O_00 = 1`
/// and the transfer factor is the Lambertian `1/π`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadingNorm {
    pub light: f64,
    pub occlusion: f64,
    pub transfer: f64,
}

impl Default for ShadingNorm {
    fn default() -> Self {
        ShadingNorm {
            light: 1.0,
            occlusion: sh::Y00,
            transfer: 1.0 / PI,
        }
    }
}

/// Per-Gaussian `O ⊙ d` products, cached for a fixed scene and field so a
/// new light only costs one dot product per Gaussian.
#[derive(Clone, Debug)]
pub struct LightTransport {
    degree: usize,
    albedo: Vec<[f64; 3]>,
    /// `n × k`, already scaled by the normalization factors.
    products: Vec<f64>,
}

impl LightTransport {
    pub fn new(scene: &SceneModel, field: &OcclusionField, norm: &ShadingNorm) -> Result<Self> {
        if field.degree != scene.degree() {
            return Err(Error::DegreeMismatch {
                left: scene.degree(),
                right: field.degree,
            });
        }
        Ok(Self::build(scene, norm, |g| {
            interpolate_occlusion(field, &g.mean(), Some(g.normal()))
        }))
    }

    /// Transport with full visibility everywhere.
    pub fn unoccluded(scene: &SceneModel, norm: &ShadingNorm) -> Self {
        let full = ShCoeffs::constant(scene.degree(), 1, FULL_SPHERE_DC);
        Self::build(scene, norm, |_| full.clone())
    }

    fn build(scene: &SceneModel, norm: &ShadingNorm, occ: impl Fn(&scene::Gaussian) -> ShCoeffs + Sync) -> Self {
        let degree = scene.degree();
        let k = coeff_count(degree);
        let scale = norm.light * norm.occlusion * norm.transfer;
        let rows: Vec<Vec<f64>> = scene
            .gaussians()
            .par_iter()
            .map(|g| {
                let o = occ(g);
                o.channel(0)
                    .iter()
                    .zip(&g.transfer)
                    .map(|(o, d)| scale * o * *d as f64)
                    .collect()
            })
            .collect();
        let mut products = Vec::with_capacity(rows.len() * k);
        for r in rows {
            products.extend(r);
        }
        LightTransport {
            degree,
            albedo: scene
                .gaussians()
                .iter()
                .map(|g| g.albedo.map(|a| a as f64))
                .collect(),
            products,
        }
    }

    pub fn len(&self) -> usize {
        self.albedo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.albedo.is_empty()
    }

    /// Scaled `O ⊙ d` for Gaussian `i`.
    pub fn product(&self, i: usize) -> &[f64] {
        let k = coeff_count(self.degree);
        &self.products[i * k..(i + 1) * k]
    }

    /// Shaded color of every Gaussian under `light`.
    pub fn colors(&self, light: &EnvLight) -> Result<Vec<[f64; 3]>> {
        if light.degree() != self.degree {
            return Err(Error::DegreeMismatch {
                left: self.degree,
                right: light.degree(),
            });
        }
        let l = [
            light.coeffs.channel(0),
            light.coeffs.channel(1),
            light.coeffs.channel(2),
        ];
        Ok((0..self.len())
            .map(|i| {
                let p = self.product(i);
                let rho = self.albedo[i];
                let mut c = [0.0; 3];
                for ch in 0..3 {
                    let s: f64 = l[ch].iter().zip(p).map(|(a, b)| a * b).sum();
                    c[ch] = rho[ch] * s;
                }
                c
            })
            .collect())
    }
}

/// Per-face binary visibility, `1` = visible.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMaps {
    pub res: usize,
    pub faces: [Vec<u8>; FACE_COUNT],
}

/// `V = 0` where depth `< d_thresh`, `1` otherwise (`+∞` is visible).
pub fn probe_visibility(depth: &CubeDepth, d_thresh: f64) -> VisibilityMaps {
    let faces = depth
        .faces
        .clone()
        .map(|f| f.iter().map(|&d| u8::from(!(d < d_thresh))).collect());
    VisibilityMaps {
        res: depth.res,
        faces,
    }
}

/// Precomputed `Y_lm(ω_x) ΔΩ_x` for every cube-map pixel.
#[derive(Clone, Debug)]
pub struct CubeProjector {
    res: usize,
    degree: usize,
    weights: Vec<f64>,
}

impl CubeProjector {
    pub fn new(res: usize, degree: usize) -> Self {
        let k = coeff_count(degree);
        let solid = cubemap::solid_angle_table(res);
        let mut weights = Vec::with_capacity(FACE_COUNT * res * res * k);
        let mut basis = vec![0.0; k];
        for face in Face::ALL {
            for row in 0..res {
                for col in 0..res {
                    let d = cubemap::pixel_ray(face, col, row, res).normalize();
                    sh::basis_into(degree, d.x, d.y, d.z, &mut basis);
                    let w = solid[row * res + col];
                    weights.extend(basis.iter().map(|y| y * w));
                }
            }
        }
        CubeProjector {
            res,
            degree,
            weights,
        }
    }

    /// `B^lm = Σ_f Σ_x V(x) Y_lm(ω_x) ΔΩ_x`.
    pub fn project(&self, vis: &VisibilityMaps) -> Result<ShCoeffs> {
        if vis.res != self.res || vis.faces.iter().any(|f| f.len() != self.res * self.res) {
            return Err(Error::input("visibility maps do not match projector resolution"));
        }
        let k = coeff_count(self.degree);
        let mut out = vec![0.0; k];
        let px = self.res * self.res;
        for (fi, face) in vis.faces.iter().enumerate() {
            for (p, &v) in face.iter().enumerate() {
                if v != 0 {
                    let w = &self.weights[(fi * px + p) * k..(fi * px + p + 1) * k];
                    for (o, wi) in out.iter_mut().zip(w) {
                        *o += wi;
                    }
                }
            }
        }
        ShCoeffs::from_vec(self.degree, 1, out)
    }
}

pub fn project_visibility_sh(vis: &VisibilityMaps, degree: usize) -> Result<ShCoeffs> {
    sh::check_degree(degree)?;
    CubeProjector::new(vis.res, degree).project(vis)
}

/// Regular probe lattice: node `(i, j, k)` sits at `origin + cell·(i, j, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub cell: f64,
    pub dims: [usize; 3],
}

/// Upper bound on probes per field.
pub const MAX_GRID_NODES: usize = 1 << 24;

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0 && self.cell.is_finite()) {
            return Err(Error::input("grid cell size must be positive"));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::input("grid needs at least 2 nodes per axis"));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("grid origin must be finite"));
        }
        match self.dims.iter().try_fold(1usize, |n, &d| n.checked_mul(d)) {
            Some(n) if n <= MAX_GRID_NODES => Ok(()),
            _ => Err(Error::input(format!("grid {:?} exceeds {MAX_GRID_NODES} probes", self.dims))),
        }
    }

    /// Covers the scene's horizontal bounds and `z_range`.
    pub fn covering(scene: &SceneModel, cell: f64, z_range: [f64; 2]) -> Result<Self> {
        let b = scene.bounds();
        let lo = [b.min[0] as f64, b.min[1] as f64, z_range[0]];
        let hi = [b.max[0] as f64, b.max[1] as f64, z_range[1]];
        Self::spanning(lo, hi, cell)
    }

    pub fn spanning(lo: [f64; 3], hi: [f64; 3], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::input("grid cell size must be positive"));
        }
        if (0..3).any(|a| !(hi[a] >= lo[a]) || !(hi[a] - lo[a]).is_finite()) {
            return Err(Error::input(format!("grid range {lo:?}..{hi:?} is empty or not finite")));
        }
        if (0..3).any(|a| (hi[a] - lo[a]) / cell > MAX_GRID_NODES as f64) {
            return Err(Error::input(format!("grid exceeds {MAX_GRID_NODES} probes")));
        }
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).ceil().max(0.0) as usize + 1).max(2));
        let g = GridSpec {
            origin: lo,
            cell,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.cell * i as f64,
            self.origin[1] + self.cell * j as f64,
            self.origin[2] + self.cell * k as f64,
        )
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + 0.5 * self.cell * (self.dims[0] - 1) as f64,
            self.origin[1] + 0.5 * self.cell * (self.dims[1] - 1) as f64,
            self.origin[2] + 0.5 * self.cell * (self.dims[2] - 1) as f64,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldParams {
    pub d_thresh: f64,
    pub face_res: usize,
    /// Far clip of the probe faces, meters.
    pub probe_range: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            d_thresh: 0.3,
            face_res: 32,
            probe_range: 2.0,
        }
    }
}

/// Grid of per-probe visibility SH.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionField {
    pub grid: GridSpec,
    pub degree: usize,
    pub params: FieldParams,
    /// Node-major coefficients, `node_count × (degree+1)²`.
    coeffs: Vec<f32>,
}

impl OcclusionField {
    pub fn from_nodes(grid: GridSpec, degree: usize, params: FieldParams, coeffs: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        sh::check_degree(degree)?;
        let k = coeff_count(degree);
        if coeffs.len() != grid.node_count() * k {
            return Err(Error::input(format!(
                "expected {} field coefficients, got {}",
                grid.node_count() * k,
                coeffs.len()
            )));
        }
        for (n, node) in coeffs.chunks(k).enumerate() {
            if node.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("probe {n} has non-finite coefficients")));
            }
            let dc = node[0] as f64;
            if !(-1e-6..=FULL_SPHERE_DC + 1e-6).contains(&dc) {
                return Err(Error::input(format!("probe {n} DC {dc} outside [0, 2√π]")));
            }
        }
        Ok(OcclusionField {
            grid,
            degree,
            params,
            coeffs,
        })
    }

    /// Every node holds `b`.
    pub fn uniform(grid: GridSpec, b: &ShCoeffs, params: FieldParams) -> Result<Self> {
        let node: Vec<f32> = b.channel(0).iter().map(|&v| v as f32).collect();
        let coeffs = node.iter().copied().cycle().take(node.len() * grid.node_count()).collect();
        Self::from_nodes(grid, b.degree(), params, coeffs)
    }

    pub fn node(&self, index: usize) -> &[f32] {
        let k = coeff_count(self.degree);
        &self.coeffs[index * k..(index + 1) * k]
    }

    pub fn node_sh(&self, index: usize) -> ShCoeffs {
        ShCoeffs::from_vec(self.degree, 1, self.node(index).iter().map(|&v| v as f64).collect())
            .expect("validated on construction")
    }

    pub fn raw(&self) -> &[f32] {
        &self.coeffs
    }
}

/// Builds the field by rendering cube-map depth around every node,
/// thresholding and projecting. Probes are independent and run in parallel.
pub fn build_occlusion_field(
    scene: &SceneModel,
    grid: GridSpec,
    params: FieldParams,
) -> Result<OcclusionField> {
    grid.validate()?;
    if !(params.d_thresh > 0.0) || !(params.probe_range > 0.0) {
        return Err(Error::input("d_thresh and probe_range must be positive"));
    }
    let degree = scene.degree();
    let projector = CubeProjector::new(params.face_res, degree);
    let index = SpatialIndex::build(scene.gaussians().iter().map(|g| g.mean()).collect());
    // A face's far plane bounds z-depth, so corners reach √3 farther.
    let reach = params.probe_range * 3f64.sqrt();
    let (nx, ny) = (grid.dims[0], grid.dims[1]);
    let nodes: Vec<Result<Vec<f32>>> = (0..grid.node_count())
        .into_par_iter()
        .map(|n| {
            let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
            let q = grid.node_position(i, j, k);
            let near = index.query_radius(&q, reach);
            let cube = render::render_probe_faces(scene, q, params.face_res, params.probe_range, Some(&near))?;
            let vis = probe_visibility(&cube, params.d_thresh);
            let b = projector.project(&vis)?;
            Ok(b.channel(0).iter().map(|&v| v as f32).collect())
        })
        .collect();
    let mut coeffs = Vec::with_capacity(grid.node_count() * coeff_count(degree));
    for n in nodes {
        coeffs.extend(n?);
    }
    OcclusionField::from_nodes(grid, degree, params, coeffs)
}

/// Trilinear interpolation over the eight surrounding probes with the
/// back-face mask `(q_k - μ)·n >= 0`. Weights are renormalized over the
/// surviving probes; when none survive the unmasked trilinear value is used.
/// Points outside the grid are clamped onto it.
pub fn interpolate_occlusion(field: &OcclusionField, mu: &Vector3<f64>, normal: Option<Direction>) -> ShCoeffs {
    let g = &field.grid;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let t = ((mu[a] - g.origin[a]) / g.cell).clamp(0.0, (g.dims[a] - 1) as f64);
        let i = (t.floor() as usize).min(g.dims[a] - 2);
        base[a] = i;
        frac[a] = t - i as f64;
    }
    let k = coeff_count(field.degree);
    let mut masked = vec![0.0; k];
    let mut plain = vec![0.0; k];
    let mut masked_w = 0.0;
    for corner in 0..8 {
        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let w: f64 = (0..3)
            .map(|a| if d[a] == 1 { frac[a] } else { 1.0 - frac[a] })
            .product();
        let (i, j, kk) = (base[0] + d[0], base[1] + d[1], base[2] + d[2]);
        let node = field.node(g.node_index(i, j, kk));
        let keep = normal.map_or(true, |n| (g.node_position(i, j, kk) - mu).dot(&n.vector()) >= 0.0);
        for m in 0..k {
            plain[m] += w * node[m] as f64;
        }
        if keep && w > 0.0 {
            masked_w += w;
            for m in 0..k {
                masked[m] += w * node[m] as f64;
            }
        }
    }
    let out = if masked_w > 0.0 {
        masked.iter().map(|v| v / masked_w).collect()
    } else {
        plain
    };
    ShCoeffs::from_vec(field.degree, 1, out).expect("finite by construction")
}

const FIELD_MAGIC: &str = "splatnav-occlusion";
pub const FIELD_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    version: u32,
    degree: usize,
    grid: GridSpec,
    params: FieldParams,
    nodes: usize,
}

pub fn encode_field(field: &OcclusionField) -> Result<Vec<u8>> {
    let header = FieldHeader {
        format: FIELD_MAGIC.into(),
        version: FIELD_FORMAT_VERSION,
        degree: field.degree,
        grid: field.grid,
        params: field.params,
        nodes: field.grid.node_count(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for v in &field.coeffs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<OcclusionField> {
    let (h, body, base): (FieldHeader, _, _) = scene::split_header(bytes)?;
    if h.format != FIELD_MAGIC {
        return Err(Error::parse_at(0, format!("not an occlusion field (format {:?})", h.format)));
    }
    if h.version != FIELD_FORMAT_VERSION {
        return Err(Error::Version {
            found: h.version,
            expected: FIELD_FORMAT_VERSION,
        });
    }
    sh::check_degree(h.degree)?;
    if h.nodes != h.grid.node_count() {
        return Err(Error::parse_at(0, "node count disagrees with grid dims"));
    }
    let mut r = scene::F32Reader::new(body, base);
    let coeffs = r.take(h.nodes * coeff_count(h.degree), "probe")?;
    r.finish()?;
    OcclusionField::from_nodes(h.grid, h.degree, h.params, coeffs)
}

pub fn save_field(field: &OcclusionField, path: &Path) -> Result<()> {
    scene::write_atomically(path, &encode_field(field)?)
}

pub fn load_field(path: &Path) -> Result<OcclusionField> {
    let bytes = std::fs::read(path)?;
    decode_field(&bytes).map_err(|e| e.with_path(path))
}

/// Light description accepted by the CLI and config files: an edit of the
/// base light, uniform white radiance, or a panorama to project.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LightSpec {
    Panorama { panorama: std::path::PathBuf },
    Uniform { uniform: f64 },
    Edit(EditSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSpec {
    pub rotation_deg: f64,
    pub intensity: f64,
    pub tint: [f64; 3],
}

impl Default for EditSpec {
    fn default() -> Self {
        EditSpec {
            rotation_deg: 0.0,
            intensity: 1.0,
            tint: [1.0; 3],
        }
    }
}

impl EditSpec {
    pub fn to_edit(&self) -> LightEdit {
        LightEdit {
            rotation: self.rotation_deg.to_radians(),
            intensity: self.intensity,
            tint: self.tint,
        }
    }
}

impl LightSpec {
    /// Resolves against `base`; relative panorama paths resolve against `dir`.
    pub fn resolve(&self, base: &EnvLight, dir: Option<&Path>) -> Result<EnvLight> {
        match self {
            LightSpec::Panorama { panorama } => {
                let p = match dir {
                    Some(d) if panorama.is_relative() => d.join(panorama),
                    _ => panorama.clone(),
                };
                let pano = crate::image_io::read_pfm_panorama(&p)?;
                panorama_to_sh(&pano, base.degree())
            }
            LightSpec::Uniform { uniform } => {
                if !(*uniform >= 0.0 && uniform.is_finite()) {
                    return Err(Error::input(format!("uniform radiance {uniform} must be >= 0")));
                }
                Ok(EnvLight::uniform(base.degree(), *uniform))
            }
            LightSpec::Edit(e) => edit_light(base, &e.to_edit()),
        }
    }
}
