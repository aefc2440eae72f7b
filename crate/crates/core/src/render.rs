//! CPU Gaussian-splat rasterizer.
//!
//! Gaussians are projected with a first-order (EWA) approximation, sorted
//! once by camera-space depth (index breaks ties), binned into 16×16 pixel
//! tiles and alpha-composited front to back per pixel.

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector3};
use rayon::prelude::*;

use crate::cubemap::{self, Face};
use crate::error::{Error, Result};
use crate::relight::{EnvLight, LightTransport};
use crate::scene::{Gaussian, SceneModel};
use crate::sh::{self, Direction};

const TILE: usize = 16;
/// Mahalanobis cutoff (3σ) for a footprint's support.
pub const FOOTPRINT_CUTOFF_SQ: f64 = 9.0;
/// Minimum eigenvalue of a projected 2D covariance, px².
pub const MIN_FOOTPRINT_VARIANCE: f64 = 0.3;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    Perspective,
    /// Cube-map face; the depth buffer stores distance along each pixel ray.
    ProbeFace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// World-from-camera rotation; columns are (right, down, forward).
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub kind: ProjectionKind,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        position: Vector3<f64>,
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        (width, height): (usize, usize),
        (near, far): (f64, f64),
        kind: ProjectionKind,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::input("focal lengths must be positive"));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::input("clip planes need 0 < near < far"));
        }
        if width == 0 || height == 0 {
            return Err(Error::input("image must be at least 1x1"));
        }
        Ok(Camera {
            rotation,
            position,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
            kind,
        })
    }

    /// Level camera looking along `yaw` (radians from +x), square pixels,
    /// principal point at the image center.
    pub fn from_pose(
        position: Vector3<f64>,
        yaw: f64,
        (width, height): (usize, usize),
        hfov_deg: f64,
    ) -> Result<Self> {
        Self::from_pose_with_offset(position, yaw, [0.0; 3], (width, height), hfov_deg)
    }

    /// As [`Camera::from_pose`], with an extra body-frame rotation given as
    /// `[roll, pitch, yaw]` in radians (x forward, y left, z up).
    pub fn from_pose_with_offset(
        position: Vector3<f64>,
        yaw: f64,
        offset_rpy: [f64; 3],
        (width, height): (usize, usize),
        hfov_deg: f64,
    ) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(Error::input("horizontal FOV must be in (0, 180) degrees"));
        }
        let body = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
            * Rotation3::from_euler_angles(offset_rpy[0], offset_rpy[1], offset_rpy[2]);
        let b = body.matrix();
        let forward: Vector3<f64> = b.column(0).into();
        let left: Vector3<f64> = b.column(1).into();
        let up: Vector3<f64> = b.column(2).into();
        let rotation = Matrix3::from_columns(&[-left, -up, forward]);
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Camera::new(
            rotation,
            position,
            (fx, fx, 0.5 * width as f64, 0.5 * height as f64),
            (width, height),
            (0.05, 1000.0),
            ProjectionKind::Perspective,
        )
    }

    /// 90° cube-map face camera centered at `center`.
    pub fn probe_face(center: Vector3<f64>, face: Face, res: usize, far: f64) -> Result<Self> {
        let f = 0.5 * res as f64;
        Camera::new(
            face.rotation(),
            center,
            (f, f, f, f),
            (res, res),
            (1e-3, far),
            ProjectionKind::ProbeFace,
        )
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.position)
    }

    /// Unit world-space ray through the center of pixel `(col, row)`.
    pub fn pixel_direction(&self, col: usize, row: usize) -> Vector3<f64> {
        let u = (col as f64 + 0.5 - self.cx) / self.fx;
        let v = (row as f64 + 0.5 - self.cy) / self.fy;
        (self.rotation * Vector3::new(u, v, 1.0)).normalize()
    }
}

/// Screen-space footprint of one projected Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub mean: [f64; 2],
    /// 2D covariance `(xx, xy, yy)` in px².
    pub cov: [f64; 3],
    /// Inverse covariance `(xx, xy, yy)`.
    pub conic: [f64; 3],
    /// Camera-space depth of the 3D mean.
    pub depth: f64,
    /// Inclusive pixel ranges touched by the 3σ support.
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

impl Footprint {
    /// `(Δᵀ Σ⁻¹ Δ)` at the center of pixel `(col, row)`.
    #[inline]
    pub fn mahalanobis_sq(&self, col: usize, row: usize) -> f64 {
        let dx = col as f64 + 0.5 - self.mean[0];
        let dy = row as f64 + 0.5 - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

fn clamp_eigenvalues(a: f64, b: f64, c: f64) -> [f64; 3] {
    let mid = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mid + r, mid - r);
    if l2 >= MIN_FOOTPRINT_VARIANCE {
        return [a, b, c];
    }
    let l1c = l1.max(MIN_FOOTPRINT_VARIANCE);
    let l2c = l2.max(MIN_FOOTPRINT_VARIANCE);
    // principal eigenvector
    let (vx, vy) = if b.abs() > 1e-300 {
        let (x, y) = (l1 - c, b);
        let n = (x * x + y * y).sqrt();
        (x / n, y / n)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    [
        l1c * vx * vx + l2c * vy * vy,
        (l1c - l2c) * vx * vy,
        l1c * vy * vy + l2c * vx * vx,
    ]
}

/// First-order projection of `g` into `cam`. `None` when the mean is
/// outside the clip range or the 3σ support misses every pixel.
pub fn project_gaussian(g: &Gaussian, cam: &Camera) -> Option<Footprint> {
    project_with_cov(&g.mean(), &g.covariance(), cam)
}

pub(crate) fn project_with_cov(
    mean: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    cam: &Camera,
) -> Option<Footprint> {
    let t = cam.to_camera(mean);
    if t.z <= cam.near || t.z > cam.far {
        return None;
    }
    let u = cam.fx * t.x / t.z + cam.cx;
    let v = cam.fy * t.y / t.z + cam.cy;

    // Keep the Jacobian bounded for means far outside the frustum.
    let lim_x = 1.3 * (cam.width as f64 * 0.5 / cam.fx).max(cam.cx.max(cam.width as f64 - cam.cx) / cam.fx);
    let lim_y = 1.3 * (cam.height as f64 * 0.5 / cam.fy).max(cam.cy.max(cam.height as f64 - cam.cy) / cam.fy);
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let iz = 1.0 / t.z;
    let j = Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * tx * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * ty * iz * iz,
    );
    let w = cam.rotation.transpose();
    let m = j * w;
    let cov2 = m * cov3 * m.transpose();
    let [a, b, c] = clamp_eigenvalues(cov2[(0, 0)], 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]), cov2[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !u.is_finite() || !v.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    // |Δ|² <= λmax · mahalanobis², so this radius bounds the 3σ support.
    let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = FOOTPRINT_CUTOFF_SQ.sqrt() * lmax.sqrt();
    let col_lo = (u - radius - 0.5).ceil().max(0.0);
    let col_hi = (u + radius - 0.5).floor().min(cam.width as f64 - 1.0);
    let row_lo = (v - radius - 0.5).ceil().max(0.0);
    let row_hi = (v + radius - 0.5).floor().min(cam.height as f64 - 1.0);
    if col_lo > col_hi || row_lo > row_hi {
        return None;
    }
    Some(Footprint {
        mean: [u, v],
        cov: [a, b, c],
        conic,
        depth: t.z,
        cols: (col_lo as usize, col_hi as usize),
        rows: (row_lo as usize, row_hi as usize),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    /// Linear RGB, row-major, unclamped.
    pub rgb: Vec<f64>,
    /// Composited depth; `+∞` where nothing contributed.
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FrameBuffer {
    pub fn pixel(&self, col: usize, row: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// 8-bit sRGB-ish encoding: clamp to [0, 1], gamma 2.2, round.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| encode_channel(v)).collect()
    }
}

#[inline]
pub fn encode_channel(v: f64) -> u8 {
    let c = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (c.powf(1.0 / 2.2) * 255.0).round() as u8
}

/// What fills pixels not fully covered by splats.
#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Constant([f64; 3]),
    /// Vertical gradient: `base · (0.55 + 0.45·max(0, elevation))` above
    /// the horizon, `0.55·base` below.
    Sky { base: [f64; 3] },
}

impl Background {
    pub const BAKED_DEFAULT: Background = Background::Constant([0.5, 0.5, 0.5]);

    /// Sky whose brightness follows the light's constant term.
    pub fn sky_from_light(light: &EnvLight) -> Background {
        let dc = |ch: usize| light.coeffs.channel(ch)[0] * sh::Y00;
        Background::Sky {
            base: [dc(0), dc(1), dc(2)],
        }
    }

    fn color(&self, dir: &Vector3<f64>) -> [f64; 3] {
        match self {
            Background::Constant(c) => *c,
            Background::Sky { base } => {
                let k = 0.55 + 0.45 * dir.z.max(0.0);
                [base[0] * k, base[1] * k, base[2] * k]
            }
        }
    }
}

/// How per-Gaussian colors are obtained.
pub enum Shading<'a> {
    /// View-dependent baked radiance, constant gray background.
    Baked,
    /// Relightable shading under `light`, sky background from its DC term.
    Relit {
        light: &'a EnvLight,
        transport: &'a LightTransport,
    },
}

pub fn render(scene: &SceneModel, cam: &Camera, shading: &Shading<'_>) -> Result<FrameBuffer> {
    match shading {
        Shading::Baked => {
            if !scene.has_baked() {
                return Err(Error::input("scene has no baked radiance"));
            }
            let degree = scene.degree();
            let colors: Vec<[f64; 3]> = scene
                .gaussians()
                .iter()
                .map(|g| {
                    let dir = Direction::normalize(g.mean() - cam.position)
                        .unwrap_or_else(|| Direction::from_spherical(0.0, 0.0));
                    let c = g.baked_sh(degree).expect("checked above").eval(dir);
                    [c[0], c[1], c[2]]
                })
                .collect();
            Ok(render_colors(scene, cam, &colors, &Background::BAKED_DEFAULT))
        }
        Shading::Relit { light, transport } => {
            let colors = transport.colors(light)?;
            Ok(render_colors(
                scene,
                cam,
                &colors,
                &Background::sky_from_light(light),
            ))
        }
    }
}

/// A projected Gaussian ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub index: usize,
    pub opacity: f64,
    pub footprint: Footprint,
}

/// Projects and sorts into compositing order.
pub fn project_sorted(scene: &SceneModel, cam: &Camera) -> Vec<Splat> {
    project_subset(scene, cam, None)
}

fn project_subset(scene: &SceneModel, cam: &Camera, subset: Option<&[usize]>) -> Vec<Splat> {
    let gs = scene.gaussians();
    let project = |i: usize| {
        project_gaussian(&gs[i], cam).map(|footprint| Splat {
            index: i,
            opacity: gs[i].opacity as f64,
            footprint,
        })
    };
    let mut fps: Vec<Splat> = match subset {
        Some(ids) => ids.iter().filter_map(|&i| project(i)).collect(),
        None if gs.len() > 4096 => (0..gs.len()).into_par_iter().filter_map(project).collect(),
        None => (0..gs.len()).filter_map(project).collect(),
    };
    fps.sort_by(|a, b| {
        a.footprint
            .depth
            .total_cmp(&b.footprint.depth)
            .then(a.index.cmp(&b.index))
    });
    fps
}

/// Renders with precomputed per-Gaussian colors.
pub fn render_colors(
    scene: &SceneModel,
    cam: &Camera,
    colors: &[[f64; 3]],
    background: &Background,
) -> FrameBuffer {
    assert_eq!(colors.len(), scene.gaussians().len());
    let sorted = project_sorted(scene, cam);
    rasterize(&sorted, cam, Some(colors), background)
}

/// Renders only the Gaussians listed in `subset` (any order).
pub fn render_subset(
    scene: &SceneModel,
    cam: &Camera,
    subset: &[usize],
    colors: &[[f64; 3]],
    background: &Background,
) -> FrameBuffer {
    let sorted = project_subset(scene, cam, Some(subset));
    rasterize(&sorted, cam, Some(colors), background)
}

struct TileOut {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rgb: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
}

pub fn rasterize(
    sorted: &[Splat],
    cam: &Camera,
    colors: Option<&[[f64; 3]]>,
    background: &Background,
) -> FrameBuffer {
    let (width, height) = (cam.width, cam.height);
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, fp) in sorted.iter().map(|s| &s.footprint).enumerate() {
        for ty in fp.rows.0 / TILE..=fp.rows.1 / TILE {
            for tx in fp.cols.0 / TILE..=fp.cols.1 / TILE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let shade_tile = |tile: usize| -> TileOut {
        let x0 = (tile % tiles_x) * TILE;
        let y0 = (tile / tiles_x) * TILE;
        let w = TILE.min(width - x0);
        let h = TILE.min(height - y0);
        let mut out = TileOut {
            x0,
            y0,
            w,
            h,
            rgb: vec![0.0; 3 * w * h],
            depth: vec![f64::INFINITY; w * h],
            alpha: vec![0.0; w * h],
        };
        let list = &bins[tile];
        for py in 0..h {
            for px in 0..w {
                let (col, row) = (x0 + px, y0 + py);
                let mut trans = 1.0;
                let mut acc = [0.0; 3];
                let mut acc_depth = 0.0;
                let mut acc_alpha = 0.0;
                for &k in list {
                    let splat = &sorted[k as usize];
                    let fp = &splat.footprint;
                    if col < fp.cols.0 || col > fp.cols.1 || row < fp.rows.0 || row > fp.rows.1 {
                        continue;
                    }
                    let q = fp.mahalanobis_sq(col, row);
                    if q > FOOTPRINT_CUTOFF_SQ {
                        continue;
                    }
                    let a = splat.opacity * (-0.5 * q).exp();
                    let wgt = a * trans;
                    if let Some(colors) = colors {
                        let c = colors[splat.index];
                        acc[0] += wgt * c[0];
                        acc[1] += wgt * c[1];
                        acc[2] += wgt * c[2];
                    }
                    acc_depth += wgt * fp.depth;
                    acc_alpha += wgt;
                    trans *= 1.0 - a;
                    if trans < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                let bg = background.color(&cam.pixel_direction(col, row));
                let i = py * w + px;
                out.rgb[3 * i] = acc[0] + trans * bg[0];
                out.rgb[3 * i + 1] = acc[1] + trans * bg[1];
                out.rgb[3 * i + 2] = acc[2] + trans * bg[2];
                out.alpha[i] = acc_alpha.clamp(0.0, 1.0);
                if acc_alpha > 0.0 {
                    let mut d = acc_depth / acc_alpha;
                    if cam.kind == ProjectionKind::ProbeFace {
                        let u = (col as f64 + 0.5 - cam.cx) / cam.fx;
                        let v = (row as f64 + 0.5 - cam.cy) / cam.fy;
                        d *= (u * u + v * v + 1.0).sqrt();
                    }
                    out.depth[i] = d;
                }
            }
        }
        out
    };
    let tiles: Vec<TileOut> = if width * height >= 4096 {
        (0..bins.len()).into_par_iter().map(shade_tile).collect()
    } else {
        (0..bins.len()).map(shade_tile).collect()
    };

    let mut fb = FrameBuffer {
        width,
        height,
        rgb: vec![0.0; 3 * width * height],
        depth: vec![f64::INFINITY; width * height],
        alpha: vec![0.0; width * height],
    };
    for t in tiles {
        for py in 0..t.h {
            let dst = (t.y0 + py) * width + t.x0;
            let src = py * t.w;
            fb.rgb[3 * dst..3 * (dst + t.w)].copy_from_slice(&t.rgb[3 * src..3 * (src + t.w)]);
            fb.depth[dst..dst + t.w].copy_from_slice(&t.depth[src..src + t.w]);
            fb.alpha[dst..dst + t.w].copy_from_slice(&t.alpha[src..src + t.w]);
        }
    }
    fb
}

/// Accumulated alpha a probe pixel needs before it counts as a surface hit.
pub const PROBE_HIT_ALPHA: f64 = 0.5;

/// Six cube-map depth maps around one probe, face order as in [`Face::ALL`].
#[derive(Clone, Debug, PartialEq)]
pub struct CubeDepth {
    pub res: usize,
    /// Row-major ray distances per face; `+∞` where no surface was hit.
    pub faces: [Vec<f64>; cubemap::FACE_COUNT],
}

/// Renders the six depth faces around `center`. Only Gaussians in `subset`
/// are considered when given; `far` bounds the depth range.
pub fn render_probe_faces(
    scene: &SceneModel,
    center: Vector3<f64>,
    res: usize,
    far: f64,
    subset: Option<&[usize]>,
) -> Result<CubeDepth> {
    if res < 8 {
        return Err(Error::input("probe face resolution must be at least 8"));
    }
    let mut faces: [Vec<f64>; cubemap::FACE_COUNT] = Default::default();
    for (slot, face) in faces.iter_mut().zip(Face::ALL) {
        let cam = Camera::probe_face(center, face, res, far)?;
        let sorted = project_subset(scene, &cam, subset);
        let fb = rasterize(&sorted, &cam, None, &Background::Constant([0.0; 3]));
        *slot = fb
            .depth
            .iter()
            .zip(&fb.alpha)
            .map(|(&d, &a)| if a >= PROBE_HIT_ALPHA { d } else { f64::INFINITY })
            .collect();
    }
    Ok(CubeDepth { res, faces })
}
