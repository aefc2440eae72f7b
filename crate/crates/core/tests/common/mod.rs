//! Test-side reference implementations. Nothing here calls into the code
//! it is used to check beyond plain data access.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatnav_core::relight::{
    build_occlusion_field, edit_light, EnvLight, FieldParams, GridSpec, LightEdit, LightTransport, OcclusionField,
    ShadingNorm,
};
use splatnav_core::render::{render, Camera, Shading};
use splatnav_core::scene::{Aabb, Gaussian, SceneMetadata, SceneModel};

pub const CUTOFF_SQ: f64 = 9.0;
pub const MIN_VAR: f64 = 0.3;
pub const MIN_T: f64 = 1e-4;

pub fn meta() -> SceneMetadata {
    SceneMetadata {
        name: "oracle".into(),
        seed: 0,
        version: 1,
    }
}

pub fn scene_of(degree: usize, gs: Vec<Gaussian>) -> SceneModel {
    SceneModel::new(
        degree,
        gs,
        Aabb {
            min: [-1000.0; 3],
            max: [1000.0; 3],
        },
        0.0,
        meta(),
    )
    .unwrap()
}

pub fn splat(mean: [f32; 3], scale: [f32; 3], rotation: [f32; 4], opacity: f32, degree: usize) -> Gaussian {
    let k = (degree + 1) * (degree + 1);
    let mut transfer = vec![0.0; k];
    transfer[0] = 1.0;
    Gaussian {
        mean,
        rotation,
        scale,
        opacity,
        albedo: [0.5; 3],
        transfer,
        baked: None,
    }
}

/// Up to `max_n` Gaussians scattered in front of a +x-facing camera at the origin.
pub fn random_scene(seed: u64, max_n: usize) -> (SceneModel, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let mut gs = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen_range(1.0..8.0f32);
        let spread = 0.9 * x;
        let q = UnitQuaternion::from_euler_angles(
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-3.1..3.1),
        );
        let c = q.quaternion().coords;
        gs.push(splat(
            [x, rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)],
            [
                rng.gen_range(0.02..0.6),
                rng.gen_range(0.02..0.6),
                rng.gen_range(0.02..0.6),
            ],
            [c.w as f32, c.x as f32, c.y as f32, c.z as f32],
            rng.gen_range(0.05..1.0),
            2,
        ));
        colors.push([rng.gen(), rng.gen(), rng.gen()]);
    }
    (scene_of(2, gs), colors)
}

fn world_cov(g: &Gaussian) -> Matrix3<f64> {
    let [w, x, y, z] = g.rotation.map(|v| v as f64);
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
    let r = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::from(g.scale.map(|v| (v as f64) * (v as f64))));
    r * s * r.transpose()
}

/// Projected mean, inverse 2D covariance and depth, or `None` when culled.
pub fn project(g: &Gaussian, cam: &Camera) -> Option<(Vector2<f64>, Matrix2<f64>, f64)> {
    let mean = Vector3::from(g.mean.map(|v| v as f64));
    let t = cam.rotation.transpose() * (mean - cam.position);
    if t.z <= cam.near || t.z > cam.far {
        return None;
    }
    let lim_x = 1.3 * (cam.width as f64 * 0.5 / cam.fx).max(cam.cx.max(cam.width as f64 - cam.cx) / cam.fx);
    let lim_y = 1.3 * (cam.height as f64 * 0.5 / cam.fy).max(cam.cy.max(cam.height as f64 - cam.cy) / cam.fy);
    let xz = (t.x / t.z).clamp(-lim_x, lim_x);
    let yz = (t.y / t.z).clamp(-lim_y, lim_y);
    let jac = nalgebra::Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * xz / t.z,
        0.0,
        cam.fy / t.z,
        -cam.fy * yz / t.z,
    ) * cam.rotation.transpose();
    let cov = jac * world_cov(g) * jac.transpose();
    let cov = 0.5 * (cov + cov.transpose());
    let eig = SymmetricEigen::new(cov);
    let clamped = eig.eigenvalues.map(|l| l.max(MIN_VAR));
    let cov = eig.eigenvectors * Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let inv = cov.try_inverse()?;
    let uv = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    Some((uv, inv, t.z))
}

/// Per-pixel front-to-back compositing over every Gaussian, no tiles.
/// Returns linear RGB over a black background plus final transmittance.
pub fn brute_force_render(scene: &SceneModel, cam: &Camera, colors: &[[f64; 3]]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<(usize, Vector2<f64>, Matrix2<f64>, f64)> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, cam).map(|(m, c, d)| (i, m, c, d)))
        .collect();
    order.sort_by(|a, b| a.3.partial_cmp(&b.3).unwrap().then(a.0.cmp(&b.0)));
    let mut rgb = vec![0.0; 3 * cam.width * cam.height];
    let mut trans_out = vec![1.0; cam.width * cam.height];
    for row in 0..cam.height {
        for col in 0..cam.width {
            let p = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for (i, m, inv, _) in &order {
                let d = p - m;
                let q = (d.transpose() * inv * d)[(0, 0)];
                if q > CUTOFF_SQ {
                    continue;
                }
                let a = scene.gaussians()[*i].opacity as f64 * (-0.5 * q).exp();
                for ch in 0..3 {
                    acc[ch] += t * a * colors[*i][ch];
                }
                t *= 1.0 - a;
                if t < MIN_T {
                    break;
                }
            }
            let px = row * cam.width + col;
            rgb[3 * px..3 * px + 3].copy_from_slice(&acc);
            trans_out[px] = t;
        }
    }
    (rgb, trans_out)
}

/// Plain trilinear interpolation of the node coefficients, clamped to the grid.
pub fn trilinear(field: &OcclusionField, p: &Vector3<f64>) -> Vec<f64> {
    let g = &field.grid;
    let k = (field.degree + 1) * (field.degree + 1);
    let mut out = vec![0.0; k];
    let mut idx = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let x = ((p[a] - g.origin[a]) / g.cell).max(0.0).min((g.dims[a] - 1) as f64);
        let i = (x.floor() as usize).min(g.dims[a] - 2);
        idx[a] = i;
        f[a] = x - i as f64;
    }
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                let n = ((idx[2] + dz) * g.dims[1] + idx[1] + dy) * g.dims[0] + idx[0] + dx;
                for (o, v) in out.iter_mut().zip(field.node(n)) {
                    *o += w * *v as f64;
                }
            }
        }
    }
    out
}

/// Monte-Carlo `∫ V(ω) Y_00 dΩ` where every direction with `z < z_edge`
/// is blocked.
pub fn mc_cap_dc(z_edge: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y00 = 0.5 / std::f64::consts::PI.sqrt();
    let visible = (0..samples).filter(|_| rng.gen_range(-1.0..1.0) >= z_edge).count();
    4.0 * std::f64::consts::PI * y00 * visible as f64 / samples as f64
}

/// Opaque face-on splats tiling the lower hemisphere of radius `radius`
/// around the origin, rings `step` radians apart. The rim ring sits low
/// enough that its half-opacity contour lands on the horizon.
pub fn lower_dome(radius: f64, step: f64, degree: usize) -> Vec<Gaussian> {
    let sigma = 0.6 * step * radius;
    let rim = (2.0 * std::f64::consts::LN_2).sqrt() * sigma / radius;
    let mut gs = Vec::new();
    let mut e = -rim;
    while e > -std::f64::consts::FRAC_PI_2 {
        let n = ((std::f64::consts::TAU * e.cos() / step).ceil() as usize).max(1);
        for k in 0..n {
            let phi = std::f64::consts::TAU * k as f64 / n as f64;
            let dir = Vector3::new(e.cos() * phi.cos(), e.cos() * phi.sin(), e.sin());
            let q = UnitQuaternion::rotation_between(&Vector3::z(), &dir)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            let c = q.quaternion().coords;
            let m = dir * radius;
            gs.push(splat(
                [m.x as f32, m.y as f32, m.z as f32],
                [sigma as f32, sigma as f32, 0.005],
                [c.w as f32, c.x as f32, c.y as f32, c.z as f32],
                1.0,
                degree,
            ));
        }
        e -= step;
    }
    gs.push(splat([0.0, 0.0, -radius as f32], [sigma as f32, sigma as f32, 0.005], [1.0, 0.0, 0.0, 0.0], 1.0, degree));
    gs
}

/// Quarter turn about +z by -90°: `(x, y, z) -> (y, -x, z)`. Exact in f32.
pub fn quarter_turn_scene(scene: &SceneModel) -> SceneModel {
    let qz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -std::f64::consts::FRAC_PI_2);
    let degree = scene.degree();
    scene
        .map_gaussians(|g| {
            let [w, x, y, z] = g.rotation.map(|v| v as f64);
            let q = qz * UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
            let c = q.quaternion().coords;
            let turn = |v: &[f32]| -> Vec<f32> {
                let sh = splatnav_core::sh::ShCoeffs::from_vec(
                    degree,
                    v.len() / (degree + 1).pow(2),
                    v.iter().map(|&x| x as f64).collect(),
                )
                .unwrap();
                sh.rotate_z(-std::f64::consts::FRAC_PI_2)
                    .as_slice()
                    .iter()
                    .map(|&x| x as f32)
                    .collect()
            };
            Gaussian {
                mean: [g.mean[1], -g.mean[0], g.mean[2]],
                rotation: [c.w as f32, c.x as f32, c.y as f32, c.z as f32],
                transfer: turn(&g.transfer),
                baked: g.baked.as_deref().map(turn),
                ..g.clone()
            }
        })
        .unwrap()
}

pub fn quarter_turn_grid(g: GridSpec) -> GridSpec {
    GridSpec {
        origin: [
            g.origin[1],
            -g.origin[0] - g.cell * (g.dims[0] - 1) as f64,
            g.origin[2],
        ],
        cell: g.cell,
        dims: [g.dims[1], g.dims[0], g.dims[2]],
    }
}

/// Mean absolute 8-bit difference (as a fraction of 255) between rotating
/// the light by +90° and rotating scene, camera and probe grid by -90°.
pub fn rotation_consistency(
    scene: &SceneModel,
    grid: GridSpec,
    params: FieldParams,
    light: &EnvLight,
    cam_pos: Vector3<f64>,
    yaw: f64,
    size: (usize, usize),
) -> f64 {
    let norm = ShadingNorm::default();
    let field = build_occlusion_field(scene, grid, params).unwrap();
    let transport = LightTransport::new(scene, &field, &norm).unwrap();
    let turned_light = edit_light(
        light,
        &LightEdit {
            rotation: std::f64::consts::FRAC_PI_2,
            ..LightEdit::IDENTITY
        },
    )
    .unwrap();
    let cam = Camera::from_pose(cam_pos, yaw, size, 90.0).unwrap();
    let a = render(scene, &cam, &Shading::Relit { light: &turned_light, transport: &transport }).unwrap();

    let scene_b = quarter_turn_scene(scene);
    let field_b = build_occlusion_field(&scene_b, quarter_turn_grid(grid), params).unwrap();
    let transport_b = LightTransport::new(&scene_b, &field_b, &norm).unwrap();
    let cam_b = Camera::from_pose(
        Vector3::new(cam_pos.y, -cam_pos.x, cam_pos.z),
        yaw - std::f64::consts::FRAC_PI_2,
        size,
        90.0,
    )
    .unwrap();
    let b = render(&scene_b, &cam_b, &Shading::Relit { light, transport: &transport_b }).unwrap();
    let (qa, qb) = (a.to_rgb8(), b.to_rgb8());
    let total: f64 = qa.iter().zip(&qb).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    total / qa.len() as f64 / 255.0
}
