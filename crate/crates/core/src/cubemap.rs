//! Cube-map face geometry shared by the probe renderer and the visibility
//! projection.
//!
//! Face order is `+X, -X, +Y, -Y, +Z, -Z`. Each face is a 90° pinhole view
//! whose camera frame is (right, down, forward); pixel `(col, row)` looks
//! along `forward + u * right + v * down` with `u, v ∈ (-1, 1)` taken at the
//! pixel center.

use nalgebra::{Matrix3, Vector3};

pub const FACE_COUNT: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; FACE_COUNT] = [
        Face::PosX,
        Face::NegX,
        Face::PosY,
        Face::NegY,
        Face::PosZ,
        Face::NegZ,
    ];

    pub fn forward(self) -> Vector3<f64> {
        match self {
            Face::PosX => Vector3::x(),
            Face::NegX => -Vector3::x(),
            Face::PosY => Vector3::y(),
            Face::NegY => -Vector3::y(),
            Face::PosZ => Vector3::z(),
            Face::NegZ => -Vector3::z(),
        }
    }

    fn down(self) -> Vector3<f64> {
        match self {
            Face::PosZ | Face::NegZ => Vector3::y(),
            _ => -Vector3::z(),
        }
    }

    /// World-from-camera rotation with columns (right, down, forward).
    pub fn rotation(self) -> Matrix3<f64> {
        let f = self.forward();
        let d = self.down();
        let r = d.cross(&f);
        Matrix3::from_columns(&[r, d, f])
    }
}

/// Face-plane coordinate of a pixel center, in (-1, 1).
#[inline]
pub fn pixel_coord(index: usize, res: usize) -> f64 {
    2.0 * (index as f64 + 0.5) / res as f64 - 1.0
}

/// Unnormalized direction through the center of pixel `(col, row)`.
pub fn pixel_ray(face: Face, col: usize, row: usize, res: usize) -> Vector3<f64> {
    let rot = face.rotation();
    rot * Vector3::new(pixel_coord(col, res), pixel_coord(row, res), 1.0)
}

fn area_element(x: f64, y: f64) -> f64 {
    (x * y).atan2((x * x + y * y + 1.0).sqrt())
}

/// Exact solid angle subtended by pixel `(col, row)` of a `res`² face.
pub fn texel_solid_angle(col: usize, row: usize, res: usize) -> f64 {
    let step = 2.0 / res as f64;
    let x0 = -1.0 + col as f64 * step;
    let y0 = -1.0 + row as f64 * step;
    let (x1, y1) = (x0 + step, y0 + step);
    area_element(x0, y0) - area_element(x0, y1) - area_element(x1, y0) + area_element(x1, y1)
}

/// Row-major table of per-pixel solid angles for one face (identical for all faces).
pub fn solid_angle_table(res: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(res * res);
    for row in 0..res {
        for col in 0..res {
            out.push(texel_solid_angle(col, row, res));
        }
    }
    out
}
