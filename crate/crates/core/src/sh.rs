//! Real spherical harmonics.
//!
//! Coefficients are stored band by band: index `l*l + l + m` for
//! `m = -l..=l`. The basis carries no Condon-Shortley phase, so
//! `Y_1,-1 ∝ y`, `Y_1,0 ∝ z` and `Y_1,1 ∝ x`, all with a positive constant.
//! Azimuth is measured in the xy plane from +x towards +y; z is up.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Highest supported band.
pub const MAX_DEGREE: usize = 4;

/// Value of the constant band-0 basis function, `1 / (2√π)`.
pub const Y00: f64 = 0.282_094_791_773_878_14;

/// Number of coefficients per channel for a degree-`l` expansion.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Flat index of `(l, m)`.
pub fn sh_index(l: usize, m: i32) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m as i64) as usize
}

/// A unit direction on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub const UNIT_TOLERANCE: f64 = 1e-9;

    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > Self::UNIT_TOLERANCE {
            return Err(Error::input(format!("direction is not unit length (|w| = {n})")));
        }
        Ok(Direction(v))
    }

    /// Normalizes `v`; `None` for zero or non-finite input.
    pub fn normalize(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Direction(v / n))
        } else {
            None
        }
    }

    /// Direction from polar angle (from +z) and azimuth (from +x towards +y).
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Direction(Vector3::new(st * cp, st * sp, ct))
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;
    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

/// Evaluates all basis functions up to `degree` at `dir`.
pub fn eval_basis(degree: usize, dir: Direction) -> Result<Vec<f64>> {
    check_degree(degree)?;
    let mut out = vec![0.0; coeff_count(degree)];
    basis_into(degree, dir.0.x, dir.0.y, dir.0.z, &mut out);
    Ok(out)
}

pub(crate) fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        Err(Error::input(format!(
            "SH degree {degree} exceeds maximum {MAX_DEGREE}"
        )))
    } else {
        Ok(())
    }
}

/// Unchecked evaluation for hot loops. `(x, y, z)` must be unit length and
/// `out` must hold at least `coeff_count(degree)` entries.
pub fn basis_into(degree: usize, x: f64, y: f64, z: f64, out: &mut [f64]) {
    debug_assert!(degree <= MAX_DEGREE);
    // P_l^m(z) = sin^m(θ) Q_l^m(z); sin^m(θ) e^{imφ} = (x + iy)^m.
    let mut cos_m = 1.0;
    let mut sin_m = 0.0;
    for m in 0..=degree {
        if m > 0 {
            let c = x * cos_m - y * sin_m;
            let s = x * sin_m + y * cos_m;
            cos_m = c;
            sin_m = s;
        }
        let mut q_mm = 1.0;
        for k in 1..=m {
            q_mm *= (2 * k - 1) as f64;
        }
        let mut q_prev2 = 0.0;
        let mut q_prev = q_mm;
        for l in m..=degree {
            let q = if l == m {
                q_mm
            } else if l == m + 1 {
                z * (2 * m + 1) as f64 * q_mm
            } else {
                ((2 * l - 1) as f64 * z * q_prev - (l + m - 1) as f64 * q_prev2) / (l - m) as f64
            };
            if l > m {
                q_prev2 = q_prev;
                q_prev = q;
            }
            let k = norm_const(l, m);
            if m == 0 {
                out[l * l + l] = k * q;
            } else {
                let kq = std::f64::consts::SQRT_2 * k * q;
                out[l * l + l + m] = kq * cos_m;
                out[l * l + l - m] = kq * sin_m;
            }
        }
    }
}

fn norm_const(l: usize, m: usize) -> f64 {
    // (l - m)! / (l + m)!
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Per-channel SH coefficient vectors, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ShCoeffs {
    degree: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ShCoeffs {
    pub fn zeros(degree: usize, channels: usize) -> Self {
        assert!(degree <= MAX_DEGREE && channels > 0);
        ShCoeffs {
            degree,
            channels,
            data: vec![0.0; channels * coeff_count(degree)],
        }
    }

    pub fn from_vec(degree: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_degree(degree)?;
        if channels == 0 {
            return Err(Error::input("SH coefficients need at least one channel"));
        }
        if data.len() != channels * coeff_count(degree) {
            return Err(Error::input(format!(
                "expected {} SH coefficients for degree {degree} x {channels} channels, got {}",
                channels * coeff_count(degree),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("SH coefficient {i} is not finite")));
        }
        Ok(ShCoeffs {
            degree,
            channels,
            data,
        })
    }

    /// Only the constant term set, identical across channels.
    pub fn constant(degree: usize, channels: usize, dc: f64) -> Self {
        let mut c = Self::zeros(degree, channels);
        for ch in 0..channels {
            c.channel_mut(ch)[0] = dc;
        }
        c
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Coefficients per channel.
    pub fn len(&self) -> usize {
        coeff_count(self.degree)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.len();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.len();
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Value of the expansion in direction `dir`, one entry per channel.
    pub fn eval(&self, dir: Direction) -> Vec<f64> {
        let mut basis = [0.0; coeff_count(MAX_DEGREE)];
        let v = dir.vector();
        basis_into(self.degree, v.x, v.y, v.z, &mut basis);
        (0..self.channels)
            .map(|ch| {
                self.channel(ch)
                    .iter()
                    .zip(&basis)
                    .map(|(c, y)| c * y)
                    .sum()
            })
            .collect()
    }

    /// Rotation about +z by `theta`: `result.eval(w) == self.eval(Rz(-theta) w)`.
    pub fn rotate_z(&self, theta: f64) -> ShCoeffs {
        let mut out = self.clone();
        for ch in 0..self.channels {
            let src = self.channel(ch);
            let dst = out.channel_mut(ch);
            for l in 1..=self.degree {
                let base = l * l + l;
                for m in 1..=l {
                    let (s, c) = (m as f64 * theta).sin_cos();
                    let pos = src[base + m];
                    let neg = src[base - m];
                    dst[base + m] = pos * c - neg * s;
                    dst[base - m] = pos * s + neg * c;
                }
            }
        }
        out
    }

    /// `Σ_m a^m b^m` per channel. A single-channel operand broadcasts.
    pub fn dot(&self, other: &ShCoeffs) -> Result<Vec<f64>> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                left: self.degree,
                right: other.degree,
            });
        }
        let channels = broadcast_channels(self.channels, other.channels)?;
        Ok((0..channels)
            .map(|ch| {
                let a = self.channel(ch.min(self.channels - 1));
                let b = other.channel(ch.min(other.channels - 1));
                a.iter().zip(b).map(|(x, y)| x * y).sum()
            })
            .collect())
    }

    pub fn scaled(&self, s: f64) -> ShCoeffs {
        ShCoeffs {
            degree: self.degree,
            channels: self.channels,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Elementwise sum; channel counts must match exactly.
    pub fn add(&self, other: &ShCoeffs) -> Result<ShCoeffs> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                left: self.degree,
                right: other.degree,
            });
        }
        if self.channels != other.channels {
            return Err(Error::input("channel count mismatch in SH sum"));
        }
        Ok(ShCoeffs {
            degree: self.degree,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// L2 norm of band `l` in channel `ch`.
    pub fn band_norm(&self, ch: usize, l: usize) -> f64 {
        let c = self.channel(ch);
        c[l * l..(l + 1) * (l + 1)]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn broadcast_channels(a: usize, b: usize) -> Result<usize> {
    match (a, b) {
        (x, y) if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        (x, y) => Err(Error::input(format!("cannot broadcast {x} and {y} channels"))),
    }
}

/// Zonal coefficients of the clamped cosine `max(0, cos θ)` about +z,
/// i.e. its projection onto `Y_l0`.
pub fn clamped_cosine_zonal(l: usize) -> f64 {
    // ∫_0^1 x P_l(x) dx
    const HALF_MOMENTS: [f64; MAX_DEGREE + 1] = [0.5, 1.0 / 3.0, 0.125, 0.0, -1.0 / 48.0];
    2.0 * PI * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * HALF_MOMENTS[l]
}

/// SH projection of a clamped-cosine lobe around `normal`.
pub fn clamped_cosine_lobe(degree: usize, normal: Direction) -> ShCoeffs {
    let mut basis = vec![0.0; coeff_count(degree)];
    let n = normal.vector();
    basis_into(degree, n.x, n.y, n.z, &mut basis);
    let mut out = ShCoeffs::zeros(degree, 1);
    let dst = out.channel_mut(0);
    for l in 0..=degree {
        // Funk-Hecke: a zonal kernel rotated to `n` has coefficients
        // sqrt(4π / (2l+1)) z_l Y_lm(n).
        let scale = (4.0 * PI / (2 * l + 1) as f64).sqrt() * clamped_cosine_zonal(l);
        for i in l * l..(l + 1) * (l + 1) {
            dst[i] = scale * basis[i];
        }
    }
    out
}

/// Uniformly distributed direction from two unit-interval samples.
pub fn uniform_sphere(u: f64, v: f64) -> Direction {
    let z = 1.0 - 2.0 * u;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * v;
    Direction(Vector3::new(r * phi.cos(), r * phi.sin(), z))
}
