//! Relightable Gaussian-splat scenes and a UAV navigation environment built
//! on them.
//!
//! The pieces, bottom up: real spherical harmonics ([`sh`]), splat scenes
//! and the procedural forest generator ([`scene`]), the tile rasterizer
//! ([`render`]), occlusion probes and light editing ([`relight`]), collision
//! and start/goal sampling ([`world`]), the quadrotor model ([`dynamics`])
//! and the RL environment ([`env`]).

pub mod cubemap;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod image_io;
pub mod relight;
pub mod render;
pub mod scene;
pub mod sh;
pub mod world;

pub use error::{Error, Result};
