//! Spherical Gaussian shading with analytic hand occlusion.
//!
//! The crate is `no_std` compatible (it needs `alloc`). The default `std`
//! feature only adds rayon-backed parallel loops and wall-clock benchmarks;
//! every numerical result is identical with or without it.
//!
//! Module map:
//!
//! * [`sg`], [`isg`], [`env`]: spherical Gaussian algebra, the normalized
//!   integral-SG approximation and SG environment mixtures.
//! * [`hand`]: linear blend skinning and the power-partitioned occluder spheres.
//! * [`occlusion`]: patch-grid occlusion of an SG lobe by spherical caps.
//! * [`brdf`], [`material`], [`geometry`], [`shading`]: SG shading and
//!   frame rendering.
//! * [`compositor`]: volumetric two-entity compositing, masks and the
//!   pose-stage loss evaluators.
//! * [`oracle`]: Monte-Carlo ground truth.
//! * [`fit`]: material / lighting recovery from rendered observations.

#![cfg_attr(not(feature = "std"), no_std)]
// Index loops over fixed-size grids read better than zipped iterators here.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::wrong_self_convention)]

extern crate alloc;

pub mod brdf;
pub mod compositor;
pub mod demo;
pub mod env;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod hand;
pub mod isg;
pub mod material;
pub mod math;
pub mod occlusion;
pub mod oracle;
pub mod raster;
pub mod sdf;
pub mod sg;
pub mod shading;

mod par;
mod quadrature;

pub use error::{Error, Result};
pub use math::{Mat3, Mat4, Rgb, Vec3};
