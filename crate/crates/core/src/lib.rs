//! Acoustic beamforming with tailored Green's functions.
//!
//! The pipeline runs scene → Green's function tensor → cross-spectral matrix
//! → steering vectors → source maps → quality criteria. Every numeric type is
//! generic over [`Real`] (`f32` or `f64`); the aliases below fix the scalar.
//!
//! ```
//! use gfbeam::{beamform, greens, steering, scene};
//!
//! let scene = scene::desk_scale_scene::<f64>(1.0);
//! let model = greens::ImageSource::new(scene.reflectors.clone(), 2, scene.speed_of_sound);
//! let gf = greens::evaluate_gf_tensor(&model, &scene, &[480.0]).unwrap();
//! let w = steering::SteeringSet::build(&gf, steering::SteeringParams::preset(steering::Preset::I)).unwrap();
//! let source = scene.grid.index(14, 14);
//! let psf = beamform::psf_map(&gf, source, &w, &scene.grid).unwrap();
//! assert_eq!(psf[0].argmax(), source);
//! ```

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod csm;
pub mod geometry;
pub mod greens;
pub mod metrics;
pub mod scalar;
pub mod scene;
pub mod steering;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use geometry::Vec3;
pub use scalar::{Cplx, Real};

pub type Scene64 = scene::Scene<f64>;
pub type FocusGrid64 = scene::FocusGrid<f64>;
pub type GfTensor64 = greens::GfTensor<f64>;
pub type Csm64 = csm::Csm<f64>;
pub type TimeRecord64 = csm::TimeRecord<f64>;
pub type SteeringSet64 = steering::SteeringSet<f64>;
pub type SourceMap64 = beamform::SourceMap<f64>;
pub type MapCriteria64 = metrics::MapCriteria<f64>;

pub type Scene32 = scene::Scene<f32>;
pub type FocusGrid32 = scene::FocusGrid<f32>;
pub type GfTensor32 = greens::GfTensor<f32>;
pub type Csm32 = csm::Csm<f32>;
pub type TimeRecord32 = csm::TimeRecord<f32>;
pub type SteeringSet32 = steering::SteeringSet<f32>;
pub type SourceMap32 = beamform::SourceMap<f32>;
pub type MapCriteria32 = metrics::MapCriteria<f32>;
