//! Controllable descendant-face synthesis.
//!
//! The crate is organised the way the model is: [`face_geometry`] aligns
//! faces and fixes where each facial component lives on the canvas,
//! [`compositor`] builds the low-quality component-exchange faces used as
//! training inputs, [`networks`] holds the inheritance and attribute
//! enhancement modules together with the critics, classifiers and the
//! perceptual feature extractor, [`losses`] implements every training
//! objective, [`data`] provides manifests, pairing and a procedural toy
//! face generator, [`trainer`] runs pretraining and the joint schedule, and
//! [`inference`] turns two parent faces plus controls into a descendant.

pub mod checkpoint;
pub mod compositor;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod face_geometry;
pub mod image_io;
pub mod inference;
pub mod losses;
pub mod model;
pub mod networks;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use face_geometry::{AlignedFace, Component, ComponentLayout, ControlVector, LandmarkSet};
pub use networks::{AgeStage, AttributeLabel, Gender};
