//! Network definitions: the inheritance module, the attribute enhancement
//! module, and the critics, classifiers and perceptual extractor used by the
//! losses.

mod attribute;
mod classifier;
mod config;
mod critic;
mod inheritance;
mod labels;
pub mod layers;
mod perceptual;

pub use attribute::AttributeNet;
pub use classifier::{AgeClassifier, GenderClassifier};
pub use config::NetConfig;
pub use critic::{AttributeDiscriminator, PatchCritic, Scorer};
pub use inheritance::{exchange_latents, InheritanceNet, LatentComponentSet, RES_BLOCKS};
pub use labels::{AgeStage, AttributeLabel, Gender};
pub use perceptual::{PerceptualExtractor, PerceptualFeatures};
