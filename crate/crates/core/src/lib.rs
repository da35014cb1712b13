//! Class-balanced training of small convolutional classifiers, CAM-family
//! saliency maps, and alignment scoring of those maps against annotated
//! bounding boxes.
//!
//! The crate is organised bottom-up:
//!
//! * [`datagen`]: synthetic datasets with lesion boxes, manifest I/O,
//!   stratified splitting and augmentation.
//! * [`balance`]: per-objective class weights and the weighted binary
//!   cross-entropy loss.
//! * [`model`]: a small CNN with hand-written backward passes and portable
//!   checkpoints.
//! * [`train`]: seeded Adam training with best-validation selection.
//! * [`saliency`]: Grad-CAM, HiResCAM and Score-CAM.
//! * [`metrics`]: proportional energy, AUROC and medians.
//! * [`harness`]: the five-recipe experiment, reports and overlays.

pub mod balance;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod saliency;
pub mod train;
mod util;

pub use error::{Error, Result};
