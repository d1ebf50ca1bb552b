//! Weakly supervised adipose-tissue segmentation on OCT-like images.
//!
//! The crate implements a two-stage pipeline. Stage one turns image-level
//! labels into pixel-wise pseudo labels: a small classifier produces class
//! activation maps, CAM peaks become adipose seeds, seeds near the detected
//! tissue surface are discarded, and the survivors are propagated through
//! SLIC superpixels with a neighbour-voting cleanup. Stage two trains a
//! U-Net on those pseudo labels under a combined cross-entropy / seed /
//! Dice objective.
//!
//! Everything runs on a built-in deterministic float-64 network engine
//! ([`tensor`]) and is exercised end to end on a synthetic OCT phantom
//! dataset ([`phantom`]) with exact ground truth.

pub mod error;
pub mod image;
pub mod io;
pub mod locnet;
pub mod metrics;
pub mod phantom;
pub mod superpixel;
pub mod surface;
pub mod segnet;
pub mod tensor;

pub use error::{Error, Result};
