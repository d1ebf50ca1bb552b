//! File formats used by the pipeline: binary PGM/PPM images, the dataset
//! manifest, and flat key=value config files. All writers are deterministic.

pub mod kv;
pub mod manifest;
pub mod pgm;
