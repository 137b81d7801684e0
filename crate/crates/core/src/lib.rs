//! Person retrieval in surveillance frames from a semantic description:
//! height range, torso color(s), gender and optional leg color.
//!
//! Detections arrive as segmentation masks. Each one gets a metric height
//! from the calibrated camera and clothing colors from background-free
//! torso and leg patches; a linear cascade of filters then narrows the
//! frame down to the person of interest.

pub mod attributes;
pub mod bbox;
pub mod cascade;
pub mod dataio;
pub mod geometry;
pub mod maskops;
pub mod metrics;
pub mod pipeline;
pub mod selftest;
pub mod synth;

pub use bbox::BBox;
