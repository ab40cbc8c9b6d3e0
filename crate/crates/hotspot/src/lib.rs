//! Desk-scale testbed for clean-label training-data poisoning of CNN-based
//! lithographic hotspot detectors, and the cross-class defensive data
//! augmentation that neutralizes it.
//!
//! The pipeline: procedural layout clips -> surrogate lithography labeling
//! -> clean-label trigger poisoning -> defensive augmentation -> block-DCT
//! features -> from-scratch CNN training -> ASR / R-ASR reporting.

pub mod attack;
pub mod drc;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod layout_io;
pub mod litho;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod seed;
pub mod synthesis;

pub use geometry::{LayoutClip, Point, Rect, RectilinearPolygon};
pub use raster::BinaryImage;
