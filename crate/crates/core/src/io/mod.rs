//! File formats and command plumbing: tensor blobs, checkpoints, manifests,
//! flat configuration files, WAV input.

pub mod blob;
pub mod checkpoint;
pub mod config;
pub mod manifest;
