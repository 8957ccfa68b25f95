//! Decentralized multi-robot path planning with a geometric graph neural network.
//!
//! The crate covers the full pipeline on one desk:
//!
//! * [`world`] — continuous 2D environments with oriented rectangular
//!   obstacles, occupancy rasterization, occlusion-aware lidar raycasting
//!   and collision queries.
//! * [`percept`] — per-robot three-channel observation maps and the
//!   communication graph with (distance, bearing) edge geometry.
//! * [`expert`] — A* path oracle on the inflated occupancy grid and
//!   one-step-lookahead expert action labels.
//! * [`dataset`] — expert episode generation, NDJSON sample files and
//!   train/test/val manifests.
//! * [`autodiff`] — dense-tensor reverse-mode automatic differentiation
//!   with exactly the operator set the model needs, plus Adam and a
//!   reduce-on-plateau scheduler.
//! * [`model`] — the mini-VGG encoder, geometry-gated interaction layers
//!   (Bessel / spherical basis encodings) and the action mapper, with the
//!   CNN-only baseline and ablation variants.
//! * [`train`] — supervised imitation training on ego-graph batches.
//! * [`rollout`] — decentralized closed-loop execution with layer-wise
//!   message exchange, safety filtering, and flowtime / success metrics.
//! * [`oracle`] — independent reference implementations (Dijkstra,
//!   extended-precision basis functions) used by the test suites.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod expert;
pub mod model;
pub mod oracle;
pub mod percept;
pub mod rollout;
pub mod train;
pub mod util;
pub mod verify;
pub mod world;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("obstacle placement failed after {attempts} attempts (map too crowded)")]
    MapTooCrowded { attempts: usize },
    #[error("no free position found after {attempts} attempts")]
    NoFreePosition { attempts: usize },
    #[error("raycast origin ({0}, {1}) lies inside an obstacle")]
    OriginInsideObstacle(f64, f64),
    #[error("bearing undefined for coincident positions")]
    CoincidentPositions,
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("batchnorm evaluated before any training step initialized running stats")]
    UninitializedBatchNorm,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(f64),
    #[error("numeric verification failed: {0}")]
    NumericCheck(String),
    #[error("no expert label: all eight step directions are blocked")]
    NoExpertLabel,
    #[error("basis input r={r} outside (0, {cutoff}]")]
    BasisDomain { r: f64, cutoff: f64 },
    #[error("goal unreachable from start")]
    UnreachableGoal,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("checkpoint/config mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
