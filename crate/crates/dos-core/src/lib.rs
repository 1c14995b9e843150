//! Dynamic occupancy set (DOS) prediction toolkit.
//!
//! Predicts, for each traffic participant and each future timestep, an
//! elliptical region expected to contain the participant's true position.
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`geometry`]: exact ellipse math (Mahalanobis distance, containment,
//!   areas, Gaussian contours, closest-point distance);
//! - [`autodiff`]: a tape-based reverse-mode differentiation engine over
//!   dense tensors, used to train every model here;
//! - [`data`]: synthetic kinematic scene generation, scenario file I/O,
//!   agent-frame normalization and masking;
//! - [`models`]: the GRU trajectory predictor plus the occupancy-set,
//!   Gaussian, and radius heads;
//! - [`losses`]: coverage/area objectives and the baseline losses;
//! - [`training`]: Adam, step learning-rate schedule, and the two-stage
//!   protocol with parameter freezing;
//! - [`baselines`] / [`metrics`]: comparison set families and CR/OSA
//!   scoring with sweep support;
//! - [`limits`]: theoretical minimum-area analysis per representation;
//! - [`planner`]: a lattice planner that treats predicted sets as hard
//!   collision constraints;
//! - [`report`] / [`svg`]: CSV/JSON/SVG outputs.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod geometry;
pub mod limits;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod planner;
pub mod report;
pub mod svg;
pub mod training;

pub use geometry::{EllipseSet, FrameDirection, GeometryError, Point2, Pose};
