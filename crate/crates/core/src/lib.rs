//! Reduced-order modelling of Biot poroelasticity: a CG2/DG1 fixed-stress
//! full-order solver, POD compression, neural regression of reduced
//! coefficients, and the offline/online pipeline around them.

// `!(x > 0.0)` rejects NaN too; index loops mirror the element formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fom;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod mlp;
pub mod online;
pub mod pipeline;
pub mod pod;
pub mod projection;
pub mod quadrature;
pub mod space;

pub use error::{Error, Result};
/// Matrix types used across the public API.
pub use nalgebra;
pub use linalg::InnerProduct;
pub use materials::{MaterialConfig, PermeabilityField, PermeabilityModel, SolidBulk};
pub use mesh::{BoundaryLabel, Mesh, MeshPattern};
pub use mlp::{Mlp, TrainReport, TrainSettings};
pub use online::{ErrorSeries, FieldModel, RomArtifact};
pub use pipeline::{CaseId, PipelineConfig, Profile, Setup};
pub use pod::{FieldId, PodVariant, ReducedBasis, SnapshotSet};
pub use projection::CoefficientTable;
pub use space::{DofMap, SpaceKind};
