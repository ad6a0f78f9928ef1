//! Multi-topic opinion dynamics over an influence network with per-individual logic
//! matrices: model validation, structural graph analysis, simulation, structural
//! prediction of final opinions and numerical cross-checks.

pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod predict;
pub mod scenario;
