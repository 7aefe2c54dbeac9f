//! Multi-fidelity placement optimization.
//!
//! A family of predictive models of increasing cost (an additive heuristic,
//! a learned residual network and a reference simulator) is combined during
//! GP-UCB optimization of a planar placement. Before every model call, learned
//! deviation estimators decide which of the cheaper models can be trusted for
//! the current state and action; the cheapest trusted model is used.

pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod learned;
pub mod mde;
pub mod models;
pub mod optimizer;
pub mod neural;
pub mod scene;
pub mod util;

pub use error::{Error, Result};
pub use grid::{
    deviation, normalize_deviation, overlay_add, rmse, shift_object, Action, ActionBounds,
    DeviationConfig, GridSpec, Heightmap, Material, MaterialMask, ObjectMaterial, SceneState,
};
