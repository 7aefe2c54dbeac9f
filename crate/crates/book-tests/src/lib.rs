//! The guide's code blocks, run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/heightmaps.md")]
pub mod heightmaps {}

#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/learned-model.md")]
pub mod learned_model {}

#[doc = include_str!("../../../book/src/deviation-estimators.md")]
pub mod deviation_estimators {}

#[doc = include_str!("../../../book/src/optimization.md")]
pub mod optimization {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
