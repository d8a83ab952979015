//! The guide's chapters, compiled as doc-tests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}

#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}

#[doc = include_str!("../../../book/src/primal_dual.md")]
pub mod primal_dual {}

#[doc = include_str!("../../../book/src/presets.md")]
pub mod presets {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/files.md")]
pub mod files {}
