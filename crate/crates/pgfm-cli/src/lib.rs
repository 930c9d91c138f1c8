//! Pipeline orchestration for prototype-guided flow-matching distillation:
//! run configuration, the staged pipeline (data → prototypes → synthesis →
//! evaluation → report), the artifact manifest, and SVG figure output.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod svg;
