//! Model specs, block templates and executable graphs for compact ×4 super-resolution nets.

pub mod catalog;
pub mod error;
pub mod graph;
pub mod spec;
pub mod template;

pub use catalog::{mandatory_names, zoo_catalog, Architecture, Registry};
pub use error::{Result, ZooError};
pub use graph::{anchor_residual, build, spab_forward, Mode, ModelGraph, Node, Unit};
pub use spec::{Layer, LayerShape, ModelSpec};
pub use template::{init_conv, BlockTemplate};
