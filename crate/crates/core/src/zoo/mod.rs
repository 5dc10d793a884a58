//! Model builders for the simple CNN and VGG-style families, the named
//! model grid, and the `PNW1` weight container.

mod builders;
mod grid;
mod weights;

pub use builders::{
    backbone_fingerprint, build, build_simple_cnn, build_vgg_feature_extractor, Backbone,
    DropoutPlacement, Family, ModelSpec, Padding, BACKBONE_PREFIX,
};
pub use grid::{table1, table1_spec, GridEntry};
pub use weights::WeightContainer;
