//! Cleaning and dataset assembly: Otsu binarisation, morphology, component
//! isolation, void filling, coarse alignment and manifest construction.

mod clean;
mod components;
mod dataset;
mod distance;
mod fill;
mod morph;
mod otsu;

pub use clean::{clean_xct, coarse_align, foreground_centroid, CleanSpec, CleanedXct};
pub use components::{label_components, largest_component, Components};
pub use dataset::{
    build_dataset, default_split_assignment, sweep_split, DatasetManifest, ManifestSample, RawSample, Split,
    MANIFEST_FILE,
};
pub use distance::distance_to_background;
pub use fill::fill_enclosed_voids;
pub use morph::{morph_op, Connectivity, MorphOp};
pub use otsu::{binarize, otsu_threshold, DEFAULT_BINS};
