//! Data model and evaluation tooling for ingredient-level food segmentation.
//!
//! * [`mask`] – label rasters and their on-disk format
//! * [`ontology`] / [`manifest`] – category ontology and dataset manifests
//! * [`validate`] – annotation-validity rules for image records
//! * [`metrics`] – mergeable confusion matrices and mIoU / mAcc / aAcc
//! * [`datasetops`] – statistics, refinement and split procedures

pub mod datasetops;
pub mod error;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod ontology;
pub mod validate;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, ImageRecord, SplitTag};
pub use mask::{LabelMap, IGNORE};
pub use metrics::{ConfusionMatrix, MetricReport};
pub use ontology::CategoryOntology;
