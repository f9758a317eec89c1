//! On-disk formats: TOML model and arch descriptions, binary weight and
//! threshold tables, image inputs and prediction CSV.

pub mod arch;
pub mod images;
pub mod model;
pub mod thresholds;
pub mod weights;

pub use arch::{arch_to_toml, load_arch, parse_arch};
pub use images::{ingest_cifar10, parse_cifar10, parse_raw, write_predictions_csv, LabeledImage};
pub use model::ModelFile;
pub use thresholds::{fold_model, ThresholdFile};
pub use weights::{WeightFile, WeightLayer};

use std::path::Path;

use crate::error::Result;
use crate::fold::BatchNormParams;
use crate::layers::Model;

/// Loads a runnable model from its description, weight file and threshold file.
///
/// The output layer uses the model file's batch-norm block, or identity if it has none.
pub fn load_model(model: &Path, weights: &Path, thresholds: &Path) -> Result<Model> {
    let mf = ModelFile::load(model)?;
    let wf = WeightFile::load(weights)?;
    let tf = ThresholdFile::load(thresholds)?;
    wf.check(&mf.spec)?;
    tf.check(&mf.spec)?;
    let last = mf.spec.layers.len() - 1;
    let output_norm = match &mf.bn[last] {
        Some(p) => p.clone(),
        None => vec![BatchNormParams::identity(); mf.spec.layers[last].n_filters],
    };
    Model::new(mf.spec, wf.into_weights(), tf.layers, output_norm)
}
