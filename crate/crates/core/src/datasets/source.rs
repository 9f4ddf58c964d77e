use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{load_dataset_with, make_synthetic, read_dataset, DatasetSplit, ExpectedSizes, SyntheticSpec, CELEBA_CROP_DEFAULT};
use crate::error::{Error, Result};

/// Environment variable naming the directory that holds the real datasets.
pub const DATA_ROOT_ENV: &str = "EQUIGAN_DATA_ROOT";

fn default_crop() -> u32 {
    CELEBA_CROP_DEFAULT
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `cifar10`, `fmnist` or `celeba` under `root` (or the data-root variable).
    Named {
        name: String,
        #[serde(default)]
        root: Option<PathBuf>,
        #[serde(default = "default_crop")]
        celeba_crop: u32,
    },
    Synthetic { spec: SyntheticSpec },
    /// A file in the dataset container format.
    File { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<DatasetSplit> {
        match self {
            Self::Named { name, root, celeba_crop } => {
                let root = match root {
                    Some(r) => r.clone(),
                    None => std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).ok_or_else(|| {
                        Error::config("data.root", format!("no data root given and {DATA_ROOT_ENV} is not set"))
                    })?,
                };
                load_dataset_with(name, &root, ExpectedSizes::for_dataset(name)?, *celeba_crop)
            }
            Self::Synthetic { spec } => make_synthetic(spec),
            Self::File { path } => read_dataset(path),
        }
    }
}
