//! Local state owned by a logical service: cache, store, id source, blobs.

use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

use super::cache::ByteLru;
use super::dataset::Dataset;
use super::ids::UniqueIds;
use super::logic::ServiceKind;
use super::store::{LogStore, StoreError};
use crate::topology::ServiceSpec;

pub const DEFAULT_CACHE_BYTES: u64 = 8 << 20;
/// Instance id stamped into ids minted at runtime (the dataset uses 0).
pub const RUNTIME_ID_INSTANCE: u16 = 1;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("service {0} needs a dataset")]
    NoDataset(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Default)]
pub struct Backend {
    pub cache: Option<Mutex<ByteLru>>,
    pub store: Option<LogStore>,
    pub ids: Option<UniqueIds>,
    pub blobs: Option<PathBuf>,
}

impl Backend {
    /// Builds the state a service of `kind` needs. A store copies the
    /// dataset log into `work_dir` on first start and reuses it afterwards.
    pub fn for_service(
        spec: &ServiceSpec,
        kind: ServiceKind,
        dataset: Option<&Dataset>,
        work_dir: &Path,
        id_instance: u16,
    ) -> Result<Backend, BackendError> {
        let mut b = Backend::default();
        match kind {
            ServiceKind::Cache => {
                b.cache = Some(Mutex::new(ByteLru::new(
                    spec.capacity.unwrap_or(DEFAULT_CACHE_BYTES),
                )))
            }
            ServiceKind::Store => {
                let path = work_dir.join(format!("{}.log", spec.name));
                if !path.exists() {
                    fs::create_dir_all(work_dir).map_err(|source| BackendError::Io {
                        path: work_dir.to_owned(),
                        source,
                    })?;
                    if let Some(d) = dataset {
                        fs::copy(d.store_log(), &path).map_err(|source| BackendError::Io {
                            path: path.clone(),
                            source,
                        })?;
                    }
                }
                let (store, report) = LogStore::open(&path)?;
                if let Some(off) = report.truncated_at {
                    log::warn!("{}: recovered store truncated at {off}", spec.name);
                }
                b.store = Some(store);
            }
            ServiceKind::UniqueId => {
                fs::create_dir_all(work_dir).map_err(|source| BackendError::Io {
                    path: work_dir.to_owned(),
                    source,
                })?;
                let path = work_dir.join(format!("{}.ids", spec.name));
                let ids = UniqueIds::persistent(id_instance, &path)
                    .map_err(|source| BackendError::Io { path, source })?;
                b.ids = Some(ids);
            }
            ServiceKind::Blob => {
                let d = dataset.ok_or_else(|| BackendError::NoDataset(spec.name.clone()))?;
                b.blobs = Some(d.blob_dir());
            }
            _ => {}
        }
        Ok(b)
    }
}
