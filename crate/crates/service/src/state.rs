//! Model and session registry with on-disk persistence.
//!
//! Layout under the data directory:
//! `models/<id>/{model.json,theta.bin,vocab.json}` and `sessions/<id>.json`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use flipset::artifact::{load_model, ModelManifest};
use flipset::dataset::DatasetSplits;
use flipset::fsutil::{read_json, write_json_atomic};
use flipset::search::Algorithm;
use flipset::{Error, Result, TrainedModel};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub const DEFAULT_WHATIF_WORKERS: usize = 2;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Built UI bundle served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Experiment outputs served read-only under `/reports`.
    pub reports_dir: Option<PathBuf>,
    pub whatif_workers: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            static_dir: None,
            reports_dir: None,
            whatif_workers: DEFAULT_WHATIF_WORKERS,
        }
    }
}

/// A trained model with its data, shared read-only between requests.
#[derive(Debug)]
pub struct ModelEntry {
    pub id: String,
    pub manifest: ModelManifest,
    pub model: TrainedModel,
    pub splits: DatasetSplits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfEntry {
    pub seq: usize,
    pub disputed: Vec<usize>,
    pub retrained_prob: f64,
    pub retrained_label: u8,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub model_id: String,
    pub test_index: usize,
    pub original_prob: f64,
    pub original_label: u8,
    pub disputed: BTreeSet<usize>,
    pub history: Vec<WhatIfEntry>,
}

type JobKey = (String, usize, Algorithm);

pub struct Inner {
    config: ServiceConfig,
    models: RwLock<HashMap<String, Arc<ModelEntry>>>,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    jobs: Mutex<HashSet<JobKey>>,
    whatif_pool: Arc<Semaphore>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

/// Marks a flipset computation as running until dropped.
pub struct JobGuard {
    state: AppState,
    key: JobKey,
}

impl Drop for JobGuard {
    fn drop(&mut self) {
        self.state.0.jobs.lock().unwrap().remove(&self.key);
    }
}

impl AppState {
    /// Opens the data directory and reloads every persisted model and
    /// session. Models whose dataset can no longer be loaded are skipped
    /// with a warning, along with their sessions.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let models_dir = config.data_dir.join("models");
        let sessions_dir = config.data_dir.join("sessions");
        for dir in [&models_dir, &sessions_dir] {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut models = HashMap::new();
        for dir in sorted_entries(&models_dir)? {
            if !dir.is_dir() {
                continue;
            }
            let id = file_name(&dir);
            match load_entry(&id, &dir) {
                Ok(entry) => {
                    models.insert(id, Arc::new(entry));
                }
                Err(e) => log::warn!("skipping model {id}: {e}"),
            }
        }
        let mut sessions = HashMap::new();
        for path in sorted_entries(&sessions_dir)? {
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            match read_json::<Session>(&path) {
                Ok(s) if models.contains_key(&s.model_id) => {
                    sessions.insert(s.id.clone(), Arc::new(tokio::sync::Mutex::new(s)));
                }
                Ok(s) => log::warn!("skipping session {}: model {} is not loaded", s.id, s.model_id),
                Err(e) => log::warn!("skipping session {}: {e}", path.display()),
            }
        }
        log::info!(
            "loaded {} models and {} sessions from {}",
            models.len(),
            sessions.len(),
            config.data_dir.display()
        );
        let workers = config.whatif_workers.max(1);
        Ok(Self(Arc::new(Inner {
            config,
            models: RwLock::new(models),
            sessions: RwLock::new(sessions),
            jobs: Mutex::new(HashSet::new()),
            whatif_pool: Arc::new(Semaphore::new(workers)),
        })))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.0.config.data_dir.join("models").join(id)
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.0.config.data_dir.join("sessions").join(format!("{id}.json"))
    }

    pub fn model(&self, id: &str) -> Option<Arc<ModelEntry>> {
        self.0.models.read().unwrap().get(id).cloned()
    }

    /// All models, ordered by name then id.
    pub fn models(&self) -> Vec<Arc<ModelEntry>> {
        let mut all: Vec<_> = self.0.models.read().unwrap().values().cloned().collect();
        all.sort_by(|a, b| (&a.manifest.name, &a.id).cmp(&(&b.manifest.name, &b.id)));
        all
    }

    pub fn insert_model(&self, entry: ModelEntry) -> Arc<ModelEntry> {
        let entry = Arc::new(entry);
        self.0.models.write().unwrap().insert(entry.id.clone(), entry.clone());
        entry
    }

    pub fn session(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        self.0.sessions.read().unwrap().get(id).cloned()
    }

    pub fn insert_session(&self, session: Session) -> Result<()> {
        self.persist_session(&session)?;
        self.0
            .sessions
            .write()
            .unwrap()
            .insert(session.id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(())
    }

    pub fn persist_session(&self, session: &Session) -> Result<()> {
        write_json_atomic(&self.session_path(&session.id), session)
    }

    /// Claims the (model, test point, algorithm) slot; `None` if a
    /// computation for it is already running.
    pub fn try_begin_flipset(&self, model_id: &str, test_index: usize, algorithm: Algorithm) -> Option<JobGuard> {
        let key = (model_id.to_string(), test_index, algorithm);
        let inserted = self.0.jobs.lock().unwrap().insert(key.clone());
        inserted.then(|| JobGuard {
            state: self.clone(),
            key,
        })
    }

    /// Permits for what-if retrains.
    pub fn whatif_pool(&self) -> Arc<Semaphore> {
        self.0.whatif_pool.clone()
    }
}

fn load_entry(id: &str, dir: &Path) -> Result<ModelEntry> {
    let loaded = load_model(dir)?;
    let data = loaded.load_data()?;
    Ok(ModelEntry {
        id: id.to_string(),
        manifest: loaded.manifest,
        model: loaded.model,
        splits: data.splits,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
