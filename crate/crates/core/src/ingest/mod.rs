//! Turning corpora, embedding files and generators into dataset splits.

pub mod bow;
pub mod corpus;
pub mod embeddings;
pub mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplits;
use crate::error::{Error, Result};

pub use bow::{featurize_bow, BowConfig, TokenPattern, Vocabulary, Weighting};
pub use corpus::{load_corpus, Corpus, CorpusFormat, CorpusRecord};
pub use embeddings::{load_embeddings, read_embeddings, write_embeddings, EmbeddingRecord};
pub use synthetic::{make_synthetic, SyntheticConfig};

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Corpus {
        path: PathBuf,
        /// Taken from the extension when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<CorpusFormat>,
        #[serde(default)]
        bow: BowConfig,
    },
    Embeddings {
        path: PathBuf,
    },
    Synthetic(SyntheticConfig),
}

impl DataSource {
    pub fn path(&self) -> Option<&Path> {
        match self {
            DataSource::Corpus { path, .. } | DataSource::Embeddings { path } => Some(path),
            DataSource::Synthetic(_) => None,
        }
    }

    pub fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DataSource::Corpus { path, .. } | DataSource::Embeddings { path } => Some(path),
            DataSource::Synthetic(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataSource::Corpus { path, format, bow } => {
                bow.validate()?;
                if format.is_none() && CorpusFormat::from_path(path).is_none() {
                    return Err(Error::Config(format!(
                        "cannot tell the corpus format of {}; set format to csv or jsonl",
                        path.display()
                    )));
                }
            }
            DataSource::Embeddings { .. } => {}
            DataSource::Synthetic(c) => c.validate()?,
        }
        if let Some(path) = self.path() {
            if !path.is_file() {
                return Err(Error::Config(format!("dataset {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Loaded splits, plus the vocabulary when they came from text.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub splits: DatasetSplits,
    pub vocabulary: Option<Vocabulary>,
}

pub fn load_dataset(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Corpus { path, format, bow } => {
            let format = format
                .or_else(|| CorpusFormat::from_path(path))
                .ok_or_else(|| Error::Config(format!("unknown corpus format for {}", path.display())))?;
            let corpus = load_corpus(path, format)?;
            let (splits, vocab) = featurize_bow(&corpus, bow)?;
            Ok(LoadedData {
                splits,
                vocabulary: Some(vocab),
            })
        }
        DataSource::Embeddings { path } => Ok(LoadedData {
            splits: load_embeddings(path)?,
            vocabulary: None,
        }),
        DataSource::Synthetic(config) => Ok(LoadedData {
            splits: make_synthetic(config)?,
            vocabulary: None,
        }),
    }
}
