//! Bag-of-words featurization with a train-only vocabulary.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, DatasetSplits, FeatureKind, Instance, SplitKind};
use crate::error::{Error, Result};
use crate::features::{Features, SparseVec};
use crate::ingest::corpus::{Corpus, CorpusRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Binary,
    Count,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPattern {
    /// Maximal runs of alphanumeric characters.
    Alphanumeric,
    /// Runs of non-whitespace characters, punctuation included.
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowConfig {
    pub lowercase: bool,
    pub token_pattern: TokenPattern,
    pub min_df: usize,
    pub max_vocab: usize,
    pub weighting: Weighting,
}

impl Default for BowConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            token_pattern: TokenPattern::Alphanumeric,
            min_df: 2,
            max_vocab: 10_000,
            weighting: Weighting::Count,
        }
    }
}

impl BowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_df == 0 {
            return Err(Error::Config("min_df must be at least 1".into()));
        }
        if self.max_vocab == 0 {
            return Err(Error::Config("max_vocab must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<String> {
        let pieces: Box<dyn Iterator<Item = &'a str>> = match self.token_pattern {
            TokenPattern::Alphanumeric => Box::new(text.split(|c: char| !c.is_alphanumeric())),
            TokenPattern::Whitespace => Box::new(text.split_whitespace()),
        };
        pieces
            .filter(|t| !t.is_empty())
            .map(|t| if self.lowercase { t.to_lowercase() } else { t.to_string() })
            .collect()
    }
}

/// Token → column map, persisted next to models as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub config: BowConfig,
    pub columns: BTreeMap<String, usize>,
    /// Document frequency on the training split, per column.
    pub document_frequency: Vec<usize>,
    pub n_train_docs: usize,
    /// The appended constant feature; always the last column.
    pub bias_column: usize,
}

impl Vocabulary {
    /// Builds from training texts only: document frequency at least
    /// `min_df`, keeping the `max_vocab` most frequent (ties by token).
    pub fn fit(train: &[CorpusRecord], config: &BowConfig) -> Result<Self> {
        config.validate()?;
        let mut df: HashMap<String, usize> = HashMap::new();
        for r in train {
            let unique: HashSet<String> = config.tokenize(&r.text).into_iter().collect();
            for t in unique {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, n)| *n >= config.min_df).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(config.max_vocab);
        if kept.is_empty() {
            return Err(Error::Input(format!(
                "empty vocabulary after pruning (min_df = {}, {} training documents)",
                config.min_df,
                train.len()
            )));
        }
        let bias_column = kept.len();
        Ok(Self {
            config: config.clone(),
            document_frequency: kept.iter().map(|(_, n)| *n).collect(),
            columns: kept.into_iter().enumerate().map(|(i, (t, _))| (t, i)).collect(),
            n_train_docs: train.len(),
            bias_column,
        })
    }

    /// Feature dimension including the bias column.
    pub fn dim(&self) -> usize {
        self.bias_column + 1
    }

    pub fn token(&self, column: usize) -> Option<&str> {
        self.columns.iter().find(|(_, &c)| c == column).map(|(t, _)| t.as_str())
    }

    fn idf(&self, column: usize) -> f64 {
        let n = self.n_train_docs as f64;
        ((1.0 + n) / (1.0 + self.document_frequency[column] as f64)).ln() + 1.0
    }

    /// Sparse features of one text; out-of-vocabulary tokens are dropped.
    pub fn transform(&self, text: &str) -> Result<Features> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in self.config.tokenize(text) {
            if let Some(&c) = self.columns.get(&t) {
                *counts.entry(c).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(c, n)| {
                let v = match self.config.weighting {
                    Weighting::Binary => 1.0,
                    Weighting::Count => n,
                    Weighting::Tfidf => n * self.idf(c),
                };
                (c, v)
            })
            .collect();
        entries.push((self.bias_column, 1.0));
        Ok(Features::Sparse(SparseVec::new(self.dim(), entries)?))
    }
}

fn featurize_split(kind: SplitKind, records: &[CorpusRecord], vocab: &Vocabulary) -> Result<DatasetSplit> {
    let instances = records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            Ok(Instance {
                index,
                features: vocab.transform(&r.text)?,
                label: r.label,
                text: Some(r.text.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetSplit::new(kind, vocab.dim(), instances)
}

/// Sparse splits plus the vocabulary that produced them.
pub fn featurize_bow(corpus: &Corpus, config: &BowConfig) -> Result<(DatasetSplits, Vocabulary)> {
    let vocab = Vocabulary::fit(&corpus.train, config)?;
    let splits = DatasetSplits {
        train: featurize_split(SplitKind::Train, &corpus.train, &vocab)?,
        test: featurize_split(SplitKind::Test, &corpus.test, &vocab)?,
        feature_kind: FeatureKind::Bow,
    };
    Ok((splits, vocab))
}
