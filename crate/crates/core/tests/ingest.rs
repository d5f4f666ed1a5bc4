use std::path::PathBuf;

use flipset::ingest::{
    featurize_bow, load_corpus, load_dataset, make_synthetic, BowConfig, Corpus, CorpusFormat, CorpusRecord,
    DataSource, SyntheticConfig, Vocabulary,
};
use flipset::metrics::evaluate;
use flipset::model::{train, Hyperparams};
use flipset::SplitKind;

fn mini_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini_sentiment.jsonl")
}

fn manifest() -> serde_json::Value {
    let raw = std::fs::read_to_string(mini_corpus().with_file_name("mini_sentiment.manifest.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

#[test]
fn bundled_corpus_matches_its_manifest() {
    let m = manifest();
    let corpus = load_corpus(&mini_corpus(), CorpusFormat::Jsonl).unwrap();
    let count = |split: &[CorpusRecord], label: u8| split.iter().filter(|r| r.label == label).count() as u64;
    assert_eq!(corpus.len() as u64, m["records"].as_u64().unwrap());
    assert_eq!(corpus.train.len() as u64, m["train"].as_u64().unwrap());
    assert_eq!(corpus.test.len() as u64, m["test"].as_u64().unwrap());
    assert_eq!(count(&corpus.train, 1), m["train_positive"].as_u64().unwrap());
    assert_eq!(count(&corpus.train, 0), m["train_negative"].as_u64().unwrap());
    assert_eq!(count(&corpus.test, 1), m["test_positive"].as_u64().unwrap());
    assert_eq!(count(&corpus.test, 0), m["test_negative"].as_u64().unwrap());
}

#[test]
fn bundled_corpus_trains_to_a_useful_model() {
    let data = load_dataset(&DataSource::Corpus {
        path: mini_corpus(),
        format: None,
        bow: BowConfig::default(),
    })
    .unwrap();
    let vocab = data.vocabulary.unwrap();
    assert_eq!(data.splits.dim(), vocab.dim());
    let model = train(&data.splits.train, &Hyperparams::default()).unwrap();
    let test = evaluate(&model, &data.splits.test).unwrap();
    assert!(test.accuracy > 0.7, "{test:?}");
    assert!(data.splits.test.instances().iter().all(|z| z.text.is_some()));
}

#[test]
fn vocabulary_never_sees_test_text() {
    let corpus = load_corpus(&mini_corpus(), CorpusFormat::Jsonl).unwrap();
    let config = BowConfig::default();
    let full = Vocabulary::fit(&corpus.train, &config).unwrap();
    let train_only = Corpus::from_records(corpus.train.clone());
    let (_, alone) = featurize_bow(&train_only, &config).unwrap();
    assert_eq!(full, alone);

    let mut poisoned = corpus.clone();
    poisoned.test.push(CorpusRecord {
        text: "zzzunseen zzzunseen zzzunseen".into(),
        label: 1,
        split: SplitKind::Test,
    });
    poisoned.test.push(CorpusRecord {
        text: "zzzunseen".into(),
        label: 0,
        split: SplitKind::Test,
    });
    let (_, v) = featurize_bow(&poisoned, &config).unwrap();
    assert_eq!(v, full);
    assert!(v.columns.keys().all(|t| t != "zzzunseen"));
}

#[test]
fn wide_separation_is_nearly_perfect() {
    let d = make_synthetic(&SyntheticConfig {
        seed: 0,
        n_train: 400,
        n_test: 400,
        dim: 10,
        separation: 10.0,
        noise_rate: 0.0,
    })
    .unwrap();
    let model = train(&d.train, &Hyperparams::default()).unwrap();
    assert!(evaluate(&model, &d.test).unwrap().accuracy >= 0.99);
}

#[test]
fn half_label_noise_is_chance() {
    let mut acc: Vec<f64> = (0..3)
        .map(|seed| {
            let d = make_synthetic(&SyntheticConfig {
                seed,
                n_train: 500,
                n_test: 500,
                dim: 10,
                separation: 3.0,
                noise_rate: 0.5,
            })
            .unwrap();
            let model = train(&d.train, &Hyperparams::default()).unwrap();
            evaluate(&model, &d.test).unwrap().accuracy
        })
        .collect();
    acc.sort_by(f64::total_cmp);
    assert!((0.4..=0.6).contains(&acc[1]), "{acc:?}");
}

#[test]
fn embedding_files_round_trip_through_load_dataset() {
    use flipset::ingest::{write_embeddings, EmbeddingRecord};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.bin");
    let records = vec![
        EmbeddingRecord { split: SplitKind::Train, label: 0, vector: vec![0.5, -1.0] },
        EmbeddingRecord { split: SplitKind::Train, label: 1, vector: vec![1.5, 2.0] },
        EmbeddingRecord { split: SplitKind::Test, label: 1, vector: vec![0.0, 0.25] },
    ];
    write_embeddings(&path, 2, &records).unwrap();
    let data = load_dataset(&DataSource::Embeddings { path }).unwrap();
    assert_eq!(data.splits.dim(), 3);
    assert_eq!(data.splits.train.len(), 2);
    assert_eq!(data.splits.test.instances()[0].features.to_dense(), vec![0.0, 0.25, 1.0]);
}
