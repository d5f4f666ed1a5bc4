//! Flipset sweeps over a whole test split, with exact-retrain verification
//! of every found set, aggregate reports, and resumable on-disk records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, DatasetSplits, FeatureKind, Instance};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::influence::InfluenceContext;
use crate::lab::retrain::verify_flip;
use crate::model::{train, Hyperparams, TrainedModel};
use crate::search::{find_flipset, Algorithm, FlipsetResult, DEFAULT_MAX_PASSES};
use crate::stats::mean;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const K_HISTOGRAM_FILE: &str = "k_histogram.csv";
pub const K_CONFIDENCE_FILE: &str = "k_vs_confidence.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub algorithm: Algorithm,
    pub max_passes: usize,
    /// Worker threads for per-test-point work; 0 uses the global pool.
    pub threads: usize,
    /// Only the first `n` test points, when set.
    pub max_test_points: Option<usize>,
    pub verify: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Iterative,
            max_passes: DEFAULT_MAX_PASSES,
            threads: 0,
            max_test_points: None,
            verify: true,
        }
    }
}

/// Outcome for one test point. Failures are recorded, never propagated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub test_index: usize,
    pub prob: f64,
    pub label: u8,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FlipsetResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PointRecord {
    pub fn found(&self) -> bool {
        self.result.as_ref().is_some_and(FlipsetResult::found)
    }

    pub fn flipped(&self) -> bool {
        self.result.as_ref().and_then(FlipsetResult::flipped) == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset_name: String,
    pub feature_kind: FeatureKind,
    pub algorithm: Algorithm,
    pub n_test: usize,
    pub n_found: usize,
    pub n_flipped: usize,
    pub n_errors: usize,
    /// Found sets over all test points.
    pub found_rate: f64,
    /// Verified flips over all test points.
    pub flip_rate: f64,
    /// Verified flips over found sets.
    pub flip_rate_given_found: Option<f64>,
    pub mean_k: Option<f64>,
    pub k_values: Vec<usize>,
    /// `(k, |p − 0.5|)` for every found set.
    pub k_vs_confidence: Vec<(usize, f64)>,
    /// Mean passes over found sets.
    pub mean_outer_passes: Option<f64>,
    /// Not part of the summary file; see [`TIMING_FILE`].
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl ExperimentReport {
    /// Aggregates per-point records (in any order) into a report.
    pub fn from_records(
        dataset_name: &str,
        feature_kind: FeatureKind,
        algorithm: Algorithm,
        records: &[PointRecord],
        wall_time_seconds: f64,
    ) -> Self {
        let mut sorted: Vec<&PointRecord> = records.iter().collect();
        sorted.sort_by_key(|r| r.test_index);
        let found: Vec<(&PointRecord, &FlipsetResult)> = sorted
            .iter()
            .filter_map(|r| r.result.as_ref().filter(|f| f.found()).map(|f| (*r, f)))
            .collect();
        let n_test = sorted.len();
        let n_found = found.len();
        let n_flipped = sorted.iter().filter(|r| r.flipped()).count();
        let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let k_values: Vec<usize> = found.iter().map(|(_, f)| f.k()).collect();
        let passes: Vec<f64> = found.iter().map(|(_, f)| f.outer_passes as f64).collect();
        Self {
            dataset_name: dataset_name.to_string(),
            feature_kind,
            algorithm,
            n_test,
            n_found,
            n_flipped,
            n_errors: sorted.iter().filter(|r| r.error.is_some()).count(),
            found_rate: rate(n_found, n_test),
            flip_rate: rate(n_flipped, n_test),
            flip_rate_given_found: (n_found > 0).then(|| rate(n_flipped, n_found)),
            mean_k: mean(&k_values.iter().map(|&k| k as f64).collect::<Vec<_>>()),
            k_vs_confidence: found.iter().map(|(r, f)| (f.k(), r.margin)).collect(),
            k_values,
            mean_outer_passes: mean(&passes),
            wall_time_seconds,
        }
    }

    /// `k → count` over found sets.
    pub fn k_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for &k in &self.k_values {
            *hist.entry(k).or_insert(0) += 1;
        }
        hist
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: TrainedModel,
    pub records: Vec<PointRecord>,
    pub report: ExperimentReport,
}

fn margin(prob: f64) -> f64 {
    (prob - 0.5).abs()
}

/// Searches and (optionally) verifies one test point.
pub fn run_point(
    ctx: &InfluenceContext<'_>,
    model: &TrainedModel,
    train_split: &DatasetSplit,
    x_t: &Instance,
    options: &ExperimentOptions,
) -> PointRecord {
    let prob = match model.predict_proba(&x_t.features) {
        Ok(p) => p,
        Err(e) => {
            return PointRecord {
                test_index: x_t.index,
                prob: f64::NAN,
                label: 0,
                margin: f64::NAN,
                result: None,
                error: Some(e.to_string()),
            }
        }
    };
    let tau = model.hyper.tau;
    let mut record = PointRecord {
        test_index: x_t.index,
        prob,
        label: model.hyper.label(prob),
        margin: margin(prob),
        result: None,
        error: None,
    };
    let searched = find_flipset(options.algorithm, ctx, model, train_split, x_t, tau, options.max_passes);
    match searched {
        Ok(result) if result.found() && options.verify => {
            match verify_flip(&result, train_split, x_t, &model.hyper) {
                Ok(verified) => record.result = Some(verified),
                Err(e) => {
                    record.error = Some(format!("verification failed: {e}"));
                    record.result = Some(result);
                }
            }
        }
        Ok(result) => record.result = Some(result),
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

pub(crate) fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn selected_tests<'a>(test: &'a DatasetSplit, options: &ExperimentOptions) -> &'a [Instance] {
    let all = test.instances();
    &all[..options.max_test_points.map_or(all.len(), |n| n.min(all.len()))]
}

/// Trains on the train split, then searches every selected test point in
/// parallel.
pub fn run_experiment(
    dataset_name: &str,
    data: &DatasetSplits,
    hyper: &Hyperparams,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome> {
    let model = train(&data.train, hyper)?;
    run_experiment_with_model(dataset_name, data, model, options)
}

pub fn run_experiment_with_model(
    dataset_name: &str,
    data: &DatasetSplits,
    model: TrainedModel,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let ctx = InfluenceContext::new(&model, &data.train)?;
    let tests = selected_tests(&data.test, options);
    let records: Vec<PointRecord> = with_pool(options.threads, || {
        tests
            .par_iter()
            .map(|x_t| run_point(&ctx, &model, &data.train, x_t, options))
            .collect()
    })?;
    drop(ctx);
    let report = ExperimentReport::from_records(
        dataset_name,
        data.feature_kind,
        options.algorithm,
        &records,
        start.elapsed().as_secs_f64(),
    );
    Ok(ExperimentOutcome {
        model,
        records,
        report,
    })
}

/// Reads the valid records of a (possibly interrupted) records file. A
/// truncated final line is ignored.
pub fn read_records(path: &Path) -> Result<Vec<PointRecord>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PointRecord>(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping unreadable record in {}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Like [`run_experiment`], persisting each record to
/// `out_dir/records.jsonl` as it completes and skipping test points already
/// recorded there. Finishes by rewriting the records in index order and
/// writing the summary, timing and CSV exports.
pub fn run_experiment_resumable(
    out_dir: &Path,
    dataset_name: &str,
    data: &DatasetSplits,
    hyper: &Hyperparams,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records_path = out_dir.join(RECORDS_FILE);
    let mut records: BTreeMap<usize, PointRecord> = read_records(&records_path)?
        .into_iter()
        .map(|r| (r.test_index, r))
        .collect();
    let done: BTreeSet<usize> = records.keys().copied().collect();
    if !done.is_empty() {
        log::info!("resuming: {} test points already recorded", done.len());
    }

    let model = train(&data.train, hyper)?;
    let ctx = InfluenceContext::new(&model, &data.train)?;
    let pending: Vec<&Instance> = selected_tests(&data.test, options)
        .iter()
        .filter(|x| !done.contains(&x.index))
        .collect();
    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(|e| Error::io(&records_path, e))?,
    );
    let fresh: Vec<PointRecord> = with_pool(options.threads, || {
        pending
            .par_iter()
            .map(|x_t| {
                let record = run_point(&ctx, &model, &data.train, x_t, options);
                if let Ok(line) = serde_json::to_string(&record) {
                    let mut file = sink.lock().expect("record sink poisoned");
                    if let Err(e) = writeln!(file, "{line}") {
                        log::warn!("could not append record {}: {e}", record.test_index);
                    }
                }
                record
            })
            .collect()
    })?;
    drop(sink);
    drop(ctx);
    for r in fresh {
        records.insert(r.test_index, r);
    }
    let keep: BTreeSet<usize> = selected_tests(&data.test, options).iter().map(|x| x.index).collect();
    let records: Vec<PointRecord> = records.into_values().filter(|r| keep.contains(&r.test_index)).collect();

    let report = ExperimentReport::from_records(
        dataset_name,
        data.feature_kind,
        options.algorithm,
        &records,
        start.elapsed().as_secs_f64(),
    );
    write_outputs(out_dir, &records, &report)?;
    Ok(ExperimentOutcome {
        model,
        records,
        report,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_seconds: f64,
    pub n_test: usize,
    pub seconds_per_test_point: f64,
}

/// Writes records, summary, timing and CSV exports, each atomically.
pub fn write_outputs(out_dir: &Path, records: &[PointRecord], report: &ExperimentReport) -> Result<()> {
    let mut sorted: Vec<&PointRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.test_index);
    let mut jsonl = Vec::new();
    for r in &sorted {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.push(b'\n');
    }
    write_atomic(&out_dir.join(RECORDS_FILE), &jsonl)?;
    write_json_atomic(&out_dir.join(SUMMARY_FILE), report)?;
    write_json_atomic(
        &out_dir.join(TIMING_FILE),
        &Timing {
            wall_time_seconds: report.wall_time_seconds,
            n_test: report.n_test,
            seconds_per_test_point: if report.n_test == 0 {
                0.0
            } else {
                report.wall_time_seconds / report.n_test as f64
            },
        },
    )?;

    let mut hist = csv::Writer::from_writer(Vec::new());
    hist.write_record(["k", "count"]).map_err(csv_err)?;
    for (k, count) in report.k_histogram() {
        hist.write_record([k.to_string(), count.to_string()]).map_err(csv_err)?;
    }
    write_atomic(&out_dir.join(K_HISTOGRAM_FILE), &hist.into_inner().map_err(|e| csv_err(e.into_error()))?)?;

    let mut scatter = csv::Writer::from_writer(Vec::new());
    scatter
        .write_record(["test_index", "k", "prob", "abs_margin"])
        .map_err(csv_err)?;
    for r in sorted.iter().filter(|r| r.found()) {
        let k = r.result.as_ref().map_or(0, FlipsetResult::k);
        scatter
            .write_record([
                r.test_index.to_string(),
                k.to_string(),
                r.prob.to_string(),
                r.margin.to_string(),
            ])
            .map_err(csv_err)?;
    }
    write_atomic(
        &out_dir.join(K_CONFIDENCE_FILE),
        &scatter.into_inner().map_err(|e| csv_err(e.into_error()))?,
    )
}

pub(crate) fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Input(format!("csv export failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{make_synthetic, SyntheticConfig};

    fn small() -> DatasetSplits {
        make_synthetic(&SyntheticConfig {
            seed: 21,
            n_train: 60,
            n_test: 12,
            dim: 3,
            separation: 2.0,
            noise_rate: 0.05,
        })
        .unwrap()
    }

    #[test]
    fn report_invariants_hold() {
        let data = small();
        let out = run_experiment("small", &data, &Hyperparams::with_lambda(0.1), &ExperimentOptions::default()).unwrap();
        let r = &out.report;
        assert_eq!(r.n_test, 12);
        assert!(r.flip_rate <= r.found_rate);
        assert_eq!(r.k_values.len(), r.n_found);
        assert_eq!(r.k_vs_confidence.len(), r.n_found);
        assert_eq!(r.k_histogram().values().sum::<usize>(), r.n_found);
    }

    #[test]
    fn recomputing_from_records_is_idempotent() {
        let data = small();
        let out = run_experiment("small", &data, &Hyperparams::with_lambda(0.1), &ExperimentOptions::default()).unwrap();
        let mut shuffled = out.records.clone();
        shuffled.reverse();
        let again = ExperimentReport::from_records("small", data.feature_kind, Algorithm::Iterative, &shuffled, out.report.wall_time_seconds);
        assert_eq!(again, out.report);
    }

    #[test]
    fn resumed_run_matches_a_fresh_run() {
        let data = small();
        let hyper = Hyperparams::with_lambda(0.1);
        let opts = ExperimentOptions {
            algorithm: Algorithm::Greedy,
            ..ExperimentOptions::default()
        };
        let fresh_dir = tempfile::tempdir().unwrap();
        let fresh = run_experiment_resumable(fresh_dir.path(), "small", &data, &hyper, &opts).unwrap();

        // Simulate an interruption: keep only some records plus a torn line.
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = fs::read_to_string(fresh_dir.path().join(RECORDS_FILE))
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        let partial = format!("{}\n{}\n{{\"test_ind", lines[3], lines[7]);
        fs::write(dir.path().join(RECORDS_FILE), partial).unwrap();
        let resumed = run_experiment_resumable(dir.path(), "small", &data, &hyper, &opts).unwrap();
        assert_eq!(resumed.records, fresh.records);
        assert_eq!(
            fs::read(dir.path().join(SUMMARY_FILE)).unwrap(),
            fs::read(fresh_dir.path().join(SUMMARY_FILE)).unwrap()
        );
        let csv = fs::read_to_string(dir.path().join(K_CONFIDENCE_FILE)).unwrap();
        assert!(csv.starts_with("test_index,k,prob,abs_margin\n"));
    }
}
