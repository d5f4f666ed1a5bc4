use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flipset::artifact::{load_model, manifest_for, save_model};
use flipset::config::RunConfig;
use flipset::fsutil::{read_json, write_atomic, write_json_atomic};
use flipset::influence::InfluenceContext;
use flipset::ingest::{load_dataset, CorpusFormat, DataSource};
use flipset::lab::{
    attribution_sweep, loo_calibration, run_experiment_resumable, verify_flip, ExperimentOptions,
};
use flipset::metrics::{evaluate, Metrics};
use flipset::model::train as fit;
use flipset::search::find_flipset;
use flipset::{AttributionMethod, Error, Result};

use crate::{RunArgs, EXIT_CHECK_FAILED};

const MODEL_DIR: &str = "model";
const CONFIG_SNAPSHOT: &str = "config.json";

fn source_for(path: &Path, previous: Option<&DataSource>) -> Result<DataSource> {
    let path = path.to_path_buf();
    if let Some(format) = CorpusFormat::from_path(&path) {
        let bow = match previous {
            Some(DataSource::Corpus { bow, .. }) => bow.clone(),
            _ => Default::default(),
        };
        return Ok(DataSource::Corpus {
            path,
            format: Some(format),
            bow,
        });
    }
    if path.extension().is_some_and(|e| e == "bin") {
        return Ok(DataSource::Embeddings { path });
    }
    Err(Error::Config(format!(
        "cannot tell the dataset kind of {}; use .jsonl, .csv or .bin, or a config file",
        path.display()
    )))
}

/// Config file plus flag overrides, validated, with the dataset path made
/// absolute so artifacts do not depend on the working directory.
fn resolve(run: &RunArgs) -> Result<RunConfig> {
    let mut config = match (&run.config, &run.data) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(data)) => {
            let name = data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            RunConfig::new(name, source_for(data, None)?)
        }
        (None, None) => return Err(Error::Config("pass --config or --data".into())),
    };
    if let (Some(_), Some(data)) = (&run.config, &run.data) {
        config.data = source_for(data, Some(&config.data))?;
    }
    if let Some(v) = &run.name {
        config.name = v.clone();
    }
    if let Some(v) = run.lambda {
        config.hyper.lambda = v;
    }
    if let Some(v) = run.tau {
        config.hyper.tau = v;
    }
    if let Some(v) = run.algorithm {
        config.algorithm = v;
    }
    if let Some(v) = run.max_passes {
        config.max_passes = v;
    }
    if let Some(v) = &run.output_dir {
        config.output_dir = v.clone();
    }
    if let Some(v) = run.seed {
        config.seed = v;
    }
    if let Some(v) = run.threads {
        config.threads = v;
    }
    if run.max_test_points.is_some() {
        config.max_test_points = run.max_test_points;
    }
    config.validate()?;
    if let Some(path) = config.data.path_mut() {
        *path = fs::canonicalize(&*path).map_err(|e| Error::io(&*path, e))?;
    }
    set_threads(config.threads);
    Ok(config)
}

fn set_threads(threads: usize) {
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

fn metrics_table(train: &Metrics, test: &Metrics) -> String {
    let auc = |m: &Metrics| m.auc.map_or("-".to_string(), |a| format!("{a:.4}"));
    let mut out = String::from("split   n       accuracy  f1      auc\n");
    for (name, m) in [("train", train), ("test", test)] {
        let _ = writeln!(out, "{name:<7} {:<7} {:<9.4} {:<7.4} {}", m.n, m.accuracy, m.f1, auc(m));
    }
    out
}

pub fn train(run: &RunArgs) -> Result<u8> {
    let start = Instant::now();
    let config = resolve(run)?;
    let loaded = load_dataset(&config.data)?;
    let model = fit(&loaded.splits.train, &config.hyper)?;
    let train_m = evaluate(&model, &loaded.splits.train)?;
    let test_m = evaluate(&model, &loaded.splits.test)?;
    let manifest = manifest_for(&config.name, &config.data, &loaded, &model, train_m, test_m);

    let run_dir = config.run_dir();
    let model_dir = run_dir.join(MODEL_DIR);
    save_model(&model_dir, &manifest, &model, loaded.vocabulary.as_ref())?;
    config.save(&run_dir.join(CONFIG_SNAPSHOT))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "model    {}", config.name);
    if let Some(p) = config.data.path() {
        let _ = writeln!(summary, "data     {}", p.display());
    }
    let _ = writeln!(
        summary,
        "shape    d = {}, {} train, {} test",
        manifest.dim, manifest.n_train, manifest.n_test
    );
    let _ = writeln!(
        summary,
        "newton   {} iterations, gradient norm {:.2e}",
        model.iterations, model.final_grad_norm
    );
    summary.push_str(&metrics_table(&train_m, &test_m));
    write_atomic(&run_dir.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    println!("wrote {}", model_dir.display());
    println!("done in {:.2} s", start.elapsed().as_secs_f64());
    Ok(0)
}

pub fn flipset(run: &RunArgs, model_dir: Option<&Path>, test_index: usize, verify: bool) -> Result<u8> {
    let start = Instant::now();
    let config = if model_dir.is_none() || run.config.is_some() || run.data.is_some() {
        Some(resolve(run)?)
    } else {
        None
    };
    let model_dir: PathBuf = match (model_dir, &config) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(c)) => c.run_dir().join(MODEL_DIR),
        (None, None) => unreachable!("resolve runs when no model is given"),
    };
    if !model_dir.join(flipset::artifact::MANIFEST_FILE).is_file() {
        return Err(Error::Config(format!(
            "no trained model in {}; run `flipset train` first",
            model_dir.display()
        )));
    }
    let algorithm = run
        .algorithm
        .or(config.as_ref().map(|c| c.algorithm))
        .unwrap_or(flipset::search::Algorithm::Iterative);
    let max_passes = run
        .max_passes
        .or(config.as_ref().map(|c| c.max_passes))
        .unwrap_or(flipset::search::DEFAULT_MAX_PASSES);

    let loaded = load_model(&model_dir)?;
    let data = loaded.load_data()?;
    let model = &loaded.model;
    let train_split = &data.splits.train;
    let x_t = data.splits.test.instance(test_index)?;
    let hyper = model.hyper;

    let ctx = InfluenceContext::new(model, train_split)?;
    let mut result = find_flipset(algorithm, &ctx, model, train_split, x_t, hyper.tau, max_passes)?;
    if verify && result.found() {
        result = verify_flip(&result, train_split, x_t, &hyper)?;
    }

    let p = result.original_prob;
    println!(
        "test point {test_index}: p = {p:.4} (label {}), margin {:.4}",
        result.original_label,
        (p - 0.5).abs()
    );
    if let Some(text) = &x_t.text {
        println!("  {text}");
    }
    if result.found() {
        println!(
            "{algorithm} flipset: k = {} after {} pass(es); estimated p after removal {:.4}",
            result.k(),
            result.outer_passes,
            result.estimated_prob
        );
        println!("  #    index   label  delta       cumulative  text");
        for (rank, ((&i, &d), c)) in result
            .members
            .iter()
            .zip(&result.member_deltas)
            .zip(result.cumulative_estimates())
            .enumerate()
        {
            let z = train_split.instance(i)?;
            let text = z.text.as_deref().unwrap_or("");
            println!("  {:<4} {i:<7} {:<6} {d:<+11.5} {c:<11.4} {text}", rank + 1, z.label);
        }
    } else {
        println!("{algorithm}: no subset found that flips the prediction");
    }
    if let Some(v) = result.verified {
        println!(
            "retrained p = {:.4}: {}",
            v.retrained_prob,
            if result.flipped() == Some(true) { "flipped" } else { "not flipped" }
        );
    }
    let out_dir = model_dir.parent().unwrap_or(Path::new(".")).join("flipsets");
    let out = out_dir.join(format!("{algorithm}-{test_index}.json"));
    write_json_atomic(&out, &result)?;
    println!("wrote {}", out.display());
    println!("done in {:.2} s", start.elapsed().as_secs_f64());
    Ok(0)
}

pub fn experiment(run: &RunArgs, verify: bool, fresh: bool) -> Result<u8> {
    let start = Instant::now();
    let config = resolve(run)?;
    let out_dir = config.run_dir().join(format!("experiment-{}", config.algorithm));
    let snapshot = out_dir.join(CONFIG_SNAPSHOT);
    let records = out_dir.join(flipset::lab::experiment::RECORDS_FILE);
    let stale = snapshot.is_file() && read_json::<RunConfig>(&snapshot).ok().as_ref() != Some(&config);
    if (fresh || stale) && records.is_file() {
        if stale {
            log::warn!("configuration changed since the last run; starting over");
        }
        fs::remove_file(&records).map_err(|e| Error::io(&records, e))?;
    }

    let loaded = load_dataset(&config.data)?;
    let options = ExperimentOptions {
        algorithm: config.algorithm,
        max_passes: config.max_passes,
        threads: config.threads,
        max_test_points: config.max_test_points,
        verify,
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_json_atomic(&snapshot, &config)?;
    let outcome = run_experiment_resumable(&out_dir, &config.name, &loaded.splits, &config.hyper, &options)?;
    let r = &outcome.report;
    let pct = |v: f64| format!("{:.1}%", 100.0 * v);
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    println!("{} ({}), {} test points", r.dataset_name, r.algorithm, r.n_test);
    println!("found        {} ({})", pct(r.found_rate), r.n_found);
    println!("flipped      {} of all, {} of found", pct(r.flip_rate), r.flip_rate_given_found.map_or("-".into(), pct));
    println!("mean k       {}", opt(r.mean_k));
    println!("mean passes  {}", opt(r.mean_outer_passes));
    if r.n_errors > 0 {
        println!("errors       {} (see {})", r.n_errors, records.display());
    }
    let wall = start.elapsed().as_secs_f64();
    println!("wall time    {wall:.2} s ({:.3} s per test point)", wall / r.n_test.max(1) as f64);
    println!("wrote {}", out_dir.display());
    Ok(0)
}

pub fn calibrate(run: &RunArgs, floor: Option<f64>, test_points: Option<usize>) -> Result<u8> {
    let start = Instant::now();
    let mut config = resolve(run)?;
    if let Some(f) = floor {
        config.calibration.floor = f;
    }
    if let Some(n) = test_points {
        config.calibration.test_points = n;
    }
    config.validate()?;
    let loaded = load_dataset(&config.data)?;
    let model = fit(&loaded.splits.train, &config.hyper)?;
    let tests = &loaded.splits.test.instances()[..config.calibration.test_points.min(loaded.splits.test.len())];
    let report = loo_calibration(&model, &loaded.splits.train, tests)?;

    let out = config.run_dir().join("calibration.json");
    write_json_atomic(&out, &report)?;
    println!("test_index  pearson  sign_agreement");
    for p in &report.points {
        let r = p.pearson.map_or("-".to_string(), |r| format!("{r:.4}"));
        println!("{:<11} {r:<8} {:.3}", p.test_index, p.sign_agreement);
    }
    let mean = report.mean_pearson;
    println!(
        "mean r = {}, sign agreement {:.3}, floor {}",
        mean.map_or("undefined".to_string(), |m| format!("{m:.4}")),
        report.sign_agreement,
        config.calibration.floor
    );
    println!("wrote {}", out.display());
    println!("done in {:.2} s", start.elapsed().as_secs_f64());
    if mean.is_some_and(|m| m >= config.calibration.floor) {
        Ok(0)
    } else {
        eprintln!("calibration below the floor");
        Ok(EXIT_CHECK_FAILED)
    }
}

pub fn attribution(
    run: &RunArgs,
    methods: Option<Vec<AttributionMethod>>,
    k_grid: Option<Vec<usize>>,
    test_points: Option<usize>,
) -> Result<u8> {
    let start = Instant::now();
    let mut config = resolve(run)?;
    if let Some(m) = methods {
        config.attribution.methods = m;
    }
    if let Some(k) = k_grid {
        config.attribution.k_grid = k;
    }
    if test_points.is_some() {
        config.attribution.test_points = test_points;
    }
    config.validate()?;
    let loaded = load_dataset(&config.data)?;
    let model = fit(&loaded.splits.train, &config.hyper)?;
    let all = loaded.splits.test.instances();
    let tests = &all[..config.attribution.test_points.map_or(all.len(), |n| n.min(all.len()))];
    let report = attribution_sweep(
        &model,
        &loaded.splits.train,
        tests,
        &config.attribution.methods,
        &config.attribution.k_grid,
        config.seed,
        config.threads,
    )?;
    let out_dir = config.run_dir().join("attribution");
    report.write(&out_dir)?;

    print!("{:<8}", "method");
    for k in &report.k_grid {
        print!(" {:>10}", format!("k={k}"));
    }
    println!();
    for curve in &report.curves {
        print!("{:<8}", curve.method.name());
        for p in &curve.points {
            print!(" {:>10.5}", p.mean_abs_delta);
        }
        println!();
    }
    println!("wrote {}", out_dir.display());
    println!("done in {:.2} s", start.elapsed().as_secs_f64());
    Ok(0)
}

pub fn serve(
    addr: SocketAddr,
    data_dir: PathBuf,
    static_dir: Option<PathBuf>,
    reports_dir: Option<PathBuf>,
    whatif_workers: usize,
) -> Result<u8> {
    if !addr.ip().is_loopback() {
        log::warn!("serving on {addr}; the API has no authentication");
    }
    let mut config = flipset_service::ServiceConfig::new(data_dir);
    config.static_dir = static_dir;
    config.reports_dir = reports_dir;
    config.whatif_workers = whatif_workers;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    println!("serving on http://{addr}");
    runtime.block_on(flipset_service::serve(config, addr))?;
    Ok(0)
}
