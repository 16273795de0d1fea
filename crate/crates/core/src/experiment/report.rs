//! Report emission: per-run metrics, summary tables, plot data and a
//! manifest. Output depends only on the artifacts, so emitting twice gives
//! identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Method;
use super::run::RunArtifact;
use crate::error::{OsrError, Result};
use crate::evaluation::{
    aggregate, cumulative_mean, openness, summarize, welch_t_test, Group, Metric, RunMetrics,
};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_STATS_CSV: &str = "summary_stats.csv";
pub const CUMULATIVE_F1_CSV: &str = "cumulative_f1.csv";
pub const OPENNESS_F1_CSV: &str = "openness_f1.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const METRICS_HEADER: [&str; 9] =
    ["run", "seed", "method", "set", "group", "precision", "recall", "f1", "accuracy"];
pub const CUMULATIVE_HEADER: [&str; 5] = ["dataset", "method", "set", "runs", "mean_overall_f1"];
pub const OPENNESS_HEADER: [&str; 10] = [
    "dataset",
    "method",
    "train_classes",
    "test_classes",
    "target_classes",
    "openness",
    "runs",
    "mean_f1",
    "median_f1",
    "std_f1",
];

/// Row order of the summary table.
const METHOD_ORDER: [Method; 5] = [Method::Ce, Method::LsCe, Method::Om, Method::LsOm, Method::Ls];
const DATASET_ORDER: [&str; 4] = ["mnist", "cifar10", "fashion-mnist", "blobs"];
/// Column groups of the summary table, per metric.
const SUMMARY_GROUPS: [Group; 4] = [Group::Overall, Group::InclUnknown, Group::Known, Group::UnknownClass];

fn method_rank(m: Method) -> usize {
    METHOD_ORDER.iter().position(|&x| x == m).unwrap_or(METHOD_ORDER.len())
}

fn dataset_key(d: &str) -> (usize, String) {
    let rank = DATASET_ORDER.iter().position(|&x| x == d).unwrap_or(DATASET_ORDER.len());
    (rank, d.to_string())
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub summary_stats: PathBuf,
    pub cumulative_f1: PathBuf,
    pub openness_f1: PathBuf,
    pub manifest: PathBuf,
}

pub fn emit_report(artifacts: &[RunArtifact], out_dir: &Path) -> Result<ReportFiles> {
    if artifacts.is_empty() {
        return Err(OsrError::Input("no run artifacts to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| OsrError::io(out_dir, e))?;
    let mut sorted: Vec<&RunArtifact> = artifacts.iter().collect();
    sorted.sort_by(|a, b| {
        (dataset_key(&a.dataset), method_rank(a.method), &a.set_name, a.run)
            .cmp(&(dataset_key(&b.dataset), method_rank(b.method), &b.set_name, b.run))
    });

    let files = ReportFiles {
        metrics: out_dir.join(METRICS_CSV),
        summary: out_dir.join(SUMMARY_CSV),
        summary_stats: out_dir.join(SUMMARY_STATS_CSV),
        cumulative_f1: out_dir.join(CUMULATIVE_F1_CSV),
        openness_f1: out_dir.join(OPENNESS_F1_CSV),
        manifest: out_dir.join(MANIFEST_JSON),
    };
    write_file(&files.metrics, &metrics_csv(&sorted)?)?;
    let groups = by_dataset_method(&sorted);
    write_file(&files.summary, &summary_csv(&groups)?)?;
    write_file(&files.summary_stats, &summary_stats_csv(&groups)?)?;
    write_file(&files.cumulative_f1, &cumulative_csv(&sorted)?)?;
    write_file(&files.openness_f1, &openness_csv(&sorted)?)?;
    write_file(&files.manifest, &manifest_json(&sorted, &groups)?)?;
    Ok(files)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| OsrError::io(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| OsrError::Internal(e.to_string()))
}

fn record<I, T>(w: &mut csv::Writer<Vec<u8>>, fields: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(fields).map_err(|e| OsrError::Internal(e.to_string()))
}

fn metrics_csv(arts: &[&RunArtifact]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    record(&mut w, METRICS_HEADER)?;
    for a in arts {
        for g in Group::ALL {
            let m = a.metrics.group(g);
            record(
                &mut w,
                [
                    a.run.to_string(),
                    a.seed.to_string(),
                    a.method.name().to_string(),
                    a.set_name.clone(),
                    g.name().to_string(),
                    num(m.precision),
                    num(m.recall),
                    num(m.f1),
                    num(m.accuracy),
                ],
            )?;
        }
    }
    finish(w)
}

type Groups<'a> = Vec<((String, Method), Vec<&'a RunArtifact>)>;

/// Artifacts grouped by (dataset, method), in summary-table order.
fn by_dataset_method<'a>(arts: &[&'a RunArtifact]) -> Groups<'a> {
    let mut out: Groups<'a> = Vec::new();
    for a in arts {
        let key = (a.dataset.clone(), a.method);
        match out.last_mut() {
            Some((k, v)) if *k == key => v.push(a),
            _ => out.push((key, vec![a])),
        }
    }
    out
}

fn run_metrics(arts: &[&RunArtifact]) -> Vec<RunMetrics> {
    arts.iter().map(|a| a.metrics.clone()).collect()
}

fn summary_csv(groups: &Groups) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    let mut header = vec!["dataset".to_string(), "method".to_string(), "runs".to_string()];
    for m in Metric::ALL {
        for g in SUMMARY_GROUPS {
            header.push(format!("{}_{}", m.name(), g.name()));
        }
    }
    header.push("closed_set_accuracy".into());
    record(&mut w, &header)?;
    for ((dataset, method), arts) in groups {
        let agg = aggregate(&run_metrics(arts))?;
        let mut row = vec![dataset.clone(), method.name().to_string(), arts.len().to_string()];
        for m in Metric::ALL {
            for g in SUMMARY_GROUPS {
                row.push(num(agg.get(g, m).mean));
            }
        }
        let closed: Vec<f64> = arts.iter().map(|a| a.closed_set_accuracy()).collect();
        row.push(num(summarize(&closed)?.mean));
        record(&mut w, &row)?;
    }
    finish(w)
}

fn summary_stats_csv(groups: &Groups) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    record(&mut w, ["dataset", "method", "group", "metric", "runs", "mean", "median", "std"])?;
    for ((dataset, method), arts) in groups {
        let agg = aggregate(&run_metrics(arts))?;
        for e in &agg.entries {
            record(
                &mut w,
                [
                    dataset.clone(),
                    method.name().to_string(),
                    e.group.name().to_string(),
                    e.metric.name().to_string(),
                    agg.runs.to_string(),
                    num(e.summary.mean),
                    num(e.summary.median),
                    num(e.summary.std),
                ],
            )?;
        }
    }
    finish(w)
}

/// Running mean of overall F1 by run count, per set and pooled (`all`).
fn cumulative_csv(arts: &[&RunArtifact]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    record(&mut w, CUMULATIVE_HEADER)?;
    let mut series: BTreeMap<((usize, String), usize, String), Vec<f64>> = BTreeMap::new();
    let mut pooled: BTreeMap<((usize, String), usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for a in arts {
        let ds = dataset_key(&a.dataset);
        let mr = method_rank(a.method);
        series
            .entry((ds.clone(), mr, a.set_name.clone()))
            .or_default()
            .push(a.metrics.overall.f1);
        pooled
            .entry((ds, mr))
            .or_default()
            .entry(a.run)
            .or_default()
            .push(a.metrics.overall.f1);
    }
    let method_name = |mr: usize| METHOD_ORDER[mr].name();
    for ((ds, mr), by_run) in &pooled {
        // interleave sets run by run so early points already mix every set
        let values: Vec<f64> = by_run.values().flatten().copied().collect();
        let sets: Vec<_> = series.iter().filter(|((d, m, _), _)| d == ds && m == mr).collect();
        for ((_, _, set), v) in &sets {
            for (i, c) in cumulative_mean(v).iter().enumerate() {
                record(
                    &mut w,
                    [ds.1.clone(), method_name(*mr).into(), set.clone(), (i + 1).to_string(), num(*c)],
                )?;
            }
        }
        if sets.len() > 1 {
            for (i, c) in cumulative_mean(&values).iter().enumerate() {
                record(
                    &mut w,
                    [ds.1.clone(), method_name(*mr).into(), "all".into(), (i + 1).to_string(), num(*c)],
                )?;
            }
        }
    }
    finish(w)
}

/// Overall F1 per openness level, keyed by the number of training classes.
fn openness_csv(arts: &[&RunArtifact]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    record(&mut w, OPENNESS_HEADER)?;
    let mut levels: BTreeMap<((usize, String), usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for a in arts {
        let spec = a.openness_spec();
        levels
            .entry((dataset_key(&a.dataset), method_rank(a.method), spec.c_train, spec.c_test))
            .or_default()
            .push(a.metrics.overall.f1);
    }
    for ((ds, mr, c_train, c_test), f1) in &levels {
        let spec = crate::evaluation::OpennessSpec::protocol(*c_train, *c_test);
        let s = summarize(f1)?;
        record(
            &mut w,
            [
                ds.1.clone(),
                METHOD_ORDER[*mr].name().to_string(),
                c_train.to_string(),
                c_test.to_string(),
                spec.c_target.to_string(),
                num(openness(&spec)?),
                f1.len().to_string(),
                num(s.mean),
                num(s.median),
                num(s.std),
            ],
        )?;
    }
    finish(w)
}

#[derive(Serialize)]
struct Manifest {
    artifacts: Vec<ManifestRun>,
    configs: Vec<String>,
    comparisons: Vec<Comparison>,
}

#[derive(Serialize)]
struct ManifestRun {
    file: String,
    dataset: String,
    method: String,
    set: String,
    run: usize,
    seed: u64,
    batch_size: usize,
    known_classes: Vec<usize>,
    total_classes: usize,
    /// Index into `configs`.
    config: usize,
}

#[derive(Serialize)]
struct Comparison {
    dataset: String,
    a: String,
    b: String,
    runs_a: usize,
    runs_b: usize,
    /// Welch two-sided p-values; absent when either side has fewer than two runs.
    p_values: BTreeMap<&'static str, Option<f64>>,
}

fn manifest_json(arts: &[&RunArtifact], groups: &Groups) -> Result<Vec<u8>> {
    let mut configs: Vec<String> = Vec::new();
    let mut runs = Vec::new();
    for a in arts {
        let idx = match configs.iter().position(|c| *c == a.config_text) {
            Some(i) => i,
            None => {
                configs.push(a.config_text.clone());
                configs.len() - 1
            }
        };
        runs.push(ManifestRun {
            file: a.file_name(),
            dataset: a.dataset.clone(),
            method: a.method.name().into(),
            set: a.set_name.clone(),
            run: a.run,
            seed: a.seed,
            batch_size: a.batch_size,
            known_classes: a.known_classes.clone(),
            total_classes: a.total_classes,
            config: idx,
        });
    }

    let mut comparisons = Vec::new();
    for (i, ((da, ma), xa)) in groups.iter().enumerate() {
        for ((db, mb), xb) in &groups[i + 1..] {
            if da != db {
                continue;
            }
            let pick = |xs: &[&RunArtifact], f: fn(&RunMetrics) -> f64| {
                xs.iter().map(|a| f(&a.metrics)).collect::<Vec<f64>>()
            };
            let mut p_values = BTreeMap::new();
            let tests: [(&'static str, fn(&RunMetrics) -> f64); 2] = [
                ("overall_f1", |m| m.overall.f1),
                ("unknown_class_recall", |m| m.unknown_class.recall),
            ];
            for (name, f) in tests {
                p_values.insert(name, welch_t_test(&pick(xa, f), &pick(xb, f)).ok());
            }
            comparisons.push(Comparison {
                dataset: da.clone(),
                a: ma.name().into(),
                b: mb.name().into(),
                runs_a: xa.len(),
                runs_b: xb.len(),
                p_values,
            });
        }
    }

    let m = Manifest {
        artifacts: runs,
        configs,
        comparisons,
    };
    let mut bytes = serde_json::to_vec_pretty(&m).map_err(|e| OsrError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}
