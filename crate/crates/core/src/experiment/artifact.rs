//! Line-oriented text serialization of run artifacts.
//!
//! A header of `key value` lines is followed by sections. Each section
//! opens with `[name key=value ...]` giving its shape, and holds one record
//! per line. Floats use Rust's shortest round-trip formatting, so parsing a
//! rendered artifact restores it bit for bit.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use super::config::Method;
use super::run::RunArtifact;
use super::train::{TraceEntry, TraceLoss};
use crate::error::{OsrError, Result};
use crate::evaluation::{metrics, ConfusionMatrix, Group};
use crate::openmax::{DistanceKind, WeibullModel};
use crate::predictor::ThresholdTable;
use crate::representation::MeanActivationVector;

const MAGIC: &str = "osr-run-artifact 1";

fn floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn render(a: &RunArtifact) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "{MAGIC}");
    let _ = writeln!(w, "dataset {}", a.dataset);
    let _ = writeln!(w, "method {}", a.method.name());
    let _ = writeln!(w, "set {}", a.set_name);
    let _ = writeln!(w, "run {}", a.run);
    let _ = writeln!(w, "seed {}", a.seed);
    let _ = writeln!(w, "batch_size {}", a.batch_size);
    let known: Vec<String> = a.known_classes.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(w, "known_classes {}", known.join(" "));
    let _ = writeln!(w, "total_classes {}", a.total_classes);
    let _ = writeln!(w, "closed_set {} {}", a.closed_set_correct, a.closed_set_total);

    let config_lines: Vec<&str> = a.config_text.lines().collect();
    let _ = writeln!(w, "[config lines={}]", config_lines.len());
    for l in config_lines {
        let _ = writeln!(w, "{l}");
    }

    let t = &a.thresholds;
    let _ = writeln!(
        w,
        "[thresholds rows={} percentile={:?} distance={}]",
        t.thresholds.len(),
        t.percentile,
        t.distance_kind.name()
    );
    for (c, v) in t.thresholds.iter().enumerate() {
        let _ = writeln!(w, "{c} {v:?}");
    }

    let cols = a.mavs.first().map_or(0, |m| m.vector.len());
    let _ = writeln!(w, "[mavs rows={} cols={cols}]", a.mavs.len());
    for m in &a.mavs {
        let _ = writeln!(w, "{} {} {}", m.class_id, m.count, floats(&m.vector));
    }

    let _ = writeln!(w, "[weibull rows={}]", a.weibulls.len());
    for m in &a.weibulls {
        let _ = writeln!(
            w,
            "{} {:?} {:?} {:?} {}",
            m.class_id, m.shape, m.scale, m.shift, m.tail_size
        );
    }

    let _ = writeln!(w, "[coverage rows={}]", a.coverage.len());
    for (c, v) in a.coverage.iter().enumerate() {
        let _ = writeln!(w, "{c} {v:?}");
    }

    let n = a.confusion.size;
    let _ = writeln!(w, "[confusion rows={n} cols={n}]");
    for r in 0..n {
        let row: Vec<String> = (0..n).map(|c| a.confusion.get(r, c).to_string()).collect();
        let _ = writeln!(w, "{}", row.join(" "));
    }

    let _ = writeln!(w, "[metrics rows=4 columns=group,precision,recall,f1,accuracy]");
    for g in Group::ALL {
        let m = a.metrics.group(g);
        let _ = writeln!(
            w,
            "{} {:?} {:?} {:?} {:?}",
            g.name(),
            m.precision,
            m.recall,
            m.f1,
            m.accuracy
        );
    }

    let _ = writeln!(w, "[loss_trace rows={}]", a.loss_trace.len());
    for e in &a.loss_trace {
        let _ = writeln!(w, "{} {} {:?}", e.iteration, e.loss.name(), e.value);
    }
    s
}

pub fn write_artifact(a: &RunArtifact, dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| OsrError::io(dir, e))?;
    let path = dir.join(a.file_name());
    std::fs::write(&path, render(a)).map_err(|e| OsrError::io(&path, e))?;
    Ok(path)
}

struct Cursor<'a> {
    lines: std::iter::Peekable<std::str::Lines<'a>>,
    line: usize,
    source: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(OsrError::Format {
            path: self.source.to_path_buf(),
            reason: format!("line {}: {}", self.line, reason.into()),
        })
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l),
            None => self.fail("unexpected end of artifact"),
        }
    }

    fn header(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ if l == key => Ok(""),
            _ => self.fail(format!("expected `{key}`, found `{l}`")),
        }
    }

    fn header_value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.header(key)?;
        self.parse(v)
    }

    /// Reads `[name k=v ...]` and returns the attributes.
    fn section(&mut self, name: &str) -> Result<Vec<(&'a str, &'a str)>> {
        let l = self.next()?;
        let inner = l.strip_prefix('[').and_then(|l| l.strip_suffix(']'));
        let mut parts = match inner {
            Some(i) => i.split(' '),
            None => return self.fail(format!("expected section [{name}], found `{l}`")),
        };
        if parts.next() != Some(name) {
            return self.fail(format!("expected section [{name}], found `{l}`"));
        }
        let mut attrs = Vec::new();
        for p in parts {
            match p.split_once('=') {
                Some(kv) => attrs.push(kv),
                None => return self.fail(format!("bad section attribute `{p}`")),
            }
        }
        Ok(attrs)
    }

    fn attr<T: std::str::FromStr>(&self, attrs: &[(&str, &str)], key: &str) -> Result<T> {
        match attrs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.parse()) {
            Some(Ok(v)) => Ok(v),
            _ => self.fail(format!("missing or bad attribute `{key}`")),
        }
    }

    fn parse<T: std::str::FromStr>(&self, token: &str) -> Result<T> {
        token
            .parse()
            .or_else(|_| self.fail(format!("cannot parse `{token}`")))
    }

    fn fields(&mut self, expected: usize) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let f: Vec<&str> = if l.is_empty() { Vec::new() } else { l.split(' ').collect() };
        if f.len() != expected {
            return self.fail(format!("expected {expected} fields, found {}", f.len()));
        }
        Ok(f)
    }
}

/// Parses a rendered artifact. Metrics are recomputed from the confusion
/// matrix; the stored metrics section is informational.
pub fn parse_artifact(text: &str, source: &Path) -> Result<RunArtifact> {
    let mut c = Cursor {
        lines: text.lines().peekable(),
        line: 0,
        source,
    };
    if c.next()? != MAGIC {
        return c.fail("not a run artifact");
    }
    let dataset = c.header("dataset")?.to_string();
    let method = Method::parse(c.header("method")?).or_else(|_| c.fail("unknown method"))?;
    let set_name = c.header("set")?.to_string();
    let run = c.header_value("run")?;
    let seed = c.header_value("seed")?;
    let batch_size = c.header_value("batch_size")?;
    let known_classes = c
        .header("known_classes")?
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| c.parse(t))
        .collect::<Result<Vec<usize>>>()?;
    let total_classes = c.header_value("total_classes")?;
    let closed: Vec<&str> = c.header("closed_set")?.split(' ').collect();
    if closed.len() != 2 {
        return c.fail("closed_set needs two counts");
    }
    let closed_set_correct = c.parse(closed[0])?;
    let closed_set_total = c.parse(closed[1])?;

    let attrs = c.section("config")?;
    let n: usize = c.attr(&attrs, "lines")?;
    let mut config_text = String::new();
    for _ in 0..n {
        config_text.push_str(c.next()?);
        config_text.push('\n');
    }

    let attrs = c.section("thresholds")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    let percentile = c.attr(&attrs, "percentile")?;
    let distance_name: String = c.attr(&attrs, "distance")?;
    let distance_kind = DistanceKind::parse(&distance_name).or_else(|_| c.fail("bad distance"))?;
    let mut thresholds = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = c.fields(2)?;
        thresholds.push(c.parse(f[1])?);
    }

    let attrs = c.section("mavs")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    let cols: usize = c.attr(&attrs, "cols")?;
    let mut mavs = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = c.fields(cols + 2)?;
        mavs.push(MeanActivationVector {
            class_id: c.parse(f[0])?,
            count: c.parse(f[1])?,
            vector: f[2..].iter().map(|t| c.parse(t)).collect::<Result<_>>()?,
        });
    }

    let attrs = c.section("weibull")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    let mut weibulls = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = c.fields(5)?;
        weibulls.push(WeibullModel {
            class_id: c.parse(f[0])?,
            shape: c.parse(f[1])?,
            scale: c.parse(f[2])?,
            shift: c.parse(f[3])?,
            tail_size: c.parse(f[4])?,
        });
    }

    let attrs = c.section("coverage")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    let mut coverage = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = c.fields(2)?;
        coverage.push(c.parse(f[1])?);
    }

    let attrs = c.section("confusion")?;
    let size: usize = c.attr(&attrs, "rows")?;
    let mut counts = Vec::with_capacity(size * size);
    for _ in 0..size {
        for t in c.fields(size)? {
            counts.push(c.parse(t)?);
        }
    }
    let confusion = ConfusionMatrix { size, counts };

    let attrs = c.section("metrics")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    for _ in 0..rows {
        c.fields(5)?;
    }

    let attrs = c.section("loss_trace")?;
    let rows: usize = c.attr(&attrs, "rows")?;
    let mut loss_trace = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = c.fields(3)?;
        let loss = match f[1] {
            "ls" => TraceLoss::Superlative,
            "ce" => TraceLoss::CrossEntropy,
            other => return c.fail(format!("unknown loss `{other}`")),
        };
        loss_trace.push(TraceEntry {
            iteration: c.parse(f[0])?,
            loss,
            value: c.parse(f[2])?,
        });
    }
    if c.lines.peek().is_some() {
        return c.fail("trailing content");
    }

    let metrics = metrics(&confusion).or_else(|e| c.fail(e.to_string()))?;
    Ok(RunArtifact {
        config_text,
        dataset,
        method,
        set_name,
        run,
        seed,
        known_classes,
        total_classes,
        batch_size,
        thresholds: ThresholdTable {
            thresholds,
            percentile,
            distance_kind,
        },
        mavs,
        weibulls,
        coverage,
        confusion,
        metrics,
        closed_set_correct,
        closed_set_total,
        loss_trace,
        wall_clock: Duration::ZERO,
    })
}

pub fn read_artifact(path: &Path) -> Result<RunArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| OsrError::io(path, e))?;
    parse_artifact(&text, path)
}

/// Reads every `*.txt` artifact in `dir`, in file-name order.
pub fn read_artifacts(dir: &Path) -> Result<Vec<RunArtifact>> {
    let entries = std::fs::read_dir(dir).map_err(|e| OsrError::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| OsrError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| read_artifact(p)).collect()
}
