//! Experiment files, sweep grids and the CSV summary.
//!
//! The file format is line oriented:
//!
//! ```text
//! # comment
//! [topology]
//! n = [5, 10, 15]
//! link_km = 1000
//! service = abr
//!
//! [run]
//! seed = 7
//! ```
//!
//! Every `key = value` line sets one parameter. A bracketed list turns the
//! key into a sweep axis; the run set is the cartesian product of all axes,
//! enumerated row-major in declaration order (the first axis varies
//! slowest). Keys may also appear before any section header as long as the
//! name is unambiguous; a bare `buffer_cells` means the UBR buffer.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use thiserror::Error;

use crate::error::SimError;
use crate::kernel::SimTime;
use crate::metrics::{abr_buffer_bound, ubr_buffer_bound, BufferBound, RunMetrics};
use crate::network::simulate;
use crate::topology::NSourceConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {key}: {message}")]
    Key {
        line: usize,
        key: String,
        message: String,
    },
    /// A grid point failed validation; `line` is where the offending key
    /// was set, when it was set in the file at all.
    #[error("{}{key}: {message} (grid point {point})", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        key: String,
        message: String,
        point: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Word(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Word(w) => f.write_str(w),
        }
    }
}

impl Value {
    fn parse(raw: &str) -> Value {
        if let Ok(i) = raw.parse::<i64>() {
            Value::Int(i)
        } else if let Ok(x) = raw.parse::<f64>() {
            Value::Float(x)
        } else {
            Value::Word(raw.trim_matches('"').to_string())
        }
    }

    fn as_f64(&self) -> Result<f64, String> {
        match self {
            Value::Int(i) => Ok(*i as f64),
            Value::Float(x) => Ok(*x),
            Value::Word(w) => Err(format!("expected a number, got `{w}`")),
        }
    }

    fn as_u64(&self) -> Result<u64, String> {
        match self {
            Value::Int(i) if *i >= 0 => Ok(*i as u64),
            Value::Int(i) => Err(format!("expected a non-negative integer, got {i}")),
            other => Err(format!("expected an integer, got `{other}`")),
        }
    }

    fn as_word(&self) -> Result<&str, String> {
        match self {
            Value::Word(w) => Ok(w),
            other => Err(format!("expected a keyword, got `{other}`")),
        }
    }

    fn as_bool(&self) -> Result<bool, String> {
        match self {
            Value::Word(w) if w == "true" => Ok(true),
            Value::Word(w) if w == "false" => Ok(false),
            other => Err(format!("expected true or false, got `{other}`")),
        }
    }
}

const SECTIONS: [&str; 5] = ["topology", "tcp", "abr", "ubr", "run"];

/// (section, key) pairs the parser accepts.
const KEYS: &[(&str, &str)] = &[
    ("topology", "n"),
    ("topology", "link_km"),
    ("topology", "source_km"),
    ("topology", "rtt_ms"),
    ("topology", "feedback_delay_ms"),
    ("topology", "link_rate_mbps"),
    ("topology", "service"),
    ("topology", "ack_path"),
    ("topology", "traffic"),
    ("tcp", "mss"),
    ("tcp", "maxwin_bytes"),
    ("tcp", "rto_ms"),
    ("tcp", "timer_granularity_ms"),
    ("tcp", "start_offset_ms"),
    ("tcp", "start_jitter_ms"),
    ("abr", "target_utilization"),
    ("abr", "interval_ms"),
    ("abr", "interval_cells"),
    ("abr", "rif"),
    ("abr", "mcr"),
    ("abr", "icr"),
    ("abr", "nrm"),
    ("abr", "buffer_cells"),
    ("ubr", "buffer_cells"),
    ("ubr", "drop_policy"),
    ("ubr", "epd_threshold"),
    ("run", "horizon_s"),
    ("run", "warmup_fraction"),
    ("run", "seed"),
    ("run", "record_series"),
    ("run", "trace_interval_us"),
    ("run", "bound_a"),
    ("run", "bound_c"),
    ("run", "out_dir"),
];

/// Canonical name of a key: `abr.buffer_cells` stays qualified because it
/// clashes with the UBR buffer; everything else is its bare name.
fn canonical(section: &str, key: &str) -> String {
    if key == "buffer_cells" && section == "abr" {
        "abr.buffer_cells".into()
    } else {
        key.into()
    }
}

fn resolve(section: Option<&str>, key: &str) -> Option<String> {
    match section {
        Some(s) => KEYS
            .iter()
            .find(|(sec, k)| *sec == s && *k == key)
            .map(|(sec, k)| canonical(sec, k)),
        None if key == "buffer_cells" => Some("buffer_cells".into()),
        None => KEYS
            .iter()
            .find(|(_, k)| *k == key)
            .map(|(sec, k)| canonical(sec, k)),
    }
}

fn apply(cfg: &mut NSourceConfig, key: &str, v: &Value) -> Result<(), String> {
    let opt_f = |v: &Value| v.as_f64().map(Some);
    match key {
        "n" => cfg.n = v.as_u64()? as usize,
        "link_km" => cfg.link_km = v.as_f64()?,
        "rtt_ms" => cfg.rtt_ms = opt_f(v)?,
        "feedback_delay_ms" => cfg.feedback_delay_ms = opt_f(v)?,
        "link_rate_mbps" => cfg.link_rate_bps = v.as_f64()? * 1e6,
        "service" => cfg.service = v.as_word()?.parse()?,
        "ack_path" => cfg.ack_path = v.as_word()?.parse()?,
        "traffic" => cfg.traffic = v.as_word()?.parse()?,
        "mss" => {
            cfg.mss = u32::try_from(v.as_u64()?).map_err(|_| "mss out of range".to_string())?
        }
        "maxwin_bytes" => cfg.max_window_bytes = v.as_u64()?,
        "rto_ms" => cfg.rto_ms = opt_f(v)?,
        "timer_granularity_ms" => cfg.timer_granularity_ms = v.as_f64()?,
        "start_offset_ms" => cfg.start_offset_ms = v.as_f64()?,
        "start_jitter_ms" => cfg.start_jitter_ms = v.as_f64()?,
        "target_utilization" => cfg.erica.target_utilization = v.as_f64()?,
        "interval_ms" => cfg.erica.interval = SimTime::from_millis_f64(v.as_f64()?),
        "interval_cells" => {
            cfg.erica.interval_cells =
                u32::try_from(v.as_u64()?).map_err(|_| "interval_cells out of range".to_string())?
        }
        "rif" => cfg.rif = v.as_f64()?,
        "mcr" => cfg.mcr = v.as_f64()?,
        "icr" => cfg.icr_fraction = v.as_f64()?,
        "nrm" => cfg.nrm = u32::try_from(v.as_u64()?).map_err(|_| "nrm out of range".to_string())?,
        "abr.buffer_cells" => cfg.abr_buffer_cells = Some(v.as_u64()? as usize),
        "buffer_cells" => cfg.ubr_buffer_cells = Some(v.as_u64()? as usize),
        "drop_policy" => cfg.drop_policy = v.as_word()?.parse()?,
        "epd_threshold" => cfg.epd_threshold = Some(v.as_u64()? as usize),
        "horizon_s" => cfg.horizon_s = opt_f(v)?,
        "warmup_fraction" => cfg.warmup_fraction = v.as_f64()?,
        "seed" => cfg.seed = v.as_u64()?,
        "record_series" => cfg.record_series = v.as_bool()?,
        "trace_interval_us" => cfg.trace_interval_us = v.as_f64()?,
        "bound_a" => cfg.bound_a = v.as_f64()?,
        "bound_c" => cfg.bound_c = v.as_f64()?,
        other => return Err(format!("unhandled key {other}")),
    }
    Ok(())
}

/// One key set in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub key: String,
    pub line: usize,
    pub values: Vec<Value>,
    /// Declared with brackets, i.e. a sweep axis.
    pub axis: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub settings: Vec<Setting>,
    pub out_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

/// A fully resolved run with the axis values that produced it.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub index: usize,
    pub config: NSourceConfig,
    pub axes: Vec<(String, Value)>,
}

fn split_list(raw: &str) -> Option<Vec<&str>> {
    let inner = raw.strip_prefix('[')?.strip_suffix(']')?;
    Some(
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut section: Option<String> = None;
    let mut settings: Vec<Setting> = Vec::new();
    let mut out_dir = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            if !name.contains(',') && !name.is_empty() && !name.chars().any(|c| c.is_ascii_digit()) {
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{body}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        let key = resolve(section.as_deref(), k).ok_or_else(|| ConfigError::Key {
            line,
            key: k.to_string(),
            message: match &section {
                Some(s) => format!("unknown key in [{s}]"),
                None => "unknown key".into(),
            },
        })?;
        if settings.iter().any(|s| s.key == key) || (key == "out_dir" && out_dir.is_some()) {
            return Err(ConfigError::Key {
                line,
                key,
                message: "set more than once".into(),
            });
        }
        if v.is_empty() {
            return Err(ConfigError::Key {
                line,
                key,
                message: "missing value".into(),
            });
        }
        if key == "out_dir" {
            out_dir = Some(PathBuf::from(v.trim_matches('"')));
            continue;
        }
        let (values, axis) = match split_list(v) {
            Some(items) if key == "source_km" => (items.into_iter().map(Value::parse).collect(), false),
            Some(items) => {
                if items.is_empty() {
                    return Err(ConfigError::Key {
                        line,
                        key,
                        message: "empty list".into(),
                    });
                }
                (items.into_iter().map(Value::parse).collect(), true)
            }
            None => (vec![Value::parse(v)], false),
        };
        // Type-check every value against a scratch config now so that a
        // mistake names its line even if that grid point is never reached.
        if key == "source_km" {
            for x in &values {
                x.as_f64().map_err(|message| ConfigError::Key {
                    line,
                    key: key.clone(),
                    message,
                })?;
            }
        } else {
            let mut scratch = NSourceConfig::default();
            for x in &values {
                apply(&mut scratch, &key, x).map_err(|message| ConfigError::Key {
                    line,
                    key: key.clone(),
                    message,
                })?;
            }
        }
        settings.push(Setting {
            key,
            line,
            values,
            axis,
        });
    }
    let spec = ExperimentSpec {
        settings,
        out_dir,
        seed_override: None,
    };
    spec.grid()?;
    Ok(spec)
}

fn field_to_key(field: &str) -> &str {
    match field {
        "abr_buffer_cells" => "abr.buffer_cells",
        "icr_fraction" => "icr",
        "link_rate_bps" => "link_rate_mbps",
        "max_window_bytes" => "maxwin_bytes",
        f => f,
    }
}

impl ExperimentSpec {
    pub fn axes(&self) -> impl Iterator<Item = &Setting> {
        self.settings.iter().filter(|s| s.axis)
    }

    pub fn len(&self) -> usize {
        self.axes().map(|s| s.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expands and validates every grid point; nothing runs if any point is
    /// invalid.
    pub fn grid(&self) -> Result<Vec<GridPoint>, ConfigError> {
        let axes: Vec<&Setting> = self.axes().collect();
        let total = self.len();
        let mut points = Vec::with_capacity(total);
        for index in 0..total {
            let mut cfg = NSourceConfig::default();
            let mut chosen = Vec::with_capacity(axes.len());
            // Row-major: the last axis varies fastest.
            let mut rem = index;
            let mut picks = vec![0usize; axes.len()];
            for (slot, a) in axes.iter().enumerate().rev() {
                picks[slot] = rem % a.values.len();
                rem /= a.values.len();
            }
            let mut axis_slot = 0;
            for s in &self.settings {
                let v = if s.axis {
                    let v = &s.values[picks[axis_slot]];
                    axis_slot += 1;
                    chosen.push((s.key.clone(), v.clone()));
                    v
                } else {
                    &s.values[0]
                };
                if s.key == "source_km" {
                    let km = s.values.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect();
                    cfg.source_km = Some(km);
                } else {
                    apply(&mut cfg, &s.key, v).map_err(|message| ConfigError::Key {
                        line: s.line,
                        key: s.key.clone(),
                        message,
                    })?;
                }
            }
            if let Some(seed) = self.seed_override {
                cfg.seed = seed;
            }
            cfg.validate().map_err(|e| match e {
                SimError::Config { field, message } => {
                    let key = field_to_key(&field).to_string();
                    let line = self.settings.iter().find(|s| s.key == key).map(|s| s.line);
                    ConfigError::Invalid {
                        line,
                        key,
                        message,
                        point: index,
                    }
                }
                other => ConfigError::Invalid {
                    line: None,
                    key: "config".into(),
                    message: other.to_string(),
                    point: index,
                },
            })?;
            points.push(GridPoint {
                index,
                config: cfg,
                axes: chosen,
            });
        }
        Ok(points)
    }
}

/// Runs points one after another on the calling thread.
pub fn run_points_sequential(points: &[GridPoint]) -> Vec<crate::Result<RunMetrics>> {
    points.iter().map(|p| simulate(&p.config)).collect()
}

/// Runs points on a rayon pool of `jobs` threads (0 = rayon's default).
/// Results come back in grid order whatever the completion order.
#[cfg(feature = "parallel")]
pub fn run_points_parallel(points: &[GridPoint], jobs: usize) -> Vec<crate::Result<RunMetrics>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| points.par_iter().map(|p| simulate(&p.config)).collect())
}

/// Runs every point, in parallel when the `parallel` feature is on.
pub fn run_points(points: &[GridPoint], jobs: usize) -> Vec<crate::Result<RunMetrics>> {
    #[cfg(feature = "parallel")]
    {
        if jobs != 1 {
            return run_points_parallel(points, jobs);
        }
    }
    let _ = jobs;
    run_points_sequential(points)
}

/// The fixed CSV schema: parameters first, then measurements.
pub const CSV_COLUMNS: &[&str] = &[
    "point",
    "n",
    "link_km",
    "rtt_ms",
    "feedback_delay_ms",
    "link_rate_mbps",
    "service",
    "ack_path",
    "traffic",
    "mss",
    "maxwin_bytes",
    "rto_ms",
    "timer_granularity_ms",
    "start_offset_ms",
    "start_jitter_ms",
    "target_utilization",
    "interval_ms",
    "interval_cells",
    "rif",
    "mcr",
    "icr",
    "nrm",
    "abr_buffer_cells",
    "ubr_buffer_cells",
    "drop_policy",
    "epd_threshold",
    "horizon_s",
    "warmup_fraction",
    "seed",
    "max_queue_cells",
    "queue_rtt_ratio",
    "max_source_queue_cells",
    "max_total_queue_cells",
    "goodput_mbps",
    "goodput_per_conn_mbps",
    "clr",
    "cells_sent",
    "cells_dropped",
    "timeouts",
    "duplicates",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row. `m` holds the run's measurements; the RTT and feedback
/// delay columns echo the effective values the geometry produced.
pub fn csv_row(p: &GridPoint, m: &RunMetrics) -> Vec<String> {
    let c = &p.config;
    let per_conn: Vec<String> = m.goodput_mbps.iter().map(|g| format!("{g:.6}")).collect();
    vec![
        p.index.to_string(),
        c.n.to_string(),
        c.link_km.to_string(),
        m.rtt.as_millis_f64().to_string(),
        m.feedback_delay.as_millis_f64().to_string(),
        (c.link_rate_bps / 1e6).to_string(),
        c.service.to_string(),
        c.ack_path.to_string(),
        c.traffic.to_string(),
        c.mss.to_string(),
        c.max_window_bytes.to_string(),
        c.rto().as_millis_f64().to_string(),
        c.timer_granularity_ms.to_string(),
        c.start_offset_ms.to_string(),
        c.start_jitter_ms.to_string(),
        c.erica.target_utilization.to_string(),
        c.erica.interval.as_millis_f64().to_string(),
        c.erica.interval_cells.to_string(),
        c.rif.to_string(),
        c.mcr.to_string(),
        c.icr_fraction.to_string(),
        c.nrm.to_string(),
        opt(c.abr_buffer_cells),
        opt(c.ubr_buffer_cells),
        c.drop_policy.to_string(),
        opt(c.epd_threshold()),
        c.horizon().as_secs_f64().to_string(),
        c.warmup_fraction.to_string(),
        c.seed.to_string(),
        m.bottleneck_max_queue.to_string(),
        format!("{:.4}", m.queue_rtt_ratio()),
        m.max_source_queue().to_string(),
        m.max_total_queue.to_string(),
        format!("{:.6}", m.aggregate_goodput_mbps()),
        per_conn.join(";"),
        format!("{:.9}", m.clr()),
        m.cells_sent.to_string(),
        m.cells_dropped.to_string(),
        m.timeouts.to_string(),
        m.duplicates_discarded.to_string(),
    ]
}

/// Outcome of a sweep: rows for the completed points and the failures.
#[derive(Debug, Default)]
pub struct SweepReport {
    pub completed: usize,
    pub failures: Vec<(usize, SimError)>,
}

/// Writes the header and one row per completed point, in grid order.
/// Failed points are skipped but reported.
pub fn write_csv<W: Write>(
    w: W,
    points: &[GridPoint],
    results: Vec<crate::Result<RunMetrics>>,
) -> anyhow::Result<(SweepReport, Vec<Option<RunMetrics>>)> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    let mut report = SweepReport::default();
    let mut kept = Vec::with_capacity(results.len());
    for (p, r) in points.iter().zip(results) {
        match r {
            Ok(m) => {
                out.write_record(csv_row(p, &m))?;
                report.completed += 1;
                kept.push(Some(m));
            }
            Err(e) => {
                report.failures.push((p.index, e));
                kept.push(None);
            }
        }
    }
    out.flush()?;
    Ok((report, kept))
}

/// Both closed-form buffer bounds for one configuration.
pub fn bounds(cfg: &NSourceConfig) -> crate::Result<(BufferBound, BufferBound)> {
    cfg.validate()?;
    let g = cfg.geometry();
    let abr = abr_buffer_bound(
        g.rtt.as_secs_f64(),
        g.feedback_delay.as_secs_f64(),
        cfg.link_rate_bps,
        cfg.bound_a,
        cfg.bound_c,
    )?;
    let ubr = ubr_buffer_bound(&vec![cfg.max_window_bytes; cfg.n], cfg.mss);
    Ok((abr, ubr))
}
