//! Client for time-series metric sources.
//!
//! Both backends yield points as text lines `name value [timestamp]`; blank
//! lines and lines starting with `#` are ignored. A snapshot is the mean of
//! each requested series over the trailing window.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::objective::MetricsSnapshot;

/// Environment variable holding an optional bearer token for the HTTP endpoint.
pub const TOKEN_ENV: &str = "KNOBTUNE_TS_TOKEN";

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub name: String,
    pub value: f64,
    pub timestamp: Option<f64>,
}

pub trait SeriesSource {
    /// Points for `names` within the trailing `window_s` seconds, and the
    /// window end time.
    fn fetch(&self, names: &[&str], window_s: f64) -> Result<(Vec<Point>, f64)>;
}

pub fn parse_points(body: &str) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Transport(format!("malformed line {}: `{line}`", lineno + 1));
        let (name, value, timestamp) = match fields.as_slice() {
            [n, v] => (*n, *v, None),
            [n, v, t] => (*n, *v, Some(t.parse::<f64>().map_err(|_| bad())?)),
            _ => return Err(bad()),
        };
        let value: f64 = value.parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        out.push(Point {
            name: name.to_string(),
            value,
            timestamp,
        });
    }
    Ok(out)
}

/// Mean of each named series over the trailing window.
pub fn ts_query(source: &dyn SeriesSource, names: &[&str], window_s: f64) -> Result<MetricsSnapshot> {
    if !(window_s > 0.0) {
        return Err(Error::Definition(format!("query window must be positive, got {window_s}")));
    }
    let (points, end) = source.fetch(names, window_s)?;
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for p in &points {
        if let Some(&n) = names.iter().find(|n| **n == p.name) {
            let e = sums.entry(n).or_insert((0.0, 0));
            e.0 += p.value;
            e.1 += 1;
        }
    }
    let missing: Vec<String> = names.iter().filter(|n| !sums.contains_key(*n)).map(|n| n.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteSnapshot(missing));
    }
    Ok(MetricsSnapshot {
        values: sums.into_iter().map(|(n, (s, c))| (n.to_string(), s / c as f64)).collect(),
        window_start: end - window_s,
        window_end: end,
    })
}

/// Points recorded in a local file, each line `name value timestamp`.
#[derive(Clone, Debug)]
pub struct ReplayFileSource {
    pub path: PathBuf,
    /// Window end; defaults to the latest timestamp in the file.
    pub now: Option<f64>,
}

impl SeriesSource for ReplayFileSource {
    fn fetch(&self, names: &[&str], window_s: f64) -> Result<(Vec<Point>, f64)> {
        let text = std::fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let points = parse_points(&text)?;
        if points.iter().any(|p| p.timestamp.is_none()) {
            return Err(Error::Definition(format!(
                "{}: replay points need a timestamp",
                self.path.display()
            )));
        }
        let end = self
            .now
            .unwrap_or_else(|| points.iter().filter_map(|p| p.timestamp).fold(f64::NEG_INFINITY, f64::max));
        let start = end - window_s;
        let kept = points
            .into_iter()
            .filter(|p| names.contains(&p.name.as_str()))
            .filter(|p| p.timestamp.is_some_and(|t| t > start && t <= end))
            .collect();
        Ok((kept, end))
    }
}

/// HTTP endpoint answering `GET <url>?metrics=a,b&window=<seconds>` with
/// point lines, already restricted to the window.
#[derive(Clone, Debug)]
pub struct HttpSource {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl HttpSource {
    pub fn new(url: &str) -> Self {
        Self {
            url: url.to_string(),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            timeout: Duration::from_secs(30),
        }
    }
}

impl SeriesSource for HttpSource {
    fn fetch(&self, names: &[&str], window_s: f64) -> Result<(Vec<Point>, f64)> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent
            .get(&self.url)
            .query("metrics", names.join(","))
            .query("window", format!("{window_s}"));
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let body = match req.call() {
            Ok(mut resp) => resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::Transport(e.to_string()))?,
            Err(ureq::Error::StatusCode(code @ (401 | 403))) => {
                return Err(Error::Auth(format!("{} answered {code}", self.url)))
            }
            Err(e) => return Err(Error::Transport(format!("{}: {e}", self.url))),
        };
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Ok((parse_points(&body)?, now))
    }
}
