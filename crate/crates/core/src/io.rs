//! Matrix, ratings, trace and config files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save followed by a load reproduces every `f64` bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harness::{AggregateRow, PolicyKind, RunTrace, TraceStep};

pub const TRACE_HEADER: [&str; 6] = [
    "step",
    "row",
    "col",
    "reward",
    "expected_reward",
    "cum_regret",
];
pub const AGGREGATE_HEADER: [&str; 5] = ["policy", "rank", "step", "mean_regret", "stderr"];

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_cell<T: FromStr>(path: &Path, line: usize, cell: &str, what: &str) -> Result<T> {
    cell.trim().parse().map_err(|_| {
        parse_error(
            path,
            line,
            format!("cannot parse {what} from `{}`", cell.trim()),
        )
    })
}

fn parse_finite(path: &Path, line: usize, cell: &str, what: &str) -> Result<f64> {
    let v: f64 = parse_cell(path, line, cell, what)?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite {what} `{}`", cell.trim()),
        ));
    }
    Ok(v)
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_path(path)?)
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Reads a rectangular comma-separated matrix of decimal numbers.
pub fn load_dense_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for rec in reader(path, b',')?.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected,
                found: rec.len(),
            });
        }
        for cell in rec.iter() {
            values.push(parse_finite(path, line, cell, "matrix entry")?);
        }
        rows += 1;
    }
    match width {
        Some(w) if rows > 0 => Ok(DMatrix::from_row_slice(rows, w, &values)),
        _ => Err(Error::EmptyFile(path.to_path_buf())),
    }
}

pub fn save_dense_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
}

/// A list of ratings without duplicate `(user, item)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatingsTriples {
    pub rows: Vec<Triple>,
}

/// How to read a triples file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriplesOptions {
    pub delimiter: u8,
    /// Keep the last rating of a repeated pair instead of failing.
    pub allow_duplicates: bool,
}

impl Default for TriplesOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            allow_duplicates: false,
        }
    }
}

/// Reads `user,item,rating` lines. A first line whose user field is not an
/// integer is taken as a header.
pub fn load_ratings_triples(path: &Path, options: &TriplesOptions) -> Result<RatingsTriples> {
    let mut out = RatingsTriples::default();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    let mut first = true;
    for rec in reader(path, options.delimiter)?.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let is_first = std::mem::replace(&mut first, false);
        if is_first && rec.get(0).is_some_and(|c| c.trim().parse::<u64>().is_err()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: 3,
                found: rec.len(),
            });
        }
        let t = Triple {
            user: parse_cell(path, line, &rec[0], "user id")?,
            item: parse_cell(path, line, &rec[1], "item id")?,
            rating: parse_finite(path, line, &rec[2], "rating")?,
        };
        match seen.get(&(t.user, t.item)) {
            Some(&at) if options.allow_duplicates => out.rows[at] = t,
            Some(_) => {
                return Err(Error::DuplicatePair {
                    path: path.to_path_buf(),
                    line,
                    user: t.user,
                    item: t.item,
                })
            }
            None => {
                seen.insert((t.user, t.item), out.rows.len());
                out.rows.push(t);
            }
        }
    }
    if out.rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

pub fn save_ratings_triples(path: &Path, triples: &RatingsTriples, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)?;
    w.write_record(["user", "item", "rating"])?;
    for t in &triples.rows {
        w.write_record([t.user.to_string(), t.item.to_string(), t.rating.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Whether users become columns (the model's exchangeable units) or rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    UsersAsColumns,
    UsersAsRows,
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "users-as-columns" | "columns" => Ok(Self::UsersAsColumns),
            "users-as-rows" | "rows" => Ok(Self::UsersAsRows),
            _ => Err(Error::Config(format!(
                "unknown orientation `{s}` (expected users-as-columns or users-as-rows)"
            ))),
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UsersAsColumns => "users-as-columns",
            Self::UsersAsRows => "users-as-rows",
        })
    }
}

/// Matrix with a known-cell mask. Unknown cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl MaskedMatrix {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::domain("values and mask have different shapes"));
        }
        let values = values.zip_map(&mask, |v, known| if known { v } else { f64::NAN });
        if values
            .iter()
            .zip(mask.iter())
            .any(|(v, k)| *k && !v.is_finite())
        {
            return Err(Error::domain("known cells must be finite"));
        }
        Ok(Self { values, mask })
    }

    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.mask[(row, col)].then(|| self.values[(row, col)])
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn n_known(&self) -> usize {
        self.mask.iter().filter(|k| **k).count()
    }

    pub fn is_complete(&self) -> bool {
        self.n_known() == self.values.len()
    }

    /// The values, if every cell is known.
    pub fn into_complete(self) -> Result<DMatrix<f64>> {
        let missing = self.values.len() - self.n_known();
        if missing > 0 {
            return Err(Error::domain(format!(
                "matrix has {missing} unknown cells; supply a fully observed matrix"
            )));
        }
        Ok(self.values)
    }

    /// Known cells as triples with row and column indices as ids, following
    /// the orientation used by [`densify`].
    pub fn to_triples(&self, orient: Orientation) -> RatingsTriples {
        let mut rows = Vec::new();
        for j in 0..self.values.ncols() {
            for i in 0..self.values.nrows() {
                if let Some(v) = self.get(i, j) {
                    let (user, item) = match orient {
                        Orientation::UsersAsColumns => (j as u64, i as u64),
                        Orientation::UsersAsRows => (i as u64, j as u64),
                    };
                    rows.push(Triple {
                        user,
                        item,
                        rating: v,
                    });
                }
            }
        }
        RatingsTriples { rows }
    }
}

/// Places ratings in a `(D, N)` matrix. Ids are re-indexed to contiguous
/// ranks in order of first appearance; with users as columns, item ranks
/// index rows and user ranks index columns.
pub fn densify(
    triples: &RatingsTriples,
    shape: (usize, usize),
    orient: Orientation,
) -> Result<MaskedMatrix> {
    let (d, n) = shape;
    let mut users: HashMap<u64, usize> = HashMap::new();
    let mut items: HashMap<u64, usize> = HashMap::new();
    let mut values = DMatrix::from_element(d, n, f64::NAN);
    let mut mask = DMatrix::from_element(d, n, false);
    for t in &triples.rows {
        let nu = users.len();
        let u = *users.entry(t.user).or_insert(nu);
        let ni = items.len();
        let i = *items.entry(t.item).or_insert(ni);
        let (row, col) = match orient {
            Orientation::UsersAsColumns => (i, u),
            Orientation::UsersAsRows => (u, i),
        };
        if row >= d || col >= n {
            return Err(Error::domain(format!(
                "{} users and {} items do not fit a {d}x{n} matrix ({orient})",
                users.len(),
                items.len()
            )));
        }
        values[(row, col)] = t.rating;
        mask[(row, col)] = true;
    }
    MaskedMatrix::new(values, mask)
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "{}: header `{}` does not match `{}`",
            path.display(),
            got.join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

fn read_with_header(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut rd = reader(path, b',')?;
    let mut records = rd.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Schema(format!("{}: missing header", path.display()))),
    };
    check_header(path, &header, expected)?;
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: record_line(&rec),
                expected: expected.len(),
                found: rec.len(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_trace(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for s in &trace.steps {
        w.write_record([
            s.step.to_string(),
            s.row.to_string(),
            s.col.to_string(),
            s.reward.to_string(),
            s.expected_reward.to_string(),
            s.cum_regret.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the step table of a trace. Run metadata is not stored in the file.
pub fn load_trace(path: &Path) -> Result<RunTrace> {
    let mut trace = RunTrace::default();
    for rec in read_with_header(path, &TRACE_HEADER)? {
        let line = record_line(&rec);
        trace.steps.push(TraceStep {
            step: parse_cell(path, line, &rec[0], "step")?,
            row: parse_cell(path, line, &rec[1], "row")?,
            col: parse_cell(path, line, &rec[2], "col")?,
            reward: parse_finite(path, line, &rec[3], "reward")?,
            expected_reward: parse_finite(path, line, &rec[4], "expected_reward")?,
            cum_regret: parse_finite(path, line, &rec[5], "cum_regret")?,
        });
    }
    Ok(trace)
}

/// One line of an aggregate or merged export file.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub policy: PolicyKind,
    pub rank: usize,
    pub row: AggregateRow,
}

pub fn save_aggregate(path: &Path, records: &[AggregateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in records {
        w.write_record([
            r.policy.to_string(),
            r.rank.to_string(),
            r.row.step.to_string(),
            r.row.mean_regret.to_string(),
            r.row.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_aggregate(path: &Path) -> Result<Vec<AggregateRecord>> {
    read_with_header(path, &AGGREGATE_HEADER)?
        .into_iter()
        .map(|rec| {
            let line = record_line(&rec);
            Ok(AggregateRecord {
                policy: rec[0].trim().parse().map_err(|_| {
                    parse_error(path, line, format!("unknown policy `{}`", &rec[0]))
                })?,
                rank: parse_cell(path, line, &rec[1], "rank")?,
                row: AggregateRow {
                    step: parse_cell(path, line, &rec[2], "step")?,
                    mean_regret: parse_finite(path, line, &rec[3], "mean_regret")?,
                    stderr: parse_finite(path, line, &rec[4], "stderr")?,
                },
            })
        })
        .collect()
}

/// A flat `key = value` file. `#` starts a comment; blank lines are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_error(path, line, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_error(path, line, "empty key"));
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), line))
                .is_some()
            {
                return Err(parse_error(path, line, format!("key `{key}` given twice")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: line {line}: unknown key `{key}`",
                    self.path.display()
                )));
            }
        }
        Ok(())
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}: line {line}: cannot parse `{v}` for key `{key}`",
                    self.path.display()
                ))
            }),
        }
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?.ok_or_else(|| {
            Error::Config(format!(
                "{}: missing required key `{key}`",
                self.path.display()
            ))
        })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::Config(format!(
                            "{}: line {line}: cannot parse `{s}` in list `{key}`",
                            self.path.display()
                        ))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (k, (v, _)) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of lines in a text file, for tests and sanity checks.
pub fn count_lines(path: &Path) -> Result<usize> {
    Ok(BufReader::new(File::open(path)?).lines().count())
}
