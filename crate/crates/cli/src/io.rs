//! File formats: observation CSVs, coefficient files, spec and config
//! files, and atomic output.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use tempfile::NamedTempFile;

use lcc_core::{ModelParams, ObservationSet, PopulationSpec};

use crate::error::{CliError, Result};

/// Lossless 17-significant-digit rendering.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column roles of an observation CSV.
#[derive(Debug, Clone)]
pub struct Layout {
    pub headers: Vec<String>,
    pub y: usize,
    pub weight: Option<usize>,
    pub offset: Option<usize>,
    pub features: Vec<usize>,
}

impl Layout {
    pub fn from_headers(path: &Path, headers: &csv::StringRecord) -> Result<Self> {
        let headers: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let y = find("y").ok_or_else(|| CliError::parse(path.display(), "no `y` column in the header"))?;
        let weight = find("weight");
        let offset = find("offset");
        let features = (0..headers.len())
            .filter(|&i| i != y && Some(i) != weight && Some(i) != offset)
            .collect();
        Ok(Self {
            headers,
            y,
            weight,
            offset,
            features,
        })
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|&i| self.headers[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: Vec<f64>,
    pub y: bool,
    pub weight: f64,
    pub offset: f64,
}

fn cell_error(path: &Path, line: u64, column: &str, message: impl std::fmt::Display) -> CliError {
    CliError::parse(path.display(), format!("line {line}, column `{column}`: {message}"))
}

fn parse_number(path: &Path, line: u64, column: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| cell_error(path, line, column, format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(cell_error(path, line, column, format!("`{text}` is not finite")));
    }
    Ok(v)
}

/// Parses one record. `line` is the 1-based line in the file.
pub fn parse_row(path: &Path, layout: &Layout, record: &csv::StringRecord, line: u64) -> Result<Row> {
    if record.len() != layout.headers.len() {
        return Err(CliError::parse(
            path.display(),
            format!("line {line}: {} fields, header has {}", record.len(), layout.headers.len()),
        ));
    }
    let y = match record[layout.y].trim() {
        "1" | "1.0" => true,
        "0" | "0.0" => false,
        other => return Err(cell_error(path, line, "y", format!("label `{other}` is not 0 or 1"))),
    };
    let x = layout
        .features
        .iter()
        .map(|&i| parse_number(path, line, &layout.headers[i], &record[i]))
        .collect::<Result<Vec<f64>>>()?;
    let weight = match layout.weight {
        Some(i) => {
            let w = parse_number(path, line, "weight", &record[i])?;
            if w <= 0.0 {
                return Err(cell_error(path, line, "weight", "weights must be positive"));
            }
            w
        }
        None => 1.0,
    };
    let offset = match layout.offset {
        Some(i) => parse_number(path, line, "offset", &record[i])?,
        None => 0.0,
    };
    Ok(Row { x, y, weight, offset })
}

pub struct CsvSource {
    pub path: PathBuf,
    pub reader: csv::Reader<BufReader<File>>,
    pub layout: Layout,
}

pub fn open_csv(path: &Path) -> Result<CsvSource> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| CliError::parse(path.display(), e.to_string()))?
        .clone();
    let layout = Layout::from_headers(path, &headers)?;
    Ok(CsvSource {
        path: path.to_path_buf(),
        reader,
        layout,
    })
}

impl CsvSource {
    /// Streams `(raw record, parsed row)` pairs.
    pub fn for_each(&mut self, mut f: impl FnMut(&csv::StringRecord, Row) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        let mut line = 1u64;
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| CliError::parse(self.path.display(), e.to_string()))?;
            if !more {
                return Ok(());
            }
            line += 1;
            let row = parse_row(&self.path, &self.layout, &record, line)?;
            f(&record, row)?;
        }
    }
}

/// Loads a whole observation CSV. Offsets are dropped when `use_offsets` is
/// false.
pub fn read_observations(path: &Path, use_offsets: bool) -> Result<(ObservationSet, Vec<String>)> {
    let mut src = open_csv(path)?;
    let p = src.layout.p();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut offsets = Vec::new();
    src.for_each(|_, row| {
        feats.extend_from_slice(&row.x);
        labels.push(row.y);
        weights.push(row.weight);
        offsets.push(row.offset);
        Ok(())
    })?;
    if labels.is_empty() {
        return Err(CliError::parse(path.display(), "no data rows"));
    }
    let mut data = ObservationSet::new(feats, p, labels)?.with_weights(weights)?;
    if use_offsets {
        data = data.with_offsets(offsets)?;
    }
    Ok((data, src.layout.feature_names()))
}

/// `name,value` lines, intercept first.
pub fn render_coefficients(names: &[String], params: &ModelParams) -> String {
    let mut out = format!("intercept,{}\n", fmt17(params.intercept));
    for (name, v) in names.iter().zip(&params.slopes) {
        out.push_str(&format!("{name},{}\n", fmt17(*v)));
    }
    out
}

/// Reads a coefficient file; blank lines and `#` comments are skipped.
/// When `names` is given the slope names must match it in order.
pub fn read_coefficients(path: &Path, names: Option<&[String]>) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .ok_or_else(|| CliError::parse(path.display(), format!("line {}: expected `name,value`", i + 1)))?;
        let v: f64 = value.trim().parse().map_err(|_| {
            CliError::parse(path.display(), format!("line {}: `{}` is not a number", i + 1, value.trim()))
        })?;
        if !v.is_finite() {
            return Err(CliError::parse(path.display(), format!("line {}: value is not finite", i + 1)));
        }
        entries.push((name.trim().to_string(), v));
    }
    match entries.first() {
        Some((n, _)) if n == "intercept" => {}
        _ => return Err(CliError::parse(path.display(), "the first coefficient must be `intercept`")),
    }
    if let Some(names) = names {
        let got: Vec<&str> = entries[1..].iter().map(|(n, _)| n.as_str()).collect();
        let want: Vec<&str> = names.iter().map(String::as_str).collect();
        if got != want {
            return Err(CliError::parse(
                path.display(),
                format!("coefficients {got:?} do not match features {want:?}"),
            ));
        }
    }
    Ok(ModelParams::new(entries[0].1, entries[1..].iter().map(|e| e.1).collect()))
}

fn read_toml(path: &Path) -> Result<(String, toml::Table)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::parse(path.display(), e.to_string()))?;
    Ok((text, table))
}

/// A population spec, either at the top level of the file or under a
/// `[spec]` table.
/// Tagged tables are buffered before they are deserialised, so type errors
/// inside them lose their position. When the offending value quoted in
/// `message` occurs exactly once in the file, name its key.
fn locate(table: &toml::Table, message: &str) -> String {
    fn leaves(prefix: &str, v: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    leaves(&key, v, out);
                }
            }
            toml::Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    leaves(&format!("{prefix}[{i}]"), v, out);
                }
            }
            other => out.push((prefix.to_string(), other.clone())),
        }
    }
    let Some(found) = message.strip_prefix("invalid type: ").and_then(|m| m.split(", expected").next()) else {
        return message.to_string();
    };
    let mut all = Vec::new();
    leaves("", &toml::Value::Table(table.clone()), &mut all);
    let hits: Vec<&String> = all
        .iter()
        .filter(|(_, v)| match v {
            toml::Value::String(s) => found == format!("string {s:?}"),
            toml::Value::Integer(i) => found == format!("integer `{i}`"),
            toml::Value::Float(f) => found == format!("floating point `{f}`"),
            toml::Value::Boolean(b) => found == format!("boolean `{b}`"),
            _ => false,
        })
        .map(|(k, _)| k)
        .collect();
    match hits.as_slice() {
        [key] => format!("field `{key}`: {message}"),
        _ => message.to_string(),
    }
}

fn parse_error(path: &Path, table: &toml::Table, e: toml::de::Error) -> CliError {
    let message = if e.span().is_some() {
        e.to_string()
    } else {
        locate(table, e.message())
    };
    CliError::parse(path.display(), message.trim_end())
}

pub fn load_spec(path: &Path) -> Result<PopulationSpec> {
    let (text, table) = read_toml(path)?;
    if table.contains_key("kind") {
        return toml::from_str(&text).map_err(|e| parse_error(path, &table, e));
    }
    match table.get("spec") {
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| parse_error(path, &table, e)),
        None => Err(CliError::parse(path.display(), "no `kind` key and no [spec] table")),
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let (text, table) = read_toml(path)?;
    toml::from_str(&text).map_err(|e| parse_error(path, &table, e))
}

pub fn config_has_key(path: &Path, key: &str) -> Result<bool> {
    Ok(read_toml(path)?.1.contains_key(key))
}

fn temp_beside(path: &Path) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    NamedTempFile::new_in(dir).map_err(|e| CliError::io(path.display(), e))
}

/// Writes via a temporary file in the same directory and renames it into
/// place.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let mut tmp = temp_beside(path)?;
    tmp.write_all(content).map_err(|e| CliError::io(path.display(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path.display(), e.error))?;
    Ok(())
}

/// Writes to `path`, or to standard output when there is none.
pub fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, content.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes()).map_err(|e| CliError::io("stdout", e))?;
            Ok(())
        }
    }
}

/// A CSV writer whose file only appears at `path` once committed.
pub struct AtomicCsv {
    path: PathBuf,
    writer: csv::Writer<NamedTempFile>,
}

impl AtomicCsv {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(temp_beside(path)?),
        })
    }

    pub fn write<I, T>(&mut self, record: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer
            .write_record(record)
            .map_err(|e| CliError::io(self.path.display(), std::io::Error::other(e)))
    }

    pub fn commit(self) -> Result<()> {
        let path = self.path;
        let tmp = self
            .writer
            .into_inner()
            .map_err(|e| CliError::io(path.display(), std::io::Error::other(e.to_string())))?;
        tmp.persist(&path).map_err(|e| CliError::io(path.display(), e.error))?;
        Ok(())
    }
}

/// `base` with `suffix` appended to its file name.
pub fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

pub fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable report");
    s.push('\n');
    s
}
