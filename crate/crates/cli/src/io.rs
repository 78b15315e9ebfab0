use std::io::Write;
use std::path::Path;

use cadlag::{Error, Result};

/// Rows of a CSV with header `x1,..,xd[,y]`.
pub struct Table {
    pub x: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

pub fn read_csv(path: &Path, require_y: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_y = names.last() == Some(&"y");
    let d = if has_y { names.len() - 1 } else { names.len() };
    for (i, name) in names.iter().take(d).enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(Error::InvalidInput(format!("header column {} is `{name}`, expected `x{}`", i + 1, i + 1)));
        }
    }
    if d == 0 {
        return Err(Error::InvalidInput("header has no x columns".into()));
    }
    if require_y && !has_y {
        return Err(Error::InvalidInput("data needs a final `y` column".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != names.len() {
            return Err(Error::InvalidInput(format!("row {} has {} fields, expected {}", line + 1, rec.len(), names.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("row {}: `{s}` is not a number", line + 1)))
        };
        x.push(rec.iter().take(d).map(parse).collect::<Result<Vec<_>>>()?);
        if has_y {
            y.push(parse(&rec[d])?);
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(Table { x, y: has_y.then_some(y) })
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// TOML when the extension is `.toml`, JSON otherwise.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}
