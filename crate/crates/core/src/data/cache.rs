//! Cached split files.
//!
//! Plain UTF-8 text, one record per line, fields separated by tabs
//! (shown as two spaces; values within a field are separated by one space):
//!
//! ```text
//! fairaudit-split  1
//! shape  <n>  <m>
//! ids  <id_0> <id_1> ... <id_{n-1}>
//! s  <s_0> ... <s_{n-1}>
//! y  <y_0> ... <y_{n-1}>
//! col  <name>  <mean>  <stddev>  <x_0j> <x_1j> ... <x_{n-1,j}>
//! ...one `col` line per feature, in column order
//! ```
//!
//! Matrix values are stored column-major, each with the shortest decimal
//! representation that parses back to the same double.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::DataSplit;
use crate::error::{Error, Result};

const MAGIC: &str = "fairaudit-split";
const VERSION: &str = "1";

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn split_to_string(split: &DataSplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}\t{VERSION}");
    let _ = writeln!(out, "shape\t{}\t{}", split.len(), split.n_features());
    let _ = writeln!(out, "ids\t{}", join(&split.ids));
    let _ = writeln!(out, "s\t{}", join(&split.s));
    let _ = writeln!(out, "y\t{}", join(&split.y));
    for (j, col) in split.x.columns().into_iter().enumerate() {
        let (mean, sd) = split.standardization.get(j).copied().unwrap_or((0.0, 1.0));
        let _ = writeln!(
            out,
            "col\t{}\t{}\t{}\t{}",
            split.feature_names[j],
            mean,
            sd,
            join(col.iter())
        );
    }
    out
}

pub fn write_split(path: &Path, split: &DataSplit) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, split_to_string(split)).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<DataSplit> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    split_from_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

fn parse_list<T: std::str::FromStr>(field: &str, what: &str, n: usize) -> Result<Vec<T>> {
    let values: Vec<T> = if field.is_empty() {
        Vec::new()
    } else {
        field
            .split(' ')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::parse("split file", format!("bad {what} value `{v}`")))
            })
            .collect::<Result<_>>()?
    };
    if values.len() != n {
        return Err(Error::parse(
            "split file",
            format!("{what} has {} values, expected {n}", values.len()),
        ));
    }
    Ok(values)
}

pub fn split_from_str(text: &str) -> Result<DataSplit> {
    let bad = |msg: &str| Error::parse("split file", msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    if header != format!("{MAGIC}\t{VERSION}") {
        return Err(bad("unrecognized header"));
    }
    let mut field = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| bad("truncated file"))?;
        let parts: Vec<String> = line.split('\t').map(str::to_string).collect();
        if parts[0] != key {
            return Err(bad(&format!("expected `{key}` record")));
        }
        Ok(parts)
    };
    let shape = field("shape")?;
    if shape.len() != 3 {
        return Err(bad("malformed shape record"));
    }
    let n: usize = shape[1].parse().map_err(|_| bad("bad row count"))?;
    let m: usize = shape[2].parse().map_err(|_| bad("bad column count"))?;
    let ids: Vec<u64> = parse_list(field("ids")?.get(1).map_or("", |s| s), "ids", n)?;
    let s: Vec<u8> = parse_list(field("s")?.get(1).map_or("", |s| s), "s", n)?;
    let y: Vec<u8> = parse_list(field("y")?.get(1).map_or("", |s| s), "y", n)?;
    let mut x = Array2::zeros((n, m));
    let mut names = Vec::with_capacity(m);
    let mut standardization = Vec::with_capacity(m);
    for j in 0..m {
        let parts = field("col")?;
        if parts.len() != 5 {
            return Err(bad("malformed col record"));
        }
        names.push(parts[1].clone());
        let mean: f64 = parts[2].parse().map_err(|_| bad("bad mean"))?;
        let sd: f64 = parts[3].parse().map_err(|_| bad("bad stddev"))?;
        standardization.push((mean, sd));
        let values: Vec<f64> = parse_list(&parts[4], "matrix", n)?;
        for (i, v) in values.into_iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok(DataSplit {
        ids,
        x,
        s,
        y,
        feature_names: names,
        standardization,
    })
}
