//! Predictions file: a short `#` header followed by `id,s,y,score,label`
//! rows. Scores are written in shortest round-trip form, so parsing and
//! re-serializing reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::predictions::PredictionSet;

const MAGIC: &str = "# fairaudit-predictions v1";
const COLUMNS: &str = "id,s,y,score,label";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionsFile {
    pub method: String,
    pub run: u32,
    pub config_hash: String,
    pub ids: Vec<u64>,
    pub s: Vec<u8>,
    pub y: Vec<u8>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionsFile {
    pub fn new(
        method: impl Into<String>,
        run: u32,
        config_hash: impl Into<String>,
        preds: &PredictionSet,
        s: &[u8],
        y: &[u8],
    ) -> Result<Self> {
        for len in [preds.scores.len(), preds.labels.len(), s.len(), y.len()] {
            if len != preds.ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: preds.ids.len(),
                    got: len,
                });
            }
        }
        Ok(Self {
            method: method.into(),
            run,
            config_hash: config_hash.into(),
            ids: preds.ids.clone(),
            s: s.to_vec(),
            y: y.to_vec(),
            scores: preds.scores.clone(),
            labels: preds.labels.clone(),
        })
    }

    pub fn predictions(&self) -> PredictionSet {
        PredictionSet {
            ids: self.ids.clone(),
            scores: self.scores.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.ids.len() * 32 + 128);
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "# method: {}", self.method);
        let _ = writeln!(out, "# run: {}", self.run);
        let _ = writeln!(out, "# config_hash: {}", self.config_hash);
        let _ = writeln!(out, "{COLUMNS}");
        for i in 0..self.ids.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.ids[i], self.s[i], self.y[i], self.scores[i], self.labels[i]
            );
        }
        out
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::parse(context, format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            if key.is_empty() {
                return if line == MAGIC {
                    Ok(String::new())
                } else {
                    Err(err(i + 1, "not a predictions file"))
                };
            }
            line.strip_prefix("# ")
                .and_then(|rest| rest.strip_prefix(key))
                .and_then(|rest| rest.strip_prefix(": "))
                .map(str::to_string)
                .ok_or_else(|| err(i + 1, &format!("expected `# {key}: ...`")))
        };
        header("")?;
        let method = header("method")?;
        let run = header("run")?
            .parse()
            .map_err(|_| err(3, "run is not an integer"))?;
        let config_hash = header("config_hash")?;
        match lines.next() {
            Some((_, COLUMNS)) => {}
            Some((i, _)) => return Err(err(i + 1, "unexpected column header")),
            None => return Err(err(5, "missing column header")),
        }

        let mut file = PredictionsFile {
            method,
            run,
            config_hash,
            ids: Vec::new(),
            s: Vec::new(),
            y: Vec::new(),
            scores: Vec::new(),
            labels: Vec::new(),
        };
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(err(i + 1, "expected 5 fields"));
            }
            let bit = |v: &str, what: &str| -> Result<u8> {
                match v {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(err(i + 1, &format!("{what} `{v}` is not 0 or 1"))),
                }
            };
            file.ids.push(
                fields[0]
                    .parse()
                    .map_err(|_| err(i + 1, "id is not an integer"))?,
            );
            file.s.push(bit(fields[1], "s")?);
            file.y.push(bit(fields[2], "y")?);
            let score: f64 = fields[3]
                .parse()
                .map_err(|_| err(i + 1, "score is not a number"))?;
            if !score.is_finite() {
                return Err(err(i + 1, "score is not finite"));
            }
            file.scores.push(score);
            file.labels.push(bit(fields[4], "label")?);
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Load and require the file to come from the given config.
    pub fn load_checked(path: &Path, config_hash: &str) -> Result<Self> {
        let file = Self::load(path)?;
        if file.config_hash != config_hash {
            return Err(Error::ConfigHashMismatch {
                path: path.to_path_buf(),
                found: file.config_hash,
                expected: config_hash.to_string(),
            });
        }
        Ok(file)
    }
}
