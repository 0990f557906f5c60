use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::Camera;

/// One frame of a parameter track (a JSON-lines record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub t: f64,
    pub psi: Vec<f32>,
    pub jaw: [f32; 3],
    pub camera: Camera,
    /// Overrides the identity shape for this frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f32>>,
}

impl ParamRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Parses a JSON-lines track. Blank lines are skipped; any malformed line
/// fails with [`Error::Track`] naming its 1-based line number.
pub fn parse_track(reader: impl BufRead) -> Result<Vec<ParamRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Track { line: i + 1, message };
        let rec: ParamRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if !rec.t.is_finite() || !rec.psi.iter().chain(&rec.jaw).all(|x| x.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        rec.camera.validate().map_err(|e| bad(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_track(path: impl AsRef<Path>) -> Result<Vec<ParamRecord>> {
    let file = std::fs::File::open(path)?;
    parse_track(std::io::BufReader::new(file))
}
