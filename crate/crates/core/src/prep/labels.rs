//! Pseudo-label records and the line-oriented label store.
//!
//! Each line of a `.plabels.jsonl` file is one image:
//!
//! ```text
//! {"image_id":"img_0001","boxes":[[cx,cy,w,h,angle],...],"cls":[3,...],"embeddings":[[...],...]}
//! ```
//!
//! Floats are written with 17 significant digits so that parsing restores
//! every bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

pub const LABEL_SUFFIX: &str = ".plabels.jsonl";

/// One pseudo-annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    /// Box in pixel coordinates of the source image.
    pub bbox: OrientedBox,
    pub cls: usize,
    /// Unit-norm object embedding.
    pub embedding: Vec<f64>,
}

impl PseudoLabel {
    pub fn angle(&self) -> f64 {
        self.bbox.angle()
    }
}

/// All pseudo-labels of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub image_id: String,
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks embedding width, finiteness and class range.
    pub fn validate(&self, emb_dim: usize, k_cls: usize) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.embedding.len() != emb_dim {
                return Err(Error::Data(format!(
                    "{}: entry {i} has embedding width {}, expected {emb_dim}",
                    self.image_id,
                    e.embedding.len()
                )));
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{}: entry {i} has a non-finite embedding", self.image_id)));
            }
            if e.cls >= k_cls {
                return Err(Error::Data(format!(
                    "{}: entry {i} has class {} but only {k_cls} classes exist",
                    self.image_id, e.cls
                )));
            }
        }
        Ok(())
    }

    /// Serializes to one store line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = String::from("{\"image_id\":");
        s.push_str(&serde_json::to_string(&self.image_id).expect("strings always serialize"));
        s.push_str(",\"boxes\":[");
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            push_floats(&mut s, &e.bbox.to_array());
        }
        s.push_str("],\"cls\":[");
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", e.cls);
        }
        s.push_str("],\"embeddings\":[");
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            push_floats(&mut s, &e.embedding);
        }
        s.push_str("]}");
        s
    }

    /// Parses one store line.
    pub fn from_line(line: &str) -> std::result::Result<Self, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if raw.boxes.len() != raw.cls.len() || raw.boxes.len() != raw.embeddings.len() {
            return Err(format!(
                "{} boxes, {} classes and {} embeddings",
                raw.boxes.len(),
                raw.cls.len(),
                raw.embeddings.len()
            ));
        }
        let entries = raw
            .boxes
            .into_iter()
            .zip(raw.cls)
            .zip(raw.embeddings)
            .map(|((b, cls), embedding)| {
                let bbox = OrientedBox::new(b[0], b[1], b[2], b[3], b[4]).map_err(|e| e.to_string())?;
                Ok(PseudoLabel { bbox, cls, embedding })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(Self {
            image_id: raw.image_id,
            entries,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_id: String,
    boxes: Vec<[f64; 5]>,
    cls: Vec<usize>,
    embeddings: Vec<Vec<f64>>,
}

fn push_floats(s: &mut String, values: &[f64]) {
    s.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:.16e}");
    }
    s.push(']');
}

/// Writes one line per set, in the given order.
pub fn write_label_store(path: &Path, sets: &[PseudoLabelSet]) -> Result<()> {
    let mut out = String::new();
    for set in sets {
        if set.entries.iter().any(|e| e.embedding.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("{}: non-finite embedding", set.image_id)));
        }
        out.push_str(&set.to_line());
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads every set of a store; blank lines are skipped.
pub fn read_label_store(path: &Path) -> Result<Vec<PseudoLabelSet>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set = PseudoLabelSet::from_line(&line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        sets.push(set);
    }
    Ok(sets)
}
