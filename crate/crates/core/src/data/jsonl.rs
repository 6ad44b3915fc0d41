use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{BBox, GrayImage};
use crate::error::{Error, Result};
use crate::tokenizer::{normalize_structure_tokens, is_cell_open};

/// One annotation line in the PubTabNet layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub filename: String,
    #[serde(default)]
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imgid: Option<u64>,
    pub html: HtmlAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtmlAnnotation {
    pub structure: StructureAnnotation,
    pub cells: Vec<CellAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureAnnotation {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAnnotation {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// A table with its annotation and, once loaded, its image.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSample {
    pub filename: String,
    pub split: String,
    pub structure_tokens: Vec<String>,
    pub cells: Vec<CellAnnotation>,
    pub image: Option<GrayImage>,
}

impl TableSample {
    pub fn from_annotation(a: Annotation) -> Self {
        TableSample {
            filename: a.filename,
            split: a.split,
            structure_tokens: a.html.structure.tokens,
            cells: a.html.cells,
            image: None,
        }
    }

    pub fn to_annotation(&self) -> Annotation {
        Annotation {
            filename: self.filename.clone(),
            split: self.split.clone(),
            imgid: None,
            html: HtmlAnnotation {
                structure: StructureAnnotation {
                    tokens: self.structure_tokens.clone(),
                },
                cells: self.cells.clone(),
            },
        }
    }

    pub fn cell_tokens(&self) -> Vec<Vec<String>> {
        self.cells.iter().map(|c| c.tokens.clone()).collect()
    }

    pub fn bboxes(&self) -> Vec<Option<BBox>> {
        self.cells.iter().map(|c| c.bbox).collect()
    }

    /// Loads the image from `dir/filename`.
    pub fn load_image(&mut self, dir: &Path) -> Result<()> {
        self.image = Some(GrayImage::load(&dir.join(&self.filename))?);
        Ok(())
    }

    /// Structure validity and cell-count agreement.
    pub fn check(&self) -> Result<()> {
        let tokens = normalize_structure_tokens(&self.structure_tokens)?;
        let slots = tokens.iter().filter(|t| is_cell_open(t)).count();
        if slots != self.cells.len() {
            return Err(Error::Alignment {
                expected: slots,
                found: self.cells.len(),
            });
        }
        for (i, c) in self.cells.iter().enumerate() {
            if let Some([x0, y0, x1, y1]) = c.bbox {
                if !(x0 < x1 && y0 < y1) {
                    return Err(Error::Structure {
                        index: i,
                        reason: format!("degenerate bbox {:?}", c.bbox),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Streams samples of one split from a JSON Lines file. Bad lines are
/// skipped and counted.
pub struct JsonlDataset {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    split: Option<String>,
    min_tokens: usize,
    warnings: usize,
}

impl JsonlDataset {
    pub fn warnings(&self) -> usize {
        self.warnings
    }
}

impl Iterator for JsonlDataset {
    type Item = TableSample;

    fn next(&mut self) -> Option<TableSample> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("{}: read error: {e}", self.path.display());
                    self.warnings += 1;
                    return None;
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let ann: Annotation = match serde_json::from_str(&line) {
                Ok(a) => a,
                Err(source) => {
                    let e = Error::Json {
                        path: self.path.clone(),
                        line: self.line_no,
                        source,
                    };
                    log::warn!("skipping line: {e}");
                    self.warnings += 1;
                    continue;
                }
            };
            if self.split.as_deref().is_some_and(|s| s != ann.split) {
                continue;
            }
            if ann.html.structure.tokens.len() < self.min_tokens {
                continue;
            }
            let sample = TableSample::from_annotation(ann);
            if let Err(e) = sample.check() {
                log::warn!("{}:{}: skipping {}: {e}", self.path.display(), self.line_no, sample.filename);
                self.warnings += 1;
                continue;
            }
            return Some(sample);
        }
    }
}

/// Opens `path` for iteration. `split = None` yields every split;
/// `min_tokens` drops tables with fewer structure tokens.
pub fn load_jsonl_dataset(path: &Path, split: Option<&str>, min_tokens: usize) -> Result<JsonlDataset> {
    let file = File::open(path).map_err(Error::io(path))?;
    Ok(JsonlDataset {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line_no: 0,
        split: split.map(str::to_string),
        min_tokens,
        warnings: 0,
    })
}

/// Writes annotations one per line.
pub fn write_jsonl(path: &Path, samples: &[Annotation]) -> Result<()> {
    let mut text = String::new();
    for a in samples {
        text.push_str(&serde_json::to_string(a).expect("annotation serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(Error::io(path))
}
