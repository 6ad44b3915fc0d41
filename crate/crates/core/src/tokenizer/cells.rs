use super::structure::{header_cell_flags, StructureSeq};
use super::vocab::{TokenVocab, VocabMode, SEP};
use crate::error::{Error, Result};

/// Inline markup kept as single tokens inside cell text.
const INLINE_TAGS: [&str; 9] = ["b", "i", "u", "sup", "sub", "strike", "s", "em", "strong"];

/// All cell contents of a table as one id stream, cells separated by `SEP`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CellSeq {
    pub ids: Vec<usize>,
    /// Structure-token position of each cell's opening token.
    pub alignment: Vec<usize>,
}

impl CellSeq {
    pub fn segments(&self) -> usize {
        self.alignment.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits a cell string into characters, keeping inline tags like `<b>`
/// and `</sup>` whole.
pub fn split_cell_content(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < s.len() {
        let rest = &s[i..];
        if rest.starts_with('<') {
            for tag in INLINE_TAGS {
                for candidate in [format!("<{tag}>"), format!("</{tag}>")] {
                    if rest.starts_with(&candidate) {
                        i += candidate.len();
                        out.push(candidate);
                        continue 'outer;
                    }
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty rest");
        out.push(ch.to_string());
        i += ch.len_utf8();
    }
    out
}

/// Maps each cell's tokens to ids and joins the cells with `SEP`.
pub fn tokenize_cells<T: AsRef<[String]>>(
    cells: &[T],
    structure: &StructureSeq,
    vocab: &mut TokenVocab,
    mode: VocabMode,
) -> Result<CellSeq> {
    let alignment = structure.cell_positions();
    if alignment.len() != cells.len() {
        return Err(Error::Alignment {
            expected: alignment.len(),
            found: cells.len(),
        });
    }
    let mut ids = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        if c > 0 {
            ids.push(SEP);
        }
        for t in cell.as_ref() {
            ids.push(vocab.lookup(t, mode)?);
        }
    }
    Ok(CellSeq { ids, alignment })
}

/// Splits a decoded cell id stream back into per-cell token lists.
pub fn split_cell_ids(ids: &[usize]) -> Vec<Vec<usize>> {
    ids.split(|&i| i == SEP).map(<[usize]>::to_vec).collect()
}

/// Dataset-wide header bold handling.
///
/// When every non-empty header cell of every table is wrapped in `<b>..</b>`,
/// the markers are removed from training streams and restored at assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoldRule {
    pub applies: bool,
}

fn is_wrapped_bold(cell: &[String]) -> bool {
    cell.len() >= 2 && cell[0] == "<b>" && cell[cell.len() - 1] == "</b>"
}

impl BoldRule {
    /// Scans `(structure tokens, cell token lists)` pairs. A corpus without
    /// any non-empty header cell does not enable the rule.
    pub fn scan<'a, I, S>(samples: I) -> Self
    where
        I: IntoIterator<Item = (&'a [S], &'a [Vec<String>])>,
        S: AsRef<str> + 'a,
    {
        let mut seen = false;
        for (structure, cells) in samples {
            let flags = header_cell_flags(structure);
            for (cell, &head) in cells.iter().zip(&flags) {
                if !head || cell.is_empty() {
                    continue;
                }
                if !is_wrapped_bold(cell) {
                    return BoldRule { applies: false };
                }
                seen = true;
            }
        }
        BoldRule { applies: seen }
    }

    /// Header cells with their outer bold markers removed, when the rule applies.
    pub fn strip<S: AsRef<str>>(&self, structure: &[S], cells: &[Vec<String>]) -> Vec<Vec<String>> {
        if !self.applies {
            return cells.to_vec();
        }
        let flags = header_cell_flags(structure);
        cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if flags.get(i).copied().unwrap_or(false) && is_wrapped_bold(cell) {
                    cell[1..cell.len() - 1].to_vec()
                } else {
                    cell.clone()
                }
            })
            .collect()
    }
}
