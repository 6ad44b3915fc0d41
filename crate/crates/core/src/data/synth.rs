use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::jsonl::{CellAnnotation, TableSample};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

const GRID: f64 = 0.5;
const INK: f64 = 1.0;
const ROW_PITCH: usize = 7;
const MERGE_RETRIES: usize = 10;

/// Parameters of the synthetic table generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Upper bound on rows per table (each table draws from `1..=rows`).
    pub rows: usize,
    pub cols: usize,
    pub merge_prob: f64,
    pub image_size: usize,
    pub alphabet: String,
    pub max_chars: usize,
    /// Probability that a body cell is left empty.
    pub empty_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 4,
            cols: 4,
            merge_prob: 0.3,
            image_size: 64,
            alphabet: "0123456789abcdefghijklmnopqrstuvwxyz".into(),
            max_chars: 3,
            empty_prob: 0.15,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("synthetic tables need at least one row and column".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_prob) || !(0.0..=1.0).contains(&self.empty_prob) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.alphabet.is_empty() || self.max_chars == 0 || self.image_size == 0 {
            return Err(Error::Config("alphabet, max_chars and image_size must be non-empty".into()));
        }
        Ok(())
    }

    fn col_pitch(&self) -> usize {
        4 * self.max_chars + 3
    }
}

/// The 3x3 pattern of the `i`-th alphabet character as a 9-bit mask.
/// 149 is coprime to 511, so distinct characters get distinct non-zero masks.
pub fn glyph_code(i: usize) -> u16 {
    ((i * 149 + 37) % 511 + 1) as u16
}

#[derive(Debug, Clone)]
struct Cell {
    row: usize,
    col: usize,
    rowspan: usize,
    colspan: usize,
    text: Vec<char>,
    header: bool,
}

fn layout(rng: &mut ChaCha8Rng, rows: usize, cols: usize, merge_prob: f64) -> Vec<Cell> {
    let head_rows = 1;
    let mut taken = vec![vec![false; cols]; rows];
    let mut cells = Vec::new();
    for r in 0..rows {
        let section_end = if r < head_rows { head_rows.min(rows) } else { rows };
        for c in 0..cols {
            if taken[r][c] {
                continue;
            }
            let (mut rs, mut cs) = (1, 1);
            if rng.gen_bool(merge_prob) {
                for _ in 0..MERGE_RETRIES {
                    let max_cs = (cols - c).min(3);
                    let max_rs = (section_end - r).min(3);
                    let try_cs = rng.gen_range(1..=max_cs);
                    let try_rs = rng.gen_range(1..=max_rs);
                    if try_cs == 1 && try_rs == 1 {
                        continue;
                    }
                    let free = (r..r + try_rs).all(|y| (c..c + try_cs).all(|x| !taken[y][x]));
                    if free {
                        (rs, cs) = (try_rs, try_cs);
                        break;
                    }
                }
            }
            for row in taken.iter_mut().skip(r).take(rs) {
                for slot in row.iter_mut().skip(c).take(cs) {
                    *slot = true;
                }
            }
            cells.push(Cell {
                row: r,
                col: c,
                rowspan: rs,
                colspan: cs,
                text: Vec::new(),
                header: r < head_rows,
            });
        }
    }
    cells
}

fn draw_rect(img: &mut GrayImage, x0: usize, y0: usize, x1: usize, y1: usize) {
    for x in x0..=x1 {
        img.set(x, y0, GRID);
        img.set(x, y1, GRID);
    }
    for y in y0..=y1 {
        img.set(x0, y, GRID);
        img.set(x1, y, GRID);
    }
}

/// Deterministic table with exactly `rows` x `cols` grid positions.
///
/// The first row is the header; merges never cross the header/body split.
/// Bboxes use exclusive upper corners.
pub fn generate_synthetic_table(seed: u64, rows: usize, cols: usize, cfg: &SynthConfig) -> Result<TableSample> {
    cfg.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Config("synthetic tables need at least one row and column".into()));
    }
    let mut rng = seeded_rng(seed);
    let alphabet: Vec<char> = cfg.alphabet.chars().collect();
    let mut cells = layout(&mut rng, rows, cols, cfg.merge_prob);
    for cell in &mut cells {
        let empty = !cell.header && rng.gen_bool(cfg.empty_prob);
        if !empty {
            let n = rng.gen_range(1..=cfg.max_chars);
            cell.text = (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        }
    }

    let cp = cfg.col_pitch();
    let width = cfg.image_size.max(cols * cp + 1);
    let height = cfg.image_size.max(rows * ROW_PITCH + 1);
    let mut img = GrayImage::new(width, height);
    let mut annotations = Vec::with_capacity(cells.len());
    for cell in &cells {
        let (x0, y0) = (cell.col * cp, cell.row * ROW_PITCH);
        draw_rect(&mut img, x0, y0, (cell.col + cell.colspan) * cp, (cell.row + cell.rowspan) * ROW_PITCH);
        for (k, ch) in cell.text.iter().enumerate() {
            let idx = alphabet.iter().position(|a| a == ch).expect("drawn from alphabet");
            let code = glyph_code(idx);
            let (gx, gy) = (x0 + 2 + 4 * k, y0 + 2);
            for bit in 0..9 {
                if code >> bit & 1 == 1 {
                    img.set(gx + bit % 3, gy + bit / 3, INK);
                }
            }
        }
        let n = cell.text.len();
        let bbox = (n > 0).then(|| [(x0 + 2) as f64, (y0 + 2) as f64, (x0 + 4 * n + 1) as f64, (y0 + 5) as f64]);
        let mut tokens: Vec<String> = cell.text.iter().map(char::to_string).collect();
        if cell.header && !tokens.is_empty() {
            tokens.insert(0, "<b>".into());
            tokens.push("</b>".into());
        }
        annotations.push(CellAnnotation { tokens, bbox });
    }

    let mut structure = Vec::new();
    let mut next = 0;
    for r in 0..rows {
        if r == 0 {
            structure.push("<thead>".to_string());
        }
        if r == 1 {
            structure.push("<tbody>".to_string());
        }
        structure.push("<tr>".to_string());
        while next < cells.len() && cells[next].row == r {
            let cell = &cells[next];
            if cell.colspan == 1 && cell.rowspan == 1 {
                structure.push("<td>".into());
            } else {
                structure.push("<td".into());
                if cell.colspan > 1 {
                    structure.push(format!(" colspan=\"{}\"", cell.colspan));
                }
                if cell.rowspan > 1 {
                    structure.push(format!(" rowspan=\"{}\"", cell.rowspan));
                }
                structure.push(">".into());
            }
            structure.push("</td>".into());
            next += 1;
        }
        structure.push("</tr>".to_string());
        if r == 0 {
            structure.push("</thead>".to_string());
        }
    }
    if rows > 1 {
        structure.push("</tbody>".to_string());
    }

    Ok(TableSample {
        filename: format!("synth_{seed}.png"),
        split: "train".into(),
        structure_tokens: structure,
        cells: annotations,
        image: Some(img),
    })
}

/// `n` tables whose shapes are drawn from `1..=cfg.rows` x `1..=cfg.cols`.
/// Sample `i` is named `synth_{i:05}.png`.
pub fn synth_corpus(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<TableSample>> {
    cfg.validate()?;
    let mut shapes = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let rows = shapes.gen_range(1..=cfg.rows);
            let cols = shapes.gen_range(1..=cfg.cols);
            let sample_seed: u64 = shapes.gen();
            let mut s = generate_synthetic_table(sample_seed, rows, cols, cfg)?;
            s.filename = format!("synth_{i:05}.png");
            Ok(s)
        })
        .collect()
}
