use mutabnet_autodiff::{NoGradGuard, Tensor};

use super::decoder::Direction;
use super::{ImageContext, Model};
use crate::data::BBox;
use crate::error::Result;
use crate::nn::ParamStore;
use crate::tokenizer::{is_cell_open, render_html, TokenVocab, EOS, PAD, SEP, SOS};

/// Greedy structure output.
#[derive(Debug, Clone)]
pub struct StructurePrediction {
    /// Token ids without start/end tokens.
    pub ids: Vec<usize>,
    /// Decoder states for `[SOS] + ids`.
    pub hidden: Tensor,
    /// Index into `ids` of every cell-opening token.
    pub cell_positions: Vec<usize>,
    /// Normalized box predicted with each cell-opening token.
    pub bboxes: Vec<BBox>,
    /// False when decoding stopped at the length cap.
    pub finished: bool,
}

fn argmax_excluding(row: &[f64], excluded: &[usize]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if !excluded.contains(&i) && (best.0 == usize::MAX || v > best.1) {
            best = (i, v);
        }
    }
    best.0
}

/// Left-to-right greedy decoding from the start token until EOS or the
/// length cap.
pub fn greedy_decode_structure(model: &Model, p: &ParamStore, ctx: &ImageContext, vocab: &TokenVocab) -> Result<StructurePrediction> {
    let _guard = NoGradGuard::new();
    let cap = model.config.max_structure_len;
    let mut inputs = vec![SOS];
    let mut finished = false;
    let mut last = None;
    while inputs.len() <= cap {
        let out = model.html.forward(p, &inputs, Direction::LtoR, &ctx.html)?;
        let next = argmax_excluding(out.token_logits.row(inputs.len() - 1), &[PAD, SOS, SEP]);
        if next == EOS {
            finished = true;
            last = Some(out);
            break;
        }
        if inputs.len() == cap {
            last = Some(out);
            break;
        }
        inputs.push(next);
    }
    let out = last.expect("loop runs at least once");
    let ids = inputs[1..].to_vec();
    let cell_positions: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| vocab.token(id).is_some_and(is_cell_open))
        .map(|(k, _)| k)
        .collect();
    let bboxes = cell_positions
        .iter()
        .map(|&k| {
            let r = out.bbox_pred.row(k);
            [r[0], r[1], r[2], r[3]]
        })
        .collect();
    Ok(StructurePrediction {
        ids,
        hidden: out.hidden,
        cell_positions,
        bboxes,
        finished,
    })
}

/// Greedy multi-cell decoding; returns one id list per cell. Cells the
/// decoder never reached (length cap or early EOS) come back empty.
pub fn greedy_decode_cells(
    model: &Model,
    p: &ParamStore,
    ctx: &ImageContext,
    html_hidden: &Tensor,
    cell_positions: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let n = cell_positions.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let _guard = NoGradGuard::new();
    let cap = model.config.max_cell_len;
    let mut inputs = vec![SOS];
    let mut seps = 0;
    while inputs.len() < cap {
        let logits = model.cell.forward(p, &inputs, html_hidden, cell_positions, &ctx.cell)?;
        let next = argmax_excluding(logits.row(inputs.len() - 1), &[PAD, SOS]);
        if next == EOS {
            break;
        }
        if next == SEP {
            seps += 1;
            if seps == n {
                break;
            }
        }
        inputs.push(next);
    }
    let mut cells: Vec<Vec<usize>> = inputs[1..].split(|&t| t == SEP).map(<[usize]>::to_vec).collect();
    cells.resize(n, Vec::new());
    Ok(cells)
}

/// Splices cell contents into the structure and wraps the table in a full
/// HTML document.
pub fn assemble_html<S: AsRef<str>, C: AsRef<str>>(structure: &[S], cells: &[C], bold: bool) -> Result<String> {
    Ok(format!("<html><body><table>{}</table></body></html>", render_html(structure, cells, bold)?))
}

/// End-to-end output for one image.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub html: String,
    pub structure: Vec<String>,
    pub cells: Vec<String>,
    /// Normalized cell boxes, one per cell.
    pub bboxes: Vec<BBox>,
    pub finished: bool,
}

/// Encoder, greedy structure, greedy cells and assembly for one `[1, S, S]` image.
pub fn recognize(model: &Model, p: &ParamStore, image: &Tensor, vocabs: &crate::data::Vocabs) -> Result<Recognition> {
    let _guard = NoGradGuard::new();
    let ctx = model.encode(p, image)?;
    let st = greedy_decode_structure(model, p, &ctx, &vocabs.structure)?;
    let cell_ids = greedy_decode_cells(model, p, &ctx, &st.hidden, &st.cell_positions)?;
    let structure = vocabs.structure.decode(&st.ids)?;
    let cells = cell_ids
        .iter()
        .map(|ids| Ok(vocabs.cells.decode(ids)?.concat()))
        .collect::<Result<Vec<String>>>()?;
    let html = assemble_html(&structure, &cells, vocabs.bold.applies)?;
    Ok(Recognition {
        html,
        structure,
        cells,
        bboxes: st.bboxes,
        finished: st.finished,
    })
}
