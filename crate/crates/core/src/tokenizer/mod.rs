//! Structure and cell tokenization, vocabularies, and HTML reassembly.

mod cells;
mod structure;
mod vocab;

pub use cells::{split_cell_content, split_cell_ids, tokenize_cells, BoldRule, CellSeq};
pub use structure::{
    classify_complexity, detokenize_structure, header_cell_flags, is_cell_open, normalize_structure_tokens,
    render_html, split_structure_html, tokenize_structure, validate_structure, Complexity, StructureSeq,
};
pub use vocab::{TokenVocab, VocabMode, EOS, PAD, SEP, SOS, SPECIAL_TOKENS};

use crate::error::Result;

/// Builds both vocabularies from `(structure tokens, cell token lists)` pairs
/// in first-seen order after the reserved specials.
pub fn build_vocab<'a, I, S>(corpus: I, fused: &[Vec<String>]) -> Result<(TokenVocab, TokenVocab)>
where
    I: IntoIterator<Item = (&'a [S], &'a [Vec<String>])>,
    S: AsRef<str> + 'a,
{
    let mut structure_vocab = TokenVocab::new();
    let mut cell_vocab = TokenVocab::new();
    for (structure, cells) in corpus {
        let seq = tokenize_structure(structure, &mut structure_vocab, VocabMode::Build, fused)?;
        tokenize_cells(cells, &seq, &mut cell_vocab, VocabMode::Build)?;
    }
    Ok((structure_vocab, cell_vocab))
}

/// Position map between left-to-right and right-to-left target sequences.
///
/// The real tokens before the first `EOS` (or first `PAD`) are reversed;
/// `EOS` and padding positions map to themselves.
pub fn mirror_map(targets: &[usize]) -> Vec<usize> {
    let m = targets.iter().position(|&t| t == EOS || t == PAD).unwrap_or(targets.len());
    (0..targets.len()).map(|p| if p < m { m - 1 - p } else { p }).collect()
}
