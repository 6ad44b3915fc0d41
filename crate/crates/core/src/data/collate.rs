use std::fs;
use std::path::Path;

use mutabnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::image::{normalize_bboxes, preprocess_image, standardize, BBox};
use super::jsonl::TableSample;
use crate::error::{Error, Result};
use crate::tokenizer::{
    build_vocab, classify_complexity, mirror_map, normalize_structure_tokens, tokenize_cells, tokenize_structure,
    BoldRule, CellSeq, Complexity, StructureSeq, TokenVocab, VocabMode, EOS, PAD, SOS,
};

pub const STRUCTURE_VOCAB_FILE: &str = "structure_vocab.txt";
pub const CELL_VOCAB_FILE: &str = "cell_vocab.txt";
pub const TOKENIZER_FILE: &str = "tokenizer.toml";

/// Both vocabularies plus the dataset-level tokenizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabs {
    pub structure: TokenVocab,
    pub cells: TokenVocab,
    pub bold: BoldRule,
    pub fused: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRecord {
    bold_headers: bool,
    fused: Vec<Vec<String>>,
}

impl Vocabs {
    pub fn build(samples: &[TableSample], fused: Vec<Vec<String>>) -> Result<Self> {
        let cells: Vec<Vec<Vec<String>>> = samples.iter().map(TableSample::cell_tokens).collect();
        let bold = BoldRule::scan(samples.iter().zip(&cells).map(|(s, c)| (s.structure_tokens.as_slice(), c.as_slice())));
        let stripped: Vec<Vec<Vec<String>>> = samples
            .iter()
            .zip(&cells)
            .map(|(s, c)| bold.strip(&s.structure_tokens, c))
            .collect();
        let (structure, cell_vocab) = build_vocab(
            samples.iter().zip(&stripped).map(|(s, c)| (s.structure_tokens.as_slice(), c.as_slice())),
            &fused,
        )?;
        Ok(Vocabs {
            structure,
            cells: cell_vocab,
            bold,
            fused,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.structure.save(&dir.join(STRUCTURE_VOCAB_FILE))?;
        self.cells.save(&dir.join(CELL_VOCAB_FILE))?;
        let record = TokenizerRecord {
            bold_headers: self.bold.applies,
            fused: self.fused.clone(),
        };
        let path = dir.join(TOKENIZER_FILE);
        let text = toml::to_string(&record).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text).map_err(Error::io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(TOKENIZER_FILE);
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let record: TokenizerRecord = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Vocabs {
            structure: TokenVocab::load(&dir.join(STRUCTURE_VOCAB_FILE))?,
            cells: TokenVocab::load(&dir.join(CELL_VOCAB_FILE))?,
            bold: BoldRule {
                applies: record.bold_headers,
            },
            fused: record.fused,
        })
    }
}

/// Length caps on decoder inputs (including the start token).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLimits {
    pub max_structure_len: usize,
    pub max_cell_len: usize,
}

/// One table converted to model inputs.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    pub filename: String,
    /// `[1, S, S]`
    pub image: Tensor,
    pub structure: StructureSeq,
    pub cells: CellSeq,
    /// Normalized bbox of each cell, `None` for cells without one.
    pub bboxes: Vec<Option<BBox>>,
    pub complexity: Complexity,
}

impl EncodedSample {
    pub fn fits(&self, limits: SeqLimits) -> bool {
        self.structure.len() + 1 <= limits.max_structure_len && self.cells.len() + 1 <= limits.max_cell_len
    }
}

/// Tokenizes with frozen vocabularies and preprocesses the image.
pub fn encode_sample(sample: &TableSample, vocabs: &Vocabs, image_size: usize, standardize_image: bool) -> Result<EncodedSample> {
    let img = sample
        .image
        .as_ref()
        .ok_or_else(|| Error::Config(format!("image of {} is not loaded", sample.filename)))?;
    let (mut img, record) = preprocess_image(img, image_size)?;
    if standardize_image {
        standardize(&mut img);
    }
    let mut structure_vocab = vocabs.structure.clone();
    let mut cell_vocab = vocabs.cells.clone();
    let structure = tokenize_structure(&sample.structure_tokens, &mut structure_vocab, VocabMode::Frozen, &vocabs.fused)?;
    let cell_tokens = vocabs.bold.strip(&sample.structure_tokens, &sample.cell_tokens());
    let cells = tokenize_cells(&cell_tokens, &structure, &mut cell_vocab, VocabMode::Frozen)?;
    let (bboxes, _) = normalize_bboxes(&sample.bboxes(), &record);
    // Boxes of empty cells carry no supervision.
    let bboxes = bboxes
        .into_iter()
        .zip(&cell_tokens)
        .map(|(b, t)| if t.is_empty() { None } else { b })
        .collect();
    Ok(EncodedSample {
        filename: sample.filename.clone(),
        image: img.to_tensor(),
        structure,
        cells,
        bboxes,
        complexity: classify_complexity(&normalize_structure_tokens(&sample.structure_tokens)?),
    })
}

/// Teacher-forcing inputs and targets for a set of samples, padded with
/// `PAD` to the longest sequence of each kind.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub filenames: Vec<String>,
    pub images: Vec<Tensor>,
    /// `[SOS, t1..tN]`
    pub structure_inputs: Vec<Vec<usize>>,
    /// `[t1..tN, EOS]`
    pub structure_targets: Vec<Vec<usize>>,
    pub structure_mask: Vec<Vec<bool>>,
    /// `[SOS, tN..t1]`
    pub rtl_inputs: Vec<Vec<usize>>,
    /// `[tN..t1, EOS]`
    pub rtl_targets: Vec<Vec<usize>>,
    /// `rtl_targets[p] == structure_targets[mirror[p]]`
    pub mirror: Vec<Vec<usize>>,
    pub cell_inputs: Vec<Vec<usize>>,
    pub cell_targets: Vec<Vec<usize>>,
    pub cell_mask: Vec<Vec<bool>>,
    /// Structure position of each cell's opening token.
    pub alignments: Vec<Vec<usize>>,
    /// Bbox target at each structure target position.
    pub bbox_targets: Vec<Vec<BBox>>,
    pub bbox_mask: Vec<Vec<bool>>,
    pub skipped: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.filenames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filenames.is_empty()
    }
}

fn pad_all(seqs: &mut [Vec<usize>]) -> Vec<Vec<bool>> {
    let max = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter_mut()
        .map(|s| {
            let n = s.len();
            s.resize(max, PAD);
            (0..max).map(|i| i < n).collect()
        })
        .collect()
}

/// Builds a batch; samples over the length caps are skipped.
pub fn collate_encoded(samples: &[&EncodedSample], limits: SeqLimits) -> Batch {
    let mut b = Batch::default();
    for s in samples {
        if !s.fits(limits) {
            log::warn!("skipping {}: sequence longer than the configured caps", s.filename);
            b.skipped += 1;
            continue;
        }
        let tokens = &s.structure.ids;
        let mut input = vec![SOS];
        input.extend(tokens);
        let mut target = tokens.clone();
        target.push(EOS);
        let mut rtl_input = vec![SOS];
        rtl_input.extend(tokens.iter().rev());
        let mut rtl_target: Vec<usize> = tokens.iter().rev().copied().collect();
        rtl_target.push(EOS);

        let mut boxes = vec![[0.0; 4]; target.len()];
        let mut box_mask = vec![false; target.len()];
        for (c, &pos) in s.cells.alignment.iter().enumerate() {
            if let Some(bb) = s.bboxes[c] {
                boxes[pos] = bb;
                box_mask[pos] = true;
            }
        }
        let mut cell_input = vec![SOS];
        cell_input.extend(&s.cells.ids);
        let mut cell_target = s.cells.ids.clone();
        cell_target.push(EOS);

        b.filenames.push(s.filename.clone());
        b.images.push(s.image.clone());
        b.mirror.push(mirror_map(&target));
        b.structure_inputs.push(input);
        b.structure_targets.push(target);
        b.rtl_inputs.push(rtl_input);
        b.rtl_targets.push(rtl_target);
        b.cell_inputs.push(cell_input);
        b.cell_targets.push(cell_target);
        b.alignments.push(s.cells.alignment.clone());
        b.bbox_targets.push(boxes);
        b.bbox_mask.push(box_mask);
    }
    b.structure_mask = pad_all(&mut b.structure_targets);
    pad_all(&mut b.structure_inputs);
    pad_all(&mut b.rtl_inputs);
    pad_all(&mut b.rtl_targets);
    b.cell_mask = pad_all(&mut b.cell_targets);
    pad_all(&mut b.cell_inputs);
    let width = b.structure_mask.first().map_or(0, Vec::len);
    for (m, (boxes, mask)) in b.mirror.iter_mut().zip(b.bbox_targets.iter_mut().zip(&mut b.bbox_mask)) {
        let n = m.len();
        m.extend(n..width);
        boxes.resize(width, [0.0; 4]);
        mask.resize(width, false);
    }
    b
}

pub struct CollateConfig {
    pub image_size: usize,
    pub standardize: bool,
    pub limits: SeqLimits,
}

/// Tokenizes, preprocesses and pads `samples` into one batch.
pub fn collate(samples: &[TableSample], vocabs: &Vocabs, cfg: &CollateConfig) -> Result<Batch> {
    let encoded = samples
        .iter()
        .map(|s| encode_sample(s, vocabs, cfg.image_size, cfg.standardize))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EncodedSample> = encoded.iter().collect();
    Ok(collate_encoded(&refs, cfg.limits))
}
