//! Training objectives: masked cross-entropy, KL divergence, the
//! bidirectional mutual-learning loss and bbox regression.

use mutabnet_autodiff::{NoGradGuard, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::mirror_map;

/// Floor applied to student probabilities inside KL terms.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_html: f64,
    pub w_cell: f64,
    pub w_bbox: f64,
    pub w_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_html: 1.0,
            w_cell: 1.0,
            w_bbox: 1.0,
            w_kl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_html", self.w_html), ("w_cell", self.w_cell), ("w_bbox", self.w_bbox), ("w_kl", self.w_kl)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

fn non_pad_rows(targets: &[usize], pad: usize) -> Vec<usize> {
    (0..targets.len()).filter(|&p| targets[p] != pad).collect()
}

/// Mean negative log-likelihood of `targets` under `logits: [L, V]`,
/// skipping `pad` positions.
pub fn cross_entropy_masked(logits: &Tensor, targets: &[usize], pad: usize) -> Result<Tensor> {
    if logits.rank() != 2 || logits.dim(0) != targets.len() {
        return Err(Error::Alignment {
            expected: logits.dim(0),
            found: targets.len(),
        });
    }
    let rows = non_pad_rows(targets, pad);
    if rows.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let cols: Vec<usize> = rows.iter().map(|&r| targets[r]).collect();
    let picked = logits.log_softmax()?.pick(&rows, &cols)?;
    Ok(picked.sum().scale(-1.0 / rows.len() as f64))
}

/// `(1/N) sum_n sum_v t log(t / s)` over unmasked rows of probability
/// matrices. The teacher is treated as a constant. Returns the loss and how
/// many student entries had to be floored at [`KL_EPS`].
pub fn kl_divergence(teacher: &Tensor, student: &Tensor, mask: &[bool]) -> Result<(Tensor, usize)> {
    if teacher.shape() != student.shape() || teacher.rank() != 2 || mask.len() != teacher.dim(0) {
        return Err(Error::Alignment {
            expected: teacher.dim(0),
            found: student.dim(0),
        });
    }
    let v = teacher.dim(1);
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::DegenerateBatch);
    }
    let mut weights = vec![0.0; teacher.numel()];
    let mut entropy = 0.0;
    let mut clamped = 0;
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..v {
            let t = teacher.data()[r * v + c];
            if t > 0.0 {
                weights[r * v + c] = t;
                entropy += t * t.ln();
                if student.data()[r * v + c] < KL_EPS {
                    clamped += 1;
                }
            }
        }
    }
    let weights = Tensor::new(weights, teacher.shape())?;
    let cross = student.clamp_min(KL_EPS).ln().mul(&weights)?.sum();
    let kl = cross.scale(-1.0).add_scalar(entropy).scale(1.0 / n as f64);
    Ok((kl, clamped))
}

/// KL(teacher || student) between the softmax distributions of two logit
/// matrices, pairing `student` row `rows[i]` with `teacher` row
/// `teacher_rows[i]`. The teacher is detached.
pub fn kl_from_logits(teacher: &Tensor, teacher_rows: &[usize], student: &Tensor, rows: &[usize]) -> Result<Tensor> {
    if rows.is_empty() || rows.len() != teacher_rows.len() {
        return Err(Error::DegenerateBatch);
    }
    let teacher_logp = {
        let _guard = NoGradGuard::new();
        teacher.detach().log_softmax()?.select_rows(teacher_rows)?
    };
    let v = teacher.dim(1);
    let p: Vec<f64> = teacher_logp.data().iter().map(|l| l.exp()).collect();
    let entropy: f64 = p.iter().zip(teacher_logp.data()).map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 }).sum();
    let p = Tensor::new(p, &[rows.len(), v])?;
    let cross = student.log_softmax()?.select_rows(rows)?.mul(&p)?.sum();
    Ok(cross.scale(-1.0).add_scalar(entropy).scale(1.0 / rows.len() as f64))
}

/// Components of the bidirectional mutual-learning loss.
#[derive(Debug, Clone)]
pub struct BmlParts {
    pub total: Tensor,
    pub ce_ltr: Tensor,
    pub kl_ltr: Tensor,
    pub ce_rtl: Tensor,
    pub kl_rtl: Tensor,
}

/// Cross-entropy of both decoding directions plus mutual KL terms.
///
/// `targets_ltr` is the left-to-right target row (`[t1..tN, EOS, PAD..]`);
/// right-to-left targets and the position pairing come from
/// [`mirror_map`]. Each KL compares a direction with the detached,
/// mirror-aligned distribution of the other.
pub fn bml_loss(logits_ltr: &Tensor, logits_rtl: &Tensor, targets_ltr: &[usize], pad: usize, w_kl: f64) -> Result<BmlParts> {
    if logits_ltr.shape() != logits_rtl.shape() || logits_ltr.dim(0) != targets_ltr.len() {
        return Err(Error::Alignment {
            expected: targets_ltr.len(),
            found: logits_rtl.dim(0),
        });
    }
    let mirror = mirror_map(targets_ltr);
    let targets_rtl: Vec<usize> = mirror.iter().map(|&m| targets_ltr[m]).collect();
    let ce_ltr = cross_entropy_masked(logits_ltr, targets_ltr, pad)?;
    let ce_rtl = cross_entropy_masked(logits_rtl, &targets_rtl, pad)?;
    let rows = non_pad_rows(targets_ltr, pad);
    let partner: Vec<usize> = rows.iter().map(|&p| mirror[p]).collect();
    let kl_ltr = kl_from_logits(logits_rtl, &partner, logits_ltr, &rows)?;
    let kl_rtl = kl_from_logits(logits_ltr, &partner, logits_rtl, &rows)?;
    let total = ce_ltr
        .add(&kl_ltr.scale(w_kl))?
        .add(&ce_rtl)?
        .add(&kl_rtl.scale(w_kl))?;
    Ok(BmlParts {
        total,
        ce_ltr,
        kl_ltr,
        ce_rtl,
        kl_rtl,
    })
}

/// Mean absolute error over the 4 components of masked rows of `pred: [L, 4]`.
/// An empty mask gives 0.
pub fn bbox_loss(pred: &Tensor, gt: &[[f64; 4]], mask: &[bool]) -> Result<Tensor> {
    if pred.rank() != 2 || pred.dim(1) != 4 || pred.dim(0) != gt.len() || gt.len() != mask.len() {
        return Err(Error::Alignment {
            expected: pred.dim(0),
            found: gt.len(),
        });
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
    if rows.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let target: Vec<f64> = rows.iter().flat_map(|&r| gt[r]).collect();
    let target = Tensor::new(target, &[rows.len(), 4])?;
    Ok(pred.select_rows(&rows)?.sub(&target)?.abs().mean())
}

/// Per-component losses of one training sample.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub html: Tensor,
    pub cell: Tensor,
    pub bbox: Tensor,
}

/// `w_html * html + w_cell * cell + w_bbox * bbox`; any non-finite component
/// is an error naming it.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<Tensor> {
    for (name, t) in [("html", &parts.html), ("cell", &parts.cell), ("bbox", &parts.bbox)] {
        if !t.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                component: name.to_string(),
            });
        }
    }
    let total = parts
        .html
        .scale(w.w_html)
        .add(&parts.cell.scale(w.w_cell))?
        .add(&parts.bbox.scale(w.w_bbox))?;
    if !total.item().is_finite() {
        return Err(Error::NonFiniteLoss {
            component: "total".to_string(),
        });
    }
    Ok(total)
}
