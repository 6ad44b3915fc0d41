use super::vocab::{TokenVocab, VocabMode};
use crate::error::{Error, Result};

/// Structure token ids plus a per-token flag marking cell-opening tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StructureSeq {
    pub ids: Vec<usize>,
    pub cell_open: Vec<bool>,
}

impl StructureSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indices of the cell-opening tokens, in reading order.
    pub fn cell_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.cell_open[i]).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_open.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Complex,
}

pub fn is_cell_open(token: &str) -> bool {
    token == "<td></td>" || token == ">"
}

fn is_attribute(token: &str) -> bool {
    token.starts_with(' ') || token.contains('=')
}

/// Rewrites an attribute token as ` name="value"`.
fn canonical_attribute(token: &str) -> Option<String> {
    let (name, value) = token.trim().split_once('=')?;
    let name = name.trim().to_ascii_lowercase();
    let value = value.trim().trim_matches(|c| c == '"' || c == '\'');
    if name.is_empty() || name.contains(char::is_whitespace) {
        return None;
    }
    Some(format!(" {name}=\"{value}\""))
}

/// Canonical token form: plain `<td>`,`</td>` pairs merged and attribute
/// tokens in ` name="value"` form. Nesting is validated.
pub fn normalize_structure_tokens<S: AsRef<str>>(raw: &[S]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let t = raw[i].as_ref();
        if t == "<td>" && raw.get(i + 1).map(AsRef::as_ref) == Some("</td>") {
            out.push("<td></td>".into());
            i += 2;
            continue;
        }
        if is_attribute(t) && !t.starts_with('<') {
            out.push(canonical_attribute(t).ok_or_else(|| Error::Structure {
                index: i,
                reason: format!("cannot parse attribute {t:?}"),
            })?);
        } else {
            out.push(t.trim().to_string());
        }
        i += 1;
    }
    validate_structure(&out)?;
    Ok(out)
}

#[derive(Debug, PartialEq, Eq)]
enum CellState {
    Outside,
    InOpenTag,
    AwaitClose,
}

/// Checks nesting of table sections, rows and cells in a normalized stream.
pub fn validate_structure<S: AsRef<str>>(tokens: &[S]) -> Result<()> {
    let err = |index: usize, reason: String| Error::Structure { index, reason };
    let mut stack: Vec<&str> = Vec::new();
    let mut cell = CellState::Outside;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        match cell {
            CellState::InOpenTag => {
                if t == ">" {
                    cell = CellState::AwaitClose;
                } else if is_attribute(t) {
                } else {
                    return Err(err(i, format!("unexpected {t:?} inside a cell tag")));
                }
                continue;
            }
            CellState::AwaitClose => {
                if t == "</td>" {
                    cell = CellState::Outside;
                    continue;
                }
                return Err(err(i, format!("expected '</td>', found {t:?}")));
            }
            CellState::Outside => {}
        }
        match t {
            "<thead>" | "<tbody>" | "<tfoot>" => {
                if !stack.is_empty() {
                    return Err(err(i, format!("{t} must not be nested")));
                }
                stack.push(&t[1..t.len() - 1]);
            }
            "<tr>" => {
                if stack.last() == Some(&"tr") {
                    return Err(err(i, "row opened inside a row".into()));
                }
                stack.push("tr");
            }
            "</thead>" | "</tbody>" | "</tfoot>" | "</tr>" => {
                let name = &t[2..t.len() - 1];
                if stack.last() != Some(&name) {
                    return Err(err(i, format!("{t} without a matching open tag")));
                }
                stack.pop();
            }
            "<td></td>" | "<td>" | "<td" => {
                if stack.last() != Some(&"tr") {
                    return Err(err(i, "cell outside a row".into()));
                }
                cell = match t {
                    "<td></td>" => CellState::Outside,
                    "<td>" => CellState::AwaitClose,
                    _ => CellState::InOpenTag,
                };
            }
            _ => return Err(err(i, format!("unexpected token {t:?}"))),
        }
    }
    if cell != CellState::Outside {
        return Err(err(tokens.len(), "unterminated cell".into()));
    }
    if let Some(open) = stack.last() {
        return Err(err(tokens.len(), format!("unclosed <{open}>")));
    }
    Ok(())
}

/// Normalizes, validates and maps structure tokens to ids.
///
/// `fused` lists multi-token patterns that become single vocabulary entries.
/// Patterns may not contain cell tokens, so cell flags stay meaningful.
pub fn tokenize_structure<S: AsRef<str>>(
    raw: &[S],
    vocab: &mut TokenVocab,
    mode: VocabMode,
    fused: &[Vec<String>],
) -> Result<StructureSeq> {
    let tokens = fuse_patterns(normalize_structure_tokens(raw)?, fused)?;
    let mut seq = StructureSeq::default();
    for t in &tokens {
        seq.ids.push(vocab.lookup(t, mode)?);
        seq.cell_open.push(is_cell_open(t));
    }
    Ok(seq)
}

fn fuse_patterns(tokens: Vec<String>, fused: &[Vec<String>]) -> Result<Vec<String>> {
    if fused.is_empty() {
        return Ok(tokens);
    }
    for p in fused {
        if p.len() < 2 || p.iter().any(|t| t.contains("td") || is_cell_open(t)) {
            return Err(Error::Config(format!("fused pattern {p:?} must have 2+ tokens and no cell tokens")));
        }
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    'outer: while i < tokens.len() {
        for p in fused {
            if tokens[i..].starts_with(p) {
                out.push(p.concat());
                i += p.len();
                continue 'outer;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    Ok(out)
}

/// Splits structure-only HTML back into normalized structure tokens.
pub fn split_structure_html(html: &str) -> Result<Vec<String>> {
    let mut raw = Vec::new();
    let mut rest = html;
    let mut offset = 0;
    while let Some(start) = rest.find('<') {
        if !rest[..start].trim().is_empty() {
            return Err(Error::Structure {
                index: raw.len(),
                reason: format!("text outside tags at byte {}", offset),
            });
        }
        let end = rest[start..].find('>').ok_or_else(|| Error::Structure {
            index: raw.len(),
            reason: "unterminated tag".into(),
        })? + start;
        let tag = &rest[start..=end];
        if let Some(attrs) = tag.strip_prefix("<td ").and_then(|s| s.strip_suffix('>')) {
            raw.push("<td".to_string());
            for a in split_attributes(attrs) {
                raw.push(format!(" {a}"));
            }
            raw.push(">".to_string());
        } else {
            raw.push(tag.to_string());
        }
        offset += end + 1;
        rest = &rest[end + 1..];
    }
    if !rest.trim().is_empty() {
        return Err(Error::Structure {
            index: raw.len(),
            reason: "trailing text".into(),
        });
    }
    normalize_structure_tokens(&raw)
}

/// Splits `a="1" b='2' c=3` on whitespace outside quotes.
fn split_attributes(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    for ch in s.chars() {
        match quote {
            Some(q) if ch == q => {
                quote = None;
                cur.push(ch);
            }
            Some(_) => cur.push(ch),
            None if ch == '"' || ch == '\'' => {
                quote = Some(ch);
                cur.push(ch);
            }
            None if ch.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            None => cur.push(ch),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Structure-only HTML (empty cell slots), validated.
/// Use [`render_html`] to splice contents and restore header bold.
pub fn detokenize_structure(seq: &StructureSeq, vocab: &TokenVocab) -> Result<String> {
    let tokens = vocab.decode(&seq.ids)?;
    let html = tokens.concat();
    // Re-splitting undoes any fused patterns before validation.
    split_structure_html(&html)?;
    Ok(html)
}

/// Splices cell contents into the cell slots of a structure token stream.
///
/// Header cells (inside `<thead>`) get `<b>..</b>` around non-empty content
/// when `bold` is set. Nesting is not validated here, so partially malformed
/// predictions still render.
pub fn render_html<S: AsRef<str>, C: AsRef<str>>(tokens: &[S], cells: &[C], bold: bool) -> Result<String> {
    let slots = tokens.iter().filter(|t| is_cell_open(t.as_ref())).count();
    if slots != cells.len() {
        return Err(Error::Alignment {
            expected: slots,
            found: cells.len(),
        });
    }
    let mut html = String::new();
    let mut in_head = false;
    let mut next = 0;
    for t in tokens {
        let t = t.as_ref();
        match t {
            "<thead>" => in_head = true,
            "</thead>" => in_head = false,
            _ => {}
        }
        if is_cell_open(t) {
            let content = cells[next].as_ref();
            next += 1;
            let content = if bold && in_head && !content.is_empty() {
                format!("<b>{content}</b>")
            } else {
                content.to_string()
            };
            if t == ">" {
                html.push('>');
                html.push_str(&content);
            } else {
                html.push_str("<td>");
                html.push_str(&content);
                html.push_str("</td>");
            }
        } else {
            html.push_str(t);
        }
    }
    Ok(html)
}

/// Complex iff any attribute token (colspan/rowspan) is present.
pub fn classify_complexity<S: AsRef<str>>(tokens: &[S]) -> Complexity {
    let merged = tokens.iter().any(|t| {
        let t = t.as_ref();
        t.contains("colspan") || t.contains("rowspan")
    });
    if merged {
        Complexity::Complex
    } else {
        Complexity::Simple
    }
}

/// For every cell slot, whether it sits inside `<thead>`. Accepts raw
/// (unmerged `<td>`) as well as normalized streams.
pub fn header_cell_flags<S: AsRef<str>>(tokens: &[S]) -> Vec<bool> {
    let mut in_head = false;
    let mut flags = Vec::new();
    for t in tokens {
        match t.as_ref() {
            "<thead>" => in_head = true,
            "</thead>" => in_head = false,
            t if is_cell_open(t) || t == "<td>" => flags.push(in_head),
            _ => {}
        }
    }
    flags
}
