use crate::error::{Error, Result};
use crate::tokenizer::split_cell_content;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    /// Cell contents dropped.
    Structural,
    /// Cell contents kept.
    Total,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HtmlNode {
    pub tag: String,
    pub colspan: usize,
    pub rowspan: usize,
    /// Cell content tokens; only on `td` nodes in total mode.
    pub content: Option<Vec<String>>,
    pub children: Vec<HtmlNode>,
}

impl HtmlNode {
    pub fn new(tag: &str) -> Self {
        HtmlNode {
            tag: tag.to_string(),
            colspan: 1,
            rowspan: 1,
            content: None,
            children: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(HtmlNode::size).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HtmlTree {
    pub root: HtmlNode,
    /// Number of missing or stray tags that had to be fixed up.
    pub repairs: usize,
}

impl HtmlTree {
    pub fn size(&self) -> usize {
        self.root.size()
    }
}

struct Tag<'a> {
    name: String,
    closing: bool,
    attrs: &'a str,
}

fn parse_tag(raw: &str) -> Tag<'_> {
    let inner = raw.trim_start_matches('<').trim_end_matches('>').trim_end_matches('/');
    let (closing, inner) = match inner.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, inner),
    };
    let inner = inner.trim_start();
    let end = inner.find(|c: char| c.is_whitespace()).unwrap_or(inner.len());
    Tag {
        name: inner[..end].to_ascii_lowercase(),
        closing,
        attrs: &inner[end..],
    }
}

fn span_attr(attrs: &str, name: &str) -> usize {
    let lower = attrs.to_ascii_lowercase();
    let Some(at) = lower.find(name) else { return 1 };
    let rest = lower[at + name.len()..].trim_start();
    let Some(rest) = rest.strip_prefix('=') else { return 1 };
    let digits: String = rest
        .trim_start()
        .trim_start_matches(['"', '\''])
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok().filter(|&v| v >= 1).unwrap_or(1)
}

fn is_section(tag: &str) -> bool {
    matches!(tag, "thead" | "tbody" | "tfoot")
}

/// Position of the first `open` tag (e.g. `<td`, `</tr`) whose name ends there.
fn find_tag(hay: &str, open: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(p) = hay[from..].find(open) {
        let at = from + p;
        match hay[at + open.len()..].chars().next() {
            Some(c) if c != '>' && c != '/' && !c.is_whitespace() => from = at + open.len(),
            _ => return Some(at),
        }
    }
    None
}

/// Finds the end of a cell's content starting at `from`: returns
/// `(content_end, resume_at, closed_properly)`.
fn cell_extent(lower: &str, from: usize) -> (usize, usize, bool) {
    let rest = &lower[from..];
    let mut best: Option<(usize, bool)> = None;
    let stops = [
        ("</td", true),
        ("</th", true),
        ("<td", false),
        ("<th", false),
        ("<tr", false),
        ("</tr", false),
        ("</table", false),
        ("<thead", false),
        ("<tbody", false),
        ("<tfoot", false),
        ("</thead", false),
        ("</tbody", false),
        ("</tfoot", false),
    ];
    for (pat, proper) in stops {
        if let Some(p) = find_tag(rest, pat) {
            if best.map_or(true, |(b, _)| p < b) {
                best = Some((p, proper));
            }
        }
    }
    match best {
        Some((p, true)) => {
            let close = rest[p..].find('>').map_or(rest.len(), |q| p + q + 1);
            (from + p, from + close, true)
        }
        Some((p, false)) => (from + p, from + p, false),
        None => (lower.len(), lower.len(), false),
    }
}

/// Parses the first `<table>` of `html` into a tree of table, section, row
/// and cell nodes. Other markup outside cells is ignored.
pub fn parse_html_tree(html: &str, mode: TreeMode) -> Result<HtmlTree> {
    let lower = html.to_ascii_lowercase();
    let start = lower.find("<table").ok_or_else(|| Error::Parse("no <table> element".into()))?;
    let mut repairs = 0;
    // Stack of open nodes; index 0 is the table.
    let mut stack: Vec<HtmlNode> = Vec::new();
    let mut pos = start;
    let close_top = |stack: &mut Vec<HtmlNode>| {
        let node = stack.pop().expect("non-empty stack");
        stack.last_mut().expect("table stays open").children.push(node);
    };
    while pos < html.len() {
        let Some(lt) = html[pos..].find('<') else { break };
        let lt = pos + lt;
        let gt = match html[lt..].find('>') {
            Some(g) => lt + g,
            None => {
                repairs += 1;
                break;
            }
        };
        let tag = parse_tag(&html[lt..=gt]);
        pos = gt + 1;
        let name = tag.name.as_str();
        if stack.is_empty() {
            if name == "table" && !tag.closing {
                stack.push(HtmlNode::new("table"));
            }
            continue;
        }
        match (name, tag.closing) {
            ("table", false) => repairs += 1,
            ("table", true) => break,
            (s, false) if is_section(s) => {
                while stack.len() > 1 {
                    close_top(&mut stack);
                    repairs += 1;
                }
                stack.push(HtmlNode::new(s));
            }
            ("tr", false) => {
                while stack.last().is_some_and(|n| n.tag == "tr") {
                    close_top(&mut stack);
                    repairs += 1;
                }
                stack.push(HtmlNode::new("tr"));
            }
            ("td" | "th", false) => {
                if stack.last().map(|n| n.tag.as_str()) != Some("tr") {
                    stack.push(HtmlNode::new("tr"));
                    repairs += 1;
                }
                let (end, resume, proper) = cell_extent(&lower, pos);
                if !proper {
                    repairs += 1;
                }
                let mut cell = HtmlNode::new("td");
                cell.colspan = span_attr(tag.attrs, "colspan");
                cell.rowspan = span_attr(tag.attrs, "rowspan");
                if mode == TreeMode::Total {
                    cell.content = Some(split_cell_content(html[pos..end].trim()));
                }
                stack.last_mut().expect("row open").children.push(cell);
                pos = resume;
            }
            (s, true) if is_section(s) || s == "tr" => {
                if let Some(depth) = stack.iter().rposition(|n| n.tag == s) {
                    while stack.len() > depth + 1 {
                        close_top(&mut stack);
                        repairs += 1;
                    }
                    if depth > 0 {
                        close_top(&mut stack);
                    }
                } else {
                    repairs += 1;
                }
            }
            ("td" | "th", true) => repairs += 1,
            _ => {}
        }
    }
    if stack.is_empty() {
        return Err(Error::Parse("no <table> element".into()));
    }
    // Anything still open besides the table was never closed.
    while stack.len() > 1 {
        close_top(&mut stack);
        repairs += 1;
    }
    if find_tag(&lower[start..], "</table").is_none() {
        repairs += 1;
    }
    Ok(HtmlTree {
        root: stack.pop().expect("table"),
        repairs,
    })
}
