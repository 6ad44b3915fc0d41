use super::html::{HtmlNode, HtmlTree};

/// Levenshtein distance over token sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Substitution cost between two nodes.
///
/// 1 if tags or spans differ; for cells carrying content, the token edit
/// distance normalized by the longer content; otherwise 0.
pub fn rename_cost(x: &HtmlNode, y: &HtmlNode) -> f64 {
    if x.tag != y.tag || x.colspan != y.colspan || x.rowspan != y.rowspan {
        return 1.0;
    }
    match (&x.content, &y.content) {
        (Some(a), Some(b)) => {
            let longest = a.len().max(b.len());
            if longest == 0 {
                0.0
            } else {
                (levenshtein(a, b) as f64 / longest as f64).min(1.0)
            }
        }
        (None, None) => 0.0,
        _ => 1.0,
    }
}

/// Postorder view of a tree: nodes and leftmost-leaf indices, 0-based.
pub struct Postorder<'a> {
    pub nodes: Vec<&'a HtmlNode>,
    pub leftmost: Vec<usize>,
}

impl<'a> Postorder<'a> {
    pub fn new(root: &'a HtmlNode) -> Self {
        let mut p = Postorder {
            nodes: Vec::new(),
            leftmost: Vec::new(),
        };
        p.visit(root);
        p
    }

    fn visit(&mut self, node: &'a HtmlNode) -> usize {
        let mut first_leaf = None;
        for child in &node.children {
            let l = self.visit(child);
            first_leaf.get_or_insert(l);
        }
        let idx = self.nodes.len();
        self.nodes.push(node);
        let l = first_leaf.unwrap_or(idx);
        self.leftmost.push(l);
        l
    }

    fn keyroots(&self) -> Vec<usize> {
        let n = self.nodes.len();
        (0..n)
            .filter(|&i| !(i + 1..n).any(|k| self.leftmost[k] == self.leftmost[i]))
            .collect()
    }
}

/// Ordered tree edit distance (Zhang-Shasha) with unit insert/delete cost
/// and [`rename_cost`] substitutions.
pub fn node_edit_distance(a: &HtmlNode, b: &HtmlNode) -> f64 {
    let pa = Postorder::new(a);
    let pb = Postorder::new(b);
    let (n, m) = (pa.nodes.len(), pb.nodes.len());
    let mut td = vec![0.0f64; n * m];
    // Forest distances indexed from 1 so that index 0 is the empty forest.
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];
    let w = m + 1;
    for &i in &pa.keyroots() {
        for &j in &pb.keyroots() {
            let (li, lj) = (pa.leftmost[i], pb.leftmost[j]);
            fd[li * w + lj] = 0.0;
            for i1 in li..=i {
                fd[(i1 + 1) * w + lj] = fd[i1 * w + lj] + 1.0;
            }
            for j1 in lj..=j {
                fd[li * w + j1 + 1] = fd[li * w + j1] + 1.0;
            }
            for i1 in li..=i {
                for j1 in lj..=j {
                    let del = fd[i1 * w + j1 + 1] + 1.0;
                    let ins = fd[(i1 + 1) * w + j1] + 1.0;
                    let cell = if pa.leftmost[i1] == li && pb.leftmost[j1] == lj {
                        let v = del.min(ins).min(fd[i1 * w + j1] + rename_cost(pa.nodes[i1], pb.nodes[j1]));
                        td[i1 * m + j1] = v;
                        v
                    } else {
                        let prefix = fd[pa.leftmost[i1] * w + pb.leftmost[j1]];
                        del.min(ins).min(prefix + td[i1 * m + j1])
                    };
                    fd[(i1 + 1) * w + j1 + 1] = cell;
                }
            }
        }
    }
    td[(n - 1) * m + (m - 1)]
}

pub fn tree_edit_distance(a: &HtmlTree, b: &HtmlTree) -> f64 {
    node_edit_distance(&a.root, &b.root)
}

/// `1 - distance / max(|a|, |b|)`, clamped to `[0, 1]`.
pub fn teds_score(a: &HtmlTree, b: &HtmlTree) -> f64 {
    let longest = a.size().max(b.size()) as f64;
    (1.0 - tree_edit_distance(a, b) / longest).clamp(0.0, 1.0)
}
