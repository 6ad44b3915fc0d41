//! Tree-edit-distance similarity between HTML tables.

mod html;
mod report;
mod ted;

pub use html::{parse_html_tree, HtmlNode, HtmlTree, TreeMode};
pub use report::{teds_batch_report, Aggregates, BucketMeans, EvalPair, SampleScore, TedsReport};
pub use ted::{levenshtein, node_edit_distance, rename_cost, teds_score, tree_edit_distance, Postorder};
