use std::fmt::Write as _;

use super::KnowledgeGraph;

impl KnowledgeGraph {
    /// Plain-text listing of nodes and edges for prompts:
    ///
    /// ```text
    /// n1 "Climate Change": Long-term shifts in temperature.
    /// n1 -> n2 "causes"
    /// ```
    ///
    /// An empty graph renders as `(empty graph)`.
    pub fn outline(&self) -> String {
        if self.is_empty() {
            return "(empty graph)".to_string();
        }
        let mut out = String::new();
        for node in self.nodes() {
            let _ = write!(out, "{} {:?}", node.id, node.title);
            if !node.detail.is_empty() {
                let _ = write!(out, ": {}", node.detail.replace('\n', " "));
            }
            out.push('\n');
        }
        for edge in self.edges() {
            let _ = writeln!(out, "{} -> {} {:?}", edge.parent, edge.child, edge.label);
        }
        out.pop();
        out
    }
}
