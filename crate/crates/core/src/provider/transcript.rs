//! Plain-text transcript fixtures for [`super::ScriptedProvider`].
//!
//! ```text
//! %% comment lines start with two percent signs
//! @@ parse_query | Tell me more about carbon sinks
//! category: expansion
//! content: What are the sub-topics covered in the document related to 'carbon sinks'?
//! @@ plan_ops | delete node X
//! DeleteNode(node="X")
//! ~~
//! DeleteNode(node="n4")
//! ```
//!
//! `@@ <prompt id> | <key>` opens an entry; the key is matched as a substring
//! of the request subject (an empty key matches every subject). The lines up
//! to the next header form the response. `~~` separates successive responses
//! of one entry: the n-th matching call gets the n-th response and the last
//! one repeats. Leading and trailing blank lines of a response are dropped.

use std::fmt::Write as _;

use crate::prompts::PromptId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub template: PromptId,
    pub key: String,
    pub responses: Vec<String>,
}

impl TranscriptEntry {
    pub fn new(template: PromptId, key: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            template,
            key: key.into(),
            responses: vec![response.into()],
        }
    }

    pub fn sequence<I, S>(template: PromptId, key: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            template,
            key: key.into(),
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcript line {line}: {message}")]
pub struct TranscriptError {
    pub line: usize,
    pub message: String,
}

fn finish_response(lines: &mut Vec<&str>) -> String {
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let text = lines.join("\n");
    lines.clear();
    text
}

pub fn parse_transcript(text: &str) -> Result<Transcript, TranscriptError> {
    let mut entries: Vec<TranscriptEntry> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let number = index + 1;
        if line.starts_with("%%") {
            continue;
        }
        if let Some(header) = line.strip_prefix("@@") {
            if let Some(entry) = entries.last_mut() {
                entry.responses.push(finish_response(&mut current));
            }
            let (id, key) = match header.split_once('|') {
                Some((id, key)) => (id.trim(), key.trim()),
                None => (header.trim(), ""),
            };
            let template = id.parse::<PromptId>().map_err(|e| TranscriptError {
                line: number,
                message: e.to_string(),
            })?;
            entries.push(TranscriptEntry {
                template,
                key: key.to_string(),
                responses: Vec::new(),
            });
            continue;
        }
        if entries.is_empty() {
            if line.trim().is_empty() {
                continue;
            }
            return Err(TranscriptError {
                line: number,
                message: "text before the first '@@' header".into(),
            });
        }
        if line.trim_end() == "~~" {
            let response = finish_response(&mut current);
            if let Some(entry) = entries.last_mut() {
                entry.responses.push(response);
            }
            continue;
        }
        current.push(line);
    }
    if let Some(entry) = entries.last_mut() {
        entry.responses.push(finish_response(&mut current));
    }
    Ok(Transcript { entries })
}

impl Transcript {
    pub fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    /// Renders back to the fixture format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let _ = writeln!(out, "@@ {} | {}", entry.template, entry.key);
            for (i, response) in entry.responses.iter().enumerate() {
                if i > 0 {
                    out.push_str("~~\n");
                }
                out.push_str(response);
                out.push('\n');
            }
        }
        out
    }
}
