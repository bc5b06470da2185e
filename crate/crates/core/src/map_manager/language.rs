//! Recursive-descent parser for the plan language.
//!
//! ```text
//! line   := op "(" [ arg { "," arg } ] ")"
//! op     := "AddNode" | "AddEdge" | "DeleteNode" | "UpdateNode" | "DeleteEdge"
//! arg    := name "=" string
//! string := '"' { char | '\"' | '\\' | '\n' } '"'
//! ```
//!
//! Whitespace may appear between tokens. Arguments are named, so their order
//! is free; unknown, missing and repeated arguments are errors.

use std::collections::BTreeMap;
use std::fmt;

use crate::graph::{GraphOp, NodePatch, OrphanPolicy, Position, DEFAULT_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// 1-based character column; 0 when the error concerns the whole line.
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.column == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "column {}: {}", self.column, self.message)
        }
    }
}

const OPS: [&str; 5] = ["AddNode", "AddEdge", "DeleteNode", "UpdateNode", "DeleteEdge"];

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected '{want}', found '{c}'"))),
            None => Err(self.error(format!("expected '{want}', found end of line"))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.peek() {
                Some(c) => self.error(format!("expected a name, found '{c}'")),
                None => self.error("expected a name, found end of line"),
            });
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        if self.peek() != Some('"') {
            return Err(self.error("expected a double-quoted string"));
        }
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.error("unterminated string")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some('"') => out.push('"'),
                        Some('\\') => out.push('\\'),
                        Some('n') => out.push('\n'),
                        Some(c) => return Err(self.error(format!("unknown escape '\\{c}'"))),
                        None => return Err(self.error("unterminated string")),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn args(&mut self) -> Result<Vec<(String, String, usize)>, ParseError> {
        self.expect('(')?;
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            self.skip_ws();
            let column = self.pos + 1;
            let name = self.ident()?;
            self.expect('=')?;
            let value = self.string()?;
            args.push((name, value, column));
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(')') => {
                    self.pos += 1;
                    return Ok(args);
                }
                Some(c) => return Err(self.error(format!("expected ',' or ')', found '{c}'"))),
                None => return Err(self.error("expected ')', found end of line")),
            }
        }
    }
}

struct Args {
    op: &'static str,
    values: BTreeMap<String, String>,
}

impl Args {
    fn take(&mut self, name: &str) -> Option<String> {
        self.values.remove(name)
    }

    fn required(&mut self, name: &str) -> Result<String, ParseError> {
        self.take(name).ok_or_else(|| ParseError {
            column: 0,
            message: format!("{} is missing required argument '{name}'", self.op),
        })
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.values.keys().next() {
            Some(extra) => Err(ParseError {
                column: 0,
                message: format!("{} does not take argument '{extra}'", self.op),
            }),
            None => Ok(()),
        }
    }
}

fn whole_line(message: String) -> ParseError {
    ParseError { column: 0, message }
}

fn parse_position(text: &str) -> Result<Position, ParseError> {
    let parsed = text
        .split_once(',')
        .and_then(|(x, y)| Some(Position::new(x.trim().parse().ok()?, y.trim().parse().ok()?)));
    match parsed {
        Some(p) if p.x.is_finite() && p.y.is_finite() => Ok(p),
        _ => Err(whole_line(format!("position must look like \"x,y\", got \"{text}\""))),
    }
}

/// Parses one op line.
pub fn parse_op(line: &str) -> Result<GraphOp, ParseError> {
    let mut cursor = Cursor::new(line);
    let name = cursor.ident()?;
    let Some(op) = OPS.iter().copied().find(|o| *o == name) else {
        return Err(ParseError {
            column: 1 + line.chars().take_while(|c| c.is_whitespace()).count(),
            message: format!("unknown operation '{name}'; expected one of {}", OPS.join(", ")),
        });
    };
    let mut values = BTreeMap::new();
    for (key, value, column) in cursor.args()? {
        if values.insert(key.clone(), value).is_some() {
            return Err(ParseError {
                column,
                message: format!("argument '{key}' given twice"),
            });
        }
    }
    cursor.skip_ws();
    if cursor.peek() == Some(';') {
        cursor.pos += 1;
        cursor.skip_ws();
    }
    if let Some(c) = cursor.peek() {
        return Err(cursor.error(format!("unexpected '{c}' after ')'")));
    }

    let mut args = Args { op, values };
    let parsed = match op {
        "AddNode" => GraphOp::AddNode {
            title: args.required("title")?,
            detail: args.take("detail").unwrap_or_default(),
            parent: args.take("parent"),
            label: args.take("label"),
        },
        "AddEdge" => GraphOp::AddEdge {
            parent: args.required("parent")?,
            child: args.required("child")?,
            label: args.take("label").unwrap_or_else(|| DEFAULT_LABEL.to_string()),
        },
        "DeleteNode" => {
            let node = args.required("node")?;
            let policy = match args.take("policy").as_deref() {
                None | Some("detach") => OrphanPolicy::Detach,
                Some("cascade") => OrphanPolicy::Cascade,
                Some(other) => {
                    return Err(whole_line(format!(
                        "policy must be \"detach\" or \"cascade\", got \"{other}\""
                    )))
                }
            };
            GraphOp::DeleteNode { node, policy }
        }
        "UpdateNode" => {
            let node = args.required("node")?;
            let starred = match args.take("starred").as_deref() {
                None => None,
                Some("true") => Some(true),
                Some("false") => Some(false),
                Some(other) => {
                    return Err(whole_line(format!("starred must be \"true\" or \"false\", got \"{other}\"")))
                }
            };
            let patch = NodePatch {
                title: args.take("title"),
                detail: args.take("detail"),
                starred,
                position: args.take("position").as_deref().map(parse_position).transpose()?,
            };
            if patch.is_empty() {
                return Err(whole_line("UpdateNode needs at least one of title, detail, starred, position".into()));
            }
            GraphOp::UpdateNode { node, patch }
        }
        _ => GraphOp::DeleteEdge {
            parent: args.required("parent")?,
            child: args.required("child")?,
        },
    };
    args.finish()?;
    Ok(parsed)
}

/// A parsed plan: op lines in order plus any `#` rationale lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub ops: Vec<GraphOp>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {error}")]
pub struct PlanParseError {
    pub line: usize,
    pub error: ParseError,
}

/// Parses a multi-line plan. Blank lines and code-fence markers are skipped;
/// lines starting with `#` are collected as rationale.
pub fn parse_plan(text: &str) -> Result<Plan, PlanParseError> {
    let mut ops = Vec::new();
    let mut rationale = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        if let Some(note) = line.strip_prefix('#') {
            rationale.push(note.trim().to_string());
            continue;
        }
        let op = parse_op(line).map_err(|error| PlanParseError { line: index + 1, error })?;
        ops.push(op);
    }
    Ok(Plan {
        ops,
        rationale: rationale.join("\n"),
    })
}
