//! Bounded conversation history shared by the router and the editor.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    /// Executor feedback, such as a failed op and its error.
    System,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::User => "User",
            Role::Assistant => "Assistant",
            Role::System => "System",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// The last `window` turns, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatHistory {
    window: usize,
    turns: VecDeque<Turn>,
}

impl Default for ChatHistory {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl ChatHistory {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            turns: VecDeque::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, role: Role, text: impl Into<String>) {
        self.turns.push_back(Turn {
            role,
            text: text.into(),
        });
        while self.turns.len() > self.window {
            self.turns.pop_front();
        }
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// One `Role: text` line per turn, or `(none)`.
    pub fn render(&self) -> String {
        if self.turns.is_empty() {
            return "(none)".to_string();
        }
        let mut out = String::new();
        for turn in &self.turns {
            let _ = writeln!(out, "{}: {}", turn.role.as_str(), turn.text.replace('\n', " "));
        }
        out.pop();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_only_the_window() {
        let mut h = ChatHistory::new(3);
        for i in 0..5 {
            h.push(Role::User, format!("t{i}"));
        }
        let texts: Vec<&str> = h.turns().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["t2", "t3", "t4"]);
        assert_eq!(h.render(), "User: t2\nUser: t3\nUser: t4");
    }
}
