//! Small lexical helpers shared by anchor matching, graph answering and the
//! hash embedding.

use unicode_segmentation::UnicodeSegmentation;

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "being",
    "between", "but", "by", "can", "could", "do", "does", "for", "from", "give", "has", "have",
    "how", "i", "in", "into", "is", "it", "its", "me", "more", "my", "of", "on", "or", "our",
    "please", "should", "so", "some", "tell", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "to", "up", "us", "was", "we", "were", "what",
    "when", "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

/// Lowercased word tokens, in order, exactly as the word segmenter yields
/// them.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

/// Lowercased, lightly stemmed tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.unicode_words()
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

/// Crude plural folding: `sinks` → `sink`, `emissions` → `emission`.
fn stem(word: &str) -> String {
    let word = word.strip_suffix("'s").unwrap_or(word);
    if word.chars().count() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        word[..word.len() - 1].to_string()
    } else {
        word.to_string()
    }
}

/// Case- and whitespace-insensitive form used for title equality.
pub fn normalize_title(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.unicode_words().count()
}

/// Truncates to at most `max_words` words, keeping the original spacing of the
/// retained prefix.
pub fn truncate_words(text: &str, max_words: usize) -> &str {
    match text.unicode_word_indices().nth(max_words) {
        Some((offset, _)) => text[..offset].trim_end(),
        None => text,
    }
}
