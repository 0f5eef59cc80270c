//! Escaping and small helpers for the line-oriented token and dataset files.
//!
//! Tokens are space-joined on one line, so spaces inside a token (scalar
//! values like `restart datadog-agent` stay single tokens) are escaped as
//! `\s`. Backslash, tab, and newline get the usual escapes so every token
//! round-trips.

/// Escape one token for a space-joined field.
pub fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for ch in token.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_token`]. Unknown escapes keep the escaped character.
pub fn unescape_token(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Join tokens into one space-separated field, escaping each token.
pub fn join_tokens(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| escape_token(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Split a space-separated field back into unescaped tokens.
pub fn split_tokens(field: &str) -> Vec<String> {
    if field.is_empty() {
        return Vec::new();
    }
    field.split(' ').map(unescape_token).collect()
}
