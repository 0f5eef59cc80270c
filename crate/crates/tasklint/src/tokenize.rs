//! Task-name word tokenization and stream normalization.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::ast::{NodeKind, Origin, TokenStream};

/// Separator inserted between name and body tokens when a task becomes a
/// single classifier input sequence. Trained into the embedding vocabulary.
pub const SEP_TOKEN: &str = "<SEP>";

fn kind_token_set() -> &'static HashSet<&'static str> {
    static KINDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    KINDS.get_or_init(|| NodeKind::all_names().iter().copied().collect())
}

/// A task reduced to its lowercased name words and normalized body tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedExample {
    pub task_id: String,
    pub module_key: String,
    pub name_tokens: Vec<String>,
    pub body_tokens: Vec<String>,
}

impl NormalizedExample {
    /// Name tokens, separator, body tokens: the classifier input sequence.
    pub fn joint_sequence(&self) -> Vec<String> {
        let mut seq = Vec::with_capacity(self.name_tokens.len() + 1 + self.body_tokens.len());
        seq.extend(self.name_tokens.iter().cloned());
        seq.push(SEP_TOKEN.to_string());
        seq.extend(self.body_tokens.iter().cloned());
        seq
    }
}

/// Split a task name into lowercase words.
///
/// Words break on whitespace and punctuation, including `_` and `-`, so
/// snake_case and kebab-case identifiers split into their parts. No
/// camelCase splitting, stemming, or stop-word removal.
pub fn tokenize_name(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Normalize a body stream against its task name.
///
/// Body tokens pass through unchanged except that non-kind tokens are
/// lowercased; the AST kind names keep their casing so they stay distinct
/// vocabulary anchors that natural-language tokens can never collide with.
pub fn normalize(task_stream: &TokenStream, name: &str, module_key: &str) -> NormalizedExample {
    debug_assert_eq!(task_stream.origin, Origin::Body);
    let kinds = kind_token_set();
    let body_tokens = task_stream
        .tokens
        .iter()
        .map(|token| {
            if kinds.contains(token.as_str()) {
                token.clone()
            } else {
                token.to_lowercase()
            }
        })
        .collect();
    NormalizedExample {
        task_id: task_stream.task_id.clone(),
        module_key: module_key.to_string(),
        name_tokens: tokenize_name(name),
        body_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_plain_names_into_words() {
        assert_eq!(
            tokenize_name("Create Datadog agent config directory"),
            ["create", "datadog", "agent", "config", "directory"]
        );
    }

    #[test]
    fn empty_name_tokenizes_to_nothing() {
        assert!(tokenize_name("").is_empty());
    }

    #[test]
    fn kebab_and_snake_case_split() {
        assert_eq!(
            tokenize_name("restart datadog-agent"),
            ["restart", "datadog", "agent"]
        );
        assert_eq!(tokenize_name("set_fact for x"), ["set", "fact", "for", "x"]);
    }

    #[test]
    fn punctuation_is_a_separator() {
        assert_eq!(
            tokenize_name("Deploy (or update) nginx, please!"),
            ["deploy", "or", "update", "nginx", "please"]
        );
    }

    fn body_stream(tokens: &[&str]) -> TokenStream {
        TokenStream {
            task_id: "t".into(),
            origin: Origin::Body,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn normalize_lowercases_values_but_not_kind_tokens() {
        let stream = body_stream(&[
            "AnsibleTaskBody",
            "Module",
            "Name",
            "template",
            "Parameter",
            "src",
            "DataDog.YAML.j2",
        ]);
        let example = normalize(&stream, "Create Datadog agent config file", "template");
        assert_eq!(
            example.name_tokens,
            ["create", "datadog", "agent", "config", "file"]
        );
        assert_eq!(
            example.body_tokens,
            [
                "AnsibleTaskBody",
                "Module",
                "Name",
                "template",
                "Parameter",
                "src",
                "datadog.yaml.j2"
            ]
        );
    }

    #[test]
    fn normalize_keeps_empty_name() {
        let stream = body_stream(&["AnsibleTaskBody", "Module", "Name", "debug"]);
        let example = normalize(&stream, "", "debug");
        assert!(example.name_tokens.is_empty());
        assert_eq!(example.body_tokens.len(), 4);
    }

    #[test]
    fn joint_sequence_inserts_separator() {
        let stream = body_stream(&["AnsibleTaskBody", "Module", "Name", "debug"]);
        let example = normalize(&stream, "say hi", "debug");
        let seq = example.joint_sequence();
        assert_eq!(seq[2], SEP_TOKEN);
        assert_eq!(seq.len(), 2 + 1 + 4);
    }

    proptest! {
        #[test]
        fn name_tokens_are_lowercase_and_non_empty(name in "[\\x20-\\x7E]{0,40}") {
            for token in tokenize_name(&name) {
                prop_assert!(!token.is_empty());
                prop_assert!(!token.chars().any(|c| c.is_uppercase()));
            }
        }

        #[test]
        fn normalize_preserves_token_count_and_is_idempotent(
            tokens in proptest::collection::vec("[A-Za-z0-9./{}_-]{1,10}", 1..20)
        ) {
            let mut all = vec!["AnsibleTaskBody".to_string()];
            all.extend(tokens);
            let stream = TokenStream { task_id: "t".into(), origin: Origin::Body, tokens: all };
            let once = normalize(&stream, "Some Name", "m");
            prop_assert_eq!(once.body_tokens.len(), stream.tokens.len());
            let twice_stream = TokenStream {
                task_id: once.task_id.clone(),
                origin: Origin::Body,
                tokens: once.body_tokens.clone(),
            };
            let twice = normalize(&twice_stream, "Some Name", "m");
            prop_assert_eq!(once.body_tokens, twice.body_tokens);
            prop_assert_eq!(once.name_tokens, twice.name_tokens);
        }
    }
}
