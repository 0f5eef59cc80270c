//! Minimal marked YAML loader.
//!
//! Wraps the `yaml-rust2` event parser to build a value tree that keeps
//! the source line of every node and keeps all scalars as verbatim text.
//! Scalar text is what gets tokenized downstream, so no int/bool coercion
//! happens here; only plain-style nulls are recognized as null.

use std::collections::HashMap;
use std::path::Path;

use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

use crate::error::{Error, Result};

/// A YAML value with the source position of its first character.
#[derive(Debug, Clone, PartialEq)]
pub struct YamlNode {
    pub value: YamlValue,
    /// 1-indexed source line.
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum YamlValue {
    Null,
    /// Verbatim scalar text (quoted scalars arrive unquoted and unescaped).
    Scalar(String),
    Seq(Vec<YamlNode>),
    /// Key/value pairs in document order; duplicate keys are preserved.
    Map(Vec<(YamlNode, YamlNode)>),
}

impl YamlNode {
    pub fn as_scalar(&self) -> Option<&str> {
        match &self.value {
            YamlValue::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[YamlNode]> {
        match &self.value {
            YamlValue::Seq(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(YamlNode, YamlNode)]> {
        match &self.value {
            YamlValue::Map(entries) => Some(entries),
            _ => None,
        }
    }

    /// First value whose key is the given scalar.
    pub fn get(&self, key: &str) -> Option<&YamlNode> {
        self.as_map()?
            .iter()
            .find(|(k, _)| k.as_scalar() == Some(key))
            .map(|(_, v)| v)
    }
}

/// Parse every document in `text`. The path is only used in error messages.
pub fn load_documents(text: &str, path: &Path) -> Result<Vec<YamlNode>> {
    let mut builder = TreeBuilder::default();
    let mut parser = Parser::new_from_str(text);
    parser
        .load(&mut builder, true)
        .map_err(|err| Error::YamlParse {
            path: path.to_path_buf(),
            line: err.marker().line(),
            message: err.info().to_string(),
        })?;
    Ok(builder.documents)
}

#[derive(Default)]
struct TreeBuilder {
    documents: Vec<YamlNode>,
    /// In-progress containers, innermost last.
    stack: Vec<Container>,
    /// Anchored nodes, by anchor id (0 means unanchored).
    anchors: HashMap<usize, YamlNode>,
}

enum Container {
    Seq {
        items: Vec<YamlNode>,
        line: usize,
        col: usize,
        anchor: usize,
    },
    Map {
        entries: Vec<(YamlNode, YamlNode)>,
        pending_key: Option<YamlNode>,
        line: usize,
        col: usize,
        anchor: usize,
    },
}

impl TreeBuilder {
    fn insert(&mut self, node: YamlNode, anchor: usize) {
        if anchor > 0 {
            self.anchors.insert(anchor, node.clone());
        }
        match self.stack.last_mut() {
            None => self.documents.push(node),
            Some(Container::Seq { items, .. }) => items.push(node),
            Some(Container::Map {
                entries,
                pending_key,
                ..
            }) => match pending_key.take() {
                None => *pending_key = Some(node),
                Some(key) => entries.push((key, node)),
            },
        }
    }

    fn is_plain_null(text: &str, style: TScalarStyle) -> bool {
        style == TScalarStyle::Plain
            && matches!(text, "" | "~" | "null" | "Null" | "NULL")
    }
}

impl MarkedEventReceiver for TreeBuilder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        match ev {
            Event::Scalar(text, style, anchor, _tag) => {
                let value = if Self::is_plain_null(&text, style) {
                    YamlValue::Null
                } else {
                    YamlValue::Scalar(text)
                };
                let node = YamlNode {
                    value,
                    line: mark.line(),
                    col: mark.col(),
                };
                self.insert(node, anchor);
            }
            Event::SequenceStart(anchor, _tag) => self.stack.push(Container::Seq {
                items: Vec::new(),
                line: mark.line(),
                col: mark.col(),
                anchor,
            }),
            Event::MappingStart(anchor, _tag) => self.stack.push(Container::Map {
                entries: Vec::new(),
                pending_key: None,
                line: mark.line(),
                col: mark.col(),
                anchor,
            }),
            Event::SequenceEnd => {
                if let Some(Container::Seq {
                    items,
                    line,
                    col,
                    anchor,
                }) = self.stack.pop()
                {
                    let node = YamlNode {
                        value: YamlValue::Seq(items),
                        line,
                        col,
                    };
                    self.insert(node, anchor);
                }
            }
            Event::MappingEnd => {
                if let Some(Container::Map {
                    entries,
                    line,
                    col,
                    anchor,
                    ..
                }) = self.stack.pop()
                {
                    let node = YamlNode {
                        value: YamlValue::Map(entries),
                        line,
                        col,
                    };
                    self.insert(node, anchor);
                }
            }
            Event::Alias(id) => {
                let node = self.anchors.get(&id).cloned().unwrap_or(YamlNode {
                    value: YamlValue::Null,
                    line: mark.line(),
                    col: mark.col(),
                });
                self.insert(node, 0);
            }
            Event::StreamStart
            | Event::StreamEnd
            | Event::DocumentStart
            | Event::DocumentEnd
            | Event::Nothing => {}
        }
    }
}
