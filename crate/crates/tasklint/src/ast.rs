//! Ansible task extraction and the task-body AST.
//!
//! Playbooks and role task files are parsed into [`Task`] records, each
//! task body becomes a typed [`AstNode`] tree, and the tree serializes to
//! a flat token stream by pre-order depth-first traversal. The stream is
//! what the embedding and classifier layers consume.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::error::Result;
use crate::textio;
use crate::yaml::{self, YamlNode, YamlValue};

/// Task-level keys that are never module candidates.
const RESERVED_KEYS: &[&str] = &[
    "name",
    "when",
    "loop",
    "notify",
    "register",
    "tags",
    "vars",
    "delegate_to",
    "ignore_errors",
    "changed_when",
    "failed_when",
    "environment",
    "args",
];

/// Keys whose presence marks a mapping as a play rather than a task.
const PLAY_KEYS: &[&str] = &["hosts", "tasks", "pre_tasks", "post_tasks", "handlers", "roles"];

/// Play sections that hold task lists, visited in document order.
const TASK_LIST_KEYS: &[&str] = &["pre_tasks", "tasks", "post_tasks", "handlers"];

/// Free-form module arguments (`shell: echo hi`) keep Ansible's own
/// internal parameter name so every body stays a parameter map.
pub const RAW_PARAMS_KEY: &str = "_raw_params";

fn is_reserved_key(key: &str) -> bool {
    RESERVED_KEYS.contains(&key) || key.starts_with("with_") || key.starts_with("become")
}

/// A parameter value inside a task body.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyValue {
    /// Verbatim scalar text.
    Scalar(String),
    Null,
    List(Vec<BodyValue>),
    Map(IndexMap<String, BodyValue>),
}

/// One Ansible task: the unit the linter classifies.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// `<path>:<line>#<ordinal>`; unique within a corpus of distinct files.
    pub id: String,
    /// Task name; empty when the task has none.
    pub name: String,
    /// The single module the task invokes.
    pub module_key: String,
    /// Module parameters in source order (`args:` entries merged in).
    pub body: IndexMap<String, BodyValue>,
    pub when_clause: Option<String>,
    pub loop_clause: Option<String>,
    /// Deduplicated, in notify order.
    pub notify_targets: Vec<String>,
    pub source: SourceLocation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLocation {
    pub path: PathBuf,
    /// 1-indexed line of the task mapping.
    pub line: usize,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.path.display(), self.line)
    }
}

/// AST node kinds. `Value` nodes are leaves carrying raw token text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    AnsibleTaskBody,
    Module,
    Name,
    Parameter,
    Conditional,
    Loop,
    Notify,
    Value,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::AnsibleTaskBody => "AnsibleTaskBody",
            NodeKind::Module => "Module",
            NodeKind::Name => "Name",
            NodeKind::Parameter => "Parameter",
            NodeKind::Conditional => "Conditional",
            NodeKind::Loop => "Loop",
            NodeKind::Notify => "Notify",
            NodeKind::Value => "Value",
        }
    }

    /// The fixed kind-name vocabulary. These tokens keep their casing
    /// through normalization so they anchor the body grammar.
    pub fn all_names() -> &'static [&'static str] {
        &[
            "AnsibleTaskBody",
            "Module",
            "Name",
            "Parameter",
            "Conditional",
            "Loop",
            "Notify",
            "Value",
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub kind: NodeKind,
    /// Parameter name for `Parameter` nodes, token text for `Value` nodes.
    pub raw: Option<String>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind, raw: Option<String>, children: Vec<AstNode>) -> Self {
        Self { kind, raw, children }
    }

    fn value(text: impl Into<String>) -> Self {
        Self::new(NodeKind::Value, Some(text.into()), Vec::new())
    }
}

/// Where a token stream came from: the task name or the body AST.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Name,
    Body,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Name => "name",
            Origin::Body => "body",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "name" => Some(Origin::Name),
            "body" => Some(Origin::Body),
            _ => None,
        }
    }
}

/// An ordered token sequence for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub task_id: String,
    pub origin: Origin,
    pub tokens: Vec<String>,
}

/// A task that could not be reduced to exactly one module invocation.
#[derive(Debug, Clone)]
pub struct SkippedTask {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

/// Result of parsing one YAML file.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub tasks: Vec<Task>,
    pub skipped: Vec<SkippedTask>,
}

/// Extract every task from the YAML text of a playbook or role task file.
///
/// Plays contribute their `pre_tasks`/`tasks`/`post_tasks`/`handlers`
/// lists; a document that is a plain list of mappings is treated as a
/// role task file. `block` tasks are flattened into their inner tasks.
pub fn parse_tasks(yaml_text: &str, source_path: &Path) -> Result<ParseOutcome> {
    let documents = yaml::load_documents(yaml_text, source_path)?;
    let mut outcome = ParseOutcome::default();
    let mut ordinal = 0usize;
    for doc in &documents {
        match &doc.value {
            YamlValue::Seq(items) => {
                for item in items {
                    collect_item(item, source_path, &mut outcome, &mut ordinal);
                }
            }
            YamlValue::Map(_) => collect_item(doc, source_path, &mut outcome, &mut ordinal),
            YamlValue::Null => {}
            YamlValue::Scalar(_) => outcome.skipped.push(SkippedTask {
                path: source_path.to_path_buf(),
                line: doc.line,
                reason: "document is a bare scalar, not a play or task list".into(),
            }),
        }
    }
    Ok(outcome)
}

fn collect_item(node: &YamlNode, path: &Path, outcome: &mut ParseOutcome, ordinal: &mut usize) {
    let Some(entries) = node.as_map() else {
        outcome.skipped.push(SkippedTask {
            path: path.to_path_buf(),
            line: node.line,
            reason: "list item is not a mapping".into(),
        });
        return;
    };
    let is_play = entries
        .iter()
        .any(|(k, _)| k.as_scalar().map_or(false, |k| PLAY_KEYS.contains(&k)));
    if is_play {
        for (key, value) in entries {
            let Some(key) = key.as_scalar() else { continue };
            if TASK_LIST_KEYS.contains(&key) {
                if let Some(items) = value.as_seq() {
                    for item in items {
                        collect_task(item, path, outcome, ordinal);
                    }
                }
            }
        }
    } else {
        collect_task(node, path, outcome, ordinal);
    }
}

fn collect_task(node: &YamlNode, path: &Path, outcome: &mut ParseOutcome, ordinal: &mut usize) {
    let Some(entries) = node.as_map() else {
        outcome.skipped.push(SkippedTask {
            path: path.to_path_buf(),
            line: node.line,
            reason: "task entry is not a mapping".into(),
        });
        return;
    };

    // Flatten `block` into its inner tasks; block-level directives are
    // dropped with the wrapper.
    let has_block = entries
        .iter()
        .any(|(k, _)| k.as_scalar() == Some("block"));
    if has_block {
        for (key, value) in entries {
            let Some(key) = key.as_scalar() else { continue };
            if matches!(key, "block" | "rescue" | "always") {
                if let Some(items) = value.as_seq() {
                    for item in items {
                        collect_task(item, path, outcome, ordinal);
                    }
                }
            }
        }
        return;
    }

    match task_from_entries(entries, path, node.line, *ordinal) {
        Ok(task) => {
            *ordinal += 1;
            outcome.tasks.push(task);
        }
        Err(reason) => outcome.skipped.push(SkippedTask {
            path: path.to_path_buf(),
            line: node.line,
            reason,
        }),
    }
}

fn task_from_entries(
    entries: &[(YamlNode, YamlNode)],
    path: &Path,
    line: usize,
    ordinal: usize,
) -> std::result::Result<Task, String> {
    let mut name = String::new();
    let mut when_clause = None;
    let mut loop_clause = None;
    let mut notify_targets: Vec<String> = Vec::new();
    let mut args_entries: Option<&YamlNode> = None;
    let mut module_candidates: Vec<(&str, &YamlNode)> = Vec::new();

    for (key, value) in entries {
        let Some(key) = key.as_scalar() else {
            return Err("task has a non-scalar key".into());
        };
        match key {
            "name" => name = value.as_scalar().unwrap_or("").to_string(),
            "when" => when_clause = Some(render_when(value)),
            "notify" => notify_targets = notify_list(value),
            "args" => args_entries = Some(value),
            _ if key == "loop" || key.starts_with("with_") => {
                if loop_clause.is_none() {
                    loop_clause = Some(render_flow(value));
                }
            }
            _ if is_reserved_key(key) => {}
            _ => module_candidates.push((key, value)),
        }
    }

    if module_candidates.len() != 1 {
        return Err(if module_candidates.is_empty() {
            "no module key candidate".to_string()
        } else {
            format!(
                "{} module key candidates: {}",
                module_candidates.len(),
                module_candidates
                    .iter()
                    .map(|(k, _)| *k)
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        });
    }

    let (module_key, module_value) = module_candidates[0];
    let mut body = match &module_value.value {
        YamlValue::Map(params) => body_map(params)?,
        YamlValue::Scalar(text) => {
            let mut map = IndexMap::new();
            map.insert(RAW_PARAMS_KEY.to_string(), BodyValue::Scalar(text.clone()));
            map
        }
        YamlValue::Null => IndexMap::new(),
        YamlValue::Seq(_) => return Err(format!("module `{module_key}` has a sequence value")),
    };

    if let Some(args) = args_entries {
        if let Some(params) = args.as_map() {
            for (k, v) in body_map(params)? {
                body.insert(k, v);
            }
        }
    }

    Ok(Task {
        id: format!("{}:{}#{}", path.display(), line, ordinal),
        name,
        module_key: module_key.to_string(),
        body,
        when_clause,
        loop_clause,
        notify_targets,
        source: SourceLocation {
            path: path.to_path_buf(),
            line,
        },
    })
}

fn body_map(params: &[(YamlNode, YamlNode)]) -> std::result::Result<IndexMap<String, BodyValue>, String> {
    let mut map = IndexMap::new();
    for (key, value) in params {
        let Some(key) = key.as_scalar() else {
            return Err("parameter map has a non-scalar key".into());
        };
        map.insert(key.to_string(), body_value(value));
    }
    Ok(map)
}

fn body_value(node: &YamlNode) -> BodyValue {
    match &node.value {
        YamlValue::Null => BodyValue::Null,
        YamlValue::Scalar(s) => BodyValue::Scalar(s.clone()),
        YamlValue::Seq(items) => BodyValue::List(items.iter().map(body_value).collect()),
        YamlValue::Map(entries) => {
            let mut map = IndexMap::new();
            for (k, v) in entries {
                let key = k.as_scalar().unwrap_or_default().to_string();
                map.insert(key, body_value(v));
            }
            BodyValue::Map(map)
        }
    }
}

/// `when` lists mean conjunction; render them as one expression string.
fn render_when(node: &YamlNode) -> String {
    match &node.value {
        YamlValue::Seq(items) => items
            .iter()
            .map(render_flow)
            .collect::<Vec<_>>()
            .join(" and "),
        _ => render_flow(node),
    }
}

/// Compact flow-style rendering for loop values and nested expressions.
fn render_flow(node: &YamlNode) -> String {
    match &node.value {
        YamlValue::Null => "null".to_string(),
        YamlValue::Scalar(s) => s.clone(),
        YamlValue::Seq(items) => {
            let inner = items.iter().map(render_flow).collect::<Vec<_>>().join(", ");
            format!("[{inner}]")
        }
        YamlValue::Map(entries) => {
            let inner = entries
                .iter()
                .map(|(k, v)| {
                    format!("{}: {}", k.as_scalar().unwrap_or_default(), render_flow(v))
                })
                .collect::<Vec<_>>()
                .join(", ");
            format!("{{{inner}}}")
        }
    }
}

fn notify_list(node: &YamlNode) -> Vec<String> {
    let raw: Vec<String> = match &node.value {
        YamlValue::Scalar(s) => vec![s.clone()],
        YamlValue::Seq(items) => items
            .iter()
            .filter_map(|n| n.as_scalar().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    };
    let mut seen = Vec::new();
    for target in raw {
        if !seen.contains(&target) {
            seen.push(target);
        }
    }
    seen
}

/// Build the body AST: `AnsibleTaskBody` root, then `Module` (name plus
/// one `Parameter` per body entry), then `Conditional`, `Loop`, and
/// `Notify` in that fixed order.
pub fn build_ast(task: &Task) -> AstNode {
    let mut module_children = vec![AstNode::new(
        NodeKind::Name,
        None,
        vec![AstNode::value(&task.module_key)],
    )];
    for (param, value) in &task.body {
        module_children.push(parameter_node(param, value));
    }

    let mut root_children = vec![AstNode::new(NodeKind::Module, None, module_children)];
    if let Some(when) = &task.when_clause {
        root_children.push(AstNode::new(
            NodeKind::Conditional,
            None,
            vec![AstNode::value(when)],
        ));
    }
    if let Some(loop_expr) = &task.loop_clause {
        root_children.push(AstNode::new(
            NodeKind::Loop,
            None,
            vec![AstNode::value(loop_expr)],
        ));
    }
    if !task.notify_targets.is_empty() {
        root_children.push(AstNode::new(
            NodeKind::Notify,
            None,
            task.notify_targets.iter().map(AstNode::value).collect(),
        ));
    }
    AstNode::new(NodeKind::AnsibleTaskBody, None, root_children)
}

fn parameter_node(name: &str, value: &BodyValue) -> AstNode {
    AstNode::new(
        NodeKind::Parameter,
        Some(name.to_string()),
        value_children(value),
    )
}

fn value_children(value: &BodyValue) -> Vec<AstNode> {
    match value {
        // Empty scalars and nulls carry no token.
        BodyValue::Null => Vec::new(),
        BodyValue::Scalar(s) if s.is_empty() => Vec::new(),
        BodyValue::Scalar(s) => vec![AstNode::value(s)],
        BodyValue::List(items) => items.iter().flat_map(value_children).collect(),
        BodyValue::Map(entries) => entries
            .iter()
            .map(|(k, v)| parameter_node(k, v))
            .collect(),
    }
}

/// Serialize an AST to its pre-order token stream.
///
/// Non-value nodes emit their kind name (`Parameter` nodes also emit the
/// parameter name right after); `Value` nodes emit their raw text alone.
pub fn serialize_preorder(task_id: &str, ast: &AstNode) -> TokenStream {
    let mut tokens = Vec::new();
    visit(ast, &mut tokens);
    TokenStream {
        task_id: task_id.to_string(),
        origin: Origin::Body,
        tokens,
    }
}

fn visit(node: &AstNode, tokens: &mut Vec<String>) {
    match node.kind {
        NodeKind::Value => {
            if let Some(raw) = &node.raw {
                if !raw.is_empty() {
                    tokens.push(raw.clone());
                }
            }
        }
        NodeKind::Parameter => {
            tokens.push(node.kind.as_str().to_string());
            if let Some(raw) = &node.raw {
                tokens.push(raw.clone());
            }
            for child in &node.children {
                visit(child, tokens);
            }
        }
        _ => {
            tokens.push(node.kind.as_str().to_string());
            for child in &node.children {
                visit(child, tokens);
            }
        }
    }
}

/// One line of the persisted token file: `task_id \t origin \t tokens`.
pub fn format_stream_line(stream: &TokenStream) -> String {
    format!(
        "{}\t{}\t{}",
        textio::escape_token(&stream.task_id),
        stream.origin.as_str(),
        textio::join_tokens(&stream.tokens)
    )
}

/// Parse one token-file line written by [`format_stream_line`].
pub fn parse_stream_line(line: &str) -> Option<TokenStream> {
    let mut parts = line.splitn(3, '\t');
    let task_id = textio::unescape_token(parts.next()?);
    let origin = Origin::parse(parts.next()?)?;
    let tokens = textio::split_tokens(parts.next().unwrap_or(""));
    Some(TokenStream {
        task_id,
        origin,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG2_SNIPPET: &str = r#"
- name: Create Datadog agent config directory
  file:
    dest: /etc/datadog-agent
    state: directory

- name: Create Datadog agent config file
  template:
    src: datadog.yaml.j2
    dest: /etc/datadog-agent/datadog.yaml
    owner: dd-agent
    group: dd-agent
    mode: "0640"
  notify: restart datadog-agent
"#;

    fn parse_fixture(text: &str) -> ParseOutcome {
        parse_tasks(text, Path::new("fixtures/demo.yml")).expect("parse")
    }

    #[test]
    fn datadog_snippet_parses_to_two_tasks() {
        let outcome = parse_fixture(FIG2_SNIPPET);
        assert!(outcome.skipped.is_empty());
        assert_eq!(outcome.tasks.len(), 2);
        assert_eq!(outcome.tasks[0].module_key, "file");
        assert_eq!(outcome.tasks[1].module_key, "template");
        assert_eq!(
            outcome.tasks[1].notify_targets,
            vec!["restart datadog-agent".to_string()]
        );
    }

    #[test]
    fn template_task_ast_matches_expected_shape() {
        let outcome = parse_fixture(FIG2_SNIPPET);
        let ast = build_ast(&outcome.tasks[1]);
        assert_eq!(ast.kind, NodeKind::AnsibleTaskBody);
        assert_eq!(ast.children[0].kind, NodeKind::Module);
        let module = &ast.children[0];
        assert_eq!(module.children[0].kind, NodeKind::Name);
        assert_eq!(module.children[0].children[0].raw.as_deref(), Some("template"));
        let params: Vec<_> = module.children[1..]
            .iter()
            .map(|p| p.raw.as_deref().unwrap())
            .collect();
        assert_eq!(params, ["src", "dest", "owner", "group", "mode"]);
        let notify = ast.children.last().unwrap();
        assert_eq!(notify.kind, NodeKind::Notify);
        assert_eq!(
            notify.children[0].raw.as_deref(),
            Some("restart datadog-agent")
        );
    }

    #[test]
    fn template_task_stream_has_quoted_prefix_and_suffix() {
        let outcome = parse_fixture(FIG2_SNIPPET);
        let stream = serialize_preorder(&outcome.tasks[1].id, &build_ast(&outcome.tasks[1]));
        let expected_prefix = [
            "AnsibleTaskBody",
            "Module",
            "Name",
            "template",
            "Parameter",
            "src",
            "datadog.yaml.j2",
        ];
        assert_eq!(&stream.tokens[..expected_prefix.len()], &expected_prefix);
        let n = stream.tokens.len();
        assert_eq!(
            &stream.tokens[n - 2..],
            &["Notify", "restart datadog-agent"]
        );
    }

    #[test]
    fn minimal_debug_task() {
        let outcome = parse_fixture("- name: x\n  debug:\n    msg: hi\n");
        assert_eq!(outcome.tasks.len(), 1);
        let task = &outcome.tasks[0];
        assert_eq!(task.module_key, "debug");
        assert_eq!(
            task.body.get("msg"),
            Some(&BodyValue::Scalar("hi".to_string()))
        );
        let stream = serialize_preorder(&task.id, &build_ast(task));
        assert_eq!(
            stream.tokens,
            ["AnsibleTaskBody", "Module", "Name", "debug", "Parameter", "msg", "hi"]
        );
    }

    #[test]
    fn three_plays_two_tasks_each_in_document_order() {
        let mut text = String::new();
        for play in 0..3 {
            text.push_str(&format!(
                "- hosts: web{play}\n  tasks:\n    - name: a{play}\n      debug:\n        msg: one\n    - name: b{play}\n      debug:\n        msg: two\n"
            ));
        }
        let outcome = parse_fixture(&text);
        assert_eq!(outcome.tasks.len(), 6);
        let names: Vec<_> = outcome.tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["a0", "b0", "a1", "b1", "a2", "b2"]);
    }

    #[test]
    fn empty_body_module_yields_name_only_module_node() {
        let outcome = parse_fixture("- name: gather\n  gather_facts:\n");
        let ast = build_ast(&outcome.tasks[0]);
        let module = &ast.children[0];
        assert_eq!(module.children.len(), 1);
        assert_eq!(module.children[0].kind, NodeKind::Name);
        let stream = serialize_preorder(&outcome.tasks[0].id, &ast);
        assert_eq!(stream.tokens, ["AnsibleTaskBody", "Module", "Name", "gather_facts"]);
    }

    #[test]
    fn nested_dict_parameter_expands_to_child_parameters() {
        let outcome =
            parse_fixture("- name: x\n  mymod:\n    settings:\n      a: 1\n      b: 2\n");
        let ast = build_ast(&outcome.tasks[0]);
        let param = &ast.children[0].children[1];
        assert_eq!(param.raw.as_deref(), Some("settings"));
        assert_eq!(param.children.len(), 2);
        assert_eq!(param.children[0].kind, NodeKind::Parameter);
        assert_eq!(param.children[0].raw.as_deref(), Some("a"));
        assert_eq!(param.children[1].raw.as_deref(), Some("b"));
        let stream = serialize_preorder(&outcome.tasks[0].id, &ast);
        assert_eq!(
            stream.tokens,
            [
                "AnsibleTaskBody",
                "Module",
                "Name",
                "mymod",
                "Parameter",
                "settings",
                "Parameter",
                "a",
                "1",
                "Parameter",
                "b",
                "2"
            ]
        );
    }

    #[test]
    fn free_form_module_value_becomes_raw_params() {
        let outcome = parse_fixture("- name: run it\n  shell: systemctl restart nginx\n");
        let task = &outcome.tasks[0];
        assert_eq!(task.module_key, "shell");
        assert_eq!(
            task.body.get(RAW_PARAMS_KEY),
            Some(&BodyValue::Scalar("systemctl restart nginx".to_string()))
        );
        let stream = serialize_preorder(&task.id, &build_ast(task));
        // The whole command stays one verbatim token.
        assert!(stream
            .tokens
            .contains(&"systemctl restart nginx".to_string()));
    }

    #[test]
    fn reserved_keys_do_not_compete_with_module_key() {
        let text = "- name: x\n  when: ansible_os_family == 'Debian'\n  become: true\n  register: out\n  tags: [a, b]\n  file:\n    path: /tmp/x\n    state: touch\n  loop: \"{{ items }}\"\n";
        let outcome = parse_fixture(text);
        assert_eq!(outcome.tasks.len(), 1);
        let task = &outcome.tasks[0];
        assert_eq!(task.module_key, "file");
        assert_eq!(
            task.when_clause.as_deref(),
            Some("ansible_os_family == 'Debian'")
        );
        assert_eq!(task.loop_clause.as_deref(), Some("{{ items }}"));
    }

    #[test]
    fn args_merge_into_body() {
        let text = "- name: x\n  command: mysqldump\n  args:\n    chdir: /var/backups\n";
        let outcome = parse_fixture(text);
        let task = &outcome.tasks[0];
        let keys: Vec<_> = task.body.keys().map(String::as_str).collect();
        assert_eq!(keys, [RAW_PARAMS_KEY, "chdir"]);
    }

    #[test]
    fn zero_and_multi_candidate_tasks_are_skipped_with_diagnostics() {
        let text = "- name: nothing here\n  register: x\n- name: two modules\n  file:\n    path: /a\n  copy:\n    dest: /b\n- name: fine\n  debug:\n    msg: ok\n";
        let outcome = parse_fixture(text);
        assert_eq!(outcome.tasks.len(), 1);
        assert_eq!(outcome.skipped.len(), 2);
        assert!(outcome.skipped[0].reason.contains("no module key"));
        assert!(outcome.skipped[1].reason.contains("2 module key candidates"));
    }

    #[test]
    fn block_tasks_are_flattened() {
        let text = "- name: wrapper\n  block:\n    - name: inner one\n      debug:\n        msg: a\n    - name: inner two\n      debug:\n        msg: b\n  rescue:\n    - name: on fail\n      debug:\n        msg: c\n";
        let outcome = parse_fixture(text);
        let names: Vec<_> = outcome.tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["inner one", "inner two", "on fail"]);
    }

    #[test]
    fn when_list_renders_as_conjunction() {
        let text = "- name: x\n  when:\n    - a == 1\n    - b == 2\n  debug:\n    msg: hi\n";
        let outcome = parse_fixture(text);
        assert_eq!(
            outcome.tasks[0].when_clause.as_deref(),
            Some("a == 1 and b == 2")
        );
    }

    #[test]
    fn notify_deduplicates_preserving_order() {
        let text = "- name: x\n  debug:\n    msg: hi\n  notify:\n    - restart a\n    - restart b\n    - restart a\n";
        let outcome = parse_fixture(text);
        assert_eq!(outcome.tasks[0].notify_targets, ["restart a", "restart b"]);
    }

    #[test]
    fn parse_build_serialize_is_deterministic() {
        let runs: Vec<Vec<TokenStream>> = (0..2)
            .map(|_| {
                parse_fixture(FIG2_SNIPPET)
                    .tasks
                    .iter()
                    .map(|t| serialize_preorder(&t.id, &build_ast(t)))
                    .collect()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn stream_lines_round_trip() {
        let outcome = parse_fixture(FIG2_SNIPPET);
        let stream = serialize_preorder(&outcome.tasks[1].id, &build_ast(&outcome.tasks[1]));
        let line = format_stream_line(&stream);
        let parsed = parse_stream_line(&line).expect("parse line");
        assert_eq!(parsed, stream);
    }

    // Strategy for structurally valid ASTs, used by the token-count law.
    fn value_node() -> impl Strategy<Value = AstNode> {
        "[a-z0-9./]{1,8}".prop_map(AstNode::value)
    }

    fn parameter_node_strategy() -> impl Strategy<Value = AstNode> {
        let leaf = value_node();
        leaf.prop_recursive(3, 12, 4, |inner| {
            (
                "[a-z_]{1,6}",
                proptest::collection::vec(inner, 0..4),
            )
                .prop_map(|(name, children)| {
                    AstNode::new(NodeKind::Parameter, Some(name), children)
                })
        })
    }

    fn task_ast_strategy() -> impl Strategy<Value = AstNode> {
        (
            "[a-z_]{1,8}",
            proptest::collection::vec(parameter_node_strategy(), 0..5),
            proptest::option::of(value_node()),
            proptest::collection::vec(value_node(), 0..3),
        )
            .prop_map(|(module_key, params, conditional, notify)| {
                let mut module_children = vec![AstNode::new(
                    NodeKind::Name,
                    None,
                    vec![AstNode::value(module_key)],
                )];
                module_children.extend(params);
                let mut children = vec![AstNode::new(NodeKind::Module, None, module_children)];
                if let Some(cond) = conditional {
                    children.push(AstNode::new(NodeKind::Conditional, None, vec![cond]));
                }
                if !notify.is_empty() {
                    children.push(AstNode::new(NodeKind::Notify, None, notify));
                }
                AstNode::new(NodeKind::AnsibleTaskBody, None, children)
            })
    }

    fn count_nodes(node: &AstNode, counts: &mut (usize, usize, usize)) {
        match node.kind {
            NodeKind::Value => counts.2 += 1,
            NodeKind::Parameter => counts.1 += 1,
            _ => counts.0 += 1,
        }
        for child in &node.children {
            count_nodes(child, counts);
        }
    }

    proptest! {
        #[test]
        fn token_count_law_holds(ast in task_ast_strategy()) {
            let stream = serialize_preorder("t", &ast);
            let mut counts = (0usize, 0usize, 0usize);
            count_nodes(&ast, &mut counts);
            let (other, params, values) = counts;
            prop_assert_eq!(stream.tokens.len(), other + 2 * params + values);
            prop_assert_eq!(stream.tokens[0].as_str(), "AnsibleTaskBody");
        }

        #[test]
        fn module_subtree_is_contiguous(ast in task_ast_strategy()) {
            let stream = serialize_preorder("t", &ast);
            let module_key = ast.children[0].children[0].children[0].raw.clone().unwrap();
            let pos = stream.tokens.iter().position(|t| t == "Module").unwrap();
            prop_assert_eq!(stream.tokens[pos + 1].as_str(), "Name");
            prop_assert_eq!(stream.tokens[pos + 2].as_str(), module_key.as_str());
        }
    }
}
