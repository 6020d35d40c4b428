//! Catalog of MCP-style tool schemas.
//!
//! The on-disk format is a JSON array of tool objects shaped like MCP tool
//! definitions (`name`, `title`, `description`, `tier`, `inputSchema`,
//! `annotations`). Only the subset of draft-07 used by tool arguments is
//! understood: a flat `properties` map of string / integer / boolean
//! parameters (strings optionally restricted by `enum`) plus `required`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub type Args = Map<String, Value>;

const DRAFT_07: &str = "http://json-schema.org/draft-07/schema#";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Read,
    Write,
    Critical,
}

impl Tier {
    /// WRITE and CRITICAL tools change state.
    pub fn mutates(self) -> bool {
        !matches!(self, Tier::Read)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Read => "READ",
            Tier::Write => "WRITE",
            Tier::Critical => "CRITICAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamKind {
    String,
    Enum(Vec<String>),
    Integer,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: Option<String>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind, required: bool) -> Self {
        Self {
            name: name.into(),
            kind,
            required,
            description: None,
        }
    }

    pub fn describe(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub destructive: bool,
    pub idempotent: bool,
    pub audience: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSchema {
    pub name: String,
    pub title: String,
    pub description: String,
    pub tier: Tier,
    pub params: Vec<ParamSpec>,
    pub annotations: Annotations,
    /// `execution.taskSupport`, carried through untouched.
    pub task_support: Option<String>,
}

impl ToolSchema {
    pub fn new(
        name: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
        tier: Tier,
    ) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            description: description.into(),
            tier,
            params: Vec::new(),
            annotations: Annotations::default(),
            task_support: None,
        }
    }

    pub fn param(mut self, spec: ParamSpec) -> Self {
        self.params.push(spec);
        self
    }

    pub fn destructive(mut self, destructive: bool) -> Self {
        self.annotations.destructive = destructive;
        self
    }

    pub fn idempotent(mut self, idempotent: bool) -> Self {
        self.annotations.idempotent = idempotent;
        self
    }

    /// Text the router embeds for this tool.
    pub fn routing_text(&self) -> String {
        format!("{} {}", self.title, self.description)
    }

    /// The tool in its JSON wire shape.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(WireTool::from(self)).expect("tool schema serialization cannot fail")
    }

    /// Whitespace-delimited token count of the canonical (pretty-printed)
    /// serialization. Used as the tool's context-window cost.
    pub fn token_cost(&self) -> usize {
        let text = serde_json::to_string_pretty(&WireTool::from(self))
            .expect("tool schema serialization cannot fail");
        text.split_whitespace().count()
    }

    pub fn param_spec(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn check(&self) -> Result<(), RegistryError> {
        let invalid = |reason: String| RegistryError::InvalidSchema {
            name: self.name.clone(),
            reason,
        };
        if !is_identifier(&self.name) {
            return Err(invalid("name must be a non-empty [A-Za-z0-9_] identifier".into()));
        }
        if self.description.trim().is_empty() {
            return Err(invalid("description must not be empty".into()));
        }
        if self.tier == Tier::Critical && !self.annotations.destructive {
            return Err(invalid("CRITICAL tools must be annotated destructive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            if !is_identifier(&p.name) {
                return Err(invalid(format!("bad parameter name '{}'", p.name)));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(invalid(format!("duplicate parameter '{}'", p.name)));
            }
            if let ParamKind::Enum(values) = &p.kind {
                if values.is_empty() {
                    return Err(invalid(format!("enum parameter '{}' has no values", p.name)));
                }
            }
        }
        if self.token_cost() < 1 {
            return Err(invalid("token cost must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate_arguments(&self, args: &Args) -> Result<(), ValidationError> {
        for p in &self.params {
            if p.required && !args.contains_key(&p.name) {
                return Err(ValidationError::MissingRequired(p.name.clone()));
            }
        }
        let mut keys: Vec<&String> = args.keys().collect();
        keys.sort();
        for key in keys {
            let Some(spec) = self.param_spec(key) else {
                return Err(ValidationError::UnknownParam(key.clone()));
            };
            let value = &args[key];
            match &spec.kind {
                ParamKind::String if !value.is_string() => {
                    return Err(ValidationError::TypeMismatch(key.clone(), "string"))
                }
                ParamKind::Integer if !(value.is_i64() || value.is_u64()) => {
                    return Err(ValidationError::TypeMismatch(key.clone(), "integer"))
                }
                ParamKind::Boolean if !value.is_boolean() => {
                    return Err(ValidationError::TypeMismatch(key.clone(), "boolean"))
                }
                ParamKind::Enum(allowed) => {
                    let ok = value
                        .as_str()
                        .is_some_and(|s| allowed.iter().any(|a| a == s));
                    if !ok {
                        return Err(ValidationError::EnumOutOfRange(
                            key.clone(),
                            value.as_str().map_or_else(|| value.to_string(), str::to_string),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("missing required argument '{0}'")]
    MissingRequired(String),
    #[error("unknown argument '{0}'")]
    UnknownParam(String),
    #[error("argument '{0}' value '{1}' is not one of the declared enum values")]
    EnumOutOfRange(String, String),
    #[error("argument '{0}' must be of type {1}")]
    TypeMismatch(String, &'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("tool '{0}' is already registered with a different definition")]
    DuplicateName(String),
    #[error("invalid schema for tool '{name}': {reason}")]
    InvalidSchema { name: String, reason: String },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
}

/// Immutable-after-startup map of tool name to schema.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSchema>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a schema. Re-registering an identical schema is a no-op.
    pub fn register_tool(&mut self, schema: ToolSchema) -> Result<(), RegistryError> {
        schema.check()?;
        match self.tools.get(&schema.name) {
            Some(existing) if *existing == schema => Ok(()),
            Some(_) => Err(RegistryError::DuplicateName(schema.name)),
            None => {
                self.tools.insert(schema.name.clone(), schema);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&ToolSchema, RegistryError> {
        self.get(name)
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSchema> {
        self.tools.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn tier_of(&self, name: &str) -> Option<Tier> {
        self.get(name).map(|t| t.tier)
    }

    pub fn load(document: &[u8]) -> Result<Self, RegistryError> {
        let wire: Vec<WireTool> = serde_json::from_slice(document).map_err(|e| {
            RegistryError::Parse {
                offset: byte_offset(document, e.line(), e.column()),
                message: e.to_string(),
            }
        })?;
        let mut registry = Self::new();
        for tool in wire {
            registry.register_tool(tool.try_into()?)?;
        }
        Ok(registry)
    }

    pub fn to_json(&self) -> String {
        let wire: Vec<WireTool> = self.tools.values().map(WireTool::from).collect();
        serde_json::to_string_pretty(&wire).expect("registry serialization cannot fail")
    }
}

/// Converts a serde_json (1-based line, 1-based column) position into a byte
/// offset into `document`.
pub(crate) fn byte_offset(document: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, chunk) in document.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(document.len());
        }
        offset += chunk.len() + 1;
    }
    document.len()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTool {
    name: String,
    title: String,
    description: String,
    tier: Tier,
    #[serde(rename = "inputSchema")]
    input_schema: WireInputSchema,
    annotations: WireAnnotations,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    execution: Option<WireExecution>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireInputSchema {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    properties: Map<String, Value>,
    #[serde(default)]
    required: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireProperty {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, rename = "enum", skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireAnnotations {
    #[serde(rename = "destructiveHint", default)]
    destructive: bool,
    #[serde(rename = "idempotentHint", default)]
    idempotent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    audience: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireExecution {
    #[serde(rename = "taskSupport")]
    task_support: String,
}

impl From<&ToolSchema> for WireTool {
    fn from(t: &ToolSchema) -> Self {
        let mut properties = Map::new();
        for p in &t.params {
            let (kind, values) = match &p.kind {
                ParamKind::String => ("string", None),
                ParamKind::Enum(v) => ("string", Some(v.clone())),
                ParamKind::Integer => ("integer", None),
                ParamKind::Boolean => ("boolean", None),
            };
            let prop = WireProperty {
                kind: kind.to_string(),
                description: p.description.clone(),
                values,
            };
            properties.insert(
                p.name.clone(),
                serde_json::to_value(prop).expect("property serialization cannot fail"),
            );
        }
        WireTool {
            name: t.name.clone(),
            title: t.title.clone(),
            description: t.description.clone(),
            tier: t.tier,
            input_schema: WireInputSchema {
                schema: Some(DRAFT_07.to_string()),
                kind: "object".to_string(),
                properties,
                required: t
                    .params
                    .iter()
                    .filter(|p| p.required)
                    .map(|p| p.name.clone())
                    .collect(),
            },
            annotations: WireAnnotations {
                destructive: t.annotations.destructive,
                idempotent: t.annotations.idempotent,
                audience: t.annotations.audience.clone(),
            },
            execution: t.task_support.clone().map(|task_support| WireExecution { task_support }),
        }
    }
}

impl TryFrom<WireTool> for ToolSchema {
    type Error = RegistryError;

    fn try_from(w: WireTool) -> Result<Self, Self::Error> {
        let invalid = |reason: String| RegistryError::InvalidSchema {
            name: w.name.clone(),
            reason,
        };
        if w.input_schema.kind != "object" {
            return Err(invalid("inputSchema.type must be \"object\"".into()));
        }
        for r in &w.input_schema.required {
            if !w.input_schema.properties.contains_key(r) {
                return Err(invalid(format!("required parameter '{r}' is not declared")));
            }
        }
        let mut params = Vec::with_capacity(w.input_schema.properties.len());
        for (name, raw) in &w.input_schema.properties {
            let prop: WireProperty = serde_json::from_value(raw.clone())
                .map_err(|e| invalid(format!("property '{name}': {e}")))?;
            let kind = match (prop.kind.as_str(), prop.values) {
                ("string", None) => ParamKind::String,
                ("string", Some(values)) => ParamKind::Enum(values),
                ("integer", None) => ParamKind::Integer,
                ("boolean", None) => ParamKind::Boolean,
                (other, _) => {
                    return Err(invalid(format!("property '{name}' has unsupported type '{other}'")))
                }
            };
            params.push(ParamSpec {
                name: name.clone(),
                kind,
                required: w.input_schema.required.contains(name),
                description: prop.description,
            });
        }
        Ok(ToolSchema {
            name: w.name.clone(),
            title: w.title.clone(),
            description: w.description.clone(),
            tier: w.tier,
            params,
            annotations: Annotations {
                destructive: w.annotations.destructive,
                idempotent: w.annotations.idempotent,
                audience: w.annotations.audience,
            },
            task_support: w.execution.map(|e| e.task_support),
        })
    }
}
