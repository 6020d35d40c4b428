//! Planners turn an intent into proposed tool calls. Their output is advisory:
//! the gateway validates and authorizes every step independently.

use std::collections::BTreeSet;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::registry::{Args, ToolSchema};
use crate::strategy::StrategyRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool_name: String,
    pub args: Args,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no plan found for intent")]
    NoPlanFound,
    #[error("planner backend failed: {0}")]
    Backend(String),
    #[error("invalid planner templates: {0}")]
    Templates(String),
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &str;
    /// `tools` is the routed toolset; a planner must not propose anything else.
    fn plan(&self, intent: &str, tools: &[&ToolSchema]) -> Result<Vec<PlanStep>, PlanError>;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    id: String,
    pattern: String,
    steps: Vec<StepTemplate>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepTemplate {
    tool: String,
    #[serde(default)]
    args: Map<String, Value>,
    rationale: String,
}

#[derive(Debug, Clone)]
struct Template {
    id: String,
    pattern: Regex,
    steps: Vec<StepTemplate>,
}

/// Deterministic planner driven by a table of anchored, case-insensitive
/// intent patterns. `{slot}` placeholders in argument strings and rationales
/// are filled from the pattern's named captures. The first template that
/// matches and whose tools are all routed wins.
#[derive(Debug, Clone)]
pub struct MockPlanner {
    templates: Vec<Template>,
}

fn slots(text: &str) -> impl Iterator<Item = &str> {
    text.split('{')
        .skip(1)
        .filter_map(|rest| rest.split_once('}').map(|(name, _)| name))
}

fn fill(text: &str, caps: &regex::Captures<'_>) -> String {
    let mut out = text.to_string();
    for name in slots(text).collect::<BTreeSet<_>>() {
        let value = caps.name(name).map_or("", |m| m.as_str().trim());
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

impl MockPlanner {
    pub fn load(document: &str) -> Result<Self, PlanError> {
        let files: Vec<TemplateFile> =
            serde_json::from_str(document).map_err(|e| PlanError::Templates(e.to_string()))?;
        let mut ids = BTreeSet::new();
        let mut templates = Vec::with_capacity(files.len());
        for f in files {
            if !ids.insert(f.id.clone()) {
                return Err(PlanError::Templates(format!("duplicate template id '{}'", f.id)));
            }
            let pattern = RegexBuilder::new(&f.pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| PlanError::Templates(format!("template '{}': {e}", f.id)))?;
            let groups: BTreeSet<&str> = pattern.capture_names().flatten().collect();
            for step in &f.steps {
                let texts = step
                    .args
                    .values()
                    .filter_map(Value::as_str)
                    .chain(std::iter::once(step.rationale.as_str()));
                for text in texts {
                    if let Some(slot) = slots(text).find(|s| !groups.contains(s)) {
                        return Err(PlanError::Templates(format!(
                            "template '{}' uses slot '{slot}' with no matching capture",
                            f.id
                        )));
                    }
                }
            }
            if f.steps.is_empty() {
                return Err(PlanError::Templates(format!("template '{}' has no steps", f.id)));
            }
            templates.push(Template {
                id: f.id,
                pattern,
                steps: f.steps,
            });
        }
        Ok(Self { templates })
    }

    pub fn template_ids(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|t| t.id.as_str())
    }

    /// Tools referenced by any template.
    pub fn referenced_tools(&self) -> BTreeSet<&str> {
        self.templates
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.tool.as_str()))
            .collect()
    }
}

impl Planner for MockPlanner {
    fn name(&self) -> &str {
        "mock"
    }

    fn plan(&self, intent: &str, tools: &[&ToolSchema]) -> Result<Vec<PlanStep>, PlanError> {
        let routed: BTreeSet<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        let intent = intent.trim();
        for t in &self.templates {
            if !t.steps.iter().all(|s| routed.contains(s.tool.as_str())) {
                continue;
            }
            let Some(caps) = t.pattern.captures(intent) else {
                continue;
            };
            return Ok(t
                .steps
                .iter()
                .map(|s| PlanStep {
                    tool_name: s.tool.clone(),
                    args: s
                        .args
                        .iter()
                        .map(|(k, v)| {
                            let v = match v {
                                Value::String(text) => Value::String(fill(text, &caps)),
                                other => other.clone(),
                            };
                            (k.clone(), v)
                        })
                        .collect(),
                    rationale: fill(&s.rationale, &caps),
                })
                .collect());
        }
        Err(PlanError::NoPlanFound)
    }
}

/// Delegates planning to an HTTP service.
///
/// Request: `POST <url>` with `{"intent": "...", "tools": [<tool schema>...]}`.
/// Response: `{"steps": [{"tool_name": "...", "args": {...}, "rationale": "..."}]}`.
/// An empty step list means no plan.
pub struct ExternalPlanner {
    url: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ExternalResponse {
    steps: Vec<PlanStep>,
}

impl ExternalPlanner {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Planner for ExternalPlanner {
    fn name(&self) -> &str {
        "external"
    }

    fn plan(&self, intent: &str, tools: &[&ToolSchema]) -> Result<Vec<PlanStep>, PlanError> {
        let body = json!({
            "intent": intent,
            "tools": tools.iter().map(|t| t.to_value()).collect::<Vec<_>>(),
        });
        let response: ExternalResponse = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| PlanError::Backend(e.to_string()))?
            .into_json()
            .map_err(|e| PlanError::Backend(format!("malformed response: {e}")))?;
        if response.steps.is_empty() {
            return Err(PlanError::NoPlanFound);
        }
        Ok(response.steps)
    }
}

/// `mock` (`{"templates": "<json document>"}`, defaulting to the bundled
/// fixture) and `external` (`{"url": "...", "timeout_ms": 5000}`).
pub fn builtin_planners() -> StrategyRegistry<dyn Planner> {
    let mut reg: StrategyRegistry<dyn Planner> = StrategyRegistry::new("planner");
    reg.register("mock", |params| {
        let doc = params
            .get("templates")
            .and_then(Value::as_str)
            .unwrap_or(crate::fixtures::PLANNER_TEMPLATES);
        MockPlanner::load(doc)
            .map(|p| Box::new(p) as Box<dyn Planner>)
            .map_err(|e| e.to_string())
    })
    .expect("fresh registry");
    reg.register("external", |params| {
        let url = params
            .get("url")
            .and_then(Value::as_str)
            .ok_or("missing string parameter 'url'")?;
        let timeout_ms = params.get("timeout_ms").and_then(Value::as_u64).unwrap_or(5_000);
        Ok(Box::new(ExternalPlanner::new(url, Duration::from_millis(timeout_ms))))
    })
    .expect("fresh registry");
    reg
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::fixtures;
    use crate::registry::ToolRegistry;

    fn all_tools(reg: &ToolRegistry) -> Vec<&ToolSchema> {
        reg.iter().collect()
    }

    #[test]
    fn create_template_fills_title() {
        let reg = fixtures::registry().unwrap();
        let p = MockPlanner::load(fixtures::PLANNER_TEMPLATES).unwrap();
        let plan = p.plan("Create a document titled Q3 forecast.", &all_tools(&reg)).unwrap();
        assert_eq!(
            plan,
            vec![PlanStep {
                tool_name: "create_document".into(),
                args: json!({"title": "Q3 forecast"}).as_object().unwrap().clone(),
                rationale: "Create a new document titled Q3 forecast.".into(),
            }]
        );
    }

    #[test]
    fn unmatched_intent_has_no_plan() {
        let reg = fixtures::registry().unwrap();
        let p = MockPlanner::load(fixtures::PLANNER_TEMPLATES).unwrap();
        assert_eq!(p.plan("what is the weather", &all_tools(&reg)), Err(PlanError::NoPlanFound));
    }

    #[test]
    fn templates_outside_routed_set_are_skipped() {
        let reg = fixtures::registry().unwrap();
        let p = MockPlanner::load(fixtures::PLANNER_TEMPLATES).unwrap();
        let only_read: Vec<&ToolSchema> = vec![reg.get("get_document").unwrap()];
        assert_eq!(p.plan("Delete document D-8821", &only_read), Err(PlanError::NoPlanFound));
        assert_eq!(p.plan("read document D-8821", &only_read).unwrap().len(), 1);
    }

    #[test]
    fn every_template_tool_is_registered() {
        let reg = fixtures::registry().unwrap();
        let p = MockPlanner::load(fixtures::PLANNER_TEMPLATES).unwrap();
        for t in p.referenced_tools() {
            assert!(reg.get(t).is_some(), "{t}");
        }
        assert!(p.template_ids().count() >= 12);
    }

    #[test]
    fn bad_templates_are_rejected() {
        let missing_slot = r#"[{"id": "a", "pattern": "^x (?P<a>.+)$",
            "steps": [{"tool": "t", "args": {"k": "{b}"}, "rationale": "r"}]}]"#;
        assert!(matches!(MockPlanner::load(missing_slot), Err(PlanError::Templates(_))));
        let bad_regex = r#"[{"id": "a", "pattern": "(", "steps": [{"tool": "t", "rationale": "r"}]}]"#;
        assert!(MockPlanner::load(bad_regex).is_err());
        let dup = r#"[{"id": "a", "pattern": "x", "steps": [{"tool": "t", "rationale": "r"}]},
                      {"id": "a", "pattern": "y", "steps": [{"tool": "t", "rationale": "r"}]}]"#;
        assert!(MockPlanner::load(dup).is_err());
    }

    /// Serves one HTTP request with `body` and returns the request it received.
    fn one_shot_server(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/plan", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0u8; len];
            reader.read_exact(&mut req).unwrap();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(req).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn external_planner_round_trip() {
        let (url, server) = one_shot_server(
            r#"{"steps": [{"tool_name": "get_document", "args": {"document_id": "D-1"}, "rationale": "look"}]}"#,
        );
        let reg = fixtures::registry().unwrap();
        let p = builtin_planners().build("external", &json!({"url": url})).unwrap();
        let plan = p.plan("read it", &[reg.get("get_document").unwrap()]).unwrap();
        assert_eq!(plan[0].tool_name, "get_document");
        let sent: Value = serde_json::from_str(&server.join().unwrap()).unwrap();
        assert_eq!(sent["intent"], "read it");
        assert_eq!(sent["tools"][0]["name"], "get_document");
    }

    #[test]
    fn external_planner_empty_plan() {
        let (url, server) = one_shot_server(r#"{"steps": []}"#);
        let p = ExternalPlanner::new(url, Duration::from_secs(5));
        assert_eq!(p.plan("x", &[]), Err(PlanError::NoPlanFound));
        server.join().unwrap();
    }

    #[test]
    fn external_planner_unreachable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/plan", listener.local_addr().unwrap());
        drop(listener);
        let p = ExternalPlanner::new(url, Duration::from_millis(500));
        assert!(matches!(p.plan("x", &[]), Err(PlanError::Backend(_))));
    }

    #[test]
    fn planner_registry() {
        let reg = builtin_planners();
        assert_eq!(reg.names(), vec!["external", "mock"]);
        assert_eq!(reg.build("mock", &Value::Null).unwrap().name(), "mock");
        assert!(reg.build("external", &json!({})).is_err());
    }
}
