//! Concrete implementations of the document-management tools.
//!
//! Each call either fails without touching the store or applies its whole
//! effect, so an error never leaves a partial mutation behind.

use serde::Serialize;
use serde_json::{json, Value};

use crate::policy::{AgentIdentity, AuthoritativeStore, DocState, Document, PendingShare, Permission};
use crate::registry::Args;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("document '{0}' not found")]
    UnknownDocument(String),
    #[error("user '{0}' not found")]
    UnknownUser(String),
    #[error("document '{id}' is {state:?}; {action} is not possible")]
    InvalidState {
        id: String,
        state: DocState,
        action: &'static str,
    },
    #[error("no pending share of '{0}' is addressed to the caller")]
    NoPendingShare(String),
    #[error("missing or invalid argument '{0}'")]
    BadArgument(&'static str),
    #[error("tool '{0}' has no implementation")]
    Unimplemented(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Execution {
    pub result: Value,
    /// Human-readable account of the store change, if any.
    pub mutation: Option<String>,
}

impl Execution {
    fn read(result: Value) -> Self {
        Self {
            result,
            mutation: None,
        }
    }

    fn write(result: Value, mutation: String) -> Self {
        Self {
            result,
            mutation: Some(mutation),
        }
    }
}

fn arg<'a>(args: &'a Args, name: &'static str) -> Result<&'a str, ExecError> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or(ExecError::BadArgument(name))
}

fn permission(args: &Args) -> Result<Permission, ExecError> {
    match arg(args, "permission_level")? {
        "read" => Ok(Permission::Read),
        "write" => Ok(Permission::Write),
        _ => Err(ExecError::BadArgument("permission_level")),
    }
}

fn doc<'a>(store: &'a AuthoritativeStore, id: &str) -> Result<&'a Document, ExecError> {
    store
        .document(id)
        .filter(|d| d.state != DocState::Deleted)
        .ok_or_else(|| ExecError::UnknownDocument(id.to_string()))
}

fn doc_mut<'a>(store: &'a mut AuthoritativeStore, id: &str) -> Result<&'a mut Document, ExecError> {
    store
        .documents
        .get_mut(id)
        .filter(|d| d.state != DocState::Deleted)
        .ok_or_else(|| ExecError::UnknownDocument(id.to_string()))
}

fn summary(id: &str, d: &Document) -> Value {
    json!({
        "document_id": id,
        "title": d.title,
        "department": d.department,
        "owner_id": d.owner_id,
        "state": d.state,
    })
}

fn next_document_id(store: &AuthoritativeStore) -> String {
    let max = store
        .documents
        .keys()
        .filter_map(|k| k.strip_prefix("D-")?.parse::<u64>().ok())
        .max()
        .unwrap_or(0);
    format!("D-{}", max + 1)
}

pub fn execute(
    store: &mut AuthoritativeStore,
    caller: &AgentIdentity,
    tool: &str,
    args: &Args,
) -> Result<Execution, ExecError> {
    match tool {
        "get_document" => {
            let id = arg(args, "document_id")?;
            let d = doc(store, id)?;
            let mut v = summary(id, d);
            v["content"] = json!(d.content);
            Ok(Execution::read(v))
        }
        "get_document_metadata" => {
            let id = arg(args, "document_id")?;
            let d = doc(store, id)?;
            let mut v = summary(id, d);
            v["grantees"] = json!(d.permissions.len());
            v["pending_share"] = json!(d.pending_share.is_some());
            Ok(Execution::read(v))
        }
        "list_document_permissions" => {
            let id = arg(args, "document_id")?;
            let d = doc(store, id)?;
            Ok(Execution::read(json!({
                "document_id": id,
                "permissions": d.permissions,
                "pending_share": d.pending_share,
            })))
        }
        "list_documents" => {
            let wanted: Option<DocState> = match args.get("state") {
                None => None,
                Some(v) => Some(
                    serde_json::from_value(v.clone()).map_err(|_| ExecError::BadArgument("state"))?,
                ),
            };
            let docs: Vec<Value> = store
                .documents
                .iter()
                .filter(|(_, d)| d.state != DocState::Deleted)
                .filter(|(_, d)| wanted.map_or(true, |s| d.state == s))
                .map(|(id, d)| summary(id, d))
                .collect();
            Ok(Execution::read(json!({ "documents": docs })))
        }
        "search_documents" => {
            let query = arg(args, "query")?.to_lowercase();
            let limit = match args.get("limit") {
                None => usize::MAX,
                Some(v) => v.as_u64().ok_or(ExecError::BadArgument("limit"))? as usize,
            };
            let hits: Vec<Value> = store
                .documents
                .iter()
                .filter(|(_, d)| d.state != DocState::Deleted)
                .filter(|(_, d)| {
                    d.title.to_lowercase().contains(&query) || d.content.to_lowercase().contains(&query)
                })
                .take(limit)
                .map(|(id, d)| summary(id, d))
                .collect();
            Ok(Execution::read(json!({ "documents": hits })))
        }
        "get_user_profile" => {
            let id = arg(args, "user_id")?;
            let u = store
                .user(id)
                .ok_or_else(|| ExecError::UnknownUser(id.to_string()))?;
            Ok(Execution::read(json!({
                "user_id": id,
                "name": u.name,
                "department": u.department,
                "roles": u.roles,
            })))
        }
        "create_document" => {
            let title = arg(args, "title")?.to_string();
            let content = match args.get("content") {
                None => String::new(),
                Some(v) => v.as_str().ok_or(ExecError::BadArgument("content"))?.to_string(),
            };
            let id = next_document_id(store);
            let d = Document {
                title,
                department: caller.department.clone(),
                owner_id: caller.subject_id.clone(),
                state: DocState::Created,
                content,
                permissions: Default::default(),
                pending_share: None,
            };
            let result = summary(&id, &d);
            store.documents.insert(id.clone(), d);
            Ok(Execution::write(result, format!("created {id}")))
        }
        "update_document_content" => {
            let id = arg(args, "document_id")?;
            let content = arg(args, "content")?.to_string();
            let d = doc_mut(store, id)?;
            d.content = content;
            Ok(Execution::write(summary(id, d), format!("updated content of {id}")))
        }
        "initiate_share" => {
            let id = arg(args, "document_id")?;
            let target = arg(args, "target_user_id")?;
            let level = permission(args)?;
            if store.user(target).is_none() {
                return Err(ExecError::UnknownUser(target.to_string()));
            }
            let d = doc_mut(store, id)?;
            if d.state == DocState::PendingShare {
                return Err(ExecError::InvalidState {
                    id: id.to_string(),
                    state: d.state,
                    action: "initiating another share",
                });
            }
            d.state = DocState::PendingShare;
            d.pending_share = Some(PendingShare {
                target_user_id: target.to_string(),
                permission_level: level,
            });
            Ok(Execution::write(
                summary(id, d),
                format!("offered {level:?} access on {id} to {target}").to_lowercase(),
            ))
        }
        "accept_sharing_request" => {
            let id = arg(args, "document_id")?;
            let d = doc_mut(store, id)?;
            let share = match &d.pending_share {
                Some(p) if d.state == DocState::PendingShare && p.target_user_id == caller.subject_id => p.clone(),
                _ => return Err(ExecError::NoPendingShare(id.to_string())),
            };
            d.permissions
                .insert(share.target_user_id.clone(), share.permission_level);
            d.pending_share = None;
            d.state = DocState::Shared;
            Ok(Execution::write(
                summary(id, d),
                format!("{} accepted share of {id}", share.target_user_id),
            ))
        }
        "revoke_document_access" => {
            let id = arg(args, "document_id")?;
            let target = arg(args, "target_user_id")?;
            let level = arg(args, "permission_level")?;
            if !matches!(level, "read" | "write" | "all") {
                return Err(ExecError::BadArgument("permission_level"));
            }
            let d = doc_mut(store, id)?;
            let before = d.permissions.get(target).copied();
            let after = match (level, before) {
                // Write access implies read, so losing read loses everything.
                ("write", Some(Permission::Write)) => Some(Permission::Read),
                ("write", other) => other,
                _ => None,
            };
            match after {
                Some(p) => d.permissions.insert(target.to_string(), p),
                None => d.permissions.remove(target),
            };
            if d.pending_share.as_ref().is_some_and(|p| p.target_user_id == target) {
                d.pending_share = None;
            }
            if d.permissions.is_empty() && d.pending_share.is_none() && d.state != DocState::Created {
                d.state = DocState::Revoked;
            }
            let change = if before == after {
                format!("no {level} access of {target} on {id} to revoke")
            } else {
                format!("revoked {level} access of {target} on {id}")
            };
            Ok(Execution::write(summary(id, d), change))
        }
        "delete_document" => {
            let id = arg(args, "document_id")?;
            let d = doc_mut(store, id)?;
            d.state = DocState::Deleted;
            d.permissions.clear();
            d.pending_share = None;
            Ok(Execution::write(json!({ "document_id": id, "state": d.state }), format!("deleted {id}")))
        }
        other => Err(ExecError::Unimplemented(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn args(v: Value) -> Args {
        v.as_object().unwrap().clone()
    }

    fn who(store: &AuthoritativeStore, id: &str) -> AgentIdentity {
        AgentIdentity::from_store(store, id).unwrap()
    }

    #[test]
    fn every_registered_tool_is_implemented() {
        let reg = fixtures::registry().unwrap();
        let mut store = fixtures::store().unwrap();
        let alice = who(&store, "U-1");
        for name in reg.names() {
            let r = execute(&mut store.clone(), &alice, name, &Args::new());
            assert!(!matches!(r, Err(ExecError::Unimplemented(_))), "{name}");
        }
        assert_eq!(
            execute(&mut store, &alice, "launch_rockets", &Args::new()),
            Err(ExecError::Unimplemented("launch_rockets".into()))
        );
    }

    #[test]
    fn share_lifecycle() {
        let mut store = fixtures::store().unwrap();
        let alice = who(&store, "U-1");
        let carol_target = json!({"document_id": "D-1001", "target_user_id": "U-4", "permission_level": "read"});
        execute(&mut store, &alice, "initiate_share", &args(carol_target)).unwrap();
        assert_eq!(store.document("D-1001").unwrap().state, DocState::PendingShare);

        let bob = who(&store, "U-2");
        let accept = args(json!({"document_id": "D-1001"}));
        assert_eq!(
            execute(&mut store, &bob, "accept_sharing_request", &accept),
            Err(ExecError::NoPendingShare("D-1001".into()))
        );
        let risk = who(&store, "U-4");
        execute(&mut store, &risk, "accept_sharing_request", &accept).unwrap();
        let d = store.document("D-1001").unwrap();
        assert_eq!(d.state, DocState::Shared);
        assert_eq!(d.permissions.get("U-4"), Some(&Permission::Read));

        // A second accept finds nothing to accept.
        assert!(execute(&mut store, &risk, "accept_sharing_request", &accept).is_err());

        let revoke = args(json!({"document_id": "D-1001", "target_user_id": "U-4", "permission_level": "all"}));
        execute(&mut store, &alice, "revoke_document_access", &revoke).unwrap();
        let d = store.document("D-1001").unwrap();
        assert!(d.permissions.is_empty());
        assert_eq!(d.state, DocState::Revoked);
    }

    #[test]
    fn write_revoke_downgrades() {
        let mut store = fixtures::store().unwrap();
        let alice = who(&store, "U-1");
        let a = args(json!({"document_id": "D-8821", "target_user_id": "U-2", "permission_level": "write"}));
        let e = execute(&mut store, &alice, "revoke_document_access", &a).unwrap();
        assert_eq!(store.document("D-8821").unwrap().permissions.get("U-2"), Some(&Permission::Read));
        assert!(e.mutation.unwrap().starts_with("revoked"));
    }

    #[test]
    fn create_assigns_fresh_id_in_caller_department() {
        let mut store = fixtures::store().unwrap();
        let bob = who(&store, "U-2");
        let e = execute(&mut store, &bob, "create_document", &args(json!({"title": "Plan"}))).unwrap();
        assert_eq!(e.result["document_id"], "D-8822");
        let d = store.document("D-8822").unwrap();
        assert_eq!((d.department.as_str(), d.owner_id.as_str()), ("FIN", "U-2"));
    }

    #[test]
    fn failures_leave_store_untouched() {
        let store0 = fixtures::store().unwrap();
        let mut store = store0.clone();
        let alice = who(&store, "U-1");
        let share_to_ghost =
            args(json!({"document_id": "D-8821", "target_user_id": "U-404", "permission_level": "read"}));
        assert!(execute(&mut store, &alice, "initiate_share", &share_to_ghost).is_err());
        let share_pending =
            args(json!({"document_id": "D-2002", "target_user_id": "U-2", "permission_level": "read"}));
        assert!(execute(&mut store, &alice, "initiate_share", &share_pending).is_err());
        assert!(execute(&mut store, &alice, "get_document", &args(json!({"document_id": "D-0"}))).is_err());
        assert_eq!(store, store0);
    }

    #[test]
    fn deleted_documents_disappear() {
        let mut store = fixtures::store().unwrap();
        let alice = who(&store, "U-1");
        let a = args(json!({"document_id": "D-8821"}));
        execute(&mut store, &alice, "delete_document", &a).unwrap();
        assert!(execute(&mut store, &alice, "get_document", &a).is_err());
        let listed = execute(&mut store, &alice, "list_documents", &Args::new()).unwrap();
        assert!(!listed.result.to_string().contains("D-8821"));
    }

    #[test]
    fn reads_do_not_mutate() {
        let store0 = fixtures::store().unwrap();
        let mut store = store0.clone();
        let bob = who(&store, "U-2");
        for (tool, a) in [
            ("get_document", json!({"document_id": "D-8821"})),
            ("get_document_metadata", json!({"document_id": "D-8821"})),
            ("list_document_permissions", json!({"document_id": "D-8821"})),
            ("list_documents", json!({"state": "shared"})),
            ("search_documents", json!({"query": "q", "limit": 2})),
            ("get_user_profile", json!({"user_id": "U-3"})),
        ] {
            let e = execute(&mut store, &bob, tool, &args(a)).unwrap();
            assert!(e.mutation.is_none(), "{tool}");
        }
        assert_eq!(store, store0);
    }
}
