//! Human approval gate for CRITICAL tool calls.
//!
//! A proposed call is frozen into an [`EvidencePackage`] whose SHA-256 digest
//! covers the tool name, canonical arguments and reasoning trace. An operator
//! approves or denies by signing the raw 32-byte digest with Ed25519. Approval
//! yields a single-use [`ResumeToken`] that is only redeemable against a call
//! whose recomputed digest still matches.
//!
//! The challenge/response JSON is this crate's own minimal format; it does not
//! follow any external approval protocol.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use ed25519_dalek::{Signature, VerifyingKey};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonical_json, hex32, FramedWriter};
use crate::clock::Clock;

pub const DEFAULT_CHALLENGE_TTL_SECS: i64 = 15 * 60;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HitlError {
    #[error("unknown challenge '{0}'")]
    UnknownChallenge(String),
    #[error("challenge expired")]
    Expired,
    #[error("signature does not verify against the challenge digest")]
    BadSignature,
    #[error("operator '{0}' has no registered key")]
    UnknownOperator(String),
    #[error("challenge already {0}")]
    AlreadyTerminal(ChallengeStatus),
    #[error("evidence digest does not match its contents")]
    DigestMismatch,
    #[error("resume token is unknown or already used")]
    InvalidToken,
    #[error("invalid operator key for '{operator}': {reason}")]
    InvalidKey { operator: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePackage {
    pub tool_name: String,
    pub args: Value,
    pub reasoning_trace: String,
    #[serde(with = "hex32")]
    pub digest: [u8; 32],
}

impl EvidencePackage {
    pub fn new(tool_name: impl Into<String>, args: Value, reasoning_trace: impl Into<String>) -> Self {
        let tool_name = tool_name.into();
        let reasoning_trace = reasoning_trace.into();
        let digest = Self::compute_digest(&tool_name, &args, &reasoning_trace);
        Self {
            tool_name,
            args,
            reasoning_trace,
            digest,
        }
    }

    /// Accepts externally supplied evidence only if its digest is consistent.
    pub fn from_parts(
        tool_name: String,
        args: Value,
        reasoning_trace: String,
        digest: [u8; 32],
    ) -> Result<Self, HitlError> {
        let e = Self {
            tool_name,
            args,
            reasoning_trace,
            digest,
        };
        if e.is_consistent() {
            Ok(e)
        } else {
            Err(HitlError::DigestMismatch)
        }
    }

    pub fn compute_digest(tool_name: &str, args: &Value, reasoning_trace: &str) -> [u8; 32] {
        let mut w = FramedWriter::new();
        w.str(tool_name).str(&canonical_json(args)).str(reasoning_trace);
        w.sha256()
    }

    pub fn is_consistent(&self) -> bool {
        Self::compute_digest(&self.tool_name, &self.args, &self.reasoning_trace) == self.digest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChallengeStatus {
    Pending,
    Approved,
    Denied,
    Expired,
}

impl std::fmt::Display for ChallengeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChallengeStatus::Pending => "PENDING",
            ChallengeStatus::Approved => "APPROVED",
            ChallengeStatus::Denied => "DENIED",
            ChallengeStatus::Expired => "EXPIRED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalChallenge {
    pub challenge_id: String,
    pub evidence: EvidencePackage,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub status: ChallengeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
}

/// Proof that an operator approved a specific digest. Redeemable once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub token_id: String,
    pub challenge_id: String,
    #[serde(with = "hex32")]
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, Default)]
pub struct OperatorKeys {
    keys: BTreeMap<String, VerifyingKey>,
}

impl OperatorKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, operator_id: impl Into<String>, key: VerifyingKey) {
        self.keys.insert(operator_id.into(), key);
    }

    /// Registers a 32-byte Ed25519 verification key given as hex.
    pub fn insert_hex(&mut self, operator_id: &str, key_hex: &str) -> Result<(), HitlError> {
        let invalid = |reason: String| HitlError::InvalidKey {
            operator: operator_id.to_string(),
            reason,
        };
        let bytes: [u8; 32] = hex::decode(key_hex.trim())
            .map_err(|e| invalid(e.to_string()))?
            .try_into()
            .map_err(|_| invalid("expected 32 bytes".into()))?;
        let key = VerifyingKey::from_bytes(&bytes).map_err(|e| invalid(e.to_string()))?;
        self.insert(operator_id, key);
        Ok(())
    }

    pub fn get(&self, operator_id: &str) -> Option<&VerifyingKey> {
        self.keys.get(operator_id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Challenge store. Reads share a lock; every status change happens under the
/// write lock after re-checking `PENDING`, so racing decisions resolve exactly
/// once.
pub struct ApprovalGate {
    challenges: RwLock<BTreeMap<String, ApprovalChallenge>>,
    tokens: Mutex<BTreeMap<String, ResumeToken>>,
    keys: OperatorKeys,
    ttl: Duration,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for ApprovalGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApprovalGate")
            .field("operators", &self.keys.len())
            .field("ttl", &self.ttl)
            .finish_non_exhaustive()
    }
}

impl ApprovalGate {
    pub fn new(keys: OperatorKeys, ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            challenges: RwLock::new(BTreeMap::new()),
            tokens: Mutex::new(BTreeMap::new()),
            keys,
            ttl,
            clock,
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn operators(&self) -> &OperatorKeys {
        &self.keys
    }

    pub fn create_challenge(&self, evidence: EvidencePackage) -> Result<ApprovalChallenge, HitlError> {
        if !evidence.is_consistent() {
            return Err(HitlError::DigestMismatch);
        }
        let now = self.clock.now();
        let challenge = ApprovalChallenge {
            challenge_id: uuid::Uuid::new_v4().to_string(),
            evidence,
            created_at: now,
            expires_at: now + self.ttl,
            status: ChallengeStatus::Pending,
            decided_by: None,
        };
        self.challenges
            .write()
            .expect("challenge lock poisoned")
            .insert(challenge.challenge_id.clone(), challenge.clone());
        Ok(challenge)
    }

    pub fn get(&self, challenge_id: &str) -> Option<ApprovalChallenge> {
        self.challenges
            .read()
            .expect("challenge lock poisoned")
            .get(challenge_id)
            .cloned()
    }

    pub fn approve(&self, challenge_id: &str, operator_id: &str, signature: &[u8]) -> Result<ResumeToken, HitlError> {
        let challenge = self.decide(challenge_id, operator_id, signature, ChallengeStatus::Approved)?;
        let token = ResumeToken {
            token_id: uuid::Uuid::new_v4().to_string(),
            challenge_id: challenge.challenge_id,
            digest: challenge.evidence.digest,
        };
        self.tokens
            .lock()
            .expect("token lock poisoned")
            .insert(token.token_id.clone(), token.clone());
        Ok(token)
    }

    pub fn deny(&self, challenge_id: &str, operator_id: &str, signature: &[u8]) -> Result<ApprovalChallenge, HitlError> {
        self.decide(challenge_id, operator_id, signature, ChallengeStatus::Denied)
    }

    fn decide(
        &self,
        challenge_id: &str,
        operator_id: &str,
        signature: &[u8],
        outcome: ChallengeStatus,
    ) -> Result<ApprovalChallenge, HitlError> {
        let now = self.clock.now();
        let mut guard = self.challenges.write().expect("challenge lock poisoned");
        let c = guard
            .get_mut(challenge_id)
            .ok_or_else(|| HitlError::UnknownChallenge(challenge_id.to_string()))?;
        if c.status != ChallengeStatus::Pending {
            return Err(HitlError::AlreadyTerminal(c.status));
        }
        if now >= c.expires_at {
            c.status = ChallengeStatus::Expired;
            return Err(HitlError::Expired);
        }
        let key = self
            .keys
            .get(operator_id)
            .ok_or_else(|| HitlError::UnknownOperator(operator_id.to_string()))?;
        let sig = Signature::from_slice(signature).map_err(|_| HitlError::BadSignature)?;
        key.verify_strict(&c.evidence.digest, &sig)
            .map_err(|_| HitlError::BadSignature)?;
        c.status = outcome;
        c.decided_by = Some(operator_id.to_string());
        Ok(c.clone())
    }

    /// Pending challenges, oldest first. Challenges past their expiry are
    /// flipped to `EXPIRED` and left out.
    pub fn list_pending(&self) -> Vec<ApprovalChallenge> {
        self.expire_stale();
        let mut out: Vec<ApprovalChallenge> = self
            .challenges
            .read()
            .expect("challenge lock poisoned")
            .values()
            .filter(|c| c.status == ChallengeStatus::Pending)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.challenge_id.cmp(&b.challenge_id)));
        out
    }

    /// Expires stale pending challenges and returns the ids that changed.
    pub fn expire_stale(&self) -> Vec<String> {
        let now = self.clock.now();
        let mut guard = self.challenges.write().expect("challenge lock poisoned");
        let mut expired = Vec::new();
        for c in guard.values_mut() {
            if c.status == ChallengeStatus::Pending && now >= c.expires_at {
                c.status = ChallengeStatus::Expired;
                expired.push(c.challenge_id.clone());
            }
        }
        expired
    }

    /// Consumes the token. Fails, and still burns the token, when `digest`
    /// (recomputed from the call about to run) differs from the approved one.
    pub fn redeem(&self, token: &ResumeToken, digest: &[u8; 32]) -> Result<(), HitlError> {
        let stored = self
            .tokens
            .lock()
            .expect("token lock poisoned")
            .remove(&token.token_id)
            .ok_or(HitlError::InvalidToken)?;
        if stored != *token {
            return Err(HitlError::InvalidToken);
        }
        if stored.digest != *digest {
            return Err(HitlError::DigestMismatch);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::TimeZone;
    use ed25519_dalek::{Signer, SigningKey};
    use serde_json::json;

    struct Fixture {
        gate: ApprovalGate,
        clock: Arc<ManualClock>,
        key: SigningKey,
    }

    fn fixture() -> Fixture {
        let key = SigningKey::from_bytes(&[7u8; 32]);
        let mut keys = OperatorKeys::new();
        keys.insert_hex("op-1", &hex::encode(key.verifying_key().to_bytes()))
            .unwrap();
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2026, 1, 1, 9, 0, 0).unwrap()));
        let gate = ApprovalGate::new(keys, Duration::seconds(DEFAULT_CHALLENGE_TTL_SECS), clock.clone());
        Fixture { gate, clock, key }
    }

    fn evidence() -> EvidencePackage {
        EvidencePackage::new(
            "revoke_document_access",
            json!({"document_id": "D-8821", "target_user_id": "U-2", "permission_level": "write"}),
            "revoke write access",
        )
    }

    #[test]
    fn digest_binds_every_field() {
        let e = evidence();
        assert!(e.is_consistent());
        let mut t = e.clone();
        t.tool_name = "delete_document".into();
        assert!(!t.is_consistent());
        let mut t = e.clone();
        t.args["permission_level"] = json!("all");
        assert!(!t.is_consistent());
        let mut t = e.clone();
        t.reasoning_trace.push('!');
        assert!(!t.is_consistent());
        // Key order in the arguments is irrelevant.
        let reordered = EvidencePackage::new(
            "revoke_document_access",
            json!({"permission_level": "write", "target_user_id": "U-2", "document_id": "D-8821"}),
            "revoke write access",
        );
        assert_eq!(reordered.digest, e.digest);
        // Length framing keeps field boundaries apart.
        assert_ne!(
            EvidencePackage::compute_digest("ab", &json!({}), "c"),
            EvidencePackage::compute_digest("a", &json!({}), "bc")
        );
    }

    #[test]
    fn inconsistent_evidence_is_rejected() {
        let e = evidence();
        assert_eq!(
            EvidencePackage::from_parts(e.tool_name.clone(), json!({}), e.reasoning_trace.clone(), e.digest),
            Err(HitlError::DigestMismatch)
        );
        let f = fixture();
        let mut bad = evidence();
        bad.reasoning_trace = "edited".into();
        assert_eq!(f.gate.create_challenge(bad), Err(HitlError::DigestMismatch));
    }

    #[test]
    fn approve_with_valid_signature() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        assert_eq!(c.status, ChallengeStatus::Pending);
        assert_eq!(c.expires_at - c.created_at, Duration::minutes(15));
        let sig = f.key.sign(&c.evidence.digest);
        let token = f.gate.approve(&c.challenge_id, "op-1", &sig.to_bytes()).unwrap();
        assert_eq!(token.digest, c.evidence.digest);
        assert_eq!(f.gate.get(&c.challenge_id).unwrap().status, ChallengeStatus::Approved);
        f.gate.redeem(&token, &c.evidence.digest).unwrap();
        assert_eq!(f.gate.redeem(&token, &c.evidence.digest), Err(HitlError::InvalidToken));
    }

    #[test]
    fn wrong_digest_signature_keeps_pending() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&[0u8; 32]);
        assert_eq!(
            f.gate.approve(&c.challenge_id, "op-1", &sig.to_bytes()),
            Err(HitlError::BadSignature)
        );
        assert_eq!(
            f.gate.approve(&c.challenge_id, "op-1", b"short"),
            Err(HitlError::BadSignature)
        );
        assert_eq!(f.gate.get(&c.challenge_id).unwrap().status, ChallengeStatus::Pending);
    }

    #[test]
    fn unknown_operator_and_challenge() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&c.evidence.digest).to_bytes();
        assert_eq!(
            f.gate.approve(&c.challenge_id, "op-9", &sig),
            Err(HitlError::UnknownOperator("op-9".into()))
        );
        assert_eq!(
            f.gate.deny("nope", "op-1", &sig),
            Err(HitlError::UnknownChallenge("nope".into()))
        );
    }

    #[test]
    fn expiry() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        f.clock.advance(Duration::minutes(15));
        let sig = f.key.sign(&c.evidence.digest).to_bytes();
        assert_eq!(f.gate.approve(&c.challenge_id, "op-1", &sig), Err(HitlError::Expired));
        assert_eq!(f.gate.get(&c.challenge_id).unwrap().status, ChallengeStatus::Expired);
        assert_eq!(
            f.gate.approve(&c.challenge_id, "op-1", &sig),
            Err(HitlError::AlreadyTerminal(ChallengeStatus::Expired))
        );
    }

    #[test]
    fn deny_is_terminal() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&c.evidence.digest).to_bytes();
        let denied = f.gate.deny(&c.challenge_id, "op-1", &sig).unwrap();
        assert_eq!(denied.status, ChallengeStatus::Denied);
        assert_eq!(denied.decided_by.as_deref(), Some("op-1"));
        assert_eq!(
            f.gate.approve(&c.challenge_id, "op-1", &sig),
            Err(HitlError::AlreadyTerminal(ChallengeStatus::Denied))
        );

        let c2 = f.gate.create_challenge(evidence()).unwrap();
        let sig2 = f.key.sign(&c2.evidence.digest).to_bytes();
        f.gate.approve(&c2.challenge_id, "op-1", &sig2).unwrap();
        assert_eq!(
            f.gate.deny(&c2.challenge_id, "op-1", &sig2),
            Err(HitlError::AlreadyTerminal(ChallengeStatus::Approved))
        );
    }

    #[test]
    fn identical_evidence_gets_distinct_ids() {
        let f = fixture();
        let a = f.gate.create_challenge(evidence()).unwrap();
        let b = f.gate.create_challenge(evidence()).unwrap();
        assert_ne!(a.challenge_id, b.challenge_id);
    }

    #[test]
    fn pending_listing() {
        let f = fixture();
        assert!(f.gate.list_pending().is_empty());
        let a = f.gate.create_challenge(evidence()).unwrap();
        let b = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&b.evidence.digest).to_bytes();
        f.gate.approve(&b.challenge_id, "op-1", &sig).unwrap();
        let pending = f.gate.list_pending();
        assert_eq!(pending.len(), 1);
        assert_eq!(pending[0].challenge_id, a.challenge_id);
        f.clock.advance(Duration::minutes(16));
        assert!(f.gate.list_pending().is_empty());
        assert_eq!(f.gate.get(&a.challenge_id).unwrap().status, ChallengeStatus::Expired);
    }

    #[test]
    fn token_rejects_altered_call() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&c.evidence.digest).to_bytes();
        let token = f.gate.approve(&c.challenge_id, "op-1", &sig).unwrap();
        let altered = EvidencePackage::new(
            "revoke_document_access",
            json!({"document_id": "D-8821", "target_user_id": "U-3", "permission_level": "write"}),
            "revoke write access",
        );
        assert_eq!(f.gate.redeem(&token, &altered.digest), Err(HitlError::DigestMismatch));
        assert_eq!(f.gate.redeem(&token, &c.evidence.digest), Err(HitlError::InvalidToken));
    }

    #[test]
    fn forged_token_is_rejected() {
        let f = fixture();
        let c = f.gate.create_challenge(evidence()).unwrap();
        let forged = ResumeToken {
            token_id: "made-up".into(),
            challenge_id: c.challenge_id,
            digest: c.evidence.digest,
        };
        assert_eq!(f.gate.redeem(&forged, &c.evidence.digest), Err(HitlError::InvalidToken));
    }

    #[test]
    fn racing_decisions_resolve_once() {
        let f = Arc::new(fixture());
        let c = f.gate.create_challenge(evidence()).unwrap();
        let sig = f.key.sign(&c.evidence.digest).to_bytes();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let f = f.clone();
                let id = c.challenge_id.clone();
                std::thread::spawn(move || {
                    if i % 2 == 0 {
                        f.gate.approve(&id, "op-1", &sig).is_ok()
                    } else {
                        f.gate.deny(&id, "op-1", &sig).is_ok()
                    }
                })
            })
            .collect();
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        assert_eq!(wins, 1);
    }
}
