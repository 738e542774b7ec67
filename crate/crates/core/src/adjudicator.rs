//! Decision authority over revision proposals.
//!
//! [`RuleBasedAdjudicator`] maps the proposal's trigger condition to a
//! verdict deterministically. [`ExternalAdjudicator`] forwards the proposal
//! to an out-of-process judge and degrades to a fail-safe verdict whenever
//! the judge cannot be reached or answers nonsense.

use crate::pipeline::{AdjudicationDecision, RevisionProposal, TriggerCondition, Verdict};
use crate::schema::{KnowledgeBase, KnowledgeRule, Polarity, Proposition};
use crate::store::{MemoryItem, SourceKind};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationContext {
    pub proposal: RevisionProposal,
    pub old_item: MemoryItem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_text: Option<String>,
    pub schema_version: String,
}

/// Raised only by adjudicators that cannot degrade on their own (test
/// doubles, custom judges). Aborts the ingest of the current session.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("adjudicator fault: {0}")]
pub struct AdjudicatorFault(pub String);

pub trait Adjudicator: Send + Sync {
    fn decide(&self, context: &AdjudicationContext) -> Result<AdjudicationDecision, AdjudicatorFault>;

    /// Order-preserving; element-wise equal to mapping [`Adjudicator::decide`].
    fn decide_batch(&self, contexts: &[AdjudicationContext]) -> Vec<Result<AdjudicationDecision, AdjudicatorFault>> {
        contexts.iter().map(|c| self.decide(c)).collect()
    }
}

/// Verdicts for the trigger conditions whose outcome is a policy choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMapping {
    /// Dependency rule fired and names no replacement value.
    pub dependency: Verdict,
    /// Incompatibility rule fired on a MULTI slot.
    pub incompatible: Verdict,
    /// SINGLE slot where several distinct new values compete.
    pub ambiguous_single: Verdict,
    pub explicit_negation: Verdict,
}

impl Default for VerdictMapping {
    fn default() -> Self {
        Self {
            dependency: Verdict::Unknown,
            incompatible: Verdict::Stale,
            ambiguous_single: Verdict::Unknown,
            explicit_negation: Verdict::Unknown,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleBasedAdjudicator {
    knowledge: Arc<KnowledgeBase>,
    mapping: VerdictMapping,
}

impl RuleBasedAdjudicator {
    pub fn new(knowledge: Arc<KnowledgeBase>) -> Self {
        Self::with_mapping(knowledge, VerdictMapping::default())
    }

    /// # Panics
    /// If any mapped verdict is REPLACE, which needs a concrete replacement.
    pub fn with_mapping(knowledge: Arc<KnowledgeBase>, mapping: VerdictMapping) -> Self {
        assert!(
            ![mapping.dependency, mapping.incompatible, mapping.ambiguous_single, mapping.explicit_negation]
                .contains(&Verdict::Replace),
            "REPLACE cannot be a blanket mapping"
        );
        Self { knowledge, mapping }
    }

    pub fn mapping(&self) -> VerdictMapping {
        self.mapping
    }

    fn decide_pure(&self, ctx: &AdjudicationContext) -> AdjudicationDecision {
        let old = &ctx.old_item.proposition;
        let p = &ctx.proposal;
        match &p.condition {
            TriggerCondition::None => AdjudicationDecision::keep("no condition rules the item out"),
            TriggerCondition::SingleSlotConflict => {
                let values: BTreeSet<&str> = p
                    .supporting_updates
                    .iter()
                    .map(|u| &u.proposition)
                    .filter(|u| u.attribute == old.attribute && u.polarity == Polarity::Assert && u.value != old.value)
                    .map(|u| u.value.as_str())
                    .collect();
                if values.len() == 1 {
                    let value = values.into_iter().next().expect("one value");
                    AdjudicationDecision::replace(
                        Proposition::assert(old.attribute.clone(), value),
                        format!("`{value}` supersedes `{}` in SINGLE slot", old.value),
                    )
                } else {
                    AdjudicationDecision::plain(
                        self.mapping.ambiguous_single,
                        format!("{} competing values supersede `{}`", values.len(), old.value),
                    )
                }
            }
            TriggerCondition::IncompatibleRule { rule_id } => AdjudicationDecision::plain(
                self.mapping.incompatible,
                format!("`{}` incompatible with new value under `{rule_id}`", old.value),
            ),
            TriggerCondition::DependencyRule { rule_id } => match self.knowledge.rule(rule_id) {
                Some(KnowledgeRule::Dependency {
                    replacement: Some(value),
                    ..
                }) => AdjudicationDecision::replace(
                    Proposition::assert(old.attribute.clone(), value),
                    format!("`{rule_id}` determines `{value}` in place of `{}`", old.value),
                ),
                _ => AdjudicationDecision::plain(
                    self.mapping.dependency,
                    format!("`{rule_id}` rules out `{}`; current value undetermined", old.value),
                ),
            },
            TriggerCondition::ExplicitNegation => AdjudicationDecision::plain(
                self.mapping.explicit_negation,
                format!("`{}` explicitly negated; current value undetermined", old.value),
            ),
        }
    }
}

impl Adjudicator for RuleBasedAdjudicator {
    fn decide(&self, context: &AdjudicationContext) -> Result<AdjudicationDecision, AdjudicatorFault> {
        Ok(self.decide_pure(context))
    }
}

// ---------------------------------------------------------------------------
// External judge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("transport io: {0}")]
    Io(String),
}

/// A request/response byte channel.
pub trait Transport: Send + Sync {
    fn round_trip(&self, request: &[u8], timeout: Duration) -> Result<Vec<u8>, TransportError>;
}

/// Newline-delimited messages over one TCP connection per request.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    address: String,
}

impl TcpTransport {
    /// Accepts `tcp://host:port` or bare `host:port`.
    pub fn from_endpoint(endpoint: &str) -> Result<Self, TransportError> {
        let address = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
        if address.is_empty() || !address.contains(':') {
            return Err(TransportError::Io(format!("bad endpoint `{endpoint}`")));
        }
        Ok(Self {
            address: address.to_string(),
        })
    }
}

fn io_error(e: std::io::Error) -> TransportError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => TransportError::Timeout,
        _ => TransportError::Io(e.to_string()),
    }
}

impl Transport for TcpTransport {
    fn round_trip(&self, request: &[u8], timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let addr = self
            .address
            .to_socket_addrs()
            .map_err(io_error)?
            .next()
            .ok_or_else(|| TransportError::Io(format!("`{}` resolves to nothing", self.address)))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(io_error)?;
        stream.set_read_timeout(Some(timeout)).map_err(io_error)?;
        stream.set_write_timeout(Some(timeout)).map_err(io_error)?;
        stream.write_all(request).map_err(io_error)?;
        stream.write_all(b"\n").map_err(io_error)?;
        stream.flush().map_err(io_error)?;
        let mut line = Vec::new();
        BufReader::new(stream).read_until(b'\n', &mut line).map_err(io_error)?;
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        if line.is_empty() {
            return Err(TransportError::Io("empty response".into()));
        }
        Ok(line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub timeout: Duration,
    pub max_retries: u32,
    pub fallback: Verdict,
    pub max_in_flight: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            max_retries: 2,
            fallback: Verdict::Unknown,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdjudicatorConfigError {
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("fallback verdict cannot be REPLACE")]
    ReplaceFallback,
    #[error("max_in_flight must be positive")]
    ZeroConcurrency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireItem {
    pub slot: String,
    pub value: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireUpdate {
    pub slot: String,
    pub value: String,
    pub timestamp: DateTime<Utc>,
    pub origin: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub schema_version: String,
    pub old_item: WireItem,
    pub updates: Vec<WireUpdate>,
    pub session_text: Option<String>,
    pub rationale_hint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireReplacement {
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<WireReplacement>,
    #[serde(default)]
    pub rationale: String,
}

impl WireRequest {
    pub fn from_context(ctx: &AdjudicationContext) -> Self {
        let updates = ctx
            .proposal
            .supporting_updates
            .iter()
            .map(|u| WireUpdate {
                slot: u.proposition.attribute.to_string(),
                value: match u.proposition.polarity {
                    Polarity::Assert => u.proposition.value.clone(),
                    Polarity::Deny => format!("not:{}", u.proposition.value),
                },
                timestamp: u.timestamp,
                origin: u.origin,
            })
            .collect();
        Self {
            schema_version: ctx.schema_version.clone(),
            old_item: WireItem {
                slot: ctx.old_item.slot().to_string(),
                value: ctx.old_item.proposition.value.clone(),
                timestamp: ctx.old_item.timestamp(),
            },
            updates,
            session_text: ctx.session_text.clone(),
            rationale_hint: ctx.proposal.rationale.clone(),
        }
    }
}

/// Parses a judge response into a decision about `old`.
pub fn parse_response(bytes: &[u8], old: &MemoryItem) -> Result<AdjudicationDecision, String> {
    let response: WireResponse = serde_json::from_slice(bytes).map_err(|e| format!("malformed response: {e}"))?;
    let verdict = Verdict::parse(&response.verdict).ok_or_else(|| format!("unknown verdict `{}`", response.verdict))?;
    match verdict {
        Verdict::Replace => {
            let value = response
                .replacement
                .ok_or_else(|| "REPLACE without replacement".to_string())?
                .value;
            let proposition = Proposition::new(old.slot().clone(), &value, Polarity::Assert)
                .map_err(|e| format!("bad replacement: {e}"))?;
            Ok(AdjudicationDecision::replace(proposition, response.rationale))
        }
        v => Ok(AdjudicationDecision::plain(v, response.rationale)),
    }
}

pub struct ExternalAdjudicator {
    transport: Box<dyn Transport>,
    config: ExternalConfig,
}

impl std::fmt::Debug for ExternalAdjudicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalAdjudicator").field("config", &self.config).finish()
    }
}

impl ExternalAdjudicator {
    pub fn new(transport: Box<dyn Transport>, config: ExternalConfig) -> Result<Self, AdjudicatorConfigError> {
        if config.timeout.is_zero() {
            return Err(AdjudicatorConfigError::ZeroTimeout);
        }
        if config.fallback == Verdict::Replace {
            return Err(AdjudicatorConfigError::ReplaceFallback);
        }
        if config.max_in_flight == 0 {
            return Err(AdjudicatorConfigError::ZeroConcurrency);
        }
        Ok(Self { transport, config })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    fn decide_total(&self, ctx: &AdjudicationContext) -> AdjudicationDecision {
        let request = match serde_json::to_vec(&WireRequest::from_context(ctx)) {
            Ok(r) => r,
            Err(e) => return self.fallback(format!("request encoding failed: {e}")),
        };
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.transport.round_trip(&request, self.config.timeout) {
                Ok(bytes) => match parse_response(&bytes, &ctx.old_item) {
                    Ok(decision) => return decision,
                    Err(e) => return self.fallback(format!("parse failure: {e}")),
                },
                Err(e) => last = e.to_string(),
            }
        }
        self.fallback(format!("judge unavailable after {attempts} attempt(s): {last}"))
    }

    fn fallback(&self, why: String) -> AdjudicationDecision {
        AdjudicationDecision::plain(self.config.fallback, format!("fallback: {why}"))
    }
}

impl Adjudicator for ExternalAdjudicator {
    fn decide(&self, context: &AdjudicationContext) -> Result<AdjudicationDecision, AdjudicatorFault> {
        Ok(self.decide_total(context))
    }

    fn decide_batch(&self, contexts: &[AdjudicationContext]) -> Vec<Result<AdjudicationDecision, AdjudicatorFault>> {
        let mut out = Vec::with_capacity(contexts.len());
        for chunk in contexts.chunks(self.config.max_in_flight) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|ctx| scope.spawn(move || self.decide_total(ctx)))
                    .collect();
                for h in handles {
                    out.push(Ok(h.join().unwrap_or_else(|_| self.fallback("judge worker panicked".into()))));
                }
            });
        }
        out
    }
}
