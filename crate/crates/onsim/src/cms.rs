//! The cognitive management layer: context snapshots of the network,
//! policy evaluation producing triggers, application/user/device profiles,
//! and the knowledge base that caches decisions by quantized context so
//! repeated situations are answered without re-evaluating candidates.
//!
//! Coordination uses two logical control channels: a pilot broadcast from
//! the infrastructure (policies, allowed interfaces, current power phase)
//! and a peer-to-peer channel between terminals for context sharing and
//! network-formation negotiation. Both are modeled as lossless messages
//! delivered after a fixed control latency.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::NodeId;
use crate::kernel::SimTime;
use crate::radio::{InterfaceKind, PowerPhase};

/// Default latency of one control-channel message, seconds.
pub const DEFAULT_CONTROL_LATENCY_S: f64 = 0.010;
/// Accounting size of one abstracted control message, bytes.
pub const CONTROL_MSG_BYTES: u64 = 24;
/// Conventional one-way delay bound for conversational voice, seconds.
pub const VOIP_MAX_DELAY_S: f64 = 0.150;

#[derive(Debug, Error, PartialEq)]
pub enum CmsError {
    #[error("no profile registered for node {node} and app {app}")]
    MissingProfile { node: usize, app: String },
    #[error("no feasible control link from node {from} to node {to}")]
    ControlUnreachable { from: usize, to: usize },
}

/// Per-node view within a context snapshot.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub node: NodeId,
    /// Whether any infrastructure link (WLAN to the AP, or cellular) is
    /// currently feasible.
    pub in_coverage: bool,
    /// Rate of the best feasible infrastructure link, bps (0 when none).
    pub serving_rate_bps: f64,
    /// WLAN-feasible peers and the peer link rate.
    pub neighbors: Vec<(NodeId, f64)>,
    /// Application load sourced at this node, bps (0 when idle).
    pub offered_load_bps: f64,
    pub mobility_level_idx: u8,
}

/// Snapshot of traffic, radio and mobility conditions at one instant.
#[derive(Debug, Clone)]
pub struct ContextSnapshot {
    pub t: SimTime,
    pub phase: PowerPhase,
    /// Indexed by `NodeId`.
    pub nodes: Vec<NodeContext>,
}

impl ContextSnapshot {
    pub fn node(&self, id: NodeId) -> &NodeContext {
        &self.nodes[id.0]
    }

    /// Peer link graph implied by the snapshot's neighbor sets.
    pub fn peer_graph(&self) -> crate::routing::LinkGraph {
        let mut g = crate::routing::LinkGraph::new(self.nodes.len());
        for ctx in &self.nodes {
            for (peer, _) in &ctx.neighbors {
                g.add_link(ctx.node, *peer);
            }
        }
        g
    }
}

/// What a policy watches for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyRule {
    /// A traffic source has fallen out of infrastructure coverage.
    CoverageGap,
    /// A loaded node's serving rate fell below the threshold.
    PoorChannel { min_rate_bps: f64 },
}

/// An operator rule: a trigger predicate plus objective weights and
/// formation constraints.
#[derive(Debug, Clone)]
pub struct Policy {
    pub rule: PolicyRule,
    pub qos_weight: f64,
    pub power_weight: f64,
    pub max_hops: usize,
}

impl Policy {
    pub fn validate(&self) -> Result<(), String> {
        if self.qos_weight < 0.0 || self.power_weight < 0.0 {
            return Err("objective weights must be non-negative".into());
        }
        if self.qos_weight == 0.0 && self.power_weight == 0.0 {
            return Err("at least one objective weight must be positive".into());
        }
        if self.max_hops == 0 {
            return Err("max_hops must be at least 1".into());
        }
        Ok(())
    }
}

/// Why an opportunistic network should exist. The reserved kinds are
/// defined for completeness but never fire in the implemented scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TriggerKind {
    CoverageGap,
    PoorChannel,
    Congestion,
    CommonInterest,
    BackhaulLimit,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::CoverageGap => "coverage-gap",
            TriggerKind::PoorChannel => "poor-channel",
            TriggerKind::Congestion => "congestion",
            TriggerKind::CommonInterest => "common-interest",
            TriggerKind::BackhaulLimit => "backhaul-limit",
        }
    }
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fired policy naming the nodes it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub subjects: Vec<NodeId>,
    pub detected_at: SimTime,
}

/// Evaluates every policy against the snapshot, in policy-list order.
/// Healthy snapshots yield an empty list.
pub fn evaluate_policies(snapshot: &ContextSnapshot, policies: &[Policy]) -> Vec<Trigger> {
    let mut triggers = Vec::new();
    for policy in policies {
        let (kind, subjects): (TriggerKind, Vec<NodeId>) = match policy.rule {
            PolicyRule::CoverageGap => (
                TriggerKind::CoverageGap,
                snapshot
                    .nodes
                    .iter()
                    .filter(|n| n.offered_load_bps > 0.0 && !n.in_coverage)
                    .map(|n| n.node)
                    .collect(),
            ),
            PolicyRule::PoorChannel { min_rate_bps } => (
                TriggerKind::PoorChannel,
                snapshot
                    .nodes
                    .iter()
                    .filter(|n| {
                        n.offered_load_bps > 0.0
                            && n.in_coverage
                            && n.serving_rate_bps < min_rate_bps
                    })
                    .map(|n| n.node)
                    .collect(),
            ),
        };
        if !subjects.is_empty() {
            triggers.push(Trigger {
                kind,
                subjects,
                detected_at: snapshot.t,
            });
        }
    }
    triggers
}

/// Application requirements, keyed by flow kind.
#[derive(Debug, Clone, Copy)]
pub struct AppProfile {
    pub max_delay_s: f64,
    pub min_rate_bps: f64,
}

/// User preference and device capability record for one node.
#[derive(Debug, Clone)]
pub struct NodeProfile {
    pub willing_to_relay: bool,
    pub interfaces: Vec<InterfaceKind>,
}

/// Merged requirement record produced by profile matching.
#[derive(Debug, Clone, Copy)]
pub struct Requirements {
    pub max_delay_s: f64,
    pub min_rate_bps: f64,
    pub willing_to_relay: bool,
}

/// Registered profiles for all nodes and applications.
#[derive(Debug, Clone, Default)]
pub struct ProfileSet {
    nodes: BTreeMap<NodeId, NodeProfile>,
    apps: BTreeMap<String, AppProfile>,
}

impl ProfileSet {
    pub fn register_node(&mut self, node: NodeId, profile: NodeProfile) {
        self.nodes.insert(node, profile);
    }

    pub fn register_app(&mut self, app: &str, profile: AppProfile) {
        self.apps.insert(app.to_string(), profile);
    }

    pub fn node(&self, node: NodeId) -> Option<&NodeProfile> {
        self.nodes.get(&node)
    }

    /// Merges the node and application profiles into one requirement record.
    pub fn match_profile(&self, node: NodeId, app: &str) -> Result<Requirements, CmsError> {
        let node_profile = self.nodes.get(&node).ok_or(CmsError::MissingProfile {
            node: node.0,
            app: app.to_string(),
        })?;
        let app_profile = self.apps.get(app).ok_or(CmsError::MissingProfile {
            node: node.0,
            app: app.to_string(),
        })?;
        Ok(Requirements {
            max_delay_s: app_profile.max_delay_s,
            min_rate_bps: app_profile.min_rate_bps,
            willing_to_relay: node_profile.willing_to_relay,
        })
    }

    /// Nodes that may relay over the given interface kind: willing users
    /// whose device carries that interface.
    pub fn relay_candidates(&self, kind: InterfaceKind) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, p)| p.willing_to_relay && p.interfaces.contains(&kind))
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Quantized context key: which power phase, how many loaded nodes are out
/// of coverage, how many sit below the rate threshold, and the mobility
/// level. Two instants with equal signatures count as the same situation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ContextSignature {
    pub phase: u8,
    pub uncovered_consumers: u8,
    pub poor_nodes: u8,
    pub mobility_level_idx: u8,
}

/// Derives the signature of a snapshot. The rate threshold is the one the
/// aggregation policy uses; pass 0 to disable that component.
pub fn signature_of(snapshot: &ContextSnapshot, poor_rate_threshold_bps: f64) -> ContextSignature {
    let uncovered = snapshot
        .nodes
        .iter()
        .filter(|n| n.offered_load_bps > 0.0 && !n.in_coverage)
        .count();
    let poor = snapshot
        .nodes
        .iter()
        .filter(|n| {
            n.offered_load_bps > 0.0 && n.in_coverage && n.serving_rate_bps < poor_rate_threshold_bps
        })
        .count();
    let level = snapshot
        .nodes
        .iter()
        .map(|n| n.mobility_level_idx)
        .max()
        .unwrap_or(0);
    ContextSignature {
        phase: snapshot.phase.index(),
        uncovered_consumers: uncovered.min(u8::MAX as usize) as u8,
        poor_nodes: poor.min(u8::MAX as usize) as u8,
        mobility_level_idx: level,
    }
}

impl std::fmt::Display for ContextSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "p{}u{}r{}m{}",
            self.phase, self.uncovered_consumers, self.poor_nodes, self.mobility_level_idx
        )
    }
}

/// The formation decision taken for one subject group.
#[derive(Debug, Clone, PartialEq)]
pub struct OnPlan {
    pub trigger_kind: TriggerKind,
    pub subjects: Vec<NodeId>,
    pub participants: Vec<NodeId>,
    pub gateway: NodeId,
}

/// Observed result of a decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOutcome {
    pub mean_delay_s: f64,
    pub power_mw: f64,
    pub success: bool,
}

/// One knowledge entry: the decision taken under a signature and how it
/// turned out. Re-learning the same signature overwrites the outcome.
#[derive(Debug, Clone)]
pub struct KnowledgeRecord {
    pub signature: ContextSignature,
    pub decision: Vec<OnPlan>,
    pub outcome: DecisionOutcome,
    pub hit_count: u32,
}

/// Signature-keyed decision cache.
#[derive(Debug, Default)]
pub struct KnowledgeBase {
    records: BTreeMap<ContextSignature, KnowledgeRecord>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores (or overwrites) the record for its signature, preserving the
    /// accumulated hit count.
    pub fn learn(&mut self, mut record: KnowledgeRecord) {
        if let Some(existing) = self.records.get(&record.signature) {
            record.hit_count = existing.hit_count;
        }
        self.records.insert(record.signature, record);
    }

    /// Looks up a signature, bumping its hit counter on success.
    pub fn lookup(&mut self, signature: ContextSignature) -> Option<&KnowledgeRecord> {
        if let Some(rec) = self.records.get_mut(&signature) {
            rec.hit_count += 1;
            Some(&*rec)
        } else {
            None
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &KnowledgeRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Broadcast payload of the infrastructure pilot channel. Only the access
/// point originates these.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcInfo {
    pub phase: PowerPhase,
    pub allowed_interfaces: Vec<InterfaceKind>,
    pub active_policy_count: usize,
}

/// Peer-to-peer control payloads exchanged between terminals.
#[derive(Debug, Clone, PartialEq)]
pub enum CcrMsg {
    ContextShare,
    Invite { on_id: u32 },
    Accept { on_id: u32 },
    Reject { on_id: u32 },
}

impl CcrMsg {
    pub fn as_str(&self) -> &'static str {
        match self {
            CcrMsg::ContextShare => "context-share",
            CcrMsg::Invite { .. } => "invite",
            CcrMsg::Accept { .. } => "accept",
            CcrMsg::Reject { .. } => "reject",
        }
    }
}

/// Terminals that receive a pilot broadcast: every in-coverage node other
/// than the access point itself.
pub fn cpc_targets(snapshot: &ContextSnapshot, ap: NodeId) -> Vec<NodeId> {
    snapshot
        .nodes
        .iter()
        .filter(|n| n.node != ap && n.in_coverage)
        .map(|n| n.node)
        .collect()
}

/// Checks that a peer-to-peer control message can reach its destination:
/// the two terminals must share a feasible peer link.
pub fn ccr_check(from: NodeId, to: NodeId, snapshot: &ContextSnapshot) -> Result<(), CmsError> {
    let reachable = snapshot
        .node(from)
        .neighbors
        .iter()
        .any(|(peer, _)| *peer == to);
    if reachable {
        Ok(())
    } else {
        Err(CmsError::ControlUnreachable {
            from: from.0,
            to: to.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(
        node: usize,
        in_coverage: bool,
        serving_rate_bps: f64,
        offered_load_bps: f64,
    ) -> NodeContext {
        NodeContext {
            node: NodeId(node),
            in_coverage,
            serving_rate_bps,
            neighbors: Vec::new(),
            offered_load_bps,
            mobility_level_idx: 0,
        }
    }

    fn snapshot(nodes: Vec<NodeContext>) -> ContextSnapshot {
        ContextSnapshot {
            t: SimTime::ZERO,
            phase: PowerPhase::new(1).unwrap(),
            nodes,
        }
    }

    fn coverage_policy() -> Policy {
        Policy {
            rule: PolicyRule::CoverageGap,
            qos_weight: 1.0,
            power_weight: 1.0,
            max_hops: 3,
        }
    }

    fn aggregation_policy(min_rate_bps: f64) -> Policy {
        Policy {
            rule: PolicyRule::PoorChannel { min_rate_bps },
            qos_weight: 1.0,
            power_weight: 1.0,
            max_hops: 3,
        }
    }

    #[test]
    fn uncovered_consumer_fires_coverage_gap() {
        let snap = snapshot(vec![
            ctx(0, true, 54e6, 0.0),
            ctx(1, false, 0.0, 80_000.0),
        ]);
        let triggers = evaluate_policies(&snap, &[coverage_policy()]);
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0].kind, TriggerKind::CoverageGap);
        assert_eq!(triggers[0].subjects, vec![NodeId(1)]);
    }

    #[test]
    fn sub_threshold_rate_fires_poor_channel() {
        let snap = snapshot(vec![
            ctx(0, true, 5e6, 8e6),
            ctx(1, true, 0.5e6, 8e6),
        ]);
        let triggers = evaluate_policies(&snap, &[aggregation_policy(1e6)]);
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0].kind, TriggerKind::PoorChannel);
        assert_eq!(triggers[0].subjects, vec![NodeId(1)]);
    }

    #[test]
    fn healthy_snapshot_yields_no_triggers() {
        let snap = snapshot(vec![ctx(0, true, 54e6, 80_000.0), ctx(1, true, 54e6, 0.0)]);
        let triggers = evaluate_policies(
            &snap,
            &[coverage_policy(), aggregation_policy(1e6)],
        );
        assert!(triggers.is_empty());
    }

    #[test]
    fn idle_nodes_never_become_subjects() {
        let snap = snapshot(vec![ctx(0, false, 0.0, 0.0)]);
        assert!(evaluate_policies(&snap, &[coverage_policy()]).is_empty());
    }

    #[test]
    fn profile_matching_merges_app_and_node_records() {
        let mut profiles = ProfileSet::default();
        profiles.register_node(
            NodeId(0),
            NodeProfile {
                willing_to_relay: true,
                interfaces: vec![InterfaceKind::WlanG],
            },
        );
        profiles.register_app(
            "voip",
            AppProfile {
                max_delay_s: VOIP_MAX_DELAY_S,
                min_rate_bps: 80_000.0,
            },
        );
        let req = profiles.match_profile(NodeId(0), "voip").unwrap();
        assert_eq!(req.max_delay_s, 0.150);
        assert!(req.willing_to_relay);
        let err = profiles.match_profile(NodeId(1), "voip").unwrap_err();
        assert!(matches!(err, CmsError::MissingProfile { node: 1, .. }));
    }

    #[test]
    fn relay_candidates_respect_capability_and_preference() {
        let mut profiles = ProfileSet::default();
        profiles.register_node(
            NodeId(0),
            NodeProfile {
                willing_to_relay: true,
                interfaces: vec![InterfaceKind::Cell3g],
            },
        );
        profiles.register_node(
            NodeId(1),
            NodeProfile {
                willing_to_relay: false,
                interfaces: vec![InterfaceKind::WlanG],
            },
        );
        profiles.register_node(
            NodeId(2),
            NodeProfile {
                willing_to_relay: true,
                interfaces: vec![InterfaceKind::WlanG],
            },
        );
        // Node 0 lacks WLAN, node 1 is unwilling; only node 2 qualifies.
        assert_eq!(profiles.relay_candidates(InterfaceKind::WlanG), vec![NodeId(2)]);
    }

    #[test]
    fn knowledge_cold_start_misses_then_hits() {
        let mut kb = KnowledgeBase::new();
        let sig = ContextSignature {
            phase: 4,
            uncovered_consumers: 4,
            poor_nodes: 0,
            mobility_level_idx: 0,
        };
        assert!(kb.lookup(sig).is_none());
        kb.learn(KnowledgeRecord {
            signature: sig,
            decision: vec![],
            outcome: DecisionOutcome {
                mean_delay_s: 0.01,
                power_mw: 162.0,
                success: true,
            },
            hit_count: 0,
        });
        let rec = kb.lookup(sig).unwrap();
        assert!(rec.outcome.success);
        assert_eq!(rec.hit_count, 1);
    }

    #[test]
    fn failed_outcome_is_preserved_for_negative_caching() {
        let mut kb = KnowledgeBase::new();
        let sig = ContextSignature {
            phase: 4,
            uncovered_consumers: 1,
            poor_nodes: 0,
            mobility_level_idx: 2,
        };
        kb.learn(KnowledgeRecord {
            signature: sig,
            decision: vec![],
            outcome: DecisionOutcome {
                mean_delay_s: 0.0,
                power_mw: 0.0,
                success: false,
            },
            hit_count: 0,
        });
        assert!(!kb.lookup(sig).unwrap().outcome.success);
    }

    #[test]
    fn relearning_overwrites_outcome_but_keeps_hits() {
        let mut kb = KnowledgeBase::new();
        let sig = ContextSignature {
            phase: 2,
            uncovered_consumers: 2,
            poor_nodes: 0,
            mobility_level_idx: 1,
        };
        let rec = |success| KnowledgeRecord {
            signature: sig,
            decision: vec![],
            outcome: DecisionOutcome {
                mean_delay_s: 0.02,
                power_mw: 264.0,
                success,
            },
            hit_count: 0,
        };
        kb.learn(rec(false));
        kb.lookup(sig);
        kb.lookup(sig);
        kb.learn(rec(true));
        let stored = kb.lookup(sig).unwrap();
        assert!(stored.outcome.success);
        assert_eq!(stored.hit_count, 3);
    }

    #[test]
    fn signatures_quantize_counts_and_level() {
        let snap = snapshot(vec![
            ctx(0, false, 0.0, 80_000.0),
            ctx(1, false, 0.0, 80_000.0),
            ctx(2, true, 0.5e6, 8e6),
            ctx(3, true, 54e6, 0.0),
        ]);
        let sig = signature_of(&snap, 1e6);
        assert_eq!(sig.phase, 1);
        assert_eq!(sig.uncovered_consumers, 2);
        assert_eq!(sig.poor_nodes, 1);
        assert_eq!(sig.to_string(), "p1u2r1m0");
    }

    #[test]
    fn empty_network_yields_an_empty_snapshot_and_no_triggers() {
        let snap = snapshot(vec![]);
        assert!(evaluate_policies(&snap, &[coverage_policy()]).is_empty());
        assert_eq!(signature_of(&snap, 1e6).uncovered_consumers, 0);
    }

    #[test]
    fn cpc_reaches_only_in_coverage_terminals() {
        let snap = snapshot(vec![
            ctx(0, true, 54e6, 0.0),  // the AP itself
            ctx(1, true, 54e6, 0.0),
            ctx(2, false, 0.0, 80_000.0),
            ctx(3, true, 54e6, 0.0),
        ]);
        assert_eq!(cpc_targets(&snap, NodeId(0)), vec![NodeId(1), NodeId(3)]);
    }

    #[test]
    fn ccr_requires_a_feasible_peer_link() {
        let mut near = ctx(0, true, 54e6, 0.0);
        near.neighbors = vec![(NodeId(1), 54e6)];
        let far = ctx(1, false, 0.0, 0.0);
        let snap = snapshot(vec![near, far]);
        assert!(ccr_check(NodeId(0), NodeId(1), &snap).is_ok());
        // The far node has no neighbors at all: unreachable in reverse.
        let err = ccr_check(NodeId(1), NodeId(0), &snap).unwrap_err();
        assert_eq!(err, CmsError::ControlUnreachable { from: 1, to: 0 });
    }

    #[test]
    fn policy_validation_requires_a_positive_weight() {
        let mut p = coverage_policy();
        assert!(p.validate().is_ok());
        p.qos_weight = 0.0;
        p.power_weight = 0.0;
        assert!(p.validate().is_err());
    }
}
