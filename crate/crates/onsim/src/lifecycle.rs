//! Lifecycle of an opportunistic network: detecting that one is needed,
//! selecting participants and the gateway, forming it over the control
//! channels, maintaining it against mobility, and terminating it when its
//! trigger no longer holds.

use std::collections::BTreeSet;

use thiserror::Error;

pub use crate::cms::{Trigger, TriggerKind};

use crate::NodeId;
use crate::cms::{ContextSnapshot, OnPlan, Policy, ProfileSet};
use crate::kernel::SimTime;
use crate::radio::InterfaceKind;
use crate::routing::{LinkGraph, ProtocolKind, Route};

#[derive(Debug, Error, PartialEq)]
pub enum LifecycleError {
    #[error("no willing in-coverage relay candidate for subjects {subjects:?}")]
    NoCandidate { subjects: Vec<usize> },
    #[error("formation of ON {on_id} failed: {reason}")]
    FormationFailed { on_id: u32, reason: String },
    #[error("illegal ON state transition {from:?} -> {to:?}")]
    IllegalTransition { from: OnState, to: OnState },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OnId(pub u32);

impl std::fmt::Display for OnId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "on-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnState {
    Forming,
    Active,
    Reconfiguring,
    Terminated,
}

impl OnState {
    pub fn as_str(self) -> &'static str {
        match self {
            OnState::Forming => "forming",
            OnState::Active => "active",
            OnState::Reconfiguring => "reconfiguring",
            OnState::Terminated => "terminated",
        }
    }
}

/// A live opportunistic network.
#[derive(Debug, Clone)]
pub struct OnDescriptor {
    pub id: OnId,
    pub trigger_kind: TriggerKind,
    /// Nodes whose traffic the network exists to serve.
    pub subjects: Vec<NodeId>,
    /// All members, subjects and relays alike; always contains the gateway.
    pub participants: BTreeSet<NodeId>,
    /// The participant bridging the network to the infrastructure.
    pub gateway: NodeId,
    /// Serving route per subject, ending at the gateway.
    pub routes: Vec<(NodeId, Route)>,
    pub state: OnState,
    pub created_at: SimTime,
    pub activated_at: Option<SimTime>,
    pub terminated_at: Option<SimTime>,
}

impl OnDescriptor {
    /// Legal transitions: Forming -> Active, Forming -> Terminated,
    /// Active -> Reconfiguring -> Active, Active/Reconfiguring -> Terminated.
    /// Terminating an already-terminated network is an idempotent no-op.
    pub fn transition(&mut self, to: OnState, at: SimTime) -> Result<(), LifecycleError> {
        let legal = matches!(
            (self.state, to),
            (OnState::Forming, OnState::Active)
                | (OnState::Forming, OnState::Terminated)
                | (OnState::Active, OnState::Reconfiguring)
                | (OnState::Reconfiguring, OnState::Active)
                | (OnState::Active, OnState::Terminated)
                | (OnState::Reconfiguring, OnState::Terminated)
                | (OnState::Terminated, OnState::Terminated)
        );
        if !legal {
            return Err(LifecycleError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        if self.state == OnState::Terminated {
            return Ok(());
        }
        match to {
            OnState::Active => {
                if self.activated_at.is_none() {
                    self.activated_at = Some(at);
                }
            }
            OnState::Terminated => self.terminated_at = Some(at),
            _ => {}
        }
        self.state = to;
        Ok(())
    }

    pub fn plan(&self) -> OnPlan {
        OnPlan {
            trigger_kind: self.trigger_kind,
            subjects: self.subjects.clone(),
            participants: self.participants.iter().copied().collect(),
            gateway: self.gateway,
        }
    }

    pub fn route_for(&self, subject: NodeId) -> Option<&Route> {
        self.routes
            .iter()
            .find(|(s, _)| *s == subject)
            .map(|(_, r)| r)
    }
}

/// Outcome of participant selection: the descriptor-to-be plus how many
/// candidate configurations were scored to find it. A decision replayed
/// from the knowledge base reports zero evaluation steps.
#[derive(Debug, Clone)]
pub struct Selection {
    pub subjects: Vec<NodeId>,
    pub participants: BTreeSet<NodeId>,
    pub gateway: NodeId,
    pub routes: Vec<(NodeId, Vec<NodeId>)>,
    pub eval_steps: u32,
}

/// Chooses gateway and relay chains for one connected subject group.
///
/// Candidates are willing WLAN-capable nodes currently holding an
/// infrastructure link. Each is scored by the policy objective (normalized
/// negative expected delay weighted against normalized negative total
/// power); the gateway is the best-scoring candidate, which for equal-cost
/// configurations degenerates to the candidate with the highest
/// infrastructure rate, ties broken toward the lowest node id. Relay
/// chains are minimum-hop paths from each subject to the gateway over
/// willing nodes, within the policy hop budget.
pub fn select_participants(
    subjects: &[NodeId],
    snapshot: &ContextSnapshot,
    profiles: &ProfileSet,
    policy: &Policy,
) -> Result<Selection, LifecycleError> {
    let peer_graph = snapshot.peer_graph();
    let relay_ok: Vec<bool> = {
        let mut v = vec![false; snapshot.nodes.len()];
        for id in profiles.relay_candidates(InterfaceKind::WlanG) {
            if id.0 < v.len() {
                v[id.0] = true;
            }
        }
        // Subjects always belong to their own network.
        for s in subjects {
            v[s.0] = true;
        }
        v
    };

    // Restrict the peer graph to nodes eligible for this network.
    let mut graph = LinkGraph::new(snapshot.nodes.len());
    for (i, ok) in relay_ok.iter().enumerate() {
        if !ok {
            continue;
        }
        for &m in peer_graph.neighbors(NodeId(i)) {
            if relay_ok[m.0] {
                graph.add_link(NodeId(i), m);
            }
        }
    }

    let candidates: Vec<NodeId> = snapshot
        .nodes
        .iter()
        .filter(|n| n.in_coverage && n.serving_rate_bps > 0.0 && relay_ok[n.node.0])
        .map(|n| n.node)
        .collect();
    if candidates.is_empty() {
        return Err(LifecycleError::NoCandidate {
            subjects: subjects.iter().map(|s| s.0).collect(),
        });
    }

    // Score each viable gateway candidate.
    struct Scored {
        gateway: NodeId,
        rate: f64,
        total_hops: usize,
        participants: BTreeSet<NodeId>,
        routes: Vec<(NodeId, Vec<NodeId>)>,
    }
    let mut viable: Vec<Scored> = Vec::new();
    let mut eval_steps = 0u32;
    for &gw in &candidates {
        eval_steps += 1;
        let mut routes = Vec::new();
        let mut participants: BTreeSet<NodeId> = BTreeSet::new();
        participants.insert(gw);
        let mut ok = true;
        let mut total_hops = 0;
        for &subject in subjects {
            let path = if subject == gw {
                Some(vec![subject])
            } else {
                graph.min_hop_route(subject, gw)
            };
            match path {
                Some(p) if p.len().saturating_sub(1) <= policy.max_hops => {
                    total_hops += p.len().saturating_sub(1);
                    participants.extend(p.iter().copied());
                    routes.push((subject, p));
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            viable.push(Scored {
                gateway: gw,
                rate: snapshot.node(gw).serving_rate_bps,
                total_hops,
                participants,
                routes,
            });
        }
    }
    if viable.is_empty() {
        return Err(LifecycleError::NoCandidate {
            subjects: subjects.iter().map(|s| s.0).collect(),
        });
    }

    // Normalize the two objectives over the viable set and take the best
    // weighted score; rate (QoS) dominance first, then fewer hops (power),
    // then the lowest gateway id.
    let max_rate = viable.iter().map(|v| v.rate).fold(0.0, f64::max);
    let max_hops = viable.iter().map(|v| v.total_hops).max().unwrap_or(0);
    let score = |v: &Scored| {
        let qos = if max_rate > 0.0 { v.rate / max_rate } else { 1.0 };
        let power = if max_hops > 0 {
            1.0 - v.total_hops as f64 / max_hops as f64
        } else {
            1.0
        };
        policy.qos_weight * qos + policy.power_weight * power
    };
    viable.sort_by(|a, b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap()
            .then(b.rate.partial_cmp(&a.rate).unwrap())
            .then(a.gateway.cmp(&b.gateway))
    });
    let best = viable.into_iter().next().unwrap();
    Ok(Selection {
        subjects: subjects.to_vec(),
        participants: best.participants,
        gateway: best.gateway,
        routes: best.routes,
        eval_steps,
    })
}

/// Builds a Forming descriptor from a selection.
pub fn descriptor_from_selection(
    id: OnId,
    trigger_kind: TriggerKind,
    selection: &Selection,
    protocol: ProtocolKind,
    now: SimTime,
) -> OnDescriptor {
    OnDescriptor {
        id,
        trigger_kind,
        subjects: selection.subjects.clone(),
        participants: selection.participants.clone(),
        gateway: selection.gateway,
        routes: selection
            .routes
            .iter()
            .map(|(s, path)| (*s, Route::new(path.clone(), now, protocol)))
            .collect(),
        state: OnState::Forming,
        created_at: now,
        activated_at: None,
        terminated_at: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cms::{NodeContext, NodeProfile, PolicyRule};
    use crate::radio::PowerPhase;

    fn policy() -> Policy {
        Policy {
            rule: PolicyRule::PoorChannel { min_rate_bps: 1e6 },
            qos_weight: 1.0,
            power_weight: 1.0,
            max_hops: 3,
        }
    }

    fn node_ctx(
        node: usize,
        in_coverage: bool,
        rate: f64,
        load: f64,
        neighbors: &[usize],
    ) -> NodeContext {
        NodeContext {
            node: NodeId(node),
            in_coverage,
            serving_rate_bps: rate,
            neighbors: neighbors.iter().map(|n| (NodeId(*n), 54e6)).collect(),
            offered_load_bps: load,
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

    fn all_willing(n: usize) -> ProfileSet {
        let mut p = ProfileSet::default();
        for i in 0..n {
            p.register_node(
                NodeId(i),
                NodeProfile {
                    willing_to_relay: true,
                    interfaces: vec![InterfaceKind::WlanG],
                },
            );
        }
        p
    }

    /// The four-node aggregation setup: one good node, three poor ones.
    fn aggregation_snapshot() -> ContextSnapshot {
        snapshot(vec![
            node_ctx(0, true, 5e6, 8e6, &[1, 2, 3]),
            node_ctx(1, true, 0.5e6, 8e6, &[0, 2, 3]),
            node_ctx(2, true, 0.5e6, 8e6, &[0, 1, 3]),
            node_ctx(3, true, 0.5e6, 8e6, &[0, 1, 2]),
        ])
    }

    #[test]
    fn gateway_is_the_highest_rate_candidate() {
        let snap = aggregation_snapshot();
        let profiles = all_willing(4);
        let sel = select_participants(
            &[NodeId(1), NodeId(2), NodeId(3)],
            &snap,
            &profiles,
            &policy(),
        )
        .unwrap();
        assert_eq!(sel.gateway, NodeId(0));
        assert_eq!(sel.participants.len(), 4);
        assert!(sel.eval_steps > 0);
    }

    #[test]
    fn equal_rate_candidates_tie_break_to_lowest_id() {
        let snap = snapshot(vec![
            node_ctx(0, false, 0.0, 80_000.0, &[1, 2]),
            node_ctx(1, true, 54e6, 0.0, &[0]),
            node_ctx(2, true, 54e6, 0.0, &[0]),
        ]);
        let profiles = all_willing(3);
        let sel = select_participants(&[NodeId(0)], &snap, &profiles, &policy()).unwrap();
        assert_eq!(sel.gateway, NodeId(1));
    }

    #[test]
    fn unwilling_neighbors_mean_no_candidate() {
        let snap = snapshot(vec![
            node_ctx(0, false, 0.0, 80_000.0, &[1]),
            node_ctx(1, true, 54e6, 0.0, &[0]),
        ]);
        let mut profiles = ProfileSet::default();
        profiles.register_node(
            NodeId(0),
            NodeProfile {
                willing_to_relay: true,
                interfaces: vec![InterfaceKind::WlanG],
            },
        );
        profiles.register_node(
            NodeId(1),
            NodeProfile {
                willing_to_relay: false,
                interfaces: vec![InterfaceKind::WlanG],
            },
        );
        let err = select_participants(&[NodeId(0)], &snap, &profiles, &policy()).unwrap_err();
        assert_eq!(err, LifecycleError::NoCandidate { subjects: vec![0] });
    }

    #[test]
    fn gateway_choice_is_invariant_under_rate_rescaling() {
        let profiles = all_willing(4);
        let base = aggregation_snapshot();
        let sel0 = select_participants(
            &[NodeId(1), NodeId(2), NodeId(3)],
            &base,
            &profiles,
            &policy(),
        )
        .unwrap();
        for k in [0.25, 2.0, 1000.0] {
            let mut scaled = base.clone();
            for n in &mut scaled.nodes {
                n.serving_rate_bps *= k;
            }
            let sel = select_participants(
                &[NodeId(1), NodeId(2), NodeId(3)],
                &scaled,
                &profiles,
                &policy(),
            )
            .unwrap();
            assert_eq!(sel.gateway, sel0.gateway, "rescale by {k} changed the gateway");
        }
    }

    #[test]
    fn hop_budget_excludes_distant_gateways() {
        // 0 (subject) - 1 - 2 - 3 - 4 (only infrastructure link), 4 hops away.
        let snap = snapshot(vec![
            node_ctx(0, false, 0.0, 80_000.0, &[1]),
            node_ctx(1, false, 0.0, 0.0, &[0, 2]),
            node_ctx(2, false, 0.0, 0.0, &[1, 3]),
            node_ctx(3, false, 0.0, 0.0, &[2, 4]),
            node_ctx(4, true, 54e6, 0.0, &[3]),
        ]);
        let profiles = all_willing(5);
        let err = select_participants(&[NodeId(0)], &snap, &profiles, &policy()).unwrap_err();
        assert!(matches!(err, LifecycleError::NoCandidate { .. }));
    }

    #[test]
    fn state_machine_accepts_only_legal_transitions() {
        let snap = aggregation_snapshot();
        let profiles = all_willing(4);
        let sel = select_participants(
            &[NodeId(1), NodeId(2), NodeId(3)],
            &snap,
            &profiles,
            &policy(),
        )
        .unwrap();
        let mut on = descriptor_from_selection(
            OnId(0),
            TriggerKind::PoorChannel,
            &sel,
            ProtocolKind::Reactive,
            SimTime::ZERO,
        );
        assert_eq!(on.state, OnState::Forming);
        // Forming -> Reconfiguring is illegal.
        let err = on.transition(OnState::Reconfiguring, SimTime::ZERO).unwrap_err();
        assert!(matches!(err, LifecycleError::IllegalTransition { .. }));
        on.transition(OnState::Active, SimTime::from_secs(0.03)).unwrap();
        on.transition(OnState::Reconfiguring, SimTime::from_secs(5.0)).unwrap();
        on.transition(OnState::Active, SimTime::from_secs(5.5)).unwrap();
        on.transition(OnState::Terminated, SimTime::from_secs(9.0)).unwrap();
        assert_eq!(on.terminated_at, Some(SimTime::from_secs(9.0)));
        // Double terminate is an idempotent no-op.
        on.transition(OnState::Terminated, SimTime::from_secs(10.0)).unwrap();
        assert_eq!(on.terminated_at, Some(SimTime::from_secs(9.0)));
        // Nothing leaves Terminated.
        let err = on.transition(OnState::Active, SimTime::from_secs(11.0)).unwrap_err();
        assert!(matches!(err, LifecycleError::IllegalTransition { .. }));
    }

    #[test]
    fn coverage_subject_with_one_neighbor_forms_pair() {
        let snap = snapshot(vec![
            node_ctx(0, true, 54e6, 0.0, &[1]),
            node_ctx(1, false, 0.0, 80_000.0, &[0]),
        ]);
        let profiles = all_willing(2);
        let sel = select_participants(&[NodeId(1)], &snap, &profiles, &policy()).unwrap();
        assert_eq!(sel.gateway, NodeId(0));
        assert_eq!(sel.participants.len(), 2);
        assert_eq!(sel.routes[0].1, vec![NodeId(1), NodeId(0)]);
    }
}
