//! The integrated simulation: one world state driven by the event kernel.
//!
//! A run wires together mobility (waypoint legs as events), radio state
//! (power phases and link geometry), application traffic, the management
//! tick (context -> policies -> triggers -> lifecycle), and per-packet
//! forwarding with break detection, repair, and bounded retransmission
//! queues. Everything observable lands in a [`RunOutput`].

use std::collections::{BTreeMap, VecDeque};

use crate::NodeId;
use crate::cms::{
    self, AppProfile, CONTROL_MSG_BYTES, ContextSignature, ContextSnapshot, DecisionOutcome,
    KnowledgeBase, KnowledgeRecord, NodeContext, NodeProfile, OnPlan, Policy, PolicyRule,
    ProfileSet, signature_of,
};
use crate::kernel::{Event, EventPayload, Kernel, RngStream, SimTime};
use crate::lifecycle::{
    OnDescriptor, OnId, OnState, Trigger, TriggerKind, descriptor_from_selection,
    select_participants,
};
use crate::mobility::{Domain, Position, WaypointLeg, next_leg, position_on};
use crate::radio::{InterfaceKind, PowerPhase, RadioInterface};
use crate::routing::{LinkGraph, ProactiveTables, ProtocolKind, Route, RoutingTimers};
use crate::scenario::{FlowKindCfg, Role, ScenarioConfig};
use crate::traffic::{
    Direction, DropReason, Fate, FlowId, FlowKind, FlowSpec, PacketRecord, VOIP_PACKET_BYTES,
    voip_emit_times,
};

/// Per-run parameter overrides applied on top of a scenario config,
/// as used by sweeps and replications.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub max_speed_mps: Option<f64>,
    /// Replaces the whole phase schedule with a single phase from t=0.
    pub phase: Option<PowerPhase>,
    pub protocol: Option<ProtocolKind>,
    pub cms_enabled: Option<bool>,
}

/// Lifecycle summary of one opportunistic network.
#[derive(Debug, Clone)]
pub struct OnLogEntry {
    pub id: OnId,
    pub trigger_kind: TriggerKind,
    pub subjects: Vec<NodeId>,
    pub participants: Vec<NodeId>,
    pub gateway: NodeId,
    pub created_at: SimTime,
    pub activated_at: Option<SimTime>,
    pub terminated_at: Option<SimTime>,
    pub outcome: &'static str,
    pub eval_steps: u32,
    pub kb_hit: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PositionSample {
    pub t: SimTime,
    pub node: NodeId,
    pub x: f64,
    pub y: f64,
}

/// Everything a single run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub scenario_name: String,
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub mobility_level_mps: f64,
    pub final_phase: PowerPhase,
    pub node_names: Vec<String>,
    pub consumers: Vec<NodeId>,
    pub packets: Vec<PacketRecord>,
    pub on_log: Vec<OnLogEntry>,
    pub knowledge: Vec<KnowledgeRecord>,
    /// Total configured transmit power after each change, `(t, mW)`.
    pub power_timeline: Vec<(SimTime, f64)>,
    /// Steady total while opportunistic networks were serving, if any were.
    pub on_mode_power_mw: Option<f64>,
    /// Transmit energy actually spent on the air, joules.
    pub transmit_joules: f64,
    /// Time of the last delivery (bulk scenarios), for airtime reporting.
    pub last_delivery_s: f64,
    pub control_overhead_bytes: u64,
    pub trace_digest: String,
    pub events_dispatched: usize,
    pub positions: Vec<PositionSample>,
    /// Full dispatch trace of the run.
    pub trace: crate::kernel::EventTrace,
}

impl RunOutput {
    /// Total configured transmit power at the start of the run (after the
    /// initial phase was applied).
    pub fn initial_power_mw(&self) -> f64 {
        self.power_timeline.first().map(|(_, p)| *p).unwrap_or(0.0)
    }

    /// Final configured transmit power.
    pub fn final_power_mw(&self) -> f64 {
        self.power_timeline.last().map(|(_, p)| *p).unwrap_or(0.0)
    }

    /// Mean airtime power draw over the span of actual transmissions, mW.
    pub fn airtime_mean_power_mw(&self) -> f64 {
        if self.last_delivery_s > 0.0 {
            self.transmit_joules / self.last_delivery_s * 1000.0
        } else {
            0.0
        }
    }
}

// ---------------------------------------------------------------------------
// Events

#[derive(Debug, Clone)]
enum Ev {
    PhaseChange { phase: PowerPhase },
    Tick,
    TopologyTick,
    WaypointReached { node: NodeId },
    PauseEnd { node: NodeId },
    VoipEmit { flow: FlowId, dir: Direction, seq: u32 },
    Delivered { flow: FlowId, dir: Direction, seq: u32 },
    RepairAttempt { on: OnId },
    FormationComplete { on: OnId },
    CpcDelivered { to: NodeId },
    CcrDelivered { from: NodeId, to: NodeId, kind: &'static str },
    BulkEmit { flow: FlowId, msg: u32 },
    BulkHop { flow: FlowId, msg: u32, pos: usize },
    BulkInfraDone { node: NodeId },
}

impl EventPayload for Ev {
    fn trace_label(&self) -> String {
        match self {
            Ev::PhaseChange { phase } => format!("phase-change p{phase}"),
            Ev::Tick => "tick".into(),
            Ev::TopologyTick => "topology-tick".into(),
            Ev::WaypointReached { node } => format!("waypoint {node}"),
            Ev::PauseEnd { node } => format!("pause-end {node}"),
            Ev::VoipEmit { flow, dir, seq } => {
                format!("voip-emit f{} {} {seq}", flow.0, dir.as_str())
            }
            Ev::Delivered { flow, dir, seq } => {
                format!("voip-deliver f{} {} {seq}", flow.0, dir.as_str())
            }
            Ev::RepairAttempt { on } => format!("repair {on}"),
            Ev::FormationComplete { on } => format!("formed {on}"),
            Ev::CpcDelivered { to } => format!("cpc {to}"),
            Ev::CcrDelivered { from, to, kind } => format!("ccr {from}->{to} {kind}"),
            Ev::BulkEmit { flow, msg } => format!("bulk-emit f{}#{msg}", flow.0),
            Ev::BulkHop { flow, msg, pos } => format!("bulk-hop f{}#{msg}@{pos}", flow.0),
            Ev::BulkInfraDone { node } => format!("bulk-done {node}"),
        }
    }
}

// ---------------------------------------------------------------------------
// World state

#[derive(Debug, Clone, Copy, PartialEq)]
enum Service {
    Direct,
    On(OnId),
    Unserved,
}

#[derive(Debug, Clone, Copy)]
struct QueuedPacket {
    seq: u32,
    dir: Direction,
    created_at: SimTime,
}

struct FlowRuntime {
    spec: FlowSpec,
    service: Service,
    queue: VecDeque<QueuedPacket>,
    /// Bulk messages awaiting a serving network, `(msg index, created)`.
    bulk_pending: Vec<(u32, SimTime)>,
    bulk_remaining: u32,
}

struct OnRuntime {
    desc: OnDescriptor,
    signature: ContextSignature,
    policy_idx: usize,
    repair_pending: bool,
    handshake_pending: bool,
    reconf_since: Option<SimTime>,
    eval_steps: u32,
    kb_hit: bool,
    served_packets: u64,
    delay_sum_s: f64,
}

struct InfraTx {
    busy_until: SimTime,
    current: Option<(FlowId, u32)>,
    pending: VecDeque<(FlowId, u32)>,
}

struct World {
    names: Vec<String>,
    roles: Vec<Role>,
    wlan: Vec<Option<RadioInterface>>,
    cellular: Vec<Option<RadioInterface>>,
    /// Static position, or starting point for mobile nodes.
    home: Vec<Position>,
    leg: Vec<Option<WaypointLeg>>,
    rng: Vec<Option<RngStream>>,
    ap: NodeId,
    /// Whether the infrastructure offers WLAN service (true in the coverage
    /// scenarios). When false, terminal WLAN is powered only inside an
    /// active opportunistic network.
    wlan_infrastructure: bool,
    alpha: f64,
    domain: Domain,
    max_speed_mps: f64,
    level_idx: u8,
    pause_s: f64,
    horizon: SimTime,
    protocol: ProtocolKind,
    timers: RoutingTimers,
    queue_timeout_s: f64,
    grace_s: f64,
    tick_s: f64,
    ctrl_latency_s: f64,
    cms_enabled: bool,
    policies: Vec<Policy>,
    profiles: ProfileSet,
    kb: KnowledgeBase,
    poor_rate_threshold: f64,
    phase: PowerPhase,
    flows: Vec<FlowRuntime>,
    flows_by_src: BTreeMap<NodeId, Vec<FlowId>>,
    ons: Vec<OnRuntime>,
    next_on_id: u32,
    infra_tx: Vec<InfraTx>,
    // accounting
    packets: Vec<PacketRecord>,
    on_log: Vec<OnLogEntry>,
    power_timeline: Vec<(SimTime, f64)>,
    on_mode_power_mw: Option<f64>,
    transmit_joules: f64,
    last_delivery_s: f64,
    control_overhead_bytes: u64,
    positions: Vec<PositionSample>,
    log_positions: bool,
}

impl World {
    fn build(cfg: &ScenarioConfig, ov: &RunOverrides, kernel: &Kernel<Ev>) -> World {
        let n = cfg.nodes.len();
        let mob = cfg.mobility_config();
        let max_speed = ov.max_speed_mps.unwrap_or(cfg.mobility.max_speed_mps);
        let level_idx = mob.level_index(max_speed).expect("validated level speed") as u8;
        let protocol = ov
            .protocol
            .unwrap_or_else(|| cfg.routing.protocol_kind().expect("validated protocol"));

        let mut wlan = Vec::with_capacity(n);
        let mut cellular = Vec::with_capacity(n);
        let mut home = Vec::with_capacity(n);
        let mut roles = Vec::with_capacity(n);
        let mut names = Vec::with_capacity(n);
        let mut leg = Vec::with_capacity(n);
        let mut rng = Vec::with_capacity(n);
        let mut profiles = ProfileSet::default();
        let ap = NodeId(
            cfg.nodes
                .iter()
                .position(|nc| nc.role == Role::AccessPoint)
                .expect("validated single access point"),
        );
        let wlan_infrastructure = cfg.nodes[ap.0].wlan.is_some();

        for (i, nc) in cfg.nodes.iter().enumerate() {
            names.push(nc.name.clone());
            roles.push(nc.role);
            home.push(nc.position());
            wlan.push(nc.wlan.as_ref().map(|ic| {
                let mut iface = RadioInterface::new(
                    InterfaceKind::WlanG,
                    ic.nominal_power_w,
                    ic.nominal_range_m,
                    ic.rate_bps,
                );
                // Terminal WLAN idles until an ON needs it when there is no
                // WLAN infrastructure to associate with.
                iface.active = wlan_infrastructure;
                iface
            }));
            cellular.push(nc.cellular.as_ref().map(|ic| {
                RadioInterface::new(
                    InterfaceKind::Cell3g,
                    ic.nominal_power_w,
                    ic.nominal_range_m,
                    ic.rate_bps,
                )
            }));
            leg.push(None);
            rng.push(if nc.mobile && max_speed > 0.0 {
                Some(kernel.stream(&format!("mobility/{}", nc.name)))
            } else {
                None
            });
            let mut ifaces = Vec::new();
            if nc.wlan.is_some() {
                ifaces.push(InterfaceKind::WlanG);
            }
            if nc.cellular.is_some() {
                ifaces.push(InterfaceKind::Cell3g);
            }
            profiles.register_node(
                NodeId(i),
                NodeProfile {
                    willing_to_relay: nc.willing_to_relay && nc.role != Role::AccessPoint,
                    interfaces: ifaces,
                },
            );
        }
        profiles.register_app(
            "voip",
            AppProfile {
                max_delay_s: cfg.cms.voip_max_delay_s,
                min_rate_bps: 80_000.0,
            },
        );
        profiles.register_app(
            "bulk",
            AppProfile {
                max_delay_s: f64::INFINITY,
                min_rate_bps: cfg.cms.aggregation_min_rate_bps,
            },
        );

        let mut policies = Vec::new();
        if cfg.cms.coverage_policy {
            policies.push(Policy {
                rule: PolicyRule::CoverageGap,
                qos_weight: cfg.cms.qos_weight,
                power_weight: cfg.cms.power_weight,
                max_hops: cfg.cms.max_hops,
            });
        }
        if cfg.cms.aggregation_policy {
            policies.push(Policy {
                rule: PolicyRule::PoorChannel {
                    min_rate_bps: cfg.cms.aggregation_min_rate_bps,
                },
                qos_weight: cfg.cms.qos_weight,
                power_weight: cfg.cms.power_weight,
                max_hops: cfg.cms.max_hops,
            });
        }

        let mut flows = Vec::new();
        let mut flows_by_src: BTreeMap<NodeId, Vec<FlowId>> = BTreeMap::new();
        for (i, fc) in cfg.flows.iter().enumerate() {
            let src = NodeId(cfg.node_index(&fc.src).expect("validated flow src"));
            let id = FlowId(i);
            let spec = match fc.kind {
                FlowKindCfg::Voip => FlowSpec::voip(id, src, format!("voip-{}", fc.src)),
                FlowKindCfg::Bulk => FlowSpec::bulk(
                    id,
                    src,
                    format!("bulk-{}", fc.src),
                    fc.message_bytes,
                    fc.message_count,
                ),
            };
            let bulk_remaining = if spec.kind == FlowKind::Bulk {
                spec.message_count
            } else {
                0
            };
            flows.push(FlowRuntime {
                spec,
                service: Service::Unserved,
                queue: VecDeque::new(),
                bulk_pending: Vec::new(),
                bulk_remaining,
            });
            flows_by_src.entry(src).or_default().push(id);
        }

        World {
            names,
            roles,
            wlan,
            cellular,
            home,
            leg,
            rng,
            ap,
            wlan_infrastructure,
            alpha: cfg.link.path_loss_exponent,
            domain: mob.domain,
            max_speed_mps: max_speed,
            level_idx,
            pause_s: mob.pause_s,
            horizon: SimTime::from_secs(cfg.scenario.horizon_s),
            protocol,
            timers: cfg.routing.timers(),
            queue_timeout_s: cfg.routing.queue_timeout_s,
            grace_s: cfg.routing.reconfigure_grace_s,
            tick_s: cfg.control.maintenance_tick_s,
            ctrl_latency_s: cfg.control.latency_s,
            cms_enabled: ov.cms_enabled.unwrap_or(cfg.cms.enabled),
            policies,
            profiles,
            kb: KnowledgeBase::new(),
            poor_rate_threshold: if cfg.cms.aggregation_policy {
                cfg.cms.aggregation_min_rate_bps
            } else {
                0.0
            },
            phase: PowerPhase::new(1).unwrap(),
            flows,
            flows_by_src,
            ons: Vec::new(),
            next_on_id: 0,
            infra_tx: (0..n)
                .map(|_| InfraTx {
                    busy_until: SimTime::ZERO,
                    current: None,
                    pending: VecDeque::new(),
                })
                .collect(),
            packets: Vec::new(),
            on_log: Vec::new(),
            power_timeline: Vec::new(),
            on_mode_power_mw: None,
            transmit_joules: 0.0,
            last_delivery_s: 0.0,
            control_overhead_bytes: 0,
            positions: Vec::new(),
            log_positions: cfg.output.log_positions,
        }
    }

    // -- geometry ------------------------------------------------------------

    fn position(&self, node: NodeId, t: SimTime) -> Position {
        match &self.leg[node.0] {
            Some(leg) => position_on(leg, t),
            None => self.home[node.0],
        }
    }

    fn distance(&self, a: NodeId, b: NodeId, t: SimTime) -> f64 {
        self.position(a, t).distance_to(self.position(b, t))
    }

    /// WLAN link feasibility by geometry and configured power, ignoring the
    /// power-accounting activity flag (an idle interface can be enabled the
    /// moment a network forms).
    fn wlan_peer_feasible(&self, a: NodeId, b: NodeId, t: SimTime) -> bool {
        let (Some(ia), Some(ib)) = (&self.wlan[a.0], &self.wlan[b.0]) else {
            return false;
        };
        self.distance(a, b, t)
            <= ia
                .coverage_range_m(self.alpha)
                .min(ib.coverage_range_m(self.alpha))
    }

    fn wlan_link_rate(&self, a: NodeId, b: NodeId) -> f64 {
        match (&self.wlan[a.0], &self.wlan[b.0]) {
            (Some(ia), Some(ib)) => ia.rate_bps.min(ib.rate_bps),
            _ => 0.0,
        }
    }

    /// Whether a terminal sits inside the access point's WLAN coverage.
    /// Association is gated by the AP's range alone: a phase that trims the
    /// AP's transmit power shrinks the cell, while terminal power affects
    /// only the peer-to-peer fabric.
    fn wlan_infra_feasible(&self, node: NodeId, t: SimTime) -> bool {
        if !self.wlan_infrastructure || self.wlan[node.0].is_none() {
            return false;
        }
        let ap_iface = self.wlan[self.ap.0].as_ref().expect("AP offers WLAN");
        self.distance(node, self.ap, t) <= ap_iface.coverage_range_m(self.alpha)
    }

    /// Best direct infrastructure service for a node: WLAN association when
    /// the AP offers it and the node is in range, or the cellular link.
    /// Ignores opportunistic re-homing, so the answer describes what the
    /// infrastructure alone offers at `t`.
    fn direct_service(&self, node: NodeId, t: SimTime) -> Option<f64> {
        if node == self.ap {
            return None;
        }
        let mut best: Option<f64> = None;
        if self.wlan_infra_feasible(node, t) {
            best = Some(self.wlan_link_rate(node, self.ap));
        }
        if let (Some(ic), Some(ap_c)) = (&self.cellular[node.0], &self.cellular[self.ap.0]) {
            let reach = ic
                .coverage_range_m(self.alpha)
                .min(ap_c.coverage_range_m(self.alpha));
            if self.distance(node, self.ap, t) <= reach {
                let rate = ic.rate_bps;
                best = Some(best.map_or(rate, |b: f64| b.max(rate)));
            }
        }
        best
    }

    /// The rate a node's own infrastructure transmissions get (bulk direct
    /// sends): cellular when present, else the WLAN association.
    fn infra_tx_rate(&self, node: NodeId, t: SimTime) -> Option<f64> {
        if let Some(ic) = &self.cellular[node.0]
            && self.cellular[self.ap.0].is_some() {
                return Some(ic.rate_bps);
            }
        if self.wlan_infra_feasible(node, t) {
            return Some(self.wlan_link_rate(node, self.ap));
        }
        None
    }

    /// Peer-link graph over all non-AP terminals (the ad-hoc fabric).
    fn peer_graph(&self, t: SimTime) -> LinkGraph {
        let n = self.names.len();
        let mut g = LinkGraph::new(n);
        for i in 0..n {
            if NodeId(i) == self.ap || self.wlan[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if NodeId(j) == self.ap || self.wlan[j].is_none() {
                    continue;
                }
                if self.wlan_peer_feasible(NodeId(i), NodeId(j), t) {
                    g.add_link(NodeId(i), NodeId(j));
                }
            }
        }
        g
    }

    // -- power accounting ------------------------------------------------------

    fn total_power_mw(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.names.len() {
            if let Some(w) = &self.wlan[i]
                && w.active {
                    total += w.effective_power_w();
                }
            if let Some(c) = &self.cellular[i]
                && c.active {
                    total += c.effective_power_w();
                }
        }
        total * 1000.0
    }

    fn record_power(&mut self, t: SimTime) {
        let mw = self.total_power_mw();
        if let Some((_, last)) = self.power_timeline.last()
            && (*last - mw).abs() < 1e-12 {
                return;
            }
        self.power_timeline.push((t, mw));
    }

    fn apply_phase(&mut self, phase: PowerPhase, t: SimTime) {
        self.phase = phase;
        for (i, iface) in self.wlan.iter_mut().enumerate() {
            if let Some(w) = iface {
                w.power_fraction = if NodeId(i) == self.ap {
                    phase.ap_fraction()
                } else {
                    phase.mt_fraction()
                };
            }
        }
        self.record_power(t);
    }

    fn radio_power_w(&self, node: NodeId, kind: InterfaceKind) -> f64 {
        let iface = match kind {
            InterfaceKind::WlanG => &self.wlan[node.0],
            InterfaceKind::Cell3g => &self.cellular[node.0],
        };
        iface.as_ref().map(|i| i.effective_power_w()).unwrap_or(0.0)
    }

    // -- context ---------------------------------------------------------------

    fn build_context(&self, t: SimTime) -> ContextSnapshot {
        let n = self.names.len();
        let peer_graph = self.peer_graph(t);
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let id = NodeId(i);
            let direct = self.direct_service(id, t);
            let neighbors = peer_graph
                .neighbors(id)
                .iter()
                .map(|&m| (m, self.wlan_link_rate(id, m)))
                .collect();
            let offered: f64 = self
                .flows_by_src
                .get(&id)
                .map(|ids| {
                    ids.iter()
                        .map(|fid| {
                            let f = &self.flows[fid.0];
                            match f.spec.kind {
                                FlowKind::VoipG711 => 80_000.0,
                                FlowKind::Bulk => {
                                    8.0 * f.spec.message_bytes as f64 * f.bulk_remaining as f64
                                }
                            }
                        })
                        .sum()
                })
                .unwrap_or(0.0);
            nodes.push(NodeContext {
                node: id,
                in_coverage: id == self.ap || direct.is_some(),
                serving_rate_bps: direct.unwrap_or(0.0),
                neighbors,
                offered_load_bps: offered,
                mobility_level_idx: if self.rng[i].is_some() { self.level_idx } else { 0 },
            });
        }
        ContextSnapshot {
            t,
            phase: self.phase,
            nodes,
        }
    }

    // -- route helpers -----------------------------------------------------------

    /// The full radio path of a subject served by an ON: its relay chain to
    /// the gateway, then the gateway's infrastructure hop when that hop is a
    /// WLAN link to the AP. (Cellular gateway hops are store-and-forward and
    /// handled by the bulk queue instead.)
    fn voip_radio_path(&self, on: &OnRuntime, subject: NodeId) -> Option<Vec<NodeId>> {
        let route = on.desc.route_for(subject)?;
        let mut path = route.nodes.clone();
        if self.wlan_infrastructure {
            path.push(self.ap);
        }
        Some(path)
    }

    fn path_feasible(&self, path: &[NodeId], t: SimTime) -> bool {
        path.windows(2).all(|w| {
            if w[0] == self.ap || w[1] == self.ap {
                let terminal = if w[0] == self.ap { w[1] } else { w[0] };
                self.wlan_infra_feasible(terminal, t)
            } else {
                self.wlan_peer_feasible(w[0], w[1], t)
            }
        })
    }

    /// One-way latency along a WLAN path for a packet of `bytes`.
    fn path_latency_s(&self, path: &[NodeId], bytes: u64) -> f64 {
        path.windows(2)
            .map(|w| {
                self.timers.per_hop_overhead_s
                    + 8.0 * bytes as f64 / self.wlan_link_rate(w[0], w[1])
            })
            .sum()
    }

    /// Transmit airtime energy for sending `bytes` along the path.
    fn charge_path_airtime(&mut self, path: &[NodeId], bytes: u64) {
        let mut joules = 0.0;
        for w in path.windows(2) {
            let rate = self.wlan_link_rate(w[0], w[1]);
            joules += self.radio_power_w(w[0], InterfaceKind::WlanG) * 8.0 * bytes as f64 / rate;
        }
        self.transmit_joules += joules;
    }

    fn direct_voip_path(&self, src: NodeId) -> Vec<NodeId> {
        vec![src, self.ap]
    }

    fn oriented(path_up: &[NodeId], dir: Direction) -> Vec<NodeId> {
        match dir {
            Direction::Uplink => path_up.to_vec(),
            Direction::Downlink => path_up.iter().rev().copied().collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Run driver

/// Executes one simulation run.
pub fn run(cfg: &ScenarioConfig, overrides: &RunOverrides) -> RunOutput {
    let seed = overrides.seed.unwrap_or(cfg.scenario.master_seed);
    let mut kernel: Kernel<Ev> = Kernel::new(seed);
    let mut world = World::build(cfg, overrides, &kernel);
    let horizon = world.horizon;

    // Initial schedule; insertion order fixes same-time dispatch order:
    // phase changes, topology refresh, management tick, mobility, traffic.
    match overrides.phase {
        Some(p) => {
            kernel
                .schedule(SimTime::ZERO, Ev::PhaseChange { phase: p })
                .unwrap();
        }
        None => {
            for entry in &cfg.phases.schedule {
                let at = SimTime::from_secs(entry.at_s);
                if at <= horizon {
                    kernel
                        .schedule(
                            at,
                            Ev::PhaseChange {
                                phase: PowerPhase::new(entry.phase).expect("validated phase"),
                            },
                        )
                        .unwrap();
                }
            }
        }
    }
    if world.protocol == ProtocolKind::Proactive {
        kernel.schedule(SimTime::ZERO, Ev::TopologyTick).unwrap();
    }
    kernel.schedule(SimTime::ZERO, Ev::Tick).unwrap();
    for i in 0..world.names.len() {
        if world.rng[i].is_some() {
            let node = NodeId(i);
            let origin = world.home[i];
            let leg = {
                let rng = world.rng[i].as_mut().unwrap();
                next_leg(origin, SimTime::ZERO, world.max_speed_mps, &world.domain, rng)
            };
            let arrive = leg.arrive_at;
            world.leg[i] = Some(leg);
            kernel.schedule(arrive, Ev::WaypointReached { node }).unwrap();
        }
    }
    for f in 0..world.flows.len() {
        let flow = FlowId(f);
        match world.flows[f].spec.kind {
            FlowKind::VoipG711 => {
                if voip_emit_times(horizon).next().is_some() {
                    for dir in [Direction::Uplink, Direction::Downlink] {
                        kernel
                            .schedule(SimTime::ZERO, Ev::VoipEmit { flow, dir, seq: 0 })
                            .unwrap();
                    }
                }
            }
            FlowKind::Bulk => {
                for msg in 0..world.flows[f].spec.message_count {
                    kernel.schedule(SimTime::ZERO, Ev::BulkEmit { flow, msg }).unwrap();
                }
            }
        }
    }

    // Initialize service states as of t=0 (the t=0 tick may upgrade them).
    for f in 0..world.flows.len() {
        let src = world.flows[f].spec.src;
        world.flows[f].service = if world.direct_service(src, SimTime::ZERO).is_some() {
            Service::Direct
        } else {
            Service::Unserved
        };
    }

    kernel.run_until(horizon, |k, ev| world.handle(k, ev));
    world.finalize(&mut kernel);

    let consumers: Vec<NodeId> = world
        .roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == Role::Consumer)
        .map(|(i, _)| NodeId(i))
        .collect();
    RunOutput {
        scenario_name: cfg.scenario.name.clone(),
        seed,
        protocol: world.protocol,
        mobility_level_mps: world.max_speed_mps,
        final_phase: world.phase,
        node_names: world.names,
        consumers,
        packets: world.packets,
        on_log: world.on_log,
        knowledge: world.kb.records().cloned().collect(),
        power_timeline: world.power_timeline,
        on_mode_power_mw: world.on_mode_power_mw,
        transmit_joules: world.transmit_joules,
        last_delivery_s: world.last_delivery_s,
        control_overhead_bytes: world.control_overhead_bytes,
        trace_digest: kernel.trace().digest_hex(),
        events_dispatched: kernel.trace().len(),
        positions: world.positions,
        trace: kernel.into_trace(),
    }
}

impl World {
    fn handle(&mut self, kernel: &mut Kernel<Ev>, ev: Event<Ev>) {
        let t = ev.fire_at;
        match ev.payload {
            Ev::PhaseChange { phase } => self.on_phase_change(kernel, phase, t),
            Ev::Tick => self.on_tick(kernel, t),
            Ev::TopologyTick => self.on_topology_tick(kernel, t),
            Ev::WaypointReached { node } => {
                kernel
                    .schedule(t.after(self.pause_s), Ev::PauseEnd { node })
                    .unwrap();
            }
            Ev::PauseEnd { node } => {
                let origin = self.position(node, t);
                let leg = {
                    let rng = self.rng[node.0].as_mut().expect("pause on mobile node");
                    next_leg(origin, t, self.max_speed_mps, &self.domain, rng)
                };
                let arrive = leg.arrive_at;
                self.leg[node.0] = Some(leg);
                kernel.schedule(arrive, Ev::WaypointReached { node }).unwrap();
            }
            Ev::VoipEmit { flow, dir, seq } => self.on_voip_emit(kernel, flow, dir, seq, t),
            Ev::Delivered { .. } => {}
            Ev::RepairAttempt { on } => self.on_repair_attempt(kernel, on, t),
            Ev::FormationComplete { on } => self.on_formation_complete(kernel, on, t),
            Ev::CpcDelivered { .. } | Ev::CcrDelivered { .. } => {}
            Ev::BulkEmit { flow, msg } => self.on_bulk_emit(kernel, flow, msg, t),
            Ev::BulkHop { flow, msg, pos } => self.on_bulk_hop(kernel, flow, msg, pos, t),
            Ev::BulkInfraDone { node } => self.on_bulk_infra_done(kernel, node, t),
        }
    }

    fn on_phase_change(&mut self, kernel: &mut Kernel<Ev>, phase: PowerPhase, t: SimTime) {
        self.apply_phase(phase, t);
        // Pilot-channel broadcast of the new configuration to every
        // in-coverage terminal.
        if self.cms_enabled {
            let snapshot = self.build_context(t);
            for id in cms::cpc_targets(&snapshot, self.ap) {
                self.control_overhead_bytes += CONTROL_MSG_BYTES;
                kernel
                    .schedule(t.after(self.ctrl_latency_s), Ev::CpcDelivered { to: id })
                    .unwrap();
            }
        }
    }

    // -- management tick ---------------------------------------------------------

    fn on_tick(&mut self, kernel: &mut Kernel<Ev>, t: SimTime) {
        if self.log_positions {
            for i in 0..self.names.len() {
                let p = self.position(NodeId(i), t);
                self.positions.push(PositionSample {
                    t,
                    node: NodeId(i),
                    x: p.x,
                    y: p.y,
                });
            }
        }
        if self.cms_enabled {
            let snapshot = self.build_context(t);
            self.maintain_ons(kernel, &snapshot, t);
            self.detect_new_ons(kernel, &snapshot, t);
        }
        // Settle the fate of buffered packets that outlived their patience.
        let subjects: Vec<NodeId> = self.flows_by_src.keys().copied().collect();
        for s in subjects {
            self.expire_stale_queue(s, t);
        }
        let next = t.after(self.tick_s);
        if next <= self.horizon {
            kernel.schedule(next, Ev::Tick).unwrap();
        }
    }

    /// Whether the condition that motivated the network still holds,
    /// evaluated against what the infrastructure alone would offer.
    fn trigger_holds(&self, on: &OnRuntime, t: SimTime) -> bool {
        on.desc.subjects.iter().any(|s| match on.desc.trigger_kind {
            TriggerKind::CoverageGap => self.direct_service(*s, t).is_none(),
            TriggerKind::PoorChannel => self
                .direct_service(*s, t)
                .is_none_or(|rate| rate < self.poor_rate_threshold),
            _ => false,
        })
    }

    fn maintain_ons(&mut self, kernel: &mut Kernel<Ev>, snapshot: &ContextSnapshot, t: SimTime) {
        for idx in 0..self.ons.len() {
            if self.ons[idx].desc.state == OnState::Terminated {
                continue;
            }
            if !self.trigger_holds(&self.ons[idx], t) {
                self.terminate_on(kernel, idx, t, "completed", true);
                continue;
            }
            match self.ons[idx].desc.state {
                OnState::Active => {
                    let healthy = {
                        let on = &self.ons[idx];
                        self.direct_service(on.desc.gateway, t).is_some()
                            && on.desc.subjects.iter().all(|s| {
                                self.voip_radio_path(on, *s)
                                    .map(|p| self.path_feasible(&p, t))
                                    .unwrap_or(false)
                            })
                    };
                    if !healthy && !self.ons[idx].repair_pending {
                        self.ons[idx].repair_pending = true;
                        let on_id = self.ons[idx].desc.id;
                        kernel
                            .schedule(
                                t.after(self.timers.break_detect_s),
                                Ev::RepairAttempt { on: on_id },
                            )
                            .unwrap();
                    }
                }
                OnState::Reconfiguring => {
                    if !self.ons[idx].handshake_pending {
                        self.attempt_reconfigure(kernel, idx, snapshot, t);
                    }
                }
                OnState::Forming | OnState::Terminated => {}
            }
        }
    }

    fn attempt_reconfigure(
        &mut self,
        kernel: &mut Kernel<Ev>,
        idx: usize,
        snapshot: &ContextSnapshot,
        t: SimTime,
    ) {
        let policy = self.policies[self.ons[idx].policy_idx].clone();
        let subjects = self.ons[idx].desc.subjects.clone();
        match select_participants(&subjects, snapshot, &self.profiles, &policy) {
            Ok(sel) => {
                let protocol = self.protocol;
                let on = &mut self.ons[idx];
                on.desc.participants = sel.participants.clone();
                on.desc.gateway = sel.gateway;
                on.desc.routes = sel
                    .routes
                    .iter()
                    .map(|(s, p)| (*s, Route::new(p.clone(), t, protocol)))
                    .collect();
                on.handshake_pending = true;
                let on_id = on.desc.id;
                self.schedule_handshake(kernel, on_id, t);
            }
            Err(_) => {
                let since = self.ons[idx].reconf_since.unwrap_or(t);
                if t.as_secs() - since.as_secs() >= self.grace_s {
                    self.terminate_on(kernel, idx, t, "abandoned", false);
                }
            }
        }
    }

    fn detect_new_ons(&mut self, kernel: &mut Kernel<Ev>, snapshot: &ContextSnapshot, t: SimTime) {
        let triggers = cms::evaluate_policies(snapshot, &self.policies);
        if triggers.is_empty() {
            return;
        }
        let peer_graph = snapshot.peer_graph();
        // Subjects already covered by a live network need no new decision;
        // the knowledge base is consulted only when formation work remains.
        let mut work: Vec<(Trigger, usize, Vec<Vec<NodeId>>)> = Vec::new();
        for trigger in triggers {
            let policy_idx = self
                .policies
                .iter()
                .position(|p| {
                    matches!(
                        (&p.rule, trigger.kind),
                        (PolicyRule::CoverageGap, TriggerKind::CoverageGap)
                            | (PolicyRule::PoorChannel { .. }, TriggerKind::PoorChannel)
                    )
                })
                .expect("trigger produced by a configured policy");
            let unserved: Vec<NodeId> = trigger
                .subjects
                .iter()
                .copied()
                .filter(|s| {
                    self.flows_by_src.get(s).is_some_and(|ids| {
                        ids.iter().any(|fid| {
                            !matches!(self.flows[fid.0].service, Service::On(on_id)
                                if self.on_runtime(on_id).desc.state != OnState::Terminated)
                        })
                    })
                })
                .collect();
            if !unserved.is_empty() {
                let groups = peer_graph.components_within(&unserved);
                work.push((trigger, policy_idx, groups));
            }
        }
        if work.is_empty() {
            return;
        }
        let kb_decision: Option<(Vec<OnPlan>, bool)> = {
            let sig = signature_of(snapshot, self.poor_rate_threshold);
            self.kb
                .lookup(sig)
                .map(|rec| (rec.decision.clone(), rec.outcome.success))
        };
        for (trigger, policy_idx, groups) in work {
            for group in groups {
                self.form_on_for_group(kernel, snapshot, &group, &trigger, policy_idx, &kb_decision, t);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn form_on_for_group(
        &mut self,
        kernel: &mut Kernel<Ev>,
        snapshot: &ContextSnapshot,
        group: &[NodeId],
        trigger: &Trigger,
        policy_idx: usize,
        kb_decision: &Option<(Vec<OnPlan>, bool)>,
        t: SimTime,
    ) {
        // A successful remembered decision for the same situation is replayed
        // without candidate evaluation, provided it is still feasible.
        let mut reuse: Option<OnPlan> = None;
        if let Some((plans, true)) = kb_decision
            && let Some(plan) = plans
                .iter()
                .find(|p| p.trigger_kind == trigger.kind && p.subjects == group)
                && self.plan_feasible(plan, t) {
                    reuse = Some(plan.clone());
                }
        let (selection, kb_hit) = match reuse {
            Some(plan) => {
                let graph = self.participant_graph(&plan.participants, t);
                let routes: Vec<(NodeId, Vec<NodeId>)> = plan
                    .subjects
                    .iter()
                    .map(|s| {
                        (*s, graph.min_hop_route(*s, plan.gateway).expect("feasible plan"))
                    })
                    .collect();
                (
                    crate::lifecycle::Selection {
                        subjects: plan.subjects.clone(),
                        participants: plan.participants.iter().copied().collect(),
                        gateway: plan.gateway,
                        routes,
                        eval_steps: 0,
                    },
                    true,
                )
            }
            None => {
                let policy = self.policies[policy_idx].clone();
                match select_participants(group, snapshot, &self.profiles, &policy) {
                    Ok(sel) => (sel, false),
                    Err(_) => {
                        // No candidate relay: the subjects stay unserved and
                        // the next tick retries.
                        for s in group {
                            self.set_service(*s, Service::Unserved);
                        }
                        return;
                    }
                }
            }
        };

        let id = OnId(self.next_on_id);
        self.next_on_id += 1;
        let desc = descriptor_from_selection(id, trigger.kind, &selection, self.protocol, t);
        let signature = signature_of(snapshot, self.poor_rate_threshold);
        for s in &selection.subjects {
            self.set_service(*s, Service::On(id));
        }
        self.ons.push(OnRuntime {
            desc,
            signature,
            policy_idx,
            repair_pending: false,
            handshake_pending: true,
            reconf_since: None,
            eval_steps: selection.eval_steps,
            kb_hit,
            served_packets: 0,
            delay_sum_s: 0.0,
        });
        self.schedule_handshake(kernel, id, t);
    }

    fn plan_feasible(&self, plan: &OnPlan, t: SimTime) -> bool {
        if self.direct_service(plan.gateway, t).is_none() {
            return false;
        }
        let graph = self.participant_graph(&plan.participants, t);
        plan.subjects
            .iter()
            .all(|s| graph.min_hop_route(*s, plan.gateway).is_some())
    }

    fn participant_graph(&self, participants: &[NodeId], t: SimTime) -> LinkGraph {
        let mut g = LinkGraph::new(self.names.len());
        for (i, a) in participants.iter().enumerate() {
            for b in participants.iter().skip(i + 1) {
                if self.wlan_peer_feasible(*a, *b, t) {
                    g.add_link(*a, *b);
                }
            }
        }
        g
    }

    /// Formation/reconfiguration handshake: one pilot notification plus one
    /// peer round trip per participant, in parallel. The network goes live
    /// three control latencies after the decision.
    fn schedule_handshake(&mut self, kernel: &mut Kernel<Ev>, on_id: OnId, t: SimTime) {
        let (gateway, participants): (NodeId, Vec<NodeId>) = {
            let on = self.on_runtime(on_id);
            (on.desc.gateway, on.desc.participants.iter().copied().collect())
        };
        for p in &participants {
            self.control_overhead_bytes += CONTROL_MSG_BYTES * 3;
            kernel
                .schedule(t.after(self.ctrl_latency_s), Ev::CpcDelivered { to: *p })
                .unwrap();
            if *p != gateway {
                kernel
                    .schedule(
                        t.after(2.0 * self.ctrl_latency_s),
                        Ev::CcrDelivered {
                            from: gateway,
                            to: *p,
                            kind: "invite",
                        },
                    )
                    .unwrap();
                kernel
                    .schedule(
                        t.after(3.0 * self.ctrl_latency_s),
                        Ev::CcrDelivered {
                            from: *p,
                            to: gateway,
                            kind: "accept",
                        },
                    )
                    .unwrap();
            }
        }
        kernel
            .schedule(
                t.after(3.0 * self.ctrl_latency_s),
                Ev::FormationComplete { on: on_id },
            )
            .unwrap();
    }

    fn on_runtime(&self, id: OnId) -> &OnRuntime {
        self.ons.iter().find(|o| o.desc.id == id).expect("known ON id")
    }

    fn on_index(&self, id: OnId) -> usize {
        self.ons
            .iter()
            .position(|o| o.desc.id == id)
            .expect("known ON id")
    }

    fn on_formation_complete(&mut self, kernel: &mut Kernel<Ev>, on_id: OnId, t: SimTime) {
        let idx = self.on_index(on_id);
        if self.ons[idx].desc.state == OnState::Terminated {
            return;
        }
        self.ons[idx].handshake_pending = false;
        let routes_ok = {
            let on = &self.ons[idx];
            self.direct_service(on.desc.gateway, t).is_some()
                && on.desc.subjects.iter().all(|s| {
                    self.voip_radio_path(on, *s)
                        .map(|p| self.path_feasible(&p, t))
                        .unwrap_or(false)
                })
        };
        let was_forming = self.ons[idx].desc.state == OnState::Forming;
        if !routes_ok {
            if was_forming {
                self.terminate_on(kernel, idx, t, "formation-failed", false);
            }
            // A reconfiguration that went stale during the handshake stays in
            // Reconfiguring; the next tick retries while the grace clock runs.
            return;
        }
        self.ons[idx]
            .desc
            .transition(OnState::Active, t)
            .expect("legal activation");
        self.ons[idx].reconf_since = None;
        self.ons[idx].repair_pending = false;
        self.apply_rehoming(t);
        self.on_mode_power_mw = Some(self.total_power_mw());
        // First data flows after route discovery on the fresh topology.
        let subjects = self.ons[idx].desc.subjects.clone();
        for s in subjects {
            let path = {
                let on = &self.ons[idx];
                self.voip_radio_path(on, s).expect("routes just validated")
            };
            let extra = if self.protocol == ProtocolKind::Reactive {
                (path.len() - 1) as f64 * self.timers.discovery_rtt_s_per_hop
            } else {
                0.0
            };
            self.flush_subject_queues(kernel, s, &path, t, extra);
            self.start_pending_bulk(kernel, s, on_id, t);
        }
    }

    /// Re-derives which interfaces are powered from current service state:
    /// cellular is on unless the node's flows ride an active ON; terminal
    /// WLAN without a WLAN infrastructure is on only inside a live ON.
    fn apply_rehoming(&mut self, t: SimTime) {
        let n = self.names.len();
        let mut on_member = vec![false; n];
        let mut rehomed = vec![false; n];
        for on in &self.ons {
            if matches!(on.desc.state, OnState::Active | OnState::Reconfiguring) {
                for p in &on.desc.participants {
                    on_member[p.0] = true;
                }
                if on.desc.state == OnState::Active {
                    for s in &on.desc.subjects {
                        rehomed[s.0] = true;
                    }
                }
            }
        }
        for i in 0..n {
            if NodeId(i) == self.ap {
                continue;
            }
            if let Some(c) = &mut self.cellular[i] {
                c.active = !rehomed[i];
            }
            if let Some(w) = &mut self.wlan[i]
                && !self.wlan_infrastructure {
                    w.active = on_member[i];
                }
        }
        self.record_power(t);
    }

    fn set_service(&mut self, node: NodeId, service: Service) {
        if let Some(ids) = self.flows_by_src.get(&node) {
            for fid in ids.clone() {
                self.flows[fid.0].service = service;
            }
        }
    }

    fn terminate_on(
        &mut self,
        kernel: &mut Kernel<Ev>,
        idx: usize,
        t: SimTime,
        outcome: &'static str,
        success: bool,
    ) {
        if self.ons[idx].desc.state == OnState::Terminated {
            return;
        }
        self.ons[idx]
            .desc
            .transition(OnState::Terminated, t)
            .expect("termination is reachable from every live state");
        let subjects = self.ons[idx].desc.subjects.clone();
        // Re-home each subject: direct service when available, otherwise the
        // node is unserved until a later decision covers it again.
        for s in &subjects {
            if self.direct_service(*s, t).is_some() {
                self.set_service(*s, Service::Direct);
                if self.wlan_infrastructure {
                    let path_up = self.direct_voip_path(*s);
                    self.flush_subject_queues(kernel, *s, &path_up, t, 0.0);
                }
                self.start_pending_bulk_direct(kernel, *s, t);
            } else {
                // Still uncovered: the queue survives and a later formation
                // flushes it (subject to the per-packet patience window).
                self.set_service(*s, Service::Unserved);
                self.expire_stale_queue(*s, t);
            }
        }
        self.apply_rehoming(t);
        // Write the outcome into the knowledge base under the formation-time
        // signature, merging with sibling decisions already recorded there.
        let (signature, plan, served, delay_sum) = {
            let on = &self.ons[idx];
            (on.signature, on.desc.plan(), on.served_packets, on.delay_sum_s)
        };
        let mean_delay = if served > 0 { delay_sum / served as f64 } else { 0.0 };
        let mut decision: Vec<OnPlan> = self
            .kb
            .records()
            .find(|r| r.signature == signature)
            .map(|r| r.decision.clone())
            .unwrap_or_default();
        decision.retain(|p| p.subjects != plan.subjects || p.trigger_kind != plan.trigger_kind);
        decision.push(plan);
        decision.sort_by(|a, b| a.subjects.cmp(&b.subjects));
        self.kb.learn(KnowledgeRecord {
            signature,
            decision,
            outcome: DecisionOutcome {
                mean_delay_s: mean_delay,
                power_mw: self.total_power_mw(),
                success,
            },
            hit_count: 0,
        });
        let entry = {
            let on = &self.ons[idx];
            OnLogEntry {
                id: on.desc.id,
                trigger_kind: on.desc.trigger_kind,
                subjects: on.desc.subjects.clone(),
                participants: on.desc.participants.iter().copied().collect(),
                gateway: on.desc.gateway,
                created_at: on.desc.created_at,
                activated_at: on.desc.activated_at,
                terminated_at: on.desc.terminated_at,
                outcome,
                eval_steps: on.eval_steps,
                kb_hit: on.kb_hit,
            }
        };
        self.on_log.push(entry);
    }

    // -- VoIP --------------------------------------------------------------------

    fn on_voip_emit(
        &mut self,
        kernel: &mut Kernel<Ev>,
        flow_id: FlowId,
        dir: Direction,
        seq: u32,
        t: SimTime,
    ) {
        let next = t.after(crate::traffic::VOIP_INTERVAL_S);
        if next < self.horizon {
            kernel
                .schedule(next, Ev::VoipEmit { flow: flow_id, dir, seq: seq + 1 })
                .unwrap();
        }

        let src = self.flows[flow_id.0].spec.src;
        match self.flows[flow_id.0].service {
            Service::Direct => {
                if self.wlan_infrastructure && self.direct_service(src, t).is_some() {
                    let path_up = self.direct_voip_path(src);
                    let path = World::oriented(&path_up, dir);
                    self.deliver_voip(kernel, flow_id, dir, seq, t, t, &path, 0.0);
                } else {
                    // Coverage vanished between ticks; the management layer
                    // reacts at the next tick.
                    self.record_drop(flow_id, dir, seq, t, DropReason::Unserved);
                }
            }
            Service::On(on_id) => {
                let idx = self.on_index(on_id);
                match self.ons[idx].desc.state {
                    OnState::Forming | OnState::Reconfiguring => {
                        self.flows[flow_id.0].queue.push_back(QueuedPacket {
                            seq,
                            dir,
                            created_at: t,
                        });
                    }
                    OnState::Active => {
                        if self.ons[idx].repair_pending {
                            self.flows[flow_id.0].queue.push_back(QueuedPacket {
                                seq,
                                dir,
                                created_at: t,
                            });
                            return;
                        }
                        let path_up = self
                            .voip_radio_path(&self.ons[idx], src)
                            .expect("active ON routes its subjects");
                        if self.path_feasible(&path_up, t) {
                            let path = World::oriented(&path_up, dir);
                            let latency = self.path_latency_s(&path, VOIP_PACKET_BYTES);
                            self.deliver_voip(kernel, flow_id, dir, seq, t, t, &path, 0.0);
                            let on = &mut self.ons[idx];
                            on.served_packets += 1;
                            on.delay_sum_s += latency;
                        } else if self.protocol == ProtocolKind::Reactive {
                            // Break discovered by traffic: detection delay,
                            // then a repair attempt; this packet waits.
                            self.ons[idx].repair_pending = true;
                            kernel
                                .schedule(
                                    t.after(self.timers.break_detect_s),
                                    Ev::RepairAttempt { on: on_id },
                                )
                                .unwrap();
                            self.flows[flow_id.0].queue.push_back(QueuedPacket {
                                seq,
                                dir,
                                created_at: t,
                            });
                        } else {
                            // Proactive: the stale route drops traffic until
                            // the next topology refresh.
                            self.record_drop(flow_id, dir, seq, t, DropReason::StaleRoute);
                        }
                    }
                    OnState::Terminated => {
                        self.record_drop(flow_id, dir, seq, t, DropReason::Unserved);
                    }
                }
            }
            Service::Unserved => {
                // The application keeps handing packets to the stack; they
                // sit in the send buffer until service resumes or the
                // retransmission patience expires.
                self.flows[flow_id.0].queue.push_back(QueuedPacket {
                    seq,
                    dir,
                    created_at: t,
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn deliver_voip(
        &mut self,
        kernel: &mut Kernel<Ev>,
        flow: FlowId,
        dir: Direction,
        seq: u32,
        created_at: SimTime,
        depart_at: SimTime,
        path: &[NodeId],
        extra_latency_s: f64,
    ) {
        let latency = extra_latency_s + self.path_latency_s(path, VOIP_PACKET_BYTES);
        let delivered_at = depart_at.after(latency);
        self.charge_path_airtime(path, VOIP_PACKET_BYTES);
        self.packets.push(PacketRecord {
            flow,
            flow_label: self.flows[flow.0].spec.label.clone(),
            direction: dir,
            seq,
            created_at,
            delivered_at: Some(delivered_at),
            path: path.to_vec(),
            fate: Fate::Delivered,
        });
        if delivered_at <= self.horizon {
            kernel
                .schedule(delivered_at, Ev::Delivered { flow, dir, seq })
                .unwrap();
        }
    }

    fn record_drop(
        &mut self,
        flow: FlowId,
        dir: Direction,
        seq: u32,
        created_at: SimTime,
        reason: DropReason,
    ) {
        self.packets.push(PacketRecord {
            flow,
            flow_label: self.flows[flow.0].spec.label.clone(),
            direction: dir,
            seq,
            created_at,
            delivered_at: None,
            path: Vec::new(),
            fate: Fate::Dropped(reason),
        });
    }

    /// Delivers (or expires) every packet queued for a subject, given that
    /// service resumed at `t` over `path_up` (uplink orientation).
    fn flush_subject_queues(
        &mut self,
        kernel: &mut Kernel<Ev>,
        subject: NodeId,
        path_up: &[NodeId],
        t: SimTime,
        extra_latency_s: f64,
    ) {
        let Some(flow_ids) = self.flows_by_src.get(&subject).cloned() else {
            return;
        };
        for fid in flow_ids {
            if self.flows[fid.0].spec.kind != FlowKind::VoipG711 {
                continue;
            }
            let service = self.flows[fid.0].service;
            let queued: Vec<QueuedPacket> = self.flows[fid.0].queue.drain(..).collect();
            for pkt in queued {
                let waited = t.as_secs() - pkt.created_at.as_secs();
                if waited > self.queue_timeout_s {
                    self.record_drop(fid, pkt.dir, pkt.seq, pkt.created_at, DropReason::QueueTimeout);
                } else {
                    let path = World::oriented(path_up, pkt.dir);
                    self.deliver_voip(
                        kernel,
                        fid,
                        pkt.dir,
                        pkt.seq,
                        pkt.created_at,
                        t,
                        &path,
                        extra_latency_s,
                    );
                    if let Service::On(on_id) = service {
                        let delay = waited + extra_latency_s
                            + self.path_latency_s(&path, VOIP_PACKET_BYTES);
                        let idx = self.on_index(on_id);
                        self.ons[idx].served_packets += 1;
                        self.ons[idx].delay_sum_s += delay;
                    }
                }
            }
        }
    }

    /// Expires queued packets whose patience window has already lapsed;
    /// they can never be delivered, so their fate is settled eagerly.
    fn expire_stale_queue(&mut self, subject: NodeId, t: SimTime) {
        let Some(flow_ids) = self.flows_by_src.get(&subject).cloned() else {
            return;
        };
        for fid in flow_ids {
            while let Some(pkt) = self.flows[fid.0].queue.front().copied() {
                if t.as_secs() - pkt.created_at.as_secs() > self.queue_timeout_s {
                    self.flows[fid.0].queue.pop_front();
                    self.record_drop(fid, pkt.dir, pkt.seq, pkt.created_at, DropReason::QueueTimeout);
                } else {
                    break;
                }
            }
        }
    }

    fn on_repair_attempt(&mut self, kernel: &mut Kernel<Ev>, on_id: OnId, t: SimTime) {
        let idx = self.on_index(on_id);
        if self.ons[idx].desc.state != OnState::Active || !self.ons[idx].repair_pending {
            return;
        }
        self.ons[idx].repair_pending = false;
        // Route repair within the current participant set.
        let participants: Vec<NodeId> = self.ons[idx].desc.participants.iter().copied().collect();
        let graph = self.participant_graph(&participants, t);
        let gateway = self.ons[idx].desc.gateway;
        let max_hops = self.policies[self.ons[idx].policy_idx].max_hops;
        let mut new_routes: Vec<(NodeId, Vec<NodeId>)> = Vec::new();
        let mut ok = self.direct_service(gateway, t).is_some();
        if ok {
            for s in &self.ons[idx].desc.subjects {
                match graph.min_hop_route(*s, gateway) {
                    Some(p) if p.len() - 1 <= max_hops => new_routes.push((*s, p)),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            let protocol = self.protocol;
            self.ons[idx].desc.routes = new_routes
                .iter()
                .map(|(s, p)| (*s, Route::new(p.clone(), t, protocol)))
                .collect();
            let subjects = self.ons[idx].desc.subjects.clone();
            for s in subjects {
                let path = {
                    let on = &self.ons[idx];
                    self.voip_radio_path(on, s).expect("repaired route exists")
                };
                let extra = (path.len() - 1) as f64 * self.timers.discovery_rtt_s_per_hop;
                self.flush_subject_queues(kernel, s, &path, t, extra);
            }
        } else {
            // Participants cannot fix it; widen the search at tick cadence.
            self.ons[idx]
                .desc
                .transition(OnState::Reconfiguring, t)
                .expect("active network can reconfigure");
            self.ons[idx].reconf_since = Some(t);
        }
    }

    fn on_topology_tick(&mut self, kernel: &mut Kernel<Ev>, t: SimTime) {
        // Refresh the global link-state tables, then re-derive serving routes
        // of live networks from them.
        let mut graph = self.peer_graph(t);
        if self.wlan_infrastructure {
            for i in 0..self.names.len() {
                let id = NodeId(i);
                if id != self.ap && self.wlan_infra_feasible(id, t) {
                    graph.add_link(id, self.ap);
                }
            }
        }
        let tables = ProactiveTables::compute(&graph, t);
        for idx in 0..self.ons.len() {
            if self.ons[idx].desc.state != OnState::Active {
                continue;
            }
            let gateway = self.ons[idx].desc.gateway;
            let subjects = self.ons[idx].desc.subjects.clone();
            let mut routes = Vec::new();
            let mut ok = true;
            for s in &subjects {
                // Routes must stay within the ad-hoc fabric (not through the AP).
                match tables.route(*s, gateway) {
                    Some(p) if !p[..p.len() - 1].contains(&self.ap) => routes.push((*s, p)),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                self.ons[idx].desc.routes = routes
                    .iter()
                    .map(|(s, p)| (*s, Route::new(p.clone(), t, ProtocolKind::Proactive)))
                    .collect();
                for s in subjects {
                    let path = {
                        let on = &self.ons[idx];
                        self.voip_radio_path(on, s).expect("route from tables")
                    };
                    self.flush_subject_queues(kernel, s, &path, t, 0.0);
                }
            } else {
                self.ons[idx]
                    .desc
                    .transition(OnState::Reconfiguring, t)
                    .expect("active network can reconfigure");
                self.ons[idx].reconf_since = Some(t);
            }
        }
        let next = t.after(self.timers.topology_interval_s);
        if next <= self.horizon {
            kernel.schedule(next, Ev::TopologyTick).unwrap();
        }
        self.control_overhead_bytes += CONTROL_MSG_BYTES * self.names.len() as u64;
    }

    // -- bulk -----------------------------------------------------------------

    fn on_bulk_emit(&mut self, kernel: &mut Kernel<Ev>, flow_id: FlowId, msg: u32, t: SimTime) {
        let src = self.flows[flow_id.0].spec.src;
        match self.flows[flow_id.0].service {
            Service::On(on_id) if self.on_runtime(on_id).desc.state == OnState::Active => {
                self.start_bulk_relay(kernel, flow_id, msg, on_id, t);
            }
            Service::On(_) => {
                self.flows[flow_id.0].bulk_pending.push((msg, t));
            }
            Service::Direct => {
                self.enqueue_infra(kernel, src, flow_id, msg, t);
            }
            Service::Unserved => {
                self.flows[flow_id.0].bulk_pending.push((msg, t));
            }
        }
    }

    fn start_pending_bulk(&mut self, kernel: &mut Kernel<Ev>, subject: NodeId, on_id: OnId, t: SimTime) {
        let Some(flow_ids) = self.flows_by_src.get(&subject).cloned() else {
            return;
        };
        for fid in flow_ids {
            let pending: Vec<(u32, SimTime)> = self.flows[fid.0].bulk_pending.drain(..).collect();
            for (msg, _) in pending {
                self.start_bulk_relay(kernel, fid, msg, on_id, t);
            }
        }
    }

    fn start_pending_bulk_direct(&mut self, kernel: &mut Kernel<Ev>, subject: NodeId, t: SimTime) {
        let Some(flow_ids) = self.flows_by_src.get(&subject).cloned() else {
            return;
        };
        for fid in flow_ids {
            let pending: Vec<(u32, SimTime)> = self.flows[fid.0].bulk_pending.drain(..).collect();
            for (msg, _) in pending {
                self.enqueue_infra(kernel, subject, fid, msg, t);
            }
        }
    }

    /// Starts the first peer hop of a relayed bulk message.
    fn start_bulk_relay(
        &mut self,
        kernel: &mut Kernel<Ev>,
        flow_id: FlowId,
        msg: u32,
        on_id: OnId,
        t: SimTime,
    ) {
        let src = self.flows[flow_id.0].spec.src;
        let route = {
            let on = self.on_runtime(on_id);
            on.desc.route_for(src).map(|r| r.nodes.clone())
        };
        let Some(route) = route else {
            self.flows[flow_id.0].bulk_pending.push((msg, t));
            return;
        };
        if route.len() == 1 {
            // The subject is its own gateway; straight to infrastructure.
            self.enqueue_infra(kernel, src, flow_id, msg, t);
            return;
        }
        let bytes = self.flows[flow_id.0].spec.message_bytes;
        let rate = self.wlan_link_rate(route[0], route[1]);
        let dur = 8.0 * bytes as f64 / rate;
        self.transmit_joules += self.radio_power_w(route[0], InterfaceKind::WlanG) * dur;
        kernel
            .schedule(t.after(dur), Ev::BulkHop { flow: flow_id, msg, pos: 1 })
            .unwrap();
    }

    fn on_bulk_hop(
        &mut self,
        kernel: &mut Kernel<Ev>,
        flow_id: FlowId,
        msg: u32,
        pos: usize,
        t: SimTime,
    ) {
        let src = self.flows[flow_id.0].spec.src;
        let route = match self.flows[flow_id.0].service {
            Service::On(on_id) => {
                let on = self.on_runtime(on_id);
                on.desc.route_for(src).map(|r| r.nodes.clone())
            }
            _ => None,
        };
        let Some(route) = route else {
            // The serving network went away mid-flight; fall back to the
            // source's own infrastructure link.
            self.enqueue_infra(kernel, src, flow_id, msg, t);
            return;
        };
        if pos + 1 >= route.len() {
            // Arrived at the gateway: store and forward on its infra link.
            let gateway = *route.last().unwrap();
            self.enqueue_infra(kernel, gateway, flow_id, msg, t);
        } else {
            let bytes = self.flows[flow_id.0].spec.message_bytes;
            let rate = self.wlan_link_rate(route[pos], route[pos + 1]);
            let dur = 8.0 * bytes as f64 / rate;
            self.transmit_joules += self.radio_power_w(route[pos], InterfaceKind::WlanG) * dur;
            kernel
                .schedule(t.after(dur), Ev::BulkHop { flow: flow_id, msg, pos: pos + 1 })
                .unwrap();
        }
    }

    /// First-come-first-served store-and-forward on a node's own
    /// infrastructure link.
    fn enqueue_infra(
        &mut self,
        kernel: &mut Kernel<Ev>,
        node: NodeId,
        flow_id: FlowId,
        msg: u32,
        t: SimTime,
    ) {
        let Some(rate) = self.infra_tx_rate(node, t) else {
            self.flows[flow_id.0].bulk_pending.push((msg, t));
            return;
        };
        if self.infra_tx[node.0].current.is_some() && self.infra_tx[node.0].busy_until > t {
            self.infra_tx[node.0].pending.push_back((flow_id, msg));
            return;
        }
        let bytes = self.flows[flow_id.0].spec.message_bytes;
        let dur = 8.0 * bytes as f64 / rate;
        let done = t.after(dur);
        let kind = if self.cellular[node.0].is_some() {
            InterfaceKind::Cell3g
        } else {
            InterfaceKind::WlanG
        };
        self.transmit_joules += self.radio_power_w(node, kind) * dur;
        self.infra_tx[node.0].current = Some((flow_id, msg));
        self.infra_tx[node.0].busy_until = done;
        kernel.schedule(done, Ev::BulkInfraDone { node }).unwrap();
    }

    fn on_bulk_infra_done(&mut self, kernel: &mut Kernel<Ev>, node: NodeId, t: SimTime) {
        let Some((flow_id, msg)) = self.infra_tx[node.0].current.take() else {
            return;
        };
        // The message reached the core through the AP (zero-latency hop).
        self.flows[flow_id.0].bulk_remaining =
            self.flows[flow_id.0].bulk_remaining.saturating_sub(1);
        let src = self.flows[flow_id.0].spec.src;
        let path = if src == node {
            vec![src, self.ap]
        } else {
            vec![src, node, self.ap]
        };
        self.packets.push(PacketRecord {
            flow: flow_id,
            flow_label: self.flows[flow_id.0].spec.label.clone(),
            direction: Direction::Uplink,
            seq: msg,
            created_at: SimTime::ZERO,
            delivered_at: Some(t),
            path,
            fate: Fate::Delivered,
        });
        self.last_delivery_s = self.last_delivery_s.max(t.as_secs());
        if let Some((next_flow, next_msg)) = self.infra_tx[node.0].pending.pop_front() {
            self.enqueue_infra(kernel, node, next_flow, next_msg, t);
        }
    }

    // -- end of run ---------------------------------------------------------------

    fn finalize(&mut self, kernel: &mut Kernel<Ev>) {
        let t = self.horizon;
        for idx in 0..self.ons.len() {
            if self.ons[idx].desc.state != OnState::Terminated {
                let success = self.ons[idx].served_packets > 0;
                self.terminate_on(kernel, idx, t, "horizon", success);
            }
        }
        // Whatever is still queued never made it.
        for fid in 0..self.flows.len() {
            let queued: Vec<QueuedPacket> = self.flows[fid].queue.drain(..).collect();
            for pkt in queued {
                self.record_drop(FlowId(fid), pkt.dir, pkt.seq, pkt.created_at, DropReason::HorizonEnd);
            }
            let pending: Vec<(u32, SimTime)> = self.flows[fid].bulk_pending.drain(..).collect();
            for (msg, created) in pending {
                self.record_drop(FlowId(fid), Direction::Uplink, msg, created, DropReason::HorizonEnd);
            }
        }
        for node in 0..self.infra_tx.len() {
            if let Some((flow_id, msg)) = self.infra_tx[node].current.take()
                && self.infra_tx[node].busy_until > t {
                    self.record_drop(flow_id, Direction::Uplink, msg, SimTime::ZERO, DropReason::HorizonEnd);
                }
            while let Some((flow_id, msg)) = self.infra_tx[node].pending.pop_front() {
                self.record_drop(flow_id, Direction::Uplink, msg, SimTime::ZERO, DropReason::HorizonEnd);
            }
        }
        self.packets.sort_by(|a, b| {
            (a.flow, a.seq, a.direction as u8).cmp(&(b.flow, b.seq, b.direction as u8))
        });
        if self.power_timeline.is_empty() {
            self.record_power(SimTime::ZERO);
        }
    }
}
