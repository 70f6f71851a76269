//! Declarative scenario configuration: a TOML schema mirroring the runtime
//! model, with strict validation (unknown keys rejected, every referenced
//! node defined, level speeds sorted, positions inside the domain).

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::mobility::{DEFAULT_LEVEL_SPEEDS, DEFAULT_PAUSE_S, Domain, MobilityConfig, Position};
use crate::radio::{DEFAULT_PATH_LOSS_EXPONENT, PowerPhase};
use crate::routing::{ProtocolKind, RoutingTimers};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    pub horizon_s: f64,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
}

fn default_seed() -> u64 {
    1
}
fn default_replications() -> u32 {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    #[serde(default = "default_domain_side")]
    pub width_m: f64,
    #[serde(default = "default_domain_side")]
    pub height_m: f64,
}

fn default_domain_side() -> f64 {
    300.0
}

impl Default for DomainCfg {
    fn default() -> Self {
        DomainCfg {
            width_m: 300.0,
            height_m: 300.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCfg {
    #[serde(default = "default_alpha")]
    pub path_loss_exponent: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_PATH_LOSS_EXPONENT
}

impl Default for LinkCfg {
    fn default() -> Self {
        LinkCfg {
            path_loss_exponent: DEFAULT_PATH_LOSS_EXPONENT,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlCfg {
    #[serde(default = "default_control_latency")]
    pub latency_s: f64,
    #[serde(default = "default_tick")]
    pub maintenance_tick_s: f64,
}

fn default_control_latency() -> f64 {
    crate::cms::DEFAULT_CONTROL_LATENCY_S
}
fn default_tick() -> f64 {
    0.5
}

impl Default for ControlCfg {
    fn default() -> Self {
        ControlCfg {
            latency_s: default_control_latency(),
            maintenance_tick_s: default_tick(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingCfg {
    #[serde(default = "default_protocol")]
    pub protocol: String,
    #[serde(default = "default_hello")]
    pub hello_interval_s: f64,
    #[serde(default = "default_topology")]
    pub topology_interval_s: f64,
    #[serde(default = "default_discovery")]
    pub discovery_rtt_per_hop_s: f64,
    #[serde(default = "default_break_detect")]
    pub break_detect_s: f64,
    #[serde(default = "default_hop_overhead")]
    pub per_hop_overhead_s: f64,
    /// How long a packet may wait in a retransmission queue before it is
    /// counted as lost.
    #[serde(default = "default_queue_timeout")]
    pub queue_timeout_s: f64,
    /// How long an opportunistic network may sit in reconfiguration with no
    /// candidate relay before it is torn down.
    #[serde(default = "default_grace")]
    pub reconfigure_grace_s: f64,
}

fn default_protocol() -> String {
    "reactive".into()
}
fn default_hello() -> f64 {
    1.0
}
fn default_topology() -> f64 {
    2.0
}
fn default_discovery() -> f64 {
    0.030
}
fn default_break_detect() -> f64 {
    0.200
}
fn default_hop_overhead() -> f64 {
    0.0005
}
fn default_queue_timeout() -> f64 {
    2.0
}
fn default_grace() -> f64 {
    2.0
}

impl Default for RoutingCfg {
    fn default() -> Self {
        toml::from_str("").expect("empty routing table must deserialize")
    }
}

impl RoutingCfg {
    pub fn timers(&self) -> RoutingTimers {
        RoutingTimers {
            hello_interval_s: self.hello_interval_s,
            topology_interval_s: self.topology_interval_s,
            discovery_rtt_s_per_hop: self.discovery_rtt_per_hop_s,
            break_detect_s: self.break_detect_s,
            per_hop_overhead_s: self.per_hop_overhead_s,
        }
    }

    pub fn protocol_kind(&self) -> Option<ProtocolKind> {
        ProtocolKind::parse(&self.protocol)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityCfg {
    #[serde(default = "default_levels")]
    pub level_speeds: Vec<f64>,
    /// Maximum speed of mobile nodes for this run; must be one of the
    /// configured level speeds.
    #[serde(default)]
    pub max_speed_mps: f64,
    #[serde(default = "default_pause")]
    pub pause_s: f64,
}

fn default_levels() -> Vec<f64> {
    DEFAULT_LEVEL_SPEEDS.to_vec()
}
fn default_pause() -> f64 {
    DEFAULT_PAUSE_S
}

impl Default for MobilityCfg {
    fn default() -> Self {
        MobilityCfg {
            level_speeds: default_levels(),
            max_speed_mps: 0.0,
            pause_s: DEFAULT_PAUSE_S,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEntry {
    pub at_s: f64,
    pub phase: u8,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesCfg {
    #[serde(default = "default_schedule")]
    pub schedule: Vec<PhaseEntry>,
}

fn default_schedule() -> Vec<PhaseEntry> {
    vec![PhaseEntry { at_s: 0.0, phase: 1 }]
}

impl Default for PhasesCfg {
    fn default() -> Self {
        PhasesCfg {
            schedule: default_schedule(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmsCfg {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Also run the scenario with management disabled and report both, for
    /// before/after comparisons.
    #[serde(default)]
    pub compare_direct: bool,
    #[serde(default = "default_weight")]
    pub qos_weight: f64,
    #[serde(default = "default_weight")]
    pub power_weight: f64,
    #[serde(default = "default_max_hops")]
    pub max_hops: usize,
    #[serde(default = "default_true")]
    pub coverage_policy: bool,
    #[serde(default)]
    pub aggregation_policy: bool,
    #[serde(default = "default_min_rate")]
    pub aggregation_min_rate_bps: f64,
    #[serde(default = "default_voip_delay")]
    pub voip_max_delay_s: f64,
}

fn default_true() -> bool {
    true
}
fn default_weight() -> f64 {
    1.0
}
fn default_max_hops() -> usize {
    3
}
fn default_min_rate() -> f64 {
    1_000_000.0
}
fn default_voip_delay() -> f64 {
    crate::cms::VOIP_MAX_DELAY_S
}

impl Default for CmsCfg {
    fn default() -> Self {
        toml::from_str("").expect("empty cms table must deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    AccessPoint,
    Consumer,
    Intermediate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfaceCfg {
    pub nominal_power_w: f64,
    pub nominal_range_m: f64,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeCfg {
    pub name: String,
    pub role: Role,
    pub position: [f64; 2],
    #[serde(default)]
    pub mobile: bool,
    #[serde(default = "default_true")]
    pub willing_to_relay: bool,
    #[serde(default)]
    pub wlan: Option<IfaceCfg>,
    #[serde(default)]
    pub cellular: Option<IfaceCfg>,
}

impl NodeCfg {
    pub fn position(&self) -> Position {
        Position::new(self.position[0], self.position[1])
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCfg {
    pub kind: FlowKindCfg,
    pub src: String,
    #[serde(default = "default_message_bytes")]
    pub message_bytes: u64,
    #[serde(default = "default_message_count")]
    pub message_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKindCfg {
    Voip,
    Bulk,
}

fn default_message_bytes() -> u64 {
    crate::traffic::DEFAULT_MESSAGE_BYTES
}
fn default_message_count() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    /// Log sampled node positions to positions.csv.
    #[serde(default)]
    pub log_positions: bool,
}

/// A fully described simulation scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioMeta,
    #[serde(default)]
    pub domain: DomainCfg,
    #[serde(default)]
    pub link: LinkCfg,
    #[serde(default)]
    pub control: ControlCfg,
    #[serde(default)]
    pub routing: RoutingCfg,
    #[serde(default)]
    pub mobility: MobilityCfg,
    #[serde(default)]
    pub phases: PhasesCfg,
    #[serde(default)]
    pub cms: CmsCfg,
    pub nodes: Vec<NodeCfg>,
    #[serde(default)]
    pub flows: Vec<FlowCfg>,
    #[serde(default)]
    pub output: OutputCfg,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn mobility_config(&self) -> MobilityConfig {
        MobilityConfig {
            domain: Domain::centered(self.domain.width_m, self.domain.height_m),
            level_speeds: self.mobility.level_speeds.clone(),
            pause_s: self.mobility.pause_s,
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Field-level semantic validation beyond what the schema enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.horizon_s <= 0.0 || !self.scenario.horizon_s.is_finite() {
            return Err(invalid("scenario.horizon_s", "must be positive and finite"));
        }
        if self.scenario.replications == 0 {
            return Err(invalid("scenario.replications", "must be at least 1"));
        }
        if self.domain.width_m <= 0.0 || self.domain.height_m <= 0.0 {
            return Err(invalid("domain", "width and height must be positive"));
        }
        if self.link.path_loss_exponent <= 0.0 {
            return Err(invalid("link.path_loss_exponent", "must be positive"));
        }
        if self.control.latency_s < 0.0 || self.control.maintenance_tick_s <= 0.0 {
            return Err(invalid("control", "latencies must be non-negative, tick positive"));
        }
        if self.routing.protocol_kind().is_none() {
            return Err(invalid(
                "routing.protocol",
                format!(
                    "unknown protocol `{}` (expected reactive/proactive or aodv/dsr/olsr/grp)",
                    self.routing.protocol
                ),
            ));
        }
        for (field, v) in [
            ("routing.hello_interval_s", self.routing.hello_interval_s),
            ("routing.topology_interval_s", self.routing.topology_interval_s),
            ("routing.discovery_rtt_per_hop_s", self.routing.discovery_rtt_per_hop_s),
            ("routing.break_detect_s", self.routing.break_detect_s),
            ("routing.queue_timeout_s", self.routing.queue_timeout_s),
            ("routing.reconfigure_grace_s", self.routing.reconfigure_grace_s),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(invalid(field, "must be positive and finite"));
            }
        }
        if self.routing.per_hop_overhead_s < 0.0 {
            return Err(invalid("routing.per_hop_overhead_s", "must be non-negative"));
        }

        let mob = self.mobility_config();
        mob.validate().map_err(|reason| invalid("mobility", reason))?;
        if mob.level_index(self.mobility.max_speed_mps).is_none() {
            return Err(invalid(
                "mobility.max_speed_mps",
                format!(
                    "{} is not one of the configured level speeds {:?}",
                    self.mobility.max_speed_mps, self.mobility.level_speeds
                ),
            ));
        }

        if self.phases.schedule.is_empty() {
            return Err(invalid("phases.schedule", "must contain at least one entry"));
        }
        if self.phases.schedule[0].at_s != 0.0 {
            return Err(invalid("phases.schedule", "first entry must start at t=0"));
        }
        let mut last = -1.0;
        for entry in &self.phases.schedule {
            if PowerPhase::new(entry.phase).is_none() {
                return Err(invalid(
                    "phases.schedule.phase",
                    format!("phase index {} outside 1..=4", entry.phase),
                ));
            }
            if entry.at_s <= last {
                return Err(invalid("phases.schedule", "entries must be strictly increasing in time"));
            }
            last = entry.at_s;
        }

        if self.cms.qos_weight < 0.0
            || self.cms.power_weight < 0.0
            || self.cms.qos_weight + self.cms.power_weight == 0.0
        {
            return Err(invalid(
                "cms",
                "objective weights must be non-negative with at least one positive",
            ));
        }
        if self.cms.max_hops == 0 {
            return Err(invalid("cms.max_hops", "must be at least 1"));
        }
        if self.cms.voip_max_delay_s <= 0.0 {
            return Err(invalid("cms.voip_max_delay_s", "must be positive"));
        }

        if self.nodes.is_empty() {
            return Err(invalid("nodes", "at least one node is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        let ap_count = self.nodes.iter().filter(|n| n.role == Role::AccessPoint).count();
        if ap_count != 1 {
            return Err(invalid("nodes", format!("exactly one access-point required, found {ap_count}")));
        }
        for node in &self.nodes {
            if node.name.is_empty() {
                return Err(invalid("nodes.name", "node names must be non-empty"));
            }
            if !seen.insert(node.name.clone()) {
                return Err(invalid("nodes.name", format!("duplicate node name `{}`", node.name)));
            }
            if node.wlan.is_none() && node.cellular.is_none() {
                return Err(invalid(
                    "nodes",
                    format!("node `{}` must define at least one interface", node.name),
                ));
            }
            for (label, iface) in [("wlan", &node.wlan), ("cellular", &node.cellular)] {
                if let Some(i) = iface
                    && (i.nominal_power_w <= 0.0 || i.nominal_range_m <= 0.0 || i.rate_bps <= 0.0) {
                        return Err(invalid(
                            "nodes",
                            format!("node `{}` {label} interface values must be positive", node.name),
                        ));
                    }
            }
            if node.mobile {
                if node.role == Role::AccessPoint {
                    return Err(invalid("nodes.mobile", "the access point cannot be mobile"));
                }
                if !mob.domain.contains(node.position()) {
                    return Err(invalid(
                        "nodes.position",
                        format!("mobile node `{}` starts outside the mobility domain", node.name),
                    ));
                }
            }
        }

        if self.flows.is_empty() {
            return Err(invalid("flows", "at least one flow is required"));
        }
        for flow in &self.flows {
            let Some(idx) = self.node_index(&flow.src) else {
                return Err(invalid("flows.src", format!("unknown node `{}`", flow.src)));
            };
            if self.nodes[idx].role == Role::AccessPoint {
                return Err(invalid("flows.src", "the access point cannot source application flows"));
            }
            if flow.kind == FlowKindCfg::Bulk && flow.message_bytes == 0 {
                return Err(invalid("flows.message_bytes", "must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [scenario]
        name = "toy"
        horizon_s = 10.0

        [[nodes]]
        name = "ap"
        role = "access-point"
        position = [0.0, 0.0]
        wlan = { nominal_power_w = 0.03, nominal_range_m = 100.0, rate_bps = 54e6 }

        [[nodes]]
        name = "mt-1"
        role = "consumer"
        position = [50.0, 0.0]
        wlan = { nominal_power_w = 0.02, nominal_range_m = 80.0, rate_bps = 54e6 }

        [[flows]]
        kind = "voip"
        src = "mt-1"
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.scenario.master_seed, 1);
        assert_eq!(cfg.mobility.level_speeds.len(), 7);
        assert_eq!(cfg.routing.protocol_kind(), Some(ProtocolKind::Reactive));
        assert_eq!(cfg.phases.schedule.len(), 1);
        assert!(cfg.cms.enabled);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[scenario]", "[scenario]\n        mystery_knob = 3");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "got {err:?}");
        assert!(err.to_string().contains("mystery_knob"));
    }

    #[test]
    fn unknown_flow_source_is_diagnosed_by_field() {
        let text = MINIMAL.replace("src = \"mt-1\"", "src = \"nobody\"");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        match err {
            ConfigError::Invalid { field, reason } => {
                assert_eq!(field, "flows.src");
                assert!(reason.contains("nobody"));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn level_speed_must_be_a_configured_level() {
        let text = MINIMAL.replace(
            "[scenario]",
            "[mobility]\n        max_speed_mps = 2.0\n\n        [scenario]",
        );
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("mobility.max_speed_mps"));
    }

    #[test]
    fn phase_schedule_must_start_at_zero_and_ascend() {
        let text = format!(
            "{MINIMAL}\n        [phases]\n        schedule = [{{ at_s = 1.0, phase = 1 }}]\n"
        );
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("phases.schedule"));
    }

    #[test]
    fn two_access_points_are_rejected() {
        let text = MINIMAL.replace("role = \"consumer\"", "role = \"access-point\"");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("access-point"));
    }
}
