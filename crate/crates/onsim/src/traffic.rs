//! Application traffic sources: constant-bit-rate VoIP modeled on the
//! G.711 codec (160-byte payload plus 40 bytes of RTP/UDP/IP header every
//! 20 ms, in both directions), and bulk transfers of fixed-size messages.

use serde::{Deserialize, Serialize};

use crate::NodeId;
use crate::kernel::SimTime;

/// G.711 frame payload per packet, bytes.
pub const VOIP_PAYLOAD_BYTES: u64 = 160;
/// Transport/network header per VoIP packet, bytes.
pub const VOIP_HEADER_BYTES: u64 = 40;
/// On-wire VoIP packet size, bytes.
pub const VOIP_PACKET_BYTES: u64 = VOIP_PAYLOAD_BYTES + VOIP_HEADER_BYTES;
/// Packetization interval, seconds.
pub const VOIP_INTERVAL_S: f64 = 0.020;
/// Default bulk message size: one binary megabyte.
pub const DEFAULT_MESSAGE_BYTES: u64 = 1_048_576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    VoipG711,
    Bulk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub usize);

/// Direction of a VoIP packet relative to the terminal: uplink toward the
/// core endpoint, downlink from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Uplink => "up",
            Direction::Downlink => "down",
        }
    }
}

/// One application flow. VoIP flows are bidirectional between the terminal
/// and a core endpoint reached through the access point (the AP-core hop is
/// zero-latency, so the radio path is the measured quantity). Bulk flows
/// send `message_count` messages of `message_bytes` toward the core at t=0.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub id: FlowId,
    pub kind: FlowKind,
    pub src: NodeId,
    pub label: String,
    pub message_bytes: u64,
    pub message_count: u32,
}

impl FlowSpec {
    pub fn voip(id: FlowId, src: NodeId, label: String) -> FlowSpec {
        FlowSpec {
            id,
            kind: FlowKind::VoipG711,
            src,
            label,
            message_bytes: VOIP_PACKET_BYTES,
            message_count: 0,
        }
    }

    pub fn bulk(id: FlowId, src: NodeId, label: String, message_bytes: u64, message_count: u32) -> FlowSpec {
        assert!(message_bytes > 0, "bulk messages must be non-empty");
        FlowSpec {
            id,
            kind: FlowKind::Bulk,
            src,
            label,
            message_bytes,
            message_count,
        }
    }
}

/// Emission instants for one VoIP direction: `0, 20ms, 40ms, ...` strictly
/// before the horizon.
pub fn voip_emit_times(horizon: SimTime) -> impl Iterator<Item = SimTime> {
    let horizon_s = horizon.as_secs();
    (0u64..)
        .map(|k| k as f64 * VOIP_INTERVAL_S)
        .take_while(move |t| *t < horizon_s)
        .map(SimTime::from_secs)
}

/// Why a packet failed to arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// No serving route and no opportunistic network covering the source.
    Unserved,
    /// Queued longer than the retransmission patience window.
    QueueTimeout,
    /// The serving opportunistic network terminated with the packet queued.
    OnTerminated,
    /// Proactive route was stale at forwarding time.
    StaleRoute,
    /// Still queued when the run horizon ended.
    HorizonEnd,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Unserved => "unserved",
            DropReason::QueueTimeout => "queue-timeout",
            DropReason::OnTerminated => "on-terminated",
            DropReason::StaleRoute => "stale-route",
            DropReason::HorizonEnd => "horizon-end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Delivered,
    Dropped(DropReason),
}

impl Fate {
    pub fn as_str(self) -> &'static str {
        match self {
            Fate::Delivered => "delivered",
            Fate::Dropped(r) => r.as_str(),
        }
    }
}

/// Fate record of one packet or message.
#[derive(Debug, Clone)]
pub struct PacketRecord {
    pub flow: FlowId,
    pub flow_label: String,
    pub direction: Direction,
    pub seq: u32,
    pub created_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub path: Vec<NodeId>,
    pub fate: Fate,
}

impl PacketRecord {
    pub fn delay_s(&self) -> Option<f64> {
        self.delivered_at
            .map(|d| d.as_secs() - self.created_at.as_secs())
    }

    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_horizon_emits_fifty_packets_per_direction() {
        let times: Vec<SimTime> = voip_emit_times(SimTime::from_secs(1.0)).collect();
        assert_eq!(times.len(), 50);
        assert_eq!(times[0], SimTime::ZERO);
    }

    #[test]
    fn payload_rate_matches_the_codec() {
        let payload_bps = VOIP_PAYLOAD_BYTES as f64 * 8.0 / VOIP_INTERVAL_S;
        assert_eq!(payload_bps, 64_000.0);
        let wire_bps = VOIP_PACKET_BYTES as f64 * 8.0 / VOIP_INTERVAL_S;
        assert_eq!(wire_bps, 80_000.0);
    }

    #[test]
    fn zero_horizon_emits_nothing() {
        assert_eq!(voip_emit_times(SimTime::ZERO).count(), 0);
    }

    #[test]
    fn emit_spacing_is_exactly_the_packet_interval() {
        let times: Vec<f64> = voip_emit_times(SimTime::from_secs(2.0))
            .map(|t| t.as_secs())
            .collect();
        for w in times.windows(2) {
            assert!((w[1] - w[0] - VOIP_INTERVAL_S).abs() < 1e-12);
        }
    }

    #[test]
    fn delivered_record_reports_nonnegative_delay() {
        let rec = PacketRecord {
            flow: FlowId(0),
            flow_label: "voip-mt-01".into(),
            direction: Direction::Uplink,
            seq: 3,
            created_at: SimTime::from_secs(1.0),
            delivered_at: Some(SimTime::from_secs(1.25)),
            path: vec![NodeId(1), NodeId(2), NodeId(0)],
            fate: Fate::Delivered,
        };
        assert!((rec.delay_s().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(rec.hops(), 2);
    }
}
