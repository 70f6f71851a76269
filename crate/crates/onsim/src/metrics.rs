//! Metric aggregation and report rows: per-node end-to-end delay, delivery
//! latency, total transmission power per phase, reduction percentages, and
//! the acceptability classification against the application delay budget.

use crate::NodeId;
use crate::engine::RunOutput;
use crate::radio::PowerPhase;
use crate::scenario::{FlowKindCfg, Role, ScenarioConfig};
use crate::traffic::Fate;

/// Total configured transmit power of the scenario topology under a given
/// phase, in milliwatts. Counts every interface that is powered in the
/// default (direct-service) mode: WLAN when the infrastructure offers WLAN,
/// cellular always.
pub fn power_for_phase(cfg: &ScenarioConfig, phase: PowerPhase) -> f64 {
    let ap_has_wlan = cfg
        .nodes
        .iter()
        .find(|n| n.role == Role::AccessPoint)
        .is_some_and(|n| n.wlan.is_some());
    let mut total_w = 0.0;
    for node in &cfg.nodes {
        if let Some(w) = &node.wlan
            && ap_has_wlan {
                let fraction = if node.role == Role::AccessPoint {
                    phase.ap_fraction()
                } else {
                    phase.mt_fraction()
                };
                total_w += w.nominal_power_w * fraction;
            }
        if let Some(c) = &node.cellular {
            total_w += c.nominal_power_w;
        }
    }
    total_w * 1000.0
}

/// True when the mean of the per-node means meets the delay budget
/// (closed boundary: equality passes).
pub fn classify_acceptable(per_node_means_s: &[f64], threshold_s: f64) -> bool {
    debug_assert!(
        !per_node_means_s.is_empty(),
        "classification needs at least one node"
    );
    if per_node_means_s.is_empty() {
        return true;
    }
    let mean = per_node_means_s.iter().sum::<f64>() / per_node_means_s.len() as f64;
    mean <= threshold_s
}

/// Per-run metrics derived from a [`RunOutput`].
#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// Mean end-to-end delay per VoIP source. Infinite when the node
    /// delivered nothing at all.
    pub per_consumer_delay_s: Vec<(NodeId, f64)>,
    /// Mean of the per-consumer means; `None` when the scenario has no VoIP.
    pub mean_delay_s: Option<f64>,
    pub acceptable: Option<bool>,
    /// Mean delivery latency over delivered bulk messages.
    pub mean_latency_s: Option<f64>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub total_power_mw: f64,
    /// Reduction against the same topology at full power (phase 1).
    pub reduction_pct: f64,
}

pub fn compute(cfg: &ScenarioConfig, output: &RunOutput) -> RunMetrics {
    // Group VoIP delays by source node, via the config flow list. The
    // per-node mean is a censored mean: a packet that was never delivered
    // is assessed at the retransmission patience bound (queue_timeout_s),
    // a conservative stand-in for its unobserved delay. Raw per-packet
    // fates stay available in the packet records.
    let loss_penalty_s = cfg.routing.queue_timeout_s;
    let mut per_consumer: Vec<(NodeId, f64)> = Vec::new();
    for (i, fc) in cfg.flows.iter().enumerate() {
        if fc.kind != FlowKindCfg::Voip {
            continue;
        }
        let src = NodeId(cfg.node_index(&fc.src).expect("validated flow src"));
        let mut sum = 0.0;
        let mut count = 0u64;
        for p in &output.packets {
            if p.flow.0 != i {
                continue;
            }
            count += 1;
            sum += p.delay_s().unwrap_or(loss_penalty_s);
        }
        let mean = if count > 0 {
            sum / count as f64
        } else {
            f64::INFINITY
        };
        per_consumer.push((src, mean));
    }

    let mean_delay_s = if per_consumer.is_empty() {
        None
    } else {
        Some(per_consumer.iter().map(|(_, d)| *d).sum::<f64>() / per_consumer.len() as f64)
    };
    let acceptable = mean_delay_s.map(|m| m <= cfg.cms.voip_max_delay_s);

    let mut bulk_sum = 0.0;
    let mut bulk_count = 0u64;
    let mut has_bulk = false;
    for (i, fc) in cfg.flows.iter().enumerate() {
        if fc.kind != FlowKindCfg::Bulk {
            continue;
        }
        has_bulk = true;
        for p in &output.packets {
            if p.flow.0 == i
                && let Some(d) = p.delay_s() {
                    bulk_sum += d;
                    bulk_count += 1;
                }
        }
    }
    let mean_latency_s = if has_bulk && bulk_count > 0 {
        Some(bulk_sum / bulk_count as f64)
    } else if has_bulk {
        Some(f64::INFINITY)
    } else {
        None
    };

    let sent = output.packets.len() as u64;
    let delivered = output
        .packets
        .iter()
        .filter(|p| p.fate == Fate::Delivered)
        .count() as u64;
    let total_power_mw = output
        .on_mode_power_mw
        .unwrap_or_else(|| output.final_power_mw());
    let baseline = power_for_phase(cfg, PowerPhase::new(1).unwrap());
    let reduction_pct = if baseline > 0.0 {
        crate::radio::reduction_pct(baseline, total_power_mw)
    } else {
        0.0
    };
    RunMetrics {
        per_consumer_delay_s: per_consumer,
        mean_delay_s,
        acceptable,
        mean_latency_s,
        sent,
        delivered,
        dropped: sent - delivered,
        total_power_mw,
        reduction_pct,
    }
}

/// One row of `summary.csv` (also the per-run row of sweep cells).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub phase: u8,
    pub level_mps: f64,
    pub protocol: String,
    pub seed: u64,
    pub total_power_mw: f64,
    pub reduction_pct: f64,
    pub mean_delay_s: Option<f64>,
    pub acceptable: Option<bool>,
    pub mean_latency_s: Option<f64>,
    pub trace_digest: String,
}

impl SummaryRow {
    pub const HEADER: &'static str = "phase,level,protocol,seed,total_power_mw,reduction_pct,mean_delay_s,acceptable,mean_latency_s,trace_digest";

    pub fn from_run(output: &RunOutput, metrics: &RunMetrics) -> SummaryRow {
        SummaryRow {
            phase: output.final_phase.index(),
            level_mps: output.mobility_level_mps,
            protocol: output.protocol.as_str().to_string(),
            seed: output.seed,
            total_power_mw: metrics.total_power_mw,
            reduction_pct: metrics.reduction_pct,
            mean_delay_s: metrics.mean_delay_s,
            acceptable: metrics.acceptable,
            mean_latency_s: metrics.mean_latency_s,
            trace_digest: output.trace_digest.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.phase,
            fmt_level(self.level_mps),
            self.protocol,
            self.seed,
            fmt_f64(self.total_power_mw, 6),
            fmt_f64(self.reduction_pct, 6),
            fmt_opt_f64(self.mean_delay_s, 9),
            self.acceptable.map(|b| b.to_string()).unwrap_or_default(),
            fmt_opt_f64(self.mean_latency_s, 6),
            self.trace_digest,
        )
    }
}

/// Mobility level written the way it is configured (`0`, `0.5`, `15`).
pub fn fmt_level(level: f64) -> String {
    format!("{level}")
}

pub fn fmt_f64(v: f64, decimals: usize) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.decimals$}")
    }
}

pub fn fmt_opt_f64(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| fmt_f64(x, decimals)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceptability_uses_a_closed_boundary() {
        assert!(classify_acceptable(&[0.02, 0.03], 0.150));
        assert!(!classify_acceptable(&[0.2], 0.150));
        assert!(classify_acceptable(&[0.150], 0.150));
    }

    #[test]
    fn level_and_float_formatting_are_stable() {
        assert_eq!(fmt_level(0.0), "0");
        assert_eq!(fmt_level(0.5), "0.5");
        assert_eq!(fmt_level(15.0), "15");
        assert_eq!(fmt_f64(40.0, 6), "40.000000");
        assert_eq!(fmt_f64(f64::INFINITY, 6), "inf");
        assert_eq!(fmt_opt_f64(None, 6), "");
    }
}
