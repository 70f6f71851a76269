//! Radio interfaces, transmit-power phases, coverage ranges, link
//! feasibility, serialization times, and the total-transmission-power
//! accounting behind the green-footprint metric.
//!
//! Propagation is a deterministic disc model: an interface transmitting at
//! `fraction` of its nominal power reaches `nominal_range * fraction^(1/alpha)`
//! meters, with `alpha` the path-loss exponent. A link is feasible when the
//! node distance is within both endpoints' ranges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default path-loss exponent for the disc propagation model.
pub const DEFAULT_PATH_LOSS_EXPONENT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterfaceKind {
    /// IEEE 802.11g WLAN.
    WlanG,
    /// Cellular (3G-class) interface.
    Cell3g,
}

impl std::fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterfaceKind::WlanG => write!(f, "wlan-g"),
            InterfaceKind::Cell3g => write!(f, "cell-3g"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("transfer rate must be positive, got {0} bps")]
    ZeroRate(f64),
}

/// One radio interface of a node.
#[derive(Debug, Clone)]
pub struct RadioInterface {
    pub kind: InterfaceKind,
    pub nominal_power_w: f64,
    /// Fraction of nominal transmit power currently configured, in (0, 1].
    pub power_fraction: f64,
    pub rate_bps: f64,
    /// Coverage range at full power, meters.
    pub nominal_range_m: f64,
    pub active: bool,
}

impl RadioInterface {
    pub fn new(kind: InterfaceKind, nominal_power_w: f64, nominal_range_m: f64, rate_bps: f64) -> Self {
        RadioInterface {
            kind,
            nominal_power_w,
            power_fraction: 1.0,
            rate_bps,
            nominal_range_m,
            active: true,
        }
    }

    pub fn effective_power_w(&self) -> f64 {
        self.nominal_power_w * self.power_fraction
    }

    /// Coverage range under the disc model at the configured power fraction.
    pub fn coverage_range_m(&self, path_loss_exponent: f64) -> f64 {
        assert!(path_loss_exponent > 0.0, "path-loss exponent must be positive");
        self.nominal_range_m * self.power_fraction.powf(1.0 / path_loss_exponent)
    }
}

/// One of the four AP/MT transmit-power settings. Phase 1 is the full-power
/// baseline; later phases shrink the AP range (R0 -> R1 -> R2) and finally
/// the terminal range (T0 -> T1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerPhase(u8);

impl PowerPhase {
    pub const ALL: [PowerPhase; 4] = [PowerPhase(1), PowerPhase(2), PowerPhase(3), PowerPhase(4)];

    const AP_FRACTIONS: [f64; 4] = [1.0, 0.8, 0.6, 0.6];
    const MT_FRACTIONS: [f64; 4] = [1.0, 1.0, 1.0, 0.6];

    pub fn new(index: u8) -> Option<PowerPhase> {
        (1..=4).contains(&index).then_some(PowerPhase(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Access-point transmit-power fraction in this phase.
    pub fn ap_fraction(self) -> f64 {
        Self::AP_FRACTIONS[(self.0 - 1) as usize]
    }

    /// Mobile-terminal transmit-power fraction in this phase.
    pub fn mt_fraction(self) -> f64 {
        Self::MT_FRACTIONS[(self.0 - 1) as usize]
    }
}

impl std::fmt::Display for PowerPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// True when two interfaces of the same kind can sustain a link over
/// `distance_m`: the distance must lie within both coverage ranges.
/// Symmetric in its interface arguments by construction.
pub fn link_feasible(
    distance_m: f64,
    a: &RadioInterface,
    b: &RadioInterface,
    path_loss_exponent: f64,
) -> bool {
    debug_assert_eq!(a.kind, b.kind, "link endpoints must share an interface kind");
    if !a.active || !b.active {
        return false;
    }
    let reach = a
        .coverage_range_m(path_loss_exponent)
        .min(b.coverage_range_m(path_loss_exponent));
    distance_m <= reach
}

/// Serialization time for `bytes` over a link of `rate_bps`: `8 * bytes / rate`.
pub fn transfer_time_s(bytes: u64, rate_bps: f64) -> Result<f64, RadioError> {
    if rate_bps <= 0.0 {
        return Err(RadioError::ZeroRate(rate_bps));
    }
    Ok(8.0 * bytes as f64 / rate_bps)
}

/// Total configured transmit power of a set of interfaces, in milliwatts,
/// with an optional reduction against a named baseline.
#[derive(Debug, Clone)]
pub struct PowerReport {
    pub total_power_mw: f64,
    /// Per-node breakdown in milliwatts, in input order.
    pub per_node: Vec<(String, f64)>,
    /// `100 * (baseline - total) / baseline`, when a baseline was supplied.
    pub reduction_pct_vs_baseline: Option<f64>,
}

/// Sums effective transmit power over every active interface handed in.
/// Inactive interfaces contribute nothing.
pub fn total_power<'a>(
    nodes: impl IntoIterator<Item = (&'a str, &'a [RadioInterface])>,
) -> PowerReport {
    let mut per_node = Vec::new();
    let mut total_w = 0.0;
    for (name, ifaces) in nodes {
        let node_w: f64 = ifaces
            .iter()
            .filter(|i| i.active)
            .map(|i| i.effective_power_w())
            .sum();
        total_w += node_w;
        per_node.push((name.to_string(), node_w * 1000.0));
    }
    PowerReport {
        total_power_mw: total_w * 1000.0,
        per_node,
        reduction_pct_vs_baseline: None,
    }
}

/// Percentage reduction of `now` against `baseline`.
pub fn reduction_pct(baseline_mw: f64, now_mw: f64) -> f64 {
    assert!(baseline_mw > 0.0, "baseline power must be positive");
    100.0 * (baseline_mw - now_mw) / baseline_mw
}
