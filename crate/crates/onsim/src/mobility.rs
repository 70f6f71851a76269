//! Node positions over time: random waypoint motion inside a bounded
//! rectangular domain, with a configurable set of maximum-speed levels and
//! a fixed pause between legs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{RngStream, SimTime};

/// Default maximum speeds (m/s) for the seven mobility levels.
pub const DEFAULT_LEVEL_SPEEDS: [f64; 7] = [0.0, 0.5, 1.5, 3.0, 6.0, 10.0, 15.0];

/// Default pause between consecutive legs, in seconds.
pub const DEFAULT_PAUSE_S: f64 = 1.0;

/// A point in the mobility plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    pub fn distance_to(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle bounding all mobile motion, centered wherever the
/// scenario places it (conventionally on the access point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Domain {
    /// A `width` x `height` rectangle centered on the origin.
    pub fn centered(width_m: f64, height_m: f64) -> Domain {
        assert!(width_m > 0.0 && height_m > 0.0, "domain must have positive extent");
        Domain {
            min_x: -width_m / 2.0,
            min_y: -height_m / 2.0,
            max_x: width_m / 2.0,
            max_y: height_m / 2.0,
        }
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    /// Uniform sample over the rectangle. Draw order is fixed (x then y) so
    /// trajectories are reproducible for a given stream.
    pub fn sample(&self, rng: &mut RngStream) -> Position {
        let x = rng.random_range(self.min_x..=self.max_x);
        let y = rng.random_range(self.min_y..=self.max_y);
        Position { x, y }
    }
}

/// Per-scenario mobility settings.
#[derive(Debug, Clone)]
pub struct MobilityConfig {
    pub domain: Domain,
    /// Maximum speeds per level, non-negative and sorted ascending.
    pub level_speeds: Vec<f64>,
    pub pause_s: f64,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.level_speeds.is_empty() {
            return Err("level_speeds must not be empty".into());
        }
        if self.level_speeds.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err("level speeds must be finite and non-negative".into());
        }
        if self.level_speeds.windows(2).any(|w| w[0] >= w[1]) {
            return Err("level speeds must be strictly ascending".into());
        }
        if self.pause_s < 0.0 || !self.pause_s.is_finite() {
            return Err("pause_s must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Index of `speed` in the level table, if it is one of the levels.
    pub fn level_index(&self, speed: f64) -> Option<usize> {
        self.level_speeds.iter().position(|s| *s == speed)
    }
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            domain: Domain::centered(300.0, 300.0),
            level_speeds: DEFAULT_LEVEL_SPEEDS.to_vec(),
            pause_s: DEFAULT_PAUSE_S,
        }
    }
}

/// One straight-line movement between waypoints.
#[derive(Debug, Clone, Copy)]
pub struct WaypointLeg {
    pub origin: Position,
    pub target: Position,
    pub speed_mps: f64,
    pub depart_at: SimTime,
    pub arrive_at: SimTime,
}

impl WaypointLeg {
    /// A leg that never moves; used for speed-level zero.
    pub fn stationary(at: Position, depart_at: SimTime) -> WaypointLeg {
        WaypointLeg {
            origin: at,
            target: at,
            speed_mps: 0.0,
            depart_at,
            arrive_at: depart_at,
        }
    }

    pub fn length_m(&self) -> f64 {
        self.origin.distance_to(self.target)
    }
}

/// Draws the next waypoint leg: target uniform over the domain, speed
/// uniform on `(0, max_speed]`. A zero maximum speed yields a degenerate
/// leg that stays put.
///
/// Drawing speed from `(0, max]` rather than `[0, max]` avoids the classic
/// random-waypoint decay where ever-slower legs freeze the node population.
pub fn next_leg(
    origin: Position,
    depart_at: SimTime,
    max_speed_mps: f64,
    domain: &Domain,
    rng: &mut RngStream,
) -> WaypointLeg {
    if max_speed_mps <= 0.0 {
        return WaypointLeg::stationary(origin, depart_at);
    }
    let target = domain.sample(rng);
    // u in [0,1) so (1 - u) is in (0,1] and the speed lands in (0, max].
    let u: f64 = rng.random_range(0.0..1.0);
    let speed = max_speed_mps * (1.0 - u);
    let dist = origin.distance_to(target);
    let travel = if dist > 0.0 { dist / speed } else { 0.0 };
    WaypointLeg {
        origin,
        target,
        speed_mps: speed,
        depart_at,
        arrive_at: depart_at.after(travel),
    }
}

/// Position along a leg at time `t`: the origin before departure, linear
/// interpolation while moving, and the target from arrival onwards (which
/// also covers the post-leg pause).
pub fn position_on(leg: &WaypointLeg, t: SimTime) -> Position {
    if t <= leg.depart_at || leg.arrive_at <= leg.depart_at {
        return leg.origin;
    }
    if t >= leg.arrive_at {
        return leg.target;
    }
    let span = leg.arrive_at.as_secs() - leg.depart_at.as_secs();
    let frac = (t.as_secs() - leg.depart_at.as_secs()) / span;
    Position {
        x: leg.origin.x + (leg.target.x - leg.origin.x) * frac,
        y: leg.origin.y + (leg.target.y - leg.origin.y) * frac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{EventPayload, Kernel};
    use proptest::prelude::*;

    struct Nop;
    impl EventPayload for Nop {
        fn trace_label(&self) -> String {
            String::new()
        }
    }

    fn stream(seed: u64, label: &str) -> RngStream {
        Kernel::<Nop>::new(seed).stream(label)
    }

    #[test]
    fn zero_speed_level_never_moves() {
        let domain = Domain::centered(500.0, 500.0);
        let mut rng = stream(1, "mobility/static");
        let at = Position::new(12.0, -7.0);
        let leg = next_leg(at, SimTime::from_secs(3.0), 0.0, &domain, &mut rng);
        assert_eq!(leg.origin, leg.target);
        assert_eq!(leg.arrive_at, leg.depart_at);
        assert_eq!(position_on(&leg, SimTime::from_secs(1000.0)), at);
    }

    #[test]
    fn sampled_speeds_stay_in_half_open_band() {
        let domain = Domain::centered(500.0, 500.0);
        let mut rng = stream(2, "mobility/speeds");
        let mut at = Position::new(0.0, 0.0);
        for _ in 0..2000 {
            let leg = next_leg(at, SimTime::ZERO, 15.0, &domain, &mut rng);
            assert!(leg.speed_mps > 0.0 && leg.speed_mps <= 15.0);
            at = leg.target;
        }
    }

    #[test]
    fn leg_duration_is_distance_over_speed() {
        let leg = WaypointLeg {
            origin: Position::new(0.0, 0.0),
            target: Position::new(100.0, 0.0),
            speed_mps: 10.0,
            depart_at: SimTime::from_secs(5.0),
            arrive_at: SimTime::from_secs(15.0),
        };
        assert!((leg.arrive_at.as_secs() - leg.depart_at.as_secs() - 10.0).abs() < 1e-12);
        // And next_leg computes the same arithmetic.
        let domain = Domain::centered(1000.0, 1000.0);
        let mut rng = stream(3, "mobility/duration");
        for _ in 0..200 {
            let leg = next_leg(Position::new(0.0, 0.0), SimTime::ZERO, 10.0, &domain, &mut rng);
            let expect = leg.length_m() / leg.speed_mps;
            assert!((leg.arrive_at.as_secs() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_hits_endpoints_and_midpoint() {
        let leg = WaypointLeg {
            origin: Position::new(0.0, 0.0),
            target: Position::new(100.0, 0.0),
            speed_mps: 10.0,
            depart_at: SimTime::from_secs(0.0),
            arrive_at: SimTime::from_secs(10.0),
        };
        assert_eq!(position_on(&leg, SimTime::ZERO), leg.origin);
        let mid = position_on(&leg, SimTime::from_secs(5.0));
        assert!((mid.x - 50.0).abs() < 1e-12 && mid.y.abs() < 1e-12);
        assert_eq!(position_on(&leg, SimTime::from_secs(10.0)), leg.target);
    }

    #[test]
    fn mean_speed_sits_near_half_max_over_many_legs() {
        let domain = Domain::centered(300.0, 300.0);
        for v_max in [1.5, 6.0, 15.0] {
            let mut rng = stream(11, "mobility/mean-speed");
            let mut total = 0.0;
            let n = 4000;
            let mut at = Position::new(0.0, 0.0);
            for _ in 0..n {
                let leg = next_leg(at, SimTime::ZERO, v_max, &domain, &mut rng);
                total += leg.speed_mps;
                at = leg.target;
            }
            let mean = total / n as f64;
            assert!(
                mean > 0.45 * v_max && mean < 0.55 * v_max,
                "mean speed {mean} outside sanity band for v_max {v_max}"
            );
        }
    }

    #[test]
    fn config_validation_rejects_bad_levels() {
        let mut cfg = MobilityConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.level_index(1.5), Some(2));
        assert_eq!(cfg.level_index(2.0), None);
        cfg.level_speeds = vec![0.0, 5.0, 3.0];
        assert!(cfg.validate().is_err());
        cfg.level_speeds = vec![];
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn positions_remain_inside_domain(seed in 0u64..500, v_idx in 0usize..7) {
            let domain = Domain::centered(300.0, 300.0);
            let v_max = DEFAULT_LEVEL_SPEEDS[v_idx];
            let mut rng = stream(seed, "mobility/prop");
            let mut at = Position::new(0.0, 0.0);
            let mut t = SimTime::ZERO;
            for _ in 0..20 {
                let leg = next_leg(at, t, v_max, &domain, &mut rng);
                // Dense sampling along the leg.
                let span = leg.arrive_at.as_secs() - leg.depart_at.as_secs();
                for k in 0..=10 {
                    let q = SimTime::from_secs(leg.depart_at.as_secs() + span * k as f64 / 10.0);
                    prop_assert!(domain.contains(position_on(&leg, q)));
                }
                at = leg.target;
                t = leg.arrive_at.after(1.0);
            }
        }
    }
}
