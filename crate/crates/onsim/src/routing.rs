//! Multi-hop routing over the ad-hoc link graph: a reactive protocol that
//! discovers minimum-hop routes on demand, and a proactive protocol that
//! refreshes per-node tables on a fixed interval and serves possibly-stale
//! routes in between.
//!
//! Both converge to breadth-first-search hop distances on a static
//! topology; equal-hop ties break toward the lexicographically smallest
//! node-id sequence so every run routes identically.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;
use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolKind {
    Reactive,
    Proactive,
}

impl ProtocolKind {
    /// Accepts canonical names plus the common protocol aliases used for
    /// sweep labeling.
    pub fn parse(name: &str) -> Option<ProtocolKind> {
        match name.to_ascii_lowercase().as_str() {
            "reactive" | "aodv" | "dsr" => Some(ProtocolKind::Reactive),
            "proactive" | "olsr" | "grp" => Some(ProtocolKind::Proactive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Reactive => "reactive",
            ProtocolKind::Proactive => "proactive",
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("no route from node {src} to node {dst}")]
    NoRoute { src: usize, dst: usize },
}

/// Protocol timing constants. These are calibration constants, not wire
/// fidelity: discovery and hello/topology traffic are charged as latency
/// and counted overhead bytes rather than simulated per packet.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoutingTimers {
    pub hello_interval_s: f64,
    pub topology_interval_s: f64,
    pub discovery_rtt_s_per_hop: f64,
    pub break_detect_s: f64,
    pub per_hop_overhead_s: f64,
}

impl Default for RoutingTimers {
    fn default() -> Self {
        RoutingTimers {
            hello_interval_s: 1.0,
            topology_interval_s: 2.0,
            discovery_rtt_s_per_hop: 0.030,
            break_detect_s: 0.200,
            per_hop_overhead_s: 0.0005,
        }
    }
}

/// Undirected link graph over node indices, adjacency sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    adj: Vec<Vec<NodeId>>,
}

impl LinkGraph {
    pub fn new(node_count: usize) -> LinkGraph {
        LinkGraph {
            adj: vec![Vec::new(); node_count],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId) {
        if a == b {
            return;
        }
        if !self.adj[a.0].contains(&b) {
            self.adj[a.0].push(b);
            self.adj[a.0].sort_unstable();
        }
        if !self.adj[b.0].contains(&a) {
            self.adj[b.0].push(a);
            self.adj[b.0].sort_unstable();
        }
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adj[n.0]
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.adj[a.0].contains(&b)
    }

    /// BFS hop distances from `from` (usize::MAX marks unreachable).
    pub fn hop_distances(&self, from: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.adj.len()];
        let mut queue = VecDeque::new();
        dist[from.0] = 0;
        queue.push_back(from);
        while let Some(n) = queue.pop_front() {
            for &m in &self.adj[n.0] {
                if dist[m.0] == usize::MAX {
                    dist[m.0] = dist[n.0] + 1;
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    /// Minimum-hop route from `src` to `dst`; among equal-hop routes the
    /// lexicographically smallest node-id sequence wins. Walks distances
    /// computed from the destination, greedily taking the smallest next id
    /// that still decreases the remaining distance.
    pub fn min_hop_route(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        if src == dst {
            return Some(vec![src]);
        }
        let dist = self.hop_distances(dst);
        if dist[src.0] == usize::MAX {
            return None;
        }
        let mut route = vec![src];
        let mut here = src;
        while here != dst {
            let next = self.adj[here.0]
                .iter()
                .copied()
                .find(|m| dist[m.0] + 1 == dist[here.0])
                .expect("distance field must admit a descending neighbor");
            route.push(next);
            here = next;
        }
        Some(route)
    }

    /// Connected components restricted to the node subset `members`.
    pub fn components_within(&self, members: &[NodeId]) -> Vec<Vec<NodeId>> {
        let mut groups: Vec<Vec<NodeId>> = Vec::new();
        let mut assigned = vec![false; self.adj.len()];
        let in_set: Vec<bool> = {
            let mut v = vec![false; self.adj.len()];
            for m in members {
                v[m.0] = true;
            }
            v
        };
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        for &start in &sorted {
            if assigned[start.0] {
                continue;
            }
            let mut group = Vec::new();
            let mut queue = VecDeque::from([start]);
            assigned[start.0] = true;
            while let Some(n) = queue.pop_front() {
                group.push(n);
                for &m in &self.adj[n.0] {
                    if in_set[m.0] && !assigned[m.0] {
                        assigned[m.0] = true;
                        queue.push_back(m);
                    }
                }
            }
            group.sort_unstable();
            groups.push(group);
        }
        groups
    }
}

/// An installed multi-hop route.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub established_at: SimTime,
    pub protocol: ProtocolKind,
}

impl Route {
    pub fn new(nodes: Vec<NodeId>, established_at: SimTime, protocol: ProtocolKind) -> Route {
        debug_assert!(nodes.len() >= 2, "a route spans at least one hop");
        debug_assert!(
            {
                let mut seen = nodes.clone();
                seen.sort_unstable();
                seen.windows(2).all(|w| w[0] != w[1])
            },
            "routes must not repeat nodes"
        );
        Route {
            nodes,
            established_at,
            protocol,
        }
    }

    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Snapshot of every node's minimum-hop next-hop tables, as refreshed by a
/// proactive topology tick.
#[derive(Debug, Clone)]
pub struct ProactiveTables {
    pub computed_at: SimTime,
    /// `next_hop[src][dst]`, `None` when unreachable (or src == dst).
    next_hop: Vec<Vec<Option<NodeId>>>,
}

impl ProactiveTables {
    /// Rebuilds all tables from the link graph as of `now`. Tables stay in
    /// force (possibly stale) until the next tick.
    pub fn compute(graph: &LinkGraph, now: SimTime) -> ProactiveTables {
        let n = graph.node_count();
        let mut next_hop = vec![vec![None; n]; n];
        for dst_i in 0..n {
            let dst = NodeId(dst_i);
            let dist = graph.hop_distances(dst);
            for src_i in 0..n {
                if src_i == dst_i || dist[src_i] == usize::MAX {
                    continue;
                }
                let hop = graph.neighbors(NodeId(src_i))
                    .iter()
                    .copied()
                    .find(|m| dist[m.0] + 1 == dist[src_i]);
                next_hop[src_i][dst_i] = hop;
            }
        }
        ProactiveTables {
            computed_at: now,
            next_hop,
        }
    }

    pub fn next_hop(&self, src: NodeId, dst: NodeId) -> Option<NodeId> {
        self.next_hop[src.0][dst.0]
    }

    /// Follows next-hop entries from `src` to `dst`.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        if src == dst {
            return Some(vec![src]);
        }
        let mut route = vec![src];
        let mut here = src;
        while here != dst {
            let hop = self.next_hop[here.0][dst.0]?;
            route.push(hop);
            here = hop;
            if route.len() > self.next_hop.len() {
                return None; // inconsistent tables; treat as no route
            }
        }
        Some(route)
    }

    /// Number of destinations any source can reach; a single-node network
    /// has empty tables.
    pub fn entry_count(&self) -> usize {
        self.next_hop
            .iter()
            .map(|row| row.iter().filter(|e| e.is_some()).count())
            .sum()
    }
}

/// Per-hop data latency: serialization of the packet on the link plus the
/// configured forwarding overhead.
pub fn hop_latency_s(packet_bytes: u64, rate_bps: f64, per_hop_overhead_s: f64) -> f64 {
    per_hop_overhead_s + 8.0 * packet_bytes as f64 / rate_bps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> LinkGraph {
        let mut g = LinkGraph::new(n);
        for i in 0..n - 1 {
            g.add_link(NodeId(i), NodeId(i + 1));
        }
        g
    }

    #[test]
    fn adjacent_nodes_route_in_one_hop() {
        let g = chain(2);
        let route = g.min_hop_route(NodeId(0), NodeId(1)).unwrap();
        assert_eq!(route, vec![NodeId(0), NodeId(1)]);
    }

    #[test]
    fn two_hop_chain_routes_through_middle() {
        let g = chain(3);
        let route = g.min_hop_route(NodeId(0), NodeId(2)).unwrap();
        assert_eq!(route, vec![NodeId(0), NodeId(1), NodeId(2)]);
    }

    #[test]
    fn partitioned_graph_has_no_route() {
        let mut g = LinkGraph::new(4);
        g.add_link(NodeId(0), NodeId(1));
        g.add_link(NodeId(2), NodeId(3));
        assert_eq!(g.min_hop_route(NodeId(0), NodeId(3)), None);
    }

    #[test]
    fn equal_hop_tie_breaks_to_lowest_id_sequence() {
        // 0 -> {1, 2} -> 3: both two-hop; route must pass through 1.
        let mut g = LinkGraph::new(4);
        g.add_link(NodeId(0), NodeId(2));
        g.add_link(NodeId(0), NodeId(1));
        g.add_link(NodeId(1), NodeId(3));
        g.add_link(NodeId(2), NodeId(3));
        let route = g.min_hop_route(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(route, vec![NodeId(0), NodeId(1), NodeId(3)]);
    }

    #[test]
    fn proactive_tables_match_bfs_on_static_topology() {
        let mut g = LinkGraph::new(5);
        g.add_link(NodeId(0), NodeId(1));
        g.add_link(NodeId(1), NodeId(2));
        g.add_link(NodeId(2), NodeId(3));
        g.add_link(NodeId(0), NodeId(4));
        g.add_link(NodeId(4), NodeId(3));
        let tables = ProactiveTables::compute(&g, SimTime::ZERO);
        for src in 0..5 {
            let dist = g.hop_distances(NodeId(src));
            for dst in 0..5 {
                if src == dst {
                    continue;
                }
                let via_tables = tables.route(NodeId(src), NodeId(dst)).unwrap();
                assert_eq!(via_tables.len() - 1, dist[dst]);
            }
        }
    }

    #[test]
    fn single_node_network_has_empty_tables() {
        let g = LinkGraph::new(1);
        let tables = ProactiveTables::compute(&g, SimTime::ZERO);
        assert_eq!(tables.entry_count(), 0);
    }

    #[test]
    fn stale_table_keeps_old_route_until_next_tick() {
        let mut g = chain(3);
        let tables = ProactiveTables::compute(&g, SimTime::ZERO);
        // Link 1-2 breaks after the tick; the table still names node 1.
        g = {
            let mut g2 = LinkGraph::new(3);
            g2.add_link(NodeId(0), NodeId(1));
            g2
        };
        assert!(!g.has_link(NodeId(1), NodeId(2)));
        assert_eq!(tables.next_hop(NodeId(0), NodeId(2)), Some(NodeId(1)));
        // Refreshing reflects the break.
        let fresh = ProactiveTables::compute(&g, SimTime::from_secs(2.0));
        assert_eq!(fresh.next_hop(NodeId(0), NodeId(2)), None);
    }

    #[test]
    fn hop_latency_matches_serialization_plus_overhead() {
        let l = hop_latency_s(200, 54e6, 0.0005);
        assert!((l - (0.0005 + 1600.0 / 54e6)).abs() < 1e-15);
        assert!((l - 0.0005296).abs() < 1e-6);
        // Three hops are exactly three times one hop.
        assert!((3.0 * l - (0..3).map(|_| l).sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn protocol_names_parse_with_aliases() {
        assert_eq!(ProtocolKind::parse("AODV"), Some(ProtocolKind::Reactive));
        assert_eq!(ProtocolKind::parse("olsr"), Some(ProtocolKind::Proactive));
        assert_eq!(ProtocolKind::parse("reactive"), Some(ProtocolKind::Reactive));
        assert_eq!(ProtocolKind::parse("flooding"), None);
    }
}
