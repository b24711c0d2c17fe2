//! Buyer conflict graph and bid-independent group formation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Side length of the square deployment area, in meters.
pub const DEFAULT_ARENA: f64 = 100.0;

/// Buyers closer than this (inclusive) interfere, in meters.
pub const DEFAULT_PROTECTION_DISTANCE: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("duplicate buyer id {0}")]
    DuplicateId(usize),
    #[error("buyer {id} at ({x}, {y}) lies outside the {width}x{height} arena")]
    OutsideArena {
        id: usize,
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuyerLocation {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            width: DEFAULT_ARENA,
            height: DEFAULT_ARENA,
        }
    }
}

impl Arena {
    pub fn check(&self, loc: &BuyerLocation) -> Result<(), GroupError> {
        let inside = |v: f64, hi: f64| v.is_finite() && (0.0..=hi).contains(&v);
        if inside(loc.x, self.width) && inside(loc.y, self.height) {
            Ok(())
        } else {
            Err(GroupError::OutsideArena {
                id: loc.id,
                x: loc.x,
                y: loc.y,
                width: self.width,
                height: self.height,
            })
        }
    }
}

/// Undirected interference graph over buyer ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictGraph {
    adjacency: BTreeMap<usize, BTreeSet<usize>>,
}

impl ConflictGraph {
    pub fn with_nodes(nodes: impl IntoIterator<Item = usize>) -> Self {
        ConflictGraph {
            adjacency: nodes.into_iter().map(|n| (n, BTreeSet::new())).collect(),
        }
    }

    /// Adds an undirected edge; self-loops are ignored.
    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u == v {
            return;
        }
        self.adjacency.entry(u).or_default().insert(v);
        self.adjacency.entry(v).or_default().insert(u);
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.get(&u).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(&u).is_some_and(|n| n.contains(&v))
    }

    /// Edges as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .flat_map(|(&u, ns)| ns.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }
}

/// Non-conflicting set of buyers bidding together for one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuyerGroup {
    pub id: usize,
    pub members: Vec<usize>,
}

impl BuyerGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Unit-disk interference: an edge joins every pair at distance `≤ protection_distance`.
pub fn build_conflict_graph(
    locations: &[BuyerLocation],
    protection_distance: f64,
) -> Result<ConflictGraph, GroupError> {
    let mut seen = BTreeSet::new();
    for loc in locations {
        if !seen.insert(loc.id) {
            return Err(GroupError::DuplicateId(loc.id));
        }
    }
    let mut graph = ConflictGraph::with_nodes(seen);
    for (i, a) in locations.iter().enumerate() {
        for b in &locations[i + 1..] {
            if (a.x - b.x).hypot(a.y - b.y) <= protection_distance {
                graph.add_edge(a.id, b.id);
            }
        }
    }
    Ok(graph)
}

/// Partitions the buyers into independent sets.
///
/// Each pass picks uniformly random remaining nodes, discarding the picked
/// node's neighbors from the pass, until nothing is left to pick. Groups are
/// numbered in formation order.
pub fn form_groups(graph: &ConflictGraph, seed: u64) -> Vec<BuyerGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ungrouped: BTreeSet<usize> = graph.nodes().collect();
    let mut groups = Vec::new();
    while !ungrouped.is_empty() {
        let mut working: Vec<usize> = ungrouped.iter().copied().collect();
        let mut members = Vec::new();
        while !working.is_empty() {
            let pick = working[rng.gen_range(0..working.len())];
            members.push(pick);
            ungrouped.remove(&pick);
            working.retain(|&v| v != pick && !graph.has_edge(pick, v));
        }
        members.sort_unstable();
        groups.push(BuyerGroup {
            id: groups.len(),
            members,
        });
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(id: usize, x: f64, y: f64) -> BuyerLocation {
        BuyerLocation { id, x, y }
    }

    #[test]
    fn distance_threshold() {
        let near = build_conflict_graph(&[loc(0, 0.0, 0.0), loc(1, 10.0, 0.0)], 50.0).unwrap();
        assert_eq!(near.edges(), vec![(0, 1)]);
        let far = build_conflict_graph(&[loc(0, 0.0, 0.0), loc(1, 80.0, 0.0)], 50.0).unwrap();
        assert!(far.edges().is_empty());
        let boundary = build_conflict_graph(&[loc(0, 0.0, 0.0), loc(1, 30.0, 40.0)], 50.0).unwrap();
        assert_eq!(boundary.edges(), vec![(0, 1)]);
    }

    #[test]
    fn sparse_grid_has_no_edges() {
        let grid = [
            loc(0, 0.0, 0.0),
            loc(1, 60.0, 0.0),
            loc(2, 0.0, 60.0),
            loc(3, 60.0, 60.0),
        ];
        let g = build_conflict_graph(&grid, 50.0).unwrap();
        // pairwise distances are 60 and 84.85, all beyond 50
        for (i, a) in grid.iter().enumerate() {
            for b in &grid[i + 1..] {
                assert!((a.x - b.x).hypot(a.y - b.y) > 50.0);
            }
        }
        assert!(g.edges().is_empty());
        assert_eq!(g.node_count(), 4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = build_conflict_graph(&[loc(3, 0.0, 0.0), loc(3, 1.0, 1.0)], 50.0);
        assert_eq!(err, Err(GroupError::DuplicateId(3)));
    }

    #[test]
    fn arena_bounds() {
        let arena = Arena::default();
        assert!(arena.check(&loc(0, 100.0, 0.0)).is_ok());
        assert!(arena.check(&loc(0, 100.5, 0.0)).is_err());
        assert!(arena.check(&loc(0, f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn edgeless_graph_forms_one_group() {
        let g = ConflictGraph::with_nodes(0..5);
        let groups = form_groups(&g, 7);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn complete_graph_forms_singletons() {
        let mut g = ConflictGraph::with_nodes(0..4);
        for u in 0..4 {
            for v in u + 1..4 {
                g.add_edge(u, v);
            }
        }
        let groups = form_groups(&g, 3);
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|grp| grp.size() == 1));
    }

    #[test]
    fn path_graph_groups_are_independent() {
        let mut g = ConflictGraph::with_nodes(0..3);
        g.add_edge(0, 1);
        g.add_edge(1, 2);
        for seed in 0..50 {
            let groups = form_groups(&g, seed);
            let mut all: Vec<usize> = groups.iter().flat_map(|x| x.members.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2]);
            for grp in &groups {
                for (i, &u) in grp.members.iter().enumerate() {
                    for &v in &grp.members[i + 1..] {
                        assert!(!g.has_edge(u, v));
                    }
                }
            }
        }
    }

    #[test]
    fn self_loops_ignored() {
        let mut g = ConflictGraph::with_nodes(0..2);
        g.add_edge(1, 1);
        assert!(g.edges().is_empty());
    }
}
