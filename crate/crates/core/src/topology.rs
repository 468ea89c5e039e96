//! The cache network: nodes with storage capacities, undirected local links
//! with a per-step bandwidth budget and a normalized transfer cost, and an
//! implicit shared link to the origin server at cost [`SERVER_COST`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Delay of fetching a content over the shared server link. All other costs
/// are normalized against it.
pub const SERVER_COST: f64 = 1.0;

/// An undirected local link between two caches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    /// Files per step, shared by both directions.
    pub bandwidth: u32,
    /// Normalized transfer delay, in `[0, SERVER_COST)`.
    pub cost: f64,
}

impl Link {
    pub fn new(a: usize, b: usize, bandwidth: u32, cost: f64) -> Self {
        Self {
            a,
            b,
            bandwidth,
            cost,
        }
    }

    /// The endpoint opposite `node`.
    pub fn other(&self, node: usize) -> usize {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

/// Immutable cache network.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    capacities: Vec<usize>,
    links: Vec<Link>,
    /// Per node: `(neighbor, link index)` sorted by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Per node: link indices with non-zero bandwidth, ordered by
    /// `(cost, neighbor id)`; the order in which neighbors are tried when
    /// serving.
    serving_order: Vec<Vec<usize>>,
    grid: Option<GridShape>,
}

impl Topology {
    /// General constructor: one capacity per node and an explicit link list.
    pub fn new(capacities: Vec<usize>, links: Vec<Link>) -> Result<Self> {
        let count = capacities.len();
        if count == 0 {
            return Err(invalid("a topology needs at least one node"));
        }
        if let Some(i) = capacities.iter().position(|&m| m == 0) {
            return Err(invalid(format!("node {i} has zero capacity")));
        }
        let mut adjacency: Vec<Vec<(usize, usize)>> = (0..count).map(|_| Vec::new()).collect();
        for (idx, link) in links.iter().enumerate() {
            for end in [link.a, link.b] {
                if end >= count {
                    return Err(Error::NodeOutOfRange { node: end, count });
                }
            }
            if link.a == link.b {
                return Err(invalid(format!("self-link on node {}", link.a)));
            }
            if !(link.cost >= 0.0 && link.cost < SERVER_COST) {
                return Err(invalid(format!(
                    "link ({}, {}) cost {} outside [0, 1)",
                    link.a, link.b, link.cost
                )));
            }
            if adjacency[link.a].iter().any(|&(n, _)| n == link.b) {
                return Err(invalid(format!("duplicate link ({}, {})", link.a, link.b)));
            }
            adjacency[link.a].push((link.b, idx));
            adjacency[link.b].push((link.a, idx));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let serving_order = adjacency
            .iter()
            .map(|adj| {
                let mut usable: Vec<usize> = adj
                    .iter()
                    .filter(|&&(_, l)| links[l].bandwidth > 0)
                    .map(|&(_, l)| l)
                    .collect();
                // adjacency is already id-sorted, so a stable sort on cost
                // leaves ties in ascending neighbor id
                usable.sort_by(|&x, &y| links[x].cost.total_cmp(&links[y].cost));
                usable
            })
            .collect();
        Ok(Self {
            capacities,
            links,
            adjacency,
            serving_order,
            grid: None,
        })
    }

    /// A `rows x cols` grid with row-major ids; every node links to its
    /// up/down/left/right neighbors. Uniform capacity, bandwidth and cost.
    pub fn grid(rows: usize, cols: usize, capacity: usize, bw: u32, link_cost: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("grid dimensions must be positive"));
        }
        if !(0.0..SERVER_COST).contains(&link_cost) {
            return Err(invalid(format!("link cost {link_cost} outside [0, 1)")));
        }
        let mut links = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    links.push(Link::new(id, id + 1, bw, link_cost));
                }
                if r + 1 < rows {
                    links.push(Link::new(id, id + cols, bw, link_cost));
                }
            }
        }
        let mut topo = Self::new(alloc::vec![capacity; rows * cols], links)?;
        topo.grid = Some(GridShape { rows, cols });
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.capacities.len()
    }

    pub fn capacity(&self, node: usize) -> usize {
        self.capacities[node]
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn max_capacity(&self) -> usize {
        self.capacities.iter().copied().max().unwrap_or(0)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn grid_shape(&self) -> Option<GridShape> {
        self.grid
    }

    fn check(&self, node: usize) -> Result<()> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node,
                count: self.node_count(),
            })
        }
    }

    /// Neighbor ids of `node`, ascending. Links with zero bandwidth are still
    /// reported; see [`Topology::serving_neighbors`].
    pub fn neighbors(&self, node: usize) -> Result<Vec<usize>> {
        self.check(node)?;
        Ok(self.adjacency[node].iter().map(|&(n, _)| n).collect())
    }

    /// Neighbors reachable over links with non-zero bandwidth, ascending id.
    /// This is the interaction scope used by the cooperative learner.
    pub fn serving_neighbors(&self, node: usize) -> Result<Vec<usize>> {
        self.check(node)?;
        Ok(self.adjacency[node]
            .iter()
            .filter(|&&(_, l)| self.links[l].bandwidth > 0)
            .map(|&(n, _)| n)
            .collect())
    }

    /// Index of the link joining `a` and `b`, if any.
    pub fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|pos| self.adjacency[a][pos].1)
    }

    /// Usable links of `node` in serving preference order (cheapest first,
    /// ties to the lowest neighbor id).
    pub fn serving_order(&self, node: usize) -> &[usize] {
        &self.serving_order[node]
    }

    /// Rejects libraries too small for the network: a cache able to hold the
    /// whole library has a trivial placement.
    pub fn validate_library(&self, library_size: usize) -> Result<()> {
        match self.capacities.iter().position(|&m| m >= library_size) {
            Some(i) => Err(invalid(format!(
                "node {i} capacity {} must be smaller than the library size {library_size}",
                self.capacities[i]
            ))),
            None => Ok(()),
        }
    }

    /// The same network with every capacity replaced.
    pub fn with_uniform_capacity(&self, capacity: usize) -> Result<Self> {
        let mut topo = Self::new(alloc::vec![capacity; self.node_count()], self.links.clone())?;
        topo.grid = self.grid;
        Ok(topo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid_edges_by_enumeration(rows: usize, cols: usize) -> usize {
        // count unordered pairs of cells at Manhattan distance 1
        let cells: Vec<(i64, i64)> = (0..rows as i64)
            .flat_map(|r| (0..cols as i64).map(move |c| (r, c)))
            .collect();
        let mut n = 0;
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn two_by_two_grid() {
        let t = Topology::grid(2, 2, 10, 1, 0.2).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.links().len(), 4);
        for i in 0..4 {
            assert_eq!(t.neighbors(i).unwrap().len(), 2);
        }
    }

    #[test]
    fn single_node_grid_is_isolated() {
        let t = Topology::grid(1, 1, 10, 1, 0.2).unwrap();
        assert_eq!(t.node_count(), 1);
        assert!(t.links().is_empty());
        assert!(t.neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn four_by_four_edge_count_matches_enumeration() {
        let t = Topology::grid(4, 4, 10, 1, 0.2).unwrap();
        assert_eq!(t.node_count(), 16);
        assert_eq!(grid_edges_by_enumeration(4, 4), 24);
        assert_eq!(t.links().len(), 24);
    }

    #[test]
    fn neighbor_sets() {
        let t = Topology::grid(4, 4, 10, 1, 0.2).unwrap();
        assert_eq!(t.neighbors(0).unwrap(), vec![1, 4]);
        assert_eq!(t.neighbors(5).unwrap(), vec![1, 4, 6, 9]);
        assert!(matches!(
            t.neighbors(16),
            Err(Error::NodeOutOfRange { node: 16, count: 16 })
        ));
    }

    #[test]
    fn zero_bandwidth_keeps_adjacency_but_not_serving() {
        let t = Topology::grid(4, 4, 10, 0, 0.2).unwrap();
        assert_eq!(t.neighbors(5).unwrap(), vec![1, 4, 6, 9]);
        assert!(t.serving_neighbors(5).unwrap().is_empty());
        assert!(t.serving_order(5).is_empty());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Topology::grid(0, 3, 10, 1, 0.2).is_err());
        assert!(Topology::grid(3, 0, 10, 1, 0.2).is_err());
        assert!(Topology::grid(2, 2, 10, 1, 1.0).is_err());
        assert!(Topology::grid(2, 2, 10, 1, -0.1).is_err());
        assert!(Topology::new(vec![1, 1], vec![Link::new(0, 0, 1, 0.1)]).is_err());
        assert!(Topology::new(vec![1, 1], vec![Link::new(0, 2, 1, 0.1)]).is_err());
        assert!(Topology::new(
            vec![1, 1],
            vec![Link::new(0, 1, 1, 0.1), Link::new(1, 0, 1, 0.1)]
        )
        .is_err());
        assert!(Topology::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn library_guard() {
        let t = Topology::grid(2, 2, 10, 1, 0.2).unwrap();
        assert!(t.validate_library(100).is_ok());
        assert!(t.validate_library(10).is_err());
    }

    #[test]
    fn heterogeneous_serving_order_prefers_cheap_links() {
        let t = Topology::new(
            vec![5, 5, 5, 5],
            vec![
                Link::new(0, 1, 1, 0.5),
                Link::new(0, 2, 1, 0.1),
                Link::new(0, 3, 1, 0.1),
            ],
        )
        .unwrap();
        let order: Vec<usize> = t.serving_order(0).iter().map(|&l| t.link(l).other(0)).collect();
        assert_eq!(order, vec![2, 3, 1]);
        assert_eq!(t.link_between(0, 3), Some(2));
        assert_eq!(t.link_between(1, 2), None);
    }

    proptest::proptest! {
        #[test]
        fn grid_adjacency_is_symmetric(rows in 1usize..9, cols in 1usize..9) {
            let t = Topology::grid(rows, cols, 3, 1, 0.2).unwrap();
            proptest::prop_assert_eq!(t.links().len(), rows * (cols - 1) + cols * (rows - 1));
            proptest::prop_assert_eq!(t.links().len(), grid_edges_by_enumeration(rows, cols));
            for i in 0..t.node_count() {
                for j in t.neighbors(i).unwrap() {
                    proptest::prop_assert!(j != i);
                    proptest::prop_assert!(t.neighbors(j).unwrap().contains(&i));
                }
            }
            proptest::prop_assert_eq!(t.clone(), Topology::grid(rows, cols, 3, 1, 0.2).unwrap());
        }
    }
}
