use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::time::Duration;

use super::FabricError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Default one-way latency of a fabric link.
pub const DEFAULT_LINK_LATENCY: Duration = Duration::from_millis(1);

/// Undirected graph of fabric nodes and links.
#[derive(Clone, Debug, Default)]
pub struct Topology {
    names: Vec<String>,
    links: BTreeMap<NodeId, BTreeMap<NodeId, Duration>>,
    detached: BTreeSet<NodeId>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>) -> NodeId {
        let id = NodeId(self.names.len() as u32);
        self.names.push(name.into());
        self.links.insert(id, BTreeMap::new());
        id
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, latency: Duration) -> Result<(), FabricError> {
        for n in [a, b] {
            if !self.links.contains_key(&n) {
                return Err(FabricError::UnknownNode(n));
            }
        }
        self.links.get_mut(&a).unwrap().insert(b, latency);
        self.links.get_mut(&b).unwrap().insert(a, latency);
        Ok(())
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| NodeId(i as u32))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.links.keys().copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.links.contains_key(&id)
    }

    pub fn is_attached(&self, id: NodeId) -> bool {
        self.contains(id) && !self.detached.contains(&id)
    }

    pub fn detach(&mut self, id: NodeId) {
        self.detached.insert(id);
    }

    pub fn reattach(&mut self, id: NodeId) {
        self.detached.remove(&id);
    }

    pub fn latency(&self, a: NodeId, b: NodeId) -> Option<Duration> {
        self.links.get(&a).and_then(|n| n.get(&b)).copied()
    }

    fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.links
            .get(&id)
            .into_iter()
            .flat_map(|n| n.keys().copied())
            .filter(|n| !self.detached.contains(n))
    }

    /// Hop distances from `source` over attached nodes.
    pub fn hop_distances(&self, source: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        if !self.is_attached(source) {
            return dist;
        }
        dist.insert(source, 0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Shortest-path tree from `publisher` to `subscribers`, plus the
    /// reverse unicast paths from each subscriber back to the publisher.
    ///
    /// Each node's parent is its lowest-id neighbour one hop closer to the
    /// publisher, so the forward routes always form a tree.
    pub fn compute_paths(
        &self,
        publisher: NodeId,
        subscribers: &BTreeSet<NodeId>,
    ) -> Result<(ForwardingPath, ForwardingPath), FabricError> {
        if !self.is_attached(publisher) {
            return Err(FabricError::UnknownNode(publisher));
        }
        if subscribers.is_empty() {
            return Err(FabricError::InvalidPath("no destinations".into()));
        }
        let dist = self.hop_distances(publisher);
        let mut routes = Vec::with_capacity(subscribers.len());
        for &sub in subscribers {
            if !self.is_attached(sub) {
                return Err(FabricError::UnknownNode(sub));
            }
            let Some(&d) = dist.get(&sub) else {
                return Err(FabricError::DisconnectedTopology {
                    from: publisher,
                    to: sub,
                });
            };
            let mut route = vec![sub];
            let mut cur = sub;
            for depth in (0..d).rev() {
                cur = self
                    .neighbors(cur)
                    .find(|n| dist.get(n) == Some(&depth))
                    .expect("bfs parent exists");
                route.push(cur);
            }
            route.reverse();
            routes.push(route);
        }
        let reverse = routes
            .iter()
            .map(|r| r.iter().rev().copied().collect())
            .collect();
        Ok((ForwardingPath::tree(routes)?, ForwardingPath::merged(reverse)?))
    }

    /// Checks that consecutive nodes of `route` are linked and attached,
    /// returning the route's one-way latency.
    pub fn route_latency(&self, route: &[NodeId]) -> Result<Duration, FabricError> {
        for &n in route {
            if !self.is_attached(n) {
                return Err(FabricError::BrokenPath(n));
            }
        }
        route.windows(2).try_fold(Duration::ZERO, |acc, w| {
            self.latency(w[0], w[1])
                .map(|l| acc + l)
                .ok_or(FabricError::BrokenPath(w[1]))
        })
    }
}

/// Explicit delivery routes: one node list per destination.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ForwardingPath {
    routes: Vec<Vec<NodeId>>,
}

impl ForwardingPath {
    pub fn unicast(route: Vec<NodeId>) -> Result<Self, FabricError> {
        Self::tree(vec![route])
    }

    /// Routes sharing one root, where every node has a single parent.
    pub fn tree(routes: Vec<Vec<NodeId>>) -> Result<Self, FabricError> {
        let path = Self::merged(routes)?;
        let root = path.routes[0][0];
        let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for route in &path.routes {
            if route[0] != root {
                return Err(FabricError::InvalidPath("routes do not share a root".into()));
            }
            for w in route.windows(2) {
                if w[1] == root {
                    return Err(FabricError::InvalidPath(format!("route loops back to root {root}")));
                }
                if let Some(prev) = parent.insert(w[1], w[0]) {
                    if prev != w[0] {
                        return Err(FabricError::InvalidPath(format!(
                            "node {} reached from both {} and {}",
                            w[1], prev, w[0]
                        )));
                    }
                }
            }
        }
        Ok(path)
    }

    /// Any non-empty set of non-empty routes.
    pub fn merged(routes: Vec<Vec<NodeId>>) -> Result<Self, FabricError> {
        if routes.is_empty() || routes.iter().any(Vec::is_empty) {
            return Err(FabricError::InvalidPath("empty route".into()));
        }
        Ok(Self { routes })
    }

    pub fn routes(&self) -> &[Vec<NodeId>] {
        &self.routes
    }

    /// The common first node, if all routes share one.
    pub fn root(&self) -> Option<NodeId> {
        let first = self.routes[0][0];
        self.routes.iter().all(|r| r[0] == first).then_some(first)
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        let mut seen = BTreeSet::new();
        self.routes
            .iter()
            .map(|r| *r.last().unwrap())
            .filter(|n| seen.insert(*n))
            .collect()
    }

    /// Directed edges, each listed once, in route order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut seen = BTreeSet::new();
        self.routes
            .iter()
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
            .filter(|e| seen.insert(*e))
            .collect()
    }

    /// Sum of hop counts if every leaf were reached by its own unicast.
    pub fn unicast_hops(&self) -> usize {
        self.routes.iter().map(|r| r.len() - 1).sum()
    }

    /// Routes reversed (destinations become sources).
    pub fn reversed(&self) -> ForwardingPath {
        ForwardingPath {
            routes: self
                .routes
                .iter()
                .map(|r| r.iter().rev().copied().collect())
                .collect(),
        }
    }

    /// Merges the routes of several paths into one; fails unless the result is a tree.
    pub fn union<'a>(paths: impl IntoIterator<Item = &'a ForwardingPath>) -> Result<Self, FabricError> {
        let routes = paths.into_iter().flat_map(|p| p.routes.iter().cloned()).collect();
        Self::tree(routes)
    }
}

impl fmt::Display for ForwardingPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, route) in self.routes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            for (j, n) in route.iter().enumerate() {
                if j > 0 {
                    f.write_str(">")?;
                }
                write!(f, "{n}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(u32, u32)]) -> Topology {
        let mut t = Topology::new();
        for i in 0..n {
            t.add_node(format!("n{i}"));
        }
        for &(a, b) in edges {
            t.add_link(NodeId(a), NodeId(b), DEFAULT_LINK_LATENCY).unwrap();
        }
        t
    }

    fn set(ids: &[u32]) -> BTreeSet<NodeId> {
        ids.iter().map(|i| NodeId(*i)).collect()
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|i| NodeId(*i)).collect()
    }

    #[test]
    fn line_topology_unique_path() {
        let t = graph(3, &[(0, 1), (1, 2)]);
        let (fwd, rev) = t.compute_paths(NodeId(0), &set(&[2])).unwrap();
        assert_eq!(fwd.routes(), &[ids(&[0, 1, 2])]);
        assert_eq!(rev.routes(), &[ids(&[2, 1, 0])]);
    }

    #[test]
    fn disconnected_subscriber() {
        let t = graph(3, &[(0, 1)]);
        assert_eq!(
            t.compute_paths(NodeId(0), &set(&[2])),
            Err(FabricError::DisconnectedTopology {
                from: NodeId(0),
                to: NodeId(2)
            })
        );
    }

    #[test]
    fn detached_node_breaks_connectivity() {
        let mut t = graph(3, &[(0, 1), (1, 2)]);
        t.detach(NodeId(1));
        assert!(matches!(
            t.compute_paths(NodeId(0), &set(&[2])),
            Err(FabricError::DisconnectedTopology { .. })
        ));
        assert_eq!(t.route_latency(&ids(&[0, 1, 2])), Err(FabricError::BrokenPath(NodeId(1))));
    }

    #[test]
    fn tree_validation() {
        assert!(ForwardingPath::tree(vec![ids(&[0, 1, 2]), ids(&[0, 1, 3])]).is_ok());
        assert!(ForwardingPath::tree(vec![ids(&[0, 1, 3]), ids(&[0, 2, 3])]).is_err());
        assert!(ForwardingPath::tree(vec![ids(&[0, 1]), ids(&[1, 2])]).is_err());
        assert!(ForwardingPath::tree(vec![]).is_err());
        assert!(ForwardingPath::tree(vec![vec![]]).is_err());
    }

    #[test]
    fn shared_prefix_edges_counted_once() {
        let p = ForwardingPath::tree(vec![ids(&[0, 1, 2]), ids(&[0, 1, 3])]).unwrap();
        assert_eq!(p.edges(), vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2)), (NodeId(1), NodeId(3))]);
        assert_eq!(p.unicast_hops(), 4);
        assert_eq!(p.leaves(), ids(&[2, 3]));
        assert_eq!(p.to_string(), "0>1>2,0>1>3");
    }

    #[test]
    fn ties_take_lowest_id_parent() {
        // Square 0-1-3, 0-2-3: both parents of 3 are at depth 1; 1 wins.
        let t = graph(4, &[(0, 2), (0, 1), (2, 3), (1, 3)]);
        let (fwd, _) = t.compute_paths(NodeId(0), &set(&[3])).unwrap();
        assert_eq!(fwd.routes(), &[ids(&[0, 1, 3])]);
    }

    #[test]
    fn self_delivery_route() {
        let t = graph(1, &[]);
        let (fwd, _) = t.compute_paths(NodeId(0), &set(&[0])).unwrap();
        assert_eq!(fwd.routes(), &[ids(&[0])]);
        assert!(fwd.edges().is_empty());
    }
}
