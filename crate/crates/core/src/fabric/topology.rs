use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    /// Where UE traffic leaves the EPC toward the cluster.
    EpcEgress,
    /// An intermediate switch or router.
    Router(u32),
    Host(Ipv4Addr),
}

/// Undirected link graph of the edge network.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    adjacency: BTreeMap<Node, BTreeSet<Node>>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn link(&mut self, a: Node, b: Node) {
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    pub fn contains(&self, node: Node) -> bool {
        self.adjacency.contains_key(&node)
    }

    /// Links crossed on the shortest path, or `None` if unreachable.
    pub fn hops(&self, from: Node, to: Node) -> Option<u32> {
        if from == to {
            return Some(0);
        }
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([(from, 0u32)]);
        while let Some((node, dist)) = queue.pop_front() {
            for &next in self.adjacency.get(&node).into_iter().flatten() {
                if next == to {
                    return Some(dist + 1);
                }
                if seen.insert(next) {
                    queue.push_back((next, dist + 1));
                }
            }
        }
        None
    }
}
