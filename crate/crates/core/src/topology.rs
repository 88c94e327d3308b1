//! Neighbor sets for star, ring and mesh networks.
//!
//! Node ids are `0..node_count`. In a star, node 0 is the server and every
//! other node is a client. Ring order follows id order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::NodeId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Star,
    Ring,
    Mesh,
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(TopologyKind::Star),
            "ring" => Ok(TopologyKind::Ring),
            "mesh" => Ok(TopologyKind::Mesh),
            other => Err(Error::Config(format!("unknown topology {other:?}"))),
        }
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TopologyKind::Star => "star",
            TopologyKind::Ring => "ring",
            TopologyKind::Mesh => "mesh",
        })
    }
}

pub const SERVER_ID: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    kind: TopologyKind,
    node_count: usize,
}

impl Topology {
    /// Stars need a server and at least one client; rings and meshes need
    /// three nodes so that every neighbor is distinct.
    pub fn new(kind: TopologyKind, node_count: usize) -> Result<Self> {
        let min = match kind {
            TopologyKind::Star => 2,
            TopologyKind::Ring | TopologyKind::Mesh => 3,
        };
        if node_count < min {
            return Err(Error::Config(format!("{kind} topology needs at least {min} nodes, got {node_count}")));
        }
        if node_count > NodeId::MAX as usize {
            return Err(Error::Config("too many nodes".into()));
        }
        Ok(Topology { kind, node_count })
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Neighbor ids in ascending order.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<NodeId>> {
        let n = self.node_count as NodeId;
        if node >= n {
            return Err(Error::Config(format!("node {node} outside 0..{n}")));
        }
        let mut out = match self.kind {
            TopologyKind::Ring => vec![(node + n - 1) % n, (node + 1) % n],
            TopologyKind::Mesh => (0..n).filter(|&j| j != node).collect(),
            TopologyKind::Star if node == SERVER_ID => (1..n).collect(),
            TopologyKind::Star => vec![SERVER_ID],
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Directed model transfers in one round. A star counts one upload and
    /// one download per client.
    pub fn exchanges_per_round(&self) -> usize {
        let n = self.node_count;
        match self.kind {
            TopologyKind::Ring => 2 * n,
            TopologyKind::Mesh => n * (n - 1),
            TopologyKind::Star => 2 * (n - 1),
        }
    }
}

/// One entry of a topology file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAddress {
    pub id: NodeId,
    pub address: String,
    pub port: u16,
}

impl NodeAddress {
    pub fn socket_addr(&self) -> String {
        format!("{}:{}", self.address, self.port)
    }
}

/// `{"kind": "ring", "nodes": [{"id": 0, "address": "127.0.0.1", "port": 7000}, ...]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub kind: TopologyKind,
    pub nodes: Vec<NodeAddress>,
}

impl TopologyFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: TopologyFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        file.topology()?;
        Ok(file)
    }

    /// Validates ids (contiguous from 0) and builds the topology.
    pub fn topology(&self) -> Result<Topology> {
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
            return Err(Error::Config(format!("node ids must be 0..{} without gaps", self.nodes.len())));
        }
        Topology::new(self.kind, self.nodes.len())
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeAddress> {
        self.nodes.iter().find(|n| n.id == id).ok_or_else(|| Error::Config(format!("node {id} not in topology file")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_and_mesh_neighbors() {
        assert_eq!(Topology::new(TopologyKind::Ring, 4).unwrap().neighbors(1).unwrap(), vec![0, 2]);
        assert_eq!(Topology::new(TopologyKind::Ring, 4).unwrap().neighbors(0).unwrap(), vec![1, 3]);
        assert_eq!(Topology::new(TopologyKind::Mesh, 4).unwrap().neighbors(1).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn star_neighbors() {
        let t = Topology::new(TopologyKind::Star, 4).unwrap();
        assert_eq!(t.neighbors(0).unwrap(), vec![1, 2, 3]);
        assert_eq!(t.neighbors(2).unwrap(), vec![0]);
        assert_eq!(t.exchanges_per_round(), 6);
    }

    #[test]
    fn three_nodes_ring_equals_mesh() {
        let ring = Topology::new(TopologyKind::Ring, 3).unwrap();
        let mesh = Topology::new(TopologyKind::Mesh, 3).unwrap();
        for i in 0..3 {
            assert_eq!(ring.neighbors(i).unwrap(), mesh.neighbors(i).unwrap());
        }
        assert_eq!(ring.exchanges_per_round(), 6);
        assert_eq!(mesh.exchanges_per_round(), 6);
    }

    #[test]
    fn exchange_counts() {
        assert_eq!(Topology::new(TopologyKind::Ring, 4).unwrap().exchanges_per_round(), 8);
        assert_eq!(Topology::new(TopologyKind::Mesh, 4).unwrap().exchanges_per_round(), 12);
    }

    #[test]
    fn minimum_sizes_and_range_checks() {
        assert!(Topology::new(TopologyKind::Ring, 2).is_err());
        assert!(Topology::new(TopologyKind::Mesh, 2).is_err());
        assert!(Topology::new(TopologyKind::Star, 1).is_err());
        assert!(matches!(Topology::new(TopologyKind::Ring, 3).unwrap().neighbors(3), Err(Error::Config(_))));
    }

    #[test]
    fn symmetric_regular_and_counted() {
        for kind in [TopologyKind::Ring, TopologyKind::Mesh] {
            for n in 3..12 {
                let t = Topology::new(kind, n).unwrap();
                let degree = t.neighbors(0).unwrap().len();
                let mut total = 0;
                for i in 0..n as NodeId {
                    let nb = t.neighbors(i).unwrap();
                    assert_eq!(nb.len(), degree);
                    total += nb.len();
                    for j in nb {
                        assert!(t.neighbors(j).unwrap().contains(&i));
                    }
                }
                assert_eq!(total, t.exchanges_per_round());
            }
        }
    }

    #[test]
    fn topology_file_parses() {
        let text = r#"{"kind":"mesh","nodes":[
            {"id":1,"address":"127.0.0.1","port":7001},
            {"id":0,"address":"127.0.0.1","port":7000},
            {"id":2,"address":"127.0.0.1","port":7002}]}"#;
        let f: TopologyFile = serde_json::from_str(text).unwrap();
        assert_eq!(f.topology().unwrap().node_count(), 3);
        assert_eq!(f.node(2).unwrap().socket_addr(), "127.0.0.1:7002");
        let gap = TopologyFile { nodes: vec![f.nodes[0].clone(), f.nodes[2].clone()], ..f };
        assert!(gap.topology().is_err());
    }
}
