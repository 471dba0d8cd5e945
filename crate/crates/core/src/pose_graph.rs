//! Pose graphs of mapping sessions and their merging through a verified
//! re-localisation edge.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::geom::RigidTransform;
use crate::hexfloat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Anchors one submap.
    Root { submap: u64 },
    /// Rigidly attached to a root node.
    Child { root: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: u64,
    pub kind: NodeKind,
    /// Pose in the session frame.
    pub pose: RigidTransform,
}

/// `relative = pose(from)⁻¹ ∘ pose(to)`: maps `to`-frame points into the
/// `from` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from: u64,
    pub to: u64,
    pub relative: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    session: String,
    nodes: BTreeMap<u64, GraphNode>,
    edges: Vec<GraphEdge>,
}

impl PoseGraph {
    pub fn new(session: impl Into<String>) -> Result<Self> {
        let session = session.into();
        if session.is_empty() || session.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("session tag `{session}` must be a non-empty word")));
        }
        Ok(Self {
            session,
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn node(&self, id: u64) -> Option<&GraphNode> {
        self.nodes.get(&id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn max_id(&self) -> Option<u64> {
        self.nodes.keys().next_back().copied()
    }

    pub fn add_node(&mut self, node: GraphNode) -> Result<()> {
        if self.nodes.contains_key(&node.id) {
            return Err(Error::Structural(format!("duplicate node {}", node.id)));
        }
        if let NodeKind::Child { root } = node.kind {
            match self.nodes.get(&root) {
                Some(GraphNode {
                    kind: NodeKind::Root { .. },
                    ..
                }) => {}
                _ => return Err(Error::Structural(format!("child {} names missing root {root}", node.id))),
            }
        }
        self.nodes.insert(node.id, node);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: GraphEdge) -> Result<()> {
        for end in [edge.from, edge.to] {
            if !self.nodes.contains_key(&end) {
                return Err(Error::Structural(format!("edge {}→{} names missing node {end}", edge.from, edge.to)));
            }
        }
        if edge.from == edge.to {
            return Err(Error::Structural(format!("self-loop on node {}", edge.from)));
        }
        if self.edges.iter().any(|e| e.from == edge.from && e.to == edge.to) {
            return Err(Error::Structural(format!("duplicate edge {}→{}", edge.from, edge.to)));
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Adds an edge whose relative transform is taken from the current poses.
    pub fn connect(&mut self, from: u64, to: u64) -> Result<()> {
        let (a, b) = match (self.nodes.get(&from), self.nodes.get(&to)) {
            (Some(a), Some(b)) => (a.pose, b.pose),
            _ => return Err(Error::Structural(format!("edge {from}→{to} names a missing node"))),
        };
        self.add_edge(GraphEdge {
            from,
            to,
            relative: a.inverse().compose(&b),
        })
    }

    /// True iff the nodes form one component through edges and child→root
    /// attachments (the empty graph counts as connected).
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.keys().next() else { return true };
        let mut adj: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        let mut link = |a: u64, b: u64| {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        };
        for e in &self.edges {
            link(e.from, e.to);
        }
        for n in self.nodes.values() {
            if let NodeKind::Child { root } = n.kind {
                link(n.id, root);
            }
        }
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in adj.get(&n).into_iter().flatten() {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    pub fn to_text(&self) -> String {
        let pose = |t: &RigidTransform| -> String {
            t.to_array().iter().map(|v| hexfloat::format(*v)).collect::<Vec<_>>().join(" ")
        };
        let mut s = format!("session {}\n", self.session);
        for n in self.nodes.values() {
            let (kind, reference) = match n.kind {
                NodeKind::Root { submap } => ("root", submap),
                NodeKind::Child { root } => ("child", root),
            };
            writeln!(s, "node {} {kind} {reference} {}", n.id, pose(&n.pose)).unwrap();
        }
        for e in &self.edges {
            writeln!(s, "{}", edge_line(e)).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut graph: Option<PoseGraph> = None;
        let mut roots = Vec::new();
        let mut children = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let t: Vec<&str> = l.split_whitespace().collect();
            match t[0] {
                "session" if graph.is_none() && t.len() == 2 => {
                    graph = Some(PoseGraph::new(t[1]).map_err(|e| Error::parse(line, e.to_string()))?);
                }
                "node" if t.len() == 11 => {
                    let id = parse_id(line, t[1])?;
                    let reference = parse_id(line, t[3])?;
                    let kind = match t[2] {
                        "root" => NodeKind::Root { submap: reference },
                        "child" => NodeKind::Child { root: reference },
                        other => return Err(Error::parse(line, format!("unknown node kind `{other}`"))),
                    };
                    let node = GraphNode {
                        id,
                        kind,
                        pose: parse_pose(line, &t[4..])?,
                    };
                    match kind {
                        NodeKind::Root { .. } => roots.push((line, node)),
                        NodeKind::Child { .. } => children.push((line, node)),
                    }
                }
                "edge" if t.len() == 10 => edges.push((line, parse_edge_tokens(line, &t[1..])?)),
                _ => return Err(Error::parse(line, format!("unexpected line `{l}`"))),
            }
        }
        let mut graph = graph.ok_or_else(|| Error::parse(1, "missing `session` line"))?;
        for (line, n) in roots.into_iter().chain(children) {
            graph.add_node(n).map_err(|e| Error::parse(line, e.to_string()))?;
        }
        for (line, e) in edges {
            graph.add_edge(e).map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(graph)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `edge <from> <to> <w x y z tx ty tz>` with hexadecimal floats.
pub fn edge_line(e: &GraphEdge) -> String {
    let p: Vec<String> = e.relative.to_array().iter().map(|v| hexfloat::format(*v)).collect();
    format!("edge {} {} {}", e.from, e.to, p.join(" "))
}

/// Inverse of [`edge_line`].
pub fn parse_edge_line(l: &str) -> Result<GraphEdge> {
    let t: Vec<&str> = l.split_whitespace().collect();
    if t.len() != 10 || t[0] != "edge" {
        return Err(Error::parse(1, format!("not an edge line: `{l}`")));
    }
    parse_edge_tokens(1, &t[1..])
}

fn parse_edge_tokens(line: usize, t: &[&str]) -> Result<GraphEdge> {
    Ok(GraphEdge {
        from: parse_id(line, t[0])?,
        to: parse_id(line, t[1])?,
        relative: parse_pose(line, &t[2..])?,
    })
}

fn parse_id(line: usize, tok: &str) -> Result<u64> {
    tok.parse().map_err(|_| Error::parse(line, format!("bad id `{tok}`")))
}

fn parse_pose(line: usize, t: &[&str]) -> Result<RigidTransform> {
    let v: Option<Vec<f64>> = t.iter().map(|s| hexfloat::parse(s).filter(|v| v.is_finite())).collect();
    v.and_then(|v| RigidTransform::from_array(v.try_into().ok()?))
        .ok_or_else(|| Error::parse(line, "bad pose"))
}

/// Re-anchors `revisit` in the frame of `prior` through `edge` (from a prior
/// root to a revisit root). Revisit ids are shifted past the prior's largest
/// id; every revisit pose is left-multiplied by
/// `pose(t1) ∘ T_{t1,q} ∘ pose(q)⁻¹`. No optimisation is performed.
pub fn merge(prior: &PoseGraph, revisit: &PoseGraph, edge: &GraphEdge) -> Result<PoseGraph> {
    let t1 = prior
        .node(edge.from)
        .ok_or_else(|| Error::Structural(format!("edge source {} not in the prior graph", edge.from)))?;
    let q = revisit
        .node(edge.to)
        .ok_or_else(|| Error::Structural(format!("edge target {} not in the revisit graph", edge.to)))?;
    let anchor = t1.pose.compose(&edge.relative).compose(&q.pose.inverse());
    let offset = prior.max_id().map_or(0, |m| m + 1);
    let shift = |id: u64| {
        id.checked_add(offset)
            .ok_or_else(|| Error::Structural("node ids overflow when relabelled".into()))
    };

    let mut out = prior.clone();
    let revisit_nodes: Vec<&GraphNode> = revisit.nodes().collect();
    // roots first so children find them
    for n in revisit_nodes
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Root { .. }))
        .chain(revisit_nodes.iter().filter(|n| matches!(n.kind, NodeKind::Child { .. })))
    {
        let kind = match n.kind {
            NodeKind::Root { submap } => NodeKind::Root { submap },
            NodeKind::Child { root } => NodeKind::Child { root: shift(root)? },
        };
        out.add_node(GraphNode {
            id: shift(n.id)?,
            kind,
            pose: anchor.compose(&n.pose),
        })?;
    }
    for e in revisit.edges() {
        out.add_edge(GraphEdge {
            from: shift(e.from)?,
            to: shift(e.to)?,
            relative: e.relative,
        })?;
    }
    out.add_edge(GraphEdge {
        from: edge.from,
        to: shift(edge.to)?,
        relative: edge.relative,
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0));
        RigidTransform::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
    }

    /// Chain of roots, each with one child, consecutive roots connected.
    fn chain(session: &str, roots: u64, seed: u64) -> PoseGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = PoseGraph::new(session).unwrap();
        for r in 0..roots {
            let id = 2 * r;
            g.add_node(GraphNode {
                id,
                kind: NodeKind::Root { submap: r },
                pose: random_pose(&mut rng),
            })
            .unwrap();
            g.add_node(GraphNode {
                id: id + 1,
                kind: NodeKind::Child { root: id },
                pose: random_pose(&mut rng),
            })
            .unwrap();
            if r > 0 {
                g.connect(id - 2, id).unwrap();
            }
        }
        g
    }

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        let (r, t) = a.error_to(b);
        r <= tol && t <= tol
    }

    #[test]
    fn structural_errors() {
        let mut g = chain("s", 2, 1);
        let n = g.edges().len();
        g.connect(1, 3).unwrap();
        assert_eq!(g.edges().len(), n + 1);
        assert!(matches!(g.connect(1, 3), Err(Error::Structural(_))));
        assert!(matches!(g.connect(1, 42), Err(Error::Structural(_))));
        let orphan = GraphNode {
            id: 9,
            kind: NodeKind::Child { root: 1 },
            pose: RigidTransform::identity(),
        };
        assert!(matches!(g.add_node(orphan), Err(Error::Structural(_))));
        let dup = GraphNode {
            id: 0,
            kind: NodeKind::Root { submap: 5 },
            pose: RigidTransform::identity(),
        };
        assert!(matches!(g.add_node(dup), Err(Error::Structural(_))));
    }

    #[test]
    fn single_node_lands_on_t1() {
        let prior = chain("prior", 3, 2);
        let mut revisit = PoseGraph::new("revisit").unwrap();
        revisit
            .add_node(GraphNode {
                id: 0,
                kind: NodeKind::Root { submap: 0 },
                pose: RigidTransform::identity(),
            })
            .unwrap();
        let edge = GraphEdge {
            from: 2,
            to: 0,
            relative: RigidTransform::identity(),
        };
        let merged = merge(&prior, &revisit, &edge).unwrap();
        let q = merged.node(prior.max_id().unwrap() + 1).unwrap();
        assert!(close(&q.pose, &prior.node(2).unwrap().pose, 1e-12));
        assert!(merged.is_connected());
    }

    #[test]
    fn chain_matches_hand_composition() {
        let prior = chain("prior", 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let steps: Vec<RigidTransform> = (0..2).map(|_| random_pose(&mut rng)).collect();
        let mut revisit = PoseGraph::new("revisit").unwrap();
        let mut pose = random_pose(&mut rng);
        for (i, step) in std::iter::once(None).chain(steps.iter().map(Some)).enumerate() {
            if let Some(s) = step {
                pose = pose.compose(s);
            }
            revisit
                .add_node(GraphNode {
                    id: i as u64,
                    kind: NodeKind::Root { submap: i as u64 },
                    pose,
                })
                .unwrap();
            if i > 0 {
                revisit.connect(i as u64 - 1, i as u64).unwrap();
            }
        }
        let relative = random_pose(&mut rng);
        let edge = GraphEdge { from: 4, to: 0, relative };
        let merged = merge(&prior, &revisit, &edge).unwrap();
        let off = prior.max_id().unwrap() + 1;
        let mut expect = prior.node(4).unwrap().pose.compose(&relative);
        assert!(close(&merged.node(off).unwrap().pose, &expect, 1e-9));
        for (i, s) in steps.iter().enumerate() {
            expect = expect.compose(s);
            assert!(close(&merged.node(off + i as u64 + 1).unwrap().pose, &expect, 1e-9));
        }
        assert_eq!(merged.node_count(), prior.node_count() + revisit.node_count());
        assert_eq!(merged.edges().len(), prior.edges().len() + revisit.edges().len() + 1);
    }

    #[test]
    fn merge_preserves_relative_poses_and_prior() {
        let prior = chain("prior", 10, 5);
        let revisit = chain("revisit", 6, 6);
        let edge = GraphEdge {
            from: 6,
            to: 4,
            relative: RigidTransform::from_yaw(1.0, Vector3::new(3.0, -2.0, 0.5)),
        };
        let merged = merge(&prior, &revisit, &edge).unwrap();
        for n in prior.nodes() {
            assert_eq!(merged.node(n.id).unwrap(), n);
        }
        let off = prior.max_id().unwrap() + 1;
        for e in revisit.edges() {
            let before = revisit.node(e.from).unwrap().pose.inverse().compose(&revisit.node(e.to).unwrap().pose);
            let after = merged
                .node(e.from + off)
                .unwrap()
                .pose
                .inverse()
                .compose(&merged.node(e.to + off).unwrap().pose);
            assert!(close(&before, &after, 1e-9));
        }
        let ids: BTreeSet<u64> = merged.nodes().map(|n| n.id).collect();
        assert_eq!(ids.len(), prior.node_count() + revisit.node_count());
        assert!(merged.is_connected());
        assert!(matches!(
            merge(&prior, &revisit, &GraphEdge { from: 99, to: 0, relative: RigidTransform::identity() }),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let g = chain("prior", 10, 7);
        assert_eq!(g.node_count(), 20);
        let back = PoseGraph::parse(&g.to_text()).unwrap();
        assert_eq!(back, g);
        let empty = PoseGraph::new("empty").unwrap();
        assert_eq!(PoseGraph::parse(&empty.to_text()).unwrap(), empty);
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path().join("g.txt")).unwrap();
        assert_eq!(PoseGraph::load(dir.path().join("g.txt")).unwrap(), g);
    }

    #[test]
    fn dangling_edge_reports_its_line() {
        let mut text = chain("prior", 2, 8).to_text();
        let e = GraphEdge {
            from: 0,
            to: 77,
            relative: RigidTransform::identity(),
        };
        text.push_str(&edge_line(&e));
        let lines = text.lines().count();
        match PoseGraph::parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, lines),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PoseGraph::parse("session a\nnode x"), Err(Error::Parse { line: 2, .. })));
        assert!(PoseGraph::parse("").is_err());
        assert_eq!(parse_edge_line(&edge_line(&e)).unwrap(), e);
    }
}
