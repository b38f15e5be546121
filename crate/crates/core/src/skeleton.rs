//! Keypoint graph and the two-pass message schedule used for exact tree inference.

use crate::error::{Error, Result};

/// Number of hand keypoints.
pub const NUM_KEYPOINTS: usize = 21;
/// Wrist; root of the default hand tree.
pub const WRIST: usize = 0;
/// Base of the middle finger. The wrist-to-here vector defines the canonical hand direction.
pub const MIDDLE_BASE: usize = 9;
/// Joints per finger chain.
pub const JOINTS_PER_FINGER: usize = 4;

/// Keypoint index. For the hand tree, finger `f` owns `4f+1..=4f+4`, base to tip.
pub type KeypointId = usize;

/// Rooted tree over keypoints. Edges are stored parent to child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTree {
    root: KeypointId,
    edges: Vec<(KeypointId, KeypointId)>,
    parent: Vec<Option<KeypointId>>,
    children: Vec<Vec<KeypointId>>,
    neighbors: Vec<Vec<KeypointId>>,
    schedule: MessageSchedule,
    // dense (sender, receiver) -> schedule position
    slot: Vec<Option<usize>>,
}

/// Ordered directed sends: the leaf-to-root half followed by the root-to-leaf half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSchedule {
    sends: Vec<(KeypointId, KeypointId)>,
}

impl MessageSchedule {
    pub fn sends(&self) -> &[(KeypointId, KeypointId)] {
        &self.sends
    }

    pub fn len(&self) -> usize {
        self.sends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty()
    }

    /// Sends toward the root.
    pub fn upward(&self) -> &[(KeypointId, KeypointId)] {
        &self.sends[..self.sends.len() / 2]
    }

    /// Sends away from the root; each is a (parent, child) tree edge.
    pub fn downward(&self) -> &[(KeypointId, KeypointId)] {
        &self.sends[self.sends.len() / 2..]
    }
}

impl SkeletonTree {
    /// Builds a tree from parent-to-child edges, rejecting cycles, multiple
    /// parents and disconnected nodes.
    pub fn new(
        num_nodes: usize,
        root: KeypointId,
        edges: &[(KeypointId, KeypointId)],
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidTree("tree has no nodes".into()));
        }
        if root >= num_nodes {
            return Err(Error::InvalidTree(format!(
                "root {root} out of range for {num_nodes} nodes"
            )));
        }
        if edges.len() + 1 != num_nodes {
            return Err(Error::InvalidTree(format!(
                "{} edges over {num_nodes} nodes (a tree needs {})",
                edges.len(),
                num_nodes - 1
            )));
        }
        let mut parent = vec![None; num_nodes];
        let mut children = vec![Vec::new(); num_nodes];
        for &(p, c) in edges {
            if p >= num_nodes || c >= num_nodes {
                return Err(Error::InvalidTree(format!(
                    "edge ({p}, {c}) references a missing node"
                )));
            }
            if p == c {
                return Err(Error::InvalidTree(format!("self loop at node {p}")));
            }
            if c == root {
                return Err(Error::InvalidTree(format!("edge ({p}, {c}) points into the root")));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::InvalidTree(format!(
                    "node {c} has more than one parent (cycle)"
                )));
            }
            children[p].push(c);
        }
        for ch in &mut children {
            ch.sort_unstable();
        }

        // every node must be reachable from the root
        let mut seen = vec![false; num_nodes];
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            seen[n] = true;
            stack.extend(children[n].iter().copied().filter(|&c| !seen[c]));
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTree(format!(
                "node {lost} is unreachable from root {root} (cycle or disconnection)"
            )));
        }

        let neighbors = (0..num_nodes)
            .map(|i| {
                let mut n: Vec<_> = parent[i].into_iter().chain(children[i].iter().copied()).collect();
                n.sort_unstable();
                n
            })
            .collect();

        let schedule = build_schedule(root, &parent, &children);
        let mut slot = vec![None; num_nodes * num_nodes];
        for (k, &(s, r)) in schedule.sends.iter().enumerate() {
            slot[s * num_nodes + r] = Some(k);
        }

        Ok(SkeletonTree {
            root,
            edges: edges.to_vec(),
            parent,
            children,
            neighbors,
            schedule,
            slot,
        })
    }

    /// Wrist-rooted hand tree: five chains of four joints hanging off keypoint 0.
    pub fn hand() -> Self {
        let mut edges = Vec::with_capacity(NUM_KEYPOINTS - 1);
        for f in 0..5 {
            let base = JOINTS_PER_FINGER * f + 1;
            edges.push((WRIST, base));
            for j in 0..JOINTS_PER_FINGER - 1 {
                edges.push((base + j, base + j + 1));
            }
        }
        SkeletonTree::new(NUM_KEYPOINTS, WRIST, &edges).expect("hand layout is a tree")
    }

    /// Straight chain `0 - 1 - ... - (n-1)` rooted at 0.
    pub fn chain(num_nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (1..num_nodes).map(|c| (c - 1, c)).collect();
        SkeletonTree::new(num_nodes, 0, &edges)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> KeypointId {
        self.root
    }

    pub fn edges(&self) -> &[(KeypointId, KeypointId)] {
        &self.edges
    }

    pub fn parent(&self, i: KeypointId) -> Option<KeypointId> {
        self.parent[i]
    }

    pub fn children(&self, i: KeypointId) -> &[KeypointId] {
        &self.children[i]
    }

    /// `Nbd(i)`, ascending.
    pub fn neighbors(&self, i: KeypointId) -> &[KeypointId] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: KeypointId) -> usize {
        self.neighbors[i].len()
    }

    pub fn schedule(&self) -> &MessageSchedule {
        &self.schedule
    }

    /// Position of the directed send `sender -> receiver` in the schedule, if it is an edge.
    pub fn slot(&self, sender: KeypointId, receiver: KeypointId) -> Option<usize> {
        let n = self.len();
        if sender >= n || receiver >= n {
            return None;
        }
        self.slot[sender * n + receiver]
    }

    /// Number of edges on the path between two nodes.
    pub fn path_length(&self, a: KeypointId, b: KeypointId) -> usize {
        let depth = |mut n: KeypointId| {
            let mut d = 0;
            while let Some(p) = self.parent[n] {
                n = p;
                d += 1;
            }
            d
        };
        let (mut a, mut b) = (a, b);
        let (mut da, mut db) = (depth(a), depth(b));
        let mut len = 0;
        while da > db {
            a = self.parent[a].unwrap();
            da -= 1;
            len += 1;
        }
        while db > da {
            b = self.parent[b].unwrap();
            db -= 1;
            len += 1;
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
            len += 2;
        }
        len
    }
}

/// Schedule for a validated tree; identical to [`SkeletonTree::schedule`].
pub fn message_schedule(tree: &SkeletonTree) -> MessageSchedule {
    tree.schedule.clone()
}

fn build_schedule(
    root: KeypointId,
    parent: &[Option<KeypointId>],
    children: &[Vec<KeypointId>],
) -> MessageSchedule {
    // pre-order with ascending children
    let mut order = Vec::with_capacity(parent.len());
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        order.push(n);
        stack.extend(children[n].iter().rev().copied());
    }

    let mut sends = Vec::with_capacity(2 * (parent.len() - 1));
    // post-order: children (ascending) before their parent
    let mut post = Vec::with_capacity(parent.len());
    let mut stack = vec![(root, false)];
    while let Some((n, expanded)) = stack.pop() {
        if expanded {
            post.push(n);
        } else {
            stack.push((n, true));
            stack.extend(children[n].iter().rev().map(|&c| (c, false)));
        }
    }
    for &n in &post {
        if let Some(p) = parent[n] {
            sends.push((n, p));
        }
    }
    for &n in &order {
        for &c in &children[n] {
            sends.push((n, c));
        }
    }
    MessageSchedule { sends }
}
