use serde::{Deserialize, Serialize};

use super::{segment_hits_triangle, Aabb, Segment, TriangleMesh, INTERSECTION_TOLERANCE};
use crate::se3::Vec3;

const LEAF_SIZE: usize = 4;
// Box slack for the traversal; generous relative to the contact tolerance so
// the tree never prunes a triangle the exact test would report.
const BOX_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Inner { bbox: Aabb, left: u32, right: u32 },
    Leaf { bbox: Aabb, start: u32, len: u32 },
}

impl TreeNode {
    pub fn bbox(&self) -> &Aabb {
        match self {
            TreeNode::Inner { bbox, .. } | TreeNode::Leaf { bbox, .. } => bbox,
        }
    }
}

/// Binary AABB hierarchy over the union of a set of triangle meshes.
///
/// Nodes are split at the centroid median along the longest box axis until a
/// leaf holds at most four triangles. Triangles are stored in leaf order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AabbTree {
    nodes: Vec<TreeNode>,
    triangles: Vec<[Vec3; 3]>,
    source: Vec<u32>,
}

impl AabbTree {
    pub fn build(meshes: &[TriangleMesh]) -> AabbTree {
        let soup: Vec<[Vec3; 3]> = meshes.iter().flat_map(|m| m.triangle_soup()).collect();
        Self::from_triangles(soup)
    }

    pub fn from_triangles(soup: Vec<[Vec3; 3]>) -> AabbTree {
        if soup.is_empty() {
            return AabbTree::default();
        }
        let boxes: Vec<Aabb> = soup.iter().map(Aabb::of_triangle).collect();
        let centroids: Vec<Vec3> = soup.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..soup.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * soup.len() / LEAF_SIZE + 1);
        build_node(&mut nodes, &mut order, 0, &boxes, &centroids);
        let triangles = order.iter().map(|&i| soup[i as usize]).collect();
        AabbTree { nodes, triangles, source: order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Triangles in leaf order.
    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.triangles
    }

    /// Index of each stored triangle in the input soup.
    pub fn source_indices(&self) -> &[u32] {
        &self.source
    }

    pub fn root_box(&self) -> Option<&Aabb> {
        self.nodes.first().map(|n| n.bbox())
    }

    pub fn segment_intersects(&self, s: &Segment) -> bool {
        self.segment_intersects_counted(s).0
    }

    /// Query result plus the number of nodes visited.
    pub fn segment_intersects_counted(&self, s: &Segment) -> (bool, usize) {
        if self.nodes.is_empty() {
            return (false, 0);
        }
        let mut visited = 0;
        let mut stack: [u32; 64] = [0; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            visited += 1;
            if !node.bbox().intersects_segment(s, BOX_MARGIN) {
                continue;
            }
            match *node {
                TreeNode::Inner { left, right, .. } => {
                    stack[top] = right;
                    stack[top + 1] = left;
                    top += 2;
                }
                TreeNode::Leaf { start, len, .. } => {
                    let tris = &self.triangles[start as usize..(start + len) as usize];
                    if tris.iter().any(|t| segment_hits_triangle(s, t, INTERSECTION_TOLERANCE)) {
                        return (true, visited);
                    }
                }
            }
        }
        (false, visited)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn audit(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return if self.triangles.is_empty() { Ok(()) } else { Err("triangles without nodes".into()) };
        }
        let mut covered = vec![0u32; self.triangles.len()];
        let mut stack = vec![0u32];
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            match self.nodes[i as usize] {
                TreeNode::Inner { bbox, left, right } => {
                    for child in [left, right] {
                        if !bbox.contains_box(self.nodes[child as usize].bbox()) {
                            return Err(format!("node {child} escapes parent {i}"));
                        }
                        stack.push(child);
                    }
                }
                TreeNode::Leaf { bbox, start, len } => {
                    if len == 0 || len as usize > LEAF_SIZE {
                        return Err(format!("leaf {i} holds {len} triangles"));
                    }
                    for k in start..start + len {
                        if !bbox.contains_box(&Aabb::of_triangle(&self.triangles[k as usize])) {
                            return Err(format!("triangle {k} escapes leaf {i}"));
                        }
                        covered[k as usize] += 1;
                    }
                }
            }
        }
        if reached != self.nodes.len() {
            return Err(format!("{} of {} nodes reachable", reached, self.nodes.len()));
        }
        if let Some(k) = covered.iter().position(|&c| c != 1) {
            return Err(format!("triangle {k} covered {} times", covered[k]));
        }
        let mut src = self.source.clone();
        src.sort_unstable();
        if src.iter().enumerate().any(|(i, &s)| s as usize != i) {
            return Err("leaf order is not a permutation of the input".into());
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: u32) -> usize {
            match nodes[i as usize] {
                TreeNode::Inner { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                TreeNode::Leaf { .. } => 1,
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }
}

fn build_node(
    nodes: &mut Vec<TreeNode>,
    order: &mut [u32],
    offset: usize,
    boxes: &[Aabb],
    centroids: &[Vec3],
) -> u32 {
    let bbox = order
        .iter()
        .map(|&i| boxes[i as usize])
        .reduce(|a, b| a.union(&b))
        .expect("nonempty node");
    let index = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(TreeNode::Leaf { bbox, start: offset as u32, len: order.len() as u32 });
        return index;
    }
    let axis = bbox.longest_axis();
    order.sort_unstable_by(|&a, &b| {
        centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
    });
    nodes.push(TreeNode::Leaf { bbox, start: 0, len: 0 });
    let mid = order.len() / 2;
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(nodes, lo, offset, boxes, centroids);
    let right = build_node(nodes, hi, offset + mid, boxes, centroids);
    nodes[index as usize] = TreeNode::Inner { bbox, left, right };
    index
}
