//! Joint hierarchies in topological order.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, in scene units.
    pub offset: Vector3<f64>,
}

impl Joint {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: Vector3<f64>) -> Self {
        Joint {
            name: name.into(),
            parent,
            offset,
        }
    }
}

/// A rigged hierarchy. Joint 0 is the root and every parent precedes its
/// children, so a single forward pass visits parents first.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::contract("skeleton has no joints"));
        }
        if joints[0].parent.is_some() {
            return Err(Error::contract("joint 0 must be the root (no parent)"));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                None => {
                    return Err(Error::contract(format!(
                        "joint {i} ({}) has no parent; only joint 0 may be the root",
                        j.name
                    )))
                }
                Some(p) if p >= i => {
                    return Err(Error::contract(format!(
                        "joint {i} ({}) has parent {p}; parents must precede children",
                        j.name
                    )))
                }
                Some(_) => {}
            }
        }
        let skeleton = Skeleton { joints };
        skeleton.check_acyclic()?;
        Ok(skeleton)
    }

    /// Walks every joint to the root; a walk longer than the joint count
    /// means a cycle.
    fn check_acyclic(&self) -> Result<()> {
        let n = self.joints.len();
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.joints[cur].parent {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::contract(format!(
                        "cycle in parent relation through joint {start}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// A simple chain where joint `i` hangs off joint `i - 1`.
    pub fn chain(offsets: &[Vector3<f64>]) -> Result<Self> {
        let joints = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| Joint::new(format!("joint{i}"), i.checked_sub(1), *o))
            .collect();
        Self::new(joints)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn offset(&self, j: usize) -> &Vector3<f64> {
        &self.joints[j].offset
    }

    /// Hierarchy depth of each joint: root 0, child = parent + 1.
    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.joints.len()];
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                d[i] = d[p] + 1;
            }
        }
        d
    }

    /// Rest-pose global positions with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let p = match j.parent {
                Some(p) => out[p] + j.offset,
                None => Vector3::zeros(),
            };
            out.push(p);
        }
        out
    }

    /// Largest axis-aligned extent of the rest pose. Used to make position
    /// errors comparable across characters; a degenerate single-point
    /// skeleton reports 1.
    pub fn height(&self) -> f64 {
        let rest = self.rest_positions();
        let mut lo = rest[0];
        let mut hi = rest[0];
        for p in &rest {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = (hi - lo).max();
        if ext > 0.0 {
            ext
        } else {
            1.0
        }
    }

    /// True if both skeletons share parents and offsets (names may differ).
    pub fn same_structure(&self, other: &Skeleton) -> bool {
        self.joints.len() == other.joints.len()
            && self
                .joints
                .iter()
                .zip(&other.joints)
                .all(|(a, b)| a.parent == b.parent && (a.offset - b.offset).norm() <= 1e-12)
    }
}

/// Depth of every joint below the root.
pub fn joint_hierarchy_depths(skeleton: &Skeleton) -> Vec<usize> {
    skeleton.depths()
}
