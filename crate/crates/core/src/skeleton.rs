//! Skeleton layouts: joint hierarchy, T-pose coordinates, mirror pairs and
//! the pooling groups used by the motion VAE.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REFERENCE_TOML: &str = include_str!("../assets/reference15.toml");

/// Latent joint groups in the order the VAE emits them.
pub const LATENT_GROUPS: [&str; 6] = ["torso", "pelvis", "left_arm", "right_arm", "left_leg", "right_leg"];

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub tpose_x: f64,
    pub tpose_y: f64,
    pub depth: usize,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonLayout {
    name: String,
    joints: Vec<Joint>,
    symmetry_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutFile {
    name: String,
    #[serde(default)]
    symmetry: Vec<[String; 2]>,
    joint: Vec<JointEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointEntry {
    name: String,
    #[serde(default)]
    parent: Option<String>,
    tpose: [f64; 2],
    #[serde(default)]
    group: Option<String>,
}

fn layout_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("skeleton layout: {}", msg.into()))
}

impl SkeletonLayout {
    /// The 15-joint skeleton used by the synthetic corpus.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_TOML).expect("bundled layout is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: LayoutFile = toml::from_str(text).map_err(|e| layout_err(e.to_string()))?;
        let mut index = HashMap::new();
        let mut joints = Vec::with_capacity(file.joint.len());
        for (i, entry) in file.joint.iter().enumerate() {
            if index.insert(entry.name.clone(), i).is_some() {
                return Err(layout_err(format!("duplicate joint {:?}", entry.name)));
            }
            let (parent, depth) = match &entry.parent {
                None => (None, 0),
                Some(p) => {
                    let &pi = index
                        .get(p)
                        .ok_or_else(|| layout_err(format!("parent {p:?} of {:?} must be listed first", entry.name)))?;
                    let depth: usize = joints.get(pi).map(|j: &Joint| j.depth + 1).unwrap_or(1);
                    (Some(pi), depth)
                }
            };
            joints.push(Joint {
                name: entry.name.clone(),
                parent,
                tpose_x: entry.tpose[0],
                tpose_y: entry.tpose[1],
                depth,
                group: entry.group.clone(),
            });
        }
        let symmetry_pairs = file
            .symmetry
            .iter()
            .map(|[l, r]| {
                let li = index.get(l).ok_or_else(|| layout_err(format!("unknown joint {l:?}")))?;
                let ri = index.get(r).ok_or_else(|| layout_err(format!("unknown joint {r:?}")))?;
                Ok((*li, *ri))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.name, joints, symmetry_pairs)
    }

    /// The layout in the same text format `from_toml_str` reads.
    pub fn to_toml_string(&self) -> String {
        let file = LayoutFile {
            name: self.name.clone(),
            symmetry: self
                .symmetry_pairs
                .iter()
                .map(|&(l, r)| [self.joints[l].name.clone(), self.joints[r].name.clone()])
                .collect(),
            joint: self
                .joints
                .iter()
                .map(|j| JointEntry {
                    name: j.name.clone(),
                    parent: j.parent.map(|p| self.joints[p].name.clone()),
                    tpose: [j.tpose_x, j.tpose_y],
                    group: j.group.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("layouts always serialize")
    }

    pub fn new(name: String, joints: Vec<Joint>, symmetry_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let roots: Vec<_> = joints.iter().filter(|j| j.parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(layout_err(format!("expected one root joint, found {}", roots.len())));
        }
        let root = roots[0];
        if root.depth != 0 || root.tpose_x != 0.0 || root.tpose_y != 0.0 {
            return Err(layout_err("the root must sit at the origin with depth 0"));
        }
        for j in &joints {
            if let Some(p) = j.parent {
                let parent = joints.get(p).ok_or_else(|| layout_err("parent index out of range"))?;
                if j.depth != parent.depth + 1 {
                    return Err(layout_err(format!("depth of {:?} is inconsistent", j.name)));
                }
            }
            if !(j.tpose_x.is_finite() && j.tpose_y.is_finite()) {
                return Err(layout_err(format!("non-finite T-pose for {:?}", j.name)));
            }
        }
        for &(l, r) in &symmetry_pairs {
            let (a, b) = (&joints[l], &joints[r]);
            if a.tpose_x != -b.tpose_x || a.tpose_y != b.tpose_y || a.depth != b.depth {
                return Err(layout_err(format!("{:?} and {:?} are not mirror images", a.name, b.name)));
            }
        }
        Ok(Self {
            name,
            joints,
            symmetry_pairs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
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

    pub fn symmetry_pairs(&self) -> &[(usize, usize)] {
        &self.symmetry_pairs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Undirected skeleton edges `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
            .collect()
    }

    /// Group index of each joint within `groups`.
    pub fn group_assignment(&self, groups: &[&str]) -> Result<Vec<usize>> {
        let assignment = self
            .joints
            .iter()
            .map(|j| {
                let g = j
                    .group
                    .as_deref()
                    .ok_or_else(|| layout_err(format!("joint {:?} has no pooling group", j.name)))?;
                groups
                    .iter()
                    .position(|x| *x == g)
                    .ok_or_else(|| layout_err(format!("unknown pooling group {g:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (gi, g) in groups.iter().enumerate() {
            if !assignment.contains(&gi) {
                return Err(layout_err(format!("pooling group {g:?} has no joints")));
            }
        }
        Ok(assignment)
    }

    /// Layout of the pooled latent joints: each group sits at the mean T-pose
    /// position of its members, at the depth of its shallowest member, and
    /// hangs from the group that owns that member's parent.
    pub fn pooled(&self, groups: &[&str]) -> Result<SkeletonLayout> {
        let assignment = self.group_assignment(groups)?;
        let mut pooled = Vec::with_capacity(groups.len());
        for (gi, g) in groups.iter().enumerate() {
            let members: Vec<&Joint> = self
                .joints
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == gi)
                .map(|(j, _)| j)
                .collect();
            let n = members.len() as f64;
            let top = members.iter().min_by_key(|j| j.depth).expect("non-empty group");
            let parent = top.parent.map(|p| assignment[p]);
            pooled.push(Joint {
                name: g.to_string(),
                parent,
                tpose_x: members.iter().map(|j| j.tpose_x).sum::<f64>() / n,
                tpose_y: members.iter().map(|j| j.tpose_y).sum::<f64>() / n,
                depth: top.depth,
                group: Some(g.to_string()),
            });
        }
        let mut pairs = Vec::new();
        for &(l, r) in &self.symmetry_pairs {
            let pair = (assignment[l], assignment[r]);
            if pair.0 != pair.1 && !pairs.contains(&pair) {
                pairs.push(pair);
            }
        }
        SkeletonLayout::new(format!("{}-pooled", self.name), pooled, pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_depths() {
        let s = SkeletonLayout::reference();
        assert_eq!(s.len(), 15);
        let depth = |n: &str| s.joints()[s.index_of(n).unwrap()].depth;
        assert_eq!(depth("pelvis"), 0);
        assert_eq!(depth("spine"), 1);
        assert_eq!(depth("head"), 2);
        assert_eq!(depth("l_wrist"), 4);
        assert_eq!(depth("r_ankle"), 3);
        assert_eq!(s.symmetry_pairs().len(), 6);
        assert_eq!(s.edges().len(), 14);
    }

    #[test]
    fn text_round_trip() {
        let s = SkeletonLayout::reference();
        assert_eq!(SkeletonLayout::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    #[test]
    fn pooled_layout_keeps_symmetry() {
        let s = SkeletonLayout::reference();
        let p = s.pooled(&LATENT_GROUPS).unwrap();
        assert_eq!(p.len(), 6);
        let pelvis = &p.joints()[1];
        assert_eq!((pelvis.tpose_x, pelvis.tpose_y, pelvis.depth), (0.0, 0.0, 0));
        assert_eq!(p.symmetry_pairs(), &[(2, 3), (4, 5)]);
        assert_eq!(p.joints()[2].depth, 2);
        assert_eq!(p.joints()[4].depth, 1);
    }

    #[test]
    fn rejects_broken_layouts() {
        let two_roots = r#"
name = "x"
[[joint]]
name = "a"
tpose = [0.0, 0.0]
[[joint]]
name = "b"
tpose = [0.0, 0.0]
"#;
        assert!(SkeletonLayout::from_toml_str(two_roots).is_err());
        let asym = r#"
name = "x"
symmetry = [["l", "r"]]
[[joint]]
name = "root"
tpose = [0.0, 0.0]
[[joint]]
name = "l"
parent = "root"
tpose = [0.2, 0.1]
[[joint]]
name = "r"
parent = "root"
tpose = [-0.3, 0.1]
"#;
        assert!(SkeletonLayout::from_toml_str(asym).is_err());
        let forward_ref = r#"
name = "x"
[[joint]]
name = "root"
tpose = [0.0, 0.0]
[[joint]]
name = "b"
parent = "c"
tpose = [0.0, 0.0]
"#;
        assert!(SkeletonLayout::from_toml_str(forward_ref).is_err());
    }

    #[test]
    fn missing_group_is_an_error() {
        let s = SkeletonLayout::reference();
        assert!(s.group_assignment(&["torso", "pelvis"]).is_err());
    }
}
