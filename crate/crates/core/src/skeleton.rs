//! The 20-joint skeleton and its kinematic tree.
//!
//! Every non-root joint terminates exactly one segment, so segments are
//! identified by their child joint. Segment order ("topology order") lists
//! parents before children and is the order used by state vectors, CSV
//! columns and forward kinematics.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

pub const NUM_JOINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum JointId {
    Root,
    Spine,
    Neck,
    Head,
    ShoL,
    ElbL,
    WriL,
    HanL,
    ShoR,
    ElbR,
    WriR,
    HanR,
    HipL,
    KneL,
    AnkL,
    FooL,
    HipR,
    KneR,
    AnkR,
    FooR,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Root,
        JointId::Spine,
        JointId::Neck,
        JointId::Head,
        JointId::ShoL,
        JointId::ElbL,
        JointId::WriL,
        JointId::HanL,
        JointId::ShoR,
        JointId::ElbR,
        JointId::WriR,
        JointId::HanR,
        JointId::HipL,
        JointId::KneL,
        JointId::AnkL,
        JointId::FooL,
        JointId::HipR,
        JointId::KneR,
        JointId::AnkR,
        JointId::FooR,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<JointId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Root => "ROOT",
            JointId::Spine => "SPINE",
            JointId::Neck => "NECK",
            JointId::Head => "HEAD",
            JointId::ShoL => "SHO_L",
            JointId::ElbL => "ELB_L",
            JointId::WriL => "WRI_L",
            JointId::HanL => "HAN_L",
            JointId::ShoR => "SHO_R",
            JointId::ElbR => "ELB_R",
            JointId::WriR => "WRI_R",
            JointId::HanR => "HAN_R",
            JointId::HipL => "HIP_L",
            JointId::KneL => "KNE_L",
            JointId::AnkL => "ANK_L",
            JointId::FooL => "FOO_L",
            JointId::HipR => "HIP_R",
            JointId::KneR => "KNE_R",
            JointId::AnkR => "ANK_R",
            JointId::FooR => "FOO_R",
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JointId::ALL
            .iter()
            .copied()
            .find(|j| j.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown joint name `{s}`")))
    }
}

/// Rotational degrees of freedom a joint is modeled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Dof {
    pub fn from_count(n: u8) -> Option<Dof> {
        match n {
            1 => Some(Dof::One),
            2 => Some(Dof::Two),
            3 => Some(Dof::Three),
            _ => None,
        }
    }

    pub fn count(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub child: JointId,
    pub parent: JointId,
    pub dof: Dof,
    pub name: String,
}

/// Canonical segment name for an edge; the 14 evaluation segments carry
/// the names used in accuracy reports.
pub fn segment_name(child: JointId, parent: JointId) -> String {
    use JointId::*;
    let name = match (child, parent) {
        (Spine, Root) => "SPINE_LO",
        (Neck, Spine) => "SPINE_UP",
        (Head, Neck) => "HEAD",
        (ShoL, Neck) => "SHOULDER_L",
        (ShoR, Neck) => "SHOULDER_R",
        (ElbL, ShoL) => "ARM_UP_L",
        (ElbR, ShoR) => "ARM_UP_R",
        (WriL, ElbL) => "ARM_LO_L",
        (WriR, ElbR) => "ARM_LO_R",
        (HanL, WriL) => "HAND_L",
        (HanR, WriR) => "HAND_R",
        (HipL, Root) => "PELVIC_L",
        (HipR, Root) => "PELVIC_R",
        (KneL, HipL) => "LEG_UP_L",
        (KneR, HipR) => "LEG_UP_R",
        (AnkL, KneL) => "LEG_LO_L",
        (AnkR, KneR) => "LEG_LO_R",
        (FooL, AnkL) => "FOOT_L",
        (FooR, AnkR) => "FOOT_R",
        _ => return format!("{child}_{parent}"),
    };
    name.to_string()
}

/// The 14 segments reported by the accuracy harness, as (child, parent).
pub const EVALUATION_SEGMENTS: [(JointId, JointId); 14] = {
    use JointId::*;
    [
        (ElbL, ShoL),
        (WriL, ElbL),
        (HanL, WriL),
        (ElbR, ShoR),
        (WriR, ElbR),
        (HanR, WriR),
        (HipL, Root),
        (KneL, HipL),
        (AnkL, KneL),
        (FooL, AnkL),
        (HipR, Root),
        (KneR, HipR),
        (AnkR, KneR),
        (FooR, AnkR),
    ]
};

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    parent: [Option<JointId>; NUM_JOINTS],
    segments: Vec<Segment>,
    // joint index -> segment index
    segment_of: [Option<usize>; NUM_JOINTS],
    children: Vec<Vec<JointId>>,
}

impl SkeletonTopology {
    /// Builds and validates a topology from `(child, parent, dof)` edges.
    pub fn from_edges(edges: &[(JointId, JointId, Dof)]) -> Result<Self> {
        let mut parent: [Option<JointId>; NUM_JOINTS] = [None; NUM_JOINTS];
        let mut dof: [Option<Dof>; NUM_JOINTS] = [None; NUM_JOINTS];
        for &(child, par, d) in edges {
            if child == JointId::Root {
                return Err(Error::Topology("ROOT cannot have a parent".into()));
            }
            if child == par {
                return Err(Error::Topology(format!("{child} is its own parent")));
            }
            if parent[child.index()].is_some() {
                return Err(Error::Topology(format!("{child} has more than one parent")));
            }
            parent[child.index()] = Some(par);
            dof[child.index()] = Some(d);
        }
        for j in JointId::ALL.iter().skip(1) {
            if parent[j.index()].is_none() {
                return Err(Error::Topology(format!(
                    "{j} has no parent (second root or missing edge)"
                )));
            }
        }

        // Kahn ordering, ties broken by joint index; leftovers mean a cycle.
        let mut children: Vec<Vec<JointId>> = vec![Vec::new(); NUM_JOINTS];
        for j in JointId::ALL {
            if let Some(p) = parent[j.index()] {
                children[p.index()].push(j);
            }
        }
        let mut order = Vec::with_capacity(NUM_JOINTS - 1);
        let mut frontier = vec![JointId::Root];
        while !frontier.is_empty() {
            frontier.sort_by(|a, b| b.cmp(a));
            let j = frontier.pop().unwrap();
            if j != JointId::Root {
                order.push(j);
            }
            frontier.extend(children[j.index()].iter().copied());
        }
        if order.len() != NUM_JOINTS - 1 {
            let reached: Vec<_> = order.clone();
            let cyc: Vec<String> = JointId::ALL[1..]
                .iter()
                .filter(|j| !reached.contains(j))
                .map(|j| j.to_string())
                .collect();
            return Err(Error::Topology(format!(
                "joints not reachable from ROOT (cycle): {}",
                cyc.join(", ")
            )));
        }

        let mut segment_of = [None; NUM_JOINTS];
        let segments = order
            .iter()
            .enumerate()
            .map(|(i, &child)| {
                segment_of[child.index()] = Some(i);
                let par = parent[child.index()].unwrap();
                Segment {
                    child,
                    parent: par,
                    dof: dof[child.index()].unwrap(),
                    name: segment_name(child, par),
                }
            })
            .collect();
        Ok(SkeletonTopology {
            parent,
            segments,
            segment_of,
            children,
        })
    }

    /// Parses the line-oriented `CHILD PARENT DOF` format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: n + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected `CHILD PARENT DOF`, found {} fields",
                    fields.len()
                )));
            }
            let child: JointId = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
            let par: JointId = fields[1].parse().map_err(|e: Error| err(e.to_string()))?;
            let dof = fields[2]
                .parse::<u8>()
                .ok()
                .and_then(Dof::from_count)
                .ok_or_else(|| err(format!("DoF must be 1, 2 or 3, found `{}`", fields[2])))?;
            edges.push((child, par, dof));
        }
        Self::from_edges(&edges)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# CHILD PARENT DOF\n");
        for s in &self.segments {
            out.push_str(&format!("{} {} {}\n", s.child, s.parent, s.dof.count()));
        }
        out
    }

    pub fn parent(&self, joint: JointId) -> Option<JointId> {
        self.parent[joint.index()]
    }

    pub fn dof(&self, joint: JointId) -> Option<Dof> {
        self.segment_index(joint).map(|i| self.segments[i].dof)
    }

    /// Segments in topology order (parents before children).
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Index of the segment that ends at `joint`; `None` for ROOT.
    pub fn segment_index(&self, joint: JointId) -> Option<usize> {
        self.segment_of[joint.index()]
    }

    pub fn segment_by_name(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn children(&self, joint: JointId) -> &[JointId] {
        &self.children[joint.index()]
    }

    /// Joints in topology order, ROOT first.
    pub fn joint_order(&self) -> impl Iterator<Item = JointId> + '_ {
        std::iter::once(JointId::Root).chain(self.segments.iter().map(|s| s.child))
    }

    /// All strict descendants of `joint`.
    pub fn descendants(&self, joint: JointId) -> Vec<JointId> {
        let mut out = Vec::new();
        let mut stack: Vec<JointId> = self.children(joint).to_vec();
        while let Some(j) = stack.pop() {
            out.push(j);
            stack.extend(self.children(j).iter().copied());
        }
        out.sort();
        out
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        use Dof::*;
        use JointId::*;
        let edges = [
            (Spine, Root, Three),
            (Neck, Spine, Three),
            (Head, Neck, Three),
            (ShoL, Neck, Three),
            (ElbL, ShoL, One),
            (WriL, ElbL, Two),
            (HanL, WriL, Three),
            (ShoR, Neck, Three),
            (ElbR, ShoR, One),
            (WriR, ElbR, Two),
            (HanR, WriR, Three),
            (HipL, Root, Three),
            (KneL, HipL, One),
            (AnkL, KneL, Two),
            (FooL, AnkL, Three),
            (HipR, Root, Three),
            (KneR, HipR, One),
            (AnkR, KneR, Two),
            (FooR, AnkR, Three),
        ];
        SkeletonTopology::from_edges(&edges).expect("built-in topology is valid")
    }
}
