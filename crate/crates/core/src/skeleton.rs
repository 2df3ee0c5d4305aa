//! Fixed 24-joint kinematic tree with a rigid vertex proxy.
//!
//! The canonical skeleton uses the SMPL joint ordering and parent table with
//! approximate adult rest offsets and zero shape. Each joint carries eight
//! box-corner offsets in its local frame; those 192 points stand in for body
//! mesh vertices in the reconstruction loss.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{gram_schmidt, to_matrix, Rot6D, RotMatrix};
use crate::tensor::{Graph, Tensor, Var};
use crate::{JOINTS, POSE_DIM, ROT6D};

const CANONICAL_JSON: &str = include_str!("../data/skeleton_v1.json");
pub const SKELETON_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonModel {
    pub version: u32,
    #[serde(default)]
    pub joint_names: Vec<String>,
    pub parents: Vec<i32>,
    pub rest_offsets: Vec<[f64; 3]>,
    pub vertex_proxy: Vec<Vec<[f64; 3]>>,
}

impl SkeletonModel {
    /// The bundled humanoid.
    pub fn canonical() -> Self {
        Self::from_json(CANONICAL_JSON).expect("bundled skeleton is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SkeletonModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SKELETON_VERSION {
            return Err(Error::Unsupported(format!(
                "skeleton version {} (expected {SKELETON_VERSION})",
                self.version
            )));
        }
        if self.parents.len() != JOINTS
            || self.rest_offsets.len() != JOINTS
            || self.vertex_proxy.len() != JOINTS
        {
            return Err(Error::input(format!(
                "skeleton must define {JOINTS} joints"
            )));
        }
        if self.parents[0] != -1 {
            return Err(Error::input("joint 0 must be the root"));
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::input(format!(
                    "parent of joint {j} is {p}; parents must precede children"
                )));
            }
        }
        if let Some(j) = self.vertex_proxy.iter().position(|v| v.len() < 4) {
            return Err(Error::input(format!(
                "joint {j} has fewer than 4 proxy vertices"
            )));
        }
        Ok(())
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        usize::try_from(self.parents[joint]).ok()
    }

    /// Total number of proxy vertices.
    pub fn vertex_count(&self) -> usize {
        self.vertex_proxy.iter().map(Vec::len).sum()
    }

    /// `(parent, child)` pairs.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..JOINTS).filter_map(move |j| self.parent(j).map(|p| (p, j)))
    }

    /// Rest offset of `joint` from its parent (from the origin for the root).
    pub fn offset(&self, joint: usize) -> Vector3<f64> {
        Vector3::from(self.rest_offsets[joint])
    }
}

/// Global orientation (entry 0) and 23 joint rotations, plus a root translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<Rot6D>,
    #[serde(default)]
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotations: vec![Rot6D::IDENTITY; JOINTS],
            translation: [0.0; 3],
        }
    }

    pub fn from_features(features: &[f64]) -> Result<Self> {
        if features.len() != POSE_DIM {
            return Err(Error::dim(
                "Pose::from_features",
                &[features.len()],
                &[POSE_DIM],
            ));
        }
        let rotations = features
            .chunks(ROT6D)
            .map(|c| Rot6D(c.try_into().expect("chunk of six")))
            .collect();
        Ok(Self {
            rotations,
            translation: [0.0; 3],
        })
    }

    pub fn features(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| r.0).collect()
    }

    fn check(&self) -> Result<()> {
        if self.rotations.len() != JOINTS {
            return Err(Error::input(format!(
                "pose has {} rotations, expected {JOINTS}",
                self.rotations.len()
            )));
        }
        Ok(())
    }
}

/// `T` poses sampled at `fps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub fps: f64,
    pub poses: Vec<Pose>,
}

impl MotionSequence {
    pub fn new(fps: f64, poses: Vec<Pose>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::input(format!("fps must be positive, got {fps}")));
        }
        for p in &poses {
            p.check()?;
        }
        Ok(Self { fps, poses })
    }

    /// From a flat `T × 144` feature buffer.
    pub fn from_features(fps: f64, features: &[f64]) -> Result<Self> {
        if features.is_empty() || features.len() % POSE_DIM != 0 {
            return Err(Error::input(format!(
                "feature buffer of length {} is not a whole number of poses",
                features.len()
            )));
        }
        let poses = features
            .chunks(POSE_DIM)
            .map(Pose::from_features)
            .collect::<Result<_>>()?;
        Self::new(fps, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn features(&self) -> Vec<f64> {
        self.poses.iter().flat_map(Pose::features).collect()
    }

    /// `[T, 144]` tensor of pose features.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.len(), POSE_DIM], self.features()).expect("non-empty sequence")
    }

    pub fn is_finite(&self) -> bool {
        self.poses.iter().all(|p| {
            p.rotations
                .iter()
                .all(|r| r.0.iter().all(|v| v.is_finite()))
        })
    }
}

/// World-space rotation and position of every joint.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFrames {
    pub rotations: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

/// Forward kinematics with validated 6D decoding.
pub fn forward_kinematics(m: &SkeletonModel, p: &Pose) -> Result<JointFrames> {
    p.check()?;
    let locals = p
        .rotations
        .iter()
        .map(to_matrix)
        .collect::<Result<Vec<RotMatrix>>>()?;
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(JOINTS);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(JOINTS);
    for j in 0..JOINTS {
        let local = *locals[j].matrix();
        match m.parent(j) {
            None => {
                rotations.push(local);
                positions.push(Vector3::from(p.translation) + m.offset(0));
            }
            Some(parent) => {
                let g = rotations[parent];
                positions.push(positions[parent] + g * m.offset(j));
                rotations.push(g * local);
            }
        }
    }
    Ok(JointFrames {
        rotations,
        positions,
    })
}

/// Proxy vertices in joint-major order.
pub fn vertices(m: &SkeletonModel, p: &Pose) -> Result<Vec<Vector3<f64>>> {
    let frames = forward_kinematics(m, p)?;
    Ok(vertices_from_frames(m, &frames))
}

fn vertices_from_frames(m: &SkeletonModel, frames: &JointFrames) -> Vec<Vector3<f64>> {
    m.vertex_proxy
        .iter()
        .enumerate()
        .flat_map(|(j, offs)| {
            let (g, pos) = (frames.rotations[j], frames.positions[j]);
            offs.iter().map(move |o| pos + g * Vector3::from(*o))
        })
        .collect()
}

/// Per-frame joint positions and proxy vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceGeometry {
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub vertices: Vec<Vec<Vector3<f64>>>,
}

impl SequenceGeometry {
    /// Vertices flattened to `T × 3V` (vertex-major, xyz).
    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices
            .iter()
            .flat_map(|f| f.iter().flat_map(|v| [v.x, v.y, v.z]))
            .collect()
    }

    pub fn flat_joints(&self) -> Vec<f64> {
        self.joints
            .iter()
            .flat_map(|f| f.iter().flat_map(|v| [v.x, v.y, v.z]))
            .collect()
    }
}

pub fn sequence_geometry(m: &SkeletonModel, s: &MotionSequence) -> Result<SequenceGeometry> {
    let mut joints = Vec::with_capacity(s.len());
    let mut verts = Vec::with_capacity(s.len());
    for p in &s.poses {
        let frames = forward_kinematics(m, p)?;
        verts.push(vertices_from_frames(m, &frames));
        joints.push(frames.positions);
    }
    Ok(SequenceGeometry {
        joints,
        vertices: verts,
    })
}

/// Differentiable geometry of a batch of poses.
pub struct GraphGeometry<'g> {
    /// `[N, 72]`: joint positions, joint-major xyz.
    pub joints: Var<'g>,
    /// `[N, 3V]`: proxy vertices, vertex-major xyz.
    pub vertices: Var<'g>,
}

/// Graph forward kinematics for `poses: [N, 144]` with zero root translation.
///
/// Uses ε-guarded Gram–Schmidt so arbitrary (untrained) outputs stay finite.
pub fn graph_geometry<'g>(
    m: &SkeletonModel,
    g: &'g Graph,
    poses: Var<'g>,
    eps: f64,
) -> Result<GraphGeometry<'g>> {
    let shape = poses.shape();
    if shape.len() != 2 || shape[1] != POSE_DIM {
        return Err(Error::dim("graph_geometry", &shape, &[shape[0], POSE_DIM]));
    }
    let n = shape[0];
    let rots =
        gram_schmidt(poses.reshape(&[n * JOINTS, ROT6D])?, eps)?.reshape(&[n, JOINTS * 9])?;
    let mut world_rot: Vec<Var<'g>> = Vec::with_capacity(JOINTS);
    let mut world_pos: Vec<Var<'g>> = Vec::with_capacity(JOINTS);
    let mut vert_blocks = Vec::with_capacity(JOINTS);
    for j in 0..JOINTS {
        let local = rots.slice(1, j * 9, 9)?.reshape(&[n, 3, 3])?;
        let (rot, pos) = match m.parent(j) {
            None => {
                let o = m.offset(0);
                let root: Vec<f64> = (0..n).flat_map(|_| [o.x, o.y, o.z]).collect();
                (local, g.constant(Tensor::from_parts(vec![n, 3], root)))
            }
            Some(parent) => {
                let gp = world_rot[parent];
                let off = g.constant(Tensor::from_parts(vec![3, 1], m.rest_offsets[j].to_vec()));
                let moved = gp.reshape(&[n * 3, 3])?.matmul(off)?.reshape(&[n, 3])?;
                (gp.matmul(local)?, world_pos[parent].add(moved)?)
            }
        };
        let proxy = &m.vertex_proxy[j];
        let k = proxy.len();
        // Pᵀ: [3, k]
        let mut pt = vec![0.0; 3 * k];
        for (c, o) in proxy.iter().enumerate() {
            for r in 0..3 {
                pt[r * k + c] = o[r];
            }
        }
        let pt = g.constant(Tensor::from_parts(vec![3, k], pt));
        let ones = g.constant(Tensor::ones(&[1, k]));
        let spread = pos.reshape(&[n * 3, 1])?.matmul(ones)?;
        let block = rot
            .reshape(&[n * 3, 3])?
            .matmul(pt)?
            .add(spread)?
            .reshape(&[n, 3, k])?;
        vert_blocks.push(block);
        world_rot.push(rot);
        world_pos.push(pos);
    }
    let total = m.vertex_count();
    let vertices = g
        .concat(&vert_blocks, 2)?
        .permute(&[0, 2, 1])?
        .reshape(&[n, total * 3])?;
    let joints = g.concat(&world_pos, 1)?;
    Ok(GraphGeometry { joints, vertices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::from_rotation;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cumulative_rest(m: &SkeletonModel) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::new();
        for j in 0..JOINTS {
            let o = Vector3::from(m.rest_offsets[j]);
            out.push(match m.parent(j) {
                None => o,
                Some(p) => out[p] + o,
            });
        }
        out
    }

    #[test]
    fn canonical_skeleton_shape() {
        let m = SkeletonModel::canonical();
        assert_eq!(m.vertex_count(), 192);
        assert_eq!(m.bones().count(), 23);
        assert_eq!(m.joint_names[15], "head");
    }

    #[test]
    fn rejects_bad_topology() {
        let mut m = SkeletonModel::canonical();
        m.parents[5] = 7;
        assert!(m.validate().is_err());
        let mut m = SkeletonModel::canonical();
        m.vertex_proxy[3].truncate(2);
        assert!(m.validate().is_err());
    }

    #[test]
    fn rest_pose_is_cumulative_offsets() {
        let m = SkeletonModel::canonical();
        let frames = forward_kinematics(&m, &Pose::identity()).unwrap();
        assert_eq!(frames.positions, cumulative_rest(&m));
    }

    #[test]
    fn zero_proxy_offsets_collapse_to_joints() {
        let mut m = SkeletonModel::canonical();
        for v in &mut m.vertex_proxy {
            v.iter_mut().for_each(|o| *o = [0.0; 3]);
        }
        let mut pose = Pose::identity();
        pose.rotations[4] = from_rotation(&RotMatrix::from_axis_angle(Vector3::x(), 0.7));
        let frames = forward_kinematics(&m, &pose).unwrap();
        let verts = vertices(&m, &pose).unwrap();
        for (j, chunk) in verts.chunks(8).enumerate() {
            assert!(chunk.iter().all(|v| *v == frames.positions[j]));
        }
    }

    #[test]
    fn three_link_chain() {
        // root -> a -> b, unit offsets along +y; joint a turned 90° about z.
        let mut m = SkeletonModel::canonical();
        m.rest_offsets[0] = [0.0; 3];
        m.rest_offsets[3] = [0.0, 1.0, 0.0];
        m.rest_offsets[6] = [0.0, 1.0, 0.0];
        let mut pose = Pose::identity();
        pose.rotations[3] = from_rotation(&RotMatrix::from_axis_angle(Vector3::z(), FRAC_PI_2));
        let frames = forward_kinematics(&m, &pose).unwrap();
        assert_abs_diff_eq!(
            frames.positions[3],
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
        // The child offset (0,1,0) is turned to (-1,0,0) by the parent's rotation.
        assert_abs_diff_eq!(
            frames.positions[6],
            Vector3::new(-1.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn graph_geometry_matches_f64_route() {
        let m = SkeletonModel::canonical();
        let mut poses = vec![Pose::identity(), Pose::identity()];
        poses[1].rotations[0] = from_rotation(&RotMatrix::from_axis_angle(
            Vector3::new(0.2, 1.0, 0.1),
            0.9,
        ));
        poses[1].rotations[18] = from_rotation(&RotMatrix::from_axis_angle(Vector3::y(), -1.1));
        poses[1].rotations[5] = Rot6D([2.0, 0.1, 0.0, 0.3, 1.5, 0.2]);
        let seq = MotionSequence::new(30.0, poses).unwrap();
        let geo = sequence_geometry(&m, &seq).unwrap();
        let g = Graph::new();
        let x = g.constant(seq.to_tensor());
        let gg = graph_geometry(&m, &g, x, 1e-12).unwrap();
        for (a, b) in gg.vertices.value().data().iter().zip(geo.flat_vertices()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        for (a, b) in gg.joints.value().data().iter().zip(geo.flat_joints()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }
}
