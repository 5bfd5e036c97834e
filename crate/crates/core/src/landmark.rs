//! Landmark lifecycle, stereo depth recovery and recursive position refinement.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::geometry::Transform;

pub use crate::camera::PinholeIntrinsics;

/// Range of the placeholder depth assigned when stereo matching fails, m.
pub const DUMMY_DEPTH_RANGE: (f64, f64) = (0.5, 8.0);
/// Stereo reprojection gate for accepting a triangulation, px.
pub const TRIANGULATION_GATE_PX: f64 = 2.0;
pub const DEFAULT_IIR_COEFF: f64 = 0.8;

pub type LandmarkId = u64;

/// 3D map point stored in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: LandmarkId,
    pub position_w: Vector3<f64>,
    /// False while the position comes from a placeholder depth.
    pub has_valid_depth: bool,
    pub observation_count: u32,
    pub last_seen_frame: u64,
}

/// Pixel measurements of one landmark in one stereo frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoObservation {
    pub landmark_id: LandmarkId,
    pub pixel_c0: Vector2<f64>,
    /// Absent when stereo tracking failed.
    pub pixel_c1: Option<Vector2<f64>>,
    pub frame_id: u64,
}

/// Result of depth recovery for one observation, in c0 coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point_c0: Vector3<f64>,
    pub valid: bool,
}

/// Midpoint triangulation of a stereo observation.
///
/// Falls back to a point on the c0 ray at a random depth in
/// [`DUMMY_DEPTH_RANGE`] when the c1 pixel is missing, the rays do not meet in
/// front of both cameras, or the stereo reprojection residual exceeds
/// [`TRIANGULATION_GATE_PX`].
pub fn triangulate<R: Rng + ?Sized>(
    obs: &StereoObservation,
    rig: &CameraRig,
    rng: &mut R,
) -> Triangulation {
    let ray0 = rig.cam0.unproject(&obs.pixel_c0);
    obs.pixel_c1
        .and_then(|px1| midpoint(&ray0, &px1, obs, rig))
        .map(|p| Triangulation {
            point_c0: p,
            valid: true,
        })
        .unwrap_or_else(|| Triangulation {
            point_c0: ray0 * rng.random_range(DUMMY_DEPTH_RANGE.0..DUMMY_DEPTH_RANGE.1),
            valid: false,
        })
}

fn midpoint(
    ray0: &Vector3<f64>,
    pixel_c1: &Vector2<f64>,
    obs: &StereoObservation,
    rig: &CameraRig,
) -> Option<Vector3<f64>> {
    let t_c0_c1 = rig.t_c1_c0.inverse();
    let origin1 = t_c0_c1.translation;
    let ray1 = t_c0_c1.rotation.rotate(&rig.cam1.unproject(pixel_c1));
    // minimize |s ray0 - (origin1 + t ray1)|²
    let a = Matrix2::new(
        ray0.dot(ray0),
        -ray0.dot(&ray1),
        -ray0.dot(&ray1),
        ray1.dot(&ray1),
    );
    let b = Vector2::new(ray0.dot(&origin1), -ray1.dot(&origin1));
    if a.determinant().abs() < 1e-12 * a[(0, 0)] * a[(1, 1)] {
        return None;
    }
    let st = a.try_inverse()? * b;
    if st.x <= 0.0 || st.y <= 0.0 {
        return None;
    }
    let p = 0.5 * (ray0 * st.x + origin1 + ray1 * st.y);
    let r0 = rig.project_c0(&p)? - obs.pixel_c0;
    let r1 = rig.project_c1(&p)? - pixel_c1;
    if r0.norm() > TRIANGULATION_GATE_PX || r1.norm() > TRIANGULATION_GATE_PX {
        return None;
    }
    Some(p)
}

/// Predicted c1 pixel for a landmark given the camera pose `T_w_c0`.
pub fn reproject_guess(lm: &Landmark, pose_c0: &Transform, rig: &CameraRig) -> Option<Vector2<f64>> {
    let p_c0 = pose_c0.inverse_transform_point(&lm.position_w);
    if p_c0.z <= crate::camera::MIN_DEPTH {
        return None;
    }
    rig.project_c1(&p_c0)
}

/// First-order recursive blend `coeff·prev + (1−coeff)·measured`.
pub fn iir_update(lm_prev: &Vector3<f64>, lm_measured: &Vector3<f64>, coeff: f64) -> Vector3<f64> {
    lm_prev * coeff + lm_measured * (1.0 - coeff)
}

/// What happened to the map while integrating one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub created: usize,
    pub created_dummy: usize,
    pub promoted: usize,
    pub refined: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepReport {
    pub removed: usize,
    pub retained: usize,
}

/// Landmarks keyed by id, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkMap {
    landmarks: BTreeMap<LandmarkId, Landmark>,
}

impl LandmarkMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn get(&self, id: LandmarkId) -> Option<&Landmark> {
        self.landmarks.get(&id)
    }

    pub fn get_mut(&mut self, id: LandmarkId) -> Option<&mut Landmark> {
        self.landmarks.get_mut(&id)
    }

    pub fn insert(&mut self, lm: Landmark) {
        self.landmarks.insert(lm.id, lm);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Landmark> {
        self.landmarks.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Landmark> {
        self.landmarks.values_mut()
    }

    /// Folds one frame of stereo observations into the map.
    ///
    /// New ids are created from their triangulation. A placeholder landmark
    /// that gets a valid triangulation is replaced outright; a valid landmark
    /// is blended with the new measurement in the current c0 frame when
    /// `iir_coeff` is set, and left untouched otherwise.
    pub fn integrate<R: Rng + ?Sized>(
        &mut self,
        frame_id: u64,
        observations: &[StereoObservation],
        pose_c0: &Transform,
        rig: &CameraRig,
        iir_coeff: Option<f64>,
        rng: &mut R,
    ) -> IntegrationStats {
        let mut stats = IntegrationStats::default();
        for obs in observations {
            let tri = triangulate(obs, rig, rng);
            match self.landmarks.get_mut(&obs.landmark_id) {
                None => {
                    stats.created += 1;
                    if !tri.valid {
                        stats.created_dummy += 1;
                    }
                    self.landmarks.insert(
                        obs.landmark_id,
                        Landmark {
                            id: obs.landmark_id,
                            position_w: pose_c0.transform_point(&tri.point_c0),
                            has_valid_depth: tri.valid,
                            observation_count: 1,
                            last_seen_frame: frame_id,
                        },
                    );
                }
                Some(lm) => {
                    lm.observation_count += 1;
                    lm.last_seen_frame = frame_id;
                    if !tri.valid {
                        continue;
                    }
                    if !lm.has_valid_depth {
                        lm.position_w = pose_c0.transform_point(&tri.point_c0);
                        lm.has_valid_depth = true;
                        stats.promoted += 1;
                    } else if let Some(coeff) = iir_coeff {
                        let prev_c0 = pose_c0.inverse_transform_point(&lm.position_w);
                        let filtered = iir_update(&prev_c0, &tri.point_c0, coeff);
                        lm.position_w = pose_c0.transform_point(&filtered);
                        stats.refined += 1;
                    }
                }
            }
        }
        stats
    }

    /// Drops landmarks not observed in `current_frame_id` or no longer
    /// projecting inside the c0 image.
    pub fn lifecycle_sweep(
        &mut self,
        current_frame_id: u64,
        current_pose_c0: &Transform,
        rig: &CameraRig,
    ) -> SweepReport {
        let before = self.landmarks.len();
        self.landmarks.retain(|_, lm| {
            if lm.last_seen_frame != current_frame_id {
                return false;
            }
            let p_c0 = current_pose_c0.inverse_transform_point(&lm.position_w);
            rig.project_c0(&p_c0)
                .is_some_and(|px| rig.cam0.in_bounds(&px))
        });
        SweepReport {
            removed: before - self.landmarks.len(),
            retained: self.landmarks.len(),
        }
    }

    /// Sparse map dump, `id,x,y,z,observations`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,x,y,z,observations\n");
        for lm in self.landmarks.values() {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{}\n",
                lm.id, lm.position_w.x, lm.position_w.y, lm.position_w.z, lm.observation_count
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ideal_rig(baseline: f64) -> CameraRig {
        let k = PinholeIntrinsics {
            fx: 458.0,
            fy: 458.0,
            cx: 376.0,
            cy: 240.0,
            width: 752,
            height: 480,
        };
        CameraRig::forward_looking(k, baseline)
    }

    fn observe(rig: &CameraRig, p_c0: &Vector3<f64>) -> StereoObservation {
        StereoObservation {
            landmark_id: 1,
            pixel_c0: rig.project_c0(p_c0).unwrap(),
            pixel_c1: rig.project_c1(p_c0),
            frame_id: 0,
        }
    }

    #[test]
    fn triangulates_point_on_optical_axis() {
        let rig = ideal_rig(0.05);
        let p = Vector3::new(0.0, 0.0, 2.0);
        let obs = observe(&rig, &p);
        let disparity = obs.pixel_c0.x - obs.pixel_c1.unwrap().x;
        assert!((disparity - 458.0 * 0.05 / 2.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tri = triangulate(&obs, &rig, &mut rng);
        assert!(tri.valid);
        assert!((tri.point_c0.z - 2.0).abs() < 1e-9);
    }

    #[test]
    fn missing_or_inverted_stereo_falls_back_to_dummy_depth() {
        let rig = ideal_rig(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut obs = observe(&rig, &Vector3::new(0.2, 0.1, 3.0));
        obs.pixel_c1 = None;
        let tri = triangulate(&obs, &rig, &mut rng);
        assert!(!tri.valid);
        assert!(tri.point_c0.z >= 0.5 && tri.point_c0.z <= 8.0);

        // c1 pixel to the right of c0 means negative disparity
        let mut obs = observe(&rig, &Vector3::new(0.2, 0.1, 3.0));
        obs.pixel_c1 = Some(obs.pixel_c0 + Vector2::new(5.0, 0.0));
        assert!(!triangulate(&obs, &rig, &mut rng).valid);
    }

    #[test]
    fn reprojection_guess_values() {
        let rig = ideal_rig(0.05);
        let pose = Transform::identity();
        let lm = |p: Vector3<f64>| Landmark {
            id: 0,
            position_w: p,
            has_valid_depth: true,
            observation_count: 1,
            last_seen_frame: 0,
        };
        // on the c1 optical axis: c1 centre sits at x = +baseline in c0
        let px = reproject_guess(&lm(Vector3::new(0.05, 0.0, 3.0)), &pose, &rig).unwrap();
        assert!((px - Vector2::new(376.0, 240.0)).norm() < 1e-12);

        let far = lm(Vector3::new(0.3, 0.2, 1e6));
        let g1 = reproject_guess(&far, &pose, &rig).unwrap();
        let g0 = rig.project_c0(&far.position_w).unwrap();
        assert!((g1 - g0).norm() < 0.01);

        let near = lm(Vector3::new(0.0, 0.0, 0.6));
        let g1 = reproject_guess(&near, &pose, &rig).unwrap();
        let g0 = rig.project_c0(&near.position_w).unwrap();
        let oracle = 458.0 * 0.05 / 0.6;
        assert!(((g0.x - g1.x) - oracle).abs() < 1e-9);
        assert!((oracle - 38.2).abs() < 0.05);

        assert!(reproject_guess(&lm(Vector3::new(0.0, 0.0, -1.0)), &pose, &rig).is_none());
    }

    #[test]
    fn iir_values() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(iir_update(&p, &p, 0.8), p);
        let out = iir_update(&Vector3::new(1.0, 1.0, 1.0), &Vector3::new(2.0, 1.0, 1.0), 0.8);
        assert!((out - Vector3::new(1.2, 1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn sweep_removes_stale_and_behind_camera() {
        let rig = ideal_rig(0.05);
        let pose = Transform::identity();
        let mut map = LandmarkMap::new();
        for (id, p, seen) in [
            (1, Vector3::new(0.0, 0.0, 3.0), 5),
            (2, Vector3::new(0.0, 0.0, -3.0), 5),
            (3, Vector3::new(0.0, 0.0, 3.0), 4),
            (4, Vector3::new(30.0, 0.0, 3.0), 5),
        ] {
            map.insert(Landmark {
                id,
                position_w: p,
                has_valid_depth: true,
                observation_count: 1,
                last_seen_frame: seen,
            });
        }
        let report = map.lifecycle_sweep(5, &pose, &rig);
        assert_eq!(report.removed, 3);
        assert!(map.get(1).is_some());
    }

    #[test]
    fn dummy_landmark_is_promoted_by_replacement() {
        let rig = ideal_rig(0.11);
        let pose = Transform::new(
            crate::geometry::Quaternion::from_axis_angle(&Vector3::y(), 0.2),
            Vector3::new(1.0, 0.0, 0.5),
        );
        let p_c0 = Vector3::new(0.3, -0.2, 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut map = LandmarkMap::new();
        let mut obs = observe(&rig, &p_c0);
        obs.pixel_c1 = None;
        let stats = map.integrate(0, &[obs], &pose, &rig, Some(0.8), &mut rng);
        assert_eq!(stats.created_dummy, 1);
        assert!(!map.get(1).unwrap().has_valid_depth);

        let obs = StereoObservation {
            frame_id: 1,
            ..observe(&rig, &p_c0)
        };
        let stats = map.integrate(1, &[obs], &pose, &rig, Some(0.8), &mut rng);
        assert_eq!(stats.promoted, 1);
        let lm = map.get(1).unwrap();
        assert!(lm.has_valid_depth);
        let fresh = pose.transform_point(&triangulate(&obs, &rig, &mut rng).point_c0);
        assert!((lm.position_w - fresh).norm() < 1e-6);
        assert_eq!(lm.observation_count, 2);
    }
}
