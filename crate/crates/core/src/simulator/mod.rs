//! Synthetic data: procedural vehicles, a spinning multi-beam LiDAR model
//! and exterior surface sampling for complete ground truth.

mod raycast;
mod sampling;
mod vehicle;

pub use raycast::{cast_ray, ray_triangle_intersect, MIN_HIT_DISTANCE};
pub use sampling::{fibonacci_sphere, uniform_surface_sample, ExteriorTest, EXTERIOR_PROBES, PROBE_RADIUS_FACTOR};
pub use vehicle::{gen_vehicle_mesh, ClassRanges, VehicleClass, VehicleSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Frame, GeometryError, PlanarPose, Point3, PointCloud, TriMesh};
use crate::kv::{join_list, KvError, KvMap};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid sensor configuration: {0}")]
    InvalidSensor(String),
    #[error("invalid vehicle: {0}")]
    InvalidVehicle(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("mesh has zero total area")]
    ZeroArea,
    #[error("mesh has no surface visible from outside")]
    NoExteriorSurface,
    #[error("empty mesh")]
    EmptyMesh,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Config(#[from] KvError),
}

/// Ring/azimuth model of a spinning multi-beam LiDAR.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    /// Mounting height above the ground plane, meters.
    pub height: f64,
    /// Beam elevations in degrees, one per ring.
    pub ring_elevations_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    /// First azimuth of the populated sector, degrees.
    pub azimuth_start_deg: f64,
    /// Width of the populated sector, degrees; 360 for a full sweep.
    pub azimuth_fov_deg: f64,
    pub max_range: f64,
    /// Gaussian range noise σ in meters; 0 disables noise.
    pub range_noise_sigma: f64,
}

/// `n` elevations evenly spaced from `top` down to `bottom` degrees.
pub fn uniform_rings(n: usize, top: f64, bottom: f64) -> Vec<f64> {
    if n == 1 {
        return vec![top];
    }
    (0..n).map(|i| top + (bottom - top) * i as f64 / (n - 1) as f64).collect()
}

impl SensorConfig {
    /// HDL-32E layout at its native 0.2° azimuth resolution.
    pub fn hdl32e() -> Self {
        Self {
            height: 2.0,
            ring_elevations_deg: uniform_rings(32, 10.67, -30.67),
            azimuth_step_deg: 0.2,
            azimuth_start_deg: 0.0,
            azimuth_fov_deg: 360.0,
            max_range: 100.0,
            range_noise_sigma: 0.0,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let rings = self.ring_elevations_deg.len();
        if !(1..=64).contains(&rings) {
            return Err(SimulatorError::InvalidSensor(format!("ring count {rings} outside 1..=64")));
        }
        if self.ring_elevations_deg.iter().any(|e| !e.is_finite() || e.abs() >= 90.0) {
            return Err(SimulatorError::InvalidSensor("ring elevations must lie in (-90, 90)".into()));
        }
        let steps = 360.0 / self.azimuth_step_deg;
        if !(self.azimuth_step_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(SimulatorError::InvalidSensor(format!(
                "azimuth step {} does not divide 360",
                self.azimuth_step_deg
            )));
        }
        if !(self.azimuth_fov_deg > 0.0 && self.azimuth_fov_deg <= 360.0) {
            return Err(SimulatorError::InvalidSensor("azimuth fov must lie in (0, 360]".into()));
        }
        if !(self.max_range > 0.0) || !(self.height >= 0.0) || !(self.range_noise_sigma >= 0.0) {
            return Err(SimulatorError::InvalidSensor(
                "max range must be positive, height and noise non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    /// Azimuths (radians) of every column inside the populated sector.
    pub fn azimuths(&self) -> Vec<f64> {
        (0..self.azimuth_count())
            .map(|k| k as f64 * self.azimuth_step_deg)
            .filter(|a| self.azimuth_fov_deg >= 360.0 || (a - self.azimuth_start_deg).rem_euclid(360.0) < self.azimuth_fov_deg)
            .map(f64::to_radians)
            .collect()
    }

    /// Unit direction of every (ring, azimuth) beam, ring-major.
    pub fn beam_directions(&self) -> Vec<Point3<f64>> {
        let azimuths = self.azimuths();
        let mut dirs = Vec::with_capacity(self.ring_elevations_deg.len() * azimuths.len());
        for &e in &self.ring_elevations_deg {
            let (se, ce) = e.to_radians().sin_cos();
            for &a in &azimuths {
                let (sa, ca) = a.sin_cos();
                dirs.push(Point3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("height", self.height);
        m.set("ring_elevations_deg", join_list(&self.ring_elevations_deg));
        m.set("azimuth_step_deg", self.azimuth_step_deg);
        m.set("azimuth_start_deg", self.azimuth_start_deg);
        m.set("azimuth_fov_deg", self.azimuth_fov_deg);
        m.set("max_range", self.max_range);
        m.set("range_noise_sigma", self.range_noise_sigma);
        m
    }

    /// Keys absent from `m` keep their defaults. `rings` with optional
    /// `ring_top_deg`/`ring_bottom_deg` builds a uniform fan.
    pub fn from_kv(m: &KvMap) -> Result<Self, SimulatorError> {
        let mut s = Self::default();
        if let Some(v) = m.get("height")? {
            s.height = v;
        }
        if let Some(n) = m.get::<usize>("rings")? {
            let top = m.get("ring_top_deg")?.unwrap_or(10.67);
            let bottom = m.get("ring_bottom_deg")?.unwrap_or(-30.67);
            s.ring_elevations_deg = uniform_rings(n, top, bottom);
        }
        if let Some(v) = m.get_list("ring_elevations_deg")? {
            s.ring_elevations_deg = v;
        }
        if let Some(v) = m.get("azimuth_step_deg")? {
            s.azimuth_step_deg = v;
        }
        if let Some(v) = m.get("azimuth_start_deg")? {
            s.azimuth_start_deg = v;
        }
        if let Some(v) = m.get("azimuth_fov_deg")? {
            s.azimuth_fov_deg = v;
        }
        if let Some(v) = m.get("max_range")? {
            s.max_range = v;
        }
        if let Some(v) = m.get("range_noise_sigma")? {
            s.range_noise_sigma = v;
        }
        s.validate()?;
        Ok(s)
    }
}

impl Default for SensorConfig {
    /// HDL-32E rings at a coarser 1° azimuth step, which keeps scans in the
    /// hundreds of points.
    fn default() -> Self {
        Self {
            azimuth_step_deg: 1.0,
            ..Self::hdl32e()
        }
    }
}

/// Where a vehicle sits relative to the sensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePlacement {
    /// Canonical → Sensor pose of the vehicle.
    pub pose: PlanarPose<f64>,
    /// Planar distance from the sensor to the vehicle center.
    pub range: f64,
    pub heading: f64,
    /// Seed for optional range noise.
    pub noise_seed: u64,
}

impl ScenePlacement {
    /// Vehicle centered at `range` along `bearing`, rotated by `heading`,
    /// standing on the ground `sensor_height` below the sensor.
    pub fn new(range: f64, bearing: f64, heading: f64, sensor_height: f64) -> Self {
        let pose = PlanarPose::new(heading, range * bearing.cos(), range * bearing.sin(), -sensor_height);
        Self {
            pose,
            range,
            heading: pose.yaw(),
            noise_seed: 0,
        }
    }

    /// Range uniform in `[min_range, max_range]`; bearing and heading uniform
    /// in `[0, 2π)`.
    pub fn random<R: Rng>(rng: &mut R, min_range: f64, max_range: f64, sensor_height: f64) -> Self {
        let range = rng.random_range(min_range..=max_range);
        let bearing = rng.random_range(0.0..std::f64::consts::TAU);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut p = Self::new(range, bearing, heading, sensor_height);
        p.noise_seed = rng.random();
        p
    }
}

/// Casts one ray per (ring, azimuth) against the placed mesh and returns the
/// first hits in the Sensor frame. Only the vehicle reflects; an empty cloud
/// is a valid result.
pub fn scan(mesh: &TriMesh<f64>, placement: &ScenePlacement, sensor: &SensorConfig) -> Result<PointCloud<f64>, SimulatorError> {
    sensor.validate()?;
    if mesh.is_empty() {
        return Err(SimulatorError::EmptyMesh);
    }
    let posed = mesh.transformed(&placement.pose);
    let bounds = posed.bounds().expect("non-empty mesh");
    let origin = Point3::zero();
    let noise = (sensor.range_noise_sigma > 0.0).then(|| Normal::new(0.0, sensor.range_noise_sigma).expect("σ validated"));
    let mut rng = ChaCha8Rng::seed_from_u64(placement.noise_seed);

    let mut points = Vec::new();
    for dir in sensor.beam_directions() {
        let Some(mut t) = cast_ray(&posed, &bounds, origin, dir) else {
            continue;
        };
        if let Some(n) = &noise {
            t += n.sample(&mut rng);
        }
        if t > 0.0 && t <= sensor.max_range {
            points.push(origin + dir * t);
        }
    }
    Ok(PointCloud::new(points, Frame::Sensor)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_at(center: Point3<f64>, size: f64) -> TriMesh<f64> {
        let h = size / 2.0;
        let mut v = Vec::new();
        for z in [-h, h] {
            for (x, y) in [(-h, -h), (h, -h), (h, h), (-h, h)] {
                v.push(center + Point3::new(x, y, z));
            }
        }
        let mut t = vec![[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7]];
        for i in 0..4 {
            let j = (i + 1) % 4;
            t.push([i, j, 4 + j]);
            t.push([i, 4 + j, 4 + i]);
        }
        TriMesh::new(v, t).unwrap()
    }

    fn fixed(pose: PlanarPose<f64>) -> ScenePlacement {
        ScenePlacement {
            pose,
            range: pose.tx.hypot(pose.ty),
            heading: pose.yaw(),
            noise_seed: 0,
        }
    }

    #[test]
    fn default_sensor_layout() {
        let s = SensorConfig::default();
        s.validate().unwrap();
        assert_eq!(s.ring_elevations_deg.len(), 32);
        assert!((s.ring_elevations_deg[0] - 10.67).abs() < 1e-12);
        assert!((s.ring_elevations_deg[31] + 30.67).abs() < 1e-12);
        assert_eq!(s.height, 2.0);
        assert_eq!(s.azimuth_count(), 360);
        assert_eq!(SensorConfig::hdl32e().azimuth_count(), 1800);
    }

    #[test]
    fn invalid_sensors_rejected() {
        let s = SensorConfig {
            azimuth_step_deg: 0.7,
            ..SensorConfig::default()
        };
        assert!(s.validate().is_err());
        let mut s = SensorConfig {
            ring_elevations_deg: vec![0.0; 65],
            ..SensorConfig::default()
        };
        assert!(s.validate().is_err());
        s.ring_elevations_deg.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn sensor_kv_round_trip() {
        let s = SensorConfig {
            range_noise_sigma: 0.02,
            ..SensorConfig::default()
        };
        let back = SensorConfig::from_kv(&KvMap::parse(&s.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, s);
        let fan = SensorConfig::from_kv(&KvMap::parse("rings=16\n").unwrap()).unwrap();
        assert_eq!(fan.ring_elevations_deg.len(), 16);
    }

    #[test]
    fn vehicle_outside_populated_sector_gives_empty_scan() {
        let sensor = SensorConfig {
            azimuth_start_deg: 330.0,
            azimuth_fov_deg: 60.0,
            ..SensorConfig::default()
        };
        let cube = cube_at(Point3::zero(), 2.0);
        let behind = scan(&cube, &fixed(PlanarPose::new(0.0, -10.0, 0.0, 0.0)), &sensor).unwrap();
        assert!(behind.is_empty());
        let ahead = scan(&cube, &fixed(PlanarPose::new(0.0, 10.0, 0.0, 0.0)), &sensor).unwrap();
        assert!(!ahead.is_empty());
    }

    #[test]
    fn unit_cube_hits_within_bounding_distances() {
        let cube = cube_at(Point3::zero(), 1.0);
        let placement = fixed(PlanarPose::new(0.0, 10.0, 0.0, 0.0));
        let sensor = SensorConfig {
            azimuth_step_deg: 0.2,
            ..SensorConfig::default()
        };
        let cloud = scan(&cube, &placement, &sensor).unwrap();
        assert!(!cloud.is_empty());
        let diag = 3f64.sqrt();
        for p in cloud.points() {
            let d = p.norm();
            assert!((9.5..=10.5 + diag).contains(&d), "{d}");
        }
    }

    #[test]
    fn nearer_box_returns_more_points() {
        let cube = cube_at(Point3::zero(), 2.0);
        let sensor = SensorConfig::default();
        let near = scan(&cube, &fixed(PlanarPose::new(0.0, 5.0, 0.0, -1.0)), &sensor).unwrap();
        let far = scan(&cube, &fixed(PlanarPose::new(0.0, 35.0, 0.0, -1.0)), &sensor).unwrap();
        assert!(near.len() > far.len(), "{} vs {}", near.len(), far.len());
    }

    #[test]
    fn scan_points_lie_on_posed_surface() {
        let mesh = gen_vehicle_mesh(&VehicleSpec::typical(VehicleClass::Sedan)).unwrap();
        let placement = ScenePlacement::new(12.0, 0.4, 1.1, 2.0);
        let cloud = scan(&mesh, &placement, &SensorConfig::default()).unwrap();
        assert!(cloud.len() > 16);
        let posed = mesh.transformed(&placement.pose);
        for p in cloud.points() {
            assert!(posed.distance_to(*p) < 1e-6);
        }
    }

    #[test]
    fn first_hit_and_reorder_invariance() {
        let mesh = gen_vehicle_mesh(&VehicleSpec::sample(VehicleClass::Van, 3)).unwrap();
        let placement = ScenePlacement::new(8.0, 2.0, 0.3, 2.0);
        let sensor = SensorConfig::default();
        let cloud = scan(&mesh, &placement, &sensor).unwrap();
        let posed = mesh.transformed(&placement.pose);
        for p in cloud.points() {
            let d = p.norm();
            let dir = *p * (1.0 / d);
            for i in 0..posed.triangles().len() {
                if let Some(t) = ray_triangle_intersect(Point3::zero(), dir, &posed.triangle(i)) {
                    assert!(t >= d - 1e-9, "triangle {i} occludes at {t} < {d}");
                }
            }
        }
        let order: Vec<usize> = (0..mesh.triangles().len()).rev().collect();
        let shuffled = scan(&mesh.with_triangle_order(&order), &placement, &sensor).unwrap();
        assert_eq!(shuffled, cloud);
    }

    #[test]
    fn noise_flag_perturbs_ranges_deterministically() {
        let mesh = gen_vehicle_mesh(&VehicleSpec::typical(VehicleClass::Suv)).unwrap();
        let mut placement = ScenePlacement::new(10.0, 0.0, 0.5, 2.0);
        placement.noise_seed = 17;
        let mut sensor = SensorConfig::default();
        let clean = scan(&mesh, &placement, &sensor).unwrap();
        sensor.range_noise_sigma = 0.05;
        let noisy = scan(&mesh, &placement, &sensor).unwrap();
        assert_eq!(noisy, scan(&mesh, &placement, &sensor).unwrap());
        assert_ne!(clean, noisy);
    }
}
