use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Frame, Point3, PointCloud, TriMesh};

use super::raycast::ray_triangle_intersect;
use super::SimulatorError;

/// Probe directions per candidate point.
pub const EXTERIOR_PROBES: usize = 64;
/// Probe sphere radius as a multiple of the mesh bounding-box diagonal.
pub const PROBE_RADIUS_FACTOR: f64 = 3.0;
/// Candidates drawn per requested point before giving up.
const MAX_DRAWS_PER_POINT: usize = 1000;

/// Near-uniform directions on the unit sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Point3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Point3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Decides whether surface points can be seen from outside the mesh.
pub struct ExteriorTest<'a> {
    mesh: &'a TriMesh<f64>,
    probes: Vec<Point3<f64>>,
    tolerance: f64,
}

impl<'a> ExteriorTest<'a> {
    pub fn new(mesh: &'a TriMesh<f64>) -> Self {
        let bounds = mesh.bounds().expect("non-empty mesh");
        let radius = PROBE_RADIUS_FACTOR * bounds.diagonal().max(f64::MIN_POSITIVE);
        let center = bounds.center();
        let probes = fibonacci_sphere(EXTERIOR_PROBES)
            .into_iter()
            .map(|d| center + d * radius)
            .collect();
        Self {
            mesh,
            probes,
            tolerance: 1e-7 * radius,
        }
    }

    /// True when at least one probe reaches `p` without hitting a triangle
    /// strictly in front of it.
    pub fn is_exterior(&self, p: Point3<f64>) -> bool {
        self.probes.iter().any(|&origin| {
            let to = p - origin;
            let dist = to.norm();
            let dir = to * (1.0 / dist);
            (0..self.mesh.triangles().len()).all(|i| match ray_triangle_intersect(origin, dir, &self.mesh.triangle(i)) {
                Some(t) => t >= dist - self.tolerance,
                None => true,
            })
        })
    }
}

/// Exactly `n` points drawn uniformly over the exterior surface: triangles
/// picked by area, points placed uniformly in barycentric coordinates, and
/// candidates hidden from every probe direction redrawn.
pub fn uniform_surface_sample(mesh: &TriMesh<f64>, n: usize, seed: u64) -> Result<PointCloud<f64>, SimulatorError> {
    if n == 0 {
        return Err(SimulatorError::InvalidArgument("sample count must be at least 1".into()));
    }
    let areas: Vec<f64> = (0..mesh.triangles().len()).map(|i| mesh.triangle_area(i)).collect();
    if areas.iter().sum::<f64>() <= 0.0 {
        return Err(SimulatorError::ZeroArea);
    }
    let picker = WeightedIndex::new(&areas).map_err(|_| SimulatorError::ZeroArea)?;
    let exterior = ExteriorTest::new(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut draws = 0usize;
    while points.len() < n {
        draws += 1;
        if draws > MAX_DRAWS_PER_POINT * n {
            return Err(SimulatorError::NoExteriorSurface);
        }
        let [a, b, c] = mesh.triangle(picker.sample(&mut rng));
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        if exterior.is_exterior(p) {
            points.push(p);
        }
    }
    Ok(PointCloud::new(points, Frame::Canonical)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> TriMesh<f64> {
        let mut v = Vec::new();
        for z in [-0.5, 0.5] {
            v.push(Point3::new(-0.5, -0.5, z));
            v.push(Point3::new(0.5, -0.5, z));
            v.push(Point3::new(0.5, 0.5, z));
            v.push(Point3::new(-0.5, 0.5, z));
        }
        let mut t = vec![[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7]];
        for i in 0..4 {
            let j = (i + 1) % 4;
            t.push([i, j, 4 + j]);
            t.push([i, 4 + j, 4 + i]);
        }
        TriMesh::new(v, t).unwrap()
    }

    fn face_of(p: Point3<f64>) -> usize {
        let c = [p.x, p.y, p.z];
        for (axis, v) in c.iter().enumerate() {
            if (v.abs() - 0.5).abs() < 1e-12 {
                return 2 * axis + usize::from(*v > 0.0);
            }
        }
        panic!("point {p:?} is not on the cube surface");
    }

    #[test]
    fn cube_faces_sampled_in_proportion_to_area() {
        let n = 6000;
        let cloud = uniform_surface_sample(&unit_cube(), n, 1).unwrap();
        assert_eq!(cloud.len(), n);
        let mut counts = [0usize; 6];
        for p in cloud.points() {
            counts[face_of(*p)] += 1;
        }
        // multinomial: σ = sqrt(n p (1-p)) with p = 1/6
        let expected = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn single_point_lies_on_surface() {
        let cube = unit_cube();
        let cloud = uniform_surface_sample(&cube, 1, 5).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!(cube.distance_to(cloud.points()[0]) < 1e-9);
        assert_eq!(cloud.frame(), Frame::Canonical);
    }

    #[test]
    fn hidden_faces_never_sampled() {
        // a small box sealed inside a large one contributes area but no samples
        let mut mesh = unit_cube();
        let inner = unit_cube().transformed(&crate::geometry::PlanarPose::identity());
        let shrunk = TriMesh::new(
            inner.vertices().iter().map(|&v| v * 0.5).collect(),
            inner.triangles().to_vec(),
        )
        .unwrap();
        mesh.merge(&shrunk);
        let cloud = uniform_surface_sample(&mesh, 500, 2).unwrap();
        for p in cloud.points() {
            assert!(p.x.abs().max(p.y.abs()).max(p.z.abs()) > 0.4999, "{p:?}");
        }
    }

    #[test]
    fn deterministic_and_zero_area_rejected() {
        let cube = unit_cube();
        assert_eq!(
            uniform_surface_sample(&cube, 50, 9).unwrap(),
            uniform_surface_sample(&cube, 50, 9).unwrap()
        );
        let empty = TriMesh::new(vec![Point3::zero(); 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(uniform_surface_sample(&empty, 5, 0), Err(SimulatorError::ZeroArea)));
        assert!(uniform_surface_sample(&cube, 0, 0).is_err());
    }
}
