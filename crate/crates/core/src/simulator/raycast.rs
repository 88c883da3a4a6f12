use crate::geometry::{Aabb, Point3, TriMesh};
use crate::scalar::Real;

/// Hits closer than this are ignored so a ray leaving a surface does not
/// re-hit it.
pub const MIN_HIT_DISTANCE: f64 = 1e-6;

/// Two-sided Möller–Trumbore test. `dir` must be unit length. Returns the
/// ray parameter of the hit when it exceeds [`MIN_HIT_DISTANCE`].
pub fn ray_triangle_intersect<T: Real>(origin: Point3<T>, dir: Point3<T>, tri: &[Point3<T>; 3]) -> Option<T> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    // parallel (or degenerate) relative to the edge scale
    let scale = e1.norm() * e2.norm();
    if det.abs() <= T::epsilon() * scale {
        return None;
    }
    let inv_det = T::one() / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(pvec) * inv_det;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    (t > T::of(MIN_HIT_DISTANCE)).then_some(t)
}

/// Nearest hit of a ray against every triangle of `mesh`, pruned by the
/// mesh bounds.
pub fn cast_ray<T: Real>(mesh: &TriMesh<T>, bounds: &Aabb<T>, origin: Point3<T>, dir: Point3<T>) -> Option<T> {
    let (_, exit) = bounds.ray_interval(origin, dir)?;
    if exit < T::zero() {
        return None;
    }
    (0..mesh.triangles().len())
        .filter_map(|i| ray_triangle_intersect(origin, dir, &mesh.triangle(i)))
        .fold(None, |best, t| match best {
            Some(b) if b <= t => Some(b),
            _ => Some(t),
        })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    /// Plane intersection followed by barycentric containment, independent
    /// of the Möller–Trumbore formulation.
    fn barycentric_oracle(o: Point3<f64>, d: Point3<f64>, tri: &[Point3<f64>; 3]) -> Option<f64> {
        let n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
        let denom = n.dot(d);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(tri[0] - o) / denom;
        if t <= MIN_HIT_DISTANCE {
            return None;
        }
        let q = o + d * t;
        let area = |a: Point3<f64>, b: Point3<f64>, c: Point3<f64>| (b - a).cross(c - a).dot(n);
        let total = area(tri[0], tri[1], tri[2]);
        let w0 = area(q, tri[1], tri[2]) / total;
        let w1 = area(tri[0], q, tri[2]) / total;
        let w2 = area(tri[0], tri[1], q) / total;
        (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then_some(t)
    }

    #[test]
    fn straight_up_hit() {
        let tri = [p(-1.0, -1.0, 5.0), p(1.0, -1.0, 5.0), p(0.0, 1.0, 5.0)];
        let t = ray_triangle_intersect(p(0.0, 0.0, 0.0), p(0.0, 0.0, 1.0), &tri).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let tri = [p(-1.0, -1.0, 5.0), p(1.0, -1.0, 5.0), p(0.0, 1.0, 5.0)];
        assert!(ray_triangle_intersect(p(0.0, 0.0, 5.0), p(1.0, 0.0, 0.0), &tri).is_none());
        assert!(ray_triangle_intersect(p(0.0, 0.0, 0.0), p(0.0, 0.0, -1.0), &tri).is_none());
    }

    #[test]
    fn agrees_with_barycentric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hits = 0;
        for _ in 0..5000 {
            let mut r = || {
                p(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            };
            let tri = [r(), r(), r()];
            let o = r() * 3.0;
            let target = r() * 0.5;
            let d = (target - o).normalized();
            let mt = ray_triangle_intersect(o, d, &tri);
            let oracle = barycentric_oracle(o, d, &tri);
            match (mt, oracle) {
                (Some(a), Some(b)) => {
                    hits += 1;
                    assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
                }
                (None, None) => {}
                // rays grazing an edge may disagree at the rounding level
                (a, b) => {
                    let t = a.or(b).unwrap();
                    let q = o + d * t;
                    let edge_dist = (0..3)
                        .map(|k| {
                            let (u, v) = (tri[k], tri[(k + 1) % 3]);
                            let s = ((q - u).dot(v - u) / (v - u).norm_squared()).clamp(0.0, 1.0);
                            (u + (v - u) * s).distance(q)
                        })
                        .fold(f64::INFINITY, f64::min);
                    assert!(edge_dist < 1e-9, "disagreement away from an edge: {a:?} {b:?}");
                }
            }
        }
        assert!(hits > 500, "only {hits} hits; test is not exercising intersections");
    }
}
