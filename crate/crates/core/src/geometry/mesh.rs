use crate::scalar::Real;

use super::{GeometryError, PlanarPose, Point3};

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn from_points(points: &[Point3<T>]) -> Option<Self> {
        let first = *points.first()?;
        let (min, max) = points.iter().fold((first, first), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        Some(Self { min, max })
    }

    pub fn center(&self) -> Point3<T> {
        (self.min + self.max) * T::of(0.5)
    }

    pub fn extent(&self) -> Point3<T> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> T {
        self.extent().norm()
    }

    /// Slab test; returns the parametric entry/exit interval when the ray
    /// overlaps the box.
    pub fn ray_interval(&self, origin: Point3<T>, dir: Point3<T>) -> Option<(T, T)> {
        let mut t0 = T::neg_infinity();
        let mut t1 = T::infinity();
        for (o, d, lo, hi) in [
            (origin.x, dir.x, self.min.x, self.max.x),
            (origin.y, dir.y, self.min.y, self.max.y),
            (origin.z, dir.z, self.min.z, self.max.z),
        ] {
            if d == T::zero() {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = T::one() / d;
            let (mut a, mut b) = ((lo - o) * inv, (hi - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Indexed triangle mesh. Zero-area triangles are dropped on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh<T> {
    vertices: Vec<Point3<T>>,
    triangles: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Point3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if let Some(index) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { index });
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange {
                        triangle: t,
                        index,
                        len: vertices.len(),
                    });
                }
            }
        }
        let triangles = triangles
            .into_iter()
            .filter(|&[a, b, c]| {
                let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
                (pb - pa).cross(pc - pa).norm() > T::zero()
            })
            .collect();
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3<T>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, i: usize) -> T {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(c - a).norm() * T::of(0.5)
    }

    pub fn total_area(&self) -> T {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> Option<Aabb<T>> {
        Aabb::from_points(&self.vertices)
    }

    /// Mesh with every vertex mapped through `pose`.
    pub fn transformed(&self, pose: &PlanarPose<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| pose.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Same geometry with triangles listed in a different order.
    pub fn with_triangle_order(&self, order: &[usize]) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: order.iter().map(|&i| self.triangles[i]).collect(),
        }
    }

    /// Appends another mesh as a separate component.
    pub fn merge(&mut self, other: &TriMesh<T>) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    /// Unsigned distance from `p` to the nearest point of any triangle.
    pub fn distance_to(&self, p: Point3<T>) -> T {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                closest_point_on_triangle(p, a, b, c).distance(p)
            })
            .fold(T::infinity(), T::min)
    }
}

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle<T: Real>(p: Point3<T>, a: Point3<T>, b: Point3<T>, c: Point3<T>) -> Point3<T> {
    let zero = T::zero();
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= zero && d2 <= zero {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= zero && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= zero && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = T::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn degenerate_triangles_dropped_and_indices_checked() {
        let v = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.0, 0.0, 0.0), p(0.0, 1.0, 0.0)];
        let m = TriMesh::new(v.clone(), vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 3]]);
        assert!(matches!(
            TriMesh::new(v, vec![[0, 1, 9]]),
            Err(GeometryError::IndexOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0));
        assert!(closest_point_on_triangle(p(0.2, 0.2, 3.0), a, b, c).distance(p(0.2, 0.2, 0.0)) < 1e-15);
        assert_eq!(closest_point_on_triangle(p(-1.0, -1.0, 0.0), a, b, c), a);
        assert_eq!(closest_point_on_triangle(p(0.5, -2.0, 0.0), a, b, c), p(0.5, 0.0, 0.0));
        let q = closest_point_on_triangle(p(1.0, 1.0, 0.0), a, b, c);
        assert!(q.distance(p(0.5, 0.5, 0.0)) < 1e-15);
    }

    #[test]
    fn ray_box_interval() {
        let bx = Aabb {
            min: p(-1.0, -1.0, -1.0),
            max: p(1.0, 1.0, 1.0),
        };
        let (t0, t1) = bx.ray_interval(p(-5.0, 0.0, 0.0), p(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((t0, t1), (4.0, 6.0));
        assert!(bx.ray_interval(p(-5.0, 3.0, 0.0), p(1.0, 0.0, 0.0)).is_none());
    }
}
