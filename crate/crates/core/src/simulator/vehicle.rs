//! Procedural vehicle meshes: a body box, a tapered cabin and four
//! octagonal wheels, each a closed component.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{PlanarPose, Point3, TriMesh};
use crate::kv::{KvError, KvMap};

use super::SimulatorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VehicleClass {
    Sedan,
    Suv,
    Truck,
    Van,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 5] = [Self::Sedan, Self::Suv, Self::Truck, Self::Van, Self::Bus];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sedan => "sedan",
            Self::Suv => "suv",
            Self::Truck => "truck",
            Self::Van => "van",
            Self::Bus => "bus",
        }
    }

    pub fn ranges(self) -> ClassRanges {
        // (min, max) in meters, cabin fraction is unitless
        match self {
            Self::Sedan => ClassRanges {
                length: (4.3, 4.9),
                width: (1.75, 1.9),
                height: (1.4, 1.5),
                cabin_fraction: (0.45, 0.55),
                wheel_radius: (0.30, 0.34),
            },
            Self::Suv => ClassRanges {
                length: (4.5, 5.0),
                width: (1.85, 2.0),
                height: (1.65, 1.85),
                cabin_fraction: (0.6, 0.7),
                wheel_radius: (0.36, 0.40),
            },
            Self::Truck => ClassRanges {
                length: (5.2, 5.9),
                width: (1.9, 2.05),
                height: (1.8, 1.95),
                cabin_fraction: (0.35, 0.45),
                wheel_radius: (0.38, 0.42),
            },
            Self::Van => ClassRanges {
                length: (4.8, 5.5),
                width: (1.9, 2.05),
                height: (1.9, 2.3),
                cabin_fraction: (0.8, 0.9),
                wheel_radius: (0.33, 0.37),
            },
            Self::Bus => ClassRanges {
                length: (10.0, 12.5),
                width: (2.45, 2.55),
                height: (2.9, 3.3),
                cabin_fraction: (0.92, 0.97),
                wheel_radius: (0.48, 0.52),
            },
        }
    }

    /// (body share of the height above the chassis, hood length fraction,
    /// cabin top length ratio, cabin top width ratio)
    fn silhouette(self) -> (f64, f64, f64, f64) {
        match self {
            Self::Sedan => (0.5, 0.28, 0.6, 0.85),
            Self::Suv => (0.5, 0.22, 0.85, 0.88),
            Self::Truck => (0.55, 0.22, 0.8, 0.9),
            Self::Van => (0.35, 0.08, 0.9, 0.92),
            Self::Bus => (0.3, 0.02, 0.97, 0.96),
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown vehicle class '{s}' (expected sedan, suv, truck, van or bus)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub cabin_fraction: (f64, f64),
    pub wheel_radius: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleSpec {
    pub class: VehicleClass,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub cabin_fraction: f64,
    pub wheel_radius: f64,
    pub seed: u64,
}

impl VehicleSpec {
    /// Dimensions drawn uniformly from the class ranges.
    pub fn sample(class: VehicleClass, seed: u64) -> Self {
        let r = class.ranges();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        Self {
            class,
            length: draw(r.length),
            width: draw(r.width),
            height: draw(r.height),
            cabin_fraction: draw(r.cabin_fraction),
            wheel_radius: draw(r.wheel_radius),
            seed,
        }
    }

    /// Midpoint of every class range.
    pub fn typical(class: VehicleClass) -> Self {
        let r = class.ranges();
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        Self {
            class,
            length: mid(r.length),
            width: mid(r.width),
            height: mid(r.height),
            cabin_fraction: mid(r.cabin_fraction),
            wheel_radius: mid(r.wheel_radius),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let dims = [self.length, self.width, self.height, self.cabin_fraction, self.wheel_radius];
        if dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(SimulatorError::InvalidVehicle("all dimensions must be positive".into()));
        }
        if self.length <= self.width {
            return Err(SimulatorError::InvalidVehicle("length must exceed width".into()));
        }
        if self.cabin_fraction > 1.0 {
            return Err(SimulatorError::InvalidVehicle("cabin fraction must be at most 1".into()));
        }
        if 2.0 * self.wheel_radius >= self.height {
            return Err(SimulatorError::InvalidVehicle("wheels taller than the vehicle".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("class", self.class);
        m.set("length", self.length);
        m.set("width", self.width);
        m.set("height", self.height);
        m.set("cabin_fraction", self.cabin_fraction);
        m.set("wheel_radius", self.wheel_radius);
        m.set("seed", self.seed);
        m
    }

    /// Missing dimension keys are drawn from the class ranges with `seed`.
    pub fn from_kv(m: &KvMap) -> Result<Self, KvError> {
        let class: VehicleClass = m.get_str("class").unwrap_or("sedan").parse().map_err(|_| KvError::Value {
            key: "class".into(),
            value: m.get_str("class").unwrap_or_default().into(),
        })?;
        let seed = m.get("seed")?.unwrap_or(0);
        let base = Self::sample(class, seed);
        Ok(Self {
            class,
            length: m.get("length")?.unwrap_or(base.length),
            width: m.get("width")?.unwrap_or(base.width),
            height: m.get("height")?.unwrap_or(base.height),
            cabin_fraction: m.get("cabin_fraction")?.unwrap_or(base.cabin_fraction),
            wheel_radius: m.get("wheel_radius")?.unwrap_or(base.wheel_radius),
            seed,
        })
    }
}

/// Closed hexahedron from a bottom and a top quad, both listed
/// counter-clockwise seen from above.
fn hexahedron(bottom: [Point3<f64>; 4], top: [Point3<f64>; 4]) -> TriMesh<f64> {
    let vertices: Vec<_> = bottom.into_iter().chain(top).collect();
    let mut tris = vec![[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7]];
    for i in 0..4 {
        let j = (i + 1) % 4;
        tris.push([i, j, 4 + j]);
        tris.push([i, 4 + j, 4 + i]);
    }
    TriMesh::new(vertices, tris).expect("indices in range")
}

fn axis_box(min: Point3<f64>, max: Point3<f64>) -> TriMesh<f64> {
    let quad = |z: f64| {
        [
            Point3::new(min.x, min.y, z),
            Point3::new(max.x, min.y, z),
            Point3::new(max.x, max.y, z),
            Point3::new(min.x, max.y, z),
        ]
    };
    hexahedron(quad(min.z), quad(max.z))
}

/// Octagonal prism approximating a wheel; axis along y.
fn wheel(center_x: f64, radius: f64, y0: f64, y1: f64) -> TriMesh<f64> {
    const SIDES: usize = 8;
    // flat bottom edge resting on z=0
    let center_z = radius * (std::f64::consts::PI / SIDES as f64).cos();
    let mut vertices = Vec::with_capacity(2 * SIDES);
    for y in [y0, y1] {
        for k in 0..SIDES {
            let a = std::f64::consts::TAU * (k as f64 + 0.5) / SIDES as f64;
            vertices.push(Point3::new(center_x + radius * a.cos(), y, center_z + radius * a.sin()));
        }
    }
    let mut tris = Vec::new();
    for k in 1..SIDES - 1 {
        tris.push([0, k + 1, k]);
        tris.push([SIDES, SIDES + k, SIDES + k + 1]);
    }
    for k in 0..SIDES {
        let j = (k + 1) % SIDES;
        tris.push([k, j, SIDES + j]);
        tris.push([k, SIDES + j, SIDES + k]);
    }
    TriMesh::new(vertices, tris).expect("indices in range")
}

/// Builds the vehicle in the Canonical frame: nose along +x, bounding box
/// centered in xy, wheels touching z=0.
pub fn gen_vehicle_mesh(spec: &VehicleSpec) -> Result<TriMesh<f64>, SimulatorError> {
    spec.validate()?;
    let (body_share, hood, top_len, top_width) = spec.class.silhouette();
    let (l, w, h, r) = (spec.length, spec.width, spec.height, spec.wheel_radius);
    let half_l = 0.5 * l;
    let half_w = 0.5 * w;

    let chassis = 0.7 * r;
    let body_top = chassis + (h - chassis) * body_share;
    let mut mesh = axis_box(Point3::new(-half_l, -half_w, chassis), Point3::new(half_l, half_w, body_top));

    let cabin_len = spec.cabin_fraction * l;
    let front = (half_l - hood * l).min(half_l);
    let back = (front - cabin_len).max(-half_l + 0.02 * l);
    let shrink = (1.0 - top_len) * (front - back);
    let (top_front, top_back) = (front - 0.7 * shrink, back + 0.3 * shrink);
    let bw = 0.96 * half_w;
    let tw = top_width * half_w;
    let cabin = hexahedron(
        [
            Point3::new(back, -bw, body_top),
            Point3::new(front, -bw, body_top),
            Point3::new(front, bw, body_top),
            Point3::new(back, bw, body_top),
        ],
        [
            Point3::new(top_back, -tw, h),
            Point3::new(top_front, -tw, h),
            Point3::new(top_front, tw, h),
            Point3::new(top_back, tw, h),
        ],
    );
    mesh.merge(&cabin);

    let wheel_width = (0.12 * w).min(0.3);
    let axle = half_l - if spec.class == VehicleClass::Bus { 2.2 * r } else { 1.3 * r };
    for x in [axle, -axle] {
        mesh.merge(&wheel(x, r, half_w - 0.02 - wheel_width, half_w - 0.02));
        mesh.merge(&wheel(x, r, -half_w + 0.02, -half_w + 0.02 + wheel_width));
    }

    // center on the xy bounding box, lowest point at z=0
    let bounds = mesh.bounds().expect("non-empty mesh");
    let c = bounds.center();
    Ok(mesh.transformed(&PlanarPose::new(0.0, -c.x, -c.y, -bounds.min.z)))
}
