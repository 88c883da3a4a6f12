use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::kv::{KvError, KvMap};
use crate::scalar::Real;

use super::NetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// Pose branch, canonicalization, then a separate completion branch.
    Baseline,
    /// One encoder feeding both decoders.
    SharedEncoder,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::SharedEncoder => "shared",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Arch::Baseline),
            "shared" => Ok(Arch::SharedEncoder),
            other => Err(format!("unknown architecture '{other}'")),
        }
    }
}

/// Encoder parameter prefixes.
pub const SHARED_ENCODER: &str = "enc";
pub const POSE_ENCODER: &str = "pose_enc";
pub const SHAPE_ENCODER: &str = "shape_enc";
pub const SHAPE_DECODER: &str = "shape";
pub const POSE_DECODER: &str = "pose";
pub const S_CD: &str = "s_cd";
pub const S_P: &str = "s_p";

pub const CODE_SIZE: usize = 1024;
const MLP1: [usize; 3] = [3, 128, 256];
const MLP2: [usize; 3] = [512, 512, 1024];
const COARSE_HIDDEN: [usize; 3] = [CODE_SIZE, 1024, 1024];
const FOLD: [usize; 4] = [CODE_SIZE + 3 + 2, 512, 512, 3];
const POSE: [usize; 4] = [CODE_SIZE, 512, 512, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub n_coarse: usize,
    /// Folding grid side `u`; each coarse point expands into `u²` points.
    pub grid: usize,
    /// Half-width of the folding grid.
    pub grid_scale: f64,
    /// Known vertical offset of every predicted pose.
    pub known_tz: f64,
    /// Points fed to the encoder after resampling.
    pub input_points: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            grid: 4,
            grid_scale: 0.05,
            known_tz: -2.0,
            input_points: 256,
        }
    }
}

impl NetConfig {
    pub fn n_fine(&self) -> usize {
        self.n_coarse * self.grid * self.grid
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.n_coarse == 0 || self.grid == 0 || self.input_points == 0 {
            return Err(NetError::Config("n_coarse, grid and input_points must be at least 1".into()));
        }
        if !(self.grid_scale >= 0.0 && self.grid_scale.is_finite() && self.known_tz.is_finite()) {
            return Err(NetError::Config("grid_scale and known_tz must be finite".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("n_coarse", self.n_coarse);
        m.set("grid", self.grid);
        m.set("grid_scale", self.grid_scale);
        m.set("known_tz", self.known_tz);
        m.set("input_points", self.input_points);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, KvError> {
        let d = Self::default();
        Ok(Self {
            n_coarse: m.get("n_coarse")?.unwrap_or(d.n_coarse),
            grid: m.get("grid")?.unwrap_or(d.grid),
            grid_scale: m.get("grid_scale")?.unwrap_or(d.grid_scale),
            known_tz: m.get("known_tz")?.unwrap_or(d.known_tz),
            input_points: m.get("input_points")?.unwrap_or(d.input_points),
        })
    }
}

/// Names and shapes of every parameter, in storage order.
pub fn layout(arch: Arch, cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut mlp = |prefix: &str, widths: &[usize]| {
        for (i, w) in widths.windows(2).enumerate() {
            out.push((format!("{prefix}.{i}.w"), vec![w[0], w[1]]));
            out.push((format!("{prefix}.{i}.b"), vec![w[1]]));
        }
    };
    let encoders: &[&str] = match arch {
        Arch::SharedEncoder => &[SHARED_ENCODER],
        Arch::Baseline => &[POSE_ENCODER, SHAPE_ENCODER],
    };
    for e in encoders {
        mlp(&format!("{e}.mlp1"), &MLP1);
        mlp(&format!("{e}.mlp2"), &MLP2);
    }
    let mut coarse = COARSE_HIDDEN.to_vec();
    coarse.push(3 * cfg.n_coarse);
    mlp(&format!("{SHAPE_DECODER}.coarse"), &coarse);
    mlp(&format!("{SHAPE_DECODER}.fold"), &FOLD);
    mlp(&format!("{POSE_DECODER}.mlp"), &POSE);
    out.push((S_CD.to_string(), vec![]));
    out.push((S_P.to_string(), vec![]));
    out
}

/// Named parameters of one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Arch,
    pub config: NetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Weights and biases uniform in `±1/√fan_in`; log-variances zero.
    pub fn init(arch: Arch, config: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut fan_in = 1;
        for (name, shape) in layout(arch, &config) {
            if shape.len() == 2 {
                fan_in = shape[0];
            }
            let n: usize = shape.iter().product();
            let t = if shape.is_empty() {
                Tensor::scalar(T::zero())
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
                Tensor::new(shape, data).expect("layout shapes")
            };
            names.push(name);
            tensors.push(t);
        }
        Self {
            arch,
            config,
            names,
            tensors,
        }
    }

    /// Rebuilds from stored tensors, checking names and shapes against the
    /// architecture layout.
    pub fn from_parts(arch: Arch, config: NetConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, NetError> {
        let expected = layout(arch, &config);
        if expected.len() != named.len() {
            return Err(NetError::Layout(format!(
                "expected {} tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(NetError::Layout(format!("expected {en} {es:?}, got {n} {:?}", t.shape())));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            arch,
            config,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameter count of the tensors whose names start with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn uncertainty(&self) -> (T, T) {
        let item = |n| self.get(n).and_then(Tensor::item).unwrap_or_else(T::zero);
        (item(S_CD), item(S_P))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every parameter on `tape`, as a trainable leaf when
    /// `trainable(name)` holds and as a constant otherwise.
    pub fn bind(&self, tape: &Tape<T>, trainable: impl Fn(&str) -> bool) -> Result<Bound<'_>, AutodiffError> {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                if trainable(n) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bound {
            names: &self.names,
            vars,
        })
    }
}

/// Parameters recorded on a tape, looked up by name.
pub struct Bound<'a> {
    names: &'a [String],
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Pairs `names` with vars recorded elsewhere, e.g. by a gradient check.
    pub fn from_vars(names: &'a [String], vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len(), "one var per name");
        Self { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, NetError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    /// Vars in storage order, aligned with [`ModelParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
