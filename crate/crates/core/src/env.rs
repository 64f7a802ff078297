//! Obstacle worlds, the clearance-based speed model and training-pair sampling.

use std::fs;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};

/// Goal tolerance used by the planner when nothing else is configured.
pub const DEFAULT_GOAL_TOLERANCE: f64 = 0.06;

/// Sampled pairs closer than this carry no training signal.
pub const PAIR_MIN_SEPARATION: f64 = 2.0 * DEFAULT_GOAL_TOLERANCE;

const DATASET_MAGIC: &[u8; 4] = b"EPDS";
const DATASET_VERSION: u32 = 1;
const PROBE_BATCH: usize = 1000;

/// A point in configuration space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(Vec<f64>);

impl Config {
    pub fn new(coords: Vec<f64>) -> Self {
        Config(coords)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Config {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Config {
    fn from(v: Vec<f64>) -> Self {
        Config(v)
    }
}

impl From<&[f64]> for Config {
    fn from(v: &[f64]) -> Self {
        Config(v.to_vec())
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Obstacle {
    Box {
        center: Vec<f64>,
        #[serde(alias = "half")]
        half_extents: Vec<f64>,
    },
    Sphere {
        center: Vec<f64>,
        radius: f64,
    },
}

impl Obstacle {
    /// Exact signed distance from `q`; negative inside.
    pub fn signed_distance(&self, q: &[f64]) -> f64 {
        match self {
            Obstacle::Sphere { center, radius } => distance(q, center) - radius,
            Obstacle::Box {
                center,
                half_extents,
            } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for ((x, c), h) in q.iter().zip(center).zip(half_extents) {
                    let d = (x - c).abs() - h;
                    if d > 0.0 {
                        outside += d * d;
                    }
                    inside = inside.max(d);
                }
                outside.sqrt() + inside.min(0.0)
            }
        }
    }

    fn dims(&self) -> usize {
        match self {
            Obstacle::Box { center, .. } | Obstacle::Sphere { center, .. } => center.len(),
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::InvalidEnvironment(format!(
                "obstacle has {} coordinates in a {dims}-dimensional world",
                self.dims()
            )));
        }
        let ok = match self {
            Obstacle::Box {
                center,
                half_extents,
            } => {
                half_extents.len() == dims
                    && half_extents.iter().all(|h| h.is_finite() && *h >= 0.0)
                    && center.iter().all(|c| c.is_finite())
            }
            Obstacle::Sphere { center, radius } => {
                radius.is_finite() && *radius >= 0.0 && center.iter().all(|c| c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidEnvironment(format!("malformed obstacle {self:?}")))
        }
    }
}

fn default_d_min() -> f64 {
    0.1
}

fn default_d_max() -> f64 {
    1.0
}

fn default_s_const() -> f64 {
    1.0
}

fn default_fourier_h() -> usize {
    128
}

fn default_fourier_sigma() -> f64 {
    1.0
}

/// On-disk description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub id: u32,
    pub dims: usize,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    #[serde(default = "default_s_const")]
    pub s_const: f64,
    #[serde(default)]
    pub fourier_seed: u64,
    #[serde(default = "default_fourier_h")]
    pub fourier_h: usize,
    #[serde(default = "default_fourier_sigma")]
    pub fourier_sigma: f64,
}

impl EnvironmentSpec {
    /// An obstacle-free box with default speed constants.
    pub fn empty(id: u32, bounds: Vec<[f64; 2]>) -> Self {
        EnvironmentSpec {
            id,
            dims: bounds.len(),
            bounds,
            obstacles: Vec::new(),
            d_min: default_d_min(),
            d_max: default_d_max(),
            s_const: default_s_const(),
            fourier_seed: u64::from(id),
            fourier_h: default_fourier_h(),
            fourier_sigma: default_fourier_sigma(),
        }
    }
}

/// Random Fourier code `b` of shape `dims x h`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierCode {
    pub dims: usize,
    pub h: usize,
    pub values: Vec<f64>,
}

impl FourierCode {
    pub fn sample(dims: usize, h: usize, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidEnvironment(format!("fourier sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..dims * h).map(|_| normal.sample(&mut rng)).collect();
        Ok(FourierCode { dims, h, values })
    }

    #[inline]
    pub fn get(&self, axis: usize, feature: usize) -> f64 {
        self.values[axis * self.h + feature]
    }
}

/// An immutable obstacle world.
#[derive(Clone, Debug)]
pub struct Environment {
    spec: EnvironmentSpec,
    code: FourierCode,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec) -> Result<Self> {
        let d = spec.dims;
        if d == 0 {
            return Err(Error::InvalidEnvironment("dims must be positive".into()));
        }
        if spec.bounds.len() != d {
            return Err(Error::InvalidEnvironment(format!(
                "{} bounds for {d} dimensions",
                spec.bounds.len()
            )));
        }
        for [lo, hi] in &spec.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidEnvironment(format!("bad bound [{lo}, {hi}]")));
            }
        }
        if !(spec.d_min >= 0.0 && spec.d_max > spec.d_min && spec.d_max.is_finite()) {
            return Err(Error::InvalidEnvironment(format!(
                "need d_max > d_min >= 0, got d_min={} d_max={}",
                spec.d_min, spec.d_max
            )));
        }
        if !(spec.s_const > 0.0 && spec.s_const.is_finite()) {
            return Err(Error::InvalidEnvironment("s_const must be positive".into()));
        }
        if spec.fourier_h == 0 {
            return Err(Error::InvalidEnvironment("fourier_h must be positive".into()));
        }
        for o in &spec.obstacles {
            o.validate(d)?;
        }
        let code = FourierCode::sample(d, spec.fourier_h, spec.fourier_sigma, spec.fourier_seed)?;
        Ok(Environment { spec, code })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Environment::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Environment::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn id(&self) -> u32 {
        self.spec.id
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.spec.bounds
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.spec.obstacles
    }

    pub fn fourier_code(&self) -> &FourierCode {
        &self.code
    }

    pub fn d_min(&self) -> f64 {
        self.spec.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.spec.d_max
    }

    pub fn s_const(&self) -> f64 {
        self.spec.s_const
    }

    /// Lowest ground-truth speed, reached at or inside obstacles.
    pub fn s_min(&self) -> f64 {
        self.spec.s_const * self.spec.d_min / self.spec.d_max
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.spec
            .bounds
            .iter()
            .map(|[lo, hi]| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.dims()
            && q
                .iter()
                .zip(&self.spec.bounds)
                .all(|(x, [lo, hi])| *x >= *lo && *x <= *hi)
    }

    pub fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: q.len(),
            });
        }
        if !self.contains(q) {
            return Err(Error::OutOfBounds { coords: q.to_vec() });
        }
        Ok(())
    }

    /// Clamps `q` into the bounding box in place.
    pub fn clip(&self, q: &mut [f64]) {
        for (x, [lo, hi]) in q.iter_mut().zip(&self.spec.bounds) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// Signed distance to the obstacle union. `+inf` in an empty world.
    pub fn clearance(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(self.clearance_unchecked(q))
    }

    pub(crate) fn clearance_unchecked(&self, q: &[f64]) -> f64 {
        self.spec
            .obstacles
            .iter()
            .map(|o| o.signed_distance(q))
            .fold(f64::INFINITY, f64::min)
    }

    /// Clipped clearance speed for a known clearance value.
    pub fn speed_from_clearance(&self, clearance: f64) -> f64 {
        let s = &self.spec;
        s.s_const / s.d_max * clearance.clamp(s.d_min, s.d_max)
    }

    pub fn ground_truth_speed(&self, q: &[f64]) -> Result<f64> {
        Ok(self.speed_from_clearance(self.clearance(q)?))
    }

    pub fn progressive_speed(&self, q: &[f64], alpha: f64) -> Result<f64> {
        Ok(progressive(self.ground_truth_speed(q)?, alpha))
    }

    fn uniform(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (x, [lo, hi]) in out.iter_mut().zip(&self.spec.bounds) {
            *x = rng.random_range(*lo..=*hi);
        }
    }

    /// Draws a uniform collision-free configuration.
    pub fn sample_free(&self, rng: &mut ChaCha8Rng) -> Config {
        let mut q = vec![0.0; self.dims()];
        loop {
            self.uniform(rng, &mut q);
            if self.clearance_unchecked(&q) > 0.0 {
                return Config(q);
            }
        }
    }

    pub fn sample_pairs(&self, n: usize, seed: u64) -> Result<PairDataset> {
        self.sample_pairs_with(n, seed, PAIR_MIN_SEPARATION)
    }

    /// Rejection-samples `n` free start/goal pairs at least `min_separation` apart.
    pub fn sample_pairs_with(&self, n: usize, seed: u64, min_separation: f64) -> Result<PairDataset> {
        if n == 0 {
            return Err(Error::InvalidEnvironment("requested zero pairs".into()));
        }
        let d = self.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = vec![0.0; d];
        let mut accepted = 0usize;
        for _ in 0..PROBE_BATCH {
            self.uniform(&mut rng, &mut q);
            if self.clearance_unchecked(&q) > 0.0 {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / PROBE_BATCH as f64;
        if rate < 0.01 {
            return Err(Error::EnvironmentTooDense {
                env_id: self.id(),
                rate,
            });
        }
        let mut data = Vec::with_capacity(n * 2 * d);
        let mut rejected = 0usize;
        while data.len() < n * 2 * d {
            let s = self.sample_free(&mut rng);
            let g = self.sample_free(&mut rng);
            if distance(&s, &g) <= min_separation {
                rejected += 1;
                if rejected > 1000 + 100 * n {
                    return Err(Error::EnvironmentTooDense {
                        env_id: self.id(),
                        rate: 0.0,
                    });
                }
                continue;
            }
            data.extend_from_slice(&s);
            data.extend_from_slice(&g);
        }
        Ok(PairDataset {
            env_id: self.id(),
            dims: d,
            data,
            acceptance_rate: rate,
        })
    }
}

/// Interpolates between the constant unit-speed scene and the clearance speed.
#[inline]
pub fn progressive(ground_truth: f64, alpha: f64) -> f64 {
    (1.0 - alpha) + alpha * ground_truth
}

/// Start/goal pairs for one environment, stored flat as `[q_s, q_g]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub env_id: u32,
    dims: usize,
    data: Vec<f64>,
    /// Free-space acceptance rate observed while sampling (NaN when loaded).
    pub acceptance_rate: f64,
}

impl PairDataset {
    pub fn from_pairs(env_id: u32, dims: usize, pairs: &[(Config, Config)]) -> Result<Self> {
        let mut data = Vec::with_capacity(pairs.len() * 2 * dims);
        for (s, g) in pairs {
            for q in [s, g] {
                if q.dims() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        got: q.dims(),
                    });
                }
                data.extend_from_slice(q);
            }
        }
        Ok(PairDataset {
            env_id,
            dims,
            data,
            acceptance_rate: f64::NAN,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.dims)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        let row = &self.data[i * 2 * self.dims..(i + 1) * 2 * self.dims];
        row.split_at(self.dims)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        self.data
            .chunks_exact(2 * self.dims)
            .map(move |row| row.split_at(self.dims))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        binio::write_u32(w, DATASET_VERSION)?;
        binio::write_u32(w, self.dims as u32)?;
        binio::write_u64(w, self.len() as u64)?;
        binio::write_f64s(w, &self.data)
    }

    pub fn read_from<R: Read>(r: &mut R, env_id: u32) -> Result<Self> {
        binio::read_magic(r, DATASET_MAGIC)?;
        let version = binio::read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let dims = binio::read_u32(r)? as usize;
        let count = binio::read_u64(r)? as usize;
        if dims == 0 {
            return Err(Error::Format("dataset with zero dimensions".into()));
        }
        let data = binio::read_f64s(r, count * 2 * dims)?;
        Ok(PairDataset {
            env_id,
            dims,
            data,
            acceptance_rate: f64::NAN,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, env_id: u32) -> Result<Self> {
        let bytes = fs::read(path)?;
        PairDataset::read_from(&mut bytes.as_slice(), env_id)
    }
}
