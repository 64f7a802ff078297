//! First-order Fast Marching on a regular grid of cell centers.
//!
//! The grid covers a bounding box split into `resolution[i]` cells per axis;
//! values live at cell centers and the linear index is row-major with axis 0
//! slowest.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use crate::binio::*;
use crate::env::{distance, Environment};
use crate::error::{Error, Result};
use crate::planner::Path;

const TIME_MAGIC: &[u8; 4] = b"EPTG";
const TIME_VERSION: u32 = 1;

/// Cell-center lattice over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGeometry {
    pub resolution: Vec<usize>,
    pub spacing: Vec<f64>,
    /// Center of the first cell.
    pub origin: Vec<f64>,
}

impl GridGeometry {
    pub fn new(bounds: &[[f64; 2]], resolution: &[usize]) -> Result<Self> {
        if bounds.len() != resolution.len() || bounds.is_empty() {
            return Err(Error::InvalidGrid(format!(
                "{} resolutions for {} axes",
                resolution.len(),
                bounds.len()
            )));
        }
        if let Some(r) = resolution.iter().find(|&&r| r < 3) {
            return Err(Error::InvalidGrid(format!("resolution {r} is below 3 cells")));
        }
        let spacing: Vec<f64> = bounds
            .iter()
            .zip(resolution)
            .map(|([lo, hi], &n)| (hi - lo) / n as f64)
            .collect();
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidGrid("degenerate bounds".into()));
        }
        let origin = bounds.iter().zip(&spacing).map(|([lo, _], h)| lo + 0.5 * h).collect();
        Ok(GridGeometry {
            resolution: resolution.to_vec(),
            spacing,
            origin,
        })
    }

    pub fn dims(&self) -> usize {
        self.resolution.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of one cell diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.spacing.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims()];
        for i in (0..self.dims().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.resolution[i + 1];
        }
        s
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.strides()).map(|(m, s)| m * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dims()];
        for (i, s) in self.strides().iter().enumerate() {
            m[i] = idx / s;
            idx %= s;
        }
        m
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .zip(self.origin.iter().zip(&self.spacing))
            .map(|(&m, (o, h))| o + m as f64 * h)
            .collect()
    }

    /// Whether `q` lies inside the box covered by the cells.
    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.dims()
            && (0..self.dims()).all(|i| {
                let lo = self.origin[i] - 0.5 * self.spacing[i];
                let hi = lo + self.resolution[i] as f64 * self.spacing[i];
                let slack = 1e-9 * self.spacing[i];
                q[i] >= lo - slack && q[i] <= hi + slack
            })
    }

    fn check(&self, q: &[f64]) -> Result<()> {
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

    /// Index of the cell whose center is nearest to `q`.
    pub fn nearest_cell(&self, q: &[f64]) -> Result<usize> {
        self.check(q)?;
        let multi: Vec<usize> = (0..self.dims())
            .map(|i| {
                let t = ((q[i] - self.origin[i]) / self.spacing[i]).round();
                t.clamp(0.0, (self.resolution[i] - 1) as f64) as usize
            })
            .collect();
        Ok(self.index(&multi))
    }
}

/// Positive speeds at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedGrid {
    pub geometry: GridGeometry,
    pub speeds: Vec<f64>,
}

impl SpeedGrid {
    pub fn new(geometry: GridGeometry, speeds: Vec<f64>) -> Result<Self> {
        if speeds.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!(
                "{} speeds for {} cells",
                speeds.len(),
                geometry.len()
            )));
        }
        if let Some(&s) = speeds.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::NonPositiveSpeed(s));
        }
        Ok(SpeedGrid { geometry, speeds })
    }

    pub fn constant(bounds: &[[f64; 2]], resolution: &[usize], speed: f64) -> Result<Self> {
        let g = GridGeometry::new(bounds, resolution)?;
        let n = g.len();
        SpeedGrid::new(g, vec![speed; n])
    }

    /// The same grid with every speed multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        SpeedGrid::new(self.geometry.clone(), self.speeds.iter().map(|s| s * c).collect())
    }
}

/// Samples the progressive speed of `env` at every cell center.
pub fn rasterize(env: &Environment, resolution: &[usize], alpha: f64) -> Result<SpeedGrid> {
    let geometry = GridGeometry::new(env.bounds(), resolution)?;
    let speeds = (0..geometry.len())
        .map(|i| env.progressive_speed(&geometry.center(i), alpha))
        .collect::<Result<Vec<_>>>()?;
    SpeedGrid::new(geometry, speeds)
}

/// Arrival times from a single source.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub geometry: GridGeometry,
    pub times: Vec<f64>,
    pub source: Vec<f64>,
    /// Cells in the order the march finalized them.
    pub acceptance_order: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

/// Upwind solve of `Σ ((T − a_i)/h_i)² = (1/s)²` over the axes with finalized
/// neighbors, smallest neighbor times first.
fn godunov(neigh: &mut [(f64, f64)], speed: f64) -> f64 {
    neigh.sort_by(|a, b| a.0.total_cmp(&b.0));
    let f = 1.0 / speed;
    let (a0, h0) = neigh[0];
    let mut t = a0 + h0 * f;
    let (mut sa, mut sb, mut sc) = (0.0, 0.0, 0.0);
    for (k, &(a, h)) in neigh.iter().enumerate() {
        let w = 1.0 / (h * h);
        sa += w;
        sb += a * w;
        sc += a * a * w;
        if k == 0 {
            continue;
        }
        if t <= a {
            break;
        }
        // sa T² − 2 sb T + sc − f² = 0
        let disc = sb * sb - sa * (sc - f * f);
        if disc < 0.0 {
            break;
        }
        t = (sb + disc.sqrt()) / sa;
    }
    t
}

/// Marches arrival times outward from the cell nearest `source`.
pub fn fmm_solve(grid: &SpeedGrid, source: &[f64]) -> Result<TimeGrid> {
    let g = &grid.geometry;
    let src = g.nearest_cell(source)?;
    let n = g.len();
    let d = g.dims();
    let strides = g.strides();
    let mut times = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    times[src] = 0.0;
    heap.push(Reverse(Entry(0.0, src)));
    let mut last = 0.0f64;
    let mut multi = vec![0usize; d];
    let mut neigh: Vec<(f64, f64)> = Vec::with_capacity(d);

    while let Some(Reverse(Entry(t, idx))) = heap.pop() {
        if accepted[idx] || t > times[idx] {
            continue;
        }
        assert!(
            t >= last - 1e-12 * last.max(1.0),
            "march lost causality: {t} accepted after {last}"
        );
        last = t;
        accepted[idx] = true;
        order.push(idx);

        let mut rem = idx;
        for i in 0..d {
            multi[i] = rem / strides[i];
            rem %= strides[i];
        }
        for axis in 0..d {
            for dir in [-1i64, 1] {
                let m = multi[axis] as i64 + dir;
                if m < 0 || m >= g.resolution[axis] as i64 {
                    continue;
                }
                let nb = (idx as i64 + dir * strides[axis] as i64) as usize;
                if accepted[nb] {
                    continue;
                }
                neigh.clear();
                for ax in 0..d {
                    let mut best = f64::INFINITY;
                    let mb = if ax == axis { m as usize } else { multi[ax] };
                    for dd in [-1i64, 1] {
                        let mm = mb as i64 + dd;
                        if mm < 0 || mm >= g.resolution[ax] as i64 {
                            continue;
                        }
                        let j = (nb as i64 + dd * strides[ax] as i64) as usize;
                        if accepted[j] {
                            best = best.min(times[j]);
                        }
                    }
                    if best.is_finite() {
                        neigh.push((best, g.spacing[ax]));
                    }
                }
                let cand = godunov(&mut neigh, grid.speeds[nb]);
                if cand < times[nb] {
                    times[nb] = cand;
                    heap.push(Reverse(Entry(cand, nb)));
                }
            }
        }
    }
    debug_assert_eq!(order.len(), n);
    Ok(TimeGrid {
        geometry: g.clone(),
        times,
        source: source.to_vec(),
        acceptance_order: order,
    })
}

impl TimeGrid {
    /// Multilinear interpolation of the stored times; queries between the
    /// outermost centers and the box edge take the boundary value.
    pub fn sample(&self, q: &[f64]) -> Result<f64> {
        self.geometry.check(q)?;
        Ok(self.interpolate(q))
    }

    fn interpolate(&self, q: &[f64]) -> f64 {
        let g = &self.geometry;
        let d = g.dims();
        let strides = g.strides();
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        let mut step = vec![0usize; d];
        for i in 0..d {
            let n = g.resolution[i];
            let t = ((q[i] - g.origin[i]) / g.spacing[i]).clamp(0.0, (n - 1) as f64);
            let i0 = (t.floor() as usize).min(n - 2);
            frac[i] = t - i0 as f64;
            base += i0 * strides[i];
            step[i] = strides[i];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for i in 0..d {
                if corner >> i & 1 == 1 {
                    w *= frac[i];
                    idx += step[i];
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w != 0.0 {
                acc += w * self.times[idx];
            }
        }
        acc
    }

    /// Central-difference gradient of the interpolated field at `q`, one cell
    /// wide, shrunk one-sidedly at the box edges.
    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.geometry.check(q)?;
        let g = &self.geometry;
        let mut grad = vec![0.0; g.dims()];
        let mut probe = q.to_vec();
        for i in 0..g.dims() {
            let lo = g.origin[i];
            let hi = g.origin[i] + (g.resolution[i] - 1) as f64 * g.spacing[i];
            let a = (q[i] - g.spacing[i]).max(lo);
            let b = (q[i] + g.spacing[i]).min(hi);
            if b <= a {
                continue;
            }
            probe[i] = b;
            let tb = self.interpolate(&probe);
            probe[i] = a;
            let ta = self.interpolate(&probe);
            probe[i] = q[i];
            grad[i] = (tb - ta) / (b - a);
        }
        Ok(grad)
    }

    /// Times as CSV, one line per index along axis 0 (2D grids only).
    pub fn to_csv(&self) -> Result<String> {
        grid_csv(&self.geometry, &self.times)
    }

    /// 8-bit grayscale PGM, black at zero, white at the largest finite time.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        grid_pgm(&self.geometry, &self.times)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = &self.geometry;
        w.write_all(TIME_MAGIC)?;
        write_u32(w, TIME_VERSION)?;
        write_u32(w, g.dims() as u32)?;
        write_u64(w, self.times.len() as u64)?;
        for i in 0..g.dims() {
            write_u64(w, g.resolution[i] as u64)?;
            write_f64s(w, &[g.origin[i], g.spacing[i]])?;
        }
        write_f64s(w, &self.source)?;
        write_f64s(w, &self.times)
    }

    /// Reads a grid written by [`TimeGrid::write_to`]; the acceptance order is
    /// not stored and comes back empty.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, TIME_MAGIC)?;
        let v = read_u32(r)?;
        if v != TIME_VERSION {
            return Err(Error::Format(format!("time grid version {v}")));
        }
        let d = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        if d == 0 || d > 16 {
            return Err(Error::Format(format!("time grid with {d} axes")));
        }
        let mut resolution = Vec::with_capacity(d);
        let mut origin = Vec::with_capacity(d);
        let mut spacing = Vec::with_capacity(d);
        for _ in 0..d {
            resolution.push(read_u64(r)? as usize);
            let os = read_f64s(r, 2)?;
            origin.push(os[0]);
            spacing.push(os[1]);
        }
        let geometry = GridGeometry {
            resolution,
            spacing,
            origin,
        };
        if geometry.len() != count {
            return Err(Error::Format("cell count does not match the resolution".into()));
        }
        let source = read_f64s(r, d)?;
        let times = read_f64s(r, count)?;
        Ok(TimeGrid {
            geometry,
            times,
            source,
            acceptance_order: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub fn grid_csv(g: &GridGeometry, values: &[f64]) -> Result<String> {
    if g.dims() != 2 {
        return Err(Error::InvalidGrid("CSV export needs a 2D grid".into()));
    }
    let cols = g.resolution[1];
    let mut out = String::new();
    for row in values.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn grid_pgm(g: &GridGeometry, values: &[f64]) -> Result<Vec<u8>> {
    if g.dims() != 2 {
        return Err(Error::InvalidGrid("image export needs a 2D grid".into()));
    }
    let (rows, cols) = (g.resolution[0], g.resolution[1]);
    let max = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        if !v.is_finite() {
            255
        } else if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Walks from `start` down the time field toward its source with fixed steps
/// of length `step`. Stops once the interpolated time drops below `tol` or
/// the walker is within one step of the source; otherwise gives up after
/// `10 · diameter / step` iterations and returns an unsuccessful path.
pub fn fmm_descend(tg: &TimeGrid, sg: &SpeedGrid, start: &[f64], step: f64, tol: f64) -> Result<Path> {
    if tg.geometry != sg.geometry {
        return Err(Error::InvalidGrid("time and speed grids differ in geometry".into()));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
    }
    tg.geometry.check(start)?;
    let g = &tg.geometry;
    let lo: Vec<f64> = (0..g.dims()).map(|i| g.origin[i] - 0.5 * g.spacing[i]).collect();
    let hi: Vec<f64> = (0..g.dims())
        .map(|i| lo[i] + g.resolution[i] as f64 * g.spacing[i])
        .collect();
    let diameter = distance(&lo, &hi);
    let max_iters = (10.0 * diameter / step).ceil() as usize;

    let mut q = start.to_vec();
    let mut waypoints = vec![q.clone()];
    if start == tg.source.as_slice() {
        return Ok(Path::new(waypoints, true));
    }
    for _ in 0..max_iters {
        if tg.interpolate(&q) < tol || distance(&q, &tg.source) <= step {
            waypoints.push(tg.source.clone());
            return Ok(Path::new(waypoints, true));
        }
        let grad = tg.gradient(&q)?;
        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        for i in 0..q.len() {
            q[i] = (q[i] - step * grad[i] / norm).clamp(lo[i], hi[i]);
        }
        waypoints.push(q.clone());
    }
    Ok(Path::new(waypoints, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvironmentSpec, Obstacle};
    use proptest::prelude::*;

    const UNIT: [[f64; 2]; 2] = [[0.0, 1.0], [0.0, 1.0]];

    fn max_distance_error(res: usize, source: &[f64]) -> f64 {
        let sg = SpeedGrid::constant(&UNIT, &[res, res], 1.0).unwrap();
        let tg = fmm_solve(&sg, source).unwrap();
        (0..tg.geometry.len())
            .map(|i| (tg.times[i] - distance(&tg.geometry.center(i), source)).abs())
            .fold(0.0, f64::max)
    }

    fn sphere_env() -> Environment {
        let mut spec = EnvironmentSpec::empty(1, UNIT.to_vec());
        spec.obstacles.push(Obstacle::Sphere {
            center: vec![0.5, 0.5],
            radius: 0.2,
        });
        spec.d_min = 0.05;
        spec.d_max = 0.5;
        Environment::new(spec).unwrap()
    }

    #[test]
    fn geometry_indexing() {
        let g = GridGeometry::new(&[[0.0, 3.0], [0.0, 4.0], [-1.0, 1.0]], &[3, 4, 5]).unwrap();
        assert_eq!(g.len(), 60);
        for idx in [0, 7, 33, 59] {
            assert_eq!(g.index(&g.multi_index(idx)), idx);
        }
        assert_eq!(g.center(0), vec![0.5, 0.5, -0.8]);
        assert_eq!(g.nearest_cell(&[2.9, 0.1, 0.95]).unwrap(), g.index(&[2, 0, 4]));
        assert!(GridGeometry::new(&UNIT, &[2, 5]).is_err());
        assert!(matches!(g.nearest_cell(&[3.5, 0.0, 0.0]), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn rasterize_examples() {
        let empty = Environment::new(EnvironmentSpec::empty(0, UNIT.to_vec())).unwrap();
        assert!(rasterize(&empty, &[8, 8], 1.0).unwrap().speeds.iter().all(|&s| s == 1.0));
        let env = sphere_env();
        assert!(rasterize(&env, &[8, 8], 0.0).unwrap().speeds.iter().all(|&s| s == 1.0));
        let sg = rasterize(&env, &[16, 16], 1.0).unwrap();
        let min = sg.speeds.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - env.s_min()).abs() < 1e-15);
        for i in 0..sg.geometry.len() {
            let c = sg.geometry.center(i);
            assert_eq!(sg.speeds[i], env.ground_truth_speed(&c).unwrap());
        }
        let mut spec = env.spec().clone();
        spec.d_min = 0.01;
        let thin = Environment::new(spec).unwrap();
        assert!(matches!(rasterize(&thin, &[16, 16], 1.05), Err(Error::NonPositiveSpeed(_))));
    }

    #[test]
    fn neighbor_of_source_is_one_step() {
        let sg = SpeedGrid::constant(&UNIT, &[10, 10], 1.0).unwrap();
        let tg = fmm_solve(&sg, &[0.45, 0.45]).unwrap();
        let g = &tg.geometry;
        assert_eq!(tg.times[g.index(&[4, 4])], 0.0);
        assert!((tg.times[g.index(&[5, 4])] - 0.1).abs() < 1e-15);
        assert!((tg.times[g.index(&[4, 3])] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_speed_distance_bound() {
        let res = 128;
        let err = max_distance_error(res, &[0.3, 0.55]);
        let diag = 2f64.sqrt() / res as f64;
        assert!(err <= 2.0 * diag, "max error {err} vs {}", 2.0 * diag);
    }

    #[test]
    fn first_order_convergence() {
        let e1 = max_distance_error(64, &[0.3, 0.55]);
        let e2 = max_distance_error(128, &[0.3, 0.55]);
        assert!(e1 / e2 >= 1.5, "{e1} -> {e2}");
    }

    #[test]
    fn half_speed_doubles_exactly() {
        let env = sphere_env();
        let sg = rasterize(&env, &[40, 40], 1.0).unwrap();
        let slow = sg.scaled(0.5).unwrap();
        let a = fmm_solve(&sg, &[0.1, 0.1]).unwrap();
        let b = fmm_solve(&slow, &[0.1, 0.1]).unwrap();
        assert_eq!(a.acceptance_order, b.acceptance_order);
        for (x, y) in a.times.iter().zip(&b.times) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn causal_and_complete() {
        let env = sphere_env();
        let sg = rasterize(&env, &[33, 47], 1.0).unwrap();
        let tg = fmm_solve(&sg, &[0.9, 0.2]).unwrap();
        assert_eq!(tg.acceptance_order.len(), tg.geometry.len());
        let mut seen = vec![false; tg.geometry.len()];
        for w in tg.acceptance_order.windows(2) {
            assert!(tg.times[w[1]] >= tg.times[w[0]]);
        }
        for &i in &tg.acceptance_order {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(tg.times.iter().all(|t| *t >= 0.0 && t.is_finite()));
        assert!(fmm_solve(&sg, &[1.5, 0.2]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let sg = SpeedGrid::constant(&UNIT, &[4, 4], 1.0).unwrap();
        let mut tg = fmm_solve(&sg, &[0.1, 0.1]).unwrap();
        let c = tg.geometry.center(5);
        assert_eq!(tg.sample(&c).unwrap(), tg.times[5]);
        tg.times[5] = 1.0;
        tg.times[6] = 3.0;
        let (a, b) = (tg.geometry.center(5), tg.geometry.center(6));
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        assert!((tg.sample(&mid).unwrap() - 2.0).abs() < 1e-15);
        assert!(tg.sample(&[1.2, 0.5]).is_err());
    }

    #[test]
    fn descend_straight_in_free_space() {
        let res = 64;
        let sg = SpeedGrid::constant(&UNIT, &[res, res], 1.0).unwrap();
        let h = 1.0 / res as f64;
        let src = [0.5 + 0.5 * h, 0.2 + 0.5 * h];
        let tg = fmm_solve(&sg, &src).unwrap();
        let start = [0.5 + 0.5 * h, 0.9];
        let p = fmm_descend(&tg, &sg, &start, 0.5 * h, 0.5 * h).unwrap();
        assert!(p.success);
        assert_eq!(p.waypoints.first().unwrap(), &start.to_vec());
        assert_eq!(p.waypoints.last().unwrap(), &src.to_vec());
        for w in &p.waypoints {
            assert!((w[0] - src[0]).abs() <= h);
        }
        let single = fmm_descend(&tg, &sg, &src, 0.5 * h, 0.5 * h).unwrap();
        assert_eq!(single.waypoints.len(), 1);
    }

    #[test]
    fn descend_around_sphere() {
        let env = sphere_env();
        let sg = rasterize(&env, &[96, 96], 1.0).unwrap();
        let tg = fmm_solve(&sg, &[0.5, 0.05]).unwrap();
        let h = sg.geometry.spacing[0];
        let p = fmm_descend(&tg, &sg, &[0.5, 0.95], 0.5 * h, 0.5 * h).unwrap();
        assert!(p.success);
        for w in &p.waypoints {
            assert!(env.clearance(w).unwrap() >= 0.0, "{w:?}");
        }
    }

    #[test]
    fn exports() {
        let sg = SpeedGrid::constant(&UNIT, &[3, 4], 1.0).unwrap();
        let tg = fmm_solve(&sg, &[0.1, 0.1]).unwrap();
        let csv = tg.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 4);
        let pgm = tg.to_pgm().unwrap();
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(pgm.len(), b"P5\n4 3\n255\n".len() + 12);
        let mut buf = Vec::new();
        tg.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"EPTG");
        let back = TimeGrid::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.times, tg.times);
        assert_eq!(back.geometry, tg.geometry);
        assert_eq!(back.source, tg.source);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn scale_equivariance(c in 0.1f64..10.0, sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
            let env = sphere_env();
            let sg = rasterize(&env, &[24, 24], 1.0).unwrap();
            let a = fmm_solve(&sg, &[sx, sy]).unwrap();
            let b = fmm_solve(&sg.scaled(c).unwrap(), &[sx, sy]).unwrap();
            for (x, y) in a.times.iter().zip(&b.times) {
                prop_assert!((x / c - y).abs() <= 1e-12 * y.max(1.0));
            }
        }

        #[test]
        fn interpolation_near_distance(qx in 0.0f64..1.0, qy in 0.0f64..1.0) {
            let res = 50;
            let src = [0.37, 0.61];
            let sg = SpeedGrid::constant(&UNIT, &[res, res], 1.0).unwrap();
            let tg = fmm_solve(&sg, &src).unwrap();
            let diag = tg.geometry.cell_diagonal();
            let t = tg.sample(&[qx, qy]).unwrap();
            prop_assert!((t - distance(&[qx, qy], &src)).abs() <= diag);
        }
    }
}
