//! Learned arrival times against the grid solver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{distance, Environment};
use crate::error::{Error, Result};
use crate::field::FieldNet;
use crate::fmm::{fmm_solve, rasterize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub sources: usize,
    pub resolution: Vec<usize>,
    pub seed: u64,
    /// Speed-model parameter for the grid; defaults to the α the network
    /// was last trained at.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: Vec<f64>,
    pub cells: usize,
    pub median: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub alpha: f64,
    pub per_source: Vec<SourceStats>,
    /// Pooled over every compared cell of every source.
    pub median: f64,
    pub p90: f64,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut out = format!("alpha {:.4}\nsource\tcells\tmedian\tp90\n", self.alpha);
        for s in &self.per_source {
            let src: Vec<String> = s.source.iter().map(|x| format!("{x:.4}")).collect();
            out.push_str(&format!(
                "({})\t{}\t{:.4}\t{:.4}\n",
                src.join(", "),
                s.cells,
                s.median,
                s.p90
            ));
        }
        out.push_str(&format!("pooled\t\t{:.4}\t{:.4}\n", self.median, self.p90));
        out
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Relative arrival-time error `|T_net − T_fmm| / T_fmm` over the free cells
/// for random free sources. Sources are snapped to cell centers so both
/// solvers start from the same point.
pub fn fmm_compare(net: &FieldNet, env: &Environment, cfg: &CompareConfig) -> Result<CompareReport> {
    net.check_compatible(env)?;
    if cfg.sources == 0 {
        return Err(Error::InvalidGrid("need at least one source".into()));
    }
    let alpha = cfg.alpha.unwrap_or(net.trained_alpha);
    let grid = rasterize(env, &cfg.resolution, alpha)?;
    let geom = &grid.geometry;
    let free: Vec<usize> = (0..geom.len())
        .filter(|&i| env.clearance_unchecked(&geom.center(i)) > 0.0)
        .collect();
    if free.len() < 2 {
        return Err(Error::InvalidGrid("fewer than two free cells".into()));
    }
    let field = net.field(env.id())?;
    let d = env.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pooled = Vec::new();
    let mut per_source = Vec::with_capacity(cfg.sources);
    for _ in 0..cfg.sources {
        let drawn = env.sample_free(&mut rng);
        let src_cell = geom.nearest_cell(&drawn)?;
        let source = geom.center(src_cell);
        let tg = fmm_solve(&grid, &source)?;
        let cells: Vec<usize> = free.iter().copied().filter(|&i| i != src_cell).collect();
        let mut qs = Vec::with_capacity(cells.len() * d);
        let mut qg = Vec::with_capacity(cells.len() * d);
        for &i in &cells {
            qs.extend_from_slice(&source);
            qg.extend(geom.center(i));
        }
        let taus = field.tau_batch(&qs, &qg)?;
        let errs: Vec<f64> = cells
            .iter()
            .zip(&taus)
            .map(|(&i, tau)| {
                let t_net = distance(&source, &geom.center(i)) / tau;
                let t_fmm = tg.times[i];
                (t_net - t_fmm).abs() / t_fmm
            })
            .collect();
        pooled.extend_from_slice(&errs);
        let errs = sorted(errs);
        per_source.push(SourceStats {
            source,
            cells: errs.len(),
            median: quantile(&errs, 0.5),
            p90: quantile(&errs, 0.9),
        });
    }
    let pooled = sorted(pooled);
    Ok(CompareReport {
        alpha,
        per_source,
        median: quantile(&pooled, 0.5),
        p90: quantile(&pooled, 0.9),
    })
}
