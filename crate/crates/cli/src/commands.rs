use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use eikplan_core::compare::{fmm_compare, CompareConfig};
use eikplan_core::fmm::{fmm_solve, grid_csv, grid_pgm, rasterize};
use eikplan_core::planner::{evaluate, evaluate_fmm, plan, Evaluation, PlanConfig};
use eikplan_core::trainer::{EpochReport, TrainHook, Trainer};
use eikplan_core::{env::distance, Environment, FieldNet, PairDataset};
use serde::Serialize;

use crate::manifest::{RunManifest, Usage};

fn load_envs(m: &RunManifest) -> Result<Vec<Environment>> {
    m.env_files
        .iter()
        .map(|p| Environment::load(p).with_context(|| format!("loading environment {}", p.display())))
        .collect()
}

fn load_net(m: &RunManifest, env: &Environment) -> Result<FieldNet> {
    let path = m.require_checkpoint()?;
    let net = FieldNet::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    net.check_compatible(env)?;
    Ok(net)
}

fn plan_config(m: &RunManifest) -> PlanConfig {
    PlanConfig {
        beta: m.beta,
        d_goal: m.d_goal,
        ..PlanConfig::default()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "env".into())
}

fn coords(name: &str, v: &Option<Vec<f64>>, dims: usize) -> Result<Vec<f64>> {
    match v {
        None => bail!(Usage(format!("--{name} is required"))),
        Some(v) if v.len() != dims => {
            bail!(Usage(format!("--{name} has {} coordinates, expected {dims}", v.len())))
        }
        Some(v) => Ok(v.clone()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(m: &RunManifest) -> Result<()> {
    m.require_envs(false)?;
    let out = m.require_out()?.to_path_buf();
    m.check_inputs()?;
    let envs = load_envs(m)?;
    m.echo()?;
    for (env, path) in envs.iter().zip(&m.env_files) {
        let data = env
            .sample_pairs(m.pairs, m.seed.wrapping_add(u64::from(env.id())))
            .with_context(|| format!("sampling environment {}", env.id()))?;
        let file = out.join(format!("{}.pairs", stem(path)));
        data.save(&file)?;
        println!(
            "env {}: {} pairs, acceptance rate {:.4} -> {}",
            env.id(),
            data.len(),
            data.acceptance_rate,
            file.display()
        );
    }
    Ok(())
}

struct Logger {
    log: BufWriter<File>,
    checkpoint: PathBuf,
    every: usize,
}

impl TrainHook for Logger {
    fn epoch_done(&mut self, report: &EpochReport, net: &FieldNet) -> eikplan_core::Result<bool> {
        writeln!(self.log, "{}", serde_json::to_string(report)?)?;
        self.log.flush()?;
        if self.every > 0 && report.epoch % self.every == 0 {
            net.save(&self.checkpoint)?;
            eprintln!(
                "epoch {} alpha {:.4} loss {:.6} reshuffles {}",
                report.epoch, report.alpha, report.loss, report.reshuffle_count
            );
        }
        Ok(true)
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    final_alpha: f64,
    last: Option<&'a EpochReport>,
    seconds: f64,
    error: Option<String>,
}

pub fn train(m: &RunManifest) -> Result<()> {
    m.require_envs(false)?;
    let out = m.require_out()?.to_path_buf();
    if m.dataset_paths.len() != m.env_files.len() {
        bail!(Usage(format!(
            "got {} datasets for {} environments; pass one --dataset per --env",
            m.dataset_paths.len(),
            m.env_files.len()
        )));
    }
    m.check_inputs()?;
    m.train.validate().map_err(|e| Usage(e.to_string()))?;
    let envs = load_envs(m)?;
    let datasets = envs
        .iter()
        .zip(&m.dataset_paths)
        .map(|(env, p)| PairDataset::load(p, env.id()).with_context(|| format!("loading dataset {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let net = match &m.checkpoint_path {
        Some(p) => FieldNet::load(p)?,
        None => FieldNet::for_environment(&envs[0], m.hidden, m.blocks, m.seed)?,
    };
    m.echo()?;

    let ckpt = out.join("model.ckpt");
    let mut trainer = Trainer::new(net, &envs, &datasets, m.train.clone())?;
    let mut hook = Logger {
        log: BufWriter::new(File::create(out.join("train.jsonl"))?),
        checkpoint: ckpt.clone(),
        every: m.checkpoint_every,
    };
    let clock = Instant::now();
    let outcome = trainer.run(&mut hook);
    // on divergence the trainer holds the last accepted parameters
    trainer.net().save(&ckpt)?;
    let summary = TrainSummary {
        epochs: trainer.epochs_done(),
        final_alpha: trainer.net().trained_alpha,
        last: trainer.history().last(),
        seconds: clock.elapsed().as_secs_f64(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
    };
    write_json(&out.join("summary.json"), &summary)?;
    outcome?;
    match summary.last {
        Some(r) => println!(
            "trained {} epochs, alpha {:.4}, loss {:.6} -> {}",
            summary.epochs,
            r.alpha,
            r.loss,
            ckpt.display()
        ),
        None => println!("no epochs run -> {}", ckpt.display()),
    }
    Ok(())
}

pub fn plan_cmd(m: &RunManifest) -> Result<()> {
    m.require_envs(true)?;
    m.require_checkpoint()?;
    m.check_inputs()?;
    let env = Environment::load(&m.env_files[0])?;
    let net = load_net(m, &env)?;
    let qs = coords("start", &m.start, env.dims())?;
    let qg = coords("goal", &m.goal, env.dims())?;
    let path = plan(&net, &env, &qs, &qg, &plan_config(m))?;
    if let Some(dir) = m.echo()? {
        fs::write(dir.join("path.csv"), path.to_csv())?;
    }
    println!(
        "time {:.6} length {:.6} margin {:.6} success {}",
        path.plan_seconds, path.length, path.safe_margin, path.success
    );
    Ok(())
}

fn eval_csv(net: &Evaluation, fmm: Option<&Evaluation>) -> String {
    let Some(fmm) = fmm else {
        return net.to_csv();
    };
    let mut out = String::from("time,length,margin,success,fmm_time,fmm_length,fmm_margin,fmm_success\n");
    for (a, b) in net.records.iter().zip(&fmm.records) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            a.time,
            a.length,
            a.margin,
            u8::from(a.success),
            b.time,
            b.length,
            b.margin,
            u8::from(b.success)
        )
        .expect("string write");
    }
    out
}

fn print_summary(label: &str, e: &Evaluation) {
    let s = &e.summary;
    println!(
        "{label}: queries {} success {:.1}% time {:.6}±{:.6} length {:.4}±{:.4} margin {:.4}±{:.4}",
        s.queries, s.success_rate, s.time.mean, s.time.std, s.length.mean, s.length.std, s.margin.mean, s.margin.std
    );
}

pub fn eval(m: &RunManifest) -> Result<()> {
    m.require_envs(true)?;
    m.require_checkpoint()?;
    if m.dataset_paths.len() != 1 {
        bail!(Usage("eval takes exactly one --dataset".into()));
    }
    m.check_inputs()?;
    let env = Environment::load(&m.env_files[0])?;
    let net = load_net(m, &env)?;
    let data = PairDataset::load(&m.dataset_paths[0], env.id())?;
    let cfg = plan_config(m);
    let neural = evaluate(&net, &env, &data, &cfg)?;
    let fmm = if m.fmm {
        let grid = rasterize(&env, &m.resolution_for(env.dims())?, m.alpha.unwrap_or(1.0))?;
        Some(evaluate_fmm(&env, &data, &grid, &cfg)?)
    } else {
        None
    };
    if let Some(dir) = m.echo()? {
        fs::write(dir.join("metrics.csv"), eval_csv(&neural, fmm.as_ref()))?;
    }
    print_summary("neural", &neural);
    if let Some(f) = &fmm {
        print_summary("fmm", f);
    }
    Ok(())
}

pub fn field_export(m: &RunManifest) -> Result<()> {
    m.require_envs(true)?;
    let out = m.require_out()?.to_path_buf();
    if !m.fmm {
        m.require_checkpoint()?;
    }
    m.check_inputs()?;
    let env = Environment::load(&m.env_files[0])?;
    let res = m.resolution_for(env.dims())?;
    let source = coords("source", &m.source, env.dims())?;
    env.check(&source)?;
    let grid = rasterize(&env, &res, m.alpha.unwrap_or(1.0))?;
    let geom = &grid.geometry;
    let src_cell = geom.nearest_cell(&source)?;
    let src = geom.center(src_cell);
    let times = if m.fmm {
        fmm_solve(&grid, &src)?.times
    } else {
        let net = load_net(m, &env)?;
        let field = net.field(env.id())?;
        let cells: Vec<usize> = (0..geom.len()).filter(|&i| i != src_cell).collect();
        let mut qs = Vec::with_capacity(cells.len() * env.dims());
        let mut qg = Vec::with_capacity(cells.len() * env.dims());
        for &i in &cells {
            qs.extend_from_slice(&src);
            qg.extend(geom.center(i));
        }
        let taus = field.tau_batch(&qs, &qg)?;
        let mut times = vec![0.0; geom.len()];
        for (&i, tau) in cells.iter().zip(taus) {
            times[i] = distance(&src, &geom.center(i)) / tau;
        }
        times
    };
    m.echo()?;
    fs::write(out.join("field.csv"), grid_csv(geom, &times)?)?;
    fs::write(out.join("field.pgm"), grid_pgm(geom, &times)?)?;
    println!(
        "{} field from ({}) on {:?} -> {}",
        if m.fmm { "fmm" } else { "neural" },
        src.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", "),
        res,
        out.display()
    );
    Ok(())
}

pub fn compare(m: &RunManifest) -> Result<()> {
    m.require_envs(true)?;
    m.require_checkpoint()?;
    m.check_inputs()?;
    let env = Environment::load(&m.env_files[0])?;
    let net = load_net(m, &env)?;
    let cfg = CompareConfig {
        sources: m.sources,
        resolution: m.resolution_for(env.dims())?,
        seed: m.seed,
        alpha: m.alpha,
    };
    let report = fmm_compare(&net, &env, &cfg)?;
    if let Some(dir) = m.echo()? {
        write_json(&dir.join("compare.json"), &report)?;
    }
    print!("{}", report.table());
    Ok(())
}
