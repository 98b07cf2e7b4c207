//! The subcommands as library functions. Each takes a resolved
//! [`RunConfig`] and writes its artifacts under `config.output`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use leibenson_pinn::collocation::{assemble, time_grid_with, CollocationConfig};
use leibenson_pinn::error_metrics::{
    eps_sweep_error, error_table, write_table_csv, QuadratureRule, TableRow,
};
use leibenson_pinn::field::{Field, NetworkField};
use leibenson_pinn::mlp::{Checkpoint, Network};
use leibenson_pinn::problem::{make_problem, ProblemId, ProblemParams, ProblemSpec};
use leibenson_pinn::trainer::{train_with, write_history_csv, TrainReport};
use leibenson_pinn::Error;

use crate::config::RunConfig;
use crate::manifest::{RunManifest, Status};

pub const CHECKPOINT: &str = "checkpoint.txt";
pub const HISTORY: &str = "loss_history.csv";
pub const CONFIG: &str = "config.toml";
pub const ERROR_TABLE: &str = "error_table.csv";
pub const EPS_TABLE: &str = "eps_table.csv";
pub const POINTS: &str = "collocation.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub report: TrainReport,
    pub manifest: RunManifest,
}

/// Trains the configured problem and writes the checkpoint, the loss history
/// and the manifest.
///
/// On divergence the history up to the failing epoch is still written and
/// the manifest records the failure.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.output.clone();
    create_dir(&dir)?;
    let spec = cfg.problem_spec()?;
    let colloc = assemble(&spec, &cfg.collocation, cfg.train.seed)?;
    colloc.validate(&spec)?;
    let net_config = cfg.network_config(&spec);

    let mut manifest = RunManifest::start("train", cfg);
    std::fs::write(dir.join(CONFIG), cfg.to_toml())?;
    manifest.add_output(CONFIG);
    manifest.write(&dir)?;

    let checkpoint_of = |params: &leibenson_pinn::mlp::ParameterVector| -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(net_config.clone(), cfg.train.seed, params.clone())?;
        ck.metadata.insert("problem".into(), spec.id.to_string());
        ck.metadata
            .insert("problem_params".into(), serde_json::to_string(&cfg.problem.params())?);
        ck.metadata
            .insert("collocation".into(), serde_json::to_string(&cfg.collocation)?);
        Ok(ck)
    };

    let result = train_with(&spec, &colloc, &net_config, &cfg.train, |p| {
        if p.checkpoint {
            let ck = checkpoint_of(p.params).map_err(|e| Error::structural(format!("{e:#}")))?;
            ck.write(&dir.join(CHECKPOINT))?;
        }
        Ok(())
    });

    match result {
        Ok(report) => {
            checkpoint_of(&report.params)?.write(&dir.join(CHECKPOINT))?;
            report.write_history_csv(create(&dir.join(HISTORY))?)?;
            manifest.add_output(CHECKPOINT);
            manifest.add_output(HISTORY);
            manifest.config_hash = Some(report.config_hash.clone());
            manifest.finish(Status::Completed);
            manifest.write(&dir)?;
            Ok(TrainOutcome {
                dir,
                report,
                manifest,
            })
        }
        Err(Error::Diverged(d)) => {
            write_history_csv(&d.report.history, create(&dir.join(HISTORY))?)?;
            manifest.add_output(HISTORY);
            manifest.config_hash = Some(d.report.config_hash.clone());
            manifest.message = Some(d.to_string());
            manifest.finish(Status::Diverged);
            manifest.write(&dir)?;
            Err(Error::Diverged(d).into())
        }
        Err(e) => {
            manifest.message = Some(e.to_string());
            manifest.finish(Status::Failed);
            manifest.write(&dir)?;
            Err(e.into())
        }
    }
}

/// Trains again with the configuration recorded in a manifest, writing to
/// `output` instead of the recorded directory when given.
pub fn cmd_rerun(manifest: &Path, output: Option<&Path>) -> Result<TrainOutcome> {
    let m = RunManifest::read(manifest)?;
    let mut cfg = m.config;
    if let Some(out) = output {
        cfg.output = out.to_path_buf();
    }
    cmd_train(&cfg)
}

/// A checkpoint together with the problem and collocation it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub network: Network,
    pub spec: ProblemSpec,
    pub collocation: CollocationConfig,
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let checkpoint =
            Checkpoint::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let meta = |k: &str| {
            checkpoint
                .metadata
                .get(k)
                .with_context(|| format!("checkpoint {} lacks `meta.{k}`", path.display()))
        };
        let id: ProblemId = meta("problem")?.parse()?;
        let params: ProblemParams = serde_json::from_str(meta("problem_params")?)?;
        let collocation: CollocationConfig = serde_json::from_str(meta("collocation")?)?;
        let spec = make_problem(id, &params)?;
        let network = checkpoint.config.build()?;
        if network.input_dim() != spec.input_dim() {
            bail!(
                "checkpoint {} has {} inputs but {} needs {}",
                path.display(),
                network.input_dim(),
                id,
                spec.input_dim()
            );
        }
        Ok(Self {
            checkpoint,
            network,
            spec,
            collocation,
        })
    }

    pub fn field(&self) -> NetworkField<'_> {
        NetworkField {
            net: &self.network,
            params: &self.checkpoint.params,
        }
    }

    /// The time grid the model was trained on.
    pub fn time_grid(&self) -> Vec<f64> {
        let (t1, t2) = self.spec.window;
        time_grid_with(t1, t2, self.collocation.time, self.collocation.long_horizon_rule)
    }
}

fn rule_for(spec: &ProblemSpec, cfg: &RunConfig) -> QuadratureRule {
    match cfg.metrics.refinement {
        Some(r) => QuadratureRule::for_domain(&spec.domain, r),
        None => QuadratureRule::default_for(&spec.domain),
    }
}

/// Which table a set of checkpoints produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Rows keyed by final time.
    FinalTime,
    /// Rows keyed by regularization parameter.
    Epsilon,
}

impl TableKind {
    pub fn key(self) -> &'static str {
        match self {
            TableKind::FinalTime => "T",
            TableKind::Epsilon => "eps",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            TableKind::FinalTime => ERROR_TABLE,
            TableKind::Epsilon => EPS_TABLE,
        }
    }
}

/// Error rows for already loaded models.
///
/// Models trained on P1_regularized give one row per model keyed by eps and
/// must share a cylinder. Any other problem takes exactly one model and gives
/// one row per final time in `times` (the end of the window when empty).
pub fn error_rows(
    models: &[(&ProblemSpec, &dyn Field, Vec<f64>)],
    times: &[f64],
    cfg: &RunConfig,
) -> Result<(TableKind, Vec<TableRow>)> {
    let Some((first, _, grid)) = models.first() else {
        bail!("no checkpoints given");
    };
    if first.id == ProblemId::P1Regularized {
        for (s, _, _) in models {
            if s.id != ProblemId::P1Regularized || s.window != first.window || s.domain != first.domain {
                bail!(
                    "incompatible checkpoints: {} on {:?} x {:?} cannot share a table with {} on {:?} x {:?}",
                    s.id,
                    s.domain,
                    s.window,
                    first.id,
                    first.domain,
                    first.window
                );
            }
        }
        let rule = rule_for(first, cfg);
        let pairs: Vec<(f64, &dyn Field)> = models.iter().map(|(s, f, _)| (s.eps, *f)).collect();
        let rows = eps_sweep_error(&pairs, first, grid, &rule)?;
        return Ok((TableKind::Epsilon, rows));
    }
    if models.len() != 1 {
        bail!("a {} error table takes one checkpoint, got {}", first.id, models.len());
    }
    let (spec, field, grid) = &models[0];
    let finals = if times.is_empty() {
        vec![spec.window.1]
    } else {
        times.to_vec()
    };
    let rule = rule_for(spec, cfg);
    Ok((TableKind::FinalTime, error_table(*field, spec, grid, &finals, &rule)?))
}

/// Loads checkpoints, computes their error table and writes it to
/// `config.output`. `expect` is the problem the caller's configuration
/// names, if it names one.
pub fn cmd_error_table(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    times: &[f64],
    expect: Option<ProblemId>,
) -> Result<PathBuf> {
    let models = checkpoints
        .iter()
        .map(|p| TrainedModel::load(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(id) = expect {
        for (m, p) in models.iter().zip(checkpoints) {
            if m.spec.id != id {
                bail!(
                    "incompatible checkpoint {}: trained on {}, configuration names {}",
                    p.display(),
                    m.spec.id,
                    id
                );
            }
        }
    }
    let fields: Vec<NetworkField<'_>> = models.iter().map(TrainedModel::field).collect();
    let entries: Vec<(&ProblemSpec, &dyn Field, Vec<f64>)> = models
        .iter()
        .zip(&fields)
        .map(|(m, f)| (&m.spec, f as &dyn Field, m.time_grid()))
        .collect();
    let times = if times.is_empty() { &cfg.metrics.times[..] } else { times };
    let (kind, rows) = error_rows(&entries, times, cfg)?;
    create_dir(&cfg.output)?;
    let path = cfg.output.join(kind.file_name());
    let mut w = create(&path)?;
    write_table_csv(kind.key(), &rows, &mut w)?;
    w.flush()?;
    Ok(path)
}

/// Trains P1_regularized once per eps with a shared seed, each run in its
/// own subdirectory, then writes the eps table.
pub fn cmd_eps_sweep(cfg: &RunConfig, epsilons: &[f64]) -> Result<PathBuf> {
    let epsilons = if epsilons.is_empty() { &cfg.metrics.epsilons[..] } else { epsilons };
    if epsilons.is_empty() {
        bail!(Error::config("metrics.epsilons", "need at least one value"));
    }
    let mut checkpoints = Vec::new();
    for &eps in epsilons {
        let mut sub = cfg.clone();
        sub.problem.id = ProblemId::P1Regularized;
        sub.problem.eps = Some(eps);
        sub.problem.alpha = None;
        sub.output = cfg.output.join(format!("eps_{eps:e}"));
        let run = cmd_train(&sub).with_context(|| format!("training with eps = {eps:e}"))?;
        checkpoints.push(run.dir.join(CHECKPOINT));
    }
    cmd_error_table(cfg, &checkpoints, &[], None)
}

/// Header of a field export for an `n`-dimensional problem.
pub fn field_header(n: usize) -> String {
    let names = ["x", "y", "z"];
    format!("{},u_hat,u_exact,abs_err,inside", names[..n].join(","))
}

/// Writes `model` and the exact solution on a `grid^n` lattice over the
/// bounding box of the domain at time `t`. `inside` is 1 on the closed
/// domain and 0 elsewhere.
pub fn write_field_csv<W: Write>(
    model: &dyn Field,
    spec: &ProblemSpec,
    t: f64,
    grid: usize,
    mut w: W,
) -> Result<usize> {
    let n = spec.dim();
    let h = spec.domain.extent();
    let coord = |i: usize| {
        if i + 1 == grid {
            h
        } else {
            -h + 2.0 * h * i as f64 / (grid - 1) as f64
        }
    };
    let total = grid.pow(n as u32);
    let mut z = Vec::with_capacity(total * (n + 1));
    for k in 0..total {
        let mut rest = k;
        let mut x = vec![0.0; n];
        for slot in x.iter_mut().rev() {
            *slot = coord(rest % grid);
            rest /= grid;
        }
        z.extend_from_slice(&x);
        z.push(t);
    }
    let mut u = vec![0.0; total];
    model.values(&z, &mut u);

    writeln!(w, "{}", field_header(n))?;
    for (p, uh) in z.chunks_exact(n + 1).zip(&u) {
        let x = &p[..n];
        let exact = spec.exact(x, t).unwrap_or(f64::NAN);
        for v in x {
            write!(w, "{v},")?;
        }
        writeln!(
            w,
            "{uh:e},{exact:e},{:e},{}",
            (uh - exact).abs(),
            u8::from(spec.domain.contains_closed(x, 1e-12 * h))
        )?;
    }
    w.flush()?;
    Ok(total)
}

/// Exports a trained model at each time in `times` (both ends of the window
/// when empty) to `field_t<t>.csv`.
pub fn cmd_export_field(
    cfg: &RunConfig,
    checkpoint: &Path,
    times: &[f64],
    grid: usize,
) -> Result<Vec<PathBuf>> {
    if grid < 2 {
        bail!(Error::config("export.grid", "need at least 2 points per axis"));
    }
    let model = TrainedModel::load(checkpoint)?;
    let times = if times.is_empty() {
        vec![model.spec.window.0, model.spec.window.1]
    } else {
        times.to_vec()
    };
    create_dir(&cfg.output)?;
    let field = model.field();
    times
        .iter()
        .map(|&t| {
            let path = cfg.output.join(format!("field_t{t}.csv"));
            write_field_csv(&field, &model.spec, t, grid, create(&path)?)?;
            Ok(path)
        })
        .collect()
}

/// Writes the collocation set of the configured problem and seed.
pub fn cmd_export_points(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let spec = cfg.problem_spec()?;
    let set = assemble(&spec, &cfg.collocation, cfg.train.seed)?;
    set.validate(&spec)?;
    create_dir(&cfg.output)?;
    let path = cfg.output.join(POINTS);
    let mut w = create(&path)?;
    set.write_csv(&mut w)?;
    w.flush()?;
    Ok(path)
}
