mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use robust_reach::controller::{FilterPolicy, SafetyController};
use robust_reach::dynamics::{ControlAffine, Dubins3d, PerturbedDubins3d, TruthAsUncertain, UncertainModel};
use robust_reach::ensemble::{
    conformal_bounds, tabulate_model, train_ensemble, ConformalModel, Dataset, Ensemble, SpreadModel, Split,
};
use robust_reach::experiments::{self, fnv_hex, sample_rows, SafeSetReport};
use robust_reach::grid::{Grid, ScalarField};
use robust_reach::hamiltonian::{partial_game_bounds, PartialGame};
use robust_reach::io;
use robust_reach::render;
use robust_reach::sim::{rollout, RolloutOptions};
use robust_reach::solver::{safe_set, solve, ModelTable, SolveConfig};

use config::{Config, ConfigError, SchemaError};

#[derive(Parser)]
#[command(name = "robust-reach", version, about = "Robust reachability for learned control-affine dynamics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set bounds.alpha=2.0`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to `output_dir` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum System {
    Pendulum,
    Dubins,
}

impl System {
    fn name(self) -> &'static str {
        match self {
            System::Pendulum => "pendulum",
            System::Dubins => "dubins",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Truth,
    Ours,
    Mean,
    Conformal,
    Partial,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Truth => "truth",
            MethodArg::Ours => "ours",
            MethodArg::Mean => "mean",
            MethodArg::Conformal => "conformal",
            MethodArg::Partial => "partial",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Calibration,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Calibration => Split::Calibration,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample `(x, u, ẋ)` rows from random-control rollouts of the true system.
    GenData {
        #[arg(long, value_enum, default_value = "pendulum")]
        system: System,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Row count; defaults to the configured training size.
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Train an ensemble on a dataset CSV.
    Train {
        #[arg(long, value_enum, default_value = "pendulum")]
        system: System,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Solve for a value function and its safe set.
    Solve {
        #[arg(long, value_enum, default_value = "pendulum")]
        system: System,
        #[arg(long, value_enum, default_value = "truth")]
        method: MethodArg,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Calibration CSV for the conformal method.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Seconds; `inf` iterates to convergence.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Roll the true system out under a solved safety controller or filter.
    Rollout {
        #[arg(long, value_enum, default_value = "pendulum")]
        system: System,
        #[arg(long, value_enum, default_value = "truth")]
        method: MethodArg,
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Comma-separated initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        duration: Option<f64>,
        /// Wrap a zero nominal controller in the least-restrictive filter.
        #[arg(long)]
        filter: bool,
    },
    /// Ground truth plus every method for each seed at one training size.
    StudyPendulum {
        #[arg(long = "M")]
        m: Option<usize>,
        /// Use seeds `0..n` instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Percent recovered per method over training sizes.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Analytic versus learned Dubins filter from a common initial state.
    DemoFilter,
    /// SVG contours of `V = 0` and the failure boundary on 2-D slices.
    Render {
        #[arg(long, value_enum, default_value = "pendulum")]
        system: System,
        #[arg(long)]
        value: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
        dims: Vec<usize>,
        /// Full coordinate of a slice (entries for the plotted dims are ignored);
        /// repeatable.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
        at: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code, extra) = classify(&e);
            let mut body = json!({ "error": kind, "message": format!("{e:#}") });
            if let Some(keys) = extra {
                body["keys"] = keys;
            }
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8, Option<serde_json::Value>) {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SchemaError>() {
            return ("schema", 2, Some(json!(s.keys)));
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ("config", 2, None);
        }
        if let Some(c) = cause.downcast_ref::<robust_reach::Error>() {
            return (c.kind(), 1, None);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 1, None);
        }
    }
    ("usage", 1, None)
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        io::write_atomic(&p, bytes)?;
        Ok(p)
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        self.write(name, format!("{}\n", serde_json::to_string_pretty(value)?).as_bytes())
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if g.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = Config::load(g.config.as_deref(), &g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let ctx = Ctx { cfg, out };
    ctx.write("config.resolved.toml", ctx.cfg.to_toml().as_bytes())?;
    match cli.command {
        Command::GenData { system, split, rows } => gen_data(&ctx, system, split.into(), rows),
        Command::Train {
            system,
            data,
            validation,
        } => train(&ctx, system, data, validation),
        Command::Solve {
            system,
            method,
            model,
            calibration,
            horizon,
        } => solve_cmd(&ctx, system, method, model, calibration, horizon),
        Command::Rollout {
            system,
            method,
            value,
            model,
            calibration,
            x0,
            duration,
            filter,
        } => rollout_cmd(&ctx, system, method, value, model, calibration, x0, duration, filter),
        Command::StudyPendulum { m, seeds } => study(&ctx, m, seeds),
        Command::Ablate { sizes, seeds } => ablate(&ctx, sizes, seeds),
        Command::DemoFilter => demo(&ctx),
        Command::Render { system, value, dims, at } => render_cmd(&ctx, system, &value, &dims, &at),
    }
}

fn seeds_from(cfg: &Config, n: Option<u64>) -> Vec<u64> {
    match n {
        Some(n) => (0..n).collect(),
        None => cfg.study.seeds.clone(),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: expected {}", path.display());
    }
    Ok(())
}

fn gen_data(ctx: &Ctx, system: System, split: Split, rows: Option<usize>) -> Result<()> {
    let seed = ctx.cfg.seed.wrapping_mul(31).wrapping_add(split as u64);
    let (data, name) = match system {
        System::Pendulum => {
            let s = ctx.cfg.pendulum_setup();
            let sampling = if split == Split::Calibration {
                &s.calibration_sampling
            } else {
                &s.train_sampling
            };
            let rows = rows.unwrap_or(match split {
                Split::Calibration => s.calibration_rows,
                Split::Validation => s.validation_rows,
                _ => ctx.cfg.pendulum.train_rows,
            });
            (sample_rows(&s.truth()?, &s.controls()?, sampling, &s.grid()?, rows, seed, split)?, "pendulum")
        }
        System::Dubins => {
            let s = ctx.cfg.dubins_setup()?;
            let rows = rows.unwrap_or(s.train_rows);
            (sample_rows(&s.truth()?, &s.controls()?, &s.sampling, &s.grid()?, rows, seed, split)?, "dubins")
        }
    };
    let path = ctx.path(&format!("{name}_{}.csv", split.name()));
    data.write_csv(&path)?;
    println!("{}", json!({ "rows": data.len(), "path": path }));
    Ok(())
}

fn train(ctx: &Ctx, system: System, data: Option<PathBuf>, validation: Option<PathBuf>) -> Result<()> {
    let name = system.name();
    let data = data.unwrap_or_else(|| ctx.path(&format!("{name}_train.csv")));
    require(&data, "training data")?;
    let train = Dataset::read_csv(&data, Split::Train)?;
    let val = match validation {
        Some(p) => {
            require(&p, "validation data")?;
            Some(Dataset::read_csv(&p, Split::Validation)?)
        }
        None => None,
    };
    let outcome = train_ensemble(&train, val.as_ref(), &ctx.cfg.train_config())?;
    let model_path = ctx.path(&format!("{name}_model.bin"));
    io::save_ensemble(&model_path, &outcome.ensemble)?;
    let mut rows = Vec::new();
    for (k, r) in outcome.reports.iter().enumerate() {
        for (e, loss) in r.train_loss.iter().enumerate() {
            let v = r.validation_loss.get(e).map_or(String::new(), |v| format!("{v:?}"));
            rows.push(vec![k.to_string(), e.to_string(), format!("{loss:?}"), v]);
        }
    }
    io::write_table(
        &ctx.path(&format!("{name}_train_log.csv")),
        &["member", "epoch", "train_loss", "validation_loss"],
        &rows,
    )?;
    let finals: Vec<_> = outcome
        .reports
        .iter()
        .map(|r| json!({ "train": r.final_train(), "validation": r.final_validation() }))
        .collect();
    println!("{}", json!({ "model": model_path, "members": finals }));
    Ok(())
}

/// Failure field, model and default horizon for a system/method pair.
struct Problem {
    grid: Grid,
    l: ScalarField,
    model: Box<dyn UncertainModel>,
    /// Spread model for the methods that tabulate through one batched pass.
    spread: Option<SpreadModel>,
    horizon: f64,
}

fn load_model(ctx: &Ctx, system: System, model: Option<PathBuf>) -> Result<Arc<Ensemble>> {
    let path = model.unwrap_or_else(|| ctx.path(&format!("{}_model.bin", system.name())));
    require(&path, "trained model")?;
    Ok(Arc::new(io::load_ensemble(&path)?))
}

fn problem(
    ctx: &Ctx,
    system: System,
    method: MethodArg,
    model: Option<PathBuf>,
    calibration: Option<PathBuf>,
) -> Result<Problem> {
    let (grid, l, controls, horizon, truth): (Grid, ScalarField, _, f64, Box<dyn UncertainModel>) = match system {
        System::Pendulum => {
            let s = ctx.cfg.pendulum_setup();
            let grid = s.grid()?;
            let truth = TruthAsUncertain::new(s.truth()?, s.controls()?)?;
            (grid.clone(), s.failure_field(&grid)?, s.controls()?, s.horizon, Box::new(truth))
        }
        System::Dubins => {
            let s = ctx.cfg.dubins_setup()?;
            let grid = s.grid()?;
            // The analytic Dubins model is the nominal planner model, not the
            // perturbed truth.
            let nominal = TruthAsUncertain::new(Dubins3d::new(s.speed)?, s.controls()?)?;
            (grid.clone(), s.failure_field(&grid)?, s.controls()?, f64::INFINITY, Box::new(nominal))
        }
    };
    let b = &ctx.cfg.bounds;
    let mut spread = None;
    let model: Box<dyn UncertainModel> = match method {
        MethodArg::Truth => truth,
        MethodArg::Ours | MethodArg::Mean | MethodArg::Partial => {
            let (alpha, gamma) = if method == MethodArg::Mean { (0.0, 0.0) } else { (b.alpha, b.gamma) };
            let m = SpreadModel::new(load_model(ctx, system, model)?, controls, alpha, gamma)?;
            spread = Some(m.clone());
            if method == MethodArg::Partial {
                Box::new(PartialGame::new(m))
            } else {
                Box::new(m)
            }
        }
        MethodArg::Conformal => {
            let e = load_model(ctx, system, model)?;
            let cal = calibration.unwrap_or_else(|| ctx.path(&format!("{}_calibration.csv", system.name())));
            require(&cal, "calibration data")?;
            let bound = conformal_bounds(&e, &Dataset::read_csv(&cal, Split::Calibration)?, b.coverage)?;
            Box::new(ConformalModel::new(e, controls, bound)?)
        }
    };
    Ok(Problem {
        grid,
        l,
        model,
        spread,
        horizon,
    })
}

fn tabulate(p: &Problem, method: MethodArg) -> Result<ModelTable> {
    let Some(spread) = &p.spread else {
        return Ok(ModelTable::tabulate(&p.model, &p.grid)?);
    };
    let table = tabulate_model(spread, &p.grid)?;
    Ok(match method {
        MethodArg::Partial => table.map_bounds(partial_game_bounds)?,
        _ => table,
    })
}

fn solve_cmd(
    ctx: &Ctx,
    system: System,
    method: MethodArg,
    model: Option<PathBuf>,
    calibration: Option<PathBuf>,
    horizon: Option<f64>,
) -> Result<()> {
    let p = problem(ctx, system, method, model, calibration)?;
    let table = tabulate(&p, method)?;
    let cfg = SolveConfig {
        horizon: horizon.unwrap_or(p.horizon),
        cfl: ctx.cfg.solver.cfl,
        convergence_tol: ctx.cfg.solver.convergence_tol,
        max_steps: ctx.cfg.solver.max_steps,
        snapshot_times: Vec::new(),
    };
    let result = solve(&p.l, &table, &cfg)?;
    let stem = format!("{}_{}", system.name(), method.name());
    let value_path = ctx.path(&format!("{stem}_value.rrf"));
    io::save_field(&value_path, &result.value.field, result.value.tau)?;
    let set = safe_set(&result.value.field, 0.0);
    let mask = ScalarField::new(p.grid.clone(), set.mask.iter().map(|m| *m as u8 as f64).collect())?;
    io::save_field(&ctx.path(&format!("{stem}_safe_set.rrf")), &mask, result.value.tau)?;
    io::write_step_log(&ctx.path(&format!("{stem}_steps.csv")), &result.log)?;
    let summary = json!({
        "system": system.name(),
        "method": method.name(),
        "tau": result.value.tau,
        "steps": result.log.len(),
        "converged": result.converged,
        "volume_fraction": set.volume_fraction,
        "value": value_path,
    });
    ctx.write_json(&format!("{stem}_summary.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rollout_cmd(
    ctx: &Ctx,
    system: System,
    method: MethodArg,
    value: Option<PathBuf>,
    model: Option<PathBuf>,
    calibration: Option<PathBuf>,
    x0: Vec<f64>,
    duration: Option<f64>,
    filter: bool,
) -> Result<()> {
    let stem = format!("{}_{}", system.name(), method.name());
    let value = value.unwrap_or_else(|| ctx.path(&format!("{stem}_value.rrf")));
    require(&value, "value field (run `solve` first)")?;
    let v = io::load_field(&value)?;
    let p = problem(ctx, system, method, model, calibration)?;
    if v.field.grid() != &p.grid {
        bail!("value field grid does not match the configured {} grid", system.name());
    }
    let (truth, failure, default_x0, default_duration): (Box<dyn ControlAffine>, Box<dyn Fn(&[f64]) -> bool>, Vec<f64>, f64) =
        match system {
            System::Pendulum => {
                let s = ctx.cfg.pendulum_setup();
                let angle = s.failure_angle;
                (Box::new(s.truth()?), Box::new(move |x: &[f64]| x[0].abs() > angle), vec![0.0, 0.0], s.horizon)
            }
            System::Dubins => {
                let s = ctx.cfg.dubins_setup()?;
                let truth: PerturbedDubins3d = s.truth()?;
                let hw = s.half_width;
                (
                    Box::new(truth),
                    Box::new(move |x: &[f64]| x[0].abs() > hw || x[1].abs() > hw),
                    s.x0.clone(),
                    s.duration,
                )
            }
        };
    let x0 = if x0.is_empty() { default_x0 } else { x0 };
    if x0.len() != p.grid.ndim() {
        bail!("x0 needs {} coordinates", p.grid.ndim());
    }
    let controller = SafetyController::stationary(&v, p.model)?;
    let epsilon = ctx.cfg.epsilon()?.unwrap_or_else(|| controller.default_epsilon());
    let nu = controller.model().control_dim();
    let policy = FilterPolicy::new(&controller, move |_, _: &[f64]| vec![0.0; nu], epsilon)?;
    let dt = ctx.cfg.sim.dt;
    let opts = RolloutOptions {
        dt,
        steps: (duration.unwrap_or(default_duration) / dt).round() as usize,
        stop_at_failure: false,
    };
    let traj = rollout(
        &truth,
        |t, x| {
            if filter {
                policy.filtered_control(t, x)
            } else {
                Ok((controller.safety_control(t, x)?, true))
            }
        },
        &x0,
        opts,
        |x| failure(x),
    );
    let path = ctx.path(&format!("{stem}_trajectory.csv"));
    io::write_trajectory_csv(&path, &traj)?;
    let summary = json!({
        "trajectory": path,
        "steps": traj.controls.len(),
        "exited_failure": traj.exited_failure(),
        "first_failure": traj.first_failure,
        "truncated": traj.truncated,
        "interventions": traj.intervened.iter().filter(|b| **b).count(),
        "epsilon": epsilon,
    });
    ctx.write_json(&format!("{stem}_rollout.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

fn report_json(r: &SafeSetReport) -> serde_json::Value {
    json!({
        "method": r.method.name(),
        "seed": r.seed,
        "train_rows": r.train_rows,
        "volume_fraction": r.volume_fraction,
        "recovered": r.recovered,
        "violation": r.violation,
        "fingerprint": r.fingerprint,
    })
}

fn report_rows(reports: &[SafeSetReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.method.name().to_string(),
                r.seed.to_string(),
                r.train_rows.to_string(),
                format!("{:?}", r.volume_fraction),
                format!("{:?}", r.recovered),
                format!("{:?}", r.violation),
                r.fingerprint.clone(),
            ]
        })
        .collect()
}

const REPORT_HEADER: [&str; 7] = ["method", "seed", "train_rows", "volume_fraction", "recovered", "violation", "fingerprint"];

fn study(ctx: &Ctx, m: Option<usize>, seeds: Option<u64>) -> Result<()> {
    let setup = ctx.cfg.pendulum_setup();
    let m = m.unwrap_or(ctx.cfg.pendulum.train_rows);
    let seeds = seeds_from(&ctx.cfg, seeds);
    let outcome = experiments::pendulum_study(&setup, m, &seeds)?;
    io::write_table(&ctx.path("reports.csv"), &REPORT_HEADER, &report_rows(&outcome.reports))?;
    ctx.write_json(
        "reports.json",
        &json!({
            "train_rows": m,
            "seeds": seeds,
            "config_fingerprint": fnv_hex(ctx.cfg.to_toml().as_bytes()),
            "reports": outcome.reports.iter().map(report_json).collect::<Vec<_>>(),
        }),
    )?;
    let gt = &outcome.ground_truth.value;
    io::save_field(&ctx.path("fields/ground_truth.rrf"), &gt.field, gt.tau)?;
    for (learned, solves) in &outcome.per_seed {
        io::save_ensemble(&ctx.path(&format!("models/seed{}.bin", learned.seed)), &learned.ensemble)?;
        for (method, r) in &solves.solves {
            io::save_field(
                &ctx.path(&format!("fields/seed{}_{}.rrf", learned.seed, method.name())),
                &r.value.field,
                r.value.tau,
            )?;
        }
    }
    for r in &outcome.reports {
        println!("{}", report_json(r));
    }
    Ok(())
}

fn ablate(ctx: &Ctx, sizes: Vec<usize>, seeds: Option<u64>) -> Result<()> {
    let setup = ctx.cfg.pendulum_setup();
    let sizes = if sizes.is_empty() { ctx.cfg.study.ablation_sizes.clone() } else { sizes };
    let seeds = seeds_from(&ctx.cfg, seeds);
    let (rows, reports) = experiments::ablation(&setup, &sizes, &seeds)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.train_rows.to_string(),
                r.method.name().to_string(),
                format!("{:?}", r.mean_recovered),
                r.per_seed.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";"),
            ]
        })
        .collect();
    io::write_table(&ctx.path("ablation.csv"), &["train_rows", "method", "mean_recovered", "per_seed"], &table)?;
    io::write_table(&ctx.path("ablation_reports.csv"), &REPORT_HEADER, &report_rows(&reports))?;
    for r in &rows {
        println!(
            "{}",
            json!({ "train_rows": r.train_rows, "method": r.method.name(), "mean_recovered": r.mean_recovered })
        );
    }
    Ok(())
}

fn demo(ctx: &Ctx) -> Result<()> {
    let setup = ctx.cfg.dubins_setup()?;
    let d = experiments::filtering_demo(&setup, ctx.cfg.seed)?;
    io::write_trajectory_csv(&ctx.path("demo_analytic_trajectory.csv"), &d.analytic.trajectory)?;
    io::write_trajectory_csv(&ctx.path("demo_learned_trajectory.csv"), &d.learned.trajectory)?;
    io::save_field(&ctx.path("dubins_analytic_value.rrf"), &d.analytic_solve.value.field, d.analytic_solve.value.tau)?;
    io::save_field(&ctx.path("dubins_learned_value.rrf"), &d.learned_solve.value.field, d.learned_solve.value.tau)?;
    io::save_ensemble(&ctx.path("dubins_model.bin"), &d.ensemble)?;
    let run = |r: &experiments::FilterRun| {
        json!({
            "exited": r.exited,
            "first_exit": r.trajectory.first_failure,
            "min_margin": r.min_margin,
            "mean_intervention_margin": r.mean_intervention_margin,
            "safe_fraction": r.safe_fraction,
            "converged": r.converged,
            "epsilon": r.epsilon,
        })
    };
    let summary = json!({ "x0": d.x0, "analytic": run(&d.analytic), "learned": run(&d.learned) });
    ctx.write_json("demo.json", &summary)?;
    println!("{summary}");
    Ok(())
}

fn render_cmd(ctx: &Ctx, system: System, value: &Path, dims: &[usize], at: &[String]) -> Result<()> {
    require(value, "value field")?;
    let v = io::load_field(value)?;
    let grid = v.field.grid().clone();
    let l = match system {
        System::Pendulum => ctx.cfg.pendulum_setup().failure_field(&grid)?,
        System::Dubins => ctx.cfg.dubins_setup()?.failure_field(&grid)?,
    };
    let [a, b] = dims else {
        bail!("--dims takes exactly two dimensions");
    };
    let mut points: Vec<Vec<f64>> = at
        .iter()
        .map(|s| {
            s.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("bad --at coordinate `{t}`: {e}")))
                .collect()
        })
        .collect::<Result<_>>()?;
    if points.is_empty() {
        points = default_slices(&grid, (*a, *b));
    }
    let prefix = value.file_stem().and_then(|s| s.to_str()).unwrap_or("value");
    let mut written = Vec::new();
    for p in points {
        let vs = render::slice_2d(&v.field, (*a, *b), &p)?;
        let ls = render::slice_2d(&l, (*a, *b), &p)?;
        let name = render::slice_file_name(prefix, &vs);
        let title = format!("{prefix} at tau = {:.3}", v.tau);
        written.push(ctx.write(&name, render::render_svg(&vs, &ls, &title).as_bytes())?);
    }
    println!("{}", json!({ "svg": written }));
    Ok(())
}

/// Four evenly spaced node slices along every dimension that is not plotted.
fn default_slices(grid: &Grid, dims: (usize, usize)) -> Vec<Vec<f64>> {
    let free: Vec<usize> = (0..grid.ndim()).filter(|d| *d != dims.0 && *d != dims.1).collect();
    let base: Vec<f64> = (0..grid.ndim()).map(|d| grid.axis_coord(d, grid.counts()[d] / 2)).collect();
    if free.is_empty() {
        return vec![base];
    }
    let d = free[0];
    let n = grid.counts()[d];
    (0..4)
        .map(|k| {
            let mut p = base.clone();
            p[d] = grid.axis_coord(d, k * n / 4);
            p
        })
        .collect()
}
