//! `pdeq`: stencils, kernel synthesis, equivariance checks, training and
//! evaluation of PDO-based equivariant networks.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a check did not
//! meet its threshold.

mod data;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use pdeq::data_io::rotate_dataset;
use pdeq::equiv::{exact_grid_check, groupconv_study, lifting_study, AnalyticField, CheckTarget, EquivarianceReport};
use pdeq::kernels::{canonical_filter, init_beta, KERNEL_SIZE};
use pdeq::tensor_ops::{evaluate, metrics_csv, train, Arch, OptimizerKind};
use pdeq::{
    all_stencils, canonical_poly, synthesize_kernel, Group2D, GroupConvBank, GroupSpec, LiftingBank, Model, ModelConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use data::{DataArgs, EVAL_SEED_OFFSET};

/// `println!` that ends the process quietly when stdout is a closed pipe.
macro_rules! outln {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))
    };
}

fn emit(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_fmt(args).and_then(|_| out.write_all(b"\n")) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("writing to stdout: {e}");
    }
}

/// Threshold for lattice-exact equivariance.
const EXACT_TOL: f64 = 1e-10;
/// Minimum fitted order for convergence studies.
const MIN_ORDER: f64 = 1.7;

#[derive(Parser)]
#[command(name = "pdeq", version, about = "Equivariant convolutions from partial differential operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the finite-difference stencils.
    Stencils {
        /// Print every mask as exact rationals.
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        json: bool,
    },
    /// Synthesize the steered kernels of one randomly initialized filter.
    Kernels {
        #[arg(long, default_value = "p4")]
        group: GroupSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mesh size used for the masks.
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        /// Print the 5×5 mask of every group element.
        #[arg(long)]
        dump: bool,
        /// Print the steered operator polynomial of every group element.
        #[arg(long)]
        dump_polys: bool,
        #[arg(long)]
        json: bool,
    },
    /// Measure layer equivariance under one group element.
    CheckEquivariance(CheckArgs),
    /// Train a model and write a checkpoint plus a CSV metrics log.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Also report accuracy with every test image rotated by a random angle.
        #[arg(long)]
        rotate_test: bool,
        /// Seed for synthetic data and test rotations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckMode {
    /// Exact check for grid symmetries, convergence study otherwise.
    Auto,
    Exact,
    Convergence,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayerChoice {
    Lifting,
    Groupconv,
    Both,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    group: GroupSpec,
    /// Element label: `e`, `r{k}`, `r{k}m`, `m`.
    #[arg(long)]
    element: String,
    /// Grid sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = CheckMode::Auto)]
    mode: CheckMode,
    #[arg(long, value_enum, default_value_t = LayerChoice::Both)]
    layer: LayerChoice,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, default_value = "p4")]
    group: GroupSpec,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path (defaults to the checkpoint path with a `.csv` extension).
    #[arg(long)]
    log: Option<PathBuf>,
    /// `pdo` or `cnn`.
    #[arg(long, default_value = "pdo")]
    arch: Arch,
    /// Number of classes for synthetic data.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Feature widths, comma separated (architecture default if omitted).
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `adam` or `sgd`.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stencils { dump, json } => stencils(dump, json),
        Command::Kernels { group, seed, h, dump, dump_polys, json } => kernels(group, seed, h, dump, dump_polys, json),
        Command::CheckEquivariance(args) => check_equivariance(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Eval { ckpt, data, rotate_test, seed, json } => eval_cmd(&ckpt, &data, rotate_test, seed, json),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_json(v: &Value) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn stencils(dump: bool, json: bool) -> Result<bool> {
    let all = all_stencils();
    if json {
        let list: Vec<Value> = all
            .iter()
            .map(|s| {
                let size = s.size();
                let rows: Vec<Vec<String>> = (0..size)
                    .map(|p| {
                        (0..size)
                            .map(|q| match s.rational(p, q) {
                                (n, 1) => n.to_string(),
                                (n, d) => format!("{n}/{d}"),
                            })
                            .collect()
                    })
                    .collect();
                json!({ "name": s.name(), "deriv": s.deriv(), "size": size, "mesh_power": s.mesh_power(), "mask": rows })
            })
            .collect();
        print_json(&json!({ "stencils": list }))?;
        return Ok(true);
    }
    for s in &all {
        outln!("{} ({}×{}, h^-{})", s.name(), s.size(), s.size(), s.mesh_power());
        if dump {
            outln!("{}\n", s.to_rational_string());
        }
    }
    Ok(true)
}

fn format_mask(mask: &[f64]) -> String {
    mask.chunks(KERNEL_SIZE)
        .map(|row| row.iter().map(|v| format!("{v:>11.4e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn kernels(spec: GroupSpec, seed: u64, h: f64, dump: bool, dump_polys: bool, json: bool) -> Result<bool> {
    if !(h > 0.0 && h.is_finite()) {
        bail!("mesh size must be positive, got {h}");
    }
    let group = Group2D::from_spec(spec)?;
    let beta = init_beta(1, 1, 1, seed)?[0];
    let filter = canonical_filter(&beta);
    let canonical = canonical_poly(&beta);
    let per_element: Vec<(String, String, Vec<f64>)> = group
        .elements()
        .iter()
        .map(|&g| {
            let k = synthesize_kernel(&beta, &group, g, h);
            (g.to_string(), canonical.transform_by(&group, g).to_string(), k.mask.to_vec())
        })
        .collect();
    if json {
        let kernels: Vec<Value> = per_element
            .iter()
            .map(|(el, poly, mask)| {
                let mut v = json!({ "element": el });
                if dump_polys {
                    v["poly"] = json!(poly);
                }
                if dump {
                    v["mask"] = json!(mask.chunks(KERNEL_SIZE).collect::<Vec<_>>());
                }
                v
            })
            .collect();
        print_json(&json!({
            "group": spec.to_string(),
            "order": group.order(),
            "seed": seed,
            "h": h,
            "beta": beta.0,
            "canonical_filter": filter.chunks(3).collect::<Vec<_>>(),
            "canonical_poly": canonical.to_string(),
            "kernels": kernels,
        }))?;
        return Ok(true);
    }
    outln!("group {spec} (|S| = {}), seed {seed}, h = {h}", group.order());
    outln!("beta: {:?}", beta.0);
    outln!("canonical operator: {canonical}");
    outln!("canonical 3×3 filter:");
    for row in filter.chunks(3) {
        outln!("{}", row.iter().map(|v| format!("{v:>11.4e}")).collect::<Vec<_>>().join(" "));
    }
    if dump || dump_polys {
        for (el, poly, mask) in &per_element {
            outln!("\n[{el}]");
            if dump_polys {
                outln!("{poly}");
            }
            if dump {
                outln!("{}", format_mask(mask));
            }
        }
    }
    Ok(true)
}

fn check_equivariance(args: &CheckArgs) -> Result<bool> {
    let group = Group2D::from_spec(args.group)?;
    let g = group.parse_element(&args.element)?;
    if args.resolutions.is_empty() || args.resolutions.contains(&0) {
        bail!("resolutions must be positive");
    }
    let exact = match args.mode {
        CheckMode::Auto => group.is_grid_symmetry(g),
        CheckMode::Exact => true,
        CheckMode::Convergence => false,
    };
    let lifting = matches!(args.layer, LayerChoice::Lifting | LayerChoice::Both);
    let groupconv = matches!(args.layer, LayerChoice::Groupconv | LayerChoice::Both);
    let seed = args.seed;

    if exact {
        if !group.is_grid_symmetry(g) {
            bail!("element {g} of {} is not a symmetry of the square grid; use --mode convergence", args.group);
        }
        let s = group.order();
        let lift_bank = LiftingBank::init(group.clone(), 2, 1, seed)?;
        let gconv_bank = GroupConvBank::init(group.clone(), 2, 2, seed ^ 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for &n in &args.resolutions {
            let mut grids = |count: usize| -> Vec<Array2<f64>> {
                (0..count).map(|_| Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0))).collect()
            };
            let planar = grids(1);
            let lifted = grids(2 * s);
            let le = if lifting { Some(exact_grid_check(CheckTarget::Lifting(&lift_bank), g, &planar)?) } else { None };
            let ge =
                if groupconv { Some(exact_grid_check(CheckTarget::GroupConv(&gconv_bank), g, &lifted)?) } else { None };
            rows.push((n, le, ge));
        }
        let worst = rows.iter().flat_map(|(_, a, b)| [*a, *b]).flatten().fold(0.0f64, f64::max);
        let pass = worst < EXACT_TOL;
        if args.json {
            let table: Vec<Value> =
                rows.iter().map(|(n, l, c)| json!({ "n": n, "lifting": l, "groupconv": c })).collect();
            print_json(&json!({
                "group": args.group.to_string(),
                "element": g.to_string(),
                "mode": "exact",
                "rows": table,
                "max_error": worst,
                "tolerance": EXACT_TOL,
                "pass": pass,
            }))?;
        } else {
            outln!("exact lattice check, group {}, element {g}", args.group);
            outln!("{:>6} {:>14} {:>14}", "n", "lifting", "group conv");
            let cell = |v: &Option<f64>| v.map_or("-".to_string(), |e| format!("{e:.3e}"));
            for (n, l, c) in &rows {
                outln!("{n:>6} {:>14} {:>14}", cell(l), cell(c));
            }
            outln!("max error {worst:.3e} ({})", if pass { "pass" } else { "FAIL" });
        }
        return Ok(pass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = AnalyticField::random(&mut rng, 3, 0.125);
    let mut reports: Vec<EquivarianceReport> = Vec::new();
    if lifting {
        let beta = init_beta(1, 1, 1, seed)?[0];
        reports.push(lifting_study(&beta, &group, g, &field, &args.resolutions)?);
    }
    if groupconv {
        let input_betas = init_beta(2, 1, 1, seed ^ 1)?;
        let bank = GroupConvBank::init(group.clone(), 1, 2, seed ^ 2)?;
        reports.push(groupconv_study(&input_betas, &bank, g, &field, &args.resolutions)?);
    }
    let pass = reports.iter().all(|r| r.fit.order >= MIN_ORDER);
    if args.json {
        print_json(&json!({
            "group": args.group.to_string(),
            "element": g.to_string(),
            "mode": "convergence",
            "reports": serde_json::to_value(&reports)?,
            "min_order": MIN_ORDER,
            "pass": pass,
        }))?;
    } else {
        for r in &reports {
            outln!("{}\n", r.table());
        }
        outln!("{}", if pass { "pass" } else { "FAIL: fitted order below 1.7" });
    }
    Ok(pass)
}

fn train_cmd(args: &TrainArgs) -> Result<bool> {
    let mut cfg = match args.arch {
        Arch::Pdo => ModelConfig::desk_pdo(args.group, args.classes, args.seed),
        Arch::Cnn => ModelConfig::desk_cnn(args.classes, args.seed),
    };
    cfg.epochs = args.epochs;
    if let Some(w) = &args.widths {
        cfg.widths = w.clone();
    }
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.optimizer = args.optimizer.unwrap_or(cfg.optimizer);
    cfg.weight_decay = args.weight_decay.unwrap_or(cfg.weight_decay);
    cfg.dropout = args.dropout.unwrap_or(cfg.dropout);
    cfg.val_fraction = args.val_fraction.unwrap_or(cfg.val_fraction);

    let data = args.data.load(args.classes, args.seed, 2000)?;
    cfg.classes = data.classes;
    cfg.validate()?;

    let start = Instant::now();
    let json = args.json;
    let trained = train(&cfg, &data, |m| {
        let line = format!("epoch {:>3}  train {:.4}  val {:.4}  loss {:.6}", m.epoch, m.train_acc, m.val_acc, m.loss);
        if json {
            eprintln!("{line}");
        } else {
            outln!("{line}");
        }
    })?;
    let seconds = start.elapsed().as_secs_f64();

    trained.model.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let log = args.log.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    std::fs::write(&log, metrics_csv(&trained.metrics)).with_context(|| format!("writing {}", log.display()))?;

    if json {
        print_json(&json!({
            "checkpoint": args.out,
            "log": log,
            "arch": format!("{:?}", cfg.arch).to_lowercase(),
            "group": cfg.group.to_string(),
            "params": trained.model.num_params(),
            "samples": data.len(),
            "metrics": serde_json::to_value(&trained.metrics)?,
            "seconds": seconds,
        }))?;
    } else {
        outln!(
            "{} parameters, {} samples, {seconds:.1}s; checkpoint {}, log {}",
            trained.model.num_params(),
            data.len(),
            args.out.display(),
            log.display()
        );
    }
    Ok(true)
}

fn eval_cmd(ckpt: &PathBuf, data: &DataArgs, rotate_test: bool, seed: u64, json: bool) -> Result<bool> {
    let model = Model::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let test = data.load(model.config.classes, seed + EVAL_SEED_OFFSET, 1000)?;
    let accuracy = evaluate(&model, &test)?;
    let rotated = if rotate_test { Some(evaluate(&model, &rotate_dataset(&test, seed))?) } else { None };
    if json {
        print_json(&json!({
            "checkpoint": ckpt,
            "samples": test.len(),
            "accuracy": accuracy,
            "rotated_accuracy": rotated,
        }))?;
    } else {
        outln!("{} samples, accuracy {accuracy:.4}", test.len());
        if let Some(r) = rotated {
            outln!("randomly rotated, accuracy {r:.4}");
        }
    }
    Ok(true)
}
