use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kdecay::check::{run_checks, Fault};
use kdecay::config::{RunConfig, SweepConfig};
use kdecay::experiment::{best_k, dominance_by_seed, median, run_sweep, SweepOptions, SweepPlan};
use kdecay::harness::train;
use kdecay::report::{curve_csv, write_atomic, RunReport};
use kdecay::schedule::{
    sample_curve, Family, KDecayParams, ScheduleSpec, DEFAULT_ETA0, DEFAULT_ETA_E,
    DEFAULT_HTD_LOWER, DEFAULT_HTD_UPPER, DEFAULT_K,
};
use kdecay::Error;

#[derive(Parser)]
#[command(
    name = "kdecay",
    version,
    about = "k-decay learning-rate schedules and desk-scale experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a schedule over [0, t0] and write `t,lr` CSV.
    Curve(CurveArgs),
    /// Train once from a TOML config and write a JSON-lines report.
    Train(TrainArgs),
    /// Run a k-sweep plan; one report per cell plus aggregate.csv.
    Sweep(SweepArgs),
    /// Run the built-in invariant suite.
    Check(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Pol,
    Cos,
    Exp,
    Step,
    Sgdr,
    Clr,
    Htd,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Polynomial power (pol only, default 1).
    #[arg(long)]
    n: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    #[arg(long, default_value_t = DEFAULT_ETA0)]
    eta0: f64,
    #[arg(long = "etae", default_value_t = DEFAULT_ETA_E)]
    eta_e: f64,
    /// Schedule horizon.
    #[arg(long)]
    t0: f64,
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit raw formula values instead of clamping to [etae, eta0].
    #[arg(long)]
    no_clamp: bool,
    /// Comma-separated step milestones (step only, required).
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<f64>>,
    /// Step decay factor (step only, default 0.1).
    #[arg(long)]
    gamma: Option<f64>,
    /// First restart period (sgdr only, required).
    #[arg(long)]
    period0: Option<f64>,
    /// Period growth factor (sgdr only, default 1).
    #[arg(long)]
    period_mult: Option<f64>,
    /// Half period of the triangle (clr only, required).
    #[arg(long)]
    half_cycle: Option<f64>,
    /// tanh ramp start (htd only, default -6).
    #[arg(long)]
    htd_lower: Option<f64>,
    /// tanh ramp end (htd only, default 3).
    #[arg(long)]
    htd_upper: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run config.
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Record wall time in the report (the file is then not reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep plan.
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip cells whose report already exists and matches the plan.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    timing: bool,
    /// Fraction of training compared for loss ordering, as `a,b`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.2, 0.8])]
    window: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    FlipTermSign,
    ZeroLayerGradient,
}

#[derive(Args)]
struct CheckArgs {
    /// Deliberately break one component to confirm the suite catches it.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
    /// Layer zeroed by `--inject-fault zero-layer-gradient`.
    #[arg(long, default_value_t = 0, requires = "inject_fault")]
    layer: usize,
}

/// A failure that carries its diagnostic code.
struct Failure {
    code: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: "E_USAGE",
        message: message.into(),
    }
}

fn flag_for(param: &str) -> &'static str {
    match param {
        "eta0" => "--eta0",
        "eta_e" => "--etae",
        "t0" => "--t0",
        "k" => "--k",
        "n" => "--n",
        "gamma" => "--gamma",
        "milestones" => "--milestones",
        "period0" => "--period0",
        "period_mult" => "--period-mult",
        "half_cycle" => "--half-cycle",
        "lower" => "--htd-lower",
        "upper" => "--htd-upper",
        _ => "--family",
    }
}

fn curve_spec(a: &CurveArgs) -> Result<ScheduleSpec, Failure> {
    let family_name = a.family.to_possible_value().unwrap().get_name().to_string();
    let only = |given: bool, flag: &str, owner: FamilyArg, owner_name: &str| {
        if given && a.family != owner {
            Err(usage(format!(
                "{flag} only applies to --family {owner_name}, not {family_name}"
            )))
        } else {
            Ok(())
        }
    };
    only(a.n.is_some(), "--n", FamilyArg::Pol, "pol")?;
    only(
        a.milestones.is_some(),
        "--milestones",
        FamilyArg::Step,
        "step",
    )?;
    only(a.gamma.is_some(), "--gamma", FamilyArg::Step, "step")?;
    only(a.period0.is_some(), "--period0", FamilyArg::Sgdr, "sgdr")?;
    only(
        a.period_mult.is_some(),
        "--period-mult",
        FamilyArg::Sgdr,
        "sgdr",
    )?;
    only(
        a.half_cycle.is_some(),
        "--half-cycle",
        FamilyArg::Clr,
        "clr",
    )?;
    only(a.htd_lower.is_some(), "--htd-lower", FamilyArg::Htd, "htd")?;
    only(a.htd_upper.is_some(), "--htd-upper", FamilyArg::Htd, "htd")?;
    let required = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| usage(format!("--family {family_name} requires {flag}")))
    };

    let family = match a.family {
        FamilyArg::Pol => Family::PolynomialKDecay {
            n: a.n.unwrap_or(1.0),
        },
        FamilyArg::Cos => Family::CosineKDecay,
        FamilyArg::Exp => Family::ExpKDecay,
        FamilyArg::Step => Family::StepDecay {
            milestones: a
                .milestones
                .clone()
                .ok_or_else(|| usage("--family step requires --milestones"))?,
            gamma: a.gamma.unwrap_or(0.1),
        },
        FamilyArg::Sgdr => Family::Sgdr {
            period0: required(a.period0, "--period0")?,
            period_mult: a.period_mult.unwrap_or(1.0),
        },
        FamilyArg::Clr => Family::Clr {
            half_cycle: required(a.half_cycle, "--half-cycle")?,
        },
        FamilyArg::Htd => Family::Htd {
            lower: a.htd_lower.unwrap_or(DEFAULT_HTD_LOWER),
            upper: a.htd_upper.unwrap_or(DEFAULT_HTD_UPPER),
        },
    };
    let spec = ScheduleSpec {
        family,
        params: KDecayParams {
            eta0: a.eta0,
            eta_e: a.eta_e,
            t0: a.t0,
            k: a.k,
        },
        clamp: !a.no_clamp,
    };
    spec.validate().map_err(|e| match e {
        Error::Param { name, message } => Failure {
            code: "E_DOMAIN",
            message: format!("{}: {message}", flag_for(name)),
        },
        other => other.into(),
    })?;
    Ok(spec)
}

fn cmd_curve(a: &CurveArgs) -> Result<(), Failure> {
    let spec = curve_spec(a)?;
    if a.points < 2 {
        return Err(Failure {
            code: "E_DOMAIN",
            message: format!("--points: must be >= 2, got {}", a.points),
        });
    }
    let csv = curve_csv(&sample_curve(&spec, a.points)?);
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let config = RunConfig::load(&a.config)?;
    let mut run = config.resolve(&config_dir(&a.config))?;
    let record = train(&mut run.model, &run.dataset, &run.train)?;
    let report = RunReport::from_record(&record, &run.echo, a.timing);
    write_atomic(&a.out, report.to_jsonl().as_bytes())?;
    println!("final_test_error={}", record.final_test_error);
    if record.diverged {
        println!("diverged=true after {} steps", record.steps.len());
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let (lo, hi) = (a.window[0], a.window[1]);
    let plan = SweepPlan {
        config: SweepConfig::load(&a.plan)?,
        base_dir: config_dir(&a.plan),
        output_dir: a.out.clone(),
    };
    let options = SweepOptions {
        resume: a.resume,
        timing: a.timing,
    };
    let result = run_sweep(&plan, options)?;
    println!(
        "cells={} reused={} aggregate={}",
        result.cells.len(),
        result.reused,
        plan.aggregate_path().display()
    );
    let mut ks = plan.config.k_values.clone();
    ks.sort_by(f64::total_cmp);
    for s in &plan.config.schedules {
        for row in result.aggregates.iter().filter(|r| r.schedule == s.id) {
            println!(
                "  {} k={} median_err={} min_err={} max_err={} n_diverged={}",
                row.schedule, row.k, row.median_err, row.min_err, row.max_err, row.n_diverged
            );
        }
        match best_k(&result, &s.id) {
            Ok(b) => {
                let baseline = result
                    .aggregates
                    .iter()
                    .find(|r| r.schedule == s.id && r.k == ks[0])
                    .map_or(f64::NAN, |r| r.median_err);
                let trend = if b.median_error < baseline {
                    "decreases"
                } else {
                    "does not decrease"
                };
                println!(
                    "  {} best_k={} median_err={} (error {trend} from k={} to best k)",
                    s.id, b.k, b.median_error, ks[0]
                );
                for k in b.excluded {
                    eprintln!(
                        "warning: {} k={k} excluded from best_k: every seed diverged",
                        s.id
                    );
                }
            }
            Err(e) => eprintln!("warning: {}: {e}", s.id),
        }
        if ks.len() >= 2 {
            let (k_lo, k_hi) = (ks[0], ks[ks.len() - 1]);
            let fractions = dominance_by_seed(&result, &s.id, k_lo, k_hi, (lo, hi))?;
            let values: Vec<f64> = fractions.iter().map(|(_, f)| *f).collect();
            println!(
                "  {} loss dominance k={k_hi} over k={k_lo} on [{lo}, {hi}]: median {} over {} seeds",
                s.id,
                median(&values),
                values.len()
            );
        }
    }
    Ok(())
}

fn cmd_check(a: &CheckArgs) -> Result<(), Failure> {
    let fault = match a.inject_fault {
        None => Fault::None,
        Some(FaultArg::FlipTermSign) => Fault::FlipTermSign,
        Some(FaultArg::ZeroLayerGradient) => Fault::ZeroLayerGradient(a.layer),
    };
    let outcomes = run_checks(fault);
    for o in &outcomes {
        println!(
            "{} {} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: "E_CHECK",
            message: format!("{failed} of {} properties failed", outcomes.len()),
        });
    }
    println!("all {} properties passed", outcomes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Curve(a) => cmd_curve(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message.replace('\n', " | "));
            if f.code == "E_USAGE" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
