use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use ipmsm_core::{
    excitation::{pe_metric, PeConfig, PhiShortcut},
    filters::FilterInit,
    motor::MotorParams,
    observer::ObserverKind,
    plot::plot_run,
    scenario::{read_csv, run_scenario, write_csv, write_outputs, RunOutput, RunTable, ScenarioConfig},
    verify, Vec2,
};

#[derive(Parser)]
#[command(name = "ipmsm", version, about = "Active-flux observer simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        /// Output directory (default: out/<scenario name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render SVG figures.
        #[arg(long)]
        plot: bool,
        /// Comma-separated observers, overriding the config.
        #[arg(long, value_delimiter = ',')]
        observers: Option<Vec<ObserverKind>>,
    },
    /// Run every `*.toml` scenario in a directory.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Run the acceptance checks.
    Verify {
        #[arg(long, default_value = "scenarios")]
        scenarios: PathBuf,
        /// Run only these criteria (comma-separated numbers).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u8>>,
    },
    /// Offline PE analysis of a log with columns t,v_a,v_b,i_a,i_b.
    Pe {
        csv: PathBuf,
        /// Filter bandwidth (rad/s).
        #[arg(long, default_value_t = 20.0)]
        alpha: f64,
        /// Window length (s); default 0.1 s.
        #[arg(long, default_value_t = 0.1)]
        window: f64,
        #[arg(long, default_value_t = 0.01)]
        stride: f64,
        /// Motor parameters as a TOML table; default is the built-in IPMSM.
        #[arg(long)]
        motor: Option<PathBuf>,
        /// Required PE level; the exit code reflects it when given.
        #[arg(long)]
        delta: Option<f64>,
        /// Ignore windows starting before this time (s).
        #[arg(long, default_value_t = 0.0)]
        skip: f64,
        /// Write the per-window report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(out: &RunOutput) {
    let s = &out.summary;
    println!("scenario {}: {} steps, dt = {:e} s", s.scenario, s.steps, s.dt);
    println!(
        "  x_min = {:.5} Wb, max |i| = {:.3} A, A1 violations = {}, A2 violations = {}",
        s.x_min, s.max_current, s.a1_violations, s.a2_violations
    );
    match s.pe_delta_min {
        Some(d) => println!("  PE: window {:.4} s, min delta = {d:.4e}", s.pe_window),
        None => println!("  PE: no complete window"),
    }
    println!("  regression residual {:.3e}, phi gap {:.3e}", s.regression_residual, s.phi_gap);
    for o in &s.observers {
        let rate = o.decay_rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        println!(
            "  [{}] decay rate {rate} 1/s, max |theta err| after {} s = {:.3e} rad, final = {:.3e} rad",
            o.observer.label(),
            s.settle_time,
            o.max_theta_err_after_settle,
            o.final_theta_err
        );
    }
    for a in &s.assertions {
        println!("  {} {} (value {:.4e})", if a.passed { "PASS" } else { "FAIL" }, a.description, a.value);
    }
}

fn run_one(cfg: &ScenarioConfig, out_dir: &Path, plot: bool) -> Result<RunOutput> {
    let out = run_scenario(cfg).with_context(|| format!("scenario `{}`", cfg.name))?;
    write_outputs(&out, out_dir)?;
    if plot {
        plot_run(&out, out_dir)?;
    }
    Ok(out)
}

fn cmd_run(config: &Path, out: Option<PathBuf>, plot: bool, observers: Option<Vec<ObserverKind>>) -> Result<bool> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(obs) = observers {
        cfg.observers = obs;
        cfg.validate()?;
    }
    let dir = out.unwrap_or_else(|| Path::new("out").join(&cfg.name));
    let res = run_one(&cfg, &dir, plot)?;
    print_summary(&res);
    println!("  outputs in {}", dir.display());
    Ok(res.summary.passed)
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no *.toml scenarios in {}", dir.display());
    }
    Ok(files)
}

fn cmd_batch(dir: &Path, out: &Path, plot: bool) -> Result<bool> {
    let files = scenario_files(dir)?;
    let results: Vec<(PathBuf, Result<RunOutput>)> = files
        .par_iter()
        .map(|f| {
            let r = ScenarioConfig::load(f)
                .map_err(anyhow::Error::from)
                .and_then(|cfg| run_one(&cfg, &out.join(&cfg.name), plot));
            (f.clone(), r)
        })
        .collect();
    let mut ok = true;
    for (f, r) in &results {
        match r {
            Ok(out) => {
                let s = &out.summary;
                let failed = s.assertions.iter().filter(|a| !a.passed).count();
                println!(
                    "{} {} ({} assertions, {failed} failed)",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.scenario,
                    s.assertions.len()
                );
                for a in s.assertions.iter().filter(|a| !a.passed) {
                    println!("     {} (value {:.4e})", a.description, a.value);
                }
                ok &= s.passed;
            }
            Err(e) => {
                println!("ERROR {}: {e:#}", f.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn cmd_verify(scenarios: &Path, only: Option<Vec<u8>>) -> Result<bool> {
    let results = match only {
        None => verify::run_all(scenarios),
        Some(ids) => ids
            .iter()
            .map(|&id| verify::run_one(id, scenarios).with_context(|| format!("no criterion {id}")))
            .collect::<Result<Vec<_>>>()?,
    };
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    Ok(passed == results.len())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pe(
    path: &Path,
    alpha: f64,
    window: f64,
    stride: f64,
    motor: Option<PathBuf>,
    delta: Option<f64>,
    skip: f64,
    out: Option<PathBuf>,
) -> Result<bool> {
    let params = match motor {
        Some(m) => {
            let text = std::fs::read_to_string(&m).with_context(|| format!("reading {}", m.display()))?;
            let p: MotorParams = toml::from_str(&text).with_context(|| format!("parsing {}", m.display()))?;
            p.validate()?;
            p
        }
        None => MotorParams::table1_sim(),
    };
    let table = read_csv(path)?;
    let col = |name: &str| {
        table
            .column(name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (t, va, vb, ia, ib) = (col("t")?, col("v_a")?, col("v_b")?, col("i_a")?, col("i_b")?);
    if t.len() < 2 {
        bail!("{}: need at least two samples", path.display());
    }
    let (mut sc, phi0) = PhiShortcut::start(params, alpha, FilterInit::Zero, Vec2::new(ia[0], ib[0]));
    let mut phi = vec![phi0];
    for k in 0..t.len() - 1 {
        let dt = t[k + 1] - t[k];
        if dt <= 0.0 {
            bail!("{}: time column must be increasing (row {})", path.display(), k + 2);
        }
        phi.push(sc.step(&Vec2::new(va[k], vb[k]), &Vec2::new(ia[k + 1], ib[k + 1]), dt));
    }
    let mut report = pe_metric(&t, &phi, &PeConfig { window, stride })?;
    report.windows.retain(|w| w.t_start >= skip);
    write_or_print(&report, out)?;
    let dmin = report.delta_min();
    match dmin {
        Some(d) => println!("windows: {}, window {:.6} s, min delta = {d:.6e}", report.windows.len(), report.window),
        None => println!("no complete window"),
    }
    Ok(match delta {
        Some(level) => {
            let pe = report.is_pe(level);
            println!("PE at level {level:e}: {}", if pe { "yes" } else { "no" });
            pe
        }
        None => true,
    })
}

fn write_or_print(report: &ipmsm_core::excitation::PeReport, out: Option<PathBuf>) -> Result<()> {
    if let Some(p) = out {
        write_csv(&RunTable::pe(report), &p)?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            plot,
            observers,
        } => cmd_run(&config, out, plot, observers),
        Command::Batch { dir, out, plot } => cmd_batch(&dir, &out, plot),
        Command::Verify { scenarios, only } => cmd_verify(&scenarios, only),
        Command::Pe {
            csv,
            alpha,
            window,
            stride,
            motor,
            delta,
            skip,
            out,
        } => cmd_pe(&csv, alpha, window, stride, motor, delta, skip, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
