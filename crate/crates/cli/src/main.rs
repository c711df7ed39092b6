//! `delaycont`: continuation and bifurcation analysis of the delayed ENSO
//! oscillator from the command line.

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use delaycont::engine::EventKind;

use commands::{Completion, TongueSource};
use config::{parse_range, parse_resonance, RunConfig, OUTPUT_ROOT_VAR, SETTINGS};
use error::{classify, read_input, CliError};
use output::Output;
use plot::PlotKind;

#[derive(Parser, Debug)]
#[command(name = "delaycont", version, about = "Continuation and bifurcation analysis of delay equations")]
struct Cli {
    /// Model to analyse.
    #[arg(long, global = true, default_value = "enso")]
    model: String,
    /// Config file of `key=value` lines (parameters and settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter overrides, `name=value[,name=value...]`; repeatable.
    #[arg(long, global = true)]
    fix: Vec<String>,
    /// Setting overrides, `key=value[,key=value...]`; repeatable.
    #[arg(long, global = true)]
    set: Vec<String>,
    /// Output directory [default: $DELAYCONT_OUT/<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximal number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Sweep {
    /// Free parameter.
    #[arg(long)]
    free: String,
    /// Parameter interval `a:b`; continuation starts at `a`.
    #[arg(long)]
    range: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibrium branch with spectra, Hopf and branch points.
    EqBranch(Sweep),
    /// Characteristic roots of the equilibrium at the given parameters.
    Spectrum,
    /// Branch of periodic orbits, from a Hopf point (unforced), the trivial
    /// forced orbit, or an orbit file.
    PoBranch {
        #[command(flatten)]
        sweep: Sweep,
        /// Start from this orbit JSON instead.
        #[arg(long)]
        orbit: Option<PathBuf>,
        /// Continue towards decreasing parameter values.
        #[arg(long)]
        reverse: bool,
    },
    /// Forced trivial-orbit branch with torus, fold and period-doubling points.
    Floquet(Sweep),
    /// Two-parameter curve of a periodic-orbit bifurcation.
    BifCurve {
        #[command(flatten)]
        sweep: Sweep,
        /// Bifurcation to follow.
        #[arg(long, value_parser = ["torus", "period-doubling", "fold"])]
        kind: String,
        /// Second free parameter.
        #[arg(long)]
        second: String,
        /// Interval of the second parameter `a:b`.
        #[arg(long)]
        second_range: String,
    },
    /// Resonance surface and tongue from a torus root or an autonomous orbit.
    Tongue {
        /// Rational point written by `bif-curve` (`roots/k-l.json`).
        #[arg(long)]
        root: Option<PathBuf>,
        /// Autonomous orbit in resonance with the forcing (unforced root).
        #[arg(long)]
        orbit: Option<PathBuf>,
        /// Resonance `k:l` of `--orbit`.
        #[arg(long)]
        resonance: Option<String>,
        /// Second parameter for `--orbit` roots.
        #[arg(long, default_value = "k0")]
        other: String,
        /// Parameter box `a:b,c:d` in the surface's two parameters.
        #[arg(long = "box")]
        window: Option<String>,
    },
    /// Integrates the model from a history.
    Simulate {
        /// `const:v[,v...]`, `orbit:<file.json>` or `csv:<file>`.
        #[arg(long, default_value = "const:1")]
        history: String,
    },
    /// Rotation number against one parameter.
    Staircase(Sweep),
    /// Renders a CSV written by another command as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// CSV file to draw.
        #[arg(long)]
        input: PathBuf,
        /// Abscissa column of branch plots.
        #[arg(long)]
        x: Option<String>,
        /// Ordinate column of branch plots (default `norm`).
        #[arg(long)]
        y: Option<String>,
    },
    /// Lists parameters and settings with their defaults.
    Settings,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::EqBranch(_) => "eq-branch",
            Command::Spectrum => "spectrum",
            Command::PoBranch { .. } => "po-branch",
            Command::Floquet(_) => "floquet",
            Command::BifCurve { .. } => "bif-curve",
            Command::Tongue { .. } => "tongue",
            Command::Simulate { .. } => "simulate",
            Command::Staircase(_) => "staircase",
            Command::Plot { .. } => "plot",
            Command::Settings => "settings",
        }
    }
}

fn parse_box(text: &str) -> Result<((f64, f64), (f64, f64)), CliError> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| CliError::config(format!("box must be a:b,c:d, got '{text}'")))?;
    Ok((parse_range(a)?, parse_range(b)?))
}

fn configure(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(cli.command.name(), &cli.model)?;
    if let Some(path) = &cli.config {
        cfg.apply_file(&read_input(path)?)?;
    }
    for spec in &cli.fix {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, _) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("expected name=value, got '{item}'")))?;
            cfg.param(k.trim())?;
        }
        cfg.apply_list(spec)?;
    }
    for spec in &cli.set {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let key = item.split_once('=').map(|(k, _)| k.trim()).unwrap_or(item);
            if !cfg.settings.contains_key(key) {
                return Err(CliError::config(format!("unknown setting '{key}'")).into());
            }
        }
        cfg.apply_list(spec)?;
    }
    cfg.resolve_out(cli.out.clone());
    Ok(cfg)
}

fn run(cli: &Cli, argv: &[String]) -> Result<Completion> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1").into());
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let mut cfg = configure(cli)?;
    let mut out = Output::new(&cfg.out.clone());
    let done = match &cli.command {
        Command::EqBranch(s) => {
            cfg.option("free", &s.free);
            cfg.option("range", &s.range);
            commands::eq_branch(&mut cfg, &s.free, parse_range(&s.range)?, &mut out)?
        }
        Command::Spectrum => commands::spectrum(&cfg, &mut out)?,
        Command::PoBranch { sweep, orbit, reverse } => {
            cfg.option("free", &sweep.free);
            cfg.option("range", &sweep.range);
            if let Some(o) = orbit {
                cfg.option("orbit", o.display());
            }
            if *reverse {
                cfg.option("reverse", true);
            }
            let range = parse_range(&sweep.range)?;
            commands::po_branch(&mut cfg, &sweep.free, range, orbit.as_deref(), *reverse, &mut out)?
        }
        Command::Floquet(s) => {
            cfg.option("free", &s.free);
            cfg.option("range", &s.range);
            commands::floquet(&mut cfg, &s.free, parse_range(&s.range)?, &mut out)?
        }
        Command::BifCurve { sweep, kind, second, second_range } => {
            cfg.option("free", &sweep.free);
            cfg.option("range", &sweep.range);
            cfg.option("kind", kind);
            cfg.option("second", second);
            cfg.option("second-range", second_range);
            let kind = match kind.as_str() {
                "torus" => EventKind::Torus,
                "period-doubling" => EventKind::PeriodDoubling,
                _ => EventKind::Fold,
            };
            let range = parse_range(&sweep.range)?;
            let window = (range, parse_range(second_range)?);
            commands::bif_curve(&mut cfg, &sweep.free, range, kind, second, window, &mut out)?
        }
        Command::Tongue { root, orbit, resonance, other, window } => {
            for (k, v) in [("root", root), ("orbit", orbit)] {
                if let Some(p) = v {
                    cfg.option(k, p.display());
                }
            }
            if let Some(r) = resonance {
                cfg.option("resonance", r);
            }
            if let Some(b) = window {
                cfg.option("box", b);
            }
            let src = TongueSource {
                root: root.as_deref(),
                orbit: orbit.as_deref(),
                resonance: resonance.as_deref().map(parse_resonance).transpose()?,
                other,
                window: window.as_deref().map(parse_box).transpose()?,
            };
            commands::tongue(&mut cfg, &src, &mut out)?
        }
        Command::Simulate { history } => {
            cfg.option("history", history);
            commands::simulate(&cfg, history, &mut out)?
        }
        Command::Staircase(s) => {
            cfg.option("free", &s.free);
            cfg.option("range", &s.range);
            commands::staircase(&mut cfg, &s.free, parse_range(&s.range)?, &mut out)?
        }
        Command::Plot { kind, input, x, y } => {
            cfg.option("input", input.display());
            let name = format!("{}.svg", format!("{kind:?}").to_lowercase());
            std::fs::create_dir_all(&cfg.out)?;
            let tmp = cfg.out.join(format!("{name}.partial"));
            plot::plot(*kind, input, x.as_deref(), y.as_deref(), &tmp)?;
            std::fs::rename(&tmp, cfg.out.join(&name))?;
            Completion::Complete
        }
        Command::Settings => {
            for (k, v) in &cfg.params {
                println!("{k}={v:?}\t# parameter");
            }
            for (k, v, help) in SETTINGS {
                println!("{k}={v:?}\t# {help}");
            }
            println!("# output root: ${OUTPUT_ROOT_VAR}, default delaycont-out");
            return Ok(Completion::Complete);
        }
    };
    out.add("config.echo", cfg.echo(argv));
    out.add("versions.txt", versions());
    match done {
        Completion::Complete => {
            out.commit()?;
        }
        Completion::Partial(_) => {
            out.commit_partial()?;
        }
    }
    Ok(done)
}

fn versions() -> String {
    format!(
        "delaycont {}\ndelaycont-cli {}\ncsv-format 15-significant-digits\nrestart-format DCBR/1\n",
        delaycont_version(),
        env!("CARGO_PKG_VERSION")
    )
}

fn delaycont_version() -> &'static str {
    // the workspace versions the crates together
    env!("CARGO_PKG_VERSION")
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            eprintln!("{}", CliError::config(msg).line());
            return ExitCode::from(2);
        }
    };
    match run(&cli, &argv) {
        Ok(Completion::Complete) => ExitCode::SUCCESS,
        Ok(Completion::Partial(e)) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
        Err(e) => {
            let e = classify(&e);
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
