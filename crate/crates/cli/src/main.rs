use anyhow::Context;
use clap::{Parser, Subcommand};
use hgtrack::config::KeyValueConfig;
use hgtrack::ingest::{self, ingest, transport_from_config, DataBundle};
use hgtrack::report::{self, Format};
use hgtrack::scenario::{self, Engine, RunRecord, Scenario};
use hgtrack::transport::{build_srm, max_stable_dt, write_srm};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Mercury impact chain for coal-fired power plant retrofits.
#[derive(Debug, Parser)]
#[command(name = "hgtrack", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a data bundle and list every violation.
    Validate { bundle: PathBuf },
    /// Build the source-receptor matrix for the bundle's plant cells.
    Srm {
        bundle: PathBuf,
        /// Transport parameter file in the bundle's transport.conf format.
        params: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and persist the run record under $HGTRACK_OUT.
    Run {
        bundle: PathBuf,
        scenario: PathBuf,
        /// Output root; overrides $HGTRACK_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run's attribution table and rankings.
    Attribute {
        run: PathBuf,
        /// Write the long-form CSV here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write report files for a run.
    Report {
        run: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: Format,
        /// Output directory; defaults to <run>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic demo bundle and a scenario covering all measures.
    Demo {
        #[arg(long, default_value = "demo-bundle")]
        out: PathBuf,
        /// Jitter the demo values with this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

/// Failures split by exit code.
enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_bundle(dir: &Path) -> Result<DataBundle, Failure> {
    ingest(dir).map_err(|vs| {
        let mut msg = format!("{} violation(s) in {}", vs.len(), dir.display());
        for v in vs {
            msg += &format!("\n  {v}");
        }
        Failure::Validation(msg)
    })
}

fn load_run(path: &Path) -> Result<RunRecord, Failure> {
    scenario::load(path).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { bundle } => {
            let b = load_bundle(&bundle)?;
            println!(
                "ok: {} provinces, {} plants, {} categories, {}x{} grid, epochs {} -> {}",
                b.provinces.len(),
                b.plants.len(),
                b.exposure.categories().len(),
                b.grid.nx(),
                b.grid.ny(),
                b.epochs.0,
                b.epochs.1
            );
        }
        Command::Srm { bundle, params, out } => {
            let b = load_bundle(&bundle)?;
            let text = std::fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let p = KeyValueConfig::parse(&text)
                .and_then(|cfg| transport_from_config(&cfg, b.transport.wind_u.clone(), b.transport.wind_v.clone()))
                .map_err(|errs| {
                    Failure::Validation(errs.iter().map(|e| format!("{}:{e}", params.display())).collect::<Vec<_>>().join("\n"))
                })?;
            p.validate(&b.grid).map_err(|e| Failure::Validation(format!("{}: {e}", params.display())))?;
            let limit = max_stable_dt(&p, &b.grid);
            if p.dt > limit {
                return Err(Failure::Validation(format!("{}: dt = {} s exceeds the stability limit {limit} s", params.display(), p.dt)));
            }
            let sources: BTreeSet<usize> = b.plants.iter().filter_map(|pl| b.grid.locate(pl.lat, pl.lon)).collect();
            let srm = build_srm(&p, &b.grid, &sources).context("building source-receptor matrix")?;
            let body = write_srm(&srm);
            match out {
                Some(path) => {
                    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                    println!("{}", path.display());
                }
                None => print!("{body}"),
            }
        }
        Command::Run { bundle, scenario: file, out } => {
            let b = load_bundle(&bundle)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let sc = Scenario::parse(&text).map_err(|errs| {
                Failure::Validation(errs.iter().map(|e| format!("{}:{e}", file.display())).collect::<Vec<_>>().join("\n"))
            })?;
            if sc.epochs != b.epochs {
                return Err(Failure::Validation(format!(
                    "{}: epochs {} -> {} do not match the bundle's {} -> {}",
                    file.display(),
                    sc.epochs.0,
                    sc.epochs.1,
                    b.epochs.0,
                    b.epochs.1
                )));
            }
            let engine = Engine::new(b).context("preparing transport")?;
            let record = engine.run(&sc).context("running scenario")?;
            let root = out.unwrap_or_else(scenario::output_root);
            let dir = scenario::persist(&record, &root).with_context(|| format!("writing run under {}", root.display()))?;
            println!("{}", dir.display());
        }
        Command::Attribute { run, out } => {
            let r = load_run(&run)?;
            let csv = report::csv_files(&r);
            match out {
                Some(path) => std::fs::write(&path, &csv[report::ATTRIBUTION]).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", csv[report::ATTRIBUTION]),
            }
            eprintln!("mode {}, closure residual {:e}", r.attribution.mode, r.attribution.closure_residual);
            for (name, list) in [("receivers", &r.rankings.receivers), ("exporters", &r.rankings.exporters)] {
                let top: Vec<String> = list.iter().map(|x| format!("{} ({:.3e} deaths/yr)", x.province, x.deaths)).collect();
                eprintln!("top {name}: {}", top.join(", "));
            }
        }
        Command::Report { run, format, out } => {
            let r = load_run(&run)?;
            let dir = out.unwrap_or_else(|| if run.is_dir() { run.join("report") } else { PathBuf::from("report") });
            for path in report::write(&r, format, &dir).with_context(|| format!("writing {}", dir.display()))? {
                println!("{}", path.display());
            }
        }
        Command::Demo { out, seed } => {
            hgtrack::demo::write(&out, seed).with_context(|| format!("writing {}", out.display()))?;
            let sc = out.join("demo-all.scenario");
            std::fs::write(&sc, hgtrack::demo::SCENARIO_ALL).with_context(|| format!("writing {}", sc.display()))?;
            println!("{}", out.join(ingest::MANIFEST).display());
            println!("{}", sc.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
