use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use quadcatch::ballistics::ObservationStream;
use quadcatch::experiments::report::paired_power;
use quadcatch::experiments::scenario::BUILTIN_SCENARIOS;
use quadcatch::experiments::{load_config, render_report, replay, run_scenario_with, Config, Format, Report, Scenario};
use quadcatch::gmm::{select_k, DemoDataset};
use quadcatch::selector::Method;

#[derive(Parser)]
#[command(name = "quadcatch", version, about = "Simulated quadruped catching experiments")]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Plane,
    Mindist,
    Gmm,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Plane => vec![Method::Plane],
            MethodArg::Mindist => vec![Method::MinDist],
            MethodArg::Gmm => vec![Method::Gmm],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Table,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Table => Format::Table,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario batch and emit a report.
    Run {
        #[arg(long, default_value = "centered-50")]
        scenario: String,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Repeat the scenario over consecutive seeds and pool the results.
        #[arg(long, default_value_t = 1)]
        repeat: u64,
        /// Override the number of throws.
        #[arg(long)]
        throws: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Fit the catch-space mixture from demonstrations and write it as JSON.
    FitGmm {
        /// Demonstration records; the configured demos are used when omitted.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run perception, fitting and selection over an observation log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "gmm")]
        method: MethodArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool JSON reports from earlier runs into one.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn power_lines(report: &Report) -> String {
    let mut s = String::new();
    for (a, b) in [(Method::Gmm, Method::Plane), (Method::Gmm, Method::MinDist)] {
        if let Some((pa, pb, n)) = paired_power(&report.rows, a, b) {
            s += &format!("paired power over {n} joint catches: {a} {pa:.3} W, {b} {pb:.3} W\n");
        }
    }
    s
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };

    match cli.command {
        Command::Run { scenario, method, seed, repeat, throws, out, format } => {
            if repeat == 0 {
                bail!("--repeat must be at least 1");
            }
            let mixture = cfg.mixture()?;
            let mut reports = Vec::new();
            for k in 0..repeat {
                let Some(mut s) = Scenario::builtin(&scenario, seed + k) else {
                    bail!("unknown scenario '{scenario}' (available: {})", BUILTIN_SCENARIOS.join(", "));
                };
                s.methods = method.methods();
                if let Some(n) = throws {
                    s.n_throws = n;
                }
                reports.push(run_scenario_with(&s, &cfg, &mixture)?);
            }
            let report = Report::merge(&reports).expect("at least one report");
            let format: Format = format.into();
            let mut text = render_report(&report, format)?;
            if format == Format::Table {
                text += &power_lines(&report);
            }
            write_output(out.as_deref(), &text)
        }
        Command::FitGmm { demos, out } => {
            let data = match demos {
                Some(p) => {
                    let f = fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    DemoDataset::read_records(BufReader::new(f), &p.display().to_string())?
                }
                None => cfg.demos()?,
            };
            let sel = select_k(&data, 1..=cfg.gmm.k_max, &cfg.gmm.em)?;
            for (k, b) in &sel.scores {
                eprintln!("K={k} BIC={b:.3}");
            }
            eprintln!("selected K={} from {} demonstrations", sel.k, data.points.len());
            write_output(out.as_deref(), &serde_json::to_string_pretty(&sel.fit.mixture)?)
        }
        Command::Replay { log, method, out } => {
            let methods = method.methods();
            let f = fs::File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let stream = ObservationStream::read_records(BufReader::new(f), cfg.sim.perception_fps)?;
            let mixture = cfg.mixture()?;
            let mut text = String::from("method,stamp,observations,t_catch,x,y,z\n");
            for m in methods {
                for step in replay(&stream, &cfg, &mixture, m)? {
                    match step.plan {
                        Some(p) => {
                            let c = p.x_catch;
                            text += &format!(
                                "{m},{},{},{},{},{},{}\n",
                                step.stamp,
                                step.observations,
                                p.arrival_time(),
                                c.x,
                                c.y,
                                c.z
                            )
                        }
                        None => text += &format!("{m},{},{},,,,\n", step.stamp, step.observations),
                    }
                }
            }
            write_output(out.as_deref(), &text)
        }
        Command::Report { inputs, out, format } => {
            let mut reports = Vec::new();
            for p in &inputs {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let r: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                reports.push(r);
            }
            let report = Report::merge(&reports).expect("at least one input");
            let format: Format = format.into();
            let mut text = render_report(&report, format)?;
            if format == Format::Table {
                text += &power_lines(&report);
            }
            write_output(out.as_deref(), &text)
        }
    }
}
