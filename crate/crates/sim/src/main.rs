use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hira_core::characterization::{sampled_rows, DEFAULT_PATTERNS};
use hira_core::Chip;
use hira_sim::analysis;
use hira_sim::config::{ps, ExperimentConfig};
use hira_sim::experiment::{self, Outcome};
use hira_sim::io as fmt;
use hira_sim::sweep::{self, Axis, Variant};

#[derive(Parser)]
#[command(
    name = "hira",
    version,
    about = "Concurrent-activation DRAM refresh simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set scheduler.slack_multiple=4`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and print its metrics.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Event log CSV (overrides output.event_log).
        #[arg(long)]
        events: Option<PathBuf>,
        /// Metrics CSV (overrides output.metrics); stdout otherwise.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-row ground-truth CSV (overrides output.snapshot).
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Compare REF against concurrent refresh along one axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// capacity, n_rh, channels, ranks or slack.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        /// e.g. `baseline,hira-2`; `ref+hira-N` keeps REF for periodic refresh.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Which row pairs open together, per (t1, t2).
    Coverage {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        bank: u32,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        t1: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        t2: Vec<f64>,
        /// Test the first, middle and last N rows; all rows when omitted.
        #[arg(long)]
        sample: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RowHammer threshold with and without a mid-attack refresh.
    Threshold {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        bank: u32,
        #[arg(long, default_value_t = 8)]
        victims: usize,
        /// Hammer count at which the simulated chip flips (chip.n_rh).
        #[arg(long, default_value_t = 1024)]
        n_rh: u32,
        #[arg(long, default_value_t = 3.0)]
        t1: f64,
        #[arg(long, default_value_t = 3.0)]
        t2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the PARA probability for DDR4 timing.
    ParaSolve {
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
        n_rh: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,8")]
        slack: Vec<u64>,
        #[arg(long, default_value_t = hira_core::para::DEFAULT_TARGET)]
        target: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Res<T> = Result<T, String>;

fn load(a: &ConfigArgs) -> Res<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| match e {
                hira_sim::config::ConfigError::Parse {
                    line: Some(l),
                    message,
                } => format!("{}:{l}: {message}", p.display()),
                e => format!("{}: {e}", p.display()),
            })?
        }
        None => ExperimentConfig::default(),
    };
    for s in &a.sets {
        c.set(s).map_err(|e| format!("--set {s}: {e}"))?;
    }
    Ok(c)
}

fn create(p: &Path) -> Res<BufWriter<File>> {
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", p.display()))
}

fn output(p: Option<&Path>) -> Res<Box<dyn Write>> {
    Ok(match p {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn chip_for(c: &ExperimentConfig) -> Res<Chip> {
    let p = experiment::prepare(c).map_err(|e| e.to_string())?;
    Chip::new(p.system.chip).map_err(|e| e.to_string())
}

fn write_outputs(c: &ExperimentConfig, o: &Outcome) -> Res<()> {
    let e = |e: fmt::FormatError| e.to_string();
    if let Some(p) = &c.output.event_log {
        let per_channel = c.geometry().banks_per_channel();
        let mut all: Vec<_> = o
            .report
            .events
            .iter()
            .enumerate()
            .flat_map(|(ch, evs)| {
                evs.iter().map(move |ev| {
                    let mut ev = *ev;
                    ev.bank += ch as u32 * per_channel;
                    ev
                })
            })
            .collect();
        all.sort_by_key(|ev| ev.time);
        fmt::write_events(create(p)?, &all).map_err(e)?;
    }
    if let Some(p) = &c.output.snapshot {
        fmt::write_snapshot(create(p)?, &o.report.chips).map_err(e)?;
    }
    o.metrics
        .write_csv(output(c.output.metrics.as_deref())?)
        .map_err(e)
}

fn run(cli: Cli) -> Res<ExitCode> {
    match cli.cmd {
        Cmd::Simulate {
            cfg,
            events,
            metrics,
            snapshot,
            print_config,
        } => {
            let mut c = load(&cfg)?;
            c.output.event_log = events.or(c.output.event_log);
            c.output.metrics = metrics.or(c.output.metrics);
            c.output.snapshot = snapshot.or(c.output.snapshot);
            if print_config {
                print!("{}", c.to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            let o = experiment::run_experiment(&c).map_err(|e| e.to_string())?;
            write_outputs(&c, &o)?;
            let v = o.metrics.violations();
            if v.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for line in v {
                    eprintln!("violation: {line}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Sweep {
            cfg,
            axis,
            values,
            variants,
            out,
        } => {
            let c = load(&cfg)?;
            let axis = Axis::parse(&axis).ok_or_else(|| format!("unknown axis `{axis}`"))?;
            let variants = if variants.is_empty() {
                Variant::defaults(axis)
            } else {
                variants
                    .iter()
                    .map(|v| Variant::parse(v).ok_or_else(|| format!("unknown variant `{v}`")))
                    .collect::<Res<Vec<_>>>()?
            };
            let rows = sweep::run_sweep(axis, &values, &variants, &c);
            sweep::write_sweep(output(out.as_deref())?, axis, &rows).map_err(|e| e.to_string())?;
            let mut failed = false;
            for r in &rows {
                match &r.result {
                    Err(e) => {
                        eprintln!("{} = {} ({}): {e}", axis.as_str(), r.value, r.variant);
                        failed = true;
                    }
                    Ok(m) if !m.violations().is_empty() => {
                        eprintln!(
                            "{} = {} ({}): {}",
                            axis.as_str(),
                            r.value,
                            r.variant,
                            m.violations().join("; ")
                        );
                        failed = true;
                    }
                    Ok(_) => {}
                }
            }
            Ok(if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Cmd::Coverage {
            cfg,
            bank,
            t1,
            t2,
            sample,
            out,
        } => {
            let c = load(&cfg)?;
            let mut chip = chip_for(&c)?;
            let rows = chip.geometry().rows_per_bank();
            let tested: Vec<u32> = match sample {
                Some(k) => sampled_rows(rows, k),
                None => (0..rows).collect(),
            };
            let grid: Vec<_> = t1
                .iter()
                .flat_map(|&a| t2.iter().map(move |&b| (ps(a), ps(b))))
                .collect();
            let reports =
                analysis::coverage_grid(&mut chip, bank, &grid, &tested, &DEFAULT_PATTERNS)
                    .map_err(|e| e.to_string())?;
            for r in &reports {
                if let Some(s) = r.summary() {
                    eprintln!(
                        "t1 {} ns, t2 {} ns: coverage min {:.3} q1 {:.3} median {:.3} q3 {:.3} max {:.3}",
                        r.t1 as f64 / 1000.0,
                        r.t2 as f64 / 1000.0,
                        s.min,
                        s.q1,
                        s.median,
                        s.q3,
                        s.max
                    );
                }
            }
            analysis::write_coverage(output(out.as_deref())?, &reports)
                .map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Threshold {
            cfg,
            bank,
            victims,
            n_rh,
            t1,
            t2,
            out,
        } => {
            let mut c = load(&cfg)?;
            c.chip.n_rh = n_rh;
            let mut chip = chip_for(&c)?;
            let v = analysis::threshold_victims(&chip, victims);
            if v.is_empty() {
                return Err("no victim row has an isolated dummy row".into());
            }
            let r =
                analysis::threshold_table(&mut chip, bank, &v, ps(t1), ps(t2), DEFAULT_PATTERNS[0])
                    .map_err(|e| e.to_string())?;
            eprintln!("mean threshold ratio {:.4}", r.mean_ratio());
            analysis::write_threshold(output(out.as_deref())?, &v, &r)
                .map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ParaSolve {
            n_rh,
            slack,
            target,
            out,
        } => {
            let rows = analysis::para_table(&n_rh, &slack, target).map_err(|e| e.to_string())?;
            analysis::write_para(output(out.as_deref())?, &rows).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
