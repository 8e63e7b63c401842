use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sleepnet::dccn::DccnConfig;
use sleepnet::env::{Learner, Scheme};
use sleepnet::harness::{self, selftest, ExperimentConfig, SweepParam};

#[derive(Parser, Debug)]
#[command(name = "sleepnet", version, about = "Sleep-mode, zooming and RIS control experiments", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one scheme and write checkpoints plus a manifest.
    Train {
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seeds; defaults to the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate checkpoints listed in a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate several schemes over a range of one traffic parameter.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "AA,PZ,PS,PSZ,PSZR,DSZR")]
        schemes: Vec<String>,
        /// `SCHEME=PATH` manifest for a learned scheme; repeatable.
        #[arg(long)]
        checkpoint: Vec<String>,
        /// Train learned schemes that have no checkpoint.
        #[arg(long)]
        train: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the trained phase optimizer with exhaustive search.
    OracleRis {
        #[arg(long)]
        elements: usize,
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        channels: usize,
        #[arg(long, default_value_t = 2000)]
        train_channels: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Selftest,
}

fn load(config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => Ok(harness::load_config(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    Scheme::parse(s).with_context(|| {
        let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
        format!("unknown scheme `{s}`; expected one of {}", names.join(", "))
    })
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map_or_else(|| cfg.resolved_output_dir(), |p| harness::resolve_output(&p))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { scheme, config, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = scheme {
                cfg.scheme = parse_scheme(&s)?;
            }
            let seeds = if seed.is_empty() { cfg.seeds.clone() } else { seed };
            let dir = out_dir(out, &cfg);
            let (manifest, _) = harness::train_to_dir(&cfg, &seeds, &dir)?;
            println!("trained {} for seeds {:?}; manifest in {}", manifest.scheme, manifest.seeds, dir.display());
        }
        Command::Eval { checkpoint, config, out } => {
            let cfg = load(config.as_deref())?;
            let models = if cfg.scheme.learner() == Learner::None {
                BTreeMap::from([(0, harness::untrained(cfg.scheme, 0)?)])
            } else {
                harness::load_from_manifest(&checkpoint, &cfg)?
            };
            let (rows, summaries) = harness::run_scheme(&cfg, &models)?;
            let dir = out_dir(out, &cfg);
            let path = dir.join(format!("results_{}.csv", cfg.scheme));
            harness::write_results_csv(&path, &cfg.hash(), &rows)?;
            for s in &summaries {
                println!("{} seed {}: {:.6} J, violation rate {:.4}", s.scheme, s.seed, s.energy_j(), s.violation_rate());
            }
            println!("rows written to {}", path.display());
        }
        Command::Sweep { param, values, config, schemes, checkpoint, train, out } => {
            let cfg = load(config.as_deref())?;
            let param = SweepParam::parse(&param)
                .with_context(|| format!("unknown sweep parameter `{param}`; expected packet_size, mean_interarrival or user_count"))?;
            let mut manifests = BTreeMap::new();
            for entry in &checkpoint {
                let (s, p) = entry.split_once('=').with_context(|| format!("expected SCHEME=PATH, got `{entry}`"))?;
                manifests.insert(parse_scheme(s)?, PathBuf::from(p));
            }
            let mut models = BTreeMap::new();
            for s in &schemes {
                let scheme = parse_scheme(s)?;
                let scfg = ExperimentConfig { scheme, ..cfg.clone() };
                let per_seed = if scheme.learner() == Learner::None {
                    BTreeMap::from([(0, harness::untrained(scheme, 0)?)])
                } else if let Some(p) = manifests.get(&scheme) {
                    harness::load_from_manifest(p, &scfg)?
                } else if train {
                    scfg.seeds.iter().map(|&k| Ok((k, harness::train_model(&scfg, k, None)?))).collect::<Result<_>>()?
                } else {
                    bail!("no checkpoint for {scheme}; pass --checkpoint {scheme}=PATH or --train");
                };
                models.insert(scheme, per_seed);
            }
            let rows = harness::sweep(&cfg, param, &values, &models)?;
            let dir = out_dir(out, &cfg);
            let path = dir.join(format!("sweep_{}.csv", param.name()));
            harness::write_sweep_csv(&path, &cfg.hash(), &rows)?;
            for (v, s, e) in harness::sweep_medians(&rows) {
                println!("{}={v} {s}: median {e:.6} J", param.name());
            }
            println!("rows written to {}", path.display());
        }
        Command::OracleRis { elements, bits, channels, train_channels, seed, out } => {
            let dcfg = DccnConfig { train_channels, ..DccnConfig::default() };
            let rows = harness::oracle_ris(elements, bits, channels, &dcfg, seed)?;
            let tag = format!("oracle-ris elements={elements} bits={bits} channels={channels} train_channels={train_channels} seed={seed}");
            match out {
                Some(p) => {
                    let p = harness::resolve_output(&p);
                    harness::write_oracle_csv(&p, &tag, &rows)?;
                    println!("rows written to {}", p.display());
                }
                None => {
                    println!("oracle_capacity,dccn_capacity");
                    for r in &rows {
                        println!("{},{}", r.oracle_capacity, r.dccn_capacity);
                    }
                }
            }
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                if r.passed {
                    println!("PASS {}", r.name);
                } else {
                    println!("FAIL {}: {}", r.name, r.detail);
                }
            }
            if results.iter().any(|r| !r.passed) {
                bail!("selftest failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
