use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use nnbound::bab::{BabConfig, Bounding};
use nnbound::branching::Branching;
use nnbound::experiments::{
    cactus, load_problems, run_complete, run_incomplete, write_csv, Method, RunOptions, Timing, CACTUS_HEADER,
    COMPLETE_HEADER, INCOMPLETE_HEADER,
};
use nnbound::instances::{tiny_suite, InstanceShape};
use nnbound::network::VerificationProperty;
use nnbound::propagation::IbStrategy;
use nnbound::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nnbound",
    version,
    about = "Bounds and branch-and-bound verification for ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Badnb,
    Babsr,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundingArg {
    Simplex,
    Proximal,
    Supergradient,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchingArg {
    Sr,
    Fsb,
}

#[derive(Clone, Copy, ValueEnum)]
enum IbArg {
    /// IBP and WK, recomputed after every split.
    IbpWk,
    /// WK and CROWN at the root only.
    WkCrown,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Tiny,
    Desk,
}

#[derive(clap::Args)]
struct Common {
    /// Directory holding the model JSON files.
    #[arg(long)]
    models: PathBuf,
    /// Properties JSON file.
    #[arg(long)]
    props: PathBuf,
    /// Seed for any sampling; runs are reproducible given the seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process properties concurrently (rows stay in input order).
    #[arg(long)]
    parallel: bool,
    /// Report every time as 0 so that output is byte-reproducible.
    #[arg(long)]
    deterministic_timing: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            timing: if self.deterministic_timing {
                Timing::Zero
            } else {
                Timing::Wall
            },
            parallel: self.parallel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compare lower bounds of several methods at several iteration budgets.
    Incomplete {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: ibp, wk, crown, dsg+, dec-dsg+, supergradient, proximal, simplex.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "ibp,wk,crown,dsg+,dec-dsg+,supergradient,proximal,simplex"
        )]
        methods: Vec<String>,
        /// Comma-separated iteration budgets for iterative methods.
        #[arg(long, value_delimiter = ',', default_value = "100")]
        budgets: Vec<usize>,
    },
    /// Decide properties with branch and bound.
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "badnb")]
        preset: Preset,
        /// Per-property time limit in seconds.
        #[arg(long)]
        timeout_s: Option<f64>,
        /// Override the bounding algorithm.
        #[arg(long, value_enum)]
        bounding: Option<BoundingArg>,
        /// Override the branching heuristic.
        #[arg(long, value_enum)]
        branching: Option<BranchingArg>,
        /// Override the intermediate-bound strategy.
        #[arg(long, value_enum)]
        ib: Option<IbArg>,
        /// Subproblems branched per round.
        #[arg(long)]
        batch: Option<usize>,
        /// Comma-separated iteration ladder for dual bounding.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        /// Stop after this many bounded subproblems per functional.
        #[arg(long)]
        max_subproblems: Option<usize>,
    },
    /// Write a seeded suite of random models and properties.
    GenSuite {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, value_enum, default_value = "tiny")]
        shape: ShapeArg,
        /// Output directory; receives models/ and props.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Incomplete {
            common,
            methods,
            budgets,
        } => {
            let methods = methods
                .iter()
                .map(|m| m.trim().parse::<Method>())
                .collect::<Result<Vec<_>>>()?;
            let problems = load_problems(&common.models, &common.props)?;
            let rows = run_incomplete(&problems, &methods, &budgets, common.options())?;
            write_csv(&rows, &INCOMPLETE_HEADER, open_out(common.out.as_deref())?)
        }
        Command::Complete {
            common,
            preset,
            timeout_s,
            bounding,
            branching,
            ib,
            batch,
            ladder,
            max_subproblems,
        } => {
            let (name, mut cfg) = match preset {
                Preset::Badnb => ("badnb", BabConfig::badnb()),
                Preset::Babsr => ("babsr", BabConfig::babsr()),
                Preset::Custom => ("custom", BabConfig::badnb()),
            };
            if let Some(b) = bounding {
                cfg.bounding = match b {
                    BoundingArg::Simplex => Bounding::Simplex,
                    BoundingArg::Proximal => Bounding::Proximal,
                    BoundingArg::Supergradient => Bounding::Supergradient,
                };
            }
            if let Some(b) = branching {
                cfg.branching = match b {
                    BranchingArg::Sr => Branching::Sr,
                    BranchingArg::Fsb => Branching::Fsb,
                };
            }
            if let Some(s) = ib {
                (cfg.intermediate.strategy, cfg.intermediate.per_split) = match s {
                    IbArg::IbpWk => (IbStrategy::IbpWk, true),
                    IbArg::WkCrown => (IbStrategy::WkCrown, false),
                };
            }
            if let Some(b) = batch {
                cfg.batch = b;
            }
            if let Some(l) = ladder {
                cfg.ladder = l;
            }
            if let Some(t) = timeout_s {
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::Parse(format!("invalid timeout {t}")));
                }
                cfg.timeout = Some(Duration::from_secs_f64(t));
            }
            cfg.max_subproblems = max_subproblems;
            cfg.validate()?;
            let problems = load_problems(&common.models, &common.props)?;
            let rows = run_complete(&problems, name, &cfg, common.options())?;
            write_csv(&rows, &COMPLETE_HEADER, open_out(common.out.as_deref())?)?;
            if let Some(out) = &common.out {
                let mut path = out.clone().into_os_string();
                path.push(".cactus.csv");
                let path = PathBuf::from(path);
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_csv(&cactus(&rows), &CACTUS_HEADER, file)?;
            }
            Ok(())
        }
        Command::GenSuite {
            seed,
            count,
            shape,
            out,
        } => {
            let shape = match shape {
                ShapeArg::Tiny => InstanceShape::tiny(),
                ShapeArg::Desk => InstanceShape::desk(),
            };
            let suite = tiny_suite(seed, count, &shape)?;
            let models = out.join("models");
            std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
            for e in &suite {
                write_file(&models.join(&e.model_name), &e.net.to_json())?;
            }
            let props: Vec<VerificationProperty> = suite.into_iter().map(|e| e.property).collect();
            write_file(&out.join("props.json"), &VerificationProperty::list_to_json(&props))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
