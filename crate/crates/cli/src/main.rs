use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use streamnav::harness::{
    cmd_ablate, cmd_eval, cmd_mask_dump, cmd_train, mask_dump_path, parse_config, write_output, HarnessError,
    MaskDumpLayout, MaskFormat, RunConfig,
};
use streamnav::layout::{MaskVariant, QuerySelfAttention};

#[derive(Parser)]
#[command(name = "streamnav", version, about = "Streaming instruction-following agent on a toy gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `run.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoint.bin and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Evaluate a checkpoint (or the expert) and write eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Drive the episodes with the shortest-path expert.
        #[arg(long)]
        expert: bool,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Train and evaluate every mask / latent-loss cell over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write attention masks for a synthetic layout.
    MaskDump {
        #[command(flatten)]
        common: Common,
        /// Dump one variant instead of all three.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long, value_enum, default_value = "ascii")]
        format: Format,
        #[arg(long, default_value_t = 2)]
        turns: usize,
        #[arg(long, default_value_t = 3)]
        instruction: usize,
        #[arg(long, default_value_t = 2)]
        memory: usize,
        #[arg(long, default_value_t = 4)]
        ctxt: usize,
        /// Query tokens per modality; 0 leaves queries out.
        #[arg(long, default_value_t = 2)]
        queries: usize,
        /// Let query tokens of one modality attend causally to each other.
        #[arg(long, value_enum, default_value = "causal")]
        query_self_attention: QuerySelf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Strict,
    Leaky,
    Noiso,
}

impl Variant {
    fn mask(self) -> MaskVariant {
        match self {
            Variant::Strict => MaskVariant::Strict,
            Variant::Leaky => MaskVariant::Leaky,
            Variant::Noiso => MaskVariant::NoIsolation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Pgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuerySelf {
    Causal,
    Isolated,
}

enum Failure {
    Harness(HarnessError),
    Other(anyhow::Error, i32),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

fn load_config(common: &Common, variant: Option<Variant>) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| Failure::Other(e, 2))?;
            parse_config(&text).map_err(HarnessError::from)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(v) = variant {
        cfg.policy.variant = v.mask().name().to_string();
    }
    cfg.validate().map_err(HarnessError::from)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out));
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| Failure::Other(e, 1))?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { common, variant } => {
            let (cfg, out) = load_config(&common, variant)?;
            let every = (cfg.train.steps / 20).max(1);
            let outcome = cmd_train(&cfg, &out, |log| {
                if log.step % every == 0 || log.step + 1 == cfg.train.steps {
                    eprintln!("step {:>5}  loss {:.5}  nav {:.5}", log.step, log.loss.total, log.loss.nav);
                }
            })?;
            if outcome.skipped > 0 {
                eprintln!("skipped {} unsolvable training maps", outcome.skipped);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            common,
            checkpoint,
            expert,
            variant,
        } => {
            let (cfg, out) = load_config(&common, variant)?;
            let rows = cmd_eval(&cfg, checkpoint.as_deref(), expert, &out)?;
            print!("{}", streamnav::harness::metrics_csv(&rows));
        }
        Command::Ablate { common } => {
            let (cfg, out) = load_config(&common, None)?;
            let rows = cmd_ablate(&cfg, &out, |msg| eprintln!("{msg}"))?;
            print!("{}", streamnav::harness::ablation_csv(&rows));
        }
        Command::MaskDump {
            common,
            variant,
            format,
            turns,
            instruction,
            memory,
            ctxt,
            queries,
            query_self_attention,
        } => {
            let (_, out) = load_config(&common, None)?;
            let layout = MaskDumpLayout {
                turns,
                instruction,
                memory,
                ctxt,
                queries,
            };
            let format = match format {
                Format::Ascii => MaskFormat::Ascii,
                Format::Pgm => MaskFormat::Pgm,
            };
            let within = match query_self_attention {
                QuerySelf::Causal => QuerySelfAttention::Causal,
                QuerySelf::Isolated => QuerySelfAttention::Isolated,
            };
            let variants = match variant {
                Some(v) => vec![v.mask()],
                None => MaskVariant::ALL.to_vec(),
            };
            for v in variants {
                let text = cmd_mask_dump(layout, v, within, format).map_err(|e| match e {
                    HarnessError::Policy(p) => Failure::Other(anyhow::anyhow!("bad layout: {p}"), 2),
                    other => Failure::Harness(other),
                })?;
                let path = mask_dump_path(&out, v, format);
                write_output(&path, &text)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Other(e, code)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
