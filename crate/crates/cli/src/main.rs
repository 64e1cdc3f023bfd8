use std::path::PathBuf;
use std::process::ExitCode;

use afferentsim_cli::{cmd_fit, cmd_mesh, cmd_simulate, cmd_validate, exit_code, RunConfig};
use anyhow::Context as _;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "afferentsim",
    version,
    about = "Tactile afferent simulator: skin FEM plus SA/RA/PC spiking models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// appendixA, appendixB, appendixC or a protocol JSON file.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the mesh and write it to <out>/mesh.txt.
    Mesh(Common),
    /// Run FEM and the neural models over a protocol.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Observed rates CSV to pair with the predictions.
        #[arg(long)]
        observed: Option<PathBuf>,
    },
    /// Fit neural parameters to observed firing rates.
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns afferent,freq_hz,amplitude_um,rate_ips.
        #[arg(long)]
        observed: PathBuf,
    },
    /// Static probe indentation and surface deflection checks.
    Validate(Common),
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        // Taken relative to the working directory, like any CLI path.
        cfg.output_dir = std::path::absolute(o)?;
    }
    if let Some(p) = &common.protocol {
        cfg.protocol = p.clone();
    }
    Ok(cfg)
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("AFFERENTSIM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("AFFERENTSIM_THREADS=`{v}` is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Mesh(c) => {
            let s = cmd_mesh(&load(&c)?)?;
            println!(
                "mesh: {} nodes, {} elements -> {}",
                s.nodes,
                s.elements,
                s.path.display()
            );
        }
        Command::Simulate { common, observed } => {
            let s = cmd_simulate(&load(&common)?, observed.as_deref())?;
            println!(
                "simulate: {} rate rows, {} FEM runs, {} cache hits -> {}",
                s.records.len(),
                s.cache.fem_runs,
                s.cache.cache_hits,
                s.out.display()
            );
        }
        Command::Fit { common, observed } => {
            let s = cmd_fit(&load(&common)?, &observed)?;
            for f in &s.fitted {
                let params: Vec<String> = f
                    .names
                    .iter()
                    .zip(&f.values)
                    .map(|(n, v)| format!("{n}={v:.6}"))
                    .collect();
                println!(
                    "fit {}: objective sum {:.4} ({})",
                    f.afferent,
                    f.objective_sum,
                    params.join(", ")
                );
            }
            println!("fit outputs -> {}", s.out.display());
        }
        Command::Validate(c) => {
            let r = cmd_validate(&load(&c)?)?;
            let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
            println!(
                "{} max deflection {:.4} mm",
                mark(r.max_deflection_in_range),
                r.max_deflection_mm
            );
            println!("{} monotone decay with distance", mark(r.monotone_decay));
            println!(
                "{} deflection at 5 mm below deflection at 1 mm",
                mark(r.decays_from_1_to_5mm)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
