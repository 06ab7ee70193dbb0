use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hsi_unfold::pipeline::{cmd_baseline, cmd_eval, cmd_fuse, cmd_simulate, cmd_train, RunConfig};
use hsi_unfold::selftest;
use hsi_unfold::tensor::Fault;

#[derive(Parser)]
#[command(name = "hsi-unfold", version, about = "Hyperspectral/multispectral fusion with an unfolded network")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Conv2dWeightGrad,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade reference cubes into (HR-MSI, LR-HSI, truth) triples.
    Simulate,
    /// Train the network on a simulated manifest.
    Train,
    /// Score a checkpoint on the held-out scenes.
    Eval,
    /// Fuse one scene with a checkpoint.
    Fuse,
    /// Run the classical proximal-gradient solver.
    Baseline,
    /// Gradchecks, adjoint tests, oracle equivalences and metric identities.
    Selftest {
        /// Corrupt one backward rule to see the checks catch it.
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
    /// Only the finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
}

fn build_config(cli: &Cli) -> hsi_unfold::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| hsi_unfold::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.set("out", &o.display().to_string())?;
    }
    if let Some(p) = cli.precision {
        cfg.set("precision", if matches!(p, PrecisionArg::Single) { "single" } else { "double" })?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> hsi_unfold::Result<bool> {
    let fault = |f: &Option<FaultArg>| f.map(|FaultArg::Conv2dWeightGrad| Fault::Conv2dWeightGrad);
    match &cli.command {
        Command::Selftest { fault: f } => {
            let rep = selftest::run(fault(f));
            print!("{}", rep.render());
            return Ok(rep.passed());
        }
        Command::Gradcheck { fault: f } => {
            let rep = selftest::run_gradchecks(fault(f));
            print!("{}", rep.render());
            return Ok(rep.passed());
        }
        _ => {}
    }
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Simulate => {
            let m = cmd_simulate(&cfg)?;
            println!("wrote {} scenes to {}", m.scenes.len(), cfg.out.join("manifest.txt").display());
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            if let Some((step, loss)) = s.losses.last() {
                println!("step {step} loss {loss:.6}");
            }
            println!("final eval PSNR {:.4} dB, best {:.4} dB", s.final_score, s.best_score);
        }
        Command::Eval => print!("{}", cmd_eval(&cfg)?.render_text()),
        Command::Fuse => {
            let x = cmd_fuse(&cfg)?;
            println!("fused {}x{}x{} into {}", x.width(), x.height(), x.bands(), cfg.out.display());
        }
        Command::Baseline => {
            let (table, sols) = cmd_baseline(&cfg)?;
            for (id, s) in &sols {
                println!("{id}: {} iterations, eta {:.4e}, converged {}", s.iterations, s.eta, s.converged);
            }
            print!("{}", table.render_text());
        }
        Command::Selftest { .. } | Command::Gradcheck { .. } => unreachable!("handled above"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
