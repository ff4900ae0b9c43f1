use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clstm::autodiff::Fault;
use clstm::cells::CellKind;
use clstm::commands::{
    cmd_convert, cmd_eval, cmd_gradcheck, cmd_sweep, cmd_synth, cmd_train, exit_code, GradcheckOptions, SynthOptions,
    GRADCHECK_TOLERANCE,
};
use clstm::config::RunConfig;
use clstm::data::ConvertOptions;
use clstm::Error;

#[derive(Parser)]
#[command(name = "clstm", version, about = "Cached LSTM document classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set train.seed=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Score a saved model on a corpus and write its length-decile report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "deciles.csv")]
        deciles: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Compare tape gradients with finite differences on a small instance.
    Gradcheck {
        #[arg(long, default_value = "clstm")]
        cell: CellKind,
        #[arg(long, default_value_t = 4)]
        input_dim: usize,
        #[arg(long, default_value_t = 6)]
        hidden: usize,
        /// Memory groups; defaults to 3 for clstm and 1 otherwise.
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        bidirectional: bool,
        #[arg(long)]
        no_bias: bool,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale the sigmoid derivative in the backward pass (harness self-test).
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
    /// Best dev accuracy for each number of memory groups.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        groups: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write the synthetic long-range needle task.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        length: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        noise_vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rewrite an external review corpus as `label<TAB>text` lines.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value = "\t\t")]
        field_sep: String,
        #[arg(long, default_value_t = 2)]
        label_index: usize,
        #[arg(long, default_value_t = 3)]
        text_index: usize,
        /// Rating that maps to label 0.
        #[arg(long, default_value_t = 1)]
        label_offset: i64,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train { config, mut overrides, output_dir, seed, max_epochs, quiet } => {
            if let Some(s) = seed {
                overrides.push(format!("train.seed={s}"));
            }
            if let Some(m) = max_epochs {
                overrides.push(format!("train.max_epochs={m}"));
            }
            let mut cfg = RunConfig::load(&config, &overrides)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let out = cmd_train(&cfg, |line| {
                if !quiet {
                    eprintln!("{line}");
                }
            })?;
            let s = &out.summary;
            println!("best_epoch {}", s.best_epoch);
            println!("dev_acc {:.6}\ndev_mse {:.6}", s.dev.accuracy, s.dev.mse);
            if let Some(t) = &s.test {
                println!("test_acc {:.6}\ntest_mse {:.6}", t.accuracy, t.mse);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { model, corpus, deciles, batch_size } => {
            let out = cmd_eval(&model, &corpus, &deciles, batch_size)?;
            println!("n {}\naccuracy {:.6}\nmse {:.6}", out.metrics.n, out.metrics.accuracy, out.metrics.mse);
            match out.deciles {
                Some(p) => eprintln!("decile report written to {}", p.display()),
                None => eprintln!("fewer than 10 documents; no decile report"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            cell,
            input_dim,
            hidden,
            groups,
            classes,
            steps,
            bidirectional,
            no_bias,
            weight_decay,
            scale,
            eps,
            seed,
            inject_fault,
        } => {
            let opts = GradcheckOptions {
                cell_kind: cell,
                input_dim,
                hidden,
                groups: groups.unwrap_or(if cell == CellKind::Clstm { 3 } else { 1 }),
                classes,
                steps,
                bidirectional,
                use_bias: !no_bias,
                weight_decay,
                scale,
                eps,
                seed,
                fault: inject_fault.map(Fault::SigmoidGradScale),
            };
            let check = cmd_gradcheck(&opts)?;
            println!("entries {}", check.entries);
            println!("max_relative_error {:e}", check.max_rel_error);
            println!("forward_gap {:e}", check.forward_gap);
            if check.max_rel_error < GRADCHECK_TOLERANCE {
                println!("PASS");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("FAIL");
                Ok(ExitCode::from(1))
            }
        }
        Command::Sweep { config, groups, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let report = cmd_sweep(&cfg, &groups)?;
            for (k, why) in &report.skipped {
                eprintln!("warning: skipped K={k}: {why}");
            }
            print!("{}", report.to_csv()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { out_dir, docs, length, classes, noise_vocab, seed } => {
            let opts = SynthOptions { docs, length, classes, noise_vocab, seed };
            let (train, dev) = cmd_synth(&opts, &out_dir)?;
            println!("train {train}\ndev {dev}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Convert { input, output, classes, field_sep, label_index, text_index, label_offset } => {
            let opts = ConvertOptions {
                field_sep,
                label_index,
                text_index,
                label_offset,
                classes,
            };
            let n = cmd_convert(&input, &output, &opts)?;
            println!("documents {n}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
