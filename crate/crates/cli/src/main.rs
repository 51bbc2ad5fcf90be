//! `tempo`: validate models, print influence tables, sample, compute exact
//! posteriors and extend saved sessions.
//!
//! Exit codes: 0 success, 1 invalid input or failed run, 2 usage error.

mod manifest;
mod output;

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tempo_core::dsl::{parse_model, parse_scenario, parse_scenario_fragment};
use tempo_core::{
    exact_posterior, extend, read_session, run_inference, run_trials, validate_model, weight_relevant_set,
    write_session, InferOptions, Model, Proposal, RecordPlan, Scenario, Session,
};

use manifest::RunManifest;
use output::Format;

#[derive(Parser, Debug)]
#[command(name = "tempo", version, about = "Probabilistic temporal reasoning over event scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProposalArg {
    Conditional,
    Prior,
}

impl From<ProposalArg> for Proposal {
    fn from(p: ProposalArg) -> Self {
        match p {
            ProposalArg::Conditional => Proposal::Conditional,
            ProposalArg::Prior => Proposal::Prior,
        }
    }
}

#[derive(clap::Args, Debug)]
struct SamplingArgs {
    /// Number of trials.
    #[arg(long, short = 'n', default_value_t = 10_000)]
    trials: u64,
    /// Base seed; every run must name one.
    #[arg(long)]
    seed: u64,
    /// Worker threads (0 = all cores). Does not affect the output.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = ProposalArg::Conditional)]
    proposal: ProposalArg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model (and optionally a scenario) for structural errors.
    Validate { model: PathBuf, scenario: Option<PathBuf> },
    /// Print the net influence table of one attribute.
    Aggregate {
        model: PathBuf,
        #[arg(long)]
        target: String,
        /// Also print the table derived from the individual rules.
        #[arg(long)]
        from_rules: bool,
    },
    /// Dump raw trials.
    Simulate {
        model: PathBuf,
        scenario: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Posterior of every query by sequential importance sampling.
    Infer {
        model: PathBuf,
        scenario: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Write the session for later extension.
        #[arg(long)]
        save: Option<PathBuf>,
        /// Report wall time (makes the output run-dependent).
        #[arg(long)]
        timing: bool,
        /// Write a run manifest with the output checksum.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Exact posterior of every query (feed-forward models only).
    Exact {
        model: PathBuf,
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Continue a saved session through further events and observations.
    Extend {
        session: PathBuf,
        /// Scenario fragment with the new timeline entries and queries.
        extension: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(long)]
        save: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
}

/// A failure reported on stderr with exit code 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<(Model, String), Failure> {
    let text = read_text(path)?;
    let model = parse_model::<f64>(&text).map_err(|e| Failure(format!("{}:{e}", path.display())))?;
    let report = validate_model(&model);
    if !report.is_valid() {
        let lines: Vec<String> = report
            .violations
            .iter()
            .map(|v| format!("{}:{v}", path.display()))
            .collect();
        return Err(Failure(lines.join("\n")));
    }
    Ok((model, text))
}

fn load_scenario(path: &Path, model: &Model) -> Result<(Scenario, String), Failure> {
    let text = read_text(path)?;
    let sc = parse_scenario(&text, model).map_err(|e| Failure(format!("{}:{e}", path.display())))?;
    Ok((sc, text))
}

fn emit(out: &str) -> Outcome {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    lock.write_all(out.as_bytes())?;
    lock.flush()?;
    Ok(())
}

fn save_session(session: &Session<f64>, path: &Path) -> Outcome {
    let file = fs::File::create(path).map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_session(session, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate { model, scenario } => {
            let (m, _) = load_model(&model)?;
            let mut line = format!(
                "{}: ok ({} attributes, {} events, {} influence rules)\n",
                model.display(),
                m.attributes.len(),
                m.events.len(),
                m.rules.len()
            );
            if let Some(path) = scenario {
                let (sc, _) = load_scenario(&path, &m)?;
                line.push_str(&format!(
                    "{}: ok ({} events, {} queries)\n",
                    path.display(),
                    sc.timeline.len(),
                    sc.queries.len()
                ));
            }
            emit(&line)
        }
        Command::Aggregate {
            model,
            target,
            from_rules,
        } => {
            let (m, _) = load_model(&model)?;
            let attr = m
                .attr(&target)
                .ok_or_else(|| Failure(format!("{}: no attribute `{target}`", model.display())))?;
            emit(&output::aggregate_tables(&m, attr, from_rules)?)
        }
        Command::Simulate {
            model,
            scenario,
            sampling,
            format,
        } => {
            let (m, _) = load_model(&model)?;
            let (sc, _) = load_scenario(&scenario, &m)?;
            let mut pairs: Vec<_> = sc.queries.iter().map(|q| (q.attr, q.time)).collect();
            pairs.extend(weight_relevant_set(&m, &sc).pairs);
            let plan = RecordPlan::new(&m, &sc, &pairs)?;
            let trials = run_trials(
                &m,
                &sc,
                &plan,
                sampling.proposal.into(),
                sampling.trials,
                sampling.seed,
                sampling.workers,
            )?;
            emit(&output::trials(&m, &sc, &plan, &trials, format))
        }
        Command::Infer {
            model,
            scenario,
            sampling,
            format,
            save,
            timing,
            manifest,
        } => {
            let (m, model_text) = load_model(&model)?;
            let (sc, scenario_text) = load_scenario(&scenario, &m)?;
            let options = InferOptions {
                trials: sampling.trials,
                seed: sampling.seed,
                proposal: sampling.proposal.into(),
                workers: sampling.workers,
            };
            let (session, report) = run_inference(&m, &sc, options)?;
            if !report.compatible {
                eprintln!("warning: no compatible trials; every trial contradicts an observation");
            }
            let out = output::report(&report, format, Some(options.proposal), timing);
            emit(&out)?;
            if let Some(path) = save {
                save_session(&session, &path)?;
            }
            if let Some(path) = manifest {
                let mut flags = vec![
                    format!("format={}", format.as_str()),
                    format!("proposal={}", options.proposal.as_str()),
                ];
                if timing {
                    flags.push("timing".into());
                }
                RunManifest::new("infer", &model, &model_text, Some((&scenario, &scenario_text)))
                    .with_sampling(options.seed, options.trials)
                    .with_flags(flags)
                    .finish(&out)
                    .write(&path)?;
            }
            Ok(())
        }
        Command::Exact {
            model,
            scenario,
            format,
            manifest,
        } => {
            let (m, model_text) = load_model(&model)?;
            let (sc, scenario_text) = load_scenario(&scenario, &m)?;
            let report = exact_posterior(&m, &sc)?;
            if !report.compatible {
                eprintln!("warning: the observations have probability zero");
            }
            let out = output::report(&report, format, None, false);
            emit(&out)?;
            if let Some(path) = manifest {
                RunManifest::new("exact", &model, &model_text, Some((&scenario, &scenario_text)))
                    .with_flags(vec![format!("format={}", format.as_str())])
                    .finish(&out)
                    .write(&path)?;
            }
            Ok(())
        }
        Command::Extend {
            session,
            extension,
            workers,
            format,
            save,
            timing,
        } => {
            let file = fs::File::open(&session)
                .map_err(|e| Failure(format!("cannot read {}: {e}", session.display())))?;
            let loaded: Session<f64> =
                read_session(BufReader::new(file)).map_err(|e| Failure(format!("{}: {e}", session.display())))?;
            let text = read_text(&extension)?;
            let fragment = parse_scenario_fragment(&text, &loaded.model)
                .map_err(|e| Failure(format!("{}:{e}", extension.display())))?;
            let (extended, report) = extend(&loaded, &fragment, workers)?;
            if !report.compatible {
                eprintln!("warning: no compatible trials; every trial contradicts an observation");
            }
            emit(&output::report(&report, format, Some(extended.proposal), timing))?;
            if let Some(path) = save {
                save_session(&extended, &path)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
