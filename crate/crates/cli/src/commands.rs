use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rpdi_gateway::{MockOptions, MockUpstream};
use rpdi_tracelab::analytics::write_frequency_csv;
use rpdi_tracelab::{
    entropy_contribution_bins, fixed_budget_policy, synth_named, top_contributor_tokens, PreparedTrace, SweepGrid,
    Trace,
};

use crate::error::CliError;
use crate::settings::{Overrides, Settings};
use crate::{Cli, Command};

/// Words listed on stdout by `analyze`; the CSV has all of them.
const SHOWN_WORDS: usize = 10;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn trace_err(path: &Path) -> impl FnOnce(rpdi_tracelab::TraceError) -> CliError + '_ {
    move |source| CliError::Trace {
        path: path.display().to_string(),
        source,
    }
}

/// Expands directories into their `*.jsonl` files, sorted.
fn trace_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_traces(inputs: &[PathBuf]) -> Result<Vec<Trace>, CliError> {
    trace_paths(inputs)?
        .iter()
        .map(|p| Trace::read(p).map_err(trace_err(p)))
        .collect()
}

/// Writer for `path`, or `fallback` when absent.
fn output<'a>(path: Option<&'a Path>, fallback: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?))),
        None => Ok(Box::new(fallback)),
    }
}

/// Runs one invocation. `env` supplies environment variables; regular
/// output goes to `out`, per-item diagnostics to `err`.
pub fn run(
    cli: Cli,
    env: &(dyn Fn(&str) -> Option<String> + Sync),
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| dispatch(cli, env, out, err)),
        None => dispatch(cli, env, out, err),
    }
}

fn dispatch(
    cli: Cli,
    env: &(dyn Fn(&str) -> Option<String> + Sync),
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let settings = |o: Overrides| Settings::resolve(cli.config.as_deref(), env, &o);
    let w = |e: std::io::Error| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match &cli.command {
        Command::Serve {
            policy,
            server,
            skip_health_check,
        } => {
            let s = settings(server.with(policy.overrides()))?;
            let mut config = s.gateway_config()?;
            config.skip_health_check |= *skip_health_check;
            init_tracing();
            runtime()?.block_on(rpdi_gateway::serve(config, shutdown_signal()))?;
            Ok(())
        }
        Command::Replay {
            traces,
            policy,
            json,
            series,
        } => {
            let s = settings(policy.overrides())?;
            let traces = load_traces(traces)?;
            if series.is_some() && traces.len() != 1 {
                return Err(CliError::Config("--series needs exactly one trace".into()));
            }
            for t in &traces {
                let r = PreparedTrace::new(t)?.replay(&s.policy)?;
                if *json {
                    writeln!(out, "{}", serde_json::to_string(&r).expect("result serializes")).map_err(w)?;
                } else {
                    writeln!(out, "{}\t{}", r.name, r.tuple()).map_err(w)?;
                }
                if let Some(path) = series {
                    let mut f = output(Some(path), out)?;
                    writeln!(f, "step,entropy,ltf,gtf,rpdi,evaluated").map_err(io_err(path))?;
                    for m in &r.series {
                        let rpdi = m.rpdi.map(|v| v.to_string()).unwrap_or_default();
                        writeln!(f, "{},{},{},{},{},{}", m.step, m.entropy, m.ltf, m.gtf, rpdi, m.evaluated)
                            .map_err(io_err(path))?;
                    }
                    f.flush().map_err(io_err(path))?;
                }
            }
            Ok(())
        }
        Command::Sweep {
            traces,
            lambdas,
            windows,
            variants,
            base,
            out: path,
        } => {
            let mut o = base.overrides();
            // the grid supplies W; the base policy only has to be valid
            o.window = windows.iter().copied().min();
            o.threshold = lambdas.first().copied();
            let s = settings(o)?;
            let variants = if variants.is_empty() { vec![s.policy.variant] } else { variants.clone() };
            let prepared = load_traces(traces)?
                .iter()
                .map(PreparedTrace::new)
                .collect::<Result<Vec<_>, _>>()?;
            let grid = SweepGrid::new(windows.clone(), lambdas.clone(), variants);
            let result = rpdi_tracelab::sweep(&prepared, &grid, &s.policy)?;
            let mut f = output(path.as_deref(), out)?;
            result.write_csv(&mut f)?;
            Ok(())
        }
        Command::Analyze {
            traces,
            bins,
            top_fraction,
            bottom,
            fixed_budgets,
            out_dir,
        } => {
            let traces = load_traces(traces)?;
            let (report, words) = rayon::join(
                || entropy_contribution_bins(&traces, *bins),
                || top_contributor_tokens(&traces, *top_fraction),
            );
            let (report, words) = (report?, words?);
            writeln!(out, "traces {}  thinking tokens {}  total entropy {:.6} nats", traces.len(), report.tokens, report.total_entropy)
                .map_err(w)?;
            if report.all_zero {
                writeln!(out, "no thinking token has positive entropy").map_err(w)?;
            } else {
                writeln!(
                    out,
                    "lowest {} of {} bins hold {:.4}% of the entropy",
                    bottom.min(bins),
                    bins,
                    100.0 * report.bottom_share(*bottom)
                )
                .map_err(w)?;
            }
            writeln!(out, "most frequent words among the top {}% highest-entropy tokens:", 100.0 * top_fraction).map_err(w)?;
            for f in words.iter().take(SHOWN_WORDS) {
                writeln!(out, "  {:<16} {}", f.token, f.count).map_err(w)?;
            }
            let tables = fixed_budgets
                .iter()
                .map(|&b| fixed_budget_policy(&traces, b))
                .collect::<Result<Vec<_>, _>>()?;
            for t in &tables {
                let cut = t.rows.iter().filter(|r| r.truncated).count();
                writeln!(
                    out,
                    "fixed budget {}: {} of {} traces truncated ({:.1}%)",
                    t.budget,
                    cut,
                    t.rows.len(),
                    100.0 * t.truncation_rate()
                )
                .map_err(w)?;
            }
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                let file = |name: &str| {
                    let p = dir.join(name);
                    File::create(&p).map(BufWriter::new).map_err(|source| CliError::Io {
                        path: p.display().to_string(),
                        source,
                    })
                };
                report.write_csv(file("bins.csv")?)?;
                write_frequency_csv(&words, file("top_tokens.csv")?)?;
                let mut csv = file("fixed_budget.csv")?;
                let p = dir.join("fixed_budget.csv");
                writeln!(csv, "budget,trace,thinking_length,truncated,stop_step").map_err(io_err(&p))?;
                for t in &tables {
                    for r in &t.rows {
                        writeln!(csv, "{},{},{},{},{}", t.budget, r.trace, r.thinking_length, r.truncated, r.stop_step)
                            .map_err(io_err(&p))?;
                    }
                }
                csv.flush().map_err(io_err(&p))?;
            }
            Ok(())
        }
        Command::Synth {
            profile,
            length,
            out: path,
        } => {
            let trace = synth_named(profile, cli.seed, *length)?;
            let mut f = output(path.as_deref(), out)?;
            let target = path.as_deref().unwrap_or(Path::new("<stdout>"));
            trace.write_to(&mut f).map_err(trace_err(target))?;
            Ok(())
        }
        Command::ValidateTrace { traces } => {
            let mut bad = 0;
            for p in trace_paths(traces)? {
                match Trace::read(&p) {
                    Ok(t) => writeln!(out, "ok\t{}\t{} records", p.display(), t.len()).map_err(w)?,
                    Err(source) => {
                        bad += 1;
                        let e = CliError::Trace {
                            path: p.display().to_string(),
                            source,
                        };
                        writeln!(err, "{}", e.line()).map_err(w)?;
                    }
                }
            }
            if bad > 0 {
                return Err(CliError::InvalidTraces(bad));
            }
            Ok(())
        }
        Command::MockUpstream {
            traces,
            bind,
            omit_logprobs,
        } => {
            let traces = load_traces(traces)?;
            let addr = bind
                .parse()
                .map_err(|e| CliError::Config(format!("bind {bind:?}: {e}")))?;
            init_tracing();
            let options = MockOptions {
                omit_logprobs: *omit_logprobs,
                ..MockOptions::default()
            };
            runtime()?.block_on(async {
                let names: Vec<String> = traces.iter().map(|t| t.name.clone()).collect();
                let mock = MockUpstream::bind(addr, traces, options).await.map_err(io_err(Path::new(bind)))?;
                tracing::info!(addr = %mock.addr, models = ?names, "mock upstream listening");
                shutdown_signal().await;
                mock.shutdown().await;
                Ok::<_, CliError>(())
            })
        }
        Command::Config { policy, server } => {
            let s = settings(server.with(policy.overrides()))?;
            write!(out, "{}", s.to_toml()).map_err(w)?;
            Ok(())
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: "<runtime>".into(),
            source,
        })
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}
