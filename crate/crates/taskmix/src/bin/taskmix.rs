//! Thin command-line front end over the taskmix library.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use taskmix::config::ExperimentConfig;
use taskmix::report::{emit_report, load_report, render_report_markdown};
use taskmix::runner::{
    compare, prepare_registry, run_experiment, run_multi_task, run_single_task_baselines,
    Baselines, RunnerError, WORKERS_ENV,
};
use taskmix::synth::{generate, generation_companion, paper_shaped_suite, SuitePreset};

#[derive(Parser)]
#[command(
    name = "taskmix",
    about = "Multi-task training-mixture engine",
    after_help = "Set TASKMIX_WORKERS to bound the worker count for parallel runs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scalar overrides shared by the config-driven verbs.
/// Precedence: flags > config file > defaults.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Training seeds, comma-separated (e.g. "1,2,3").
    #[arg(long)]
    seeds: Option<String>,
    /// Total step budget per trained model.
    #[arg(long)]
    step_cap: Option<usize>,
    /// Method kind (instance_balanced, class_balanced, temperature_scaled,
    /// capped_temperature_scaled, two_stage).
    #[arg(long)]
    kind: Option<String>,
    /// Sampling temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Per-task size cap K.
    #[arg(long)]
    cap: Option<usize>,
    /// Taxonomy rule (none, modality_split, ss, bm, bom).
    #[arg(long)]
    rule: Option<String>,
    /// Output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Generator seed for synthetic suites.
    #[arg(long)]
    suite_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task suite (manifest + record files).
    Synth {
        /// Suite preset: clue_like or application_like.
        #[arg(long)]
        preset: SuitePreset2,
        /// Output directory for the suite.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append the preset's generation-like companion task at this
        /// similarity to its reference task (-1 for full conflict).
        #[arg(long)]
        generation_similarity: Option<f64>,
    },
    /// Train single-task baselines and write baselines.json per seed.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the configured multi-task experiment (baselines included).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Reuse baselines from a previous `baseline` run (single-seed).
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-render tables.md from an existing report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Directory for the rendered files (defaults to the input's).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several methods on the same suite and seeds and aggregate.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated method kinds.
        #[arg(long)]
        methods: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// clap-friendly preset wrapper (FromStr on the library enum).
#[derive(Clone, Copy)]
struct SuitePreset2(SuitePreset);

impl std::str::FromStr for SuitePreset2 {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(SuitePreset2)
    }
}

fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) -> Result<(), String> {
    if let Some(seeds) = &o.seeds {
        let parsed: Result<Vec<u64>, _> =
            seeds.split(',').map(|s| s.trim().parse::<u64>()).collect();
        config.run.seeds = parsed.map_err(|e| format!("bad --seeds: {e}"))?;
    }
    if let Some(v) = o.step_cap {
        config.run.step_cap = Some(v);
    }
    if let Some(v) = &o.kind {
        config.method.kind = v.clone();
    }
    if let Some(v) = o.tau {
        config.method.tau = Some(v);
    }
    if let Some(v) = o.cap {
        config.method.cap = Some(v);
    }
    if let Some(v) = &o.rule {
        config.taxonomy.rule = serde_json::from_value(serde_json::Value::String(v.clone()))
            .map_err(|_| format!("unknown taxonomy rule {v:?}"))?;
    }
    if let Some(v) = &o.output_dir {
        config.run.output_dir = v.clone();
    }
    if let Some(v) = o.learning_rate {
        config.trainer.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        config.trainer.batch_size = v;
    }
    if let Some(v) = o.feature_dim {
        config.trainer.feature_dim = v;
    }
    if let Some(v) = o.suite_seed {
        config.data.suite_seed = v;
    }
    Ok(())
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig, i32> {
    let mut config = ExperimentConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        1
    })?;
    apply_overrides(&mut config, overrides).map_err(|e| {
        eprintln!("error: {e}");
        1
    })?;
    config.validate().map_err(|e| {
        eprintln!("error: {e}");
        1
    })?;
    Ok(config)
}

fn runner_exit(err: RunnerError) -> i32 {
    eprintln!("error: {err}");
    err.exit_code()
}

fn init_workers() {
    if let Ok(count) = std::env::var(WORKERS_ENV) {
        if let Ok(n) = count.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful outputs; anything else is a
            // config error.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_workers();
    match cli.command {
        Command::Synth {
            preset,
            out,
            seed,
            generation_similarity,
        } => {
            let mut suite = paper_shaped_suite(preset.0);
            suite.seed = seed;
            if let Some(similarity) = generation_similarity {
                let (id, n_train, reference) = generation_companion(preset.0);
                suite = match suite.with_generation_companion(id, n_train, reference, similarity) {
                    Ok(s) => s,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return 1;
                    }
                };
            }
            match generate(&suite, &out) {
                Ok(manifest) => {
                    println!("{}", manifest.display());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            }
        }
        Command::Baseline { config, overrides } => {
            let config = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let (registry, _) = match prepare_registry(&config) {
                Ok(r) => r,
                Err(e) => return runner_exit(e),
            };
            for &seed in &config.run.seeds {
                match run_single_task_baselines(&registry, &config, seed) {
                    Ok((baselines, curves)) => {
                        let dir = config.run.output_dir.join(format!("seed_{seed}"));
                        if let Err(e) = std::fs::create_dir_all(&dir) {
                            eprintln!("error: cannot create {}: {e}", dir.display());
                            return 2;
                        }
                        if let Err(e) = baselines.save(&dir.join("baselines.json")) {
                            return runner_exit(e);
                        }
                        let csv = taskmix::report::curves_to_csv(&curves);
                        if let Err(e) = std::fs::write(dir.join("baseline_curves.csv"), csv) {
                            eprintln!("error: {e}");
                            return 2;
                        }
                        println!("seed {seed}: baselines for {} tasks", baselines.entries.len());
                    }
                    Err(e) => return runner_exit(e),
                }
            }
            0
        }
        Command::Train {
            config,
            baselines,
            overrides,
        } => {
            let config = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(baselines_path) = baselines {
                // Reuse provided baselines for every seed.
                let (registry, _) = match prepare_registry(&config) {
                    Ok(r) => r,
                    Err(e) => return runner_exit(e),
                };
                let loaded = match Baselines::load(&baselines_path) {
                    Ok(b) => b,
                    Err(e) => return runner_exit(e),
                };
                for &seed in &config.run.seeds {
                    match run_multi_task(&registry, &config, &loaded, seed) {
                        Ok((report, curves)) => {
                            let dir = config.run.output_dir.join(format!("seed_{seed}"));
                            if let Err(e) = emit_report(&report, &curves, &dir) {
                                return runner_exit(RunnerError::Report(e));
                            }
                            println!(
                                "seed {seed}: {} qualified of {} ({})",
                                report.num_qualified,
                                report.tasks.len(),
                                taskmix::report::format_overhead(report.overhead)
                            );
                        }
                        Err(e) => return runner_exit(e),
                    }
                }
                0
            } else {
                match run_experiment(&config) {
                    Ok(reports) => {
                        for (seed, report) in reports {
                            println!(
                                "seed {seed}: {} qualified of {} ({})",
                                report.num_qualified,
                                report.tasks.len(),
                                taskmix::report::format_overhead(report.overhead)
                            );
                        }
                        0
                    }
                    Err(e) => runner_exit(e),
                }
            }
        }
        Command::Report { input, out } => {
            let report = match load_report(&input) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            let dir = out.unwrap_or_else(|| {
                input
                    .parent()
                    .map(|p| p.to_path_buf())
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            if let Err(e) = std::fs::create_dir_all(&dir) {
                eprintln!("error: cannot create {}: {e}", dir.display());
                return 2;
            }
            match std::fs::write(dir.join("tables.md"), render_report_markdown(&report)) {
                Ok(()) => {
                    println!("{}", dir.join("tables.md").display());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            }
        }
        Command::Compare {
            config,
            methods,
            overrides,
        } => {
            let config = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let method_list: Vec<String> =
                methods.split(',').map(|m| m.trim().to_string()).collect();
            match compare(&config, &method_list) {
                Ok(comparison) => {
                    for m in &comparison.methods {
                        println!(
                            "{}: avg {:.2} ± {:.2}, qualified mean {:.1}",
                            m.method,
                            m.macro_avg_mean * 100.0,
                            m.macro_avg_std * 100.0,
                            m.num_qualified_mean
                        );
                    }
                    0
                }
                Err(e) => runner_exit(e),
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(u8::try_from(run()).unwrap_or(3))
}
