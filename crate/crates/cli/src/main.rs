use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use delta_audit::pipeline::{
    self, preset, presets, run_audit, run_batch, run_sanity, write_audit_outputs,
    write_batch_outputs, AnchorChoice, AuditConfig, AuditHooks, Verdict,
};
use delta_audit::protocol;

/// Exit code for execution errors.
const EXIT_ERROR: u8 = 1;
/// Exit code for failed sanity assertions.
const EXIT_SANITY: u8 = 2;

const SEED_ENV: &str = "DELTA_AUDIT_SEED";

#[derive(Parser)]
#[command(
    name = "delta-audit",
    version,
    about = "Audit model updates with delta attributions"
)]
struct Cli {
    /// Print warnings and per-stage notes to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit one A/B pair and gate on the verdict.
    Audit {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Shipped preset name (see `presets`).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. `--set thresholds.jsd_risky=0.2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Exit 0 on a risky verdict.
        #[arg(long)]
        no_gate: bool,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run many audits; magnitude boundaries come from the batch.
    Batch {
        /// Directory of `.toml` files or a glob pattern.
        #[arg(long, required_unless_present = "all_presets")]
        configs: Option<String>,
        /// Run the twelve built-in presets.
        #[arg(long)]
        all_presets: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Identity audits for every built-in family and embedded dataset.
    Sanity {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
    /// List shipped A/B presets.
    Presets {
        #[arg(long)]
        json: bool,
    },
    /// Serve a built-in model over the bridge protocol on stdin/stdout.
    Serve {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_parser = parse_role)]
        role: AnchorChoice,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn parse_role(s: &str) -> Result<AnchorChoice, String> {
    match s {
        "A" | "a" => Ok(AnchorChoice::A),
        "B" | "b" => Ok(AnchorChoice::B),
        _ => Err(format!("role must be A or B, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let verbose = cli.verbose > 0;
    match cli.command {
        Command::Audit {
            config,
            preset,
            out,
            overrides,
            no_gate,
            force,
        } => {
            let cfg = resolve_config(config.as_deref(), preset.as_deref(), &overrides)?;
            prepare_out(&out, force)?;
            let report = run_audit(&cfg)?;
            write_audit_outputs(&out, &report)?;
            if verbose {
                for w in report.warnings.iter().chain(&report.verdict_notes) {
                    eprintln!("warning: {w}");
                }
            }
            let m = &report.metrics;
            println!(
                "{}: verdict {} (mag_l1 {:.6}, dce {:.3e}, bac {}, rank_overlap10 {:.4}, jsd {:.4})",
                cfg.name,
                report.verdict,
                m.mag_l1,
                m.dce,
                m.bac.map_or("undefined".to_string(), |b| format!("{b:.4}")),
                m.rank_overlap10,
                m.jsd,
            );
            if report.verdict == Verdict::Risky && no_gate {
                eprintln!("warning: risky verdict not gated (--no-gate)");
            }
            Ok(report.verdict.exit_code(!no_gate) as u8)
        }
        Command::Batch {
            configs,
            all_presets,
            out,
            force,
        } => {
            let mut list = Vec::new();
            if all_presets {
                list.extend(
                    presets()
                        .into_iter()
                        .filter(|p| !p.bridge_template)
                        .map(|p| p.config),
                );
            }
            if let Some(pattern) = configs {
                for path in expand_configs(&pattern)? {
                    list.push(load_with_env(&path)?);
                }
            }
            if list.is_empty() {
                bail!("no configs matched");
            }
            prepare_out(&out, force)?;
            let batch = run_batch(&list)?;
            write_batch_outputs(&out, &batch)?;
            for r in &batch.reports {
                println!(
                    "{}: verdict {} (mag_l1 {:.6})",
                    r.config.name, r.verdict, r.metrics.mag_l1
                );
            }
            for f in &batch.failures {
                eprintln!("failed: {}: {}", f.name, f.error);
            }
            Ok(if batch.failures.is_empty() {
                0
            } else {
                EXIT_ERROR
            })
        }
        Command::Sanity {
            out,
            force,
            inject_fault,
        } => {
            prepare_out(&out, force)?;
            let rows = run_sanity(&AuditHooks {
                perturb_b: inject_fault,
            });
            let path = out.join("sanity.json");
            std::fs::write(&path, serde_json::to_string_pretty(&rows)?)
                .with_context(|| format!("writing {}", path.display()))?;
            let mut ok = true;
            for r in &rows {
                if r.passed() {
                    println!("PASS {} on {}", r.family, r.dataset);
                } else {
                    ok = false;
                    println!(
                        "FAIL {} on {}: {}",
                        r.family,
                        r.dataset,
                        r.failures.join("; ")
                    );
                }
            }
            Ok(if ok { 0 } else { EXIT_SANITY })
        }
        Command::Presets { json } => {
            let all = presets();
            if json {
                println!("{}", serde_json::to_string_pretty(&all)?);
            } else {
                for p in &all {
                    let kind = if p.bridge_template {
                        "bridge"
                    } else {
                        "builtin"
                    };
                    println!(
                        "{:<12} {:<8} {:<14} {}",
                        p.name,
                        kind,
                        p.config.dataset.label(),
                        p.description
                    );
                }
            }
            Ok(0)
        }
        Command::Serve {
            config,
            preset,
            role,
            overrides,
        } => {
            let cfg = resolve_config(config.as_deref(), preset.as_deref(), &overrides)?;
            let model = pipeline::train_role(&cfg, role)?;
            let stdin = io::stdin().lock();
            let stdout = io::stdout().lock();
            protocol::serve(&model, BufReader::new(stdin), stdout)?;
            Ok(0)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

fn load_with_env(path: &Path) -> Result<AuditConfig> {
    let mut cfg = AuditConfig::load(path)?;
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn resolve_config(
    config: Option<&Path>,
    preset_name: Option<&str>,
    overrides: &[String],
) -> Result<AuditConfig> {
    let mut cfg = match (config, preset_name) {
        (Some(path), _) => load_with_env(path)?,
        (None, Some(name)) => {
            let mut cfg = preset(name)
                .ok_or_else(|| anyhow!("unknown preset `{name}`; run `delta-audit presets`"))?
                .config;
            if let Some(seed) = env_seed()? {
                cfg.seed = seed;
            }
            cfg
        }
        (None, None) => bail!("either --config or --preset is required"),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn expand_configs(pattern: &str) -> Result<Vec<PathBuf>> {
    let path = Path::new(pattern);
    let mut out: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect()
    } else {
        glob::glob(pattern)
            .with_context(|| format!("bad pattern `{pattern}`"))?
            .filter_map(|p| p.ok())
            .collect()
    };
    out.sort();
    if out.is_empty() {
        bail!("no config files match `{pattern}`");
    }
    Ok(out)
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            );
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}
