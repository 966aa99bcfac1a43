//! Command-line front end: run one group, compare all three, sweep the
//! threshold grid, audit existing logs, or validate/convert an IDX1 label
//! file.

use clap::{Args, Parser, Subcommand};
use drcb::analysis::{levene, psc_table, psc_tail, safety_metrics, tost, welch_t};
use drcb::config::{ExperimentConfig, Group};
use drcb::harness::{classify_run, compare, run_group, sweep, RunOutcome};
use drcb::idx::load_idx1_labels;
use drcb::log::{append_summary, read_round_log, write_round_log};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "drcb", version, about = "Collusion-dynamics simulator and governance audit suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Plain-text key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set rounds=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shortcut for --set seeds=...
    #[arg(long)]
    seeds: Option<String>,
    /// Shortcut for --set rounds=...
    #[arg(long)]
    rounds: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.merge_file(path).map_err(|e| e.to_string())?;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set needs KEY=VALUE, got '{kv}'"))?;
            cfg.apply_kv(k, v).map_err(|e| e.to_string())?;
        }
        if let Some(seeds) = &self.seeds {
            cfg.apply_kv("seeds", seeds).map_err(|e| e.to_string())?;
        }
        if let Some(rounds) = self.rounds {
            cfg.apply_kv("rounds", &rounds.to_string()).map_err(|e| e.to_string())?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experimental group across its seeds.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// baseline | static | drcb (defaults to the config's group).
        #[arg(long)]
        group: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run all three groups and print the statistical comparison report.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Sweep the (tp, ts) threshold grid and emit the phase-diagram data.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated tp values, e.g. 3.0,7.5,12.0
        #[arg(long, value_name = "LIST")]
        tp: String,
        /// Comma-separated ts values, e.g. 5.0,11.0,18.0
        #[arg(long, value_name = "LIST")]
        ts: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Recompute summaries and the comparison report from existing logs.
    Audit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory containing <group>_seed<k>.jsonl round logs.
        #[arg(long, default_value = "out")]
        dir: PathBuf,
    },
    /// Validate an IDX1 label file; optionally convert to one digit per line.
    IngestIdx {
        /// Path to the IDX1 label file.
        input: PathBuf,
        /// Write the labels as plain text, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration and exit.
    DumpConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad value '{p}': {e}")))
        .collect()
}

fn write_outcomes(out_dir: &Path, outcomes: &[RunOutcome]) -> Result<(), String> {
    std::fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
    let summary_path = out_dir.join("summary.jsonl");
    // start a fresh summary file per invocation
    if summary_path.exists() {
        std::fs::remove_file(&summary_path).map_err(|e| e.to_string())?;
    }
    for o in outcomes {
        let path = out_dir.join(format!("{}_seed{}.jsonl", o.group.name(), o.seed));
        write_round_log(&path, &o.records).map_err(|e| e.to_string())?;
        append_summary(&summary_path, &o.summary).map_err(|e| e.to_string())?;
        println!(
            "wrote {} ({} rounds, phase {}, wall {} ms)",
            path.display(),
            o.records.len(),
            o.summary.phase,
            o.summary.wall_clock_ms
        );
    }
    Ok(())
}

/// Comparison report over a set of run outcomes (used by `compare` and
/// `audit`).
fn render_report(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Result<String, String> {
    use std::fmt::Write as _;
    let mut by_group: BTreeMap<&'static str, Vec<&RunOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_group.entry(o.group.name()).or_default().push(o);
    }
    let group = |name: &str| -> Vec<&RunOutcome> {
        by_group.get(name).cloned().unwrap_or_default()
    };

    let final_means = |runs: &[&RunOutcome]| -> Vec<f64> {
        runs.iter().map(|o| o.summary.mean_reward_final).collect()
    };
    let pooled_final_rewards = |runs: &[&RunOutcome]| -> Vec<f64> {
        runs.iter()
            .flat_map(|o| {
                let n = o.records.len().min(300);
                o.records[o.records.len() - n..].iter().map(|r| r.r_post)
            })
            .collect()
    };

    let mut s = String::new();
    writeln!(s, "=== comparison report ===").unwrap();
    writeln!(
        s,
        "rounds per run: {}, seeds: {:?}",
        cfg.rounds, cfg.seeds
    )
    .unwrap();
    writeln!(
        s,
        "per-round ordering: refresh -> subset -> accuracy -> probes -> governor -> interventions -> updates"
    )
    .unwrap();
    writeln!(s).unwrap();

    for (name, runs) in &by_group {
        writeln!(s, "[{name}]").unwrap();
        for o in runs {
            writeln!(
                s,
                "  seed {}: final-300 mean reward {:.3}, phase {}, acc mean {:.3}, nadir {:.3}, \
                 <0.5 {}, <0.1 {}, std {:.3}, suppressions {}, breaks {}, TAU {:.3}, wall {} ms",
                o.seed,
                o.summary.mean_reward_final,
                o.summary.phase,
                o.summary.safety.mean,
                o.summary.safety.nadir,
                o.summary.safety.count_below_half,
                o.summary.safety.count_below_tenth,
                o.summary.safety.std,
                o.summary.suppression_triggers,
                o.summary.circuit_breaks,
                o.summary.mean_tau_utility,
                o.summary.wall_clock_ms,
            )
            .unwrap();
        }
        // cross-seed and within-run dispersion, reported separately
        let means = final_means(runs);
        if means.len() >= 2 {
            let cross = drcb::analysis::sample_variance(&means).sqrt();
            let pooled = pooled_final_rewards(runs);
            let within = drcb::analysis::population_variance(&pooled).sqrt();
            writeln!(
                s,
                "  dispersion: cross-seed sigma {:.4}, within-run sigma {:.4}",
                cross, within
            )
            .unwrap();
        }
        writeln!(s).unwrap();
    }

    let baseline = group("baseline");
    let static_g = group("static");
    let drcb_g = group("drcb");

    if baseline.len() >= 2 && static_g.len() >= 2 && drcb_g.len() >= 2 {
        writeln!(s, "[pairwise Welch t on final-300 mean rewards]").unwrap();
        for (label, a, b) in [
            ("baseline vs static", &baseline, &static_g),
            ("baseline vs drcb", &baseline, &drcb_g),
            ("static   vs drcb", &static_g, &drcb_g),
        ] {
            match welch_t(&final_means(a), &final_means(b)) {
                Ok(r) => writeln!(s, "  {label}: t = {:+.3}, df = {:.2}, p = {:.4}", r.t, r.df, r.p).unwrap(),
                Err(e) => writeln!(s, "  {label}: {e}").unwrap(),
            }
        }
        match tost(&final_means(&baseline), &final_means(&static_g), 0.2) {
            Ok(p) => writeln!(s, "  TOST baseline vs static (margin 0.2): p = {p:.4}").unwrap(),
            Err(e) => writeln!(s, "  TOST baseline vs static: {e}").unwrap(),
        }
        match levene(&pooled_final_rewards(&static_g), &pooled_final_rewards(&drcb_g)) {
            Ok(r) => writeln!(
                s,
                "  Levene (Brown-Forsythe) static vs drcb reward sequences: F = {:.3}, p = {:.4}",
                r.f, r.p
            )
            .unwrap(),
            Err(e) => writeln!(s, "  Levene static vs drcb: {e}").unwrap(),
        }
        writeln!(s).unwrap();
    }

    if !static_g.is_empty() && !drcb_g.is_empty() {
        writeln!(s, "[safety over final {} rounds]", 1000.min(cfg.rounds as usize)).unwrap();
        for (name, runs) in [("static", &static_g), ("drcb", &drcb_g)] {
            let tail = 1000.min(cfg.rounds as usize);
            let pooled: Vec<f64> = runs
                .iter()
                .flat_map(|o| o.records[o.records.len() - tail..].iter().map(|r| r.acc_obs))
                .collect();
            let m = safety_metrics(&pooled, pooled.len()).map_err(|e| e.to_string())?;
            writeln!(
                s,
                "  {name}: mean {:.3}, nadir {:.3}, <0.5 {}, <0.1 {}, std {:.3}",
                m.mean, m.nadir, m.count_below_half, m.count_below_tenth, m.std
            )
            .unwrap();
        }
        writeln!(s).unwrap();
    }

    if let Some(o) = drcb_g.first() {
        let third = o.records.len() / 3;
        let rows = psc_table(&o.records[o.records.len() - third.max(1)..]).map_err(|e| e.to_string())?;
        writeln!(s, "[policy-symbol covariance, drcb seed {}, final third]", o.seed).unwrap();
        for row in rows.iter().take(5) {
            writeln!(
                s,
                "  {:?}: n = {}, primary {:?}, purity {:.2}%, entropy {:.3}",
                row.sequence,
                row.occurrences,
                row.primary_action,
                100.0 * row.purity,
                row.entropy
            )
            .unwrap();
        }
        let tail = psc_tail(&rows, third.max(1) as u64, 1e-4);
        writeln!(
            s,
            "  long tail (<0.01% freq): {} sequences, {} rounds, mean purity {:.3}",
            tail.sequences, tail.occurrences, tail.mean_purity
        )
        .unwrap();
        writeln!(s).unwrap();
    }

    if !baseline.is_empty() && !drcb_g.is_empty() {
        let mean_ms = |runs: &[&RunOutcome]| {
            runs.iter().map(|o| o.summary.wall_clock_ms as f64).sum::<f64>() / runs.len() as f64
        };
        let b = mean_ms(&baseline);
        let d = mean_ms(&drcb_g);
        if b > 0.0 {
            writeln!(
                s,
                "[overhead] drcb mean wall-clock {:.1} ms vs baseline {:.1} ms ({:+.1}%) — reported, not asserted",
                d,
                b,
                100.0 * (d - b) / b
            )
            .unwrap();
        }
    }

    Ok(s)
}

fn cmd_run(config: ConfigArgs, group: Option<String>, out_dir: PathBuf) -> Result<(), String> {
    let cfg = config.build()?;
    let group = match group {
        Some(g) => Group::parse(&g).ok_or_else(|| format!("unknown group '{g}'"))?,
        None => cfg.group,
    };
    let outcomes = run_group(&cfg, group).map_err(|e| e.to_string())?;
    write_outcomes(&out_dir, &outcomes)
}

fn cmd_compare(config: ConfigArgs, out_dir: PathBuf) -> Result<(), String> {
    let cfg = config.build()?;
    let outcomes = compare(&cfg).map_err(|e| e.to_string())?;
    write_outcomes(&out_dir, &outcomes)?;
    let report = render_report(&cfg, &outcomes)?;
    std::fs::write(out_dir.join("report.txt"), &report).map_err(|e| e.to_string())?;
    println!("\n{report}");
    Ok(())
}

fn cmd_sweep(config: ConfigArgs, tp: String, ts: String, out_dir: PathBuf) -> Result<(), String> {
    let cfg = config.build()?;
    let tps = parse_list(&tp)?;
    let tss = parse_list(&ts)?;
    let cells = sweep(&cfg, &tps, &tss).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
    let path = out_dir.join("sweep_grid.jsonl");
    let mut lines = String::new();
    for cell in &cells {
        lines.push_str(&serde_json::to_string(cell).map_err(|e| e.to_string())?);
        lines.push('\n');
    }
    std::fs::write(&path, lines).map_err(|e| e.to_string())?;
    println!("tp      ts      phases (per seed)");
    for cell in &cells {
        let phases: Vec<String> = cell.phases.iter().map(|p| p.to_string()).collect();
        println!(
            "{:<7} {:<7} {} | mean reward {:.2}, var {:.2}, acc {:.2}",
            cell.tp,
            cell.ts,
            phases.join(", "),
            cell.mean_reward,
            cell.mean_var_reward,
            cell.mean_acc
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_audit(config: ConfigArgs, dir: PathBuf) -> Result<(), String> {
    let cfg = config.build()?;
    let mut outcomes = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "jsonl")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains("_seed"))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(format!("no <group>_seed<k>.jsonl logs under {}", dir.display()));
    }
    for path in entries {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let (group_name, seed_str) = stem
            .split_once("_seed")
            .ok_or_else(|| format!("unparseable log name {stem}"))?;
        let group = Group::parse(group_name).ok_or_else(|| format!("unknown group in {stem}"))?;
        let seed: u64 = seed_str.parse().map_err(|e| format!("bad seed in {stem}: {e}"))?;
        let records = read_round_log(&path).map_err(|e| e.to_string())?;
        let mut run_cfg = cfg.clone();
        run_cfg.rounds = records.len() as u64;
        let (phase, stats) = classify_run(&records, &run_cfg).map_err(|e| e.to_string())?;
        let acc: Vec<f64> = records.iter().map(|r| r.acc_obs).collect();
        let tail = acc.len().min(1000);
        let safety = safety_metrics(&acc, tail).map_err(|e| e.to_string())?;
        let n = records.len().min(300);
        let final_rewards: Vec<f64> = records[records.len() - n..].iter().map(|r| r.r_post).collect();
        let mean_reward_final = drcb::analysis::mean(&final_rewards);
        let mean_tau = drcb::analysis::mean(
            &records
                .iter()
                .map(|r| drcb::analysis::tau(r.r_post, r.acc_obs))
                .collect::<Vec<_>>(),
        );
        let summary = drcb::log::RunSummary {
            v: drcb::log::SCHEMA_VERSION,
            group,
            seed,
            rounds: records.len() as u64,
            mean_reward_final,
            safety,
            phase,
            tau_collapse: stats.tau_collapse,
            tau_jsd: stats.tau_jsd,
            suppression_triggers: records.iter().filter(|r| r.penalty_multiplier.is_some()).count()
                as u64,
            circuit_breaks: records.iter().filter(|r| r.shuffle_now).count() as u64,
            mean_tau_utility: mean_tau,
            mean_utilization: {
                let us: Vec<f64> = records.iter().filter_map(|r| r.utilization).collect();
                if us.is_empty() {
                    0.0
                } else {
                    drcb::analysis::mean(&us)
                }
            },
            wall_clock_ms: 0,
        };
        outcomes.push(RunOutcome {
            group,
            seed,
            records,
            summary,
        });
    }
    let mut audit_cfg = cfg.clone();
    audit_cfg.rounds = outcomes.first().map(|o| o.records.len() as u64).unwrap_or(cfg.rounds);
    let report = render_report(&audit_cfg, &outcomes)?;
    std::fs::write(dir.join("report.txt"), &report).map_err(|e| e.to_string())?;
    println!("{report}");
    Ok(())
}

fn cmd_ingest_idx(input: PathBuf, out: Option<PathBuf>) -> Result<(), String> {
    let labels = load_idx1_labels(&input).map_err(|e| e.to_string())?;
    let mut hist = [0u64; 256];
    for &l in &labels {
        hist[l as usize] += 1;
    }
    let over_nine: u64 = hist[10..].iter().sum();
    println!("{}: {} labels", input.display(), labels.len());
    for d in 0..10 {
        if hist[d] > 0 {
            println!("  digit {d}: {}", hist[d]);
        }
    }
    if over_nine > 0 {
        return Err(format!(
            "{over_nine} labels exceed 9; not usable as a context source"
        ));
    }
    if let Some(out) = out {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(&out, text).map_err(|e| e.to_string())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, group, out_dir } => cmd_run(config, group, out_dir),
        Command::Compare { config, out_dir } => cmd_compare(config, out_dir),
        Command::Sweep { config, tp, ts, out_dir } => cmd_sweep(config, tp, ts, out_dir),
        Command::Audit { config, dir } => cmd_audit(config, dir),
        Command::IngestIdx { input, out } => cmd_ingest_idx(input, out),
        Command::DumpConfig { config } => config.build().map(|cfg| print!("{}", cfg.to_kv_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
