use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fracmpc::harness::{
    emit_outputs, memory_summary, memory_sweep, run_closed_loop, sensitivity_summary, sensitivity_sweep, RunRecord,
    ScenarioConfig, NOMINAL_PRESET,
};
use fracmpc::model::{check_augmented_observability, PkParameter};
use fracmpc::mpc::build_target_map;
use fracmpc::plant::OustaloupFilter;

#[derive(Parser)]
#[command(name = "fracmpc", version, about = "Offset-free MPC of a fractional pharmacokinetic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Defaults to the built-in preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, default_value = NOMINAL_PRESET)]
    preset: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for measurement noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ScenarioConfig::preset(&self.preset)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario.
    Run(Common),
    /// Perturb the plant parameters one at a time by ±fraction.
    SweepParams {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Comma-separated subset of k10,k12,k21,alpha.
        #[arg(long, value_delimiter = ',', default_value = "k10,k12,k21,alpha")]
        params: Vec<String>,
    },
    /// Vary the memory length of the control model.
    SweepMemory {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "5,15,25,35")]
        lengths: Vec<usize>,
    },
    /// Rank and observability report for the control model.
    CheckModel(Common),
    /// Frequency response of the Oustaloup filter used by the plant.
    OustaloupBode {
        #[command(flatten)]
        common: Common,
        /// Number of log-spaced frequencies.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Print the preset scenario as TOML.
    ShowConfig(Common),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn report(name: &str, cfg: &ScenarioConfig, result: &Result<fracmpc::harness::SimulationTrace, fracmpc::harness::RunFailure>) -> bool {
    match result {
        Ok(trace) => {
            let inv = trace.invariants(cfg);
            println!(
                "{name}: J = {:.6}, max y = {:.6}, u in [{:.4}, {:.4}], max slack = {:.3e}, invariants {}",
                trace.j,
                trace.max_y(),
                trace.min_u(),
                trace.max_u(),
                trace.violations.max_slack,
                if inv.all() { "ok" } else { "VIOLATED" }
            );
            if !inv.all() {
                println!("  {inv:?}");
            }
            inv.all()
        }
        Err(f) => {
            println!("{name}: failed: {f}");
            false
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.scenario()?;
            let result = run_closed_loop(&cfg);
            let ok = report(&cfg.name, &cfg, &result);
            let files = emit_outputs(&[RunRecord { name: cfg.name.clone(), config: &cfg, result: &result }], None, &common.out)?;
            print_files(&files);
            Ok(ok)
        }
        Command::SweepParams { common, fraction, params } => {
            let cfg = common.scenario()?;
            let parameters = params
                .iter()
                .map(|p| PkParameter::parse(p).with_context(|| format!("unknown parameter '{p}'")))
                .collect::<Result<Vec<_>>>()?;
            let table = sensitivity_sweep(&cfg, &parameters, fraction, common.threads);
            let summary = sensitivity_summary(&table);
            print!("{summary}");
            let mut records = vec![RunRecord {
                name: table.nominal.label.clone(),
                config: &table.nominal.config,
                result: &table.nominal.result,
            }];
            for (_, minus, plus) in &table.rows {
                for cell in [minus, plus] {
                    records.push(RunRecord { name: cell.label.clone(), config: &cell.config, result: &cell.result });
                }
            }
            let mut ok = true;
            for r in &records {
                ok &= report(&r.name, r.config, r.result);
            }
            print_files(&emit_outputs(&records, Some(&summary), &common.out)?);
            Ok(ok)
        }
        Command::SweepMemory { common, lengths } => {
            if lengths.is_empty() {
                bail!("no memory lengths given");
            }
            let cfg = common.scenario()?;
            let table = memory_sweep(&cfg, &lengths, common.threads);
            let summary = memory_summary(&table);
            print!("{summary}");
            let records: Vec<RunRecord> = table
                .rows
                .iter()
                .map(|(_, cell)| RunRecord { name: cell.label.clone(), config: &cell.config, result: &cell.result })
                .collect();
            let mut ok = true;
            for r in &records {
                ok &= report(&r.name, r.config, r.result);
            }
            print_files(&emit_outputs(&records, Some(&summary), &common.out)?);
            Ok(ok)
        }
        Command::CheckModel(common) => {
            let cfg = common.scenario()?;
            let model = cfg.control_model()?;
            let rep = check_augmented_observability(&model);
            let targets = build_target_map(&model)?;
            println!("state dimension           {}", rep.state_dim);
            println!("observability rank        {} of {}", rep.observability_rank, rep.state_dim);
            println!("detectable                {}", rep.detectable);
            println!("augmented rank            {} of {}", rep.augmented_rank, rep.augmented_cols);
            println!("disturbances <= outputs   {}", rep.disturbance_dim_ok);
            println!("observer conditions       {}", if rep.observer_feasible() { "satisfied" } else { "NOT satisfied" });
            println!("target map condition      {:.3e}", targets.condition_number());
            println!("target map residual       {:.3e}", targets.residual());
            Ok(rep.observer_feasible())
        }
        Command::OustaloupBode { common, points } => {
            let cfg = common.scenario()?;
            let filter = OustaloupFilter::from_params(cfg.plant_pk().beta(), &cfg.filter)?;
            let (lo, hi) = filter.band();
            let beta = filter.order();
            let mut csv = String::from("omega,magnitude,phase_deg,ideal_magnitude,ideal_phase_deg\n");
            let n = points.max(2);
            for k in 0..n {
                let w = lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
                let h = filter.freq_response(w);
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    w,
                    h.norm(),
                    h.arg().to_degrees(),
                    w.powf(beta),
                    90.0 * beta
                ));
            }
            fs::create_dir_all(&common.out)?;
            let path = common.out.join("oustaloup_bode.csv");
            fs::write(&path, csv)?;
            print_files(&[path]);
            Ok(true)
        }
        Command::ShowConfig(common) => {
            print!("{}", common.scenario()?.to_toml()?);
            Ok(true)
        }
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}
