use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use twinmpc_core::dab;
use twinmpc_core::harness::{self, HarnessConfig};
use twinmpc_core::modulation::{build_timeline, PhaseShiftCommand, Scheme};
use twinmpc_core::netlist::{compile, parse_netlist};
use twinmpc_core::solver::{integrate_cycles, SolverConfig, SolverKind};
use twinmpc_core::{Error, Result, SwitchState};

#[derive(Parser, Debug)]
#[command(name = "twinmpc", version, about = "Netlist-to-MPC toolchain for dual-active-bridge converters")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a netlist into a piecewise-affine model document.
    Synth(SynthArgs),
    /// Simulate cycles of one phase-shift command.
    Simulate(SimulateArgs),
    /// Train the per-load predictor bank.
    TrainNsp,
    /// Per-cycle and rollout accuracy of the trained predictor.
    EvalNsp,
    /// Solver points and accuracy against the adaptive reference.
    BenchSolvers,
    /// Grid, adaptive grid and simplex search on the predicted cost.
    BenchOptimizers,
    /// PI and predictive control on the load-step and voltage-step scenarios.
    RunScenarios,
    /// Assemble report.json from the section files in the output directory.
    Report,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Netlist file; the configured converter at full load when omitted.
    netlist: Option<PathBuf>,
    /// Model output path (default: <out>/model.json).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Switching states to tabulate, as bit strings (switch 0 first).
    /// Defaults to the bridge conduction states for 8-switch netlists and
    /// every combination otherwise.
    #[arg(long, value_delimiter = ',')]
    states: Vec<String>,
    /// Also write the timeline of this command as <out>/timeline.json.
    #[arg(long, value_name = "D0,D1,D2", value_delimiter = ',', num_args = 1..=3)]
    dump_timeline: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Command components for the scheme (1 for SPS, 2 for DPS, 3 for TPS).
    #[arg(long, value_delimiter = ',', required = true)]
    command: Vec<f64>,
    #[arg(long, default_value = "TPS")]
    scheme: Scheme,
    #[arg(long, default_value_t = 1)]
    cycles: usize,
    /// euler, rk2, rk4, adaptive_reference, event_driven, or nsp.
    #[arg(long, default_value = "event_driven")]
    solver: String,
    /// Step for fixed-step solvers, in seconds.
    #[arg(long, default_value_t = 50e-9)]
    step: f64,
    #[arg(long, default_value_t = 1.0)]
    load_fraction: f64,
    /// Initial state (iL, vC1, vC2); zero when omitted.
    #[arg(long, value_delimiter = ',')]
    x0: Vec<f64>,
    /// Output CSV (default: <out>/simulation.csv).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg = cfg.with_out_dir(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Simulate(a) => simulate(&cfg, a),
        Command::TrainNsp => {
            let (bank, reports) = harness::train_nsp(&cfg)?;
            std::fs::create_dir_all(&cfg.paths.out_dir)?;
            std::fs::write(cfg.nsp_path(), bank.to_json())?;
            let path = harness::write_artifact(&cfg, "nsp_train.json", &harness::to_json_pretty(&reports))?;
            for r in &reports {
                println!(
                    "load {:.4} ohm: train mse {:.3e}, validation mse {:.3e}",
                    r.load_ohms, r.worst_train_mse, r.worst_validation_mse
                );
            }
            println!("wrote {} and {}", cfg.nsp_path().display(), path.display());
            Ok(())
        }
        Command::EvalNsp => {
            let bank = cfg.load_bank()?;
            let (rep, files) = harness::eval_nsp(&cfg, &bank)?;
            for (name, csv) in files {
                harness::write_artifact(&cfg, &name, &csv)?;
            }
            for l in &rep.loads {
                println!(
                    "load {:.4} ohm: per-cycle error ratio {:.4}, rollout error {:?}",
                    l.load_ohms, l.per_cycle_ratio, l.rollout_nsp_error
                );
            }
            done(harness::write_artifact(&cfg, harness::NSP_EVAL_FILE, &harness::to_json_pretty(&rep))?)
        }
        Command::BenchSolvers => {
            let bank = match cfg.load_bank() {
                Ok(b) => Some(b),
                Err(Error::MissingArtifact { .. }) => {
                    eprintln!("note: no trained predictor bank; the nsp rows are skipped (run train-nsp)");
                    None
                }
                Err(e) => return Err(e),
            };
            let (rep, timing) = harness::bench_solvers(&cfg, bank.as_ref())?;
            harness::write_artifact(&cfg, "solvers.csv", &rep.to_csv())?;
            harness::write_artifact(&cfg, "timing_solvers.json", &harness::to_json_pretty(&timing))?;
            print!("{}", rep.to_csv());
            done(harness::write_artifact(&cfg, harness::SOLVERS_FILE, &harness::to_json_pretty(&rep))?)
        }
        Command::BenchOptimizers => {
            let bank = cfg.load_bank()?;
            let (rep, files) = harness::bench_optimizers(&cfg, &bank)?;
            for (name, csv) in files {
                harness::write_artifact(&cfg, &name, &csv)?;
            }
            for r in &rep.runs {
                println!(
                    "{} {:>13}: cost {:.6} after {} evals, to target {:?}",
                    r.scheme.name(),
                    r.method,
                    r.best_cost,
                    r.evals,
                    r.evals_to_target
                );
            }
            done(harness::write_artifact(&cfg, harness::OPTIMIZERS_FILE, &harness::to_json_pretty(&rep))?)
        }
        Command::RunScenarios => {
            let bank = cfg.load_bank()?;
            let (rep, results) = harness::run_scenarios(&cfg, &bank)?;
            for (e, r) in rep.entries.iter().zip(&results) {
                harness::write_artifact(&cfg, &e.csv, &r.to_csv())?;
                let s = &e.summary;
                println!(
                    "{} {}: settling {:?} cycles, max deviation {:.3} V, i_pp {:.2} A, zvs {}/{}",
                    e.scenario,
                    e.controller,
                    s.settling_cycles,
                    s.max_voltage_deviation,
                    s.i_pp_steady,
                    s.zvs_events_satisfied,
                    s.zvs_events
                );
            }
            done(harness::write_artifact(&cfg, harness::SCENARIOS_FILE, &harness::to_json_pretty(&rep))?)
        }
        Command::Report => {
            let rep = harness::assemble_report(&cfg)?;
            done(harness::write_artifact(&cfg, harness::REPORT_FILE, &harness::to_json_pretty(&rep))?)
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn done(path: PathBuf) -> Result<()> {
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_state(text: &str, switches: usize) -> Result<SwitchState> {
    let bits = text
        .trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::InvalidArgument(format!("switch state {text:?} must be a bit string"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if bits.len() != switches {
        return Err(Error::InvalidArgument(format!(
            "switch state {text:?} has {} bits, the netlist has {switches} switches",
            bits.len()
        )));
    }
    Ok(SwitchState::new(bits))
}

fn synth(cfg: &HarnessConfig, a: &SynthArgs) -> Result<()> {
    let text = match &a.netlist {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::InvalidArgument(format!("cannot read netlist {}: {e}", p.display())))?,
        None => dab::netlist_text(&cfg.dab, cfg.dab.load_resistance(1.0)),
    };
    let net = parse_netlist(&text)?;
    let k = net.switch_count();
    let states = if !a.states.is_empty() {
        a.states.iter().map(|s| parse_state(s, k)).collect::<Result<Vec<_>>>()?
    } else if k == dab::bridge_layout().switch_count {
        dab::bridge_layout().conduction_states()
    } else if k <= 12 {
        (0..1u64 << k).map(|m| SwitchState::from_mask(m, k)).collect()
    } else {
        return Err(Error::InvalidArgument(format!("{k} switches: list the reachable states with --states")));
    };
    let model = compile(&net, &states)?;
    let json = harness::to_json_pretty(&model.to_document());
    let path = match &a.output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, &json)?;
            p.clone()
        }
        None => harness::write_artifact(cfg, "model.json", &json)?,
    };
    println!(
        "model: {} states, {} inputs, {} switching states -> {}",
        model.base.state_dim(),
        model.base.input_dim(),
        states.len(),
        path.display()
    );
    if let Some(d) = &a.dump_timeline {
        let scheme = match d.len() {
            1 => Scheme::Sps,
            2 => Scheme::Dps,
            _ => Scheme::Tps,
        };
        let cmd = PhaseShiftCommand::from_vector(scheme, d)?;
        let tl = build_timeline(&cmd, &dab::bridge_layout(), cfg.dab.period(), cfg.dead_time)?;
        done(harness::write_artifact(cfg, "timeline.json", &harness::to_json_pretty(&tl))?)?;
    }
    Ok(())
}

fn simulate(cfg: &HarnessConfig, a: &SimulateArgs) -> Result<()> {
    let p = &cfg.dab;
    let load = p.load_resistance(a.load_fraction);
    let model = dab::compile_model(p, load)?;
    let layout = dab::bridge_layout();
    let cmd = PhaseShiftCommand::from_vector(a.scheme, &a.command)?;
    let tl = build_timeline(&cmd, &layout, p.period(), cfg.dead_time)?;
    let x0 = if a.x0.is_empty() {
        DVector::zeros(3)
    } else if a.x0.len() == 3 {
        DVector::from_vec(a.x0.clone())
    } else {
        return Err(Error::InvalidArgument(format!("--x0 needs 3 values, got {}", a.x0.len())));
    };
    let labels: Vec<String> = model.base.state_labels.clone();
    let csv = if a.solver == "nsp" {
        let bank = cfg.load_bank()?;
        let nsp = bank.get(load)?;
        let times = tl.event_times();
        let mut out = format!("t,{},state_bits\n", labels.join(","));
        let mut x = x0;
        for c in 0..a.cycles {
            let pr = nsp.predict_cycle(&model, &tl, &x)?;
            let t0 = c as f64 * tl.period;
            for (i, xs) in pr.segment_states.iter().enumerate() {
                if c > 0 && i == 0 {
                    continue;
                }
                let t = times.get(i).copied().unwrap_or(tl.period);
                let bits = pr.switch_states.get(i).or(pr.switch_states.last()).map(|s| s.to_string()).unwrap_or_default();
                let _ = write!(out, "{:?}", t0 + t);
                for v in xs.iter() {
                    let _ = write!(out, ",{v:?}");
                }
                let _ = writeln!(out, ",{bits}");
            }
            x = pr.x_end;
        }
        out
    } else {
        let kind: SolverKind = a.solver.parse()?;
        let scfg = match kind {
            SolverKind::AdaptiveReference => SolverConfig::adaptive(1e-10, 1e-9),
            SolverKind::EventDriven => SolverConfig::event_driven(),
            k => SolverConfig::fixed(k, a.step),
        };
        integrate_cycles(&model, &tl, &x0, &scfg, a.cycles.max(1))?.to_csv(&labels)
    };
    let path = match &a.output {
        Some(p) => {
            std::fs::write(p, &csv)?;
            p.clone()
        }
        None => harness::write_artifact(cfg, "simulation.csv", &csv)?,
    };
    done(path)
}
