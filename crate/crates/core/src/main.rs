use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qutrit::config::{ConfigError, Grid, RunConfig, TransitionName};
use qutrit::device::shift_vs_qubit_frequency;
use qutrit::experiments::{
    default_rabi_amplitudes, run_decay_map, run_fidelity_batch, run_rabi, run_ramsey12, run_readout_basis,
    tomography_once, TomographySetup,
};
use qutrit::output::{self, Bundle, Table};
use qutrit::pulse::{drag_envelope, finalize, PulseSegment};
use qutrit::selftest;

#[derive(Parser)]
#[command(
    name = "qutrit",
    version,
    about = "Transmon qutrit readout, control and tomography simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of every noise stream (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cavity pulls versus qubit frequency.
    Spectrum {
        /// start:stop:points
        #[arg(long, value_parser = parse_grid)]
        omega01: Option<Grid>,
    },
    /// Readout traces of the three basis states and fitted pulls.
    Readout,
    /// Q(t) over measurement detuning after preparing |2>, with T1 fit.
    DecayMap {
        #[arg(long, value_parser = parse_grid)]
        detunings: Option<Grid>,
    },
    /// Rabi oscillation on one transition.
    Rabi {
        #[arg(long, value_parser = parse_transition)]
        transition: Option<TransitionName>,
        #[arg(long, value_parser = parse_grid)]
        amplitudes: Option<Grid>,
    },
    /// Ramsey fringes on the 1-2 transition.
    Ramsey12 {
        #[arg(long, value_parser = parse_grid)]
        delays: Option<Grid>,
        /// Drive detuning in MHz.
        #[arg(long)]
        detuning: Option<f64>,
    },
    /// Tomography of one target state.
    Tomo {
        #[arg(long)]
        target: Option<String>,
    },
    /// Tomography of a list of targets.
    Batch {
        /// Comma-separated target names.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<String>>,
    },
    /// Sampled DRAG envelope of one calibrated pulse.
    Envelope {
        #[arg(long, value_parser = parse_transition, default_value = "01")]
        transition: TransitionName,
        /// Rotation angle in rad.
        #[arg(long, default_value_t = std::f64::consts::PI)]
        angle: f64,
        #[arg(long, default_value_t = 0.05)]
        dt: f64,
    },
    /// Runs the acceptance criteria.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum { .. } => "spectrum",
            Command::Readout => "readout",
            Command::DecayMap { .. } => "decay-map",
            Command::Rabi { .. } => "rabi",
            Command::Ramsey12 { .. } => "ramsey12",
            Command::Tomo { .. } => "tomo",
            Command::Batch { .. } => "batch",
            Command::Envelope { .. } => "envelope",
            Command::Selftest => "selftest",
        }
    }
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err("expected start:stop:points".into());
    };
    let start = a.parse().map_err(|e| format!("start: {e}"))?;
    let stop = b.parse().map_err(|e| format!("stop: {e}"))?;
    let points = n.parse().map_err(|e| format!("points: {e}"))?;
    Ok(Grid::new(start, stop, points))
}

fn parse_transition(s: &str) -> Result<TransitionName, String> {
    match s {
        "01" => Ok(TransitionName::T01),
        "12" => Ok(TransitionName::T12),
        _ => Err(format!("expected 01 or 12, got `{s}`")),
    }
}

/// A failed run, printed as a single `qutrit: error: <kind>: ...` line.
enum Failure {
    Config(ConfigError),
    Physics(qutrit::Error),
    Io(String),
    Selftest(usize),
}

impl Failure {
    fn line(&self) -> String {
        match self {
            Failure::Config(ConfigError::Parse {
                path,
                line,
                key: Some(key),
                message,
            }) => format!("config: {path}:{line}: key `{key}`: {message}"),
            Failure::Config(ConfigError::Invalid(e)) => format!("physics: {e}"),
            Failure::Config(e) => format!("config: {e}"),
            Failure::Physics(e) => format!("physics: {e}"),
            Failure::Io(e) => format!("io: {e}"),
            Failure::Selftest(n) => format!("selftest: {n} criteria failed"),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Selftest(_) => 1,
            Failure::Config(ConfigError::Invalid(_)) | Failure::Physics(_) => 4,
            Failure::Config(_) => 3,
            Failure::Io(_) => 5,
        }
    }
}

impl From<qutrit::Error> for Failure {
    fn from(e: qutrit::Error) -> Self {
        Failure::Physics(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("qutrit: error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qutrit: error: {}", f.line().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}

/// Folds command-line overrides into the loaded configuration.
fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.output_dir = out.clone();
    }
    match &cli.command {
        Command::Spectrum { omega01: Some(g) } => cfg.spectrum.omega01 = g.clone(),
        Command::DecayMap { detunings: Some(g) } => cfg.decay_map.delta_rm = g.clone(),
        Command::Rabi { transition, amplitudes } => {
            if let Some(t) = transition {
                cfg.rabi.transition = *t;
            }
            if let Some(g) = amplitudes {
                cfg.rabi.amplitude = Some(g.clone());
            }
        }
        Command::Ramsey12 { delays, detuning } => {
            if let Some(g) = delays {
                cfg.ramsey12.delay = g.clone();
            }
            if let Some(d) = detuning {
                cfg.ramsey12.options.detuning = *d;
            }
        }
        Command::Tomo { target: Some(t) } => cfg.tomography.target = t.clone(),
        Command::Batch { targets: Some(t) } => cfg.tomography.batch = t.clone(),
        _ => {}
    }
    cfg.validate().map_err(ConfigError::from)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(e.to_string()))?;
    }
    let name = cli.command.name();
    let mut bundle = Bundle::default();
    let mut report = Vec::new();
    let mut failed = 0;
    let ctx = cfg.context()?;

    match &cli.command {
        Command::Spectrum { .. } => {
            let rows = shift_vs_qubit_frequency(&cfg.device, &cfg.spectrum.omega01.values()?)?;
            bundle.add("spectrum.csv", output::spectrum_csv(&rows));
            report.push(format!("{} grid points", rows.len()));
        }
        Command::Readout => {
            let res = run_readout_basis(&ctx)?;
            bundle.add("readout.csv", output::payload_csv(&res));
            bundle.add("readout_fit.csv", output::fit_csv(&res));
            for n in 0..3 {
                let key = format!("s{n}_MHz");
                report.push(format!("{key}={:.4}", res.param(&key).unwrap_or(f64::NAN)));
            }
        }
        Command::DecayMap { .. } => {
            let grid = cfg.decay_map.delta_rm.values()?;
            let res = run_decay_map(&ctx, &grid, &cfg.decay_map.options, cfg.seed)?;
            bundle.add("decay_map.csv", output::payload_csv(&res));
            bundle.add("decay_map_fit.csv", output::fit_csv(&res));
            for key in ["t1_1_ns", "t1_2_ns"] {
                if let Some(v) = res.param(key) {
                    report.push(format!("{key}={v:.1}"));
                }
            }
        }
        Command::Rabi { .. } => {
            let transition = cfg.rabi.transition.into();
            let amplitudes = match &cfg.rabi.amplitude {
                Some(g) => g.values()?,
                None => default_rabi_amplitudes(&ctx, transition)?,
            };
            let res = run_rabi(&ctx, transition, &amplitudes, &cfg.rabi.options)?;
            bundle.add("rabi.csv", output::payload_csv(&res));
            bundle.add("rabi_fit.csv", output::fit_csv(&res));
            for key in ["pi_amplitude_MHz", "calibrated_pi_amplitude_MHz"] {
                report.push(format!("{key}={:.3}", res.param(key).unwrap_or(f64::NAN)));
            }
        }
        Command::Ramsey12 { .. } => {
            let res = run_ramsey12(&ctx, &cfg.ramsey12.options, &cfg.ramsey12.delay.values()?)?;
            bundle.add("ramsey12.csv", output::payload_csv(&res));
            bundle.add("ramsey12_fit.csv", output::fit_csv(&res));
            for key in ["frequency_MHz", "decay_ns"] {
                report.push(format!("{key}={:.4}", res.param(key).unwrap_or(f64::NAN)));
            }
        }
        Command::Tomo { .. } => {
            let target = cfg.tomography.resolve(&cfg.tomography.target)?;
            let setup = TomographySetup::new(&ctx)?;
            let out = tomography_once(&ctx, &setup, &target.state, &cfg.tomography.noise, cfg.seed)?;
            bundle.add("tomo_rho.csv", output::density_matrix_csv(&out.estimate));
            let mut t = Table::new(&["name", "value", "error"]);
            t.row([
                "fidelity".to_string(),
                output::num(out.fidelity),
                output::num(out.fidelity_error),
            ]);
            t.row([
                "preparation_fidelity".to_string(),
                output::num(out.preparation_fidelity),
                output::num(0.0),
            ]);
            t.row(["mle_cost".to_string(), output::num(out.mle_cost), output::num(0.0)]);
            if let Some(s) = out.element_spread {
                t.row(["element_spread".to_string(), output::num(s), output::num(0.0)]);
            }
            bundle.add("tomo_fit.csv", t.finish());
            report.push(format!(
                "target={} F={:.4} ± {:.4}",
                target.name, out.fidelity, out.fidelity_error
            ));
        }
        Command::Batch { .. } => {
            let targets = cfg.tomography.batch_targets()?;
            let res = run_fidelity_batch(&ctx, &targets, &cfg.tomography.noise, cfg.seed)?;
            let mut t = Table::new(&["target", "fidelity", "fidelity_error"]);
            for target in &targets {
                let key = format!("fidelity_{}", target.name);
                t.row([
                    target.name.clone(),
                    output::num(res.param(&key).unwrap_or(f64::NAN)),
                    output::num(res.param_error(&key).unwrap_or(f64::NAN)),
                ]);
                report.push(format!("{} F={:.4}", target.name, res.param(&key).unwrap_or(f64::NAN)));
            }
            bundle.add("batch.csv", t.finish());
            bundle.add("batch_states.csv", output::payload_csv(&res));
            bundle.add("batch_fit.csv", output::fit_csv(&res));
            report.push(format!(
                "mean F={:.4} min F={:.4}",
                res.param("mean_fidelity").unwrap_or(f64::NAN),
                res.param("min_fidelity").unwrap_or(f64::NAN)
            ));
        }
        Command::Envelope { transition, angle, dt } => {
            let seg = finalize(
                &ctx.params,
                PulseSegment::new((*transition).into(), *angle, &ctx.shape),
                &ctx.shape,
            )?;
            let samples = drag_envelope(&ctx.params, &seg, *dt)?;
            bundle.add("envelope.csv", output::envelope_csv(&samples));
            report.push(format!("{} samples", samples.len()));
        }
        Command::Selftest => {
            let mut t = Table::new(&["id", "name", "passed", "seconds", "detail"]);
            for &(id, _) in selftest::CRITERIA.iter() {
                let check = selftest::run(id, cfg.seed);
                println!("{}", check.line());
                failed += usize::from(!check.passed);
                t.row([
                    id.to_string(),
                    check.name.to_string(),
                    check.passed.to_string(),
                    format!("{:.3}", check.seconds),
                    check.detail.clone(),
                ]);
            }
            bundle.add("selftest.csv", t.finish());
        }
    }

    bundle.add(&format!("{name}.manifest.toml"), output::manifest(name, &cfg));
    bundle
        .write(&cfg.output_dir)
        .map_err(|e| Failure::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    for line in report {
        println!("{line}");
    }
    if failed > 0 {
        return Err(Failure::Selftest(failed));
    }
    Ok(())
}
