//! Command-line front end: every subcommand is a thin wrapper over the
//! library's harness operations.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmtsim::harness::{self, write_osnr_csv, write_spectrum_csv, write_sweep_csv, SweepParam};
use dmtsim::txchain::{export_waveform, make_training_symbols};
use dmtsim::{Error, LinkConfig, SimRng, SubcarrierPlan};

#[derive(Parser)]
#[command(
    name = "dmtsim",
    about = "Deterministic simulator of a 56-Gb/s IM/DD DMT link over dispersive fiber",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config file (LinkConfig schema); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config override, e.g. --set fiber.L=40 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn load(&self) -> dmtsim::Result<LinkConfig> {
        let base = match &self.config {
            Some(path) => LinkConfig::from_json_file(path)?,
            None => LinkConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.sets)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn sink(&self) -> dmtsim::Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(std::fs::File::create(path)?),
            None => Box::new(std::io::stdout()),
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Probe the channel and emit the calibrated bit/power plan as JSON.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate (or take a plan) and measure BER; emits metrics as JSON.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reuse a previously calibrated plan (JSON) instead of recalibrating.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Export the first transmitted frame as f64-le binary plus sidecar.
        #[arg(long)]
        dump_waveform: Option<PathBuf>,
    },
    /// BER vs cyclic prefix length.
    SweepCp {
        #[command(flatten)]
        common: Common,
        /// Comma-separated CP lengths in samples.
        #[arg(long, default_value = "2,4,8,16,32,64,128,256,512")]
        values: String,
    },
    /// BER vs number of training symbols.
    SweepTs {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1,2,3,4,5,6,8,10,12,14,16,18,20")]
        values: String,
    },
    /// BER vs VSB filter detuning.
    SweepDetune {
        #[command(flatten)]
        common: Common,
        /// Comma-separated detunings in GHz.
        #[arg(long, default_value = "0,5,10,15,20,25,30")]
        values: String,
    },
    /// BER vs fiber launch power (meaningful with the nonlinear model).
    SweepPower {
        #[command(flatten)]
        common: Common,
        /// Comma-separated launch powers in dBm.
        #[arg(long, default_value = "-7,-5,-3,-1,1,3,5,7,9")]
        values: String,
    },
    /// BER vs OSNR curve.
    OsnrCurve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated OSNR targets in dB.
        #[arg(long, default_value = "20,22,24,26,28,30,32,34,36,38,40")]
        values: String,
    },
    /// OSNR needed to reach a BER target, by log-linear interpolation on an
    /// OSNR sweep.
    RequiredOsnr {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "20,22,24,26,28,30,32,34,36,38,40")]
        values: String,
        #[arg(long, default_value_t = harness::FEC_LIMIT_BER)]
        ber_target: f64,
    },
    /// Per-subcarrier SNR profile from a probe run.
    SnrSpectrum {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_values(csv: &str) -> dmtsim::Result<Vec<f64>> {
    csv.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad sweep value `{s}`: {e}")))
        })
        .collect()
}

fn run_sweep(common: &Common, param: SweepParam, values: &str) -> dmtsim::Result<()> {
    let cfg = common.load()?;
    let result = harness::sweep(&cfg, param, &parse_values(values)?)?;
    let mut out = common.sink()?;
    if param == SweepParam::TargetOsnrDb {
        write_osnr_csv(&mut out, &cfg, &result)?;
    } else {
        write_sweep_csv(&mut out, &result, param)?;
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> dmtsim::Result<()> {
    match cmd {
        Cmd::Calibrate { common } => {
            let cfg = common.load()?;
            let cal = harness::calibrate(&cfg)?;
            let mut out = common.sink()?;
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&cal).expect("calibration serializes")
            )?;
            Ok(())
        }
        Cmd::Run {
            common,
            plan,
            dump_waveform,
        } => {
            let cfg = common.load()?;
            let (plan, snr) = match plan {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    let plan: SubcarrierPlan = serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    (plan, None)
                }
                None => {
                    let cal = harness::calibrate(&cfg)?;
                    (cal.plan, Some(cal.snr))
                }
            };
            if let Some(path) = &dump_waveform {
                let root = SimRng::new(cfg.seed);
                let ts = make_training_symbols(&plan, &mut root.fork(0))?;
                let drive = harness::drive_waveform(&cfg, &plan, &ts, 0)?;
                export_waveform(path, &drive, &plan)?;
            }
            let mut metrics = harness::run_link(&cfg, &plan)?;
            metrics.snr_profile = snr;
            let mut out = common.sink()?;
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&metrics).expect("metrics serialize")
            )?;
            Ok(())
        }
        Cmd::SweepCp { common, values } => run_sweep(&common, SweepParam::CpSamples, &values),
        Cmd::SweepTs { common, values } => run_sweep(&common, SweepParam::NTs, &values),
        Cmd::SweepDetune { common, values } => run_sweep(&common, SweepParam::DetuneGhz, &values),
        Cmd::SweepPower { common, values } => {
            run_sweep(&common, SweepParam::LaunchPowerDbm, &values)
        }
        Cmd::OsnrCurve { common, values } => run_sweep(&common, SweepParam::TargetOsnrDb, &values),
        Cmd::RequiredOsnr {
            common,
            values,
            ber_target,
        } => {
            let cfg = common.load()?;
            let result = harness::required_osnr(&cfg, ber_target, &parse_values(&values)?)?;
            let mut out = common.sink()?;
            write_osnr_csv(&mut out, &cfg, &result.curve)?;
            println!(
                "{}",
                serde_json::json!({
                    "required_osnr_db": result.osnr_db,
                    "saturated": result.saturated,
                    "ber_target": ber_target,
                })
            );
            Ok(())
        }
        Cmd::SnrSpectrum { common } => {
            let cfg = common.load()?;
            let rows = harness::snr_spectrum(&cfg)?;
            let mut out = common.sink()?;
            write_spectrum_csv(&mut out, &rows)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
