use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use microtwin_core::coil_model::CoilCalibration;
use microtwin_harness::calibrate::{curves, write_curves};
use microtwin_harness::scenario::Scenario;
use microtwin_harness::service::Service;
use microtwin_harness::sim::{RunOptions, Simulation, Summary};
use microtwin_harness::telemetry::TelemetryWriter;
use microtwin_harness::HarnessError;

#[derive(Parser)]
#[command(name = "microtwin", version, about = "Desk-scale microrobot bench twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file; exits 0 when its success criterion is met.
    Run {
        /// Scenario path, or a name looked up in $MICROTWIN_CONFIG_DIR.
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Pace the simulation to wall-clock time.
        #[arg(long)]
        realtime: bool,
        /// Serve the UI WebSocket on this port.
        #[arg(long)]
        serve: Option<u16>,
        /// Write every rendered frame as PGM into this directory.
        #[arg(long)]
        dump_frames: Option<PathBuf>,
        /// Telemetry CSV path (default: <scenario name>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print characterisation curves as CSV.
    CalibratePlot {
        /// Alternative calibration table.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(s: &Summary) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!("scenario          {}", s.scenario);
    println!("frames            {}", s.frames);
    println!("sim time (s)      {:.3}", s.sim_time);
    println!("completed         {}", s.completed);
    println!("completion (s)    {}", opt(s.completion_time));
    println!("mean speed (um/s) {}", opt(s.mean_speed));
    println!(
        "path error (um)   mean {} max {}",
        opt(s.mean_path_error),
        opt(s.max_path_error)
    );
    println!("f_optimal (Hz)    {}", opt(s.f_optimal));
    println!("identity swaps    {}", s.identity_swaps);
    println!("stale tracks      {}", s.stale_tracks);
    println!("success           {}", s.success);
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            realtime,
            serve,
            dump_frames,
            out,
        } => {
            let path = Scenario::resolve(&scenario);
            let sc = Scenario::load(&path)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.csv", sc.name)));
            let opts = RunOptions {
                seed,
                realtime,
                dump_frames,
            };
            let n_tracks = sc.robots.iter().filter(|r| r.track).count();
            let mut sim = Simulation::new(sc, opts)?;
            if let Some(port) = serve {
                let svc = Service::bind(port)?;
                eprintln!("serving ws://{}", svc.local_addr());
                sim.attach_service(svc);
            }
            let file = std::fs::File::create(&out).map_err(|e| HarnessError::io(&out, e))?;
            let mut writer = TelemetryWriter::new(std::io::BufWriter::new(file), n_tracks)?;
            let mut write_err = None;
            let summary = sim.run(|row, _| {
                if write_err.is_none() {
                    write_err = writer.write(row).err();
                }
            })?;
            if let Some(e) = write_err {
                return Err(e);
            }
            writer.finish()?;
            print_summary(&summary);
            println!("telemetry         {}", out.display());
            Ok(summary.success)
        }
        Command::CalibratePlot { calibration, out } => {
            let calib = match calibration {
                Some(p) => CoilCalibration::load(&p)?,
                None => CoilCalibration::default(),
            };
            let pts = curves(&calib)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| HarnessError::io(&p, e))?;
                    write_curves(std::io::BufWriter::new(f), &pts)?;
                }
                None => write_curves(std::io::stdout().lock(), &pts)?,
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
