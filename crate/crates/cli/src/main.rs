use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use waverom::harness::{
    load_data, make_data, rom_from_data, run_experiment, run_inversion, save_data, save_field, save_rom, trajectory_csv,
    Experiment, ExperimentConfig, HarnessError, RankSpec, Report,
};
use waverom::inversion::{relative_model_error, Mode};

#[derive(Parser)]
#[command(name = "waverom", version, about = "Data-driven ROM inversion of acoustic speed and density")]
struct Cli {
    /// Worker threads for Jacobian columns (defaults to all cores).
    #[arg(long, global = true, env = "WAVEROM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate clean (and noisy) data matrices for an experiment.
    MakeData {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build the ROM factor from a data file.
    BuildRom {
        /// Data file written by make-data.
        #[arg(long)]
        data: PathBuf,
        /// auto, full, or a block rank.
        #[arg(long, default_value = "auto")]
        rank: RankSpec,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one inversion mode.
    Invert {
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[command(flatten)]
        exp: ExpArgs,
        /// Use this data file instead of simulating.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Full recipe: data, ROM, both inversions, report directory.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the summary of a report directory.
    Report { dir: PathBuf },
    /// Print the configuration of a built-in experiment as TOML.
    Recipe {
        #[arg(long, default_value = "two-inclusions")]
        experiment: String,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// two-inclusions, cracks1, cracks2, layered-wedge, or custom.
    #[arg(long, default_value = "custom")]
    experiment: String,
    /// Experiment file; required for custom.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

impl ExpArgs {
    fn load(&self) -> Result<Experiment, HarnessError> {
        let mut cfg = match (self.experiment.as_str(), &self.config) {
            (_, Some(path)) => ExperimentConfig::load(path)?,
            ("custom", None) => return Err(HarnessError::Config("--experiment custom needs --config".into())),
            (name, None) => Experiment::by_name(name)?.config,
        };
        if let Some(b) = self.noise_level {
            cfg.rom.noise_level = b;
        }
        if let Some(s) = self.seed {
            cfg.rom.seed = s;
        }
        Experiment::new(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::MakeData { exp, out } => {
            let exp = exp.load()?;
            create_dir(&out)?;
            write(&out.join("config.toml"), &exp.config.to_toml())?;
            let data = make_data(&exp)?;
            save_data(&out.join("data_clean.bin"), &data.clean)?;
            if let Some(noisy) = &data.noisy {
                save_data(&out.join("data_noisy.bin"), noisy)?;
                println!("noise level {} realized as {:.6e}", exp.config.rom.noise_level, data.noise_ratio);
            }
            println!(
                "wrote D_0..D_{} ({} excitations) to {}",
                data.clean.n_t(),
                data.clean.n_excitations(),
                out.display()
            );
        }
        Command::BuildRom { data, rank, out } => {
            let d = load_data(&data)?;
            let f = rom_from_data(&d, rank)?;
            create_dir(&out)?;
            save_rom(&out, &f)?;
            println!(
                "ROM rank {} of n_t = {} (block size {}), written to {}",
                f.rank,
                f.n_t,
                f.block_size(),
                out.display()
            );
        }
        Command::Invert { mode, exp, data, out } => {
            let exp = exp.load()?;
            let d = match data {
                Some(p) => load_data(&p)?,
                None => {
                    let b = make_data(&exp)?;
                    b.noisy.unwrap_or(b.clean)
                }
            };
            let rom = match mode {
                Mode::Rom => Some(rom_from_data(&d, exp.config.rom.rank)?),
                Mode::Fwi => None,
            };
            let res = run_inversion(&exp, &d, rom.as_ref(), mode)?;
            create_dir(&out)?;
            write(&out.join(format!("trajectory_{mode}.csv")), &trajectory_csv(&res))?;
            let grid = exp.config.grid()?;
            save_field(&out, &format!("{mode}_c"), &res.medium.c, &grid)?;
            save_field(&out, &format!("{mode}_rho"), &res.medium.rho, &grid)?;
            println!(
                "{mode}: objective {:.4e} -> {:.4e} in {} iterations, relative model error {:.4}",
                res.initial_objective,
                res.trajectory.last().map_or(res.initial_objective, |r| r.objective),
                res.trajectory.len(),
                relative_model_error(&res.medium, &exp.truth)
            );
        }
        Command::Run { exp, out } => {
            let exp = exp.load()?;
            let report = run_experiment(&exp, &out)?;
            print!("{}", report.summary());
        }
        Command::Report { dir } => {
            print!("{}", Report::load(&dir)?.summary());
        }
        Command::Recipe { experiment } => {
            print!("{}", Experiment::by_name(&experiment)?.config.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
