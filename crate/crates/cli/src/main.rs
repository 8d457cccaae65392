//! `hsdm`: synthesize, corrupt, train, denoise, evaluate and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hsdm_core::bench::run_bench;
use hsdm_core::denoise::{denoise_cube, TileConfig};
use hsdm_core::gradcheck::{model_suite, op_suite};
use hsdm_core::io::{read_cube, write_cube, write_noise_kv, KeyValues, RunConfig};
use hsdm_core::metrics::MetricsReport;
use hsdm_core::model::HsdmModel;
use hsdm_core::noise::{corrupt, generate_synthetic_scene, NoiseCase, NoiseSpec, SyntheticOptions};
use hsdm_core::train::{train, Dataset};
use hsdm_core::{Error, Result};

/// Suffix of the resolved-config file written next to single-file outputs.
const CONFIG_SUFFIX: &str = ".config.txt";
/// Resolved-config file inside output directories.
const DIR_CONFIG: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "hsdm", version, about = "Hyperspectral denoising with bidirectional selective scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic low-rank clean cube.
    Gen {
        #[arg(long, default_value_t = 8)]
        bands: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flat endmember spectra (rank 1 gives a spatially constant cube).
        #[arg(long)]
        constant_spectra: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade a clean cube with one of the noise cases.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        /// noniid_gauss, gauss_stripe, gauss_deadline, gauss_impulse or mixture.
        #[arg(long)]
        case: NoiseCase,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config whose `noise.*` keys override the default ranges.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on synthetic data; writes the checkpoint, log and config to `--out`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Denoise a cube with overlapping tiles.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        tile: usize,
        #[arg(long, default_value_t = 8)]
        overlap: usize,
    },
    /// PSNR, SSIM and SAM of a test cube against its clean reference.
    Eval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Also write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scaling benchmark; CSV to stdout or to `--out`.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient suite; exits 3 on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the end-to-end model checks.
        #[arg(long)]
        ops_only: bool,
    },
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(CONFIG_SUFFIX);
    out.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_sidecar(out: &Path, kv: &KeyValues) -> Result<()> {
    write_text(&sidecar(out), &kv.to_text())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::File {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            bands,
            height,
            width,
            rank,
            seed,
            constant_spectra,
            out,
        } => {
            let opts = SyntheticOptions { constant_spectra };
            let scene = generate_synthetic_scene(bands, height, width, rank, seed, opts)?;
            write_cube(&out, &scene.cube)?;
            let mut kv = KeyValues::default();
            kv.set("command", "gen");
            kv.set("bands", bands);
            kv.set("height", height);
            kv.set("width", width);
            kv.set("rank", rank);
            kv.set("seed", seed);
            kv.set("constant_spectra", constant_spectra);
            write_sidecar(&out, &kv)
        }
        Command::Corrupt {
            input,
            case,
            seed,
            config,
            out,
        } => {
            let clean = read_cube(&input)?;
            let spec = NoiseSpec {
                case,
                seed,
                ..load_config(config.as_deref())?.data.noise
            };
            spec.validate()?;
            write_cube(&out, &corrupt(&clean, &spec)?)?;
            let mut kv = KeyValues::default();
            kv.set("command", "corrupt");
            kv.set("in", input.display());
            write_noise_kv(&spec, &mut kv, "noise.");
            write_sidecar(&out, &kv)
        }
        Command::Train { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            create_dir(&out)?;
            cfg.save(&out.join(DIR_CONFIG))?;
            let data = Dataset::synthetic(&cfg.data)?;
            let mut model = HsdmModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
            eprintln!("{} parameters, {} steps", model.num_params(), cfg.train.total_steps());
            let report = train(&mut model, &data, &cfg.train, Some(&out), |row| {
                eprintln!(
                    "epoch {} step {} loss {:.6} lr {:.2e} val_psnr {:.3}",
                    row.epoch, row.step, row.loss, row.lr, row.val_psnr
                );
            })?;
            println!(
                "noisy_val_psnr = {:.4}\nfinal_val_psnr = {:.4}",
                report.noisy_val_psnr, report.final_val_psnr
            );
            Ok(())
        }
        Command::Denoise {
            model,
            input,
            out,
            tile,
            overlap,
        } => {
            let net = HsdmModel::<f32>::load(&model)?;
            let cube = read_cube(&input)?;
            let tiles = TileConfig { tile, overlap };
            write_cube(&out, &denoise_cube(&net, &cube, &tiles)?)?;
            let mut kv = KeyValues::default();
            kv.set("command", "denoise");
            kv.set("model", model.display());
            kv.set("in", input.display());
            kv.set("tile", tile);
            kv.set("overlap", overlap);
            net.config().write_kv(&mut kv, "model.");
            write_sidecar(&out, &kv)
        }
        Command::Eval { clean, test, out } => {
            let report = MetricsReport::evaluate(&read_cube(&clean)?, &read_cube(&test)?)?;
            print!("{}", report.to_text());
            match out {
                Some(path) => write_text(&path, &report.to_csv()),
                None => Ok(()),
            }
        }
        Command::Bench { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let result = run_bench(&cfg.bench)?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    write_text(&dir.join("bench.csv"), &result.to_csv())?;
                    write_text(&dir.join("slopes.csv"), &result.slopes_csv())?;
                    cfg.save(&dir.join(DIR_CONFIG))?;
                    print!("{}", result.slopes_csv());
                }
                None => print!("{}", result.to_csv()),
            }
            Ok(())
        }
        Command::Gradcheck { seed, ops_only } => {
            let mut results = op_suite(seed)?;
            if !ops_only {
                results.extend(model_suite(seed)?);
            }
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(Error::Domain(format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
