//! Command-line front end: scene synthesis, unmixing, evaluation, and
//! map export, wired together through small on-disk formats.
//!
//! Exit codes: 0 on success, 2 for usage or format problems, 3 for
//! numeric failures inside the solver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use hsunmix::model::AbundanceMatrix;
use hsunmix::unmixers::{self, Method, UnmixSpec, NUSAL_TAU_GRID, RUSAL_TAU_GRID};
use hsunmix::{admm, eval, io, synth, Error};

#[derive(Parser)]
#[command(
    name = "hsunmix",
    version,
    about = "Supervised hyperspectral unmixing with residual mixture models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth
    Synth(SynthArgs),
    /// Estimate abundances and residual coefficients for a cube
    Unmix(UnmixArgs),
    /// Score an unmixing run against a cube and optional ground truth
    Eval(EvalArgs),
    /// Export abundance maps and interaction profiles as images and CSV
    ExportMaps(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    I1,
    I2,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene preset: i1 (linear/NL-3/bilinear/polynomial classes) or
    /// i2 (linear/variability/mismodelling classes)
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 100)]
    rows: usize,
    #[arg(long, default_value_t = 100)]
    cols: usize,
    #[arg(long, default_value_t = 207)]
    bands: usize,
    #[arg(long)]
    endmembers: usize,
    #[arg(long, default_value_t = 25.0)]
    snr_db: f64,
    #[arg(long)]
    seed: u64,
    /// Load endmember spectra from CSV instead of generating them
    #[arg(long)]
    endmember_file: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Nusal,
    Rusal,
    Linear,
}

#[derive(Args)]
struct UnmixArgs {
    #[arg(long, value_enum)]
    method: CliMethod,
    /// Highest interaction order (nusal only)
    #[arg(long, default_value_t = 2)]
    order: u32,
    /// DCT expansion size (rusal only)
    #[arg(long, default_value_t = 20)]
    dct_dim: usize,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    mu0: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Freeze the penalty parameter instead of adapting it
    #[arg(long)]
    no_adapt: bool,
    /// Search the built-in tau grid and keep the best run
    #[arg(long)]
    grid: bool,
    /// Ground-truth abundances CSV used to score grid points (otherwise
    /// the reconstruction error is used)
    #[arg(long)]
    true_abundances: Option<PathBuf>,
    /// Also write per-iteration diagnostics as history.csv
    #[arg(long)]
    history: bool,
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    endmembers: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    reconstruction: PathBuf,
    #[arg(long)]
    abundances: PathBuf,
    #[arg(long)]
    endmembers: PathBuf,
    #[arg(long)]
    true_abundances: Option<PathBuf>,
    /// Label map PGM as written by synth; enables per-class RMSE
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    abundances: PathBuf,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Residual coefficients CSV from a nusal run
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Multi-index sidecar written alongside the coefficients
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Unmix(args) => cmd_unmix(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ExportMaps(args) => cmd_export_maps(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Numeric(_) => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn file_sha256(paths: &[&Path]) -> Result<String, Error> {
    let mut hasher = Sha256::new();
    for p in paths {
        hasher.update(std::fs::read(p)?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let mut spec = match args.preset {
        Preset::I1 => synth::SceneSpec::i1(args.endmembers, args.seed),
        Preset::I2 => synth::SceneSpec::i2(args.endmembers, args.seed),
    };
    spec.rows = args.rows;
    spec.cols = args.cols;
    spec.l = args.bands;
    spec.snr_db = args.snr_db;
    spec.validate()?;

    let (truth, m) = match &args.endmember_file {
        Some(path) => {
            let m = synth::load_endmembers(path)?;
            (synth::build_scene_with_endmembers(&spec, &m)?, m)
        }
        None => synth::build_scene(&spec)?,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_cube(&args.out_dir.join("cube.hsib"), &truth.noisy)?;
    io::write_label_pgm(
        &args.out_dir.join("labels.pgm"),
        &truth.labels,
        spec.rows,
        spec.cols,
        spec.classes.len(),
    )?;
    io::write_csv(&args.out_dir.join("abundances.csv"), truth.abundances.data())?;
    io::write_csv(&args.out_dir.join("endmembers.csv"), m.data())?;

    let preset = match args.preset {
        Preset::I1 => "i1",
        Preset::I2 => "i2",
    };
    let entries = vec![
        kv("preset", preset),
        kv("rows", spec.rows),
        kv("cols", spec.cols),
        kv("bands", spec.l),
        kv("endmembers", spec.r),
        kv("classes", spec.classes.len()),
        kv("beta", spec.beta),
        kv("snr_db", spec.snr_db),
        kv("seed", spec.seed),
        kv("sigma2", format!("{:.16e}", truth.sigma2)),
    ];
    io::write_manifest(&args.out_dir.join("manifest.txt"), &entries)?;
    println!(
        "wrote scene: {} pixels, {} bands, {} classes, sigma2 {:.3e}",
        spec.rows * spec.cols,
        spec.l,
        spec.classes.len(),
        truth.sigma2
    );
    Ok(())
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn cmd_unmix(args: UnmixArgs) -> Result<(), Error> {
    let cube = io::read_cube(&args.cube)?;
    let m = synth::load_endmembers(&args.endmembers)?;

    let mut spec = match args.method {
        CliMethod::Nusal => UnmixSpec::nusal(args.order),
        CliMethod::Rusal => UnmixSpec::rusal(args.dct_dim),
        CliMethod::Linear => UnmixSpec::linear_baseline(),
    };
    if let Some(t) = args.tau1 {
        spec.tau1 = t;
    }
    if let Some(t) = args.tau2 {
        spec.tau2 = t;
    }
    spec.solver.mu0 = args.mu0;
    spec.solver.tol = args.tol;
    spec.solver.max_iter = args.max_iter;
    spec.solver.adapt = !args.no_adapt;

    let truth = args
        .true_abundances
        .as_ref()
        .map(|p| io::read_csv(p).and_then(AbundanceMatrix::new))
        .transpose()?;

    let start = Instant::now();
    let (result, chosen) = if args.grid {
        let taus: &[f64] = match args.method {
            CliMethod::Nusal => &NUSAL_TAU_GRID,
            CliMethod::Rusal => &RUSAL_TAU_GRID,
            CliMethod::Linear => {
                return Err(Error::InvalidArgument(
                    "the linear baseline has no tau grid".into(),
                ))
            }
        };
        let (result, point) = unmixers::grid_search(&cube, &m, &spec, taus, truth.as_ref())?;
        spec.tau1 = point.tau1;
        spec.tau2 = point.tau2;
        (result, Some(point))
    } else {
        (unmixers::unmix(&cube, &m, &spec)?, None)
    };
    let runtime = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_csv(&args.out_dir.join("abundances.csv"), result.abundances.data())?;
    io::write_cube(&args.out_dir.join("reconstruction.hsib"), &result.reconstruction)?;
    if let Some(coeffs) = &result.residual_coeffs {
        io::write_csv(&args.out_dir.join("residual_coefficients.csv"), coeffs.data())?;
    }
    if matches!(args.method, CliMethod::Nusal) {
        let dict = hsunmix::model::build_interaction_matrix(&m, args.order)?;
        let labels: Vec<String> = dict.indices().iter().map(|i| i.label()).collect();
        std::fs::write(
            args.out_dir.join("interaction_indices.csv"),
            labels.join("\n") + "\n",
        )?;
    }
    let energy = eval::residual_energy_map(&cube, &m, &result.abundances)?;
    io::write_pgm(&args.out_dir.join("residual_energy.pgm"), &energy)?;

    if args.history {
        // rerun with recording on so the main timing stays undisturbed
        let mut hist_spec = spec.clone();
        hist_spec.solver.record_history = true;
        let problem = match hist_spec.method {
            Method::Nusal { .. } => unmixers::assemble_nusal(&cube, &m, &hist_spec)?,
            Method::Rusal { .. } => unmixers::assemble_rusal(&cube, &m, &hist_spec)?,
            Method::LinearBaseline => unmixers::assemble_linear_baseline(&cube, &m)?,
        };
        let (state, _) = admm::solve(&problem, &hist_spec.solver, None)?;
        if let Some(history) = state.history {
            let rows = history.len();
            let table = DMatrix::from_fn(rows, 4, |i, j| match j {
                0 => history[i].iter as f64,
                1 => history[i].primal,
                2 => history[i].dual,
                _ => history[i].mu,
            });
            io::write_csv(&args.out_dir.join("history.csv"), &table)?;
        }
    }

    let method = match args.method {
        CliMethod::Nusal => "nusal",
        CliMethod::Rusal => "rusal",
        CliMethod::Linear => "linear",
    };
    let mut entries = vec![
        kv("method", method),
        kv("tau1", format!("{:.16e}", spec.tau1)),
        kv("tau2", format!("{:.16e}", spec.tau2)),
        kv("mu0", format!("{:.16e}", args.mu0)),
        kv("tol", format!("{:.16e}", args.tol)),
        kv("max_iter", args.max_iter),
        kv("adapt", !args.no_adapt),
        kv("input_sha256", file_sha256(&[&args.cube, &args.endmembers])?),
        kv("converged", result.report.converged),
        kv("iterations", result.report.iterations),
        kv("runtime_s", format!("{:.16e}", runtime)),
    ];
    match args.method {
        CliMethod::Nusal => entries.push(kv("order", args.order)),
        CliMethod::Rusal => entries.push(kv("dct_dim", args.dct_dim)),
        CliMethod::Linear => {}
    }
    if let Some(point) = chosen {
        entries.push(kv("grid_score", format!("{:.16e}", point.score)));
    }
    io::write_manifest(&args.out_dir.join("manifest.txt"), &entries)?;
    println!(
        "{} finished: converged={}, iterations={}, runtime {:.2}s",
        method, result.report.converged, result.report.iterations, runtime
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let cube = io::read_cube(&args.cube)?;
    let reconstruction = io::read_cube(&args.reconstruction)?;
    let estimate = AbundanceMatrix::new(io::read_csv(&args.abundances)?)?;
    let m = synth::load_endmembers(&args.endmembers)?;
    let truth = args
        .true_abundances
        .as_ref()
        .map(|p| io::read_csv(p).and_then(AbundanceMatrix::new))
        .transpose()?;
    let labels = args
        .labels
        .as_ref()
        .map(|p| io::read_label_pgm(p))
        .transpose()?;
    if let Some((labs, rows, cols, _)) = &labels {
        if labs.len() != cube.num_pixels() || *rows != cube.rows() || *cols != cube.cols() {
            return Err(Error::InvalidArgument(format!(
                "label map is {rows}x{cols}, cube is {}x{}",
                cube.rows(),
                cube.cols()
            )));
        }
    }

    let label_view = labels
        .as_ref()
        .map(|(labs, _, _, classes)| (labs.as_slice(), *classes));
    let report = eval::metrics(
        &cube,
        &reconstruction,
        &estimate,
        truth.as_ref(),
        label_view,
        0.0,
    )?;

    std::fs::create_dir_all(&args.out_dir)?;
    io::write_manifest(&args.out_dir.join("metrics.txt"), &report.to_key_values())?;
    if let Some(per_class) = &report.per_class_rmse {
        let table = DMatrix::from_fn(per_class.len(), 2, |i, j| {
            if j == 0 {
                i as f64
            } else {
                per_class[i]
            }
        });
        io::write_csv(&args.out_dir.join("per_class_rmse.csv"), &table)?;
    }
    let energy = eval::residual_energy_map(&cube, &m, &estimate)?;
    io::write_pgm(&args.out_dir.join("residual_energy.pgm"), &energy)?;

    for (k, v) in report.to_key_values() {
        println!("{k}={v}");
    }
    Ok(())
}

fn cmd_export_maps(args: ExportArgs) -> Result<(), Error> {
    let a = io::read_csv(&args.abundances)?;
    if a.ncols() != args.rows * args.cols {
        return Err(Error::InvalidArgument(format!(
            "{} pixels in the abundance file, geometry says {}",
            a.ncols(),
            args.rows * args.cols
        )));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let mut sidecar = Vec::new();
    for r in 0..a.nrows() {
        let map = DMatrix::from_fn(args.rows, args.cols, |i, j| a[(r, i * args.cols + j)]);
        let min = map.min();
        let max = map.max();
        io::write_pgm(&args.out_dir.join(format!("abundance_{r}.pgm")), &map)?;
        sidecar.push(kv(&format!("map_{r}_min"), format!("{min:.16e}")));
        sidecar.push(kv(&format!("map_{r}_max"), format!("{max:.16e}")));
        if min == max {
            sidecar.push(kv(&format!("map_{r}_degenerate"), "true"));
        }
    }
    io::write_manifest(&args.out_dir.join("maps.txt"), &sidecar)?;

    if let Some(coeff_path) = &args.coefficients {
        let coeffs = io::read_csv(coeff_path)?;
        let names: Vec<String> = match &args.indices {
            Some(p) => std::fs::read_to_string(p)?
                .lines()
                .map(|s| s.to_string())
                .collect(),
            None => (0..coeffs.nrows()).map(|i| format!("term_{i}")).collect(),
        };
        if names.len() != coeffs.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} index labels for {} coefficient rows",
                names.len(),
                coeffs.nrows()
            )));
        }
        let n = coeffs.ncols() as f64;
        let mut lines = Vec::with_capacity(names.len());
        for (t, name) in names.iter().enumerate() {
            let mean = coeffs.row(t).sum() / n;
            lines.push(format!("{name},{mean:.16e}"));
        }
        std::fs::write(
            args.out_dir.join("interaction_profile.csv"),
            lines.join("\n") + "\n",
        )?;
    }
    println!("exported {} abundance maps", a.nrows());
    Ok(())
}
