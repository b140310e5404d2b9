//! `fwi`: forward runs, reference data, inversions, gradient checks and
//! field post-processing from a TOML case file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fwi_core::adjoint::Quadrature;
use fwi_core::gradcheck::{FdStep, GradientReport};
use fwi_core::inversion::{
    full_domain_pinn_invert, gradient_norm, initial_params, invert_from, sharpness_metric, AnsatzParams,
    CollocationProblem, Problem, Strategy, TrainConfig, TrainingHistory,
};
use fwi_core::io::{
    load_case, read_checkpoint, read_field, read_record, write_checkpoint, write_field, write_field_text,
    write_history, write_record, write_timing, write_vtk, Case,
};
use fwi_core::{field_mse, run_forward, FwiError, Grid, MaterialModel, ScalarField, SensorArray, SourceSpec, TimeAxis};

#[derive(Parser)]
#[command(name = "fwi", version, about = "Scalar-wave full waveform inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one shot and write wavefield snapshots and the sensor record.
    Forward {
        config: PathBuf,
        /// source index in the case file
        #[arg(long, default_value_t = 0)]
        source: usize,
        /// indicator field to simulate instead of the case phantom
        #[arg(long)]
        gamma: Option<PathBuf>,
        /// write every `stride`-th time level; 0 writes none
        #[arg(long, default_value_t = 0)]
        stride: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write reference records of every source from the refined-grid solver.
    MakeData {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured inversion strategy.
    Invert {
        config: PathBuf,
        /// directory of `shot_<k>.csv` records; generated when absent
        #[arg(long)]
        data: Option<PathBuf>,
        /// start from a checkpoint instead of a fresh initialisation
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare continuous-adjoint, reverse-sweep and finite-difference
    /// gradients. Without a config, uses a built-in 8×6 grid, 5 steps.
    Gradcheck {
        config: Option<PathBuf>,
        /// indicator at which to evaluate; random in [0.2, 1] when absent
        #[arg(long)]
        gamma: Option<PathBuf>,
        /// relative FD step `h_i = step·|γ_i|`
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "gradcheck.csv")]
        out: PathBuf,
    },
    /// γ-MSE and edge sharpness of a field against a reference field.
    Metrics {
        field: PathBuf,
        reference: PathBuf,
        /// gradient-norm threshold; 10% of the larger peak when absent
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Convert a field file to a text matrix and a legacy VTK file.
    Export {
        field: PathBuf,
        /// output path without extension
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "gamma")]
        name: String,
    },
}

enum Failure {
    Invalid(String),
    Diverged(String),
}

impl From<FwiError> for Failure {
    fn from(e: FwiError) -> Self {
        match e {
            FwiError::Divergence(msg) => Failure::Diverged(msg),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Forward {
            config,
            source,
            gamma,
            stride,
            out,
        } => forward(&config, source, gamma.as_deref(), stride, out),
        Command::MakeData { config, out } => make_data(&config, out),
        Command::Invert {
            config,
            data,
            init,
            strategy,
            epochs,
            out,
        } => invert(&config, data.as_deref(), init.as_deref(), strategy, epochs, out),
        Command::Gradcheck {
            config,
            gamma,
            step,
            seed,
            out,
        } => gradcheck(config.as_deref(), gamma.as_deref(), step, seed, &out),
        Command::Metrics {
            field,
            reference,
            threshold,
        } => metrics(&field, &reference, threshold),
        Command::Export { field, out, name } => export(&field, out, &name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("diverged: {msg}");
            ExitCode::from(2)
        }
    }
}

fn output_dir(case: &Case, out: Option<PathBuf>) -> Result<PathBuf, FwiError> {
    let dir = out.unwrap_or_else(|| case.output_dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn shot_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("shot_{k}.csv"))
}

fn forward(config: &Path, source: usize, gamma: Option<&Path>, stride: usize, out: Option<PathBuf>) -> Outcome {
    let case = load_case(config)?;
    let src = case
        .sources
        .get(source)
        .ok_or_else(|| Failure::Invalid(format!("--source {source}: the case has {} sources", case.sources.len())))?;
    let gamma = match gamma {
        Some(p) => read_field(p)?,
        None => case.truth()?,
    };
    if !gamma.grid().same_shape(&case.grid) {
        return Err(Failure::Invalid("--gamma: field grid differs from the case grid".into()));
    }
    let dir = output_dir(&case, out)?;
    let (history, record) = run_forward(&gamma, &case.material, case.time, src, &case.sensors, stride > 0)?;
    if record.data().iter().any(|v| !v.is_finite()) {
        return Err(Failure::Diverged("non-finite wavefield".into()));
    }
    write_record(&shot_path(&dir, source), &record)?;
    if let Some(history) = history {
        for n in (0..=case.time.n_steps).step_by(stride) {
            write_field(&dir.join(format!("u_{n:06}.fwif")), &history.field(n))?;
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn make_data(config: &Path, out: Option<PathBuf>) -> Outcome {
    let case = load_case(config)?;
    let dir = output_dir(&case, out)?;
    for (k, record) in case.reference_data()?.iter().enumerate() {
        write_record(&shot_path(&dir, k), record)?;
    }
    write_field(&dir.join("truth.fwif"), &case.truth()?)?;
    println!("wrote {} records to {}", case.sources.len(), dir.display());
    Ok(())
}

fn train_config(case: &Case, strategy: Option<Strategy>, epochs: Option<usize>) -> Result<TrainConfig, Failure> {
    let mut cfg = match (&case.train, strategy) {
        (Some(t), None) => t.clone(),
        (Some(t), Some(s)) if t.strategy == s => t.clone(),
        (Some(t), Some(s)) => TrainConfig {
            strategy: s,
            lr: s.default_lr(),
            ..t.clone()
        },
        (None, Some(s)) => TrainConfig::new(s, 50),
        (None, None) => {
            return Err(Failure::Invalid(
                "config error in `train`: section missing and no --strategy given".into(),
            ))
        }
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(dir: &Path, field: &ScalarField, params: &AnsatzParams, history: &TrainingHistory) -> Result<(), FwiError> {
    write_field(&dir.join("gamma.fwif"), field)?;
    write_checkpoint(&dir.join("checkpoint.fwic"), params)?;
    write_history(&dir.join("history.csv"), history)?;
    write_timing(&dir.join("timing.csv"), history)?;
    if let Some(last) = history.last() {
        let mse = last.mse.map_or_else(|| "n/a".to_string(), |m| format!("{m:.6e}"));
        println!("epochs {} final cost {:.6e} normalized mse {mse}", history.len(), last.cost);
    }
    Ok(())
}

fn invert(
    config: &Path,
    data: Option<&Path>,
    init: Option<&Path>,
    strategy: Option<Strategy>,
    epochs: Option<usize>,
    out: Option<PathBuf>,
) -> Outcome {
    let case = load_case(config)?;
    let cfg = train_config(&case, strategy, epochs)?;
    let dir = output_dir(&case, out)?;
    if cfg.strategy == Strategy::FullDomainPinn {
        let truth = case.truth()?;
        let wavefields = case
            .sources
            .iter()
            .map(|s| Ok(run_forward(&truth, &case.material, case.time, s, &case.sensors, true)?.0.expect("history")))
            .collect::<Result<Vec<_>, FwiError>>()?;
        let problem = CollocationProblem {
            grid: case.grid.clone(),
            material: case.material,
            time: case.time,
            sources: case.sources.clone(),
            wavefields,
            truth: Some(truth),
        };
        let inv = full_domain_pinn_invert(&problem, &cfg)?;
        finish(&dir, &inv.field, &AnsatzParams::Network(inv.network.clone()), &inv.history)?;
        write_field(&dir.join("penalty_weights.fwif"), inv.weights.field())?;
        return inv.divergence.map_or(Ok(()), |m| Err(Failure::Diverged(m)));
    }
    let records = match data {
        Some(d) => (0..case.sources.len())
            .map(|k| read_record(&shot_path(d, k)))
            .collect::<Result<Vec<_>, _>>()?,
        None => case.reference_data()?,
    };
    let problem = case.problem(records)?;
    let params = match init {
        Some(p) => read_checkpoint(p)?,
        None => initial_params(&problem, &cfg)?,
    };
    let inv = invert_from(&problem, &cfg, params)?;
    finish(&dir, &inv.field, &inv.params, &inv.history)?;
    inv.divergence.map_or(Ok(()), |m| Err(Failure::Diverged(m)))
}

fn builtin_gradcheck_case(seed: u64) -> Result<(Problem, ScalarField), FwiError> {
    use rand::{Rng, SeedableRng};
    let h = 1e-3;
    let grid = Grid::with_spacing(&[8, 6], &[h, h], 1)?;
    let material = MaterialModel::aluminium();
    let time = TimeAxis::new(0.5 * h / material.c0, 5)?;
    let src = SourceSpec::new(vec![3, 5], 1e12, 5e5, 2)?;
    let sensors = SensorArray::new(vec![vec![2, 5], vec![4, 5], vec![3, 4]])?;
    let (_, data) = run_forward(&ScalarField::constant(&grid, 1.0), &material, time, &src, &sensors, false)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gamma = ScalarField::from_fn(&grid, |_| rng.random_range(0.2..1.0));
    let problem = Problem {
        grid,
        material,
        time,
        sources: vec![src],
        sensors,
        data: vec![data],
        truth: None,
        quadrature: Quadrature::LeftRiemann,
    };
    Ok((problem, gamma))
}

fn gradcheck(config: Option<&Path>, gamma: Option<&Path>, step: f64, seed: u64, out: &Path) -> Outcome {
    let (problem, default_gamma) = match config {
        Some(c) => {
            let case = load_case(c)?;
            let problem = case.problem(case.reference_data()?)?;
            let start = ScalarField::constant(&case.grid, 1.0);
            (problem, start)
        }
        None => builtin_gradcheck_case(seed)?,
    };
    let gamma = match gamma {
        Some(p) => read_field(p)?,
        None => default_gamma,
    };
    let report = GradientReport::compute(&problem, &gamma, FdStep::Relative(step))?;
    let table = report.to_table();
    fs::write(out, &table).map_err(FwiError::from)?;
    for line in table.lines().take_while(|l| l.starts_with('#')) {
        println!("{}", &line[2..]);
    }
    Ok(())
}

fn metrics(field: &Path, reference: &Path, threshold: Option<f64>) -> Outcome {
    let a = read_field(field)?;
    let b = read_field(reference)?;
    let mse = field_mse(&a, &b)?;
    let baseline = field_mse(&ScalarField::constant(b.grid(), 1.0), &b)?;
    let threshold = threshold.unwrap_or_else(|| 0.1 * gradient_norm(&a).max_abs().max(gradient_norm(&b).max_abs()));
    let sa = sharpness_metric(&a, threshold)?;
    let sb = sharpness_metric(&b, threshold)?;
    println!("mse,{mse:.16e}");
    if baseline > 0.0 {
        println!("normalized_mse,{:.16e}", mse / baseline);
    }
    println!("threshold,{threshold:.16e}");
    println!("sharpness_field,{:.16e},{}", sa.mean_above, sa.count_above);
    println!("sharpness_reference,{:.16e},{}", sb.mean_above, sb.count_above);
    Ok(())
}

fn export(field: &Path, out: Option<PathBuf>, name: &str) -> Outcome {
    let f = read_field(field)?;
    let stem = out.unwrap_or_else(|| field.with_extension(""));
    write_field_text(&stem.with_extension("txt"), &f)?;
    write_vtk(&stem.with_extension("vtk"), &f, name)?;
    println!("wrote {}.txt and {}.vtk", stem.display(), stem.display());
    Ok(())
}
