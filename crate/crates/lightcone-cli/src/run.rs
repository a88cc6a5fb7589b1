//! Subcommand definitions, option resolution, and execution.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use lightcone::baselines::fit_lclr;
use lightcone::baselines::lclr_predict_frame;
use lightcone::bounds::{check_concentration, check_weight_perturbation};
use lightcone::eval::{
    bootstrap_ci_mean, bootstrap_ci_pearson, err_pct, fmt_sig6, loo_experiment_cv, loo_frame_cv,
    metrics_csv, pearson, MethodSpec, MetricsReport, ProtocolConfig, DEFAULT_BOOTSTRAP_RESAMPLES,
    DEFAULT_EXPERIMENT_BUDGET, DEFAULT_FRAME_BUDGET,
};
use lightcone::field::{
    concat_cone_sets, extract_cones, read_field, standardize, subsample, write_field,
    ConeGeometry, ConeSet, Field, SpatialNorm,
};
use lightcone::kde::gaussian_kernel;
use lightcone::model_file::{read_model, write_model, Model};
use lightcone::predict::{frame_log_likelihood, predict_frame};
use lightcone::rng::derive_seed;
use lightcone::states::{fit_moonshine, fit_ohp};
use lightcone::synth::{generate, SynthKind, SynthSpec};
use lightcone::{Error, Result};

use crate::config::{parse_f64_list, resolve, resolve_opt, FileConfig};
use crate::output::{ensure_dir, write_config, write_pgm, write_text};

#[derive(Parser)]
#[command(
    name = "lightcone",
    version,
    about = "Light-cone predictive state models for spatio-temporal scalar fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit a model to one or more training fields
    Fit(FitArgs),
    /// Forecast one frame of a field with a fitted model
    Predict(PredictArgs),
    /// Cross-validated comparison of forecasting methods
    Eval(EvalArgs),
    /// Generate a synthetic field with known ground truth
    Synth(SynthArgs),
    /// Numerically check the density stability and concentration bounds
    Bounds(BoundsArgs),
    /// Extract light cones from a field to CSV
    Extract(ExtractArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file of `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for this run
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GeometryArgs {
    /// Frames of history in each predictor cone
    #[arg(long = "h-p")]
    h_p: Option<usize>,
    /// Frames of future in each target cone (0 = present only)
    #[arg(long = "h-f")]
    h_f: Option<usize>,
    /// Propagation speed in pixels per frame
    #[arg(long)]
    c: Option<usize>,
    /// Spatial norm: chebyshev or euclidean
    #[arg(long)]
    norm: Option<String>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Training field (.stf1 file or CSV frame directory); repeatable
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Model family: moonshine, ohp, or lclr
    #[arg(long)]
    method: Option<String>,
    /// Cap on states after merging (moonshine)
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Signature half-length (moonshine)
    #[arg(long = "k-sig")]
    k_sig: Option<usize>,
    /// Exact state count (ohp)
    #[arg(long)]
    k: Option<usize>,
    /// Training-cone budget; larger sets are subsampled
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fitted model file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Field to forecast (.stf1 file or CSV frame directory)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Frame index to forecast (0-based)
    #[arg(long)]
    frame: Option<usize>,
    /// Bootstrap resamples for the metrics row
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Evaluation dataset; repeatable
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Protocol: experiment (leave-one-dataset-out) or frame
    /// (leave-one-frame-out); defaults by input count
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated methods to evaluate
    #[arg(long)]
    methods: Option<String>,
    /// Frame retention stride for the frame protocol
    #[arg(long)]
    skip: Option<usize>,
    /// Training-cone budget per fold
    #[arg(long)]
    budget: Option<usize>,
    /// Bootstrap resamples for confidence intervals
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Cap on states after merging (moonshine)
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Signature half-length (moonshine)
    #[arg(long = "k-sig")]
    k_sig: Option<usize>,
    /// Exact state count (ohp)
    #[arg(long)]
    k: Option<usize>,
    /// Neighbor count (knn)
    #[arg(long = "k-neighbors")]
    k_neighbors: Option<usize>,
    /// Weight knn neighbors by inverse distance
    #[arg(long = "knn-weighted")]
    knn_weighted: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Generator: linear_diffusion, k_regime, or moving_blob
    #[arg(long)]
    kind: Option<String>,
    /// Frame count
    #[arg(long)]
    frames: Option<usize>,
    /// Frame height in pixels
    #[arg(long)]
    height: Option<usize>,
    /// Frame width in pixels
    #[arg(long)]
    width: Option<usize>,
    /// Noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// Regime count (k_regime)
    #[arg(long = "K")]
    regimes: Option<usize>,
    /// Regime means, comma-separated (k_regime); defaults to evenly spaced
    #[arg(long)]
    means: Option<String>,
    /// Patch mean-reversion rate (k_regime)
    #[arg(long)]
    reversion: Option<f64>,
    /// Diffusion coefficients, 9 comma-separated values (linear_diffusion)
    #[arg(long)]
    beta: Option<String>,
    /// Blob velocity as 'rows,cols' per frame (moving_blob)
    #[arg(long)]
    velocity: Option<String>,
    /// Blob radius in pixels (moving_blob)
    #[arg(long)]
    radius: Option<f64>,
    /// Blob peak amplitude (moving_blob)
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which check to run: perturbation, concentration, or both
    #[arg(long)]
    check: Option<String>,
    /// Perturbation trials
    #[arg(long)]
    trials: Option<usize>,
    /// Concentration Monte Carlo trials
    #[arg(long = "mc-trials")]
    mc_trials: Option<usize>,
    /// Support points per sample
    #[arg(long)]
    support: Option<usize>,
    /// Sample dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Kernel bandwidth
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Tail thresholds, comma-separated (concentration)
    #[arg(long)]
    thresholds: Option<String>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Field to decompose (.stf1 file or CSV frame directory)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Cap on cones written (0 = all)
    #[arg(long)]
    budget: Option<usize>,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Extract(args) => cmd_extract(args),
    }
}

const DEFAULT_SEED: u64 = 42;
const DEFAULT_FIT_BUDGET: usize = 40_000;

fn default_beta() -> Vec<f64> {
    vec![0.05, 0.1, 0.05, 0.1, 0.3, 0.1, 0.05, 0.1, 0.05]
}

fn load_file(config: &Option<PathBuf>) -> Result<FileConfig> {
    match config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::empty()),
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn resolve_geometry(args: &GeometryArgs, file: &FileConfig) -> Result<ConeGeometry> {
    let h_p = resolve(args.h_p, file.parse("h_p")?, 1);
    let h_f = resolve(args.h_f, file.parse("h_f")?, 0);
    let c = resolve(args.c, file.parse("c")?, 1);
    let norm = resolve(
        args.norm.clone(),
        file.get("norm").map(String::from),
        "chebyshev".into(),
    );
    ConeGeometry::new(h_p, h_f, c, SpatialNorm::parse(&norm)?)
}

fn geometry_entries(g: ConeGeometry) -> Vec<(String, String)> {
    vec![
        ("h_p".into(), g.h_p.to_string()),
        ("h_f".into(), g.h_f.to_string()),
        ("c".into(), g.c.to_string()),
        ("norm".into(), g.norm.name().into()),
    ]
}

fn resolve_inputs(cli: &[PathBuf], file: &FileConfig) -> Result<Vec<PathBuf>> {
    let inputs: Vec<PathBuf> = if cli.is_empty() {
        file.get_all("input").iter().map(PathBuf::from).collect()
    } else {
        cli.to_vec()
    };
    if inputs.is_empty() {
        return Err(Error::InvalidParam("no input field given (--input)".into()));
    }
    Ok(inputs)
}

fn resolve_one_input(cli: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    resolve_opt(cli.clone(), file.get("input").map(PathBuf::from))
        .ok_or_else(|| Error::InvalidParam("no input field given (--input)".into()))
}

fn resolve_out(cli: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    resolve_opt(cli.clone(), file.get("out").map(PathBuf::from))
        .ok_or_else(|| Error::InvalidParam("no output directory given (--out)".into()))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "fit",
        &[
            "input", "out", "seed", "threads", "h_p", "h_f", "c", "norm", "method", "k_max",
            "k_sig", "k", "budget",
        ],
    )?;
    let geometry = resolve_geometry(&args.geometry, &file)?;
    let inputs = resolve_inputs(&args.input, &file)?;
    let out = resolve_out(&args.common.out, &file)?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let method = resolve_opt(args.method.clone(), file.get("method").map(String::from))
        .ok_or_else(|| Error::InvalidParam("no method given (--method)".into()))?;
    let k_max = resolve(args.k_max, file.parse("k_max")?, 10);
    let k_sig = resolve(args.k_sig, file.parse("k_sig")?, 10);
    let k = resolve(args.k, file.parse("k")?, 10);
    let budget = resolve(args.budget, file.parse("budget")?, DEFAULT_FIT_BUDGET);

    match method.as_str() {
        "moonshine" | "ohp" | "lclr" => {}
        "mixed_licors" => {
            return Err(Error::Unsupported(
                "mixed_licors is a reserved method name and not implemented".into(),
            ));
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown fit method '{other}' (expected moonshine, ohp, or lclr)"
            )));
        }
    }
    init_threads(threads);

    let fields: Vec<Field> = inputs.iter().map(|p| read_field(p)).collect::<Result<_>>()?;
    let sets: Vec<ConeSet> = fields
        .iter()
        .map(|f| extract_cones(f, geometry))
        .collect::<Result<_>>()?;
    let refs: Vec<&ConeSet> = sets.iter().collect();
    let pooled = concat_cone_sets(&refs)?;
    let extracted = pooled.len();
    let (std_cones, scaling) = standardize(&pooled);
    let train = subsample(&std_cones, budget, derive_seed(seed, 1))?;

    let model = match method.as_str() {
        "moonshine" => Model::States(fit_moonshine(
            &train,
            k_max,
            k_sig,
            scaling,
            derive_seed(seed, 2),
        )?),
        "ohp" => Model::States(fit_ohp(&train, k, scaling, derive_seed(seed, 2))?),
        "lclr" => Model::Linear(fit_lclr(&train, scaling)?),
        _ => unreachable!(),
    };

    ensure_dir(&out)?;
    write_model(&model, &out.join("model.lcsm"))?;

    let mut log = String::new();
    log.push_str(&format!("method = {}\n", model.method_name()));
    for p in &inputs {
        log.push_str(&format!("input = {}\n", p.display()));
    }
    log.push_str(&format!("extracted cones = {extracted}\n"));
    log.push_str(&format!("training cones = {}\n", train.len()));
    match &model {
        Model::States(m) => {
            log.push_str(&format!("states = {}\n", m.k()));
            for s in m.states() {
                log.push_str(&format!("state {} members = {}\n", s.id, s.count));
            }
        }
        Model::Linear(m) => {
            log.push_str(&format!("intercept = {}\n", fmt_sig6(m.intercept())));
            for (i, b) in m.beta().iter().enumerate() {
                log.push_str(&format!("beta[{i}] = {}\n", fmt_sig6(*b)));
            }
        }
    }
    write_text(&out.join("fit.log"), &log)?;

    let mut entries: Vec<(String, String)> = Vec::new();
    for p in &inputs {
        entries.push(("input".into(), p.display().to_string()));
    }
    entries.push(("out".into(), out.display().to_string()));
    entries.extend(geometry_entries(geometry));
    entries.push(("method".into(), method.clone()));
    match method.as_str() {
        "moonshine" => {
            entries.push(("k_max".into(), k_max.to_string()));
            entries.push(("k_sig".into(), k_sig.to_string()));
        }
        "ohp" => entries.push(("k".into(), k.to_string())),
        _ => {}
    }
    entries.push(("budget".into(), budget.to_string()));
    entries.push(("seed".into(), seed.to_string()));
    write_config(&out, "fit", &entries)?;

    let what = match &model {
        Model::States(m) => format!("{} states", m.k()),
        Model::Linear(_) => "linear model".into(),
    };
    println!(
        "wrote {} ({what}, {} training cones)",
        out.join("model.lcsm").display(),
        train.len()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "predict",
        &["model", "input", "out", "seed", "threads", "frame", "bootstrap"],
    )?;
    let model_path = resolve_opt(args.model.clone(), file.get("model").map(PathBuf::from))
        .ok_or_else(|| Error::InvalidParam("no model file given (--model)".into()))?;
    let input = resolve_one_input(&args.input, &file)?;
    let out = resolve_out(&args.common.out, &file)?;
    let frame = resolve_opt(args.frame, file.parse("frame")?)
        .ok_or_else(|| Error::InvalidParam("no frame index given (--frame)".into()))?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let bootstrap = resolve(
        args.bootstrap,
        file.parse("bootstrap")?,
        DEFAULT_BOOTSTRAP_RESAMPLES,
    );
    init_threads(threads);

    let model = read_model(&model_path)?;
    let field = read_field(&input)?;
    let predicted = match &model {
        Model::States(m) => predict_frame(m, &field, frame)?,
        Model::Linear(m) => lclr_predict_frame(m, &field, frame)?,
    };

    let truth_frame = field.frame(frame);
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for row in 0..predicted.height {
        for col in 0..predicted.width {
            if let Some(v) = predicted.get(row, col) {
                preds.push(v);
                truths.push(truth_frame[row * predicted.width + col]);
            }
        }
    }
    if preds.is_empty() {
        return Err(Error::NoInteriorCones);
    }

    let sq_errs: Vec<f64> = preds
        .iter()
        .zip(&truths)
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    let mse_point = mean(&sq_errs);
    let mse_ci = bootstrap_ci_mean(&sq_errs, bootstrap, derive_seed(seed, 10))?;
    let rho = pearson(&preds, &truths).ok();
    let rho_ci = match rho {
        Some(_) => Some(bootstrap_ci_pearson(
            &preds,
            &truths,
            bootstrap,
            derive_seed(seed, 11),
        )?),
        None => None,
    };
    let geometry = model.geometry();
    let (avg_ll, ll_ci, perplexity) = match &model {
        Model::States(m) if frame + geometry.h_f < field.frames() => {
            let rep = frame_log_likelihood(m, &field, frame)?;
            let ci = bootstrap_ci_mean(&rep.log_likelihoods, bootstrap, derive_seed(seed, 12))?;
            (Some(rep.avg_log_likelihood), Some(ci), Some(rep.perplexity))
        }
        _ => (None, None, None),
    };
    let report = MetricsReport {
        method: model.method_name().into(),
        k_max: match &model {
            Model::States(m) => Some(m.k()),
            Model::Linear(_) => None,
        },
        mse: mse_point,
        mse_ci,
        rho,
        rho_ci,
        avg_ll,
        ll_ci,
        perplexity,
        fold: 0,
    };

    ensure_dir(&out)?;
    let (height, width) = (predicted.height, predicted.width);
    let pct_pairs = err_pct(&truths, &preds)?;
    let mut abs_error = vec![-0.0; height * width];
    let mut pct = vec![-0.0; height * width];
    let mut mask_values = vec![0.0; height * width];
    let mut pair = 0;
    for i in 0..height * width {
        if predicted.mask[i] {
            abs_error[i] = (predicted.values[i] - truth_frame[i]).abs();
            pct[i] = pct_pairs[pair];
            mask_values[i] = 1.0;
            pair += 1;
        }
    }

    let as_field = |values: Vec<f64>| Field::new(1, height, width, values);
    write_field(
        &as_field(predicted.values.clone())?,
        &out.join("prediction.stf1"),
    )?;
    write_field(&as_field(abs_error.clone())?, &out.join("abs_error.stf1"))?;
    write_field(&as_field(pct.clone())?, &out.join("err_pct.stf1"))?;
    write_field(&as_field(mask_values)?, &out.join("mask.stf1"))?;
    write_pgm(
        &out.join("prediction.pgm"),
        height,
        width,
        &predicted.values,
        Some(&predicted.mask),
    )?;
    write_pgm(
        &out.join("abs_error.pgm"),
        height,
        width,
        &abs_error,
        Some(&predicted.mask),
    )?;
    write_pgm(
        &out.join("err_pct.pgm"),
        height,
        width,
        &pct,
        Some(&predicted.mask),
    )?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&[report.clone()]))?;

    let entries: Vec<(String, String)> = vec![
        ("model".into(), model_path.display().to_string()),
        ("input".into(), input.display().to_string()),
        ("out".into(), out.display().to_string()),
        ("frame".into(), frame.to_string()),
        ("bootstrap".into(), bootstrap.to_string()),
        ("seed".into(), seed.to_string()),
    ];
    write_config(&out, "predict", &entries)?;

    let rho_text = report.rho.map(fmt_sig6).unwrap_or_else(|| "n/a".into());
    println!(
        "frame {frame}: mse {} rho {} over {} pixels",
        fmt_sig6(report.mse),
        rho_text,
        preds.len()
    );
    Ok(())
}

fn parse_methods(
    raw: &str,
    k_max: usize,
    k_sig: usize,
    k: usize,
    k_neighbors: usize,
    knn_weighted: bool,
) -> Result<Vec<MethodSpec>> {
    let mut specs = Vec::new();
    for name in raw.split(',') {
        let spec = match name.trim() {
            "fltp" => MethodSpec::Fltp,
            "knn" => MethodSpec::Knn {
                k: k_neighbors,
                weighted: knn_weighted,
            },
            "lclr" => MethodSpec::Lclr,
            "moonshine" => MethodSpec::Moonshine { k_max, k_sig },
            "ohp" => MethodSpec::Ohp { k },
            "mixed_licors" => {
                return Err(Error::Unsupported(
                    "mixed_licors is a reserved method name and not implemented".into(),
                ));
            }
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown method '{other}' (expected fltp, knn, lclr, moonshine, or ohp)"
                )));
            }
        };
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(Error::InvalidParam("empty method list".into()));
    }
    Ok(specs)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "eval",
        &[
            "input",
            "out",
            "seed",
            "threads",
            "h_p",
            "h_f",
            "c",
            "norm",
            "protocol",
            "methods",
            "skip",
            "budget",
            "bootstrap",
            "k_max",
            "k_sig",
            "k",
            "k_neighbors",
            "knn_weighted",
        ],
    )?;
    let geometry = resolve_geometry(&args.geometry, &file)?;
    let inputs = resolve_inputs(&args.input, &file)?;
    let out = resolve_out(&args.common.out, &file)?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let protocol = resolve(
        args.protocol.clone(),
        file.get("protocol").map(String::from),
        if inputs.len() >= 2 { "experiment" } else { "frame" }.into(),
    );
    match protocol.as_str() {
        "experiment" => {
            if inputs.len() < 2 {
                return Err(Error::InvalidParam(
                    "experiment protocol needs at least two --input datasets".into(),
                ));
            }
        }
        "frame" => {
            if inputs.len() != 1 {
                return Err(Error::InvalidParam(
                    "frame protocol takes exactly one --input dataset".into(),
                ));
            }
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown protocol '{other}' (expected experiment or frame)"
            )));
        }
    }
    let default_budget = if protocol == "experiment" {
        DEFAULT_EXPERIMENT_BUDGET
    } else {
        DEFAULT_FRAME_BUDGET
    };
    let budget = resolve(args.budget, file.parse("budget")?, default_budget);
    let skip = resolve(args.skip, file.parse("skip")?, 5);
    let bootstrap = resolve(
        args.bootstrap,
        file.parse("bootstrap")?,
        DEFAULT_BOOTSTRAP_RESAMPLES,
    );
    let k_max = resolve(args.k_max, file.parse("k_max")?, 10);
    let k_sig = resolve(args.k_sig, file.parse("k_sig")?, 10);
    let k = resolve(args.k, file.parse("k")?, 10);
    let k_neighbors = resolve(args.k_neighbors, file.parse("k_neighbors")?, 10);
    let knn_weighted = resolve(
        args.knn_weighted.then_some(true),
        file.parse("knn_weighted")?,
        false,
    );
    let methods_raw = resolve(
        args.methods.clone(),
        file.get("methods").map(String::from),
        "fltp,knn,lclr,moonshine,ohp".into(),
    );
    let specs = parse_methods(&methods_raw, k_max, k_sig, k, k_neighbors, knn_weighted)?;
    init_threads(threads);

    let fields: Vec<Field> = inputs.iter().map(|p| read_field(p)).collect::<Result<_>>()?;
    let cfg = ProtocolConfig {
        geometry,
        budget,
        bootstrap_resamples: bootstrap,
        seed,
    };
    let mut all = Vec::new();
    for spec in &specs {
        let reports = match protocol.as_str() {
            "experiment" => loo_experiment_cv(&fields, spec, &cfg)?,
            _ => loo_frame_cv(&fields[0], skip, spec, &cfg)?,
        };
        let fold_mse: Vec<f64> = reports.iter().map(|r| r.mse).collect();
        println!(
            "{}: mean mse {} over {} folds",
            spec.name(),
            fmt_sig6(mean(&fold_mse)),
            reports.len()
        );
        all.extend(reports);
    }

    ensure_dir(&out)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&all))?;

    let mut entries: Vec<(String, String)> = Vec::new();
    for p in &inputs {
        entries.push(("input".into(), p.display().to_string()));
    }
    entries.push(("out".into(), out.display().to_string()));
    entries.extend(geometry_entries(geometry));
    entries.push(("protocol".into(), protocol.clone()));
    entries.push(("methods".into(), methods_raw.clone()));
    if protocol == "frame" {
        entries.push(("skip".into(), skip.to_string()));
    }
    entries.push(("budget".into(), budget.to_string()));
    entries.push(("bootstrap".into(), bootstrap.to_string()));
    entries.push(("k_max".into(), k_max.to_string()));
    entries.push(("k_sig".into(), k_sig.to_string()));
    entries.push(("k".into(), k.to_string()));
    entries.push(("k_neighbors".into(), k_neighbors.to_string()));
    entries.push(("knn_weighted".into(), knn_weighted.to_string()));
    entries.push(("seed".into(), seed.to_string()));
    write_config(&out, "eval", &entries)?;

    println!("wrote {}", out.join("metrics.csv").display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "synth",
        &[
            "out",
            "seed",
            "threads",
            "kind",
            "frames",
            "height",
            "width",
            "noise",
            "K",
            "means",
            "reversion",
            "beta",
            "velocity",
            "radius",
            "amplitude",
        ],
    )?;
    let out = resolve_out(&args.common.out, &file)?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let kind = resolve_opt(args.kind.clone(), file.get("kind").map(String::from))
        .ok_or_else(|| Error::InvalidParam("no generator given (--kind)".into()))?;
    let frames = resolve(args.frames, file.parse("frames")?, 50);
    let height = resolve(args.height, file.parse("height")?, 64);
    let width = resolve(args.width, file.parse("width")?, 64);
    let noise = resolve(args.noise, file.parse("noise")?, 0.1);
    init_threads(threads);

    let mut entries: Vec<(String, String)> = vec![
        ("out".into(), out.display().to_string()),
        ("kind".into(), kind.clone()),
        ("frames".into(), frames.to_string()),
        ("height".into(), height.to_string()),
        ("width".into(), width.to_string()),
        ("noise".into(), noise.to_string()),
    ];

    let synth_kind = match kind.as_str() {
        "linear_diffusion" => {
            let beta = match resolve_opt(args.beta.clone(), file.get("beta").map(String::from)) {
                Some(raw) => parse_f64_list(&raw, "beta")?,
                None => default_beta(),
            };
            entries.push((
                "beta".into(),
                beta.iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ));
            SynthKind::LinearDiffusion { beta }
        }
        "k_regime" => {
            let regimes = resolve(args.regimes, file.parse("K")?, 2);
            let means = match resolve_opt(args.means.clone(), file.get("means").map(String::from))
            {
                Some(raw) => parse_f64_list(&raw, "means")?,
                None => {
                    let spacing = (8.0 * noise).max(1.0);
                    (0..regimes).map(|i| i as f64 * spacing).collect()
                }
            };
            let reversion = resolve(args.reversion, file.parse("reversion")?, 0.5);
            entries.push(("K".into(), means.len().to_string()));
            entries.push((
                "means".into(),
                means
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ));
            entries.push(("reversion".into(), reversion.to_string()));
            SynthKind::KRegime { means, reversion }
        }
        "moving_blob" => {
            let velocity = match resolve_opt(
                args.velocity.clone(),
                file.get("velocity").map(String::from),
            ) {
                Some(raw) => {
                    let v = parse_f64_list(&raw, "velocity")?;
                    if v.len() != 2 {
                        return Err(Error::InvalidParam(
                            "velocity takes exactly two values 'rows,cols'".into(),
                        ));
                    }
                    (v[0], v[1])
                }
                None => (1.0, 1.0),
            };
            let radius = resolve(args.radius, file.parse("radius")?, 5.0);
            let amplitude = resolve(args.amplitude, file.parse("amplitude")?, 1.0);
            entries.push(("velocity".into(), format!("{},{}", velocity.0, velocity.1)));
            entries.push(("radius".into(), radius.to_string()));
            entries.push(("amplitude".into(), amplitude.to_string()));
            SynthKind::MovingBlob {
                velocity,
                radius,
                amplitude,
            }
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown generator '{other}' (expected linear_diffusion, k_regime, or moving_blob)"
            )));
        }
    };
    entries.push(("seed".into(), seed.to_string()));

    let spec = SynthSpec {
        kind: synth_kind,
        frames,
        height,
        width,
        noise,
        seed,
    };
    let output = generate(&spec)?;

    ensure_dir(&out)?;
    write_field(&output.field, &out.join("field.stf1"))?;
    write_pgm(
        &out.join("field.pgm"),
        height,
        width,
        output.field.frame(0),
        None,
    )?;
    if let Some(labels) = &output.labels {
        let mut csv = String::from("row,col,label\n");
        for row in 0..height {
            for col in 0..width {
                csv.push_str(&format!("{row},{col},{}\n", labels[row * width + col]));
            }
        }
        write_text(&out.join("labels.csv"), &csv)?;
    }
    if let Some(beta) = &output.coefficients {
        let offsets = ConeGeometry::new(1, 0, 1, SpatialNorm::Chebyshev)?.plc_offsets();
        let mut csv = String::from("index,dt,dr,dc,beta\n");
        for (i, (b, o)) in beta.iter().zip(&offsets).enumerate() {
            csv.push_str(&format!("{i},{},{},{},{b}\n", o.dt, o.dr, o.dc));
        }
        write_text(&out.join("beta.csv"), &csv)?;
    }
    write_config(&out, "synth", &entries)?;

    println!(
        "wrote {} ({frames} frames of {height}x{width})",
        out.join("field.stf1").display()
    );
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "bounds",
        &[
            "out",
            "seed",
            "threads",
            "check",
            "trials",
            "mc_trials",
            "support",
            "dim",
            "bandwidth",
            "thresholds",
        ],
    )?;
    let out = resolve_out(&args.common.out, &file)?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let check = resolve(
        args.check.clone(),
        file.get("check").map(String::from),
        "both".into(),
    );
    if !matches!(check.as_str(), "perturbation" | "concentration" | "both") {
        return Err(Error::InvalidParam(format!(
            "unknown check '{check}' (expected perturbation, concentration, or both)"
        )));
    }
    let trials = resolve(args.trials, file.parse("trials")?, 10_000);
    let mc_trials = resolve(args.mc_trials, file.parse("mc_trials")?, 5_000);
    let support = resolve(args.support, file.parse("support")?, 40);
    let dim = resolve(args.dim, file.parse("dim")?, 2);
    let bandwidth = resolve(args.bandwidth, file.parse("bandwidth")?, 0.5);
    let k0 = gaussian_kernel(0.0, bandwidth, dim);
    let thresholds = match resolve_opt(
        args.thresholds.clone(),
        file.get("thresholds").map(String::from),
    ) {
        Some(raw) => parse_f64_list(&raw, "thresholds")?,
        None => [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5]
            .iter()
            .map(|f| f * k0)
            .collect(),
    };
    init_threads(threads);
    ensure_dir(&out)?;

    if check == "perturbation" || check == "both" {
        let rep = check_weight_perturbation(trials, support, dim, bandwidth, derive_seed(seed, 100))?;
        let mut csv = String::from(
            "trials,violations,max_ratio,n_support,dim,bandwidth,mean_weight_sum,mean_epsilon\n",
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rep.trials,
            rep.violations,
            fmt_sig6(rep.max_ratio),
            rep.n_support,
            rep.dim,
            fmt_sig6(rep.bandwidth),
            fmt_sig6(rep.mean_weight_sum),
            fmt_sig6(rep.mean_epsilon),
        ));
        write_text(&out.join("perturbation.csv"), &csv)?;
        println!(
            "perturbation: {} violations in {} trials (max ratio {})",
            rep.violations,
            rep.trials,
            fmt_sig6(rep.max_ratio)
        );
    }

    if check == "concentration" || check == "both" {
        let rep = check_concentration(
            mc_trials,
            support,
            dim,
            bandwidth,
            &thresholds,
            derive_seed(seed, 200),
        )?;
        let mut csv = String::from("state,threshold,bound,frequency,std_error,pass\n");
        let mut reported = 0;
        let mut passed = 0;
        for p in rep.points.iter().filter(|p| !p.vacuous) {
            reported += 1;
            passed += usize::from(p.pass);
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.state,
                fmt_sig6(p.threshold),
                fmt_sig6(p.bound),
                fmt_sig6(p.frequency),
                fmt_sig6(p.std_error),
                p.pass,
            ));
        }
        write_text(&out.join("concentration.csv"), &csv)?;
        println!(
            "concentration: {passed}/{reported} non-vacuous points pass ({} vacuous excluded); \
             worst-state bound dominates {}/{} comparisons",
            rep.points.len() - reported,
            rep.min_dominates,
            rep.min_dominates + rep.min_dominated,
        );
    }

    let entries: Vec<(String, String)> = vec![
        ("out".into(), out.display().to_string()),
        ("check".into(), check.clone()),
        ("trials".into(), trials.to_string()),
        ("mc_trials".into(), mc_trials.to_string()),
        ("support".into(), support.to_string()),
        ("dim".into(), dim.to_string()),
        ("bandwidth".into(), bandwidth.to_string()),
        (
            "thresholds".into(),
            thresholds
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("seed".into(), seed.to_string()),
    ];
    write_config(&out, "bounds", &entries)?;
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let file = load_file(&args.common.config)?;
    file.validate(
        "extract",
        &[
            "input", "out", "seed", "threads", "h_p", "h_f", "c", "norm", "budget",
        ],
    )?;
    let geometry = resolve_geometry(&args.geometry, &file)?;
    let input = resolve_one_input(&args.input, &file)?;
    let out = resolve_out(&args.common.out, &file)?;
    let seed = resolve(args.common.seed, file.parse("seed")?, DEFAULT_SEED);
    let threads = resolve(args.common.threads, file.parse("threads")?, 0);
    let budget = resolve(args.budget, file.parse("budget")?, 0);
    init_threads(threads);

    let field = read_field(&input)?;
    let mut cones = extract_cones(&field, geometry)?;
    if budget > 0 {
        cones = subsample(&cones, budget, derive_seed(seed, 1))?;
    }

    let mut csv = String::from("t,row,col");
    for i in 0..geometry.d_p() {
        csv.push_str(&format!(",plc_{i}"));
    }
    for i in 0..geometry.d_f() {
        csv.push_str(&format!(",flc_{i}"));
    }
    csv.push('\n');
    for (i, o) in cones.origins().iter().enumerate() {
        csv.push_str(&format!("{},{},{}", o.t, o.row, o.col));
        for v in cones.plcs().row(i) {
            csv.push_str(&format!(",{v}"));
        }
        for v in cones.flcs().row(i) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    ensure_dir(&out)?;
    write_text(&out.join("cones.csv"), &csv)?;

    let mut entries: Vec<(String, String)> = vec![
        ("input".into(), input.display().to_string()),
        ("out".into(), out.display().to_string()),
    ];
    entries.extend(geometry_entries(geometry));
    entries.push(("budget".into(), budget.to_string()));
    entries.push(("seed".into(), seed.to_string()));
    write_config(&out, "extract", &entries)?;

    println!(
        "extracted {} cones (d_p = {}, d_f = {})",
        cones.len(),
        geometry.d_p(),
        geometry.d_f()
    );
    Ok(())
}
