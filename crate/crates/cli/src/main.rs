//! `imcsnn` batch-experiment runner.
//!
//! Every subcommand reads an optional JSON run configuration, writes its
//! artifacts under `--out` and echoes the resolved configuration there.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use imcsnn::bench::{convergence_sweep, timing_sweep, write_csv, SweepAxis, TimedPath, TimingConfig};
use imcsnn::data::{encode_images, encode_iris, load_idx_dir, load_iris_csv, RawDataset};
use imcsnn::dstd::{build_grid, GridMode, OffsetPolicy};
use imcsnn::hardware::{
    build_circuit, run_mapping, split_dataset, trace_circuit, write_histogram_csv, write_trace_csv, MapMode,
    ScaleVector,
};
use imcsnn::network::{LayerPath, Mode, Model};
use imcsnn::neuron::SpikeTrain;
use imcsnn::training::{
    check_sample_gradient, defaults_for, evaluate, init_from_config, stream, train, ModelConfig, SpikeDataset,
};

mod config;

use config::{DataKind, GradcheckRun, RunConfig};

#[derive(Parser)]
#[command(name = "imcsnn", version, about = "IMC-aware spiking network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and record per-epoch history and a checkpoint.
    Train,
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Discretization-error sweeps over M and |E_rev|.
    Convergence,
    /// Exact versus discretized single-layer timing.
    Bench,
    /// Train, map onto the circuit and compare firing times.
    Map,
    /// Dump membrane traces of one test sample through the circuit.
    Simulate {
        /// RC-Spike checkpoint to deploy; a circuit-aware model is trained when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of discretized-path gradients on random small models.
    Gradcheck,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Numeric(e) => e,
        }
    }
}

impl From<imcsnn::Error> for Failure {
    fn from(e: imcsnn::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.into())
        } else if e.is_data() {
            Failure::Data(e.into())
        } else {
            Failure::Usage(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<imcsnn::Error>() {
            Ok(inner) => inner.into(),
            Err(e) => Failure::Data(e),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Usage(anyhow!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(anyhow!("invalid config {}: {e}", path.display())))
}

fn run(cli: Cli) -> Outcome<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(anyhow!("thread pool: {e}")))?;
    }
    let out = cli.out;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.resolved.json"), &cfg)?;
    match cli.command {
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval { checkpoint } => cmd_eval(&cfg, &out, &checkpoint),
        Command::Convergence => cmd_convergence(&cfg, &out),
        Command::Bench => cmd_bench(&cfg, &out),
        Command::Map => cmd_map(&cfg, &out),
        Command::Simulate { checkpoint } => cmd_simulate(&cfg, &out, checkpoint.as_deref()),
        Command::Gradcheck => cmd_gradcheck(&cfg, &out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).map_err(imcsnn::Error::from)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_raw(cfg: &RunConfig) -> Outcome<(RawDataset, RawDataset)> {
    let d = &cfg.data;
    Ok(match d.kind {
        DataKind::Idx => {
            let train = load_idx_dir(&d.dir, &d.train_prefix)?;
            let test = load_idx_dir(&d.dir, &d.test_prefix)?;
            (train.slice(0, d.n_train), test.slice(0, d.n_test))
        }
        DataKind::Iris => {
            let raw = load_iris_csv(&d.iris_csv, d.iris_header)?;
            split_dataset(&raw, d.n_train, d.n_test, cfg.seed)?
        }
    })
}

fn encode(cfg: &RunConfig, raw: &RawDataset) -> SpikeDataset {
    match cfg.data.kind {
        DataKind::Idx => encode_images(raw, cfg.data.tau_in),
        DataKind::Iris => encode_iris(raw, cfg.data.tau_in),
    }
}

fn check_input_width(model_cfg: &ModelConfig, data: &SpikeDataset) -> Outcome<()> {
    let width = data.inputs.first().map_or(0, SpikeTrain::len);
    if model_cfg.layer_sizes.first() != Some(&width) {
        return Err(Failure::Usage(anyhow!(
            "model input size {:?} does not match {width} encoded inputs",
            model_cfg.layer_sizes.first()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    final_train_loss: f64,
    final_test_accuracy: f64,
    wall_seconds: f64,
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let (train_raw, test_raw) = load_raw(cfg)?;
    let (train_set, test_set) = (encode(cfg, &train_raw), encode(cfg, &test_raw));
    check_input_width(&cfg.model, &train_set)?;
    let mut model = init_from_config(&cfg.model, cfg.seed)?;
    let ckpt = out.join("checkpoint.json");
    let history = train(&mut model, &cfg.model, &cfg.train, &train_set, Some(&test_set), cfg.seed, |_, m| {
        let text = serde_json::to_string(m)?;
        fs::write(&ckpt, text)?;
        Ok(())
    })?;
    write_csv(&out.join("history.csv"), &history)?;
    let last = history.last();
    write_json(
        &out.join("metrics.json"),
        &TrainSummary {
            epochs: history.len(),
            final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
            final_test_accuracy: last.map_or(f64::NAN, |r| r.test_accuracy),
            wall_seconds: last.map_or(0.0, |r| r.wall_seconds),
        },
    )?;
    if history.is_empty() {
        fs::write(&ckpt, serde_json::to_string(&model).map_err(imcsnn::Error::from)?)
            .with_context(|| format!("writing {}", ckpt.display()))?;
    }
    println!("test accuracy {:.4}", last.map_or(f64::NAN, |r| r.test_accuracy));
    Ok(())
}

fn load_checkpoint(path: &Path) -> Outcome<Model> {
    let text = fs::read_to_string(path)
        .map_err(|e| imcsnn::Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let model: Model = serde_json::from_str(&text)
        .map_err(|e| imcsnn::Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
    model.validate().map_err(|e| imcsnn::Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(model)
}

#[derive(Serialize)]
struct EvalSummary {
    checkpoint: String,
    samples: usize,
    accuracy: f64,
}

fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Outcome<()> {
    let model = load_checkpoint(checkpoint)?;
    let (_, test_raw) = load_raw(cfg)?;
    let test_set = encode(cfg, &test_raw);
    let acc = evaluate(&model, &test_set, &cfg.model.test_settings(), cfg.seed)?;
    write_json(
        &out.join("eval.json"),
        &EvalSummary { checkpoint: checkpoint.display().to_string(), samples: test_set.inputs.len(), accuracy: acc },
    )?;
    println!("test accuracy {acc:.4}");
    Ok(())
}

#[derive(Serialize)]
struct SlopeRow {
    series: String,
    slope: Option<f64>,
    slope_stderr: Option<f64>,
    r2: Option<f64>,
}

fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let c = &cfg.convergence;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut push = |r: imcsnn::bench::SweepResult| {
        slopes.push(SlopeRow {
            series: r.series.clone(),
            slope: r.fit.map(|f| f.slope),
            slope_stderr: r.fit.map(|f| f.slope_stderr),
            r2: r.fit.map(|f| f.r2),
        });
        rows.extend(r.points);
    };
    for &e in &c.steps_e_rev {
        push(convergence_sweep(SweepAxis::Steps, &c.steps, e, &c.instance)?);
    }
    for &m in &c.e_rev_steps {
        push(convergence_sweep(SweepAxis::ERev, &c.e_rev_values, m, &c.instance)?);
    }
    write_csv(&out.join("convergence.csv"), &rows)?;
    write_json(&out.join("convergence_slopes.json"), &slopes)?;
    for s in &slopes {
        println!("{}: slope {:?}", s.series, s.slope);
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    series: Vec<SlopeRow>,
    /// Exact time divided by discretized time at the reference fan-in, per mode.
    speedups: Vec<(String, usize, f64)>,
}

fn cmd_bench(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let b = &cfg.bench;
    let mut rows = Vec::new();
    let mut summary = BenchSummary { series: Vec::new(), speedups: Vec::new() };
    let modes: Vec<(Mode, usize, &Vec<usize>)> = {
        let mut v = vec![(Mode::RcSpike, b.dstd_m, &b.n_in_values)];
        if b.include_ttfs {
            v.push((Mode::Ttfs, b.ttfs_dstd_m, &b.ttfs_n_in_values));
        }
        v
    };
    // Timing stays on the calling thread regardless of --threads.
    for (mode, m, n_in) in modes {
        let tcfg = TimingConfig { mode, ..b.timing.clone() };
        let exact = timing_sweep(TimedPath::Exact, n_in, &tcfg)?;
        let dstd = timing_sweep(TimedPath::Dstd(m), n_in, &tcfg)?;
        if let (Some(e), Some(d)) = (
            exact.points.iter().find(|p| p.n_in == b.reference_n_in),
            dstd.points.iter().find(|p| p.n_in == b.reference_n_in),
        ) {
            summary.speedups.push((dstd.series.clone(), b.reference_n_in, e.median_s / d.median_s));
        }
        for r in [exact, dstd] {
            summary.series.push(SlopeRow {
                series: r.series.clone(),
                slope: r.fit.map(|f| f.slope),
                slope_stderr: r.fit.map(|f| f.slope_stderr),
                r2: r.fit.map(|f| f.r2),
            });
            rows.extend(r.points);
        }
    }
    write_csv(&out.join("timing.csv"), &rows)?;
    write_json(&out.join("timing_summary.json"), &summary)?;
    for s in &summary.series {
        println!("{}: exponent {:?}", s.series, s.slope);
    }
    for (s, n, x) in &summary.speedups {
        println!("{s}: {x:.1}x faster than exact at N_in={n}");
    }
    Ok(())
}

fn load_iris(cfg: &RunConfig) -> Outcome<RawDataset> {
    Ok(load_iris_csv(&cfg.data.iris_csv, cfg.data.iris_header)?)
}

fn mode_name(m: MapMode) -> &'static str {
    match m {
        MapMode::AnnToImc => "ann_to_imc",
        MapMode::PnnToImc => "pnn_to_imc",
    }
}

fn cmd_map(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let raw = load_iris(cfg)?;
    let mut reports = Vec::new();
    for &mode in &cfg.map_modes {
        let o = run_mapping(mode, &raw, &cfg.circuit, &cfg.mapping, cfg.seed)?;
        write_histogram_csv(&out.join(format!("histogram_{}.csv", mode_name(mode))), &o.histogram)?;
        println!(
            "{}: scale ({:.2}, {:.2}) test RMSE {:.3e} s, model accuracy {:.3}, circuit accuracy {:.3}",
            mode_name(mode),
            o.report.scale.alpha_pos,
            o.report.scale.alpha_neg,
            o.report.test_rmse_s,
            o.report.model_test_accuracy,
            o.report.circuit_test_accuracy
        );
        reports.push(o.report);
    }
    write_json(&out.join("map_report.json"), &reports)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    sample: usize,
    label: usize,
    spikes_s: Vec<Vec<f64>>,
    range_violations: usize,
}

fn cmd_simulate(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Outcome<()> {
    let raw = load_iris(cfg)?;
    let (model, factors) = match checkpoint {
        Some(p) => (load_checkpoint(p)?, None),
        None => {
            let o = run_mapping(MapMode::PnnToImc, &raw, &cfg.circuit, &cfg.mapping, cfg.seed)?;
            (o.model, Some(o.circuit))
        }
    };
    let (_, test_raw) = split_dataset(&raw, cfg.mapping.n_train, cfg.mapping.n_test, cfg.seed)?;
    let test = encode_iris(&test_raw, cfg.mapping.tau_in);
    let s = cfg.simulate.sample;
    let x = test
        .inputs
        .get(s)
        .ok_or_else(|| Failure::Usage(anyhow!("sample {s} out of range ({} test samples)", test.inputs.len())))?;
    let net = match factors {
        Some(net) => net,
        None => build_circuit(&model, &cfg.circuit, ScaleVector::unit(), None)?,
    };
    let inputs: Vec<f64> = x.times.iter().map(|&t| t * cfg.circuit.t_circ).collect();
    let (points, result) = trace_circuit(&net, &cfg.circuit, &inputs, cfg.simulate.samples_per_phase)?;
    let file = fs::File::create(out.join("trace.csv")).context("creating trace.csv")?;
    write_trace_csv(std::io::BufWriter::new(file), &points)?;
    write_json(
        &out.join("simulate.json"),
        &SimulateSummary {
            sample: s,
            label: test.labels[s],
            spikes_s: result.spikes.clone(),
            range_violations: result.range_violations,
        },
    )?;
    println!("output spikes (s): {:?}", result.spikes.last());
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    mode: String,
    model: usize,
    max_rel_err: f64,
    max_abs_err: f64,
    max_asymmetry: f64,
    rejected: bool,
    passed: bool,
}

fn gradcheck_mode(g: &GradcheckRun, mode: Mode, seed: u64) -> imcsnn::Result<Vec<GradcheckRow>> {
    use rand::Rng;
    let (mut mcfg, tcfg) = defaults_for(mode);
    mcfg.layer_sizes = g.layer_sizes.clone();
    let grid_mode = match mode {
        Mode::RcSpike => GridMode::RcSpike,
        Mode::Ttfs => GridMode::Ttfs { horizon: mcfg.ttfs_horizon },
    };
    let mut rng = stream(seed, 16 + mode as u64);
    let mut rows = Vec::new();
    let mut attempt = 0u64;
    while rows.iter().filter(|r: &&GradcheckRow| !r.rejected).count() < g.models && attempt < g.max_attempts {
        attempt += 1;
        let model = init_from_config(&mcfg, seed.wrapping_mul(1000).wrapping_add(attempt))?;
        let n_in = mcfg.layer_sizes[0];
        let span = if mode == Mode::Ttfs { 2.0 } else { 1.0 };
        let x = SpikeTrain::new((0..n_in).map(|_| rng.gen::<f64>() * span).collect());
        let label = rng.gen_range(0..*mcfg.layer_sizes.last().expect("sizes"));
        let grids = (0..model.layers.len())
            .map(|_| build_grid(g.m, grid_mode, OffsetPolicy::Random, &mut rng))
            .collect::<imcsnn::Result<Vec<_>>>()?;
        let paths: Vec<LayerPath> = grids.iter().map(LayerPath::Dstd).collect();
        let rep = check_sample_gradient(&model, &x, label, &paths, &tcfg.cost, g.h)?;
        let rejected = rep.max_asymmetry > g.max_asymmetry;
        rows.push(GradcheckRow {
            mode: format!("{mode:?}").to_lowercase(),
            model: rows.len(),
            max_rel_err: rep.max_rel_err,
            max_abs_err: rep.max_abs_err,
            max_asymmetry: rep.max_asymmetry,
            rejected,
            passed: rejected || rep.max_rel_err < g.tolerance,
        });
    }
    Ok(rows)
}

fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let g = &cfg.gradcheck;
    let mut rows = Vec::new();
    for &mode in &g.modes {
        rows.extend(gradcheck_mode(g, mode, cfg.seed)?);
    }
    write_csv(&out.join("gradcheck.csv"), &rows)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    let checked = rows.iter().filter(|r| !r.rejected).count();
    println!("{checked} models checked, {failed} above tolerance {:e}", g.tolerance);
    if failed > 0 {
        return Err(Failure::Numeric(anyhow!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}
