use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use octctx::analysis::{export_embeddings, EmbeddingRow};
use octctx::coder::{self, Bitstream, Coder};
use octctx::config::RunConfig;
use octctx::context::WindowParams;
use octctx::geometry::{self, load_point_cloud, save_point_cloud, PointFormat, QuantizeOptions};
use octctx::metrics::{self, Aggregate, RdPoint};
use octctx::model::train::{self, EpochStats};
use octctx::synth::{self, SceneKind};
use octctx::{octree, Error, Model32, NodeSequence, PointCloud64, QuantizedCloud};

#[derive(Parser)]
#[command(name = "octctx", version, about = "Octree point-cloud geometry coding with a learned context model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize, build the octree and entropy-code a point cloud.
    Encode(EncodeArgs),
    /// Decode a bitstream back to points.
    Decode(DecodeArgs),
    /// Train a context model.
    Train(TrainArgs),
    /// Rate-distortion evaluation as CSV.
    Eval(EvalArgs),
    /// Window-size sweep: bits and encode time per configuration, as CSV.
    Ablate(AblateArgs),
    /// Per-node features reduced to three principal components, as CSV.
    ExportEmbeddings(ExportArgs),
    /// Write a synthetic scene.
    Synth(SynthArgs),
    /// Print the default run configuration.
    DefaultConfig,
}

#[derive(Args)]
struct ModelChoice {
    /// Model file produced by `train`.
    #[arg(long, conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Use the adaptive order-0 model instead of a learned one.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct WindowArgs {
    /// Window length (defaults to the model's).
    #[arg(long)]
    n: Option<usize>,
    /// Targets per window (defaults to the model's).
    #[arg(long)]
    n0: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    depth: Option<u8>,
    /// Quantization step; derived from the bounding box when absent.
    #[arg(long)]
    qs: Option<f64>,
    /// Grid origin as `x,y,z`; the bounding-box minimum when absent.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    offset: Option<[f64; 3]>,
    #[command(flatten)]
    coder: ModelChoice,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct Dataset {
    /// Point cloud files.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Number of synthetic scenes to use in addition to the files.
    #[arg(long, default_value_t = 0)]
    synthetic: usize,
    /// Points per synthetic scene.
    #[arg(long, default_value_t = 80_000)]
    points: usize,
    /// Seed of the synthetic scenes.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

#[derive(Args)]
struct ValDataset {
    #[arg(long, num_args = 1..)]
    val: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    val_synthetic: usize,
    #[arg(long, default_value_t = 2)]
    val_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: Dataset,
    #[command(flatten)]
    val: ValDataset,
    /// Per-epoch statistics as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference point cloud.
    reference: PathBuf,
    /// Reconstructed point cloud to compare with.
    #[arg(long, conflicts_with_all = ["bitstream", "depths"])]
    rec: Option<PathBuf>,
    /// Bitstream of the reference; decoded before comparison.
    #[arg(long, conflicts_with = "depths")]
    bitstream: Option<PathBuf>,
    /// Encode and decode the reference at each depth (e.g. `8..12` or `8,10`).
    #[arg(long, value_parser = parse_depths)]
    depths: Option<DepthList>,
    #[command(flatten)]
    coder: ModelChoice,
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long)]
    normal_k: Option<usize>,
    /// Combine directional errors by their mean instead of their maximum.
    #[arg(long)]
    mean: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Window lengths to compare.
    #[arg(long, value_delimiter = ',', required = true)]
    window_sizes: Vec<usize>,
    /// Targets per window for timing; `all` sweeps powers of two up to N.
    #[arg(long, default_value = "all")]
    n0: String,
    /// Pre-trained models, one per window size (otherwise each size is trained).
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    #[command(flatten)]
    data: Dataset,
    #[command(flatten)]
    val: ValDataset,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    input: PathBuf,
    #[arg(long)]
    depth: Option<u8>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "planes")]
    kind: String,
    #[arg(long, default_value_t = 80_000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

#[derive(Debug, Clone)]
struct DepthList(Vec<u8>);

fn parse_depths(s: &str) -> Result<DepthList, String> {
    parse_depth_list(s).map(DepthList)
}

fn parse_depth_list(s: &str) -> Result<Vec<u8>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u8 = a.parse().map_err(|e| format!("{e}"))?;
        let b: u8 = b.parse().map_err(|e| format!("{e}"))?;
        if a > b {
            return Err("empty depth range".into());
        }
        Ok((a..=b).collect())
    } else {
        s.split(',').map(|d| d.trim().parse().map_err(|e| format!("{e}"))).collect()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Config(_) => 2,
        Error::ModelMismatch(_) => 3,
        Error::Corrupt { .. } | Error::Format(_) | Error::Structure { .. } => 4,
        _ => 1,
    }
}

fn run_config(path: &Option<PathBuf>) -> octctx::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_cloud(path: &Path) -> octctx::Result<PointCloud64> {
    let format = PointFormat::from_path(path)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown point cloud extension: {}", path.display())))?;
    load_point_cloud(path, format)
}

fn save_cloud(path: &Path, pc: &PointCloud64) -> octctx::Result<()> {
    save_point_cloud(path, pc, PointFormat::from_path(path).unwrap_or(PointFormat::Ply))
}

fn load_model(path: &Path) -> octctx::Result<Model32> {
    Model32::load(path)
}

fn window_for(model: &Model32, w: &WindowArgs) -> octctx::Result<WindowParams> {
    let c = model.config();
    let n = w.n.unwrap_or(c.n);
    WindowParams::new(n, c.k, w.n0.unwrap_or(c.n0.min(n)))
}

fn output(path: &Option<PathBuf>) -> octctx::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sequences(clouds: &[PointCloud64], depth: u8) -> octctx::Result<Vec<NodeSequence>> {
    clouds
        .iter()
        .map(|pc| octree::build(&geometry::quantize(pc, depth, None)?))
        .collect()
}

fn dataset_clouds(d: &Dataset) -> octctx::Result<Vec<PointCloud64>> {
    let mut clouds: Vec<PointCloud64> = d.data.iter().map(|p| load_cloud(p)).collect::<octctx::Result<_>>()?;
    clouds.extend(synth::corpus(d.synthetic, d.points, d.data_seed));
    if clouds.is_empty() {
        return Err(Error::InvalidArgument("no training data: pass --data or --synthetic".into()));
    }
    Ok(clouds)
}

fn val_clouds(v: &ValDataset, points: usize) -> octctx::Result<Vec<PointCloud64>> {
    let mut clouds: Vec<PointCloud64> = v.val.iter().map(|p| load_cloud(p)).collect::<octctx::Result<_>>()?;
    clouds.extend(synth::corpus(v.val_synthetic, points, v.val_seed));
    Ok(clouds)
}

fn cmd_encode(a: EncodeArgs) -> octctx::Result<()> {
    let cfg = run_config(&a.config)?;
    let pc = load_cloud(&a.input)?;
    let depth = a.depth.unwrap_or(cfg.depth);
    let start = Instant::now();
    let qc = geometry::quantize_with(&pc, depth, QuantizeOptions { qs: a.qs, offset: a.offset })?;
    let model = a.coder.model.as_deref().map(load_model).transpose()?;
    let coder = match (&model, a.coder.baseline) {
        (Some(m), _) => Coder::Attention {
            model: m,
            window: window_for(m, &a.window)?,
        },
        (None, true) => Coder::Baseline,
        (None, false) => return Err(Error::InvalidArgument("pass --model or --baseline".into())),
    };
    let report = coder::encode(&qc, coder)?;
    report.bitstream.save(&a.output)?;
    println!(
        "points={} cells={} nodes={} payload_bits={} bpp={:.6} qs={} seconds={:.3}",
        pc.count(),
        qc.len(),
        report.nodes,
        report.payload_bits(),
        metrics::bits_per_point(report.payload_bits(), pc.count()),
        qc.qs,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn decode_file(path: &Path, model: &Option<PathBuf>) -> octctx::Result<(Bitstream, QuantizedCloud)> {
    let bytes = std::fs::read(path)?;
    let (bs, _) = Bitstream::parse(&bytes)?;
    let model = model.as_deref().map(load_model).transpose()?;
    let qc = coder::decode_bytes(&bytes, model.as_ref())?;
    Ok((bs, qc))
}

fn cmd_decode(a: DecodeArgs) -> octctx::Result<()> {
    let start = Instant::now();
    let (bs, qc) = decode_file(&a.input, &a.model)?;
    save_cloud(&a.output, &geometry::dequantize(&qc))?;
    println!(
        "cells={} nodes={} seconds={:.3}",
        qc.len(),
        bs.header.nodes,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn epoch_csv(s: &EpochStats) -> String {
    format!(
        "{},{},{:.6},{},{:.3}",
        s.epoch,
        s.steps,
        s.train_bits_per_node,
        s.val_bits_per_node.map_or(String::new(), |v| format!("{v:.6}")),
        s.seconds
    )
}

fn train_model(
    cfg: &RunConfig,
    train_set: &[NodeSequence],
    val_set: &[NodeSequence],
    log: &mut dyn Write,
) -> octctx::Result<Model32> {
    writeln!(log, "epoch,steps,train_bits_per_node,val_bits_per_node,seconds")?;
    let mut io_err = None;
    let (model, _) = train::train::<f32>(train_set, val_set, cfg.model_config(), &cfg.train_config(), |s| {
        if let Err(e) = writeln!(log, "{}", epoch_csv(s)).and_then(|_| log.flush()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    Ok(model)
}

fn cmd_train(a: TrainArgs) -> octctx::Result<()> {
    let cfg = run_config(&a.config)?;
    let train_set = sequences(&dataset_clouds(&a.data)?, cfg.depth)?;
    let val_set = sequences(&val_clouds(&a.val, a.data.points)?, cfg.depth)?;
    let mut log = output(&a.log)?;
    let model = train_model(&cfg, &train_set, &val_set, &mut log)?;
    model.save(&a.output)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> octctx::Result<()> {
    let cfg = run_config(&a.config)?;
    let peak = a.peak.unwrap_or(cfg.peak);
    let normal_k = a.normal_k.unwrap_or(cfg.normal_k);
    let agg = if a.mean { Aggregate::Mean } else { Aggregate::Max };
    let reference = load_cloud(&a.reference)?;
    let name = a.reference.display().to_string();
    let row = |rec: &PointCloud64, depth: u8, bpp: f64| -> octctx::Result<RdPoint> {
        Ok(RdPoint {
            file: name.clone(),
            depth,
            bpp,
            d1_psnr: metrics::d1(&reference, rec, peak, agg)?.psnr,
            d2_psnr: metrics::d2(&reference, rec, peak, normal_k, agg)?.distortion.psnr,
            chamfer: metrics::chamfer(&reference, rec)?,
        })
    };
    let mut rows = Vec::new();
    if let Some(rec) = &a.rec {
        rows.push(row(&load_cloud(rec)?, 0, f64::NAN)?);
    } else if let Some(bs_path) = &a.bitstream {
        let (bs, qc) = decode_file(bs_path, &a.coder.model)?;
        let bpp = metrics::bits_per_point(bs.payload_bits(), reference.count());
        rows.push(row(&geometry::dequantize(&qc), qc.depth, bpp)?);
    } else {
        let depths = a.depths.clone().map_or_else(|| vec![cfg.depth], |d| d.0);
        let model = a.coder.model.as_deref().map(load_model).transpose()?;
        for depth in depths {
            let qc = geometry::quantize(&reference, depth, None)?;
            let coder = match &model {
                Some(m) => Coder::attention(m)?,
                None => Coder::Baseline,
            };
            let bs = coder::encode(&qc, coder)?.bitstream;
            let decoded = coder::decode(&bs, model.as_ref())?;
            let bpp = metrics::bits_per_point(bs.payload_bits(), reference.count());
            rows.push(row(&geometry::dequantize(&decoded), depth, bpp)?);
        }
    }
    let mut out = output(&a.output)?;
    writeln!(out, "{}", RdPoint::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> octctx::Result<()> {
    let base = run_config(&a.config)?;
    if !a.models.is_empty() && a.models.len() != a.window_sizes.len() {
        return Err(Error::InvalidArgument("--models needs one file per window size".into()));
    }
    let train_clouds = if a.models.is_empty() { dataset_clouds(&a.data)? } else { Vec::new() };
    let train_set = sequences(&train_clouds, base.depth)?;
    let val_clouds = val_clouds(&a.val, a.data.points)?;
    if val_clouds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs --val or --val-synthetic".into()));
    }
    let points: usize = val_clouds.iter().map(|c| c.count()).sum();
    let val_q: Vec<QuantizedCloud> = val_clouds
        .iter()
        .map(|pc| geometry::quantize(pc, base.depth, None))
        .collect::<octctx::Result<_>>()?;
    let val_set: Vec<NodeSequence> = val_q.iter().map(octree::build).collect::<octctx::Result<_>>()?;
    let nodes: usize = val_set.iter().map(|s| s.len()).sum();
    let mut out = output(&a.output)?;
    writeln!(out, "n,n0,bpp,bits_per_node,ms_per_1000_nodes")?;
    for (i, &n) in a.window_sizes.iter().enumerate() {
        let model = match a.models.get(i) {
            Some(p) => load_model(p)?,
            None => {
                let cfg = RunConfig { n, n0: n, ..base.clone() };
                train_model(&cfg, &train_set, &[], &mut io::sink())?
            }
        };
        let n0s: Vec<usize> = if a.n0 == "all" {
            std::iter::successors(Some(1usize), |&x| (x < n).then_some((2 * x).min(n))).collect()
        } else {
            a.n0.split(',').map(|s| s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad --n0 value {s:?}")))).collect::<octctx::Result<_>>()?
        };
        for n0 in n0s {
            let window = WindowParams::new(n, model.config().k, n0)?;
            let start = Instant::now();
            let mut bits = 0u64;
            for (qc, ns) in val_q.iter().zip(&val_set) {
                bits += coder::encode_sequence(ns, qc, Coder::Attention { model: &model, window })?.payload_bits();
            }
            let ms = start.elapsed().as_secs_f64() * 1e3 / (nodes as f64 / 1000.0);
            writeln!(
                out,
                "{n},{n0},{:.6},{:.6},{ms:.3}",
                bits as f64 / points as f64,
                bits as f64 / nodes as f64
            )?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> octctx::Result<()> {
    let model = load_model(&a.model)?;
    let pc = load_cloud(&a.input)?;
    let qc = geometry::quantize(&pc, a.depth.unwrap_or(RunConfig::default().depth), None)?;
    let ns = octree::build(&qc)?;
    let rows = export_embeddings(&model, &ns, window_for(&model, &a.window)?, qc.offset, qc.qs)?;
    let mut out = output(&Some(a.output))?;
    writeln!(out, "{}", EmbeddingRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> octctx::Result<()> {
    let kind: SceneKind = a.kind.parse()?;
    save_cloud(&a.output, &synth::generate(kind, a.points, a.seed))
}

fn run(cli: Cli) -> octctx::Result<()> {
    match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
        Command::Synth(a) => cmd_synth(a),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
