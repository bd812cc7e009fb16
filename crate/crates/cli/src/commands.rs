use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use pcfi::diffusion::SolveMode;
use pcfi::eval::{evaluate, SCHEMA_VERSION};
use pcfi::graph::largest_component_nodes;
use pcfi::io;
use pcfi::masking::{apply_mask, MaskKind, MaskSpec};
use pcfi::pipeline::{
    impute as run_impute, run_pipeline, Dataset, ImputationConfig, Method, PipelineSpec,
};
use pcfi::synth::{
    class_homophily, feature_homophily, generate_features, generate_graph, SynthSpec,
};
use pcfi::Graph;

use crate::CliError;

type CliResult = Result<(), CliError>;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskType {
    Structural,
    Uniform,
}

impl From<MaskType> for MaskKind {
    fn from(t: MaskType) -> Self {
        match t {
            MaskType::Structural => MaskKind::Structural,
            MaskType::Uniform => MaskKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Pcfi,
    #[value(name = "pcfi_stage1_only")]
    PcfiStage1Only,
    Fp,
    Zero,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pcfi => Method::Pcfi,
            MethodArg::PcfiStage1Only => Method::PcfiStage1Only,
            MethodArg::Fp => Method::Fp,
            MethodArg::Zero => Method::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Iterative,
    #[value(name = "closed_form")]
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Components {
    /// Keep only the largest connected component.
    Largest,
    /// Keep every node; components without a source need --lenient.
    All,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long = "type", value_enum)]
    pub kind: MaskType,
    /// Fraction of rows (structural) or entries (uniform) to hide.
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, requires = "num_features", conflicts_with = "features_file")]
    pub num_nodes: Option<usize>,
    #[arg(long)]
    pub num_features: Option<usize>,
    /// Take the mask shape from a features CSV.
    #[arg(long)]
    pub features_file: Option<PathBuf>,
    /// Skip one header line in input CSVs.
    #[arg(long)]
    pub header: bool,
    /// Output mask CSV, or - for stdout.
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by `impute` and `pipeline`.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    /// Diffusion steps K.
    #[arg(long = "k", default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "iterative")]
    pub mode: ModeArg,
    /// Zero-fill and flag channels with unreachable nodes instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Separate confidence base for the inter-channel stage.
    #[arg(long)]
    pub stage2_alpha: Option<f64>,
    /// Stop diffusion early once the per-step change falls below this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, value_enum, default_value = "largest")]
    pub components: Components,
}

impl ConfigArgs {
    fn config(&self, method: Method) -> Result<ImputationConfig, CliError> {
        let cfg = ImputationConfig {
            alpha: self.alpha,
            beta: self.beta,
            steps: self.steps,
            method,
            lenient_no_source: self.lenient,
            mode: match self.mode {
                ModeArg::Iterative => SolveMode::Iterative,
                ModeArg::ClosedForm => SolveMode::ClosedForm,
            },
            stage2_alpha: self.stage2_alpha,
            tolerance: self.tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum, default_value = "pcfi")]
    pub method: MethodArg,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub header: bool,
    /// Imputed CSV, or - for stdout.
    #[arg(long)]
    pub out: PathBuf,
    /// Side-car JSON; defaults to `<out>.json` unless writing to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the SPD-S matrix (pcfi methods only).
    #[arg(long)]
    pub spds_out: Option<PathBuf>,
    /// Include wall-clock timings in the side-car.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub imputed: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// SPD-S CSV enabling distance-bucketed cosine curves.
    #[arg(long)]
    pub spds: Option<PathBuf>,
    /// JSON file to echo under "config" (e.g. the impute side-car).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
    /// Report JSON, or - for stdout.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub features: usize,
    /// Edge probability within a class.
    #[arg(long, default_value_t = 0.008)]
    pub intra: f64,
    /// Edge probability across classes.
    #[arg(long, default_value_t = 0.0009)]
    pub inter: f64,
    /// Per-channel variance of each class Gaussian.
    #[arg(long, default_value_t = 0.05)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail when the class means cannot be exactly equidistant.
    #[arg(long)]
    pub strict_simplex: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Dataset directory holding edges.tsv and features.csv.
    #[arg(long, conflicts_with_all = ["edges", "features"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
    #[arg(long = "mask-type", value_enum, default_value = "structural")]
    pub mask_type: MaskType,
    #[arg(long)]
    pub rate: f64,
    /// Seeds as a range `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "pcfi,fp,zero"
    )]
    pub methods: Vec<MethodArg>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Report JSON, or - for stdout.
    #[arg(long)]
    pub report: PathBuf,
}

fn is_stdout(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn read_file<T>(
    path: &Path,
    f: impl FnOnce(Box<dyn std::io::BufRead>, &str) -> pcfi::Result<T>,
) -> Result<T, CliError> {
    let reader = io::open_input(path)?;
    Ok(f(reader, &path.display().to_string())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    Ok(io::write_json(io::open_output(path)?, value)?)
}

fn load_graph(path: &Path, num_nodes: usize) -> Result<Graph, CliError> {
    let (edges, _) = read_file(path, io::read_edges)?;
    Ok(Graph::from_edges(&edges, num_nodes)?)
}

pub fn mask(args: MaskArgs) -> CliResult {
    let (n, f) = match (&args.features_file, args.num_nodes, args.num_features) {
        (Some(path), _, _) => {
            read_file(path, |r, name| io::read_matrix(r, name, args.header))?.dim()
        }
        (None, Some(n), Some(f)) => (n, f),
        _ => {
            return Err(CliError::usage(
                "give --features-file or both --num-nodes and --num-features",
            ))
        }
    };
    let spec = MaskSpec::new(args.kind.into(), args.rate, args.seed)?;
    let known = spec.generate(n, f)?;
    info!("masked {} of {} entries", known.count_missing(), n * f);
    io::write_mask(io::open_output(&args.out)?, &known)?;
    Ok(())
}

#[derive(Serialize)]
struct ImputeSidecar<'a> {
    schema_version: u32,
    method: Method,
    config: &'a ImputationConfig,
    nodes: usize,
    channels: usize,
    /// Original ids of the output rows when components were dropped.
    #[serde(skip_serializing_if = "Option::is_none")]
    kept_nodes: Option<Vec<usize>>,
    flagged_channels: &'a [usize],
    residuals: &'a [f64],
    max_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_ms: Option<f64>,
}

pub fn impute(args: ImputeArgs) -> CliResult {
    let start = Instant::now();
    let method: Method = args.method.into();
    let cfg = args.config.config(method)?;
    let x = read_file(&args.features, |r, n| io::read_matrix(r, n, args.header))?;
    let known = read_file(&args.mask, |r, n| io::read_mask(r, n, args.header))?;
    let g = load_graph(&args.edges, x.nrows())?;
    let mut fs = apply_mask(&x, &known)?;

    let mut graph = g;
    let mut kept_nodes = None;
    if args.config.components == Components::Largest && !graph.is_connected() {
        let kept = largest_component_nodes(&graph);
        warn!(
            "graph is disconnected; imputing the largest component ({} of {} nodes)",
            kept.len(),
            graph.num_nodes()
        );
        graph = graph.induced_subgraph(&kept);
        fs = fs.select_rows(&kept);
        kept_nodes = Some(kept);
    }

    let out = run_impute(&graph, &fs, &cfg)?;
    io::write_matrix(io::open_output(&args.out)?, &out.values)?;
    if let Some(path) = &args.spds_out {
        let spds = out
            .spds
            .as_ref()
            .ok_or_else(|| CliError::usage("--spds-out needs a pcfi method"))?;
        io::write_spds(io::open_output(path)?, spds.distances())?;
    }
    if !out.flagged_channels.is_empty() {
        warn!(
            "channels zero-filled for lack of a source: {:?}",
            out.flagged_channels
        );
    }

    let report_path = match &args.report {
        Some(p) => Some(p.clone()),
        None if !is_stdout(&args.out) => {
            let mut p = args.out.clone().into_os_string();
            p.push(".json");
            Some(PathBuf::from(p))
        }
        None => None,
    };
    if let Some(path) = report_path {
        let sidecar = ImputeSidecar {
            schema_version: SCHEMA_VERSION,
            method,
            config: &cfg,
            nodes: out.values.nrows(),
            channels: out.values.ncols(),
            kept_nodes,
            flagged_channels: &out.flagged_channels,
            residuals: &out.residuals,
            max_residual: out.residuals.iter().cloned().fold(0.0, f64::max),
            runtime_ms: args.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        };
        write_json(&path, &sidecar)?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult {
    let truth = read_file(&args.truth, |r, n| io::read_matrix(r, n, args.header))?;
    let imputed = read_file(&args.imputed, |r, n| io::read_matrix(r, n, args.header))?;
    let known = read_file(&args.mask, |r, n| io::read_mask(r, n, args.header))?;
    let spds = match &args.spds {
        Some(p) => Some(read_file(p, |r, n| io::read_spds(r, n, args.header))?),
        None => None,
    };
    let mut report = evaluate(&truth, &imputed, &known, spds.as_ref())?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::from(pcfi::PcfiError::Io {
                context: format!("reading {}", path.display()),
                source: e,
            })
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if let Some(flags) = value.get("flagged_channels").and_then(|f| f.as_array()) {
            report.flagged_channels = flags
                .iter()
                .filter_map(|v| v.as_u64())
                .map(|v| v as usize)
                .collect();
        }
        report.config = Some(value);
    }
    if report.cosine_skipped_nodes > 0 {
        info!(
            "cosine undefined for {} zero-norm rows",
            report.cosine_skipped_nodes
        );
    }
    write_json(&args.report, &report)
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    schema_version: u32,
    spec: &'a SynthSpec,
    nodes: usize,
    edges: usize,
    sampled_nodes: usize,
    sampled_edges: usize,
    dropped_nodes: usize,
    expected_degree: f64,
    fragmentation_warning: bool,
    class_homophily: Option<f64>,
    class_homophily_definition: &'static str,
    feature_homophily: Option<f64>,
    feature_homophily_skipped_edges: usize,
    feature_homophily_definition: &'static str,
    equidistant_means: bool,
    min_mean_distance: f64,
    max_mean_distance: f64,
}

pub fn synth(args: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        num_nodes: args.nodes,
        num_classes: args.classes,
        feature_dim: args.features,
        intra_edge_prob: args.intra,
        inter_edge_prob: args.inter,
        gaussian_scale: args.scale,
        seed: args.seed,
        strict_equidistant: args.strict_simplex,
    };
    let sg = generate_graph(&spec)?;
    let feats = generate_features(
        &sg.labels,
        spec.num_classes,
        spec.feature_dim,
        spec.gaussian_scale,
        spec.seed,
        spec.strict_equidistant,
    )?;
    if !feats.equidistant {
        warn!(
            "{} classes cannot be equidistant in {} dimensions; mean distances span [{:.4}, {:.4}]",
            spec.num_classes, spec.feature_dim, feats.min_mean_distance, feats.max_mean_distance
        );
    }
    let (fh, skipped) = match feature_homophily(&sg.graph, &feats.values) {
        Ok((h, s)) => (Some(h), s),
        Err(_) => (None, 0),
    };

    fs::create_dir_all(&args.out).map_err(|e| {
        CliError::from(pcfi::PcfiError::Io {
            context: format!("creating {}", args.out.display()),
            source: e,
        })
    })?;
    io::write_edges(
        io::open_output(&args.out.join("edges.tsv"))?,
        sg.graph.edges(),
    )?;
    io::write_matrix(
        io::open_output(&args.out.join("features.csv"))?,
        &feats.values,
    )?;
    io::write_labels(io::open_output(&args.out.join("labels.csv"))?, &sg.labels)?;
    let meta = SynthMeta {
        schema_version: SCHEMA_VERSION,
        spec: &spec,
        nodes: sg.graph.num_nodes(),
        edges: sg.graph.num_edges(),
        sampled_nodes: sg.sampled_nodes,
        sampled_edges: sg.sampled_edges,
        dropped_nodes: sg.dropped_nodes,
        expected_degree: spec.expected_degree(),
        fragmentation_warning: sg.fragmentation_warning || sg.dropped_nodes > 0,
        class_homophily: class_homophily(&sg.graph, &sg.labels),
        class_homophily_definition: "fraction of edges joining same-class nodes",
        feature_homophily: fh,
        feature_homophily_skipped_edges: skipped,
        feature_homophily_definition: "mean cosine similarity of adjacent feature rows",
        equidistant_means: feats.equidistant,
        min_mean_distance: feats.min_mean_distance,
        max_mean_distance: feats.max_mean_distance,
    };
    write_json(&args.out.join("meta.json"), &meta)
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::usage(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect()
}

pub fn pipeline(args: PipelineArgs) -> CliResult {
    let (edges_path, features_path) = match (&args.dataset, &args.edges, &args.features) {
        (Some(dir), _, _) => (dir.join("edges.tsv"), dir.join("features.csv")),
        (None, Some(e), Some(f)) => (e.clone(), f.clone()),
        _ => {
            return Err(CliError::usage(
                "give --dataset or both --edges and --features",
            ))
        }
    };
    let seeds = parse_seeds(&args.seeds)?;
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    let config = args.config.config(Method::Pcfi)?;
    MaskSpec::new(args.mask_type.into(), args.rate, 0)?;

    let x = read_file(&features_path, |r, n| io::read_matrix(r, n, args.header))?;
    let g = load_graph(&edges_path, x.nrows())?;
    let mut ds = Dataset::new(g, x)?;
    if args.config.components == Components::Largest && !ds.graph.is_connected() {
        let (sub, kept) = ds.largest_component();
        warn!(
            "using the largest component ({} of {} nodes)",
            kept.len(),
            ds.graph.num_nodes()
        );
        ds = sub;
    }

    let report = run_pipeline(
        &ds,
        &PipelineSpec {
            mask_kind: args.mask_type.into(),
            rate: args.rate,
            seeds,
            methods,
            config,
        },
    )?;
    for block in &report.methods {
        info!(
            "{}: rmse {:?} ± {:?}",
            block.method, block.aggregate.rmse_mean, block.aggregate.rmse_std
        );
    }
    write_json(&args.report, &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("3, 7,9").unwrap(), vec![3, 7, 9]);
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
