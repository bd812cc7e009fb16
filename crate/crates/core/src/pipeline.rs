//! Method dispatch and the mask → impute → evaluate loop.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{check_alpha, compute_spds, SpdsMatrix, SpdsMode};
use crate::diffusion::{fp_baseline, impute_stage1, SolveMode, Stage1Config};
use crate::error::{PcfiError, Result};
use crate::eval::{evaluate, EvalReport, SpdsBucket, SCHEMA_VERSION};
use crate::graph::{largest_component_nodes, Graph};
use crate::masking::{apply_mask, FeatureSet, KnownMask, MaskKind, MaskSpec};
use crate::propagation::{propagate_stage2, PropagationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pcfi,
    PcfiStage1Only,
    Fp,
    Zero,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Pcfi,
        Method::PcfiStage1Only,
        Method::Fp,
        Method::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pcfi => "pcfi",
            Method::PcfiStage1Only => "pcfi_stage1_only",
            Method::Fp => "fp",
            Method::Zero => "zero",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PcfiError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PcfiError::input(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
    pub method: Method,
    pub lenient_no_source: bool,
    pub mode: SolveMode,
    /// Confidence base for stage two when it should differ from `alpha`.
    pub stage2_alpha: Option<f64>,
    /// Early-stop threshold on the per-step change of stage one.
    pub tolerance: Option<f64>,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            alpha: 0.8,
            beta: 1e-3,
            steps: 100,
            method: Method::Pcfi,
            lenient_no_source: false,
            mode: SolveMode::Iterative,
            stage2_alpha: None,
            tolerance: None,
        }
    }
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let Some(a) = self.stage2_alpha {
            check_alpha(a)?;
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(PcfiError::input(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.steps == 0 {
            return Err(PcfiError::input("K must be at least 1"));
        }
        Ok(())
    }

    pub fn with_method(self, method: Method) -> Self {
        ImputationConfig { method, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct ImputationOutput {
    pub values: Array2<f64>,
    /// SPD-S of the mask, for the confidence-based methods.
    pub spds: Option<SpdsMatrix>,
    pub flagged_channels: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// SPD-S for a mask, sharing one BFS when the mask is structural.
pub fn spds_for(g: &Graph, known: &KnownMask, alpha: f64) -> Result<SpdsMatrix> {
    let mode = if known.is_structural() {
        SpdsMode::Structural
    } else {
        SpdsMode::PerChannel
    };
    compute_spds(g, known, mode, alpha)
}

pub fn impute(g: &Graph, fs: &FeatureSet, cfg: &ImputationConfig) -> Result<ImputationOutput> {
    cfg.validate()?;
    if fs.num_nodes() != g.num_nodes() {
        return Err(PcfiError::shape(
            format!("{} feature rows", g.num_nodes()),
            fs.num_nodes(),
        ));
    }
    match cfg.method {
        Method::Zero => Ok(ImputationOutput {
            values: fs.values().clone(),
            spds: None,
            flagged_channels: Vec::new(),
            residuals: Vec::new(),
        }),
        Method::Fp => {
            let out = fp_baseline(g, fs, cfg.steps, cfg.lenient_no_source)?;
            Ok(ImputationOutput {
                values: out.values,
                spds: None,
                flagged_channels: out.flagged_channels,
                residuals: out.residuals,
            })
        }
        Method::Pcfi | Method::PcfiStage1Only => {
            let spds = spds_for(g, fs.known(), cfg.alpha)?;
            let stage1 = impute_stage1(
                g,
                fs,
                &spds,
                &Stage1Config {
                    steps: cfg.steps,
                    tolerance: cfg.tolerance,
                    mode: cfg.mode,
                    lenient: cfg.lenient_no_source,
                },
            )?;
            let values = if cfg.method == Method::Pcfi && cfg.beta > 0.0 {
                let pcfg = PropagationConfig::new(cfg.stage2_alpha.unwrap_or(cfg.alpha), cfg.beta)?;
                propagate_stage2(&stage1.values, &spds, &pcfg)?
            } else {
                stage1.values
            };
            Ok(ImputationOutput {
                values,
                spds: Some(spds),
                flagged_channels: stage1.flagged_channels,
                residuals: stage1.residuals,
            })
        }
    }
}

/// A graph with fully observed ground-truth features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Array2<f64>,
}

impl Dataset {
    pub fn new(graph: Graph, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != graph.num_nodes() {
            return Err(PcfiError::shape(
                format!("{} feature rows", graph.num_nodes()),
                features.nrows(),
            ));
        }
        Ok(Dataset { graph, features })
    }

    /// Restricts to the largest connected component; returns the kept ids.
    pub fn largest_component(&self) -> (Dataset, Vec<usize>) {
        let kept = largest_component_nodes(&self.graph);
        let ds = Dataset {
            graph: self.graph.induced_subgraph(&kept),
            features: crate::graph::select_rows(&self.features, &kept),
        };
        (ds, kept)
    }
}

/// FNV-1a over the mask bits in row-major order.
pub fn mask_digest(known: &KnownMask) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &k in known.as_array().iter() {
        h ^= u64::from(k);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProvenance {
    pub seed: u64,
    pub kind: MaskKind,
    pub rate: f64,
    pub missing_entries: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mask_digest: String,
    pub rmse: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub cosine_skipped_nodes: usize,
    pub spds_spearman: Option<f64>,
    pub spds_buckets: Vec<SpdsBucket>,
    pub flagged_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub cosine_mean: Option<f64>,
    pub cosine_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBlock {
    pub method: Method,
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub edges: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub dataset: DatasetSummary,
    pub config: ImputationConfig,
    pub masks: Vec<MaskProvenance>,
    pub methods: Vec<MethodBlock>,
}

#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub mask_kind: MaskKind,
    pub rate: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Shared settings; `method` is overridden per entry of `methods`.
    pub config: ImputationConfig,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// One mask/impute/evaluate cycle.
pub fn evaluate_method(
    ds: &Dataset,
    known: &KnownMask,
    cfg: &ImputationConfig,
) -> Result<(ImputationOutput, EvalReport)> {
    let fs = apply_mask(&ds.features, known)?;
    let out = impute(&ds.graph, &fs, cfg)?;
    // bucket every method by the same distances
    let spds = match &out.spds {
        Some(s) => s.distances().clone(),
        None => spds_for(&ds.graph, known, cfg.alpha)?.distances().clone(),
    };
    let mut report = evaluate(&ds.features, &out.values, known, Some(&spds))?;
    report.flagged_channels = out.flagged_channels.clone();
    Ok((out, report))
}

/// Runs every method on every seed's mask. Seeds are processed in parallel;
/// the report is ordered by method, then seed.
pub fn run_pipeline(ds: &Dataset, spec: &PipelineSpec) -> Result<PipelineReport> {
    spec.config.validate()?;
    if spec.methods.is_empty() {
        return Err(PcfiError::input("no methods requested"));
    }
    let (n, f) = ds.features.dim();

    let per_seed: Vec<(MaskProvenance, Vec<RunSummary>)> = spec
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let known = MaskSpec::new(spec.mask_kind, spec.rate, seed)?.generate(n, f)?;
            let digest = mask_digest(&known);
            let provenance = MaskProvenance {
                seed,
                kind: spec.mask_kind,
                rate: spec.rate,
                missing_entries: known.count_missing(),
                digest: digest.clone(),
            };
            let runs = spec
                .methods
                .iter()
                .map(|&m| {
                    let (_, report) = evaluate_method(ds, &known, &spec.config.with_method(m))?;
                    Ok(RunSummary {
                        seed,
                        mask_digest: digest.clone(),
                        rmse: report.rmse,
                        mean_cosine: report.mean_cosine,
                        cosine_skipped_nodes: report.cosine_skipped_nodes,
                        spds_spearman: report.spds_spearman,
                        spds_buckets: report.spds_buckets.unwrap_or_default(),
                        flagged_channels: report.flagged_channels,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((provenance, runs))
        })
        .collect::<Result<_>>()?;

    let masks = per_seed.iter().map(|(p, _)| p.clone()).collect();
    let methods = spec
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let runs: Vec<RunSummary> = per_seed.iter().map(|(_, r)| r[k].clone()).collect();
            let rmses: Vec<f64> = runs.iter().filter_map(|r| r.rmse).collect();
            let cosines: Vec<f64> = runs.iter().filter_map(|r| r.mean_cosine).collect();
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            let (cosine_mean, cosine_std) = mean_std(&cosines);
            MethodBlock {
                method,
                aggregate: Aggregate {
                    runs: runs.len(),
                    rmse_mean,
                    rmse_std,
                    cosine_mean,
                    cosine_std,
                },
                runs,
            }
        })
        .collect();

    Ok(PipelineReport {
        schema_version: SCHEMA_VERSION,
        dataset: DatasetSummary {
            nodes: n,
            edges: ds.graph.num_edges(),
            channels: f,
        },
        config: spec.config,
        masks,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        let g = Graph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (3, 4), (4, 5)], 6)
            .unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, d)| (i as f64 + 1.0) * (d as f64 - 1.0) + 0.5);
        Dataset::new(g, x).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("gcn".parse::<Method>().is_err());
    }

    #[test]
    fn zero_method_returns_masked_input() {
        let ds = toy();
        let known = MaskSpec::new(MaskKind::Uniform, 0.4, 1)
            .unwrap()
            .generate(6, 3)
            .unwrap();
        let fs = apply_mask(&ds.features, &known).unwrap();
        let out = impute(
            &ds.graph,
            &fs,
            &ImputationConfig::default().with_method(Method::Zero),
        )
        .unwrap();
        assert_eq!(&out.values, fs.values());
    }

    #[test]
    fn beta_zero_matches_stage1_only() {
        let ds = toy();
        let known = MaskSpec::new(MaskKind::Structural, 0.5, 3)
            .unwrap()
            .generate(6, 3)
            .unwrap();
        let fs = apply_mask(&ds.features, &known).unwrap();
        let base = ImputationConfig {
            beta: 0.0,
            ..ImputationConfig::default()
        };
        let a = impute(&ds.graph, &fs, &base).unwrap();
        let b = impute(&ds.graph, &fs, &base.with_method(Method::PcfiStage1Only)).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = toy();
        let fs = FeatureSet::fully_observed(ds.features.clone());
        for cfg in [
            ImputationConfig {
                alpha: 1.0,
                ..Default::default()
            },
            ImputationConfig {
                beta: -0.1,
                ..Default::default()
            },
            ImputationConfig {
                steps: 0,
                ..Default::default()
            },
            ImputationConfig {
                stage2_alpha: Some(0.0),
                ..Default::default()
            },
        ] {
            assert!(impute(&ds.graph, &fs, &cfg).is_err());
        }
    }

    #[test]
    fn pipeline_report_shape() {
        let ds = toy();
        let spec = PipelineSpec {
            mask_kind: MaskKind::Structural,
            rate: 0.5,
            seeds: (1..=4).collect(),
            methods: vec![Method::Pcfi, Method::Fp, Method::Zero],
            config: ImputationConfig::default(),
        };
        let r = run_pipeline(&ds, &spec).unwrap();
        assert_eq!(r.methods.len(), 3);
        assert_eq!(r.masks.len(), 4);
        for block in &r.methods {
            assert_eq!(block.aggregate.runs, 4);
            assert!(block.aggregate.rmse_mean.is_some() && block.aggregate.rmse_std.is_some());
            for (run, mask) in block.runs.iter().zip(&r.masks) {
                assert_eq!(run.seed, mask.seed);
                assert_eq!(run.mask_digest, mask.digest);
            }
        }
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[]), (None, None));
        assert_eq!(mean_std(&[2.0]), (Some(2.0), Some(0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn largest_component_of_dataset() {
        let g = Graph::from_edges(&[(0, 1), (2, 3), (3, 4)], 5).unwrap();
        let ds = Dataset::new(g, array![[0.0], [1.0], [2.0], [3.0], [4.0]]).unwrap();
        let (sub, kept) = ds.largest_component();
        assert_eq!(kept, vec![2, 3, 4]);
        assert_eq!(sub.features, array![[2.0], [3.0], [4.0]]);
    }
}
