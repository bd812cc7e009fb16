//! Channel-wise diffusion of observed values (stage one).
//!
//! For a channel, nodes are reordered so the known ones come first. Each
//! unknown row of the operator holds weight 1 on the diagonal and
//! `alpha^(S_j - S_i)` on every neighbour `j`, normalized to sum to one; each
//! known row is the unit vector on itself. Iterating the operator from
//! `[x_known; 0]` converges to the absorbing steady state
//! `(I - W_uu)^-1 W_uk x_known`, which [`closed_form_channel`] solves directly.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{alpha_pow, check_alpha, compute_spds_channel, SpdsMatrix, UNREACHABLE};
use crate::error::{PcfiError, Result};
use crate::graph::{partition_channel, ChannelPartition, Graph};
use crate::masking::FeatureSet;

/// Largest unknown block the dense closed-form solver accepts.
pub const CLOSED_FORM_MAX_UNKNOWNS: usize = 2000;

/// Pinned, row-stochastic diffusion operator for one channel, stored as CSR
/// over the known-first node order.
#[derive(Debug, Clone)]
pub struct ChannelDiffusion {
    pub channel: usize,
    pub partition: ChannelPartition,
    alpha: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Original ids of unknown nodes with no reachable source. Their rows are
    /// pinned to themselves and stay at zero.
    unreachable: Vec<usize>,
}

impl ChannelDiffusion {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn unreachable_nodes(&self) -> &[usize] {
        &self.unreachable
    }

    /// Column indices and weights of reordered row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Dense copy of the operator in reordered index space.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut m = Array2::zeros((n, n));
        for r in 0..n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[[r, c]] = v;
            }
        }
        m
    }

    /// `y = W x` in reordered index space.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *out = acc;
        }
    }

    fn is_pinned(&self, r: usize) -> bool {
        r < self.partition.num_known() || {
            let (cols, _) = self.row(r);
            cols.len() == 1 && cols[0] == r
        }
    }
}

/// Builds the pinned diffusion operator for one channel.
///
/// `s_column` holds the SPD-S values of the channel in original node order and
/// must be zero exactly at the partition's known nodes.
pub fn build_channel_operator(
    g: &Graph,
    s_column: &[u32],
    partition: &ChannelPartition,
    alpha: f64,
) -> Result<ChannelDiffusion> {
    check_alpha(alpha)?;
    let n = g.num_nodes();
    if s_column.len() != n || partition.num_nodes() != n {
        return Err(PcfiError::shape(
            format!("{n} nodes"),
            format!(
                "SPD-S length {}, partition size {}",
                s_column.len(),
                partition.num_nodes()
            ),
        ));
    }
    if partition.num_known() == 0 {
        return Err(PcfiError::NoSource {
            channels: vec![partition.channel],
        });
    }
    let k = partition.num_known();
    for (pos, &old) in partition
        .known_nodes
        .iter()
        .chain(&partition.unknown_nodes)
        .enumerate()
    {
        if (s_column[old] == 0) != (pos < k) {
            return Err(PcfiError::input(format!(
                "SPD-S of node {old} in channel {} disagrees with its mask",
                partition.channel
            )));
        }
    }

    // weights depend only on S_j - S_i in {-1, 0, 1}
    let toward_source = alpha_pow(alpha, -1);
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n + 2 * g.num_edges());
    let mut vals = Vec::with_capacity(cols.capacity());
    let mut unreachable = Vec::new();
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    row_ptr.push(0);
    for r in 0..n {
        let i = partition.original(r);
        if r < k || s_column[i] == UNREACHABLE {
            if r >= k {
                unreachable.push(i);
            }
            cols.push(r);
            vals.push(1.0);
            row_ptr.push(cols.len());
            continue;
        }
        let si = s_column[i] as i64;
        scratch.clear();
        scratch.push((r, 1.0));
        for &j in g.neighbors(i) {
            let w = match s_column[j] as i64 - si {
                -1 => toward_source,
                0 => 1.0,
                1 => alpha,
                delta => alpha_pow(alpha, delta),
            };
            scratch.push((partition.position(j), w));
        }
        scratch.sort_unstable_by_key(|&(c, _)| c);
        let total: f64 = scratch.iter().map(|&(_, w)| w).sum();
        for &(c, w) in &scratch {
            cols.push(c);
            vals.push(w / total);
        }
        row_ptr.push(cols.len());
    }
    unreachable.sort_unstable();

    Ok(ChannelDiffusion {
        channel: partition.channel,
        partition: partition.clone(),
        alpha,
        row_ptr,
        cols,
        vals,
        unreachable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionOptions {
    /// Number of operator applications `K`.
    pub steps: usize,
    /// Stop early once the largest per-step change drops below this value.
    pub tolerance: Option<f64>,
}

impl DiffusionOptions {
    pub fn fixed(steps: usize) -> Self {
        DiffusionOptions {
            steps,
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionResult {
    /// Imputed channel in original node order.
    pub imputed_channel: Vec<f64>,
    pub steps_run: usize,
    /// Max-abs change made by the last step.
    pub residual: f64,
}

/// Runs the pinned recursion `x(t) = W x(t-1)` from `x(0) = [x_known; 0]`.
/// `x_known` is ordered like `cd.partition.known_nodes`.
pub fn diffuse_channel(
    cd: &ChannelDiffusion,
    x_known: &[f64],
    opts: DiffusionOptions,
) -> Result<DiffusionResult> {
    if opts.steps == 0 {
        return Err(PcfiError::input("diffusion needs at least one step"));
    }
    let k = cd.partition.num_known();
    if x_known.len() != k {
        return Err(PcfiError::shape(format!("{k} known values"), x_known.len()));
    }
    let n = cd.num_nodes();
    let mut x = vec![0.0; n];
    x[..k].copy_from_slice(x_known);
    let mut y = vec![0.0; n];
    let mut residual = 0.0;
    let mut steps_run = 0;
    while steps_run < opts.steps {
        cd.apply(&x, &mut y);
        residual = x
            .iter()
            .zip(&y)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut x, &mut y);
        steps_run += 1;
        if opts.tolerance.is_some_and(|tol| residual < tol) {
            break;
        }
    }
    Ok(DiffusionResult {
        imputed_channel: cd.partition.unpermute(&x),
        steps_run,
        residual,
    })
}

/// Steady state of the recursion from a direct solve of
/// `(I - W_uu) x_u = W_uk x_k`. Refuses more than
/// [`CLOSED_FORM_MAX_UNKNOWNS`] unknowns. Unreachable nodes stay at zero.
pub fn closed_form_channel(cd: &ChannelDiffusion, x_known: &[f64]) -> Result<Vec<f64>> {
    let k = cd.partition.num_known();
    if x_known.len() != k {
        return Err(PcfiError::shape(format!("{k} known values"), x_known.len()));
    }
    let n = cd.num_nodes();
    // reordered unknown rows that actually diffuse
    let free: Vec<usize> = (k..n).filter(|&r| !cd.is_pinned(r)).collect();
    if free.len() > CLOSED_FORM_MAX_UNKNOWNS {
        return Err(PcfiError::input(format!(
            "closed-form solve limited to {CLOSED_FORM_MAX_UNKNOWNS} unknowns, channel {} has {}",
            cd.channel,
            free.len()
        )));
    }
    let mut slot = vec![usize::MAX; n];
    for (m, &r) in free.iter().enumerate() {
        slot[r] = m;
    }

    let u = free.len();
    let mut x = vec![0.0; n];
    x[..k].copy_from_slice(x_known);
    if u == 0 {
        return Ok(cd.partition.unpermute(&x));
    }
    let mut lhs = DMatrix::<f64>::identity(u, u);
    let mut rhs = DVector::<f64>::zeros(u);
    for (m, &r) in free.iter().enumerate() {
        let (cols, vals) = cd.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            if c < k {
                rhs[m] += v * x_known[c];
            } else if slot[c] != usize::MAX {
                lhs[(m, slot[c])] -= v;
            }
        }
    }
    let solution = lhs.lu().solve(&rhs).ok_or_else(|| {
        PcfiError::Numerical(format!(
            "I - W_uu is singular for channel {} despite a reachable source",
            cd.channel
        ))
    })?;
    for (m, &r) in free.iter().enumerate() {
        x[r] = solution[m];
    }
    Ok(cd.partition.unpermute(&x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Iterative,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Config {
    pub steps: usize,
    pub tolerance: Option<f64>,
    pub mode: SolveMode,
    /// Zero-fill and flag channels whose nodes cannot all reach a source
    /// instead of failing.
    pub lenient: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            steps: 100,
            tolerance: None,
            mode: SolveMode::Iterative,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub values: Array2<f64>,
    /// Channels with nodes that no source reaches (lenient mode only).
    pub flagged_channels: Vec<usize>,
    /// Last-step residual per channel; 0 for closed-form channels.
    pub residuals: Vec<f64>,
    pub steps_run: Vec<usize>,
}

/// Channels that have no source at all or some node no source reaches.
fn starved_channels(s: &SpdsMatrix) -> Vec<usize> {
    let (_, f) = s.dim();
    (0..f)
        .filter(|&d| s.distances().column(d).iter().any(|&v| v == UNREACHABLE))
        .collect()
}

fn check_shapes(g: &Graph, fs: &FeatureSet, s: &SpdsMatrix) -> Result<()> {
    let want = (g.num_nodes(), fs.num_channels());
    if fs.num_nodes() != g.num_nodes() {
        return Err(PcfiError::shape(
            format!("{} feature rows", g.num_nodes()),
            fs.num_nodes(),
        ));
    }
    if s.dim() != want {
        return Err(PcfiError::shape(
            format!("SPD-S {want:?}"),
            format!("{:?}", s.dim()),
        ));
    }
    Ok(())
}

/// Stage one over all channels. Channels run in parallel on the current
/// rayon pool; each channel is computed sequentially, so results do not
/// depend on the schedule.
pub fn impute_stage1(
    g: &Graph,
    fs: &FeatureSet,
    s: &SpdsMatrix,
    cfg: &Stage1Config,
) -> Result<Stage1Output> {
    check_shapes(g, fs, s)?;
    let (n, f) = (fs.num_nodes(), fs.num_channels());
    let flagged = starved_channels(s);
    if !cfg.lenient && !flagged.is_empty() {
        return Err(PcfiError::NoSource { channels: flagged });
    }
    let alpha = s.alpha();

    // structural masks share one operator across channels
    let shared = if f > 1 && fs.known().is_structural() {
        let col0 = s.column(0);
        let same = (1..f).all(|d| s.distances().column(d).iter().eq(col0.iter()));
        let partition = partition_channel(&fs.known().column(0), 0);
        if same && partition.num_known() > 0 {
            Some(build_channel_operator(g, &col0, &partition, alpha)?)
        } else {
            None
        }
    } else {
        None
    };

    let run = |d: usize| -> Result<(Vec<f64>, f64, usize)> {
        let owned;
        let cd = match &shared {
            Some(cd) => cd,
            None => {
                let partition = partition_channel(&fs.known().column(d), d);
                if partition.num_known() == 0 {
                    return Ok((vec![0.0; n], 0.0, 0));
                }
                owned = build_channel_operator(g, &s.column(d), &partition, alpha)?;
                &owned
            }
        };
        let x_known: Vec<f64> = cd
            .partition
            .known_nodes
            .iter()
            .map(|&i| fs.values()[[i, d]])
            .collect();
        match cfg.mode {
            SolveMode::Iterative => {
                let res = diffuse_channel(
                    cd,
                    &x_known,
                    DiffusionOptions {
                        steps: cfg.steps,
                        tolerance: cfg.tolerance,
                    },
                )?;
                Ok((res.imputed_channel, res.residual, res.steps_run))
            }
            SolveMode::ClosedForm => Ok((closed_form_channel(cd, &x_known)?, 0.0, 0)),
        }
    };

    let columns: Vec<(Vec<f64>, f64, usize)> =
        (0..f).into_par_iter().map(run).collect::<Result<_>>()?;

    let mut values = Array2::zeros((n, f));
    let mut residuals = Vec::with_capacity(f);
    let mut steps_run = Vec::with_capacity(f);
    for (d, (col, res, steps)) in columns.into_iter().enumerate() {
        values.column_mut(d).assign(&ndarray::Array1::from(col));
        residuals.push(res);
        steps_run.push(steps);
    }
    Ok(Stage1Output {
        values,
        flagged_channels: flagged,
        residuals,
        steps_run,
    })
}

/// Symmetric-normalized diffusion baseline: `x <- D^-1/2 (A + I) D^-1/2 x`
/// with observed entries reset after every step.
pub fn fp_baseline(
    g: &Graph,
    fs: &FeatureSet,
    steps: usize,
    lenient: bool,
) -> Result<Stage1Output> {
    if fs.num_nodes() != g.num_nodes() {
        return Err(PcfiError::shape(
            format!("{} feature rows", g.num_nodes()),
            fs.num_nodes(),
        ));
    }
    if steps == 0 {
        return Err(PcfiError::input("diffusion needs at least one step"));
    }
    let (n, f) = (fs.num_nodes(), fs.num_channels());
    let known = fs.known();

    let structural = known.is_structural();
    let starved_in = |d: usize| compute_spds_channel(g, &known.column(d)).contains(&UNREACHABLE);
    let flagged: Vec<usize> = if structural && f > 0 {
        if starved_in(0) {
            (0..f).collect()
        } else {
            Vec::new()
        }
    } else {
        (0..f).filter(|&d| starved_in(d)).collect()
    };
    if !lenient && !flagged.is_empty() {
        return Err(PcfiError::NoSource { channels: flagged });
    }

    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let step = |x: &[f64], y: &mut [f64]| {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = inv_sqrt[i] * x[i];
            for &j in g.neighbors(i) {
                acc += inv_sqrt[j] * x[j];
            }
            *out = inv_sqrt[i] * acc;
        }
    };

    let columns: Vec<(Vec<f64>, f64)> = (0..f)
        .into_par_iter()
        .map(|d| {
            let mask = known.column(d);
            let observed = fs.column(d);
            let mut x = observed.clone();
            let mut y = vec![0.0; n];
            let mut residual = 0.0;
            for _ in 0..steps {
                step(&x, &mut y);
                for i in 0..n {
                    if mask[i] {
                        y[i] = observed[i];
                    }
                }
                residual = x
                    .iter()
                    .zip(&y)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                std::mem::swap(&mut x, &mut y);
            }
            (x, residual)
        })
        .collect();

    let mut values = Array2::zeros((n, f));
    let mut residuals = Vec::with_capacity(f);
    for (d, (col, res)) in columns.into_iter().enumerate() {
        values.column_mut(d).assign(&ndarray::Array1::from(col));
        residuals.push(res);
    }
    Ok(Stage1Output {
        values,
        flagged_channels: flagged,
        residuals,
        steps_run: vec![steps; f],
    })
}
