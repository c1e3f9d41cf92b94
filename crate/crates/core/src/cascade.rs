//! Cascades of occupancy stages and positive SISO linear blocks.
//!
//! A linear block `z' = A z + b w, y = c^T z` is propagated exactly over
//! each constant input piece with `e^{A dt}`. Interstage signals after a
//! linear block are not piecewise constant, so they are carried as cell
//! averages on a merged grid that is refined until the final output mean
//! settles. Cell averages keep every signal mean exact at any resolution.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::occupancy::{piece_state_integral, PeriodMap};
use crate::signals::{
    merge_breakpoints, uniform_breakpoints, Channel, ControlBounds, MeanTargets, PeriodicControl,
    Piece, PiecewiseSignal,
};
use crate::solver::{ascend, derive_seed, random_feasible, SolverConfig};

/// Single-input single-output state-space block.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlock {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl LinearBlock {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() || b.len() != n || c.len() != n {
            return Err(Error::Block(format!(
                "shapes A {}x{}, b {}, c {} do not agree",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Block("entries must be finite".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<Self> {
        let n = a.len();
        if a.iter().any(|row| row.len() != n) {
            return Err(Error::Block("A must be square".into()));
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(n, n, &flat),
            DVector::from_column_slice(b),
            DVector::from_column_slice(c),
        )
    }

    /// `z' = a z + b w`, `y = c z`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::from_rows(&[vec![a]], &[b], &[c])
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn with_input_gain(&self, k: f64) -> Self {
        Self { a: self.a.clone(), b: &self.b * k, c: self.c.clone() }
    }

    /// Errors unless `A` is Metzler and Hurwitz and `b, c >= 0`.
    pub fn require_positive_stable(&self) -> Result<()> {
        let v = check_metzler_hurwitz(self);
        if !v.metzler {
            return Err(Error::Block("A is not Metzler".into()));
        }
        if v.hurwitz != Some(true) {
            return Err(Error::Block(format!(
                "A is not Hurwitz (leading minors of -A: {:?})",
                v.leading_minors
            )));
        }
        if !v.nonnegative_io {
            return Err(Error::Block("b and c must be entrywise nonnegative".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockVerdict {
    pub metzler: bool,
    /// Leading-minor test on `-A`; only meaningful, and only reported, for Metzler `A`.
    pub hurwitz: Option<bool>,
    pub leading_minors: Vec<f64>,
    pub nonnegative_io: bool,
}

impl BlockVerdict {
    pub fn is_positive_stable(&self) -> bool {
        self.metzler && self.hurwitz == Some(true) && self.nonnegative_io
    }
}

pub fn check_metzler_hurwitz(blk: &LinearBlock) -> BlockVerdict {
    let n = blk.dim();
    let metzler = (0..n).all(|i| (0..n).all(|j| i == j || blk.a[(i, j)] >= 0.0));
    let neg = -&blk.a;
    let leading_minors: Vec<f64> = (1..=n)
        .map(|k| neg.view((0, 0), (k, k)).into_owned().determinant())
        .collect();
    let hurwitz = metzler.then(|| leading_minors.iter().all(|m| *m > 0.0));
    let nonnegative_io = blk.b.iter().chain(blk.c.iter()).all(|v| *v >= 0.0);
    BlockVerdict { metzler, hurwitz, leading_minors, nonnegative_io }
}

/// `H(0) = -c^T A^{-1} b`.
pub fn dc_gain(blk: &LinearBlock) -> Result<f64> {
    let x = blk
        .a
        .clone()
        .lu()
        .solve(&blk.b)
        .ok_or_else(|| Error::Block("A is singular; Hurwitz precondition failed".into()))?;
    Ok(-blk.c.dot(&x))
}

/// Random Hurwitz Metzler block with nonnegative `b, c`.
///
/// Off-diagonals are uniform on `[0, 1)`; each diagonal entry is minus its
/// row's off-diagonal sum minus a margin in `[0.1, 1.1)`, which makes `-A` a
/// strictly diagonally dominant M-matrix.
pub fn random_positive_block<R: Rng + ?Sized>(rng: &mut R, n: usize) -> LinearBlock {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = rng.gen_range(0.0..1.0);
            }
        }
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = -off - rng.gen_range(0.1..1.1);
    }
    let mut draw = || -> DVector<f64> {
        let mut v = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let k = rng.gen_range(0..n);
        v[k] += 0.5;
        v
    };
    let b = draw();
    let c = draw();
    LinearBlock::new(a, b, c).expect("shapes agree")
}

/// Exact one-piece operators of a block for a fixed duration.
struct StepOps {
    n: usize,
    /// `e^{A dt}`, row-major.
    transition: Vec<f64>,
    /// `A^{-1}(e^{A dt} - I) b`.
    forcing: Vec<f64>,
    /// `c^T A^{-1}(e^{A dt} - I)`, integrates the free response of the output.
    free_output: Vec<f64>,
    /// `c^T A^{-1}(A^{-1}(e^{A dt} - I) - dt I) b`.
    forced_output: f64,
}

/// Per-block cache of [`StepOps`] keyed by quantized duration.
struct Discretizer<'a> {
    blk: &'a LinearBlock,
    a_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    scale: f64,
    cache: HashMap<i64, StepOps>,
}

impl<'a> Discretizer<'a> {
    fn new(blk: &'a LinearBlock, period: f64) -> Result<Self> {
        let a_lu = blk.a.clone().lu();
        if !a_lu.is_invertible() {
            return Err(Error::Block("A is singular; Hurwitz precondition failed".into()));
        }
        Ok(Self { blk, a_lu, scale: 2f64.powi(44) / period, cache: HashMap::new() })
    }

    fn ops(&mut self, dt: f64) -> &StepOps {
        let key = (dt * self.scale).round() as i64;
        let blk = self.blk;
        let a_lu = &self.a_lu;
        self.cache.entry(key).or_insert_with(|| {
            let n = blk.dim();
            let e = expm(&(&blk.a * dt));
            let e_minus_i = &e - DMatrix::<f64>::identity(n, n);
            let g = a_lu.solve(&e_minus_i).expect("A invertible");
            let forcing = &g * &blk.b;
            let free_output = (blk.c.transpose() * &g).transpose();
            let inner = a_lu
                .solve(&(&g - DMatrix::<f64>::identity(n, n) * dt))
                .expect("A invertible");
            let forced_output = blk.c.dot(&(&inner * &blk.b));
            StepOps {
                n,
                transition: e.transpose().as_slice().to_vec(),
                forcing: forcing.as_slice().to_vec(),
                free_output: free_output.as_slice().to_vec(),
                forced_output,
            }
        })
    }
}

impl StepOps {
    /// Advances `z` in place across the piece with input `w`; returns `∫ y dt`.
    fn advance(&self, z: &mut [f64], scratch: &mut [f64], w: f64) -> f64 {
        let n = self.n;
        let integral = self.free_output.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>()
            + self.forced_output * w;
        for i in 0..n {
            let row = &self.transition[i * n..(i + 1) * n];
            scratch[i] = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() + self.forcing[i] * w;
        }
        z.copy_from_slice(scratch);
        integral
    }
}

struct PeriodicLinear {
    z0: Vec<f64>,
    states: Vec<Vec<f64>>,
    cell_means: Vec<f64>,
    /// Ratio of extreme singular values of `I - Φ_T`.
    condition: f64,
}

fn linear_periodic_cells(
    blk: &LinearBlock,
    disc: &mut Discretizer<'_>,
    period: f64,
    durations: &[f64],
    inputs: &[f64],
    keep_states: bool,
) -> Result<PeriodicLinear> {
    let n = blk.dim();
    let mut z = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for (&dt, &w) in durations.iter().zip(inputs) {
        disc.ops(dt).advance(&mut z, &mut scratch, w);
    }
    // period transition e^{AT}, independent of the cell split
    let phi = expm(&(&blk.a * period));
    let lhs = DMatrix::<f64>::identity(n, n) - phi;
    let sv = lhs.singular_values();
    let condition = sv.max() / sv.min();
    let z0 = lhs
        .lu()
        .solve(&DVector::from_column_slice(&z))
        .ok_or_else(|| Error::Block("I - Φ_T is singular; block is not Hurwitz".into()))?;

    let mut z: Vec<f64> = z0.iter().copied().collect();
    let mut states = Vec::new();
    if keep_states {
        states.push(z.clone());
    }
    let mut cell_means = Vec::with_capacity(durations.len());
    for (&dt, &w) in durations.iter().zip(inputs) {
        let integral = disc.ops(dt).advance(&mut z, &mut scratch, w);
        cell_means.push(integral / dt);
        if keep_states {
            states.push(z.clone());
        }
    }
    Ok(PeriodicLinear { z0: z0.iter().copied().collect(), states, cell_means, condition })
}

/// Steady-state periodic response of a block to a piecewise-constant input.
#[derive(Debug, Clone, Serialize)]
pub struct LinearResponse {
    pub z0: Vec<f64>,
    pub breakpoints: Vec<f64>,
    /// State at every input breakpoint.
    pub states: Vec<Vec<f64>>,
    /// `y` at every input breakpoint.
    pub outputs: Vec<f64>,
    /// Exact average of `y` over each input piece.
    pub cell_means: Vec<f64>,
    pub mean_output: f64,
    pub condition: f64,
    #[serde(skip)]
    input: Vec<f64>,
    #[serde(skip)]
    block: Option<LinearBlock>,
}

impl LinearResponse {
    /// `y(t)` inside the period, by exact propagation from the previous breakpoint.
    pub fn output_at(&self, t: f64) -> f64 {
        let blk = self.block.as_ref().expect("response keeps its block");
        let period = *self.breakpoints.last().unwrap();
        let tau = t.clamp(0.0, period);
        let i = self
            .breakpoints
            .partition_point(|&b| b <= tau)
            .saturating_sub(1)
            .min(self.input.len() - 1);
        let dt = tau - self.breakpoints[i];
        let n = blk.dim();
        let z = DVector::from_column_slice(&self.states[i]);
        let e = expm(&(blk.a() * dt));
        let g = blk
            .a()
            .clone()
            .lu()
            .solve(&(&e - DMatrix::<f64>::identity(n, n)))
            .expect("A invertible");
        let zt = &e * z + g * blk.b() * self.input[i];
        blk.c().dot(&zt)
    }
}

/// Periodic steady state `y_w` for a T-periodic piecewise-constant `w`.
pub fn linear_steady_periodic(blk: &LinearBlock, w: &PiecewiseSignal) -> Result<LinearResponse> {
    let period = w.period();
    let durations: Vec<f64> = w.breakpoints().windows(2).map(|p| p[1] - p[0]).collect();
    let mut disc = Discretizer::new(blk, period)?;
    let res = linear_periodic_cells(blk, &mut disc, period, &durations, w.values(), true)?;
    let outputs = res
        .states
        .iter()
        .map(|z| blk.c.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect();
    let mean_output = res.cell_means.iter().zip(&durations).map(|(m, d)| m * d).sum::<f64>() / period;
    Ok(LinearResponse {
        z0: res.z0,
        breakpoints: w.breakpoints().to_vec(),
        states: res.states,
        outputs,
        cell_means: res.cell_means,
        mean_output,
        condition: res.condition,
        input: w.values().to_vec(),
        block: Some(blk.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop9Residual {
    pub mean_output: f64,
    pub mean_input: f64,
    pub dc_gain: f64,
    pub absolute: f64,
    /// `absolute / |H(0) mean(w)|`, or `absolute` when that product vanishes.
    pub relative: f64,
}

/// Compares `mean(y_w)` with `H(0) mean(w)`.
pub fn verify_prop9(blk: &LinearBlock, w: &PiecewiseSignal) -> Result<Prop9Residual> {
    let gain = dc_gain(blk)?;
    let resp = linear_steady_periodic(blk, w)?;
    let mean_input = w.mean();
    let predicted = gain * mean_input;
    let absolute = (resp.mean_output - predicted).abs();
    let relative = if predicted != 0.0 { absolute / predicted.abs() } else { absolute };
    Ok(Prop9Residual { mean_output: resp.mean_output, mean_input, dc_gain: gain, absolute, relative })
}

/// Where a stage takes a signal from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    External(Channel),
    Stage(usize),
}

impl Source {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "u0" => Ok(Source::External(Channel::Inflow)),
            "u1" => Ok(Source::External(Channel::Outflow)),
            _ => s
                .strip_prefix('s')
                .and_then(|k| k.parse().ok())
                .map(Source::Stage)
                .ok_or_else(|| Error::Topology(format!("unknown signal source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    /// Output is the exit flux `outflow * x`.
    Occupancy { inflow: Source, outflow: Source },
    Linear { block: LinearBlock, input: Source },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTopology {
    stages: Vec<Stage>,
    labels: Vec<String>,
    wiring: String,
}

impl CascadeTopology {
    pub fn new(stages: Vec<Stage>, labels: Vec<String>, wiring: impl Into<String>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Topology("no stages".into()));
        }
        if labels.len() != stages.len() {
            return Err(Error::Topology("one label per stage is required".into()));
        }
        for (k, stage) in stages.iter().enumerate() {
            let sources: Vec<Source> = match stage {
                Stage::Occupancy { inflow, outflow } => vec![*inflow, *outflow],
                Stage::Linear { block, input } => {
                    block.require_positive_stable()?;
                    vec![*input]
                }
            };
            for s in sources {
                if let Source::Stage(j) = s {
                    if j >= k {
                        return Err(Error::Topology(format!(
                            "stage {k} reads stage {j}, which is not upstream"
                        )));
                    }
                }
            }
        }
        Ok(Self { stages, labels, wiring: wiring.into() })
    }

    /// Occupancy (`u0` in, `u1` out, emits `y`) → block (`y` in, `w1` out)
    /// → occupancy (`w1` in, `u1` out, emits `w2`).
    pub fn fig1a(block: LinearBlock) -> Result<Self> {
        Self::new(
            vec![
                Stage::Occupancy {
                    inflow: Source::External(Channel::Inflow),
                    outflow: Source::External(Channel::Outflow),
                },
                Stage::Linear { block, input: Source::Stage(0) },
                Stage::Occupancy { inflow: Source::Stage(1), outflow: Source::External(Channel::Outflow) },
            ],
            vec!["y".into(), "w1".into(), "w2".into()],
            "fig1a",
        )
    }

    /// Block (`u0` in, `w1` out) → occupancy (`w1` in, `u1` out, emits `w2`).
    pub fn fig1b(block: LinearBlock) -> Result<Self> {
        Self::new(
            vec![
                Stage::Linear { block, input: Source::External(Channel::Inflow) },
                Stage::Occupancy { inflow: Source::Stage(0), outflow: Source::External(Channel::Outflow) },
            ],
            vec!["w1".into(), "w2".into()],
            "fig1b",
        )
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn wiring(&self) -> &str {
        &self.wiring
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TopologyDocument = serde_json::from_str(text)?;
        Self::try_from(doc)
    }
}

/// On-disk topology description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub stages: Vec<StageDocument>,
    #[serde(default = "default_wiring")]
    pub wiring: WiringDocument,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

fn default_wiring() -> WiringDocument {
    WiringDocument::Preset("fig1a".into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StageDocument {
    Occupancy {},
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WiringDocument {
    Preset(String),
    Explicit(Vec<WireDocument>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WireDocument {
    #[serde(default)]
    pub inflow: Option<String>,
    #[serde(default)]
    pub outflow: Option<String>,
    #[serde(default)]
    pub input: Option<String>,
}

impl TryFrom<TopologyDocument> for CascadeTopology {
    type Error = Error;

    fn try_from(doc: TopologyDocument) -> Result<Self> {
        let blocks: Vec<Option<LinearBlock>> = doc
            .stages
            .iter()
            .map(|s| match s {
                StageDocument::Occupancy {} => Ok(None),
                StageDocument::Linear { a, b, c } => LinearBlock::from_rows(a, b, c).map(Some),
            })
            .collect::<Result<_>>()?;
        let shape: Vec<bool> = blocks.iter().map(Option::is_some).collect();
        let topo = match &doc.wiring {
            WiringDocument::Preset(name) => {
                let mut blocks = blocks.into_iter().flatten();
                match (name.as_str(), shape.as_slice()) {
                    ("fig1a", [false, true, false]) => Self::fig1a(blocks.next().unwrap())?,
                    ("fig1b", [true, false]) => Self::fig1b(blocks.next().unwrap())?,
                    ("fig1a", _) => {
                        return Err(Error::Topology("fig1a needs stages occupancy, linear, occupancy".into()))
                    }
                    ("fig1b", _) => return Err(Error::Topology("fig1b needs stages linear, occupancy".into())),
                    (other, _) => return Err(Error::Topology(format!("unknown wiring {other:?}"))),
                }
            }
            WiringDocument::Explicit(wires) => {
                if wires.len() != blocks.len() {
                    return Err(Error::Topology("one wiring entry per stage is required".into()));
                }
                let stages = blocks
                    .into_iter()
                    .zip(wires)
                    .map(|(blk, wire)| {
                        let need = |v: &Option<String>, what: &str| {
                            v.as_deref()
                                .ok_or_else(|| Error::Topology(format!("missing {what} in wiring entry")))
                                .and_then(Source::parse)
                        };
                        Ok(match blk {
                            Some(block) => Stage::Linear { block, input: need(&wire.input, "input")? },
                            None => Stage::Occupancy {
                                inflow: need(&wire.inflow, "inflow")?,
                                outflow: need(&wire.outflow, "outflow")?,
                            },
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = stages.len();
                let labels = (0..n)
                    .map(|k| if k + 1 == n { "w2".to_string() } else { format!("s{k}") })
                    .collect();
                Self::new(stages, labels, "explicit")?
            }
        };
        match doc.labels {
            Some(labels) => Self::new(topo.stages, labels, topo.wiring),
            None => Ok(topo),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeOptions {
    /// Uniform cells per period before merging with control breakpoints.
    pub min_pieces: usize,
    pub max_pieces: usize,
    /// Refinement stops once the output mean moves less than this.
    pub convergence_tol: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self { min_pieces: 1024, max_pieces: 1 << 16, convergence_tol: 1e-9 }
    }
}

/// Interstage signals as cell averages on the final grid.
#[derive(Debug, Clone, Serialize)]
pub struct CascadeSignals {
    pub labels: Vec<String>,
    pub grid: Vec<f64>,
    /// Per stage, the average output over each grid cell.
    pub cells: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub output_mean: f64,
    pub pieces: usize,
    pub refinements: usize,
    pub converged: bool,
    pub last_change: f64,
}

fn cells_on_grid(topo: &CascadeTopology, ctrl: &PeriodicControl, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let period = ctrl.period();
    let durations: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let external: [Vec<f64>; 2] = Channel::BOTH.map(|ch| {
        grid.windows(2)
            .map(|w| {
                let (u0, u1) = ctrl.sample(0.5 * (w[0] + w[1]));
                if ch == Channel::Inflow {
                    u0
                } else {
                    u1
                }
            })
            .collect()
    });
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(topo.stages.len());
    for (k, stage) in topo.stages.iter().enumerate() {
        let fetch = |s: Source, outputs: &Vec<Vec<f64>>| -> Vec<f64> {
            match s {
                Source::External(ch) => external[ch.index()].clone(),
                Source::Stage(j) => outputs[j].clone(),
            }
        };
        let out = match stage {
            Stage::Occupancy { inflow, outflow } => {
                let a = fetch(*inflow, &outputs);
                let b = fetch(*outflow, &outputs);
                if let Some(i) = a.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Topology(format!(
                        "stage {k} inflow {} at t = {} is not positive",
                        a[i], grid[i]
                    )));
                }
                if let Some(i) = b.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Topology(format!(
                        "stage {k} outflow {} at t = {} is not positive",
                        b[i], grid[i]
                    )));
                }
                let pieces: Vec<Piece> = (0..durations.len())
                    .map(|i| Piece { start: grid[i], duration: durations[i], inflow: a[i], outflow: b[i] })
                    .collect();
                let map = pieces.iter().fold(PeriodMap::identity(), |m, p| m.then(p));
                let mut x = map.fixed_point();
                pieces
                    .iter()
                    .map(|p| {
                        let integral = piece_state_integral(x, p.inflow, p.outflow, p.duration);
                        x = crate::occupancy::propagate_piece(x, p.inflow, p.outflow, p.duration);
                        p.outflow * integral / p.duration
                    })
                    .collect()
            }
            Stage::Linear { block, input } => {
                let w = fetch(*input, &outputs);
                let mut disc = Discretizer::new(block, period)?;
                linear_periodic_cells(block, &mut disc, period, &durations, &w, false)?.cell_means
            }
        };
        outputs.push(out);
    }
    Ok(outputs)
}

fn cell_mean(cells: &[f64], grid: &[f64]) -> f64 {
    let period = grid[grid.len() - 1];
    cells.iter().zip(grid.windows(2)).map(|(v, w)| v * (w[1] - w[0])).sum::<f64>() / period
}

/// Steady-periodic signals of every stage, refined until the final mean settles.
pub fn cascade_simulate(topo: &CascadeTopology, ctrl: &PeriodicControl, opts: &CascadeOptions) -> Result<CascadeSignals> {
    let period = ctrl.period();
    let mut pieces = opts.min_pieces.max(1);
    let mut refinements = 0;
    let mut previous: Option<f64> = None;
    loop {
        let uniform = uniform_breakpoints(period, pieces)?;
        let grid = merge_breakpoints(period, &[&uniform, ctrl.breakpoints()]);
        let cells = cells_on_grid(topo, ctrl, &grid)?;
        let means: Vec<f64> = cells.iter().map(|c| cell_mean(c, &grid)).collect();
        let output_mean = *means.last().unwrap();
        let change = previous.map_or(f64::INFINITY, |p| (output_mean - p).abs());
        let converged = change < opts.convergence_tol;
        if converged || pieces * 2 > opts.max_pieces {
            return Ok(CascadeSignals {
                labels: topo.labels.clone(),
                grid,
                cells,
                means,
                output_mean,
                pieces,
                refinements,
                converged,
                last_change: change,
            });
        }
        previous = Some(output_mean);
        pieces *= 2;
        refinements += 1;
    }
}

/// Stage output means under constant inputs, composed in closed form:
/// an occupancy stage emits `out * in / (in + out)`, a block emits `H(0) in`.
pub fn steady_state_means(topo: &CascadeTopology, means: MeanTargets) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(topo.stages.len());
    let get = |s: Source, out: &Vec<f64>| match s {
        Source::External(ch) => means.get(ch),
        Source::Stage(j) => out[j],
    };
    for stage in &topo.stages {
        let v = match stage {
            Stage::Occupancy { inflow, outflow } => {
                let (a, b) = (get(*inflow, &out), get(*outflow, &out));
                b * a / (a + b)
            }
            Stage::Linear { block, input } => dc_gain(block)? * get(*input, &out),
        };
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeSearch {
    pub n_pieces: usize,
    pub ascent_restarts: usize,
    pub ascent_iters: usize,
    /// Fixed uniform cells per period used inside the ascent loop.
    pub ascent_resolution: usize,
    pub options: CascadeOptions,
    pub tolerance: f64,
}

impl Default for CascadeSearch {
    fn default() -> Self {
        Self {
            n_pieces: 16,
            ascent_restarts: 2,
            ascent_iters: 15,
            ascent_resolution: 256,
            options: CascadeOptions::default(),
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NoGainReport {
    pub wiring: String,
    pub constant_output_mean: f64,
    pub closed_form_output_mean: f64,
    pub max_sampled_output_mean: Option<f64>,
    pub argmax_sample: Option<usize>,
    pub ascent_best_output_mean: Option<f64>,
    /// Best search value minus the constant-input value.
    pub gap: f64,
    pub samples: usize,
    pub exceedances: usize,
    pub tolerance: f64,
    pub assumptions: Vec<String>,
}

pub const CASCADE_ASSUMPTIONS: [&str; 2] = [
    "linear blocks have entrywise nonnegative b and c",
    "fig1a wiring: occupancy(u0, u1) -> linear -> occupancy(inflow w1, outflow u1)",
];

/// Random and ascent search for inputs beating the constant-input output mean.
pub fn verify_no_gain_cascade(
    topo: &CascadeTopology,
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
    n_samples: usize,
    seed: u64,
    search: &CascadeSearch,
) -> Result<NoGainReport> {
    let constant = PeriodicControl::constant(period, bounds, means)?;
    let constant_output_mean = cascade_simulate(topo, &constant, &search.options)?.output_mean;
    let closed_form_output_mean = *steady_state_means(topo, means)?.last().unwrap();

    let sampled: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let ctrl = random_feasible(derive_seed(seed, i as u64), bounds, means, period, search.n_pieces)?;
            Ok(cascade_simulate(topo, &ctrl, &search.options)?.output_mean)
        })
        .collect::<Result<_>>()?;
    let best_sample = sampled
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((i, v)),
        });

    let fixed = CascadeOptions {
        min_pieces: search.ascent_resolution,
        max_pieces: search.ascent_resolution,
        ..search.options
    };
    let cfg = SolverConfig {
        n_pieces: search.n_pieces,
        max_iters: search.ascent_iters,
        ..SolverConfig::default()
    };
    let ascent_best = if n_samples > 0 && search.ascent_restarts > 0 {
        let runs: Vec<f64> = (0..search.ascent_restarts)
            .into_par_iter()
            .map(|r| {
                let start = random_feasible(
                    derive_seed(seed ^ 0xA5A5_A5A5, r as u64),
                    bounds,
                    means,
                    period,
                    search.n_pieces,
                )?;
                let obj = |c: &PeriodicControl| {
                    cascade_simulate(topo, c, &fixed).map(|s| s.output_mean).unwrap_or(f64::NEG_INFINITY)
                };
                let run = ascend(start, means, &cfg, r, &obj)?;
                Ok(cascade_simulate(topo, &run.control, &search.options)?.output_mean)
            })
            .collect::<Result<_>>()?;
        runs.into_iter().reduce(f64::max)
    } else {
        None
    };

    let mut all: Vec<f64> = sampled.clone();
    all.extend(ascent_best);
    let best = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NoGainReport {
        wiring: topo.wiring.clone(),
        constant_output_mean,
        closed_form_output_mean,
        max_sampled_output_mean: best_sample.map(|b| b.1),
        argmax_sample: best_sample.map(|b| b.0),
        ascent_best_output_mean: ascent_best,
        gap: if all.is_empty() { 0.0 } else { best - constant_output_mean },
        samples: n_samples,
        exceedances: all.iter().filter(|&&v| v > constant_output_mean + search.tolerance).count(),
        tolerance: search.tolerance,
        assumptions: CASCADE_ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    })
}
