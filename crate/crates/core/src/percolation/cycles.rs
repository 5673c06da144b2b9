//! Blocks between consecutive pre-regeneration points, harvested cycle pools
//! and the cycle-stationary environment built from them.

use rand::Rng;
use serde::Serialize;

use super::cluster::find_preregeneration_points;
use super::sampler::ConditionedSampler;
use super::window::{WindowConfig, BIT_H_BOTTOM};
use crate::electrical::{effective_resistance, ResistorGraph};
use crate::error::{LadderError, Result};
use crate::percolation::Vertex;

/// Cycles closer than this to a window boundary are discarded.
pub const DEFAULT_MARGIN: i64 = 10;

/// One block `[a, b)`: column groups of `a..b`, whose last horizontals lead
/// into `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cycle {
    pub length: u32,
    pub columns: Vec<u8>,
    /// Effective conductance between `(a,0)` and `(b,0)`.
    pub conductance: f64,
}

impl Cycle {
    pub fn from_columns(columns: Vec<u8>) -> Result<Self> {
        if columns.is_empty() {
            return Err(LadderError::Parameter("empty cycle".into()));
        }
        let length = columns.len() as u32;
        let w = Self::window_of(&columns, 0, 0.5)?;
        let g = ResistorGraph::from_block(&w, 0, length as i64)?;
        let r = effective_resistance(&g, Vertex::new(0, 0), Vertex::new(length as i64, 0))?;
        Ok(Cycle {
            length,
            columns,
            conductance: 1.0 / r,
        })
    }

    /// The unit cycle: a single bottom edge.
    pub fn minimal() -> Self {
        Cycle {
            length: 1,
            columns: vec![BIT_H_BOTTOM],
            conductance: 1.0,
        }
    }

    pub fn resistance(&self) -> f64 {
        1.0 / self.conductance
    }

    fn window_of(columns: &[u8], a: i64, p: f64) -> Result<WindowConfig> {
        let mut cols = columns.to_vec();
        cols.push(0);
        WindowConfig::from_columns(a, &cols, p, true)
    }

    /// The block as a window `[a, a+L]`.
    pub fn as_window(&self, a: i64) -> WindowConfig {
        Self::window_of(&self.columns, a, 0.5).expect("non-empty cycle")
    }
}

pub(crate) fn extract_cycles_with(w: &WindowConfig, prereg: &[i64], margin: i64) -> Vec<(i64, Cycle)> {
    let ok: Vec<i64> = prereg
        .iter()
        .copied()
        .filter(|&x| x - w.x_min() >= margin && w.x_max() - x >= margin)
        .collect();
    ok.windows(2)
        .map(|ab| {
            let (a, b) = (ab[0], ab[1]);
            let cols = (a..b).map(|x| w.column(x)).collect();
            let c = Cycle::from_columns(cols).expect("block between pre-regeneration points is connected");
            (a, c)
        })
        .collect()
}

/// Consecutive pre-regeneration pairs at distance `>= margin` from both
/// window ends. Empty when fewer than two eligible points exist.
pub fn extract_cycles(w: &WindowConfig, margin: i64) -> Vec<Cycle> {
    let pre = find_preregeneration_points(w);
    extract_cycles_with(w, &pre, margin)
        .into_iter()
        .map(|(_, c)| c)
        .collect()
}

/// Harvest `count` cycles from independent conditioned windows on
/// `[-half_width, half_width]`, skipping the block that contains `x = 0`.
pub fn harvest_cycles<R: Rng + ?Sized>(
    p: f64,
    half_width: i64,
    margin: i64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Cycle>> {
    let sampler = ConditionedSampler::new(p, half_width, half_width)?;
    let mut out = Vec::with_capacity(count);
    let mut empty_rounds = 0;
    while out.len() < count {
        let w = sampler.sample(rng);
        let pre = find_preregeneration_points(&w);
        let cycles = extract_cycles_with(&w, &pre, margin);
        if cycles.is_empty() {
            empty_rounds += 1;
            if empty_rounds > 1000 {
                return Err(LadderError::Insufficient(format!(
                    "no cycles in 1000 windows of half-width {half_width} at p = {p}"
                )));
            }
            continue;
        }
        for (a, c) in cycles {
            let b = a + c.length as i64;
            if a <= 0 && 0 < b {
                continue;
            }
            out.push(c);
            if out.len() == count {
                break;
            }
        }
    }
    Ok(out)
}

/// Supplier of i.i.d. cycles.
pub trait CycleSource {
    fn next_cycle(&mut self, rng: &mut dyn rand::RngCore) -> Result<Cycle>;
}

/// Hands out the cycles of a finite pool in order.
#[derive(Debug, Clone)]
pub struct PoolSource {
    pool: Vec<Cycle>,
    next: usize,
}

impl PoolSource {
    pub fn new(pool: Vec<Cycle>) -> Self {
        PoolSource { pool, next: 0 }
    }
}

impl CycleSource for PoolSource {
    fn next_cycle(&mut self, _rng: &mut dyn rand::RngCore) -> Result<Cycle> {
        let c = self
            .pool
            .get(self.next)
            .cloned()
            .ok_or(LadderError::SourceExhausted(self.next))?;
        self.next += 1;
        Ok(c)
    }
}

/// Draws cycles on the fly from fresh conditioned windows.
#[derive(Debug)]
pub struct SamplerSource {
    p: f64,
    half_width: i64,
    margin: i64,
    buffer: Vec<Cycle>,
}

impl SamplerSource {
    pub fn new(p: f64, half_width: i64, margin: i64) -> Self {
        SamplerSource {
            p,
            half_width,
            margin,
            buffer: Vec::new(),
        }
    }
}

impl CycleSource for SamplerSource {
    fn next_cycle(&mut self, rng: &mut dyn rand::RngCore) -> Result<Cycle> {
        if self.buffer.is_empty() {
            // One cycle per window keeps the draws independent.
            let mut c = harvest_cycles(self.p, self.half_width, self.margin, 1, rng)?;
            self.buffer.append(&mut c);
        }
        Ok(self.buffer.pop().expect("refilled above"))
    }
}

/// A window concatenating independent cycles.
#[derive(Debug, Clone)]
pub struct CycleStationaryEnv {
    pub window: WindowConfig,
    /// Left endpoints of the cycles, plus the final right endpoint.
    pub boundaries: Vec<i64>,
}

/// Concatenate `n_cycles` cycles so that the left endpoint of cycle
/// `origin_cycle` sits at `x = 0`.
pub fn build_cycle_stationary_env(
    source: &mut dyn CycleSource,
    n_cycles: usize,
    origin_cycle: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<CycleStationaryEnv> {
    if n_cycles == 0 || origin_cycle >= n_cycles {
        return Err(LadderError::Parameter(format!(
            "origin cycle {origin_cycle} not among {n_cycles} cycles"
        )));
    }
    let cycles = (0..n_cycles)
        .map(|_| source.next_cycle(rng))
        .collect::<Result<Vec<_>>>()?;
    let offset: i64 = cycles[..origin_cycle].iter().map(|c| c.length as i64).sum();
    let mut cols = Vec::new();
    let mut boundaries = vec![-offset];
    for c in &cycles {
        cols.extend_from_slice(&c.columns);
        boundaries.push(boundaries.last().unwrap() + c.length as i64);
    }
    cols.push(0);
    let window = WindowConfig::from_columns(-offset, &cols, f64::NAN, true)?;
    Ok(CycleStationaryEnv { window, boundaries })
}
