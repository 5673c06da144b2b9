//! Exact samplers for i.i.d. bond percolation on a ladder window, with and
//! without conditioning on a left-to-right open crossing.

use rand::Rng;

use super::cluster::crossing_exists;
use super::window::{WindowConfig, BIT_H_BOTTOM, BIT_H_TOP, BIT_VERTICAL};
use crate::error::{LadderError, Result};

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(LadderError::Parameter(format!("p = {p} is not a probability")));
    }
    Ok(())
}

/// Every edge an independent Bernoulli(p).
pub fn sample_window_unconditioned<R: Rng + ?Sized>(
    p: f64,
    x_min: i64,
    x_max: i64,
    rng: &mut R,
) -> Result<WindowConfig> {
    check_p(p)?;
    let mut w = WindowConfig::closed(x_min, x_max, p)?;
    for x in x_min..=x_max {
        let mut c = 0u8;
        if rng.random_bool(p) {
            c |= BIT_VERTICAL;
        }
        if x < x_max {
            if rng.random_bool(p) {
                c |= BIT_H_BOTTOM;
            }
            if rng.random_bool(p) {
                c |= BIT_H_TOP;
            }
        }
        w.set_column(x, c);
    }
    Ok(w)
}

/// Frontier connectivity of the two vertices of the current column to the
/// left boundary column, through edges explored so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Frontier {
    /// Both connected, and connected to each other.
    BothLinked = 0,
    TopOnly = 1,
    BottomOnly = 2,
    /// Both connected, but in different components.
    BothUnlinked = 3,
    Dead = 4,
}

const N_STATES: usize = 5;

impl Frontier {
    const ALL: [Frontier; N_STATES] = [
        Frontier::BothLinked,
        Frontier::TopOnly,
        Frontier::BottomOnly,
        Frontier::BothUnlinked,
        Frontier::Dead,
    ];

    fn initial(vertical_open: bool) -> Self {
        if vertical_open {
            Frontier::BothLinked
        } else {
            Frontier::BothUnlinked
        }
    }

    /// Advance one column given `(h_bottom, h_top)` leaving the current column
    /// and the rung of the next column.
    fn step(self, hb: bool, ht: bool, rung: bool) -> Self {
        let (bot, top, linked) = match self {
            Frontier::BothLinked => (true, true, true),
            Frontier::TopOnly => (false, true, false),
            Frontier::BottomOnly => (true, false, false),
            Frontier::BothUnlinked => (true, true, false),
            Frontier::Dead => (false, false, false),
        };
        let nb = hb && bot;
        let nt = ht && top;
        if rung {
            return if nb || nt { Frontier::BothLinked } else { Frontier::Dead };
        }
        match (nb, nt) {
            (true, true) if linked => Frontier::BothLinked,
            (true, true) => Frontier::BothUnlinked,
            (true, false) => Frontier::BottomOnly,
            (false, true) => Frontier::TopOnly,
            (false, false) => Frontier::Dead,
        }
    }
}

/// Per-edge constraint: `None` = free Bernoulli(p), `Some(b)` = forced to `b`.
#[derive(Debug, Clone, Default)]
pub struct EdgeConstraints {
    forced: Vec<[Option<bool>; 3]>,
}

impl EdgeConstraints {
    fn new(ncols: usize) -> Self {
        EdgeConstraints {
            forced: vec![[None; 3]; ncols],
        }
    }
}

/// Exact sampler for the crossing-conditioned law on a fixed window,
/// by transfer-matrix forward-backward sampling.
///
/// The backward table holds, per column and frontier state, the probability
/// (rescaled per column) that a crossing is still completed to the right
/// boundary. Each column's three edge bits are then drawn from the Bernoulli
/// prior tilted by that table.
#[derive(Debug, Clone)]
pub struct ConditionedSampler {
    p: f64,
    x_min: i64,
    x_max: i64,
    constraints: EdgeConstraints,
    /// `backward[c][s]`, column offset `c`, rescaled so each column's max is 1.
    backward: Vec<[f64; N_STATES]>,
    /// Weights of the initial rung being closed/open.
    initial: [f64; 2],
}

impl ConditionedSampler {
    /// Sampler for `P_{p,N1,N2}` on the window `[-n1, n2]`.
    pub fn new(p: f64, n1: i64, n2: i64) -> Result<Self> {
        if n1 < 1 || n2 < 1 {
            return Err(LadderError::Parameter(format!(
                "window half-widths must be >= 1 (got {n1}, {n2})"
            )));
        }
        Self::with_window(p, -n1, n2)
    }

    pub fn with_window(p: f64, x_min: i64, x_max: i64) -> Result<Self> {
        check_p(p)?;
        if x_min >= x_max {
            return Err(LadderError::Parameter(format!("empty window [{x_min}, {x_max}]")));
        }
        let ncols = (x_max - x_min + 1) as usize;
        let mut s = ConditionedSampler {
            p,
            x_min,
            x_max,
            constraints: EdgeConstraints::new(ncols),
            backward: Vec::new(),
            initial: [0.0; 2],
        };
        s.rebuild()?;
        Ok(s)
    }

    fn col(&self, x: i64) -> usize {
        (x - self.x_min) as usize
    }

    /// Force the rung at `x`.
    pub fn force_vertical(mut self, x: i64, open: bool) -> Result<Self> {
        let c = self.col(x);
        self.constraints.forced[c][0] = Some(open);
        self.rebuild()?;
        Ok(self)
    }

    /// Force the horizontal `<(x,y),(x+1,y)>`.
    pub fn force_horizontal(mut self, x: i64, y: u8, open: bool) -> Result<Self> {
        if x >= self.x_max {
            return Err(LadderError::Parameter(format!("no horizontal edge leaves column {x}")));
        }
        let c = self.col(x);
        self.constraints.forced[c][1 + y as usize] = Some(open);
        self.rebuild()?;
        Ok(self)
    }

    /// Force `(x,1)` to be isolated, making `(x,0)` a pre-regeneration point of
    /// every crossing configuration.
    pub fn force_isolated_top(self, x: i64) -> Result<Self> {
        let mut s = self.force_vertical(x, false)?;
        if x > s.x_min {
            s = s.force_horizontal(x - 1, 1, false)?;
        }
        if x < s.x_max {
            s = s.force_horizontal(x, 1, false)?;
        }
        Ok(s)
    }

    fn prior(&self, forced: Option<bool>, open: bool) -> f64 {
        match forced {
            Some(f) => f64::from(u8::from(f == open)),
            None if open => self.p,
            None => 1.0 - self.p,
        }
    }

    fn step_weights(&self, c: usize) -> [(bool, bool, bool, f64); 8] {
        // Edges: horizontals of column c, rung of column c+1.
        let fc = self.constraints.forced[c];
        let fn1 = self.constraints.forced[c + 1];
        let mut out = [(false, false, false, 0.0); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let hb = k & 1 != 0;
            let ht = k & 2 != 0;
            let rung = k & 4 != 0;
            let w = self.prior(fc[1], hb) * self.prior(fc[2], ht) * self.prior(fn1[0], rung);
            *slot = (hb, ht, rung, w);
        }
        out
    }

    fn rebuild(&mut self) -> Result<()> {
        let ncols = (self.x_max - self.x_min + 1) as usize;
        let mut backward = vec![[0.0; N_STATES]; ncols];
        for s in Frontier::ALL {
            backward[ncols - 1][s as usize] = if s == Frontier::Dead { 0.0 } else { 1.0 };
        }
        for c in (0..ncols - 1).rev() {
            let steps = self.step_weights(c);
            let mut row = [0.0; N_STATES];
            for s in Frontier::ALL {
                row[s as usize] = steps
                    .iter()
                    .map(|&(hb, ht, rung, w)| w * backward[c + 1][s.step(hb, ht, rung) as usize])
                    .sum();
            }
            let m = row.iter().cloned().fold(0.0, f64::max);
            if m > 0.0 {
                for r in &mut row {
                    *r /= m;
                }
            }
            backward[c] = row;
        }
        let f0 = self.constraints.forced[0][0];
        self.initial = [
            self.prior(f0, false) * backward[0][Frontier::initial(false) as usize],
            self.prior(f0, true) * backward[0][Frontier::initial(true) as usize],
        ];
        self.backward = backward;
        if self.initial[0] + self.initial[1] <= 0.0 {
            return Err(LadderError::NoCrossing);
        }
        Ok(())
    }

    /// Draw one configuration from the conditioned law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WindowConfig {
        let mut w = WindowConfig::closed(self.x_min, self.x_max, self.p).expect("window validated at construction");
        w.set_conditioned(true);
        let ncols = self.backward.len();
        let rung0 = rng.random::<f64>() * (self.initial[0] + self.initial[1]) >= self.initial[0];
        let mut state = Frontier::initial(rung0);
        let mut cols = vec![0u8; ncols];
        if rung0 {
            cols[0] |= BIT_VERTICAL;
        }
        for c in 0..ncols - 1 {
            let steps = self.step_weights(c);
            let mut weights = [0.0; 8];
            let mut total = 0.0;
            for (k, &(hb, ht, rung, pw)) in steps.iter().enumerate() {
                weights[k] = pw * self.backward[c + 1][state.step(hb, ht, rung) as usize];
                total += weights[k];
            }
            debug_assert!(total > 0.0, "live state with zero continuation weight");
            let mut u = rng.random::<f64>() * total;
            let mut pick = 7;
            for (k, &wk) in weights.iter().enumerate() {
                if wk > 0.0 {
                    pick = k;
                    if u < wk {
                        break;
                    }
                    u -= wk;
                }
            }
            let (hb, ht, rung, _) = steps[pick];
            if hb {
                cols[c] |= BIT_H_BOTTOM;
            }
            if ht {
                cols[c] |= BIT_H_TOP;
            }
            if rung {
                cols[c + 1] |= BIT_VERTICAL;
            }
            state = state.step(hb, ht, rung);
        }
        debug_assert!(state != Frontier::Dead);
        for (c, &bits) in cols.iter().enumerate() {
            w.set_column(self.x_min + c as i64, bits);
        }
        w
    }
}

/// One exact draw from `P_{p,N1,N2}` on `[-n1, n2]`.
pub fn sample_window_conditioned<R: Rng + ?Sized>(p: f64, n1: i64, n2: i64, rng: &mut R) -> Result<WindowConfig> {
    if p <= 0.0 {
        return Err(LadderError::NoCrossing);
    }
    Ok(ConditionedSampler::new(p, n1, n2)?.sample(rng))
}

/// Rejection sampler: redraw unconditioned windows until one crosses.
/// Reference implementation for high `p`; gives up after `max_tries`.
pub fn sample_window_rejection<R: Rng + ?Sized>(
    p: f64,
    n1: i64,
    n2: i64,
    max_tries: usize,
    rng: &mut R,
) -> Result<WindowConfig> {
    for _ in 0..max_tries {
        let mut w = sample_window_unconditioned(p, -n1, n2, rng)?;
        if crossing_exists(&w) {
            w.set_conditioned(true);
            return Ok(w);
        }
    }
    Err(LadderError::NoCrossing)
}

/// Maximum number of edges [`enumerate_conditioned_distribution`] accepts.
pub const ENUMERATION_EDGE_LIMIT: usize = 24;

/// Exact conditioned law by exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct EnumeratedDistribution {
    pub x_min: i64,
    pub x_max: i64,
    pub p: f64,
    /// `(code, probability)` over crossing configurations, by increasing code.
    pub support: Vec<(u64, f64)>,
    /// `mu_p` of the crossing event.
    pub crossing_probability: f64,
}

impl EnumeratedDistribution {
    /// Probability of the configuration with the given code (0 off support).
    pub fn probability(&self, code: u64) -> f64 {
        self.support
            .binary_search_by_key(&code, |&(c, _)| c)
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    /// Marginal probability that edge bit `bit` (in code order) is open.
    pub fn edge_marginal(&self, bit: u32) -> f64 {
        self.support
            .iter()
            .filter(|(c, _)| c & (1 << bit) != 0)
            .map(|(_, q)| q)
            .sum()
    }
}

/// Enumerate every configuration on `[-n1, n2]` and normalize the prior
/// weights of those containing a crossing.
pub fn enumerate_conditioned_distribution(p: f64, n1: i64, n2: i64) -> Result<EnumeratedDistribution> {
    check_p(p)?;
    let (x_min, x_max) = (-n1, n2);
    let probe = WindowConfig::closed(x_min, x_max, p)?;
    let edges = probe.edge_count();
    if edges > ENUMERATION_EDGE_LIMIT {
        return Err(LadderError::Feasibility {
            edges,
            limit: ENUMERATION_EDGE_LIMIT,
        });
    }
    let mut support = Vec::new();
    let mut z = 0.0;
    for code in 0..(1u64 << edges) {
        let w = WindowConfig::from_code(x_min, x_max, p, code)?;
        if crossing_exists(&w) {
            let open = code.count_ones() as i32;
            let weight = p.powi(open) * (1.0 - p).powi(edges as i32 - open);
            z += weight;
            support.push((code, weight));
        }
    }
    if z <= 0.0 {
        return Err(LadderError::NoCrossing);
    }
    for s in &mut support {
        s.1 /= z;
    }
    Ok(EnumeratedDistribution {
        x_min,
        x_max,
        p,
        support,
        crossing_probability: z,
    })
}
