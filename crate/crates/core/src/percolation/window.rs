//! Edge configurations of a finite segment of the ladder `Z x {0,1}`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{LadderError, Result};

/// A ladder vertex `(x, y)` with `y` in `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vertex {
    pub x: i64,
    pub y: u8,
}

impl Vertex {
    pub const ORIGIN: Vertex = Vertex { x: 0, y: 0 };

    pub fn new(x: i64, y: u8) -> Self {
        debug_assert!(y < 2);
        Vertex { x, y }
    }

    pub fn partner(self) -> Vertex {
        Vertex {
            x: self.x,
            y: 1 - self.y,
        }
    }
}

/// Bit positions inside a column's 3-bit group.
pub const BIT_VERTICAL: u8 = 1;
pub const BIT_H_BOTTOM: u8 = 2;
pub const BIT_H_TOP: u8 = 4;

const COLS_PER_WORD: usize = 21;

/// Horizontal bit for row `y`.
#[inline]
pub fn h_bit(y: u8) -> u8 {
    if y == 0 {
        BIT_H_BOTTOM
    } else {
        BIT_H_TOP
    }
}

/// Bit-exact edge configuration on columns `x_min..=x_max`.
///
/// Column `x` owns three edges: the rung `<(x,0),(x,1)>` and the two
/// horizontals `<(x,r),(x+1,r)>`. Groups are packed 21 to a `u64`, column-major.
/// The horizontals of the last column do not exist and are always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    x_min: i64,
    x_max: i64,
    words: Vec<u64>,
    p: f64,
    conditioned: bool,
}

impl WindowConfig {
    /// All edges closed.
    pub fn closed(x_min: i64, x_max: i64, p: f64) -> Result<Self> {
        if x_min >= x_max {
            return Err(LadderError::Parameter(format!("empty window [{x_min}, {x_max}]")));
        }
        let ncols = (x_max - x_min + 1) as usize;
        Ok(WindowConfig {
            x_min,
            x_max,
            words: vec![0; ncols.div_ceil(COLS_PER_WORD)],
            p,
            conditioned: false,
        })
    }

    /// Build from per-column 3-bit groups, left to right.
    pub fn from_columns(x_min: i64, columns: &[u8], p: f64, conditioned: bool) -> Result<Self> {
        if columns.len() < 2 {
            return Err(LadderError::Parameter("need at least two columns".into()));
        }
        let x_max = x_min + columns.len() as i64 - 1;
        let mut w = Self::closed(x_min, x_max, p)?;
        for (i, &c) in columns.iter().enumerate() {
            w.set_column(x_min + i as i64, c);
        }
        w.conditioned = conditioned;
        Ok(w)
    }

    pub fn x_min(&self) -> i64 {
        self.x_min
    }
    pub fn x_max(&self) -> i64 {
        self.x_max
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn conditioned(&self) -> bool {
        self.conditioned
    }
    pub fn set_conditioned(&mut self, c: bool) {
        self.conditioned = c;
    }
    pub fn set_p(&mut self, p: f64) {
        self.p = p;
    }
    pub fn ncols(&self) -> usize {
        (self.x_max - self.x_min + 1) as usize
    }
    pub fn nvertices(&self) -> usize {
        2 * self.ncols()
    }
    pub fn contains_x(&self, x: i64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Number of edges in the window.
    pub fn edge_count(&self) -> usize {
        3 * self.ncols() - 2
    }

    /// The 3-bit group of column `x`.
    #[inline]
    pub fn column(&self, x: i64) -> u8 {
        let c = (x - self.x_min) as usize;
        ((self.words[c / COLS_PER_WORD] >> (3 * (c % COLS_PER_WORD))) & 7) as u8
    }

    /// Column group, or 0 outside the window.
    #[inline]
    pub fn column_or_closed(&self, x: i64) -> u8 {
        if self.contains_x(x) {
            self.column(x)
        } else {
            0
        }
    }

    pub fn set_column(&mut self, x: i64, bits: u8) {
        assert!(self.contains_x(x), "column {x} outside window");
        let bits = if x == self.x_max { bits & BIT_VERTICAL } else { bits & 7 };
        let c = (x - self.x_min) as usize;
        let shift = 3 * (c % COLS_PER_WORD);
        let w = &mut self.words[c / COLS_PER_WORD];
        *w = (*w & !(7u64 << shift)) | (u64::from(bits) << shift);
    }

    pub fn vertical(&self, x: i64) -> bool {
        self.column_or_closed(x) & BIT_VERTICAL != 0
    }

    /// Horizontal edge `<(x,y),(x+1,y)>`.
    pub fn horizontal(&self, x: i64, y: u8) -> bool {
        self.column_or_closed(x) & h_bit(y) != 0
    }

    pub fn set_vertical(&mut self, x: i64, open: bool) {
        let c = self.column(x);
        self.set_column(x, if open { c | BIT_VERTICAL } else { c & !BIT_VERTICAL });
    }

    pub fn set_horizontal(&mut self, x: i64, y: u8, open: bool) {
        let c = self.column(x);
        let b = h_bit(y);
        self.set_column(x, if open { c | b } else { c & !b });
    }

    /// Dense vertex index `2 (x - x_min) + y`.
    #[inline]
    pub fn index(&self, v: Vertex) -> usize {
        2 * (v.x - self.x_min) as usize + v.y as usize
    }

    #[inline]
    pub fn vertex(&self, idx: usize) -> Vertex {
        Vertex {
            x: self.x_min + (idx / 2) as i64,
            y: (idx % 2) as u8,
        }
    }

    /// Open-edge neighbours of `v` inside the window.
    pub fn open_neighbors(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        let right = self.horizontal(v.x, v.y).then(|| Vertex::new(v.x + 1, v.y));
        let left = (v.x > self.x_min && self.horizontal(v.x - 1, v.y)).then(|| Vertex::new(v.x - 1, v.y));
        let up = self.vertical(v.x).then(|| v.partner());
        right.into_iter().chain(left).chain(up)
    }

    pub fn is_open(&self, a: Vertex, b: Vertex) -> bool {
        if a.x == b.x && a.y != b.y {
            self.vertical(a.x)
        } else if a.y == b.y && (a.x - b.x).abs() == 1 {
            self.horizontal(a.x.min(b.x), a.y)
        } else {
            false
        }
    }

    pub fn open_edge_count(&self) -> usize {
        (self.x_min..=self.x_max)
            .map(|x| self.column(x).count_ones() as usize)
            .sum()
    }

    /// Pack the edge bits of a small window into an integer, column-major
    /// `(vertical, h_bottom, h_top)` skipping the missing horizontals of the
    /// last column. Used as the cell index by enumeration oracles.
    pub fn code(&self) -> u64 {
        assert!(self.edge_count() <= 64);
        let mut code = 0u64;
        let mut bit = 0;
        for x in self.x_min..=self.x_max {
            let c = self.column(x);
            let nbits = if x == self.x_max { 1 } else { 3 };
            for k in 0..nbits {
                if c & (1 << k) != 0 {
                    code |= 1 << bit;
                }
                bit += 1;
            }
        }
        code
    }

    /// Inverse of [`WindowConfig::code`].
    pub fn from_code(x_min: i64, x_max: i64, p: f64, code: u64) -> Result<Self> {
        let mut w = Self::closed(x_min, x_max, p)?;
        let mut bit = 0;
        for x in x_min..=x_max {
            let nbits = if x == x_max { 1 } else { 3 };
            let mut c = 0u8;
            for k in 0..nbits {
                if code & (1 << bit) != 0 {
                    c |= 1 << k;
                }
                bit += 1;
            }
            w.set_column(x, c);
        }
        Ok(w)
    }

    /// Copy of columns `a..=b` (the last column keeps only its rung).
    pub fn slice(&self, a: i64, b: i64) -> Result<Self> {
        if a < self.x_min || b > self.x_max {
            return Err(LadderError::Parameter(format!(
                "slice [{a}, {b}] outside window [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        let cols: Vec<u8> = (a..=b).map(|x| self.column(x)).collect();
        Self::from_columns(a, &cols, self.p, self.conditioned)
    }

    /// The configuration seen from `u`: `theta^u`, relabelling `v -> v - u` in
    /// the group `Z x Z_2`. For `y(u) = 1` the two rows swap.
    pub fn shifted(&self, u: Vertex) -> Self {
        let mut w = self.clone();
        w.x_min -= u.x;
        w.x_max -= u.x;
        if u.y == 1 {
            for x in w.x_min..=w.x_max {
                let c = w.column(x);
                let swapped = (c & BIT_VERTICAL)
                    | if c & BIT_H_BOTTOM != 0 { BIT_H_TOP } else { 0 }
                    | if c & BIT_H_TOP != 0 { BIT_H_BOTTOM } else { 0 };
                w.set_column(x, swapped);
            }
        }
        w
    }

    /// Serialize to the `ladder-window v1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "ladder-window v1 {} {} {} {}",
            self.x_min,
            self.x_max,
            self.p,
            u8::from(self.conditioned)
        );
        for x in self.x_min..=self.x_max {
            let c = self.column(x);
            let _ = writeln!(s, "{} {} {} {}", x, c & 1, (c >> 1) & 1, (c >> 2) & 1);
        }
        s
    }

    /// Parse the `ladder-window v1` text format.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or(LadderError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let parse_err = |line: usize, msg: &str| LadderError::Parse {
            line,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 6 || f[0] != "ladder-window" || f[1] != "v1" {
            return Err(parse_err(hl, "expected `ladder-window v1 x_min x_max p conditioned`"));
        }
        let x_min: i64 = f[2].parse().map_err(|_| parse_err(hl, "bad x_min"))?;
        let x_max: i64 = f[3].parse().map_err(|_| parse_err(hl, "bad x_max"))?;
        let p: f64 = f[4].parse().map_err(|_| parse_err(hl, "bad p"))?;
        let conditioned = match f[5] {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(hl, "conditioned must be 0 or 1")),
        };
        let mut w = Self::closed(x_min, x_max, p).map_err(|e| parse_err(hl, &e.to_string()))?;
        w.conditioned = conditioned;
        let mut expected = x_min;
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(parse_err(ln, "expected `x v hb ht`"));
            }
            let x: i64 = f[0].parse().map_err(|_| parse_err(ln, "bad x"))?;
            if x != expected {
                return Err(parse_err(ln, &format!("expected column {expected}, got {x}")));
            }
            let mut c = 0u8;
            for k in 0..3 {
                match f[k + 1] {
                    "0" => {}
                    "1" => c |= 1 << k,
                    _ => return Err(parse_err(ln, "edge bits must be 0 or 1")),
                }
            }
            if x == x_max && c & !BIT_VERTICAL != 0 {
                return Err(parse_err(ln, "last column cannot have horizontal edges"));
            }
            w.set_column(x, c);
            expected += 1;
        }
        if expected != x_max + 1 {
            return Err(parse_err(
                text.lines().count(),
                &format!("expected {} columns, got {}", w.ncols(), expected - x_min),
            ));
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packing_spans_word_boundaries() {
        let cols: Vec<u8> = (0..50).map(|i| (i * 5 % 8) as u8).collect();
        let w = WindowConfig::from_columns(-7, &cols, 0.5, false).unwrap();
        for (i, &c) in cols.iter().enumerate() {
            let x = -7 + i as i64;
            let expect = if i == cols.len() - 1 { c & 1 } else { c };
            assert_eq!(w.column(x), expect);
        }
        assert_eq!(w.edge_count(), 148);
    }

    #[test]
    fn neighbors_follow_open_edges() {
        let w = WindowConfig::from_columns(0, &[0b011, 0b101, 0b000], 0.5, false).unwrap();
        let n: Vec<Vertex> = w.open_neighbors(Vertex::new(1, 0)).collect();
        assert_eq!(n, vec![Vertex::new(0, 0), Vertex::new(1, 1)]);
        let n: Vec<Vertex> = w.open_neighbors(Vertex::new(1, 1)).collect();
        assert_eq!(n, vec![Vertex::new(2, 1), Vertex::new(1, 0)]);
        assert!(w.is_open(Vertex::new(0, 0), Vertex::new(0, 1)));
        assert!(!w.is_open(Vertex::new(0, 1), Vertex::new(1, 1)));
    }

    #[test]
    fn text_format_rejects_bad_input() {
        let bad = "ladder-window v1 0 2 0.5 0\n0 1 0 0\n1 0 2 0\n2 0 0 0\n";
        match WindowConfig::from_text(bad) {
            Err(LadderError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "ladder-window v1 0 2 0.5 0\n0 1 0 0\n";
        assert!(WindowConfig::from_text(short).is_err());
        let horiz_at_end = "ladder-window v1 0 1 0.5 0\n0 1 1 1\n1 0 1 0\n";
        assert!(WindowConfig::from_text(horiz_at_end).is_err());
    }

    #[test]
    fn shift_by_top_vertex_swaps_rows() {
        let w = WindowConfig::from_columns(0, &[BIT_H_BOTTOM, BIT_VERTICAL, 0], 0.5, true).unwrap();
        let s = w.shifted(Vertex::new(1, 1));
        assert_eq!(s.x_min(), -1);
        assert!(s.horizontal(-1, 1));
        assert!(!s.horizontal(-1, 0));
        assert!(s.vertical(0));
    }

    proptest! {
        #[test]
        fn text_and_code_roundtrip(x_min in -20i64..20, cols in proptest::collection::vec(0u8..8, 2..20), cond: bool) {
            let w = WindowConfig::from_columns(x_min, &cols, 0.3, cond).unwrap();
            let back = WindowConfig::from_text(&w.to_text()).unwrap();
            prop_assert_eq!(&back, &w);
            let c = WindowConfig::from_code(w.x_min(), w.x_max(), 0.3, w.code()).unwrap();
            prop_assert_eq!(c.code(), w.code());
            for x in w.x_min()..=w.x_max() {
                prop_assert_eq!(c.column(x), w.column(x));
            }
        }
    }
}
