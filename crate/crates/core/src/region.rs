//! Products of per-test intervals.

use std::fmt;

use serde::Serialize;

use crate::report::fmt_sig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl Interval {
    /// `None` when the described set is empty, including `[a, a)`.
    pub fn new(lower: f64, upper: f64, lower_closed: bool, upper_closed: bool) -> Option<Self> {
        if lower > upper || (lower == upper && !(lower_closed && upper_closed)) {
            return None;
        }
        Some(Interval {
            lower,
            upper,
            lower_closed,
            upper_closed,
        })
    }

    pub fn closed(lower: f64, upper: f64) -> Option<Self> {
        Self::new(lower, upper, true, true)
    }

    pub fn half_open(lower: f64, upper: f64) -> Option<Self> {
        Self::new(lower, upper, true, false)
    }

    pub fn point(x: f64) -> Self {
        Interval {
            lower: x,
            upper: x,
            lower_closed: true,
            upper_closed: true,
        }
    }

    pub fn unit() -> Self {
        Interval {
            lower: 0.0,
            upper: 1.0,
            lower_closed: true,
            upper_closed: true,
        }
    }

    pub fn closure(&self) -> Self {
        Interval {
            lower_closed: true,
            upper_closed: true,
            ..*self
        }
    }

    pub fn is_point(&self) -> bool {
        self.lower == self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lower_closed { x >= self.lower } else { x > self.lower };
        let below = if self.upper_closed { x <= self.upper } else { x < self.upper };
        above && below
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let (lower, lower_closed) = if self.lower > other.lower {
            (self.lower, self.lower_closed)
        } else if other.lower > self.lower {
            (other.lower, other.lower_closed)
        } else {
            (self.lower, self.lower_closed && other.lower_closed)
        };
        let (upper, upper_closed) = if self.upper < other.upper {
            (self.upper, self.upper_closed)
        } else if other.upper < self.upper {
            (other.upper, other.upper_closed)
        } else {
            (self.upper, self.upper_closed && other.upper_closed)
        };
        Interval::new(lower, upper, lower_closed, upper_closed)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_point() {
            return write!(f, "{{{}}}", fmt_sig(self.lower));
        }
        write!(
            f,
            "{}{}, {}{}",
            if self.lower_closed { '[' } else { '(' },
            fmt_sig(self.lower),
            fmt_sig(self.upper),
            if self.upper_closed { ']' } else { ')' }
        )
    }
}

/// A product of `dims` intervals, or the empty set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    dims: usize,
    factors: Option<Vec<Interval>>,
}

impl Region {
    pub fn full(dims: usize) -> Self {
        Region {
            dims,
            factors: Some(vec![Interval::unit(); dims]),
        }
    }

    pub fn empty(dims: usize) -> Self {
        Region { dims, factors: None }
    }

    /// Empty as soon as any factor is empty.
    pub fn from_factors(factors: Vec<Option<Interval>>) -> Self {
        let dims = factors.len();
        Region {
            dims,
            factors: factors.into_iter().collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_none()
    }

    pub fn factors(&self) -> Option<&[Interval]> {
        self.factors.as_deref()
    }

    pub fn factor(&self, t: usize) -> Option<&Interval> {
        self.factors.as_ref().map(|f| &f[t])
    }

    pub fn closure(&self) -> Self {
        Region {
            dims: self.dims,
            factors: self
                .factors
                .as_ref()
                .map(|f| f.iter().map(Interval::closure).collect()),
        }
    }

    pub fn intersect(&self, other: &Region) -> Self {
        assert_eq!(self.dims, other.dims, "regions of different dimension");
        match (&self.factors, &other.factors) {
            (Some(a), Some(b)) => {
                Region::from_factors(a.iter().zip(b).map(|(x, y)| x.intersect(y)).collect())
            }
            _ => Region::empty(self.dims),
        }
    }

    /// Restricts coordinate `t` to `window`.
    pub fn slice(&self, t: usize, window: &Interval) -> Self {
        match &self.factors {
            None => self.clone(),
            Some(f) => {
                let mut out: Vec<Option<Interval>> = f.iter().copied().map(Some).collect();
                out[t] = f[t].intersect(window);
                Region::from_factors(out)
            }
        }
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        match &self.factors {
            None => 0.0,
            Some(f) => f.iter().map(Interval::length).product(),
        }
    }

    pub fn contains(&self, r: &[f64]) -> bool {
        match &self.factors {
            None => false,
            Some(f) => f.iter().zip(r).all(|(i, &x)| i.contains(x)),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.factors {
            None => f.write_str("∅"),
            Some(fs) if fs.is_empty() => f.write_str("Ω"),
            Some(fs) => {
                for (k, i) in fs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" x ")?;
                    }
                    write!(f, "{i}")?;
                }
                Ok(())
            }
        }
    }
}
