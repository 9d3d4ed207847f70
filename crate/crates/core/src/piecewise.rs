//! Nondecreasing piecewise-linear functions `F(x) = ∫₀^x r` with piecewise-constant
//! rate `r ≥ 0`, and their generalized inverse `min{x : F(x) = y}`.

/// `breaks[i]` is the left end of piece `i`; the last piece ends at `end`.
#[derive(Clone, Debug)]
pub struct MonotoneIntegral {
    breaks: Vec<f64>,
    rates: Vec<f64>,
    values: Vec<f64>,
    end: f64,
}

impl MonotoneIntegral {
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>, end: f64) -> Self {
        debug_assert_eq!(breaks.len(), rates.len());
        let mut values = Vec::with_capacity(breaks.len() + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for i in 0..breaks.len() {
            let right = if i + 1 < breaks.len() { breaks[i + 1] } else { end };
            acc += rates[i] * (right - breaks[i]);
            values.push(acc);
        }
        MonotoneIntegral { breaks, rates, values, end }
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    fn piece(&self, x: f64) -> usize {
        self.breaks.partition_point(|&b| b <= x).saturating_sub(1)
    }

    /// `F(x)`; beyond `end` the last rate continues.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.piece(x);
        self.values[i] + self.rates[i] * (x - self.breaks[i])
    }

    /// `min{x ∈ [0, end] : F(x) = y}`, or `None` if `y > F(end)`.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return Some(0.0);
        }
        if y > self.total() {
            return None;
        }
        // smallest piece whose right value reaches y
        let i = self.values[1..].partition_point(|&v| v < y);
        let i = i.min(self.breaks.len() - 1);
        let right = if i + 1 < self.breaks.len() { self.breaks[i + 1] } else { self.end };
        if self.rates[i] > 0.0 {
            let x = self.breaks[i] + (y - self.values[i]) / self.rates[i];
            Some(x.min(right))
        } else {
            Some(self.breaks[i])
        }
    }

    /// Inverse that continues the last rate past `end`.
    pub fn inverse_extended(&self, y: f64) -> Option<f64> {
        match self.inverse(y) {
            Some(x) => Some(x),
            None => {
                let r = *self.rates.last().unwrap();
                if r > 0.0 {
                    Some(self.end + (y - self.total()) / r)
                } else {
                    None
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_skips_flat_pieces() {
        // rate 0 on [0,5), 1 on [5, 10)
        let f = MonotoneIntegral::new(vec![0.0, 5.0], vec![0.0, 1.0], 10.0);
        assert_eq!(f.inverse(2.0), Some(7.0));
        assert_eq!(f.inverse(0.0), Some(0.0));
        assert_eq!(f.inverse(6.0), None);
        let g = MonotoneIntegral::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0], 4.0);
        assert_eq!(g.inverse(1.0), Some(1.0));
        assert_eq!(g.inverse(2.0), Some(2.5));
        assert_eq!(g.eval(1.5), 1.0);
    }
}
