use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-stochasticity tolerance applied at every construction.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Dense transition tensor `P[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        Kernel::new(r.n_states, r.n_actions, r.probs)
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            n_states: k.n_states,
            n_actions: k.n_actions,
            probs: k.probs,
        }
    }
}

impl Kernel {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("kernel needs at least one state and one action"));
        }
        let want = n_states * n_actions * n_states;
        if probs.len() != want {
            return Err(Error::Shape(format!(
                "kernel has {} entries, expected {want}",
                probs.len()
            )));
        }
        let k = Kernel {
            n_states,
            n_actions,
            probs,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                for t in 0..n_states {
                    probs.push(f(s, a, t));
                }
            }
        }
        Kernel::new(n_states, n_actions, probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        Kernel::from_fn(n_states, n_actions, |_, _, _| 1.0 / n_states as f64)
    }

    /// Check non-negativity and unit row sums.
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return Err(Error::invalid(format!(
                        "kernel row ({s},{a}) has invalid entry {p}"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::invalid(format!(
                        "kernel row ({s},{a}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Kernel) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// Most likely successor of `(s, a)`; lowest index wins ties.
    pub fn mode_successor(&self, s: usize, a: usize) -> usize {
        let row = self.row(s, a);
        let mut best = 0;
        for (t, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = t;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = Kernel::new(2, 1, vec![0.5, 0.4, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = Kernel::new(2, 1, vec![1.5, -0.5, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            Kernel::new(2, 2, vec![1.0; 4]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn serde_round_trip_validates() {
        let k = Kernel::uniform(3, 2).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        let back: Kernel = serde_json::from_str(&json).unwrap();
        assert_eq!(k, back);
        let bad = r#"{"n_states":1,"n_actions":1,"probs":[0.5]}"#;
        assert!(serde_json::from_str::<Kernel>(bad).is_err());
    }
}
