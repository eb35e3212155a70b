use serde::{Deserialize, Serialize};

/// Which branches of a layer a mask scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// Every branch shares the mask.
    Layer,
    /// Only the branch with this adjacency power.
    Branch(usize),
}

/// Per-input-channel coefficients of one layer. After clipping, retained
/// channels keep their learned coefficient and the rest are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub beta: Vec<f32>,
    pub clipped: bool,
    pub scope: MaskScope,
}

impl PruneMask {
    pub fn identity(channels: usize, scope: MaskScope) -> Self {
        Self {
            beta: vec![1.0; channels],
            clipped: true,
            scope,
        }
    }

    pub fn from_kept(channels: usize, kept: &[usize], scope: MaskScope) -> Self {
        let mut beta = vec![0.0; channels];
        for &c in kept {
            beta[c] = 1.0;
        }
        Self {
            beta,
            clipped: true,
            scope,
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn retained(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn kept_channels(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&c| self.beta[c] != 0.0).collect()
    }

    pub fn applies_to(&self, power: usize) -> bool {
        match self.scope {
            MaskScope::Layer => true,
            MaskScope::Branch(k) => k == power,
        }
    }
}

/// Fraction of a layer's input channels to keep, and which branches the
/// mask acts on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneBudget {
    pub eta: f64,
    pub scope: MaskScope,
}

impl PruneBudget {
    pub fn new(eta: f64, scope: MaskScope) -> crate::Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(crate::Error::Config(format!("eta {eta} must lie in (0, 1]")));
        }
        Ok(Self { eta, scope })
    }

    pub fn whole(eta: f64) -> crate::Result<Self> {
        Self::new(eta, MaskScope::Layer)
    }

    /// `⌈η·c⌉`, clamped to `1..=c`.
    pub fn keep(&self, c: usize) -> usize {
        ((self.eta * c as f64 - 1e-9).ceil() as usize).clamp(1.min(c), c)
    }
}
