//! Validated Hurst parameter.

/// Hurst parameter of the driving fractional Brownian motion.
///
/// Sampling accepts the full range `0 < H < 1`. The analysis operations
/// (fractional kernels, evolution systems, solvers) additionally require
/// `1/2 <= H < 1`; `H = 1/2` is permitted there only as the validation
/// boundary where everything collapses to the Brownian/Ito case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hurst(f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HurstError {
    /// Value outside the open interval (0, 1).
    OutOfRange(f64),
    /// Value below 1/2 passed to an operation that assumes long memory.
    BelowAnalysisRange(f64),
}

impl std::fmt::Display for HurstError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HurstError::OutOfRange(v) => {
                write!(f, "Hurst parameter must lie in (0, 1), got {v}")
            }
            HurstError::BelowAnalysisRange(v) => {
                write!(f, "operation requires 1/2 <= H < 1, got {v}")
            }
        }
    }
}

impl std::error::Error for HurstError {}

impl Hurst {
    /// Hurst parameter for sampling, `0 < value < 1`.
    pub fn new(value: f64) -> Result<Self, HurstError> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Hurst(value))
        } else {
            Err(HurstError::OutOfRange(value))
        }
    }

    /// Hurst parameter for analysis operations, `1/2 <= value < 1`.
    pub fn analysis(value: f64) -> Result<Self, HurstError> {
        let h = Self::new(value)?;
        h.require_analysis()?;
        Ok(h)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The exponent `2H` that appears in every variance formula.
    pub fn two_h(self) -> f64 {
        2.0 * self.0
    }

    pub fn is_analysis(self) -> bool {
        self.0 >= 0.5
    }

    /// Exactly the Brownian boundary.
    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }

    pub fn require_analysis(self) -> Result<(), HurstError> {
        if self.is_analysis() {
            Ok(())
        } else {
            Err(HurstError::BelowAnalysisRange(self.0))
        }
    }
}
