//! Time grids on `[0, T]`.

/// Strictly increasing sampling times starting at 0.
///
/// Grids are closed on the right at the horizon `T`. The degenerate
/// single-point grid `[0]` is allowed so that covariance assembly can
/// express the almost-sure zero at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    uniform_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    Empty,
    FirstPointNotZero(f64),
    NotIncreasing { index: usize },
    NonFinite { index: usize },
    InvalidHorizon(f64),
    ZeroSteps,
}

impl std::fmt::Display for GridError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridError::Empty => write!(f, "time grid must contain at least the origin"),
            GridError::FirstPointNotZero(v) => write!(f, "time grid must start at 0, got {v}"),
            GridError::NotIncreasing { index } => {
                write!(f, "time grid not strictly increasing at index {index}")
            }
            GridError::NonFinite { index } => {
                write!(f, "time grid has a non-finite point at index {index}")
            }
            GridError::InvalidHorizon(v) => write!(f, "horizon must be positive, got {v}"),
            GridError::ZeroSteps => write!(f, "uniform grid needs at least one step"),
        }
    }
}

impl std::error::Error for GridError {}

impl TimeGrid {
    /// Uniform grid with `steps` increments on `[0, horizon]`,
    /// i.e. `steps + 1` points.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::InvalidHorizon(horizon));
        }
        if steps == 0 {
            return Err(GridError::ZeroSteps);
        }
        let h = horizon / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        // Pin the right endpoint so the horizon is hit exactly.
        points[steps] = horizon;
        Ok(TimeGrid { points, uniform_step: Some(h) })
    }

    /// Grid from explicit points; must start at 0 and be strictly
    /// increasing.
    pub fn from_points(points: Vec<f64>) -> Result<Self, GridError> {
        if points.is_empty() {
            return Err(GridError::Empty);
        }
        if points[0] != 0.0 {
            return Err(GridError::FirstPointNotZero(points[0]));
        }
        for (i, w) in points.windows(2).enumerate() {
            if !w[1].is_finite() {
                return Err(GridError::NonFinite { index: i + 1 });
            }
            if w[1] <= w[0] {
                return Err(GridError::NotIncreasing { index: i + 1 });
            }
        }
        let uniform_step = detect_uniform(&points);
        Ok(TimeGrid { points, uniform_step })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of increments.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform_step.is_some()
    }

    /// Step size when the grid is uniform.
    pub fn step(&self) -> Option<f64> {
        self.uniform_step
    }

    /// Index of a grid point equal to `t` up to a relative tolerance of
    /// `1e-9` of the horizon; `None` when `t` is off-grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon().max(1.0);
        match self.points.binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(i) => Some(i),
            Err(i) => {
                if i < self.points.len() && (self.points[i] - t).abs() <= tol {
                    Some(i)
                } else if i > 0 && (self.points[i - 1] - t).abs() <= tol {
                    Some(i - 1)
                } else {
                    None
                }
            }
        }
    }

    /// Every `stride`-th point (the horizon must survive, so `stride`
    /// has to divide the number of increments).
    pub fn subsample(&self, stride: usize) -> Option<TimeGrid> {
        if stride == 0 || self.steps() % stride != 0 {
            return None;
        }
        let points: Vec<f64> = self.points.iter().copied().step_by(stride).collect();
        let uniform_step = detect_uniform(&points);
        Some(TimeGrid { points, uniform_step })
    }
}

fn detect_uniform(points: &[f64]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let h = points[1] - points[0];
    let tol = 1e-12 * points.last().unwrap().max(1.0);
    for w in points.windows(2) {
        if ((w[1] - w[0]) - h).abs() > tol {
            return None;
        }
    }
    Some(h)
}
