use thiserror::Error;

/// Every failure the numerical pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("near-singular shift {shift:.6e}: pivot {pivot:.3e} at row {row} (relative threshold {threshold:.1e})")]
    NearSingular {
        shift: f64,
        pivot: f64,
        row: usize,
        threshold: f64,
    },

    #[error("eigensolver failed to converge: {0}")]
    NotConverged(String),

    #[error("positivity violated: K eigenvalue {value:.3e} below -{tol:.1e} times the largest")]
    PositivityViolated { value: f64, tol: f64 },

    #[error("kappa monotonicity violated for m={m} between mu={mu_lo:.12e} and mu={mu_hi:.12e} (drop {drop:.3e})")]
    MonotonicityViolated {
        m: usize,
        mu_lo: f64,
        mu_hi: f64,
        drop: f64,
    },

    #[error("linear dependence in the constraint functionals: rank {rank} < n = {n} (discrete unique-continuation failure)")]
    LinearDependence { rank: usize, n: usize },

    #[error("near-constant band edge on band {band} ({samples} samples within tolerance); non-degeneracy at risk")]
    FlatBandEdge { band: usize, samples: usize },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
