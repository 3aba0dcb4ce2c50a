use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("measures live on different domains")]
    DomainMismatch,

    #[error("invalid cost function: {0}")]
    InvalidCost(String),

    #[error("negative distance {0} passed to cost function")]
    NegativeDistance(f64),

    #[error("empty plan list")]
    EmptyPlanList,

    #[error("infeasible semicoupling: source mass {source_mass} < target mass {target_mass}")]
    Infeasible { source_mass: f64, target_mass: f64 },

    #[error("instance too large for brute force: {atoms} atoms (limit {limit})")]
    InstanceTooLarge { atoms: usize, limit: usize },

    #[error("solver did not converge after {0} pivots")]
    SolverStalled(usize),

    #[error("measures are not mutually singular ({0} shared locations)")]
    NotMutuallySingular(usize),

    #[error("intensity mismatch: {0} vs {1}")]
    IntensityMismatch(f64, f64),

    #[error("allocation is not invertible: {0}")]
    NotInvertible(String),

    #[error("displacement coordinate {0} outside the encodable range")]
    DisplacementOverflow(f64),

    #[error("mass mismatch beyond 1%: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
