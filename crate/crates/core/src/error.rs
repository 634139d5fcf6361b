use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene too dense: placed {placed} of {requested} buildings after {attempts} attempts")]
    SceneTooDense {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("camera intrinsics are not invertible")]
    SingularIntrinsics,
    #[error("real vector of odd length {0} has no complex view")]
    OddLength(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("stale cache: forward ran at parameter version {cached}, model is at {current}")]
    StaleCache { cached: u64, current: u64 },
    #[error("ZF infeasible: {0}")]
    ZfInfeasible(String),
    #[error("power bisection failed: {0}")]
    Bisection(String),
    #[error("bundle is missing the {0} modality required by the sensor mask")]
    MissingModality(&'static str),
    #[error("every local model needs a pilot branch")]
    MissingPilotBranch,
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u32),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("unknown scheme '{0}'")]
    UnknownScheme(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
