use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid period matrix: {0}")]
    InvalidPeriodMatrix(String),

    #[error("theta truncation needs radius {required}, cap is {max_radius}")]
    TruncationOverflow { required: usize, max_radius: usize },

    #[error("argument lies near the theta divisor (|theta| = {abs:e}, scale = {scale:e})")]
    ThetaDivisor { abs: f64, scale: f64 },

    #[error("the marked points P0 and P_inf are not representable as spectral points")]
    MarkedPoint,

    #[error("coincident spectral points k = {re} + {im}i")]
    CoincidentSpectrum { re: f64, im: f64 },

    #[error("solution is singular at (x, t) = ({x}, {t}): |det| = {abs_det:e}")]
    SolutionSingular { x: f64, t: f64, abs_det: f64 },

    #[error("contour quadrature did not converge (change on doubling = {change:e})")]
    QuadratureNotConverged { change: f64 },

    #[error("degenerate soliton trajectory: kappa_0 difference vanishes")]
    DegenerateTrajectory,

    #[error("lab-frame velocity hits the light-speed pole")]
    LightSpeedDegenerate,

    #[error("trajectory tracking failed: {0}")]
    TrackingFailed(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported background: {0}")]
    UnsupportedBackground(String),
}
