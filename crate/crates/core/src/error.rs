use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The tensor being quantized has no nonzero element, so no scale can be derived from it.
    #[error("degenerate quantization range: max |r| is zero")]
    DegenerateRange,

    #[error("bit width {0} outside the supported range 2..=16")]
    InvalidBitWidth(u32),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("groups {groups} do not divide channels ({in_channels} in, {out_channels} out)")]
    IndivisibleGroups {
        in_channels: usize,
        out_channels: usize,
        groups: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("accumulator scale mismatch: 2^{left} vs 2^{right}")]
    ScaleMismatch { left: i32, right: i32 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("on-chip capacity exceeded: {required} bits requested, {capacity} available")]
    CapacityExceeded { required: u64, capacity: u64 },

    #[error("accumulator bound {bound} for layer {layer} does not fit in 32 bits")]
    AccumulatorOverflow { layer: String, bound: i128 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("label {label} out of range in record {record}")]
    BadLabel { record: usize, label: u8 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
