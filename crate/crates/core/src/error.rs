use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("frame id {0:#04x} is outside the 6-bit range")]
    IdOutOfRange(u8),

    #[error("response carries {0} data bytes, expected 1 to 8")]
    DataLength(usize),

    #[error("break field of {0} bits is shorter than the 13-bit minimum")]
    BreakTooShort(u32),

    #[error("bitstream holds {available} cells, {needed} required")]
    BitstreamTooShort { needed: usize, available: usize },

    #[error("framing error in byte {byte_index}")]
    Framing { byte_index: usize },

    #[error("checksum mismatch in byte {byte_index}: computed {computed:#04x}, received {received:#04x}")]
    Checksum {
        byte_index: usize,
        computed: u8,
        received: u8,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("waveforms are not aligned: {0}")]
    Alignment(String),

    #[error("decode window [{start}, {end}) exceeds waveform of {len} samples")]
    Window { start: usize, end: usize, len: usize },

    #[error("invalid key: {0}")]
    Key(String),

    #[error("invalid topology: {0}")]
    Topology(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
