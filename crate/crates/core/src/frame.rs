//! LIN 2.x data-link codec.
//!
//! Frames are serialized to bit cells the way a UART emits them: one start
//! cell (dominant), eight data cells LSB first, one stop cell (recessive).
//! A cell value of `true` is recessive (logic 1), `false` is dominant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYNC_BYTE: u8 = 0x55;
pub const MIN_BREAK_BITS: u32 = 13;
pub const MAX_DATA_LEN: usize = 8;
/// Cells per UART character (8N1).
pub const CELLS_PER_BYTE: usize = 10;

/// 6-bit LIN frame identifier.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FrameId(u8);

impl FrameId {
    pub fn new(id: u8) -> Result<Self> {
        if id > 0x3F {
            return Err(Error::IdOutOfRange(id));
        }
        Ok(FrameId(id))
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    /// Master request / slave response diagnostic frames (0x3C, 0x3D) and the
    /// reserved ids above them always use the classic checksum.
    pub const fn is_diagnostic(self) -> bool {
        self.0 >= 0x3C
    }
}

impl TryFrom<u8> for FrameId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        FrameId::new(v)
    }
}

impl From<FrameId> for u8 {
    fn from(id: FrameId) -> u8 {
        id.0
    }
}

/// Protected identifier: the frame id in bits 0..5, parity P0 in bit 6 and
/// P1 in bit 7.
///
/// P0 = ID0 ^ ID1 ^ ID2 ^ ID4
/// P1 = !(ID1 ^ ID3 ^ ID4 ^ ID5)
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(u8);

impl Pid {
    pub const fn from_id(id: FrameId) -> Pid {
        let id = id.0;
        let p0 = (id & 0b01_0111).count_ones() as u8 & 1;
        let p1 = ((id & 0b11_1010).count_ones() as u8 + 1) & 1;
        Pid(id | (p0 << 6) | (p1 << 7))
    }

    /// Accepts a received PID byte only if its parity bits are consistent.
    pub fn from_raw(raw: u8) -> Option<Pid> {
        let pid = Pid::from_id(FrameId(raw & 0x3F));
        (pid.0 == raw).then_some(pid)
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub const fn id(self) -> FrameId {
        FrameId(self.0 & 0x3F)
    }
}

pub fn compute_pid(id: u8) -> Result<Pid> {
    Ok(Pid::from_id(FrameId::new(id)?))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecksumModel {
    Classic,
    Enhanced,
}

impl ChecksumModel {
    /// Enhanced for ordinary frames, classic for the diagnostic ids.
    pub fn default_for(id: FrameId) -> Self {
        if id.is_diagnostic() {
            ChecksumModel::Classic
        } else {
            ChecksumModel::Enhanced
        }
    }
}

/// Inverted eight-bit sum with carry. The enhanced model seeds the sum with
/// the PID.
pub fn checksum(data: &[u8], model: ChecksumModel, pid: Pid) -> Result<u8> {
    if data.is_empty() || data.len() > MAX_DATA_LEN {
        return Err(Error::DataLength(data.len()));
    }
    let seed = match model {
        ChecksumModel::Classic => 0u16,
        ChecksumModel::Enhanced => u16::from(pid.0),
    };
    let sum = data.iter().fold(seed, |acc, &b| {
        let s = acc + u16::from(b);
        if s > 0xFF {
            s - 0xFF
        } else {
            s
        }
    });
    Ok(!(sum as u8))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderFrame {
    pub break_bits: u32,
    pub delimiter_bits: u32,
    pub pid: Pid,
}

impl HeaderFrame {
    pub fn new(pid: Pid) -> Self {
        HeaderFrame {
            break_bits: MIN_BREAK_BITS,
            delimiter_bits: 1,
            pid,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.break_bits as usize + self.delimiter_bits as usize + 2 * CELLS_PER_BYTE
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseFrame {
    data: Vec<u8>,
    checksum: u8,
    model: ChecksumModel,
}

impl ResponseFrame {
    /// Builds a frame whose checksum is computed for `pid` under `model`.
    pub fn new(data: &[u8], model: ChecksumModel, pid: Pid) -> Result<Self> {
        let checksum = checksum(data, model, pid)?;
        Ok(ResponseFrame {
            data: data.to_vec(),
            checksum,
            model,
        })
    }

    /// Builds a frame with an arbitrary checksum byte, e.g. for fault injection.
    pub fn with_checksum(data: &[u8], model: ChecksumModel, checksum: u8) -> Result<Self> {
        if data.is_empty() || data.len() > MAX_DATA_LEN {
            return Err(Error::DataLength(data.len()));
        }
        Ok(ResponseFrame {
            data: data.to_vec(),
            checksum,
            model,
        })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn checksum(&self) -> u8 {
        self.checksum
    }

    pub fn model(&self) -> ChecksumModel {
        self.model
    }

    pub fn verify(&self, pid: Pid) -> bool {
        checksum(&self.data, self.model, pid).map_or(false, |c| c == self.checksum)
    }
}

/// Byte spacing on the wire. `inter_byte_space` recessive cells are inserted
/// between consecutive characters of a response.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub inter_byte_space: usize,
}

impl FrameLayout {
    pub fn response_cells(&self, data_len: usize) -> usize {
        let bytes = data_len + 1;
        bytes * CELLS_PER_BYTE + (bytes - 1) * self.inter_byte_space
    }

    /// Index of the first cell (the start bit) of character `byte_index`.
    pub fn byte_offset(&self, byte_index: usize) -> usize {
        byte_index * (CELLS_PER_BYTE + self.inter_byte_space)
    }
}

/// Sequence of LIN bit cells, `true` = recessive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Bitstream {
    cells: Vec<bool>,
}

impl Bitstream {
    pub fn new() -> Self {
        Self::default()
    }

    /// From 0/1 cell values; any non-zero value is recessive.
    pub fn from_cells(cells: &[u8]) -> Self {
        Bitstream {
            cells: cells.iter().map(|&c| c != 0).collect(),
        }
    }

    pub fn from_levels(cells: Vec<bool>) -> Self {
        Bitstream { cells }
    }

    pub fn push(&mut self, recessive: bool) {
        self.cells.push(recessive);
    }

    pub fn push_repeat(&mut self, recessive: bool, count: usize) {
        self.cells.extend(std::iter::repeat(recessive).take(count));
    }

    pub fn push_byte(&mut self, byte: u8) {
        self.cells.push(false);
        for i in 0..8 {
            self.cells.push((byte >> i) & 1 == 1);
        }
        self.cells.push(true);
    }

    pub fn extend(&mut self, other: &Bitstream) {
        self.cells.extend_from_slice(&other.cells);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, idx: usize) -> Option<bool> {
        self.cells.get(idx).copied()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [bool] {
        &mut self.cells
    }

    pub fn to_cells(&self) -> Vec<u8> {
        self.cells.iter().map(|&c| u8::from(c)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.cells.iter().copied()
    }
}

impl FromIterator<bool> for Bitstream {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Bitstream {
            cells: iter.into_iter().collect(),
        }
    }
}

pub fn serialize_response(frame: &ResponseFrame) -> Bitstream {
    serialize_response_with(frame, FrameLayout::default())
}

pub fn serialize_response_with(frame: &ResponseFrame, layout: FrameLayout) -> Bitstream {
    let mut bits = Bitstream::new();
    let bytes = frame.data.iter().copied().chain(std::iter::once(frame.checksum));
    for (i, byte) in bytes.enumerate() {
        if i > 0 {
            bits.push_repeat(true, layout.inter_byte_space);
        }
        bits.push_byte(byte);
    }
    bits
}

pub fn serialize_header(header: &HeaderFrame) -> Result<Bitstream> {
    if header.break_bits < MIN_BREAK_BITS {
        return Err(Error::BreakTooShort(header.break_bits));
    }
    if header.delimiter_bits == 0 {
        return Err(Error::config("break delimiter needs at least one recessive cell"));
    }
    let mut bits = Bitstream::new();
    bits.push_repeat(false, header.break_bits as usize);
    bits.push_repeat(true, header.delimiter_bits as usize);
    bits.push_byte(SYNC_BYTE);
    bits.push_byte(header.pid.0);
    Ok(bits)
}

/// Raw UART character extraction. Returns the bytes regardless of framing,
/// plus the index of the first character whose start or stop cell is wrong.
pub fn decode_characters(bits: &Bitstream, count: usize, layout: FrameLayout) -> Result<(Vec<u8>, Option<usize>)> {
    let needed = if count == 0 {
        0
    } else {
        layout.byte_offset(count - 1) + CELLS_PER_BYTE
    };
    if bits.len() < needed {
        return Err(Error::BitstreamTooShort {
            needed,
            available: bits.len(),
        });
    }
    let mut bytes = Vec::with_capacity(count);
    let mut framing = None;
    for i in 0..count {
        let cells = &bits.cells[layout.byte_offset(i)..layout.byte_offset(i) + CELLS_PER_BYTE];
        if (cells[0] || !cells[9]) && framing.is_none() {
            framing = Some(i);
        }
        let byte = cells[1..9]
            .iter()
            .enumerate()
            .fold(0u8, |acc, (bit, &c)| acc | (u8::from(c) << bit));
        bytes.push(byte);
    }
    Ok((bytes, framing))
}

pub fn parse_response(bits: &Bitstream, expected_len: usize, model: ChecksumModel, pid: Pid) -> Result<ResponseFrame> {
    parse_response_with(bits, expected_len, model, pid, FrameLayout::default())
}

pub fn parse_response_with(
    bits: &Bitstream,
    expected_len: usize,
    model: ChecksumModel,
    pid: Pid,
    layout: FrameLayout,
) -> Result<ResponseFrame> {
    if expected_len == 0 || expected_len > MAX_DATA_LEN {
        return Err(Error::DataLength(expected_len));
    }
    let (bytes, framing) = decode_characters(bits, expected_len + 1, layout)?;
    if let Some(byte_index) = framing {
        return Err(Error::Framing { byte_index });
    }
    let (data, received) = bytes.split_at(expected_len);
    let computed = checksum(data, model, pid)?;
    if computed != received[0] {
        return Err(Error::Checksum {
            byte_index: expected_len,
            computed,
            received: received[0],
        });
    }
    ResponseFrame::with_checksum(data, model, received[0])
}
