use byteorder::{ByteOrder, LittleEndian};

use crate::error::{shape, Error, Result};
use crate::tensor::DenseTensor;

/// First header field of a frame file: the bytes `EVFRAMES`.
pub const FRAME_MAGIC: u64 = u64::from_le_bytes(*b"EVFRAMES");
pub const FRAME_VERSION: u64 = 1;
const HEADER_FIELDS: usize = 8;

/// Binned events, `(C = 2, T, H, W)`; channel 0 holds negative and
/// channel 1 positive polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    volume: DenseTensor,
    bin_size_us: u64,
    origin_us: u64,
}

impl FrameTensor {
    pub fn new(volume: DenseTensor, bin_size_us: u64, origin_us: u64) -> Result<Self> {
        volume.dims4()?;
        if bin_size_us == 0 {
            return Err(Error::InvalidParameter("bin size must be positive".into()));
        }
        Ok(Self { volume, bin_size_us, origin_us })
    }

    pub fn zeros(
        channels: usize,
        frames: usize,
        height: usize,
        width: usize,
        bin_size_us: u64,
        origin_us: u64,
    ) -> Result<Self> {
        Self::new(DenseTensor::volume_zeros(channels, frames, height, width), bin_size_us, origin_us)
    }

    pub fn volume(&self) -> &DenseTensor {
        &self.volume
    }

    pub fn volume_mut(&mut self) -> &mut DenseTensor {
        &mut self.volume
    }

    pub fn into_volume(self) -> DenseTensor {
        self.volume
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.volume.dims4().expect("frame tensors are rank 4")
    }

    pub fn frames(&self) -> usize {
        self.dims().1
    }

    pub fn bin_size_us(&self) -> u64 {
        self.bin_size_us
    }

    /// Bin size in seconds.
    pub fn bin_size(&self) -> f64 {
        self.bin_size_us as f64 / 1e6
    }

    pub fn origin_us(&self) -> u64 {
        self.origin_us
    }

    pub fn total(&self) -> f64 {
        self.volume.data().iter().sum()
    }

    /// `Σ value · Δτ` in value-seconds; invariant under rescaling.
    pub fn time_integral(&self) -> f64 {
        self.total() * self.bin_size()
    }
}

/// Serializes: eight little-endian `u64` header fields (magic, version,
/// C, T, H, W, bin size in µs, origin in µs) followed by `C·T·H·W`
/// little-endian `f64` values in `(C, T, H, W)` row-major order.
pub fn encode_frames(ft: &FrameTensor) -> Vec<u8> {
    let (c, t, h, w) = ft.dims();
    let header = [FRAME_MAGIC, FRAME_VERSION, c as u64, t as u64, h as u64, w as u64, ft.bin_size_us, ft.origin_us];
    let data = ft.volume.data();
    let mut out = vec![0u8; 8 * (HEADER_FIELDS + data.len())];
    LittleEndian::write_u64_into(&header, &mut out[..8 * HEADER_FIELDS]);
    LittleEndian::write_f64_into(data, &mut out[8 * HEADER_FIELDS..]);
    out
}

pub fn decode_frames(bytes: &[u8]) -> Result<FrameTensor> {
    if bytes.len() < 8 * HEADER_FIELDS {
        return Err(Error::Parse("frame file shorter than its header".into()));
    }
    let mut header = [0u64; HEADER_FIELDS];
    LittleEndian::read_u64_into(&bytes[..8 * HEADER_FIELDS], &mut header);
    if header[0] != FRAME_MAGIC {
        return Err(Error::Parse("not a frame file (bad magic)".into()));
    }
    if header[1] != FRAME_VERSION {
        return Err(Error::Parse(format!(
            "frame file version {} is not supported (expected {FRAME_VERSION})",
            header[1]
        )));
    }
    let dims: Vec<usize> = header[2..6].iter().map(|&d| d as usize).collect();
    let n =
        dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| shape("frame extents overflow"))?;
    let payload = &bytes[8 * HEADER_FIELDS..];
    if payload.len() != n * 8 {
        return Err(Error::Parse(format!("frame payload holds {} bytes, header declares {} values", payload.len(), n)));
    }
    let mut data = vec![0.0; n];
    LittleEndian::read_f64_into(payload, &mut data);
    let volume = DenseTensor::volume(dims[0], dims[1], dims[2], dims[3], data)?;
    FrameTensor::new(volume, header[6], header[7])
}
