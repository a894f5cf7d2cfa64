use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::tensor::DenseTensor;

use super::{EventRecord, FrameTensor, SensorGeometry};

/// Target grid of a binning operation. Bins are left-closed,
/// right-open: bin `j` covers `[origin + jΔτ, origin + (j+1)Δτ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinGrid {
    pub bin_size_us: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub origin_us: u64,
}

impl BinGrid {
    pub fn new(bin_size_us: u64, frames: usize, height: usize, width: usize) -> Self {
        Self { bin_size_us, frames, height, width, origin_us: 0 }
    }

    pub fn with_origin(mut self, origin_us: u64) -> Self {
        self.origin_us = origin_us;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.bin_size_us == 0 {
            return Err(invalid("bin size must be positive"));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(invalid(format!("grid extents must be non-zero: {self:?}")));
        }
        Ok(())
    }

    fn index(&self, p: u8, t: usize, y: usize, x: usize) -> usize {
        ((p as usize * self.frames + t) * self.height + y) * self.width + x
    }

    fn empty(&self) -> Vec<f64> {
        vec![0.0; 2 * self.frames * self.height * self.width]
    }
}

fn check_pixel(e: &EventRecord, width: usize, height: usize) -> Result<()> {
    if e.x as usize >= width || e.y as usize >= height {
        return Err(Error::OutOfRange(format!("event pixel ({}, {}) outside {width}x{height}", e.x, e.y)));
    }
    Ok(())
}

/// Counts events per `(polarity, bin, y, x)`. Events before the origin or
/// at/after `origin + T·Δτ` are dropped.
pub fn bin_direct(events: &[EventRecord], grid: &BinGrid) -> Result<FrameTensor> {
    grid.validate()?;
    let mut data = grid.empty();
    for e in events {
        check_pixel(e, grid.width, grid.height)?;
        if e.t < grid.origin_us {
            continue;
        }
        let bin = (e.t - grid.origin_us) / grid.bin_size_us;
        if bin >= grid.frames as u64 {
            continue;
        }
        data[grid.index(e.p.min(1), bin as usize, e.y as usize, e.x as usize)] += 1.0;
    }
    let vol = DenseTensor::volume(2, grid.frames, grid.height, grid.width, data)?;
    FrameTensor::new(vol, grid.bin_size_us, grid.origin_us)
}

/// Linear split of a continuous position over two neighbouring cells,
/// clamped at the ends of `0..n`.
fn tent(pos: f64, n: usize) -> [(usize, f64); 2] {
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let hi = (lo + 1).min(n - 1);
    [(lo, 1.0 - frac), (hi, frac)]
}

/// Event-volume binning: each event's unit mass is split linearly between
/// the two nearest bin centres (`(j + 0.5)Δτ`), clamped at the first and
/// last centre. When `source` differs from the grid resolution, the mass
/// is also split bilinearly over the four nearest target pixels.
pub fn bin_event_volume(events: &[EventRecord], grid: &BinGrid, source: Option<SensorGeometry>) -> Result<FrameTensor> {
    grid.validate()?;
    let source = source.unwrap_or(SensorGeometry::new(grid.width, grid.height));
    let resize = source.width != grid.width || source.height != grid.height;
    let sx = grid.width as f64 / source.width as f64;
    let sy = grid.height as f64 / source.height as f64;
    let span = grid.frames as u64 * grid.bin_size_us;
    let mut data = grid.empty();
    for e in events {
        check_pixel(e, source.width, source.height)?;
        if e.t < grid.origin_us || e.t - grid.origin_us >= span {
            continue;
        }
        let rel = (e.t - grid.origin_us) as f64 / grid.bin_size_us as f64 - 0.5;
        let times = tent(rel, grid.frames);
        let p = e.p.min(1);
        if resize {
            let xs = tent((e.x as f64 + 0.5) * sx - 0.5, grid.width);
            let ys = tent((e.y as f64 + 0.5) * sy - 0.5, grid.height);
            for &(t, wt) in &times {
                for &(y, wy) in &ys {
                    for &(x, wx) in &xs {
                        data[grid.index(p, t, y, x)] += wt * wy * wx;
                    }
                }
            }
        } else {
            for &(t, wt) in &times {
                data[grid.index(p, t, e.y as usize, e.x as usize)] += wt;
            }
        }
    }
    let vol = DenseTensor::volume(2, grid.frames, grid.height, grid.width, data)?;
    FrameTensor::new(vol, grid.bin_size_us, grid.origin_us)
}

/// Re-bins onto a grid with bin size `new_bin_us` covering the same span
/// and multiplies by `Δτ_old / Δτ_new`, so every event's time integral
/// `value · Δτ` is unchanged. Mass inside an old bin is treated as
/// uniform when a new bin boundary splits it.
pub fn rescale_for_bin_size(ft: &FrameTensor, new_bin_us: u64) -> Result<FrameTensor> {
    if new_bin_us == 0 {
        return Err(invalid("bin size must be positive"));
    }
    let old = ft.bin_size_us();
    if new_bin_us == old {
        return Ok(ft.clone());
    }
    let (c, t, h, w) = ft.dims();
    let span = t as u64 * old;
    let t_new = span.div_ceil(new_bin_us) as usize;
    let plane = h * w;
    let src = ft.volume().data();
    let mut data = vec![0.0; c * t_new * plane];
    for ch in 0..c {
        for i in 0..t {
            let (lo, hi) = (i as u64 * old, (i as u64 + 1) * old);
            let first = (lo / new_bin_us) as usize;
            let last = ((hi - 1) / new_bin_us) as usize;
            let s = &src[(ch * t + i) * plane..(ch * t + i + 1) * plane];
            for k in first..=last {
                let (nlo, nhi) = (k as u64 * new_bin_us, (k as u64 + 1) * new_bin_us);
                let overlap = hi.min(nhi) - lo.max(nlo);
                let factor = overlap as f64 / new_bin_us as f64;
                let d = &mut data[(ch * t_new + k) * plane..(ch * t_new + k + 1) * plane];
                for (o, v) in d.iter_mut().zip(s) {
                    *o += v * factor;
                }
            }
        }
    }
    FrameTensor::new(DenseTensor::volume(c, t_new, h, w, data)?, new_bin_us, ft.origin_us())
}

/// Zeroes frames `0..=cutoff`.
pub fn prefix_mask(ft: &FrameTensor, cutoff: usize) -> Result<FrameTensor> {
    let (c, t, h, w) = ft.dims();
    if cutoff >= t {
        return Err(Error::OutOfRange(format!("cutoff frame {cutoff} with only {t} frames")));
    }
    let mut out = ft.clone();
    let plane = h * w;
    let data = out.volume_mut().data_mut();
    for ch in 0..c {
        data[ch * t * plane..(ch * t + cutoff + 1) * plane].fill(0.0);
    }
    Ok(out)
}

/// Draws a masking cutoff uniformly from the first frame to the middle
/// frame, `0..=T/2`.
pub fn sample_prefix_cutoff<R: Rng + ?Sized>(frames: usize, rng: &mut R) -> Result<usize> {
    if frames == 0 {
        return Err(invalid("cannot mask an empty tensor"));
    }
    Ok(rng.gen_range(0..=frames / 2))
}

/// Fraction of entries that are exactly zero; an empty tensor counts as
/// fully sparse.
pub fn sparsity(t: &DenseTensor) -> f64 {
    if t.is_empty() {
        return 1.0;
    }
    t.data().iter().filter(|&&v| v == 0.0).count() as f64 / t.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grid() -> BinGrid {
        BinGrid::new(10_000, 4, 2, 2)
    }

    fn at(ft: &FrameTensor, p: usize, t: usize, y: usize, x: usize) -> f64 {
        let (_, tt, h, w) = ft.dims();
        ft.volume().data()[((p * tt + t) * h + y) * w + x]
    }

    #[test]
    fn direct_counts() {
        assert_eq!(bin_direct(&[], &grid()).unwrap().total(), 0.0);
        let ev = [EventRecord::new(100, 1, 0, 1); 3];
        let ft = bin_direct(&ev, &grid()).unwrap();
        assert_eq!(at(&ft, 1, 0, 0, 1), 3.0);
    }

    #[test]
    fn boundary_goes_to_later_bin() {
        let ft = bin_direct(&[EventRecord::new(20_000, 0, 0, 0)], &grid()).unwrap();
        assert_eq!(at(&ft, 0, 2, 0, 0), 1.0);
        // past the end: dropped
        let ft = bin_direct(&[EventRecord::new(40_000, 0, 0, 0)], &grid()).unwrap();
        assert_eq!(ft.total(), 0.0);
    }

    #[test]
    fn tent_weights() {
        let ft = bin_event_volume(&[EventRecord::new(15_000, 0, 0, 1)], &grid(), None).unwrap();
        assert_eq!(at(&ft, 1, 1, 0, 0), 1.0);
        let ft = bin_event_volume(&[EventRecord::new(20_000, 0, 0, 1)], &grid(), None).unwrap();
        assert_eq!(at(&ft, 1, 1, 0, 0), 0.5);
        assert_eq!(at(&ft, 1, 2, 0, 0), 0.5);
        let ft = bin_event_volume(&[EventRecord::new(12_000, 0, 0, 1)], &grid(), None).unwrap();
        assert!((at(&ft, 1, 0, 0, 0) - 0.3).abs() < 1e-12);
        assert!((at(&ft, 1, 1, 0, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn spatial_resize_conserves_mass() {
        let g = BinGrid::new(1000, 3, 2, 3);
        let ev: Vec<EventRecord> =
            (0..40).map(|i| EventRecord::new(i * 70, (i % 7) as u16, (i % 5) as u16, (i % 2) as u8)).collect();
        let ft = bin_event_volume(&ev, &g, Some(SensorGeometry::new(7, 5))).unwrap();
        assert!((ft.total() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_halves_on_doubling() {
        let ft = bin_direct(&[EventRecord::new(5_000, 0, 0, 0)], &grid()).unwrap();
        let r = rescale_for_bin_size(&ft, 20_000).unwrap();
        assert_eq!(r.frames(), 2);
        assert_eq!(at(&r, 0, 0, 0, 0), 0.5);
        assert!((r.time_integral() - ft.time_integral()).abs() < 1e-15);
        assert_eq!(rescale_for_bin_size(&ft, 10_000).unwrap(), ft);
    }

    #[test]
    fn masking() {
        let ev: Vec<EventRecord> = (0..4).map(|i| EventRecord::new(i * 10_000, 0, 0, 1)).collect();
        let ft = bin_direct(&ev, &grid()).unwrap();
        let m0 = prefix_mask(&ft, 0).unwrap();
        assert_eq!(m0.total(), 3.0);
        assert_eq!(prefix_mask(&m0, 0).unwrap(), m0);
        assert_eq!(prefix_mask(&ft, 3).unwrap().total(), 0.0);
        assert!(prefix_mask(&ft, 4).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(sample_prefix_cutoff(9, &mut rng).unwrap() <= 4);
        }
    }

    #[test]
    fn sparsity_fractions() {
        let z = DenseTensor::volume_zeros(1, 1, 2, 2);
        assert_eq!(sparsity(&z), 1.0);
        let half = DenseTensor::volume(1, 1, 2, 2, vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(sparsity(&half), 0.5);
        let full = DenseTensor::volume(1, 1, 1, 2, vec![3.0, 1.0]).unwrap();
        assert_eq!(sparsity(&full), 0.0);
    }
}
