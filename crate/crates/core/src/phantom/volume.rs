use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::create_file;

pub const VOLUME_MAGIC: &[u8; 4] = b"VOLB";
const HEADER_LEN: usize = 16;
/// Refuse to allocate more than this many voxels from an untrusted header.
const MAX_VOXELS: u64 = 1 << 30;

/// 3D grid of intensities in `[0, 1]`, x fastest, then y, then z.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("volume dims {dims:?} must all be >= 1")));
        }
        let len = dims.iter().product::<usize>();
        if voxels.len() != len {
            return Err(Error::invalid(format!(
                "volume {dims:?} needs {len} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Self { dims, voxels })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, voxels: vec![0.0; dims.iter().product()] }
    }

    /// `(x, y, z)` voxel counts.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn max(&self) -> f32 {
        self.voxels.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.voxels.iter().map(|&v| v as f64).sum()
    }

    pub fn in_unit_range(&self) -> bool {
        self.voxels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Block-mean pooling of every z-slice down to `target_xy × target_xy`.
    pub fn downsample_xy(&self, target_xy: usize) -> Result<Volume> {
        let [x, y, z] = self.dims;
        if target_xy == 0 || x % target_xy != 0 || y % target_xy != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {x}×{y} to {target_xy}×{target_xy}: dims must be divisible"
            )));
        }
        let (fx, fy) = (x / target_xy, y / target_xy);
        let scale = 1.0 / (fx * fy) as f64;
        let mut out = Volume::zeros([target_xy, target_xy, z]);
        for k in 0..z {
            for j in 0..target_xy {
                for i in 0..target_xy {
                    let mut acc = 0.0f64;
                    for dy in 0..fy {
                        let row = self.index(i * fx, j * fy + dy, k);
                        acc += self.voxels[row..row + fx].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let idx = out.index(i, j, k);
                    out.voxels[idx] = (acc * scale) as f32;
                }
            }
        }
        Ok(out)
    }

    /// Appends zero slices at the high-z end until the volume has `target_z` slices.
    pub fn pad_z(&self, target_z: usize) -> Result<Volume> {
        let [x, y, z] = self.dims;
        if z > target_z {
            return Err(Error::invalid(format!("volume has {z} slices, more than target {target_z}")));
        }
        let mut voxels = self.voxels.clone();
        voxels.resize(x * y * target_z, 0.0);
        Volume::new([x, y, target_z], voxels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(VOLUME_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Volume> {
        if bytes.len() < 4 {
            return Err(Error::format(bytes.len() as u64, "file shorter than magic"));
        }
        if &bytes[..4] != VOLUME_MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}, expected \"VOLB\"", String::from_utf8_lossy(&bytes[..4]))));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len() as u64, "truncated header"));
        }
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let off = 4 + 4 * i;
            *d = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        }
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let count = match count {
            Some(c) if c <= MAX_VOXELS && c > 0 => c as usize,
            _ => return Err(Error::format(4, format!("unusable dims {dims:?}"))),
        };
        let need = HEADER_LEN + 4 * count;
        if bytes.len() < need {
            return Err(Error::format(
                bytes.len() as u64,
                format!("truncated payload: {} of {count} voxels present", (bytes.len() - HEADER_LEN) / 4),
            ));
        }
        if bytes.len() > need {
            return Err(Error::format(need as u64, "trailing bytes after payload"));
        }
        let voxels = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Volume::new(dims, voxels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = create_file(path)?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Volume> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Volume::from_bytes(&bytes)
    }
}

/// Writes `v` to `path` and reads it back.
pub fn volume_roundtrip(path: &Path, v: &Volume) -> Result<Volume> {
    v.save(path)?;
    Volume::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product::<usize>();
        Volume::new(dims, (0..n).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap()
    }

    #[test]
    fn downsample_paper_size() {
        let v = Volume::zeros([512, 512, 30]);
        assert_eq!(v.downsample_xy(64).unwrap().dims(), [64, 64, 30]);
    }

    #[test]
    fn downsample_means() {
        let c = Volume::new([4, 4, 2], vec![0.25; 32]).unwrap();
        assert!(c.downsample_xy(2).unwrap().voxels().iter().all(|&v| v == 0.25));
        let b = Volume::new([2, 2, 1], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.downsample_xy(1).unwrap().voxels(), &[0.5]);
        assert!(Volume::zeros([6, 6, 1]).downsample_xy(4).is_err());
    }

    #[test]
    fn pad_appends_zero_slices() {
        let v = ramp([4, 3, 28]);
        let p = v.pad_z(36).unwrap();
        assert_eq!(p.dims(), [4, 3, 36]);
        assert_eq!(&p.voxels()[..v.voxels().len()], v.voxels());
        assert!(p.voxels()[v.voxels().len()..].iter().all(|&x| x == 0.0));
        assert_eq!(p.sum(), v.sum());
        assert_eq!(v.pad_z(28).unwrap(), v);
        assert!(v.pad_z(27).is_err());
    }

    #[test]
    fn downsample_and_pad_commute() {
        let v = ramp([8, 8, 5]);
        let a = v.downsample_xy(4).unwrap().pad_z(7).unwrap();
        let b = v.pad_z(7).unwrap().downsample_xy(4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn codec_errors() {
        let v = ramp([2, 2, 2]);
        let mut bytes = v.to_bytes();
        assert_eq!(Volume::from_bytes(&bytes).unwrap(), v);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Volume::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        bytes.truncate(16 + 7 * 4);
        match Volume::from_bytes(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 44);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        let mut huge = v.to_bytes();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Volume::from_bytes(&huge), Err(Error::Format { offset: 4, .. })));
    }
}
