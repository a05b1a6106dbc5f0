//! Single-file, uncompressed, little-endian NIfTI-1 (`.nii`) for 8-bit
//! unsigned and 32-bit float volumes.

use std::fs;
use std::path::Path;

use super::volume::{diagonal_affine, Image, Mask, Volume, Voxel};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const UNITS_MM: u8 = 2;

/// A volume as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    U8(Mask),
    F32(Image),
}

impl AnyVolume {
    pub fn into_image(self) -> Image {
        match self {
            AnyVolume::F32(v) => v,
            AnyVolume::U8(v) => Volume {
                dims: v.dims,
                spacing: v.spacing,
                affine: v.affine,
                data: v.data.into_iter().map(f32::from).collect(),
            },
        }
    }

    /// Any nonzero voxel becomes 1; float volumes are thresholded at 0.5.
    pub fn into_mask(self) -> Mask {
        match self {
            AnyVolume::U8(v) => Volume {
                data: v.data.into_iter().map(|x| (x != 0) as u8).collect(),
                ..v
            },
            AnyVolume::F32(v) => Volume {
                dims: v.dims,
                spacing: v.spacing,
                affine: v.affine,
                data: v.data.into_iter().map(|x| (x > 0.5) as u8).collect(),
            },
        }
    }
}

fn put_i16(h: &mut [u8], at: usize, v: i16) {
    h[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(h: &mut [u8], at: usize, v: f32) {
    h[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i16(h: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([h[at], h[at + 1]])
}

fn get_f32(h: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([h[at], h[at + 1], h[at + 2], h[at + 3]])
}

/// Serializes a volume: header, four zero extension bytes, payload.
pub fn encode<T: Voxel>(v: &Volume<T>) -> Result<Vec<u8>> {
    let mut out = vec![0u8; VOX_OFFSET];
    let h = &mut out[..HEADER_SIZE];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(h, 40, 3);
    for (i, &d) in v.dims.iter().enumerate() {
        let d = i16::try_from(d).map_err(|_| Error::data(format!("dimension {d} exceeds the NIfTI-1 limit")))?;
        put_i16(h, 42 + 2 * i, d);
    }
    for i in 3..7 {
        put_i16(h, 42 + 2 * i, 1);
    }
    put_i16(h, 70, T::NIFTI_DATATYPE);
    put_i16(h, 72, (T::BYTES * 8) as i16);
    put_f32(h, 76, 1.0);
    for (i, &s) in v.spacing.iter().enumerate() {
        put_f32(h, 80 + 4 * i, s);
    }
    put_f32(h, 108, VOX_OFFSET as f32);
    put_f32(h, 112, 1.0);
    h[123] = UNITS_MM;
    put_i16(h, 254, 1);
    for (r, row) in v.affine.iter().enumerate() {
        for (c, &a) in row.iter().enumerate() {
            put_f32(h, 280 + 16 * r + 4 * c, a);
        }
    }
    h[344..348].copy_from_slice(MAGIC);
    out.reserve(v.data.len() * T::BYTES);
    for &x in &v.data {
        x.write_le(&mut out);
    }
    Ok(out)
}

/// Rotation and translation encoded by the quaternion fields.
fn qform_affine(h: &[u8], pixdim: [f32; 4]) -> [[f32; 4]; 3] {
    let (b, c, d) = (get_f32(h, 256) as f64, get_f32(h, 260) as f64, get_f32(h, 264) as f64);
    let off = [get_f32(h, 268), get_f32(h, 272), get_f32(h, 276)];
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let scale = [pixdim[1] as f64, pixdim[2] as f64, qfac * pixdim[3] as f64];
    let mut out = [[0.0f32; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (r[i][j] * scale[j]) as f32;
        }
        out[i][3] = off[i];
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<AnyVolume> {
    let fail = |field: &'static str, detail: String| Error::Nifti {
        path: path.to_path_buf(),
        field,
        detail,
    };
    if bytes.len() < HEADER_SIZE {
        return Err(fail("sizeof_hdr", format!("file holds only {} bytes", bytes.len())));
    }
    let h = &bytes[..HEADER_SIZE];
    let size = i32::from_le_bytes([h[0], h[1], h[2], h[3]]);
    if size != HEADER_SIZE as i32 {
        let detail = if i32::from_be_bytes([h[0], h[1], h[2], h[3]]) == HEADER_SIZE as i32 {
            "big-endian files are not supported".to_string()
        } else {
            format!("expected 348, found {size}")
        };
        return Err(fail("sizeof_hdr", detail));
    }
    if &h[344..348] != MAGIC {
        return Err(fail("magic", format!("expected \"n+1\", found {:?}", &h[344..348])));
    }
    let rank = get_i16(h, 40);
    if !(1..=7).contains(&rank) {
        return Err(fail("dim", format!("dim[0] = {rank}")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=rank as usize {
        let d = get_i16(h, 40 + 2 * i);
        if d < 1 {
            return Err(fail("dim", format!("dim[{i}] = {d}")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(fail("dim", format!("only 3-D volumes are supported, dim[{i}] = {d}")));
        }
    }
    let datatype = get_i16(h, 70);
    let bitpix = get_i16(h, 72);
    let (bytes_per, expected_bits) = match datatype {
        2 => (1, 8),
        16 => (4, 32),
        other => return Err(fail("datatype", format!("unsupported datatype code {other}"))),
    };
    if bitpix != expected_bits {
        return Err(fail("bitpix", format!("{bitpix} does not match datatype {datatype}")));
    }
    let pixdim = [get_f32(h, 76), get_f32(h, 80), get_f32(h, 84), get_f32(h, 88)];
    let spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    let offset = get_f32(h, 108);
    if !(offset >= VOX_OFFSET as f32) || offset.fract() != 0.0 {
        return Err(fail("vox_offset", format!("{offset}")));
    }
    let slope = get_f32(h, 112);
    let inter = get_f32(h, 116);
    if slope != 0.0 && slope != 1.0 {
        return Err(fail("scl_slope", format!("{slope} (only 0 or 1 supported)")));
    }
    if inter != 0.0 {
        return Err(fail("scl_inter", format!("{inter} (only 0 supported)")));
    }
    let affine = if get_i16(h, 254) > 0 {
        let mut a = [[0.0f32; 4]; 3];
        for (r, row) in a.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = get_f32(h, 280 + 16 * r + 4 * c);
            }
        }
        a
    } else if get_i16(h, 252) > 0 {
        qform_affine(h, pixdim)
    } else {
        diagonal_affine(spacing)
    };
    let n: usize = dims.iter().product();
    let start = offset as usize;
    let end = start + n * bytes_per;
    if bytes.len() < end {
        return Err(fail(
            "payload",
            format!("truncated: need {} bytes after the header, found {}", n * bytes_per, bytes.len().saturating_sub(start)),
        ));
    }
    let payload = &bytes[start..end];
    let volume = match datatype {
        2 => AnyVolume::U8(Volume::with_affine(dims, spacing, affine, payload.to_vec())?),
        _ => AnyVolume::F32(Volume::with_affine(
            dims,
            spacing,
            affine,
            payload.chunks_exact(4).map(f32::read_le).collect(),
        )?),
    };
    Ok(volume)
}

pub fn write_volume<T: Voxel>(v: &Volume<T>, path: &Path) -> Result<()> {
    let bytes = encode(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: &Path) -> Result<AnyVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    read_volume(path).map(AnyVolume::into_image)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    read_volume(path).map(AnyVolume::into_mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_starts_with_its_size() {
        let v = Volume::new([2, 2, 2], [0.8; 3], vec![0u8; 8]).unwrap();
        let b = encode(&v).unwrap();
        assert_eq!(i32::from_le_bytes([b[0], b[1], b[2], b[3]]), 348);
        assert_eq!(&b[344..348], b"n+1\0");
        assert_eq!(get_f32(&b, 108), 352.0);
        assert_eq!(b.len(), 352 + 8);
    }

    #[test]
    fn qform_fallback_for_identity_quaternion() {
        let v = Volume::new([2, 2, 2], [0.5, 1.0, 2.0], vec![0.0f32; 8]).unwrap();
        let mut b = encode(&v).unwrap();
        put_i16(&mut b, 254, 0);
        put_i16(&mut b, 252, 1);
        put_f32(&mut b, 268, 3.0);
        let AnyVolume::F32(back) = decode(&b, Path::new("q")).unwrap() else {
            panic!("wrong type")
        };
        assert_eq!(back.affine[0], [0.5, 0.0, 0.0, 3.0]);
        assert_eq!(back.affine[2], [0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn malformed_headers_name_the_field() {
        let v = Volume::new([2, 2, 2], [1.0; 3], vec![1.0f32; 8]).unwrap();
        let good = encode(&v).unwrap();
        let field = |b: &[u8]| match decode(b, Path::new("t")) {
            Err(Error::Nifti { field, .. }) => field,
            other => panic!("expected a NIfTI error, got {other:?}"),
        };
        let mut b = good.clone();
        b[345] = b'i';
        assert_eq!(field(&b), "magic");
        let mut b = good.clone();
        put_i16(&mut b, 70, 4);
        assert_eq!(field(&b), "datatype");
        assert_eq!(field(&good[..good.len() - 1]), "payload");
        let mut b = good.clone();
        put_f32(&mut b, 112, 2.0);
        assert_eq!(field(&b), "scl_slope");
        let mut b = good.clone();
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        assert_eq!(field(&b), "sizeof_hdr");
    }
}
