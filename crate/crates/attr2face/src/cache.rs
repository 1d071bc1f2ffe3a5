//! Binary cache of curated samples.
//!
//! Layout (all little-endian): magic `A2FCACHE`, `u32` version, `u32` scale
//! count, one `u32` per scale, `u64` sample count, then per sample the 17
//! texture and 23 face attribute values followed by, for each scale, the
//! face and sketch images as `r·r·3` row-major HWC `f64` values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use attr2face_core::attributes::{FACE_ATTRS, SKETCH_ATTRS};
use attr2face_core::data::{CuratedSample, Image, ImagePyramid};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 8] = b"A2FCACHE";
pub const VERSION: u32 = 1;

fn write_image<W: Write>(w: &mut W, img: &Image) -> std::io::Result<()> {
    for &v in &img.data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_values<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

pub fn write_cache(path: &Path, scales: &[usize], samples: &[CuratedSample]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    let body = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(scales.len() as u32)?;
        for &s in scales {
            w.write_u32::<LittleEndian>(s as u32)?;
        }
        w.write_u64::<LittleEndian>(samples.len() as u64)?;
        for s in samples {
            for &v in s.y_s.iter().chain(&s.y_f) {
                w.write_f64::<LittleEndian>(v)?;
            }
            for &r in scales {
                for p in [&s.face, &s.sketch] {
                    let img = p.level(r).ok_or_else(|| std::io::Error::other(format!("sample lacks scale {r}")))?;
                    write_image(&mut w, img)?;
                }
            }
        }
        w.flush()
    })();
    body.map_err(io_err(&tmp))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a cache; returns its scales and samples.
pub fn read_cache(path: &Path) -> Result<(Vec<usize>, Vec<CuratedSample>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(format_err(path, "not a sample cache (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err(path))?;
    if version != VERSION {
        return Err(format_err(path, format!("unsupported cache version {version}")));
    }
    let n_scales = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
    if n_scales == 0 || n_scales > 16 {
        return Err(format_err(path, format!("implausible scale count {n_scales}")));
    }
    let mut scales = Vec::with_capacity(n_scales);
    for _ in 0..n_scales {
        scales.push(r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize);
    }
    let n = r.read_u64::<LittleEndian>().map_err(io_err(path))? as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let y_s = read_values(&mut r, SKETCH_ATTRS).map_err(io_err(path))?;
        let y_f = read_values(&mut r, FACE_ATTRS).map_err(io_err(path))?;
        let mut face = Vec::with_capacity(n_scales);
        let mut sketch = Vec::with_capacity(n_scales);
        for &s in &scales {
            for dst in [&mut face, &mut sketch] {
                let data = read_values(&mut r, s * s * 3).map_err(io_err(path))?;
                dst.push((s, Image::new(s, s, 3, data)?));
            }
        }
        samples.push(CuratedSample { face: ImagePyramid { levels: face }, sketch: ImagePyramid { levels: sketch }, y_s, y_f });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(format_err(path, "trailing bytes after the last record"));
    }
    Ok((scales, samples))
}
