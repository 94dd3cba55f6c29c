//! CTAR binary array files for images and sinograms.
//!
//! Layout: magic `CTAR`, u32 version (=1), u8 kind (0 = image, 1 = fan
//! sinogram, 2 = parallel sinogram), u32 rows, u32 cols, rows*cols float32
//! little-endian row-major samples, then a u32 byte length followed by the
//! geometry as UTF-8 JSON.

use crate::error::{Error, Result};
use crate::tomo::{CtImage, ScanGeometry, Sinogram, SinogramKind};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CTAR";
const VERSION: u32 = 1;

/// Contents of a CTAR file.
#[derive(Debug, Clone)]
pub enum CtarData {
    Image(CtImage),
    Sinogram(Sinogram),
}

fn kind_byte(data: &CtarData) -> u8 {
    match data {
        CtarData::Image(_) => 0,
        CtarData::Sinogram(s) => match s.kind {
            SinogramKind::Fan => 1,
            SinogramKind::Parallel => 2,
        },
    }
}

pub fn write_image(path: &Path, image: &CtImage) -> Result<()> {
    write_ctar(path, &CtarData::Image(image.clone()))
}

pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    write_ctar(path, &CtarData::Sinogram(sino.clone()))
}

pub fn write_ctar(path: &Path, data: &CtarData) -> Result<()> {
    let (rows, cols, samples, geometry) = match data {
        CtarData::Image(img) => (
            img.rows() as u32,
            img.cols() as u32,
            &img.data,
            &img.geometry,
        ),
        CtarData::Sinogram(s) => (s.rows as u32, s.cols as u32, &s.data, &s.geometry),
    };
    let geom_json = serde_json::to_vec(geometry)
        .map_err(|e| Error::format(path, format!("geometry serialization failed: {e}")))?;

    let mut buf = Vec::with_capacity(17 + samples.len() * 4 + 4 + geom_json.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind_byte(data));
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(geom_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&geom_json);

    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_ctar(path: &Path) -> Result<CtarData> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(path, &bytes);

    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a CTAR file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = cur.u8()?;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "array size overflow"))?;
    let raw = cur.take(n * 4)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let geom_len = cur.u32()? as usize;
    let geom_raw = cur.take(geom_len)?;
    let geometry: ScanGeometry = serde_json::from_slice(geom_raw)
        .map_err(|e| Error::format(path, format!("bad geometry trailer: {e}")))?;
    geometry.validate()?;

    match kind {
        0 => {
            if (rows, cols) != geometry.image_size {
                return Err(Error::format(path, "image shape disagrees with geometry"));
            }
            Ok(CtarData::Image(CtImage::from_data(data, geometry)?))
        }
        1 => Ok(CtarData::Sinogram(Sinogram::fan(data, geometry)?)),
        2 => Ok(CtarData::Sinogram(Sinogram::parallel(data, geometry)?)),
        k => Err(Error::format(path, format!("unknown kind byte {k}"))),
    }
}

pub fn read_image(path: &Path) -> Result<CtImage> {
    match read_ctar(path)? {
        CtarData::Image(img) => Ok(img),
        CtarData::Sinogram(_) => Err(Error::format(path, "expected an image, found a sinogram")),
    }
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    match read_ctar(path)? {
        CtarData::Sinogram(s) => Ok(s),
        CtarData::Image(_) => Err(Error::format(path, "expected a sinogram, found an image")),
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Cursor { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomo::{rasterize_phantom, PhantomSpec};

    #[test]
    fn image_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phantom.ctar");
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let img = rasterize_phantom(&PhantomSpec::shepp_logan(), &geom).unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.geometry, img.geometry);
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sinogram_roundtrip_keeps_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ctar");
        let geom = ScanGeometry::desk(8, 16).unwrap();
        let sino = Sinogram::parallel(vec![0.25; 8 * 256], geom).unwrap();
        write_sinogram(&path, &sino).unwrap();
        let back = read_sinogram(&path).unwrap();
        assert_eq!(back.kind, SinogramKind::Parallel);
        assert_eq!(back.data, sino.data);
    }

    #[test]
    fn bad_magic_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ctar");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        let err = read_ctar(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("junk.ctar") && msg.contains("magic"), "{msg}");
    }

    #[test]
    fn truncated_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ctar");
        let geom = ScanGeometry::desk(8, 16).unwrap();
        let img = CtImage::zeros(geom);
        write_image(&path, &img).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() / 2]).unwrap();
        assert!(read_ctar(&path).is_err());
    }
}
