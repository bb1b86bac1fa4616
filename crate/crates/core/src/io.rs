//! On-disk formats: the MSCTRAW1 binary container for images and sinograms,
//! 16-bit portable graymap previews, and trace CSV emission.
//!
//! MSCTRAW1 layout (bit-exact): 8-byte magic `MSCTRAW1`, little-endian u32
//! header length, UTF-8 header of `key: value` lines, then little-endian
//! 64-bit float payload, row-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BeamKind, ScanGeometry, Sinogram};
use crate::grid::ImageGrid;
use crate::optimizers::SolverTrace;

const MAGIC: &[u8; 8] = b"MSCTRAW1";

fn format_f64(v: f64) -> String {
    // round-trippable decimal representation
    format!("{v:?}")
}

struct Header {
    fields: BTreeMap<String, String>,
}

impl Header {
    fn new() -> Self {
        Self { fields: BTreeMap::new() }
    }

    fn set(&mut self, key: &str, value: impl Into<String>) {
        self.fields.insert(key.to_string(), value.into());
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Format(format!("missing header field '{key}'")))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("header field '{key}' is not an integer")))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("header field '{key}' is not a number")))
    }

    fn encode(&self) -> Vec<u8> {
        let mut s = String::new();
        for (k, v) in &self.fields {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(v);
            s.push('\n');
        }
        s.into_bytes()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Format("header is not valid UTF-8".into()))?;
        let mut fields = BTreeMap::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| Error::Format(format!("malformed header line '{line}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        Ok(Self { fields })
    }
}

fn write_container(path: &Path, header: &Header, payload: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let head = header.encode();
    let len: u32 = head
        .len()
        .try_into()
        .map_err(|_| Error::Format("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&head)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic: not an MSCTRAW1 file".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("truncated header length".into()))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut head = vec![0u8; len];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header = Header::decode(&head)?;
    let mut payload_bytes = Vec::new();
    r.read_to_end(&mut payload_bytes)?;
    if payload_bytes.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let payload = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write_image(path: &Path, img: &ImageGrid<f64>) -> Result<()> {
    let mut h = Header::new();
    h.set("kind", "image");
    h.set("rows", img.rows().to_string());
    h.set("cols", img.cols().to_string());
    h.set("pixel_size", format_f64(img.pixel_size()));
    h.set("units", "1/length");
    write_container(path, &h, img.values())
}

pub fn read_image(path: &Path) -> Result<ImageGrid<f64>> {
    let (h, payload) = read_container(path)?;
    if h.get("kind")? != "image" {
        return Err(Error::Format("expected an image container".into()));
    }
    let rows = h.get_usize("rows")?;
    let cols = h.get_usize("cols")?;
    if payload.len() != rows * cols {
        return Err(Error::Format("image payload length does not match header dims".into()));
    }
    ImageGrid::new(rows, cols, h.get_f64("pixel_size")?, payload)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_sinogram(path: &Path, s: &Sinogram<f64>) -> Result<()> {
    let g = s.geometry();
    let mut h = Header::new();
    h.set("kind", "sinogram");
    h.set(
        "beam",
        match g.kind() {
            BeamKind::Parallel => "parallel",
            BeamKind::FanBeam => "fan_beam",
        },
    );
    h.set("num_angles", g.num_angles().to_string());
    h.set("num_detectors", g.num_detectors().to_string());
    h.set("detector_spacing", format_f64(g.detector_spacing()));
    h.set(
        "angles",
        g.angles().iter().map(|a| format_f64(*a)).collect::<Vec<_>>().join(","),
    );
    if g.kind() == BeamKind::FanBeam {
        h.set("source_radius", format_f64(g.source_radius()));
        h.set("detector_radius", format_f64(g.detector_radius()));
    }
    if let Some(label) = s.energy_label() {
        h.set("energy_label", label);
    }
    h.set("units", "dimensionless");
    write_container(path, &h, s.values())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram<f64>> {
    let (h, payload) = read_container(path)?;
    if h.get("kind")? != "sinogram" {
        return Err(Error::Format("expected a sinogram container".into()));
    }
    let num_detectors = h.get_usize("num_detectors")?;
    let spacing = h.get_f64("detector_spacing")?;
    let angles: Vec<f64> = h
        .get("angles")?
        .split(',')
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format("bad angle value".into())))
        .collect::<Result<_>>()?;
    if angles.len() != h.get_usize("num_angles")? {
        return Err(Error::Format("angle count does not match header".into()));
    }
    let geometry = match h.get("beam")? {
        "parallel" => ScanGeometry::parallel(angles, num_detectors, spacing),
        "fan_beam" => ScanGeometry::fan_beam(
            angles,
            num_detectors,
            spacing,
            h.get_f64("source_radius")?,
            h.get_f64("detector_radius")?,
        ),
        other => return Err(Error::Format(format!("unknown beam kind '{other}'"))),
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    if payload.len() != geometry.num_rays() {
        return Err(Error::Format("sinogram payload length does not match geometry".into()));
    }
    let label = h.fields.get("energy_label").cloned();
    Sinogram::new(geometry, payload, label).map_err(|e| Error::Format(e.to_string()))
}

/// 16-bit binary PGM preview, min..max of the data mapped to 0..65535.
/// The mapping is monotone in the source values.
pub fn write_pgm_preview(path: &Path, img: &ImageGrid<f64>) -> Result<()> {
    let lo = img.min_value();
    let hi = img.max_value();
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", img.cols(), img.rows())?;
    for &v in img.values() {
        let q = ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Trace CSV: one row per accepted outer iteration.
pub fn write_trace_csv(path: &Path, trace: &SolverTrace<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,sigma,backtracks,F,G,H,ssim,psnr,wall_ms")?;
    for r in &trace.records {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.12e},{},{:.12e},{:.12e},{:.12e},{},{},{:.3}",
            r.iter,
            r.sigma,
            r.backtracks,
            r.f,
            r.g,
            r.h,
            fmt_opt(r.ssim),
            fmt_opt(r.psnr),
            r.wall_ms
        )?;
    }
    w.flush()?;
    Ok(())
}

/// SHA-256 content hash of a file, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn image_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.raw");
        let img = ImageGrid::new(3, 4, 0.125, (0..12).map(|i| i as f64 * 0.1 - 0.3).collect())
            .unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(img.values(), back.values());
        assert_eq!(img.pixel_size(), back.pixel_size());
    }

    #[test]
    fn sinogram_round_trip_preserves_geometry() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sino.raw");
        let g = ScanGeometry::fan_beam(
            ScanGeometry::uniform_angles(5),
            7,
            0.3,
            20.0,
            10.0,
        )
        .unwrap();
        let mut s = Sinogram::zeros(g);
        for (i, v) in s.values_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.01;
        }
        s.set_energy_label(Some("E1".into()));
        write_sinogram(&path, &s).unwrap();
        let back = read_sinogram(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.raw");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00").unwrap();
        match read_image(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.raw");
        let img = ImageGrid::new(2, 2, 1.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_image(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_preview_is_monotone_in_source_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = ImageGrid::new(1, 5, 1.0, vec![0.0, 0.5, 0.2, 1.0, 0.7]).unwrap();
        write_pgm_preview(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let data = &bytes[bytes.len() - 10..];
        let pix: Vec<u16> = data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        // sort order of preview pixels matches sort order of source values
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| img.values()[a].partial_cmp(&img.values()[b]).unwrap());
        for w in order.windows(2) {
            assert!(pix[w[0]] <= pix[w[1]]);
        }
    }

    #[test]
    fn sha256_of_known_content() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            file_sha256(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
