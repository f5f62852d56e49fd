//! File formats: the `HSIC1` cube container, PGM band slices and CSV tables.
//!
//! `HSIC1` layout:
//!
//! ```text
//! HSIC1\n
//! <header byte length>\n
//! <header: "key = value" lines, optionally followed by a "[config]" line
//!  and a free-form config snapshot>
//! <payload: H*W*L little-endian values, band-major, each band row-major>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use tensorgrad::DType;

use crate::cube::{CodedMask, DispersionSpec, HsiCube, Measurement, Plane};
use crate::error::{Error, Result};

pub const MAGIC: &str = "HSIC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: DType,
    /// Extra header entries in file order (kind, scene width, ...).
    pub meta: Vec<(String, String)>,
    /// Snapshot of the configuration that produced the file.
    pub config: Option<String>,
    pub data: Vec<f64>,
}

impl Container {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * bands != data.len() || data.is_empty() {
            return Err(Error::Dimension(format!(
                "container {height}x{width}x{bands} with {} values",
                data.len()
            )));
        }
        Ok(Container {
            height,
            width,
            bands,
            dtype: DType::F64,
            meta: Vec::new(),
            config: None,
            data,
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_config(mut self, config: Option<String>) -> Self {
        self.config = config;
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self
            .meta(key)
            .ok_or_else(|| Error::Format(format!("missing header key {key}")))?;
        v.parse()
            .map_err(|_| Error::Format(format!("header key {key}: bad value {v}")))
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta("kind")
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Format(format!(
                "expected a {kind} file, found kind {other:?}"
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!(
            "H = {}\nW = {}\nL = {}\ndtype = {}\nlayout = band-major\nendianness = little\n",
            self.height,
            self.width,
            self.bands,
            self.dtype.name()
        );
        for (k, v) in &self.meta {
            header.push_str(&format!("{k} = {v}\n"));
        }
        if let Some(c) = &self.config {
            header.push_str("[config]\n");
            header.push_str(c);
            if !c.ends_with('\n') {
                header.push('\n');
            }
        }
        let mut out = format!("{MAGIC}\n{}\n", header.len()).into_bytes();
        out.extend_from_slice(header.as_bytes());
        for &v in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (magic, rest) = split_line(bytes).ok_or_else(|| Error::Format("bad magic".into()))?;
        if magic != MAGIC.as_bytes() {
            return Err(Error::Format("bad magic".into()));
        }
        let (len_line, rest) =
            split_line(rest).ok_or_else(|| Error::Format("missing header length".into()))?;
        let hlen: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format("bad header length".into()))?;
        if rest.len() < hlen {
            return Err(Error::Format("header extends past end of file".into()));
        }
        let header = std::str::from_utf8(&rest[..hlen])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let payload = &rest[hlen..];
        let (fields, config) = match header.find("[config]\n") {
            Some(i) => (
                &header[..i],
                Some(header[i + "[config]\n".len()..].to_string()),
            ),
            None => (header, None),
        };
        let mut dims = [None, None, None];
        let mut dtype = None;
        let mut meta = Vec::new();
        for line in fields.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            let num = || -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::Format(format!("bad value for {k}: {v}")))
            };
            match k {
                "H" => dims[0] = Some(num()?),
                "W" => dims[1] = Some(num()?),
                "L" => dims[2] = Some(num()?),
                "dtype" => {
                    dtype = Some(
                        DType::parse(v)
                            .ok_or_else(|| Error::Format(format!("unknown dtype {v}")))?,
                    )
                }
                "layout" if v != "band-major" => {
                    return Err(Error::Format(format!("unsupported layout {v}")))
                }
                "endianness" if v != "little" => {
                    return Err(Error::Format(format!("unsupported endianness {v}")))
                }
                "layout" | "endianness" => {}
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        let [Some(h), Some(w), Some(l)] = dims else {
            return Err(Error::Format("header must define H, W and L".into()));
        };
        let dtype = dtype.ok_or_else(|| Error::Format("header must define dtype".into()))?;
        let n = h * w * l;
        if n == 0 {
            return Err(Error::Format("zero extent".into()));
        }
        let expected = n * dtype.size();
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Container {
            height: h,
            width: w,
            bands: l,
            dtype,
            meta,
            config,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Loads and checks that the payload has the expected dtype.
    pub fn load_as(path: &Path, dtype: DType) -> Result<Self> {
        let c = Self::load(path)?;
        if c.dtype != dtype {
            return Err(Error::DtypeMismatch {
                expected: dtype.name().into(),
                found: c.dtype.name().into(),
            });
        }
        Ok(c)
    }

    pub fn from_cube(cube: &HsiCube) -> Self {
        Container::new(cube.height, cube.width, cube.bands, cube.data.clone())
            .expect("cube extents are valid")
            .with_meta("kind", "cube")
    }

    pub fn into_cube(self) -> Result<HsiCube> {
        if let Some(k) = self.kind() {
            if k != "cube" {
                return Err(Error::Format(format!(
                    "expected a cube file, found kind {k}"
                )));
            }
        }
        HsiCube::new(self.height, self.width, self.bands, self.data)
    }

    pub fn from_mask(mask: &CodedMask) -> Self {
        Container::new(mask.height, mask.width, 1, mask.pattern.clone())
            .expect("mask extents are valid")
            .with_meta("kind", "mask")
    }

    pub fn into_mask(self) -> Result<CodedMask> {
        self.expect_kind("mask")?;
        if self.bands != 1 {
            return Err(Error::Format("mask file must have L = 1".into()));
        }
        CodedMask::new(self.height, self.width, self.data)
    }

    pub fn from_measurement(y: &Measurement) -> Self {
        Container::new(y.height(), y.width(), 1, y.plane.data.clone())
            .expect("measurement extents are valid")
            .with_meta("kind", "measurement")
            .with_meta("scene_width", y.scene_width)
            .with_meta("bands", y.bands)
            .with_meta("step", y.spec.step)
    }

    pub fn into_measurement(self) -> Result<Measurement> {
        self.expect_kind("measurement")?;
        let spec = DispersionSpec::new(self.meta_usize("step")?)?;
        let scene_width = self.meta_usize("scene_width")?;
        let bands = self.meta_usize("bands")?;
        let plane = Plane::new(self.height, self.width, self.data)?;
        Measurement::new(plane, scene_width, bands, spec)
    }
}

fn split_line(b: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = b.iter().position(|&c| c == b'\n')?;
    Some((&b[..i], &b[i + 1..]))
}

/// Writes one plane as an 8-bit binary PGM, mapping `[lo, hi]` to `[0, 255]`.
pub fn write_pgm(path: &Path, plane: &Plane, lo: f64, hi: f64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", plane.width, plane.height)?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = plane
        .data
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Numeric table written with `csv`; floats use the shortest round-trip
/// representation so files parse back losslessly.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Format(format!(
                "row of {} fields for {} columns",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|rec| rec.iter().map(String::from).collect())
                    .map_err(csv_err)
            })
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(CsvTable { header, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse()
                    .map_err(|_| Error::Format(format!("column {name}: bad number {}", r[c])))
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_magic() {
        assert!(matches!(
            Container::decode(b"NOPE\n3\nabc"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn config_section_survives() {
        let c = Container::new(1, 1, 1, vec![0.5])
            .unwrap()
            .with_meta("kind", "cube")
            .with_config(Some("[run]\nseed = 3\n".into()));
        let d = Container::decode(&c.encode()).unwrap();
        assert_eq!(d, c);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec![fmt_f64(0.1), fmt_f64(1.0 / 3.0)]).unwrap();
        let back = CsvTable::parse(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.f64_column("b").unwrap()[0], 1.0 / 3.0);
    }
}
