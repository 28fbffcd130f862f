//! Binary activation packs (NCAP), classifier snapshots (NCLF) and the JSON
//! epoch manifest that ties them together.
//!
//! Both binary formats are little-endian with no padding:
//!
//! ```text
//! NCAP: "NCAP" | version u32 | p u32 | C u32 | N u32 | C·N·p f64 (class-major rows)
//! NCLF: "NCLF" | version u32 | C u32 | p u32 | C·p f64 (W row-major) | C f64 (b)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PACK_MAGIC: [u8; 4] = *b"NCAP";
pub const CLASSIFIER_MAGIC: [u8; 4] = *b"NCLF";
pub const FORMAT_VERSION: u32 = 1;
pub const PACK_HEADER_LEN: usize = 20;
pub const CLASSIFIER_HEADER_LEN: usize = 16;

/// Default cap on the payload a reader will accept: 8 GiB.
pub const DEFAULT_MAX_PAYLOAD: u64 = 8 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadLimits {
    pub max_payload_bytes: u64,
}

impl Default for ReadLimits {
    fn default() -> Self {
        ReadLimits {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
        }
    }
}

/// A balanced, labelled set of last-layer activations.
///
/// Rows are stored class-major: all `N` rows of class 0, then class 1, and
/// so on, each row holding `p` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPack {
    feature_dim: usize,
    num_classes: usize,
    per_class: usize,
    data: Vec<f64>,
}

impl ActivationPack {
    pub fn new(feature_dim: usize, num_classes: usize, per_class: usize, data: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 || per_class == 0 {
            return Err(Error::arg("feature_dim and per_class must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::arg(format!("need at least 2 classes, got {num_classes}")));
        }
        let expected = feature_dim
            .checked_mul(num_classes)
            .and_then(|v| v.checked_mul(per_class))
            .ok_or_else(|| Error::arg("pack dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::dims(format!(
                "expected {expected} values for p={feature_dim}, C={num_classes}, N={per_class}, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(ActivationPack {
            feature_dim,
            num_classes,
            per_class,
            data,
        })
    }

    /// Build from per-class row lists. Every class must hold the same number
    /// of rows and every row the same length.
    pub fn from_classes(classes: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_classes = classes.len();
        if num_classes < 2 {
            return Err(Error::arg(format!("need at least 2 classes, got {num_classes}")));
        }
        let per_class = classes[0].len();
        if let Some((c, rows)) = classes.iter().enumerate().find(|(_, r)| r.len() != per_class) {
            return Err(Error::Unbalanced(format!(
                "class 0 has {per_class} rows but class {c} has {}",
                rows.len()
            )));
        }
        let feature_dim = classes[0].first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(feature_dim * num_classes * per_class);
        for rows in classes {
            for row in rows {
                if row.len() != feature_dim {
                    return Err(Error::dims(format!(
                        "row of length {} in a pack with p={feature_dim}",
                        row.len()
                    )));
                }
                data.extend_from_slice(row);
            }
        }
        ActivationPack::new(feature_dim, num_classes, per_class, data)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn num_rows(&self) -> usize {
        self.num_classes * self.per_class
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let p = self.feature_dim;
        &self.data[index * p..(index + 1) * p]
    }

    pub fn class_row(&self, class: usize, i: usize) -> &[f64] {
        self.row(class * self.per_class + i)
    }

    /// Rows with their class labels, in storage order.
    pub fn labelled_rows(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.data
            .chunks_exact(self.feature_dim)
            .enumerate()
            .map(move |(i, r)| (i / self.per_class, r))
    }

    pub fn class_rows(&self, class: usize) -> impl Iterator<Item = &[f64]> + '_ {
        let p = self.feature_dim;
        let start = class * self.per_class * p;
        self.data[start..start + self.per_class * p].chunks_exact(p)
    }

    pub fn encoded_len(&self) -> usize {
        PACK_HEADER_LEN + 8 * self.data.len()
    }
}

/// Last-layer classifier: `W` is `C × p`, `b` has length `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSnapshot {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl ClassifierSnapshot {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dims(format!(
                "W has {} rows but b has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.nrows() < 2 || weights.ncols() == 0 {
            return Err(Error::arg("classifier needs C >= 2 and p >= 1"));
        }
        check_finite(weights.as_slice())?;
        check_finite(bias.as_slice())?;
        Ok(ClassifierSnapshot { weights, bias })
    }

    /// Build from a row-major `C × p` weight buffer.
    pub fn from_row_major(num_classes: usize, feature_dim: usize, weights: &[f64], bias: &[f64]) -> Result<Self> {
        if weights.len() != num_classes * feature_dim {
            return Err(Error::dims(format!(
                "expected {} weights, got {}",
                num_classes * feature_dim,
                weights.len()
            )));
        }
        ClassifierSnapshot::new(
            DMatrix::from_row_slice(num_classes, feature_dim, weights),
            DVector::from_column_slice(bias),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Fails with a dimension mismatch unless this classifier fits `pack`.
    pub fn check_against(&self, pack: &ActivationPack) -> Result<()> {
        if self.num_classes() != pack.num_classes() || self.feature_dim() != pack.feature_dim() {
            return Err(Error::dims(format!(
                "classifier is C={}, p={} but pack is C={}, p={}",
                self.num_classes(),
                self.feature_dim(),
                pack.num_classes(),
                pack.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        CLASSIFIER_HEADER_LEN + 8 * (self.weights.len() + self.bias.len())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::arg(format!("{what}={value} does not fit in u32")))
}

pub fn write_pack<W: Write>(pack: &ActivationPack, mut out: W) -> Result<()> {
    check_finite(&pack.data)?;
    let mut buf = Vec::with_capacity(pack.encoded_len());
    buf.extend_from_slice(&PACK_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim_u32(pack.feature_dim, "p")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(pack.num_classes, "C")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(pack.per_class, "N")?.to_le_bytes());
    for v in &pack.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_pack<R: Read>(input: R) -> Result<ActivationPack> {
    read_pack_with(input, ReadLimits::default())
}

pub fn read_pack_with<R: Read>(mut input: R, limits: ReadLimits) -> Result<ActivationPack> {
    let header = read_header(&mut input, PACK_MAGIC, PACK_HEADER_LEN)?;
    let p = header[0] as usize;
    let c = header[1] as usize;
    let n = header[2] as usize;
    let count = (p as u64).saturating_mul(c as u64).saturating_mul(n as u64);
    let data = read_floats(&mut input, count, limits)?;
    ActivationPack::new(p, c, n, data)
}

pub fn write_classifier<W: Write>(clf: &ClassifierSnapshot, mut out: W) -> Result<()> {
    check_finite(clf.weights.as_slice())?;
    check_finite(clf.bias.as_slice())?;
    let (c, p) = clf.weights.shape();
    let mut buf = Vec::with_capacity(clf.encoded_len());
    buf.extend_from_slice(&CLASSIFIER_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim_u32(c, "C")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(p, "p")?.to_le_bytes());
    for row in clf.weights.row_iter() {
        for v in row.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in clf.bias.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_classifier<R: Read>(input: R) -> Result<ClassifierSnapshot> {
    read_classifier_with(input, ReadLimits::default())
}

pub fn read_classifier_with<R: Read>(mut input: R, limits: ReadLimits) -> Result<ClassifierSnapshot> {
    let header = read_header(&mut input, CLASSIFIER_MAGIC, CLASSIFIER_HEADER_LEN)?;
    let c = header[0] as usize;
    let p = header[1] as usize;
    let count = (c as u64).saturating_mul(p as u64).saturating_add(c as u64);
    let data = read_floats(&mut input, count, limits)?;
    let (w, b) = data.split_at(c * p);
    ClassifierSnapshot::from_row_major(c, p, w, b)
}

/// Reads magic + version and returns the remaining u32 header fields.
fn read_header<R: Read>(input: &mut R, magic: [u8; 4], len: usize) -> Result<Vec<u32>> {
    let mut header = vec![0u8; len];
    read_exact_or_truncated(input, &mut header)?;
    let found: [u8; 4] = header[0..4].try_into().expect("4-byte slice");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let fields: Vec<u32> = header[4..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    if fields[0] != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(fields[0]));
    }
    Ok(fields[1..].to_vec())
}

fn read_exact_or_truncated<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    needed: buf.len() as u64,
                    available: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn read_floats<R: Read>(input: &mut R, count: u64, limits: ReadLimits) -> Result<Vec<f64>> {
    let declared = count.saturating_mul(8);
    if declared > limits.max_payload_bytes {
        return Err(Error::OversizeDeclaration {
            declared,
            cap: limits.max_payload_bytes,
        });
    }
    // Grow with the data actually present rather than trusting the header.
    let mut bytes = Vec::with_capacity(declared.min(1 << 20) as usize);
    input.by_ref().take(declared).read_to_end(&mut bytes)?;
    if (bytes.len() as u64) < declared {
        return Err(Error::Truncated {
            needed: declared,
            available: bytes.len() as u64,
        });
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::arg("trailing bytes after payload"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    check_finite(&values)?;
    Ok(values)
}

pub fn write_pack_file(pack: &ActivationPack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pack(pack, BufWriter::new(file))
}

pub fn read_pack_file(path: impl AsRef<Path>) -> Result<ActivationPack> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pack(BufReader::new(file))
}

pub fn write_classifier_file(clf: &ClassifierSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_classifier(clf, BufWriter::new(file))
}

pub fn read_classifier_file(path: impl AsRef<Path>) -> Result<ClassifierSnapshot> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_classifier(BufReader::new(file))
}

/// One manifest entry. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub epoch: u64,
    pub pack: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_pack: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub epochs: Vec<EpochEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl EpochManifest {
    pub fn new(epochs: Vec<EpochEntry>, meta: BTreeMap<String, serde_json::Value>) -> Self {
        EpochManifest {
            epochs,
            meta,
            base_dir: None,
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Checks that epoch indices strictly increase.
    pub fn validate_order(&self) -> Result<()> {
        for pair in self.epochs.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::Manifest(format!(
                    "epoch indices must strictly increase ({} follows {})",
                    pair[1].epoch, pair[0].epoch
                )));
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists.
    pub fn validate_files(&self) -> Result<()> {
        for entry in &self.epochs {
            let paths = std::iter::once(&entry.pack)
                .chain(entry.classifier.as_ref())
                .chain(entry.test_pack.as_ref());
            for p in paths {
                let resolved = self.resolve(p);
                if !resolved.is_file() {
                    return Err(Error::Manifest(format!(
                        "epoch {}: missing file {}",
                        entry.epoch,
                        resolved.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: EpochManifest = serde_json::from_str(text)?;
        manifest.validate_order()?;
        Ok(manifest)
    }

    /// Parse and validate the manifest, anchoring relative paths at its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = EpochManifest::from_json(&text)?.with_base_dir(base);
        manifest.validate_files()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pack() -> ActivationPack {
        ActivationPack::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn pack_layout_is_52_bytes() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        assert_eq!(buf.len(), 52);
        assert_eq!(&buf[..4], b"NCAP");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1u32.to_le_bytes());
        assert_eq!(&buf[20..28], &1.0f64.to_le_bytes());
        assert_eq!(&buf[44..52], &1.0f64.to_le_bytes());
    }

    #[test]
    fn pack_round_trip() {
        let pack = tiny_pack();
        let mut buf = Vec::new();
        write_pack(&pack, &mut buf).unwrap();
        assert_eq!(read_pack(&buf[..]).unwrap(), pack);
    }

    #[test]
    fn nan_is_refused() {
        let err = ActivationPack::new(1, 2, 1, vec![0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("non-finite value"), "{err}");
    }

    #[test]
    fn non_finite_on_disk_is_rejected() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        buf[20..28].copy_from_slice(&f64::INFINITY.to_le_bytes());
        let err = read_pack(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("non-finite value"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        let err = read_pack(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn unsupported_version() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        buf[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_pack(&buf[..]), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        buf[16..20].copy_from_slice(&5u32.to_le_bytes());
        let err = read_pack(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let err = read_pack(&buf[..10]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn oversize_declaration_is_rejected_before_allocation() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"NCAP");
        for v in [1u32, u32::MAX, u32::MAX, u32::MAX] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(read_pack(&buf[..]), Err(Error::OversizeDeclaration { .. })));

        let mut small = Vec::new();
        write_pack(&tiny_pack(), &mut small).unwrap();
        let limits = ReadLimits { max_payload_bytes: 16 };
        assert!(matches!(
            read_pack_with(&small[..], limits),
            Err(Error::OversizeDeclaration { declared: 32, cap: 16 })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = Vec::new();
        write_pack(&tiny_pack(), &mut buf).unwrap();
        buf.push(0);
        assert!(read_pack(&buf[..]).is_err());
    }

    #[test]
    fn unbalanced_classes_rejected() {
        let classes = vec![vec![vec![1.0], vec![2.0]], vec![vec![3.0]]];
        let err = ActivationPack::from_classes(&classes).unwrap_err();
        assert!(matches!(err, Error::Unbalanced(_)));
    }

    #[test]
    fn single_class_rejected() {
        assert!(ActivationPack::new(1, 1, 2, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn classifier_layout_and_round_trip() {
        let clf = ClassifierSnapshot::from_row_major(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[-1.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_classifier(&clf, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 48 + 16);
        assert_eq!(&buf[..4], b"NCLF");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        // second weight in row-major order
        assert_eq!(&buf[24..32], &2.0f64.to_le_bytes());
        assert_eq!(&buf[64..72], &(-1.0f64).to_le_bytes());
        assert_eq!(read_classifier(&buf[..]).unwrap(), clf);
    }

    #[test]
    fn classifier_pack_dimension_mismatch() {
        let clf = ClassifierSnapshot::from_row_major(2, 3, &[0.0; 6], &[0.0; 2]).unwrap();
        let err = clf.check_against(&tiny_pack()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn manifest_json_shape() {
        let text = r#"{"epochs":[{"epoch":1,"pack":"a.ncap"},{"epoch":3,"pack":"b.ncap","classifier":"b.nclf","test_pack":"t.ncap"}],"meta":{"dataset":"toy"}}"#;
        let m = EpochManifest::from_json(text).unwrap();
        assert_eq!(m.epochs.len(), 2);
        assert_eq!(m.epochs[1].classifier.as_deref(), Some(Path::new("b.nclf")));
        assert_eq!(m.meta["dataset"], "toy");
        let back = EpochManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn manifest_requires_increasing_epochs() {
        let text = r#"{"epochs":[{"epoch":2,"pack":"a"},{"epoch":2,"pack":"b"}]}"#;
        assert!(matches!(EpochManifest::from_json(text), Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_load_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        write_pack_file(&tiny_pack(), dir.path().join("a.ncap")).unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"epochs":[{"epoch":0,"pack":"a.ncap"}]}"#).unwrap();
        let m = EpochManifest::load(&path).unwrap();
        assert_eq!(read_pack_file(m.resolve(&m.epochs[0].pack)).unwrap(), tiny_pack());

        std::fs::write(&path, r#"{"epochs":[{"epoch":0,"pack":"missing.ncap"}]}"#).unwrap();
        assert!(EpochManifest::load(&path).is_err());
    }
}
