use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MANIFEST_MAGIC: &str = "ADMF";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// Sample file path relative to the manifest's directory.
    pub path: String,
    pub flow_magnitude: f64,
    pub entropy: f64,
}

/// Ordered list of stored samples.
///
/// ```text
/// ADMF 1 <count>
/// <relative-path> <flow_magnitude> <entropy>
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MANIFEST_MAGIC} {MANIFEST_VERSION} {}\n", self.records.len());
        for r in &self.records {
            if r.path.is_empty() || r.path.chars().any(char::is_whitespace) {
                return Err(Error::Argument(format!("sample path {:?} is empty or contains whitespace", r.path)));
            }
            writeln!(out, "{} {} {}", r.path, r.flow_magnitude, r.entropy).expect("string write");
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty manifest"))?;
        let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
            [MANIFEST_MAGIC, v, n] => {
                if v.parse::<u32>() != Ok(MANIFEST_VERSION) {
                    return Err(parse_err(1, format!("unsupported manifest version {v:?}")));
                }
                n.parse::<usize>().map_err(|_| parse_err(1, format!("bad record count {n:?}")))?
            }
            _ => return Err(parse_err(1, format!("expected \"{MANIFEST_MAGIC} {MANIFEST_VERSION} <count>\", got {header:?}"))),
        };
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for (i, line) in lines.enumerate() {
            let no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let [path, flow, entropy] = line.split_whitespace().collect::<Vec<_>>()[..] else {
                return Err(parse_err(no, "expected <path> <flow_magnitude> <entropy>"));
            };
            let number = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| parse_err(no, format!("{what} {s:?} is not a non-negative number")))
            };
            records.push(ManifestRecord {
                path: path.to_string(),
                flow_magnitude: number(flow, "flow magnitude")?,
                entropy: number(entropy, "entropy")?,
            });
        }
        if records.len() != count {
            return Err(parse_err(1, format!("header declares {count} records, found {}", records.len())));
        }
        Ok(Self { records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_round_trip() {
        let m = DatasetManifest::default();
        assert_eq!(m.to_text().unwrap(), "ADMF 1 0\n");
        assert_eq!(DatasetManifest::parse("ADMF 1 0\n").unwrap(), m);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(matches!(DatasetManifest::parse("ADMF 1 x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(DatasetManifest::parse("ADMF 1 2\na 1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(DatasetManifest::parse("ADMF 1 1\na 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(DatasetManifest::parse("ADMF 1 2\na 1 2\nb -1 0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(DatasetManifest::parse("XYZ 1 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(DatasetManifest::parse("").is_err());
    }

    #[test]
    fn whitespace_paths_rejected() {
        let m = DatasetManifest {
            records: vec![ManifestRecord {
                path: "a b".into(),
                flow_magnitude: 0.0,
                entropy: 0.0,
            }],
        };
        assert!(m.to_text().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(entries in prop::collection::vec(("[a-z0-9_/]{1,12}\\.bin", 0.0f64..1e3, 0.0f64..8.0), 0..20)) {
            let m = DatasetManifest {
                records: entries
                    .into_iter()
                    .map(|(path, flow_magnitude, entropy)| ManifestRecord { path, flow_magnitude, entropy })
                    .collect(),
            };
            prop_assert_eq!(DatasetManifest::parse(&m.to_text().unwrap()).unwrap(), m);
        }
    }
}
