use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use super::csv_error;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Request {
    pub input_len: usize,
    pub output_len: usize,
}

/// Non-empty list of requests with lengths of at least one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTrace {
    requests: Vec<Request>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSummary {
    pub requests: usize,
    pub mean_input: f64,
    pub mean_output: f64,
}

impl RequestTrace {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        if requests.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "trace has no requests".into(),
            });
        }
        if let Some(i) = requests.iter().position(|r| r.input_len == 0 || r.output_len == 0) {
            return Err(Error::Parse {
                line: i + 1,
                message: "request lengths must be at least 1".into(),
            });
        }
        Ok(Self { requests })
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn summary(&self) -> TraceSummary {
        let n = self.requests.len() as f64;
        let (si, so) = self
            .requests
            .iter()
            .fold((0u64, 0u64), |(a, b), r| (a + r.input_len as u64, b + r.output_len as u64));
        TraceSummary {
            requests: self.requests.len(),
            mean_input: si as f64 / n,
            mean_output: so as f64 / n,
        }
    }
}

/// Parses `input_len,output_len` rows. A first row that is not numeric is
/// taken as a header.
pub fn parse_trace<R: Read>(reader: R) -> Result<RequestTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut requests = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let is_header = first && record.get(0).is_some_and(|f| f.parse::<f64>().is_err());
        first = false;
        if is_header {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let field = |i: usize, what: &str| -> Result<usize> {
            let raw = &record[i];
            match raw.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("{what} `{raw}` is not a positive integer"),
                }),
            }
        };
        requests.push(Request {
            input_len: field(0, "input length")?,
            output_len: field(1, "output length")?,
        });
    }
    if requests.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "trace has no requests".into(),
        });
    }
    RequestTrace::new(requests)
}

pub fn ingest_trace(path: &Path) -> Result<RequestTrace> {
    parse_trace(File::open(path)?)
}

pub fn write_trace_csv<W: Write>(trace: &RequestTrace, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["input_len", "output_len"]).map_err(csv_error)?;
    for r in trace.requests() {
        wtr.write_record([r.input_len.to_string(), r.output_len.to_string()])
            .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Lengths are `1 + Geometric(1 / mean)`, so each has the requested mean.
pub fn synthetic_trace(mean_input: f64, mean_output: f64, count: usize, seed: u64) -> Result<RequestTrace> {
    if count == 0 {
        return Err(Error::config("synthetic trace needs at least one request"));
    }
    let geometric = |mean: f64, what: &str| {
        if mean < 1.0 || !mean.is_finite() {
            return Err(Error::config(format!("{what} mean length must be >= 1, got {mean}")));
        }
        Geometric::new(1.0 / mean).map_err(|e| Error::config(e.to_string()))
    };
    let gin = geometric(mean_input, "input")?;
    let gout = geometric(mean_output, "output")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requests = (0..count)
        .map(|_| Request {
            input_len: 1 + gin.sample(&mut rng) as usize,
            output_len: 1 + gout.sample(&mut rng) as usize,
        })
        .collect();
    RequestTrace::new(requests)
}

/// Mean input/output lengths of public datasets on LLaMA-style tokenizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Dolly,
    Arxiv,
    Gsm8k,
}

impl Dataset {
    pub fn mean_lengths(&self) -> (f64, f64) {
        match self {
            Dataset::Dolly => (22.25, 246.87),
            Dataset::Arxiv => (8575.45, 227.08),
            Dataset::Gsm8k => (66.03, 126.79),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dataset::Dolly => "dolly",
            Dataset::Arxiv => "arxiv",
            Dataset::Gsm8k => "gsm8k",
        }
    }

    pub fn synthetic(&self, count: usize, seed: u64) -> Result<RequestTrace> {
        let (i, o) = self.mean_lengths();
        synthetic_trace(i, o, count, seed)
    }
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dolly" => Ok(Dataset::Dolly),
            "arxiv" => Ok(Dataset::Arxiv),
            "gsm8k" => Ok(Dataset::Gsm8k),
            other => Err(Error::config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let t = parse_trace("22,247\n".as_bytes()).unwrap();
        assert_eq!(t.requests(), &[Request { input_len: 22, output_len: 247 }]);
    }

    #[test]
    fn optional_header() {
        let t = parse_trace("input_len,output_len\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.summary().mean_input, 2.0);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(parse_trace("".as_bytes()), Err(Error::Parse { .. })));
        match parse_trace("1,2\n3,x\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_trace("1,2\n0,4\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_trace("1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip() {
        let t = synthetic_trace(10.0, 20.0, 50, 3).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&t, &mut buf).unwrap();
        assert_eq!(parse_trace(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn synthetic_means() {
        let t = Dataset::Dolly.synthetic(4000, 1).unwrap();
        let s = t.summary();
        assert!((s.mean_input / 22.25 - 1.0).abs() < 0.05, "{s:?}");
        assert!((s.mean_output / 246.87 - 1.0).abs() < 0.05, "{s:?}");
        assert_eq!(t, Dataset::Dolly.synthetic(4000, 1).unwrap());
    }
}
