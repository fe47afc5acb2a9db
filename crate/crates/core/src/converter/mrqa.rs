//! MRQA-style JSON Lines reader.
//!
//! Each record line holds a `context` and a list of `qas`; answer locations
//! come from `detected_answers[].char_spans`, whose end offsets are inclusive
//! in the upstream format. They are converted to half-open char ranges here.
//! A first line carrying a `header` key is skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::Deserialize;

use super::ConvertError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQa {
    pub qid: String,
    pub question: String,
    /// Half-open char ranges into the record's context.
    pub spans: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub context: String,
    pub qas: Vec<RawQa>,
}

#[derive(Deserialize)]
struct LineRecord {
    context: String,
    #[serde(default)]
    qas: Vec<LineQa>,
}

#[derive(Deserialize)]
struct LineQa {
    qid: String,
    question: String,
    #[serde(default)]
    detected_answers: Vec<LineDetected>,
}

#[derive(Deserialize)]
struct LineDetected {
    #[serde(default)]
    char_spans: Vec<(usize, usize)>,
}

fn parse_line(line: &str, line_no: usize) -> Result<RawRecord, ConvertError> {
    let rec: LineRecord = serde_json::from_str(line).map_err(|e| ConvertError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let qas = rec
        .qas
        .into_iter()
        .map(|qa| {
            let mut spans = Vec::new();
            for d in qa.detected_answers {
                for (s, e_incl) in d.char_spans {
                    if e_incl < s {
                        return Err(ConvertError::Parse {
                            line: line_no,
                            message: format!("inverted char span [{s}, {e_incl}]"),
                        });
                    }
                    spans.push((s, e_incl + 1));
                }
            }
            Ok(RawQa {
                qid: qa.qid,
                question: qa.question,
                spans,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(RawRecord {
        context: rec.context,
        qas,
    })
}

fn is_header(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key("header")))
        .unwrap_or(false)
}

/// Parses every record, reporting the 1-based line of the first bad one.
pub fn parse_stream<R: BufRead>(reader: R) -> Result<Vec<RawRecord>, ConvertError> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && is_header(&line) {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Opens plain or gzip-compressed JSON Lines, sniffing the gzip magic bytes.
pub fn open_input(path: impl AsRef<Path>) -> std::io::Result<Box<dyn BufRead>> {
    let mut file = File::open(path.as_ref())?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path.as_ref())?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}
