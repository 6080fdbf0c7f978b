//! Crash reports: frames, parsing of the JSON-lines report format, loop
//! compression, and tokenization.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type DeveloperId = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StackFrame {
    pub method: Option<String>,
    pub file: Option<String>,
    pub subsystem: Option<String>,
    pub commit: Option<String>,
    /// 1-based line number of the failing statement.
    #[serde(rename = "line")]
    pub error_line: Option<u32>,
}

impl StackFrame {
    /// The (file, commit) key used to look up the blame annotation.
    pub fn annotation_key(&self) -> Option<(&str, &str)> {
        Some((self.file.as_deref()?, self.commit.as_deref()?))
    }

    pub fn token(&self, mode: TokenMode) -> Option<&str> {
        match mode {
            TokenMode::File => self.file.as_deref(),
            TokenMode::Method => self.method.as_deref(),
            TokenMode::Subsystem => self.subsystem.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackTrace {
    #[serde(rename = "id")]
    pub report_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub fixer: Option<DeveloperId>,
    /// Index 0 is the top of the stack.
    pub frames: Vec<StackFrame>,
}

impl StackTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("stack trace serializes")
    }
}

/// Which frame field becomes the text token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    #[default]
    File,
    Method,
    Subsystem,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub source_frame_indices: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn opt_string(obj: &Map<String, Value>, field: &'static str, line: usize) -> Result<Option<String>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(Error::Parse {
            line,
            message: format!("field `{field}` must be a string or null, got {other}"),
        }),
    }
}

fn required<'a>(obj: &'a Map<String, Value>, field: &'static str, line: usize) -> Result<&'a Value> {
    obj.get(field).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field `{field}`"),
    })
}

/// Parses one report record. `line` is only used for error messages.
pub fn parse_report_at(raw: &str, line: usize) -> Result<StackTrace> {
    let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::Parse {
            line,
            message: "report must be a JSON object".into(),
        });
    };

    let report_id = match required(&obj, "id", line)? {
        Value::String(s) => s.clone(),
        other => {
            return Err(Error::Parse {
                line,
                message: format!("field `id` must be a string, got {other}"),
            })
        }
    };
    let timestamp = required(&obj, "timestamp", line)?
        .as_i64()
        .ok_or_else(|| Error::Parse {
            line,
            message: "field `timestamp` must be an integer".into(),
        })?;
    let fixer = opt_string(&obj, "fixer", line)?;
    let Value::Array(raw_frames) = required(&obj, "frames", line)? else {
        return Err(Error::Parse {
            line,
            message: "field `frames` must be an array".into(),
        });
    };

    let mut frames = Vec::with_capacity(raw_frames.len());
    for (i, raw_frame) in raw_frames.iter().enumerate() {
        let Value::Object(f) = raw_frame else {
            return Err(Error::Parse {
                line,
                message: format!("field `frames[{i}]` must be an object"),
            });
        };
        let error_line = match f.get("line") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let n = v.as_u64().ok_or_else(|| Error::Parse {
                    line,
                    message: format!("field `frames[{i}].line` must be a positive integer"),
                })?;
                if n == 0 || n > u32::MAX as u64 {
                    return Err(Error::validation("frames.line", format!("line {n} out of range")));
                }
                Some(n as u32)
            }
        };
        frames.push(StackFrame {
            method: opt_string(f, "method", line)?,
            file: opt_string(f, "file", line)?,
            subsystem: opt_string(f, "subsystem", line)?,
            commit: opt_string(f, "commit", line)?,
            error_line,
        });
    }
    if frames.is_empty() {
        return Err(Error::validation(
            "frames",
            format!("report `{report_id}` has no frames"),
        ));
    }

    Ok(StackTrace {
        report_id,
        timestamp,
        fixer,
        frames,
    })
}

pub fn parse_report(raw: &str) -> Result<StackTrace> {
    parse_report_at(raw, 1)
}

/// Parses a JSON-lines reports file; blank lines are ignored.
pub fn parse_reports(raw: &str) -> Result<Vec<StackTrace>> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_report_at(l, i + 1))
        .collect()
}

/// Length of the run of consecutive copies of `frames[start..start + period]`.
fn repeat_count<T: PartialEq>(frames: &[T], start: usize, period: usize) -> usize {
    let mut count = 1;
    let mut next = start + period;
    while next + period <= frames.len() && frames[start..start + period] == frames[next..next + period] {
        count += 1;
        next += period;
    }
    count
}

/// Leftmost tandem repeat: smallest start, then smallest period. Returns
/// (start, period, count) with count >= 2.
fn leftmost_repeat<T: PartialEq>(frames: &[T]) -> Option<(usize, usize, usize)> {
    let n = frames.len();
    for start in 0..n {
        for period in 1..=(n - start) / 2 {
            if frames[start] != frames[start + period] {
                continue;
            }
            let count = repeat_count(frames, start, period);
            if count >= 2 {
                return Some((start, period, count));
            }
        }
    }
    None
}

/// Collapses consecutive repeats of any block of items to a single copy,
/// always taking the leftmost, shortest repeat first, until none remain.
pub fn compress_sequence<T: PartialEq>(mut items: Vec<T>) -> Vec<T> {
    while let Some((start, period, count)) = leftmost_repeat(&items) {
        let block_end = start + period;
        items.drain(block_end..start + period * count);
    }
    items
}

/// Replaces recursion loops with their first occurrence.
pub fn compress_loops(trace: &StackTrace) -> StackTrace {
    StackTrace {
        frames: compress_sequence(trace.frames.clone()),
        ..trace.clone()
    }
}

pub fn tokenize(trace: &StackTrace, mode: TokenMode) -> TokenSequence {
    let mut seq = TokenSequence::default();
    for (i, frame) in trace.frames.iter().enumerate() {
        if let Some(tok) = frame.token(mode) {
            seq.tokens.push(tok.to_owned());
            seq.source_frame_indices.push(i);
        }
    }
    seq
}
