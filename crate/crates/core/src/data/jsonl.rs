use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{DataError, Example, PlatformDataset};

/// Reads a JSONL corpus from disk. See [`parse_jsonl`].
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PlatformDataset>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&text)
}

/// Parses one `{"text": .., "label": 0|1, "platform": ..}` object per
/// line, grouping by platform in order of first appearance. Blank lines
/// are skipped; line numbers in errors are 1-based.
pub fn parse_jsonl(input: &str) -> Result<Vec<PlatformDataset>, DataError> {
    let mut datasets: Vec<PlatformDataset> = Vec::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let example = parse_line(raw, line)?;
        match datasets.iter_mut().find(|d| d.platform == example.platform) {
            Some(d) => d.examples.push(example),
            None => datasets.push(PlatformDataset {
                platform: example.platform.clone(),
                examples: vec![example],
            }),
        }
    }
    if datasets.is_empty() {
        return Err(DataError::NoExamples);
    }
    Ok(datasets)
}

fn parse_line(raw: &str, line: usize) -> Result<Example, DataError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| DataError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(DataError::Malformed {
            line,
            message: "expected a JSON object".into(),
        });
    };

    let text = string_field(&obj, "text", line)?;
    let platform = string_field(&obj, "platform", line)?;
    if platform.is_empty() {
        return Err(DataError::Malformed {
            line,
            message: "platform must be non-empty".into(),
        });
    }
    let label = match obj.get("label") {
        None => return Err(DataError::MissingField { line, field: "label" }),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => 0,
            Some(1) => 1,
            _ => {
                return Err(DataError::BadLabel {
                    line,
                    value: n.to_string(),
                })
            }
        },
        Some(other) => {
            return Err(DataError::BadLabel {
                line,
                value: other.to_string(),
            })
        }
    };
    Ok(Example {
        text,
        label,
        platform,
    })
}

fn string_field(obj: &Map<String, Value>, field: &'static str, line: usize) -> Result<String, DataError> {
    match obj.get(field) {
        None => Err(DataError::MissingField { line, field }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DataError::Malformed {
            line,
            message: format!("`{field}` must be a string"),
        }),
    }
}

/// Writes every example, platform by platform, one JSON object per line.
pub fn write_jsonl<W: Write>(datasets: &[PlatformDataset], mut out: W) -> io::Result<()> {
    for d in datasets {
        for e in &d.examples {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
