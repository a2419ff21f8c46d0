use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Interaction};

const COLUMNS: [&str; 3] = ["user_id", "item_id", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionFormat {
    Tsv,
    Csv,
    Jsonl,
}

impl InteractionFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" | "txt" => Some(Self::Tsv),
            "csv" => Some(Self::Csv),
            "jsonl" | "json" => Some(Self::Jsonl),
            _ => None,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            Self::Csv => b',',
            _ => b'\t',
        }
    }
}

impl FromStr for InteractionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Self::Tsv),
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(format!("unknown interaction format `{other}` (tsv, csv, jsonl)")),
        }
    }
}

/// Reads interaction records in file order. A `user_id,item_id,timestamp`
/// header row is optional for delimited formats.
pub fn load_interactions(path: impl AsRef<Path>, format: InteractionFormat) -> Result<Vec<Interaction>, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    match format {
        InteractionFormat::Jsonl => read_jsonl(BufReader::new(file), path),
        _ => read_delimited(file, format.delimiter()),
    }
}

fn non_empty(value: &str, field: &str, line: usize) -> Result<String, DatasetError> {
    let v = value.trim();
    if v.is_empty() {
        return Err(DatasetError::Schema {
            line,
            field: field.to_string(),
        });
    }
    Ok(v.to_string())
}

fn parse_timestamp(value: &str, line: usize) -> Result<i64, DatasetError> {
    value.trim().parse().map_err(|_| DatasetError::Parse {
        line,
        message: format!("timestamp `{}` is not an integer", value.trim()),
    })
}

fn read_delimited(file: File, delimiter: u8) -> Result<Vec<Interaction>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record = record.map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        if n == 0 && record.iter().map(str::trim).eq(COLUMNS) {
            continue;
        }
        if record.len() != 3 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 3 columns, found {}", record.len()),
            });
        }
        out.push(Interaction {
            user_id: non_empty(&record[0], "user_id", line)?,
            item_id: non_empty(&record[1], "item_id", line)?,
            timestamp: parse_timestamp(&record[2], line)?,
        });
    }
    Ok(out)
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<Interaction>, DatasetError> {
    let mut out = Vec::new();
    for (n, text) in reader.lines().enumerate() {
        let line = n + 1;
        let text = text.map_err(|e| DatasetError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |name: &str| -> Result<&serde_json::Value, DatasetError> {
            value.get(name).ok_or_else(|| DatasetError::Schema {
                line,
                field: name.to_string(),
            })
        };
        let id = |name: &str| -> Result<String, DatasetError> {
            match field(name)? {
                serde_json::Value::String(s) => non_empty(s, name, line),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                _ => Err(DatasetError::Parse {
                    line,
                    message: format!("`{name}` must be a string"),
                }),
            }
        };
        let timestamp = match field("timestamp")? {
            serde_json::Value::Number(n) => n.as_i64().ok_or_else(|| DatasetError::Parse {
                line,
                message: format!("timestamp `{n}` is not an integer"),
            })?,
            serde_json::Value::String(s) => parse_timestamp(s, line)?,
            _ => {
                return Err(DatasetError::Parse {
                    line,
                    message: "timestamp must be an integer".to_string(),
                })
            }
        };
        out.push(Interaction {
            user_id: id("user_id")?,
            item_id: id("item_id")?,
            timestamp,
        });
    }
    Ok(out)
}

/// Writes records with a header row (delimited) or one object per line.
pub fn write_interactions(
    path: impl AsRef<Path>,
    format: InteractionFormat,
    interactions: &[Interaction],
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let result = (|| -> std::io::Result<()> {
        match format {
            InteractionFormat::Jsonl => {
                for r in interactions {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
            }
            _ => {
                let sep = format.delimiter() as char;
                writeln!(w, "{}", COLUMNS.join(&sep.to_string()))?;
                for r in interactions {
                    writeln!(w, "{}{sep}{}{sep}{}", r.user_id, r.item_id, r.timestamp)?;
                }
            }
        }
        w.flush()
    })();
    result.map_err(|e| DatasetError::io(path, e))
}
