//! QA corpus loading and stream partitioning.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grading;

/// Task family; drives answer extraction and grading rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Arithmetic,
    YesNo,
    SymbolicString,
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arithmetic" => Ok(TaskKind::Arithmetic),
            "yesno" | "yes-no" => Ok(TaskKind::YesNo),
            "symbolic" | "symbolic-string" | "letter" => Ok(TaskKind::SymbolicString),
            other => Err(format!(
                "unknown task kind '{other}' (expected arithmetic, yesno, or symbolic)"
            )),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Arithmetic => write!(f, "arithmetic"),
            TaskKind::YesNo => write!(f, "yesno"),
            TaskKind::SymbolicString => write!(f, "symbolic"),
        }
    }
}

/// One question with its canonicalized gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub task: TaskKind,
}

/// An ordered corpus of samples sharing one task kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: TaskKind,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One stream slice: the `k`-th batch of the partitioned corpus (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: no records loaded")]
    Empty { path: String },
    #[error("limit {limit} exceeds record count {available}")]
    LimitExceedsRecords { limit: usize, available: usize },
    #[error("limit must be positive")]
    ZeroLimit,
    #[error("cannot partition into {m} batches (dataset has {size} samples)")]
    BadPartition { m: usize, size: usize },
}

#[derive(Deserialize)]
struct RawRecord {
    question: String,
    answer: serde_json::Value,
    #[serde(default)]
    id: Option<String>,
}

/// Loads a line-delimited JSON corpus, preserving file order.
///
/// Each line holds `question` (string), `answer` (string or number; booleans
/// are accepted for yes/no corpora), and an optional `id`. An answer carrying
/// a `#### <final>` marker keeps only the text after the last marker. Gold
/// answers are canonicalized with the grading rules at load time. Missing ids
/// become `<file-stem>:<line-number>`.
pub fn load_dataset(
    path: impl AsRef<Path>,
    task: TaskKind,
    limit: Option<usize>,
) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    let file = File::open(path).map_err(|source| DatasetError::Unreadable {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut samples = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Unreadable {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                path: display.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        if record.question.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                path: display.clone(),
                line: line_no,
                message: "empty question".to_string(),
            });
        }
        let raw_answer = answer_text(&record.answer).ok_or_else(|| DatasetError::MalformedRecord {
            path: display.clone(),
            line: line_no,
            message: "answer must be a string, number, or boolean".to_string(),
        })?;
        // GSM8K-style rationales end "... #### <final answer>".
        let final_answer = match raw_answer.rfind("####") {
            Some(pos) => raw_answer[pos + 4..].trim().to_string(),
            None => raw_answer,
        };
        let gold = grading::canonicalize(&final_answer, task);
        if gold.is_empty() {
            return Err(DatasetError::MalformedRecord {
                path: display.clone(),
                line: line_no,
                message: "gold answer empty after canonicalization".to_string(),
            });
        }
        let id = record.id.unwrap_or_else(|| format!("{name}:{line_no}"));
        if !seen_ids.insert(id.clone()) {
            return Err(DatasetError::MalformedRecord {
                path: display.clone(),
                line: line_no,
                message: format!("duplicate id '{id}'"),
            });
        }
        samples.push(Sample {
            id,
            question: record.question,
            gold,
            task,
        });
    }

    if samples.is_empty() {
        return Err(DatasetError::Empty { path: display });
    }
    if let Some(limit) = limit {
        if limit == 0 {
            return Err(DatasetError::ZeroLimit);
        }
        if limit > samples.len() {
            return Err(DatasetError::LimitExceedsRecords {
                limit,
                available: samples.len(),
            });
        }
        samples.truncate(limit);
    }

    Ok(Dataset { name, task, samples })
}

fn answer_text(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(true) => Some("yes".to_string()),
        serde_json::Value::Bool(false) => Some("no".to_string()),
        _ => None,
    }
}

/// Splits a dataset into `m` batches in original order. Sizes differ by at
/// most one; the first `size mod m` batches take the extra sample.
pub fn partition(dataset: &Dataset, m: usize) -> Result<Vec<Batch>, DatasetError> {
    let size = dataset.len();
    if m == 0 || m > size {
        return Err(DatasetError::BadPartition { m, size });
    }
    let base = size / m;
    let remainder = size % m;
    let mut batches = Vec::with_capacity(m);
    let mut offset = 0;
    for k in 0..m {
        let take = base + usize::from(k < remainder);
        batches.push(Batch {
            index: k + 1,
            samples: dataset.samples[offset..offset + take].to_vec(),
        });
        offset += take;
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("tempfile");
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    fn sized_dataset(n: usize) -> Dataset {
        Dataset {
            name: "t".into(),
            task: TaskKind::Arithmetic,
            samples: (0..n)
                .map(|i| Sample {
                    id: format!("t:{i}"),
                    question: format!("q{i}"),
                    gold: "1".into(),
                    task: TaskKind::Arithmetic,
                })
                .collect(),
        }
    }

    #[test]
    fn loads_simple_records() {
        let f = write_lines(&[r#"{"question":"What is 2+2?","answer":"4"}"#]);
        let d = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap();
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.samples[0].gold, "4");
        assert!(d.samples[0].id.ends_with(":1"));
    }

    #[test]
    fn strips_final_answer_marker() {
        let f = write_lines(&[
            "{\"question\":\"q\",\"answer\":\"First 9 + 9 = 18. #### 18\"}",
            "{\"question\":\"q2\",\"answer\":\"#### 3 then more #### 21\"}",
        ]);
        let d = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap();
        assert_eq!(d.samples[0].gold, "18");
        assert_eq!(d.samples[1].gold, "21");
    }

    #[test]
    fn accepts_numeric_and_boolean_answers() {
        let f = write_lines(&[r#"{"question":"q","answer":18}"#]);
        let d = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap();
        assert_eq!(d.samples[0].gold, "18");

        let f = write_lines(&[r#"{"question":"q","answer":true}"#]);
        let d = load_dataset(f.path(), TaskKind::YesNo, None).unwrap();
        assert_eq!(d.samples[0].gold, "yes");
    }

    #[test]
    fn limit_truncates_in_order() {
        let lines: Vec<String> = (0..2290)
            .map(|i| format!(r#"{{"question":"q{i}","answer":"yes"}}"#))
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_lines(&refs);
        let d = load_dataset(f.path(), TaskKind::YesNo, Some(320)).unwrap();
        assert_eq!(d.len(), 320);
        assert_eq!(d.samples[0].question, "q0");
        let batches = partition(&d, 10).unwrap();
        assert!(batches.iter().all(|b| b.samples.len() == 32));
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = write_lines(&["not json"]);
        let err = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRecord { line: 1, .. }));

        let f = write_lines(&[r#"{"question":"q","answer":"4"}"#]);
        assert!(matches!(
            load_dataset(f.path(), TaskKind::Arithmetic, Some(2)),
            Err(DatasetError::LimitExceedsRecords { .. })
        ));

        let f = write_lines(&[]);
        assert!(matches!(
            load_dataset(f.path(), TaskKind::Arithmetic, None),
            Err(DatasetError::Empty { .. })
        ));

        assert!(load_dataset("/nonexistent/x.jsonl", TaskKind::Arithmetic, None).is_err());
    }

    #[test]
    fn reports_duplicate_ids() {
        let f = write_lines(&[
            r#"{"question":"a","answer":"1","id":"x"}"#,
            r#"{"question":"b","answer":"2","id":"x"}"#,
        ]);
        let err = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRecord { line: 2, .. }));
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write_lines(&[
            r#"{"question":"a","answer":"1"}"#,
            r#"{"question":"b","answer":"2"}"#,
        ]);
        let d1 = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap();
        let d2 = load_dataset(f.path(), TaskKind::Arithmetic, None).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn partitions_evenly() {
        let batches = partition(&sized_dataset(600), 10).unwrap();
        assert_eq!(batches.len(), 10);
        assert!(batches.iter().all(|b| b.samples.len() == 60));
        assert_eq!(batches[0].index, 1);
        assert_eq!(batches[9].index, 10);
    }

    #[test]
    fn partition_identity_and_remainder() {
        let d = sized_dataset(7);
        let whole = partition(&d, 1).unwrap();
        assert_eq!(whole[0].samples, d.samples);

        let sizes: Vec<usize> = partition(&d, 3)
            .unwrap()
            .iter()
            .map(|b| b.samples.len())
            .collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn partition_rejects_bad_m() {
        let d = sized_dataset(4);
        assert!(partition(&d, 0).is_err());
        assert!(partition(&d, 5).is_err());
    }
}
