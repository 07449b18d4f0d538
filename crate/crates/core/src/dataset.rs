//! Task dataset files: JSON Lines, UTF-8, one instance per line, LF endings.
//!
//! Line schema: `{"task": string, "prompt_tokens": [int], "answer_tokens":
//! [int], "seed": int}`. Reading validates every line against the vocabulary
//! and reports failures with their 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{TaskInstance, TaskKind};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
struct DatasetLine {
    task: String,
    prompt_tokens: Vec<TokenId>,
    answer_tokens: Vec<TokenId>,
    seed: u64,
}

/// Writes instances as JSONL in input order.
pub fn write_dataset(path: &Path, instances: &[TaskInstance]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for inst in instances {
        let line = DatasetLine {
            task: inst.kind.name().to_string(),
            prompt_tokens: inst.prompt_tokens.clone(),
            answer_tokens: inst.answer_tokens.clone(),
            seed: inst.seed,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a dataset file. Blank lines are rejected as malformed
/// so that line numbers in errors always match the file exactly.
pub fn read_dataset(path: &Path, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        let parsed: DatasetLine = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset { line: line_no, reason: e.to_string() })?;
        let kind = TaskKind::parse(&parsed.task).ok_or_else(|| Error::Dataset {
            line: line_no,
            reason: format!("unknown task {:?}", parsed.task),
        })?;
        let inst = TaskInstance {
            kind,
            prompt_tokens: parsed.prompt_tokens,
            answer_tokens: parsed.answer_tokens,
            seed: parsed.seed,
        };
        inst.validate(vocab)
            .map_err(|e| Error::Dataset { line: line_no, reason: e.to_string() })?;
        instances.push(inst);
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::make_task;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::default_small()
    }

    #[test]
    fn round_trip_preserves_instances_exactly() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let instances: Vec<TaskInstance> = vec![
            make_task(&v, TaskKind::LastToken, 3, 1).unwrap(),
            make_task(&v, TaskKind::Copy, 5, 2).unwrap(),
            make_task(&v, TaskKind::Reverse, 4, 3).unwrap(),
            make_task(&v, TaskKind::AddMod, 2, 4).unwrap(),
        ];
        write_dataset(&path, &instances).unwrap();
        let back = read_dataset(&path, &v).unwrap();
        assert_eq!(back, instances);

        let bytes = std::fs::read(&path).unwrap();
        assert!(!bytes.contains(&b'\r'), "lines must end with bare LF");
        assert!(bytes.ends_with(b"\n"));
    }

    #[test]
    fn malformed_line_reports_its_line_number() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"task":"copy","prompt_tokens":[16,1,19],"answer_tokens":[1],"seed":0}"#;
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected dataset error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_task_and_out_of_range_ids_are_rejected_with_lines() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();

        let path = dir.path().join("unknown.jsonl");
        std::fs::write(
            &path,
            r#"{"task":"sort","prompt_tokens":[16,1,19],"answer_tokens":[1],"seed":0}"#,
        )
        .unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Dataset { line: 1, reason }) => {
                assert!(reason.contains("sort"), "reason should name the task: {reason}")
            }
            other => panic!("expected dataset error, got {other:?}"),
        }

        let path = dir.path().join("range.jsonl");
        std::fs::write(
            &path,
            r#"{"task":"copy","prompt_tokens":[16,1,19],"answer_tokens":[99],"seed":0}"#,
        )
        .unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Dataset { line: 1, reason }) => {
                assert!(reason.contains("99"), "reason should name the id: {reason}")
            }
            other => panic!("expected dataset error, got {other:?}"),
        }

        let path = dir.path().join("frame.jsonl");
        std::fs::write(
            &path,
            r#"{"task":"copy","prompt_tokens":[1,19],"answer_tokens":[1],"seed":0}"#,
        )
        .unwrap();
        assert!(matches!(read_dataset(&path, &v), Err(Error::Dataset { line: 1, .. })));
    }

    #[test]
    fn missing_field_is_malformed_with_field_name() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing.jsonl");
        std::fs::write(&path, r#"{"task":"copy","prompt_tokens":[16,1,19],"seed":0}"#).unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Dataset { line: 1, reason }) => {
                assert!(reason.contains("answer_tokens"), "reason: {reason}")
            }
            other => panic!("expected dataset error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn random_generated_datasets_round_trip(
            seeds in proptest::collection::vec(0u64..1000, 1..20),
        ) {
            let v = vocab();
            let kinds = [TaskKind::LastToken, TaskKind::Copy, TaskKind::Reverse, TaskKind::AddMod];
            let instances: Vec<TaskInstance> = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let kind = kinds[i % kinds.len()];
                    let len = if kind == TaskKind::AddMod { 2 } else { 1 + (s as usize % 16) };
                    make_task(&v, kind, len, s).unwrap()
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.jsonl");
            write_dataset(&path, &instances).unwrap();
            let back = read_dataset(&path, &v).unwrap();
            prop_assert_eq!(back, instances);
        }
    }
}
