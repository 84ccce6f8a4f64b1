//! Line-delimited JSON reading and writing for every dataset part.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::DataError;
use crate::model::{
    check_id, check_unique, EvalContext, Passage, Question, RankedList, RelevanceJudgment,
    ThetaWeights, UtilityAnnotation,
};

/// Tolerance when checking `|utility| = 1 - p_no_response` on stored annotations.
const ANNOTATION_TOLERANCE: f64 = 1e-12;

/// A record type stored one-per-line in a dataset part.
pub trait Record: Serialize + DeserializeOwned {
    /// Uniqueness key within one file.
    fn key(&self) -> String;
    fn validate(&self) -> Result<(), String>;
}

impl Record for Question {
    fn key(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<(), String> {
        check_id("id", &self.id)?;
        if self.reference_answers.is_empty() {
            return Err(format!("question {:?} has no reference answer", self.id));
        }
        Ok(())
    }
}

impl Record for Passage {
    fn key(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<(), String> {
        check_id("id", &self.id)
    }
}

impl Record for RelevanceJudgment {
    fn key(&self) -> String {
        pair_key(&self.question_id, &self.passage_id)
    }

    fn validate(&self) -> Result<(), String> {
        check_id("question_id", &self.question_id)?;
        check_id("passage_id", &self.passage_id)
    }
}

impl Record for UtilityAnnotation {
    fn key(&self) -> String {
        pair_key(&self.question_id, &self.passage_id)
    }

    fn validate(&self) -> Result<(), String> {
        check_id("question_id", &self.question_id)?;
        check_id("passage_id", &self.passage_id)?;
        let (p, u) = (self.p_no_response, self.utility);
        if !(0.0..=1.0).contains(&p) {
            return Err(format!(
                "({}, {}): p_no_response {p} outside [0, 1]",
                self.question_id, self.passage_id
            ));
        }
        if !(-1.0..=1.0).contains(&u) {
            return Err(format!(
                "({}, {}): utility {u} outside [-1, 1]",
                self.question_id, self.passage_id
            ));
        }
        if (u.abs() - (1.0 - p)).abs() > ANNOTATION_TOLERANCE {
            return Err(format!(
                "({}, {}): |utility| = {} does not equal 1 - p_no_response = {}",
                self.question_id,
                self.passage_id,
                u.abs(),
                1.0 - p
            ));
        }
        Ok(())
    }
}

impl Record for RankedList {
    fn key(&self) -> String {
        self.question_id.clone()
    }

    fn validate(&self) -> Result<(), String> {
        check_id("question_id", &self.question_id)?;
        for e in &self.entries {
            check_id("passage_id", &e.passage_id)?;
            if !e.score.is_finite() {
                return Err(format!("passage {:?} has non-finite score", e.passage_id));
            }
        }
        if let Some(w) = self.entries.windows(2).find(|w| w[0].score < w[1].score) {
            return Err(format!(
                "ranking for {:?} is not sorted by descending score at passage {:?}",
                self.question_id, w[1].passage_id
            ));
        }
        check_unique("passage id", self.entries.iter().map(|e| e.passage_id.as_str()))
    }
}

impl Record for EvalContext {
    fn key(&self) -> String {
        pair_key(&self.question_id, &self.context_id)
    }

    fn validate(&self) -> Result<(), String> {
        check_id("question_id", &self.question_id)?;
        check_id("context_id", &self.context_id)?;
        if self.passage_ids.is_empty() {
            return Err(format!("context {:?} has no passages", self.context_id));
        }
        for id in &self.passage_ids {
            check_id("passage id", id)?;
        }
        check_unique("passage id", self.passage_ids.iter().map(String::as_str))
            .map_err(|e| format!("context {:?}: {e}", self.context_id))
    }
}

fn pair_key(a: &str, b: &str) -> String {
    format!("({a}, {b})")
}

/// Parses one record per non-blank line, validating each record and
/// rejecting duplicate keys. Line numbers in errors are 1-based.
pub fn read_records<T: Record, R: Read>(reader: R) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|source| DataError::Json {
            line: line_no,
            source,
        })?;
        record.validate().map_err(|message| DataError::Invalid {
            line: line_no,
            message,
        })?;
        let key = record.key();
        if let Some(&first) = seen.get(&key) {
            return Err(DataError::Duplicate {
                line: line_no,
                first,
                key,
            });
        }
        seen.insert(key, line_no);
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<T: Record, W: Write>(mut writer: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    read_records(File::open(path)?)
}

pub fn save_records<T: Record>(path: impl AsRef<Path>, records: &[T]) -> std::io::Result<()> {
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn read_theta<R: Read>(reader: R) -> Result<ThetaWeights, DataError> {
    let theta: ThetaWeights =
        serde_json::from_reader(reader).map_err(|source| DataError::Json { line: 1, source })?;
    theta
        .validate()
        .map_err(|message| DataError::Invalid { line: 1, message })?;
    Ok(theta)
}

pub fn load_theta(path: impl AsRef<Path>) -> Result<ThetaWeights, DataError> {
    read_theta(File::open(path)?)
}

pub fn save_theta(path: impl AsRef<Path>, theta: &ThetaWeights) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, theta)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Tag naming one dataset file kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetPart {
    Questions,
    Passages,
    Judgments,
    Annotations,
    Rankings,
    Contexts,
}

/// Records of any dataset part.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Questions(Vec<Question>),
    Passages(Vec<Passage>),
    Judgments(Vec<RelevanceJudgment>),
    Annotations(Vec<UtilityAnnotation>),
    Rankings(Vec<RankedList>),
    Contexts(Vec<EvalContext>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Questions(v) => v.len(),
            Records::Passages(v) => v.len(),
            Records::Judgments(v) => v.len(),
            Records::Annotations(v) => v.len(),
            Records::Rankings(v) => v.len(),
            Records::Contexts(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write<W: Write>(&self, writer: W) -> std::io::Result<()> {
        match self {
            Records::Questions(v) => write_records(writer, v),
            Records::Passages(v) => write_records(writer, v),
            Records::Judgments(v) => write_records(writer, v),
            Records::Annotations(v) => write_records(writer, v),
            Records::Rankings(v) => write_records(writer, v),
            Records::Contexts(v) => write_records(writer, v),
        }
    }
}

pub fn parse_dataset<R: Read>(reader: R, part: DatasetPart) -> Result<Records, DataError> {
    Ok(match part {
        DatasetPart::Questions => Records::Questions(read_records(reader)?),
        DatasetPart::Passages => Records::Passages(read_records(reader)?),
        DatasetPart::Judgments => Records::Judgments(read_records(reader)?),
        DatasetPart::Annotations => Records::Annotations(read_records(reader)?),
        DatasetPart::Rankings => Records::Rankings(read_records(reader)?),
        DatasetPart::Contexts => Records::Contexts(read_records(reader)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    fn parse<T: Record>(text: &str) -> Result<Vec<T>, DataError> {
        read_records(text.as_bytes())
    }

    #[test]
    fn question_line_parses() {
        let qs: Vec<Question> =
            parse(r#"{"id":"q1","text":"who?","reference_answers":["me"]}"#).unwrap();
        assert_eq!(
            qs,
            vec![Question {
                id: "q1".into(),
                text: "who?".into(),
                reference_answers: vec!["me".into()]
            }]
        );
    }

    #[test]
    fn question_without_answers_is_rejected() {
        let err = parse::<Question>(r#"{"id":"q1","text":"who?","reference_answers":[]}"#)
            .unwrap_err();
        assert!(matches!(err, DataError::Invalid { line: 1, .. }), "{err}");
    }

    #[test]
    fn utility_out_of_bounds_is_rejected() {
        let err = parse::<UtilityAnnotation>(
            r#"{"question_id":"q","passage_id":"p","p_no_response":0.0,"utility":1.5}"#,
        )
        .unwrap_err();
        match err {
            DataError::Invalid { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("(q, p)"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn utility_inconsistent_with_probability_is_rejected() {
        let err = parse::<UtilityAnnotation>(
            r#"{"question_id":"q","passage_id":"p","p_no_response":0.5,"utility":0.2}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::Invalid { .. }));
    }

    #[test]
    fn repeated_judgment_pair_is_a_duplicate() {
        let text = concat!(
            r#"{"question_id":"q","passage_id":"p","relevant":true}"#,
            "\n",
            r#"{"question_id":"q","passage_id":"x","relevant":false}"#,
            "\n",
            r#"{"question_id":"q","passage_id":"p","relevant":false}"#,
        );
        let err = parse::<RelevanceJudgment>(text).unwrap_err();
        assert!(
            matches!(err, DataError::Duplicate { line: 3, first: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"text\":\"x\"}\n\n{\"id\":";
        let err = parse::<Passage>(text).unwrap_err();
        assert!(matches!(err, DataError::Json { line: 3, .. }), "{err}");
    }

    #[test]
    fn unsorted_ranking_is_rejected() {
        let text = r#"{"question_id":"q","entries":[{"passage_id":"a","score":1.0},{"passage_id":"b","score":2.0}]}"#;
        assert!(parse::<RankedList>(text).is_err());
    }

    #[test]
    fn context_outcome_null_and_strings() {
        let text = concat!(
            r#"{"question_id":"q","context_id":"c1","passage_ids":["a","b"],"outcome":null}"#,
            "\n",
            r#"{"question_id":"q","context_id":"c2","passage_ids":["a"],"outcome":"abstain"}"#,
        );
        let ctx: Vec<EvalContext> = parse(text).unwrap();
        assert_eq!(ctx[0].outcome, None);
        assert_eq!(ctx[1].outcome, Some(Outcome::Abstain));

        let mut buf = Vec::new();
        write_records(&mut buf, &ctx).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{text}\n"));
    }

    #[test]
    fn context_with_repeated_passage_is_rejected() {
        let text = r#"{"question_id":"q","context_id":"c","passage_ids":["a","a"],"outcome":null}"#;
        assert!(parse::<EvalContext>(text).is_err());
    }

    #[test]
    fn theta_length_mismatch_is_rejected() {
        let err = read_theta(r#"{"k":2,"alphas":[1.0],"betas":[0.0,0.0]}"#.as_bytes());
        assert!(err.is_err());
        let ok = read_theta(r#"{"k":1,"alphas":[1.0],"betas":[0.5]}"#.as_bytes()).unwrap();
        assert_eq!(ok, ThetaWeights { k: 1, alphas: vec![1.0], betas: vec![0.5] });
    }

    #[test]
    fn parse_dataset_dispatches_on_part() {
        let recs = parse_dataset(r#"{"id":"p","text":"t"}"#.as_bytes(), DatasetPart::Passages)
            .unwrap();
        assert!(matches!(recs, Records::Passages(ref v) if v.len() == 1));
    }
}
