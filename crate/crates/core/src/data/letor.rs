//! The `<grade> qid:<id> <fid>:<value> ... # comment` ranking text format.

use std::fmt::Write as _;
use std::io::BufRead;

use super::DataError;
use crate::model::RankingInstance;

/// One parsed line.
#[derive(Debug, Clone, PartialEq)]
pub struct LetorRecord {
    pub grade: u8,
    pub query_id: String,
    /// `(feature id, value)` pairs; ids are 1-based.
    pub features: Vec<(usize, f64)>,
}

impl LetorRecord {
    /// Dense row of `width` values; feature `id` lands at index `id - 1`.
    pub fn densify(&self, width: usize) -> Vec<f64> {
        let mut row = vec![0.0; width];
        for &(id, v) in &self.features {
            row[id - 1] = v;
        }
        row
    }

    pub fn max_feature_id(&self) -> usize {
        self.features.iter().map(|f| f.0).max().unwrap_or(0)
    }
}

/// Parses one line; blank and comment-only lines give `None`.
pub fn parse_line(line: &str, line_no: usize) -> Result<Option<LetorRecord>, DataError> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let err = |detail: String| DataError::Parse {
        line: line_no,
        detail,
    };
    let mut tokens = content.split_whitespace();
    let grade_token = tokens.next().ok_or_else(|| err("missing grade".into()))?;
    let grade: u8 = grade_token
        .parse()
        .map_err(|_| err(format!("grade {grade_token:?} is not an integer in 0..=4")))?;
    if grade > 4 {
        return Err(err(format!("grade {grade} outside 0..=4")));
    }
    let qid_token = tokens.next().ok_or_else(|| err("missing qid".into()))?;
    let query_id = qid_token
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or_else(|| err(format!("expected qid:<id>, found {qid_token:?}")))?
        .to_string();
    let mut features = Vec::new();
    for tok in tokens {
        let (id, value) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <fid>:<value>, found {tok:?}")))?;
        let id: usize = id
            .parse()
            .map_err(|_| err(format!("bad feature id in {tok:?}")))?;
        if id == 0 {
            return Err(err("feature ids start at 1".into()));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| err(format!("bad feature value in {tok:?}")))?;
        if !value.is_finite() {
            return Err(err(format!("non-finite feature value in {tok:?}")));
        }
        features.push((id, value));
    }
    Ok(Some(LetorRecord {
        grade,
        query_id,
        features,
    }))
}

/// Reads every record, grouping by query id in order of first appearance.
///
/// `feature_width` of `None` uses the largest id in the file. User context
/// is the zero vector of length `user_dim`.
pub fn parse_letor<R: BufRead>(
    reader: R,
    feature_width: Option<usize>,
    user_dim: usize,
) -> Result<Vec<RankingInstance>, DataError> {
    let mut groups: Vec<(String, Vec<LetorRecord>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let Some(rec) = parse_line(&line, i + 1)? else {
            continue;
        };
        if let Some(width) = feature_width {
            if rec.max_feature_id() > width {
                return Err(DataError::Parse {
                    line: i + 1,
                    detail: format!("feature id {} exceeds width {width}", rec.max_feature_id()),
                });
            }
        }
        let slot = *index.entry(rec.query_id.clone()).or_insert_with(|| {
            groups.push((rec.query_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(rec);
    }
    let width = feature_width.unwrap_or_else(|| {
        groups
            .iter()
            .flat_map(|(_, recs)| recs.iter().map(LetorRecord::max_feature_id))
            .max()
            .unwrap_or(0)
    });
    Ok(groups
        .into_iter()
        .map(|(qid, recs)| {
            let features = recs.iter().map(|r| r.densify(width)).collect();
            let grades = recs.iter().map(|r| r.grade).collect();
            RankingInstance::from_grades(qid, features, vec![0.0; user_dim], grades)
        })
        .collect())
}

pub fn parse_letor_str(
    text: &str,
    feature_width: Option<usize>,
    user_dim: usize,
) -> Result<Vec<RankingInstance>, DataError> {
    parse_letor(text.as_bytes(), feature_width, user_dim)
}

/// Writes instances back in row order with every feature id present.
pub fn write_letor(instances: &[RankingInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        for (row, grade) in inst.item_features.iter().zip(&inst.relevance_grades) {
            let _ = write!(out, "{grade} qid:{}", inst.query_id);
            for (j, v) in row.iter().enumerate() {
                let _ = write!(out, " {}:{v:?}", j + 1);
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let data = parse_letor_str("0 qid:1 1:1.0 2:0.5", Some(4), 0).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].item_features, vec![vec![1.0, 0.5, 0.0, 0.0]]);
        assert_eq!(data[0].relevance_grades, vec![0]);
        assert_eq!(data[0].query_id, "1");
    }

    #[test]
    fn grouping_keeps_file_order() {
        let text = "1 qid:7 1:1\n0 qid:8 1:5\n4 qid:7 1:2 # trailing\n";
        let data = parse_letor_str(text, None, 2).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].item_features, vec![vec![1.0], vec![2.0]]);
        assert_eq!(data[0].display_order, vec![0, 1]);
        assert_eq!(data[0].user_features, vec![0.0, 0.0]);
    }

    #[test]
    fn grades_binarize_at_three() {
        let data = parse_letor_str("3 qid:a 1:1\n2 qid:a 1:1\n", None, 0).unwrap();
        assert_eq!(data[0].click_labels, vec![1, 0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_letor_str("0 qid:1 1:1\nx qid:1 1:1\n", None, 0).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 2, .. }), "{e}");
        let e = parse_letor_str("\n\n0 qid:1 1-1\n", None, 0).unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 3, .. }), "{e}");
        assert!(parse_letor_str("5 qid:1 1:1", None, 0).is_err());
        assert!(parse_letor_str("1.5 qid:1 1:1", None, 0).is_err());
        assert!(parse_letor_str("1 1:1", None, 0).is_err());
        assert!(parse_letor_str("1 qid:1 0:1", None, 0).is_err());
        assert!(parse_letor_str("1 qid:1 9:1", Some(4), 0).is_err());
    }

    #[test]
    fn crlf_and_comments() {
        let data = parse_letor_str("# header\r\n2 qid:q 1:0.25 3:-1\r\n", None, 0).unwrap();
        assert_eq!(data[0].item_features, vec![vec![0.25, 0.0, -1.0]]);
    }

    #[test]
    fn round_trip_preserves_everything() {
        let text = "0 qid:1 1:0.1 2:3\n4 qid:1 2:1e-7\n2 qid:x 1:-2.5\n";
        let data = parse_letor_str(text, None, 0).unwrap();
        let again = parse_letor_str(&write_letor(&data), None, 0).unwrap();
        assert_eq!(data, again);
    }
}
