use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DiscoveryError;

/// One line of a tag file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRecord {
    pub id: String,
    pub label: usize,
    pub tags: Vec<String>,
    #[serde(default)]
    pub irrelevant_tags: Option<Vec<String>>,
}

/// One line of an embedding file. Samples without irrelevant tags have no
/// line and train with a zero embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut w: W) -> Result<(), DiscoveryError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>, DiscoveryError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DiscoveryError::Parse {
                context: format!("JSON-lines record on line {}", i + 1),
                message: e.to_string(),
                raw: line.clone(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let recs = vec![TagRecord {
            id: "a".into(),
            label: 1,
            tags: vec!["dog".into(), "red".into()],
            irrelevant_tags: Some(vec!["red".into()]),
        }];
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"id\":\"a\",\"label\":1,\"tags\":[\"dog\",\"red\"],\"irrelevant_tags\":[\"red\"]}\n"
        );
        assert_eq!(read_jsonl::<TagRecord, _>(&buf[..]).unwrap(), recs);
        let bad = b"{\"id\":\"a\"}\n";
        match read_jsonl::<TagRecord, _>(&bad[..]) {
            Err(DiscoveryError::Parse { context, .. }) => assert!(context.contains("line 1")),
            other => panic!("{other:?}"),
        }
    }
}
