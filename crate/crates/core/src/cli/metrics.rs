//! JSON-lines metrics stream.

use std::io::Write;

use crate::error::{Error, Result};
use crate::harness::MetricsRecord;

/// Writes one `{"epoch","train_loss","val_loss","metric"}` object per line.
pub fn emit_metrics(history: &[MetricsRecord], stream: &mut dyn Write) -> Result<()> {
    for record in history {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(stream, "{line}").map_err(|e| Error::io("<metrics stream>", e))?;
    }
    Ok(())
}

/// Parses a stream written by [`emit_metrics`].
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::MalformedJson(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(n: usize) -> Vec<MetricsRecord> {
        (1..=n)
            .map(|e| MetricsRecord {
                epoch: e,
                train_loss: 0.1 / e as f64,
                val_loss: 0.3 / (e as f64 + 0.7),
                metric: e as f64 / n as f64,
            })
            .collect()
    }

    #[test]
    fn empty_history_writes_nothing() {
        let mut buf = Vec::new();
        emit_metrics(&[], &mut buf).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn lines_round_trip_with_stable_keys() {
        let h = history(3);
        let mut buf = Vec::new();
        emit_metrics(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.starts_with("{\"epoch\":")
            && l.find("train_loss") < l.find("val_loss")
            && l.find("val_loss") < l.find("metric")));
        assert_eq!(parse_metrics(&text).unwrap(), h);
    }
}
